"""Time-ordered evolution and the geometric factor along parameter paths.

The driven generator splits as H(t) = G(t) + H'(t): G is the affine
drift induced by the connection contracted with the parameter velocity,
H' collects the frame drift and the polynomial Hamiltonian evaluated at
the frozen parameter point.  U is the midpoint-ordered product of exact
Hermitian-eigendecomposition exponentials, so unitarity holds to
rounding at every step count.  The geometric factor is integrated in
parameter-increment form: each segment uses the increment of the path
values, not the clock, which makes invariance under monotone
reparametrization structural.

For long fine-step runs a state-only propagator applies the step
exponential through an adaptive Taylor series of matrix-vector products;
the dense operator is never formed per step on that route.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bundle import BundleModel, ParameterPath, reparametrize_path
from .expressions import Const, EvaluationError, Expression
from .observables import BumpCover, PolynomialObservable
from .operators import (
    ORDERINGS,
    FiberGrid,
    LinearOperator,
    WaveSection,
    _derivative_array,
    expm_hermitian,
    inner_product,
    momentum_expectations,
    position_expectations,
    quantize_affine,
    quantize_polynomial,
)

__all__ = [
    "DrivenHamiltonian",
    "EvolutionResult",
    "StateTrajectory",
    "ClassicalState",
    "ClassicalTrajectory",
    "SplitReport",
    "geometric_generator",
    "dynamic_operator",
    "full_generator",
    "evolve_time_ordered",
    "geometric_factor",
    "split_evolution",
    "propagate_state",
    "heisenberg_derivative",
    "classical_hamilton_flow",
    "reparametrize_path",
]

_ZERO = Const(0.0)

HERMITICITY_STEP_TOL = 1e-10
VELOCITY_STATIC_TOL = 1e-13


@dataclass
class DrivenHamiltonian:
    """Bundle + path + polynomial Hamiltonian + grid, ready to propagate."""

    bundle: BundleModel
    path: ParameterPath
    hamiltonian: PolynomialObservable
    grid: FiberGrid
    cover: BumpCover | None = None
    ordering: str = "symmetric"

    def __post_init__(self):
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if self.bundle.n_fiber != self.grid.dim:
            raise ValueError("bundle fiber dimension does not match the grid")
        if self.hamiltonian.dim != self.grid.dim:
            raise ValueError("Hamiltonian dimension does not match the grid")
        if self.path.n_parameters != self.bundle.n_parameters:
            raise ValueError("path and bundle disagree on parameter count")
        allowed = set(self.bundle.variables())
        stray = self.hamiltonian.free_variables() - allowed
        if stray:
            raise ValueError(
                f"Hamiltonian references '{sorted(stray)[0]}' outside the "
                f"scenario variables {sorted(allowed)}")
        n = self.grid.dim
        terms = self.hamiltonian.terms
        self._potential = self.hamiltonian.coefficient(())
        self._affine_part = {i: c for i, c in terms.items() if len(i) == 1}
        self._high_part = PolynomialObservable(
            n, {i: c for i, c in terms.items() if len(i) >= 2})
        self._has_drift = any(c != _ZERO for c in self.bundle.time_drift)
        qvars = {f"q{k}" for k in range(1, n + 1)}
        self._high_static = self._high_part.free_variables() <= qvars
        self._high_matrix: np.ndarray | None = None
        self._coupling_free = frozenset().union(
            *(c.free_variables() for row in self.bundle.sigma_coupling
              for c in row)) if self.bundle.sigma_coupling else frozenset()

    # -- pieces ----------------------------------------------------------

    @property
    def span(self) -> tuple[float, float]:
        return self.path.span

    def geometric_observable(self, t: float) -> PolynomialObservable:
        """The increment observable v^lam Lambda^k_lam p_k at clock rate."""
        v = self.path.velocity(t)
        return self.increment_observable(v)

    def increment_observable(self, weights) -> PolynomialObservable:
        """sum_k (sum_lam w_lam Lambda^k_lam) p_k for numeric weights."""
        n, m = self.grid.dim, self.bundle.n_parameters
        terms = {}
        for k in range(n):
            tree = _ZERO
            for lam in range(m):
                tree = tree + float(weights[lam]) \
                    * self.bundle.sigma_coupling[k][lam]
            if tree != _ZERO:
                terms[(k + 1,)] = tree
        return PolynomialObservable(n, terms)

    def _drift_observable(self) -> PolynomialObservable:
        n = self.grid.dim
        terms = {(k + 1,): self.bundle.time_drift[k] for k in range(n)
                 if self.bundle.time_drift[k] != _ZERO}
        return PolynomialObservable(n, terms)

    def high_matrix(self, t: float, sigma) -> np.ndarray | None:
        """Momentum-degree >= 2 part, cached when parameter-independent."""
        if not self._high_part.terms:
            return None
        if self._high_static:
            if self._high_matrix is None:
                zeros = np.zeros(self.bundle.n_parameters)
                self._high_matrix = quantize_polynomial(
                    self._high_part, self.grid, 0.0, zeros,
                    cover=self.cover, ordering=self.ordering).matrix
            return self._high_matrix
        return quantize_polynomial(self._high_part, self.grid, t, sigma,
                                   cover=self.cover,
                                   ordering=self.ordering).matrix

    def hamiltonian_affine(self) -> PolynomialObservable:
        """Degree <= 1 slice of H plus the frame drift, still symbolic."""
        n = self.grid.dim
        terms: dict = dict(self._affine_part)
        for k in range(n):
            d = self.bundle.time_drift[k]
            if d != _ZERO:
                terms[(k + 1,)] = terms.get((k + 1,), _ZERO) + d
        if self._potential != _ZERO:
            terms[()] = self._potential
        return PolynomialObservable(n, terms)


def geometric_generator(dh: DrivenHamiltonian, t: float) -> LinearOperator:
    """Hermitian generator of the connection drift at clock time t."""
    sigma = dh.path.value(t)
    return quantize_affine(dh.geometric_observable(t), dh.grid, t, sigma)


def dynamic_operator(dh: DrivenHamiltonian, t: float) -> LinearOperator:
    """The frozen-parameter Hamiltonian H'(t), Hermitian."""
    sigma = dh.path.value(t)
    op = quantize_affine(dh.hamiltonian_affine(), dh.grid, t, sigma)
    high = dh.high_matrix(t, sigma)
    if high is not None:
        op = LinearOperator(dh.grid, op.matrix + high)
    return op


def full_generator(dh: DrivenHamiltonian, t: float) -> LinearOperator:
    return geometric_generator(dh, t) + dynamic_operator(dh, t)


# -- results -------------------------------------------------------------


@dataclass
class EvolutionResult:
    unitary: LinearOperator
    times: np.ndarray
    unitarity_defect: float
    max_step_hermiticity_defect: float
    static_collapse: bool = False
    final_state: WaveSection | None = None
    trajectory: list[WaveSection] | None = None
    phase_total: float | None = None
    phase_total_unwrapped: float | None = None
    phase_geometric: float | None = None
    phase_geometric_unwrapped: float | None = None


@dataclass
class SplitReport:
    commutator_max: float
    factorization_defect: float
    commuting: bool


@dataclass
class StateTrajectory:
    times: np.ndarray
    sigma: np.ndarray
    sigma_rate: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    norms: np.ndarray
    phase_total: np.ndarray
    phase_geometric: np.ndarray | None
    final_state: WaveSection


@dataclass(frozen=True)
class ClassicalState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, float)))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have matching shapes")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("classical state must be finite")


@dataclass
class ClassicalTrajectory:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray

    def state(self, i: int) -> ClassicalState:
        return ClassicalState(self.positions[i], self.momenta[i],
                              float(self.times[i]))

    @property
    def final(self) -> ClassicalState:
        return self.state(len(self.times) - 1)


# -- dense time-ordered evolution ---------------------------------------


def _resolve_span(dh, t_start, t_end):
    t0 = dh.span[0] if t_start is None else float(t_start)
    t1 = dh.span[1] if t_end is None else float(t_end)
    lo, hi = dh.span
    if not (lo - 1e-12 <= t0 < t1 <= hi + 1e-12):
        raise ValueError(
            f"requested window [{t0}, {t1}] outside the path span {dh.span}")
    return t0, t1


def _is_static(dh: DrivenHamiltonian, t0: float, t1: float) -> bool:
    """True when the full generator is one fixed operator on [t0, t1]."""
    free = dh.hamiltonian.free_variables()
    for c in dh.bundle.time_drift:
        free = free | c.free_variables()
    if "t" in free or "t" in dh._coupling_free:
        return False
    probes = np.linspace(t0, t1, 17)
    if np.max(np.abs(dh.path.velocities(probes))) > VELOCITY_STATIC_TOL:
        return False
    values = dh.path.values(probes)
    return float(np.max(np.abs(values - values[0]))) <= 1e-12


def _step_unitary(h: np.ndarray, dt: float,
                  tol: float = HERMITICITY_STEP_TOL) -> np.ndarray:
    scale = max(1.0, np.linalg.norm(h))
    defect = np.linalg.norm(h - h.conj().T) / scale
    if defect > tol:
        raise RuntimeError(
            f"step generator lost hermiticity (relative defect {defect:.3e})")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


def evolve_time_ordered(dh: DrivenHamiltonian, steps: int,
                        emit_trajectory: bool = False,
                        initial: WaveSection | None = None,
                        t_start: float | None = None,
                        t_end: float | None = None,
                        geometric_phases: bool = False) -> EvolutionResult:
    """Midpoint-ordered product of exact step exponentials.

    With ``initial`` the state is carried along and the total phase
    (also unwrapped over the steps) is reported; ``geometric_phases``
    additionally integrates the geometric factor over the same window
    and reports its phase on the initial state.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    t0, t1 = _resolve_span(dh, t_start, t_end)
    times = np.linspace(t0, t1, steps + 1)
    dt = (t1 - t0) / steps
    size = dh.grid.size

    psi = None
    if initial is not None:
        if initial.grid != dh.grid:
            raise ValueError("initial state lives on a different grid")
        psi = initial.values.copy()
    overlaps = []
    snapshots: list[WaveSection] | None = [] if emit_trajectory else None

    static = _is_static(dh, t0, t1)
    max_defect = 0.0
    if static:
        h = full_generator(dh, 0.5 * (t0 + t1)).matrix
        scale = max(1.0, np.linalg.norm(h))
        max_defect = np.linalg.norm(h - h.conj().T) / scale
        u_step = _step_unitary(h, dt)
        u = np.linalg.matrix_power(u_step, steps)
        if psi is not None:
            for j in range(steps):
                if snapshots is not None:
                    snapshots.append(WaveSection(dh.grid, psi.copy(),
                                                 float(times[j]),
                                                 dh.path.value(times[j])))
                psi = u_step @ psi
                overlaps.append(np.vdot(initial.values, psi))
    else:
        u = np.eye(size, dtype=complex)
        for j in range(steps):
            tm = 0.5 * (times[j] + times[j + 1])
            h = full_generator(dh, tm).matrix
            scale = max(1.0, np.linalg.norm(h))
            max_defect = max(max_defect,
                             np.linalg.norm(h - h.conj().T) / scale)
            u_step = _step_unitary(h, dt)
            u = u_step @ u
            if psi is not None:
                if snapshots is not None:
                    snapshots.append(WaveSection(dh.grid, psi.copy(),
                                                 float(times[j]),
                                                 dh.path.value(times[j])))
                psi = u_step @ psi
                overlaps.append(np.vdot(initial.values, psi))

    defect = float(np.linalg.norm(u @ u.conj().T - np.eye(size)))
    result = EvolutionResult(
        unitary=LinearOperator(dh.grid, u),
        times=times,
        unitarity_defect=defect,
        max_step_hermiticity_defect=float(max_defect),
        static_collapse=static,
    )
    if psi is not None:
        result.final_state = WaveSection(dh.grid, psi, t1,
                                         dh.path.value(t1))
        if snapshots is not None:
            snapshots.append(result.final_state)
            result.trajectory = snapshots
        args = np.angle(np.asarray(overlaps))
        result.phase_total = float(args[-1])
        result.phase_total_unwrapped = float(np.unwrap(
            np.concatenate(([0.0], args)))[-1])
        if geometric_phases:
            geo, phase_unwrapped = _geometric_product(
                dh, times, initial=initial.values)
            result.phase_geometric = float(
                np.angle(inner_product(
                    WaveSection(dh.grid, geo @ initial.values), initial)))
            result.phase_geometric_unwrapped = phase_unwrapped
    return result


# -- geometric factor ----------------------------------------------------


def _geometric_product(dh: DrivenHamiltonian, times: np.ndarray,
                       initial: np.ndarray | None = None):
    """Ordered product over parameter increments; returns (U, phase).

    The phase is the unwrapped angle accumulated by ``initial`` under
    the segment factors (None when not tracked or when the commuting
    shortcut is taken without per-segment factors).
    """
    sig = dh.path.values(times)
    qvars = {f"q{k}" for k in range(1, dh.grid.dim + 1)}
    abelian = dh._coupling_free <= qvars and (
        dh.bundle.n_parameters == 1
        or all(isinstance(c, Const) for row in dh.bundle.sigma_coupling
               for c in row))
    if abelian:
        # One commuting family: the increments telescope exactly.
        total = sig[-1] - sig[0]
        obs = dh.increment_observable(total)
        op = quantize_affine(obs, dh.grid, float(times[0]), sig[0])
        u = expm_hermitian(op, prefactor=-1j)
        phase = None
        if initial is not None:
            phase = float(np.angle(np.vdot(initial, u @ initial)))
        return u, phase

    u = np.eye(dh.grid.size, dtype=complex)
    psi = initial.copy() if initial is not None else None
    args = [0.0]
    for j in range(len(times) - 1):
        dsig = sig[j + 1] - sig[j]
        smid = 0.5 * (sig[j + 1] + sig[j])
        tmid = 0.5 * (times[j + 1] + times[j])
        obs = dh.increment_observable(dsig)
        op = quantize_affine(obs, dh.grid, float(tmid), smid)
        u_seg = _step_unitary(op.matrix, 1.0)
        u = u_seg @ u
        if psi is not None:
            prev = psi
            psi = u_seg @ psi
            args.append(args[-1] + float(np.angle(np.vdot(prev, psi))))
    phase = None
    if initial is not None:
        phase = float(args[-1])
    return u, phase


def geometric_factor(dh: DrivenHamiltonian, t_end: float | None = None,
                     t_start: float | None = None,
                     segments: int = 2048) -> LinearOperator:
    """Parallel-displacement factor along the path image.

    Path-ordered product of exp(-i * increment generator) over uniform
    clock segments; each generator is the quantized affine observable of
    the parameter increment at the midpoint, so only the traced image
    curve enters.  When every coupling component is parameter-free and
    the family commutes (single parameter, or constant components) the
    increments telescope and a single exponential is taken; the two
    forms agree exactly for a commuting family.
    """
    if segments < 1:
        raise ValueError("segments must be at least 1")
    t0, t1 = _resolve_span(dh, t_start, t_end)
    times = np.linspace(t0, t1, segments + 1)
    u, _ = _geometric_product(dh, times)
    return LinearOperator(dh.grid, u)


def split_evolution(dh: DrivenHamiltonian, t_end: float | None = None,
                    steps: int = 512, samples: int = 32,
                    commuting_threshold: float = 1e-10,
                    split_tol: float = 1e-8):
    """Factor U as U_geo U_dyn and report whether that is legitimate.

    Returns (U_geo, U_dyn, SplitReport).  The report carries the largest
    relative commutator norm over sampled times; only when the family
    genuinely commutes is the factorization defect asserted.
    """
    t0, t1 = _resolve_span(dh, None, t_end)
    full = evolve_time_ordered(dh, steps, t_end=t1)
    u_geo = geometric_factor(dh, t_end=t1, segments=steps)
    u_dyn = _dynamic_only(dh, t0, t1, steps)
    comm_max = 0.0
    for t in np.linspace(t0, t1, samples):
        g = geometric_generator(dh, t).matrix
        h = dynamic_operator(dh, t).matrix
        ng, nh = np.linalg.norm(g), np.linalg.norm(h)
        if ng == 0.0 or nh == 0.0:
            continue
        comm_max = max(comm_max,
                       np.linalg.norm(g @ h - h @ g) / (ng * nh))
    defect = float(np.linalg.norm(
        full.unitary.matrix - u_geo.matrix @ u_dyn.matrix))
    commuting = bool(comm_max <= commuting_threshold)
    if commuting and defect > split_tol:
        raise RuntimeError(
            f"commuting generators but factorization defect {defect:.3e} "
            f"exceeds {split_tol:.1e}")
    return u_geo, u_dyn, SplitReport(float(comm_max), defect, commuting)


def _dynamic_only(dh, t0, t1, steps) -> LinearOperator:
    times = np.linspace(t0, t1, steps + 1)
    dt = (t1 - t0) / steps
    u = np.eye(dh.grid.size, dtype=complex)
    for j in range(steps):
        tm = 0.5 * (times[j] + times[j + 1])
        u = _step_unitary(dynamic_operator(dh, tm).matrix, dt) @ u
    return LinearOperator(dh.grid, u)


# -- state-only propagation ---------------------------------------------


def _taylor_apply(matvec: Callable, psi: np.ndarray, dt: float,
                  tol: float = 1e-13, max_terms: int = 64) -> np.ndarray:
    out = psi.copy()
    term = psi
    for j in range(1, max_terms + 1):
        term = matvec(term) * (-1j * dt / j)
        out = out + term
        if np.linalg.norm(term) <= tol * np.linalg.norm(out):
            return out
    raise RuntimeError(
        "step exponential did not converge; use more steps (smaller dt)")


def propagate_state(dh: DrivenHamiltonian, initial: WaveSection, steps: int,
                    t_start: float | None = None, t_end: float | None = None,
                    record_every: int = 1,
                    with_geometric: bool = True) -> StateTrajectory:
    """Propagate a state at fine step counts without dense per-step ops.

    Each step applies exp(-i dt H(t_mid)) by an adaptive Taylor series
    of matrix-vector products.  A companion state carrying only the
    geometric generator is propagated alongside (``with_geometric``) so
    the per-time geometric phase column comes out unwrapped.
    """
    if initial.grid != dh.grid:
        raise ValueError("initial state lives on a different grid")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    t0, t1 = _resolve_span(dh, t_start, t_end)
    times = np.linspace(t0, t1, steps + 1)
    dt = (t1 - t0) / steps
    grid = dh.grid
    n, m = grid.dim, dh.bundle.n_parameters
    derivs = [_derivative_array(grid, a) for a in range(n)]
    coords = grid.coordinates()
    qbind = {f"q{a + 1}": coords[a] for a in range(n)}
    psi0 = initial.values.copy()
    psi = psi0.copy()
    phi = psi0.copy() if with_geometric else None
    slow = bool(dh._high_part.terms) and not dh._high_static

    def sampled(tree: Expression, t: float, sigma):
        if tree == _ZERO:
            return None
        binding = dict(qbind)
        binding["t"] = t
        for i in range(m):
            binding[f"s{i + 1}"] = float(sigma[i])
        out = tree.evaluate(binding)
        if np.ndim(out) == 0:
            return float(out)
        return out

    affine_trees = dh.hamiltonian_affine()
    pot_tree = affine_trees.coefficient(())

    def matvecs_at(t: float):
        sigma = dh.path.value(t)
        v = dh.path.velocity(t)
        if slow:
            hm = full_generator(dh, t).matrix
            gm = geometric_generator(dh, t).matrix
            return (lambda x: hm @ x), (lambda x: gm @ x)
        high = dh.high_matrix(t, sigma)
        pot = sampled(pot_tree, t, sigma)
        drift_full, drift_geo = [], []
        for k in range(n):
            geo_tree = _ZERO
            for lam in range(m):
                geo_tree = geo_tree + float(v[lam]) \
                    * dh.bundle.sigma_coupling[k][lam]
            full_tree = geo_tree + dh.bundle.time_drift[k] \
                + affine_trees.coefficient((k + 1,))
            drift_full.append(sampled(full_tree, t, sigma))
            drift_geo.append(sampled(geo_tree, t, sigma))

        def drift_apply(arrays, x):
            out = np.zeros_like(x)
            for k in range(n):
                a = arrays[k]
                if a is None:
                    continue
                if np.ndim(a) == 0:
                    # constant coefficient commutes with the stencil
                    out = out + (-1j * a) * (derivs[k] @ x)
                else:
                    out = out + (-0.5j) * (a * (derivs[k] @ x)
                                           + derivs[k] @ (a * x))
            return out

        def h_full(x):
            out = drift_apply(drift_full, x)
            if high is not None:
                out = out + high @ x
            if pot is not None:
                out = out + pot * x
            return out

        def h_geo(x):
            return drift_apply(drift_geo, x)

        return h_full, h_geo

    records = list(range(0, steps + 1, record_every))
    if records[-1] != steps:
        records.append(steps)
    rec_idx = set(records)
    rows = {name: [] for name in
            ("t", "sig", "rate", "pos", "mom", "norm")}
    # unwrapped lift of t -> arg<psi0|psi(t)>, stepped so each increment
    # stays in (-pi, pi]
    args_total = [0.0]
    args_geo = [0.0]

    def lifted(running, prev_arg, vec):
        arg = float(np.angle(np.vdot(psi0, vec)))
        jump = np.angle(np.exp(1j * (arg - prev_arg)))
        return running + float(jump), arg

    def record(j):
        t = float(times[j])
        rows["t"].append(t)
        rows["sig"].append(dh.path.value(t))
        rows["rate"].append(dh.path.velocity(t))
        ws = WaveSection(grid, psi, t)
        rows["pos"].append(position_expectations(ws))
        rows["mom"].append(momentum_expectations(ws))
        rows["norm"].append(ws.norm() / initial.norm())

    record(0)
    arg_psi = 0.0
    arg_phi = 0.0
    for j in range(steps):
        tm = 0.5 * (times[j] + times[j + 1])
        h_full, h_geo = matvecs_at(tm)
        psi = _taylor_apply(h_full, psi, dt)
        total, arg_psi = lifted(args_total[-1], arg_psi, psi)
        args_total.append(total)
        if phi is not None:
            phi = _taylor_apply(h_geo, phi, dt)
            geo, arg_phi = lifted(args_geo[-1], arg_phi, phi)
            args_geo.append(geo)
        if (j + 1) in rec_idx:
            record(j + 1)

    final = WaveSection(grid, psi, float(times[-1]),
                        dh.path.value(times[-1]))
    sel = np.asarray(records)
    return StateTrajectory(
        times=np.asarray(rows["t"]),
        sigma=np.asarray(rows["sig"]).reshape(len(records), m),
        sigma_rate=np.asarray(rows["rate"]).reshape(len(records), m),
        positions=np.asarray(rows["pos"]).reshape(len(records), n),
        momenta=np.asarray(rows["mom"]).reshape(len(records), n),
        norms=np.asarray(rows["norm"]),
        phase_total=np.asarray(args_total)[sel],
        phase_geometric=(np.asarray(args_geo)[sel]
                         if with_geometric else None),
        final_state=final,
    )


# -- Heisenberg picture and the classical oracle -------------------------


def heisenberg_derivative(fhat: LinearOperator, dh: DrivenHamiltonian,
                          t: float) -> LinearOperator:
    """i[H(t), f]; explicit time dependence of f is the caller's term."""
    h = full_generator(dh, t).matrix
    return LinearOperator(dh.grid,
                          1j * (h @ fhat.matrix - fhat.matrix @ h))


def classical_hamilton_flow(dh: DrivenHamiltonian, initial: ClassicalState,
                            t_end: float | None = None,
                            steps: int = 1000,
                            t_start: float | None = None) -> ClassicalTrajectory:
    """Fixed-step 4th-order Runge-Kutta flow of the driven Hamiltonian.

    The vector field uses exact symbolic partials: the drift contributes
    velocity-weighted coupling components to dq/dt and their coordinate
    gradients (weighted by p) to dp/dt; the polynomial part contributes
    its own momentum and coordinate partials.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    t0, t1 = _resolve_span(dh, t_start, t_end)
    n, m = dh.grid.dim, dh.bundle.n_parameters
    q0 = np.asarray(initial.q, float)
    if q0.shape != (n,):
        raise ValueError(f"initial state needs {n} coordinates")

    dp_obs = [dh.hamiltonian.partial_p(k + 1) for k in range(n)]
    dq_obs = [dh.hamiltonian.partial_q(k + 1) for k in range(n)]
    coup_grad = [[[dh.bundle.sigma_coupling[j][lam].diff(f"q{k + 1}")
                   for lam in range(m)] for j in range(n)]
                 for k in range(n)]
    drift_grad = [[dh.bundle.time_drift[j].diff(f"q{k + 1}")
                   for j in range(n)] for k in range(n)]

    def rhs(t, y):
        q, p = y[:n], y[n:]
        sigma = dh.path.value(t)
        v = dh.path.velocity(t)
        binding = {"t": t}
        for i in range(m):
            binding[f"s{i + 1}"] = float(sigma[i])
        for k in range(n):
            binding[f"q{k + 1}"] = float(q[k])
        qdot = np.empty(n)
        pdot = np.empty(n)
        for k in range(n):
            drift = dh.bundle.time_drift[k].evaluate(binding)
            for lam in range(m):
                drift += v[lam] * dh.bundle.sigma_coupling[k][lam].evaluate(
                    binding)
            qdot[k] = drift + dp_obs[k].evaluate(t, sigma, q, p)
            grad = 0.0
            for j in range(n):
                row = drift_grad[k][j].evaluate(binding)
                for lam in range(m):
                    row += v[lam] * coup_grad[k][j][lam].evaluate(binding)
                grad += p[j] * row
            pdot[k] = -(grad + dq_obs[k].evaluate(t, sigma, q, p))
        return np.concatenate([qdot, pdot])

    dt = (t1 - t0) / steps
    times = np.linspace(t0, t1, steps + 1)
    ys = np.empty((steps + 1, 2 * n))
    ys[0] = np.concatenate([q0, np.asarray(initial.p, float)])
    y = ys[0]
    for j in range(steps):
        t = times[j]
        try:
            k1 = rhs(t, y)
            k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
            k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
            k4 = rhs(t + dt, y + dt * k3)
        except EvaluationError as exc:
            raise ValueError(
                f"classical flow diverged at t = {t:.6g}") from exc
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise ValueError(
                f"classical flow diverged at t = {times[j + 1]:.6g}")
        ys[j + 1] = y
    return ClassicalTrajectory(times, ys[:, :n].copy(), ys[:, n:].copy())
