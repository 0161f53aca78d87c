"""Doerfler marking, the adaptive SOLVE-ESTIMATE-MARK-REFINE loop, rate fits
and empirical checks of the estimator axioms.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from abem.ansatz import AnsatzSpace, inverse_constant, prolongation, weighted_l2_gram
from abem.estimators import IndicatorField, faermann_estimator, residual_estimator
from abem.galerkin import GalerkinSystem, QuadConfig, element_targets, potential_matrix
from abem.mesh import Mesh, coarse_ancestor, is_refinement, patch_elements, refine, refine_uniform
from abem.problems import Problem, build_system
from abem.quadrature import gauss01


class AdaptiveLoopError(RuntimeError):
    """Numerical failure inside the loop; ``level`` tells where."""

    def __init__(self, level: int, cause: BaseException):
        super().__init__(f"level {level}: {type(cause).__name__}: {cause}")
        self.level = level
        self.cause = cause


@dataclass(frozen=True)
class MarkingParams:
    theta: float = 0.5
    c_min: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if not self.c_min >= 1.0:
            raise ValueError(f"c_min must be >= 1, got {self.c_min}")


def _fsum_squares(vals) -> float:
    return math.fsum(float(v) * float(v) for v in vals)


def doerfler_mark(indicators, params: MarkingParams | float = 0.5, ids=None) -> set:
    """Smallest set ``M`` with ``theta * sum_T eta(T)^2 <= sum_{T in M} eta(T)^2``.

    ``indicators`` is an :class:`IndicatorField` or a sequence of values (then
    ``ids`` defaults to positions). Sums are correctly rounded (``math.fsum``),
    so the marking inequality is independent of summation order. Returns the
    empty set if every indicator vanishes.
    """
    if not isinstance(params, MarkingParams):
        params = MarkingParams(float(params))
    if isinstance(indicators, IndicatorField):
        ids, vals = list(indicators.ids), [float(v) for v in indicators.values]
    else:
        vals = [float(v) for v in indicators]
        ids = list(range(len(vals))) if ids is None else list(ids)
    total = _fsum_squares(vals)
    if total == 0.0:
        return set()
    order = sorted(range(len(vals)), key=lambda i: (-vals[i], ids[i]))
    sq = [vals[i] * vals[i] for i in order]
    target = params.theta * total
    lo, hi = 1, len(order)
    while lo < hi:
        mid = (lo + hi) // 2
        if math.fsum(sq[:mid]) >= target:
            hi = mid
        else:
            lo = mid + 1
    return {ids[i] for i in order[:lo]}


@dataclass(frozen=True)
class StopRule:
    max_dofs: Optional[int] = None
    max_levels: Optional[int] = 10
    eta_tol: float = 0.0

    def __post_init__(self):
        if self.max_dofs is None and self.max_levels is None and self.eta_tol <= 0:
            raise ValueError("stop rule never triggers")


@dataclass
class LevelRecord:
    level: int
    n_elements: int
    n_dofs: int
    eta: float
    faermann: Optional[float]
    energy_error: Optional[float]
    marked: int
    wall_ms: float


@dataclass
class AdaptiveRun:
    levels: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    indicators: list = field(default_factory=list)
    marked_sets: list = field(default_factory=list)
    systems: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    degree: int = 0
    stop_reason: str = ""

    def series(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.levels], dtype=float)


def adaptive_loop(problem: Problem, mesh: Mesh, degree: int = 0,
                  params: MarkingParams | None = None, stop: StopRule | None = None, *,
                  mode: str = "adaptive", driver: str = "residual",
                  compute_faermann: bool = False, retain_systems: bool = False,
                  quad: QuadConfig | None = None, config: dict | None = None) -> AdaptiveRun:
    """SOLVE, ESTIMATE, MARK, REFINE until the stop rule fires.

    ``mode="uniform"`` refines every element instead of marking. ``driver``
    selects the indicator used for marking.
    """
    params = params or MarkingParams()
    stop = stop or StopRule()
    quad = quad or QuadConfig()
    if mode not in ("adaptive", "uniform"):
        raise ValueError(f"unknown refinement mode {mode!r}")
    if driver not in ("residual", "faermann"):
        raise ValueError(f"unknown estimator driver {driver!r}")
    run = AdaptiveRun(config=dict(config or {}), degree=degree)
    level = 0
    while True:
        t_start = time.perf_counter()
        try:
            space = AnsatzSpace(mesh, degree, problem.pde.D)
            sys = build_system(space, problem, quad)
            eta = residual_estimator(sys)
            fa = faermann_estimator(sys) if (compute_faermann or driver == "faermann") else None
            err = problem.energy_error(sys)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise AdaptiveLoopError(level, exc) from exc
        drive = fa if driver == "faermann" else eta
        if mode == "uniform":
            marked = set(mesh.leaves) if drive.total > 0 else set()
        else:
            marked = doerfler_mark(drive, params)
        wall = 1000.0 * (time.perf_counter() - t_start)
        run.levels.append(LevelRecord(level, len(mesh), space.dof_count, eta.total,
                                      None if fa is None else fa.total, err, len(marked), wall))
        run.meshes.append(mesh)
        run.indicators.append(eta if fa is None else (eta, fa))
        run.marked_sets.append(marked)
        if retain_systems:
            sys.cache.clear()
            run.systems.append(sys)
        if not marked:
            run.stop_reason = "converged"
            break
        if stop.eta_tol > 0 and eta.total <= stop.eta_tol:
            run.stop_reason = "eta_tol"
            break
        if stop.max_levels is not None and level + 1 >= stop.max_levels:
            run.stop_reason = "max_levels"
            break
        try:
            nxt = refine_uniform(mesh) if mode == "uniform" else refine(mesh, marked)
        except ValueError as exc:
            raise AdaptiveLoopError(level, exc) from exc
        if stop.max_dofs is not None and len(nxt) * space.local_size > stop.max_dofs:
            run.stop_reason = "max_dofs"
            break
        mesh = nxt
        level += 1
    return run


def eta_of(indicators) -> IndicatorField:
    return indicators[0] if isinstance(indicators, tuple) else indicators


# --------------------------------------------------------------------------
# rates
# --------------------------------------------------------------------------

def fit_rate(run_or_n, quantity="eta", values=None) -> float:
    """Negated least-squares slope of ``log q`` against ``log N`` over the last half.

    Accepts an :class:`AdaptiveRun` and a quantity name, or arrays
    ``fit_rate(n_elements, values=q)``. Returns NaN (with a warning) when the
    data grow or contain non-positive values.
    """
    if isinstance(run_or_n, AdaptiveRun):
        N = run_or_n.series("n_elements")
        q = run_or_n.series(quantity)
    else:
        N = np.asarray(run_or_n, dtype=float)
        q = np.asarray(values if values is not None else quantity, dtype=float)
    if len(N) != len(q) or len(N) < 2:
        warnings.warn("rate fit needs at least two levels", RuntimeWarning)
        return float("nan")
    k = max(2, len(N) - len(N) // 2)
    N, q = N[-k:], q[-k:]
    if np.any(~np.isfinite(q)) or np.any(q <= 0) or np.ptp(np.log(N)) == 0:
        warnings.warn("rate fit needs positive data on distinct mesh sizes", RuntimeWarning)
        return float("nan")
    if np.ptp(q) == 0:
        return 0.0
    slope = np.polyfit(np.log(N), np.log(q), 1)[0]
    s = -float(slope)
    if s < -1e-12:
        warnings.warn("quantity is not decreasing; no rate", RuntimeWarning)
        return float("nan")
    return max(s, 0.0)


@dataclass(frozen=True)
class LinearConvergenceFit:
    q: float
    c_lin: float
    max_violation: float


def linear_convergence_fit(eta) -> LinearConvergenceFit:
    """Geometric fit ``eta_l^2 ~ C q^l``.

    ``c_lin`` is the smallest constant with ``eta_{l+j}^2 <= c_lin q^j eta_l^2``
    for all pairs; ``max_violation`` the largest ratio of data to fitted line.
    """
    e2 = np.asarray(eta, dtype=float) ** 2
    if len(e2) < 2 or np.any(e2 <= 0):
        raise ValueError("need at least two positive estimator values")
    ell = np.arange(len(e2))
    slope, icpt = np.polyfit(ell, np.log(e2), 1)
    q = float(math.exp(slope))
    c_lin = 1.0
    for i in range(len(e2)):
        for j in range(i, len(e2)):
            c_lin = max(c_lin, e2[j] / (q ** (j - i) * e2[i]))
    viol = float(np.max(e2 / np.exp(icpt + slope * ell)))
    return LinearConvergenceFit(q, float(c_lin), viol)


def closure_constants(run: AdaptiveRun) -> np.ndarray:
    """``(#T_l - #T_0) / sum_{j<l} #M_j`` for ``l >= 1``."""
    n0 = run.levels[0].n_elements
    out, acc = [], 0
    for lv in range(1, len(run.levels)):
        acc += len(run.marked_sets[lv - 1])
        out.append((run.levels[lv].n_elements - n0) / acc if acc else 0.0)
    return np.array(out)


# --------------------------------------------------------------------------
# axiom diagnostics
# --------------------------------------------------------------------------

@dataclass
class AxiomReport:
    e1_constants: list
    e2_pairs: list
    e2_rho: float
    e2_c_red: float
    e3_partial_sums: list
    e3_telescoping_error: list
    e4_ratios: list
    s1_constant: float


def _eta_S(ind: IndicatorField, S) -> float:
    return math.sqrt(ind.squared_sum(S))


def axiom_diagnostics(run: AdaptiveRun, rho_red: float = 0.5,
                      exact_energy: Optional[float] = None) -> AxiomReport:
    """Per consecutive level pair: E1 quotient, E2 data, E3 sums, E4 ratio.

    The discrete energy norm of the prolonged difference, ``||Phi_o - Phi_.||``,
    is evaluated with the finer level's matrix. Identical consecutive meshes
    give E1 = 0 and no E2/E4 samples. ``exact_energy`` normalises the
    telescoping check (defaults to the last level's discrete energy).
    """
    if len(run.systems) != len(run.levels):
        raise ValueError("axiom diagnostics need retained per-level systems")
    systems = run.systems
    L = len(systems)
    e1, e2, e4, diffs = [], [], [], []
    for j in range(L - 1):
        s0, s1 = systems[j], systems[j + 1]
        m0, m1 = s0.space.mesh, s1.space.mesh
        eta0, eta1 = eta_of(run.indicators[j]), eta_of(run.indicators[j + 1])
        if m0.leaves == m1.leaves:
            e1.append(0.0)
            diffs.append(0.0)
            continue
        P = prolongation(s0.space, s1.space)
        d = s1.solution - P @ s0.solution
        dn2 = max(float(np.real(np.conj(d) @ (s1.matrix @ d))), 0.0)
        diffs.append(dn2)
        dn = math.sqrt(dn2)
        common = set(m0.leaves) & set(m1.leaves)
        num = abs(_eta_S(eta1, common) - _eta_S(eta0, common))
        e1.append(0.0 if num == 0.0 else (num / dn if dn > 0 else math.inf))
        refined = [e for e in m0.leaves if e not in m1]
        new = [e for e in m1.leaves if e not in m0]
        e2.append((eta1.squared_sum(new), eta0.squared_sum(refined), dn2))
        R = patch_elements(m0, refined, 2)
        er = _eta_S(eta0, R)
        e4.append(dn / er if er > 0 else math.inf)
    c_red = 0.0
    for a, b, dn2 in e2:
        excess = a - rho_red * b
        if excess > 0:
            c_red = max(c_red, excess / dn2 if dn2 > 0 else math.inf)
    partial = np.cumsum(diffs).tolist() if diffs else []
    # telescoping: sum_{j=l}^{L-2} ||Phi_{j+1} - Phi_j||^2 = e_l^2 - e_{L-1}^2
    errs = run.series("energy_error")
    tele = []
    if np.all(np.isfinite(errs)) and len(diffs):
        scale = exact_energy
        if scale is None:
            last = systems[-1]
            scale = float(np.real(np.conj(last.solution) @ (last.matrix @ last.solution)))
        tail = np.cumsum(diffs[::-1])[::-1]
        for lv in range(L - 1):
            tele.append(abs(tail[lv] - (errs[lv] ** 2 - errs[-1] ** 2)) / scale)
    last = systems[-1]
    s1 = inverse_constant(last.space, last.matrix)
    return AxiomReport(e1, e2, rho_red, c_red, partial, tele, e4, s1)


# --------------------------------------------------------------------------
# inverse inequalities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InverseReport:
    s1_constant: float
    derivative_constant: float
    basis_quotients: np.ndarray


class InverseQuotient:
    """``||h^(1/2) d/ds V psi|| / (||psi||_V + ||h^(1/2) psi||)`` on a fixed space."""

    def __init__(self, space: AnsatzSpace, matrix: np.ndarray, pde, n: int = 12,
                 quad: QuadConfig | None = None):
        u, w = gauss01(n)
        tg = element_targets(space, u)
        self.dV = potential_matrix(space, pde, tg, True, quad)
        J = np.stack([pn.jac(u) for pn in space.panels])
        h = space.mesh.measures
        self.wts = ((h[:, None] * J * w[None, :])).reshape(-1)
        self.matrix = matrix
        self.W = weighted_l2_gram(space, 1.0)

    def __call__(self, psi) -> float:
        psi = np.asarray(psi)
        g = np.einsum("mai,i->ma", self.dV, psi)
        num = math.sqrt(float(np.sum(self.wts[:, None] * np.abs(g) ** 2)))
        en = math.sqrt(max(float(np.real(np.conj(psi) @ (self.matrix @ psi))), 0.0))
        l2 = math.sqrt(max(float(np.real(np.conj(psi) @ (self.W @ psi))), 0.0))
        return num / (en + l2)


def inverse_inequality_check(space: AnsatzSpace, matrix: np.ndarray, pde, n_random: int = 100,
                             seed: int = 0, quad: QuadConfig | None = None) -> InverseReport:
    """S1 constant and the largest derivative quotient over basis and random vectors."""
    s1 = inverse_constant(space, matrix)
    Q = InverseQuotient(space, matrix, pde, quad=quad)
    eye = np.eye(space.dof_count)
    basis = np.array([Q(eye[i]) for i in range(space.dof_count)])
    rng = np.random.default_rng(seed)
    rand = [Q(rng.standard_normal(space.dof_count)) for _ in range(n_random)]
    return InverseReport(s1, float(max(basis.max(), max(rand, default=0.0))), basis)


def partition_exact(coarse: Mesh, fine: Mesh) -> bool:
    """Each coarse element is the exact union of the fine elements inside it."""
    if not is_refinement(fine, coarse):
        return False
    groups: dict = {}
    for ef, eid in enumerate(fine.leaves):
        groups.setdefault(coarse_ancestor(fine, coarse, eid), []).append(ef)
    for ec, cid in enumerate(coarse.leaves):
        idx = groups.get(cid)
        if not idx:
            return False
        if fine.t0[idx[0]] != coarse.t0[ec] or fine.t1[idx[-1]] != coarse.t1[ec]:
            return False
        for a, b in zip(idx[:-1], idx[1:]):
            if b != a + 1 or fine.t1[a] != fine.t0[b]:
                return False
    return True
