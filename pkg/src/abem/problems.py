"""Right-hand sides with the data needed for residuals and error oracles.

Two flavours are provided:

* analytic data ``f`` with its tangential derivative, optionally with a known
  exact density (Fourier modes on a circle, where ``V`` is diagonal);
* manufactured data ``f = V phi_ref`` for a reference density ``phi_ref`` that
  is a piecewise polynomial on a fixed fine mesh. Load vectors, residuals and
  energy errors are then computed on the overlay of the current mesh with the
  reference mesh, so ``f`` never has to be tabulated pointwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from abem.ansatz import AnsatzSpace, prolongation, scott_zhang_project
from abem.galerkin import (
    GalerkinSystem,
    solve,
    QuadConfig,
    Targets,
    assemble,
    assemble_rhs,
    potential,
)
from abem.geometry import BoundaryGeometry
from abem.mesh import Mesh, initial_mesh, overlay, refine, refine_uniform
from abem.operators import PdeOperator

NEGATIVE_ENERGY_TOL = 1e-10


def _apply(system, space, pde, targets, derivative, coeffs):
    """``V`` (or ``d/ds V``) of ``coeffs`` at targets, without forming the matrix."""
    return potential(space, pde, coeffs, targets, derivative, system.quad)


class Problem:
    """Interface: load vector, residual at boundary targets, energy error."""

    pde: PdeOperator
    differentiable: bool = True

    def rhs(self, space: AnsatzSpace, quad: QuadConfig) -> np.ndarray:
        raise NotImplementedError

    def residual(self, system: GalerkinSystem, targets: Targets, value: bool = True,
                 derivative: bool = True):
        """``(f - V Phi, d/ds (f - V Phi))`` at targets, each ``(M, D)`` or None if not requested."""
        raise NotImplementedError

    def energy_error(self, system: GalerkinSystem) -> Optional[float]:
        return None

    def exact_energy(self) -> Optional[float]:
        return None

    def scaled(self, factor: float) -> "Problem":
        raise NotImplementedError


@dataclass
class AnalyticProblem(Problem):
    pde: PdeOperator
    f: Callable
    df: Optional[Callable] = None
    energy: Optional[float] = None
    phi: Optional[Callable] = None

    @property
    def differentiable(self) -> bool:
        return self.df is not None

    def rhs(self, space, quad):
        return assemble_rhs(space, self.f, quad.rhs_order)

    def residual(self, system, targets, value=True, derivative=True):
        x = system.solution
        D, M = self.pde.D, len(targets)
        r = dr = None
        if value:
            fv = np.broadcast_to(np.asarray(self.f(targets.points)).reshape(M, -1), (M, D))
            r = fv - _apply(system, system.space, self.pde, targets, False, x)
        if derivative:
            if self.df is None:
                raise ValueError("data is not differentiable along the boundary")
            dfv = np.asarray(self.df(targets.points, targets.tangents)).reshape(M, -1)
            dr = np.broadcast_to(dfv, (M, D)) - _apply(system, system.space, self.pde,
                                                       targets, True, x)
        return r, dr

    def energy_error(self, system):
        if self.energy is None:
            return None
        val = self.energy - float(np.real(np.conj(system.rhs) @ system.solution))
        if val < -NEGATIVE_ENERGY_TOL:
            raise ArithmeticError(f"negative squared energy error {val:.3e}: "
                                  "quadrature inconsistent with the exact energy")
        return math.sqrt(max(val, 0.0))

    def exact_energy(self):
        return self.energy

    def scaled(self, factor):
        f, df, ph = self.f, self.df, self.phi
        return AnalyticProblem(
            self.pde,
            lambda x: factor * np.asarray(f(x)),
            None if df is None else (lambda x, t: factor * np.asarray(df(x, t))),
            None if self.energy is None else factor ** 2 * self.energy,
            None if ph is None else (lambda x: factor * np.asarray(ph(x))),
        )


def zero_problem(pde: PdeOperator) -> AnalyticProblem:
    D = pde.D
    return AnalyticProblem(pde, lambda x: np.zeros((len(x), D)),
                           lambda x, t: np.zeros((len(x), D)), 0.0,
                           lambda x: np.zeros((len(x), D)))


def constant_problem(pde: PdeOperator, value) -> AnalyticProblem:
    v = np.broadcast_to(np.asarray(value, dtype=float), (pde.D,))
    return AnalyticProblem(pde, lambda x: np.tile(v, (len(x), 1)),
                           lambda x, t: np.zeros((len(x), pde.D)))


def fourier_circle_problem(pde: PdeOperator, center, radius: float, a0: float = 0.0,
                           cos: dict | None = None, sin: dict | None = None) -> AnalyticProblem:
    """Laplace single layer on a circle with ``phi = a0 + sum a_k cos k t + b_k sin k t``.

    Uses the eigenvalues ``-r log r`` (constants) and ``r / (2k)`` (mode k).
    """
    if pde.kind != "laplace":
        raise ValueError("Fourier oracle only exists for the Laplace kernel")
    cos = {int(k): float(v) for k, v in (cos or {}).items()}
    sin = {int(k): float(v) for k, v in (sin or {}).items()}
    if any(k < 1 for k in list(cos) + list(sin)):
        raise ValueError("Fourier modes must be >= 1")
    c = np.asarray(center, dtype=float)
    r = float(radius)
    lam0 = -r * math.log(r)

    def angle(x):
        d = np.asarray(x) - c
        return np.arctan2(d[:, 1], d[:, 0])

    def phi(x):
        th = angle(x)
        v = np.full(th.shape, a0)
        for k, a in cos.items():
            v = v + a * np.cos(k * th)
        for k, b in sin.items():
            v = v + b * np.sin(k * th)
        return v

    def f(x):
        th = angle(x)
        v = np.full(th.shape, lam0 * a0)
        for k, a in cos.items():
            v = v + r / (2 * k) * a * np.cos(k * th)
        for k, b in sin.items():
            v = v + r / (2 * k) * b * np.sin(k * th)
        return v

    def df(x, t):
        th = angle(x)
        e_th = np.stack([-np.sin(th), np.cos(th)], axis=-1)
        dth = np.einsum("nk,nk->n", e_th, np.asarray(t)) / r
        v = np.zeros(th.shape)
        for k, a in cos.items():
            v = v - r / 2 * a * np.sin(k * th)
        for k, b in sin.items():
            v = v + r / 2 * b * np.cos(k * th)
        return v * dth

    energy = 2 * math.pi * r * lam0 * a0 ** 2
    energy += math.pi * r * sum(r / (2 * k) * a ** 2 for k, a in cos.items())
    energy += math.pi * r * sum(r / (2 * k) * b ** 2 for k, b in sin.items())
    return AnalyticProblem(pde, f, df, energy, phi)


# --------------------------------------------------------------------------
# manufactured problems
# --------------------------------------------------------------------------

def power_density(center, exponent: float, amplitude: float = 1.0, offset: float = 0.0):
    c = np.asarray(center, dtype=float)

    def g(x):
        d = np.linalg.norm(np.asarray(x) - c, axis=-1)
        with np.errstate(divide="ignore"):
            return offset + amplitude * d ** exponent
    return g


def trig_density(components: Sequence[dict]):
    """Component j: ``amp * cos(freq . x + phase)``."""
    comps = [(float(cmp.get("amp", 1.0)), np.asarray(cmp.get("freq", [0.0, 0.0]), float),
              float(cmp.get("phase", 0.0))) for cmp in components]

    def g(x):
        x = np.asarray(x)
        return np.stack([a * np.cos(x @ w + ph) for a, w, ph in comps], axis=-1)
    return g


def reference_mesh(base: Mesh, uniform_levels: int = 4,
                   grade_points: Sequence = (), grade_levels: int = 0) -> Mesh:
    """Uniform refinements of ``base`` followed by bisection towards ``grade_points``."""
    m = base
    for _ in range(uniform_levels):
        m = refine_uniform(m)
    pts = [np.asarray(p, dtype=float) for p in grade_points]
    for _ in range(grade_levels):
        marked = []
        pats = m.geometry.patches
        for eid, p, a, b in zip(m.leaves, m.patch_ids, m.t0, m.t1):
            ends = pats[p].point(np.array([a, b]))
            if any(np.min(np.linalg.norm(ends - q, axis=-1)) < 1e-12 for q in pts):
                marked.append(eid)
        if not marked:
            break
        m = refine(m, marked)
    return m


@dataclass
class ManufacturedProblem(Problem):
    """``f = V phi_ref`` with ``phi_ref`` a piecewise polynomial on ``ref_space``."""

    pde: PdeOperator
    ref_space: AnsatzSpace
    ref_coeffs: np.ndarray
    quad: QuadConfig = field(default_factory=QuadConfig)
    base: Optional[Mesh] = None
    _exact: Optional[float] = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    differentiable = True

    def _overlay_data(self, space: AnsatzSpace):
        key = (space.mesh.leaves, space.degree)
        if key not in self._cache:
            O = overlay(space.mesh, self.ref_space.mesh)
            SO = AnsatzSpace(O, max(space.degree, self.ref_space.degree), space.D)
            Pc = prolongation(space, SO)
            phi_O = prolongation(self.ref_space, SO) @ self.ref_coeffs
            MO = assemble(SO, self.pde, self.quad)
            self._cache.clear()
            self._cache[key] = (SO, Pc, phi_O, MO)
        return self._cache[key]

    def rhs(self, space, quad):
        SO, Pc, phi_O, MO = self._overlay_data(space)
        return Pc.T @ (MO @ phi_O)

    def error_density(self, system):
        SO, Pc, phi_O, MO = self._overlay_data(system.space)
        return SO, phi_O - Pc @ system.solution, MO

    def residual(self, system, targets, value=True, derivative=True):
        SO, d, _ = self.error_density(system)
        r = _apply(system, SO, self.pde, targets, False, d) if value else None
        dr = _apply(system, SO, self.pde, targets, True, d) if derivative else None
        return r, dr

    def energy_error(self, system):
        _, d, MO = self.error_density(system)
        val = float(np.real(d @ (MO @ d)))
        if val < -NEGATIVE_ENERGY_TOL:
            raise ArithmeticError(f"negative squared energy error {val:.3e}")
        return math.sqrt(max(val, 0.0))

    def exact_energy(self):
        if self._exact is None:
            M = assemble(self.ref_space, self.pde, self.quad)
            self._exact = float(self.ref_coeffs @ (M @ self.ref_coeffs))
        return self._exact

    def scaled(self, factor):
        return ManufacturedProblem(self.pde, self.ref_space, factor * self.ref_coeffs,
                                   self.quad, self.base)


def manufactured_problem(pde: PdeOperator, base: Mesh, density: Callable, degree: int = 2,
                         uniform_levels: int = 4, grade_points: Sequence = (),
                         grade_levels: int = 0,
                         quad: QuadConfig | None = None) -> ManufacturedProblem:
    ref = reference_mesh(base, uniform_levels, grade_points, grade_levels)
    space = AnsatzSpace(ref, degree, pde.D)
    coeffs = scott_zhang_project(space, ref.leaves, density)
    return ManufacturedProblem(pde, space, coeffs, quad or QuadConfig(), base)


def initial_for(problem: Problem, geometry: BoundaryGeometry, n: int) -> Mesh:
    """Starting mesh; manufactured problems must start from their reference's base."""
    if isinstance(problem, ManufacturedProblem) and problem.base is not None:
        return problem.base
    return initial_mesh(geometry, n)


def build_system(space: AnsatzSpace, problem: Problem, quad: QuadConfig | None = None,
                 solved: bool = True) -> GalerkinSystem:
    """Assemble matrix and load vector for ``problem`` on ``space`` (and solve)."""
    quad = quad or QuadConfig()
    sys = GalerkinSystem(space, problem.pde, assemble(space, problem.pde, quad),
                         problem.rhs(space, quad), quad=quad, problem=problem)
    if solved:
        solve(sys)
    return sys
