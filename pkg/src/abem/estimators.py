"""Per-element a posteriori error indicators.

Both estimators work on residual values ``f - V Phi`` (and its arc-length
derivative) tabulated at Gauss nodes of every element. The table is stored
on ``system.cache`` so that computing both estimators on one level evaluates
the potential only once per quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from abem.galerkin import GalerkinSystem, element_targets
from abem.quadrature import (DEFAULT_NEAR_ORDER, gauss01, legendre_basis, slobodeckij_cross,
                             slobodeckij_self)

DEFAULT_ESTIMATOR_NODES = 12


@dataclass(frozen=True)
class IndicatorField:
    """Indicators ordered like ``mesh.leaves``; ``total`` is their l2 norm."""

    ids: tuple
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ArithmeticError(f"invalid {self.kind} indicator values")

    @property
    def total(self) -> float:
        return float(math.sqrt(np.sum(self.values ** 2)))

    def squared_sum(self, subset) -> float:
        sel = set(subset)
        mask = np.array([i in sel for i in self.ids], dtype=bool)
        return float(np.sum(self.values[mask] ** 2))

    def as_dict(self) -> dict:
        return dict(zip(self.ids, self.values.tolist()))


def residual_table(system: GalerkinSystem, n: int = DEFAULT_ESTIMATOR_NODES,
                   value: bool = True, derivative: bool = True):
    """Residual and its tangential derivative at ``n`` Gauss nodes per element.

    Returns ``(r, dr)`` with shapes ``(E, n, D)``; entries not requested are None
    unless already cached.
    """
    if system.solution is None or system.problem is None:
        raise ValueError("estimators need a solved system with problem data")
    tab = system.cache.setdefault(("residual", n), {})
    want_r = value and "r" not in tab
    want_dr = derivative and "dr" not in tab
    if want_r or want_dr:
        u, _ = gauss01(n)
        tg = element_targets(system.space, u)
        r, dr = system.problem.residual(system, tg, value=want_r, derivative=want_dr)
        E, D = len(system.space.mesh), system.space.D
        if want_r:
            tab["r"] = np.asarray(r).reshape(E, n, D)
        if want_dr:
            tab["dr"] = np.asarray(dr).reshape(E, n, D)
    return tab.get("r"), tab.get("dr")


def residual_estimator(system: GalerkinSystem,
                       n: int = DEFAULT_ESTIMATOR_NODES) -> IndicatorField:
    """``h_T int_T |d/ds (f - V Phi)|^2 ds`` per element (square-rooted)."""
    _, dr = residual_table(system, n, value=False, derivative=True)
    _, w = gauss01(n)
    u, _ = gauss01(n)
    panels = system.space.panels
    J = np.stack([pn.jac(u) for pn in panels])
    h = system.space.mesh.measures
    sq = h * np.einsum("n,en,en->e", w, J, np.sum(np.abs(dr) ** 2, axis=-1))
    return IndicatorField(system.space.mesh.leaves, np.sqrt(np.maximum(sq, 0.0)), "residual")


def _interpolants(r: np.ndarray, n: int) -> np.ndarray:
    """Legendre coefficients ``(E, n, D)`` of the degree ``n - 1`` interpolant on each element."""
    u, _ = gauss01(n)
    B = legendre_basis(u, n - 1)
    return np.linalg.solve(B, r.transpose(1, 0, 2).reshape(n, -1)).reshape(n, r.shape[0], -1) \
        .transpose(1, 0, 2)


def faermann_estimator(system: GalerkinSystem, n: int = DEFAULT_ESTIMATOR_NODES,
                       order: int = DEFAULT_NEAR_ORDER) -> IndicatorField:
    """Sum over ``T' in {T, left, right}`` of ``|f - V Phi|^2_{H^{1/2}(T u T')}``.

    The residual on each element is replaced by its polynomial interpolant at
    the tabulated nodes; union seminorms are split into self and cross terms.
    """
    r, _ = residual_table(system, n, value=True, derivative=False)
    coef = _interpolants(r, n)
    panels = system.space.panels
    index = {id(pn): e for e, pn in enumerate(panels)}

    def v(panel, u):
        e = index[id(panel)]
        return legendre_basis(u, n - 1) @ coef[e]

    mesh = system.space.mesh
    E = len(mesh)
    self_terms = np.array([slobodeckij_self(v, panels[e], order) for e in range(E)])
    right = [mesh.neighbors(e)[1] for e in range(E)]
    cross_right = np.array([slobodeckij_cross(v, panels[e], panels[right[e]], order)
                            for e in range(E)])
    out = np.empty(E)
    for e in range(E):
        left, rt = mesh.neighbors(e)
        # T itself, T u left, T u right
        c_left = cross_right[left]
        c_right = cross_right[e]
        out[e] = (self_terms[e]
                  + self_terms[e] + 2.0 * c_left + self_terms[left]
                  + self_terms[e] + 2.0 * c_right + self_terms[rt])
    return IndicatorField(mesh.leaves, np.sqrt(np.maximum(out, 0.0)), "faermann")
