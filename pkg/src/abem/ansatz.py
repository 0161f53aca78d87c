"""Discontinuous piecewise polynomials of degree ``p`` with ``D`` components.

On each element the basis consists of orthonormal Legendre polynomials in
the element's reference coordinate ``u in [0, 1]`` (orthonormal in parameter
space, not in arc length). Global dof ``((e * (p + 1)) + k) * D + c`` belongs
to element position ``e``, Legendre mode ``k`` and component ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable

import numpy as np
import scipy.linalg

from abem.mesh import Mesh, coarse_ancestor
from abem.quadrature import Panel, gauss01, legendre_basis


@dataclass(frozen=True, eq=False)
class AnsatzSpace:
    mesh: Mesh
    degree: int = 0
    D: int = 1

    def __post_init__(self):
        if self.degree < 0 or self.D < 1:
            raise ValueError("need degree >= 0 and D >= 1")

    @property
    def local_size(self) -> int:
        return (self.degree + 1) * self.D

    @property
    def dof_count(self) -> int:
        return len(self.mesh) * self.local_size

    def dof(self, e: int, k: int, c: int) -> int:
        return (e * (self.degree + 1) + k) * self.D + c

    @property
    def dof_map(self) -> np.ndarray:
        """Array ``[e, k, c] -> global index``."""
        return np.arange(self.dof_count).reshape(len(self.mesh), self.degree + 1, self.D)

    @cached_property
    def panels(self) -> list[Panel]:
        pats = self.mesh.geometry.patches
        return [Panel(pats[p], float(a), float(b), int(p))
                for p, a, b in zip(self.mesh.patch_ids, self.mesh.t0, self.mesh.t1)]

    def coefficients(self, values) -> np.ndarray:
        """View of a coefficient vector as ``(elements, p + 1, D)``."""
        v = np.asarray(values)
        if v.shape != (self.dof_count,):
            raise ValueError(f"coefficient vector must have length {self.dof_count}")
        return v.reshape(len(self.mesh), self.degree + 1, self.D)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dof_count)


def eval_discrete(space: AnsatzSpace, coeffs, element: int, t) -> np.ndarray:
    """Values at parameter(s) ``t`` of element id ``element``; shape ``(..., D)``."""
    e = space.mesh.index(element)
    a, b = space.mesh.t0[e], space.mesh.t1[e]
    t = np.asarray(t, dtype=float)
    slack = 1e-12 * max(1.0, abs(a), abs(b))
    if np.any(t < a - slack) or np.any(t > b + slack):
        raise ValueError("parameter outside the element")
    u = (t - a) / (b - a)
    B = legendre_basis(np.atleast_1d(u), space.degree)
    vals = B @ space.coefficients(coeffs)[e]
    return vals.reshape(t.shape + (space.D,))


def eval_on_panels(space: AnsatzSpace, coeffs, u) -> np.ndarray:
    """Values at the same reference nodes ``u`` on every element; ``(E, n, D)``."""
    B = legendre_basis(u, space.degree)
    return np.einsum("nk,ekc->enc", B, space.coefficients(coeffs))


def local_gram(panel: Panel, degree: int, n: int | None = None) -> np.ndarray:
    """Arc-length Gram matrix of the Legendre basis on one panel."""
    x, w = gauss01(n or degree + 8)
    B = legendre_basis(x, degree)
    return np.einsum("n,nk,nl->kl", w * panel.jac(x), B, B)


def scott_zhang_project(space: AnsatzSpace, S: Iterable[int], psi: Callable,
                        order: int | None = None) -> np.ndarray:
    """Elementwise ``L^2(T)`` projection of ``psi`` on elements in ``S``, zero elsewhere.

    ``psi`` maps points of shape ``(n, 2)`` to values ``(n,)`` or ``(n, D)``.
    """
    S = set(S)
    p = space.degree
    x, w = gauss01(order or max(2 * p + 10, 16))
    B = legendre_basis(x, p)
    out = np.zeros((len(space.mesh), p + 1, space.D))
    for e, panel in enumerate(space.panels):
        if space.mesh.leaves[e] not in S:
            continue
        J = panel.jac(x)
        vals = np.asarray(psi(panel.point(x)), dtype=float).reshape(len(x), -1)
        if not np.all(np.isfinite(vals)):
            raise ArithmeticError("projection quadrature produced non-finite values")
        G = np.einsum("n,nk,nl->kl", w * J, B, B)
        rhs = np.einsum("n,nk,nc->kc", w * J, B, vals)
        out[e] = scipy.linalg.solve(G, rhs, assume_a="pos")
    return out.reshape(-1)


def _restriction(degree_c: int, degree_f: int, u0: float, u1: float) -> np.ndarray:
    """Legendre coefficients (fine basis) of coarse basis restricted to [u0, u1]."""
    x, w = gauss01(max(degree_c, degree_f) + 2)
    Bc = legendre_basis(u0 + (u1 - u0) * x, degree_c)
    Bf = legendre_basis(x, degree_f)
    return np.einsum("n,nl,nk->lk", w, Bf, Bc)


def prolongation(coarse: AnsatzSpace, fine: AnsatzSpace) -> np.ndarray:
    """Matrix embedding coarse coefficients into a nested fine space."""
    if fine.degree < coarse.degree or fine.D != coarse.D:
        raise ValueError("fine space must contain the coarse space")
    P = np.zeros((fine.dof_count, coarse.dof_count))
    fm, cm = fine.mesh, coarse.mesh
    D = coarse.D
    for ef, eid in enumerate(fm.leaves):
        anc = coarse_ancestor(fm, cm, eid)
        ec = cm.index(anc)
        a, b = cm.t0[ec], cm.t1[ec]
        u0 = (fm.t0[ef] - a) / (b - a)
        u1 = (fm.t1[ef] - a) / (b - a)
        R = _restriction(coarse.degree, fine.degree, u0, u1)
        for c in range(D):
            rows = [fine.dof(ef, l, c) for l in range(fine.degree + 1)]
            cols = [coarse.dof(ec, k, c) for k in range(coarse.degree + 1)]
            P[np.ix_(rows, cols)] = R
    return P


def weighted_l2_gram(space: AnsatzSpace, weight_power: float = 1.0) -> np.ndarray:
    """Block-diagonal Gram matrix of ``int h^weight_power |Psi|^2 ds``."""
    n = space.dof_count
    G = np.zeros((n, n))
    h = space.mesh.measures
    eye = np.eye(space.D)
    for e, panel in enumerate(space.panels):
        blk = np.kron(local_gram(panel, space.degree), eye) * h[e] ** weight_power
        s = e * space.local_size
        G[s:s + space.local_size, s:s + space.local_size] = blk
    return G


@dataclass(frozen=True)
class SpaceAxiomReport:
    inverse_constant: float
    nestedness_residual: float | None
    unity_residual: float
    local_definition_residual: float | None


def inverse_constant(space: AnsatzSpace, gram_energy: np.ndarray) -> float:
    """sqrt of the largest eigenvalue of ``(h-weighted L^2 Gram, energy Gram)``."""
    W = weighted_l2_gram(space, 1.0)
    M = np.real(0.5 * (gram_energy + np.conj(gram_energy.T)))
    try:
        lam = scipy.linalg.eigh(W, M, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("energy Gram matrix is not positive definite") from exc
    return float(np.sqrt(lam.max()))


def unity_residual(space: AnsatzSpace) -> float:
    """Max residual of representing each indicator function chi_T per component."""
    x, _ = gauss01(8)
    worst = 0.0
    for e in range(len(space.mesh)):
        for c in range(space.D):
            coef = np.zeros(space.dof_count)
            # chi_T is the constant mode (normalised Legendre P_0 = 1) on T
            coef[space.dof(e, 0, c)] = 1.0
            vals = eval_on_panels(space, coef, x)
            target = np.zeros_like(vals)
            target[e, :, c] = 1.0
            worst = max(worst, float(np.abs(vals - target).max()))
    return worst


def nestedness_residual(coarse: AnsatzSpace, fine: AnsatzSpace, n_points: int = 10,
                        seed: int = 0) -> float:
    """Max pointwise mismatch of random coarse functions re-expressed on ``fine``."""
    rng = np.random.default_rng(seed)
    P = prolongation(coarse, fine)
    worst = 0.0
    for _ in range(3):
        c = rng.standard_normal(coarse.dof_count)
        cf = P @ c
        fm = fine.mesh
        for _ in range(n_points):
            ef = int(rng.integers(len(fm)))
            t = fm.t0[ef] + rng.random() * (fm.t1[ef] - fm.t0[ef])
            fid = fm.leaves[ef]
            cid = coarse_ancestor(fm, coarse.mesh, fid)
            vf = eval_discrete(fine, cf, fid, t)
            vc = eval_discrete(coarse, c, cid, t)
            worst = max(worst, float(np.abs(vf - vc).max()))
    return worst


def local_definition_residual(coarse: AnsatzSpace, fine: AnsatzSpace, seed: int = 0) -> float:
    """Restrict a random fine function to unrefined elements and test it is degree p there."""
    rng = np.random.default_rng(seed)
    cf = rng.standard_normal(fine.dof_count)
    shared = [e for e in coarse.mesh.leaves if e in fine.mesh]
    x, _ = gauss01(coarse.degree + 4)
    worst = 0.0
    for eid in shared:
        ts = fine.mesh.t0[fine.mesh.index(eid)] + x * (
            fine.mesh.t1[fine.mesh.index(eid)] - fine.mesh.t0[fine.mesh.index(eid)])
        vals = eval_discrete(fine, cf, eid, ts)
        B = legendre_basis(x, coarse.degree)
        coef, *_ = np.linalg.lstsq(B, vals, rcond=None)
        worst = max(worst, float(np.abs(B @ coef - vals).max()))
    return worst


def space_axiom_diagnostics(space: AnsatzSpace, gram_energy: np.ndarray,
                            refined: AnsatzSpace | None = None) -> SpaceAxiomReport:
    """S1 constant, S2/S3 re-representation residuals (if ``refined`` given), S4 residual."""
    c_inv = inverse_constant(space, gram_energy)
    nest = nestedness_residual(space, refined) if refined is not None else None
    loc = local_definition_residual(space, refined) if refined is not None else None
    return SpaceAxiomReport(c_inv, nest, unity_residual(space), loc)
