"""Galerkin assembly and solution of ``<V Phi, Psi> = <f, Psi>``.

Far element pairs are integrated with a vectorised tensor Gauss rule; pairs
that touch or lie closer than ``far_threshold * max(h)`` are recomputed with
the singular rules from :mod:`abem.quadrature`. Far pairs within
``SEPARATED_FACTOR * far_threshold * max(h)`` use the tensor rule of the near
order, which keeps every block accurate to about 1e-14. Each matrix entry is a fixed
sum independent of the worker schedule.
"""

from __future__ import annotations

import dataclasses
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from abem.ansatz import AnsatzSpace
from abem.operators import PdeOperator, kernel_from_diff, regular_part
from abem.quadrature import (
    DEFAULT_FAR_ORDER,
    DEFAULT_FAR_THRESHOLD,
    DEFAULT_NEAR_ORDER,
    Panel,
    gauss01,
    legendre_basis,
    panel_pair_integral,
    batch_point_weights,
    singular_rule,
)


# far pairs closer than this many far thresholds get the near-order tensor rule
SEPARATED_FACTOR = 4.0


class EllipticityError(np.linalg.LinAlgError):
    """Galerkin matrix is not Hermitian positive definite."""


@dataclass(frozen=True)
class QuadConfig:
    far_order: int = DEFAULT_FAR_ORDER
    near_order: int = DEFAULT_NEAR_ORDER
    far_threshold: float = DEFAULT_FAR_THRESHOLD
    potential_order: int = 16
    rhs_order: int = 16


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("ABEM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class GalerkinSystem:
    space: AnsatzSpace
    pde: PdeOperator
    matrix: np.ndarray
    rhs: np.ndarray
    solution: Optional[np.ndarray] = None
    quad: QuadConfig = field(default_factory=QuadConfig)
    cache: dict = field(default_factory=dict, repr=False)
    # data object providing ``residual(system, targets)``; see abem.problems
    problem: object = field(default=None, repr=False)


class _PanelBatch:
    """Vectorised evaluation of many panels, grouped by their parametrised patch."""

    def __init__(self, panels: list[Panel]):
        self.n = len(panels)
        groups: dict[int, list[int]] = {}
        for k, p in enumerate(panels):
            groups.setdefault(id(p.patch), []).append(k)
        self.groups = []
        for members in groups.values():
            sel = [panels[k] for k in members]
            self.groups.append((sel[0].patch, np.asarray(members),
                                np.array([p.t0 for p in sel])[:, None],
                                np.array([p.t1 for p in sel])[:, None]))

    def nodes(self, u, idx=None) -> tuple[np.ndarray, np.ndarray]:
        """Points ``(P, m, 2)`` and Jacobians ``(P, m)`` at reference nodes ``u``.

        ``idx`` selects panels (default: all, ``P = E``).
        """
        u = np.asarray(u, dtype=float)
        if idx is not None:
            X, J = np.empty((len(idx), len(u), 2)), np.empty((len(idx), len(u)))
            pos = np.full(self.n, -1)
            pos[idx] = np.arange(len(idx))
        else:
            X, J = np.empty((self.n, len(u), 2)), np.empty((self.n, len(u)))
        for patch, members, t0, t1 in self.groups:
            if idx is not None:
                keep = pos[members] >= 0
                if not keep.any():
                    continue
                t0, t1, members = t0[keep], t1[keep], pos[members[keep]]
            T = np.clip(t0 + (t1 - t0) * u[None, :], np.minimum(t0, t1), np.maximum(t0, t1))
            X[members] = patch.point(T)
            J[members] = np.abs(t1 - t0) * np.linalg.norm(patch.derivative(T), axis=-1)
        return X, J


def _element_bounds(batch: _PanelBatch):
    """Centres and enclosing radii of all panels."""
    S, _ = batch.nodes(np.linspace(0.0, 1.0, 9))
    c = S[:, 4]
    # sampled radius of a curved panel can undershoot slightly
    rad = np.linalg.norm(S - c[:, None], axis=-1).max(axis=1) * 1.05 + 1e-15
    return c, rad, S


def _near_pairs(panels: list[Panel], threshold: float, batch: _PanelBatch | None = None,
                graded: float = 0.0):
    """Like :func:`near_pairs`, with the shared corner of adjacent pairs as fourth entry.

    Far pairs closer than ``graded * max(h)`` are returned with regime ``separated``.
    """
    n = len(panels)
    batch = batch or _PanelBatch(panels)
    c, rad, S = _element_bounds(batch)
    h = np.array([p.length for p in panels])
    ends = S[:, [0, -1]]
    scale = np.maximum(1.0, np.abs(ends).max(axis=-1))            # (E, 2)
    out = []
    for i in range(n):
        out.append((i, i, "coincident", None))
        d = np.linalg.norm(c[i + 1:] - c[i], axis=-1) - rad[i + 1:] - rad[i]
        reach = max(threshold, graded)
        cand = np.nonzero(d < reach * np.maximum(h[i], h[i + 1:]))[0] + i + 1
        if not len(cand):
            continue
        gap = np.linalg.norm(ends[i][None, :, None] - ends[cand][:, None, :], axis=-1)
        hit = gap <= 1e-12 * scale[i][None, :, None]               # (C, 2, 2)
        dist = np.linalg.norm(S[i][None, :, None] - S[cand][:, None, :], axis=-1).min(axis=(1, 2))
        for k, j in enumerate(cand):
            j = int(j)
            if hit[k].any():
                ea, eb = (int(v) for v in np.argwhere(hit[k])[0])
                out.append((i, j, "adjacent", (ea, eb)))
            elif dist[k] < threshold * max(h[i], h[j]):
                out.append((i, j, "near", None))
            elif dist[k] < graded * max(h[i], h[j]):
                out.append((i, j, "separated", None))
    return out


def near_pairs(panels: list[Panel], threshold: float) -> list[tuple[int, int, str]]:
    """All ``(i, j, regime)`` with ``i <= j`` needing singular or subdivided quadrature."""
    return [(i, j, reg) for i, j, reg, _ in _near_pairs(panels, threshold)]


def _far_blocks(space: AnsatzSpace, pde: PdeOperator, n: int,
                batch: _PanelBatch | None = None) -> np.ndarray:
    """All element-pair blocks with the plain tensor rule; shape (E, K, D, E, K, D)."""
    panels = space.panels
    E, p, D = len(panels), space.degree, space.D
    x, w = gauss01(n)
    B = legendre_basis(x, p)
    X, J = (batch or _PanelBatch(panels)).nodes(x)          # (E, n, 2), (E, n)
    Wb = (w * J)[:, :, None] * B[None]                       # (E, n, K)
    Xf = X.reshape(-1, 2)
    out = np.empty((E, p + 1, D, E, p + 1, D))
    step = max(1, int(2_000_000 // (n * n * E * D * D)) or 1)

    def work(s):
        Xs = X[s:s + step].reshape(-1, 2)
        z = Xs[:, None, :] - Xf[None, :, :]
        r2 = np.sum(z * z, axis=-1)
        r2[r2 == 0.0] = 1.0
        cs = min(step, E - s)
        if pde.kind == "laplace":
            K = (pde.log_coefficient()[0, 0] * 0.5) * np.log(r2)
            K = K.reshape(cs, n, E, n)
            blk = np.einsum("eqk,eqfr,frl->ekfl", Wb[s:s + cs], K, Wb, optimize=True)
            out[s:s + cs] = blk[:, :, None, :, :, None]
        else:
            K = kernel_from_diff(pde, z, r2).reshape(cs, n, E, n, D, D)
            out[s:s + cs] = np.einsum("eqk,eqfrab,frl->ekafl b".replace(" ", ""),
                                      Wb[s:s + cs], K, Wb, optimize=True)

    starts = list(range(0, E, step))
    if _workers() > 1 and len(starts) > 1:
        with ThreadPoolExecutor(_workers()) as ex:
            list(ex.map(work, starts))
    else:
        for s in starts:
            work(s)
    return out


def pair_block(pde: PdeOperator, pa: Panel, pb: Panel, degree: int, regime: str,
               quad: QuadConfig) -> np.ndarray:
    """``<V l_l e_b on pb, l_k e_a on pa>`` as array ``(K, D, K, D)``."""
    a = pde.log_coefficient()

    def log_part(u, v):
        return np.einsum("nk,nl,ab->nkalb", legendre_basis(u, degree),
                         legendre_basis(v, degree), a)

    smooth_part = None
    if pde.kind != "laplace":
        def smooth_part(u, v, z, r2):
            R = regular_part(pde, z, r2)
            return np.einsum("nk,nl,nab->nkalb", legendre_basis(u, degree),
                             legendre_basis(v, degree), R)

    return panel_pair_integral(pa, pb, log_part, smooth_part, regime=regime,
                               near_order=quad.near_order, far_order=quad.far_order,
                               threshold=quad.far_threshold)


def _singular_blocks(pde: PdeOperator, batch: _PanelBatch, ia, ib, regime: str,
                     shared, degree: int, n: int) -> np.ndarray:
    """Coincident or adjacent blocks for many pairs with one shared reference rule.

    Same quadrature as :func:`pair_block`, evaluated for all pairs at once;
    shape ``(P, K, D, K, D)``.
    """
    ia, ib = np.asarray(ia), np.asarray(ib)
    a = pde.log_coefficient()
    D, K = pde.D, degree + 1
    out = np.zeros((len(ia), K, D, K, D))
    rule = singular_rule(regime, shared, n)
    # one geometry evaluation for all components of the rule
    cuts = np.cumsum([0] + [len(c[0]) for c in rule])
    ua_all = np.concatenate([c[0] for c in rule])
    ub_all = np.concatenate([c[1] for c in rule])
    sa, inv_a = np.unique(ia, return_inverse=True)
    sb, inv_b = np.unique(ib, return_inverse=True)
    XA, JA = (v[inv_a] for v in batch.nodes(ua_all, sa))
    XB, JB = (v[inv_b] for v in batch.nodes(ub_all, sb))
    for (ua, ub, w, shift, log_only), lo, hi in zip(rule, cuts[:-1], cuts[1:]):
        ww = w * JA[:, lo:hi] * JB[:, lo:hi]
        Bu, Bv = legendre_basis(ua, degree), legendre_basis(ub, degree)
        if log_only:
            out += np.einsum("pn,nk,nl->pkl", ww, Bu, Bv)[:, :, None, :, None] * a[:, None]
            continue
        z = XA[:, lo:hi] - XB[:, lo:hi]
        r2 = z[..., 0] ** 2 + z[..., 1] ** 2
        lg = 0.5 * np.log(r2) - shift
        out += np.einsum("pn,nk,nl->pkl", ww * lg, Bu, Bv)[:, :, None, :, None] * a[:, None]
        if pde.kind != "laplace":
            R = regular_part(pde, z.reshape(-1, 2), r2.reshape(-1)).reshape(*r2.shape, D, D)
            out += np.einsum("pn,nk,nl,pnab->pkalb", ww, Bu, Bv, R, optimize=True)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite singular panel integral")
    return out


def _tensor_blocks(pde: PdeOperator, batch: _PanelBatch, ia, ib, degree: int,
                   n: int) -> np.ndarray:
    """Plain ``n x n`` tensor Gauss blocks for many pairs; shape ``(P, K, D, K, D)``."""
    x, w = gauss01(n)
    B = legendre_basis(x, degree)
    sa, inv_a = np.unique(ia, return_inverse=True)
    sb, inv_b = np.unique(ib, return_inverse=True)
    Xa, Ja = (v[inv_a] for v in batch.nodes(x, sa))
    Xb, Jb = (v[inv_b] for v in batch.nodes(x, sb))
    Wa, Wb = (w * Ja)[..., None] * B, (w * Jb)[..., None] * B          # (P, n, K)
    z = Xa[:, :, None] - Xb[:, None, :]
    r2 = z[..., 0] ** 2 + z[..., 1] ** 2
    a = pde.log_coefficient()
    out = np.einsum("pqk,pqr,prl->pkl", Wa, 0.5 * np.log(r2), Wb)[:, :, None, :, None] \
        * a[:, None]
    if pde.kind != "laplace":
        D = pde.D
        R = regular_part(pde, z.reshape(-1, 2), r2.reshape(-1)).reshape(*r2.shape, D, D)
        out = out + np.einsum("pqk,pqrab,prl->pkalb", Wa, R, Wb, optimize=True)
    return out


def assemble(space: AnsatzSpace, pde: PdeOperator, quad: QuadConfig | None = None) -> np.ndarray:
    """Dense Galerkin matrix ``M[i, j] = <V basis_j, basis_i>``."""
    quad = quad or QuadConfig()
    if space.D != pde.D:
        raise ValueError(f"space has {space.D} components but the operator needs {pde.D}")
    if len(space.mesh) < 3:
        raise ValueError("assembly needs at least three elements on a closed curve")
    panels = space.panels
    batch = _PanelBatch(panels)
    blocks = _far_blocks(space, pde, quad.far_order, batch)
    # singular pairs grouped by rule: coincident, and adjacent per shared corner
    groups: dict[tuple, list[tuple[int, int]]] = {}
    graded = SEPARATED_FACTOR * quad.far_threshold if quad.near_order > quad.far_order else 0.0
    for i, j, reg, sv in _near_pairs(panels, quad.far_threshold, batch, graded):
        groups.setdefault((reg, sv), []).append((i, j))
    for (reg, sv), pairs in sorted(groups.items(), key=lambda kv: str(kv[0])):
        ia, ib = (np.array(c) for c in zip(*pairs))
        if reg == "near":
            blks = [pair_block(pde, panels[i], panels[j], space.degree, reg, quad)
                    for i, j in pairs]
        elif reg == "separated":
            blks = _tensor_blocks(pde, batch, ia, ib, space.degree, quad.near_order)
        else:
            blks = _singular_blocks(pde, batch, ia, ib, reg, sv, space.degree,
                                    quad.near_order)
        for (i, j), blk in zip(pairs, blks):
            blocks[i, :, :, j] = blk
            if i != j:
                # symmetric kernels: G(z)^T = G(-z)
                blocks[j, :, :, i] = np.transpose(blk, (2, 3, 0, 1))
    n = space.dof_count
    return blocks.reshape(n, n)


def _assemble_pairwise(space: AnsatzSpace, pde: PdeOperator,
                       quad: QuadConfig | None = None) -> np.ndarray:
    """Reference assembly with one :func:`pair_block` call per singular pair."""
    quad = quad or QuadConfig()
    blocks = _far_blocks(space, pde, quad.far_order)
    panels = space.panels
    graded = SEPARATED_FACTOR * quad.far_threshold if quad.near_order > quad.far_order else 0.0
    fine = dataclasses.replace(quad, far_order=quad.near_order)
    for i, j, reg, _ in _near_pairs(panels, quad.far_threshold, graded=graded):
        if reg == "separated":
            blk = pair_block(pde, panels[i], panels[j], space.degree, "far", fine)
        else:
            blk = pair_block(pde, panels[i], panels[j], space.degree, reg, quad)
        blocks[i, :, :, j] = blk
        if i != j:
            blocks[j, :, :, i] = np.transpose(blk, (2, 3, 0, 1))
    n = space.dof_count
    return blocks.reshape(n, n)


def assemble_rhs(space: AnsatzSpace, f: Callable, order: int = 16) -> np.ndarray:
    """``b[i] = int conj(basis_i) f ds``; ``f`` maps points ``(n, 2)`` to ``(n,)`` or ``(n, D)``."""
    x, w = gauss01(order)
    B = legendre_basis(x, space.degree)
    out = np.zeros((len(space.mesh), space.degree + 1, space.D),
                   dtype=complex if _is_complex(f) else float)
    for e, pn in enumerate(space.panels):
        vals = np.asarray(f(pn.point(x))).reshape(len(x), -1)
        if vals.shape[1] != space.D:
            vals = np.broadcast_to(vals, (len(x), space.D))
        out[e] = np.einsum("n,nk,nc->kc", w * pn.jac(x), B, vals)
    return out.reshape(-1)


def _is_complex(f) -> bool:
    return bool(getattr(f, "is_complex", False))


def is_hermitian(M: np.ndarray, tol: float = 1e-10) -> bool:
    return float(np.abs(M - np.conj(M.T)).max()) <= tol * float(np.abs(M).max())


def solve(system: GalerkinSystem, spd: bool | None = None) -> np.ndarray:
    """Cholesky for Hermitian systems, LU otherwise. Stores and returns the solution."""
    M, b = system.matrix, system.rhs
    if spd is None:
        spd = system.pde.is_symmetric_real
    if not np.any(b):
        x = np.zeros(M.shape[0], dtype=np.result_type(M, b))
    elif spd:
        try:
            c = scipy.linalg.cho_factor(M, lower=False, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise EllipticityError(
                "Galerkin matrix is not positive definite; the single-layer "
                "operator is not elliptic for this geometry (rescale it)") from exc
        x = scipy.linalg.cho_solve(c, b)
    else:
        x = scipy.linalg.lu_solve(scipy.linalg.lu_factor(M), b)
    if np.any(b):
        res = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
        if not res < 1e-10:
            raise np.linalg.LinAlgError(f"linear solve residual {res:.2e} too large")
    system.solution = x
    return x


def energy_product(space: AnsatzSpace, a, b, matrix: np.ndarray) -> complex:
    """``a^H M b``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != (space.dof_count,) or b.shape != (space.dof_count,):
        raise ValueError("coefficient vectors do not match the space")
    return complex(np.conj(a) @ (matrix @ b))


def energy_norm(matrix: np.ndarray, x) -> float:
    val = float(np.real(np.conj(x) @ (matrix @ x)))
    return float(np.sqrt(max(val, 0.0)))


# --------------------------------------------------------------------------
# potentials at boundary points
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Targets:
    """Points on the boundary with their patch, parameter and unit tangent."""

    patch_id: np.ndarray
    t: np.ndarray
    points: np.ndarray
    tangents: np.ndarray

    def __len__(self) -> int:
        return len(self.t)


def element_targets(space: AnsatzSpace, u) -> Targets:
    """Targets at reference nodes ``u`` on every element (element-major order)."""
    u = np.asarray(u, dtype=float)
    pid, t, pts, tan = [], [], [], []
    for pn in space.panels:
        pid.append(np.full(len(u), pn.patch_id))
        t.append(pn.param(u))
        pts.append(pn.point(u))
        tan.append(pn.tangent(u))
    return Targets(np.concatenate(pid), np.concatenate(t), np.concatenate(pts),
                   np.concatenate(tan))


def locate(space: AnsatzSpace, patch_id: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Element position containing each (patch, parameter)."""
    mesh = space.mesh
    out = np.empty(len(t), dtype=int)
    for p in np.unique(patch_id):
        sel = np.nonzero(patch_id == p)[0]
        elems = np.nonzero(mesh.patch_ids == p)[0]
        t1 = mesh.t1[elems]
        k = np.searchsorted(t1, t[sel], side="left")
        out[sel] = elems[np.minimum(k, len(elems) - 1)]
    return out


def _far_kernel(pde, a_log, P, Ypts, tangents, derivative):
    """Kernel between targets ``P (m, 2)`` and sources ``Ypts (m, n, 2)`` or ``(n, 2)``."""
    from abem.operators import grad_from_diff

    z = P[:, None, :] - Ypts
    r2 = np.einsum("mnk,mnk->mn", z, z)
    r2[r2 == 0.0] = 1.0
    if a_log is not None:
        if derivative:
            Kv = a_log * np.einsum("mk,mnk->mn", tangents, z) / r2
        else:
            Kv = (0.5 * a_log) * np.log(r2)
        return Kv[..., None, None]
    if derivative and pde.kind == "lame":
        # t . grad_x of the Kelvin tensor, written out to avoid the rank-3 gradient
        a = float(pde.log_coefficient()[0, 0])
        cc = float(regular_part(pde, np.array([1.0, 0.0]), np.array(1.0))[0, 0])
        tz = np.einsum("mk,mnk->mn", tangents, z) / r2
        t = np.broadcast_to(tangents[:, None, :], z.shape)
        zz = z[..., :, None] * z[..., None, :] / r2[..., None, None]
        tzm = (t[..., :, None] * z[..., None, :] + z[..., :, None] * t[..., None, :]) \
            / r2[..., None, None]
        return (a * tz)[..., None, None] * np.eye(2) \
            + cc * (tzm - 2.0 * tz[..., None, None] * zz)
    if derivative:
        return np.einsum("mk,mjkab->mjab", tangents, grad_from_diff(pde, z, r2))
    return kernel_from_diff(pde, z, r2)


def _far_apply(pde, a_log, P, Yf, tangents, derivative, dens):
    """``sum_n K(P_m, Y_n) dens_n`` without forming the ``D x D`` kernel blocks."""
    z = P[:, None, :] - Yf[None]
    r2 = np.einsum("mnk,mnk->mn", z, z)
    r2[r2 == 0.0] = 1.0
    if a_log is not None:
        if derivative:
            Kv = a_log * np.einsum("mk,mnk->mn", tangents, z) / r2
        else:
            Kv = (0.5 * a_log) * np.log(r2)
        return (Kv @ dens[:, 0])[:, None]
    a = float(pde.log_coefficient()[0, 0])
    cc = float(regular_part(pde, np.array([1.0, 0.0]), np.array(1.0))[0, 0])
    zd = np.einsum("mnk,nk->mn", z, dens) / r2
    if not derivative:
        return (0.5 * a) * (np.log(r2) @ dens) + cc * np.einsum("mnk,mn->mk", z, zd)
    tz = np.einsum("mk,mnk->mn", tangents, z) / r2
    td = (tangents @ dens.T) / r2
    return (a * (tz @ dens) + cc * tangents * zd.sum(axis=1)[:, None]
            + cc * np.einsum("mnk,mn->mk", z, td - 2.0 * tz * zd))


def _potential_core(space, pde, targets, derivative, quad, coeffs):
    """Dense matrix ``(M, D, dofs)`` when ``coeffs`` is None, else values ``(M, D)``."""
    quad = quad or QuadConfig()
    n, nf = quad.potential_order, quad.far_order
    panels = space.panels
    E, K, D = len(panels), space.degree + 1, space.D
    M = len(targets)
    # far field: plain GL with the far order; near sources are replaced below
    x, w = gauss01(nf)
    B = legendre_basis(x, space.degree)
    batch = _PanelBatch(panels)
    Y, J = batch.nodes(x)
    Wb = (w * J)[:, :, None] * B[None]
    Yf = Y.reshape(-1, 2)
    c, rad, _ = _element_bounds(batch)
    h = np.array([pn.length for pn in panels])
    host = locate(space, targets.patch_id, targets.t)
    a_log = float(pde.log_coefficient()[0, 0]) if pde.kind == "laplace" else None
    tan = targets.tangents
    C = None if coeffs is None else space.coefficients(coeffs)
    out = np.zeros((M, D, E, K, D)) if C is None else np.zeros((M, D), dtype=C.dtype)
    step = max(1, int(2_000_000 // (E * nf * D * D)))
    for s in range(0, M, step):
        P = targets.points[s:s + step]
        m = len(P)
        if C is None:
            Kv = _far_kernel(pde, a_log, P, Yf[None], tan[s:s + step], derivative)
            Kv = Kv.reshape(m, E, nf, D, D)
            # (e, m, a, b, q) @ (e, q, k) -> (e, m, a, b, k)
            prod = np.matmul(
                np.ascontiguousarray(Kv.transpose(1, 0, 3, 4, 2)).reshape(E, -1, nf),
                Wb).reshape(E, m, D, D, K)
            out[s:s + step] = prod.transpose(1, 2, 0, 4, 3)
        else:
            dens = np.einsum("eqk,ekb->eqb", Wb, C).reshape(-1, D)
            out[s:s + step] = _far_apply(pde, a_log, P, Yf, tan[s:s + step], derivative, dens)
    # near sources: host panel (singular) and panels closer than their length
    T = tan if derivative else None
    near_t, near_e = [], []
    for s in range(0, M, 2048):
        P = targets.points[s:s + 2048]
        d = np.linalg.norm(P[:, None, :] - c[None], axis=-1) - rad[None]
        mm, ee = np.nonzero(d < h[None])
        near_t.append(mm + s)
        near_e.append(ee)
    near_t = np.concatenate(near_t)
    near_e = np.concatenate(near_e)
    if C is not None:
        # host pairs are in the near list too: remove their far estimates
        allt = np.concatenate([near_t, np.arange(M)])
        alle = np.concatenate([near_e, host])
        uniq = np.unique(allt * E + alle)
        ut, ue = uniq // E, uniq % E
        Kv = _far_kernel(pde, a_log, targets.points[ut], Y[ue], tan[ut], derivative)
        dens = np.einsum("pqk,pkb->pqb", Wb[ue], C[ue])
        np.add.at(out, ut, -np.einsum("pqab,pqb->pa", Kv, dens))
    keep = near_e != host[near_t]
    near_t, near_e = near_t[keep], near_e[keep]
    order = np.argsort(near_e, kind="stable")
    near_t, near_e = near_t[order], near_e[order]
    bounds = np.searchsorted(near_e, np.arange(E + 1))
    horder = np.argsort(host, kind="stable")
    hbounds = np.searchsorted(host[horder], np.arange(E + 1))
    for e in range(E):
        pn = panels[e]
        for ms, on_panel in ((near_t[bounds[e]:bounds[e + 1]], False),
                             (horder[hbounds[e]:hbounds[e + 1]], True)):
            if not len(ms):
                continue
            U0 = (targets.t[ms] - pn.t0) / pn.dt if on_panel else None
            W = batch_point_weights(pde, pn, targets.points[ms], space.degree, U0=U0,
                                    T=None if T is None else T[ms],
                                    derivative=derivative, order=n)
            if C is None:
                out[ms, :, e] = np.transpose(W, (0, 2, 1, 3))
            else:
                out[ms] += np.einsum("mkab,kb->ma", W, C[e])
    if C is None:
        return out.reshape(M, D, E * K * D)
    return out


def potential_matrix(space: AnsatzSpace, pde: PdeOperator, targets: Targets,
                     derivative: bool = False, quad: QuadConfig | None = None) -> np.ndarray:
    """Linear map from coefficients to ``V Psi`` (or ``d/ds V Psi``) at the targets.

    Returns an array ``(len(targets), D, dof_count)``.
    """
    return _potential_core(space, pde, targets, derivative, quad, None)


def potential(space: AnsatzSpace, pde: PdeOperator, coeffs, targets: Targets,
              derivative: bool = False, quad: QuadConfig | None = None) -> np.ndarray:
    """``V Psi`` (or its tangential derivative) at the targets; shape ``(M, D)``.

    Does not form the dense matrix.
    """
    return _potential_core(space, pde, targets, derivative, quad, np.asarray(coeffs))


def eval_residual_and_tangential_derivative(system: GalerkinSystem, element: int, nodes,
                                            problem=None) -> tuple[np.ndarray, np.ndarray]:
    """``(f - V Phi, d/ds (f - V Phi))`` at reference ``nodes`` of element id ``element``."""
    problem = problem or system.problem
    if problem is None:
        raise ValueError("system carries no problem data")
    if system.solution is None:
        raise ValueError("system has no solution yet")
    space = system.space
    e = space.mesh.index(element)
    pn = space.panels[e]
    u = np.asarray(nodes, dtype=float)
    tg = Targets(np.full(len(u), pn.patch_id), pn.param(u), pn.point(u), pn.tangent(u))
    return problem.residual(system, tg)


# --------------------------------------------------------------------------
# binary dump: header (N, D) as little-endian int64, then row-major complex128
# matrix entries followed by the right-hand side
# --------------------------------------------------------------------------

def dump_system(system: GalerkinSystem, path) -> None:
    N = system.matrix.shape[0]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qq", N, system.space.D))
        fh.write(np.ascontiguousarray(system.matrix, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(system.rhs, dtype="<c16").tobytes())


def load_system_dump(path) -> tuple[np.ndarray, np.ndarray, int]:
    with open(path, "rb") as fh:
        N, D = struct.unpack("<qq", fh.read(16))
        M = np.frombuffer(fh.read(16 * N * N), dtype="<c16").reshape(N, N)
        b = np.frombuffer(fh.read(16 * N), dtype="<c16")
    return M, b, D
