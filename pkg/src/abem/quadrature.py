"""Quadrature rules and singular integration on boundary panels.

A :class:`Panel` is one element ``gamma([t0, t1])`` described in a reference
coordinate ``u`` in ``[0, 1]``. All panel integrals are taken with respect to
arc length.

Log-singular integrands are passed in split form ``F log|x - y| + H`` with
``F`` and ``H`` smooth. Coincident and adjacent panel pairs are mapped by
Duffy transforms so the logarithm separates into ``log`` of a single
reference variable (integrated with a Gauss rule for the weight ``-log x``)
plus a smooth remainder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

DEFAULT_FAR_ORDER = 8
DEFAULT_NEAR_ORDER = 16
DEFAULT_FAR_THRESHOLD = 0.5
MAX_SUBDIVISION_DEPTH = 60


class QuadratureError(ArithmeticError):
    """Non-finite values produced during integration."""


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule on [-1, 1], exact for degree <= 2n - 1."""
    if int(n) != n or not 1 <= n <= 64:
        raise ValueError("Gauss-Legendre order must be an integer in [1, 64]")
    x, w = _gauss(int(n))
    return QuadratureRule(x, w, "gauss-legendre")


@lru_cache(maxsize=None)
def gauss01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1]."""
    x, w = _gauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _gauss_log(n: int) -> tuple[np.ndarray, np.ndarray]:
    import mpmath

    with mpmath.workdps(40 + 3 * n):
        mom = [mpmath.mpf(1) / (k + 1) ** 2 for k in range(2 * n)]
        alpha = [mpmath.mpf(0)] * n
        beta = [mpmath.mpf(0)] * n
        sig_prev = [mpmath.mpf(0)] * (2 * n)
        sig = list(mom)
        alpha[0] = mom[1] / mom[0]
        beta[0] = mom[0]
        for k in range(1, n):
            new = [mpmath.mpf(0)] * (2 * n)
            for l in range(k, 2 * n - k):
                new[l] = sig[l + 1] - alpha[k - 1] * sig[l] - beta[k - 1] * sig_prev[l]
            alpha[k] = new[k + 1] / new[k] - sig[k] / sig[k - 1]
            beta[k] = new[k] / sig[k - 1]
            sig_prev, sig = sig, new
        J = mpmath.zeros(n, n)
        for k in range(n):
            J[k, k] = alpha[k]
            if k + 1 < n:
                J[k, k + 1] = J[k + 1, k] = mpmath.sqrt(beta[k + 1])
        evals, evecs = mpmath.eigsy(J)
        nodes = np.array([float(evals[i]) for i in range(n)])
        weights = np.array([float(beta[0] * evecs[0, i] ** 2) for i in range(n)])
    order = np.argsort(nodes)
    x, w = nodes[order], weights[order]
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_log_rule(n: int) -> QuadratureRule:
    """Gauss rule on [0, 1] for the weight ``-log x``.

    ``sum(w * g(x))`` approximates ``-int_0^1 g(x) log(x) dx`` exactly for
    polynomials of degree <= 2n - 1.
    """
    if int(n) != n or not 1 <= n <= 40:
        raise ValueError("log-weighted Gauss order must be an integer in [1, 40]")
    x, w = _gauss_log(int(n))
    return QuadratureRule(x, w, "gauss-log")


def duffy_rule(n: int) -> QuadratureRule:
    """Tensor Gauss rule on the triangle ``0 < v < u < 1`` via ``v = u (1 - y)``."""
    x, w = gauss01(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) * X
    nodes = np.stack([X.ravel(), (X * (1 - Y)).ravel()], axis=-1)
    return QuadratureRule(nodes, W.ravel(), "duffy-tensor")


@dataclass(frozen=True)
class Panel:
    """Element ``gamma([t0, t1])`` of a curve patch, reference coordinate u in [0, 1]."""

    patch: object
    t0: float
    t1: float
    patch_id: int = -1

    @property
    def dt(self) -> float:
        return self.t1 - self.t0

    def param(self, u):
        return self.t0 + self.dt * np.asarray(u, dtype=float)

    def point(self, u):
        return self.patch.point(np.clip(self.param(u), self.t0, self.t1))

    def dpoint(self, u):
        """``d gamma / du`` (reference derivative)."""
        return self.dt * self.patch.derivative(self.param(u))

    def jac(self, u):
        return np.linalg.norm(self.dpoint(u), axis=-1)

    def tangent(self, u):
        d = self.dpoint(u)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    @property
    def length(self) -> float:
        return self.patch.arc_measure(self.t0, self.t1)

    def endpoints(self) -> np.ndarray:
        return self.point(np.array([0.0, 1.0]))

    def sub(self, u0: float, u1: float) -> "Panel":
        return Panel(self.patch, self.t0 + self.dt * u0, self.t0 + self.dt * u1, self.patch_id)


def panel_distance(pa: Panel, pb: Panel, m: int = 9) -> float:
    u = np.linspace(0.0, 1.0, m)
    xa, xb = pa.point(u), pb.point(u)
    return float(np.min(np.linalg.norm(xa[:, None] - xb[None], axis=-1)))


def point_panel_distance(x: np.ndarray, p: Panel, m: int = 9) -> float:
    u = np.linspace(0.0, 1.0, m)
    return float(np.min(np.linalg.norm(p.point(u) - x, axis=-1)))


def shared_vertex(pa: Panel, pb: Panel, tol: float = 1e-12) -> tuple[int, int] | None:
    """Reference coordinates (0 or 1) of a common endpoint, if any."""
    ea, eb = pa.endpoints(), pb.endpoints()
    for i in (0, 1):
        for j in (0, 1):
            if np.linalg.norm(ea[i] - eb[j]) <= tol * max(1.0, np.abs(ea[i]).max()):
                return i, j
    return None


def classify_pair(pa: Panel, pb: Panel, same: bool = False,
                  threshold: float = DEFAULT_FAR_THRESHOLD) -> str:
    """``coincident``, ``adjacent``, ``far`` or ``near`` (close but not touching)."""
    if same:
        return "coincident"
    if shared_vertex(pa, pb) is not None:
        return "adjacent"
    if panel_distance(pa, pb) >= threshold * max(pa.length, pb.length):
        return "far"
    return "near"


def _check(val):
    if not np.all(np.isfinite(val)):
        raise QuadratureError("non-finite value in panel integral")
    return val


def _weighted_sum(w, vals):
    return np.tensordot(w, vals, axes=(0, 0))


def _evaluate(pa, pb, ua, ub, w, log_part, smooth_part, log_shift=None):
    """sum ``w * J_a J_b * (F * (log|z| - log_shift) + H)``; log_shift may be None."""
    xa, xb = pa.point(ua), pb.point(ub)
    z = xa - xb
    r2 = np.sum(z * z, axis=-1)
    ww = w * pa.jac(ua) * pb.jac(ub)
    total = 0.0
    if log_part is not None:
        lg = 0.5 * np.log(r2)
        if log_shift is not None:
            lg = lg - log_shift
        F = log_part(ua, ub)
        total = total + _weighted_sum(ww * lg, F)
    if smooth_part is not None:
        total = total + _weighted_sum(ww, smooth_part(ua, ub, z, r2))
    return total


def _log_only(pa, pb, ua, ub, w, log_part):
    ww = w * pa.jac(ua) * pb.jac(ub)
    return _weighted_sum(ww, log_part(ua, ub))


def singular_rule(regime: str, shared: tuple[int, int] | None, n: int) -> list[tuple]:
    """Reference nodes for a coincident or adjacent panel pair.

    Returns components ``(ua, ub, w, log_shift, log_only)``. A component with
    ``log_only`` set integrates ``F`` against ``w`` (the logarithm is carried
    by the weights); otherwise it integrates ``F (log|z| - log_shift) + H``.
    Coincident pairs use the Duffy split of the square along its diagonal,
    adjacent pairs the split at the shared corner; in both cases the
    singular coordinate gets the log-weighted Gauss rule.
    """
    gx, gw = gauss01(n)
    lr = gauss_log_rule(n)
    lx, lw = lr.nodes, lr.weights
    out = []
    if regime == "coincident":
        for swap in (False, True):
            def mapped(x, y):
                u, v = x, x * (1.0 - y)
                return (v, u) if swap else (u, v)
            X, Y = (g.ravel() for g in np.meshgrid(gx, gx, indexing="ij"))
            out.append((*mapped(X, Y), np.outer(gw, gw).ravel() * X, np.log(X * Y), False))
            X, Y = (g.ravel() for g in np.meshgrid(lx, gx, indexing="ij"))
            out.append((*mapped(X, Y), -np.outer(lw, gw).ravel() * X, None, True))
            X, Y = (g.ravel() for g in np.meshgrid(gx, lx, indexing="ij"))
            out.append((*mapped(X, Y), -np.outer(gw, lw).ravel() * X, None, True))
        return out
    if regime != "adjacent" or shared is None:
        raise ValueError("singular_rule needs a coincident or adjacent pair")
    ea, eb = shared
    for swap in (False, True):
        def mapped(x, y):
            s, t = x, x * y
            if swap:
                s, t = t, s
            return (s if ea == 0 else 1.0 - s), (t if eb == 0 else 1.0 - t)
        X, Y = (g.ravel() for g in np.meshgrid(gx, gx, indexing="ij"))
        out.append((*mapped(X, Y), np.outer(gw, gw).ravel() * X, np.log(X), False))
        X, Y = (g.ravel() for g in np.meshgrid(lx, gx, indexing="ij"))
        out.append((*mapped(X, Y), -np.outer(lw, gw).ravel() * X, None, True))
    return out


def _singular(pa, pb, regime, shared, log_part, smooth_part, n):
    total = 0.0
    for ua, ub, w, shift, log_only in singular_rule(regime, shared, n):
        if log_only:
            if log_part is not None:
                total = total + _log_only(pa, pb, ua, ub, w, log_part)
        else:
            total = total + _evaluate(pa, pb, ua, ub, w, log_part, smooth_part,
                                      log_shift=shift if log_part is not None else None)
    return total


def _coincident(pa, log_part, smooth_part, n):
    return _singular(pa, pa, "coincident", None, log_part, smooth_part, n)


def _adjacent(pa, pb, shared, log_part, smooth_part, n):
    return _singular(pa, pb, "adjacent", shared, log_part, smooth_part, n)


def _tensor(pa, pb, log_part, smooth_part, n, a0=0.0, a1=1.0, b0=0.0, b1=1.0):
    gx, gw = gauss01(n)
    ua = a0 + (a1 - a0) * gx
    ub = b0 + (b1 - b0) * gx
    UA, UB = np.meshgrid(ua, ub, indexing="ij")
    W = np.outer(gw, gw).ravel() * (a1 - a0) * (b1 - b0)
    return _evaluate(pa, pb, UA.ravel(), UB.ravel(), W, log_part, smooth_part)


def _near(pa, pb, log_part, smooth_part, n, threshold):
    total = 0.0
    stack = [(0.0, 1.0, 0.0, 1.0, 0)]
    while stack:
        a0, a1, b0, b1, depth = stack.pop()
        sa, sb = pa.sub(a0, a1), pb.sub(b0, b1)
        la, lb = sa.length, sb.length
        if depth >= MAX_SUBDIVISION_DEPTH or panel_distance(sa, sb) >= threshold * max(la, lb):
            total = total + _tensor(pa, pb, log_part, smooth_part, n, a0, a1, b0, b1)
        elif la >= lb:
            m = 0.5 * (a0 + a1)
            stack += [(a0, m, b0, b1, depth + 1), (m, a1, b0, b1, depth + 1)]
        else:
            m = 0.5 * (b0 + b1)
            stack += [(a0, a1, b0, m, depth + 1), (a0, a1, m, b1, depth + 1)]
    return total


def panel_pair_integral(pa: Panel, pb: Panel,
                        log_part: Optional[Callable] = None,
                        smooth_part: Optional[Callable] = None,
                        regime: Optional[str] = None,
                        near_order: int = DEFAULT_NEAR_ORDER,
                        far_order: int = DEFAULT_FAR_ORDER,
                        threshold: float = DEFAULT_FAR_THRESHOLD):
    """``int_{pa} int_{pb} F(u, v) log|x - y| + H(u, v) ds_y ds_x``.

    ``log_part(u, v)`` returns F with the node axis first; ``smooth_part(u, v,
    z, r2)`` returns H and also receives ``z = x - y`` and ``|z|^2``. ``regime``
    is detected from the geometry unless given (``coincident`` requires
    ``pa == pb``).
    """
    if regime is None:
        regime = classify_pair(pa, pb, same=(pa == pb), threshold=threshold)
    if regime == "coincident":
        out = _coincident(pa, log_part, smooth_part, near_order)
    elif regime == "adjacent":
        shared = shared_vertex(pa, pb)
        if shared is None:
            raise ValueError("adjacent regime requires a shared endpoint")
        out = _adjacent(pa, pb, shared, log_part, smooth_part, near_order)
    elif regime == "far":
        out = _tensor(pa, pb, log_part, smooth_part, far_order)
    elif regime == "near":
        out = _near(pa, pb, log_part, smooth_part, near_order, threshold)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return _check(out)


# --------------------------------------------------------------------------
# point evaluation: single-layer potential and its tangential derivative
# --------------------------------------------------------------------------

def legendre_basis(u, degree: int) -> np.ndarray:
    """Orthonormal Legendre polynomials on [0, 1]; shape ``(len(u), degree + 1)``."""
    u = np.asarray(u, dtype=float)
    V = np.polynomial.legendre.legvander(2.0 * u - 1.0, degree)
    return V * np.sqrt(2.0 * np.arange(degree + 1) + 1.0)


def _batch_kernel(pde, X, Y, T, derivative):
    """Kernel (or ``t . grad_x``) for targets ``X (M, 2)`` and sources ``Y (M, n, 2)``."""
    from abem.operators import grad_from_diff, kernel_from_diff

    z = X[:, None, :] - Y
    r2 = np.sum(z * z, axis=-1)
    if derivative:
        return np.einsum("mk,mnkab->mnab", T, grad_from_diff(pde, z, r2))
    return kernel_from_diff(pde, z, r2)


_DIST_SAMPLES = np.linspace(0.0, 1.0, 9)


def _batch_distance(X: np.ndarray, sub: Panel) -> float:
    pts = sub.point(_DIST_SAMPLES)
    return float(np.sqrt(np.min(np.sum((X[:, None, :] - pts[None]) ** 2, axis=-1))))


def _subdivision_nodes(X, ps: Panel, n: int):
    """Composite GL nodes on ``ps``, split until every subpanel is farther
    from all targets than its own length."""
    gx, gw = gauss01(n)
    nodes, weights = [], []
    stack = [(0.0, 1.0, 0)]
    while stack:
        a, b, depth = stack.pop()
        sub = ps.sub(a, b)
        if depth >= MAX_SUBDIVISION_DEPTH or _batch_distance(X, sub) >= sub.length:
            nodes.append(a + (b - a) * gx)
            weights.append((b - a) * gw)
        else:
            m = 0.5 * (a + b)
            stack += [(a, m, depth + 1), (m, b, depth + 1)]
    return np.concatenate(nodes), np.concatenate(weights)


def _batch_off_panel(pde, ps, X, T, degree, derivative, n):
    v, w = _subdivision_nodes(X, ps, n)
    K = _batch_kernel(pde, X, np.broadcast_to(ps.point(v), (len(X),) + (len(v), 2)), T,
                      derivative)
    B = legendre_basis(v, degree)
    return np.einsum("n,nk,mnab->mkab", w * ps.jac(v), B, K)


def _batch_self_value(pde, ps, U0, degree, n):
    """int G(x - y(v)) l_k(v) J dv for x = y(u0); log handled per half-panel."""
    from abem.operators import regular_part

    a = pde.log_coefficient()
    M = len(U0)
    X = ps.point(U0)
    gx, gw = gauss01(n)
    lr = gauss_log_rule(n)
    K1 = degree + 1
    total = np.zeros((M, K1) + a.shape)
    for sign, L in ((1.0, 1.0 - U0), (-1.0, U0)):
        # smooth part on GL nodes: a log(|z| / xi) + R(z), xi = L * s
        v = U0[:, None] + sign * L[:, None] * gx
        y = ps.point(v.ravel()).reshape(M, n, 2)
        z = X[:, None, :] - y
        r2 = np.sum(z * z, axis=-1)
        lg = 0.5 * np.log(r2) - np.log(L[:, None] * gx)
        Kv = a * lg[..., None, None]
        R = regular_part(pde, z, r2)
        if R is not None:
            Kv = Kv + R
        J = ps.jac(v.ravel()).reshape(M, n)
        B = legendre_basis(v.ravel(), degree).reshape(M, n, K1)
        total += L[:, None, None, None] * np.einsum("mn,mnk,mnab->mkab", gw * J, B, Kv)
        # a log(xi) = a (log L + log s): log L on GL, log s on the log-weighted rule
        mass = np.einsum("mn,mnk->mk", gw * J, B)
        total += (L * np.log(L))[:, None, None, None] * mass[..., None, None] * a
        v = U0[:, None] + sign * L[:, None] * lr.nodes
        J = ps.jac(v.ravel()).reshape(M, n)
        B = legendre_basis(v.ravel(), degree).reshape(M, n, K1)
        mass = np.einsum("mn,mnk->mk", lr.weights * J, B)
        total -= L[:, None, None, None] * mass[..., None, None] * a
    return total


def _batch_self_derivative(pde, ps, U0, T, degree, n):
    """PV of int t.grad_x G(x - y(v)) l_k(v) J dv for x = y(u0).

    The Cauchy part ``a (t . tau) l_k(u0) / (u0 - v)`` is subtracted on both
    halves and restored analytically.
    """
    a = pde.log_coefficient()
    M = len(U0)
    X = ps.point(U0)
    gx, gw = gauss01(n)
    K1 = degree + 1
    align = np.einsum("mk,mk->m", T, ps.tangent(U0))
    B0 = legendre_basis(U0, degree) * align[:, None]
    total = np.einsum("mk,ab->mkab", B0, a) * np.log(U0 / (1.0 - U0))[:, None, None, None]
    for sign, L in ((1.0, 1.0 - U0), (-1.0, U0)):
        v = U0[:, None] + sign * L[:, None] * gx
        y = ps.point(v.ravel()).reshape(M, n, 2)
        Kv = _batch_kernel(pde, X, y, T, True)
        J = ps.jac(v.ravel()).reshape(M, n)
        B = legendre_basis(v.ravel(), degree).reshape(M, n, K1)
        vals = np.einsum("mn,mnk,mnab->mnkab", J, B, Kv)
        vals -= np.einsum("mn,mk,ab->mnkab", 1.0 / (U0[:, None] - v), B0, a)
        total += L[:, None, None, None] * np.einsum("n,mnkab->mkab", gw, vals)
    return total


def batch_point_weights(pde, ps: Panel, X, degree: int, *, U0=None, T=None,
                        derivative: bool = False,
                        order: int = DEFAULT_NEAR_ORDER) -> np.ndarray:
    """``W[m, k, a, b] = int_ps K_ab(x_m, y) l_k(y) ds_y`` for many targets.

    With ``U0`` all targets lie on ``ps`` at those reference coordinates and
    the singular rules are used; otherwise near-singular cases are handled by
    subdividing the panel towards the targets. ``T`` holds the unit
    directions of the tangential derivative.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if derivative:
        if T is None:
            if U0 is None:
                raise ValueError("derivative off the panel needs directions T")
            T = ps.tangent(np.asarray(U0, float))
        T = np.atleast_2d(np.asarray(T, dtype=float))
    if U0 is not None:
        # targets on panel endpoints are nudged inside (documented jitter)
        U0 = np.clip(np.atleast_1d(np.asarray(U0, dtype=float)), 1e-12, 1.0 - 1e-12)
        if derivative:
            out = _batch_self_derivative(pde, ps, U0, T, degree, order)
        else:
            out = _batch_self_value(pde, ps, U0, degree, order)
    else:
        out = _batch_off_panel(pde, ps, X, T, degree, derivative, order)
    return _check(out)


def point_source_weights(pde, ps: Panel, x, degree: int, *, u0: Optional[float] = None,
                         tdir=None, derivative: bool = False,
                         order: int = DEFAULT_NEAR_ORDER) -> np.ndarray:
    """``W[k, a, b] = int_ps K_ab(x, y) l_k(y) ds_y`` for a single target ``x``.

    ``K`` is the fundamental solution, or ``t . grad_x G`` (principal value on
    the host panel) when ``derivative`` is set. Pass ``u0`` when ``x`` lies on
    ``ps``.
    """
    X = np.asarray(x, dtype=float)[None]
    T = None if tdir is None else np.asarray(tdir, dtype=float)[None]
    U0 = None if u0 is None else np.array([u0], dtype=float)
    return batch_point_weights(pde, ps, X, degree, U0=U0, T=T, derivative=derivative,
                               order=order)[0]


def pv_tangential_potential(pde, ps: Panel, coeffs, x, t_dir, *, u0: Optional[float] = None,
                            order: int = DEFAULT_NEAR_ORDER) -> np.ndarray:
    """Tangential derivative ``t . grad (V phi)(x)`` of one panel's contribution.

    ``coeffs`` has shape ``(p + 1, D)`` (Legendre coefficients per component).
    """
    c = np.asarray(coeffs)
    if c.ndim == 1:
        c = c[:, None]
    W = point_source_weights(pde, ps, x, c.shape[0] - 1, u0=u0, tdir=t_dir,
                             derivative=True, order=order)
    return np.einsum("kab,kb->a", W, c)


# --------------------------------------------------------------------------
# Sobolev-Slobodeckij double integrals (sigma = 1/2, d = 2)
# --------------------------------------------------------------------------

def _sq_diff(va, vb):
    d = np.asarray(va) - np.asarray(vb)
    d = d.reshape(d.shape[0], -1)
    return np.sum(np.abs(d) ** 2, axis=-1)


def slobodeckij_self(v: Callable, p: Panel, n: int = DEFAULT_NEAR_ORDER) -> float:
    """``int_T int_T |v(x) - v(y)|^2 / |x - y|^2``; the integrand is bounded."""
    rule = duffy_rule(n)
    u, w = rule.nodes[:, 0], rule.nodes[:, 1]
    x, y = p.point(u), p.point(w)
    r2 = np.sum((x - y) ** 2, axis=-1)
    val = _sq_diff(v(p, u), v(p, w)) / r2
    return float(2.0 * np.sum(rule.weights * p.jac(u) * p.jac(w) * val))


def slobodeckij_cross(v: Callable, pa: Panel, pb: Panel, n: int = DEFAULT_NEAR_ORDER) -> float:
    """``int_Ta int_Tb |v(x) - v(y)|^2 / |x - y|^2`` for distinct panels."""
    shared = shared_vertex(pa, pb)
    gx, gw = gauss01(n)
    if shared is None:
        U, W = np.meshgrid(gx, gx, indexing="ij")
        parts = [(U.ravel(), W.ravel(), np.outer(gw, gw).ravel())]
    else:
        ea, eb = shared
        X, Y = np.meshgrid(gx, gx, indexing="ij")
        X, Y = X.ravel(), Y.ravel()
        Wt = np.outer(gw, gw).ravel() * X
        parts = []
        for s, t in ((X, X * Y), (X * Y, X)):
            parts.append((s if ea == 0 else 1.0 - s, t if eb == 0 else 1.0 - t, Wt))
    total = 0.0
    for u, w, wt in parts:
        x, y = pa.point(u), pb.point(w)
        r2 = np.sum((x - y) ** 2, axis=-1)
        total += float(np.sum(wt * pa.jac(u) * pb.jac(w) * _sq_diff(v(pa, u), v(pb, w)) / r2))
    return total


def slobodeckij_pair(v: Callable, pa: Panel, pb: Panel, n: int = DEFAULT_NEAR_ORDER) -> float:
    """Squared ``H^{1/2}`` seminorm of ``v`` on the union of two panels.

    ``v(panel, u)`` evaluates the function at reference coordinates of a panel.
    """
    if pa == pb:
        return slobodeckij_self(v, pa, n)
    return (slobodeckij_self(v, pa, n) + 2.0 * slobodeckij_cross(v, pa, pb, n)
            + slobodeckij_self(v, pb, n))
