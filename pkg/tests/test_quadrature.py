from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abem.galerkin import QuadConfig, pair_block
from abem.geometry import CircularArc, LineSegment
from abem.operators import kernel_grad_x, laplace, lame
from abem.quadrature import (
    Panel,
    classify_pair,
    duffy_rule,
    gauss_log_rule,
    gauss_rule,
    panel_pair_integral,
    point_source_weights,
    pv_tangential_potential,
    slobodeckij_cross,
    slobodeckij_pair,
)

from oracles import adaptive_integrate, laplace_log, log_self_integral

UNIT = Panel(LineSegment((0.0, 0.0), (1.0, 0.0)), 0.0, 1.0)
Q = QuadConfig()


def _lap_pair(pa, pb, regime=None, n=16):
    a = -1 / (2 * math.pi)
    return float(panel_pair_integral(pa, pb, lambda u, v: np.full(len(u), a), regime=regime,
                                     near_order=n))


def _oracle_pair(pa, pb, tol=1e-11):
    """Nested adaptive integration of the Laplace kernel over two panels."""
    def inner(u):
        x = pa.point(u)
        g = lambda v: (-np.log(np.linalg.norm(x - pb.point(v), axis=-1)) / (2 * math.pi)
                       * pb.jac(v))
        # the log peak sits at v = u on a coincident pair and at the shared
        # endpoint of an adjacent pair (always a subinterval end)
        bps = (u,) if pa == pb else ()
        return adaptive_integrate(g, 0.0, 1.0, tol, breakpoints=bps, vectorized=True) \
            * pa.jac(u)
    return float(adaptive_integrate(inner, 0.0, 1.0, tol * 10))


def test_gauss_rule_examples():
    r = gauss_rule(1)
    np.testing.assert_allclose(r.nodes, [0.0], atol=1e-16)
    np.testing.assert_allclose(r.weights, [2.0])
    r = gauss_rule(2)
    np.testing.assert_allclose(r.nodes, [-1 / math.sqrt(3), 1 / math.sqrt(3)], rtol=1e-15)
    np.testing.assert_allclose(r.weights, [1.0, 1.0], rtol=1e-15)
    r = gauss_rule(3)
    assert float(np.sum(r.weights * r.nodes ** 4)) == pytest.approx(0.4, abs=1e-15)
    for n in (0, 65, 2.5):
        with pytest.raises(ValueError):
            gauss_rule(n)


@pytest.mark.parametrize("n", [1, 4, 10, 20])
def test_rules_sum_and_exactness(n):
    r = gauss_rule(n)
    assert len(r) == n and abs(r.weights.sum() - 2.0) < 1e-14 and np.all(r.weights > 0)
    g = gauss_log_rule(n)
    assert np.all((g.nodes > 0) & (g.nodes < 1)) and np.all(g.weights > 0)
    for k in range(2 * n):
        # -int_0^1 x^k log x dx = 1 / (k + 1)^2
        assert abs(np.sum(g.weights * g.nodes ** k) - 1 / (k + 1) ** 2) < 1e-14
    d = duffy_rule(n)
    assert abs(d.weights.sum() - 0.5) < 1e-14


def test_coincident_closed_form():
    blk = pair_block(laplace(), UNIT, UNIT, 0, "coincident", Q)
    assert blk.shape == (1, 1, 1, 1)
    assert abs(blk[0, 0, 0, 0] - 3 / (4 * math.pi)) < 1e-10
    assert 3 / (4 * math.pi) == pytest.approx(0.2387324, abs=1e-7)
    for h in (0.3, 0.05):
        p = Panel(LineSegment((0.1, 0.2), (0.1 + h, 0.2)), 0.0, 1.0)
        assert abs(_lap_pair(p, p, "coincident") - log_self_integral(h)) < 1e-12


def test_single_panel_solve():
    # 1x1 system on one straight unit panel; rhs = int (V 1) by brute force
    M = pair_block(laplace(), UNIT, UNIT, 0, "coincident", Q)[0, 0, 0, 0]
    V1 = lambda s: adaptive_integrate(lambda t: -np.log(np.abs(s - t)) / (2 * math.pi),
                                      0.0, 1.0, 1e-14, breakpoints=(s,), vectorized=True)
    b = adaptive_integrate(V1, 0.0, 1.0, 1e-12)
    assert abs(b / M - 1.0) < 1e-8


def test_far_pair_and_symmetry():
    far = Panel(LineSegment((100.0, 0.0), (101.0, 0.0)), 0.0, 1.0)
    assert classify_pair(UNIT, far) == "far"
    val = _lap_pair(UNIT, far)
    ref = -math.log(100.0) / (2 * math.pi)
    # the midpoint value is accurate to the second-order term 1 / (12 d^2)
    assert abs(val / ref - 1) < 2e-6
    second = -(math.log(100.0) - 1 / (12 * 100.0 ** 2)) / (2 * math.pi)
    assert abs(val / second - 1) < 1e-9
    assert abs(val - _oracle_pair(UNIT, far)) < 1e-12
    arc = Panel(CircularArc((0.0, 0.0), 0.5, (0.0, 2 * math.pi)), 0.3, 1.1)
    seg = Panel(LineSegment((0.5, -0.2), (0.5, 0.3)), 0.0, 1.0)
    for pa, pb in ((arc, seg), (UNIT, far), (seg, UNIT)):
        assert abs(_lap_pair(pa, pb) - _lap_pair(pb, pa)) < 1e-12


def _corpus():
    rng = np.random.default_rng(11)
    circ = CircularArc((0.0, 0.0), 0.5, (0.0, 2 * math.pi))
    cases = []
    while len(cases) < 50:
        kind = len(cases) % 5
        if kind == 0:      # coincident segment
            a = rng.uniform(-0.3, 0.3, 2)
            b = a + rng.uniform(0.02, 0.3) * np.array([math.cos(t := rng.uniform(0, 6.3)),
                                                        math.sin(t)])
            p = Panel(LineSegment(tuple(a), tuple(b)), 0.0, 1.0)
            cases.append((p, p))
        elif kind == 1:    # coincident arc
            t0 = rng.uniform(0, 5)
            p = Panel(circ, t0, t0 + rng.uniform(0.05, 1.0))
            cases.append((p, p))
        elif kind == 2:    # adjacent segments at a random corner
            c = rng.uniform(-0.2, 0.2, 2)
            t1, t2 = rng.uniform(0, 6.3, 2)
            a = c + rng.uniform(0.02, 0.2) * np.array([math.cos(t1), math.sin(t1)])
            b = c + rng.uniform(0.02, 0.2) * np.array([math.cos(t2), math.sin(t2)])
            if abs(math.remainder(t1 - t2, 2 * math.pi)) < 0.2:
                continue
            cases.append((Panel(LineSegment(tuple(a), tuple(c)), 0.0, 1.0),
                          Panel(LineSegment(tuple(c), tuple(b)), 0.0, 1.0)))
        elif kind == 3:    # adjacent arcs
            t0 = rng.uniform(0, 4)
            d1, d2 = rng.uniform(0.05, 0.8, 2)
            cases.append((Panel(circ, t0, t0 + d1), Panel(circ, t0 + d1, t0 + d1 + d2)))
        else:              # near or far, not touching
            a = rng.uniform(-0.3, 0.3, 2)
            p = Panel(LineSegment(tuple(a), tuple(a + rng.uniform(0.05, 0.2, 2))), 0.0, 1.0)
            sh = rng.uniform(0.02, 0.4, 2)
            q = Panel(LineSegment(tuple(a + sh), tuple(a + sh + rng.uniform(-0.2, 0.2, 2))),
                      0.0, 1.0)
            if q.length < 0.02:
                continue
            cases.append((p, q))
    return cases


CORPUS = _corpus()


def test_regression_corpus_doubling():
    for pa, pb in CORPUS:
        i8, i16, i32 = (_lap_pair(pa, pb, n=n) for n in (8, 16, 32))
        est = abs(i16 - i8)
        assert abs(i32 - i16) <= max(est, 1e-13 * abs(i16))
        # Lame blocks: the same doubling criterion entrywise
        reg = classify_pair(pa, pb, same=pa == pb)
        b8, b16, b32 = (pair_block(lame(), pa, pb, 1, reg, QuadConfig(near_order=n))
                        for n in (8, 16, 32))
        scale = np.max(np.abs(b32))
        assert np.max(np.abs(b32 - b16)) <= max(np.max(np.abs(b16 - b8)), 1e-13 * scale)


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4, 7, 9])
def test_pair_integral_against_oracle(k):
    pa, pb = CORPUS[k]
    assert abs(_lap_pair(pa, pb) - _oracle_pair(pa, pb)) < 1e-10


def _circle_panels(N, r=0.5):
    circ = CircularArc((0.0, 0.0), r, (0.0, 2 * math.pi))
    return [Panel(circ, 2 * math.pi * i / N, 2 * math.pi * (i + 1) / N) for i in range(N)]


def test_pv_constant_density_on_circle():
    ps = _circle_panels(8)
    for host, u0 in ((0, 0.37), (5, 0.5)):
        x = ps[host].point(u0)
        t = ps[host].tangent(u0)
        total = sum(pv_tangential_potential(laplace(), p, [[1.0]], x, t,
                                            u0=u0 if i == host else None)
                    for i, p in enumerate(ps))
        assert abs(total[0]) < 1e-10


def test_pv_midpoint_of_straight_panel():
    val = pv_tangential_potential(laplace(), UNIT, [[1.0]], UNIT.point(0.5), (1.0, 0.0), u0=0.5)
    assert abs(val[0]) < 1e-14


@pytest.mark.parametrize("panel", [UNIT, _circle_panels(6)[1]])
def test_off_panel_derivative_against_oracle(panel):
    h = panel.length
    mid = panel.point(0.5)
    tn = panel.tangent(0.5)
    normal = np.array([-tn[1], tn[0]])
    x = mid + 5 * h * normal
    tdir = np.array([math.cos(0.4), math.sin(0.4)])
    coeffs = np.array([[0.7], [-0.4], [0.25]])
    from abem.quadrature import legendre_basis
    dens = lambda v: float(legendre_basis([v], 2)[0] @ coeffs[:, 0])

    def g(v):
        gr = kernel_grad_x(laplace(), x, panel.point(v))[:, 0, 0]
        return float(tdir @ gr) * dens(v) * float(panel.jac(v))
    ref = adaptive_integrate(g, 0.0, 1.0, 1e-14)
    assert abs(pv_tangential_potential(laplace(), panel, coeffs, x, tdir)[0] - ref) < 1e-9
    # value potential against the same oracle
    W = point_source_weights(laplace(), panel, x, 2)
    refv = adaptive_integrate(lambda v: laplace_log(x, panel.point(v)) * dens(v)
                              * float(panel.jac(v)), 0.0, 1.0, 1e-14)
    assert abs(np.einsum("kab,kb->a", W, coeffs)[0] - refv) < 1e-9


def test_pv_host_against_oracle():
    # principal value on a curved host panel: fold the integrand symmetrically
    # about the target, which cancels the 1/(v - u0) part exactly
    p = _circle_panels(5)[2]
    u0 = 0.3
    x, t = p.point(u0), p.tangent(u0)

    def g(v):
        gr = kernel_grad_x(laplace(), x, p.point(v))[..., 0, 0]
        return (gr @ t) * p.jac(v) * (1 + v)
    d = min(u0, 1 - u0)
    ref = adaptive_integrate(lambda s: g(u0 + s) + g(u0 - s), 0.0, d, 1e-13, vectorized=True)
    ref += adaptive_integrate(g, u0 + d, 1.0, 1e-13, vectorized=True)
    coeffs = np.array([[1.5], [1 / (2 * math.sqrt(3))]])  # 1 + v in the Legendre basis
    val = pv_tangential_potential(laplace(), p, coeffs, x, t, u0=u0)[0]
    assert abs(val - ref) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4),
       st.lists(st.floats(-2, 2), min_size=4, max_size=4), st.floats(-3, 3),
       st.floats(0.05, 0.95))
def test_pv_linearity(a, b, s, u0):
    pde = lame(1.0, 2.0)
    p = _circle_panels(7)[3]
    x, t = p.point(u0), p.tangent(u0)
    A, B = np.reshape(a, (2, 2)), np.reshape(b, (2, 2))
    val = lambda c: pv_tangential_potential(pde, p, c, x, t, u0=u0)
    lhs = val(A + s * B)
    rhs = val(A) + s * val(B)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1 + np.max(np.abs(rhs)))


def _v(f):
    return lambda p, u: f(np.asarray(p.param(u)))


def test_slobodeckij_examples():
    assert slobodeckij_pair(_v(lambda s: np.full(s.shape, 3.0)), UNIT, UNIT) == 0.0
    assert abs(slobodeckij_pair(_v(lambda s: s), UNIT, UNIT) - 1.0) < 1e-13
    val = slobodeckij_pair(_v(lambda s: s ** 2), UNIT, UNIT)
    assert abs(val - 7 / 6) < 1e-8


def test_slobodeckij_cross_against_oracle():
    pa = Panel(LineSegment((0.0, 0.0), (0.2, 0.0)), 0.0, 1.0)
    pb = Panel(LineSegment((0.2, 0.0), (0.2, 0.15)), 0.0, 1.0)
    f = lambda x: math.sin(7 * x[0]) + x[1] ** 2

    def vp(p, u):
        return np.array([f(q) for q in p.point(np.atleast_1d(u))])

    def outer(u):
        x = pa.point(u)
        g = lambda w: (f(x) - f(pb.point(w))) ** 2 / np.sum((x - pb.point(w)) ** 2) * pb.jac(w)
        return adaptive_integrate(g, 0.0, 1.0, 1e-12) * pa.jac(u)
    ref = adaptive_integrate(outer, 0.0, 1.0, 1e-11)
    assert abs(slobodeckij_cross(vp, pa, pb, 20) - ref) < 1e-9 * max(1.0, ref)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 1.0), st.floats(0.05, 1.0))
def test_slobodeckij_symmetric_nonnegative(c1, c2, d1, d2):
    circ = CircularArc((0.0, 0.0), 0.5, (0.0, 2 * math.pi))
    pa, pb = Panel(circ, 1.0, 1.0 + d1), Panel(circ, 1.0 + d1, 1.0 + d1 + d2)
    v = lambda p, u: c1 * np.cos(p.param(u)) + c2 * p.param(u) ** 2
    s_ab, s_ba = slobodeckij_pair(v, pa, pb), slobodeckij_pair(v, pb, pa)
    assert s_ab >= 0.0
    assert abs(s_ab - s_ba) <= 1e-12 * max(1.0, s_ab)
