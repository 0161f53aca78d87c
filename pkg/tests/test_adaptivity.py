from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abem.adaptivity import (
    AdaptiveRun,
    InverseQuotient,
    MarkingParams,
    StopRule,
    adaptive_loop,
    axiom_diagnostics,
    closure_constants,
    doerfler_mark,
    fit_rate,
    inverse_inequality_check,
    linear_convergence_fit,
    partition_exact,
)
from abem.ansatz import AnsatzSpace, weighted_l2_gram
from abem.galerkin import assemble
from abem.geometry import circle
from abem.mesh import initial_mesh, patch_elements
from abem.operators import laplace
from abem.problems import fourier_circle_problem, zero_problem

from conftest import bundled

R = 0.5


def brute_min_cardinality(vals, theta):
    total = math.fsum(v * v for v in vals)
    for k in range(len(vals) + 1):
        for sub in itertools.combinations(range(len(vals)), k):
            if math.fsum(vals[i] ** 2 for i in sub) >= theta * total:
                return k
    raise AssertionError("unreachable")


# --- marking ------------------------------------------------------------------

def test_marking_examples():
    assert doerfler_mark([0.4, 0.3, 0.2, 0.1], 0.5) == {0}
    assert doerfler_mark([0.4, 0.0, 0.2, 0.1], 1.0) == {0, 2, 3}
    assert doerfler_mark([1.0] * 4, 0.5) == {0, 1}
    assert doerfler_mark([0.0, 0.0], 0.5) == set()
    assert doerfler_mark([1.0, 1.0, 2.0], 0.5, ids=[9, 4, 7]) == {7}
    assert doerfler_mark([1.0, 1.0], 0.4, ids=[9, 4]) == {4}


@pytest.mark.parametrize("theta", [0.0, -0.1, 1.5, math.nan])
def test_marking_params_validate_theta(theta):
    with pytest.raises(ValueError):
        MarkingParams(theta)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0.0, 10.0, allow_subnormal=False), min_size=1, max_size=10),
       st.floats(0.01, 1.0))
def test_marking_is_valid_and_minimal(vals, theta):
    marked = doerfler_mark(vals, theta)
    total = math.fsum(v * v for v in vals)
    assert math.fsum(vals[i] ** 2 for i in marked) >= theta * total
    if total > 0:
        assert len(marked) == brute_min_cardinality(vals, theta)


# --- the loop -------------------------------------------------------------------

def test_zero_rhs_stops_at_level_zero():
    run = adaptive_loop(zero_problem(laplace()), initial_mesh(circle(R), 2), 0,
                        stop=StopRule(None, 5))
    assert len(run.levels) == 1 and run.stop_reason == "converged"
    assert run.levels[0].eta < 1e-10 and run.levels[0].marked == 0


def test_loop_records_and_determinism():
    prob = fourier_circle_problem(laplace(), (0, 0), R, 0.2, {1: 1.0}, {3: 0.5})
    runs = [adaptive_loop(prob, initial_mesh(circle(R), 2), 0, stop=StopRule(None, 6))
            for _ in range(2)]
    a, b = runs
    for name in ("n_elements", "eta", "energy_error", "marked"):
        assert np.array_equal(a.series(name), b.series(name))
    n = a.series("n_elements")
    assert np.all(np.diff(n) > 0) and a.stop_reason == "max_levels"
    for m0, m1 in zip(a.meshes, a.meshes[1:]):
        assert partition_exact(m0, m1)


def test_max_dofs_stop():
    prob = fourier_circle_problem(laplace(), (0, 0), R, cos={1: 1.0})
    run = adaptive_loop(prob, initial_mesh(circle(R), 2), 0, mode="uniform",
                        stop=StopRule(max_dofs=40, max_levels=None))
    assert run.stop_reason == "max_dofs" and run.levels[-1].n_dofs == 32


def test_circle_smooth_meshes_stay_quasi_uniform():
    cfg, _, base, prob = bundled("circle-smooth")
    run = adaptive_loop(prob, base, cfg.degree, MarkingParams(cfg.theta),
                        StopRule(None, cfg.stop.max_levels))
    assert len(run.levels) == 10
    for m in run.meshes:
        assert m.measures.max() / m.measures.min() <= 4 + 1e-12


def test_lshape_marks_concentrate_at_corner(lshape_adaptive):
    run = lshape_adaptive
    for lv in range(3, len(run.levels) - 1):
        mesh, marked = run.meshes[lv], run.marked_sets[lv]
        pats = mesh.geometry.patches
        corner = [eid for eid, p, a, b in zip(mesh.leaves, mesh.patch_ids, mesh.t0, mesh.t1)
                  if np.min(np.linalg.norm(pats[p].point(np.array([a, b])), axis=-1)) < 1e-12]
        assert len(corner) == 2
        near = patch_elements(mesh, corner, 2)
        assert len(marked & near) >= 0.5 * len(marked)


# --- rates ------------------------------------------------------------------------

def test_fit_rate_synthetic():
    N = np.array([10.0, 20, 40, 80, 160, 320])
    assert fit_rate(N, values=N ** -1.5) == pytest.approx(1.5, abs=1e-10)
    assert fit_rate(N, values=np.full(6, 0.3)) == 0.0
    with pytest.warns(RuntimeWarning):
        assert math.isnan(fit_rate(N, values=N ** 0.5))
    with pytest.warns(RuntimeWarning):
        assert math.isnan(fit_rate(N, values=np.array([1.0, 0.5, 0.3, 0.0, 0.1, 0.05])))


def test_circle_uniform_energy_rate():
    prob = fourier_circle_problem(laplace(), (0, 0), R, cos={1: 1.0})
    run = adaptive_loop(prob, initial_mesh(circle(R), 4), 0, mode="uniform",
                        stop=StopRule(None, 6))
    assert run.levels[-1].n_elements == 512
    assert 1.35 <= fit_rate(run, "energy_error") <= 1.65


def test_linear_convergence_fit():
    ell = np.arange(8)
    fit = linear_convergence_fit(np.sqrt(3.0 * 0.6 ** ell))
    assert fit.q == pytest.approx(0.6, rel=1e-12)
    assert fit.c_lin == pytest.approx(1.0, abs=1e-12)
    assert fit.max_violation == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        linear_convergence_fit([1.0])


def test_lshape_linear_convergence(lshape_adaptive):
    fit = linear_convergence_fit(lshape_adaptive.series("eta"))
    assert fit.q < 1 and fit.max_violation < 3


# --- axioms -----------------------------------------------------------------------

def test_axioms_identical_meshes():
    prob = fourier_circle_problem(laplace(), (0, 0), R, cos={1: 1.0})
    run = adaptive_loop(prob, initial_mesh(circle(R), 2), 0, stop=StopRule(None, 2),
                        retain_systems=True)
    dup = AdaptiveRun(levels=[run.levels[0]] * 2 + [run.levels[1]],
                      meshes=[run.meshes[0]] * 2 + [run.meshes[1]],
                      indicators=[run.indicators[0]] * 2 + [run.indicators[1]],
                      marked_sets=[set()] + run.marked_sets[:2],
                      systems=[run.systems[0]] * 2 + [run.systems[1]])
    rep = axiom_diagnostics(dup)
    assert rep.e1_constants[0] == 0.0
    assert len(rep.e4_ratios) == 1 and len(rep.e2_pairs) == 1
    with pytest.raises(ValueError):
        axiom_diagnostics(AdaptiveRun(levels=run.levels, systems=[]))


def test_lshape_axioms(lshape_adaptive, lshape_setup):
    run = lshape_adaptive
    prob = lshape_setup[3]
    assert len(run.levels) >= 15
    rep = axiom_diagnostics(run, exact_energy=prob.exact_energy())
    e1 = np.array(rep.e1_constants)
    e4 = np.array(rep.e4_ratios)
    assert np.all(np.isfinite(e1)) and np.all(np.isfinite(e4))
    assert e1.max() < 10 * np.median(e1)
    assert e4.max() < 10 * np.median(e4)
    assert max(rep.e3_telescoping_error) < 1e-8
    errs = run.series("energy_error")
    # partial sums from any level are bounded by that level's squared error
    tail = np.cumsum(np.diff(rep.e3_partial_sums, prepend=0.0)[::-1])[::-1]
    assert np.all(tail <= errs[:-1] ** 2 * (1 + 1e-8))
    assert np.isfinite(rep.e2_c_red) and rep.e2_rho < 1


def test_closure_constants_bounded(lshape_adaptive):
    cc = closure_constants(lshape_adaptive)
    assert np.all(cc >= 1) and np.all(np.isfinite(cc))


# --- inverse inequalities ---------------------------------------------------------

def circle_space(n):
    return AnsatzSpace(initial_mesh(circle(R), n // 4), 0)


def test_inverse_quotients_bounded_across_meshes():
    s1, der = [], []
    for n in (8, 16, 32, 64, 128):
        sp = circle_space(n)
        M = assemble(sp, laplace())
        rep = inverse_inequality_check(sp, M, laplace(), n_random=20)
        assert np.all(np.isfinite(rep.basis_quotients)) and np.all(rep.basis_quotients > 0)
        s1.append(rep.s1_constant)
        der.append(rep.derivative_constant)
    assert max(s1) / min(s1) < 3
    assert max(der) / min(der) < 3


def test_inverse_quotients_scale_invariant():
    sp = circle_space(16)
    M = assemble(sp, laplace())
    Q = InverseQuotient(sp, M, laplace())
    W = weighted_l2_gram(sp, 1.0)
    psi = np.random.default_rng(1).standard_normal(sp.dof_count)
    s1 = lambda v: math.sqrt((v @ W @ v) / (v @ M @ v))
    assert Q(5 * psi) == pytest.approx(Q(psi), rel=1e-10)
    assert s1(5 * psi) == pytest.approx(s1(psi), rel=1e-10)
