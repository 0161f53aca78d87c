from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abem.operators import SingularityError, custom, kernel, kernel_grad_x, lame, laplace

from oracles import adaptive_integrate, central_difference


def test_laplace_kernel_examples():
    assert kernel(laplace(), (1.0, 0.0), (0.0, 0.0))[0, 0] == pytest.approx(0.0, abs=1e-17)
    assert kernel(laplace(), (math.e, 0.0), (0.0, 0.0))[0, 0] == pytest.approx(
        -1 / (2 * math.pi), rel=1e-14)


def test_kelvin_example():
    G = kernel(lame(1.0, 1.0), (1.0, 0.0), (0.0, 0.0))
    np.testing.assert_allclose(G, [[1 / (6 * math.pi), 0.0], [0.0, 0.0]], atol=1e-16)
    assert G[0, 0] == pytest.approx(0.0530516, abs=1e-7)


def test_kernel_singular_and_custom():
    with pytest.raises(SingularityError):
        kernel(laplace(), (0.1, 0.2), (0.1, 0.2))
    with pytest.raises(SingularityError):
        kernel_grad_x(lame(), (0.1, 0.2), (0.1, 0.2))
    A = np.zeros((2, 2, 1, 1))
    A[0, 0] = A[1, 1] = 1.0
    op = custom(A, np.zeros((2, 1, 1)), np.zeros((1, 1)))
    with pytest.raises(NotImplementedError):
        kernel(op, (0.0, 0.0), (1.0, 0.0))
    bad = A.astype(complex).copy()
    bad[0, 1] = 1j
    with pytest.raises(ValueError):
        custom(bad, np.zeros((2, 1, 1)), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        lame(1.0, 0.0)
    with pytest.raises(ValueError):
        lame(-2.0, 1.0)


def test_gradient_examples():
    np.testing.assert_allclose(kernel_grad_x(laplace(), (1.0, 0.0), (0.0, 0.0))[:, 0, 0],
                               [-1 / (2 * math.pi), 0.0], atol=1e-16)
    np.testing.assert_allclose(kernel_grad_x(laplace(), (0.0, 2.0), (0.0, 0.0))[:, 0, 0],
                               [0.0, -1 / (4 * math.pi)], atol=1e-16)
    for pde in (laplace(), lame(1.0, 1.0)):
        z = np.array([0.3, 0.4])
        fd = central_difference(lambda x: kernel(pde, x, (0.0, 0.0)), z, 1e-6)
        assert np.max(np.abs(fd - kernel_grad_x(pde, z, (0.0, 0.0)))) < 1e-7


@pytest.mark.parametrize("pde", [laplace(), lame(1.0, 1.0), lame(3.0, 0.5)])
def test_gradient_grid_and_symmetry(pde):
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = 10 ** rng.uniform(-3, 0) * 0.999
        a = rng.uniform(0, 2 * math.pi)
        z = r * np.array([math.cos(a), math.sin(a)])
        h = 1e-5 * r
        fd = central_difference(lambda x: kernel(pde, x, (0.0, 0.0)), z, h)
        an = kernel_grad_x(pde, z, (0.0, 0.0))
        # central differences are O(h^2 |G'''|) ~ 1e-10 / r
        assert np.max(np.abs(fd - an)) < 1e-8 / r
        G = kernel(pde, z, (0.0, 0.0))
        np.testing.assert_allclose(G, kernel(pde, -z, (0.0, 0.0)).T, atol=1e-15)
        np.testing.assert_allclose(G, G.T, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(-8.0, 0.0), st.floats(0.0, 2 * math.pi))
def test_log_growth_bound(lg, ang):
    r = 10.0 ** lg
    z = (r * math.cos(ang), r * math.sin(ang))
    for pde in (laplace(), lame(1.0, 1.0)):
        assert np.max(np.abs(kernel(pde, z, (0.0, 0.0)))) <= 0.2 * (1 + abs(math.log(r)))


def _lame_stress(pde, x, j, h=1e-5):
    """Stress of the displacement column ``j`` of ``G(x)`` by central differences."""
    du = central_difference(lambda p: kernel(pde, p, (0.0, 0.0))[:, j], x, h)  # du[k, i] = d_k u_i
    eps = 0.5 * (du + du.T)
    return pde.lam * np.trace(eps) * np.eye(2) + 2 * pde.mu * eps


@pytest.mark.parametrize("lam,mu", [(1.0, 1.0), (2.0, 0.7)])
def test_kelvin_is_fundamental_solution(lam, mu):
    pde = lame(lam, mu)
    # the Lame operator annihilates G away from the origin
    x = np.array([0.31, -0.17])
    for j in range(2):
        div = np.zeros(2)
        h = 1e-4
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            div += (_lame_stress(pde, x + e, j)[:, k] - _lame_stress(pde, x - e, j)[:, k]) / (2 * h)
        assert np.max(np.abs(div)) < 1e-5
    # traction flux through a circle balances a unit point force
    rho = 0.4
    for j in range(2):
        def flux(t):
            n = np.array([math.cos(t), math.sin(t)])
            return _lame_stress(pde, rho * n, j) @ n * rho
        F = adaptive_integrate(flux, 0.0, 2 * math.pi, 1e-8)
        np.testing.assert_allclose(F, -np.eye(2)[j], atol=1e-7)


def test_laplace_flux_normalisation():
    def flux(t):
        n = np.array([math.cos(t), math.sin(t)])
        return kernel_grad_x(laplace(), 0.3 * n, (0.0, 0.0))[:, 0, 0] @ n * 0.3
    assert adaptive_integrate(flux, 0.0, 2 * math.pi, 1e-12) == pytest.approx(-1.0, abs=1e-12)
