"""PDE operators and their 2D fundamental solutions.

Both supported kernels split as ``G(z) = a * log|z| + R(z)`` with a constant
(matrix) coefficient ``a`` and a bounded remainder ``R``. The quadrature code
relies on this split to treat the logarithm analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SingularityError(ValueError):
    """Kernel evaluated on its diagonal ``x == y``."""


@dataclass(frozen=True)
class PdeOperator:
    """``-sum d_i(A_ii' d_i' u) + sum b_i d_i u + c u`` with ``D`` components.

    ``kind`` is ``"laplace"``, ``"lame"`` or ``"custom"``. Only the first two
    have fundamental solutions here; custom operators carry coefficients only.
    """

    kind: str
    D: int
    lam: float = 0.0
    mu: float = 0.0
    A: np.ndarray | None = field(default=None, repr=False)
    b: np.ndarray | None = field(default=None, repr=False)
    c: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "lame":
            if not self.mu > 0 or not self.lam + self.mu > 0:
                raise ValueError("Lame parameters need mu > 0 and lam + mu > 0")
        elif self.kind == "custom":
            A = np.asarray(self.A, dtype=complex)
            D = self.D
            if A.shape != (2, 2, D, D):
                raise ValueError(f"A must have shape (2, 2, {D}, {D})")
            for i in range(2):
                for j in range(2):
                    if not np.allclose(A[i, j].T, np.conj(A[j, i])):
                        raise ValueError("coefficients violate A_ij^T = conj(A_ji)")
        elif self.kind != "laplace":
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @property
    def is_symmetric_real(self) -> bool:
        return self.kind in ("laplace", "lame")

    def log_coefficient(self) -> np.ndarray:
        """Matrix ``a`` with ``G(z) = a log|z| + bounded``."""
        if self.kind == "laplace":
            return np.array([[-1.0 / (2 * math.pi)]])
        if self.kind == "lame":
            return -_kelvin_prefactor(self.lam, self.mu) * np.eye(2)
        raise NotImplementedError("no fundamental solution for custom operators")

    def to_dict(self) -> dict:
        if self.kind == "lame":
            return {"name": "lame", "lam": self.lam, "mu": self.mu}
        return {"name": self.kind}


def laplace() -> PdeOperator:
    return PdeOperator("laplace", 1)


def lame(lam: float = 1.0, mu: float = 1.0) -> PdeOperator:
    return PdeOperator("lame", 2, lam=float(lam), mu=float(mu))


def custom(A, b, c) -> PdeOperator:
    A = np.asarray(A, dtype=complex)
    return PdeOperator("custom", A.shape[-1], A=A, b=np.asarray(b, dtype=complex),
                       c=np.asarray(c, dtype=complex))


def _kelvin_prefactor(lam: float, mu: float) -> float:
    return (lam + 3 * mu) / (4 * math.pi * mu * (lam + 2 * mu))


def _diff(x, y):
    z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    if np.any(r2 == 0.0):
        raise SingularityError("kernel evaluated at x == y")
    return z, r2


def regular_part(pde: PdeOperator, z: np.ndarray, r2: np.ndarray) -> np.ndarray | None:
    """Bounded remainder ``G(z) - a log|z|`` with shape ``z.shape[:-1] + (D, D)``.

    Returns None when it vanishes identically (Laplace).
    """
    if pde.kind == "laplace":
        return None
    c1 = _kelvin_prefactor(pde.lam, pde.mu)
    c2 = (pde.lam + pde.mu) / (pde.lam + 3 * pde.mu)
    return (c1 * c2) * z[..., :, None] * z[..., None, :] / r2[..., None, None]


def kernel_from_diff(pde: PdeOperator, z: np.ndarray, r2: np.ndarray) -> np.ndarray:
    logr = 0.5 * np.log(r2)
    a = pde.log_coefficient()
    G = a * logr[..., None, None]
    R = regular_part(pde, z, r2)
    return G if R is None else G + R


def grad_from_diff(pde: PdeOperator, z: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Gradient in ``x`` of ``G(x - y)``; shape ``z.shape[:-1] + (2, D, D)``."""
    a = pde.log_coefficient()
    g = (z / r2[..., None])[..., :, None, None] * a
    if pde.kind == "lame":
        c1 = _kelvin_prefactor(pde.lam, pde.mu)
        c2 = (pde.lam + pde.mu) / (pde.lam + 3 * pde.mu)
        eye = np.eye(2)
        zi = z[..., None, :, None]
        zj = z[..., None, None, :]
        zk = z[..., :, None, None]
        dik = eye[:, :, None]
        djk = eye[:, None, :]
        r2e = r2[..., None, None, None]
        g = g + c1 * c2 * ((dik * zj + zi * djk) / r2e - 2 * zi * zj * zk / r2e ** 2)
    return g


def kernel(pde: PdeOperator, x, y) -> np.ndarray:
    """Fundamental solution ``G(x - y)`` as a ``(D, D)`` matrix (batched over leading axes)."""
    z, r2 = _diff(x, y)
    return kernel_from_diff(pde, z, r2)


def kernel_grad_x(pde: PdeOperator, x, y) -> np.ndarray:
    """``grad_x G(x - y)``; leading axis of the result runs over the 2 directions."""
    z, r2 = _diff(x, y)
    return grad_from_diff(pde, z, r2)


def pde_from_dict(data: dict) -> PdeOperator:
    name = data.get("name")
    if name == "laplace":
        return laplace()
    if name == "lame":
        return lame(data.get("lam", 1.0), data.get("mu", 1.0))
    raise ValueError(f"unknown pde {name!r}")
