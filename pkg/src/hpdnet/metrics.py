"""Distances on the manifold of Hermitian positive-definite matrices.

Three metrics are provided: the plain Frobenius (Euclidean) distance, the
log-Euclidean manifold distance, and the affine-invariant Riemannian metric,
plus the log-Euclidean Frechet mean used by nearest-mean baselines. Matrix
logarithms here always take the exact eigendecomposition route: these are
offline tools where accuracy beats speed.

All functions are pure and safe for unrestricted parallel use.
"""

from enum import Enum

import numpy as np

from .errors import DimensionMismatch, EmptySet, NotPositiveDefinite
from .linalg import HpdMatrix, eigh_batch, fn_from_eig, herm


class MetricKind(Enum):
    EUCLIDEAN = "euclidean"
    LOG_EUCLIDEAN = "log_euclidean"
    AIRM = "airm"


def _check_orders(a: HpdMatrix, b: HpdMatrix) -> None:
    if a.n != b.n:
        raise DimensionMismatch(f"orders differ: {a.n} vs {b.n}")


def _logm(z: np.ndarray) -> np.ndarray:
    lam, u = eigh_batch(z[None])
    if lam[0, 0] <= 0.0:
        raise NotPositiveDefinite(
            f"matrix logarithm needs a positive spectrum, got min {lam[0, 0]:.6g}")
    return fn_from_eig(lam, u, np.log(lam))[0]


def dist_euclidean(a: HpdMatrix, b: HpdMatrix) -> float:
    """Frobenius norm of the complex difference ||a - b||_F."""
    _check_orders(a, b)
    return float(np.linalg.norm(a.z - b.z))


def dist_log_euclidean(a: HpdMatrix, b: HpdMatrix) -> float:
    """Log-Euclidean manifold distance ||log(a) - log(b)||_F."""
    _check_orders(a, b)
    return float(np.linalg.norm(_logm(a.z) - _logm(b.z)))


def dist_airm(a: HpdMatrix, b: HpdMatrix) -> float:
    """Affine-invariant distance ||log(a^{-1/2} b a^{-1/2})||_F.

    Invariant under the congruence a -> m a m^H, b -> m b m^H for any
    invertible m.
    """
    _check_orders(a, b)
    lam, u = eigh_batch(a.z[None])
    if lam[0, 0] <= 0.0:
        raise NotPositiveDefinite(
            f"AIRM base point must be positive definite, got min {lam[0, 0]:.6g}")
    inv_sqrt = fn_from_eig(lam, u, 1.0 / np.sqrt(lam))[0]
    return float(np.linalg.norm(_logm(herm(inv_sqrt @ b.z @ inv_sqrt))))


def distance(a: HpdMatrix, b: HpdMatrix, kind: MetricKind) -> float:
    if kind is MetricKind.EUCLIDEAN:
        return dist_euclidean(a, b)
    if kind is MetricKind.LOG_EUCLIDEAN:
        return dist_log_euclidean(a, b)
    return dist_airm(a, b)


def log_euclidean_mean(matrices) -> HpdMatrix:
    """exp of the arithmetic mean of matrix logs; HPD for HPD inputs."""
    matrices = list(matrices)
    if not matrices:
        raise EmptySet("log-Euclidean mean of an empty set")
    n = matrices[0].n
    for m in matrices:
        if m.n != n:
            raise DimensionMismatch(f"orders differ: {m.n} vs {n}")
    acc = np.zeros((n, n), dtype=np.complex128)
    for m in matrices:
        acc += _logm(m.z)
    acc /= len(matrices)
    lam, u = eigh_batch(acc[None])
    return HpdMatrix.from_z(fn_from_eig(lam, u, np.exp(lam))[0])
