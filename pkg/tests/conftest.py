"""Shared generators for the test suite."""

import numpy as np

from hpdnet.linalg import HpdMatrix, eigh_batch


def rand_hpd(rng, n=3, lam_lo=1.0, lam_hi=4.0, lam=None):
    """Random HPD matrix with a controlled spectrum."""
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, _ = np.linalg.qr(g)
    if lam is None:
        lam = rng.uniform(lam_lo, lam_hi, size=n)
    return (q * lam) @ q.conj().T


def rand_unitary(rng, n=3):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(g)
    return q * (np.diagonal(r) / np.abs(np.diagonal(r)))


def rand_herm(rng, n=3, scale=1.0):
    g = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (g + g.conj().T)


def herm_basis(n):
    """Basis directions of the space of n x n Hermitian matrices."""
    dirs = []
    for i in range(n):
        e = np.zeros((n, n), complex)
        e[i, i] = 1.0
        dirs.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n), complex)
            e[i, j] = 1.0
            e[j, i] = 1.0
            dirs.append(e)
            e = np.zeros((n, n), complex)
            e[i, j] = 1j
            e[j, i] = -1j
            dirs.append(e)
    return dirs


def assert_hpd(z, min_eig=0.0):
    """Hermitian within tolerance and eigenvalues above a floor."""
    assert np.abs(z - z.conj().T).max() <= 1e-10
    h = HpdMatrix.from_z(z)
    assert np.abs(np.diag(h.z).imag).max() == 0.0
    lam, _ = eigh_batch(z[None])
    assert lam[0, 0] > min_eig
