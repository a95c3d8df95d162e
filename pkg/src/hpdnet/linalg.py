"""Complex Hermitian linear algebra kernel.

Two routes to every matrix function of a Hermitian positive-definite (HPD)
matrix are provided:

* an exact route through a cyclic complex Jacobi eigendecomposition
  (`hermitian_eig` / `matrix_fn_eig`), deterministic down to the bit for a
  fixed input, and
* a fast route built from nothing but matrix multiplications: a coupled
  Newton-Schulz iteration for the square root (`sqrt_ns`), inverse
  scaling-and-squaring for the logarithm (`log_ns`), and an absolute-value
  identity for eigenvalue clamping (`clamp_ns`).

All public operations accept single matrices wrapped in the typed containers
below. The `*_batch` functions operate on stacked complex arrays of shape
``(..., n, n)`` and are what the network layers call; the typed operations
are thin wrappers over a batch of one.

Values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DomainError,
    NoConvergence,
    NotConverged,
    NotPositiveDefinite,
    NotSquare,
    SeriesDiverged,
)

TOL_HERM = 1e-10        # per-entry Hermitian deviation accepted at construction
MAX_SWEEPS = 64         # Jacobi sweep budget
NS_DEFAULT_ITERS = 5    # Newton-Schulz budget for the square root
NS_RESIDUAL_TOL = 1e-2  # relative ||y@y - c|| above which sqrt_ns refuses
DEGENERATE_EIG = 1e-9   # eigenvalue gap below which the Loewner rule degenerates
COND_GUARD = 1e4        # condition estimate above which sqrt_ns pre-regularizes
COND_GUARD_EPS = 1e-6   # ridge factor, times trace/n

_EPS = np.finfo(np.float64).eps


# ---------------------------------------------------------------------------
# typed containers


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ComplexMatrix:
    """A square complex matrix stored as separate real and imaginary parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = _as_readonly(self.re)
        im = _as_readonly(self.im)
        if re.ndim != 2 or re.shape[0] != re.shape[1]:
            raise NotSquare(f"expected a square matrix, got shape {re.shape}")
        if re.shape != im.shape:
            raise DimensionMismatch(
                f"re/im shapes differ: {re.shape} vs {im.shape}")
        if not (np.isfinite(re).all() and np.isfinite(im).all()):
            raise DomainError("matrix entries must be finite")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @property
    def n(self) -> int:
        return self.re.shape[0]

    @property
    def z(self) -> np.ndarray:
        """The matrix as a complex ndarray (fresh, writable copy)."""
        return self.re + 1j * self.im

    @staticmethod
    def from_z(z: np.ndarray) -> "ComplexMatrix":
        z = np.asarray(z)
        return ComplexMatrix(z.real, z.imag)


class HpdMatrix:
    """A Hermitian matrix intended to be positive definite.

    The constructor checks Hermitian symmetry to within ``TOL_HERM`` per
    entry, then stores the exactly symmetrized matrix with the diagonal of
    the imaginary part forced to zero. Positive definiteness is *not*
    verified here (it needs an eigendecomposition); use ``make_hermitian``
    with ``require_pd=True`` when validation matters.
    """

    __slots__ = ("mat",)

    def __init__(self, mat: ComplexMatrix):
        dre = np.abs(mat.re - mat.re.T).max(initial=0.0)
        dim = np.abs(mat.im + mat.im.T).max(initial=0.0)
        if dre > TOL_HERM or dim > TOL_HERM:
            raise DomainError(
                f"matrix is not Hermitian (deviation re={dre:.3e}, im={dim:.3e})")
        re = 0.5 * (mat.re + mat.re.T)
        im = 0.5 * (mat.im - mat.im.T)
        np.fill_diagonal(im, 0.0)
        self.mat = ComplexMatrix(re, im)

    @property
    def n(self) -> int:
        return self.mat.n

    @property
    def z(self) -> np.ndarray:
        return self.mat.z

    @staticmethod
    def from_z(z: np.ndarray) -> "HpdMatrix":
        return HpdMatrix(ComplexMatrix.from_z(z))


@dataclass(frozen=True)
class EigPair:
    """Unitary eigenvectors (columns of u) and ascending real eigenvalues."""

    u: ComplexMatrix
    lam: np.ndarray


@dataclass(frozen=True)
class NsState:
    """One state of the coupled Newton-Schulz iteration."""

    x: ComplexMatrix
    z: ComplexMatrix
    scale: float


# ---------------------------------------------------------------------------
# batched primitives


def herm(z: np.ndarray) -> np.ndarray:
    """Hermitian part (z + z^H) / 2, batched over leading axes."""
    return 0.5 * (z + np.conj(np.swapaxes(z, -1, -2)))


def ct(z: np.ndarray) -> np.ndarray:
    """Conjugate transpose, batched over leading axes."""
    return np.conj(np.swapaxes(z, -1, -2))


def _eye_like(z: np.ndarray) -> np.ndarray:
    n = z.shape[-1]
    return np.broadcast_to(np.eye(n, dtype=z.dtype), z.shape).copy()


def re_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Re <a, b> = Re trace(a^H b) per batch element."""
    return np.einsum("...ij,...ij->...", np.conj(a), b).real


def frob(z: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("...ij,...ij->...", np.conj(z), z).real)


def eigh_batch(z: np.ndarray, max_sweeps: int = MAX_SWEEPS):
    """Cyclic complex Jacobi eigendecomposition of Hermitian matrices.

    Parameters
    ----------
    z : ndarray, shape (..., n, n), complex
        Hermitian matrices. Only the Hermitian part is used.
    max_sweeps : int
        Sweep budget before ``NoConvergence`` is raised.

    Returns
    -------
    lam : ndarray, shape (..., n), float64, ascending per matrix
    u : ndarray, shape (..., n, n), complex128
        Unitary eigenvector matrices; the phase of each column is fixed by
        making its largest-magnitude entry real and positive.

    The pivot order is the fixed cyclic order (0,1), (0,2), ..., (n-2,n-1)
    and all rotations are elementwise vectorized over the batch, so results
    for one matrix do not depend on what else is in the batch and repeated
    calls are bit-identical.
    """
    z = np.asarray(z, dtype=np.complex128)
    batch_shape = z.shape[:-2]
    n = z.shape[-1]
    a = herm(z).reshape((-1, n, n)).copy()
    b = a.shape[0]
    v = np.broadcast_to(np.eye(n, dtype=np.complex128), a.shape).copy()

    # convergence threshold per matrix, frozen at entry
    tol = np.maximum(_EPS * frob(a), np.finfo(np.float64).tiny)

    pivots = [(p, q) for p in range(n - 1) for q in range(p + 1, n)]
    converged = False
    for _ in range(max_sweeps):
        rotated = np.zeros(b, dtype=bool)
        for p, q in pivots:
            apq = a[:, p, q]
            mag = np.abs(apq)
            act = mag > tol
            if not act.any():
                continue
            rotated |= act
            # unitary rotation zeroing the (p, q) entry where active
            safe = np.where(mag > 0.0, mag, 1.0)
            phase = np.where(mag > 0.0, apq / safe, 1.0)
            theta = (a[:, q, q].real - a[:, p, p].real) / (2.0 * safe)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(1.0, theta))
            t = np.where(theta == 0.0, 1.0, t)
            c = 1.0 / np.hypot(1.0, t)
            s = (t * c) * phase
            c = np.where(act, c, 1.0)
            s = np.where(act, s, 0.0)

            cc = c[:, None]
            ss = s[:, None]
            # A <- G^H A G with G e_p = c e_p - conj(s) e_q, G e_q = c e_q + s e_p
            col_p = cc * a[:, :, p] - np.conj(ss) * a[:, :, q]
            col_q = cc * a[:, :, q] + ss * a[:, :, p]
            a[:, :, p] = col_p
            a[:, :, q] = col_q
            row_p = cc * a[:, p, :] - ss * a[:, q, :]
            row_q = np.conj(ss) * a[:, p, :] + cc * a[:, q, :]
            a[:, p, :] = row_p
            a[:, q, :] = row_q
            a[:, p, q] = np.where(act, 0.0, a[:, p, q])
            a[:, q, p] = np.where(act, 0.0, a[:, q, p])

            vol_p = cc * v[:, :, p] - np.conj(ss) * v[:, :, q]
            vol_q = cc * v[:, :, q] + ss * v[:, :, p]
            v[:, :, p] = vol_p
            v[:, :, q] = vol_q
        if not rotated.any():
            converged = True
            break
    if not converged:
        # one final look: accept matrices whose off-diagonal mass is gone
        off = np.abs(a - a * np.eye(n)[None]).max(axis=(-1, -2))
        if (off > tol).any():
            raise NoConvergence(
                f"Jacobi sweep budget of {max_sweeps} exhausted for "
                f"{int((off > tol).sum())} matrices")

    lam = np.diagonal(a, axis1=-2, axis2=-1).real.copy()
    order = np.argsort(lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)

    # phase gauge: largest-magnitude entry of each column real-positive
    k = np.argmax(np.abs(v), axis=-2)
    anchor = np.take_along_axis(v, k[:, None, :], axis=-2)[:, 0, :]
    mag = np.abs(anchor)
    gauge = np.where(mag > 0.0, np.conj(anchor) / np.where(mag > 0.0, mag, 1.0), 1.0)
    v = v * gauge[:, None, :]

    return lam.reshape(batch_shape + (n,)), v.reshape(batch_shape + (n, n))


def fn_from_eig(lam: np.ndarray, u: np.ndarray, fvals: np.ndarray) -> np.ndarray:
    """Assemble U diag(fvals) U^H, Hermitian-projected."""
    return herm((u * fvals[..., None, :]) @ ct(u))


def loewner_vjp(lam, u, fvals, fprime, grad):
    """Pull a gradient back through X -> U f(Lambda) U^H.

    ``grad`` follows the convention dL = Re trace(grad^H dX); the result is
    the gradient with respect to the Hermitian input. Eigenvalue pairs
    closer than ``DEGENERATE_EIG`` fall back to the derivative rule.
    """
    g = herm(np.asarray(grad, dtype=np.complex128))
    dlam = lam[..., :, None] - lam[..., None, :]
    dfn = fvals[..., :, None] - fvals[..., None, :]
    degen = np.abs(dlam) < DEGENERATE_EIG
    k = np.where(degen,
                 0.5 * (fprime[..., :, None] + fprime[..., None, :]),
                 dfn / np.where(degen, 1.0, dlam))
    gt = ct(u) @ g @ u
    return herm(u @ (k * gt) @ ct(u))


# ---------------------------------------------------------------------------
# Newton-Schulz fast paths (batched, with reverse-mode companions)


@dataclass
class NsSqrtTape:
    xs: list          # iterates X_0..X_N
    zs: list          # iterates Z_0..Z_N
    ts: list          # 3I - Z_{k-1} X_{k-1} for k = 1..N
    s: np.ndarray     # normalization trace per matrix (after the guard)
    c_eff: np.ndarray
    guard: np.ndarray  # boolean mask of matrices that received the ridge


def _cond_estimate(c: np.ndarray) -> np.ndarray:
    """Cheap condition overestimate ||c||_F^n / det(c) for the ridge guard."""
    n = c.shape[-1]
    det = np.abs(np.linalg.det(c))
    det = np.where(det > 0.0, det, np.finfo(np.float64).tiny)
    return frob(c) ** n / det


def ns_sqrt_batch(c: np.ndarray, iters: int = NS_DEFAULT_ITERS, *,
                  guard: bool = True, check: bool = True):
    """Coupled Newton-Schulz square root, batched.

    The input is normalized by its trace so that every eigenvalue lies in
    (0, 1] and the iteration contracts; the result is rescaled back. Returns
    ``(y, zinv, tape)`` with ``y ~ c^{1/2}`` and ``zinv ~ c^{-1/2}``, both
    Hermitian-projected.
    """
    c = np.asarray(c, dtype=np.complex128)
    n = c.shape[-1]
    eye = np.eye(n, dtype=np.complex128)

    if guard:
        bad = _cond_estimate(c) > COND_GUARD
        ridge = np.where(bad, COND_GUARD_EPS, 0.0) * (
            np.trace(c, axis1=-2, axis2=-1).real / n)
        c_eff = c + ridge[..., None, None] * eye
    else:
        bad = np.zeros(c.shape[:-2], dtype=bool)
        c_eff = c

    s = np.trace(c_eff, axis1=-2, axis2=-1).real
    s = np.where(s > np.finfo(np.float64).tiny, s, 1.0)
    x = c_eff / s[..., None, None]
    z = np.broadcast_to(eye, c.shape).copy()

    xs, zs, ts = [x], [z], []
    for _ in range(iters):
        t = 3.0 * eye - z @ x
        x = 0.5 * (xs[-1] @ t)
        z = 0.5 * (t @ zs[-1])
        ts.append(t)
        xs.append(x)
        zs.append(z)

    sq = np.sqrt(s)[..., None, None]
    y = herm(sq * x)
    zinv = herm(z / sq)

    if check:
        resid = frob(y @ y - c_eff) / np.maximum(frob(c_eff), np.finfo(np.float64).tiny)
        if (resid > NS_RESIDUAL_TOL).any():
            raise NotConverged(
                f"Newton-Schulz residual {resid.max():.3e} above "
                f"{NS_RESIDUAL_TOL} after {iters} iterations; "
                "regularize the input or raise the budget")

    return y, zinv, NsSqrtTape(xs, zs, ts, s, c_eff, bad)


def ns_sqrt_vjp(tape: NsSqrtTape, gy=None, gzinv=None) -> np.ndarray:
    """Gradient of (y, zinv) = ns_sqrt_batch(c) with respect to c."""
    xs, zs, ts = tape.xs, tape.zs, tape.ts
    s = tape.s
    sq = np.sqrt(s)[..., None, None]
    shape = tape.c_eff.shape
    n = shape[-1]

    gx = np.zeros(shape, dtype=np.complex128)
    gz = np.zeros(shape, dtype=np.complex128)
    gs = np.zeros(shape[:-2])
    if gy is not None:
        gyh = herm(np.asarray(gy, dtype=np.complex128))
        gx += sq * gyh
        gs += 0.5 / sq[..., 0, 0] * re_inner(gyh, xs[-1])
    if gzinv is not None:
        gzh = herm(np.asarray(gzinv, dtype=np.complex128))
        gz += gzh / sq
        gs += -0.5 * re_inner(gzh, zs[-1]) / (s * sq[..., 0, 0])

    for k in range(len(ts), 0, -1):
        x_prev, z_prev, t = xs[k - 1], zs[k - 1], ts[k - 1]
        gx_prev = 0.5 * (gx @ ct(t))
        gt = 0.5 * (ct(x_prev) @ gx)
        gt += 0.5 * (gz @ ct(z_prev))
        gz_prev = 0.5 * (ct(t) @ gz)
        # t = 3I - z_prev x_prev
        gz_prev -= gt @ ct(x_prev)
        gx_prev -= ct(z_prev) @ gt
        gx, gz = gx_prev, gz_prev

    gc_eff = gx / s[..., None, None]
    gs += -re_inner(gx, tape.c_eff) / (s * s)
    eye = np.eye(n, dtype=np.complex128)
    gc_eff = gc_eff + gs[..., None, None] * eye

    # undo the ridge: c_eff = c + mask * (eps/n) * trace(c) * I
    tr_g = np.einsum("...ii->...", gc_eff).real
    ridge_coef = np.where(tape.guard, COND_GUARD_EPS / n, 0.0)
    return gc_eff + (ridge_coef * tr_g)[..., None, None] * eye


@dataclass
class NsLogTape:
    sqrt_tapes: list
    epows: list       # E^1 .. E^terms
    depth: int
    terms: int


def ns_log_batch(c: np.ndarray, depth: int = 4, terms: int = 8,
                 iters: int = NS_DEFAULT_ITERS, *, guard: bool = True):
    """Matrix logarithm by inverse scaling-and-squaring over ns_sqrt_batch.

    ``depth`` repeated square roots bring the spectrum near 1, a truncated
    Mercator series evaluates log on the remainder, and the result is scaled
    back by 2**depth. Raises ``SeriesDiverged`` when the remainder is not
    inside the unit ball.
    """
    r = np.asarray(c, dtype=np.complex128)
    sqrt_tapes = []
    for _ in range(depth):
        r, _, tape = ns_sqrt_batch(r, iters, guard=guard)
        sqrt_tapes.append(tape)
    n = r.shape[-1]
    e = r - np.eye(n, dtype=np.complex128)
    enorm = frob(e)
    if (enorm >= 1.0).any():
        raise SeriesDiverged(
            f"log series argument has norm {enorm.max():.3f} >= 1 after "
            f"{depth} square roots")

    epows = [e]
    for _ in range(1, terms):
        epows.append(epows[-1] @ e)
    out = np.zeros_like(e)
    for k in range(1, terms + 1):
        out += ((-1.0) ** (k + 1) / k) * epows[k - 1]
    out = (2.0 ** depth) * herm(out)
    return out, NsLogTape(sqrt_tapes, epows, depth, terms)


def ns_log_vjp(tape: NsLogTape, grad: np.ndarray) -> np.ndarray:
    g = (2.0 ** tape.depth) * herm(np.asarray(grad, dtype=np.complex128))
    epows = tape.epows
    n = epows[0].shape[-1]
    eyeb = np.broadcast_to(np.eye(n, dtype=np.complex128), epows[0].shape)
    hpows = [eyeb]  # (E^H)^0 .. (E^H)^{terms-1}
    for k in range(1, tape.terms):
        hpows.append(ct(epows[k - 1]))
    ge = np.zeros_like(g)
    for k in range(1, tape.terms + 1):
        a_k = (-1.0) ** (k + 1) / k
        for i in range(k):
            ge += a_k * (hpows[i] @ g @ hpows[k - 1 - i])
    for sq_tape in reversed(tape.sqrt_tapes):
        ge = ns_sqrt_vjp(sq_tape, gy=ge)
    return ge


@dataclass
class NsClampTape:
    sqrt_tape: NsSqrtTape
    m: np.ndarray


def ns_clamp_batch(c: np.ndarray, tau: float,
                   iters: int = NS_DEFAULT_ITERS):
    """Eigenvalue clamp max(c, tau*I) = ((c + tau*I) + |c - tau*I|) / 2.

    The matrix absolute value |M| = (M^2)^{1/2} is taken with the
    Newton-Schulz square root, so the whole operation is multiplication
    only and shares the eigenvectors of the input.
    """
    c = np.asarray(c, dtype=np.complex128)
    n = c.shape[-1]
    eye = np.eye(n, dtype=np.complex128)
    m = c - tau * eye
    # no ridge guard here: a zero eigenvalue of m*m is the ordinary case of
    # an input eigenvalue at the threshold and the iteration handles it
    y_abs, _, sqrt_tape = ns_sqrt_batch(m @ m, iters, guard=False)
    out = herm(0.5 * ((c + tau * eye) + y_abs))
    return out, NsClampTape(sqrt_tape, m)


def ns_clamp_vjp(tape: NsClampTape, grad: np.ndarray) -> np.ndarray:
    g = herm(np.asarray(grad, dtype=np.complex128))
    gc = 0.5 * g
    gmsq = ns_sqrt_vjp(tape.sqrt_tape, gy=0.5 * g)
    gm = gmsq @ ct(tape.m) + ct(tape.m) @ gmsq
    return gc + gm


# ---------------------------------------------------------------------------
# typed single-matrix operations


def make_hermitian(m: ComplexMatrix, require_pd: bool = True) -> HpdMatrix:
    """Project to the Hermitian part (m + m^H)/2 and wrap as HpdMatrix.

    With ``require_pd`` the smallest eigenvalue is verified to be positive
    and ``NotPositiveDefinite`` is raised otherwise.
    """
    h = HpdMatrix.from_z(herm(m.z))
    if require_pd:
        lam, _ = eigh_batch(h.z[None])
        if lam[0, 0] <= 0.0:
            raise NotPositiveDefinite(
                f"smallest eigenvalue {lam[0, 0]:.6g} is not positive")
    return h


def hermitian_eig(h: HpdMatrix) -> EigPair:
    """Deterministic eigendecomposition; see ``eigh_batch`` for the scheme."""
    lam, u = eigh_batch(h.z[None])
    return EigPair(u=ComplexMatrix.from_z(u[0]), lam=lam[0])


def matrix_fn_eig(h: HpdMatrix, f: Callable[[np.ndarray], np.ndarray]) -> ComplexMatrix:
    """Apply a scalar function to the eigenvalues: U diag(f(L)) U^H."""
    lam, u = eigh_batch(h.z[None])
    with np.errstate(all="ignore"):
        fvals = np.asarray(f(lam), dtype=np.float64)
    if not np.isfinite(fvals).all():
        raise DomainError("scalar function undefined at an eigenvalue "
                          f"(eigenvalues {lam[0]})")
    return ComplexMatrix.from_z(fn_from_eig(lam, u, fvals)[0])


def sqrt_ns(c: HpdMatrix, iters: int = NS_DEFAULT_ITERS):
    """Newton-Schulz square root; returns (y ~ c^{1/2}, zinv ~ c^{-1/2})."""
    y, zinv, _ = ns_sqrt_batch(c.z[None], iters)
    return HpdMatrix.from_z(y[0]), HpdMatrix.from_z(zinv[0])


def ns_iterates(c: HpdMatrix, iters: int = NS_DEFAULT_ITERS) -> Sequence[NsState]:
    """The successive coupled-iteration states, for inspection and tests."""
    _, _, tape = ns_sqrt_batch(c.z[None], iters, check=False)
    scale = float(tape.s[0])
    return [NsState(x=ComplexMatrix.from_z(x[0]),
                    z=ComplexMatrix.from_z(z[0]), scale=scale)
            for x, z in zip(tape.xs, tape.zs)]


def log_ns(c: HpdMatrix, depth: int = 4, series_terms: int = 8,
           iters: int = NS_DEFAULT_ITERS) -> ComplexMatrix:
    """Matrix logarithm on the fast path; Hermitian but not PD in general."""
    out, _ = ns_log_batch(c.z[None], depth, series_terms, iters)
    return ComplexMatrix.from_z(out[0])


def clamp_ns(c: HpdMatrix, tau: float,
             iters: int = NS_DEFAULT_ITERS) -> HpdMatrix:
    """Clamp eigenvalues to at least tau on the fast path."""
    if tau <= 0.0:
        raise DomainError(f"tau must be positive, got {tau}")
    out, _ = ns_clamp_batch(c.z[None], tau, iters)
    return HpdMatrix.from_z(out[0])


def regularize(c: ComplexMatrix | HpdMatrix, eps: float) -> HpdMatrix:
    """Add eps * I; HPD whenever eps exceeds |smallest eigenvalue|."""
    mat = c.mat if isinstance(c, HpdMatrix) else c
    z = mat.z
    return HpdMatrix.from_z(z + eps * np.eye(mat.n))
