"""Covariance-image data model, file format, patches, and synthesis.

A covariance image is an H x W grid of 3 x 3 HPD matrices with an optional
per-pixel label map (0 means unlabeled). On disk the image lives in the PC3
container:

    magic   4 bytes  b"PC3\\0"
    version u32 LE   low 16 bits: format version (1);
                     bit 16: label block present
    height  u32 LE
    width   u32 LE
    classes u32 LE   number of classes K (labels use 1..K)
    pixels  H*W*9 f32 LE, row-major per pixel:
            C11, C22, C33, ReC12, ImC12, ReC13, ImC13, ReC23, ImC23
    labels  H*W u16 LE, row-major (only when the flag bit is set)

Loading reconstructs the Hermitian matrix from the nine stored reals and
adds a relative diagonal ridge (1e-8 times the mean diagonal) so that every
pixel is safely positive definite in float64. The raw float32 block is kept
on the loaded image, which makes save(load(f)) byte-identical.

The synthetic generator draws each pixel as a multi-look sample mean
C = (1/L) sum_l k_l k_l^H with k_l zero-mean circular complex Gaussian
vectors of the per-class covariance, the textbook homogeneous-clutter
construction, so generated pixels are complex-Wishart distributed around
their class mean.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    BadSpec,
    DataError,
    NoLabeledPixels,
    NonFiniteEntry,
    TruncatedFile,
)

MAGIC = b"PC3\0"
FORMAT_VERSION = 1
LABELS_FLAG = 1 << 16
LOAD_RIDGE = 1e-8

_HEADER = struct.Struct("<IIII")  # version, height, width, classes


# ---------------------------------------------------------------------------
# data model


@dataclass(frozen=True)
class CovImage:
    """Grid of 3x3 HPD matrices plus an optional label map (0 = unlabeled)."""

    values: np.ndarray            # complex128 (H, W, 3, 3), regularized
    labels: np.ndarray | None     # uint16 (H, W)
    class_count: int
    raw9: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 4 or v.shape[2:] != (3, 3):
            raise DataError(f"expected (H, W, 3, 3) values, got {v.shape}")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != v.shape[:2]:
                raise DataError(
                    f"label map {lab.shape} does not match image {v.shape[:2]}")
            if lab.max(initial=0) > self.class_count:
                raise DataError(
                    f"label {lab.max()} exceeds class count {self.class_count}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PatchBatch:
    """Patches around labeled pixels, materialized lazily from the padded
    image; ``gather`` returns a (B, P, P, 3, 3) stack."""

    padded: np.ndarray            # complex (H + 2*pad, W + 2*pad, 3, 3)
    centers: np.ndarray           # (M, 2) row/col in the unpadded image
    labels: np.ndarray            # (M,) uint16, all nonzero
    p: int

    def __post_init__(self):
        if self.p % 2 != 1:
            raise DataError(f"patch size must be odd, got {self.p}")
        if len(self.labels) and self.labels.min() == 0:
            raise DataError("patch labels must be nonzero")

    def __len__(self) -> int:
        return len(self.labels)

    def gather(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        rows = self.centers[idx, 0][:, None] + np.arange(self.p)
        cols = self.centers[idx, 1][:, None] + np.arange(self.p)
        return self.padded[rows[:, :, None], cols[:, None, :]]

    def patch(self, i: int) -> np.ndarray:
        return self.gather([i])[0]


@dataclass(frozen=True)
class SceneSpec:
    """Geometry and statistics of a synthetic multi-look scene."""

    height: int
    width: int
    class_means: np.ndarray       # complex (K, 3, 3), each HPD
    looks: int
    rectangles: tuple             # (class_id, row0, col0, height, width)
    seed: int

    def __post_init__(self):
        means = np.asarray(self.class_means, dtype=np.complex128)
        object.__setattr__(self, "class_means", means)
        if self.looks < 3:
            raise BadSpec(f"need at least 3 looks for full rank, got {self.looks}")
        if means.ndim != 3 or means.shape[1:] != (3, 3):
            raise BadSpec(f"class means must be (K, 3, 3), got {means.shape}")
        k = means.shape[0]
        for cid, r0, c0, h, w in self.rectangles:
            if not 1 <= cid <= k:
                raise BadSpec(f"rectangle class {cid} outside 1..{k}")
            if r0 < 0 or c0 < 0 or r0 + h > self.height or c0 + w > self.width:
                raise BadSpec(f"rectangle {(cid, r0, c0, h, w)} out of bounds")
        for i, m in enumerate(means):
            if np.abs(m - m.conj().T).max() > 1e-10:
                raise BadSpec(f"class mean {i + 1} is not Hermitian")
            if np.linalg.eigvalsh(m).min() <= 0:
                raise BadSpec(f"class mean {i + 1} is not positive definite")

    @property
    def class_count(self) -> int:
        return self.class_means.shape[0]


# ---------------------------------------------------------------------------
# nine-real packing


def pack9(values: np.ndarray) -> np.ndarray:
    """(..., 3, 3) complex -> (..., 9) float: C11 C22 C33 then off-diag re/im."""
    out = np.empty(values.shape[:-2] + (9,), dtype=np.float64)
    out[..., 0] = values[..., 0, 0].real
    out[..., 1] = values[..., 1, 1].real
    out[..., 2] = values[..., 2, 2].real
    out[..., 3] = values[..., 0, 1].real
    out[..., 4] = values[..., 0, 1].imag
    out[..., 5] = values[..., 0, 2].real
    out[..., 6] = values[..., 0, 2].imag
    out[..., 7] = values[..., 1, 2].real
    out[..., 8] = values[..., 1, 2].imag
    return out


def unpack9(nine: np.ndarray) -> np.ndarray:
    """(..., 9) float -> (..., 3, 3) complex Hermitian."""
    nine = np.asarray(nine, dtype=np.float64)
    out = np.zeros(nine.shape[:-1] + (3, 3), dtype=np.complex128)
    out[..., 0, 0] = nine[..., 0]
    out[..., 1, 1] = nine[..., 1]
    out[..., 2, 2] = nine[..., 2]
    out[..., 0, 1] = nine[..., 3] + 1j * nine[..., 4]
    out[..., 0, 2] = nine[..., 5] + 1j * nine[..., 6]
    out[..., 1, 2] = nine[..., 7] + 1j * nine[..., 8]
    out[..., 1, 0] = np.conj(out[..., 0, 1])
    out[..., 2, 0] = np.conj(out[..., 0, 2])
    out[..., 2, 1] = np.conj(out[..., 1, 2])
    return out


def _ridge(values: np.ndarray) -> np.ndarray:
    mean_diag = np.einsum("...ii->...", values).real.mean() / 3.0
    eps = LOAD_RIDGE * max(mean_diag, 0.0)
    return values + eps * np.eye(3)


# ---------------------------------------------------------------------------
# PC3 container


def save_cov(path, img: CovImage) -> None:
    path = Path(path)
    version = FORMAT_VERSION | (LABELS_FLAG if img.labels is not None else 0)
    if img.raw9 is not None:
        block = np.ascontiguousarray(img.raw9, dtype="<f4")
    else:
        block = pack9(img.values).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(version, img.height, img.width, img.class_count))
        fh.write(block.tobytes())
        if img.labels is not None:
            fh.write(np.ascontiguousarray(img.labels, dtype="<u2").tobytes())


def load_cov(path) -> CovImage:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    if len(blob) < 4 + _HEADER.size:
        raise TruncatedFile(f"{path} is shorter than its header")
    version, height, width, classes = _HEADER.unpack_from(blob, 4)
    if version & 0xFFFF != FORMAT_VERSION:
        raise BadMagic(f"unsupported format version {version & 0xFFFF}")
    has_labels = bool(version & LABELS_FLAG)
    offset = 4 + _HEADER.size
    pixel_bytes = height * width * 9 * 4
    if len(blob) < offset + pixel_bytes:
        raise TruncatedFile(
            f"{path}: expected {pixel_bytes} pixel bytes, file ends early")
    raw9 = np.frombuffer(blob, dtype="<f4", count=height * width * 9,
                         offset=offset).reshape(height, width, 9)
    if not np.isfinite(raw9).all():
        raise NonFiniteEntry(f"{path} contains non-finite covariance entries")
    labels = None
    if has_labels:
        lab_off = offset + pixel_bytes
        lab_bytes = height * width * 2
        if len(blob) < lab_off + lab_bytes:
            raise TruncatedFile(f"{path}: label block ends early")
        labels = np.frombuffer(blob, dtype="<u2", count=height * width,
                               offset=lab_off).reshape(height, width).copy()
    values = _ridge(unpack9(raw9.astype(np.float64)))
    return CovImage(values=values, labels=labels, class_count=classes,
                    raw9=raw9.copy())


def load_labels_csv(path) -> np.ndarray:
    """Plain CSV of integers as an alternative label-map source."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([int(v) for v in row])
    if not rows:
        raise DataError(f"{path} holds no label rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DataError(f"{path} has ragged rows of widths {sorted(widths)}")
    lab = np.array(rows, dtype=np.uint16)
    return lab


def with_labels(img: CovImage, labels: np.ndarray,
                class_count: int | None = None) -> CovImage:
    labels = np.asarray(labels, dtype=np.uint16)
    k = int(labels.max()) if class_count is None else class_count
    return CovImage(values=img.values, labels=labels, class_count=k,
                    raw9=img.raw9)


def zero_imaginary(img: CovImage) -> CovImage:
    """Ablation ingest: drop all phase information, keep the real part."""
    values = img.values.real.astype(np.complex128)
    raw9 = None
    if img.raw9 is not None:
        raw9 = img.raw9.copy()
        raw9[..., [4, 6, 8]] = 0.0
    return CovImage(values=values, labels=img.labels,
                    class_count=img.class_count, raw9=raw9)


# ---------------------------------------------------------------------------
# patches


def extract_patches(img: CovImage, p: int, ratio: float, seed: int):
    """Mirror-pad, take one patch per labeled pixel, and split per class.

    The split is stratified: within every class the pixels are shuffled by
    the seeded generator and ``round(ratio * n)`` of them (at least one) go
    to the training side. Returns (train, test) PatchBatch.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"ratio must be in (0, 1), got {ratio}")
    if p % 2 != 1 or p < 1:
        raise DataError(f"patch size must be odd and positive, got {p}")
    if img.labels is None or not (img.labels > 0).any():
        raise NoLabeledPixels("image has no labeled pixels")

    pad = p // 2
    padded = np.pad(img.values, ((pad, pad), (pad, pad), (0, 0), (0, 0)),
                    mode="reflect") if pad else img.values
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    rows, cols = np.nonzero(img.labels)
    flat_labels = img.labels[rows, cols]
    for cls in range(1, img.class_count + 1):
        members = np.nonzero(flat_labels == cls)[0]
        if len(members) == 0:
            continue
        perm = rng.permutation(len(members))
        n_train = int(round(ratio * len(members)))
        n_train = min(max(n_train, 1), len(members))
        train_idx.append(members[perm[:n_train]])
        test_idx.append(members[perm[n_train:]])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx)) if any(
        len(t) for t in test_idx) else np.array([], dtype=int)

    def build(sel):
        centers = np.stack([rows[sel], cols[sel]], axis=1) if len(sel) else (
            np.zeros((0, 2), dtype=int))
        return PatchBatch(padded=padded, centers=centers,
                          labels=flat_labels[sel], p=p)

    return build(train_idx), build(test_idx)


def all_pixel_batch(img: CovImage, p: int) -> PatchBatch:
    """One patch per pixel regardless of labels, for full-map prediction."""
    pad = p // 2
    padded = np.pad(img.values, ((pad, pad), (pad, pad), (0, 0), (0, 0)),
                    mode="reflect") if pad else img.values
    rows, cols = np.meshgrid(np.arange(img.height), np.arange(img.width),
                             indexing="ij")
    centers = np.stack([rows.ravel(), cols.ravel()], axis=1)
    labels = np.ones(len(centers), dtype=np.uint16)
    return PatchBatch(padded=padded, centers=centers, labels=labels, p=p)


# ---------------------------------------------------------------------------
# synthetic scenes


def synth_scene(spec: SceneSpec) -> CovImage:
    """Sample a labeled multi-look Wishart scene; deterministic per seed."""
    label_map = np.zeros((spec.height, spec.width), dtype=np.uint16)
    for cid, r0, c0, h, w in spec.rectangles:
        label_map[r0:r0 + h, c0:c0 + w] = cid

    # unlabeled pixels sample from the average of the class means
    means = np.concatenate([spec.class_means.mean(axis=0)[None],
                            spec.class_means])
    chols = np.linalg.cholesky(means)
    rng = np.random.default_rng(spec.seed)
    values = np.empty((spec.height, spec.width, 3, 3), dtype=np.complex128)
    flat_labels = label_map.ravel()
    for cid in range(spec.class_count + 1):
        sel = np.nonzero(flat_labels == cid)[0]
        if len(sel) == 0:
            continue
        g = (rng.normal(size=(len(sel), spec.looks, 3))
             + 1j * rng.normal(size=(len(sel), spec.looks, 3))) / np.sqrt(2.0)
        k = np.einsum("ij,nlj->nli", chols[cid], g)
        cov = np.einsum("nli,nlj->nij", k, np.conj(k)) / spec.looks
        values.reshape(-1, 3, 3)[sel] = cov

    values = _ridge(values)
    return CovImage(values=values, labels=label_map,
                    class_count=spec.class_count)


def default_class_means() -> np.ndarray:
    """Three 3x3 HPD means; classes 1 and 2 share every modulus and differ
    only in the sign of the off-diagonal phases, so the imaginary part is
    the sole evidence separating them."""
    def mean(sig, rho12, rho13, rho23):
        m = np.diag(sig).astype(np.complex128)
        m[0, 1] = rho12 * np.sqrt(sig[0] * sig[1])
        m[0, 2] = rho13 * np.sqrt(sig[0] * sig[2])
        m[1, 2] = rho23 * np.sqrt(sig[1] * sig[2])
        m[1, 0], m[2, 0], m[2, 1] = (np.conj(m[0, 1]), np.conj(m[0, 2]),
                                     np.conj(m[1, 2]))
        return m

    phase = np.exp(1j * np.pi / 3)
    sig_a = (2.0, 1.0, 0.5)
    a = mean(sig_a, 0.55 * phase, 0.30 * np.conj(phase), 0.25 * phase)
    b = mean(sig_a, 0.55 * np.conj(phase), 0.30 * phase, 0.25 * np.conj(phase))
    c = mean((1.0, 1.4, 0.8), 0.20, 0.10, 0.15)
    return np.stack([a, b, c])


def default_scene_spec(seed: int = 0, height: int = 128,
                       width: int = 128, looks: int = 4) -> SceneSpec:
    """The desk-scale three-band scene used by the end-to-end experiments."""
    h1 = height // 3
    h2 = 2 * height // 3
    rects = ((1, 0, 0, h1, width),
             (2, h1, 0, h2 - h1, width),
             (3, h2, 0, height - h2, width))
    return SceneSpec(height=height, width=width,
                     class_means=default_class_means(), looks=looks,
                     rectangles=rects, seed=seed)
