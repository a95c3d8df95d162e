"""Complex-valued 3D convolutional head over tangent-space features.

The head consumes a rank-4 complex tensor (rows x cols x channels x
features), applies complex 3D convolutions with part-wise ReLU and part-wise
max pooling, flattens real and imaginary parts into one real vector, and
classifies with a dense layer + softmax under cross-entropy.

Conventions, stated once because the underlying arithmetic is easy to get
wrong:

* convolution is cross-correlation (no kernel flip) with "valid" padding;
* the complex multiply-accumulate is the standard product
  (re*re - im*im) + j(re*im + im*re);
* a kernel has shape (M, M, R, K) with no input-feature axis; input
  features are summed under the shared kernel, so the output feature count
  is K regardless of the input's F;
* pooling maxes real and imaginary parts independently over 2x2 spatial
  blocks, dropping trailing rows/columns that do not fill a block;
* flattening is row-major over (row, col, channel, feature), the real block
  before the imaginary block.

Gradients treat the real and imaginary parts of every complex parameter as
independent real parameters, i.e. a complex gradient g = dL/dRe + j dL/dIm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadLabel, DimensionMismatch, KernelTooLarge, TapeMismatch


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class ComplexTensor:
    """Rank-4 complex feature tensor with separate real/imaginary storage."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.ndim != 4 or re.shape != im.shape:
            raise DimensionMismatch(
                f"expected matching rank-4 parts, got {re.shape} and {im.shape}")
        if not (np.isfinite(re).all() and np.isfinite(im).all()):
            raise DimensionMismatch("tensor entries must be finite")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @property
    def dims(self):
        return self.re.shape

    @property
    def z(self) -> np.ndarray:
        return self.re + 1j * self.im

    @staticmethod
    def from_z(z: np.ndarray) -> "ComplexTensor":
        z = np.asarray(z)
        return ComplexTensor(z.real, z.imag)


@dataclass(frozen=True)
class ConvKernel:
    """K complex filters of spatial size M x M and channel depth R."""

    weights: np.ndarray  # complex (M, M, R, K)
    bias: np.ndarray     # complex (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.complex128)
        b = np.asarray(self.bias, dtype=np.complex128)
        if w.ndim != 4 or w.shape[0] != w.shape[1]:
            raise DimensionMismatch(f"kernel shape {w.shape} is not (M, M, R, K)")
        if w.shape[0] % 2 == 0:
            raise DimensionMismatch(f"spatial size {w.shape[0]} must be odd")
        if b.shape != (w.shape[3],):
            raise DimensionMismatch(
                f"bias shape {b.shape} does not match {w.shape[3]} filters")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class HeadParams:
    """Conv stack (with optional pooling after each stage) plus the dense
    classifier over the flattened real/imaginary vector."""

    convs: tuple            # ConvKernel per stage
    pool_after: tuple       # bool per stage
    dense_w: np.ndarray     # real (classes, flat_len)
    dense_b: np.ndarray     # real (classes,)

    def __post_init__(self):
        if len(self.convs) != len(self.pool_after):
            raise DimensionMismatch("pool_after must match the conv stack")
        object.__setattr__(self, "dense_w",
                           np.asarray(self.dense_w, dtype=np.float64))
        object.__setattr__(self, "dense_b",
                           np.asarray(self.dense_b, dtype=np.float64))

    @property
    def classes(self) -> int:
        return self.dense_w.shape[0]


# ---------------------------------------------------------------------------
# batched stage primitives; x is complex with shape (B, H, W, C, F)


def _windows(x: np.ndarray, m: int, r: int) -> np.ndarray:
    # (B, H', W', C', F, M, M, R)
    return sliding_window_view(x, (m, m, r), axis=(1, 2, 3))


def cconv3d_batch(x: np.ndarray, ker: ConvKernel):
    b, h, w, c, f = x.shape
    m, _, r, k = ker.shape
    if m > h or m > w or r > c:
        raise KernelTooLarge(
            f"kernel (M={m}, R={r}) does not fit input (H={h}, W={w}, C={c})")
    # input features share the kernel, so they can be summed up front
    win = _windows(x, m, r).sum(axis=4)
    out = np.tensordot(win, ker.weights, axes=([4, 5, 6], [0, 1, 2]))
    out += ker.bias
    return out, {"x_in": x, "win": win, "kshape": ker.shape}


def cconv3d_vjp(ker: ConvKernel, tape: dict, g: np.ndarray):
    x = tape["x_in"]
    m, _, r, k = ker.shape
    g_w = np.tensordot(np.conj(tape["win"]), g,
                       axes=([0, 1, 2, 3], [0, 1, 2, 3]))
    g_b = g.sum(axis=(0, 1, 2, 3))
    gx = np.zeros_like(x)
    hp, wp, cp = g.shape[1], g.shape[2], g.shape[3]
    for i in range(m):
        for j in range(m):
            for dr in range(r):
                contrib = np.tensordot(g, np.conj(ker.weights[i, j, dr]),
                                       axes=([4], [0]))
                gx[:, i:i + hp, j:j + wp, dr:dr + cp, :] += contrib[..., None]
    return g_w, g_b, gx


def crelu_batch(x: np.ndarray):
    mask_re = x.real > 0.0
    mask_im = x.imag > 0.0
    out = x.real * mask_re + 1j * (x.imag * mask_im)
    return out, {"mask_re": mask_re, "mask_im": mask_im}


def crelu_vjp(tape: dict, g: np.ndarray) -> np.ndarray:
    return g.real * tape["mask_re"] + 1j * (g.imag * tape["mask_im"])


def cpool_batch(x: np.ndarray, window: int = 2):
    b, h, w, c, f = x.shape
    h2, w2 = h // window, w // window
    crop = x[:, :h2 * window, :w2 * window]
    blocks = crop.reshape(b, h2, window, w2, window, c, f)
    blocks = blocks.transpose(0, 1, 3, 5, 6, 2, 4).reshape(
        b, h2, w2, c, f, window * window)
    idx_re = np.argmax(blocks.real, axis=-1)
    idx_im = np.argmax(blocks.imag, axis=-1)
    out_re = np.take_along_axis(blocks.real, idx_re[..., None], axis=-1)[..., 0]
    out_im = np.take_along_axis(blocks.imag, idx_im[..., None], axis=-1)[..., 0]
    return out_re + 1j * out_im, {"idx_re": idx_re, "idx_im": idx_im,
                                  "in_shape": x.shape, "window": window}


def cpool_vjp(tape: dict, g: np.ndarray) -> np.ndarray:
    b, h, w, c, f = tape["in_shape"]
    window = tape["window"]
    h2, w2 = h // window, w // window
    flat_re = np.zeros((b, h2, w2, c, f, window * window))
    flat_im = np.zeros_like(flat_re)
    np.put_along_axis(flat_re, tape["idx_re"][..., None],
                      g.real[..., None], axis=-1)
    np.put_along_axis(flat_im, tape["idx_im"][..., None],
                      g.imag[..., None], axis=-1)
    flat = flat_re + 1j * flat_im
    blocks = flat.reshape(b, h2, w2, c, f, window, window)
    blocks = blocks.transpose(0, 1, 5, 2, 6, 3, 4)
    gx = np.zeros((b, h, w, c, f), dtype=np.complex128)
    gx[:, :h2 * window, :w2 * window] = blocks.reshape(
        b, h2 * window, w2 * window, c, f)
    return gx


def flatten_batch(x: np.ndarray):
    b = x.shape[0]
    v = np.concatenate([x.real.reshape(b, -1), x.imag.reshape(b, -1)], axis=1)
    return v, {"in_shape": x.shape}


def flatten_vjp(tape: dict, g: np.ndarray) -> np.ndarray:
    shape = tape["in_shape"]
    half = g.shape[1] // 2
    return (g[:, :half].reshape(shape)
            + 1j * g[:, half:].reshape(shape))


def softmax_xent_batch(logits: np.ndarray, labels: np.ndarray):
    """Stable softmax + cross-entropy; returns per-sample losses and probs."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    picked = probs[np.arange(len(labels)), labels]
    losses = -np.log(np.maximum(picked, np.finfo(np.float64).tiny))
    return losses, probs


# ---------------------------------------------------------------------------
# full head


def head_forward_batch(params: HeadParams, x: np.ndarray):
    """Conv stack -> flatten -> dense logits on a (B, H, W, C, F) input."""
    entries = []
    cur = np.asarray(x, dtype=np.complex128)
    for ker, pool in zip(params.convs, params.pool_after):
        cur, conv_tape = cconv3d_batch(cur, ker)
        cur, relu_tape = crelu_batch(cur)
        pool_tape = None
        if pool:
            cur, pool_tape = cpool_batch(cur)
        entries.append({"conv": conv_tape, "relu": relu_tape,
                        "pool": pool_tape})
    v, flat_tape = flatten_batch(cur)
    if v.shape[1] != params.dense_w.shape[1]:
        raise DimensionMismatch(
            f"dense layer expects length {params.dense_w.shape[1]}, "
            f"flattened input has {v.shape[1]}")
    logits = v @ params.dense_w.T + params.dense_b
    tape = {"entries": entries, "flat": flat_tape, "v": v,
            "n_convs": len(params.convs)}
    return logits, tape


@dataclass
class HeadGrads:
    conv_w: list
    conv_b: list
    dense_w: np.ndarray
    dense_b: np.ndarray
    x: np.ndarray


def head_backward_batch(params: HeadParams, tape: dict,
                        g_logits: np.ndarray) -> HeadGrads:
    if tape.get("n_convs") != len(params.convs):
        raise TapeMismatch("tape does not match the head parameters")
    v = tape["v"]
    g_dense_w = g_logits.T @ v
    g_dense_b = g_logits.sum(axis=0)
    gv = g_logits @ params.dense_w
    g = flatten_vjp(tape["flat"], gv)
    conv_w, conv_b = [], []
    for ker, entry in zip(reversed(params.convs), reversed(tape["entries"])):
        if entry["pool"] is not None:
            g = cpool_vjp(entry["pool"], g)
        g = crelu_vjp(entry["relu"], g)
        gw, gb, g = cconv3d_vjp(ker, entry["conv"], g)
        conv_w.append(gw)
        conv_b.append(gb)
    conv_w.reverse()
    conv_b.reverse()
    return HeadGrads(conv_w=conv_w, conv_b=conv_b, dense_w=g_dense_w,
                     dense_b=g_dense_b, x=g)


def init_head(input_shape, classes: int, seed: int,
              conv_specs=((3, 3, 16), (3, 2, 32)),
              pool_after=(True, False)) -> HeadParams:
    """Seeded default head sized to the input.

    ``conv_specs`` lists (M, R, K) per stage. The default two-stage stack is
    sized for 13 x 13 x 6 patches: conv(3,3,3,16) -> pool -> conv(3,3,2,32).
    """
    rng = np.random.default_rng(seed)
    h, w, c = input_shape
    f = 1
    convs = []
    for (m, r, k), pool in zip(conv_specs, pool_after):
        fan_in = m * m * r * f
        scale = 1.0 / np.sqrt(2.0 * fan_in)
        weights = scale * (rng.normal(size=(m, m, r, k))
                           + 1j * rng.normal(size=(m, m, r, k)))
        convs.append(ConvKernel(weights=weights,
                                bias=np.zeros(k, dtype=np.complex128)))
        h, w, c, f = h - m + 1, w - m + 1, c - r + 1, k
        if pool:
            h, w = h // 2, w // 2
        if h < 1 or w < 1 or c < 1:
            raise KernelTooLarge(
                f"conv stack exhausts the input at stage (M={m}, R={r})")
    flat_len = 2 * h * w * c * f
    dense_w = 0.01 * rng.normal(size=(classes, flat_len))
    dense_b = np.zeros(classes)
    return HeadParams(convs=tuple(convs), pool_after=tuple(pool_after),
                      dense_w=dense_w, dense_b=dense_b)


# ---------------------------------------------------------------------------
# typed single-sample operations


def cconv3d(x: ComplexTensor, k: ConvKernel, stride: int = 1) -> ComplexTensor:
    """Valid-padding complex correlation over M x M x R windows."""
    if stride != 1:
        raise DimensionMismatch("only stride 1 is supported")
    out, _ = cconv3d_batch(x.z[None], k)
    return ComplexTensor.from_z(out[0])


def crelu(x: ComplexTensor) -> ComplexTensor:
    """Elementwise ReLU on real and imaginary parts independently."""
    out, _ = crelu_batch(x.z[None])
    return ComplexTensor.from_z(out[0])


def cpool(x: ComplexTensor, window: int = 2) -> ComplexTensor:
    """Part-wise spatial max pooling; trailing rows/cols are dropped."""
    out, _ = cpool_batch(x.z[None], window)
    return ComplexTensor.from_z(out[0])


def flatten_to_real(x: ComplexTensor) -> np.ndarray:
    """Row-major flatten, real block then imaginary block."""
    v, _ = flatten_batch(x.z[None])
    return v[0]


def dense_softmax_xent(v: np.ndarray, params: HeadParams, label: int):
    """Dense logits -> stable softmax -> cross-entropy at the given label."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.dense_w.shape[1],):
        raise DimensionMismatch(
            f"expected vector of length {params.dense_w.shape[1]}, "
            f"got {v.shape}")
    if not 0 <= label < params.classes:
        raise BadLabel(f"label {label} outside 0..{params.classes - 1}")
    logits = (v @ params.dense_w.T + params.dense_b)[None]
    losses, probs = softmax_xent_batch(logits, np.array([label]))
    return float(losses[0]), probs[0]


def head_backward(params: HeadParams, tape: dict,
                  g_logits: np.ndarray) -> HeadGrads:
    """Single-sample wrapper over the batched backward pass."""
    g = np.asarray(g_logits, dtype=np.float64)
    if g.ndim == 1:
        g = g[None]
    return head_backward_batch(params, tape, g)
