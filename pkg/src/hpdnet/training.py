"""End-to-end training and evaluation of the Riemannian network + CV head.

The pipeline applies the HPD network per pixel of a patch (shared weights),
maps each resulting tangent matrix to six complex channels (the three real
diagonal entries and the three upper off-diagonals, in the fixed order
C11, C22, C33, C12, C13, C23), stacks them into a P x P x 6 x 1 complex
tensor and classifies with the convolutional head. Training is joint: one
cross-entropy loss, gradients flow through the LogEig projection into the
BiMap weights.

Weight updates follow the pragmatic manifold-Adam recipe: moments live on
the ambient gradient, the Adam direction is projected onto the Stiefel
tangent space, and the step is retracted by QR. Head parameters use plain
Adam. All reductions run in a fixed order, so a fixed seed reproduces the
final checkpoint bytes exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import head as hd
from . import layers as ly
from .data import CovImage, PatchBatch, all_pixel_batch
from .errors import DataError, Diverged, EmptyTestSet
from .linalg import herm

TAU_RELATIVE = 1e-4

PALETTE = np.array([
    (230, 75, 53), (77, 175, 74), (55, 126, 184), (255, 215, 0),
    (152, 78, 163), (255, 127, 0), (166, 86, 40), (247, 129, 191),
    (102, 194, 165), (141, 160, 203), (229, 196, 148), (60, 180, 170),
], dtype=np.uint8)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    epochs: int = 50
    batch: int = 64
    ratio: float = 0.1
    patch: int = 13
    tau: float | None = None      # None: 1e-4 * mean trace / order
    seed: int = 0
    path: str = "exact"           # "exact" | "fast"
    optimizer: str = "adam"       # "adam" | "sgd"
    dims: tuple = (3, 3, 3)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 0 or self.batch < 1:
            raise DataError("lr, epochs and batch must be positive")
        if not 0 < self.ratio < 1:
            raise DataError(f"ratio must be in (0, 1), got {self.ratio}")
        if self.patch % 2 != 1:
            raise DataError(f"patch size must be odd, got {self.patch}")
        if self.path not in ("exact", "fast"):
            raise DataError(f"unknown path {self.path!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class ConfusionReport:
    matrix: np.ndarray            # (K, K) counts, rows = true class
    per_class_acc: np.ndarray
    oa: float
    aa: float
    kappa: float

    @staticmethod
    def from_counts(matrix: np.ndarray) -> "ConfusionReport":
        matrix = np.asarray(matrix, dtype=np.int64)
        total = matrix.sum()
        row = matrix.sum(axis=1)
        col = matrix.sum(axis=0)
        diag = np.diagonal(matrix)
        per_class = np.divide(diag, row, out=np.zeros(len(row)),
                              where=row > 0)
        oa = diag.sum() / total if total else 0.0
        aa = per_class[row > 0].mean() if (row > 0).any() else 0.0
        pe = float((row * col).sum()) / (total * total) if total else 0.0
        kappa = (oa - pe) / (1.0 - pe) if pe < 1.0 else 1.0
        return ConfusionReport(matrix=matrix, per_class_acc=per_class,
                               oa=float(oa), aa=float(aa), kappa=float(kappa))

    def to_json(self) -> str:
        return json.dumps({
            "confusion": self.matrix.tolist(),
            "per_class_acc": [round(v, 6) for v in self.per_class_acc],
            "oa": round(self.oa, 6),
            "aa": round(self.aa, 6),
            "kappa": round(self.kappa, 6),
        }, indent=2)


# ---------------------------------------------------------------------------
# tangent matrix <-> channel vector


def herm_to_channels(y: np.ndarray) -> np.ndarray:
    """(..., 3, 3) Hermitian -> (..., 6, 1) complex channels."""
    out = np.empty(y.shape[:-2] + (6, 1), dtype=np.complex128)
    out[..., 0, 0] = y[..., 0, 0].real
    out[..., 1, 0] = y[..., 1, 1].real
    out[..., 2, 0] = y[..., 2, 2].real
    out[..., 3, 0] = y[..., 0, 1]
    out[..., 4, 0] = y[..., 0, 2]
    out[..., 5, 0] = y[..., 1, 2]
    return out


def channels_grad_to_herm(g: np.ndarray) -> np.ndarray:
    """Pull a channel-space gradient back to the Hermitian matrix convention.

    Diagonal channels carry only the real degree of freedom, so imaginary
    gradient components there are discarded; each off-diagonal gradient is
    split evenly between the conjugate pair.
    """
    out = np.zeros(g.shape[:-2] + (3, 3), dtype=np.complex128)
    out[..., 0, 0] = g[..., 0, 0].real
    out[..., 1, 1] = g[..., 1, 0].real
    out[..., 2, 2] = g[..., 2, 0].real
    out[..., 0, 1] = 0.5 * g[..., 3, 0]
    out[..., 0, 2] = 0.5 * g[..., 4, 0]
    out[..., 1, 2] = 0.5 * g[..., 5, 0]
    out[..., 1, 0] = np.conj(out[..., 0, 1])
    out[..., 2, 0] = np.conj(out[..., 0, 2])
    out[..., 2, 1] = np.conj(out[..., 1, 2])
    return out


# ---------------------------------------------------------------------------
# pipeline


def pipeline_forward_batch(params: ly.HpdNetParams, head: hd.HeadParams,
                           patches: np.ndarray, path: str = "exact"):
    """(B, P, P, 3, 3) patches -> (logits, probs, tape bundle)."""
    b, p, _, n, _ = patches.shape
    flat = patches.reshape(b * p * p, n, n)
    tangent, net_tape = ly.hpdnet_forward_batch(params, flat, path)
    m = tangent.shape[-1]
    chans = herm_to_channels(tangent.reshape(b, p, p, m, m))
    logits, head_tape = hd.head_forward_batch(head, chans)
    shifted = logits - logits.max(axis=1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=1, keepdims=True)
    return logits, probs, {"net": net_tape, "head": head_tape,
                           "shape": (b, p, m)}


def pipeline_backward_batch(params: ly.HpdNetParams, head: hd.HeadParams,
                            tape: dict, g_logits: np.ndarray):
    """Gradients for the network weights and all head parameters."""
    b, p, m = tape["shape"]
    head_grads = hd.head_backward_batch(head, tape["head"], g_logits)
    g_herm = channels_grad_to_herm(head_grads.x)
    g_flat = g_herm.reshape(b * p * p, m, m)
    gws, _ = ly.hpdnet_backward_batch(params, tape["net"], g_flat)
    return gws, head_grads


def forward_pipeline(params: ly.HpdNetParams, head: hd.HeadParams,
                     patch: np.ndarray, path: str = "exact") -> np.ndarray:
    """Class probabilities for one P x P grid of HPD matrices."""
    _, probs, _ = pipeline_forward_batch(params, head,
                                         np.asarray(patch)[None], path)
    return probs[0]


# ---------------------------------------------------------------------------
# optimizer state


class _Adam:
    def __init__(self, shapes_like, beta1, beta2, eps):
        self.m = [np.zeros_like(self._as_real(a)) for a in shapes_like]
        self.v = [np.zeros_like(self._as_real(a)) for a in shapes_like]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    @staticmethod
    def _as_real(a):
        return a.view(np.float64) if np.iscomplexobj(a) else a

    def step(self, grads):
        """Bias-corrected Adam directions, one per parameter array."""
        self.t += 1
        out = []
        for i, g in enumerate(grads):
            gr = self._as_real(np.ascontiguousarray(g))
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * gr
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * gr * gr
            mhat = self.m[i] / (1 - self.beta1 ** self.t)
            vhat = self.v[i] / (1 - self.beta2 ** self.t)
            d = mhat / (np.sqrt(vhat) + self.eps)
            out.append(d.view(np.complex128) if np.iscomplexobj(g) else d)
        return out


def head_specs_for_patch(p: int):
    """Conv stack sized to the patch: the full two-stage stack with pooling
    needs at least 9 pixels; smaller patches drop pooling, then stages."""
    if p >= 9:
        return ((3, 3, 16), (3, 2, 32)), (True, False)
    if p >= 5:
        return ((3, 3, 16), (3, 2, 32)), (False, False)
    if p >= 3:
        return ((3, 3, 16),), (False,)
    return (), ()


def _tau_from_batch(batch: PatchBatch, order: int) -> float:
    """Relative rectification floor: 1e-4 * mean trace / order over the
    pixels the training patches actually see."""
    tr = np.einsum("...ii->...", batch.padded).real
    ii = tr.cumsum(axis=0).cumsum(axis=1)
    ii = np.pad(ii, ((1, 0), (1, 0)))
    p = batch.p
    r = batch.centers[:, 0]
    c = batch.centers[:, 1]
    sums = (ii[r + p, c + p] - ii[r, c + p] - ii[r + p, c] + ii[r, c])
    return TAU_RELATIVE * float(sums.mean()) / (p * p) / order


# ---------------------------------------------------------------------------
# training


def train(config: TrainConfig, data: PatchBatch):
    """Mini-batch training; returns (params, head, history rows).

    ``data`` is the training PatchBatch. History rows are
    (epoch, mean_loss, train_accuracy), one per epoch.
    """
    if len(data) == 0:
        raise DataError("empty training set")
    classes = int(data.labels.max())
    counts = np.bincount(data.labels, minlength=classes + 1)
    if (counts[1:] == 0).any():
        missing = [c for c in range(1, classes + 1) if counts[c] == 0]
        raise DataError(f"classes without training patches: {missing}")

    order = data.padded.shape[-1]
    tau = config.tau if config.tau is not None else _tau_from_batch(data, order)
    params = ly.init_params(config.dims, tau, config.seed)
    conv_specs, pool_after = head_specs_for_patch(config.patch)
    head = hd.init_head((config.patch, config.patch, 6), classes,
                        config.seed + 1, conv_specs, pool_after)

    w_arrays = [w.w for w, _ in params.layers]
    head_arrays = ([k.weights for k in head.convs]
                   + [k.bias for k in head.convs]
                   + [head.dense_w, head.dense_b])
    opt_net = _Adam(w_arrays, config.beta1, config.beta2, config.adam_eps)
    opt_head = _Adam(head_arrays, config.beta1, config.beta2, config.adam_eps)

    rng = np.random.default_rng(config.seed + 2)
    labels0 = data.labels.astype(np.int64) - 1
    eye_k = np.eye(classes)
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(data))
        losses = []
        correct = 0
        for start in range(0, len(data), config.batch):
            sel = perm[start:start + config.batch]
            patches = data.gather(sel)
            labels = labels0[sel]
            logits, probs, tape = pipeline_forward_batch(
                params, head, patches, config.path)
            picked = probs[np.arange(len(sel)), labels]
            loss = float(-np.log(np.maximum(
                picked, np.finfo(np.float64).tiny)).mean())
            if not np.isfinite(loss):
                raise Diverged(f"loss became {loss} at epoch {epoch}")
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == labels).sum())

            g_logits = (probs - eye_k[labels]) / len(sel)
            gws, hg = pipeline_backward_batch(params, head, tape, g_logits)

            if config.optimizer == "adam":
                net_dirs = opt_net.step(gws)
                head_dirs = opt_head.step(
                    hg.conv_w + hg.conv_b + [hg.dense_w, hg.dense_b])
            else:
                net_dirs = gws
                head_dirs = hg.conv_w + hg.conv_b + [hg.dense_w, hg.dense_b]

            new_layers = []
            for (w, t), d in zip(params.layers, net_dirs):
                tangent = ly.stiefel_project(w.w, d)
                new_layers.append((ly.stiefel_update(w, tangent, config.lr), t))
            params = ly.HpdNetParams(tuple(new_layers))

            n_conv = len(head.convs)
            convs = tuple(
                hd.ConvKernel(k.weights - config.lr * head_dirs[i],
                              k.bias - config.lr * head_dirs[n_conv + i])
                for i, k in enumerate(head.convs))
            head = hd.HeadParams(
                convs=convs, pool_after=head.pool_after,
                dense_w=head.dense_w - config.lr * head_dirs[2 * n_conv],
                dense_b=head.dense_b - config.lr * head_dirs[2 * n_conv + 1])

        history.append((epoch, float(np.mean(losses)) if losses else 0.0,
                        correct / len(data)))
    return params, head, history


# ---------------------------------------------------------------------------
# evaluation


def _predict_batches(params, head, batch: PatchBatch, path: str,
                     chunk: int = 256) -> np.ndarray:
    preds = np.empty(len(batch), dtype=np.int64)
    for start in range(0, len(batch), chunk):
        idx = np.arange(start, min(start + chunk, len(batch)))
        _, probs, _ = pipeline_forward_batch(params, head,
                                             batch.gather(idx), path)
        preds[idx] = probs.argmax(axis=1)
    return preds


def evaluate(params: ly.HpdNetParams, head: hd.HeadParams,
             test: PatchBatch, path: str = "exact") -> ConfusionReport:
    """Arg-max classification of the test patches (ties pick the lowest
    class id) folded into the confusion matrix."""
    if len(test) == 0:
        raise EmptyTestSet("no test patches")
    classes = head.classes
    preds = _predict_batches(params, head, test, path)
    truth = test.labels.astype(np.int64) - 1
    matrix = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(matrix, (truth, preds), 1)
    return ConfusionReport.from_counts(matrix)


def predict_map(params: ly.HpdNetParams, head: hd.HeadParams,
                img: CovImage, patch: int = 13, path: str = "exact"):
    """Classify every pixel; returns (class map 1..K, RGB palette image)."""
    batch = all_pixel_batch(img, patch)
    preds = _predict_batches(params, head, batch, path)
    class_map = (preds + 1).astype(np.uint16).reshape(img.height, img.width)
    rgb = PALETTE[(class_map.astype(np.int64) - 1) % len(PALETTE)]
    return class_map, rgb


# ---------------------------------------------------------------------------
# artifacts


def save_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "train_acc"])
        for epoch, loss, acc in history:
            writer.writerow([epoch, f"{loss:.8f}", f"{acc:.6f}"])


def save_ppm(path, rgb: np.ndarray) -> None:
    """Binary PPM (P6) image writer."""
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
