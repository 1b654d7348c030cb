"""Shallow per-stage classifier replacing the exhaustive stage scan.

Architecture (fixed): input = [real(vec(B)); imag(vec(B))] after column
phase canonicalization (2 d m reals), one fully connected ReLU layer of
width 15 * 2 d m with dropout during training, and a fully connected
softmax output over the 2^bits codebook entries, trained with
cross-entropy on labels from the exhaustive stage search.

A trained network is bound to the exact codebook it was labeled against
(content fingerprint); pairing it with any other codebook is refused.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .codebook import StageCodebook
from .errors import BindingMismatchError, CodebookFormatError, TrainingFailure
from .numerics import complex_gaussian

_NET_MAGIC = b"GQNN"
_NET_VERSION = 1
HIDDEN_MULTIPLIER = 15


def canonicalize(b: np.ndarray) -> np.ndarray:
    """Phase-canonical real feature vector of a d-by-m basis.

    Each column is rotated by the phase of its first entry so the first row
    becomes real (nonnegative); columns whose first entry is negligible
    (< 1e-12) are rotated by the phase of their largest-magnitude entry
    instead, and left untouched if the whole column is negligible. The
    result is [real(vec(B)); imag(vec(B))] with column-major vec, length
    2 d m; it is invariant to per-column phase rotations of b.
    """
    b = np.asarray(b, dtype=np.complex128)
    if b.ndim == 1:
        b = b[:, None]
    out = b.copy()
    for j in range(out.shape[1]):
        pivot = out[0, j]
        if abs(pivot) < 1e-12:
            k = int(np.argmax(np.abs(out[:, j])))
            pivot = out[k, j]
            if abs(pivot) < 1e-12:
                continue
            out[:, j] *= np.conj(pivot) / abs(pivot)
        else:
            out[:, j] *= np.conj(pivot) / abs(pivot)
            out[0, j] = abs(pivot)  # imaginary part exactly zero
    flat = out.ravel(order="F")
    return np.concatenate([flat.real, flat.imag])


def canonicalize_many(bs: np.ndarray) -> np.ndarray:
    """Vectorized canonicalize for stacked bases (s, d, m) -> (s, 2 d m).

    Assumes non-degenerate first-row entries (the isotropic training/eval
    distribution hits the degenerate case with probability zero); falls
    back to identity rotation for negligible pivots.
    """
    if bs.ndim == 2:
        bs = bs[:, :, None]
    pivots = bs[:, 0, :]
    absp = np.abs(pivots)
    rot = np.where(absp > 1e-12, np.conj(pivots) / np.where(absp > 0, absp, 1.0), 1.0)
    canon = bs * rot[:, None, :]
    s, d, m = canon.shape
    flat = canon.transpose(0, 2, 1).reshape(s, d * m)  # column-major vec per sample
    return np.concatenate([flat.real, flat.imag], axis=1)


@dataclass
class StageNetwork:
    """Two-layer softmax classifier for one quantizer stage."""

    input_dim: int  # d
    subspace_dim: int  # m
    bits: int
    dropout_rate: float
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    codebook_fingerprint: bytes
    codebook_seed: int

    @property
    def feature_dim(self) -> int:
        return 2 * self.input_dim * self.subspace_dim

    @property
    def hidden_dim(self) -> int:
        return HIDDEN_MULTIPLIER * self.feature_dim

    @property
    def num_classes(self) -> int:
        return 1 << self.bits

    def require_binding(self, sc: StageCodebook) -> None:
        """Refuse to operate against a codebook the net was not trained for."""
        if sc.fingerprint() != self.codebook_fingerprint:
            raise BindingMismatchError(
                f"network trained for codebook (d={self.input_dim}, "
                f"bits={self.bits}, seed={self.codebook_seed}) does not "
                "match the supplied one")


def init_network(sc: StageCodebook, subspace_dim: int, dropout_rate: float = 0.1,
                 seed: int = 0, structured: bool = False) -> StageNetwork:
    """Fresh network bound to sc.

    Default init is fan-in scaled uniform. structured=True instead seeds
    the hidden layer with ridge directions Re(e^{i theta} q_j^H .) built
    from the codebook's own complement vectors (the quantities whose
    magnitudes the network has to rank), with the matching output-layer
    penalties; at the narrow widths of the low-dimensional stages this
    starts training inside the relevant basin instead of asking the
    optimizer to discover it.
    """
    feature_dim = 2 * sc.input_dim * subspace_dim
    hidden = HIDDEN_MULTIPLIER * feature_dim
    classes = sc.size
    rng = np.random.default_rng(seed)
    if structured:
        w1, w2 = _structured_layers(sc, subspace_dim, hidden, rng)
    else:
        lim1 = np.sqrt(6.0 / feature_dim)
        lim2 = np.sqrt(6.0 / hidden)
        w1 = rng.uniform(-lim1, lim1, (feature_dim, hidden))
        w2 = rng.uniform(-lim2, lim2, (hidden, classes))
    return StageNetwork(
        input_dim=sc.input_dim,
        subspace_dim=subspace_dim,
        bits=sc.bits,
        dropout_rate=dropout_rate,
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=np.zeros(classes),
        codebook_fingerprint=sc.fingerprint(),
        codebook_seed=sc.seed,
    )


def _structured_layers(sc: StageCodebook, subspace_dim: int, hidden: int,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    d = sc.input_dim
    classes = sc.size
    w1 = np.zeros((2 * d * subspace_dim, hidden))
    w2 = np.zeros((hidden, classes))
    base = hidden // classes
    extra = hidden - base * classes
    unit = 0
    for j in range(classes):
        ridges = base + (1 if j < extra else 0)
        for a in range(ridges):
            theta = np.pi * a / max(1, ridges)
            ridge = np.exp(1j * theta) * sc.complements[j]
            # Re(ridge^H b) per column of b: [Re ridge; Im ridge] blocks in
            # the column-major [real(vec); imag(vec)] feature layout
            for col in range(subspace_dim):
                w1[col * d:(col + 1) * d, unit] = ridge.real
                w1[d * subspace_dim + col * d:
                   d * subspace_dim + (col + 1) * d, unit] = ridge.imag
            w2[unit, j] = -4.0
            unit += 1
    w1 += rng.uniform(-0.01, 0.01, w1.shape)
    w2 += rng.uniform(-0.01, 0.01, w2.shape)
    return w1, w2


@dataclass
class TrainingSet:
    """Isotropic stage inputs with exhaustive-search labels."""

    bases: np.ndarray  # (count, d, m) complex
    labels: np.ndarray  # (count,) int
    input_dim: int
    subspace_dim: int
    bits: int
    codebook_fingerprint: bytes

    def __len__(self) -> int:
        return self.bases.shape[0]

    def features(self) -> np.ndarray:
        return canonicalize_many(self.bases)


def generate_training_set(sc: StageCodebook, subspace_dim: int, count: int,
                          rng: np.random.Generator) -> TrainingSet:
    """Sample `count` isotropic d-by-m bases and label them by the
    exhaustive complement scan (lowest index on ties)."""
    d = sc.input_dim
    if subspace_dim == 1:
        v = complex_gaussian(rng, (count, d)) if count else np.zeros((0, d), complex)
        if count:
            v /= np.linalg.norm(v, axis=1, keepdims=True)
        bases = v[:, :, None]
    else:
        g = complex_gaussian(rng, (count, d, subspace_dim))
        q, _ = np.linalg.qr(g)
        bases = q
    if count:
        energy = np.einsum("sdm,kd->skm", bases, sc.complements.conj())
        labels = np.argmin(np.sum(np.abs(energy) ** 2, axis=2), axis=1)
    else:
        labels = np.zeros(0, dtype=np.int64)
    return TrainingSet(bases, labels.astype(np.int64), d, subspace_dim, sc.bits,
                       sc.fingerprint())


@dataclass
class Hyperparams:
    """Training-loop knobs; the architecture itself is not negotiable."""

    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_floor_fraction: float = 0.01  # cosine decay floor
    val_fraction: float = 0.1
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    ema_decay: float = 0.999  # weight averaging for evaluation


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)
    final_val_accuracy: float = 0.0
    used_averaged_weights: bool = False
    duration_seconds: float = 0.0

    def format_lines(self) -> str:
        lines = ["epoch\tloss\ttrain_acc\tval_acc"]
        for e in self.epochs:
            lines.append(f"{e.epoch}\t{e.mean_loss:.6f}\t{e.train_accuracy:.4f}"
                         f"\t{e.val_accuracy:.4f}")
        lines.append(f"final_val_accuracy\t{self.final_val_accuracy:.4f}")
        return "\n".join(lines)


def _forward_logits(params, x: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2 = params
    h = np.maximum(x @ w1 + b1, 0.0)
    return h @ w2 + b2


def _accuracy(params, x: np.ndarray, y: np.ndarray, chunk: int = 65536) -> float:
    hits = 0
    for s in range(0, len(x), chunk):
        hits += int((_forward_logits(params, x[s:s + chunk]).argmax(axis=1)
                     == y[s:s + chunk]).sum())
    return hits / max(1, len(x))


def _loss_and_grads(params, x: np.ndarray, y: np.ndarray,
                    dropout_mask: np.ndarray | None = None):
    """Mean cross-entropy and its gradients for one mini-batch.

    dropout_mask, when given, is the pre-scaled inverted-dropout mask for
    the hidden activations. Pure function of its arguments: the gradient
    check drives it with float64 parameters.
    """
    w1, b1, w2, b2 = params
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        pre = x @ w1 + b1
        relu_mask = pre > 0
        h = pre * relu_mask
        hd = h * dropout_mask if dropout_mask is not None else h
        logits = hd @ w2 + b2
        logits = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        prob = exp / exp.sum(axis=1, keepdims=True)
        count = len(y)
        loss = float(-np.log(np.maximum(prob[np.arange(count), y], 1e-300)).mean())
        grad_logits = prob.copy()
        grad_logits[np.arange(count), y] -= 1.0
        grad_logits /= count
        g_w2 = hd.T @ grad_logits
        g_b2 = grad_logits.sum(axis=0)
        g_h = grad_logits @ w2.T
        if dropout_mask is not None:
            g_h = g_h * dropout_mask
        g_h = g_h * relu_mask
        g_w1 = x.T @ g_h
        g_b1 = g_h.sum(axis=0)
    return loss, (g_w1, g_b1, g_w2, g_b2)


def train(net: StageNetwork, ts: TrainingSet, hp: Hyperparams,
          ) -> tuple[StageNetwork, TrainingReport]:
    """Mini-batch training of a stage network.

    Mutates and returns `net` with the trained weights (the better of the
    final and the exponentially averaged ones on the validation split) and
    a per-epoch report. Deterministic given hp.seed.
    """
    if ts.codebook_fingerprint != net.codebook_fingerprint:
        raise BindingMismatchError("training set was labeled against a "
                                   "different codebook than the network's")
    if ts.input_dim != net.input_dim or ts.subspace_dim != net.subspace_dim:
        raise ValueError("training set dims do not match the network")
    if hp.optimizer not in ("adam", "sgd"):
        raise ValueError(f"unknown optimizer {hp.optimizer!r}")

    t_start = time.time()
    x_all = ts.features().astype(np.float32)
    y_all = ts.labels
    n_val = max(1, int(len(ts) * hp.val_fraction))
    n_train = len(ts) - n_val
    if n_train < 1:
        raise ValueError("training set too small for the validation split")
    x_tr, y_tr = x_all[:n_train], y_all[:n_train]
    x_va, y_va = x_all[n_train:], y_all[n_train:]

    rng = np.random.default_rng(hp.seed)
    params = [net.w1.astype(np.float32), net.b1.astype(np.float32),
              net.w2.astype(np.float32), net.b2.astype(np.float32)]
    averaged = [p.copy() for p in params]
    first_moment = [np.zeros_like(p) for p in params]
    second_moment = [np.zeros_like(p) for p in params]
    step = 0
    report = TrainingReport()
    drop = net.dropout_rate

    for epoch in range(hp.epochs):
        order = rng.permutation(n_train)
        frac = epoch / max(1, hp.epochs - 1)
        lr = hp.learning_rate * (hp.lr_floor_fraction
                                 + (1 - hp.lr_floor_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))
        loss_sum = 0.0
        batches = 0
        for s in range(0, n_train, hp.batch_size):
            idx = order[s:s + hp.batch_size]
            mask = None
            if drop > 0:
                mask = ((rng.random((len(idx), net.hidden_dim)) >= drop)
                        / (1.0 - drop)).astype(np.float32)
            loss, grads = _loss_and_grads(params, x_tr[idx], y_tr[idx], mask)
            if not np.isfinite(loss):
                raise TrainingFailure(f"loss diverged at epoch {epoch}: {hp}")
            loss_sum += loss
            batches += 1
            step += 1
            if hp.optimizer == "adam":
                for p, g, m1, m2, avg in zip(params, grads, first_moment,
                                             second_moment, averaged):
                    m1 *= 0.9
                    m1 += 0.1 * g
                    m2 *= 0.999
                    m2 += 0.001 * (g * g)
                    mhat = m1 / (1 - 0.9 ** step)
                    vhat = m2 / (1 - 0.999 ** step)
                    p -= lr * mhat / (np.sqrt(vhat) + 1e-8)
                    avg *= hp.ema_decay
                    avg += (1 - hp.ema_decay) * p
            else:
                for p, g, avg in zip(params, grads, averaged):
                    p -= lr * g
                    avg *= hp.ema_decay
                    avg += (1 - hp.ema_decay) * p
        report.epochs.append(EpochStats(
            epoch=epoch,
            mean_loss=loss_sum / max(1, batches),
            train_accuracy=_accuracy(params, x_tr[:20000], y_tr[:20000]),
            val_accuracy=_accuracy(params, x_va, y_va),
        ))

    acc_raw = _accuracy(params, x_va, y_va)
    acc_avg = _accuracy(averaged, x_va, y_va)
    use_avg = acc_avg > acc_raw
    final = averaged if use_avg else params
    net.w1, net.b1, net.w2, net.b2 = (p.astype(np.float64) for p in final)
    report.final_val_accuracy = max(acc_raw, acc_avg)
    report.used_averaged_weights = use_avg
    report.duration_seconds = time.time() - t_start
    return net, report


def classify(net: StageNetwork, b: np.ndarray) -> tuple[int, np.ndarray]:
    """Predicted codebook index and softmax probabilities for one basis."""
    b = np.asarray(b)
    if b.ndim == 1:
        b = b[:, None]
    if b.shape != (net.input_dim, net.subspace_dim):
        raise ValueError(f"input shape {b.shape} does not match network "
                         f"({net.input_dim}, {net.subspace_dim})")
    logits = _forward_logits((net.w1, net.b1, net.w2, net.b2),
                             canonicalize(b)[None, :])[0]
    logits = logits - logits.max()
    exp = np.exp(logits)
    probs = exp / exp.sum()
    return int(np.argmax(probs)), probs


def classify_many(net: StageNetwork, bs: np.ndarray) -> np.ndarray:
    """Predicted indices for stacked bases (s, d, m) or (s, d) when m = 1."""
    x = canonicalize_many(bs)
    return _forward_logits((net.w1, net.b1, net.w2, net.b2), x).argmax(axis=1)


def save_network(net: StageNetwork, path) -> None:
    """Versioned binary dump: magic 'GQNN', u16 version, u32 d, u32 m,
    u32 bits, u64 codebook seed, f64 dropout, 16-byte codebook
    fingerprint, then w1, b1, w2, b2 as little-endian f64 in row-major
    order."""
    header = _NET_MAGIC + struct.pack(
        "<HIIIQd", _NET_VERSION, net.input_dim, net.subspace_dim, net.bits,
        net.codebook_seed, net.dropout_rate)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(net.codebook_fingerprint)
        for arr in (net.w1, net.b1, net.w2, net.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_network(path) -> StageNetwork:
    """Read a network file; validates magic, version and payload size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _NET_MAGIC:
        raise CodebookFormatError(f"{path}: not a network file")
    head_fmt = "<HIIIQd"
    head_len = 4 + struct.calcsize(head_fmt)
    if len(blob) < head_len + 16:
        raise CodebookFormatError(f"{path}: truncated header")
    version, d, m, bits, seed, dropout = struct.unpack(
        head_fmt, blob[4:head_len])
    if version != _NET_VERSION:
        raise CodebookFormatError(f"{path}: unsupported version {version}")
    fingerprint = blob[head_len:head_len + 16]
    feature_dim = 2 * d * m
    hidden = HIDDEN_MULTIPLIER * feature_dim
    classes = 1 << bits
    shapes = [(feature_dim, hidden), (hidden,), (hidden, classes), (classes,)]
    expected = sum(int(np.prod(s)) for s in shapes) * 8
    payload = blob[head_len + 16:]
    if len(payload) != expected:
        raise CodebookFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    arrays = []
    offset = 0
    for shape in shapes:
        nbytes = int(np.prod(shape)) * 8
        arrays.append(np.frombuffer(payload[offset:offset + nbytes],
                                    dtype="<f8").reshape(shape).copy())
        offset += nbytes
    return StageNetwork(d, m, bits, dropout, arrays[0], arrays[1], arrays[2],
                        arrays[3], fingerprint, seed)
