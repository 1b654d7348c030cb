"""Temporally correlated Rayleigh-fading MIMO channel generators.

All models produce spatially uncorrelated CN(0, 1) entries per antenna pair.
Temporal correlation is controlled by the normalized Doppler shift nu_d
(Doppler frequency times symbol interval):

  * gauss_markov: first-order recursion h[k] = a h[k-1] + sqrt(1-a^2) g[k]
    applied entrywise, with a = J0(2 pi nu_d).
  * clarke_sos:   per-entry sum of sinusoids with i.i.d. random arrival
    angles and phases, whose ensemble autocorrelation at lag dk is
    J0(2 pi nu_d dk) (Clarke spectrum).
  * iid:          memoryless limit.

Generation is eager (the whole K-instant trajectory is materialized) and a
pure function of the passed Generator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0 as _scipy_j0

from .errors import CodebookFormatError
from .numerics import complex_gaussian

MODEL_TAGS = ("iid", "gauss_markov", "clarke_sos")

_TRAJ_MAGIC = b"GQTR"
_TRAJ_VERSION = 1


def bessel_j0(x: float) -> float:
    """Zeroth-order Bessel function of the first kind."""
    return float(_scipy_j0(x))


@dataclass(frozen=True)
class CorrelationSpec:
    """Temporal correlation model: Clarke J0 profile or its AR(1) match."""

    kind: str
    nu_d: float

    def __post_init__(self):
        if self.kind not in ("clarke", "gauss_markov"):
            raise ValueError(f"unknown correlation kind {self.kind!r}")
        if self.nu_d < 0:
            raise ValueError("nu_d must be nonnegative")

    @property
    def alpha(self) -> float:
        """AR(1) coefficient J0(2 pi nu_d) (gauss_markov only)."""
        if self.kind != "gauss_markov":
            raise ValueError("alpha is defined for the gauss_markov kind")
        return bessel_j0(2.0 * np.pi * self.nu_d)

    def autocorrelation(self, lag: int) -> float:
        """Normalized per-entry autocorrelation at integer lag."""
        if self.kind == "clarke":
            return bessel_j0(2.0 * np.pi * self.nu_d * lag)
        return self.alpha ** abs(lag)


@dataclass
class ChannelTrajectory:
    """Time-indexed sequence of n-by-m channel matrices.

    matrices has shape (K, n, m), complex128.
    """

    n: int
    m: int
    matrices: np.ndarray
    model_tag: str
    nu_d: float
    seed: int | None = None
    num_sinusoids: int | None = field(default=None)

    def __post_init__(self):
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(f"unknown model_tag {self.model_tag!r}")
        if self.matrices.shape[1:] != (self.n, self.m):
            raise ValueError(
                f"matrix block shape {self.matrices.shape[1:]} != ({self.n}, {self.m})")

    @property
    def length(self) -> int:
        return self.matrices.shape[0]

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, k: int) -> np.ndarray:
        return self.matrices[k]


def _check_dims(n: int, m: int, length: int):
    if n < 1 or m < 1:
        raise ValueError(f"antenna counts must be positive, got {n}x{m}")
    if length < 1:
        raise ValueError(f"trajectory length must be >= 1, got {length}")


def generate_iid(n: int, m: int, length: int, rng: np.random.Generator) -> ChannelTrajectory:
    """Memoryless Rayleigh fading: fresh CN(0, I) matrix every instant."""
    _check_dims(n, m, length)
    h = complex_gaussian(rng, (length, n, m))
    return ChannelTrajectory(n, m, h, "iid", 0.0)


def generate_gauss_markov(n: int, m: int, length: int, nu_d: float,
                          rng: np.random.Generator) -> ChannelTrajectory:
    """First-order Gauss-Markov fading with alpha = J0(2 pi nu_d).

    h[0] ~ CN(0, I); h[k] = alpha h[k-1] + sqrt(1 - alpha^2) g[k] entrywise,
    so every entry is a stationary AR(1) process with lag-L correlation
    alpha^L and unit variance.
    """
    _check_dims(n, m, length)
    if nu_d < 0:
        raise ValueError("nu_d must be nonnegative")
    alpha = bessel_j0(2.0 * np.pi * nu_d)
    h = np.empty((length, n, m), dtype=np.complex128)
    h[0] = complex_gaussian(rng, (n, m))
    if length > 1:
        innovation = np.sqrt(max(0.0, 1.0 - alpha * alpha))
        g = complex_gaussian(rng, (length - 1, n, m))
        for k in range(1, length):
            h[k] = alpha * h[k - 1] + innovation * g[k - 1]
    return ChannelTrajectory(n, m, h, "gauss_markov", nu_d)


def generate_clarke_sos(n: int, m: int, length: int, nu_d: float,
                        num_sinusoids: int, rng: np.random.Generator) -> ChannelTrajectory:
    """Clarke-spectrum fading via sum of sinusoids.

    Each of the n*m entries is an independent process
        h(k) = sqrt(1/M) sum_l exp(j(2 pi nu_d k cos(angle_l) + phase_l))
    with angle_l, phase_l i.i.d. uniform on [0, 2 pi). The ensemble
    autocorrelation at lag dk is exactly J0(2 pi nu_d dk) and the variance
    is exactly 1; per-realization statistics converge with num_sinusoids.
    """
    _check_dims(n, m, length)
    if num_sinusoids < 8:
        raise ValueError(f"num_sinusoids must be >= 8, got {num_sinusoids}")
    if nu_d < 0:
        raise ValueError("nu_d must be nonnegative")
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(n * m, num_sinusoids))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(n * m, num_sinusoids))
    k = np.arange(length)[:, None, None]
    # (K, n*m, M) phase evolution, summed over sinusoids
    arg = 2.0 * np.pi * nu_d * k * np.cos(angles)[None, :, :] + phases[None, :, :]
    h = np.exp(1j * arg).sum(axis=2) / np.sqrt(num_sinusoids)
    return ChannelTrajectory(n, m, h.reshape(length, n, m), "clarke_sos", nu_d,
                             num_sinusoids=num_sinusoids)


def substream(master_seed: int, stream_index: int) -> np.random.Generator:
    """Independent per-trajectory generator: child stream `stream_index`
    of the master seed via numpy's SeedSequence spawn-key mechanism."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream_index,))
    return np.random.Generator(np.random.Philox(ss))


def save_trajectory(traj: ChannelTrajectory, path) -> None:
    """Binary trajectory dump.

    Layout (little endian): magic 'GQTR', u16 version, u8 model tag index,
    u32 n, u32 m, u32 K, f64 nu_d, i64 seed (-1 if unknown), then K*n*m
    complex entries as (re, im) f64 pairs in time-major, row-major order.
    """
    tag_index = MODEL_TAGS.index(traj.model_tag)
    seed = -1 if traj.seed is None else int(traj.seed)
    header = _TRAJ_MAGIC + struct.pack(
        "<HBIIIdq", _TRAJ_VERSION, tag_index, traj.n, traj.m, traj.length,
        traj.nu_d, seed)
    flat = np.empty(traj.matrices.size * 2, dtype="<f8")
    flat[0::2] = traj.matrices.real.ravel()
    flat[1::2] = traj.matrices.imag.ravel()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(flat.tobytes())


def load_trajectory(path) -> ChannelTrajectory:
    """Inverse of save_trajectory; raises CodebookFormatError on a corrupt
    or version-incompatible file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _TRAJ_MAGIC:
        raise CodebookFormatError(f"{path}: not a trajectory file")
    head_len = 4 + struct.calcsize("<HBIIIdq")
    if len(blob) < head_len:
        raise CodebookFormatError(f"{path}: truncated header")
    version, tag_index, n, m, length, nu_d, seed = struct.unpack(
        "<HBIIIdq", blob[4:head_len])
    if version != _TRAJ_VERSION:
        raise CodebookFormatError(f"{path}: unsupported version {version}")
    if tag_index >= len(MODEL_TAGS):
        raise CodebookFormatError(f"{path}: unknown model tag {tag_index}")
    expected = length * n * m * 16
    payload = blob[head_len:]
    if len(payload) != expected:
        raise CodebookFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f8")
    matrices = (flat[0::2] + 1j * flat[1::2]).reshape(length, n, m)
    return ChannelTrajectory(n, m, matrices, MODEL_TAGS[tag_index], nu_d,
                             seed=None if seed == -1 else seed)
