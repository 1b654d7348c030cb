"""Quantization codebooks: construction, persistence, deterministic sharing.

Codebooks are immutable after construction and regenerable from (dims, bits,
seed) alone, which is what lets a transmitter and receiver agree on the same
entries without shipping them.

RNG contract: all entries come from the Philox 4x64 counter-based generator.
A flat codebook uses key = seed, counter = 0. A ladder stage with input
dimension d draws from key = master_seed with counter word 1 (of 4) set to
d, so stage streams are non-overlapping slices of one keyed sequence and a
stage codebook is fully determined by (master_seed, d, bits): ladders of
different heights built from the same master seed share their common-depth
stages. Entries consume the stream in index order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExceededError, CodebookFormatError
from .numerics import (batch_complement_completion, complement_completion,
                       complex_gaussian, random_semiunitary)

MAX_FLAT_BITS = 20
MAX_STAGE_BITS = 16

_CB_MAGIC = b"GQCB"
_CB_VERSION = 1
_KIND_FLAT = 0
_KIND_LADDER = 1


def _philox(seed: int, counter_word1: int = 0) -> np.random.Generator:
    counter = [0, counter_word1, 0, 0]
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


@dataclass(frozen=True)
class FlatCodebook:
    """2^bits isotropic semi-unitary n-by-m entries, stacked (2^bits, n, m)."""

    n: int
    m: int
    bits: int
    seed: int
    entries: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class StageCodebook:
    """Stage codebook in complement form: 2^bits unit vectors in C^d.

    The actual d-by-(d-1) quantization matrices are derived on demand via
    complement_completion, so storage is O(2^bits * d) instead of
    O(2^bits * d^2). (seed, input_dim) identify the Philox stream the
    complements came from; fingerprint() identifies the content itself.
    """

    input_dim: int
    bits: int
    seed: int
    complements: np.ndarray  # (2^bits, d)

    def fingerprint(self) -> bytes:
        """16-byte content digest used to bind trained networks to this
        exact codebook."""
        import hashlib
        payload = _pack_complex(self.complements)
        meta = struct.pack("<III", self.input_dim, self.bits, self.size)
        return hashlib.sha256(meta + payload).digest()[:16]

    @property
    def size(self) -> int:
        return self.complements.shape[0]

    @property
    def output_dim(self) -> int:
        return self.input_dim - 1

    def stage_matrix(self, index: int) -> np.ndarray:
        """d-by-(d-1) semi-unitary completion of complement `index`."""
        return complement_completion(self.complements[index])

    def stage_matrices(self) -> np.ndarray:
        """All completions, shape (2^bits, d, d-1)."""
        return batch_complement_completion(self.complements)


@dataclass(frozen=True)
class CodebookLadder:
    """Per-stage codebooks for the recursive quantizer, input dims n..m+1.

    Dimension step size is 1 per stage, so there are R = n - m stages and
    equal bit allocation bits_per_stage each; full-update feedback cost is
    R * bits_per_stage index bits.
    """

    n: int
    m: int
    bits_per_stage: int
    master_seed: int
    stages: tuple[StageCodebook, ...]

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def total_bits(self) -> int:
        return self.num_stages * self.bits_per_stage

    def stage_dims(self) -> list[int]:
        return [sc.input_dim for sc in self.stages]


def build_flat_codebook(n: int, m: int, bits: int, seed: int) -> FlatCodebook:
    """Draw 2^bits independent isotropic semi-unitary entries from the
    seed-keyed Philox stream."""
    if m > n or m < 1:
        raise ValueError(f"invalid dimensions {n}x{m}")
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if bits > MAX_FLAT_BITS:
        raise CapacityExceededError(
            f"{bits}-bit flat codebook (2^{bits} entries) exceeds the "
            f"exhaustive-search guard of {MAX_FLAT_BITS} bits")
    rng = _philox(seed)
    size = 1 << bits
    entries = np.empty((size, n, m), dtype=np.complex128)
    for i in range(size):
        entries[i] = random_semiunitary(n, m, rng)
    entries.setflags(write=False)
    return FlatCodebook(n, m, bits, seed, entries)


def build_stage_codebook(input_dim: int, bits: int, seed: int) -> StageCodebook:
    """2^bits isotropic unit complement vectors in C^input_dim, drawn from
    the (seed, input_dim)-addressed Philox stream."""
    if input_dim < 2:
        raise ValueError(f"stage input dim must be >= 2, got {input_dim}")
    if bits < 1 or bits > MAX_STAGE_BITS:
        raise ValueError(f"stage bits must be in 1..{MAX_STAGE_BITS}")
    rng = _philox(seed, counter_word1=input_dim)
    size = 1 << bits
    v = complex_gaussian(rng, (size, input_dim))
    complements = v / np.linalg.norm(v, axis=1, keepdims=True)
    complements.setflags(write=False)
    return StageCodebook(input_dim, bits, seed, complements)


def build_ladder(n: int, m: int, bits_per_stage: int, master_seed: int) -> CodebookLadder:
    """R = n - m stage codebooks with input dims n, n-1, ..., m+1."""
    if not (n > m >= 1):
        raise ValueError(f"need n > m >= 1, got n={n}, m={m}")
    if bits_per_stage < 1:
        raise ValueError("bits_per_stage must be >= 1")
    if bits_per_stage > MAX_STAGE_BITS:
        raise CapacityExceededError(
            f"{bits_per_stage} bits per stage exceeds the guard of {MAX_STAGE_BITS}")
    stages = tuple(
        build_stage_codebook(d, bits_per_stage, master_seed)
        for d in range(n, m, -1))
    return CodebookLadder(n, m, bits_per_stage, master_seed, stages)


def _pack_complex(a: np.ndarray) -> bytes:
    flat = np.empty(a.size * 2, dtype="<f8")
    flat[0::2] = a.real.ravel()
    flat[1::2] = a.imag.ravel()
    return flat.tobytes()


def _unpack_complex(blob: bytes, shape) -> np.ndarray:
    flat = np.frombuffer(blob, dtype="<f8")
    return (flat[0::2] + 1j * flat[1::2]).reshape(shape)


def save_codebook(cb: FlatCodebook | CodebookLadder, path) -> None:
    """Versioned binary dump.

    Common header (little endian): magic 'GQCB', u16 version, u8 kind
    (0 flat, 1 ladder), u32 n, u32 m, u32 bits, u64 seed. A flat file is
    followed by the 2^bits entries (row-major within an entry, (re, im) f64
    pairs); a ladder file by its stages in order, each as the complement
    vectors of one stage. Entries are stored even though they are
    regenerable, so a reader can either trust the payload or rebuild from
    the header and compare.
    """
    if isinstance(cb, FlatCodebook):
        kind, n, m, bits, seed = _KIND_FLAT, cb.n, cb.m, cb.bits, cb.seed
        payload = _pack_complex(cb.entries)
    elif isinstance(cb, CodebookLadder):
        kind, n, m, bits, seed = _KIND_LADDER, cb.n, cb.m, cb.bits_per_stage, cb.master_seed
        payload = b"".join(_pack_complex(sc.complements) for sc in cb.stages)
    else:
        raise TypeError(f"cannot save {type(cb).__name__}")
    header = _CB_MAGIC + struct.pack("<HBIIIQ", _CB_VERSION, kind, n, m, bits, seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_codebook(path) -> FlatCodebook | CodebookLadder:
    """Read a codebook file, validating magic, version and payload size."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CB_MAGIC:
        raise CodebookFormatError(f"{path}: not a codebook file")
    head_len = 4 + struct.calcsize("<HBIIIQ")
    if len(blob) < head_len:
        raise CodebookFormatError(f"{path}: truncated header")
    version, kind, n, m, bits, seed = struct.unpack("<HBIIIQ", blob[4:head_len])
    if version != _CB_VERSION:
        raise CodebookFormatError(f"{path}: unsupported version {version}")
    payload = blob[head_len:]
    size = 1 << bits
    if kind == _KIND_FLAT:
        expected = size * n * m * 16
        if len(payload) != expected:
            raise CodebookFormatError(
                f"{path}: payload is {len(payload)} bytes, expected {expected}")
        entries = _unpack_complex(payload, (size, n, m))
        entries.setflags(write=False)
        return FlatCodebook(n, m, bits, seed, entries)
    if kind == _KIND_LADDER:
        dims = list(range(n, m, -1))
        expected = sum(size * d * 16 for d in dims)
        if len(payload) != expected:
            raise CodebookFormatError(
                f"{path}: payload is {len(payload)} bytes, expected {expected}")
        stages = []
        offset = 0
        for d in dims:
            nbytes = size * d * 16
            comp = _unpack_complex(payload[offset:offset + nbytes], (size, d))
            comp.setflags(write=False)
            stages.append(StageCodebook(d, bits, seed, comp))
            offset += nbytes
        return CodebookLadder(n, m, bits, seed, tuple(stages))
    raise CodebookFormatError(f"{path}: unknown codebook kind {kind}")
