"""Single-stage and recursive multi-stage Grassmannian quantizers.

The multi-stage quantizer reduces the ambient dimension by one per stage:
stage i sees a d_{i-1}-by-m semi-unitary input B_{i-1}, picks the codebook
complement vector q least aligned with it (equivalently the (d_{i-1}-1)-dim
stage subspace W_i = completion(q) closest in chordal distance), and hands
the residual

    B_i = W_i^H B_{i-1} (B_{i-1}^H W_i W_i^H B_{i-1})^{-1/2}

to the next stage. The reconstruction is the product of the chosen stage
matrices. Under temporal correlation the selective variant re-uses previous
stage choices while the predicted distortion stays inside a hysteresis band.

Feedback bit accounting (this artifact's convention, fixed so that average
bit counts are well defined): a selective multi-stage message carries a
ceil(log2(R+1))-bit header encoding the number of updated stages plus
bits_per_stage for each updated stage; selective single-stage messages carry
a 1-bit header plus the index bits when updated; memoryless/always-full
modes carry index bits only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .codebook import CodebookLadder, FlatCodebook, StageCodebook
from .errors import DegenerateStageError, NeedsCalibrationError, NumericalFailure
from .numerics import chordal_distance, complex_gaussian, inv_sqrt_hermitian, \
    random_semiunitary

SQBC_RANK_TOL = 1e-10


@dataclass(frozen=True)
class DistortionModel:
    """Expected per-stage and total chordal-distance distortion.

    total = 1 - prod(1 - per_stage[i]); per-stage values come either from
    the exact finite-codebook law (m = 1) or from calibrated constants.
    """

    per_stage: tuple[float, ...]
    total: float
    dims: tuple[int, ...]
    bits_per_stage: int
    subspace_dim: int


@dataclass(frozen=True)
class FeedbackRecord:
    """One feedback message: which stages were refreshed and at what cost."""

    time_index: int
    updated_stage_count: int
    indices: tuple[int, ...]
    bit_cost: int
    achieved_distortion: float
    mode: str  # "full" | "selective"


@dataclass
class QuantizerState:
    """Per-link memory of the selective multi-stage quantizer.

    Holds the previously selected stage matrices and their product, plus the
    hysteresis parameters 1 <= c_lower <= c_upper applied to the expected
    total distortion.
    """

    ladder: CodebookLadder
    distortion_model: DistortionModel
    c_upper: float = 2.0
    c_lower: float = 1.5
    stage_matrices: list[np.ndarray] = field(default_factory=list)
    stage_indices: list[int] = field(default_factory=list)
    reconstruction: np.ndarray | None = None
    time_index: int = 0

    def __post_init__(self):
        if not (1.0 <= self.c_lower <= self.c_upper):
            raise ValueError(
                f"need 1 <= c_lower <= c_upper, got {self.c_lower}, {self.c_upper}")
        if len(self.distortion_model.per_stage) != self.ladder.num_stages:
            raise ValueError("distortion model does not match ladder")

    @property
    def initialized(self) -> bool:
        return self.reconstruction is not None

    @property
    def header_bits(self) -> int:
        return math.ceil(math.log2(self.ladder.num_stages + 1))


def subspace_distance(b: np.ndarray, w: np.ndarray) -> float:
    """chord between an m-dim and a d'-dim subspace (m <= d'), normalized
    by the smaller dimension: 1 - ||w^H b||_F^2 / m."""
    m = b.shape[1]
    val = 1.0 - float(np.sum(np.abs(w.conj().T @ b) ** 2)) / m
    return min(1.0, max(0.0, val))


def quantize_single_stage(u: np.ndarray, cb: FlatCodebook) -> tuple[int, np.ndarray, float]:
    """Exhaustive chordal-distance scan over a flat codebook.

    Returns (index, entry, distortion); ties resolve to the lowest index.
    """
    u = np.asarray(u)
    if u.shape != (cb.n, cb.m):
        raise ValueError(f"input shape {u.shape} does not match codebook "
                         f"({cb.n}, {cb.m})")
    overlap = np.sum(np.abs(np.einsum("kij,il->kjl", cb.entries.conj(), u)) ** 2,
                     axis=(1, 2))
    dist = 1.0 - overlap / cb.m
    index = int(np.argmin(dist))
    return index, cb.entries[index], float(min(1.0, max(0.0, dist[index])))


def sqbc(b: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Residual of b expressed in the coordinates of the stage subspace w.

    Computes w^H b (b^H w w^H b)^{-1/2}, which is semi-unitary whenever
    w^H b has full column rank; rank loss raises DegenerateStageError.
    """
    b = np.asarray(b)
    w = np.asarray(w)
    if w.shape[0] != b.shape[0]:
        raise ValueError(f"ambient dims differ: {w.shape[0]} vs {b.shape[0]}")
    if w.shape[1] < b.shape[1]:
        raise ValueError("stage subspace smaller than quantized subspace")
    proj = w.conj().T @ b
    gram = proj.conj().T @ proj
    try:
        return proj @ inv_sqrt_hermitian(gram, eig_floor=SQBC_RANK_TOL)
    except NumericalFailure as exc:
        raise DegenerateStageError(str(exc)) from exc


def stage_select(b: np.ndarray, sc: StageCodebook) -> tuple[int, np.ndarray]:
    """Pick the complement vector least aligned with span(b).

    Minimizes ||b^H q||^2 over the codebook by exhaustive scan (lowest index
    on ties); by tr(W^H b b^H W) = m - ||b^H q||^2 this is exactly the
    chordal-distance argmin over the implied stage subspaces. Returns
    (index, completion(q)).
    """
    b = np.asarray(b)
    if b.shape[0] != sc.input_dim:
        raise ValueError(f"input dim {b.shape[0]} does not match codebook "
                         f"dim {sc.input_dim}")
    energy = np.sum(np.abs(sc.complements.conj() @ b) ** 2, axis=1)
    index = int(np.argmin(energy))
    return index, sc.stage_matrix(index)


def stage_distortion(b: np.ndarray, sc: StageCodebook, index: int) -> float:
    """chord(b, completion(q_index)) without forming the completion:
    ||b^H q||^2 / m."""
    q = sc.complements[index]
    val = float(np.sum(np.abs(q.conj() @ b) ** 2) / b.shape[1])
    return min(1.0, max(0.0, val))


def reconstruction_from_stages(stage_matrices: list[np.ndarray]) -> np.ndarray:
    out = stage_matrices[0]
    for w in stage_matrices[1:]:
        out = out @ w
    return out


def _quantize_full_detail(u: np.ndarray, ladder: CodebookLadder,
                          ) -> tuple[list[int], list[np.ndarray], list[float]]:
    b = u
    indices: list[int] = []
    ws: list[np.ndarray] = []
    dists: list[float] = []
    last = ladder.num_stages - 1
    for i, sc in enumerate(ladder.stages):
        index, w = stage_select(b, sc)
        indices.append(index)
        ws.append(w)
        dists.append(stage_distortion(b, sc, index))
        if i < last:
            b = sqbc(b, w)
    return indices, ws, dists


def recursive_quantize_full(u: np.ndarray, ladder: CodebookLadder,
                            ) -> tuple[list[int], np.ndarray, list[float]]:
    """Quantize u through every stage of the ladder.

    Returns (indices, reconstruction, per_stage_distortions); the
    reconstruction prod_i W_i is n-by-m semi-unitary by construction.
    """
    u = np.asarray(u)
    if u.shape != (ladder.n, ladder.m):
        raise ValueError(f"input shape {u.shape} does not match ladder "
                         f"({ladder.n}, {ladder.m})")
    indices, ws, dists = _quantize_full_detail(u, ladder)
    return indices, reconstruction_from_stages(ws), dists


def quantize_chain_batch(ladder: CodebookLadder, bases: np.ndarray,
                         selector=None) -> tuple[np.ndarray, np.ndarray]:
    """Run a batch of inputs through the full ladder in lockstep.

    bases has shape (s, n, m). selector(stage_index, stage_inputs) may
    override the exhaustive scan with any per-stage index rule (e.g. a
    trained classifier); it receives the (s, d, m) stage inputs and returns
    s indices. Returns (indices (s, R), per-stage distortions (s, R)).
    """
    from .numerics import batch_complement_completion

    bases = np.asarray(bases, dtype=np.complex128)
    if bases.ndim == 2:
        bases = bases[:, :, None]
    count, n, m = bases.shape
    if (n, m) != (ladder.n, ladder.m):
        raise ValueError(f"batch shape {(n, m)} does not match ladder "
                         f"({ladder.n}, {ladder.m})")
    num_stages = ladder.num_stages
    all_idx = np.empty((count, num_stages), dtype=np.int64)
    all_dist = np.empty((count, num_stages))
    b = bases
    rows = np.arange(count)
    for i, sc in enumerate(ladder.stages):
        energy = np.sum(np.abs(np.einsum("kd,sdm->skm", sc.complements.conj(), b)) ** 2,
                        axis=2)
        if selector is None:
            idx = np.argmin(energy, axis=1)
        else:
            idx = np.asarray(selector(i, b), dtype=np.int64)
        all_idx[:, i] = idx
        all_dist[:, i] = energy[rows, idx] / m
        if i + 1 < num_stages:
            w = batch_complement_completion(sc.complements[idx])
            proj = np.einsum("sdj,sdm->sjm", w.conj(), b)
            if m == 1:
                norms = np.linalg.norm(proj[:, :, 0], axis=1, keepdims=True)
                if np.any(norms < SQBC_RANK_TOL):
                    raise DegenerateStageError(f"rank loss in batch at stage {i}")
                b = (proj[:, :, 0] / norms)[:, :, None]
            else:
                gram = np.einsum("sjm,sjl->sml", proj.conj(), proj)
                eigval, eigvec = np.linalg.eigh(gram)
                if np.min(eigval) <= SQBC_RANK_TOL:
                    raise DegenerateStageError(f"rank loss in batch at stage {i}")
                inv_sqrt = np.einsum("sml,sl,skl->smk", eigvec, 1.0 / np.sqrt(eigval),
                                     eigvec.conj())
                b = np.einsum("sjm,sml->sjl", proj, inv_sqrt)
    return all_idx, all_dist


def theory_single_stage(n: int, m: int, bits: int, constant: float | None = None) -> float:
    """Expected single-stage RVQ distortion (1/m) k 2^{-bits/(m(n-m))}.

    For m = 1 the constant defaults to the closed form Gamma(1 + 1/(n-1))
    (the large-codebook limit of the minimum of 2^bits i.i.d. Beta(n-1, 1)
    alignments); for m > 1 a calibrated constant must be supplied.
    """
    if not (n > m >= 1):
        raise ValueError(f"need n > m >= 1, got n={n}, m={m}")
    if constant is None:
        if m != 1:
            raise NeedsCalibrationError(
                f"no closed-form constant for (n={n}, m={m}); pass a "
                "calibrated value (see calibrate_constant)")
        constant = math.gamma(1.0 + 1.0 / (n - 1))
    return (constant / m) * 2.0 ** (-bits / (m * (n - m)))


def exact_stage_distortion_m1(input_dim: int, bits: int) -> float:
    """Exact mean of the best of 2^bits isotropic complements in C^d, m = 1.

    The alignment |q^H b|^2 of an isotropic unit q with a fixed unit b is
    Beta(1, d-1), so the minimum over N = 2^bits i.i.d. draws has mean
    1 / ((d-1) N + 1).
    """
    if input_dim < 2:
        raise ValueError("stage input dimension must be >= 2")
    return 1.0 / ((input_dim - 1) * (1 << bits) + 1)


def theory_multi_stage(ladder: CodebookLadder,
                       constants: dict[int, float] | None = None) -> DistortionModel:
    """Expected distortion of the full recursive quantizer.

    Per-stage values use the exact finite-codebook law for m = 1 and
    calibrated constants (keyed by stage input dim) otherwise; the total
    composes multiplicatively: total = 1 - prod(1 - d_i).
    """
    per_stage = []
    for sc in ladder.stages:
        if ladder.m == 1:
            per_stage.append(exact_stage_distortion_m1(sc.input_dim, sc.bits))
        else:
            if constants is None or sc.input_dim not in constants:
                raise NeedsCalibrationError(
                    f"stage with input dim {sc.input_dim} needs a calibrated "
                    "constant for m > 1")
            k = constants[sc.input_dim]
            per_stage.append(
                (k / ladder.m) * 2.0 ** (-ladder.total_bits / (ladder.m * ladder.num_stages)))
    total = 1.0 - float(np.prod([1.0 - d for d in per_stage]))
    return DistortionModel(tuple(per_stage), total, tuple(ladder.stage_dims()),
                           ladder.bits_per_stage, ladder.m)


def calibrate_constant(d_prev: int, m: int, d_next: int, probe_bits: int,
                       samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo estimate of the dimension constant in the RVQ law.

    Averages the minimum stage distortion over `samples` isotropic inputs,
    each scanned against a fresh random codebook of 2^probe_bits stage
    subspaces of dimension d_next, then inverts the distortion law:
    k = m * mean * 2^{probe_bits / (m (d_prev - d_next))}. Returns
    (k, standard_error_of_k).
    """
    if probe_bits > 14:
        raise ValueError("probe_bits > 14 is beyond the exhaustive-scan guard")
    if not (d_prev > d_next >= m >= 1):
        raise ValueError(f"need d_prev > d_next >= m, got {d_prev}, {d_next}, {m}")
    size = 1 << probe_bits
    mins = np.empty(samples)
    for s in range(samples):
        b = random_semiunitary(d_prev, m, rng)
        # batched QR orthonormalization; the gauge does not affect distances
        g = complex_gaussian(rng, (size, d_prev, d_next))
        q, _ = np.linalg.qr(g)
        overlap = np.sum(np.abs(np.einsum("kij,il->kjl", q.conj(), b)) ** 2,
                         axis=(1, 2))
        mins[s] = 1.0 - overlap.max() / m
    scale = 2.0 ** (probe_bits / (m * (d_prev - d_next)))
    k = m * float(mins.mean()) * scale
    se = m * float(mins.std(ddof=1) / math.sqrt(samples)) * scale
    return k, se


def initialize_state(ladder: CodebookLadder, dm: DistortionModel,
                     c_upper: float = 2.0, c_lower: float = 1.5) -> QuantizerState:
    return QuantizerState(ladder, dm, c_upper, c_lower)


def _full_update(u: np.ndarray, state: QuantizerState) -> FeedbackRecord:
    ladder = state.ladder
    indices, ws, _ = _quantize_full_detail(u, ladder)
    state.stage_matrices = ws
    state.stage_indices = list(indices)
    state.reconstruction = reconstruction_from_stages(ws)
    record = FeedbackRecord(
        time_index=state.time_index,
        updated_stage_count=ladder.num_stages,
        indices=tuple(indices),
        bit_cost=state.header_bits + ladder.num_stages * ladder.bits_per_stage,
        achieved_distortion=subspace_distance(u, state.reconstruction),
        mode="selective",
    )
    state.time_index += 1
    return record


def recursive_quantize_selective(u: np.ndarray, state: QuantizerState) -> FeedbackRecord:
    """Selective stage update of the recursive quantizer.

    The first call performs a full update. Afterwards: if the distance to
    the previous reconstruction is within c_upper * expected total, nothing
    is updated. Otherwise the stage inputs are rebuilt with the previous
    stage matrices, the predicted distortion with the first r stages kept,

        1 - prod_{i<=r}(1 - chord(B_{i-1}, W_i[prev]))
          * prod_{i>r}(1 - expected_i),

    is scanned for the largest r within c_lower * expected (r = 0, a full
    update, always qualifies), and stages r+1..R are re-selected. A
    degenerate residual during the rebuild forces a full update.
    """
    u = np.asarray(u)
    ladder = state.ladder
    if u.shape != (ladder.n, ladder.m):
        raise ValueError(f"input shape {u.shape} does not match ladder")
    if not state.initialized:
        return _full_update(u, state)

    dm = state.distortion_model
    target = dm.total
    dist_prev = subspace_distance(u, state.reconstruction)
    if dist_prev <= state.c_upper * target:
        record = FeedbackRecord(
            time_index=state.time_index,
            updated_stage_count=0,
            indices=(),
            bit_cost=state.header_bits,
            achieved_distortion=dist_prev,
            mode="selective",
        )
        state.time_index += 1
        return record

    num_stages = ladder.num_stages
    # Rebuild the stage inputs under the previous stage matrices:
    # inputs[r] is the input of stage r+1 when stages 1..r are kept.
    inputs = [u]
    old_dist = np.empty(num_stages)
    try:
        b = u
        for i in range(num_stages):
            old_dist[i] = stage_distortion(b, ladder.stages[i], state.stage_indices[i])
            if i + 1 < num_stages:
                b = sqbc(b, state.stage_matrices[i])
                inputs.append(b)
    except DegenerateStageError:
        return _full_update(u, state)

    chosen_r = 0
    for keep_r in range(num_stages, -1, -1):
        kept = float(np.prod(1.0 - old_dist[:keep_r])) if keep_r else 1.0
        fresh = float(np.prod([1.0 - dm.per_stage[i] for i in range(keep_r, num_stages)]))
        if 1.0 - kept * fresh <= state.c_lower * target:
            chosen_r = keep_r
            break

    if chosen_r == num_stages:
        # every previous stage retained: nothing to signal beyond the header
        state.time_index += 1
        return FeedbackRecord(state.time_index - 1, 0, (), state.header_bits,
                              dist_prev, "selective")

    try:
        new_indices: list[int] = []
        ws = list(state.stage_matrices[:chosen_r])
        b = inputs[chosen_r]
        for i in range(chosen_r, num_stages):
            sc = ladder.stages[i]
            index, w = stage_select(b, sc)
            new_indices.append(index)
            ws.append(w)
            state.stage_indices[i] = index
            if i + 1 < num_stages:
                b = sqbc(b, w)
    except DegenerateStageError:
        return _full_update(u, state)

    state.stage_matrices = ws
    state.reconstruction = reconstruction_from_stages(ws)
    updated = num_stages - chosen_r
    record = FeedbackRecord(
        time_index=state.time_index,
        updated_stage_count=updated,
        indices=tuple(new_indices),
        bit_cost=state.header_bits + updated * ladder.bits_per_stage,
        achieved_distortion=subspace_distance(u, state.reconstruction),
        mode="selective",
    )
    state.time_index += 1
    return record


def replay_feedback(record: FeedbackRecord, mirror: QuantizerState) -> np.ndarray:
    """Transmitter-side reconstruction from the feedback message alone.

    The mirror state is built from the same ladder (regenerated from its
    seed); no channel knowledge enters. Returns the reconstruction after
    applying the record.
    """
    ladder = mirror.ladder
    num_stages = ladder.num_stages
    updated = record.updated_stage_count
    if not mirror.initialized:
        if updated != num_stages:
            raise ValueError("first message must be a full update")
        mirror.stage_indices = list(record.indices)
        mirror.stage_matrices = [ladder.stages[i].stage_matrix(ix)
                                 for i, ix in enumerate(record.indices)]
        mirror.reconstruction = reconstruction_from_stages(mirror.stage_matrices)
    elif updated:
        keep = num_stages - updated
        for offset, ix in enumerate(record.indices):
            stage = keep + offset
            mirror.stage_indices[stage] = ix
            mirror.stage_matrices[stage] = ladder.stages[stage].stage_matrix(ix)
        mirror.reconstruction = reconstruction_from_stages(mirror.stage_matrices)
    mirror.time_index += 1
    return mirror.reconstruction


@dataclass
class SingleStageState:
    """Selective single-stage memory: last codeword and its quality target."""

    codebook: FlatCodebook
    expected_distortion: float
    c_upper: float = 2.0
    reconstruction: np.ndarray | None = None
    index: int | None = None
    time_index: int = 0

    @property
    def initialized(self) -> bool:
        return self.reconstruction is not None


def single_stage_selective(u: np.ndarray, state: SingleStageState) -> FeedbackRecord:
    """Keep the previous codeword while it stays within c_upper * expected;
    otherwise re-quantize. Bit cost: 1 header bit (+ index bits if updated)."""
    u = np.asarray(u)
    cb = state.codebook
    if state.initialized:
        dist_prev = chordal_distance(u, state.reconstruction)
        if dist_prev <= state.c_upper * state.expected_distortion:
            record = FeedbackRecord(state.time_index, 0, (), 1, dist_prev, "selective")
            state.time_index += 1
            return record
    index, entry, achieved = quantize_single_stage(u, cb)
    state.reconstruction = entry
    state.index = index
    record = FeedbackRecord(state.time_index, 1, (index,), 1 + cb.bits,
                            achieved, "selective")
    state.time_index += 1
    return record
