import numpy as np
import pytest

from grassquant.codebook import (CodebookLadder, FlatCodebook, StageCodebook,
                                 build_flat_codebook, build_ladder,
                                 build_stage_codebook, load_codebook,
                                 save_codebook)
from grassquant.errors import CapacityExceededError, CodebookFormatError
from grassquant.numerics import is_semi_unitary


class TestFlatCodebook:
    def test_two_entry_line_codebook(self):
        cb = build_flat_codebook(2, 1, 1, seed=5)
        assert cb.size == 2
        again = build_flat_codebook(2, 1, 1, seed=5)
        assert np.array_equal(cb.entries, again.entries)

    def test_fig1_smallest_point(self):
        cb = build_flat_codebook(6, 2, 9, seed=11)
        assert cb.size == 512
        for i in range(0, 512, 37):
            assert is_semi_unitary(cb.entries[i], tol=1e-10)

    def test_distinct_seeds_differ(self):
        a = build_flat_codebook(4, 1, 4, seed=1)
        b = build_flat_codebook(4, 1, 4, seed=2)
        assert not np.array_equal(a.entries, b.entries)

    def test_capacity_guard(self):
        with pytest.raises(CapacityExceededError):
            build_flat_codebook(8, 1, 21, seed=0)

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            build_flat_codebook(2, 3, 4, seed=0)


class TestLadder:
    def test_full_scale_shape(self):
        ladder = build_ladder(32, 1, 6, master_seed=7)
        assert ladder.num_stages == 31
        assert ladder.stage_dims() == list(range(32, 1, -1))
        assert all(sc.size == 64 for sc in ladder.stages)
        assert ladder.total_bits == 186

    def test_degenerate_single_stage(self):
        ladder = build_ladder(2, 1, 4, master_seed=3)
        assert ladder.num_stages == 1
        assert ladder.stages[0].input_dim == 2

    def test_complements_unit_norm(self):
        ladder = build_ladder(8, 1, 5, master_seed=9)
        for sc in ladder.stages:
            norms = np.linalg.norm(sc.complements, axis=1)
            assert np.max(np.abs(norms - 1.0)) <= 1e-12

    def test_completions_semi_unitary(self):
        sc = build_stage_codebook(6, 4, seed=21)
        mats = sc.stage_matrices()
        assert mats.shape == (16, 6, 5)
        for i in range(16):
            assert is_semi_unitary(mats[i], tol=1e-10)
            assert np.allclose(mats[i], sc.stage_matrix(i))

    def test_shared_tail_across_heights(self):
        tall = build_ladder(16, 1, 6, master_seed=101)
        short = build_ladder(8, 1, 6, master_seed=101)
        for a, b in zip(tall.stages[8:], short.stages):
            assert np.array_equal(a.complements, b.complements)

    def test_determinism(self):
        a = build_ladder(6, 2, 3, master_seed=55)
        b = build_ladder(6, 2, 3, master_seed=55)
        for sa, sb in zip(a.stages, b.stages):
            assert np.array_equal(sa.complements, sb.complements)

    def test_invalid_dims(self):
        with pytest.raises(ValueError):
            build_ladder(4, 4, 3, master_seed=1)


class TestPersistence:
    def test_flat_round_trip(self, tmp_path):
        cb = build_flat_codebook(6, 2, 9, seed=77)
        path = tmp_path / "flat.gqcb"
        save_codebook(cb, path)
        loaded = load_codebook(path)
        assert isinstance(loaded, FlatCodebook)
        assert np.array_equal(loaded.entries, cb.entries)
        assert (loaded.n, loaded.m, loaded.bits, loaded.seed) == (6, 2, 9, 77)

    def test_ladder_round_trip(self, tmp_path):
        ladder = build_ladder(8, 2, 4, master_seed=13)
        path = tmp_path / "ladder.gqcb"
        save_codebook(ladder, path)
        loaded = load_codebook(path)
        assert isinstance(loaded, CodebookLadder)
        assert loaded.stage_dims() == ladder.stage_dims()
        for sa, sb in zip(loaded.stages, ladder.stages):
            assert np.array_equal(sa.complements, sb.complements)

    def test_regenerate_from_header_matches_payload(self, tmp_path):
        ladder = build_ladder(5, 1, 3, master_seed=99)
        path = tmp_path / "ladder.gqcb"
        save_codebook(ladder, path)
        loaded = load_codebook(path)
        rebuilt = build_ladder(loaded.n, loaded.m, loaded.bits_per_stage,
                               loaded.master_seed)
        for sa, sb in zip(loaded.stages, rebuilt.stages):
            assert np.array_equal(sa.complements, sb.complements)

    def test_truncated_file(self, tmp_path):
        cb = build_flat_codebook(3, 1, 2, seed=4)
        path = tmp_path / "flat.gqcb"
        save_codebook(cb, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(CodebookFormatError):
            load_codebook(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.gqcb"
        path.write_bytes(b"JUNK" + bytes(40))
        with pytest.raises(CodebookFormatError):
            load_codebook(path)

    def test_version_mismatch(self, tmp_path):
        cb = build_flat_codebook(3, 1, 2, seed=4)
        path = tmp_path / "flat.gqcb"
        save_codebook(cb, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99  # bump the little-endian version field
        path.write_bytes(bytes(blob))
        with pytest.raises(CodebookFormatError):
            load_codebook(path)


class TestFingerprint:
    def test_stable_and_distinct(self):
        a = build_stage_codebook(5, 3, seed=1)
        b = build_stage_codebook(5, 3, seed=2)
        assert a.fingerprint() == build_stage_codebook(5, 3, seed=1).fingerprint()
        assert a.fingerprint() != b.fingerprint()
