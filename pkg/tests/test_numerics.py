import numpy as np
import pytest

from grassquant.errors import NumericalFailure
from grassquant.numerics import (batch_complement_completion, chordal_distance,
                                 compact_svd, complement_completion,
                                 complex_gaussian, inv_sqrt_hermitian,
                                 is_semi_unitary, random_semiunitary)


def random_unitary(size, rng):
    return random_semiunitary(size, size, rng)


class TestSubspaceValidation:
    def test_accepts_valid_basis(self, rng):
        from grassquant.numerics import check_subspace_basis
        q = random_semiunitary(5, 2, rng)
        assert check_subspace_basis(q).shape == (5, 2)

    def test_rejects_wide_and_non_orthonormal(self, rng):
        from grassquant.numerics import check_subspace_basis
        with pytest.raises(ValueError):
            check_subspace_basis(np.ones((2, 3), dtype=complex))
        with pytest.raises(ValueError):
            check_subspace_basis(np.ones((3, 2), dtype=complex))


class TestCompactSvd:
    def test_identity(self):
        u, s, v = compact_svd(np.eye(2, dtype=complex))
        assert np.allclose(u, np.eye(2), atol=1e-12)
        assert np.allclose(s, [1.0, 1.0])

    def test_single_column(self):
        u, s, _ = compact_svd(np.array([[2.0], [0.0]], dtype=complex))
        assert s == pytest.approx([2.0])
        assert chordal_distance(u, np.array([[1.0], [0.0]], dtype=complex)) < 1e-12

    @pytest.mark.parametrize("shape", [(6, 2), (4, 1), (8, 3), (3, 3)])
    def test_reconstruction(self, shape, rng):
        for _ in range(1000):
            h = complex_gaussian(rng, shape)
            u, s, v = compact_svd(h)
            err = np.linalg.norm(h - u @ np.diag(s) @ v.conj().T)
            assert err <= 1e-9 * np.linalg.norm(h)
            assert is_semi_unitary(u)
            assert np.all(np.diff(s) <= 0)

    def test_phase_convention_pins_first_entry(self, rng):
        h = complex_gaussian(rng, (5, 2))
        u, _, _ = compact_svd(h)
        for j in range(2):
            assert u[0, j].imag == 0.0
            assert u[0, j].real >= 0.0

    def test_wide_matrix_rejected(self):
        with pytest.raises(ValueError):
            compact_svd(np.ones((2, 3), dtype=complex))


class TestChordalDistance:
    def test_identical_subspace(self, rng):
        u = random_semiunitary(6, 2, rng)
        assert chordal_distance(u, u) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_lines(self):
        e1 = np.array([[1.0], [0.0]], dtype=complex)
        e2 = np.array([[0.0], [1.0]], dtype=complex)
        assert chordal_distance(e1, e2) == pytest.approx(1.0)

    def test_uniform_on_two_dim_lines(self, rng):
        # |q^H u|^2 for isotropic lines in C^2 is Beta(1,1): mean distance 1/2
        count = 100_000
        u = complex_gaussian(rng, (count, 2))
        q = complex_gaussian(rng, (count, 2))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        dist = 1.0 - np.abs(np.sum(u.conj() * q, axis=1)) ** 2
        assert dist.mean() == pytest.approx(0.5, abs=0.01)

    def test_symmetry_and_bounds(self, rng):
        for _ in range(50):
            u = random_semiunitary(5, 2, rng)
            q = random_semiunitary(5, 2, rng)
            d1 = chordal_distance(u, q)
            d2 = chordal_distance(q, u)
            assert d1 == pytest.approx(d2, abs=1e-12)
            assert 0.0 <= d1 <= 1.0

    def test_right_unitary_invariance(self, rng):
        u = random_semiunitary(6, 3, rng)
        q = random_semiunitary(6, 3, rng)
        r = random_unitary(3, rng)
        assert chordal_distance(u @ r, q) == pytest.approx(
            chordal_distance(u, q), abs=1e-12)
        assert chordal_distance(u, q @ r) == pytest.approx(
            chordal_distance(u, q), abs=1e-12)

    def test_zero_iff_same_span(self, rng):
        u = random_semiunitary(7, 3, rng)
        r = random_unitary(3, rng)
        assert chordal_distance(u, u @ r) < 1e-9

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            chordal_distance(random_semiunitary(4, 2, rng),
                             random_semiunitary(4, 1, rng))


class TestRandomSemiunitary:
    def test_semi_unitary(self, rng):
        for n, m in [(4, 1), (6, 2), (8, 8), (32, 1)]:
            q = random_semiunitary(n, m, rng)
            assert is_semi_unitary(q, tol=1e-10)

    def test_determinism(self):
        a = random_semiunitary(5, 2, np.random.default_rng(7))
        b = random_semiunitary(5, 2, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_isotropy_energy_split(self, rng):
        # isotropic lines in C^4 put 1/4 of their energy on each coordinate
        count = 100_000
        acc = 0.0
        for _ in range(count // 1000):
            block = np.stack([random_semiunitary(4, 1, rng)[:, 0]
                              for _ in range(1000)])
            acc += np.sum(np.abs(block[:, 0]) ** 2)
        assert acc / count == pytest.approx(0.25, abs=0.01)

    def test_invalid_dims(self, rng):
        with pytest.raises(ValueError):
            random_semiunitary(2, 3, rng)


class TestInvSqrtHermitian:
    def test_identity(self):
        assert np.allclose(inv_sqrt_hermitian(np.eye(3, dtype=complex)), np.eye(3))

    def test_diagonal(self):
        s = inv_sqrt_hermitian(np.diag([4.0, 1.0]).astype(complex))
        assert np.allclose(s, np.diag([0.5, 1.0]), atol=1e-12)

    def test_defining_identity(self, rng):
        for _ in range(200):
            g = complex_gaussian(rng, (2, 2))
            a = g.conj().T @ g + np.eye(2)
            s = inv_sqrt_hermitian(a)
            assert np.max(np.abs(s @ a @ s - np.eye(2))) <= 1e-9
            assert np.max(np.abs(s - s.conj().T)) <= 1e-12

    def test_rejects_non_hermitian(self, rng):
        a = complex_gaussian(rng, (3, 3))
        with pytest.raises(NumericalFailure):
            inv_sqrt_hermitian(a)

    def test_rejects_near_singular(self):
        with pytest.raises(NumericalFailure):
            inv_sqrt_hermitian(np.diag([1.0, 1e-14]).astype(complex))


class TestComplementCompletion:
    def test_two_dim_e1(self):
        w = complement_completion(np.array([1.0, 0.0], dtype=complex))
        e2 = np.array([[0.0], [1.0]], dtype=complex)
        assert chordal_distance(w, e2) < 1e-12

    @pytest.mark.parametrize("d", [2, 3, 5, 8, 16, 32])
    def test_defining_properties(self, d, rng):
        for _ in range(20):
            q = complex_gaussian(rng, d)
            q /= np.linalg.norm(q)
            w = complement_completion(q)
            assert w.shape == (d, d - 1)
            assert is_semi_unitary(w, tol=1e-10)
            assert np.max(np.abs(q.conj() @ w)) <= 1e-10

    def test_phase_invariance_of_span(self, rng):
        q = complex_gaussian(rng, 6)
        q /= np.linalg.norm(q)
        w1 = complement_completion(q)
        for theta in rng.uniform(0, 2 * np.pi, size=8):
            w2 = complement_completion(np.exp(1j * theta) * q)
            assert chordal_distance(w1, w2) < 1e-10

    def test_determinism(self, rng):
        q = complex_gaussian(rng, 5)
        q /= np.linalg.norm(q)
        assert np.array_equal(complement_completion(q), complement_completion(q))

    def test_batch_matches_single(self, rng):
        qs = complex_gaussian(rng, (40, 7))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        batch = batch_complement_completion(qs)
        for i in range(40):
            assert np.allclose(batch[i], complement_completion(qs[i]), atol=1e-14)

    def test_zero_first_entry(self):
        q = np.array([0.0, 1.0, 0.0], dtype=complex)
        w = complement_completion(q)
        assert is_semi_unitary(w)
        assert np.max(np.abs(q.conj() @ w)) <= 1e-12

    def test_too_small_dim(self):
        with pytest.raises(ValueError):
            complement_completion(np.array([1.0], dtype=complex))
