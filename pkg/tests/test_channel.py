import numpy as np
import pytest

from grassquant.channel import (ChannelTrajectory, CorrelationSpec, bessel_j0,
                                generate_clarke_sos, generate_gauss_markov,
                                generate_iid, load_trajectory, save_trajectory,
                                substream)
from grassquant.errors import CodebookFormatError


def j0_series(x: float) -> float:
    """Independent power-series oracle, usable for |x| <= 15 in doubles."""
    term = 1.0
    total = 1.0
    k = 0
    while abs(term) > 1e-18 * max(1.0, abs(total)) and k < 200:
        k += 1
        term *= -(x * x) / (4.0 * k * k)
        total += term
    return total


def j0_quadrature(x: float, nodes: int = 600) -> float:
    """Independent integral oracle J0(x) = (1/pi) int_0^pi cos(x sin t) dt."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * np.pi * (t + 1.0)
    w = 0.5 * np.pi * w
    return float(np.sum(w * np.cos(x * np.sin(t))) / np.pi)


class TestBesselJ0:
    def test_at_zero(self):
        assert bessel_j0(0.0) == 1.0

    def test_first_zero(self):
        assert abs(bessel_j0(2.4048255577)) < 1e-8

    @pytest.mark.parametrize("x", [0.3, 1.0, 2.0, 5.0, 10.0, 14.5])
    def test_against_series(self, x):
        assert bessel_j0(x) == pytest.approx(j0_series(x), abs=1e-10)
        assert bessel_j0(-x) == pytest.approx(j0_series(x), abs=1e-10)

    def test_known_value(self):
        assert bessel_j0(1.0) == pytest.approx(0.7651976866, abs=1e-9)

    @pytest.mark.parametrize("x", [0.5, 7.0, 20.0, 43.1, 77.7, 100.0])
    def test_against_quadrature(self, x):
        assert bessel_j0(x) == pytest.approx(j0_quadrature(x), abs=1e-10)


class TestCorrelationSpec:
    def test_alpha_consistency(self):
        spec = CorrelationSpec("gauss_markov", 0.01)
        assert spec.alpha == pytest.approx(bessel_j0(2 * np.pi * 0.01), abs=1e-12)

    def test_clarke_profile(self):
        spec = CorrelationSpec("clarke", 0.02)
        assert spec.autocorrelation(5) == pytest.approx(
            bessel_j0(2 * np.pi * 0.02 * 5), abs=1e-12)

    def test_rejects_bad_kind(self):
        with pytest.raises(ValueError):
            CorrelationSpec("jakes", 0.1)


def solve_nu_for_alpha(alpha: float) -> float:
    """Doppler giving J0(2 pi nu) = alpha, bisection on [0, first zero)."""
    lo, hi = 0.0, 2.40482 / (2 * np.pi)
    for _ in range(80):
        mid = (lo + hi) / 2
        if bessel_j0(2 * np.pi * mid) > alpha:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


class TestGaussMarkov:
    def test_static_channel(self, rng):
        traj = generate_gauss_markov(3, 2, 20, 0.0, rng)
        for k in range(1, 20):
            assert np.array_equal(traj[k], traj[0])

    def test_memoryless_limit(self, rng):
        nu_zero = 2.4048255577 / (2 * np.pi)  # alpha = 0
        corr = []
        for t in range(400):
            traj = generate_gauss_markov(2, 2, 2, nu_zero, rng)
            corr.append(np.mean(traj[0].conj() * traj[1]))
        se = 1.0 / np.sqrt(len(corr) * 4)
        assert abs(np.mean(corr)) <= 3 * se

    def test_ar1_autocorrelation(self):
        nu = solve_nu_for_alpha(0.9)
        total = np.zeros(11, dtype=complex)
        weight = 0
        for t in range(300):
            traj = generate_gauss_markov(4, 8, 120, nu, substream(5150, t))
            flat = traj.matrices.reshape(120, -1)
            for lag in range(11):
                total[lag] += np.sum(flat[:120 - lag].conj() * flat[lag:])
            weight += flat.shape[1]
        base = total[0].real
        for lag in range(1, 11):
            measured = (total[lag] / base * (120 / (120 - lag))).real
            assert measured == pytest.approx(0.9 ** lag, abs=0.02)

    def test_determinism(self):
        a = generate_gauss_markov(2, 2, 50, 0.01, substream(42, 0))
        b = generate_gauss_markov(2, 2, 50, 0.01, substream(42, 0))
        assert np.array_equal(a.matrices, b.matrices)

    def test_stationarity(self):
        # ensemble statistics: the per-trajectory time average is dominated
        # by the correlated start, so average over independent trajectories
        acc = 0.0 + 0.0j
        acc2 = 0.0
        count = 0
        for t in range(200):
            traj = generate_gauss_markov(8, 4, 100, 0.1, substream(31337, t))
            flat = traj.matrices.ravel()
            acc += flat.sum()
            acc2 += np.sum(np.abs(flat) ** 2)
            count += flat.size
        assert abs(acc / count) <= 0.02
        assert acc2 / count == pytest.approx(1.0, rel=0.05)


class TestClarkeSos:
    def test_static_at_zero_doppler(self, rng):
        traj = generate_clarke_sos(2, 1, 30, 0.0, 16, rng)
        for k in range(1, 30):
            assert np.allclose(traj[k], traj[0], atol=1e-12)

    def test_autocorrelation_matches_j0(self):
        nu = 0.01
        lags = (1, 5, 10)
        total = {lag: 0.0 + 0.0j for lag in lags}
        base = 0.0
        length = 200
        for t in range(1000):
            traj = generate_clarke_sos(2, 2, length, nu, 32, substream(777, t))
            flat = traj.matrices.reshape(length, -1)
            base += np.sum(np.abs(flat) ** 2) / length
            for lag in lags:
                total[lag] += np.sum(flat[:length - lag].conj() * flat[lag:]) / (length - lag)
        for lag in lags:
            expected = bessel_j0(2 * np.pi * nu * lag)
            assert (total[lag] / base).real == pytest.approx(expected, abs=0.03)

    def test_variance_and_mean(self):
        # ensemble statistics over independent angle/phase draws
        acc = 0.0 + 0.0j
        acc2 = 0.0
        count = 0
        for t in range(150):
            traj = generate_clarke_sos(4, 4, 60, 0.005, 32, substream(2024, t))
            flat = traj.matrices.ravel()
            acc += flat.sum()
            acc2 += np.sum(np.abs(flat) ** 2)
            count += flat.size
        assert abs(acc / count) <= 0.02
        assert acc2 / count == pytest.approx(1.0, rel=0.05)

    def test_cross_entry_decorrelation(self):
        # fast fading ensemble; entries must stay spatially uncorrelated
        cross = np.zeros((4, 4), dtype=complex)
        count = 0
        for t in range(300):
            traj = generate_clarke_sos(2, 2, 40, 0.2, 16, substream(808, t))
            flat = traj.matrices.reshape(-1, 4)
            cross += flat.conj().T @ flat
            count += flat.shape[0]
        cross /= count
        for a in range(4):
            for b in range(a + 1, 4):
                assert abs(cross[a, b]) <= 0.03

    def test_determinism(self):
        a = generate_clarke_sos(2, 1, 64, 0.02, 16, substream(9, 4))
        b = generate_clarke_sos(2, 1, 64, 0.02, 16, substream(9, 4))
        assert np.array_equal(a.matrices, b.matrices)

    def test_rejects_few_sinusoids(self, rng):
        with pytest.raises(ValueError):
            generate_clarke_sos(2, 1, 10, 0.01, 4, rng)


class TestIid:
    def test_unit_variance(self, rng):
        traj = generate_iid(4, 4, 7000, rng)
        var = np.mean(np.abs(traj.matrices) ** 2)
        assert var == pytest.approx(1.0, rel=0.05)


class TestTrajectoryFile:
    def test_round_trip(self, rng, tmp_path):
        traj = generate_gauss_markov(3, 2, 40, 0.015, rng)
        path = tmp_path / "traj.gqtr"
        save_trajectory(traj, path)
        loaded = load_trajectory(path)
        assert np.array_equal(loaded.matrices, traj.matrices)
        assert loaded.model_tag == "gauss_markov"
        assert loaded.nu_d == traj.nu_d
        assert (loaded.n, loaded.m, loaded.length) == (3, 2, 40)

    def test_truncated_file(self, rng, tmp_path):
        traj = generate_iid(2, 1, 10, rng)
        path = tmp_path / "traj.gqtr"
        save_trajectory(traj, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 7])
        with pytest.raises(CodebookFormatError):
            load_trajectory(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bogus.gqtr"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CodebookFormatError):
            load_trajectory(path)


class TestSubstream:
    def test_streams_differ_and_reproduce(self):
        a1 = substream(1234, 0).standard_normal(8)
        a2 = substream(1234, 0).standard_normal(8)
        b = substream(1234, 1).standard_normal(8)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)


class TestTrajectoryType:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ChannelTrajectory(2, 2, np.zeros((5, 3, 2), dtype=complex), "iid", 0.0)

    def test_unknown_tag(self):
        with pytest.raises(ValueError):
            ChannelTrajectory(2, 2, np.zeros((5, 2, 2), dtype=complex), "rician", 0.0)
