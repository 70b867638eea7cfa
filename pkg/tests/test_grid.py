import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac_chest.grid import (
    ConfigurationError,
    OfdmConfig,
    PathSet,
    dmrs_pattern,
    gen_cfr,
    gen_random_paths,
    qam_constellation,
    qam_demodulate,
    qam_modulate,
    transmit,
    zf_equalize,
)

from conftest import THREE_PATH


class TestOfdmConfig:
    def test_table1_values(self):
        cfg = OfdmConfig.table1()
        assert cfg.shape == (1584, 56)
        assert cfg.bandwidth == pytest.approx(190.08e6)

    @pytest.mark.parametrize("kwargs", [
        dict(subcarrier_spacing=0.0),
        dict(symbol_duration=1e-6),   # shorter than 1 / 120 kHz
        dict(num_subcarriers=1),
    ])
    def test_rejects_invalid(self, kwargs):
        base = dict(subcarrier_spacing=120e3, symbol_duration=8.9e-6,
                    num_subcarriers=16, num_symbols=8)
        base.update(kwargs)
        with pytest.raises(ConfigurationError):
            OfdmConfig(**base)


class TestDmrsPattern:
    def test_table1_counts(self):
        pat = dmrs_pattern(OfdmConfig.table1(), 8, 8)
        assert (pat.n_p, pat.m_p) == (198, 7)

    def test_dense_identity(self):
        cfg = OfdmConfig(120e3, 8.9e-6, 8, 8)
        pat = dmrs_pattern(cfg, 1, 1)
        assert pat.mask(cfg.shape).all()

    def test_small_sets(self):
        pat = dmrs_pattern(OfdmConfig(120e3, 8.9e-6, 16, 8), 4, 2)
        np.testing.assert_array_equal(pat.pilot_subcarriers, [1, 5, 9, 13])
        np.testing.assert_array_equal(pat.pilot_symbols, [1, 3, 5, 7])
        assert pat.density == 8

    @pytest.mark.parametrize("d_sc,d_sym", [(0, 1), (3, 1), (1, 5)])
    def test_rejects_bad_intervals(self, d_sc, d_sym):
        with pytest.raises(ConfigurationError):
            dmrs_pattern(OfdmConfig(120e3, 8.9e-6, 16, 8), d_sc, d_sym)


class TestGenCfr:
    cfg = OfdmConfig(120e3, 8.9e-6, 16, 8)

    def test_static_path_is_all_ones(self):
        h = gen_cfr(self.cfg, PathSet([1.0], [0.0], [0.0]))
        np.testing.assert_allclose(h, np.ones(self.cfg.shape), atol=1e-15)

    def test_one_sample_delay(self):
        n = self.cfg.num_subcarriers
        tau = 1.0 / (n * self.cfg.subcarrier_spacing)
        h = gen_cfr(self.cfg, PathSet([1.0], [tau], [0.0]))
        expected = np.exp(-2j * np.pi * np.arange(1, n + 1) / n)
        for col in h.T:
            np.testing.assert_allclose(col, expected, atol=1e-12)

    def test_opposite_doppler_pair_is_real(self):
        f = 2.1e3
        h = gen_cfr(self.cfg, PathSet([1.0, 1.0], [0.0, 0.0], [f, -f]))
        m = np.arange(1, self.cfg.num_symbols + 1)
        expected = 2 * np.cos(2 * np.pi * m * self.cfg.symbol_duration * f)
        np.testing.assert_allclose(h, np.tile(expected, (16, 1)), atol=1e-12)

    def test_symbol_offset_continues_the_slot(self):
        paths = PathSet([0.3 + 0.1j], [50e-9], [1.1e3])
        two = gen_cfr(self.cfg, paths, num_symbols=16)
        second = gen_cfr(self.cfg, paths, symbol_offset=8)
        np.testing.assert_allclose(two[:, 8:], second, atol=1e-12)


class TestGenRandomPaths:
    def test_power_ratio(self):
        rng = np.random.default_rng(0)
        draws = np.array([gen_random_paths(*THREE_PATH, rng=rng).gains for _ in range(20000)])
        p = np.mean(np.abs(draws) ** 2, axis=0)
        assert p.sum() == pytest.approx(1.0, rel=0.03)
        assert p[0] / p[1] == pytest.approx(10 ** 0.5, rel=0.05)

    def test_single_path_unit_power(self):
        rng = np.random.default_rng(1)
        g = np.array([gen_random_paths([0.0], [0.0], [0.0], rng=rng).gains[0] for _ in range(20000)])
        assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, rel=0.03)

    def test_deterministic(self):
        a = gen_random_paths(*THREE_PATH, rng=7)
        b = gen_random_paths(*THREE_PATH, rng=7)
        np.testing.assert_array_equal(a.gains, b.gains)

    @pytest.mark.parametrize("args", [
        ([], [], []),
        ([0.0, 1.0], [0.0], [0.0]),
    ])
    def test_rejects_bad_lists(self, args):
        with pytest.raises(ConfigurationError):
            gen_random_paths(*args, rng=0)


class TestTransmit:
    def test_noise_disabled(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((8, 4)) + 0j
        h = rng.standard_normal((8, 4)) + 1j
        np.testing.assert_array_equal(transmit(x, h, np.inf, add_noise=False), x * h)

    def test_infinite_snr_is_noiseless(self):
        x = np.ones((4, 4), complex)
        np.testing.assert_array_equal(transmit(x, x, np.inf, rng=0), x)

    def test_noise_variance(self):
        ones = np.ones((200, 100), complex)
        y = transmit(ones, ones, 0.0, rng=3)
        var = np.var(y - 1)
        # standard error of a sample variance over 2e4 CN(0,1) entries is 1/sqrt(2e4)
        assert abs(var - 1.0) < 3 / np.sqrt(2e4)

    def test_deterministic(self):
        ones = np.ones((8, 4), complex)
        np.testing.assert_array_equal(transmit(ones, ones, 10, rng=5), transmit(ones, ones, 10, rng=5))

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            transmit(np.ones((2, 2)), np.ones((2, 3)), 10)


class TestQam:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=6, max_size=600).map(lambda b: b[:len(b) - len(b) % 6]))
    def test_round_trip_64(self, bits):
        np.testing.assert_array_equal(qam_demodulate(qam_modulate(bits, 64), 64), bits)

    @pytest.mark.parametrize("order", [4, 16, 64, 256, 1024])
    def test_unit_mean_power(self, order):
        c = qam_constellation(order)
        assert np.mean(np.abs(c) ** 2) == pytest.approx(1.0, abs=1e-12)
        assert len(np.unique(np.round(c, 12))) == order

    def test_qpsk_map(self):
        np.testing.assert_allclose(qam_modulate([0, 0], 4), [(1 + 1j) / np.sqrt(2)])
        np.testing.assert_allclose(qam_modulate([1, 0], 4), [(-1 + 1j) / np.sqrt(2)])

    @pytest.mark.parametrize("order", [16, 64])
    def test_gray_neighbours_differ_by_one_bit(self, order):
        c = qam_constellation(order)
        k = int(np.log2(order))
        step = np.min(np.abs(c[1:] - c[0]))
        for i in range(order):
            for j in range(order):
                if abs(abs(c[i] - c[j]) - step) < 1e-9:
                    assert bin(i ^ j).count("1") == 1, (i, j, k)

    def test_unsupported_order(self):
        with pytest.raises(ConfigurationError):
            qam_modulate([0, 1, 0], 8)


class TestZfEqualize:
    def test_exact_channel(self):
        rng = np.random.default_rng(4)
        x = qam_modulate(rng.integers(0, 2, 64), 4).reshape(8, 4)
        h = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
        x_hat, erased = zf_equalize(x * h, h)
        np.testing.assert_allclose(x_hat, x, atol=1e-12)
        assert not erased.any()

    def test_linearity(self):
        x = np.full((2, 2), 1 + 1j)
        h = np.array([[1.0, 2.0], [0.5j, -1]])
        x_hat, _ = zf_equalize(x * h, 2 * h)
        np.testing.assert_allclose(x_hat, x / 2)

    def test_zero_entry_is_erased(self):
        h = np.array([[1.0, 0.0]])
        x_hat, erased = zf_equalize(np.array([[1.0, 1.0]]), h)
        assert erased.tolist() == [[False, True]]
        assert x_hat[0, 1] == 0
