"""Transceiver chain: projection identities, scrambling, exact inversion."""

import itertools

import numpy as np
import pytest

from airbreathe import signal_chain as sc
from airbreathe.channel import InterferenceProfile, draw_channels, transmit_round
from airbreathe.depth_control import estimate_gsi
from airbreathe.errors import ConfigurationError, DegenerateStatisticsError, RoundSkip


class TestPruneZeroPad:
    def test_coordinate_projection(self):
        mask = sc.PruningMask(indices=np.array([0, 2]), source_dim=4)
        np.testing.assert_array_equal(sc.prune(np.array([1.0, 2, 3, 4]), mask),
                                      [1.0, 3.0])

    def test_full_mask_is_identity(self):
        g = np.arange(6.0)
        mask = sc.PruningMask(indices=np.arange(6), source_dim=6)
        np.testing.assert_array_equal(sc.prune(g, mask), g)
        np.testing.assert_array_equal(sc.zero_pad(sc.prune(g, mask), mask), g)

    def test_zero_pad_places_zeros(self):
        mask = sc.PruningMask(indices=np.array([0, 2]), source_dim=4)
        np.testing.assert_array_equal(sc.zero_pad(np.array([1.0, 3.0]), mask),
                                      [1.0, 0.0, 3.0, 0.0])

    def test_right_inverse_for_random_masks(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            d = int(rng.integers(1, 30))
            s = int(rng.integers(1, d + 1))
            idx = np.sort(rng.choice(d, size=s, replace=False))
            mask = sc.PruningMask(indices=idx, source_dim=d)
            y = rng.standard_normal(s)
            np.testing.assert_array_equal(sc.prune(sc.zero_pad(y, mask), mask), y)

    def test_projection_idempotent(self):
        rng = np.random.default_rng(8)
        mask = sc.PruningMask(indices=np.array([1, 3, 4]), source_dim=6)
        g = rng.standard_normal(6)
        proj = sc.zero_pad(sc.prune(g, mask), mask)
        np.testing.assert_array_equal(sc.zero_pad(sc.prune(proj, mask), mask), proj)
        np.testing.assert_array_equal(proj[mask.indices], g[mask.indices])

    def test_dimension_mismatch_raises(self):
        mask = sc.PruningMask(indices=np.array([0]), source_dim=3)
        with pytest.raises(ConfigurationError):
            sc.prune(np.zeros(4), mask)
        with pytest.raises(ConfigurationError):
            sc.zero_pad(np.zeros(2), mask)

    def test_mask_validation(self):
        with pytest.raises(ConfigurationError):
            sc.PruningMask(indices=np.array([2, 1]), source_dim=4)
        with pytest.raises(ConfigurationError):
            sc.PruningMask(indices=np.array([4]), source_dim=4)
        with pytest.raises(ConfigurationError):
            sc.PruningMask(indices=np.array([], dtype=int), source_dim=4)

    def test_average_distortion_over_all_masks_uniform_vector(self):
        """Mean over all 6 size-2 masks of a constant 4-vector loses half."""
        g = np.ones(4)
        total = 0.0
        combos = list(itertools.combinations(range(4), 2))
        for combo in combos:
            mask = sc.PruningMask(indices=np.array(combo), source_dim=4)
            recon = sc.zero_pad(sc.prune(g, mask), mask)
            total += np.sum((g - recon) ** 2)
        assert total / len(combos) == pytest.approx(2.0, abs=1e-12)
        assert total / len(combos) == pytest.approx((1 - 0.5) * g @ g, abs=1e-12)


class TestMaskGeneration:
    def test_size_follows_depth(self):
        rng = np.random.default_rng(0)
        for depth, expect in [(1, 128), (4, 32), (5, 25), (64, 2)]:
            mask = sc.generate_mask(128, depth, rng)
            assert mask.size == expect
            assert mask.gamma == pytest.approx(expect / 128)

    def test_non_prunable_always_included(self):
        rng = np.random.default_rng(1)
        prunable = np.ones(20, dtype=bool)
        prunable[[3, 17]] = False
        for _ in range(20):
            mask = sc.generate_mask(20, 6, rng, prunable=prunable)
            assert {3, 17} <= set(mask.indices.tolist())
            assert mask.size == 18 // 6 + 2

    def test_explicit_gamma(self):
        rng = np.random.default_rng(2)
        mask = sc.generate_mask(128, 1, rng, gamma=0.1)
        assert mask.size == 12

    def test_masks_are_uniform_over_coordinates(self):
        rng = np.random.default_rng(3)
        counts = np.zeros(16)
        n = 4000
        for _ in range(n):
            counts[sc.generate_mask(16, 4, rng).indices] += 1
        freq = counts / n
        # each coordinate kept w.p. 4/16; 5 sigma band
        se = np.sqrt(0.25 * 0.75 / n)
        assert np.all(np.abs(freq - 0.25) < 5 * se)


class TestNormalization:
    def test_shift_and_scale(self):
        params = sc.NormalizationParams(mean=3.0, std=1.0)
        np.testing.assert_allclose(sc.normalize(np.array([2.0, 4.0]), params),
                                   [-1.0, 1.0])

    def test_identity_params(self):
        params = sc.NormalizationParams(mean=0.0, std=1.0)
        g = np.array([0.5, -2.0])
        np.testing.assert_array_equal(sc.normalize(g, params), g)

    def test_unit_symbol_power_monte_carlo(self):
        """Normalizing i.i.d. N(M, V²) symbols yields mean square 1 ± 5%."""
        rng = np.random.default_rng(4)
        m, v, s = 1.7, 2.3, 10_000
        gc = rng.normal(m, v, s)
        out = sc.normalize(gc, sc.NormalizationParams(mean=m, std=v))
        assert np.mean(out ** 2) == pytest.approx(1.0, rel=0.05)

    def test_degenerate_std_raises(self):
        params = sc.NormalizationParams(mean=0.0, std=1e-13)
        with pytest.raises(DegenerateStatisticsError):
            sc.normalize(np.ones(3), params)


class TestSpreadDespread:
    def test_single_symbol_chips(self):
        pn = sc.PNSequenceSet(chips=np.array([[1, -1, 1]]))
        np.testing.assert_array_equal(sc.spread(np.array([2.0]), pn),
                                      [2.0, -2.0, 2.0])

    def test_gain_one_is_identity(self):
        rng = np.random.default_rng(5)
        gn = rng.standard_normal(9)
        pn = sc.generate_pn(9, 1, rng)
        np.testing.assert_array_equal(sc.spread(gn, pn), gn)

    def test_spread_energy_identity(self):
        """||spread(x)||² = G·||x||² because chips are unit energy."""
        rng = np.random.default_rng(6)
        for g in (2, 7, 16):
            gn = rng.standard_normal(11)
            pn = sc.generate_pn(11, g, rng)
            assert np.sum(sc.spread(gn, pn) ** 2) == pytest.approx(g * gn @ gn)

    def test_chip_energy_and_alphabet(self):
        rng = np.random.default_rng(7)
        pn = sc.generate_pn(40, 13, rng)
        assert set(np.unique(pn.chips)) <= {-1, 1}
        np.testing.assert_allclose((pn.chips.astype(float) ** 2).mean(axis=1), 1.0)

    def test_despread_exact_recovery_no_interference(self):
        pn = sc.PNSequenceSet(chips=np.array([[1, -1]]))
        frame = np.array([3.0 + 0j, -3.0 + 0j])
        np.testing.assert_allclose(sc.despread(frame, pn), [3.0])

    def test_despread_superposition_alignment(self):
        """K aligned devices each sending 1 produce sqrt(P0)·K per symbol."""
        rng = np.random.default_rng(8)
        s, g, k, p0 = 5, 8, 3, 0.25
        pn = sc.generate_pn(s, g, rng)
        one_device = sc.spread(np.ones(s), pn)
        frame = (np.sqrt(p0) * k * one_device).astype(complex)
        np.testing.assert_allclose(sc.despread(frame, pn),
                                   np.full(s, np.sqrt(p0) * k))

    def test_despread_interference_variance(self):
        """Interference-only output variance is P_I / G (Monte Carlo)."""
        rng = np.random.default_rng(9)
        p_i, g, n = 1.5, 8, 100_000
        pn = sc.generate_pn(n, g, rng)
        frame = np.sqrt(p_i) * (rng.standard_normal(n * g)
                                + 1j * rng.standard_normal(n * g))
        out = sc.despread(frame, pn)
        assert np.var(out) == pytest.approx(p_i / g, rel=0.05)

    def test_row_count_mismatch_raises(self):
        pn = sc.PNSequenceSet(chips=np.ones((3, 2), dtype=np.int8))
        with pytest.raises(ConfigurationError):
            sc.spread(np.zeros(2), pn)
        with pytest.raises(ConfigurationError):
            sc.despread(np.zeros(5, dtype=complex), pn)


class TestDenormalize:
    def test_exact_inverse_of_normalize_and_alignment(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal(6)
        m, v, k, p0 = 0.4, 1.7, 5, 0.01
        y = np.sqrt(p0) * k * (x - m) / v
        out = sc.denormalize(y, sc.NormalizationParams(mean=m, std=v), k, p0)
        np.testing.assert_allclose(out, x, rtol=1e-12)

    def test_identity_configuration(self):
        y = np.array([0.3, -4.0])
        out = sc.denormalize(y, sc.NormalizationParams(mean=0.0, std=1.0), 1, 1.0)
        np.testing.assert_array_equal(out, y)

    def test_zero_active_raises_round_skip(self):
        with pytest.raises(RoundSkip):
            sc.denormalize(np.ones(2), sc.NormalizationParams(0.0, 1.0), 0, 1.0)


class TestLosslessChain:
    def test_receiver_recovers_ideal_average(self):
        """No interference + all devices active: output equals the mean."""
        rng = np.random.default_rng(11)
        dim, k, p0 = 32, 7, 0.04
        grads = rng.standard_normal((k, dim)) * 1.5 - 0.2
        gsi = estimate_gsi(list(grads))
        params = sc.NormalizationParams(mean=gsi.mean, std=np.sqrt(gsi.v_sq))
        for depth in (1, 4):
            mask = sc.generate_mask(dim, depth, rng)
            pn = sc.generate_pn(mask.size, depth, rng)
            chan = draw_channels(k, 0.0, p0, rng)
            chips = np.stack([sc.device_chips(g, mask, params, pn) for g in grads])
            frame = transmit_round(chips, chan, InterferenceProfile(0.0), rng)
            out = sc.receiver_output(frame, mask, params, pn, k, p0)
            ideal = grads.mean(axis=0)
            expected = sc.zero_pad(sc.prune(ideal, mask), mask)
            err = np.linalg.norm(out - expected) / np.linalg.norm(expected)
            assert err < 1e-10
