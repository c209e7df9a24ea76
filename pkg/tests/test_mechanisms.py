import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from privtrain.mechanisms import (
    ClipSpec,
    NoiseSpec,
    VoteHistogram,
    clip_l2,
    gaussian_perturb,
    noisy_argmax,
    poisson_sample,
)
from privtrain.rng import substream

finite_vectors = hnp.arrays(
    dtype=np.float64,
    shape=st.integers(1, 40),
    elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False),
)


class TestClipL2:
    def test_scales_long_vector(self):
        v = np.array([1.2, 1.6])  # norm 2
        out = clip_l2(v, ClipSpec(0.1))
        np.testing.assert_allclose(out, 0.05 * v, rtol=1e-15)
        assert np.linalg.norm(out) == pytest.approx(0.1, rel=1e-12)

    def test_short_vector_unchanged(self):
        v = np.array([0.03, 0.04])  # norm 0.05
        np.testing.assert_array_equal(clip_l2(v, ClipSpec(0.1)), v)

    def test_zero_vector(self):
        np.testing.assert_array_equal(
            clip_l2(np.zeros(5), ClipSpec(0.1)), np.zeros(5)
        )

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            clip_l2(np.array([1.0, np.nan]), ClipSpec(1.0))
        with pytest.raises(ValueError):
            clip_l2(np.array([np.inf]), ClipSpec(1.0))

    def test_rejects_bad_threshold(self):
        with pytest.raises(ValueError):
            ClipSpec(0.0)
        with pytest.raises(ValueError):
            ClipSpec(-1.0)

    @given(v=finite_vectors, c=st.floats(1e-6, 1e3))
    def test_norm_bound_and_idempotence(self, v, c):
        out = clip_l2(v, ClipSpec(c))
        assert np.linalg.norm(out) <= c + 1e-12
        again = clip_l2(out, ClipSpec(c))
        np.testing.assert_allclose(again, out, rtol=0, atol=1e-12 * max(1.0, c))

    @given(v=finite_vectors, c=st.floats(1e-3, 1e3), lam=st.floats(1e-3, 1e3))
    def test_positive_scaling_equivariance(self, v, c, lam):
        lhs = clip_l2(lam * v, ClipSpec(lam * c))
        rhs = lam * clip_l2(v, ClipSpec(c))
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)

    @given(v=finite_vectors, c=st.floats(1e-6, 1e3))
    def test_direction_preserved(self, v, c):
        out = clip_l2(v, ClipSpec(c))
        norm = np.linalg.norm(v)
        if norm > 0:
            cos = float(v @ out) / (norm * max(np.linalg.norm(out), 1e-300))
            assert cos == pytest.approx(1.0, abs=1e-9)


class TestGaussianPerturb:
    def test_sigma_zero_identity(self):
        v = np.arange(5.0)
        out = gaussian_perturb(v, NoiseSpec(0.0), 1.0, substream(0, "n"))
        np.testing.assert_array_equal(out, v)

    def test_deterministic_given_stream(self):
        v = np.ones(8)
        a = gaussian_perturb(v, NoiseSpec(2.0), 0.5, substream(3, "n"))
        b = gaussian_perturb(v, NoiseSpec(2.0), 0.5, substream(3, "n"))
        np.testing.assert_array_equal(a, b)

    def test_empirical_std(self):
        # Monte Carlo: 1e6 draws at sigma=1, sensitivity=0.1 -> std 0.1 +- 1%
        v = np.zeros(1_000_000)
        out = gaussian_perturb(v, NoiseSpec(1.0), 0.1, substream(7, "mc"))
        assert np.std(out) == pytest.approx(0.1, rel=0.01)

    def test_rejects_negative_sensitivity(self):
        with pytest.raises(ValueError):
            gaussian_perturb(np.ones(3), NoiseSpec(1.0), -0.1, substream(0, "n"))

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            NoiseSpec(-0.5)


class TestPoissonSample:
    def test_rate_zero_empty(self):
        assert poisson_sample(100, 0.0, substream(0, "p")).size == 0

    def test_rate_one_full(self):
        idx = poisson_sample(100, 1.0, substream(0, "p"))
        np.testing.assert_array_equal(idx, np.arange(100))

    def test_mean_size(self):
        # 1e4 draws at N=1000, q=0.1: mean 100 within +-3
        sizes = [
            poisson_sample(1000, 0.1, substream(11, "p", i)).size
            for i in range(10_000)
        ]
        assert np.mean(sizes) == pytest.approx(100.0, abs=3.0)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            poisson_sample(10, -0.1, substream(0, "p"))
        with pytest.raises(ValueError):
            poisson_sample(10, 1.1, substream(0, "p"))

    @given(q=st.floats(0.0, 1.0), seed=st.integers(0, 1000))
    def test_indices_sorted_unique_in_range(self, q, seed):
        idx = poisson_sample(50, q, substream(seed, "p"))
        assert np.all(np.diff(idx) > 0)
        assert idx.size == 0 or (0 <= idx.min() and idx.max() < 50)


class TestNoisyArgmax:
    def test_plurality_with_zero_noise(self):
        hist = VoteHistogram((900, 100))
        assert noisy_argmax(hist, 0.0, substream(0, "a")) == 0

    def test_tie_breaks_to_lowest_index(self):
        hist = VoteHistogram((5, 5))
        assert noisy_argmax(hist, 0.0, substream(0, "a")) == 0

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError):
            VoteHistogram(())

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            VoteHistogram((3, -1))

    def test_match_gaussian_difference_probability(self):
        # P(class 0 wins) = Phi((c0-c1) / (tau * sqrt(2))) for two classes
        from scipy.stats import norm

        hist = VoteHistogram((6, 4))
        tau = 2.0
        rng = substream(13, "mc")
        wins = sum(
            noisy_argmax(hist, tau, rng) == 0 for _ in range(100_000)
        )
        want = norm.cdf((6 - 4) / (tau * math.sqrt(2.0)))
        assert wins / 100_000 == pytest.approx(want, rel=0.01)

    def test_teacher_count(self):
        assert VoteHistogram((3, 4, 5)).num_teachers == 12
