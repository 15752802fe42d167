import math

import numpy as np
import pytest

from sdeweak.model import ContractViolation
from sdeweak.noise import (
    NoiseBudgetExceeded,
    NoiseKind,
    NoiseSource,
    inverse_normal_cdf,
    sobol_points,
)

# Standard normal quantiles computed independently at 40-digit precision
# (sqrt(2) * erfinv(2u - 1)), evaluated at the exact binary64 inputs; the
# upper-tail arguments round before the call, which matters at 1/phi(z)
# sensitivity.
QUANTILES = [
    (1e-12, -7.0344838253011319),
    (1e-9, -5.9978070150076869),
    (1e-6, -4.7534243088228989),
    (0.001, -3.0902323061678135),
    (0.025, -1.9599639845400542),
    (0.25, -0.67448975019608174),
    (0.5, 0.0),
    (0.975, 1.9599639845400542),
    (0.999999, 4.7534243088228989),
    (1.0 - 1e-9, 5.9978070196016374),
    (1.0 - 1e-12, 7.0344869100478352),
]


class TestInverseNormalCdf:
    def test_median(self):
        assert inverse_normal_cdf(0.5) == 0.0

    def test_upper_tail_value(self):
        assert inverse_normal_cdf(0.975) == pytest.approx(1.959963985, abs=1e-9)

    @pytest.mark.parametrize("u,expected", QUANTILES)
    def test_absolute_accuracy_across_domain(self, u, expected):
        assert inverse_normal_cdf(u) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        u = rng.uniform(1e-6, 0.5, size=200)
        left = inverse_normal_cdf(u)
        right = inverse_normal_cdf(1.0 - u)
        assert np.max(np.abs(left + right)) < 1e-12

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.4])
    def test_domain_enforced(self, u):
        with pytest.raises(ContractViolation):
            inverse_normal_cdf(u)

    def test_vectorised(self):
        out = inverse_normal_cdf(np.array([[0.25, 0.5], [0.75, 0.975]]))
        assert out.shape == (2, 2)


class TestDeterminism:
    @pytest.mark.parametrize("kind", list(NoiseKind))
    def test_same_path_same_matrix(self, kind):
        src = NoiseSource(kind=kind, seed=42, dims_per_path=12, replication_index=2)
        a = src.gaussian_increments(17, 6, 2, 0.25)
        b = src.gaussian_increments(17, 6, 2, 0.25)
        assert a.shape == (6, 2)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("kind", list(NoiseKind))
    def test_block_matches_per_path(self, kind):
        src = NoiseSource(kind=kind, seed=7, dims_per_path=8)
        block = src.increments_block(100, 5, 4, 2, 0.5)
        for i in range(5):
            assert np.array_equal(block[i], src.gaussian_increments(100 + i, 4, 2, 0.5))

    def test_distinct_paths_differ(self):
        src = NoiseSource.pseudo(seed=1, dims_per_path=4)
        assert not np.array_equal(
            src.gaussian_increments(0, 2, 2, 1.0), src.gaussian_increments(1, 2, 2, 1.0)
        )

    def test_distinct_replications_differ(self):
        a = NoiseSource.sobol(seed=1, dims_per_path=4, replication_index=0)
        b = NoiseSource.sobol(seed=1, dims_per_path=4, replication_index=1)
        assert not np.array_equal(
            a.gaussian_increments(5, 2, 2, 1.0), b.gaussian_increments(5, 2, 2, 1.0)
        )

    def test_budget_enforced(self):
        src = NoiseSource.pseudo(seed=0, dims_per_path=4)
        with pytest.raises(NoiseBudgetExceeded):
            src.gaussian_increments(0, 4, 2, 1.0)

    def test_step_size_must_be_positive(self):
        src = NoiseSource.pseudo(seed=0, dims_per_path=4)
        with pytest.raises(ContractViolation):
            src.increments_block(0, 1, 2, 2, 0.0)


class TestMoments:
    def test_standardised_mean_and_variance(self):
        # CLT bands at 4 / sqrt(M) for one million draws
        src = NoiseSource.pseudo(seed=123, dims_per_path=8)
        h = 0.25
        z = src.increments_block(0, 125_000, 4, 2, h).ravel() / math.sqrt(h)
        assert abs(z.mean()) < 0.004
        assert abs(z.var(ddof=1) - 1.0) < 0.006

    def test_stream_independence(self):
        # correlation between the first increments of adjacent paths
        src = NoiseSource.pseudo(seed=9, dims_per_path=2)
        block = src.increments_block(0, 200_000, 1, 2, 1.0)[:, 0, 0]
        pairs = block.reshape(100_000, 2)
        corr = np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1]
        assert abs(corr) < 0.013


class TestSobol:
    def test_raw_sequence_skips_origin(self):
        pts = sobol_points(2, 3)
        assert np.all(pts[0] == 0.5)  # first point after the origin

    def test_uniforms_strictly_inside_unit_interval(self):
        src = NoiseSource.sobol(seed=3, dims_per_path=8)
        u = src._sobol_uniforms(0, 4096, 8)
        assert u.min() > 0.0 and u.max() < 1.0

    def test_low_discrepancy_beats_pseudo_on_box_counts(self):
        # Box-count deviation on a 16x16 grid over the first 1024 points in
        # dimension 2. With these 20 frozen seeds the shifted Sobol set wins
        # every time; the documented expectation is >= 19/20 (re-seeding may
        # flake at ~5%).
        def proxy(points):
            idx = np.floor(points * 16).astype(int).clip(0, 15)
            counts = np.zeros((16, 16))
            for i, j in idx:
                counts[i, j] += 1
            return np.max(np.abs(counts / len(points) - 1.0 / 256.0))

        wins = 0
        for seed in range(20):
            sob = NoiseSource.sobol(seed=seed, dims_per_path=2)._sobol_uniforms(0, 1024, 2)
            pseudo = np.random.default_rng(seed).random((1024, 2))
            wins += proxy(sob) < proxy(pseudo)
        assert wins >= 19

    def test_digital_shift_preserves_dyadic_structure(self):
        # XOR with a constant permutes dyadic boxes, so the first 2^k points
        # still land one per box at matching resolution
        src = NoiseSource.sobol(seed=11, dims_per_path=2)
        u = src._sobol_uniforms(0, 16, 2)
        boxes = set(map(tuple, np.floor(u * np.array([16, 16])).astype(int) // np.array([1, 1])))
        # 16 points, 16 distinct cells in the 16x1 partition of the first axis
        assert len({b[0] for b in boxes}) == 16
