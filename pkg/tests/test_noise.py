import math

import numpy as np
import pytest
from scipy import stats

from spdelab.coefficients import MarkMeasure, StepFunction
from spdelab.noise import (
    JumpEvent,
    NoiseBundle,
    load_bundle,
    sample_brownian,
    sample_controlled_prm,
    sample_prm,
    save_bundle,
    stream,
)


def _poisson_chisquare_pvalue(counts, lam):
    """Chi-square goodness of fit of observed counts against Poisson(lam),
    merging tail bins so every expected count is >= 5."""
    n = len(counts)
    max_k = int(np.max(counts))
    observed = np.bincount(counts, minlength=max_k + 1).astype(float)
    expected = np.array([stats.poisson.pmf(k, lam) for k in range(max_k + 1)]) * n
    expected[-1] += stats.poisson.sf(max_k, lam) * n
    # merge small-expectation bins from the right
    while len(expected) > 2 and expected[-1] < 5:
        expected[-2] += expected[-1]
        observed[-2] += observed[-1]
        expected = expected[:-1]
        observed = observed[:-1]
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    dof = len(expected) - 1
    return stats.chi2.sf(chi2, dof)


class TestBrownian:
    def test_vanishing_step_gives_vanishing_increment(self):
        grid = np.array([0.0, 1e-30, 1.0])
        inc = sample_brownian(2, grid, seed=1)
        assert np.all(np.abs(inc[:, 0]) < 1e-12)

    def test_clt_mean_bound(self):
        # 1e5 samples of one step of length 0.1: mean within 4 sqrt(0.1/1e5)
        grid = np.array([0.0, 0.1])
        rng_means = [
            float(sample_brownian(1, grid, seed=42, replica=r)[0, 0])
            for r in range(100_000)
        ]
        assert abs(np.mean(rng_means)) < 4 * math.sqrt(0.1 / 1e5)

    def test_variance_scales_with_step(self):
        grid = np.array([0.0, 0.25, 0.75])
        incs = np.array([sample_brownian(1, grid, seed=3, replica=r)[0]
                         for r in range(20_000)])
        np.testing.assert_allclose(incs.var(axis=0), [0.25, 0.5], rtol=0.05)

    def test_determinism(self):
        grid = np.linspace(0.0, 1.0, 11)
        a = sample_brownian(3, grid, seed=9, replica=4)
        b = sample_brownian(3, grid, seed=9, replica=4)
        assert np.array_equal(a, b)
        c = sample_brownian(3, grid, seed=9, replica=5)
        assert not np.array_equal(a, c)

    def test_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            sample_brownian(1, np.array([0.0]), seed=1)
        with pytest.raises(ValueError):
            sample_brownian(1, np.array([0.5, 1.0]), seed=1)
        with pytest.raises(ValueError):
            sample_brownian(1, np.array([0.0, 0.5, 0.5]), seed=1)


class TestPrm:
    def test_negligible_weight_mark_is_silent(self):
        mm = MarkMeasure(weights=np.array([1e-12]))
        events = [sample_prm(1.0, mm, 1.0, seed=5, replica=r) for r in range(2000)]
        assert sum(len(e) for e in events) == 0

    def test_mean_count_poisson(self):
        # theta=2, nu=3, T=1: mean 6 within 4 sqrt(6/n)
        mm = MarkMeasure(weights=np.array([3.0]))
        counts = np.array([
            len(sample_prm(2.0, mm, 1.0, seed=17, replica=r)) for r in range(10_000)
        ])
        assert abs(counts.mean() - 6.0) < 4 * math.sqrt(6.0 / 10_000)

    def test_chisquare_goodness_of_fit(self):
        mm = MarkMeasure(weights=np.array([3.0]))
        counts = np.array([
            len(sample_prm(2.0, mm, 1.0, seed=23, replica=r)) for r in range(10_000)
        ])
        assert _poisson_chisquare_pvalue(counts, 6.0) > 0.01

    def test_times_sorted_in_range(self):
        mm = MarkMeasure(weights=np.array([5.0, 2.0]))
        events = sample_prm(3.0, mm, 2.0, seed=8)
        times = [e.time for e in events]
        assert times == sorted(times)
        assert all(0 < t <= 2.0 for t in times)
        assert len(set(times)) == len(times)

    def test_rejects_nonpositive_theta(self):
        mm = MarkMeasure(weights=np.array([1.0]))
        with pytest.raises(ValueError):
            sample_prm(0.0, mm, 1.0, seed=1)


class TestControlledPrm:
    def test_zero_control_empty(self):
        mm = MarkMeasure(weights=np.array([1.0]))
        phi = StepFunction(np.array([0.0, 1.0]), np.array([[0.0]]))
        assert sample_controlled_prm(phi, 1.0, mm, seed=3) == []

    def test_constant_control_matches_plain_prm_in_distribution(self):
        # phi = theta constant: same law as a PRM with intensity theta/eps.
        mm = MarkMeasure(weights=np.array([1.5]))
        theta, eps = 2.0, 1.0
        phi = StepFunction(np.array([0.0, 1.0]), np.array([[theta]]))
        thinned = np.array([
            len(sample_controlled_prm(phi, eps, mm, seed=31, replica=r))
            for r in range(10_000)
        ])
        plain = np.array([
            len(sample_prm(theta / eps, mm, 1.0, seed=77, replica=r))
            for r in range(10_000)
        ])
        # two-sample chi-square on count histograms
        top = int(max(thinned.max(), plain.max())) + 1
        obs1 = np.bincount(thinned, minlength=top).astype(float)
        obs2 = np.bincount(plain, minlength=top).astype(float)
        keep = (obs1 + obs2) >= 10
        obs1 = np.append(obs1[keep], obs1[~keep].sum())
        obs2 = np.append(obs2[keep], obs2[~keep].sum())
        total = obs1 + obs2
        expected1 = total * obs1.sum() / (obs1.sum() + obs2.sum())
        chi2 = np.sum((obs1 - expected1) ** 2 / np.maximum(expected1, 1e-12))
        p = stats.chi2.sf(chi2, len(obs1) - 1)
        assert p > 0.01
        # and the thinned counts are Poisson(theta nu T / eps) on their own
        assert _poisson_chisquare_pvalue(thinned, theta * 1.5 / eps) > 0.01

    def test_piecewise_control_mean_counts(self):
        # phi = 2 on [0, 1/2], 0.5 after; eps = 1, nu = 1: means T and T/4
        mm = MarkMeasure(weights=np.array([1.0]))
        phi = StepFunction(np.array([0.0, 0.5, 1.0]), np.array([[2.0], [0.5]]))
        first, second = [], []
        for r in range(10_000):
            events = sample_controlled_prm(phi, 1.0, mm, seed=101, replica=r)
            first.append(sum(1 for e in events if e.time <= 0.5))
            second.append(sum(1 for e in events if e.time > 0.5))
        se1 = math.sqrt(1.0 / 10_000)
        se2 = math.sqrt(0.25 / 10_000)
        assert abs(np.mean(first) - 1.0) < 4 * se1
        assert abs(np.mean(second) - 0.25) < 4 * se2

    def test_superposition_expected_total(self):
        mm = MarkMeasure(weights=np.array([0.7, 0.4]))
        phi = StepFunction(
            np.array([0.0, 0.3, 1.0]), np.array([[1.5, 0.2], [0.6, 2.5]])
        )
        eps = 0.5
        expected = (
            0.3 * (1.5 * 0.7 + 0.2 * 0.4) + 0.7 * (0.6 * 0.7 + 2.5 * 0.4)
        ) / eps
        counts = np.array([
            len(sample_controlled_prm(phi, eps, mm, seed=55, replica=r))
            for r in range(10_000)
        ])
        assert abs(counts.mean() - expected) < 4 * math.sqrt(expected / 10_000)

    def test_rejects_negative_entries(self):
        mm = MarkMeasure(weights=np.array([1.0]))
        phi = StepFunction(np.array([0.0, 1.0]), np.array([[-0.5]]))
        with pytest.raises(ValueError):
            sample_controlled_prm(phi, 1.0, mm, seed=1)


class TestBundleIO:
    def test_round_trip(self, tmp_path):
        grid = np.linspace(0.0, 1.0, 6)
        bundle = NoiseBundle(
            grid=grid,
            brownian=sample_brownian(2, grid, seed=13),
            jumps=[JumpEvent(0.25, 0), JumpEvent(0.9, 1)],
            seed=13,
        )
        path = tmp_path / "noise.bin"
        save_bundle(path, bundle)
        loaded = load_bundle(path)
        assert loaded == bundle

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a bundle")
        with pytest.raises(ValueError):
            load_bundle(path)


def test_stream_purposes_are_independent():
    a = stream(1, 0, "brownian").standard_normal(4)
    b = stream(1, 0, "jumps").standard_normal(4)
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        stream(1, 0, "nonsense")
