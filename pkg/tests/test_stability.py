import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from expstable.decorations import make_decoration
from expstable.errors import DegenerateAlpha
from expstable.measure import Window
from expstable.sampler import DpppSpec
from expstable.stability import (
    MIN_CATEGORY,
    GaussianIntensityPoisson,
    StabilityReport,
    category_bins,
    beta_for,
    check_stability,
    check_superposition_shift,
    compare_batches,
    comparison_edges,
    count_homogeneity_pvalue,
)

W = Window(-4.0, math.inf)


def test_beta_relation():
    assert beta_for(-math.log(2)) == pytest.approx(-math.log(2))
    assert beta_for(-math.log(4)) == pytest.approx(math.log(0.75))
    for bad in (0.0, 0.3, -math.inf):
        with pytest.raises(DegenerateAlpha):
            beta_for(bad)


def test_report_validation():
    with pytest.raises(ValueError):
        StabilityReport(-1.0, -1.0, 0.1, 0.5, [], [], "consistent")
    with pytest.raises(ValueError):
        StabilityReport(None, None, 0.1, 1.5, [], [], "consistent")
    r = StabilityReport(-math.log(2), -math.log(2), 0.01, 0.5, [0.2, 0.3], [0.5, -1.0], "consistent")
    assert r.n_tests == 5
    assert r.min_pvalue == 0.2
    assert r.cumulant_pvalues[1] == pytest.approx(2 * (1 - special.ndtr(1.0)))
    assert "threshold" in r.to_json() and "alpha" in r.table()


def test_comparison_edges():
    e = comparison_edges(Window(-4.0, math.inf))
    assert e[0] == -2.0 and e[-1] == 4.0 and e.size == 11


@given(st.lists(st.integers(0, 6), min_size=20, max_size=300))
def test_categories_hold_enough_observations(values):
    values = np.array(values, dtype=float)
    bins = category_bins(values)
    if values.size >= MIN_CATEGORY:
        counts = np.histogram(values, bins)[0]
        assert np.all(counts >= MIN_CATEGORY)
        assert counts.sum() == values.size


def test_homogeneity_pvalue_identical_and_shifted():
    rng = np.random.default_rng(0)
    x = rng.poisson(3.0, 2000)
    assert count_homogeneity_pvalue(x, x) == pytest.approx(1.0)
    assert count_homogeneity_pvalue(x, rng.poisson(4.0, 2000)) < 1e-6
    assert count_homogeneity_pvalue(np.zeros(50), np.zeros(50)) == 1.0


def test_identical_batches_are_consistent():
    spec = DpppSpec(make_decoration("finite_cluster"), W)
    b = spec.sample_batch(2000, seed=1)
    r = compare_batches(b, b)
    assert r.consistent and r.ks_stat_max == 0.0
    assert all(z == 0.0 for z in r.cumulant_zscores)


def test_gaussian_control_intensity():
    g = GaussianIntensityPoisson(W)
    b = g.sample_batch(20000, seed=2)
    mean = math.sqrt(math.pi) * special.ndtr(4 * math.sqrt(2))
    assert abs(b.counts.mean() - mean) < 4 * math.sqrt(mean / 20000)
    assert b.positions.min() >= -4.0
    # E Z([0, inf)) = sqrt(pi) / 2
    assert abs(b.mass_in(Window(0.0)).mean() - math.sqrt(math.pi) / 2) < 0.03


@pytest.mark.parametrize("alpha", [-math.log(2), -math.log(4), -0.1])
def test_dirac0_is_stable(alpha):
    r = check_stability(DpppSpec(make_decoration("dirac0"), W), alpha, 5000, seed=7)
    assert r.consistent, r.table()
    assert math.exp(r.alpha) + math.exp(r.beta) == pytest.approx(1.0)


def test_control_is_rejected():
    r = check_stability(GaussianIntensityPoisson(W), -math.log(2), 5000, seed=7)
    assert not r.consistent


def test_superposition_shift():
    assert check_superposition_shift(DpppSpec(make_decoration("staircase"), W), 5000, seed=3).consistent
    assert not check_superposition_shift(GaussianIntensityPoisson(W), 5000, seed=3).consistent


def test_battery_detects_wrong_shift():
    spec = DpppSpec(make_decoration("dirac0"), W)
    from expstable.sampler import Shifted
    from expstable.stability import compare_processes

    r = compare_processes(spec, Shifted(spec, 0.15).with_window(W), 10000, seed=5)
    assert not r.consistent
