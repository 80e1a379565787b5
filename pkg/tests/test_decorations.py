import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from expstable.decorations import (
    BUILTIN_DPPP,
    REGISTRY,
    DepthLimited,
    Empirical,
    ExponentialSpread,
    FiniteCluster,
    FixedAtoms,
    GrowingIntensity,
    Mixture,
    ShiftedLaw,
    checked_draw,
    dirac,
    make_decoration,
    two_point,
)
from expstable.rng import generator


def mc_mean_exp_pairing(law, n=200_000, seed=0):
    d = checked_draw(law, n, generator(seed))
    vals = np.bincount(d.owners(), weights=d.masses * np.exp(d.positions), minlength=n)
    return vals.mean(), vals.std(ddof=1) / math.sqrt(n)


@pytest.mark.parametrize("name", sorted(set(REGISTRY) - {"growing", "atoms", "dirac"}))
def test_draws_respect_declared_bounds(name):
    law = make_decoration(name)
    d = checked_draw(law, 2000, generator(1))
    assert d.counts.size == 2000 and d.positions.size == d.counts.sum()
    assert np.all(d.positions <= law.support_upper_bound)
    assert np.all(d.positions >= law.support_lower_bound)


@pytest.mark.parametrize("law", [FiniteCluster(), FiniteCluster(k=2, rate=0.5, depth=3.0),
                                 two_point(), ExponentialSpread(k=2, rate=3.0), FixedAtoms([0, -1], [2, 0.5])])
def test_mean_exp_pairing_closed_forms(law):
    mean, se = mc_mean_exp_pairing(law)
    assert abs(mean - law.mean_exp_pairing) < 4 * se + 1e-12


def test_closed_form_values():
    assert FiniteCluster().mean_exp_pairing == pytest.approx(2.5)
    assert two_point().mean_exp_pairing == pytest.approx(1.5)
    assert make_decoration("staircase").mean_exp_pairing == pytest.approx(sum(math.exp(-0.5 * j) for j in range(4)))
    assert dirac().name == "dirac0" and dirac().mean_exp_pairing == 1.0


def test_builtin_list():
    assert BUILTIN_DPPP == ("dirac0", "finite_cluster", "staircase")
    for name in BUILTIN_DPPP:
        law = make_decoration(name)
        assert law.support_upper_bound == 0.0 and not law.needs_floor


def test_unknown_decoration():
    with pytest.raises(KeyError):
        make_decoration("nope")


@given(st.floats(0.0, 12.0))
def test_growing_inverse_cumulative(depth):
    v = GrowingIntensity.cumulative(depth)
    # the inverse has a square-root branch point at 0, which costs half the digits there
    assert GrowingIntensity.inverse_cumulative(v) == pytest.approx(depth, abs=1e-6)


def test_growing_counts_match_intensity():
    law = GrowingIntensity()
    n, depth = 20000, 3.0
    d = law.draw(n, generator(2), np.full(n, -depth))
    extra = d.counts - 1
    assert abs(extra.mean() - law.cumulative(depth)) < 4 * math.sqrt(law.cumulative(depth) / n)
    assert d.positions.min() >= -depth
    with pytest.raises(ValueError):
        law.draw(3, generator(2))


def test_growing_depth_limited_pairing():
    law = DepthLimited(GrowingIntensity(), 2.0)
    assert law.mean_exp_pairing == pytest.approx(3.0)
    d = law.draw(1000, generator(3))
    assert d.positions.min() >= -2.0


def test_mixture_probabilities_validated():
    with pytest.raises(ValueError):
        Mixture([dirac()], [0.5])


@given(st.integers(1, 500), st.floats(0.05, 0.95))
def test_stratified_allocation(n, p):
    law = two_point(0.0, 1.0, p)
    d, strata, probs = law.draw_stratified(n, generator(4))
    sizes = np.bincount(strata, minlength=2)
    assert sizes.sum() == n == d.counts.size
    assert np.all(np.abs(sizes - n * probs) < 1)
    tops = d.rightmost()
    assert np.all(tops[strata == 0] == 0.0) and np.all(tops[strata == 1] == 1.0)


def test_shifted_law():
    law = ShiftedLaw(FiniteCluster(), 0.7)
    assert law.support_upper_bound == pytest.approx(0.7)
    assert law.mean_exp_pairing == pytest.approx(2.5 * math.exp(0.7))
    assert np.all(law.draw(100, generator(0)).positions <= 0.7)


def test_empirical_resampling_and_json():
    law = Empirical([0.0, -1.0, 0.0], [1.0, 1.0, 2.0], [2, 1], [1.0, 3.0])
    assert law.weights.tolist() == [0.25, 0.75]
    d = law.draw(40000, generator(5))
    assert abs(np.mean(d.counts == 1) - 0.75) < 0.01
    back = Empirical.from_json(law.to_json())
    assert np.array_equal(back.pool.positions, law.pool.positions)
    assert np.array_equal(back.weights, law.weights)
    assert law.mean_exp_pairing == pytest.approx(0.25 * (1 + math.exp(-1)) + 0.75 * 2)


def test_exp_spread_sf_matches_simulation():
    law = ExponentialSpread()
    d = law.draw(50000, generator(6))
    for m in (0.1, 0.5, 1.0):
        assert abs(np.mean(d.rightmost() > m) - law.rightmost_sf(m)) < 0.01


def test_sample_single_configuration():
    mu = FiniteCluster().sample(seed=3)
    assert len(mu) == 4 and mu.positions.max() == 0.0
    with pytest.raises(ValueError):
        GrowingIntensity().sample(seed=3)
    assert len(GrowingIntensity().sample(seed=3, floor=-1.0)) >= 1
