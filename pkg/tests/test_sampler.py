import math

import numpy as np
import pytest
from scipy import stats

from expstable.batch import ReplicaBatch
from expstable.decorations import DepthLimited, GrowingIntensity, make_decoration
from expstable.errors import UnboundedDecoration
from expstable.measure import Window, indicator
from expstable.rng import derive_seed, generator, map_blocks, poisson_inverse
from expstable.sampler import (
    DpppSpec,
    Shifted,
    Superposed,
    intensity_estimate,
    intensity_scan,
    sample_dppp,
    sample_dppp_truncated,
    sample_dppp_truncated_batch,
    sample_gumbel_ppp,
    sample_gumbel_ppp_batch,
    truncation_report,
)

W = Window(-3.0, math.inf)


def gumbel_cdf(z):
    return np.exp(-np.exp(-z))


def test_ppp_counts_and_max():
    b = sample_gumbel_ppp_batch(-2.0, 20000, seed=1)
    assert abs(b.counts.mean() - math.exp(2)) < 4 * math.sqrt(math.exp(2) / 20000)
    assert b.positions.min() >= -2.0
    res = stats.kstest(b.max_positions(), gumbel_cdf)
    assert res.pvalue > 0.001


def test_single_ppp_is_deterministic():
    a, b = sample_gumbel_ppp(-1.0, 5), sample_gumbel_ppp(-1.0, 5)
    assert a == b and a.window == Window(-1.0)


def test_seed_derivation_is_pure():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
    assert generator(3, 1).random() == generator(3, 1).random()
    with pytest.raises(ValueError):
        derive_seed(1, -1)


def test_blocks_do_not_depend_on_workers():
    fn = _uniform_block
    one = np.concatenate(map_blocks(fn, 1000, 9, 128, workers=1))
    two = np.concatenate(map_blocks(fn, 1000, 9, 128, workers=2))
    assert np.array_equal(one, two)


def _uniform_block(count, rng):
    return rng.random(count)


def test_poisson_inverse_consumes_one_uniform_each():
    rng1, rng2 = generator(4), generator(4)
    poisson_inverse(rng1, np.array([0.0, 3.0, 100.0]))
    rng2.random(3)
    assert rng1.random() == rng2.random()
    draws = poisson_inverse(generator(5), np.full(50000, 2.5))
    assert abs(draws.mean() - 2.5) < 0.03 and abs(draws.var() - 2.5) < 0.1


def test_dppp_batch_shapes_and_determinism():
    spec = DpppSpec(make_decoration("finite_cluster"), W)
    a, b = spec.sample_batch(600, seed=2), spec.sample_batch(600, seed=2)
    assert len(a) == 600
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.offsets, b.offsets)
    assert a.positions.min() >= W.lo
    c = spec.sample_batch(600, seed=3)
    assert not np.array_equal(a.counts, c.counts)


def test_dppp_mean_count_matches_intensity():
    # E Z([lo, inf)) = e^{-lo} E<D, e^x> for decorations supported below 0
    spec = DpppSpec(make_decoration("staircase"), Window(-2.0, math.inf))
    b = spec.sample_batch(20000, seed=4)
    expected = math.exp(2.0) * spec.decoration.mean_exp_pairing
    se = b.counts.std() / math.sqrt(len(b))
    assert abs(b.counts.mean() - expected) < 4 * se


def test_dirac0_dppp_equals_gumbel_ppp_in_law():
    spec = DpppSpec(make_decoration("dirac0"), W)
    a = spec.sample_batch(10000, seed=5).max_positions()
    assert stats.kstest(a, gumbel_cdf).pvalue > 0.001


def test_density_coefficient_enters_pairing():
    spec = DpppSpec(make_decoration("dirac0"), W, density_coeff=2.0, seed=8)
    s = sample_dppp(spec)
    f = indicator(0, 1)
    assert s.density_coeff == 2.0
    b = spec.sample_batch(3, seed=1)
    direct = np.array([np.sum(f(b[i].config.positions)) for i in range(3)]) + 2.0 * f.exp_integral
    assert np.allclose(b.pair(f), direct)


def test_unbounded_decoration_is_refused():
    spec = DpppSpec(make_decoration("exp_spread"), W)
    with pytest.raises(UnboundedDecoration):
        spec.sample_batch(10, seed=0)


def test_truncation_report_decreases_with_depth():
    spec = DpppSpec(make_decoration("exp_spread"), Window(0.0, math.inf))
    reports = [truncation_report(spec, -d) for d in (5.0, 10.0, 20.0)]
    vals = [r.expected_escapes for r in reports]
    assert all(v > 0 for v in vals) and vals[0] > vals[1] > vals[2]
    assert all(0 <= r.escape_prob_bound <= 1 for r in reports)
    # closed form at sf = 1 - (1 - e^{-2m})^3 integrated against e^{m}: dominated by 3 e^{-m}
    assert vals[1] == pytest.approx(3 * math.exp(-10), rel=0.05)
    assert truncation_report(DpppSpec(make_decoration("dirac0")), -5.0).expected_escapes == 0.0


def test_truncated_sampler_reports_and_samples():
    spec = DpppSpec(make_decoration("exp_spread"), Window(0.0, math.inf), seed=4)
    s, rep = sample_dppp_truncated(spec, -10.0)
    assert rep.xi_floor == -10.0
    assert s.config.positions.min() >= 0.0
    b = sample_dppp_truncated_batch(spec, -10.0, 200, seed=1)
    assert len(b) == 200


def test_truncated_mc_fallback_agrees_with_quadrature():
    # rate > 2 keeps e^{M} square integrable, so the Monte Carlo mean settles
    spec = DpppSpec(make_decoration("exp_spread", k=2, rate=3.0), Window(0.0, math.inf))
    quad = truncation_report(spec, -1.0)
    law_mc = make_decoration("exp_spread", k=2, rate=3.0)
    law_mc.rightmost_sf = lambda m: None
    mc = truncation_report(DpppSpec(law_mc, Window(0.0, math.inf)), -1.0, n_mc=200000, seed=2)
    assert mc.method != quad.method
    assert mc.expected_escapes == pytest.approx(quad.expected_escapes, rel=0.05)


def test_intensity_dirac0_unit_interval():
    est = intensity_estimate(DpppSpec(make_decoration("dirac0")), Window(0.0, 1.0), 20000, seed=3)
    assert est.prediction == pytest.approx(1 - math.exp(-1))
    assert abs(est.mean - est.prediction) < 4 * est.std_error
    with pytest.raises(ValueError):
        intensity_estimate(DpppSpec(make_decoration("dirac0")), Window(0.0), 200, seed=3)


def test_intensity_scan_flags_only_growing():
    grow = intensity_scan(GrowingIntensity(), replicas=1000, seed=1)
    assert not grow.finite_intensity
    ratios = [e.ratio for e in grow.estimates]
    assert ratios[0] < ratios[1] < ratios[2]
    for k, e in zip((2, 4, 6), grow.estimates):
        exact = DepthLimited(GrowingIntensity(), k).mean_exp_pairing
        assert abs(e.ratio - exact) < 4 * e.ratio_se
    for name in ("dirac0", "finite_cluster"):
        assert intensity_scan(make_decoration(name), replicas=1000, seed=1).finite_intensity


def test_shift_and_superpose_windows():
    spec = DpppSpec(make_decoration("dirac0"), W)
    s = Shifted(spec, 1.0)
    assert s.window == Window(-2.0, math.inf)
    s2 = s.with_window(W)
    assert s2.window == W and s2.source.window == Window(-4.0, math.inf)
    sup = Superposed(spec, spec)
    b = sup.sample_batch(5000, seed=1)
    one = spec.sample_batch(5000, seed=1)
    assert abs(b.counts.mean() - 2 * math.exp(3)) < 4 * math.sqrt(2 * math.exp(3) / 5000)
    assert one.counts.mean() < b.counts.mean()


def test_batch_operations():
    b = ReplicaBatch.from_owners([0.5, -1.0, 2.0, 0.1], None, [1, 0, 1, 1], 3, Window(-2.0))
    assert b.counts.tolist() == [1, 3, 0]
    assert b.max_positions()[2] == -math.inf
    assert np.array_equal(b.mass_in(Window(0.0, 1.0)), [0.0, 2.0, 0.0])
    cells = b.cell_masses([-1.0, 0.0, 1.0, 3.0])
    assert cells.tolist() == [[1, 0, 0], [0, 2, 1], [0, 0, 0]]
    t = b.translate(1.0)
    assert t.window == Window(-1.0) and np.allclose(t.positions, b.positions + 1)
    assert b.restrict(Window(0.0, 1.0)).counts.tolist() == [0, 2, 0]
    assert b.take([1]).counts.tolist() == [3]
    assert b.to_csv().splitlines()[0] == "replica,position,mass"
