import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expstable.bbm import (
    DETERMINISTIC,
    BbmExtremalProcess,
    BbmParams,
    additive_martingale,
    centering,
    derivative_martingale,
    evolve,
    extremal_process,
    gumbel_shape_fit,
    martingale_trace,
    simulate,
    simulate_batch,
)
from expstable.errors import NonpositiveMartingale, ParticleOverflow
from expstable.measure import Window
from expstable.rng import generator
from expstable.sampler import Superposed
from expstable.stability import compare_processes


def test_params_validation():
    with pytest.raises(ValueError):
        BbmParams(0.0)
    with pytest.raises(ValueError):
        BbmParams(1.0, branch_rate=0.0)
    with pytest.raises(ValueError):
        BbmParams(1.0, initial_positions=())
    assert BbmParams(2.0, initial_positions=(0, 1)).expected_count == pytest.approx(2 * math.e)


def test_overflow_guards():
    with pytest.raises(ParticleOverflow):
        BbmParams(40.0).check_capacity()
    with pytest.raises(ParticleOverflow):
        simulate(BbmParams(10.0, max_particles=1000))
    with pytest.raises(ParticleOverflow):
        evolve(np.zeros(1), np.zeros(1, dtype=np.int64), 30.0, 0.5, generator(0), max_particles=500)


def test_martingale_formulas():
    pos = np.array([0.0, 1.0, -2.0])
    own = np.array([0, 1, 1])
    t = 3.0
    w = derivative_martingale(pos, t, own, 2)
    assert w[0] == pytest.approx(3 * math.exp(-3))
    assert w[1] == pytest.approx(2 * math.exp(-2) + 5 * math.exp(-5))
    a = additive_martingale(pos, t, own, 3)
    assert a[2] == 0.0 and a[0] == pytest.approx(math.exp(-3))
    # a lone particle at the origin at time 0
    assert derivative_martingale(np.zeros(1), 0.0)[0] == 0.0


def test_centering():
    assert centering(10.0, 1.0) == pytest.approx(-10 + 1.5 * math.log(10))
    assert centering(10.0, math.e) == pytest.approx(-11 + 1.5 * math.log(10))
    for w in (0.0, -0.5):
        with pytest.raises(NonpositiveMartingale):
            centering(5.0, w)


def test_short_horizon_single_particle():
    snap = simulate(BbmParams(1e-6, seed=3))
    assert snap.count == 1 and abs(snap.particles.positions[0]) < 0.01
    assert snap.to_json()["N_t"] == 1


@given(st.floats(-5, 5), st.integers(0, 50))
@settings(max_examples=20)
def test_translation_of_start(x0, seed):
    a = simulate(BbmParams(3.0, initial_positions=(0.0,), seed=seed))
    b = simulate(BbmParams(3.0, initial_positions=(x0,), seed=seed))
    assert np.allclose(b.particles.positions, a.particles.positions + x0)


def test_extremal_process_shift():
    snap = simulate(BbmParams(8.0, seed=1))
    if snap.w > 0:
        z = extremal_process(snap)
        assert z.positions.max() == pytest.approx(snap.particles.positions.max() + centering(8.0, snap.w))


def test_yule_count_moments():
    t, n = 3.0, 20000
    batch = simulate_batch(BbmParams(t), n, seed=11)
    c = batch.counts.astype(float)
    mean, var = math.exp(t / 2), math.exp(t) - math.exp(t / 2)
    assert abs(c.mean() - mean) < 4 * math.sqrt(var / n)
    assert c.var(ddof=1) == pytest.approx(var, rel=0.08)
    assert c.min() >= 1


def test_position_moments():
    # every particle alive at t is marginally N(0, t)
    t, n = 2.0, 20000
    params = BbmParams(t)
    pos, own = evolve(np.zeros(n), np.arange(n), t, 0.5, generator(5), 10**7)
    s1 = np.bincount(own, weights=pos, minlength=n)
    s2 = np.bincount(own, weights=pos * pos, minlength=n)
    assert abs(s1.mean()) < 4 * s1.std() / math.sqrt(n)
    target = t * params.expected_count
    assert abs(s2.mean() - target) < 4 * s2.std() / math.sqrt(n)


def test_batch_determinism_and_summary():
    a = simulate_batch(BbmParams(4.0), 500, seed=2)
    b = simulate_batch(BbmParams(4.0), 500, seed=2)
    assert np.array_equal(a.w, b.w) and np.array_equal(a.maxima, b.maxima)
    js = a.to_json()
    assert js["paths"] == 500 and 0.0 <= js["nonpositive_W_rate"] <= 1.0


def test_trace():
    params = BbmParams(6.0, seed=4)
    trace = martingale_trace(params, [0.0, 1.0, 3.0, 6.0])
    assert trace[0] == (0.0, 0.0, 1)
    counts = [n for _, _, n in trace]
    assert counts == sorted(counts)
    with pytest.raises(ValueError):
        martingale_trace(params, [2.0, 1.0])
    with pytest.raises(ValueError):
        martingale_trace(params, [7.0])


def test_extremal_process_batch_meta():
    proc = BbmExtremalProcess(6.0, window=Window(-3.0, math.inf))
    batch = proc.sample_batch(300, seed=0)
    assert len(batch) == 300
    assert batch.meta["simulated"] == 300 + batch.meta["discarded"]
    assert batch.positions.min() >= -3.0
    with pytest.raises(ValueError):
        BbmExtremalProcess(6.0, centering="median")


def test_two_particle_start_is_union_of_singles():
    # exact at every t: the battery must not reject
    w = Window(-3.0, math.inf)
    single = BbmExtremalProcess(6.0, (0.0,), w, DETERMINISTIC)
    double = BbmExtremalProcess(6.0, (0.0, 0.0), w, DETERMINISTIC)
    assert compare_processes(double, Superposed(single, single), 3000, seed=8).consistent
    assert not compare_processes(double, single, 3000, seed=8).consistent


def test_gumbel_fit_on_exact_gumbel():
    rng = np.random.default_rng(0)
    z = rng.gumbel(0.7, 1.0, 200000)
    fit = gumbel_shape_fit(z)
    assert fit.slope == pytest.approx(-1.0, abs=0.02)
    assert fit.intercept == pytest.approx(0.7, abs=0.03)
    assert fit.r2 > 0.999


def test_trace_batch_matches_final_martingale_law():
    from expstable.bbm import trace_batch

    params = BbmParams(5.0)
    w = trace_batch(params, [0.0, 2.0, 5.0], 3000, seed=6)
    assert w.shape == (3000, 3) and np.all(w[:, 0] == 0.0)
    final = simulate_batch(params, 3000, seed=7).w
    from scipy import stats

    assert stats.ks_2samp(w[:, 2], final).pvalue > 0.001
    with pytest.raises(ValueError):
        trace_batch(params, [], 10)
