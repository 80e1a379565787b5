"""Battery comparisons for BBM at a finite horizon, beyond the primary superposition check.

Prints one verdict line per variant:

* exact: two-particle start vs union of two single-particle runs (holds at every t)
* recentered: the primary check, on the near-tip window and a deeper one
* independent-W: single run shifted by log W of an independent two-particle run
* Gumbel shape of the recentered max
* stabilization of W_t: quartiles of |W_t - W_s| / W_s with s = 3t/4
"""

import argparse
import math

import numpy as np

from expstable import bbm
from expstable.measure import Window
from expstable.sampler import Superposed
from expstable.stability import compare_processes


def line(name, report):
    print(f"{name:<36s} {report.verdict:<10s} min p {report.min_pvalue:.3g} "
          f"(threshold {report.level / report.n_tests:.2g})")


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--t", type=float, default=20.0)
    parser.add_argument("--replicas", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deep-lo", type=float, default=-4.0, help="lower end of the deeper window")
    args = parser.parse_args()
    t, n, seed = args.t, args.replicas, args.seed

    near, deep = bbm.BBM_WINDOW, Window(args.deep_lo, math.inf)
    single = bbm.BbmExtremalProcess(t, (0.0,), deep, bbm.DETERMINISTIC)
    double = bbm.BbmExtremalProcess(t, (0.0, 0.0), deep, bbm.DETERMINISTIC)
    line("exact union identity", compare_processes(double, Superposed(single, single), n, seed))
    line(f"recentered, window lo={near.lo:g}", bbm.superposition_check(t, n, seed, near))
    line(f"recentered, window lo={deep.lo:g}", bbm.superposition_check(t, n, seed, deep))
    line(f"independent W, window lo={near.lo:g}", bbm.independent_w_check(t, n, seed, near))

    batch = bbm.simulate_batch(bbm.BbmParams(t), n, seed)
    good = batch.w > 0
    z = batch.maxima[good] - t + 1.5 * math.log(t) - np.log(batch.w[good])
    fit = bbm.gumbel_shape_fit(z)
    print(f"recentered max: slope {fit.slope:.3f}, intercept {fit.intercept:.3f}, r2 {fit.r2:.4f}, "
          f"W<=0 rate {np.mean(~good):.3f}")

    s = 0.75 * t
    w = bbm.trace_batch(bbm.BbmParams(t), [s, t], n, seed)
    ok = w[:, 0] > 0
    rel = np.abs(w[ok, 1] - w[ok, 0]) / w[ok, 0]
    q = np.quantile(rel, [0.25, 0.5, 0.75])
    print(f"|W_{t:g} - W_{s:g}| / W_{s:g}: quartiles {q[0]:.3f}, {q[1]:.3f}, {q[2]:.3f}")


if __name__ == "__main__":
    main()
