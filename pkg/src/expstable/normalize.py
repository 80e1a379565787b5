"""Canonical form of a decomposition: pull the decoration's rightmost atom to 0.

Given a decoration ``D'``, set ``m = log E[e^{M(D')}]`` and let ``D`` be
``T_{-M(D')} D'`` under the law reweighted by ``e^{M(D')} / E[e^{M(D')}]``.
Then ``DPPP(D') = T_m DPPP(D)`` in law, and ``M(D) = 0`` almost surely.
Both are estimated from a pool of ``D'`` draws.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .decorations import DecorationLaw, Draw, Empirical, checked_draw, rightmost_of
from .errors import NullDecoration, UnboundedDecoration
from .measure import Window
from .rng import derive_seed, generator
from .sampler import DpppSpec, Shifted
from .stability import StabilityReport, compare_processes

MIN_ESS_FRACTION = 0.1


@dataclass(frozen=True)
class CanonicalPair:
    m: float
    m_se: float
    decoration: Empirical
    ess: float
    pool_size: int
    density_coeff: float = 0.0

    def to_json(self, include_pool: bool = True) -> dict:
        out = {"m": self.m, "m_se": self.m_se, "ess": self.ess, "pool_size": self.pool_size,
               "density_coeff": self.density_coeff}
        if include_pool:
            out["decoration"] = self.decoration.to_json()
        return out

    def dumps(self, include_pool: bool = True) -> str:
        return json.dumps(self.to_json(include_pool))

    @classmethod
    def from_json(cls, obj: dict) -> CanonicalPair:
        return cls(obj["m"], obj["m_se"], Empirical.from_json(obj["decoration"]), obj["ess"],
                   obj["pool_size"], obj.get("density_coeff", 0.0))

    def spec(self, window: Window = Window(0.0, math.inf)) -> DpppSpec:
        return DpppSpec(self.decoration, window, self.density_coeff)


def draw_rightmost(d: Draw) -> np.ndarray:
    """``M`` of each configuration in a draw."""
    if np.all(d.masses == 1.0):
        return d.rightmost()
    return np.array([rightmost_of(*_slice(d, i)) for i in range(d.counts.size)])


def _slice(d: Draw, i: int):
    a, b = d.offsets[i], d.offsets[i + 1]
    return d.positions[a:b], d.masses[a:b]


def canonicalize(dprime: DecorationLaw, n_pool: int = 10**5, seed: int = 0,
                 density_coeff: float = 0.0, stratified: bool = True) -> CanonicalPair:
    """Estimate ``(m, D)`` from ``n_pool`` draws of ``dprime``.

    With ``stratified`` the pool is allocated across the law's strata (the
    components of a mixture) in proportion to their probabilities, and every
    draw is weighted by ``p_stratum / n_stratum``.
    """
    if dprime.needs_floor or not math.isfinite(dprime.support_upper_bound):
        raise UnboundedDecoration(f"{dprime.name}: canonical form needs an almost surely bounded decoration")
    rng = generator(seed, "canonical-pool")
    if stratified:
        d, strata, probs = dprime.draw_stratified(n_pool, rng)
    else:
        d, strata, probs = checked_draw(dprime, n_pool, rng), np.zeros(n_pool, dtype=np.int64), np.ones(1)
    tops = draw_rightmost(d)
    if np.any(d.counts == 0) or not np.all(np.isfinite(tops)):
        raise NullDecoration(f"{dprime.name} produced an empty configuration")
    sizes = np.bincount(strata, minlength=probs.size)
    design = probs[strata] / sizes[strata]
    log_w = tops + np.log(design)
    m = float(logsumexp(log_w))
    w = np.exp(log_w - log_w.max())
    ess = float(w.sum() ** 2 / np.dot(w, w))
    if ess < MIN_ESS_FRACTION * n_pool:
        warnings.warn(f"effective sample size {ess:.0f} is below {MIN_ESS_FRACTION:.0%} of the pool",
                      RuntimeWarning, stacklevel=2)
    m_se = _log_mean_se(np.exp(tops - m), strata, probs, sizes)
    positions = d.positions - np.repeat(tops, d.counts)
    law = Empirical(positions, d.masses, d.counts, w)
    return CanonicalPair(m, m_se, law, ess, n_pool, density_coeff * math.exp(-m))


def _log_mean_se(ratio: np.ndarray, strata: np.ndarray, probs: np.ndarray, sizes: np.ndarray) -> float:
    """Delta-method standard error of ``m`` from a stratified pool; ``ratio = e^{M - m}``."""
    var = 0.0
    for j, (p, n) in enumerate(zip(probs, sizes)):
        if n > 1:
            var += p * p * float(ratio[strata == j].var(ddof=1)) / n
    return math.sqrt(var)


def verify_equivalence(dprime: DecorationLaw, pair: CanonicalPair, replicas: int = 10**4, seed: int = 0,
                       window: Window = Window(-4.0, math.inf), m_offset: float = 0.0,
                       density_coeff: float = 0.0) -> StabilityReport:
    """Battery comparison of ``DPPP(D')`` against ``T_{m + m_offset} DPPP(D)``."""
    shift = pair.m + m_offset
    original = DpppSpec(dprime, window, density_coeff)
    canonical = Shifted(DpppSpec(pair.decoration, window.shifted(-shift), pair.density_coeff), shift)
    return compare_processes(original, canonical, replicas, derive_seed(seed, "equivalence"),
                             label=f"canonical form, shift {shift:.6g}")
