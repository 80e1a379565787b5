"""Branching Brownian motion: exact simulation and its recentered extremal process.

Each particle moves as a standard Brownian motion, waits an exponential
time of rate ``branch_rate`` and then splits into two at its current
position. Lifetimes and Gaussian increments are drawn from their exact
laws, so there is no time step.

The simulation proceeds generation by generation over flat arrays: every
unresolved particle draws its lifetime at once; those outliving the horizon
are moved to time ``t`` and emitted, the rest are moved to their branching
point and replaced by two children. Many independent paths share the
arrays, tagged by an owner index.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .batch import ReplicaBatch
from .errors import NonpositiveMartingale, ParticleOverflow
from .measure import PointConfiguration, Window
from .rng import generator

MAX_PARTICLES = 10**7
# expected particles per simulated chunk of paths
CHUNK_PARTICLES = 2 * 10**6


@dataclass(frozen=True)
class BbmParams:
    t: float
    branch_rate: float = 0.5
    initial_positions: tuple = (0.0,)
    seed: int = 0
    max_particles: int = MAX_PARTICLES

    def __post_init__(self):
        object.__setattr__(self, "initial_positions", tuple(float(x) for x in self.initial_positions))
        if not self.t > 0:
            raise ValueError("horizon t must be positive")
        if not self.branch_rate > 0:
            raise ValueError("branch_rate must be positive")
        if not self.initial_positions:
            raise ValueError("need at least one initial particle")

    @property
    def expected_count(self) -> float:
        return len(self.initial_positions) * math.exp(self.branch_rate * self.t)

    def check_capacity(self):
        if self.expected_count > self.max_particles / 10:
            raise ParticleOverflow(f"expected {self.expected_count:.3g} particles at t={self.t}; "
                                   f"cap is {self.max_particles}")


def derivative_martingale(positions: np.ndarray, t: float, owners=None, n: int = 1) -> np.ndarray:
    """``sum (t - X) e^{X - t}`` per path."""
    terms = (t - positions) * np.exp(positions - t)
    owners = np.zeros(positions.size, dtype=np.int64) if owners is None else owners
    return np.bincount(owners, weights=terms, minlength=n)


def additive_martingale(positions: np.ndarray, t: float, owners=None, n: int = 1) -> np.ndarray:
    """``sum e^{X - t}`` per path."""
    owners = np.zeros(positions.size, dtype=np.int64) if owners is None else owners
    return np.bincount(owners, weights=np.exp(positions - t), minlength=n)


@dataclass
class BbmSnapshot:
    particles: PointConfiguration
    w: float
    t: float

    def __post_init__(self):
        if len(self.particles) < 1:
            raise ValueError("a BBM snapshot has at least one particle")

    @property
    def count(self) -> int:
        return len(self.particles)

    def to_json(self) -> dict:
        return {"t": self.t, "W_t": self.w, "N_t": self.count}


def evolve(positions: np.ndarray, owners: np.ndarray, duration: float, rate: float,
           rng: np.random.Generator, max_particles: int = MAX_PARTICLES) -> tuple[np.ndarray, np.ndarray]:
    """Run every particle forward by ``duration``; returns positions and owners at the end."""
    pos = np.asarray(positions, dtype=np.float64)
    own = np.asarray(owners, dtype=np.int64)
    age = np.zeros(pos.size)
    out_pos, out_own = [], []
    emitted = 0
    while pos.size:
        life = rng.exponential(1.0 / rate, pos.size)
        noise = rng.standard_normal(pos.size)
        left = duration - age
        done = life >= left
        out_pos.append(pos[done] + np.sqrt(left[done]) * noise[done])
        out_own.append(own[done])
        emitted += int(done.sum())
        split = ~done
        moved = pos[split] + np.sqrt(life[split]) * noise[split]
        pos = np.repeat(moved, 2)
        own = np.repeat(own[split], 2)
        age = np.repeat(age[split] + life[split], 2)
        if emitted + pos.size > max_particles:
            raise ParticleOverflow(f"more than {max_particles} particles")
    pos = np.concatenate(out_pos) if out_pos else np.empty(0)
    own = np.concatenate(out_own) if out_own else np.empty(0, dtype=np.int64)
    order = np.lexsort((pos, own))
    return pos[order], own[order]


def simulate(params: BbmParams) -> BbmSnapshot:
    """One path of BBM up to time ``params.t``."""
    params.check_capacity()
    rng = generator(params.seed, "bbm")
    pos, _ = evolve(np.array(params.initial_positions), np.zeros(len(params.initial_positions), dtype=np.int64),
                    params.t, params.branch_rate, rng, params.max_particles)
    w = float(derivative_martingale(pos, params.t)[0])
    return BbmSnapshot(PointConfiguration(pos), w, params.t)


def centering(t: float, w: float) -> float:
    """The shift ``-t + (3/2) log t - log W``."""
    if not w > 0:
        raise NonpositiveMartingale(f"W_t = {w} is not positive")
    return -t + 1.5 * math.log(t) - math.log(w)


def extremal_process(snapshot: BbmSnapshot) -> PointConfiguration:
    """Particles translated by ``-t + (3/2) log t - log W_t``."""
    shift = centering(snapshot.t, snapshot.w)
    p = snapshot.particles
    return PointConfiguration(p.positions + shift, p.masses)


def martingale_trace(params: BbmParams, checkpoints: Sequence[float]) -> list[tuple[float, float, int]]:
    """``(t, W_t, N_t)`` at each checkpoint along one path.

    Segments between checkpoints are simulated in turn from the current
    particle positions, which is exact because lifetimes are memoryless.
    """
    cps = [float(c) for c in checkpoints]
    if any(b < a for a, b in zip(cps, cps[1:])) or (cps and (cps[0] < 0 or cps[-1] > params.t)):
        raise ValueError("checkpoints must be ascending within [0, t]")
    params.check_capacity()
    rng = generator(params.seed, "bbm-trace")
    pos = np.array(params.initial_positions)
    now = 0.0
    out = []
    for c in cps:
        if c > now:
            pos, _ = evolve(pos, np.zeros(pos.size, dtype=np.int64), c - now, params.branch_rate, rng,
                            params.max_particles)
            now = c
        out.append((c, float(derivative_martingale(pos, c)[0]), int(pos.size)))
    return out


def trace_batch(params: BbmParams, checkpoints: Sequence[float], replicas: int,
                seed: int | None = None) -> np.ndarray:
    """``W`` at each checkpoint for many independent paths, shape ``(replicas, len(checkpoints))``."""
    cps = [float(c) for c in checkpoints]
    if not cps or any(b < a for a, b in zip(cps, cps[1:])) or cps[0] < 0 or cps[-1] > params.t:
        raise ValueError("checkpoints must be ascending within [0, t]")
    params.check_capacity()
    seed = params.seed if seed is None else seed
    size = max(1, int(CHUNK_PARTICLES // (len(params.initial_positions) * math.exp(params.branch_rate * cps[-1]))))
    init = np.array(params.initial_positions)
    out = np.empty((replicas, len(cps)))
    for j, start in enumerate(range(0, replicas, size)):
        n = min(size, replicas - start)
        rng = generator(seed, "bbm-trace-chunk", j)
        pos, own = np.tile(init, n), np.repeat(np.arange(n), init.size)
        now = 0.0
        for i, c in enumerate(cps):
            if c > now:
                pos, own = evolve(pos, own, c - now, params.branch_rate, rng,
                                  max(params.max_particles, n * params.max_particles // 10))
                now = c
            out[start:start + n, i] = derivative_martingale(pos, c, own, n)
    return out


@dataclass
class BbmBatch:
    """Summaries of many independent paths at horizon ``t``."""

    t: float
    w: np.ndarray
    counts: np.ndarray
    additive: np.ndarray
    maxima: np.ndarray

    def __len__(self):
        return self.counts.size

    def mean_with_se(self, values: np.ndarray) -> tuple[float, float]:
        return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))

    def to_json(self) -> dict:
        n_mean, n_se = self.mean_with_se(self.counts.astype(float))
        a_mean, a_se = self.mean_with_se(self.additive)
        return {"t": self.t, "paths": len(self), "mean_N_t": n_mean, "se_N_t": n_se,
                "mean_additive": a_mean, "se_additive": a_se,
                "nonpositive_W_rate": float(np.mean(self.w <= 0))}


def _chunk_size(params: BbmParams) -> int:
    return max(1, int(CHUNK_PARTICLES // params.expected_count))


def _simulate_chunks(params: BbmParams, replicas: int, seed: int):
    """Yield ``(positions, owners, n)`` for consecutive chunks of paths."""
    params.check_capacity()
    size = _chunk_size(params)
    init = np.array(params.initial_positions)
    for j, start in enumerate(range(0, replicas, size)):
        n = min(size, replicas - start)
        rng = generator(seed, "bbm-chunk", j)
        pos, own = evolve(np.tile(init, n), np.repeat(np.arange(n), init.size), params.t,
                          params.branch_rate, rng, max(params.max_particles, n * params.max_particles // 10))
        yield pos, own, n


def simulate_batch(params: BbmParams, replicas: int, seed: int | None = None) -> BbmBatch:
    """Independent paths summarized by ``W_t``, ``N_t``, the additive martingale and the max."""
    seed = params.seed if seed is None else seed
    t = params.t
    w, counts, add, maxima = [], [], [], []
    for pos, own, n in _simulate_chunks(params, replicas, seed):
        w.append(derivative_martingale(pos, t, own, n))
        counts.append(np.bincount(own, minlength=n))
        add.append(additive_martingale(pos, t, own, n))
        top = np.full(n, -np.inf)
        np.maximum.at(top, own, pos)
        maxima.append(top)
    return BbmBatch(t, np.concatenate(w), np.concatenate(counts), np.concatenate(add), np.concatenate(maxima))


OWN = "own"
DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class BbmExtremalProcess:
    """BBM at horizon ``t``, translated and sampled as a process on ``window``.

    Every path is translated by ``-t + (3/2) log t``. With ``centering="own"``
    it is further translated by ``-log W_t`` of the same path; with
    ``"deterministic"`` it is not. If ``extra_from`` is set, an independent
    BBM started from those positions is run alongside and each path is
    translated by ``+log`` of its ``W_t``.

    Paths whose derivative martingale (own or extra) is not positive are
    discarded and replaced; the count is recorded in the batch metadata.
    """

    t: float
    initial_positions: tuple = (0.0,)
    window: Window = Window(-4.0, math.inf)
    centering: str = OWN
    extra_from: tuple | None = None
    branch_rate: float = 0.5
    max_particles: int = MAX_PARTICLES

    def __post_init__(self):
        if self.centering not in (OWN, DETERMINISTIC):
            raise ValueError(f"unknown centering {self.centering!r}")

    def with_window(self, window: Window) -> BbmExtremalProcess:
        return dataclasses.replace(self, window=window)

    def params(self, seed: int = 0) -> BbmParams:
        return BbmParams(self.t, self.branch_rate, self.initial_positions, seed, self.max_particles)

    def _chunk(self, init, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        init = np.asarray(init, dtype=np.float64)
        return evolve(np.tile(init, n), np.repeat(np.arange(n), init.size), self.t, self.branch_rate, rng,
                      max(self.max_particles, n * self.max_particles // 10))

    def sample_batch(self, n: int, seed: int) -> ReplicaBatch:
        params = self.params(seed)
        params.check_capacity()
        t = self.t
        size = _chunk_size(params)
        if self.extra_from is not None:
            size = min(size, _chunk_size(BbmParams(t, self.branch_rate, self.extra_from)))
        parts, kept, discarded, j = [], 0, 0, 0
        while kept < n:
            m = min(size, n - kept)
            pos, own = self._chunk(self.initial_positions, m, generator(seed, "bbm-chunk", j))
            w = derivative_martingale(pos, t, own, m)
            good = w > 0
            shift = np.full(m, -t + 1.5 * math.log(t))
            if self.centering == OWN:
                shift -= np.log(np.where(good, w, 1.0))
            if self.extra_from is not None:
                xp, xo = self._chunk(self.extra_from, m, generator(seed, "bbm-extra", j))
                wx = derivative_martingale(xp, t, xo, m)
                good &= wx > 0
                shift += np.log(np.where(wx > 0, wx, 1.0))
            discarded += int((~good).sum())
            shifted = pos + shift[own]
            keep = good[own] & self.window.contains(shifted)
            remap = np.cumsum(good) - 1 + kept
            parts.append((shifted[keep], remap[own[keep]]))
            kept += int(good.sum())
            j += 1
        pos = np.concatenate([p for p, _ in parts])
        own = np.concatenate([o for _, o in parts])
        meta = {"discarded": discarded, "simulated": kept + discarded}
        return ReplicaBatch.from_owners(pos, None, own, n, self.window, meta=meta)


# The comparison window for BBM sits near the tip: deeper levels lie within
# about sqrt(t) of the bulk, where the finite-t process has not converged.
BBM_WINDOW = Window(-2.0, math.inf)


def superposition_check(t: float = 20.0, replicas: int = 1000, seed: int = 0,
                        window: Window = BBM_WINDOW, **kwargs):
    """Battery comparison of the recentered union of two BBMs against one recentered BBM.

    The union of two independent BBMs started at 0 is a BBM started from two
    particles, and its derivative martingale is ``W + W'``. Recentering it by
    ``log(W + W')`` gives ``T_{log(W+W')}`` applied to
    ``T_{log W} Z + T_{log W'} Z'``, which has the law of ``Z`` exactly when
    ``Z`` is exp-stable. The single BBM recentered by ``log W`` is the other
    side.
    """
    from .stability import compare_processes

    single = BbmExtremalProcess(t, (0.0,), window)
    double = BbmExtremalProcess(t, (0.0, 0.0), window)
    kwargs.setdefault("label", f"BBM superposition, t={t:g}")
    return compare_processes(double, single, replicas, seed, **kwargs)


def independent_w_check(t: float = 20.0, replicas: int = 1000, seed: int = 0,
                        window: Window = BBM_WINDOW, **kwargs):
    """Battery comparison of ``T_{log W''} Z`` against the deterministically centered union.

    ``Z`` is a recentered single BBM and ``W''`` the derivative martingale of
    an independent two-particle BBM. This needs ``W`` to be independent of the
    recentered process, which holds for the limit but not for ``W_t``: at
    moderate ``t`` the battery detects the difference.
    """
    from .stability import compare_processes

    shifted_single = BbmExtremalProcess(t, (0.0,), window, OWN, extra_from=(0.0, 0.0))
    union = BbmExtremalProcess(t, (0.0, 0.0), window, DETERMINISTIC)
    kwargs.setdefault("label", f"BBM with independent W, t={t:g}")
    return compare_processes(shifted_single, union, replicas, seed, **kwargs)


@dataclass
class GumbelShapeFit:
    slope: float
    intercept: float
    r2: float
    quantiles: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "quantiles": self.quantiles}


def gumbel_shape_fit(maxima: np.ndarray, probs=np.linspace(0.1, 0.9, 9)) -> GumbelShapeFit:
    """Regress ``log(-log F)`` on the empirical quantiles of the recentered max.

    For ``F(z) = exp(-C e^{-z})`` the relation is linear with slope ``-1``
    and intercept ``log C``; ``r2`` measures how close to linear it is.
    """
    probs = np.asarray(probs, dtype=np.float64)
    q = np.quantile(maxima, probs)
    y = np.log(-np.log(probs))
    slope, intercept = np.polyfit(q, y, 1)
    resid = y - (slope * q + intercept)
    r2 = 1.0 - float(resid @ resid) / float(((y - y.mean()) ** 2).sum())
    return GumbelShapeFit(float(slope), float(intercept), r2, q.tolist())


def dumps_snapshot(snapshot: BbmSnapshot, discarded_rate: float = 0.0) -> str:
    return json.dumps({**snapshot.to_json(), "discarded_rate": discarded_rate})
