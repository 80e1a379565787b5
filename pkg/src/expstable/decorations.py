"""Decoration laws: the point process attached at every Poisson atom.

A law draws ``n`` independent decorations at once and returns them as a
:class:`Draw` (flat positions and masses plus the atom count of each
decoration, in decoration order).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import lambertw

from .errors import ConfigurationOverflow
from .measure import MAX_ATOMS, PointConfiguration
from .rng import generator, poisson_inverse


@dataclass
class Draw:
    positions: np.ndarray
    masses: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.counts)))

    def owners(self) -> np.ndarray:
        return np.repeat(np.arange(self.counts.size), self.counts)

    def rightmost(self) -> np.ndarray:
        """Largest atom of each decoration, ``+inf`` for an empty one."""
        out = np.full(self.counts.size, math.inf)
        if self.positions.size:
            tops = np.full(self.counts.size, -math.inf)
            np.maximum.at(tops, self.owners(), self.positions)
            out = np.where(self.counts > 0, tops, math.inf)
        return out

    def lowest(self) -> np.ndarray:
        out = np.full(self.counts.size, -math.inf)
        if self.positions.size:
            bottoms = np.full(self.counts.size, math.inf)
            np.minimum.at(bottoms, self.owners(), self.positions)
            out = np.where(self.counts > 0, bottoms, -math.inf)
        return out

    def configuration(self, i: int) -> PointConfiguration:
        a, b = self.offsets[i], self.offsets[i + 1]
        return PointConfiguration(self.positions[a:b], self.masses[a:b])

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """Positions padded with NaN and masses padded with 0, shape ``(n, max count)``."""
        n = self.counts.size
        width = int(self.counts.max()) if n else 0
        pos = np.full((n, width), np.nan)
        ms = np.zeros((n, width))
        col = np.arange(self.positions.size) - np.repeat(self.offsets[:-1], self.counts)
        row = self.owners()
        pos[row, col] = self.positions
        ms[row, col] = self.masses
        return pos, ms


def _fixed(n: int, offsets: np.ndarray, masses: np.ndarray) -> Draw:
    k = offsets.size
    return Draw(np.tile(offsets, n), np.tile(masses, n), np.full(n, k))


class DecorationLaw:
    """Base class. Subclasses implement :meth:`draw` and set the bounds.

    ``support_upper_bound`` is an almost-sure bound on the rightmost atom.
    ``mean_exp_pairing`` is ``E<D, e^x>`` when known in closed form.
    Laws with infinitely many atoms below some level set ``needs_floor``
    and only produce atoms at or above the per-decoration ``floor``.
    """

    name = "decoration"
    support_upper_bound = math.inf
    support_lower_bound = -math.inf
    mean_exp_pairing: float | None = None
    needs_floor = False

    def draw(self, n: int, rng: np.random.Generator, floor=None) -> Draw:
        raise NotImplementedError

    def draw_stratified(self, n: int, rng: np.random.Generator) -> tuple[Draw, np.ndarray, np.ndarray]:
        """Draws for estimating expectations, with stratum labels and stratum probabilities.

        The default is plain independent sampling in a single stratum.
        """
        return checked_draw(self, n, rng), np.zeros(n, dtype=np.int64), np.ones(1)

    def rightmost_sf(self, m):
        """``P(M(D) > m)`` if known in closed form, else ``None``."""
        return None

    def mean_exp_pairing_above(self, depth: float) -> float | None:
        """``E<D restricted to [-depth, inf), e^x>`` if known in closed form."""
        return None

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"name": self.name, **self.params()}

    def sample(self, seed: int, floor: float = -math.inf) -> PointConfiguration:
        if self.needs_floor and floor == -math.inf:
            raise ValueError(f"{self.name} has infinitely many atoms; pass a finite floor")
        d = checked_draw(self, 1, generator(seed, "decoration"),
                         np.array([floor]) if self.needs_floor else None)
        return d.configuration(0)

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


def checked_draw(law: DecorationLaw, n: int, rng: np.random.Generator, floor=None) -> Draw:
    """``law.draw`` with the structural guarantees enforced."""
    d = law.draw(n, rng, floor)
    if d.counts.size != n or d.counts.sum() != d.positions.size or d.masses.shape != d.positions.shape:
        raise ValueError(f"{law.name}: malformed draw")
    if d.positions.size and not np.all(np.isfinite(d.positions)):
        raise ValueError(f"{law.name}: non-finite atom position")
    if d.positions.size and not np.all(d.masses > 0):
        raise ValueError(f"{law.name}: non-positive atom mass")
    if d.positions.size and d.positions.max() > law.support_upper_bound:
        raise ValueError(f"{law.name}: atom above the declared support bound")
    return d


class FixedAtoms(DecorationLaw):
    """Deterministic decoration with atoms at fixed offsets."""

    def __init__(self, offsets: Sequence[float] = (0.0,), masses: Sequence[float] | None = None,
                 name: str = "atoms"):
        self.offsets = np.asarray(offsets, dtype=np.float64)
        self.masses = np.ones_like(self.offsets) if masses is None else np.asarray(masses, dtype=np.float64)
        if self.offsets.size == 0:
            raise ValueError("a fixed decoration needs at least one atom")
        self.name = name
        self.support_upper_bound = float(self.offsets.max())
        self.support_lower_bound = float(self.offsets.min())
        self.mean_exp_pairing = float(np.dot(self.masses, np.exp(self.offsets)))

    def draw(self, n, rng, floor=None):
        return _fixed(n, self.offsets, self.masses)

    def rightmost_sf(self, m):
        return np.where(np.asarray(m) < rightmost_of(self.offsets, self.masses), 1.0, 0.0)

    def mean_exp_pairing_above(self, depth):
        keep = self.offsets >= -depth
        return float(np.dot(self.masses[keep], np.exp(self.offsets[keep])))

    def params(self):
        return {"offsets": self.offsets.tolist(), "masses": self.masses.tolist()}


def rightmost_of(positions, masses) -> float:
    from .measure import rightmost

    return rightmost(PointConfiguration(positions, masses))


def dirac(at: float = 0.0) -> FixedAtoms:
    return FixedAtoms([at], name="dirac0" if at == 0 else f"dirac({at:g})")


class FiniteCluster(DecorationLaw):
    """An atom at 0 and ``k`` atoms at independent ``-Exp(rate)`` offsets.

    With ``depth`` set, the offsets are exponentials conditioned on ``[0, depth]``.
    """

    name = "finite_cluster"
    support_upper_bound = 0.0

    def __init__(self, k: int = 3, rate: float = 1.0, depth: float | None = None):
        if k < 0 or rate <= 0:
            raise ValueError("finite_cluster needs k >= 0 and rate > 0")
        self.k, self.rate, self.depth = int(k), float(rate), depth
        self.support_lower_bound = -math.inf if depth is None else -float(depth)
        if depth is None:
            self.mean_exp_pairing = 1.0 + self.k * self.rate / (self.rate + 1.0)
        else:
            r, L = self.rate, float(depth)
            self.mean_exp_pairing = 1.0 + self.k * r / (r + 1.0) * (1 - math.exp(-(r + 1) * L)) / (1 - math.exp(-r * L))

    def draw(self, n, rng, floor=None):
        u = rng.random((n, self.k))
        if self.depth is None:
            off = -np.log1p(-u) / self.rate
        else:
            off = -np.log1p(-u * (1.0 - math.exp(-self.rate * self.depth))) / self.rate
        pos = np.concatenate([np.zeros((n, 1)), -off], axis=1).reshape(-1)
        return Draw(pos, np.ones_like(pos), np.full(n, self.k + 1))

    def rightmost_sf(self, m):
        return np.where(np.asarray(m) < 0.0, 1.0, 0.0)

    def mean_exp_pairing_above(self, depth):
        r = self.rate
        cut = depth if self.depth is None else min(depth, self.depth)
        norm = 1.0 if self.depth is None else 1.0 - math.exp(-r * self.depth)
        return 1.0 + self.k * r / (r + 1.0) * (1.0 - math.exp(-(r + 1.0) * cut)) / norm

    def params(self):
        return {"k": self.k, "rate": self.rate, "depth": self.depth}


class Staircase(FixedAtoms):
    """Atoms at ``0, -gap, ..., -(k-1) gap``."""

    def __init__(self, k: int = 4, gap: float = 0.5):
        self.k, self.gap = int(k), float(gap)
        super().__init__(-self.gap * np.arange(self.k), name="staircase")

    def params(self):
        return {"k": self.k, "gap": self.gap}


class Mixture(DecorationLaw):
    """Pick component ``j`` with probability ``probs[j]``, then draw from it."""

    name = "mixture"

    def __init__(self, components: Sequence[DecorationLaw], probs: Sequence[float], name: str = "mixture"):
        self.components = list(components)
        self.probs = np.asarray(probs, dtype=np.float64)
        if len(self.components) != self.probs.size or not np.isclose(self.probs.sum(), 1.0):
            raise ValueError("mixture needs one probability per component, summing to 1")
        self.name = name
        self.support_upper_bound = max(c.support_upper_bound for c in self.components)
        self.support_lower_bound = min(c.support_lower_bound for c in self.components)
        self.needs_floor = any(c.needs_floor for c in self.components)
        means = [c.mean_exp_pairing for c in self.components]
        if all(m is not None for m in means):
            self.mean_exp_pairing = float(np.dot(self.probs, means))

    def draw(self, n, rng, floor=None):
        pick = np.searchsorted(np.cumsum(self.probs), rng.random(n), side="right")
        pick = np.minimum(pick, len(self.components) - 1)
        pos, ms, own = [], [], []
        for j, comp in enumerate(self.components):
            idx = np.flatnonzero(pick == j)
            sub_floor = None if floor is None else np.asarray(floor)[idx]
            d = comp.draw(idx.size, rng, sub_floor)
            pos.append(d.positions)
            ms.append(d.masses)
            own.append(np.repeat(idx, d.counts))
        pos, ms, own = np.concatenate(pos), np.concatenate(ms), np.concatenate(own)
        order = np.argsort(own, kind="stable")
        return Draw(pos[order], ms[order], np.bincount(own, minlength=n))

    def draw_stratified(self, n, rng):
        # proportional allocation, leftover draws assigned at random
        alloc = np.floor(n * self.probs).astype(np.int64)
        extra = n - int(alloc.sum())
        if extra:
            alloc += np.bincount(rng.choice(self.probs.size, size=extra, replace=False, p=self.probs),
                                 minlength=self.probs.size)
        draws = [checked_draw(c, int(k), rng) for c, k in zip(self.components, alloc)]
        d = Draw(np.concatenate([x.positions for x in draws]), np.concatenate([x.masses for x in draws]),
                 np.concatenate([x.counts for x in draws]))
        return d, np.repeat(np.arange(self.probs.size), alloc), self.probs

    def rightmost_sf(self, m):
        parts = [c.rightmost_sf(m) for c in self.components]
        if any(p is None for p in parts):
            return None
        return sum(p * q for p, q in zip(self.probs, parts))

    def params(self):
        return {"components": [c.describe() for c in self.components], "probs": self.probs.tolist()}


def two_point(a: float = 0.0, b: float = math.log(2.0), p: float = 0.5) -> Mixture:
    """``delta_a`` with probability ``p``, else ``delta_b``."""
    return Mixture([dirac(a), dirac(b)], [p, 1.0 - p], name="two_point")


class ExponentialSpread(DecorationLaw):
    """``k`` atoms at independent ``+Exp(rate)`` offsets: unbounded above."""

    name = "exp_spread"
    support_lower_bound = 0.0

    def __init__(self, k: int = 3, rate: float = 2.0):
        if k < 1 or rate <= 0:
            raise ValueError("exp_spread needs k >= 1 and rate > 0")
        self.k, self.rate = int(k), float(rate)
        self.mean_exp_pairing = self.k * self.rate / (self.rate - 1.0) if self.rate > 1 else math.inf

    def draw(self, n, rng, floor=None):
        pos = rng.standard_exponential((n, self.k)).reshape(-1) / self.rate
        return Draw(pos, np.ones_like(pos), np.full(n, self.k))

    def rightmost_sf(self, m):
        m = np.asarray(m, dtype=np.float64)
        return np.where(m < 0, 1.0, -np.expm1(self.k * np.log1p(-np.exp(-self.rate * np.maximum(m, 0)))))

    def params(self):
        return {"k": self.k, "rate": self.rate}


class GrowingIntensity(DecorationLaw):
    """An atom at 0 plus a Poisson process of intensity ``|x| e^{|x|}`` on ``(-inf, 0)``.

    ``E<D, e^x>`` is infinite, so the resulting process has infinite
    intensity. Only atoms at or above the floor are generated.
    """

    name = "growing"
    support_upper_bound = 0.0
    mean_exp_pairing = math.inf
    needs_floor = True

    @staticmethod
    def cumulative(depth):
        """Expected number of atoms in ``[-depth, 0)``: ``(depth - 1) e^depth + 1``."""
        depth = np.asarray(depth, dtype=np.float64)
        return (depth - 1.0) * np.exp(depth) + 1.0

    @staticmethod
    def inverse_cumulative(v):
        v = np.asarray(v, dtype=np.float64)
        # rounding can push the argument just below the branch point -1/e
        arg = (v - 1.0) / math.e
        at_branch = arg <= -1.0 / math.e
        w = lambertw(np.where(at_branch, 0.0, arg)).real
        return np.where(at_branch, 0.0, np.maximum(1.0 + w, 0.0))

    def draw(self, n, rng, floor=None):
        if floor is None:
            raise ValueError("growing decoration needs per-decoration floors")
        depth = np.maximum(0.0, -np.asarray(floor, dtype=np.float64))
        mean = self.cumulative(depth)
        if mean.sum() > MAX_ATOMS:
            raise ConfigurationOverflow("growing decoration would exceed the atom cap")
        counts = poisson_inverse(rng, mean)
        v = rng.random(counts.sum()) * np.repeat(mean, counts)
        deep = -self.inverse_cumulative(v)
        owners = np.concatenate([np.arange(n), np.repeat(np.arange(n), counts)])
        pos = np.concatenate([np.zeros(n), deep])
        order = np.argsort(owners, kind="stable")
        return Draw(pos[order], np.ones(pos.size), counts + 1)

    def rightmost_sf(self, m):
        return np.where(np.asarray(m) < 0.0, 1.0, 0.0)

    def mean_exp_pairing_above(self, depth):
        # int_0^depth u e^u e^{-u} du
        return 1.0 + depth * depth / 2.0


class Empirical(DecorationLaw):
    """Weighted resampling from a fixed pool of configurations."""

    name = "empirical"

    def __init__(self, positions, masses, counts, weights):
        self.pool = Draw(positions, masses, counts)
        w = np.asarray(weights, dtype=np.float64)
        self.weights = w / w.sum()
        self.support_upper_bound = float(self.pool.positions.max()) if self.pool.positions.size else -math.inf
        self.support_lower_bound = float(self.pool.positions.min()) if self.pool.positions.size else math.inf
        pair = np.bincount(self.pool.owners(), weights=self.pool.masses * np.exp(self.pool.positions),
                           minlength=self.pool.counts.size)
        self.mean_exp_pairing = float(np.dot(self.weights, pair))

    def __len__(self):
        return self.pool.counts.size

    def draw(self, n, rng, floor=None):
        idx = rng.choice(len(self), size=n, p=self.weights)
        counts = self.pool.counts[idx]
        starts = self.pool.offsets[:-1][idx]
        flat = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts) + np.arange(counts.sum())
        return Draw(self.pool.positions[flat], self.pool.masses[flat], counts)

    def rightmost_sf(self, m):
        tops = np.array([rightmost_of(*self._config(i)) for i in range(len(self))])
        m = np.asarray(m, dtype=np.float64)
        return (self.weights[None, :] * (tops[None, :] > m.reshape(-1, 1))).sum(axis=1).reshape(m.shape)

    def _config(self, i):
        a, b = self.pool.offsets[i], self.pool.offsets[i + 1]
        return self.pool.positions[a:b], self.pool.masses[a:b]

    def params(self):
        return {"pool": len(self)}

    def to_json(self) -> dict:
        return {
            "configurations": [[[p, m] for p, m in zip(*(arr.tolist() for arr in self._config(i)))]
                               for i in range(len(self))],
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> Empirical:
        configs = obj["configurations"]
        counts = [len(c) for c in configs]
        flat = [a for c in configs for a in c]
        return cls([a[0] for a in flat], [a[1] for a in flat], counts, obj["weights"])


class ShiftedLaw(DecorationLaw):
    """The law of ``T_a D``."""

    def __init__(self, base: DecorationLaw, shift: float):
        self.base, self.shift = base, float(shift)
        self.name = f"{base.name}+{self.shift:g}"
        self.support_upper_bound = base.support_upper_bound + self.shift
        self.support_lower_bound = base.support_lower_bound + self.shift
        self.needs_floor = base.needs_floor
        if base.mean_exp_pairing is not None:
            self.mean_exp_pairing = base.mean_exp_pairing * math.exp(self.shift)

    def draw(self, n, rng, floor=None):
        d = self.base.draw(n, rng, None if floor is None else np.asarray(floor) - self.shift)
        return Draw(d.positions + self.shift, d.masses, d.counts)

    def rightmost_sf(self, m):
        return self.base.rightmost_sf(np.asarray(m) - self.shift)

    def params(self):
        return {"base": self.base.describe(), "shift": self.shift}


class DepthLimited(DecorationLaw):
    """``D`` with every atom below ``-depth`` removed.

    Makes laws with infinitely many deep atoms usable in exact window
    sampling; ``E<D_depth, e^x>`` is finite whenever ``D`` is locally finite.
    """

    def __init__(self, base: DecorationLaw, depth: float):
        if not depth > 0:
            raise ValueError("depth must be positive")
        self.base, self.depth = base, float(depth)
        self.name = f"{base.name}|depth<={self.depth:g}"
        self.support_upper_bound = base.support_upper_bound
        self.support_lower_bound = max(base.support_lower_bound, -self.depth)
        self.needs_floor = base.needs_floor
        self.mean_exp_pairing = base.mean_exp_pairing_above(self.depth)

    def draw(self, n, rng, floor=None):
        cut = np.full(n, -self.depth) if floor is None else np.maximum(np.asarray(floor), -self.depth)
        d = self.base.draw(n, rng, cut if self.base.needs_floor else None)
        keep = d.positions >= -self.depth
        return Draw(d.positions[keep], d.masses[keep], np.bincount(d.owners()[keep], minlength=n))

    def rightmost_sf(self, m):
        return self.base.rightmost_sf(m) if self.base.support_lower_bound >= -self.depth else None

    def mean_exp_pairing_above(self, depth):
        return self.base.mean_exp_pairing_above(min(depth, self.depth))

    def params(self):
        return {"base": self.base.describe(), "depth": self.depth}


REGISTRY = {
    "dirac0": lambda: dirac(0.0),
    "dirac": dirac,
    "atoms": FixedAtoms,
    "finite_cluster": FiniteCluster,
    "staircase": Staircase,
    "two_point": two_point,
    "exp_spread": ExponentialSpread,
    "growing": GrowingIntensity,
}

BUILTIN_DPPP = ("dirac0", "finite_cluster", "staircase")


def make_decoration(name: str, **params) -> DecorationLaw:
    """Build a registered decoration law from its name and parameters."""
    if name not in REGISTRY:
        raise KeyError(f"unknown decoration {name!r}; choose from {sorted(REGISTRY)}")
    return REGISTRY[name](**params)
