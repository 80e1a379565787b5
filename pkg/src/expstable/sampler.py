"""Seeded sampling of the Poisson process with intensity ``e^{-x} dx`` and of
decorated Poisson point processes (DPPPs) built on it.

Exact window sampling: a decoration anchored at ``xi`` has every atom at or
below ``xi + support_upper_bound``, so only anchors with
``xi >= window.lo - support_upper_bound`` can reach ``[window.lo, ...)``.
Those are finitely many and are generated exactly.

Anything with a ``window`` attribute, ``with_window(window)`` and
``sample_batch(n, seed)`` returning a :class:`ReplicaBatch` is a *process*
as far as :mod:`expstable.stability` is concerned.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import integrate

from .batch import ReplicaBatch
from .decorations import DecorationLaw, DepthLimited, checked_draw
from .errors import UnboundedDecoration
from .measure import PointConfiguration, RandomMeasureSample, Window
from .rng import derive_seed, generator, map_blocks, poisson_inverse

BLOCK_SIZE = 256


def gumbel_ppp_raw(lo: float, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Atoms of ``n`` independent Poisson(e^{-x} dx) processes on ``[lo, inf)``.

    Returns unsorted ``(positions, owners)``.
    """
    if not math.isfinite(lo):
        raise ValueError("the Poisson floor must be finite")
    counts = poisson_inverse(rng, np.full(n, math.exp(-lo)))
    positions = lo + rng.standard_exponential(int(counts.sum()))
    return positions, np.repeat(np.arange(n), counts)


def sample_gumbel_ppp(lo: float, seed: int) -> PointConfiguration:
    """Exact sample of the Poisson process with intensity ``e^{-x} dx`` on ``[lo, inf)``."""
    pos, _ = gumbel_ppp_raw(lo, 1, generator(seed, "ppp"))
    return PointConfiguration(pos, None, Window(lo, math.inf))


def sample_gumbel_ppp_batch(lo: float, n: int, seed: int, block_size: int = BLOCK_SIZE) -> ReplicaBatch:
    window = Window(lo, math.inf)

    def block(count, rng):
        pos, own = gumbel_ppp_raw(lo, count, rng)
        return ReplicaBatch.from_owners(pos, None, own, count, window)

    return ReplicaBatch.concat(map_blocks(block, n, seed, block_size, workers=1))


@dataclass(frozen=True)
class DpppSpec:
    """``sum_i T_{xi_i} D_i`` plus ``density_coeff * e^{-x} dx``, observed on ``window``."""

    decoration: DecorationLaw
    window: Window = Window(0.0, math.inf)
    density_coeff: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not self.density_coeff >= 0:
            raise ValueError("density_coeff must be non-negative")
        if not math.isfinite(self.window.lo):
            raise ValueError("exact sampling needs a finite window.lo")

    def with_window(self, window: Window) -> DpppSpec:
        return dataclasses.replace(self, window=window)

    def sample_batch(self, n: int, seed: int | None = None, block_size: int = BLOCK_SIZE,
                     workers: int | None = 1) -> ReplicaBatch:
        seed = self.seed if seed is None else seed
        _require_bounded(self.decoration)
        fn = partial(_dppp_block, self, self.window.lo - self.decoration.support_upper_bound)
        return ReplicaBatch.concat(map_blocks(fn, n, seed, block_size, workers))

    def describe(self) -> dict:
        return {"decoration": self.decoration.describe(), "window": self.window.to_json(),
                "density_coeff": self.density_coeff}


def _require_bounded(law: DecorationLaw):
    if not math.isfinite(law.support_upper_bound):
        raise UnboundedDecoration(
            f"{law.name} has no almost-sure upper bound; use sample_dppp_truncated")


def dppp_raw(spec: DpppSpec, xi_floor: float, n: int, rng: np.random.Generator):
    """Unsorted ``(positions, masses, owners)`` of ``n`` replicas restricted to the window."""
    xi, own = gumbel_ppp_raw(xi_floor, n, rng)
    law = spec.decoration
    floor = spec.window.lo - xi if law.needs_floor else None
    d = checked_draw(law, xi.size, rng, floor)
    pos = np.repeat(xi, d.counts) + d.positions
    owners = np.repeat(own, d.counts)
    keep = spec.window.contains(pos)
    return pos[keep], d.masses[keep], owners[keep]


def _dppp_block(spec: DpppSpec, xi_floor: float, n: int, rng: np.random.Generator) -> ReplicaBatch:
    pos, ms, own = dppp_raw(spec, xi_floor, n, rng)
    return ReplicaBatch.from_owners(pos, ms, own, n, spec.window, spec.density_coeff)


def sample_dppp(spec: DpppSpec) -> RandomMeasureSample:
    """One exact sample of the DPPP restricted to ``spec.window``; deterministic in ``spec.seed``."""
    if spec.seed is None:
        raise ValueError("DpppSpec.seed is required")
    return spec.sample_batch(1)[0]


@dataclass(frozen=True)
class TruncationReport:
    """What dropping anchors below ``xi_floor`` may cost.

    ``expected_escapes`` is the mean number of dropped anchors whose
    decoration reaches the window; it bounds the probability that any does.
    """

    xi_floor: float
    escape_prob_bound: float
    expected_escapes: float
    method: str

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def truncation_report(spec: DpppSpec, xi_floor: float, n_mc: int = 10**5, seed: int = 0) -> TruncationReport:
    """Expected number of anchors below ``xi_floor`` whose decoration reaches the window.

    Anchor ``y`` reaches ``[lo, ...)`` iff ``M(D) >= lo - y``, so the count is
    Poisson with mean ``int_d^inf e^{m - lo} P(M(D) > m) dm``, ``d = lo - xi_floor``.
    Without a closed-form tail for ``M(D)`` the mean is estimated from
    ``n_mc`` decoration draws; that estimate has infinite variance unless
    ``E[e^{2 M(D)}]`` is finite.
    """
    lo = spec.window.lo
    d = lo - xi_floor
    law = spec.decoration
    if d >= law.support_upper_bound:
        return TruncationReport(xi_floor, 0.0, 0.0, "support_bound")
    probe = law.rightmost_sf(np.array([d]))
    if probe is not None:
        def integrand(m):
            sf = float(law.rightmost_sf(np.array([m]))[0])
            return math.exp(m - lo + math.log(sf)) if sf > 0 else 0.0

        upper = law.support_upper_bound
        mu, _ = integrate.quad(integrand, d, upper, epsabs=0.0, epsrel=1e-10, limit=200)
        method = "quadrature"
    else:
        draws = checked_draw(law, n_mc, generator(seed, "truncation"))
        top = draws.rightmost()
        mu = float(np.mean(np.clip(np.exp(top - lo) - math.exp(d - lo), 0.0, None)))
        method = "monte_carlo"
    return TruncationReport(xi_floor, min(1.0, mu), mu, method)


def sample_dppp_truncated(spec: DpppSpec, xi_floor: float) -> tuple[RandomMeasureSample, TruncationReport]:
    """Like :func:`sample_dppp` but anchors below ``xi_floor`` are dropped.

    Works for decorations unbounded above; the report quantifies the loss.
    """
    if not xi_floor < spec.window.lo:
        raise ValueError("xi_floor must lie below window.lo")
    if spec.seed is None:
        raise ValueError("DpppSpec.seed is required")
    batch = sample_dppp_truncated_batch(spec, xi_floor, 1, spec.seed)
    return batch[0], truncation_report(spec, xi_floor, seed=spec.seed)


def sample_dppp_truncated_batch(spec: DpppSpec, xi_floor: float, n: int, seed: int,
                                block_size: int = BLOCK_SIZE) -> ReplicaBatch:
    fn = partial(_dppp_block, spec, xi_floor)
    return ReplicaBatch.concat(map_blocks(fn, n, seed, block_size, workers=1))


# intensity

@dataclass(frozen=True)
class IntensityEstimate:
    """Monte Carlo ``E[Z(A)]`` and its ratio to ``int_A e^{-x} dx``.

    The ratio estimates ``E<D, e^x>`` (plus the density coefficient); it does
    not depend on ``A`` when the intensity is finite.
    """

    window: Window
    mean: float
    std_error: float
    ci: tuple[float, float]
    replicas: int
    prediction: float | None
    ratio: float
    ratio_se: float

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["window"] = self.window.to_json()
        out["ci"] = list(self.ci)
        return out


def _mass_block(spec: DpppSpec, xi_floor: float, area: Window, n: int, rng) -> np.ndarray:
    pos, ms, own = dppp_raw(spec, xi_floor, n, rng)
    return np.bincount(own, weights=ms, minlength=n) + spec.density_coeff * area.exp_mass()


def intensity_estimate(spec: DpppSpec, area: Window, replicas: int, seed: int,
                       z: float = 1.959963984540054) -> IntensityEstimate:
    """Estimate ``E[Z(area)]`` with a normal-approximation confidence interval."""
    if replicas < 100:
        raise ValueError("intensity_estimate needs at least 100 replicas")
    if not area.bounded:
        raise ValueError("the area must be bounded")
    _require_bounded(spec.decoration)
    local = spec.with_window(area)
    fn = partial(_mass_block, local, area.lo - spec.decoration.support_upper_bound, area)
    masses = np.concatenate(map_blocks(fn, replicas, seed, BLOCK_SIZE, workers=1))
    mean = float(masses.mean())
    se = float(masses.std(ddof=1) / math.sqrt(replicas))
    base = area.exp_mass()
    prediction = None
    if spec.decoration.mean_exp_pairing is not None and math.isfinite(spec.decoration.mean_exp_pairing):
        prediction = (spec.decoration.mean_exp_pairing + spec.density_coeff) * base
    return IntensityEstimate(area, mean, se, (mean - z * se, mean + z * se), replicas, prediction,
                             mean / base, se / base)


@dataclass(frozen=True)
class IntensityScan:
    estimates: tuple[IntensityEstimate, ...]
    finite_intensity: bool
    growth_z: float

    def to_json(self) -> dict:
        return {"estimates": [e.to_json() for e in self.estimates],
                "finite_intensity": self.finite_intensity, "growth_z": self.growth_z}


def intensity_scan(decoration: DecorationLaw, depths=(2.0, 4.0, 6.0), replicas: int = 1000,
                   seed: int = 0, density_coeff: float = 0.0, z_flag: float = 3.0,
                   rel_flag: float = 0.1) -> IntensityScan:
    """Intensity over ``A = [-k, 0]`` for growing ``k``, decorations cut at depth ``k``.

    With each decoration restricted to ``[-k, 0]`` relative to its anchor,
    ``E[Z(A)] / int_A e^{-x} dx`` equals ``E<D_k, e^x>`` exactly, and that
    converges as ``k`` grows iff ``E<D, e^x>`` is finite. The regime is
    flagged non-finite when the ratio increases at every step and the total
    increase is both significant (``z_flag`` standard errors) and material
    (``rel_flag`` relative to the first ratio).
    """
    ests = []
    for j, k in enumerate(depths):
        area = Window(-k, 0.0)
        spec = DpppSpec(DepthLimited(decoration, k), area, density_coeff)
        ests.append(intensity_estimate(spec, area, replicas, derive_seed(seed, j)))
    ratios = np.array([e.ratio for e in ests])
    first, last = ests[0], ests[-1]
    rise = last.ratio - first.ratio
    growth = rise / math.hypot(last.ratio_se, first.ratio_se) if len(ests) > 1 else 0.0
    increasing = bool(np.all(np.diff(ratios) > 0))
    diverging = increasing and growth > z_flag and rise > rel_flag * abs(first.ratio)
    return IntensityScan(tuple(ests), not diverging, float(growth))


# process combinators

@dataclass(frozen=True)
class Shifted:
    """``T_x`` applied to another process."""

    source: object
    shift: float

    @property
    def window(self) -> Window:
        return self.source.window.shifted(self.shift)

    def with_window(self, window: Window) -> Shifted:
        return Shifted(self.source.with_window(window.shifted(-self.shift)), self.shift)

    def sample_batch(self, n: int, seed: int) -> ReplicaBatch:
        return self.source.sample_batch(n, seed).translate(self.shift)


@dataclass(frozen=True)
class Superposed:
    """Independent sum of two processes observed on a common window."""

    first: object
    second: object

    @property
    def window(self) -> Window:
        a, b = self.first.window, self.second.window
        return Window(max(a.lo, b.lo), min(a.hi, b.hi))

    def with_window(self, window: Window) -> Superposed:
        return Superposed(self.first.with_window(window), self.second.with_window(window))

    def sample_batch(self, n: int, seed: int) -> ReplicaBatch:
        a = self.first.sample_batch(n, derive_seed(seed, "first"))
        b = self.second.sample_batch(n, derive_seed(seed, "second"))
        return a.superpose(b)
