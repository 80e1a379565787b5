"""The cumulant ``K(f) = -log E exp(-<Z, f>)``, estimated two independent ways.

* :func:`estimate_cumulant` simulates ``Z`` and averages ``exp(-<Z, f>)``.
* :func:`eval_cumulant_formula` never simulates ``Z``; it integrates

      c int e^{-x} f(x) dx + int e^{-x} E[1 - exp(-<T_x D, f>)] dx

  over anchor positions ``x``, with the inner expectation averaged over
  decoration draws.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .batch import ReplicaBatch
from .decorations import DecorationLaw, checked_draw
from .errors import NonIntegrable, WindowTooSmall
from .measure import COMPACT, TestFunction, Window, indicator, triangle
from .rng import derive_seed, generator
from .sampler import DpppSpec

MIN_REPLICAS = 1000
GAUSS_NODES = 8
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_NODES)


def standard_battery() -> tuple[TestFunction, ...]:
    """Seven fixed test functions, all supported in ``[-1, 3]``."""
    return (
        indicator(0.0, 1.0, "ind[0,1)"),
        indicator(1.0, 2.0, "ind[1,2)"),
        indicator(-1.0, 0.0, "ind[-1,0)"),
        indicator(0.0, 2.0, "ind[0,2)"),
        indicator(2.0, 3.0, "ind[2,3)"),
        triangle(0.0, 1.0, 1.0, "tri(0,1)"),
        triangle(1.5, 1.5, 0.5, "tri(1.5,1.5,h=.5)"),
    )


BATTERY = standard_battery()


@dataclass(frozen=True)
class CumulantEstimate:
    """Point estimate of ``K(f)`` with its standard error.

    Monte Carlo estimates also keep the mean and variance of
    ``exp(-<Z, f>)`` so shards can be merged with :func:`combine`.
    """

    value: float
    std_error: float
    replicas: int
    f_id: str
    laplace_mean: float = math.nan
    laplace_var: float = math.nan

    def __post_init__(self):
        if self.value < 0 and self.value > -1e-12:
            object.__setattr__(self, "value", 0.0)
        if not (self.value >= 0 and self.std_error >= 0):
            raise ValueError(f"invalid cumulant estimate {self.value} +/- {self.std_error}")

    def to_json(self) -> dict:
        return {"value": self.value, "se": self.std_error}


def cumulant_from_pairings(pairings: np.ndarray, f_id: str = "f") -> CumulantEstimate:
    """``-log mean exp(-pairings)``; standard error by the delta method."""
    e = np.exp(-np.asarray(pairings, dtype=np.float64))
    n = e.size
    mean = float(e.mean())
    var = float(e.var(ddof=1)) if n > 1 else 0.0
    return _from_moments(mean, var, n, f_id)


def _from_moments(mean: float, var: float, n: int, f_id: str) -> CumulantEstimate:
    if mean <= 0:
        return CumulantEstimate(math.inf, math.inf, n, f_id, mean, var)
    return CumulantEstimate(-math.log(mean), math.sqrt(var / n) / mean, n, f_id, mean, var)


def combine(a: CumulantEstimate, b: CumulantEstimate) -> CumulantEstimate:
    """Merge two Monte Carlo estimates of the same ``K(f)`` from independent shards."""
    if a.f_id != b.f_id:
        raise ValueError("cannot combine estimates of different functions")
    n = a.replicas + b.replicas
    mean = (a.replicas * a.laplace_mean + b.replicas * b.laplace_mean) / n
    delta = b.laplace_mean - a.laplace_mean
    m2 = (a.laplace_var * (a.replicas - 1) + b.laplace_var * (b.replicas - 1)
          + delta * delta * a.replicas * b.replicas / n)
    return _from_moments(mean, m2 / (n - 1), n, a.f_id)


def _check_window(window: Window, f: TestFunction):
    if not window.covers(f.support):
        raise WindowTooSmall(f"{f.f_id} is supported on {f.support}, outside the sampled window {window}")


def laplace_samples(spec, battery: Sequence[TestFunction], replicas: int, seed: int) -> np.ndarray:
    """``exp(-<Z_i, f_j>)`` for every replica ``i`` and battery function ``j``."""
    for f in battery:
        _check_window(spec.window, f)
    return laplace_from_batch(spec.sample_batch(replicas, seed), battery)


def laplace_from_batch(batch: ReplicaBatch, battery: Sequence[TestFunction]) -> np.ndarray:
    return np.exp(-np.stack([batch.pair(f) for f in battery], axis=1))


def estimates_from_laplace(values: np.ndarray, battery: Sequence[TestFunction]) -> list[CumulantEstimate]:
    n = values.shape[0]
    return [_from_moments(float(values[:, j].mean()), float(values[:, j].var(ddof=1)), n, f.f_id)
            for j, f in enumerate(battery)]


def estimate_battery(spec, battery: Sequence[TestFunction] = BATTERY, replicas: int = 10**5,
                     seed: int = 0) -> list[CumulantEstimate]:
    """Cumulant estimates for several functions from one shared set of replicas."""
    if replicas < MIN_REPLICAS:
        raise ValueError(f"at least {MIN_REPLICAS} replicas are required")
    return estimates_from_laplace(laplace_samples(spec, battery, replicas, seed), battery)


def estimate_cumulant(spec, f: TestFunction, replicas: int, seed: int) -> CumulantEstimate:
    """Monte Carlo estimate of ``K(f)`` for the process ``spec``."""
    return estimate_battery(spec, (f,), replicas, seed)[0]


# formula route

def _draw_integrals(pos: np.ndarray, ms: np.ndarray, f: TestFunction) -> np.ndarray:
    """``int e^{-x} (1 - exp(-sum_k m_k f(p_k + x))) dx`` for each padded row.

    The integrand is smooth between the points ``x = knot - p_k``, so each
    row is split there and every piece gets Gauss-Legendre quadrature.
    """
    n, width = pos.shape
    if n == 0:
        return np.empty(0)
    lo, hi = f.support.lo, f.support.hi
    top = np.nanmax(pos, axis=1)
    bottom = np.nanmin(pos, axis=1)
    x_lo = lo - top
    x_hi = hi - bottom
    knots = np.asarray(sorted(set(f.knots) | {lo, hi}))
    breaks = (knots[None, None, :] - pos[:, :, None]).reshape(n, -1)
    breaks = np.clip(breaks, x_lo[:, None], x_hi[:, None])
    breaks = np.concatenate([x_lo[:, None], breaks, x_hi[:, None]], axis=1)
    breaks = np.where(np.isnan(breaks), x_hi[:, None], breaks)
    breaks.sort(axis=1)
    a, b = breaks[:, :-1], breaks[:, 1:]
    half = (b - a) / 2.0
    mid = (a + b) / 2.0
    x = mid[:, :, None] + half[:, :, None] * _NODES[None, None, :]
    # <T_x D, f> at every node
    shifted = pos[:, None, None, :] + x[:, :, :, None]
    vals = np.where(np.isnan(shifted), 0.0, f(np.nan_to_num(shifted, nan=lo - 1.0)))
    load = (vals * ms[:, None, None, :]).sum(axis=3)
    integrand = np.exp(-x) * -np.expm1(-load)
    per_piece = (integrand * _WEIGHTS[None, None, :]).sum(axis=2) * half
    return per_piece.sum(axis=1)


def eval_cumulant_formula(c: float, decoration: DecorationLaw, f: TestFunction, mc_inner: int,
                          seed: int, weight: float = 1.0, chunk: int = 2048) -> CumulantEstimate:
    """``K(f)`` from the decomposition ``(c, weight * law of decoration)``.

    The inner expectation uses ``mc_inner`` decoration draws shared by every
    anchor position (common random numbers); the reported standard error is
    the spread of the per-draw integrals.
    """
    if c < 0 or weight < 0:
        raise ValueError("c and weight must be non-negative")
    if f.decay_class != COMPACT:
        raise NonIntegrable("formula evaluation needs a compactly supported test function")
    if decoration.needs_floor:
        raise NonIntegrable(f"{decoration.name} has infinitely many atoms; the anchor integral has no finite range")
    first = c * f.exp_integral if c > 0 else 0.0
    if weight == 0 or mc_inner == 0:
        return CumulantEstimate(first, 0.0, mc_inner, f.f_id)
    rng = generator(seed, "formula")
    parts = []
    for start in range(0, mc_inner, chunk):
        d = checked_draw(decoration, min(chunk, mc_inner - start), rng)
        integrals = np.zeros(d.counts.size)
        nonempty = d.counts > 0
        if nonempty.any():
            pos, ms = d.dense()
            integrals[nonempty] = _draw_integrals(pos[nonempty], ms[nonempty], f)
        parts.append(integrals)
    per_draw = weight * np.concatenate(parts)
    if not np.all(np.isfinite(per_draw)):
        raise NonIntegrable("anchor integral did not converge")
    se = float(per_draw.std(ddof=1) / math.sqrt(mc_inner)) if mc_inner > 1 else 0.0
    return CumulantEstimate(first + float(per_draw.mean()), se, mc_inner, f.f_id)


# agreement and homogeneity

def zscore(a: CumulantEstimate, b: CumulantEstimate, scale_b: float = 1.0) -> float:
    diff = a.value - scale_b * b.value
    se = math.hypot(a.std_error, scale_b * b.std_error)
    if se == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / se


@dataclass(frozen=True)
class AgreementRow:
    f_id: str
    mc: CumulantEstimate
    formula: CumulantEstimate

    @property
    def z(self) -> float:
        return zscore(self.mc, self.formula)

    def to_json(self) -> dict:
        return {"f_id": self.f_id, "mc": self.mc.to_json(), "formula": self.formula.to_json(), "z": self.z}


def agreement_table(spec: DpppSpec, battery: Sequence[TestFunction] = BATTERY, replicas: int = 10**5,
                    mc_inner: int = 20000, seed: int = 0) -> list[AgreementRow]:
    """Both routes to ``K(f)`` for each battery function."""
    mc = estimate_battery(spec, battery, replicas, derive_seed(seed, "mc"))
    rows = []
    for j, f in enumerate(battery):
        formula = eval_cumulant_formula(spec.density_coeff, spec.decoration, f, mc_inner,
                                        derive_seed(seed, "formula", j))
        rows.append(AgreementRow(f.f_id, mc[j], formula))
    return rows


@dataclass(frozen=True)
class HomogeneityRow:
    """``K(f(. + x))`` against ``e^x K(f)``."""

    shift: float
    shifted: CumulantEstimate
    scaled: CumulantEstimate
    z: float

    def to_json(self) -> dict:
        return {"shift": self.shift, "shifted": self.shifted.to_json(),
                "scaled": self.scaled.to_json(), "z": self.z}


def homogeneity_check(spec, f: TestFunction, shifts: Sequence[float], replicas: int,
                      seed: int) -> list[HomogeneityRow]:
    """Compare ``K(f(. + x))`` with ``e^x K(f)`` using independent replica sets.

    A zero shift reuses the unshifted estimate, so its z-score is exactly 0.
    """
    base = estimate_cumulant(spec, f, replicas, derive_seed(seed, "base"))
    rows = []
    for j, x in enumerate(shifts):
        scaled = CumulantEstimate(math.exp(x) * base.value, math.exp(x) * base.std_error,
                                  base.replicas, base.f_id)
        if x == 0:
            rows.append(HomogeneityRow(x, base, scaled, 0.0))
            continue
        shifted = estimate_cumulant(spec, f.shifted(x), replicas, derive_seed(seed, "shift", j))
        rows.append(HomogeneityRow(x, shifted, scaled, zscore(shifted, base, math.exp(x))))
    return rows
