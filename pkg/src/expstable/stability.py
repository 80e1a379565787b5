"""Two-sample test battery for equality in law of point processes, and the
exp-stability checks built on it.

The battery compares two processes on a common window through

* the rightmost atom (two-sample Kolmogorov-Smirnov),
* the mass in each cell of a 10-cell partition of ``[lo + 2, lo + 8]``
  (one chi-square homogeneity test per cell),
* the cumulant battery (z-scores of independent estimates).

The verdict is ``rejected`` iff some p-value falls below ``level / #tests``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from .batch import ReplicaBatch
from .errors import DegenerateAlpha
from .functional import BATTERY, estimates_from_laplace, laplace_from_batch, zscore
from .measure import TestFunction, Window
from .rng import derive_seed, generator, poisson_inverse
from .sampler import Shifted, Superposed

LEVEL = 0.001
N_CELLS = 10
MIN_CATEGORY = 10

CONSISTENT = "consistent"
REJECTED = "rejected"


@dataclass
class StabilityReport:
    alpha: float | None
    beta: float | None
    ks_stat_max: float
    ks_pvalue_max: float
    count_chi2_pvalues: list
    cumulant_zscores: list
    verdict: str
    level: float = LEVEL
    replicas: int = 0
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha is not None and abs(math.exp(self.alpha) + math.exp(self.beta) - 1.0) > 1e-12:
            raise ValueError("alpha and beta must satisfy e^alpha + e^beta = 1")
        for p in [self.ks_pvalue_max, *self.count_chi2_pvalues]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p-value {p} outside [0, 1]")

    @property
    def cumulant_pvalues(self) -> list:
        return [float(2 * stats.norm.sf(abs(z))) for z in self.cumulant_zscores]

    @property
    def n_tests(self) -> int:
        return 1 + len(self.count_chi2_pvalues) + len(self.cumulant_zscores)

    @property
    def min_pvalue(self) -> float:
        return min([self.ks_pvalue_max, *self.count_chi2_pvalues, *self.cumulant_pvalues])

    @property
    def consistent(self) -> bool:
        return self.verdict == CONSISTENT

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["min_pvalue"] = self.min_pvalue
        out["threshold"] = self.level / self.n_tests
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def table(self) -> str:
        lines = [f"{self.label or 'comparison'}: {self.verdict} "
                 f"(min p = {self.min_pvalue:.3g}, threshold {self.level / self.n_tests:.3g}, "
                 f"{self.replicas} replicas)"]
        if self.alpha is not None:
            lines.append(f"  alpha = {self.alpha:.6g}, beta = {self.beta:.6g}")
        lines.append(f"  max    KS D = {self.ks_stat_max:.4f}  p = {self.ks_pvalue_max:.3g}")
        for j, p in enumerate(self.count_chi2_pvalues):
            lines.append(f"  cell {j:<2d} chi2 p = {p:.3g}")
        for j, z in enumerate(self.cumulant_zscores):
            lines.append(f"  K[{j}]   z = {z:+.2f}")
        return "\n".join(lines)


def comparison_edges(window: Window, n_cells: int = N_CELLS) -> np.ndarray:
    """Cell edges partitioning ``[lo + 2, lo + 8]``."""
    return np.linspace(window.lo + 2.0, window.lo + 8.0, n_cells + 1)


def _categories(values: np.ndarray, min_count: int = MIN_CATEGORY) -> np.ndarray:
    """Upper edges grouping sorted distinct values into bins of at least ``min_count``."""
    uniq, counts = np.unique(values, return_counts=True)
    edges, run = [], 0
    for u, c in zip(uniq, counts):
        run += c
        if run >= min_count:
            edges.append(u)
            run = 0
    if run and edges:
        edges[-1] = uniq[-1]
    return np.asarray(edges)


def category_bins(values: np.ndarray, min_count: int = MIN_CATEGORY) -> np.ndarray:
    """Histogram bins for :func:`_categories`; each group's top value stays inside its bin."""
    edges = _categories(values, min_count)
    return np.concatenate(([-np.inf], np.nextafter(edges[:-1], np.inf), [np.inf]))


def count_homogeneity_pvalue(x: np.ndarray, y: np.ndarray) -> float:
    """Chi-square test that two samples of cell masses share one distribution.

    Adjacent values are pooled so every category holds at least
    ``MIN_CATEGORY`` observations across both samples.
    """
    bins = category_bins(np.concatenate([x, y]))
    if bins.size < 3:
        return 1.0
    table = np.stack([np.histogram(x, bins)[0], np.histogram(y, bins)[0]])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table, correction=False)[1])


def ks_max_statistic(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    res = stats.ks_2samp(a, b)
    return float(res.statistic), float(res.pvalue)


def compare_batches(a: ReplicaBatch, b: ReplicaBatch, *, edges=None,
                    battery: Sequence[TestFunction] | None = BATTERY, level: float = LEVEL,
                    alpha=None, beta=None, label: str = "") -> StabilityReport:
    window = Window(max(a.window.lo, b.window.lo), min(a.window.hi, b.window.hi))
    a, b = a.restrict(window), b.restrict(window)
    edges = comparison_edges(window) if edges is None else np.asarray(edges)
    ks, ks_p = ks_max_statistic(a.max_positions(), b.max_positions())
    ca, cb = a.cell_masses(edges), b.cell_masses(edges)
    chi2 = [count_homogeneity_pvalue(ca[:, j], cb[:, j]) for j in range(edges.size - 1)]
    zs = []
    if battery:
        battery = [f for f in battery if window.covers(f.support)]
        ka = estimates_from_laplace(laplace_from_batch(a, battery), battery)
        kb = estimates_from_laplace(laplace_from_batch(b, battery), battery)
        zs = [zscore(x, y) for x, y in zip(ka, kb)]
    report = StabilityReport(alpha, beta, ks, ks_p, chi2, zs, CONSISTENT, level,
                             min(len(a), len(b)), label)
    if report.min_pvalue < level / report.n_tests:
        report.verdict = REJECTED
    return report


def compare_processes(first, second, replicas: int, seed: int, **kwargs) -> StabilityReport:
    """Run the battery on independent replicas of two processes."""
    a = first.sample_batch(replicas, derive_seed(seed, "a"))
    b = second.sample_batch(replicas, derive_seed(seed, "b"))
    report = compare_batches(a, b, **kwargs)
    for name, batch in (("a", a), ("b", b)):
        for k, v in batch.meta.items():
            report.extra[f"{name}.{k}"] = v
    return report


def beta_for(alpha: float) -> float:
    if not math.exp(alpha) < 1.0 or math.exp(alpha) == 0.0:
        raise DegenerateAlpha(f"e^alpha must lie in (0, 1), got alpha={alpha}")
    return math.log1p(-math.exp(alpha))


def check_stability(spec, alpha: float, replicas: int, seed: int, **kwargs) -> StabilityReport:
    """Battery comparison of ``Z`` against ``T_alpha Z + T_beta Z'``, ``e^alpha + e^beta = 1``."""
    beta = beta_for(alpha)
    mixed = Superposed(Shifted(spec, alpha), Shifted(spec, beta)).with_window(spec.window)
    kwargs.setdefault("label", f"stability alpha={alpha:.4g}")
    return compare_processes(spec, mixed, replicas, seed, alpha=alpha, beta=beta, **kwargs)


def check_superposition_shift(spec, replicas: int, seed: int, **kwargs) -> StabilityReport:
    """Battery comparison of ``Z + Z'`` against ``T_{log 2} Z``."""
    doubled = Superposed(spec, spec)
    shifted = Shifted(spec, math.log(2.0)).with_window(spec.window)
    kwargs.setdefault("label", "superposition vs log 2 shift")
    return compare_processes(doubled, shifted, replicas, seed, **kwargs)


@dataclass(frozen=True)
class GaussianIntensityPoisson:
    """Poisson process with intensity ``e^{-x^2} dx``: not exp-stable.

    Negative control for the battery.
    """

    window: Window = Window(-4.0, math.inf)

    def with_window(self, window: Window) -> GaussianIntensityPoisson:
        return GaussianIntensityPoisson(window)

    def _cdf(self, x):
        # int_{-inf}^x e^{-y^2} dy = sqrt(pi) Phi(sqrt(2) x)
        return math.sqrt(math.pi) * special.ndtr(math.sqrt(2.0) * np.asarray(x, dtype=np.float64))

    def sample_batch(self, n: int, seed: int) -> ReplicaBatch:
        rng = generator(seed, "gaussian-control")
        lo, hi = self._cdf(self.window.lo), self._cdf(self.window.hi)
        counts = poisson_inverse(rng, np.full(n, hi - lo))
        u = lo + rng.random(int(counts.sum())) * (hi - lo)
        pos = special.ndtri(u / math.sqrt(math.pi)) / math.sqrt(2.0)
        pos = np.clip(pos, self.window.lo, np.nextafter(self.window.hi, -np.inf))
        return ReplicaBatch.from_owners(pos, None, np.repeat(np.arange(n), counts), n, self.window)
