"""Finite weighted point configurations on the real line and the functionals acting on them."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .errors import ConfigurationOverflow, NonIntegrable

MAX_ATOMS = 10**8
QUAD_EPSABS = 1e-10


@dataclass(frozen=True)
class Window:
    """Interval ``[lo, hi)``; either end may be infinite."""

    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("window bounds must not be NaN")
        if not lo < hi:
            raise ValueError(f"window needs lo < hi, got lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def shifted(self, x: float) -> Window:
        return Window(self.lo + x, self.hi + x)

    def contains(self, x):
        x = np.asarray(x)
        return (x >= self.lo) & (x < self.hi)

    def covers(self, other: Window) -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def exp_mass(self) -> float:
        """Mass of ``e^{-x} dx`` on the window."""
        return math.exp(-self.lo) - (0.0 if self.hi == math.inf else math.exp(-self.hi))

    def to_json(self) -> list:
        return [None if self.lo == -math.inf else self.lo,
                None if self.hi == math.inf else self.hi]

    @classmethod
    def from_json(cls, pair) -> Window:
        lo, hi = pair
        return cls(-math.inf if lo is None else lo, math.inf if hi is None else hi)


@dataclass(frozen=True)
class Atom:
    position: float
    mass: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.position):
            raise ValueError(f"atom position must be finite, got {self.position}")
        if not self.mass > 0:
            raise ValueError(f"atom mass must be positive, got {self.mass}")


class PointConfiguration:
    """Finite list of weighted atoms, sorted by position.

    Positions and masses live in read-only float64 arrays. Ties keep
    insertion order.
    """

    __slots__ = ("positions", "masses", "window")

    def __init__(self, positions: Sequence[float] = (), masses: Sequence[float] | None = None,
                 window: Window | None = None):
        pos = np.array(positions, dtype=np.float64).reshape(-1)
        if pos.size > MAX_ATOMS:
            raise ConfigurationOverflow(f"{pos.size} atoms exceeds the cap of {MAX_ATOMS}")
        ms = np.ones_like(pos) if masses is None else np.array(masses, dtype=np.float64).reshape(-1)
        if ms.shape != pos.shape:
            raise ValueError("positions and masses differ in length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("atom positions must be finite")
        if not np.all(ms > 0):
            raise ValueError("atom masses must be positive")
        order = np.argsort(pos, kind="stable")
        pos, ms = pos[order], ms[order]
        pos.setflags(write=False)
        ms.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "masses", ms)
        object.__setattr__(self, "window", window)

    def __setattr__(self, name, value):
        raise AttributeError("PointConfiguration is immutable")

    def __reduce__(self):
        return (PointConfiguration, (self.positions, self.masses, self.window))

    @classmethod
    def from_atoms(cls, atoms: Iterable[Atom], window: Window | None = None) -> PointConfiguration:
        atoms = list(atoms)
        return cls([a.position for a in atoms], [a.mass for a in atoms], window)

    @classmethod
    def null(cls, window: Window | None = None) -> PointConfiguration:
        return cls((), (), window)

    @property
    def atoms(self) -> tuple[Atom, ...]:
        return tuple(Atom(float(p), float(m)) for p, m in zip(self.positions, self.masses))

    def __len__(self):
        return self.positions.size

    def __repr__(self):
        return f"PointConfiguration(n={len(self)}, window={self.window})"

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def is_counting(self) -> bool:
        return bool(np.all(self.masses == np.round(self.masses)))

    def canonical(self) -> PointConfiguration:
        """Merge atoms sharing a position into one atom carrying the summed mass."""
        if len(self) == 0:
            return self
        uniq, inverse = np.unique(self.positions, return_inverse=True)
        merged = np.bincount(inverse, weights=self.masses, minlength=uniq.size)
        return PointConfiguration(uniq, merged, self.window)

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        a, b = self.canonical(), other.canonical()
        return (self.window == other.window
                and np.array_equal(a.positions, b.positions)
                and np.array_equal(a.masses, b.masses))

    __hash__ = None

    def restrict(self, window: Window) -> PointConfiguration:
        lo = np.searchsorted(self.positions, window.lo, side="left")
        hi = np.searchsorted(self.positions, window.hi, side="left")
        return PointConfiguration(self.positions[lo:hi], self.masses[lo:hi], window)

    # serialization

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("position,mass\n")
        for p, m in zip(self.positions.tolist(), self.masses.tolist()):
            buf.write(f"{p!r},{m!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, window: Window | None = None) -> PointConfiguration:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["position", "mass"]:
            raise ValueError("expected a 'position,mass' header")
        body = [r for r in rows[1:] if r]
        return cls([float(r[0]) for r in body], [float(r[1]) for r in body], window)

    def to_json(self) -> dict:
        out = {"atoms": [[p, m] for p, m in zip(self.positions.tolist(), self.masses.tolist())]}
        if self.window is not None:
            out["window"] = self.window.to_json()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj: dict | str) -> PointConfiguration:
        if isinstance(obj, str):
            obj = json.loads(obj)
        atoms = obj.get("atoms", [])
        window = Window.from_json(obj["window"]) if obj.get("window") is not None else None
        return cls([a[0] for a in atoms], [a[1] for a in atoms], window)


@dataclass(frozen=True)
class RandomMeasureSample:
    """Atoms plus the deterministic density ``density_coeff * e^{-x} dx``."""

    config: PointConfiguration
    density_coeff: float = 0.0

    def __post_init__(self):
        if not self.density_coeff >= 0:
            raise ValueError("density coefficient must be non-negative")


# test functions

@dataclass(frozen=True)
class _Indicator:
    a: float
    b: float

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return ((x >= self.a) & (x < self.b)).astype(np.float64)


@dataclass(frozen=True)
class _Triangle:
    center: float
    halfwidth: float
    height: float

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.height * np.clip(1.0 - np.abs(x - self.center) / self.halfwidth, 0.0, None)


@dataclass(frozen=True)
class _Zero:
    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class _Shift:
    func: Callable
    x: float

    def __call__(self, y):
        return self.func(np.asarray(y, dtype=np.float64) + self.x)


@dataclass(frozen=True)
class _Scaled:
    func: Callable
    factor: float

    def __call__(self, y):
        return self.factor * self.func(y)


COMPACT = "compact_support"
LEFT_DECAY = "bounded_with_left_decay"


@dataclass(frozen=True)
class TestFunction:
    """Non-negative function with a declared support and breakpoints.

    ``func`` must accept and return numpy arrays. ``knots`` lists the points
    where ``func`` is not smooth; quadrature routines split there.
    """

    __test__ = False  # keep pytest from collecting this class

    func: Callable
    support: Window
    decay_class: str = COMPACT
    knots: tuple = ()
    f_id: str = "f"

    def __post_init__(self):
        if self.decay_class not in (COMPACT, LEFT_DECAY):
            raise ValueError(f"unknown decay class {self.decay_class!r}")
        if self.decay_class == COMPACT and not self.support.bounded:
            raise ValueError("compactly supported test function needs a bounded support")
        if self.decay_class == LEFT_DECAY and not math.isfinite(self.support.hi):
            raise ValueError("left-decaying test function must vanish beyond a finite point")

    def __call__(self, x):
        return self.func(x)

    def shifted(self, x: float) -> TestFunction:
        """The function ``y -> f(y + x)``."""
        return TestFunction(_Shift(self.func, x), self.support.shifted(-x), self.decay_class,
                            tuple(k - x for k in self.knots), f"{self.f_id}(.{x:+.6g})")

    def scaled(self, factor: float) -> TestFunction:
        return TestFunction(_Scaled(self.func, factor), self.support, self.decay_class,
                            self.knots, f"{factor:g}*{self.f_id}")

    @cached_property
    def exp_integral(self) -> float:
        """``int f(x) e^{-x} dx`` by adaptive quadrature."""
        def g(x):
            v = float(self.func(np.array([x]))[0])
            if v == 0.0:
                return 0.0
            return _exp(math.log(v) - x)

        lo, hi = self.support.lo, self.support.hi
        inner = sorted(k for k in self.knots if lo < k < hi)
        pieces = []
        if lo == -math.inf:
            split = inner[0] if inner else hi - 1.0
            pieces.append((-math.inf, split, None))
            lo = split
            inner = [k for k in inner if k > split]
        pieces.append((lo, hi, inner or None))
        total = 0.0
        for a, b, pts in pieces:
            kwargs = {"points": pts} if pts else {}
            res = integrate.quad(g, a, b, epsabs=QUAD_EPSABS, epsrel=1e-10, limit=200,
                                 full_output=1, **kwargs)
            val, abserr = res[0], res[1]
            # a fourth element is only returned alongside an integration warning
            if not math.isfinite(val) or (len(res) > 3 and abserr > 1e3 * QUAD_EPSABS):
                raise NonIntegrable(f"quadrature of {self.f_id} against e^-x did not converge")
            total += val
        return total


def indicator(a: float, b: float, f_id: str | None = None) -> TestFunction:
    return TestFunction(_Indicator(a, b), Window(a, b), COMPACT, (a, b), f_id or f"ind[{a:g},{b:g})")


def triangle(center: float, halfwidth: float, height: float = 1.0, f_id: str | None = None) -> TestFunction:
    return TestFunction(_Triangle(center, halfwidth, height),
                        Window(center - halfwidth, center + halfwidth), COMPACT,
                        (center - halfwidth, center, center + halfwidth),
                        f_id or f"tri({center:g},{halfwidth:g})")


def zero_function(support: Window = Window(0.0, 1.0)) -> TestFunction:
    return TestFunction(_Zero(), support, COMPACT, (), "zero")


# operations

def translate(mu, x: float):
    """Shift every atom by ``x``.

    A :class:`RandomMeasureSample` also carries its density along: the
    translate of ``c e^{-y} dy`` is ``c e^{x} e^{-y} dy``.
    """
    if isinstance(mu, RandomMeasureSample):
        return RandomMeasureSample(translate(mu.config, x), mu.density_coeff * math.exp(x))
    window = mu.window.shifted(x) if mu.window is not None else None
    return PointConfiguration(mu.positions + x, mu.masses, window)


def rightmost(mu: PointConfiguration) -> float:
    """``inf{x : mu((x, inf)) < min(1, mu(R)/2)}``; ``+inf`` for the null measure.

    For a nonempty counting measure this is the largest atom position.
    """
    if isinstance(mu, RandomMeasureSample):
        mu = mu.config
    if len(mu) == 0:
        return math.inf
    c = mu.canonical()
    total = float(c.masses.sum())
    threshold = min(1.0, total / 2.0)
    # tails[k] = mass strictly to the right of the k-th atom
    tails = np.append(np.cumsum(c.masses[::-1])[::-1][1:], 0.0)
    k = int(np.argmax(tails < threshold))
    return float(c.positions[k])


def pair(mu, f: TestFunction, density_coeff: float = 0.0) -> float:
    """``<mu, f>`` plus ``density_coeff * int f e^{-x} dx``."""
    if isinstance(mu, RandomMeasureSample):
        density_coeff = density_coeff or mu.density_coeff
        mu = mu.config
    if density_coeff < 0:
        raise ValueError("density coefficient must be non-negative")
    total = float(np.dot(mu.masses, f(mu.positions))) if len(mu) else 0.0
    if density_coeff > 0:
        total += density_coeff * f.exp_integral
    return total


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def exp_transform(mu: PointConfiguration) -> PointConfiguration:
    """Image of ``mu`` under ``x -> e^x``; lives on ``(0, inf)``."""
    window = None
    if mu.window is not None:
        window = Window(_exp(mu.window.lo), _exp(mu.window.hi))
    return PointConfiguration(np.exp(mu.positions), mu.masses, window)
