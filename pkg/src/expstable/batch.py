"""Many independent replicas of a random measure packed into flat arrays.

Replica ``i`` owns ``positions[offsets[i]:offsets[i + 1]]``, sorted
ascending. All replicas share one density coefficient and one window.
"""

from __future__ import annotations

import io
import math
from typing import Iterator, Sequence

import numpy as np

from .measure import PointConfiguration, RandomMeasureSample, TestFunction, Window


class ReplicaBatch:
    __slots__ = ("positions", "masses", "offsets", "density_coeff", "window", "meta")

    def __init__(self, positions, masses, offsets, window: Window, density_coeff: float = 0.0,
                 meta: dict | None = None):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.masses = np.asarray(masses, dtype=np.float64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.window = window
        self.density_coeff = float(density_coeff)
        self.meta = dict(meta or {})

    @classmethod
    def from_owners(cls, positions, masses, owners, n: int, window: Window,
                    density_coeff: float = 0.0, meta: dict | None = None) -> ReplicaBatch:
        positions = np.asarray(positions, dtype=np.float64)
        owners = np.asarray(owners, dtype=np.int64)
        masses = np.ones_like(positions) if masses is None else np.asarray(masses, dtype=np.float64)
        order = np.lexsort((positions, owners))
        counts = np.bincount(owners, minlength=n)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return cls(positions[order], masses[order], offsets, window, density_coeff, meta)

    @classmethod
    def empty(cls, n: int, window: Window, density_coeff: float = 0.0) -> ReplicaBatch:
        return cls(np.empty(0), np.empty(0), np.zeros(n + 1, dtype=np.int64), window, density_coeff)

    @classmethod
    def concat(cls, batches: Sequence[ReplicaBatch]) -> ReplicaBatch:
        if not batches:
            raise ValueError("nothing to concatenate")
        first = batches[0]
        offsets = [np.zeros(1, dtype=np.int64)]
        base = 0
        for b in batches:
            offsets.append(b.offsets[1:] + base)
            base += b.offsets[-1]
        meta = {}
        for b in batches:
            for k, v in b.meta.items():
                meta[k] = meta.get(k, 0) + v if isinstance(v, (int, float)) else v
        return cls(np.concatenate([b.positions for b in batches]),
                   np.concatenate([b.masses for b in batches]),
                   np.concatenate(offsets), first.window, first.density_coeff, meta)

    def __len__(self):
        return self.offsets.size - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def owners(self) -> np.ndarray:
        return np.repeat(np.arange(len(self)), self.counts)

    def __getitem__(self, i: int) -> RandomMeasureSample:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        a, b = self.offsets[i], self.offsets[i + 1]
        config = PointConfiguration(self.positions[a:b], self.masses[a:b], self.window)
        return RandomMeasureSample(config, self.density_coeff)

    def __iter__(self) -> Iterator[RandomMeasureSample]:
        for i in range(len(self)):
            yield self[i]

    def take(self, index) -> ReplicaBatch:
        """Sub-batch of the selected replicas (boolean mask or integer index)."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        counts = self.counts[index]
        starts = self.offsets[:-1][index]
        flat = np.repeat(starts - np.concatenate(([0], np.cumsum(counts)[:-1])), counts) + np.arange(counts.sum())
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return ReplicaBatch(self.positions[flat], self.masses[flat], offsets, self.window,
                            self.density_coeff, self.meta)

    def max_positions(self) -> np.ndarray:
        """Largest atom of each replica inside the window; ``-inf`` where empty."""
        out = np.full(len(self), -math.inf)
        nonempty = self.counts > 0
        out[nonempty] = self.positions[self.offsets[1:][nonempty] - 1]
        return out

    def pair(self, f: TestFunction) -> np.ndarray:
        """Per-replica ``<Z, f>`` including the density component."""
        vals = self.masses * f(self.positions) if self.positions.size else np.empty(0)
        out = np.bincount(self.owners(), weights=vals, minlength=len(self))
        if self.density_coeff > 0:
            out = out + self.density_coeff * f.exp_integral
        return out

    def mass_in(self, window: Window) -> np.ndarray:
        """Per-replica ``Z(window)``, density component included."""
        keep = window.contains(self.positions)
        out = np.bincount(self.owners()[keep], weights=self.masses[keep], minlength=len(self))
        if self.density_coeff > 0:
            out = out + self.density_coeff * window.exp_mass()
        return out

    def cell_masses(self, edges) -> np.ndarray:
        """Atom mass of each replica in each cell ``[edges[j], edges[j+1])``."""
        edges = np.asarray(edges, dtype=np.float64)
        ncell = edges.size - 1
        cell = np.searchsorted(edges, self.positions, side="right") - 1
        keep = (cell >= 0) & (cell < ncell)
        flat = self.owners()[keep] * ncell + cell[keep]
        out = np.bincount(flat, weights=self.masses[keep], minlength=len(self) * ncell)
        return out.reshape(len(self), ncell)

    def translate(self, x: float) -> ReplicaBatch:
        return ReplicaBatch(self.positions + x, self.masses, self.offsets, self.window.shifted(x),
                            self.density_coeff * math.exp(x), self.meta)

    def restrict(self, window: Window) -> ReplicaBatch:
        keep = window.contains(self.positions)
        counts = np.bincount(self.owners()[keep], minlength=len(self))
        offsets = np.concatenate(([0], np.cumsum(counts)))
        return ReplicaBatch(self.positions[keep], self.masses[keep], offsets, window,
                            self.density_coeff, self.meta)

    def superpose(self, other: ReplicaBatch) -> ReplicaBatch:
        """Replica-wise sum of two batches with the same number of replicas."""
        if len(self) != len(other):
            raise ValueError("batches differ in replica count")
        lo = max(self.window.lo, other.window.lo)
        hi = min(self.window.hi, other.window.hi)
        a, b = self.restrict(Window(lo, hi)), other.restrict(Window(lo, hi))
        return ReplicaBatch.from_owners(
            np.concatenate([a.positions, b.positions]),
            np.concatenate([a.masses, b.masses]),
            np.concatenate([a.owners(), b.owners()]),
            len(self), Window(lo, hi), a.density_coeff + b.density_coeff)

    def to_csv(self) -> str:
        """``replica,position,mass`` rows with shortest round-trip floats."""
        buf = io.StringIO()
        buf.write("replica,position,mass\n")
        for r, p, m in zip(self.owners().tolist(), self.positions.tolist(), self.masses.tolist()):
            buf.write(f"{r},{p!r},{m!r}\n")
        return buf.getvalue()
