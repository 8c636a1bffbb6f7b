"""Seeded randomness: feature masks and the cycling column stream.

All generators are ``numpy.random.Generator`` over the counter-based
Philox bit generator. Independent streams (sample order, masks,
initialization, evaluation subset) are spawned from one 64-bit seed so
changing how many masks are drawn never perturbs the sample order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STREAMS = ("order", "mask", "init", "eval")


def make_rngs(seed: int) -> dict[str, np.random.Generator]:
    """Spawn one Philox generator per named stream from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(STREAMS, children)}


@dataclass(frozen=True)
class Mask:
    """Random diagonal operator with value ``scale`` on ``indices``, 0 elsewhere."""

    dim: int
    indices: np.ndarray
    scale: float

    @classmethod
    def full(cls, dim: int) -> "Mask":
        return cls(dim, np.arange(dim), 1.0)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def is_full(self) -> bool:
        return self.indices.size == self.dim

    def complement(self) -> np.ndarray:
        keep = np.ones(self.dim, dtype=bool)
        keep[self.indices] = False
        return np.flatnonzero(keep)

    def diagonal(self) -> np.ndarray:
        diag = np.zeros(self.dim)
        diag[self.indices] = self.scale
        return diag

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x, dtype=np.float64)
        out[self.indices] = self.scale * x[self.indices]
        return out

    def union(self, other: "Mask") -> "Mask":
        return Mask(self.dim, np.union1d(self.indices, other.indices), self.scale)


def draw_mask(rng: np.random.Generator, p: int, r: float) -> Mask:
    """Keep each of the ``p`` features independently with probability ``1/r``.

    The kept entries are scaled by ``r`` so that ``E[M x] = x``. An empty
    mask is a legitimate outcome and is returned as is.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if not r >= 1:
        raise ValueError(f"reduction factor must be >= 1, got {r}")
    keep = rng.random(p) < 1.0 / r
    return Mask(p, np.flatnonzero(keep), float(r))


@dataclass
class SampleStream:
    """Cycles over ``n`` column indices, reshuffling at every epoch."""

    n: int
    rng: np.random.Generator
    order: np.ndarray = field(init=False)
    cursor: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("stream needs at least one column")
        self.order = self.rng.permutation(self.n)

    def next_index(self) -> int:
        if self.cursor == self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
            self.epoch += 1
        i = int(self.order[self.cursor])
        self.cursor += 1
        return i

    def next_batch(self, size: int) -> np.ndarray:
        return np.array([self.next_index() for _ in range(size)], dtype=np.intp)


def next_sample(stream: SampleStream, X: np.ndarray) -> tuple[int, np.ndarray]:
    """Return the next column index and a read-only view of that column."""
    i = stream.next_index()
    col = X[:, i]
    col.flags.writeable = False
    return i, col
