"""Finite sample grids for the base spaces and their cartesian powers.

A stage space is either a base grid on [0, 1] or a finite power of an
earlier space. Points of a power are ordered like ``itertools.product``:
the first factor varies slowest. All coordinate bookkeeping downstream
(seed maps, density diagnostics, serialization) relies on that order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GridError

__all__ = [
    "SampledSpace",
    "base_interval_grid",
    "power_space",
    "coordinate_projections",
]


@dataclass(frozen=True)
class SampledSpace:
    dim: int
    points: tuple
    kind: str = "base"
    parent: Optional["SampledSpace"] = None
    power: int = 0

    def __post_init__(self):
        for p in self.points:
            if len(p) != self.dim:
                raise GridError(f"point {p} does not have dim {self.dim}")

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.points, dtype=float).reshape(self.count, self.dim)

    def describe(self) -> str:
        if self.kind == "base":
            return f"grid({self.count})"
        return f"{self.parent.describe()}^{self.power}"


def base_interval_grid(g: int) -> SampledSpace:
    """g uniform samples of [0, 1]; a single sample degenerates to {0}."""
    if g < 1:
        raise GridError(f"grid size must be at least 1, got {g}")
    if g == 1:
        pts = ((0.0,),)
    else:
        pts = tuple((j / (g - 1),) for j in range(g))
    return SampledSpace(dim=1, points=pts)


def power_space(parent: SampledSpace, c: int) -> SampledSpace:
    if c < 1:
        raise GridError(f"power must be at least 1, got {c}")
    pts = tuple(
        tuple(itertools.chain.from_iterable(combo))
        for combo in itertools.product(parent.points, repeat=c)
    )
    return SampledSpace(dim=parent.dim * c, points=pts,
                        kind="power", parent=parent, power=c)


def coordinate_projections(parent_count: int, c: int) -> list[np.ndarray]:
    """Index arrays of the c coordinate projections of a power space.

    Entry t maps a power-point index to the parent index of its t-th
    factor, consistent with the product point order (first factor slowest).
    """
    idx = np.arange(parent_count ** c)
    return [
        (idx // parent_count ** (c - 1 - t)) % parent_count
        for t in range(c)
    ]
