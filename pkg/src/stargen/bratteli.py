"""Bratteli data: block sizes, incidence matrices, and stage selection.

Multiplicity tables are exact integers throughout; they double as the
oracle for the copy counts of composed diagonal maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDepth, ShapeError

__all__ = [
    "BratteliData",
    "multiplicities",
    "StageSelection",
    "select_stages",
    "first_stage_with_multiplicity",
]


@dataclass(frozen=True)
class BratteliData:
    """sizes[i][j]: block sizes at stage i+1; incidence[i][src][tgt]:
    multiplicity of stage-(i+1) block src inside stage-(i+2) block tgt.
    """
    sizes: tuple
    incidence: tuple

    def __post_init__(self):
        sizes = tuple(tuple(int(n) for n in row) for row in self.sizes)
        inc = tuple(
            tuple(tuple(int(m) for m in row) for row in mat)
            for mat in self.incidence
        )
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "incidence", inc)
        if not sizes or any(not row for row in sizes):
            raise ShapeError("at least one stage with at least one block")
        if len(inc) != len(sizes) - 1:
            raise ShapeError("need one incidence matrix per step")
        for i, mat in enumerate(inc):
            if len(mat) != len(sizes[i]):
                raise ShapeError(f"incidence {i} has wrong source count")
            for row in mat:
                if len(row) != len(sizes[i + 1]):
                    raise ShapeError(f"incidence {i} has wrong target count")
            for t, n_t in enumerate(sizes[i + 1]):
                got = sum(mat[s][t] * sizes[i][s] for s in range(len(sizes[i])))
                if got != n_t:
                    raise ShapeError(
                        f"stage {i + 2} block {t}: size {n_t} but embeddings "
                        f"fill {got}")

    @property
    def depth(self) -> int:
        return len(self.sizes)

    def blocks(self, stage: int) -> int:
        return len(self.sizes[stage - 1])


def multiplicities(data: BratteliData, i0: int, i: int) -> np.ndarray:
    """Integer table m[j', j]: copies of stage-i0 block j' in stage-i block j."""
    if not 1 <= i0 <= i <= data.depth:
        raise ShapeError(f"stage pair ({i0}, {i}) outside depth {data.depth}")
    m = np.eye(data.blocks(i0), dtype=np.int64)
    for step in range(i0 - 1, i - 1):
        m = m @ np.array(data.incidence[step], dtype=np.int64)
    return m


@dataclass(frozen=True)
class StageSelection:
    """Strictly increasing algebra stages s_1 < … < s_{N'} for the scaffold.

    Aliases follow the convention that the selection sits on top of a
    one-dimensional stage 0: K(0) = 1, and the first multiplicity table
    M(1; 0, j) equals the stage-s_1 block size.
    """
    data: BratteliData
    stages: tuple

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(int(s) for s in self.stages))
        last = 0
        for s in self.stages:
            if not last < s <= self.data.depth:
                raise ShapeError(f"selection {self.stages} not increasing "
                                 f"within depth {self.data.depth}")
            last = s
        for j, n in enumerate(self.data.sizes[self.stages[0] - 1]):
            if n <= 1:
                raise InsufficientDepth(
                    f"stage {self.stages[0]} block {j} has size {n}; "
                    "the selection needs every first-stage size > 1")
        for i in range(2, len(self.stages) + 1):
            table = multiplicities(self.data, self.stages[i - 2],
                                   self.stages[i - 1])
            if table.min() <= 1:
                jp, j = np.unravel_index(int(table.argmin()), table.shape)
                raise InsufficientDepth(
                    f"multiplicity {table[jp, j]} from stage "
                    f"{self.stages[i - 2]} block {jp} to stage "
                    f"{self.stages[i - 1]} block {j}; need > 1")

    @property
    def count(self) -> int:
        return len(self.stages)

    def stage(self, i: int) -> int:
        return self.stages[i - 1]

    def K(self, i: int) -> int:
        if i == 0:
            return 1
        return self.data.blocks(self.stages[i - 1])

    def N(self, i: int, j: int) -> int:
        return self.data.sizes[self.stages[i - 1] - 1][j]

    def M(self, i: int, jp: int, j: int) -> int:
        if i == 1:
            if jp != 0:
                raise ShapeError("stage 0 has a single (scalar) block")
            return self.N(1, j)
        table = multiplicities(self.data, self.stages[i - 2],
                               self.stages[i - 1])
        return int(table[jp, j])


def first_stage_with_multiplicity(data: BratteliData, from_stage: int,
                                  floor: int,
                                  start: int = None) -> int:
    """Smallest stage > from_stage whose every multiplicity from from_stage
    exceeds floor. Raises InsufficientDepth naming the unmet condition.
    """
    lo = from_stage + 1 if start is None else start
    for s in range(lo, data.depth + 1):
        if multiplicities(data, from_stage, s).min() > floor:
            return s
    raise InsufficientDepth(
        f"no stage within depth {data.depth} has all multiplicities from "
        f"stage {from_stage} above {floor}")


def select_stages(data: BratteliData, depth: int,
                  floor: int = 1) -> StageSelection:
    """Greedy-minimal selection of `depth` stages with sizes, then pairwise
    multiplicities, all exceeding `floor`.
    """
    if depth < 1:
        raise ShapeError("selection depth must be at least 1")
    first = None
    for s in range(1, data.depth + 1):
        if min(data.sizes[s - 1]) > floor:
            first = s
            break
    if first is None:
        raise InsufficientDepth(
            f"no stage within depth {data.depth} has every block size "
            f"above {floor}")
    picked = [first]
    while len(picked) < depth:
        picked.append(first_stage_with_multiplicity(data, picked[-1], floor))
    return StageSelection(data, tuple(picked))
