"""Diagonal connecting maps between block algebras.

A ``DiagonalMap`` sends each source block into diagonal slots of target
blocks, twisting samples by an index table per slot. The entry lists are
ordered: composition must reproduce the exact interleaved diagonal layout,
because later stages address individual diagonal positions by offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .elements import AlgebraShape, BlockShape, Element
from .errors import GridError, ShapeError
from .spaces import coordinate_projections

__all__ = [
    "DiagonalMap",
    "identity_map",
    "apply_map",
    "compose_maps",
    "block_offsets",
    "diagonal_seed",
    "composed_diagonal_seed",
]


@dataclass(frozen=True)
class DiagonalMap:
    """entries[tb] is an ordered tuple of (source_block, point_map) slots.

    point_map is an integer array of length target-samples whose values
    index source samples. The slot order is the diagonal layout.
    """
    source: AlgebraShape
    target: AlgebraShape
    entries: tuple

    def __post_init__(self):
        if len(self.entries) != len(self.target.blocks):
            raise ShapeError("one entry list per target block required")
        frozen = []
        for tb, slots in enumerate(self.entries):
            tgt = self.target.blocks[tb]
            size = 0
            out = []
            for sb, pm in slots:
                if not 0 <= sb < len(self.source.blocks):
                    raise ShapeError(f"source block {sb} out of range")
                src = self.source.blocks[sb]
                pm = np.asarray(pm, dtype=np.intp)
                if pm.shape != (tgt.samples,):
                    raise ShapeError(
                        f"point map for target block {tb} has length "
                        f"{pm.shape}, expected {tgt.samples}")
                if pm.size and (pm.min() < 0 or pm.max() >= src.samples):
                    raise ShapeError("point map indexes outside the source grid")
                pm = pm.copy()
                pm.setflags(write=False)
                out.append((sb, pm))
                size += src.size
            if size != tgt.size:
                raise ShapeError(
                    f"target block {tb} has size {tgt.size} but slots fill {size}")
            frozen.append(tuple(out))
        object.__setattr__(self, "entries", tuple(frozen))

    def multiplicity(self, sb: int, tb: int) -> int:
        return sum(1 for b, _ in self.entries[tb] if b == sb)


def identity_map(shape: AlgebraShape) -> DiagonalMap:
    entries = []
    for j, b in enumerate(shape.blocks):
        entries.append(((j, np.arange(b.samples)),))
    return DiagonalMap(shape, shape, tuple(entries))


def apply_map(m: DiagonalMap, e: Element) -> Element:
    if e.shape != m.source:
        raise ShapeError("element does not live in the map source")
    data = []
    for tb, tgt in enumerate(m.target.blocks):
        out = np.zeros((tgt.samples, tgt.size, tgt.size), dtype=np.complex128)
        r = 0
        for sb, pm in m.entries[tb]:
            k = m.source.blocks[sb].size
            out[:, r:r + k, r:r + k] = e.data[sb][pm]
            r += k
        data.append(out)
    return Element(m.target, data)


def compose_maps(later: DiagonalMap, earlier: DiagonalMap) -> DiagonalMap:
    """The map apply(later) o apply(earlier), with the true slot layout.

    Each later slot carrying a middle block expands in place to that middle
    block's own slot list, with sample tables chained.
    """
    if later.source != earlier.target:
        raise ShapeError("maps do not chain: source/target mismatch")
    entries = []
    for tb in range(len(later.target.blocks)):
        out = []
        for mb, pm_l in later.entries[tb]:
            for sb, pm_e in earlier.entries[mb]:
                out.append((sb, pm_e[pm_l]))
        entries.append(tuple(out))
    return DiagonalMap(earlier.source, later.target, tuple(entries))


def block_offsets(m: DiagonalMap, tb: int) -> list[tuple[int, int]]:
    """(source_block, diagonal row offset) per slot, in layout order."""
    out = []
    r = 0
    for sb, _ in m.entries[tb]:
        out.append((sb, r))
        r += m.source.blocks[sb].size
    return out


# ---------------------------------------------------------------------------
# seed maps of the inductive system

def _single_block(shape: AlgebraShape) -> BlockShape:
    if len(shape.blocks) != 1:
        raise ShapeError("seed maps work on single-block stages")
    return shape.blocks[0]


def diagonal_seed(source: AlgebraShape, c: int, s: Sequence[int],
                   eval_indices: Sequence[int]) -> DiagonalMap:
    """One-step seed: s_t copies of each coordinate pullback, then one
    constant evaluation slot per point of the evaluation set.

    The target grid is the c-th power of the source grid.
    """
    blk = _single_block(source)
    if c < 1 or len(s) != c:
        raise ShapeError(f"need one multiplicity per factor, got {s} for c={c}")
    if any(st < 1 for st in s):
        raise ShapeError("every coordinate multiplicity must be at least 1")
    if len(eval_indices) < 1:
        raise GridError("the evaluation set must be nonempty")
    for x in eval_indices:
        if not 0 <= x < blk.samples:
            raise GridError(f"evaluation index {x} outside the source grid")

    samples = blk.samples ** c
    ell, kay = sum(s), len(eval_indices)
    target = AlgebraShape([BlockShape(blk.size * (ell + kay), samples)])
    projs = coordinate_projections(blk.samples, c)
    slots = []
    for t in range(c):
        for _ in range(s[t]):
            slots.append((0, projs[t]))
    for x in eval_indices:
        slots.append((0, np.full(samples, x, dtype=np.intp)))
    return DiagonalMap(source, target, (tuple(slots),))


def composed_diagonal_seed(source: AlgebraShape, cs: Sequence[int],
                  ss: Sequence[Sequence[int]],
                  evals: Sequence[Sequence[int]]) -> DiagonalMap:
    """Several seed steps collapsed into one map, built directly by tiers.

    Tier one holds every composed coordinate pullback with multiplicity
    given by the product of the per-step copy counts. Each intermediate
    evaluation set contributes constants at its points pulled back to the
    start, replicated once per slot of every later step. The original
    evaluation set comes last with the same replication rule. The slot
    order groups by tier, so this map equals the step-by-step composition
    only up to a diagonal permutation; spectra agree pointwise.
    """
    steps = len(cs)
    if not (steps == len(ss) == len(evals)):
        raise ShapeError("cs, ss, evals must describe the same number of steps")
    if steps == 0:
        raise ShapeError("composed seed needs at least one step")
    if steps == 1:
        return diagonal_seed(source, cs[0], ss[0], evals[0])

    blk = _single_block(source)
    counts = [blk.samples]
    for c in cs:
        counts.append(counts[-1] ** c)
    lk = [sum(s) + len(ev) for s, ev in zip(ss, evals)]

    # coord[m]: composed coordinate tables into the source, after m steps
    coord = [[(np.arange(blk.samples), 1)]]
    for r in range(steps):
        projs = coordinate_projections(counts[r], cs[r])
        nxt = []
        for t in range(cs[r]):
            for pm, mult in coord[r]:
                nxt.append((pm[projs[t]], mult * ss[r][t]))
        coord.append(nxt)

    final_count = counts[steps]
    slots = []
    for pm, mult in coord[steps]:
        slots.extend([(0, pm)] * mult)
    for m in range(1, steps):
        rep = int(np.prod(lk[m + 1:], dtype=np.int64))
        tier = []
        for y in evals[m]:
            if not 0 <= y < counts[m]:
                raise GridError(f"evaluation index {y} outside stage grid")
            for pm, mult in coord[m]:
                entry = (0, np.full(final_count, pm[y], dtype=np.intp))
                tier.extend([entry] * mult)
        slots.extend(tier * rep)
    rep0 = int(np.prod(lk[1:], dtype=np.int64))
    for x in evals[0]:
        if not 0 <= x < blk.samples:
            raise GridError(f"evaluation index {x} outside the source grid")
        slots.extend([(0, np.full(final_count, x, dtype=np.intp))] * rep0)

    n_target = blk.size * int(np.prod(lk, dtype=np.int64))
    target = AlgebraShape([BlockShape(n_target, final_count)])
    return DiagonalMap(source, target, (tuple(slots),))
