"""Block-matrix elements of truncated stage algebras.

A member of a stage algebra  B = (+)_j M_{n_j}(C(X_j))  is stored per block
as a complex array of shape (samples, n_j, n_j): one square matrix per sample
point of the block's space. Samples only parametrize, they do not add matrix
dimension; the ambient dimension comes from the blocks alone.

The inner product used for spans is the normalized Hilbert-Schmidt form

    <a, b> = (1 / W) * sum over blocks and samples of trace(a* b),

with W = sum_j n_j * samples_j, so that <1, 1> = 1 regardless of sampling
resolution. Distance thresholds stay comparable across presets this way.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ShapeError

Scalar = Union[int, float, complex]

__all__ = [
    "BlockShape",
    "AlgebraShape",
    "Element",
    "canonical_unit",
    "hs_inner",
    "hs_norm",
    "flatten",
    "unflatten",
]


@dataclass(frozen=True)
class BlockShape:
    size: int
    samples: int

    def __post_init__(self):
        if self.size < 1 or self.samples < 1:
            raise ShapeError(
                f"block needs size >= 1 and samples >= 1, got "
                f"size={self.size}, samples={self.samples}")


@dataclass(frozen=True)
class AlgebraShape:
    blocks: tuple[BlockShape, ...]

    def __post_init__(self):
        blocks = tuple(
            b if isinstance(b, BlockShape) else BlockShape(*b)
            for b in self.blocks)
        if not blocks:
            raise ShapeError("a shape needs at least one block")
        object.__setattr__(self, "blocks", blocks)

    @property
    def dim(self) -> int:
        """Total ambient matrix dimension (samples excluded)."""
        return sum(b.size for b in self.blocks)

    @property
    def hs_weight(self) -> int:
        # normalizer of the Hilbert-Schmidt inner product; makes <1,1> = 1
        return sum(b.size * b.samples for b in self.blocks)

    @property
    def flat_dim(self) -> int:
        """Dimension of the whole algebra as a complex vector space."""
        return sum(b.size * b.size * b.samples for b in self.blocks)

    def constant(self) -> "AlgebraShape":
        """The same blocks with a single sample each (AF skeleton view)."""
        return AlgebraShape(tuple(BlockShape(b.size, 1) for b in self.blocks))


class Element:
    """One member of (+)_j M_{n_j}(C(X_j)).

    Immutable by convention: arithmetic returns fresh instances and the
    stored arrays are marked read-only.
    """

    __slots__ = ("shape", "data")

    def __init__(self, shape: AlgebraShape, data: Sequence[np.ndarray]):
        # always copy: freezing a caller's buffer would be a rude surprise
        data = tuple(np.array(a, dtype=np.complex128, order="C") for a in data)
        if len(data) != len(shape.blocks):
            raise ShapeError(
                f"expected {len(shape.blocks)} blocks, got {len(data)}")
        for b, a in zip(shape.blocks, data):
            if a.shape != (b.samples, b.size, b.size):
                raise ShapeError(
                    f"block data {a.shape} does not match "
                    f"(samples={b.samples}, size={b.size})")
        for a in data:
            a.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("Element is immutable")

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, shape: AlgebraShape) -> "Element":
        return cls(shape, [
            np.zeros((b.samples, b.size, b.size), dtype=np.complex128)
            for b in shape.blocks])

    @classmethod
    def unit(cls, shape: AlgebraShape) -> "Element":
        return cls(shape, [
            np.broadcast_to(np.eye(b.size, dtype=np.complex128),
                            (b.samples, b.size, b.size)).copy()
            for b in shape.blocks])

    @classmethod
    def from_matrix(cls, m) -> "Element":
        """Single-block, single-sample element from one square matrix."""
        m = np.asarray(m, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"need a square matrix, got {m.shape}")
        shape = AlgebraShape((BlockShape(m.shape[0], 1),))
        return cls(shape, [m[None, :, :]])

    @classmethod
    def constant(cls, shape: AlgebraShape, mats: Sequence[np.ndarray]) -> "Element":
        """Broadcast one matrix per block across that block's samples."""
        data = []
        for b, m in zip(shape.blocks, mats):
            m = np.asarray(m, dtype=np.complex128)
            if m.shape != (b.size, b.size):
                raise ShapeError(f"constant block {m.shape} vs size {b.size}")
            data.append(np.broadcast_to(m, (b.samples, b.size, b.size)).copy())
        return cls(shape, data)

    # -- structure ---------------------------------------------------------

    def block(self, j: int) -> np.ndarray:
        return self.data[j]

    def is_constant(self, tol: float = 0.0) -> bool:
        return all(
            abs(a - a[:1]).max() <= tol if a.shape[0] > 1 else True
            for a in self.data)

    def constant_part(self) -> "Element":
        """First-sample representative in the single-sample shape."""
        return Element(self.shape.constant(), [a[:1].copy() for a in self.data])

    def broadcast_to(self, shape: AlgebraShape) -> "Element":
        """Spread a constant element over the sample counts of ``shape``."""
        if len(shape.blocks) != len(self.shape.blocks) or any(
                b.size != c.size for b, c in zip(shape.blocks, self.shape.blocks)):
            raise ShapeError("block sizes disagree in broadcast")
        if not self.is_constant(0.0):
            raise ShapeError("only constant elements broadcast across samples")
        return Element(shape, [
            np.broadcast_to(a[0], (b.samples, b.size, b.size)).copy()
            for b, a in zip(shape.blocks, self.data)])

    # -- *-algebra operations ----------------------------------------------

    def _require_same_shape(self, other: "Element"):
        if self.shape != other.shape:
            raise ShapeError("element shapes disagree")

    def __add__(self, other: "Element") -> "Element":
        self._require_same_shape(other)
        return Element(self.shape,
                       [a + b for a, b in zip(self.data, other.data)])

    def __sub__(self, other: "Element") -> "Element":
        self._require_same_shape(other)
        return Element(self.shape,
                       [a - b for a, b in zip(self.data, other.data)])

    def __neg__(self) -> "Element":
        return Element(self.shape, [-a for a in self.data])

    def __mul__(self, other):
        if isinstance(other, Element):
            self._require_same_shape(other)
            return Element(self.shape,
                           [a @ b for a, b in zip(self.data, other.data)])
        return Element(self.shape, [complex(other) * a for a in self.data])

    def __rmul__(self, other: Scalar) -> "Element":
        return Element(self.shape, [complex(other) * a for a in self.data])

    def __eq__(self, other) -> bool:
        """Exact equality of shape and entries, no tolerance."""
        if not isinstance(other, Element):
            return NotImplemented
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.data, other.data))

    __hash__ = None

    def adjoint(self) -> "Element":
        return Element(self.shape,
                       [a.conj().transpose(0, 2, 1) for a in self.data])

    def max_abs(self) -> float:
        return max(abs(a).max() for a in self.data)

    def __repr__(self):
        parts = ",".join(f"{b.size}x{b.size}@{b.samples}"
                         for b in self.shape.blocks)
        return f"Element({parts})"


def canonical_unit(shape: AlgebraShape, block: int, row: int, col: int) -> Element:
    """The constant matrix unit e_{row,col} of one block, zero elsewhere."""
    b = shape.blocks[block]
    if not (0 <= row < b.size and 0 <= col < b.size):
        raise ShapeError(f"unit ({row},{col}) outside block of size {b.size}")
    data = [np.zeros((c.samples, c.size, c.size), dtype=np.complex128)
            for c in shape.blocks]
    data[block][:, row, col] = 1.0
    return Element(shape, data)


def hs_inner(a: Element, b: Element) -> complex:
    """Normalized Hilbert-Schmidt inner product, conjugate-linear in ``a``."""
    a._require_same_shape(b)
    total = 0.0 + 0.0j
    for x, y in zip(a.data, b.data):
        total += np.einsum("sij,sij->", x.conj(), y)
    return complex(total) / a.shape.hs_weight


def hs_norm(a: Element) -> float:
    total = sum(float(np.einsum("sij,sij->", x.conj(), x).real)
                for x in a.data)
    return float(np.sqrt(total / a.shape.hs_weight))


def flatten(e: Element) -> np.ndarray:
    """Concatenate all blocks and samples into one vector, fixed order."""
    return np.concatenate([a.reshape(-1) for a in e.data])


def unflatten(shape: AlgebraShape, vec: np.ndarray) -> Element:
    if vec.shape != (shape.flat_dim,):
        raise ShapeError(f"flat vector {vec.shape} vs dim {shape.flat_dim}")
    data = []
    pos = 0
    for b in shape.blocks:
        n = b.samples * b.size * b.size
        data.append(vec[pos:pos + n].reshape(b.samples, b.size, b.size))
        pos += n
    return Element(shape, data)
