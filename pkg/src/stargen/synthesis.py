"""Generator construction: spectral bands, upper-triangular seed matrices,
the corner isomorphism, and the assembly of the single generator.

Spectra of corner elements are always taken inside the corner (on the
range of the corner projection), never in the ambient algebra, so the
kernel outside the corner contributes no spurious zeros. Every corner
construction draws its spectral intervals from a band registry: one
dyadic band [0.55, 0.95] * 2^-L per corner call, distinct L per call.
Bands at distinct levels are disjoint, every band stays below the norm
cap of its owner, and the coefficient ladder of the scaffold lives in
[0.97, 1] * 2^-m, which no band can reach. Disjointness of all the
constructed spectra is therefore structural rather than checked after
the fact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bratteli import StageSelection, first_stage_with_multiplicity, multiplicities
from .elements import Element
from .errors import (AssemblyError, HypothesisError, InsufficientDepth,
                     IntervalSupplyError, MultiplicityError, NotSelfAdjoint,
                     ShapeError, SpectralGapError)
from .linalg import ClosurePolicy, closure_with_targets, operator_norm, spectrum
from .scaffold import LambdaSet, QWUSets, build_lambda
from .system import SystemSnapshot
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "split_interval",
    "IntervalBlock",
    "SpectralIntervalRegistry",
    "corner_spectrum",
    "element_spectrum",
    "disjointify",
    "CornerMatrix",
    "olsen_zame",
    "phi_map",
    "phi_inverse",
    "corner_generator",
    "block_corner_generator",
    "stage_g_family",
    "gi_term_indices",
    "StageCertificate",
    "assemble_Gi",
    "GeneratorBundle",
    "assemble_generator",
]


# ---------------------------------------------------------------------------
# interval supply

def split_interval(lo: float, hi: float, count: int,
                   gap: float = 0.1) -> tuple:
    """Cut [lo, hi] into `count` closed intervals, left to right.

    Each interval keeps the first (1 - gap) share of its equal slot, so
    neighbours are separated by gap * slot and never touch.
    """
    if count < 1:
        raise ShapeError(f"cannot cut an interval into {count} pieces")
    if not 0.0 <= gap < 1.0:
        raise ShapeError(f"gap share {gap} outside [0, 1)")
    if not hi > lo:
        raise ShapeError(f"empty interval [{lo}, {hi}]")
    slot = (hi - lo) / count
    return tuple((lo + t * slot, lo + (t + 1.0 - gap) * slot)
                 for t in range(count))


@dataclass(frozen=True)
class IntervalBlock:
    """One corner call's allotment: disjoint intervals inside one band."""

    owner: tuple
    level: int
    intervals: tuple


class SpectralIntervalRegistry:
    """Allocator of globally disjoint spectral bands.

    Each allocation claims an unused dyadic level L and returns `count`
    disjoint closed intervals inside [0.55, 0.95] * 2^-L. The level never
    sits above floor_exponent + ceil(log2 size), so an upper-triangular
    size x size matrix filled from the band has norm below
    2^-floor_exponent. Allocation order is the call order; run the
    allocating passes in a fixed sequence before any parallel work.
    """

    def __init__(self, max_level: int = 48):
        # beyond 2^-48 the bands drown in the float noise of any later
        # mixed-scale spectral extraction
        self.max_level = max_level
        self._blocks = []
        self._levels = set()

    @property
    def blocks(self) -> tuple:
        return tuple(self._blocks)

    def allocate(self, owner: tuple, size: int, count: int,
                 floor_exponent: int) -> IntervalBlock:
        if size < 1 or count < 1:
            raise ShapeError(f"bad allocation request ({size}, {count})")
        level = floor_exponent + max(0, (size - 1).bit_length())
        while level in self._levels:
            level += 1
        if level > self.max_level:
            raise IntervalSupplyError(
                f"band level {level} for {owner} exceeds the registry "
                f"ceiling {self.max_level}")
        self._levels.add(level)
        scale = 2.0 ** -level
        block = IntervalBlock(
            owner=tuple(owner), level=level,
            intervals=split_interval(0.55 * scale, 0.95 * scale, count))
        self._blocks.append(block)
        return block

    def min_low(self) -> float:
        """Smallest interval endpoint handed out so far."""
        if not self._blocks:
            raise IntervalSupplyError("registry has no allocations yet")
        return min(iv[0] for blk in self._blocks for iv in blk.intervals)


# ---------------------------------------------------------------------------
# spectra of corner elements

def _require_self_adjoint(e: Element, tols: Tolerances, what: str) -> None:
    dev = (e - e.adjoint()).max_abs()
    if dev > tols.self_adjoint * max(1.0, e.max_abs()):
        raise NotSelfAdjoint(f"{what} deviates from self-adjoint by {dev:.3e}")


def _require_projection(p: Element, tols: Tolerances, what: str) -> None:
    dev = max((p * p - p).max_abs(), (p.adjoint() - p).max_abs())
    if dev > tols.idempotent:
        raise ShapeError(f"{what} is not a projection (defect {dev:.3e})")


def _require_corner(e: Element, unit: Element, tols: Tolerances) -> None:
    dev = (unit * e * unit - e).max_abs()
    if dev > tols.idempotent * max(1.0, e.max_abs()):
        raise ShapeError(
            f"element leaks out of its corner by {dev:.3e}")


def _range_basis(p: np.ndarray) -> np.ndarray:
    """Orthonormal columns spanning the range of a projection matrix."""
    d = np.diag(p)
    if np.array_equal(p, np.diag(d)) and np.all((d == 0) | (d == 1)):
        idx = np.where(d.real > 0.5)[0]
        return np.eye(p.shape[0], dtype=np.complex128)[:, idx]
    w, u = np.linalg.eigh(p)
    return u[:, w > 0.5]


def corner_spectrum(e: Element, unit: Element,
                    tols: Tolerances = DEFAULT) -> np.ndarray:
    """Sorted eigenvalues of a self-adjoint corner element, inside the corner.

    The element is compressed onto the range of the corner projection
    sample by sample, so positions the corner annihilates cannot inject
    zeros into the result.
    """
    _require_projection(unit, tols, "corner unit")
    _require_self_adjoint(e, tols, "corner element")
    _require_corner(e, unit, tols)
    vals = []
    for pa, ea in zip(unit.data, e.data):
        if pa.size == 0:
            continue
        constant = bool(np.all(pa == pa[0]))
        cols = _range_basis(pa[0]) if constant else None
        for s in range(pa.shape[0]):
            c = cols if constant else _range_basis(pa[s])
            if c.shape[1] == 0:
                continue
            vals.append(np.linalg.eigvalsh(c.conj().T @ ea[s] @ c))
    if not vals:
        raise ShapeError("corner unit has zero rank")
    return np.sort(np.concatenate(vals))


def element_spectrum(e: Element, tols: Tolerances = DEFAULT) -> np.ndarray:
    """Sorted eigenvalues of a self-adjoint element over all blocks and
    samples."""
    _require_self_adjoint(e, tols, "element")
    vals = [np.linalg.eigvalsh(a) for a in e.data if a.size]
    return np.sort(np.concatenate([v.ravel() for v in vals]))


def _offdiag_mass(e: Element) -> float:
    worst = 0.0
    for a in e.data:
        if a.size == 0:
            continue
        off = a.copy()
        idx = np.arange(a.shape[1])
        off[:, idx, idx] = 0.0
        worst = max(worst, float(np.abs(off).max(initial=0.0)))
    return worst


def _dedup_nonzero(elements, tol: float) -> list:
    """Distinct members with norm above tol, first occurrences kept.

    Equality is exact data equality first, then norm distance at most tol.
    """
    out = []
    for e in elements:
        if operator_norm(e) <= tol:
            continue
        if any(e == f for f in out):
            continue
        if any(operator_norm(e - f) <= tol for f in out):
            continue
        out.append(e)
    return out


# ---------------------------------------------------------------------------
# spectral disjointification

def _check_intervals(intervals, need: int) -> list:
    ivs = [(float(lo), float(hi)) for lo, hi in intervals]
    for lo, hi in ivs:
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
            raise ShapeError(f"bad interval [{lo}, {hi}]")
        if lo <= 0.0 <= hi:
            raise ShapeError(f"interval [{lo}, {hi}] contains zero")
    by_lo = sorted(ivs)
    for (a, b), (c, d) in zip(by_lo, by_lo[1:]):
        if c <= b:
            raise ShapeError(f"intervals [{a}, {b}] and [{c}, {d}] overlap")
    if len(ivs) < need:
        raise IntervalSupplyError(
            f"need {need} disjoint intervals, only {len(ivs)} supplied")
    return ivs


def disjointify(elements, unit: Element, count_target: int, intervals,
                tols: Tolerances = DEFAULT) -> list:
    """Reposition corner elements into disjoint spectral intervals.

    Each element is moved by a positive affine map a -> alpha*a + beta*u
    (functional calculus in the corner of u), which fits its corner
    spectrum exactly onto its own interval; a spectrum of zero width goes
    to the interval midpoint. The list is then padded to count_target
    with scalar multiples of the corner unit placed at the midpoints of
    the unused intervals, so the padding scalars are distinct and the
    generated algebra is unchanged. Everything returned is invertible in
    the corner because no interval meets zero.
    """
    if count_target < len(elements):
        raise IntervalSupplyError(
            f"{len(elements)} elements exceed the target count {count_target}")
    ivs = _check_intervals(intervals, count_target)
    _require_projection(unit, tols, "corner unit")
    out = []
    for e, (lo_t, hi_t) in zip(elements, ivs):
        eigs = corner_spectrum(e, unit, tols)
        lo, hi = float(eigs[0]), float(eigs[-1])
        width = hi - lo
        if width <= 1e-14 * max(1.0, abs(lo), abs(hi)):
            # flat spectrum: centre it, never divide by the width
            alpha = 1.0 if width == 0.0 else min(
                1.0, 0.5 * (hi_t - lo_t) / width)
            beta = 0.5 * (lo_t + hi_t) - alpha * 0.5 * (lo + hi)
        else:
            if hi_t == lo_t:
                raise ShapeError(
                    f"interval [{lo_t}, {hi_t}] cannot receive a spectrum "
                    f"of width {width:.3e}")
            alpha = (hi_t - lo_t) / width
            beta = lo_t - alpha * lo
        out.append(alpha * e + beta * unit)
    for lo_t, hi_t in ivs[len(elements):count_target]:
        out.append(0.5 * (lo_t + hi_t) * unit)
    return out


# ---------------------------------------------------------------------------
# matrices over a corner

@dataclass(frozen=True)
class CornerMatrix:
    """Square matrix whose entries are elements of one corner.

    The working form of M_k over the corner algebra; nothing here is
    flattened into a bigger ambient shape.
    """

    entries: tuple

    def __post_init__(self):
        k = len(self.entries)
        if k == 0:
            raise ShapeError("empty matrix")
        shape = None
        rows = []
        for row in self.entries:
            row = tuple(row)
            if len(row) != k:
                raise ShapeError(
                    f"row of length {len(row)} in a {k} x {k} matrix")
            for e in row:
                if shape is None:
                    shape = e.shape
                elif e.shape != shape:
                    raise ShapeError("entries live over different shapes")
            rows.append(row)
        object.__setattr__(self, "entries", tuple(rows))

    @property
    def size(self) -> int:
        return len(self.entries)

    def __getitem__(self, rc) -> Element:
        return self.entries[rc[0]][rc[1]]

    def __matmul__(self, other: "CornerMatrix") -> "CornerMatrix":
        if not isinstance(other, CornerMatrix) or other.size != self.size:
            raise ShapeError("matrix size mismatch")
        k = self.size
        rows = []
        for i in range(k):
            row = []
            for j in range(k):
                acc = self.entries[i][0] * other.entries[0][j]
                for l in range(1, k):
                    acc = acc + self.entries[i][l] * other.entries[l][j]
                row.append(acc)
            rows.append(tuple(row))
        return CornerMatrix(tuple(rows))

    def adjoint(self) -> "CornerMatrix":
        k = self.size
        return CornerMatrix(tuple(
            tuple(self.entries[j][i].adjoint() for j in range(k))
            for i in range(k)))


def olsen_zame(elements, unit: Element = None,
               tols: Tolerances = DEFAULT) -> CornerMatrix:
    """Upper-triangular matrix over k(k+1)/2 spectrally disjoint entries.

    Row-major fill: the first k entries run along row one, the next k-1
    fill row two from the diagonal, and so on. Entries must be
    self-adjoint and invertible with pairwise disjoint spectra (taken in
    the corner when a unit is supplied); the result is invertible because
    its diagonal is. The matrix generates M_k over the algebra the
    entries generate.
    """
    count = len(elements)
    k = (math.isqrt(8 * count + 1) - 1) // 2
    if count == 0 or k * (k + 1) // 2 != count:
        raise ShapeError(f"{count} entries do not fill an upper triangle")
    if unit is not None:
        specs = [corner_spectrum(e, unit, tols) for e in elements]
    else:
        specs = [element_spectrum(e, tols) for e in elements]
    for t, s in enumerate(specs):
        closest = float(np.abs(s).min())
        if closest < tols.spectral_gap:
            raise SpectralGapError(
                f"entry {t} is not safely invertible "
                f"(eigenvalue at {closest:.3e})")
    for a in range(count):
        for b in range(a + 1, count):
            gap = float(np.abs(specs[a][:, None] - specs[b][None, :]).min())
            if gap < tols.spectral_gap:
                raise SpectralGapError(
                    f"entries {a} and {b} have overlapping spectra "
                    f"(gap {gap:.3e})")
    zero = Element.zero(elements[0].shape)
    rows, it = [], iter(elements)
    for r in range(k):
        rows.append(tuple([zero] * r + [next(it) for _ in range(k - r)]))
    return CornerMatrix(tuple(rows))


# ---------------------------------------------------------------------------
# the corner isomorphism

def phi_map(unit: Element, isometries, matrix: CornerMatrix,
            d_samples=None, ambient_unit: Element = None,
            tols: Tolerances = DEFAULT) -> Element:
    """Sum v_i* b_{ij} v_j over a matrix of corner elements.

    The family must satisfy, within the matrix-unit tolerance:
    (a) every member has range projection equal to the corner unit,
    (b) the source projections are orthogonal and sum to the ambient
        unit (the global identity unless a local one is supplied),
    and, when sample elements of the diagonal algebra are given,
    (c) every source projection commutes with every sample,
    (d) conjugation v d v* keeps every sample diagonal.
    A violated hypothesis raises HypothesisError naming its letter. Under
    them the map is a *-isomorphism onto its image, so it is isometric
    and multiplicative; those properties are consequences, not inputs.
    """
    n = len(isometries)
    if n == 0:
        raise ShapeError("need at least one partial isometry")
    if not isinstance(matrix, CornerMatrix) or matrix.size != n:
        raise ShapeError(f"matrix size must match the {n} isometries")
    tol = tols.matrix_units

    dev = max((unit * unit - unit).max_abs(),
              (unit.adjoint() - unit).max_abs())
    for v in isometries:
        dev = max(dev, (v * v.adjoint() - unit).max_abs())
    if dev > tol:
        raise HypothesisError(
            f"(a) range projections do not all equal the corner unit "
            f"(defect {dev:.3e})")

    sources = [v.adjoint() * v for v in isometries]
    dev = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            dev = max(dev, (sources[a] * sources[b]).max_abs())
    total = sources[0]
    for s in sources[1:]:
        total = total + s
    target = ambient_unit if ambient_unit is not None \
        else Element.unit(unit.shape)
    dev = max(dev, (total - target).max_abs())
    if dev > tol:
        raise HypothesisError(
            f"(b) source projections do not partition the unit "
            f"(defect {dev:.3e})")

    for d in d_samples or ():
        if _offdiag_mass(d) > tol:
            raise ShapeError("a supplied diagonal sample is not diagonal")
        for s in sources:
            c = (s * d - d * s).max_abs()
            if c > tol:
                raise HypothesisError(
                    f"(c) a source projection fails to commute with the "
                    f"diagonal data (defect {c:.3e})")
        for v in isometries:
            off = _offdiag_mass(v * d * v.adjoint())
            if off > tol:
                raise HypothesisError(
                    f"(d) conjugation carries diagonal data off the "
                    f"diagonal (defect {off:.3e})")

    out = Element.zero(unit.shape)
    for i in range(n):
        vi = isometries[i].adjoint()
        for j in range(n):
            out = out + vi * matrix[i, j] * isometries[j]
    return out


def phi_inverse(element: Element, isometries,
                tols: Tolerances = DEFAULT) -> CornerMatrix:
    """Matrix of corner compressions v_k b v_l*, the inverse of phi_map."""
    n = len(isometries)
    if n == 0:
        raise ShapeError("need at least one partial isometry")
    return CornerMatrix(tuple(
        tuple(isometries[k] * element * isometries[l].adjoint()
              for l in range(n))
        for k in range(n)))


# ---------------------------------------------------------------------------
# corner generators

def corner_generator(targets, isometries, intervals=None, d_samples=None,
                     ambient_unit: Element = None,
                     tols: Tolerances = DEFAULT) -> Element:
    """Invertible element whose closure contains the given corner targets.

    Needs strictly more isometries than 2m - 1 for m targets. Each target
    splits along the isometries into range-corner pieces; the distinct
    nonzero pieces plus the corner unit are disjointified into the
    supplied intervals (a default band when none are given), filled into
    an upper-triangular matrix, and pushed back through the corner
    isomorphism. With no targets at all the matrix is made of padding
    scalars alone and the output is still invertible.
    """
    m, n = len(targets), len(isometries)
    if n <= 2 * m - 1:
        raise MultiplicityError(
            f"{m} targets need more than {2 * m - 1} isometries, have {n}")
    unit = isometries[0] * isometries[0].adjoint()
    pieces = []
    for d in targets:
        _require_self_adjoint(d, tols, "target")
        for v in isometries:
            pieces.append(unit * (v * d * v.adjoint()) * unit)
    pieces.append(unit)
    distinct = _dedup_nonzero(pieces, tols.exact)
    count = n * (n + 1) // 2
    if len(distinct) > count:
        raise IntervalSupplyError(
            f"{len(distinct)} distinct pieces exceed the triangle "
            f"capacity {count}")
    if intervals is None:
        intervals = split_interval(0.55, 0.95, count)
    entries = disjointify(distinct, unit, count, intervals, tols)
    matrix = olsen_zame(entries, unit=unit, tols=tols)
    samples = d_samples if d_samples is not None else targets
    return phi_map(unit, isometries, matrix, d_samples=samples,
                   ambient_unit=ambient_unit, tols=tols)


def _locate_diagonal_unit(p: Element, snapshot: SystemSnapshot,
                          tols: Tolerances) -> tuple:
    for stage in range(1, snapshot.depth + 1):
        shape = snapshot.shape(stage)
        for block in range(len(shape.blocks)):
            for row in range(shape.blocks[block].size):
                cand = snapshot.pushed_skeleton_unit(stage, block, row, row)
                if (cand - p).max_abs() <= tols.exact:
                    return stage, block, row
    raise ShapeError("p is not the image of a diagonal skeleton unit")


def block_corner_generator(p: Element, targets, snapshot: SystemSnapshot,
                           selection: StageSelection, location: tuple = None,
                           registry: SpectralIntervalRegistry = None,
                           floor_exponent: int = 2, owner: tuple = None,
                           tols: Tolerances = DEFAULT) -> Element:
    """Invertible element of the corner of p absorbing the given targets.

    Descends to the first skeleton stage at which every multiplicity
    beats 2m - 1 (m counts the distinct nonzero targets), splits the
    corner of p into its per-block images there, and runs one corner
    construction per block. The per-call bands come from the registry (a
    private one when none is shared), so the block spectra are disjoint
    and each block projection is recoverable from the sum by spectral
    separation. Raises InsufficientDepth when the truncation has no deep
    enough stage.
    """
    loc = location if location is not None \
        else _locate_diagonal_unit(p, snapshot, tols)
    t0, j0, row = loc
    ref = snapshot.pushed_skeleton_unit(t0, j0, row, row)
    if (ref - p).max_abs() > tols.exact:
        raise ShapeError(f"p does not match the diagonal unit at {loc}")
    for d in targets:
        _require_self_adjoint(d, tols, "target")
        _require_corner(d, p, tols)
    work = _dedup_nonzero(targets, tols.exact)
    m = len(work)

    data = snapshot.af_skeleton
    t1 = first_stage_with_multiplicity(data, t0, 2 * m - 1)
    mult = multiplicities(data, t0, t1)
    if registry is None:
        registry = SpectralIntervalRegistry()
    tag = tuple(owner) if owner is not None else ("block", t0, j0, row)

    out = None
    cover = None
    for b in range(data.blocks(t1)):
        copies = int(mult[j0, b])
        if copies == 0:
            continue
        offs = snapshot.copy_offsets(t0, j0, t1, b)
        if len(offs) != copies:
            raise ShapeError(
                "embedding layout disagrees with the incidence data")
        pos = [off + row for off in offs]
        vs = [snapshot.pushed_skeleton_unit(t1, b, pos[0], c) for c in pos]
        p_b = snapshot.pushed_skeleton_unit(t1, b, pos[0], pos[0])
        for c in pos[1:]:
            p_b = p_b + snapshot.pushed_skeleton_unit(t1, b, c, c)
        cs = _dedup_nonzero([p_b * d * p_b for d in work], tols.exact)
        band = registry.allocate(tag + (b,), size=copies,
                                 count=copies * (copies + 1) // 2,
                                 floor_exponent=floor_exponent)
        g_b = corner_generator(cs, vs, intervals=band.intervals,
                               ambient_unit=p_b, tols=tols)
        out = g_b if out is None else out + g_b
        cover = p_b if cover is None else cover + p_b
    if out is None:
        raise ShapeError("p has no copies at the deeper stage")
    if (cover - p).max_abs() > tols.exact:
        raise ShapeError("the deeper-stage corners do not fill p")
    return out


# ---------------------------------------------------------------------------
# stage families and assembly

def stage_g_family(d: Element, qwu: QWUSets, stage: int,
                   registry: SpectralIntervalRegistry = None,
                   verify: bool = False,
                   tols: Tolerances = DEFAULT) -> tuple:
    """One invertible corner element per block for a diagonal generator.

    Splits d along the source projections of the stage's U columns,
    compresses into the range corner of each block, and builds a block
    corner generator inside the range projection of each block. The
    shared registry pins each spectrum inside a band below 2^{-i-j-2},
    so the norm cap,
    invertibility, and disjointness across stages hold by construction;
    the norm cap is still measured and enforced here. With verify=True
    the membership of d in the word closure of the U sets and the family
    is checked directly.
    """
    sel = qwu.selection
    if not 1 <= stage <= qwu.depth:
        raise ShapeError(f"stage {stage} outside the scaffold depth")
    _require_self_adjoint(d, tols, "diagonal generator")
    if registry is None:
        registry = SpectralIntervalRegistry()
    snapshot = qwu.snapshot
    family = []
    for j in range(sel.K(stage)):
        n_j = sel.N(stage, j)
        us = [qwu.u_element(stage, j, k) for k in range(1, n_j + 1)]
        p_j = us[0]
        compressions = [u * d * u.adjoint() for u in us]
        g_j = block_corner_generator(
            p_j, compressions, snapshot, sel,
            location=(sel.stage(stage), j, qwu.range_rows[stage - 1][j]),
            registry=registry, floor_exponent=stage + (j + 1) + 2,
            owner=("g", stage, j + 1), tols=tols)
        cap = 2.0 ** (-stage - (j + 1) - 2)
        norm = operator_norm(g_j)
        if norm > cap + tols.exact:
            raise AssemblyError(
                f"stage {stage} block {j + 1} norm {norm:.6e} exceeds "
                f"its cap {cap:.6e}")
        if (p_j * g_j * p_j - g_j).max_abs() > tols.exact:
            raise AssemblyError(
                f"stage {stage} block {j + 1} element leaks out of its "
                f"corner")
        family.append(g_j)
    if verify:
        gens = []
        for j in range(sel.K(stage)):
            gens.extend(qwu.u_element(stage, j, k)
                        for k in range(1, sel.N(stage, j) + 1))
        gens.extend(family)
        policy = ClosurePolicy(word_length=10, rank_tol=tols.span_rank,
                               target_tol=tols.membership)
        _, dists, _ = closure_with_targets(gens, {"d": d}, policy)
        if dists["d"] > tols.membership:
            raise AssemblyError(
                f"generator family misses its target by {dists['d']:.3e}")
    return tuple(family)


def gi_term_indices(stage: int, k_prev: int, k_i: int, m_of) -> list:
    """Index list (kind, j', j, k) of the coefficient terms of one stage.

    Groups j' and blocks j are zero-based, k is one-based; m_of(j', j)
    supplies the ladder length. With a single previous group the top
    projection of each ladder and the final one are both omitted; with
    several groups the first group omits its top projection, the last
    group omits its final one, and the middle groups keep everything.
    The isometry terms always run the full ladder except the first
    group's top, which is the corner the block generator occupies.
    """
    terms = []
    for j in range(k_i):
        if k_prev == 1:
            m = m_of(0, j)
            terms.extend(("q", 0, j, k) for k in range(2, m))
            terms.extend(("w", 0, j, k) for k in range(2, m + 1))
        else:
            m = m_of(0, j)
            terms.extend(("q", 0, j, k) for k in range(2, m + 1))
            terms.extend(("w", 0, j, k) for k in range(2, m + 1))
            for jp in range(1, k_prev - 1):
                m = m_of(jp, j)
                terms.extend(("q", jp, j, k) for k in range(1, m + 1))
                terms.extend(("w", jp, j, k) for k in range(1, m + 1))
            m = m_of(k_prev - 1, j)
            terms.extend(("q", k_prev - 1, j, k) for k in range(1, m))
            terms.extend(("w", k_prev - 1, j, k) for k in range(1, m + 1))
    return terms


@dataclass(frozen=True)
class StageCertificate:
    """Measured norm of one stage term against its analytic budget."""

    stage: int
    norm: float
    lambda_sum: float
    partial_bound: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.norm < min(self.partial_bound, self.bound)


def assemble_Gi(qwu: QWUSets, family, lambdas: LambdaSet, stage: int,
                tols: Tolerances = DEFAULT):
    """Stage term: the block generators plus the coefficient ladder.

    Returns the assembled element together with its norm certificate;
    a missing ingredient or a busted budget raises AssemblyError.
    """
    sel = qwu.selection
    if not 1 <= stage <= qwu.depth:
        raise AssemblyError(f"stage {stage} outside the scaffold depth")
    k_i, k_prev = sel.K(stage), sel.K(stage - 1)
    if len(family) != k_i:
        raise AssemblyError(
            f"stage {stage} family has {len(family)} members for "
            f"{k_i} blocks")
    out = family[0]
    for g in family[1:]:
        out = out + g
    for kind, jp, j, k in gi_term_indices(stage, k_prev, k_i,
                                          lambda a, b: qwu.M(stage, a, b)):
        try:
            lam = lambdas.lam(stage, jp, j, k)
        except KeyError:
            raise AssemblyError(
                f"no coefficient for stage {stage} index "
                f"({jp + 1},{j + 1},{k})") from None
        part = qwu.q_element(stage, jp, j, k) if kind == "q" \
            else qwu.w_element(stage, jp, j, k)
        out = out + lam * part
    lam_sum = lambdas.stage_sum(stage)
    if lam_sum > 2.0 ** (-stage - 5) + tols.exact:
        raise AssemblyError(
            f"stage {stage} coefficient budget {lam_sum:.6e} exceeds "
            f"2^-{stage + 5}")
    norm = operator_norm(out)
    cert = StageCertificate(
        stage=stage, norm=norm, lambda_sum=lam_sum,
        partial_bound=2.0 ** (-stage - 2) + 8.0 * lam_sum,
        bound=2.0 ** (-stage - 1))
    if not cert.passed:
        raise AssemblyError(
            f"stage {stage} norm {norm:.6e} misses its certificate "
            f"{min(cert.partial_bound, cert.bound):.6e}")
    return out, cert


@dataclass(frozen=True)
class GeneratorBundle:
    """The assembled generator with everything needed to audit it.

    stage_terms[i-1] is the stage-i term and generator is their sum;
    families[i-1][j] is the block generator of stage i, block j. The
    omitted stages past the truncation depth have total norm below
    tail_bound, a geometric bound that needs no computation.
    """

    stage_terms: tuple
    generator: Element
    certificates: tuple
    families: tuple
    lambdas: LambdaSet
    registry: SpectralIntervalRegistry
    depth: int
    tail_bound: float


def assemble_generator(qwu: QWUSets,
                       registry: SpectralIntervalRegistry = None,
                       verify_membership: bool = False,
                       tols: Tolerances = DEFAULT) -> GeneratorBundle:
    """Build every stage family and sum the stage terms.

    The families are built first, in stage order, against one shared
    registry; the coefficient ladder is then laid down avoiding every
    computed spectral point, and the stage terms are assembled and
    certified. The truncated sum is the object itself, not an
    approximation of something else: every claim downstream is about
    this finite element, with the dropped tail bounded analytically.
    """
    depth = qwu.depth
    gens = qwu.snapshot.D_generators
    if len(gens) < depth:
        raise AssemblyError(
            f"need {depth} diagonal generators, snapshot carries "
            f"{len(gens)}")
    if registry is None:
        registry = SpectralIntervalRegistry()
    families = []
    for i in range(1, depth + 1):
        families.append(stage_g_family(
            gens[i - 1].element, qwu, i, registry=registry,
            verify=verify_membership, tols=tols))

    floor = registry.min_low()
    points = []
    for fam in families:
        for g in fam:
            for b in range(len(g.data)):
                for s in range(g.data[b].shape[0]):
                    eig = spectrum(g, b, s)
                    keep = np.abs(eig) > 0.5 * floor
                    points.append(eig[keep].real)
    lambdas = build_lambda(qwu, points)

    terms, certs = [], []
    for i in range(1, depth + 1):
        term, cert = assemble_Gi(qwu, families[i - 1], lambdas, i, tols)
        terms.append(term)
        certs.append(cert)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    norm = operator_norm(total)
    if norm >= 0.5:
        raise AssemblyError(f"assembled norm {norm:.6e} is not below 1/2")
    return GeneratorBundle(
        stage_terms=tuple(terms), generator=total, certificates=tuple(certs),
        families=tuple(tuple(f) for f in families), lambdas=lambdas,
        registry=registry, depth=depth, tail_bound=2.0 ** (-depth - 1))
