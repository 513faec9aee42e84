"""Numerical *-algebra kernel.

Norms, spectra, functional calculus, Riesz projections, and generated
subalgebra (word closure) estimation for block-matrix elements.

Spectra of non-normal matrices go through the complex Schur form rather than
raw eigenvector solves: the assembled generators are upper triangular in a
hidden basis and can be badly conditioned for diagonalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg

from .elements import AlgebraShape, Element, flatten, unflatten
from .errors import ShapeError, NotSelfAdjoint, SpectralGapError
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "operator_norm",
    "spectrum",
    "functional_calculus",
    "riesz_projection",
    "SpanBasis",
    "span_of",
    "ClosurePolicy",
    "word_closure",
    "closure_with_targets",
    "distance_to_span",
    "MatrixUnitReport",
    "check_matrix_unit_axioms",
]


def operator_norm(e: Element) -> float:
    """Largest singular value over all blocks and samples.

    This is the C*-norm of the element: sup norm over the sample grid of the
    per-point matrix norm.
    """
    best = 0.0
    for a in e.data:
        if a.size == 0:
            continue
        s = np.linalg.svd(a, compute_uv=False)
        best = max(best, float(s.max()))
    return best


def spectrum(e: Element, block: int, sample: int) -> np.ndarray:
    """Eigenvalue multiset of one matrix, via the complex Schur form."""
    a = e.data[block][sample]
    if a.shape[0] == 1:
        return a[0, 0:1].copy()
    t, _ = scipy.linalg.schur(a, output="complex")
    return np.diag(t).copy()


def functional_calculus(e: Element, f: Callable[[float], float],
                        tols: Tolerances = DEFAULT) -> Element:
    """Apply a real function to a self-adjoint element, per block and sample."""
    defect = operator_norm(e - e.adjoint())
    scale = max(1.0, operator_norm(e))
    if defect > tols.self_adjoint * scale:
        raise NotSelfAdjoint(
            f"|e - e*| = {defect:.3e} exceeds {tols.self_adjoint:.1e} * {scale:.3e}")
    out = []
    for a in e.data:
        w, u = np.linalg.eigh(a)  # batched over samples
        fw = np.empty_like(w)
        for s in range(w.shape[0]):
            fw[s] = [f(float(x)) for x in w[s]]
        out.append(np.einsum("sij,sj,skj->sik", u, fw.astype(np.complex128),
                             u.conj()))
    return Element(e.shape, out)


def riesz_projection(m: np.ndarray, cluster: Iterable[complex],
                     delta: float) -> np.ndarray:
    """Idempotent onto the invariant subspace of a spectral cluster.

    Sorted complex Schur form puts the cluster block first; the coupling
    block of the projector solves a Sylvester equation. The result P is
    generally non-orthogonal but satisfies P^2 = P and mP = Pm.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"need a square matrix, got {m.shape}")
    pts = np.asarray(list(cluster), dtype=np.complex128)
    if pts.size == 0:
        return np.zeros_like(m)
    if delta <= 0:
        raise SpectralGapError("cluster gap delta must be positive")

    def selects(z):
        return bool(np.abs(z - pts).min() <= delta / 2)

    # separation precheck on the unsorted spectrum
    eigs = np.diag(scipy.linalg.schur(m, output="complex")[0])
    dist = np.abs(eigs[:, None] - pts[None, :]).min(axis=1)
    chosen = dist <= delta / 2
    bad = (~chosen) & (dist < delta)
    if bad.any():
        raise SpectralGapError(
            f"eigenvalue {eigs[bad][0]} is within {delta} of the cluster "
            "but not inside it")
    k = int(chosen.sum())
    n = m.shape[0]
    if k == 0:
        return np.zeros_like(m)
    if k == n:
        return np.eye(n, dtype=np.complex128)

    t, z, sdim = scipy.linalg.schur(m, output="complex", sort=selects)
    k = int(sdim)
    t11, t12, t22 = t[:k, :k], t[:k, k:], t[k:, k:]
    # coupling X solves T11 X - X T22 = T12
    x = scipy.linalg.solve_sylvester(t11, -t22, t12)
    top = np.hstack([np.eye(k, dtype=np.complex128), x])
    return z[:, :k] @ top @ z.conj().T


# ---------------------------------------------------------------------------
# spans and word closures

def _vec(e: Element) -> np.ndarray:
    # normalized so the standard dot equals the normalized HS inner product
    return flatten(e) / np.sqrt(e.shape.hs_weight)


def _unvec(shape: AlgebraShape, row: np.ndarray) -> Element:
    return unflatten(shape, row * np.sqrt(shape.hs_weight))


class SpanBasis:
    """Orthonormal basis of a linear span, under the normalized HS form.

    Rows of ``matrix`` are coordinate vectors of the basis elements; the
    Gram matrix is the identity to within the span rank tolerance.
    """

    def __init__(self, ambient: AlgebraShape, matrix: np.ndarray):
        self.ambient = ambient
        if matrix.ndim != 2 or matrix.shape[1] != ambient.flat_dim:
            raise ShapeError(
                f"basis matrix {matrix.shape} vs flat dim {ambient.flat_dim}")
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def vectors(self) -> list[Element]:
        return [_unvec(self.ambient, row) for row in self.matrix]

    def coefficients(self, e: Element) -> np.ndarray:
        if e.shape != self.ambient:
            raise ShapeError("element does not live in the basis ambient")
        return self.matrix.conj() @ _vec(e)

    def project(self, e: Element) -> Element:
        return _unvec(self.ambient, self.coefficients(e) @ self.matrix)

    def residual_norms(self, rows: np.ndarray) -> np.ndarray:
        """Normalized-HS distances of prenormalized coordinate rows."""
        res = rows - (rows @ self.matrix.conj().T) @ self.matrix
        return np.linalg.norm(res, axis=1)


def distance_to_span(e: Element, basis: SpanBasis) -> float:
    """Residual normalized-HS norm of ``e`` after projection onto the span."""
    if e.shape != basis.ambient:
        raise ShapeError("element does not live in the basis ambient")
    row = _vec(e)
    res = row - (basis.matrix.conj() @ row) @ basis.matrix
    return float(np.linalg.norm(res))


def _orthonormal_rows(rows: np.ndarray, against: Optional[np.ndarray],
                      rank_tol: float, abs_floor: float = 0.0) -> np.ndarray:
    """New orthonormal directions of ``rows`` modulo the row space ``against``.

    Rows are normalized first so the rank cutoff acts scale-invariantly.
    ``abs_floor`` must carry the caller's noise scale whenever a batch
    can consist entirely of structural zeros: with only the relative
    guard, a batch of 1e-16 noise rows normalizes into random unit
    vectors and poisons the rank. Projection runs once for the bulk;
    only rows that lost most of their mass get the classic second
    reorthogonalization pass, since a single pass leaves absolute
    contamination around machine epsilon, well under the rank floors,
    unless cancellation was severe.
    """
    empty = np.zeros((0, rows.shape[1]), dtype=rows.dtype)
    norms = np.linalg.norm(rows, axis=1)
    top = float(norms.max(initial=0.0))
    if top <= 0.0:
        return empty
    keep = norms > max(top * 1e-15, abs_floor)
    if not keep.any():
        return empty
    rows = rows[keep] / norms[keep, None]
    rel = norms[keep] / top
    if against is not None and against.shape[0]:
        rows = rows - (rows @ against.conj().T) @ against
        res = np.linalg.norm(rows, axis=1)
        redo = res < 1e-3
        if redo.any():
            rows[redo] = rows[redo] - \
                (rows[redo] @ against.conj().T) @ against
            res[redo] = np.linalg.norm(rows[redo], axis=1)
        # Two noise floors. Absolute: m rows each below rank_tol/sqrt(m)
        # keep every singular value below rank_tol. Per row: a row whose
        # pre-normalization norm was a fraction ``rel`` of the dominant
        # scale carries float noise of about 1e-15/rel after normalizing,
        # so residuals under 100x that are cancellation artifacts, not
        # directions (the classic normalize-then-rank trap).
        floor = np.maximum(rank_tol / np.sqrt(len(res)), 1e-13 / rel)
        keep = res > floor
        if not keep.any():
            return empty
        # renormalize so the SVD sees unit rows; residual norms span many
        # orders of magnitude and that dynamic range stalls gesdd.
        rows = rows[keep] / res[keep, None]
    _, s, wh = np.linalg.svd(rows, full_matrices=False)
    new = wh[s > rank_tol]
    if against is not None and against.shape[0] and new.shape[0]:
        # final polish: the SVD can reintroduce a sliver of the old span.
        # The per-row subtractions below break mutual orthogonality of
        # near-duplicate directions, and renormalizing row by row lets
        # that defect compound across batches, so the accepted set is
        # reorthonormalized as a whole and collapsed rows are dropped.
        new = new - (new @ against.conj().T) @ against
        _, s, wh = np.linalg.svd(new, full_matrices=False)
        new = wh[s > 0.5]
    return new


def span_of(elements: Sequence[Element], rank_tol: float = None) -> SpanBasis:
    """Orthonormal basis of the linear span of the given elements."""
    if not elements:
        raise ShapeError("span of an empty family")
    shape = elements[0].shape
    rows = np.stack([_vec(e) for e in elements])
    tol = DEFAULT.span_rank if rank_tol is None else rank_tol
    return SpanBasis(shape, _orthonormal_rows(rows, None, tol))


# ---------------------------------------------------------------------------
# hermitian coordinates
#
# Word sets are closed under adjoints, so the span of words is closed
# under the hermitian/antihermitian split and is determined by its
# hermitian part, a real subspace of the same dimension. Running the
# rank search in the real coordinates of that part costs a quarter of
# the complex arithmetic and reproduces ranks and distances exactly.

def _herm_layout(shape: AlgebraShape) -> tuple:
    return tuple(np.triu_indices(b.size, 1) for b in shape.blocks)


def _herm_split_stacks(shape: AlgebraShape, stacks, scale: float) -> np.ndarray:
    """Per-block product stacks (c, samples, n, n) to 2c real rows.

    Row k is the hermitian part of element k, row c + k the hermitian
    form of its antihermitian part; coordinates are diagonal entries
    then sqrt(2)-weighted upper off-diagonal real and imaginary parts,
    an isometry for the Frobenius norm.
    """
    count = stacks[0].shape[0]
    root2 = np.sqrt(2.0)
    h_cols, a_cols = [], []
    for (iu0, iu1), st in zip(_herm_layout(shape), stacks):
        stt = st.conj().transpose(0, 1, 3, 2)
        n = st.shape[-1]
        idx = np.arange(n)
        for mat, out in ((0.5 * (st + stt), h_cols),
                         (-0.5j * (st - stt), a_cols)):
            diag = mat[..., idx, idx].real.reshape(count, -1)
            off = mat[..., iu0, iu1].reshape(count, -1)
            out.append(np.concatenate(
                [diag, root2 * off.real, root2 * off.imag], axis=1))
    return np.concatenate([np.concatenate(h_cols, axis=1),
                           np.concatenate(a_cols, axis=1)], axis=0) / scale


def _herm_rows(e: Element) -> np.ndarray:
    """The (hermitian, antihermitian) coordinate row pair of one element."""
    return _herm_split_stacks(e.shape, [d[None, ...] for d in e.data],
                              np.sqrt(e.shape.hs_weight))


def _herm_rows_to_stacks(shape: AlgebraShape, rows: np.ndarray) -> list:
    """Real coordinate rows back to per-block complex stacks (c, s, n, n)."""
    count = rows.shape[0]
    root2 = np.sqrt(2.0)
    stacks, at = [], 0
    for b, (iu0, iu1) in zip(shape.blocks, _herm_layout(shape)):
        n, s, m = b.size, b.samples, len(iu0)
        diag = rows[:, at:at + s * n].reshape(count, s, n)
        at += s * n
        re = rows[:, at:at + s * m].reshape(count, s, m)
        at += s * m
        im = rows[:, at:at + s * m].reshape(count, s, m)
        at += s * m
        mat = np.zeros((count, s, n, n), dtype=np.complex128)
        mat[..., iu0, iu1] = (re + 1j * im) / root2
        mat = mat + mat.conj().transpose(0, 1, 3, 2)
        idx = np.arange(n)
        mat[..., idx, idx] = diag
        stacks.append(mat)
    return stacks


def _herm_rows_to_flat(shape: AlgebraShape, rows: np.ndarray) -> np.ndarray:
    """Materialize real basis rows as complex coordinate rows of _vec."""
    out = np.empty((rows.shape[0], shape.flat_dim), dtype=np.complex128)
    for start in range(0, rows.shape[0], _CLOSURE_CHUNK):
        stop = min(start + _CLOSURE_CHUNK, rows.shape[0])
        stacks = _herm_rows_to_stacks(shape, rows[start:stop])
        out[start:stop] = np.concatenate(
            [st.reshape(stop - start, -1) for st in stacks], axis=1)
    return out


# rows per candidate batch inside a closure round; keeps the peak
# workspace proportional to chunk x flat_dim instead of round x flat_dim
_CLOSURE_CHUNK = 256


@dataclass(frozen=True)
class ClosurePolicy:
    """Word-length and growth policy for closure estimation.

    The closure of a finite word length is only a proxy for the generated
    algebra; reports should always echo the policy used.
    """
    word_length: int = 14
    rank_tol: float = DEFAULT.span_rank
    max_dim: Optional[int] = None
    target_tol: Optional[float] = None


@dataclass
class ClosureInfo:
    rounds: int = 0
    reached_length: int = 1
    stabilized: bool = False
    capped: bool = False
    saturated: bool = False
    target_history: list = field(default_factory=list)


def _closure_run(generators: Sequence[Element], policy: ClosurePolicy,
                 targets: Optional[Sequence[Element]] = None):
    if not generators:
        raise ShapeError("word closure needs at least one generator")
    shape = generators[0].shape
    for g in generators:
        if g.shape != shape:
            raise ShapeError("closure generators live in different algebras")

    symbols = []
    for g in generators:
        symbols.append(g)
        symbols.append(g.adjoint())

    scale = np.sqrt(shape.hs_weight)
    flat_cap = shape.flat_dim
    cap = flat_cap if policy.max_dim is None else min(flat_cap, policy.max_dim)

    seeds = np.vstack([_herm_rows(Element.unit(shape))]
                      + [_herm_rows(g) for g in symbols])
    basis = _orthonormal_rows(seeds, None, policy.rank_tol)
    info = ClosureInfo()

    # frontier rows carry coordinate norm 1, so a product row's true
    # magnitude is at most the symbol's operator norm and its float
    # noise sits near machine epsilon times that; 100x epsilon below
    # the largest symbol separates structural zeros from directions
    noise_floor = 1e-13 * max(operator_norm(s) for s in symbols)

    target_rows = np.vstack([_herm_rows(t) for t in targets]) \
        if targets else None

    def target_dists():
        res = target_rows - (target_rows @ basis.T) @ basis
        rn = np.linalg.norm(res, axis=1)
        # rows alternate hermitian/antihermitian parts of each target
        return np.sqrt(rn[0::2] ** 2 + rn[1::2] ** 2)

    def targets_done():
        if target_rows is None or policy.target_tol is None:
            return False
        d = target_dists()
        info.target_history.append(float(d.max()))
        return bool((d <= policy.target_tol).all())

    def frontier_arrays(rows):
        # per-block stacks (f, samples, n, n) for batched products
        return _herm_rows_to_stacks(shape, rows * scale)

    frontier = frontier_arrays(basis)
    done = targets_done()
    length = 1
    while not done and length < policy.word_length and basis.shape[0] < cap:
        # Candidates are reduced per symbol in bounded chunks; stacking a
        # whole round at once scales as rank growth x letters x flat_dim
        # and runs out of memory on deep truncations.
        before = basis.shape[0]
        fcount = frontier[0].shape[0]
        for s in symbols:
            for start in range(0, fcount, _CLOSURE_CHUNK):
                stop = min(start + _CLOSURE_CHUNK, fcount)
                stacks = [s.data[j][None, ...] @ fr[start:stop]
                          for j, fr in enumerate(frontier)]
                rows = _herm_split_stacks(shape, stacks, scale)
                new = _orthonormal_rows(rows, basis, policy.rank_tol,
                                        abs_floor=noise_floor)
                if new.shape[0] == 0:
                    continue
                if basis.shape[0] + new.shape[0] > cap:
                    new = new[:cap - basis.shape[0]]
                    info.capped = True
                basis = np.vstack([basis, new])
                if basis.shape[0] >= cap:
                    break
            if basis.shape[0] >= cap:
                break
        info.rounds += 1
        length += 1
        info.reached_length = length
        if basis.shape[0] == before:
            info.stabilized = True
            break
        frontier = frontier_arrays(basis[before:])
        done = targets_done()
        if basis.shape[0] >= flat_cap:
            info.saturated = True
            break
        if info.capped:
            break
    final = target_dists() if target_rows is not None else None
    return basis, info, final


def word_closure(generators: Sequence[Element],
                 policy: ClosurePolicy = ClosurePolicy()) -> SpanBasis:
    """Orthonormal basis for the span of all words of bounded length.

    The unit is always adjoined, and adjoints of the generators count as
    letters. Iteration stops early once a round adds no new directions.
    """
    basis, _, _ = _closure_run(generators, policy)
    shape = generators[0].shape
    return SpanBasis(shape, _herm_rows_to_flat(shape, basis))


def closure_with_targets(generators: Sequence[Element],
                         targets: Mapping[str, Element],
                         policy: ClosurePolicy):
    """Closure that can stop early once every target is inside the span.

    Returns (basis, {target name: distance}, info).
    """
    names = list(targets)
    basis, info, final = _closure_run(
        generators, policy, targets=[targets[n] for n in names] or None)
    shape = generators[0].shape
    dists = {} if final is None else \
        {n: float(d) for n, d in zip(names, final)}
    return SpanBasis(shape, _herm_rows_to_flat(shape, basis)), dists, info


# ---------------------------------------------------------------------------
# matrix-unit axioms

@dataclass(frozen=True)
class MatrixUnitReport:
    product_violation: float
    adjoint_violation: float
    unit_violation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return max(self.product_violation, self.adjoint_violation,
                   self.unit_violation) <= self.tolerance

    @property
    def max_violation(self) -> float:
        return max(self.product_violation, self.adjoint_violation,
                   self.unit_violation)


def check_matrix_unit_axioms(candidates: Mapping[tuple, Element],
                             unit: Optional[Element] = None,
                             tols: Tolerances = DEFAULT) -> MatrixUnitReport:
    """Verify e_{s,t} e_{u,v} = delta_{t,u} e_{s,v}, adjoint symmetry, and
    that the diagonal sums to the given unit (or at least to a projection).
    """
    index = sorted({i for pair in candidates for i in pair})
    for s in index:
        for t in index:
            if (s, t) not in candidates:
                raise ShapeError(f"family is missing the ({s},{t}) unit")

    prod = 0.0
    adj = 0.0
    for (s, t), est in candidates.items():
        adj = max(adj, operator_norm(est.adjoint() - candidates[(t, s)]))
        for (u, v), euv in candidates.items():
            expect = candidates[(s, v)] if t == u else None
            got = est * euv
            diff = got - expect if expect is not None else got
            prod = max(prod, operator_norm(diff))

    diag = None
    for s in index:
        diag = candidates[(s, s)] if diag is None else diag + candidates[(s, s)]
    if unit is not None:
        unit_dev = operator_norm(diag - unit)
    else:
        # no reference unit supplied: the diagonal sum must be a projection
        unit_dev = max(operator_norm(diag * diag - diag),
                       operator_norm(diag.adjoint() - diag))
    return MatrixUnitReport(prod, adj, unit_dev, tols.matrix_units)
