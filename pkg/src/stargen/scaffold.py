"""The Q/W/U scaffold: nested projection sets, partial isometries with a
common range per block, and the coefficient ladder attached to them.

Everything here is index arithmetic on the AF skeleton; elements are
materialized at the top stage only on demand. All scaffold members are
constant 0/1 matrices, so the verification products are exact in floating
point and the stated tolerances only absorb the final comparisons.

Index conventions match the rest of the package: scaffold stages i and
ladder positions k are 1-based (mirroring the identities being checked),
block and group indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bratteli import StageSelection
from .elements import Element
from .errors import InsufficientDepth, LambdaCollision, ShapeError
from .linalg import ClosurePolicy, closure_with_targets
from .report import VerificationReport
from .system import SystemSnapshot
from .tolerances import DEFAULT, Tolerances

__all__ = [
    "QWUSets",
    "build_qwu",
    "verify_qwu",
    "LambdaSet",
    "build_lambda",
    "partial_iso_closure_check",
    "matrix_units_from_U",
]


@dataclass
class QWUSets:
    """Position tables for the scaffold, plus element materialization.

    ``q_positions[i-1][jp][j]`` lists the diagonal positions (skeleton
    units) of Q_{i;j',j} inside block j at the selected stage s_i, ordered
    by the copy layout of the composed embedding. ``range_rows[i-1][j]``
    is the common range row I_j shared by W_{i;·,j} and U_{i,j}.
    """

    snapshot: SystemSnapshot
    selection: StageSelection
    q_positions: tuple
    range_rows: tuple
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def depth(self) -> int:
        return self.selection.count

    def M(self, i: int, jp: int, j: int) -> int:
        return len(self.q_positions[i - 1][jp][j])

    def q_position(self, i: int, jp: int, j: int, k: int) -> int:
        """Diagonal position of q_{i;j',j,k} inside its block (k is 1-based)."""
        return self.q_positions[i - 1][jp][j][k - 1]

    def u_columns(self, i: int, j: int) -> tuple:
        """Column order of U_{i,j}: the range row first, the rest ascending."""
        n = self.selection.N(i, j)
        r = self.range_rows[i - 1][j]
        return (r,) + tuple(c for c in range(n) if c != r)

    def _unit(self, i: int, j: int, row: int, col: int) -> Element:
        key = (i, j, row, col)
        if key not in self._cache:
            self._cache[key] = self.snapshot.pushed_skeleton_unit(
                self.selection.stage(i), j, row, col)
        return self._cache[key]

    def q_element(self, i: int, jp: int, j: int, k: int) -> Element:
        pos = self.q_position(i, jp, j, k)
        return self._unit(i, j, pos, pos)

    def w_element(self, i: int, jp: int, j: int, k: int) -> Element:
        pos = self.q_position(i, jp, j, k)
        return self._unit(i, j, self.range_rows[i - 1][j], pos)

    def u_element(self, i: int, j: int, k: int) -> Element:
        col = self.u_columns(i, j)[k - 1]
        return self._unit(i, j, self.range_rows[i - 1][j], col)

    def anchor_projection(self, i: int, jp: int) -> Element:
        """p_{i,j'}: the identity for i = 0, otherwise the last q of the
        last group targeting block j' at scaffold stage i."""
        if i == 0:
            if jp != 0:
                raise ShapeError("stage 0 has a single block")
            return Element.unit(self.snapshot.shape(self.snapshot.depth))
        group = self.selection.K(i - 1) - 1
        return self.q_element(i, group, jp, self.M(i, group, jp))

    def q_indices(self) -> list:
        """Every (i, jp, j, k) with k 1-based, stage-major in lex order."""
        out = []
        for i in range(1, self.depth + 1):
            for jp in range(self.selection.K(i - 1)):
                for j in range(self.selection.K(i)):
                    for k in range(1, self.M(i, jp, j) + 1):
                        out.append((i, jp, j, k))
        return out


def build_qwu(snapshot: SystemSnapshot, selection: StageSelection) -> QWUSets:
    """Index tables for Q, W, and U along the selected stages.

    Stage 1 takes all diagonal units of every block. Each later stage
    refines the previous anchors through the copy layout of the composed
    embedding, so the (Q2) partitions and the common-range conditions hold
    exactly by construction. The assignment is pure integer arithmetic;
    identical inputs yield identical tables.
    """
    sel = selection
    if sel.data != snapshot.af_skeleton:
        raise ShapeError("selection was built over a different skeleton")
    if sel.stage(sel.count) > snapshot.depth:
        raise InsufficientDepth(
            f"selection reaches stage {sel.stage(sel.count)} but the "
            f"snapshot is truncated at {snapshot.depth}")

    # stage 1 has a single group (the scalar stage 0) and takes every
    # diagonal unit of every block
    stage1 = tuple(tuple(range(sel.N(1, j))) for j in range(sel.K(1)))
    q_pos = [(stage1,)]
    range_rows = [tuple(0 for _ in range(sel.K(1)))]

    for i in range(2, sel.count + 1):
        prev_s, this_s = sel.stage(i - 1), sel.stage(i)
        last_group = sel.K(i - 2) - 1
        anchors = [q_pos[i - 2][last_group][jp][-1]
                   for jp in range(sel.K(i - 1))]
        per_group = []
        for jp in range(sel.K(i - 1)):
            per_j = []
            for j in range(sel.K(i)):
                offs = snapshot.copy_offsets(prev_s, jp, this_s, j)
                if len(offs) != sel.M(i, jp, j):
                    raise ShapeError(
                        f"layout gives {len(offs)} copies of block {jp} but "
                        f"the incidence table says {sel.M(i, jp, j)}")
                per_j.append(tuple(off + anchors[jp] for off in offs))
            per_group.append(tuple(per_j))
        q_pos.append(tuple(per_group))
        range_rows.append(tuple(per_group[0][j][0] for j in range(sel.K(i))))

    return QWUSets(snapshot, sel, tuple(q_pos), tuple(range_rows))


def verify_qwu(qwu: QWUSets, tols: Tolerances = DEFAULT) -> VerificationReport:
    """Exhaustive check of the scaffold laws at the current truncation.

    Covers the anchor partitions (Q2), the range/source assignments
    (W2)(W3)(U1)(U2), and the three product identities (E:prod1) through
    (E:prod3) over every q pair, comparing each product against the exact
    predicted outcome.
    """
    sel = qwu.selection
    report = VerificationReport()

    worst_part = 0.0
    for i in range(1, qwu.depth + 1):
        for jp in range(sel.K(i - 1)):
            total = None
            for j in range(sel.K(i)):
                for k in range(1, qwu.M(i, jp, j) + 1):
                    q = qwu.q_element(i, jp, j, k)
                    total = q if total is None else total + q
            dev = (total - qwu.anchor_projection(i - 1, jp)).max_abs()
            worst_part = max(worst_part, dev)
    report.add("qwu-partition", "(Q2)", worst_part, tols.exact)

    worst_range = 0.0
    worst_source = 0.0
    worst_u = 0.0
    u_structure_ok = True
    for i in range(1, qwu.depth + 1):
        for j in range(sel.K(i)):
            common = qwu.w_element(i, 0, j, 1)
            dev = (common * common - common).max_abs()
            worst_range = max(worst_range, dev)
            for jp in range(sel.K(i - 1)):
                for k in range(1, qwu.M(i, jp, j) + 1):
                    w = qwu.w_element(i, jp, j, k)
                    worst_range = max(
                        worst_range, (w * w.adjoint() - common).max_abs())
                    worst_source = max(
                        worst_source,
                        (w.adjoint() * w - qwu.q_element(i, jp, j, k)).max_abs())
            cols = qwu.u_columns(i, j)
            n = sel.N(i, j)
            if sorted(cols) != list(range(n)) or cols[0] != qwu.range_rows[i - 1][j]:
                u_structure_ok = False
            w_cols = {qwu.q_position(i, jp, j, k)
                      for jp in range(sel.K(i - 1))
                      for k in range(1, qwu.M(i, jp, j) + 1)}
            if not w_cols <= set(cols):
                u_structure_ok = False
            first = qwu.u_element(i, j, 1)
            worst_u = max(worst_u, (first - common).max_abs())
            for k in range(2, n + 1):
                v = qwu.u_element(i, j, k)
                worst_u = max(worst_u, (v * v.adjoint() - first).max_abs())
    report.add("qwu-w-range", "(W2)", worst_range, tols.exact)
    report.add("qwu-w-source", "(W3)", worst_source, tols.exact)
    report.add("qwu-u-subset", "(U1)", 0.0 if u_structure_ok else 1.0, 0.0,
               ok=u_structure_ok)
    report.add("qwu-u-range", "(U2)", worst_u, tols.exact)

    indices = qwu.q_indices()
    worst = {"(E:prod1)": 0.0, "(E:prod2)": 0.0, "(E:prod3)": 0.0}
    pairs = {"(E:prod1)": 0, "(E:prod2)": 0, "(E:prod3)": 0}
    for a in indices:
        i, jp, j, k = a
        qa = qwu.q_element(*a)
        anchor_last = (jp == sel.K(i - 1) - 1 and k == qwu.M(i, jp, j))
        for b in indices:
            r, sp, s, t = b
            if r < i:
                continue
            qb = qwu.q_element(*b)
            if i == r:
                tag = "(E:prod3)"
                hit = a == b
            elif i + 1 == r:
                tag = "(E:prod2)"
                hit = anchor_last and j == sp
            else:
                tag = "(E:prod1)"
                hit = anchor_last and j == sel.K(i) - 1
            expected = qb if hit else None
            prod = qa * qb
            dev = (prod - expected).max_abs() if hit else prod.max_abs()
            rev = qb * qa
            dev = max(dev, (rev - expected).max_abs() if hit
                      else rev.max_abs())
            worst[tag] = max(worst[tag], dev)
            pairs[tag] += 1
    report.add("qwu-prod-distant", "(E:prod1)", worst["(E:prod1)"],
               tols.exact, pairs=pairs["(E:prod1)"])
    report.add("qwu-prod-adjacent", "(E:prod2)", worst["(E:prod2)"],
               tols.exact, pairs=pairs["(E:prod2)"])
    report.add("qwu-prod-same", "(E:prod3)", worst["(E:prod3)"],
               tols.exact, pairs=pairs["(E:prod3)"])
    return report


@dataclass(frozen=True)
class LambdaSet:
    """Coefficients λ_{i;j',j,k}, one per scaffold q/w index.

    ``entries`` holds ((i, jp, j, k), value) pairs in assignment order;
    values are mutually distinct, positive, and sum to at most 2^{-i-5}
    per stage.
    """

    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "_by_index", dict(self.entries))

    def lam(self, i: int, jp: int, j: int, k: int) -> float:
        return self._by_index[(i, jp, j, k)]

    def stage_values(self, i: int) -> list:
        return [v for (idx, v) in self.entries if idx[0] == i]

    def stage_sum(self, i: int) -> float:
        return float(sum(self.stage_values(i)))

    def values(self) -> list:
        return [v for _, v in self.entries]


def build_lambda(qwu: QWUSets, g_spectra: list) -> LambdaSet:
    """Geometric coefficient ladder with spectral avoidance.

    Within stage i the values run 2^{-i-6}, 2^{-i-7}, … in the lex order
    of (j', j, k); the whole stage is damped by (1 - (i-1)·2^{-10}) so
    ladders of different stages never reuse a value. Any value within
    1e-9 of a supplied spectrum point is nudged down by the factor
    (1 - 1e-6) until clear, at most 100 times.
    """
    points = [np.asarray(s, dtype=np.float64).ravel() for s in g_spectra]
    flat = np.concatenate(points) if points else np.zeros(0)

    entries = []
    for i in range(1, qwu.depth + 1):
        damp = 1.0 - (i - 1) * 2.0 ** -10
        r = 0
        for jp in range(qwu.selection.K(i - 1)):
            for j in range(qwu.selection.K(i)):
                for k in range(1, qwu.M(i, jp, j) + 1):
                    lam = 2.0 ** (-i - 6 - r) * damp
                    nudges = 0
                    while flat.size and np.abs(flat - lam).min() < 1e-9:
                        lam *= 1.0 - 1e-6
                        nudges += 1
                        if nudges > 100:
                            raise LambdaCollision(
                                f"coefficient for stage {i} index "
                                f"({jp},{j},{k}) cannot clear the spectra")
                    entries.append(((i, jp, j, k), lam))
                    r += 1

    values = [v for _, v in entries]
    if len(set(values)) != len(values):
        raise LambdaCollision("nudging produced a repeated coefficient")
    return LambdaSet(tuple(entries))


def partial_iso_closure_check(qwu: QWUSets, snapshot: SystemSnapshot,
                              i: int,
                              tols: Tolerances = DEFAULT) -> VerificationReport:
    """Certify that U_{i+1,j} lies in the closure of the stage-i matrix
    algebra together with W_{i+1;·,j}, and that the ladder identity
    w·e_{j';J,k} lands on the predicted unit exactly.
    """
    sel = qwu.selection
    if not 1 <= i < qwu.depth:
        raise ShapeError(f"need a scaffold stage pair, got i={i} of "
                         f"depth {qwu.depth}")
    prev_s, this_s = sel.stage(i), sel.stage(i + 1)
    report = VerificationReport()

    last_group = sel.K(i - 1) - 1
    anchors = [qwu.q_positions[i - 1][last_group][jp][-1]
               for jp in range(sel.K(i))]

    units = []
    for jp in range(sel.K(i)):
        n = sel.N(i, jp)
        for a in range(n):
            for b in range(n):
                units.append(snapshot.pushed_skeleton_unit(prev_s, jp, a, b))

    for j in range(sel.K(i + 1)):
        gens = list(units)
        for jp in range(sel.K(i)):
            for k in range(1, qwu.M(i + 1, jp, j) + 1):
                gens.append(qwu.w_element(i + 1, jp, j, k))
        targets = {f"u{k}": qwu.u_element(i + 1, j, k)
                   for k in range(1, sel.N(i + 1, j) + 1)}
        policy = ClosurePolicy(word_length=4, rank_tol=tols.span_rank,
                               target_tol=tols.iso_closure)
        _, dists, info = closure_with_targets(gens, targets, policy)
        worst = max(dists.values())
        report.add(f"iso-closure[{j}]", "(U:closure)", worst,
                   tols.iso_closure, reached_length=info.reached_length)

    worst_index = 0.0
    for j in range(sel.K(i + 1)):
        for jp in range(sel.K(i)):
            offs = snapshot.copy_offsets(prev_s, jp, this_s, j)
            for t, off in enumerate(offs, start=1):
                w = qwu.w_element(i + 1, jp, j, t)
                for k in range(sel.N(i, jp)):
                    e = snapshot.pushed_skeleton_unit(
                        prev_s, jp, anchors[jp], k)
                    target = snapshot.pushed_skeleton_unit(
                        this_s, j, qwu.range_rows[i][j], off + k)
                    worst_index = max(worst_index,
                                      (w * e - target).max_abs())
    report.add("iso-index", "(U:index)", worst_index, tols.exact)
    return report


def matrix_units_from_U(units: list) -> dict:
    """All n² matrix units of a block from one size-n partial-isometry set.

    ``units[s]* units[t]`` recovers the (s,t) unit in the coordinates of
    the set's column order; the result maps (s, t) pairs to Elements and
    feeds ``check_matrix_unit_axioms`` directly.
    """
    if not units:
        raise ShapeError("need at least one partial isometry")
    adjoints = [v.adjoint() for v in units]
    return {(s, t): adjoints[s] * units[t]
            for s in range(len(units)) for t in range(len(units))}
