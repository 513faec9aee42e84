"""Certificates that the assembled element generates the truncation.

Three layers. The triangularity layer orders the scaffold projections and
checks the four corner conditions that locate the spectrum of the
generator; the extraction routine then walks that order and rebuilds each
projection from spectral data alone. The recovery layer re-derives the
scaffold isometries and the corner elements from the generator and its
coefficient ledger, by the same quotients the closure argument uses. The
generation layer runs the word closure directly and measures the distance
of every stage target to the computed span.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .elements import Element
from .errors import (AssemblyError, ResourceError, ShapeError,
                     SpectralGapError)
from .linalg import (ClosurePolicy, closure_with_targets, operator_norm,
                     riesz_projection)
from .report import VerificationReport
from .scaffold import LambdaSet, QWUSets, matrix_units_from_U
from .synthesis import GeneratorBundle
from .tolerances import DEFAULT, MAX_FLAT_DIM, Tolerances

__all__ = [
    "LexOrder",
    "build_lex_order",
    "corner_eigenvalues",
    "verify_upT",
    "extract_projections",
    "action_oracles",
    "recover_scaffold",
    "generation_targets",
    "verify_single_generation",
]


@dataclass(frozen=True)
class LexOrder:
    """The ordered projections p_1, p_2, ... below the triangular element.

    Keys are (i, j', j, k) with every coordinate 1-based, strictly
    increasing lexicographically. The terminal rung of the last group of
    each block never appears: it carries the next stage and stays outside
    the order.
    """

    keys: tuple
    projections: tuple

    def __post_init__(self):
        if len(self.keys) != len(self.projections):
            raise ShapeError("keys and projections differ in length")
        if not self.keys:
            raise ShapeError("the order needs at least one projection")
        for a, b in zip(self.keys, self.keys[1:]):
            if a >= b:
                raise ShapeError(f"keys {a} and {b} are out of order")

    def __len__(self) -> int:
        return len(self.keys)

    def partial_sums(self) -> list:
        """P_0 = 0 through P_N, indexable by n."""
        parts = [Element.zero(self.projections[0].shape)]
        for p in self.projections:
            parts.append(parts[-1] + p)
        return parts


def build_lex_order(qwu: QWUSets) -> LexOrder:
    """Every scaffold projection except the terminal rung per block."""
    sel = qwu.selection
    keys, ps = [], []
    for (i, jp, j, k) in qwu.q_indices():
        if jp == sel.K(i - 1) - 1 and k == qwu.M(i, jp, j):
            continue
        keys.append((i, jp + 1, j + 1, k))
        ps.append(qwu.q_element(i, jp, j, k))
    return LexOrder(tuple(keys), tuple(ps))


def corner_eigenvalues(e: Element, p: Element) -> np.ndarray:
    """Eigenvalues of the compression of e to the range of p.

    Works per block and sample through an eigenbasis of p, so p only has
    to be close to a projection, not diagonal. Samples where p has rank
    zero contribute nothing. The result keeps complex values: corner
    compressions of the generator are upper triangular, not self-adjoint.
    """
    if e.shape != p.shape:
        raise ShapeError("element and projection live in different algebras")
    out = []
    for pm, em in zip(p.data, e.data):
        for s in range(pm.shape[0]):
            w, u = np.linalg.eigh((pm[s] + pm[s].conj().T) / 2.0)
            cols = u[:, w > 0.5]
            if cols.shape[1]:
                out.append(np.linalg.eigvals(cols.conj().T @ em[s] @ cols))
    if not out:
        raise ShapeError("projection has rank zero in every sample")
    return np.concatenate(out)


def verify_upT(a: Element, order: LexOrder,
               tail_bound: Optional[float] = None,
               tols: Tolerances = DEFAULT) -> VerificationReport:
    """The four corner conditions that locate the spectrum of a.

    Rows: the order is a genuine flag of projections, compressions below
    the diagonal vanish, the tail compressions shrink under the stated
    bound, corner spectra are pairwise disjoint, and no corner meets
    zero. Passing all of them places the spectrum of a inside the union
    of the corner spectra and zero, which is exactly what the projection
    extraction consumes. The two spectral rows pass when the value is at
    least the tolerance.
    """
    for p in order.projections:
        if p.shape != a.shape:
            raise ShapeError("order and element live in different algebras")
    rep = VerificationReport()
    unit = Element.unit(a.shape)
    parts = order.partial_sums()
    n_p = len(order)

    flag_dev = 0.0
    for m, p in enumerate(order.projections):
        flag_dev = max(flag_dev, (p * p - p).max_abs(),
                       (p.adjoint() - p).max_abs())
        for q in order.projections[m + 1:]:
            flag_dev = max(flag_dev, (p * q).max_abs())
    rep.add("upT-flag", "(L:upT)", flag_dev, tols.exact, count=n_p)

    worst, worst_n = 0.0, 0
    for n in range(1, n_p + 1):
        dev = operator_norm((unit - parts[n]) * a * parts[n])
        if dev > worst:
            worst, worst_n = dev, n
    rep.add("upT-triangular", "(Con:upT)", worst, tols.product_oracle,
            worst_n=worst_n)

    tails = []
    for n in range(n_p + 1):
        co = unit - parts[n]
        tails.append(float(operator_norm(co * a * co)))
    monotone = all(b <= t + tols.exact for t, b in zip(tails, tails[1:]))
    bound = tols.product_oracle if tail_bound is None else tail_bound
    rep.add("upT-tail", "(Con:trace)", tails[-1], bound,
            ok=(tails[-1] <= bound) and monotone,
            monotone=monotone, tails=tails)

    spectra = [corner_eigenvalues(a, p) for p in order.projections]
    gap, pair = np.inf, None
    for m in range(n_p):
        for n in range(m + 1, n_p):
            d = float(np.abs(spectra[m][:, None] - spectra[n][None, :]).min())
            if d < gap:
                gap, pair = d, [m + 1, n + 1]
    if pair is None:
        rep.add("upT-disjoint-corners", "(Con:upTspec)", 0.0,
                tols.spectral_gap, ok=True, pairs=0)
    else:
        rep.add("upT-disjoint-corners", "(Con:upTspec)", gap,
                tols.spectral_gap, ok=gap >= tols.spectral_gap,
                worst_pair=pair, direction="at-least")

    margin, arg = np.inf, 0
    for m, spec in enumerate(spectra):
        d = float(np.abs(spec).min())
        if d < margin:
            margin, arg = d, m + 1
    rep.add("upT-invertible-corners", "(Con:upTspec2)", margin,
            tols.spectral_gap, ok=margin >= tols.spectral_gap,
            worst_n=arg, direction="at-least")
    return rep.finalize()


def _range_projection(e: np.ndarray) -> np.ndarray:
    # nonzero singular values of an idempotent are at least one, so the
    # cut at one half is unambiguous regardless of the skew part
    u, s, _ = np.linalg.svd(e)
    cols = u[:, s > 0.5]
    return cols @ cols.conj().T


def extract_projections(a: Element, clusters,
                        tols: Tolerances = DEFAULT) -> list:
    """Recover the ordered projections from corner spectra alone.

    ``clusters[n]`` holds the corner eigenvalues of the n-th projection,
    pooled over blocks and samples. Each step takes the spectral
    idempotent of the current compression around its cluster, replaces it
    by the orthogonal projection onto its range, and compresses the
    element by the complement before the next step. Zero is reserved for
    the exhausted part, so every cluster must keep its distance from zero
    and from the later clusters; collisions raise SpectralGapError.
    """
    pts = [np.asarray(list(c), dtype=np.complex128).ravel() for c in clusters]
    if not pts:
        return []
    for n, c in enumerate(pts):
        if c.size == 0:
            raise SpectralGapError(f"cluster {n + 1} is empty")
        if float(np.abs(c).min()) < tols.spectral_gap:
            raise SpectralGapError(
                f"cluster {n + 1} touches zero, which is reserved for the "
                "exhausted part")
    for m in range(len(pts)):
        for n in range(m + 1, len(pts)):
            gap = float(np.abs(pts[m][:, None] - pts[n][None, :]).min())
            if gap < tols.spectral_gap:
                raise SpectralGapError(
                    f"clusters {m + 1} and {n + 1} collide (gap {gap:.3e})")

    unit = Element.unit(a.shape)
    covered = Element.zero(a.shape)
    comp = a
    out = []
    for n, c in enumerate(pts):
        rest = np.concatenate([x for x in pts[n + 1:]] + [np.zeros(1)])
        delta = 0.9 * float(np.abs(c[:, None] - rest[None, :]).min())
        blocks = []
        for bm in comp.data:
            mats = np.empty_like(bm)
            for s in range(bm.shape[0]):
                mats[s] = _range_projection(riesz_projection(bm[s], c, delta))
            blocks.append(mats)
        p = Element(a.shape, blocks)
        p = 0.5 * (p + p.adjoint())
        out.append(p)
        covered = covered + p
        co = unit - covered
        comp = co * a * co
    return out


def action_oracles(bundle: GeneratorBundle, qwu: QWUSets,
                   lambdas: Optional[LambdaSet] = None,
                   tols: Tolerances = DEFAULT) -> VerificationReport:
    """Left and right action of the generator on every ordered projection.

    Both sides of each identity are evaluated literally: the left side as
    matrix products against the assembled generator, the right side
    rebuilt from stored scaffold elements and the coefficient ledger. One
    row per identity carries the worst deviation over all admissible
    indices and names the index that attains it.
    """
    lam = bundle.lambdas if lambdas is None else lambdas
    sel = qwu.selection
    gen = bundle.generator
    order = build_lex_order(qwu)
    parts = order.partial_sums()
    rep = VerificationReport()

    def coeff(i, jp, j, k):
        try:
            return lam.lam(i, jp, j, k)
        except KeyError as exc:
            raise AssemblyError(
                f"no coefficient for ({i}; {jp + 1}, {j + 1}, {k})") from exc

    def w_term(i, jp, j, k):
        return coeff(i, jp, j, k) * qwu.w_element(i, jp, j, k)

    def terminal_w(i, jp, j):
        return w_term(i, jp, j, qwu.M(i, jp, j))

    def lead_into(r, sp0):
        """Earlier-stage terms of the generator that reach stage r
        through the descent corners: every stage below r - 1 contributes
        its last terminal isometry, stage r - 1 the terminal isometry of
        the block the group index points at."""
        acc = Element.zero(gen.shape)
        for i in range(1, r - 1):
            acc = acc + terminal_w(i, sel.K(i - 1) - 1, sel.K(i) - 1)
        if r > 1:
            acc = acc + terminal_w(r - 1, sel.K(r - 2) - 1, sp0)
        return acc

    worsts = {name: (0.0, None) for name in
              ("qG", "qG-offstage", "qGq", "Gq", "Gq-stages", "PGq", "qGP")}

    def note(name, dev, key):
        if dev > worsts[name][0]:
            worsts[name] = (dev, list(key))

    for n, (key, q) in enumerate(zip(order.keys, order.projections)):
        r, sp1, s1, t = key
        sp0, s0 = sp1 - 1, s1 - 1
        anchor = sp1 == 1 and t == 1
        kp = sel.K(r - 1)

        if anchor:
            local = bundle.families[r - 1][s0]
            for k in range(2, qwu.M(r, 0, s0) + 1):
                local = local + w_term(r, 0, s0, k)
            for jp in range(1, kp - 1):
                for k in range(1, qwu.M(r, jp, s0) + 1):
                    local = local + w_term(r, jp, s0, k)
            if kp > 1:
                for k in range(1, qwu.M(r, kp - 1, s0) + 1):
                    local = local + w_term(r, kp - 1, s0, k)
        else:
            local = coeff(r, sp0, s0, t) * q

        lhs = q * gen
        note("qG", max((lhs - q * bundle.stage_terms[r - 1]).max_abs(),
                       (lhs - local).max_abs()), key)
        for i in range(1, qwu.depth + 1):
            if i != r:
                note("qG-offstage",
                     (q * bundle.stage_terms[i - 1]).max_abs(), (*key, i))

        rhs = bundle.families[r - 1][s0] if anchor \
            else coeff(r, sp0, s0, t) * q
        note("qGq", (q * gen * q - rhs).max_abs(), key)

        lead = lead_into(r, sp0) * q
        if anchor:
            right_local = bundle.families[r - 1][s0]
        else:
            right_local = coeff(r, sp0, s0, t) * (
                q + qwu.w_element(r, sp0, s0, t))
        note("Gq", (gen * q - (lead + right_local)).max_abs(), key)

        for i in range(1, qwu.depth + 1):
            gi_q = bundle.stage_terms[i - 1] * q
            if i == r:
                dev = (gi_q - right_local).max_abs()
            elif i == r - 1:
                dev = (gi_q - terminal_w(i, sel.K(i - 1) - 1, sp0) * q
                       ).max_abs()
            elif i < r - 1:
                dev = (gi_q - terminal_w(i, sel.K(i - 1) - 1, sel.K(i) - 1)
                       * q).max_abs()
            else:
                dev = gi_q.max_abs()
            note("Gq-stages", dev, (*key, i))

        rhs_pg = lead if anchor else lead + w_term(r, sp0, s0, t)
        note("PGq", (parts[n] * gen * q - rhs_pg).max_abs(), key)
        note("qGP", (q * gen * parts[n]).max_abs(), key)

    for name, tag in (("qG", "(E:qG)"), ("qG-offstage", "(E:qG)"),
                      ("qGq", "(E:qGq)"), ("Gq", "(E:Gq)"),
                      ("Gq-stages", "(E:Gq)"), ("PGq", "(E:PGq)"),
                      ("qGP", "(E:qGP)")):
        dev, arg = worsts[name]
        rep.add(f"action-{name}", tag, dev, tols.product_oracle, worst=arg)

    pp = 0.0
    for n, pn in enumerate(parts):
        for m, p in enumerate(order.projections, start=1):
            if m <= n:
                d = max((pn * p - p).max_abs(), (p * pn - p).max_abs())
            else:
                d = max((pn * p).max_abs(), (p * pn).max_abs())
            pp = max(pp, d)
    rep.add("action-Pp", "(E:Pp)", pp, tols.product_oracle,
            count=len(order))
    return rep.finalize()


def recover_scaffold(bundle: GeneratorBundle, qwu: QWUSets,
                     lambdas: Optional[LambdaSet] = None,
                     membership_policy: Optional[ClosurePolicy] = None,
                     check_membership: bool = True,
                     tols: Tolerances = DEFAULT) -> VerificationReport:
    """Rebuild the scaffold from the generator and its coefficients.

    Corner elements come back as anchor compressions. Ladder isometries
    come back as quotients of the anchor's left action against their own
    projection; the terminal isometry of each block is what remains of
    that action after every recovered term is subtracted. Row values are
    distances to the stored scaffold. The stage diagonals are then
    re-derived from each stage's isometry set together with the recovered
    corner elements, measured as distance to a word closure; that closure
    grows with the stage dimension, so ``check_membership=False`` lets a
    caller drop the diagonal row when the full generation check already
    covers it.
    """
    lam = bundle.lambdas if lambdas is None else lambdas
    sel = qwu.selection
    gen = bundle.generator
    rep = VerificationReport()

    def coeff(i, jp, j, k):
        try:
            return lam.lam(i, jp, j, k)
        except KeyError as exc:
            raise AssemblyError(
                f"no coefficient for ({i}; {jp + 1}, {j + 1}, {k})") from exc

    worst_g, arg_g = 0.0, None
    worst_w, arg_w = 0.0, None
    count_w = 0
    recovered_g = []
    for r in range(1, qwu.depth + 1):
        kp = sel.K(r - 1)
        stage_g = []
        for s0 in range(sel.K(r)):
            q1 = qwu.q_element(r, 0, s0, 1)
            ghat = q1 * gen * q1
            stage_g.append(ghat)
            dev = (ghat - bundle.families[r - 1][s0]).max_abs()
            if dev > worst_g:
                worst_g, arg_g = dev, [r, s0 + 1]

            lead = q1 * gen - ghat
            rec = {(0, 1): q1}
            dev = (q1 - qwu.w_element(r, 0, s0, 1)).max_abs()
            if dev > worst_w:
                worst_w, arg_w = dev, [r, 1, s0 + 1, 1]
            count_w += 1
            for jp in range(kp):
                m = qwu.M(r, jp, s0)
                if jp == 0:
                    ks = range(2, m + 1) if kp > 1 else range(2, m)
                elif jp < kp - 1:
                    ks = range(1, m + 1)
                else:
                    ks = range(1, m)
                for k in ks:
                    what = (1.0 / coeff(r, jp, s0, k)) * (
                        lead * qwu.q_element(r, jp, s0, k))
                    rec[(jp, k)] = what
                    dev = (what - qwu.w_element(r, jp, s0, k)).max_abs()
                    if dev > worst_w:
                        worst_w, arg_w = dev, [r, jp + 1, s0 + 1, k]
                    count_w += 1
            m_t = qwu.M(r, kp - 1, s0)
            if kp == 1 and m_t == 1:
                continue  # the terminal rung is the anchor itself
            acc = lead
            for (jp, k), what in rec.items():
                if (jp, k) != (0, 1):
                    acc = acc - coeff(r, jp, s0, k) * what
            what = (1.0 / coeff(r, kp - 1, s0, m_t)) * acc
            dev = (what - qwu.w_element(r, kp - 1, s0, m_t)).max_abs()
            if dev > worst_w:
                worst_w, arg_w = dev, [r, kp, s0 + 1, m_t]
            count_w += 1
        recovered_g.append(stage_g)

    rep.add("recover-g", "(E:qGq)", worst_g, tols.recovery, worst=arg_g)
    rep.add("recover-w", "(T:main)", worst_w, tols.recovery, worst=arg_w,
            count=count_w)

    if not check_membership:
        return rep.finalize()
    if membership_policy is None:
        membership_policy = ClosurePolicy(
            word_length=10, rank_tol=tols.span_rank,
            target_tol=tols.membership)
    worst_d, arg_d, dims = 0.0, None, []
    for i in range(1, qwu.depth + 1):
        gens = []
        for j in range(sel.K(i)):
            gens.extend(qwu.u_element(i, j, k)
                        for k in range(1, sel.N(i, j) + 1))
        gens.extend(recovered_g[i - 1])
        d = qwu.snapshot.D_generators[i - 1].element
        basis, dists, _ = closure_with_targets(
            gens, {"d": d}, membership_policy)
        dims.append(basis.dim)
        if dists["d"] > worst_d:
            worst_d, arg_d = dists["d"], i
    rep.add("recover-d", "(G3)", worst_d, tols.membership, worst=arg_d,
            dims=dims, word_length=membership_policy.word_length)
    return rep.finalize()


def generation_targets(qwu: QWUSets) -> dict:
    """Matrix units of every scaffold stage plus the consumed diagonals.

    Names are stable: ``unit-i.j:s.t`` is the (s, t) unit of block j at
    stage i in the column order of its isometry set, ``d-i`` the stage-i
    diagonal generator.
    """
    sel = qwu.selection
    if len(qwu.snapshot.D_generators) < qwu.depth:
        raise AssemblyError(
            f"need {qwu.depth} diagonal generators, snapshot carries "
            f"{len(qwu.snapshot.D_generators)}")
    targets = {}
    for i in range(1, qwu.depth + 1):
        for j in range(sel.K(i)):
            us = [qwu.u_element(i, j, k)
                  for k in range(1, sel.N(i, j) + 1)]
            for (s, t), el in matrix_units_from_U(us).items():
                targets[f"unit-{i}.{j}:{s}.{t}"] = el
    for i in range(1, qwu.depth + 1):
        targets[f"d-{i}"] = qwu.snapshot.D_generators[i - 1].element
    return targets


def verify_single_generation(bundle: GeneratorBundle, qwu: QWUSets,
                             targets: Optional[dict] = None,
                             policy: Optional[ClosurePolicy] = None,
                             tols: Tolerances = DEFAULT
                             ) -> VerificationReport:
    """Word closure of the generator against the stage targets.

    Pass means every target sits within the policy tolerance of the
    closure span. The closure dimension, the policy, and the analytic
    tail bound of the truncation are echoed in the rows. A dimension cap
    that stops the closure short of its targets raises ResourceError
    rather than reporting a silent failure; an honest miss at full word
    length stays a failing row.
    """
    gen = bundle.generator
    if gen.shape.flat_dim > MAX_FLAT_DIM:
        raise ResourceError(
            f"ambient flat dimension {gen.shape.flat_dim} exceeds the "
            f"supported {MAX_FLAT_DIM}")
    if targets is None:
        targets = generation_targets(qwu)
    if policy is None:
        policy = ClosurePolicy(word_length=14, rank_tol=tols.span_rank,
                               target_tol=tols.generation)
    tol = tols.generation if policy.target_tol is None else policy.target_tol

    basis, dists, info = closure_with_targets([gen], targets, policy)
    worst_name = max(dists, key=dists.get)
    worst = dists[worst_name]
    if info.capped and worst > tol:
        misses = sum(1 for d in dists.values() if d > tol)
        raise ResourceError(
            f"closure hit its dimension cap {policy.max_dim} at rank "
            f"{basis.dim} with {misses} targets outside tolerance")

    rep = VerificationReport()
    rep.add("generation-closure", "(T:main)", float(basis.dim),
            float(gen.shape.flat_dim), ok=True,
            rounds=info.rounds, reached_length=info.reached_length,
            stabilized=info.stabilized, saturated=info.saturated)
    rep.add("generation-targets", "(T:main)", worst, tol,
            worst=worst_name, count=len(dists),
            word_length=policy.word_length)
    for family, tag in (("unit", "(T:main)"), ("d", "(G3)")):
        fam = {n: d for n, d in dists.items()
               if n.split("-", 1)[0] == family}
        if fam:
            name = max(fam, key=fam.get)
            rep.add(f"generation-{family}s", tag, fam[name], tol,
                    worst=name, count=len(fam))
    rep.add("generation-tail", "(Con:trace)", bundle.tail_bound,
            2.0 ** (-bundle.depth - 1) + tols.exact)
    return rep.finalize()
