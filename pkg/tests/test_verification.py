"""Ordered projections, triangular corner conditions, spectral extraction
of the projection flag, scaffold recovery from the assembled generator, and
the end-to-end generation check."""

import dataclasses

import numpy as np
import pytest

from stargen.bratteli import BratteliData, select_stages
from stargen.elements import AlgebraShape, BlockShape, Element
from stargen.errors import (AssemblyError, ResourceError, ShapeError,
                            SpectralGapError)
from stargen.linalg import ClosurePolicy, operator_norm, word_closure
from stargen.presets import preset_params
from stargen.scaffold import LambdaSet, build_qwu
from stargen.synthesis import assemble_Gi, assemble_generator
from stargen.system import af_system_from_bratteli, build_system
from stargen.verification import (LexOrder, action_oracles, build_lex_order,
                                  corner_eigenvalues, extract_projections,
                                  generation_targets, recover_scaffold,
                                  verify_single_generation, verify_upT)


def block_flag(diag_blocks, rng=None, scale=1.0):
    """Single-sample element with the given diagonal blocks, random content
    strictly above the block diagonal when rng is given, plus the flag of
    block projections and the per-block eigenvalue clusters."""
    sizes = [b.shape[0] for b in diag_blocks]
    n = sum(sizes)
    shape = AlgebraShape([BlockShape(n, 1)])
    offs = np.concatenate([[0], np.cumsum(sizes)])
    m = np.zeros((1, n, n), dtype=np.complex128)
    for i, b in enumerate(diag_blocks):
        m[0, offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = b
        if rng is not None and offs[i + 1] < n:
            w = n - offs[i + 1]
            m[0, offs[i]:offs[i + 1], offs[i + 1]:] = scale * (
                rng.standard_normal((sizes[i], w))
                + 1j * rng.standard_normal((sizes[i], w)))
    a = Element(shape, [m])
    keys, ps = [], []
    for i, size in enumerate(sizes):
        d = np.zeros((1, n, n), dtype=np.complex128)
        d[0, offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = np.eye(size)
        keys.append((i + 1, 1, 1, 1))
        ps.append(Element(shape, [d]))
    order = LexOrder(tuple(keys), tuple(ps))
    clusters = [np.linalg.eigvals(b) for b in diag_blocks]
    return a, order, clusters


@pytest.fixture(scope="module")
def uhf2():
    snap = build_system(preset_params("uhf2"), depth=4)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 3))
    return snap, qwu


@pytest.fixture(scope="module")
def uhf2_bundle(uhf2):
    return assemble_generator(uhf2[1])


@pytest.fixture(scope="module")
def uhf2_case(uhf2, uhf2_bundle):
    snap, qwu = uhf2
    return snap, qwu, uhf2_bundle


@pytest.fixture(scope="module")
def uhf2_order(uhf2):
    return build_lex_order(uhf2[1])


@pytest.fixture(scope="module")
def goodearl():
    snap = build_system(preset_params("goodearl"), depth=3)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 2))
    return snap, qwu, assemble_generator(qwu)


@pytest.fixture(scope="module")
def two_block():
    m = ((2, 2), (2, 2))
    data = BratteliData(((2, 2), (8, 8), (32, 32)), (m, m))
    snap = af_system_from_bratteli(data)
    qwu = build_qwu(snap, select_stages(data, 2))
    return snap, qwu, assemble_generator(qwu)


@pytest.fixture(scope="module")
def three_block():
    # K(1) = 3, so stage 2 has first, middle, and last groups
    m = ((2, 2, 2), (2, 2, 2), (2, 2, 2))
    data = BratteliData(((2, 2, 2), (12, 12, 12), (72, 72, 72)), (m, m))
    snap = af_system_from_bratteli(data)
    qwu = build_qwu(snap, select_stages(data, 2))
    return snap, qwu, assemble_generator(qwu)


# ---------------------------------------------------------------------------
# the lexicographic order

def test_lex_order_skips_terminal_rungs(uhf2, uhf2_order):
    _, qwu = uhf2
    assert uhf2_order.keys == ((1, 1, 1, 1), (2, 1, 1, 1), (3, 1, 1, 1))
    for key, p in zip(uhf2_order.keys, uhf2_order.projections):
        assert p == qwu.q_element(key[0], 0, 0, 1)


def test_lex_order_multi_block_keys(two_block):
    _, qwu, _ = two_block
    order = build_lex_order(qwu)
    assert order.keys == ((1, 1, 1, 1), (1, 1, 2, 1),
                          (2, 1, 1, 1), (2, 1, 1, 2),
                          (2, 1, 2, 1), (2, 1, 2, 2),
                          (2, 2, 1, 1), (2, 2, 2, 1))


def test_lex_order_validation(m2_shape):
    p = Element.unit(m2_shape)
    with pytest.raises(ShapeError):
        LexOrder((), ())
    with pytest.raises(ShapeError):
        LexOrder(((1, 1, 1, 1),), (p, p))
    with pytest.raises(ShapeError):
        LexOrder(((2, 1, 1, 1), (1, 1, 1, 1)), (p, p))


def test_partial_sums_prefix(uhf2_order):
    parts = uhf2_order.partial_sums()
    assert len(parts) == len(uhf2_order) + 1
    assert parts[0].max_abs() == 0.0
    acc = parts[0]
    for p, pn in zip(uhf2_order.projections, parts[1:]):
        acc = acc + p
        assert (pn - acc).max_abs() == 0.0


def test_partial_sums_act_exactly(uhf2_order):
    # the compression law holds with no roundoff at all
    parts = uhf2_order.partial_sums()
    for n, pn in enumerate(parts):
        for m, p in enumerate(uhf2_order.projections, start=1):
            left, right = pn * p, p * pn
            if m <= n:
                assert (left - p).max_abs() == 0.0
                assert (right - p).max_abs() == 0.0
            else:
                assert left.max_abs() == 0.0 and right.max_abs() == 0.0


# ---------------------------------------------------------------------------
# corner eigenvalues

def test_corner_eigenvalues_non_normal():
    shape = AlgebraShape([BlockShape(3, 1)])
    m = np.array([[[1.0, 5.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 7.0]]],
                 dtype=np.complex128)
    d = np.zeros((1, 3, 3), dtype=np.complex128)
    d[0, 0, 0] = d[0, 1, 1] = 1.0
    vals = np.sort_complex(corner_eigenvalues(
        Element(shape, [m]), Element(shape, [d])))
    assert np.allclose(vals, [1.0, 2.0], atol=1e-12)


def test_corner_eigenvalues_pools_samples():
    shape = AlgebraShape([BlockShape(2, 2)])
    m = np.zeros((2, 2, 2), dtype=np.complex128)
    m[0, 0, 0], m[1, 0, 0] = 3.0, 4.0
    m[:, 1, 1] = 9.0
    d = np.zeros((2, 2, 2), dtype=np.complex128)
    d[:, 0, 0] = 1.0
    vals = np.sort_complex(corner_eigenvalues(
        Element(shape, [m]), Element(shape, [d])))
    assert np.allclose(vals, [3.0, 4.0], atol=1e-12)


def test_corner_eigenvalues_zero_rank():
    shape = AlgebraShape([BlockShape(2, 1)])
    with pytest.raises(ShapeError):
        corner_eigenvalues(Element.unit(shape), Element.zero(shape))


# ---------------------------------------------------------------------------
# triangularity conditions

def test_upT_passes_on_block_upper_triangular(rng):
    a, order, _ = block_flag(
        [np.diag([1.0]), np.diag([2.0, 2.1]), np.diag([3.0])], rng)
    rep = verify_upT(a, order)
    assert rep.passed
    row = rep.row("upT-tail")
    assert row.details["monotone"] and row.value <= 1e-12


def test_upT_assembled_generator(uhf2_bundle, uhf2_order):
    rep = verify_upT(uhf2_bundle.generator, uhf2_order,
                     tail_bound=uhf2_bundle.tail_bound)
    assert rep.passed
    assert rep.row("upT-triangular").value == 0.0
    tails = rep.row("upT-tail").details["tails"]
    assert tails[-1] == 0.0
    assert tails[0] == pytest.approx(operator_norm(uhf2_bundle.generator))
    assert rep.row("upT-disjoint-corners").value >= 1e-10
    assert rep.row("upT-invertible-corners").value >= 1e-10


def test_upT_flags_lower_content(rng):
    a, order, _ = block_flag([np.diag([1.0]), np.diag([2.0])], rng)
    m = a.data[0].copy()
    m[0, 1, 0] = 0.25  # below the flag
    rep = verify_upT(Element(a.shape, [m]), order)
    row = rep.row("upT-triangular")
    assert not row.passed
    assert row.value == pytest.approx(0.25, rel=1e-12)
    assert row.details["worst_n"] == 1


def test_upT_equal_spectra_fail(rng):
    a, order, _ = block_flag([np.diag([1.0]), np.diag([1.0])], rng)
    row = verify_upT(a, order).row("upT-disjoint-corners")
    assert not row.passed
    assert row.value == 0.0
    assert row.details["worst_pair"] == [1, 2]


def test_upT_zero_corner_fails():
    a, order, _ = block_flag([np.diag([0.0]), np.diag([2.0])])
    assert not verify_upT(a, order).row("upT-invertible-corners").passed


def test_upT_tail_bound(rng):
    a, order, _ = block_flag([np.diag([1.0]), np.diag([2.0])], rng)
    short = LexOrder(order.keys[:1], order.projections[:1])
    assert not verify_upT(a, short, tail_bound=1e-12).row("upT-tail").passed
    assert verify_upT(a, short, tail_bound=3.0).row("upT-tail").passed


def test_upT_flag_guard(m2_shape):
    overlap = Element.unit(m2_shape)
    order = LexOrder(((1, 1, 1, 1), (2, 1, 1, 1)), (overlap, overlap))
    assert not verify_upT(overlap, order).row("upT-flag").passed


def test_upT_shape_mismatch(uhf2_order, m2_shape):
    with pytest.raises(ShapeError):
        verify_upT(Element.unit(m2_shape), uhf2_order)


# ---------------------------------------------------------------------------
# projection extraction

def test_extract_diagonal_singletons():
    a, order, _ = block_flag([np.diag([1.0]), np.diag([2.0]),
                              np.diag([3.0])])
    ps = extract_projections(a, [[1.0], [2.0], [3.0]])
    for p, q in zip(ps, order.projections):
        assert (p - q).max_abs() <= 1e-12


def test_extract_block_upper_triangular(rng):
    blocks = [np.diag([1.0, 1.05]), np.diag([2.0, 2.05]), np.diag([3.0])]
    a, order, clusters = block_flag(blocks, rng)
    ps = extract_projections(a, clusters)
    for p, q in zip(ps, order.projections):
        assert (p - q).max_abs() <= 1e-8


def test_extract_skewed_idempotent_range():
    # strong coupling makes the spectral idempotent far from orthogonal
    a, order, _ = block_flag([np.diag([1.0]), np.diag([3.0])])
    m = a.data[0].copy()
    m[0, 0, 1] = 10.0
    ps = extract_projections(Element(a.shape, [m]), [[1.0], [3.0]])
    for p, q in zip(ps, order.projections):
        assert (p - q).max_abs() <= 1e-12
        assert (p - p.adjoint()).max_abs() <= 1e-13
        assert (p * p - p).max_abs() <= 1e-13


def test_extract_assembled_uhf2(uhf2_bundle, uhf2_order):
    gen = uhf2_bundle.generator
    clusters = [corner_eigenvalues(gen, p) for p in uhf2_order.projections]
    ps = extract_projections(gen, clusters)
    worst = max((p - q).max_abs()
                for p, q in zip(ps, uhf2_order.projections))
    assert worst <= 1e-6


def test_extract_three_block_af(three_block):
    _, qwu, bundle = three_block
    order = build_lex_order(qwu)
    clusters = [corner_eigenvalues(bundle.generator, p)
                for p in order.projections]
    ps = extract_projections(bundle.generator, clusters)
    worst = max((p - q).max_abs() for p, q in zip(ps, order.projections))
    assert worst <= 1e-6


def test_extract_guards():
    a, _, _ = block_flag([np.diag([1.0]), np.diag([2.0])])
    assert extract_projections(a, []) == []
    with pytest.raises(SpectralGapError, match="collide"):
        extract_projections(a, [[1.0], [1.0 + 5e-11]])
    with pytest.raises(SpectralGapError, match="zero"):
        extract_projections(a, [[5e-11], [2.0]])
    with pytest.raises(SpectralGapError, match="empty"):
        extract_projections(a, [[], [2.0]])


# ---------------------------------------------------------------------------
# action identities

@pytest.mark.parametrize("case", ["uhf2_case", "goodearl", "two_block",
                                  "three_block"])
def test_action_oracles_exact(request, case):
    _, qwu, bundle = request.getfixturevalue(case)
    rep = action_oracles(bundle, qwu)
    assert rep.passed
    assert max(row.value for row in rep.rows) == 0.0


def test_action_oracle_rows_complete(uhf2_case):
    _, qwu, bundle = uhf2_case
    rep = action_oracles(bundle, qwu)
    assert {row.check for row in rep.rows} == {
        "action-qG", "action-qG-offstage", "action-qGq", "action-Gq",
        "action-Gq-stages", "action-PGq", "action-qGP", "action-Pp"}
    tags = {row.check: row.tag for row in rep.rows}
    assert tags["action-qGq"] == "(E:qGq)"
    assert tags["action-PGq"] == "(E:PGq)"
    assert tags["action-Pp"] == "(E:Pp)"


def test_action_oracles_catch_corruption(uhf2_case):
    _, qwu, bundle = uhf2_case
    bad = dataclasses.replace(
        bundle,
        generator=bundle.generator + 1e-3 * qwu.w_element(1, 0, 0, 2))
    rep = action_oracles(bad, qwu)
    assert not rep.passed
    row = rep.row("action-qG")
    assert not row.passed
    assert row.value == pytest.approx(1e-3, rel=1e-12)
    assert row.details["worst"] == [1, 1, 1, 1]


def test_action_oracles_missing_coefficient(uhf2_case):
    _, qwu, bundle = uhf2_case
    with pytest.raises(AssemblyError, match="no coefficient"):
        action_oracles(bundle, qwu, lambdas=LambdaSet(()))


# ---------------------------------------------------------------------------
# scaffold recovery

def test_recover_uhf2(uhf2_case):
    _, qwu, bundle = uhf2_case
    rep = recover_scaffold(bundle, qwu)
    assert rep.passed
    assert rep.row("recover-g").value == 0.0
    assert rep.row("recover-w").value == 0.0
    assert rep.row("recover-w").details["count"] == 6
    row = rep.row("recover-d")
    assert row.value <= 1e-8
    assert len(row.details["dims"]) == 3


def test_recover_three_block_groups(three_block):
    # first, middle, and last groups all recover through the quotients
    _, qwu, bundle = three_block
    rep = recover_scaffold(bundle, qwu, check_membership=False)
    assert rep.passed
    assert rep.row("recover-w").value == 0.0
    assert rep.row("recover-w").details["count"] == 24
    assert all(row.check != "recover-d" for row in rep.rows)


def test_recover_goodearl_membership(goodearl):
    _, qwu, bundle = goodearl
    rep = recover_scaffold(bundle, qwu)
    assert rep.passed
    assert rep.row("recover-d").value <= 1e-6


def test_recover_catches_corrupted_coefficient(two_block):
    _, qwu, bundle = two_block
    tweak = (2, 0, 0, 2)
    entries = tuple((idx, v * 1.001 if idx == tweak else v)
                    for idx, v in bundle.lambdas.entries)
    rep = recover_scaffold(bundle, qwu, lambdas=LambdaSet(entries),
                           check_membership=False)
    assert rep.row("recover-g").value == 0.0
    row = rep.row("recover-w")
    assert not row.passed
    assert row.value == pytest.approx(1.0 - 1.0 / 1.001, rel=1e-12)
    assert row.details["worst"] == [2, 1, 1, 2]


# ---------------------------------------------------------------------------
# generation

def test_generation_uhf2(uhf2_case):
    _, qwu, bundle = uhf2_case
    rep = verify_single_generation(bundle, qwu)
    assert rep.passed
    assert rep.row("generation-targets").value <= 1e-4
    assert rep.row("generation-targets").details["count"] == 87
    assert rep.row("generation-units").value <= 1e-8
    assert rep.row("generation-ds").value <= 1e-8
    # deterministic early stop once every target clears tolerance
    assert rep.row("generation-closure").value == 252.0
    assert rep.row("generation-tail").value == 2.0 ** -4


def test_generation_goodearl(goodearl):
    _, qwu, bundle = goodearl
    rep = verify_single_generation(bundle, qwu)
    assert rep.passed
    assert rep.row("generation-targets").value <= 1e-3
    assert rep.row("generation-closure").value == 192.0  # saturates


def test_generation_targets_names(uhf2_case):
    _, qwu, _ = uhf2_case
    targets = generation_targets(qwu)
    assert len(targets) == 87
    assert "unit-1.0:0.0" in targets and "unit-3.0:7.7" in targets
    assert "d-1" in targets and "d-3" in targets
    shp = qwu.snapshot.shape(qwu.snapshot.depth)
    assert all(t.shape == shp for t in targets.values())
    a, b, c = (targets[f"unit-2.0:{p}"] for p in ("0.1", "1.3", "0.3"))
    assert (a * b - c).max_abs() == 0.0


def test_generation_saturates_ambient(uhf2_case):
    # run to stabilization instead of stopping at the targets: the single
    # element generates the whole snapshot algebra
    _, _, bundle = uhf2_case
    basis = word_closure([bundle.generator],
                         ClosurePolicy(word_length=14, rank_tol=1e-10))
    assert basis.dim == bundle.generator.shape.flat_dim


def test_generation_honest_miss(uhf2_case):
    # words of length two cannot reach the deep units; the miss stays a
    # failing row rather than an exception
    _, qwu, bundle = uhf2_case
    policy = ClosurePolicy(word_length=2, rank_tol=1e-10, target_tol=1e-4)
    rep = verify_single_generation(bundle, qwu, policy=policy)
    assert not rep.passed
    row = rep.row("generation-targets")
    assert row.value > 1e-4
    assert not rep.row("generation-closure").details["stabilized"]


def test_generation_resource_cap(uhf2_case):
    _, qwu, bundle = uhf2_case
    policy = ClosurePolicy(word_length=14, rank_tol=1e-10, max_dim=16,
                           target_tol=1e-4)
    with pytest.raises(ResourceError, match="dimension cap"):
        verify_single_generation(bundle, qwu, policy=policy)


def test_generation_minimal_truncation():
    snap = build_system(preset_params("uhf2"), depth=2)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 1))
    bundle = assemble_generator(qwu)
    rep = verify_single_generation(bundle, qwu)
    assert rep.passed
    assert rep.row("generation-units").value <= 1e-8
    assert rep.row("generation-closure").value >= 4.0


# ---------------------------------------------------------------------------
# implications between the layers

def test_upT_follows_synthesis_certificates(uhf2_case, goodearl):
    for _, qwu, bundle in (uhf2_case, goodearl):
        assert all(cert.passed for cert in bundle.certificates)
        rep = verify_upT(bundle.generator, build_lex_order(qwu),
                         tail_bound=bundle.tail_bound)
        assert rep.passed


def test_collision_traces_to_coefficient_violation(two_block):
    # a coefficient pushed onto a corner eigenvalue violates the avoidance
    # invariant upstream and exactly the disjointness condition downstream
    _, qwu, bundle = two_block
    g21 = bundle.families[1][0]
    hit = float(np.sort(
        corner_eigenvalues(g21, qwu.q_element(2, 0, 0, 1)).real)[0])
    assert min(abs(v - hit) for v in bundle.lambdas.values()) > 1e-9
    entries = tuple((idx, hit if idx == (2, 0, 0, 2) else v)
                    for idx, v in bundle.lambdas.entries)
    lam = LambdaSet(entries)
    assert any(v == hit for v in lam.values())
    gp, _ = assemble_Gi(qwu, bundle.families[1], lam, 2)
    rep = verify_upT(bundle.stage_terms[0] + gp, build_lex_order(qwu))
    row = rep.row("upT-disjoint-corners")
    assert not row.passed
    assert row.value <= 1e-12
    assert row.details["worst_pair"] == [3, 4]
    assert rep.row("upT-triangular").passed
