"""Scaffold tables, product laws, coefficient ladder, and the
partial-isometry closure certificates."""

import numpy as np
import pytest

from stargen.bratteli import BratteliData, StageSelection, select_stages
from stargen.elements import Element
from stargen.errors import InsufficientDepth, LambdaCollision, ShapeError
from stargen.linalg import check_matrix_unit_axioms, word_closure, ClosurePolicy
from stargen.presets import preset_params
from stargen.scaffold import (
    build_lambda, build_qwu, matrix_units_from_U, partial_iso_closure_check,
    verify_qwu,
)
from stargen.system import af_system_from_bratteli, build_system


@pytest.fixture(scope="module")
def uhf2():
    snap = build_system(preset_params("uhf2"), depth=4)
    return snap, build_qwu(snap, select_stages(snap.af_skeleton, 3))


@pytest.fixture(scope="module")
def two_block():
    data = BratteliData(((2, 2), (8, 8), (32, 32)),
                        (((2, 2), (2, 2)), ((2, 2), (2, 2))))
    snap = af_system_from_bratteli(data)
    return snap, build_qwu(snap, select_stages(data, 3))


# ---------------------------------------------------------------------------
# index tables

def test_stage1_takes_all_diagonal_units(uhf2):
    _, qwu = uhf2
    assert qwu.q_positions[0] == (((0, 1),),)
    assert qwu.range_rows[0] == (0,)


def test_uhf2_tables_follow_anchor_refinement(uhf2):
    _, qwu = uhf2
    # anchor 1 through copy offsets (0, 2), then anchor 3 through (0, 4)
    assert qwu.q_positions[1] == (((1, 3),),)
    assert qwu.q_positions[2] == (((3, 7),),)
    assert qwu.range_rows == ((0,), (1,), (3,))
    assert qwu.M(2, 0, 0) == 2


def test_villadsen_tables():
    snap = build_system(preset_params("villadsen-small"), depth=3)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 2))
    assert qwu.q_positions[1] == (((1, 3, 5),),)
    assert qwu.u_columns(2, 0) == (1, 0, 2, 3, 4, 5)


def test_two_block_tables(two_block):
    _, qwu = two_block
    assert qwu.q_positions[1] == (((1, 3), (1, 3)), ((5, 7), (5, 7)))
    assert qwu.q_positions[2] == (((7, 15), (7, 15)), ((23, 31), (23, 31)))
    assert qwu.range_rows[2] == (7, 7)


def test_build_is_deterministic(uhf2):
    snap, qwu = uhf2
    again = build_qwu(snap, select_stages(snap.af_skeleton, 3))
    assert again.q_positions == qwu.q_positions
    assert again.range_rows == qwu.range_rows


def test_selection_must_match_skeleton(uhf2):
    snap, _ = uhf2
    other = BratteliData(((2,), (4,)), (((2,),),))
    with pytest.raises(ShapeError):
        build_qwu(snap, StageSelection(other, (1, 2)))


def test_anchor_partition_example(uhf2):
    # the two stage-2 projections sum to the stage-1 anchor exactly
    _, qwu = uhf2
    total = qwu.q_element(2, 0, 0, 1) + qwu.q_element(2, 0, 0, 2)
    assert (total - qwu.anchor_projection(1, 0)).max_abs() == 0.0
    shape_n = qwu.snapshot.shape(qwu.snapshot.depth)
    assert qwu.anchor_projection(0, 0) == Element.unit(shape_n)


def test_first_q_is_the_common_range(uhf2):
    _, qwu = uhf2
    for i in (1, 2, 3):
        assert qwu.q_element(i, 0, 0, 1) == qwu.w_element(i, 0, 0, 1)
        assert qwu.u_element(i, 0, 1) == qwu.w_element(i, 0, 0, 1)


# ---------------------------------------------------------------------------
# the product laws

@pytest.mark.parametrize("name,depth,trunc", [
    ("uhf2", 4, 3), ("goodearl", 3, 2), ("villadsen-small", 3, 2),
])
def test_verify_qwu_presets_exact(name, depth, trunc):
    snap = build_system(preset_params(name), depth=depth)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, trunc))
    report = verify_qwu(qwu)
    assert report.passed, report.failures()
    assert all(r.value == 0.0 for r in report.rows)


def test_verify_qwu_two_block_exercises_all_laws(two_block):
    _, qwu = two_block
    report = verify_qwu(qwu)
    assert report.passed, report.failures()
    assert report.row("qwu-prod-distant").details["pairs"] > 0
    assert report.row("qwu-prod-adjacent").details["pairs"] > 0
    assert all(r.value == 0.0 for r in report.rows)


def test_verify_qwu_detects_bad_position(uhf2):
    snap, _ = uhf2
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 3))
    # move a stage-2 projection out of the anchor's partition
    qwu.q_positions = (qwu.q_positions[0], (((1, 2),),), qwu.q_positions[2])
    report = verify_qwu(qwu)
    assert not report.passed
    assert not report.row("qwu-partition").passed


# ---------------------------------------------------------------------------
# the coefficient ladder

def test_lambda_stage1_values(uhf2):
    _, qwu = uhf2
    lam = build_lambda(qwu, [])
    assert lam.lam(1, 0, 0, 1) == 2.0 ** -7
    assert lam.lam(1, 0, 0, 2) == 2.0 ** -8
    assert lam.lam(2, 0, 0, 1) == 2.0 ** -8 * (1 - 2.0 ** -10)


def test_lambda_budget_and_distinctness(two_block):
    _, qwu = two_block
    lam = build_lambda(qwu, [])
    values = lam.values()
    assert len(set(values)) == len(values)
    assert all(v > 0 for v in values)
    for i in (1, 2, 3):
        assert lam.stage_sum(i) <= 2.0 ** (-i - 5)
    # ladder descends within each stage in lex order
    assert lam.stage_values(2) == sorted(lam.stage_values(2), reverse=True)


def test_lambda_nudges_off_spectrum(uhf2):
    _, qwu = uhf2
    lam = build_lambda(qwu, [np.array([2.0 ** -7, 0.3])])
    first = lam.lam(1, 0, 0, 1)
    assert first != 2.0 ** -7
    assert abs(first - 2.0 ** -7) >= 1e-9
    assert first == 2.0 ** -7 * (1 - 1e-6)
    # untouched values remain on the ladder
    assert lam.lam(1, 0, 0, 2) == 2.0 ** -8


def test_lambda_collision(uhf2):
    _, qwu = uhf2
    # saturate the whole reachable nudge range of the first coefficient
    wall = np.linspace(2.0 ** -7 * (1 - 1.2e-4), 2.0 ** -7 * (1 + 1e-6), 4000)
    with pytest.raises(LambdaCollision):
        build_lambda(qwu, [wall])


# ---------------------------------------------------------------------------
# partial-isometry closure

def test_iso_closure_passes(uhf2):
    snap, qwu = uhf2
    for i in (1, 2):
        report = partial_iso_closure_check(qwu, snap, i)
        assert report.passed, report.failures()
        assert report.row("iso-index").value == 0.0


def test_iso_closure_dimension_is_full_block():
    snap = build_system(preset_params("uhf2"), depth=2)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 2))
    gens = [snap.pushed_skeleton_unit(1, 0, a, b)
            for a in range(2) for b in range(2)]
    gens += [qwu.w_element(2, 0, 0, k) for k in (1, 2)]
    basis = word_closure(gens, ClosurePolicy(word_length=6))
    assert basis.dim == 16


def test_iso_closure_bounds(uhf2):
    snap, qwu = uhf2
    with pytest.raises(ShapeError):
        partial_iso_closure_check(qwu, snap, 3)
    with pytest.raises(ShapeError):
        partial_iso_closure_check(qwu, snap, 0)


def test_iso_closure_detects_corruption():
    snap = build_system(preset_params("uhf2"), depth=4)
    qwu = build_qwu(snap, select_stages(snap.af_skeleton, 3))
    # both stage-2 sources inside the first copy: the second copy becomes
    # unreachable from the common range row
    qwu.q_positions = (qwu.q_positions[0], (((1, 0),),), qwu.q_positions[2])
    report = partial_iso_closure_check(qwu, snap, 1)
    assert not report.passed
    assert not report.row("iso-closure[0]").passed
    assert not report.row("iso-index").passed


# ---------------------------------------------------------------------------
# matrix units from U

def test_matrix_units_m2_example():
    e11 = Element.from_matrix([[1, 0], [0, 0]])
    e12 = Element.from_matrix([[0, 1], [0, 0]])
    fam = matrix_units_from_U([e11, e12])
    assert set(fam) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert np.array_equal(fam[(1, 0)].data[0][0], [[0, 0], [1, 0]])
    assert np.array_equal(fam[(1, 1)].data[0][0], [[0, 0], [0, 1]])
    rep = check_matrix_unit_axioms(fam, Element.from_matrix(np.eye(2)))
    assert rep.passed and rep.max_violation == 0.0


def test_matrix_units_single():
    one = Element.from_matrix([[1.0]])
    fam = matrix_units_from_U([one])
    assert list(fam) == [(0, 0)]
    assert fam[(0, 0)] == one


def test_matrix_units_from_scaffold_block(uhf2):
    snap, qwu = uhf2
    fam = matrix_units_from_U(
        [qwu.u_element(3, 0, k) for k in range(1, 9)])
    assert len(fam) == 64
    rep = check_matrix_unit_axioms(
        fam, Element.unit(snap.shape(snap.depth)))
    assert rep.passed, rep
    assert rep.max_violation == 0.0


def test_empty_u_rejected():
    with pytest.raises(ShapeError):
        matrix_units_from_U([])
