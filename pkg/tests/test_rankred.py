import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from oracles import opf_point
from hucsdp.rankred import (
    ConstraintSet,
    RankReductionError,
    Termination,
    find_psd_combination,
    reduce,
    step_omega,
)
from hucsdp.reopt import zname
from hucsdp.symmat import EPS_PSD, numerical_rank


def cset(*mats, objective=None):
    mats = [np.asarray(M, dtype=float) for M in mats]
    return ConstraintSet(mats, [f"m{i}" for i in range(len(mats))], ["other"] * len(mats), objective)


def test_single_pin_reaches_rank_one():
    rep = reduce(np.eye(2), cset(np.diag([1.0, 0.0])))
    assert rep.reason == Termination.RANK1
    assert rep.ranks == [2, 1]
    assert np.allclose(rep.Z, np.diag([1.0, 0.0]))


def test_trace_constraint_stalls():
    rep = reduce(np.eye(2), cset(np.eye(2)))
    assert rep.reason == Termination.STALLED
    assert rep.final_rank == 2
    assert np.allclose(rep.Z, np.eye(2))


def test_find_psd_combination_examples():
    assert find_psd_combination([np.diag([1.0, -1.0]), np.diag([-1.0, 1.0])]) is None
    assert np.allclose(find_psd_combination([np.diag([0.0, 1.0])]), np.diag([0.0, 1.0]))
    assert find_psd_combination([np.diag([1.0, -1.0])]) is None
    assert np.allclose(find_psd_combination([np.diag([0.0, -1.0])]), np.diag([0.0, 1.0]))


def test_step_omega_examples():
    assert step_omega(np.diag([2.0, 1.0])) == pytest.approx(-0.5)
    assert step_omega(np.eye(2)) == pytest.approx(-1.0)
    S = np.diag([1.0, 0.0])
    assert np.allclose(np.eye(2) + step_omega(S) * S, np.diag([0.0, 1.0]))
    with pytest.raises(RankReductionError):
        step_omega(np.zeros((2, 2)))


@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_step_omega_makes_singular_psd(seed, n):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    S = G @ G.T
    w = np.linalg.eigvalsh(np.eye(n) + step_omega(S) * S)
    assert w[0] >= -1e-12 and abs(w[0]) <= 1e-9


def test_rejects_indefinite_input():
    with pytest.raises(RankReductionError):
        reduce(np.diag([1.0, -1.0]), cset(np.diag([1.0, 0.0])))


def test_rejects_dimension_mismatch():
    with pytest.raises(RankReductionError):
        reduce(np.eye(3), cset(np.eye(2)))


@pytest.mark.parametrize("seed", range(4))
def test_three_bus_rank_three_reduces(seed):
    inst, prob, Z = opf_point(seed, n_bus=3, n_plant=2, mix=1)
    assert numerical_rank(Z) == 3
    X = {zname(0): Z}
    rep = reduce(Z, ConstraintSet.from_problem(prob, zname(0), X, include_objective=True))
    assert rep.final_rank <= 2
    assert prob.max_violation({zname(0): rep.Z}, {}) <= 1e-7


def check_report(Z, cons, rep):
    """Every per-iteration invariant; returns the number of steps taken."""
    v0 = cons.values(Z)
    assert all(r * cons.scale() <= 1e-7 for r in rep.residuals)
    assert np.max(np.abs(cons.values(rep.Z) - v0), initial=0.0) <= 1e-7
    assert all(m >= -EPS_PSD for m in rep.min_eig)
    assert all(a > b for a, b in zip(rep.ranks, rep.ranks[1:]))
    assert all(d <= 1e-8 for d in rep.objective_drift)
    return len(rep.ranks) - 1


@settings(max_examples=25)
@given(st.integers(0, 10**6))
@example(10**6)  # eigen-tail just under eps_rank against a stencil of scale ~70
def test_random_opf_points_keep_invariants(seed):
    case = opf_point(seed)
    if case is None:
        return
    _, prob, Z = case
    cons = ConstraintSet.from_problem(prob, zname(0), {zname(0): Z}, include_objective=True)
    check_report(Z, cons, reduce(Z, cons))


def test_objective_in_span_is_invariant():
    # the objective is a combination of the constraint stencils, so it cannot drift
    rng = np.random.default_rng(4)
    A, B = np.diag([1.0, 0.0, 0.0]), np.zeros((3, 3))
    B[0, 1] = B[1, 0] = 1.0
    C = 2.0 * A - 3.0 * B
    G = rng.standard_normal((3, 3))
    Z = G @ G.T
    rep = reduce(Z, cset(A, B))
    assert rep.final_rank < 3
    assert abs(np.sum(C * rep.Z) - np.sum(C * Z)) <= 1e-8 * max(1.0, abs(np.sum(C * Z)))


def test_deterministic():
    _, prob, Z = opf_point(7)
    cons = ConstraintSet.from_problem(prob, zname(0), {zname(0): Z}, include_objective=True)
    a, b = reduce(Z, cons), reduce(Z, cons)
    assert a.ranks == b.ranks and np.array_equal(a.Z, b.Z)
