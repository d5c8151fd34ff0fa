import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import instance, relaxation
from oracles import enumerate_milp, one_bus
from hucsdp.fixtures import FixtureSpec, generate
from hucsdp.rounding import (
    CommitmentSchedule,
    InfeasibleRounding,
    OmegaSets,
    _solve_node,
    aggregate_dispatch,
    build_p2,
    classify,
    round_relaxation,
    solve_bb,
)
from hucsdp.sdpsolver import SolverOptions


def test_classify_examples():
    om = classify({(0, 0, 1): 1.0, (0, 0, 2): 0.0})
    assert om.omega2 == {(0, 0, 1)} and om.zero == {(0, 0, 2)} and not om.omega1
    om = classify({(0, 0, 1): 0.5, (0, 0, 2): 0.5})
    assert om.omega1 == {(0, 0, 1), (0, 0, 2)}
    om = classify({(0, 0, 1): 0.99995, (0, 0, 2): 0.00005}, eps_bin=1e-4)
    assert om.omega2 == {(0, 0, 1)} and om.zero == {(0, 0, 2)} and not om.omega1


@given(st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 2), st.integers(1, 3)), st.floats(0, 1)))
def test_classify_partitions(x):
    om = classify(x)
    assert om.omega1 | om.omega2 | om.zero == set(x)
    assert not (om.omega1 & om.omega2) and not (om.omega1 & om.zero) and not (om.omega2 & om.zero)


def test_aggregate_examples():
    inst = one_bus([50.0])
    assert aggregate_dispatch({(0, 0, 1): 50.0}, inst)[0, 0] == 50.0
    assert aggregate_dispatch({(0, 0, 1): 30.0, (0, 0, 2): 20.0}, inst)[0, 0] == 50.0
    assert aggregate_dispatch({(0, 0, 1): 0.0, (0, 0, 2): 0.0}, inst)[0, 0] == 0.0


def _two_candidate_milp():
    inst = one_bus([50.0], startup_cost=1.0, initial_config=1)
    om = OmegaSets({(0, 0, 1), (0, 0, 2)}, set(), set())
    milp = build_p2(inst, om, [[50.0]])
    col = {k: j for j, k in enumerate(milp.keys)}
    milp.c[col[("x", 0, 0, 1)]] = 8.0
    milp.c[col[("x", 0, 0, 2)]] = 7.5
    return milp


def test_cheaper_water_loses_to_startup():
    milp = _two_candidate_milp()
    val, assign = enumerate_milp(milp)
    assert assign == {(0, 0): 1} and val == pytest.approx(8.0)
    sched, stats = solve_bb(milp)
    assert sched.config[0, 0] == 1 and sched.y[0, 0] == 0
    assert stats.objective == pytest.approx(8.0)


def test_out_of_range_candidate_excluded():
    inst = one_bus([70.0])  # config 1 tops out at 60 MW
    milp = build_p2(inst, OmegaSets({(0, 0, 1), (0, 0, 2)}, set(), set()), [[70.0]])
    assert milp.candidates == {(0, 0): [2]}


def test_no_candidate_raises():
    inst = one_bus([10.0])  # below both minimums
    with pytest.raises(InfeasibleRounding, match="hour 0"):
        build_p2(inst, OmegaSets({(0, 0, 1), (0, 0, 2)}, set(), set()), [[10.0]])


def test_forced_startup():
    inst = one_bus([70.0, 50.0], initial_config=1)
    om = OmegaSets({(0, 0, 1), (0, 0, 2)}, {(1, 0, 1)}, {(1, 0, 2)})
    sched, stats = solve_bb(build_p2(inst, om, [[70.0], [50.0]]))
    assert sched.config[:, 0].tolist() == [2, 1]
    assert sched.y[0, 0] == 1
    sched.check(inst)


def test_integral_relaxation_skips_branching():
    milp = _two_candidate_milp()
    milp.c[:] = [1.0, 2.0, 0.0]  # config 1 is cheaper and needs no startup
    _, stats = solve_bb(milp)
    assert stats.nodes == 1


def test_fully_decided_schedule_read_directly():
    inst = one_bus([50.0, 50.0])

    class Rel:
        x = {(0, 0, 1): 1.0, (0, 0, 2): 0.0, (1, 0, 1): 0.0, (1, 0, 2): 1.0}
        p_unit = {}

    sched, _, _, stats = round_relaxation(inst, Rel)
    assert stats is None
    assert sched.config[:, 0].tolist() == [1, 2] and sched.y[:, 0].tolist() == [0, 1]


@st.composite
def random_rounding(draw):
    seed = draw(st.integers(0, 10**6))
    inst = generate(FixtureSpec("r", n_bus=3, n_plant=draw(st.integers(1, 3)), horizon=draw(st.integers(1, 4)),
                                extra_lines=1, max_units=3, seed=seed))
    rng = np.random.default_rng(seed)
    om1, om2, zero = set(), set(), set()
    p_star = np.zeros((inst.horizon, inst.n_plant))
    greedy_x = {}
    for t in range(inst.horizon):
        for h, plant in enumerate(inst.plants):
            us = [c.u for c in plant.configs]
            if rng.random() < 0.3:
                u = int(rng.choice(us))
                om2.add((t, h, u))
                zero.update((t, h, v) for v in us if v != u)
                c = plant.config(u)
            else:
                cand = [u for u in us if rng.random() < 0.8] or us
                om1.update((t, h, u) for u in cand)
                zero.update((t, h, v) for v in us if v not in cand)
                for u in cand:
                    greedy_x[(t, h, u)] = rng.random()
                c = plant.config(int(rng.choice(cand)))
            p_star[t, h] = rng.uniform(c.p_min, c.p_max)
    return inst, OmegaSets(om1, om2, zero), p_star, greedy_x


@settings(max_examples=40)
@given(random_rounding())
def test_bb_matches_enumeration(case):
    inst, om, p_star, greedy_x = case
    milp = build_p2(inst, om, p_star)
    assume(math.prod(len(v) for v in milp.candidates.values()) <= 2**12)
    val, assign = enumerate_milp(milp)
    sched, stats = solve_bb(milp)
    assert stats.objective == pytest.approx(val, rel=1e-9, abs=1e-9)
    sched.check(inst)
    # greedy pick of the largest relaxed value is never better
    greedy = {k: max(us, key=lambda u: greedy_x[(k[0], k[1], u)]) for k, us in milp.candidates.items()}
    assert stats.objective <= milp.evaluate(greedy) + 1e-9 * (1 + abs(val))


@settings(max_examples=15)
@given(random_rounding())
def test_startups_integral_at_optimum(case):
    inst, om, p_star, _ = case
    milp = build_p2(inst, om, p_star)
    assume(milp.candidates)
    sched, _ = solve_bb(milp)
    col = {k: j for j, k in enumerate(milp.keys)}
    fixed = {col[("x", t, h, u)]: int(sched.config[t, h] == u) for (t, h), us in milp.candidates.items() for u in us}
    z, _ = _solve_node(milp, fixed, SolverOptions(tol=1e-10))
    ys = np.array([z[j] for j, k in enumerate(milp.keys) if k[0] == "y"])
    assert np.max(np.abs(ys - np.round(ys))) <= 1e-9


@settings(max_examples=10)
@given(random_rounding())
def test_worker_count_does_not_change_result(case):
    inst, om, p_star, _ = case
    milp = build_p2(inst, om, p_star)
    a, sa = solve_bb(milp, workers=1)
    b, sb = solve_bb(milp, workers=4)
    assert np.array_equal(a.config, b.config) and sa.objective == sb.objective


@pytest.mark.parametrize("name", ["small", "medium"])
def test_fixture_rounding_matches_enumeration(name):
    inst = instance(name)
    rel, _ = relaxation(name)
    milp = build_p2(inst, classify(rel.x), aggregate_dispatch(rel, inst))
    val, assign = enumerate_milp(milp)
    sched, stats = solve_bb(milp)
    assert np.array_equal(sched.config, milp.configs(assign))
    assert stats.objective == val


def test_schedule_check_rejects_missing_startup(small):
    cfg = np.full((small.horizon, small.n_plant), 2)
    sched = CommitmentSchedule(cfg, np.zeros(cfg.shape))
    with pytest.raises(ValueError, match="startups"):
        sched.check(small)
    CommitmentSchedule.from_configs(small, cfg).check(small)


def test_lp_dump(tmp_path):
    milp = _two_candidate_milp()
    milp.write_lp(tmp_path / "p2.lp")
    text = (tmp_path / "p2.lp").read_text()
    assert "Binary" in text and "unique_0_0" in text and "startup_0_0" in text
