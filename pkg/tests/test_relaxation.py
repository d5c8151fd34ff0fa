from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import instance, relaxation
from oracles import ac_points, one_bus, one_bus_cost
from hucsdp.relaxation import RelaxOptions, build_p1, extract_block, lift, solve_p1, vname, xname
from hucsdp.sdpproblem import read_sdpa, write_sdpa
from hucsdp.sdpsolver import solve


def families(prob):
    return Counter(c.name.split("[")[0] for c in prob.constraints)


def test_one_bus_block_structure():
    inst = one_bus([50.0])
    prob = build_p1(inst)
    dims = sorted(prob.blocks.values())
    assert dims == [2, 3, 3]
    assert prob.blocks[vname(0)] == 2
    assert families(prob)["unique"] == 1


def test_startup_rows_per_hour():
    prob = build_p1(one_bus([50.0, 60.0]))
    assert families(prob)["startup"] == 2


@pytest.mark.parametrize("name", ["small", "medium", "large"])
def test_row_counts_closed_form(name):
    inst = instance(name)
    T, H = inst.horizon, inst.n_plant
    NB, NL = inst.network.n_bus, inst.network.n_line
    NU = sum(len(p.configs) for p in inst.plants)
    fam = families(build_p1(inst))
    assert fam["pbal"] == fam["qbal"] == T * NB
    assert fam["flow+"] + fam["flow-"] == 2 * T * NL
    assert fam["vmax"] == fam["vmin"] == T * (NB - 1)
    assert fam["vslack_e"] == fam["vslack_f"] == T
    assert fam["target"] == H - 1
    assert fam["pmax"] == fam["pmin"] == fam["qmax"] == fam["qmin"] == T * NU
    assert fam["rltp"] == fam["rltq"] == fam["xle1"] == T * NU
    assert fam["vol_max"] == fam["vol_min"] == T * H
    assert fam["unique"] == fam["startup"] == fam["ymax"] == T * H
    assert len(build_p1(inst).blocks) == T * (NU + 1)


def test_optional_cuts_can_be_dropped(small):
    fam = families(build_p1(small, RelaxOptions(x_le_one=False, rlt_cuts=False, y_upper=False)))
    assert fam["xle1"] == fam["rltp"] == fam["ymax"] == 0


def test_extract_block_examples():
    Xb = np.zeros((3, 3))
    Xb[1, 1] = 1.0
    Xb[0, 1] = Xb[1, 0] = 10.0
    x, dp, _, pu, _ = extract_block(Xb, 40.0, 0.0, 1.0)
    assert (x, dp, pu) == pytest.approx((1.0, 10.0, 50.0))
    x, dp, _, pu, qu = extract_block(np.zeros((3, 3)), 40.0, -5.0, 1.0)
    assert (x, dp, pu, qu) == (0.0, 0.0, 0.0, 0.0)


@given(st.floats(0, 2), st.floats(0.01, 1), st.floats(-2, 2), st.floats(0, 100), st.floats(-50, 50))
def test_extract_block_round_trips_rank_one(dp, x, dq, pmin, qmin):
    v = np.array([dp * x, x, dq * x])
    x_, dp_, dq_, pu, qu = extract_block(np.outer(v, v) / x, pmin, qmin, 100.0)
    assert x_ == pytest.approx(x)
    assert dp_ == pytest.approx(dp * 100.0)
    assert dq_ == pytest.approx(dq * 100.0, abs=1e-9)
    assert pu == pytest.approx(dp * x * 100.0 + pmin * x)


def test_relaxation_solution_invariants(small):
    rel, _ = relaxation("small")
    assert all(-1e-6 <= v <= 1 + 1e-6 for v in rel.x.values())
    assert rel.max_uniqueness_error() <= 1e-6


def test_lift_of_power_flow_points_is_feasible(small):
    prob = build_p1(small)
    for pt in ac_points(small, 3, seed=1):
        X, y = lift(small, pt["config"], pt["p"], pt["q"], pt["e"], pt["f"], pt["y"])
        assert prob.max_violation(X, y) <= 1e-9
        cost = 0.0
        for t in range(small.horizon):
            for h, plant in enumerate(small.plants):
                c = plant.config(int(pt["config"][t, h]))
                p = pt["p"][t, h]
                cost += plant.water_value * small.theta * (c.alpha * p * p + c.beta * p + c.gamma)
                cost += plant.startup_cost * pt["y"][t, h]
        assert prob.objective_value(X, y) == pytest.approx(cost, rel=1e-12)


def test_sdpa_round_trip(tmp_path, small):
    prob = build_p1(small)
    write_sdpa(prob, tmp_path / "p1.dat-s")
    back = read_sdpa(tmp_path / "p1.dat-s")
    # inequalities come back as equalities with explicit slacks in the diagonal block
    assert len(back.constraints) == len(prob.constraints)
    assert sorted(b for b in back.blocks.values()) == sorted(prob.blocks.values())
    rel, _ = relaxation("small")
    sol = solve(back)
    assert sol.pobj == pytest.approx(rel.objective, rel=1e-7)


@settings(max_examples=10)
@given(st.floats(25.0, 55.0))
def test_one_bus_relaxation_bounds_closed_form(load):
    inst = one_bus([load])
    rel, _ = solve_p1(inst)
    best = min(c for c in (one_bus_cost(inst, [[u]]) for u in (1, 2)) if c is not None)
    assert rel.objective <= best + 1e-6 * best
    assert xname(0, 0, 1) in rel.solution.X
