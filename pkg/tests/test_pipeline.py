import numpy as np
import pytest

from conftest import bb, instance, relaxation, rh
from oracles import all_schedules, one_bus, one_bus_cost
from hucsdp.fixtures import FixtureSpec, generate
from hucsdp.pipeline import (
    PipelineError,
    PipelineOptions,
    bench,
    format_table,
    pin_rows,
    report_json,
    solve_bb,
    solve_rh,
    solve_sdp,
)
from hucsdp.relaxation import build_p1, extract
from hucsdp.reopt import OpfInfeasible, build_opf, solve_opf
from hucsdp.rounding import CommitmentSchedule
from hucsdp.sdpsolver import Status, solve


def rel_tol(v):
    return 1e-6 * max(1.0, abs(v))


@pytest.mark.parametrize("name", ["small", "medium"])
def test_rh_solution_is_consistent(name):
    res = rh(name)
    inst = instance(name)
    res.schedule.check(inst)
    assert res.gap >= -rel_tol(res.lower_bound)
    assert res.info["balance_residual_after"] <= res.info["balance_residual_before"] + 1e-7
    assert set(res.timings) >= {"relax", "round", "reopt", "rankred", "total"}


def test_rh_is_deterministic(small):
    a, b = solve_rh(small), solve_rh(small)
    assert np.array_equal(a.schedule.config, b.schedule.config)
    assert a.objective == b.objective


def test_sdp_method_is_the_bound(small):
    res = solve_sdp(small)
    assert res.objective == res.lower_bound == pytest.approx(relaxation("small")[0].objective, rel=1e-12)


def test_bb_root_bound_is_relaxation(small):
    res = bb("small")
    assert res.info["nodes"] >= 1
    assert res.lower_bound == pytest.approx(relaxation("small")[0].objective, rel=1e-9)


def test_bb_matches_schedule_enumeration(small):
    """Every schedule's dispatch problem solved on its own; the best must be what
    branch and bound certifies. Schedules the solver cannot settle must be short
    of capacity in some hour, which makes them infeasible outright."""
    load = [sum(b.p_load[t] for b in small.network.buses) * small.base_mva for t in range(small.horizon)]
    best = None
    for cfg in all_schedules(small):
        sched = CommitmentSchedule.from_configs(small, cfg)
        try:
            opf = solve_opf(build_opf(small, sched), small)
        except OpfInfeasible:
            continue
        except RuntimeError:
            cap = [sum(p.config(int(cfg[t, h])).p_max for h, p in enumerate(small.plants)) for t in range(small.horizon)]
            assert any(c < l for c, l in zip(cap, load))
            continue
        val = opf.objective + sched.startup_cost(small)
        if best is None or val < best[0]:
            best = (val, cfg)
    res = bb("small")
    assert res.status == "optimal"
    assert res.objective == pytest.approx(best[0], rel=1e-6)
    assert np.array_equal(res.schedule.config, best[1])


def test_bb_one_plant_two_hours_matches_closed_form():
    inst = one_bus([50.0, 30.0], startup_cost=0.5)
    costs = {}
    for a in (1, 2):
        for b in (1, 2):
            c = one_bus_cost(inst, [[a], [b]])
            if c is not None:
                costs[(a, b)] = c
    best = min(costs, key=costs.get)
    res = solve_bb(inst)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(costs[best], rel=1e-7)
    assert tuple(res.schedule.config[:, 0]) == best


def test_bb_unique_schedule_has_zero_gap():
    # 70 MW is beyond config 1, so config 2 is forced in the only hour
    inst = one_bus([70.0])
    res = solve_bb(inst)
    assert res.schedule.config[0, 0] == 2
    assert res.status == "optimal"
    assert res.objective - res.info["proof_bound"] == pytest.approx(0.0, abs=rel_tol(res.objective))
    assert res.objective == pytest.approx(one_bus_cost(inst, [[2]]), rel=1e-7)


def test_pins_fix_commitment(small):
    prob = pin_rows(build_p1(small), small, {(0, 0, 2): 1})
    sol = solve(prob)
    assert sol.status == Status.OPTIMAL
    rel = extract(sol, prob, small)
    assert rel.x[(0, 0, 2)] == pytest.approx(1.0, abs=1e-6)
    assert rel.x[(0, 0, 1)] == pytest.approx(0.0, abs=1e-6)


def test_budget_exhaustion_is_flagged(medium):
    res = solve_bb(medium, PipelineOptions(node_limit=2))
    assert res.status in ("node_limit", "optimal")
    if res.status == "node_limit":
        assert res.info["proof_bound"] <= res.objective


def test_stage_errors_are_tagged():
    inst = one_bus([200.0])  # more than both configurations can supply
    with pytest.raises(PipelineError) as err:
        solve_rh(inst)
    assert err.value.stage in ("relax", "round", "reopt")


def test_bench_grid():
    insts = [instance("small"), generate(FixtureSpec("tiny", n_bus=3, n_plant=2, horizon=2, extra_lines=0, seed=3))]
    rep = bench(insts, ("sdp", "rh"))
    assert [r["instance"] for r in rep["rows"]] == ["small", "tiny"]
    for row in rep["rows"]:
        for m in ("sdp", "rh"):
            cell = row[m]
            if "error" not in cell:
                assert cell["gap"] >= -1e-9 and cell["time"] >= 0
    table = format_table(rep)
    assert "rh obj" in table and "sdp obj" in table


def test_bench_json_is_stable():
    insts = [instance("small")]
    a = report_json(bench(insts, ("sdp",)), timings=False)
    b = report_json(bench(insts, ("sdp",), jobs=2), timings=False)
    assert a == b


def test_bench_rejects_unknown_method(small):
    with pytest.raises(ValueError):
        bench([small], ("rh", "magic"))
