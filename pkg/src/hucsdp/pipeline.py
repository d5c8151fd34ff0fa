"""End-to-end solution methods and the benchmark report.

``solve_rh`` runs the rounding heuristic: relax, settle commitments, re-optimize
the AC dispatch and reduce the rank of the result. ``solve_bb`` is the exact
reference: best-first branch and bound with the SDP relaxation at every node.
"""

from __future__ import annotations

import heapq
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import HucInstance
from .rankred import SIGMA, ConstraintSet, Termination, reduce
from .relaxation import RelaxationSolution, build_p1, extract, xname
from .reopt import balance_residual, build_opf, rank1_point, solve_opf, water_cost, zname
from .rounding import EPS_BIN, CommitmentSchedule, round_relaxation
from .sdpproblem import SdpBlockProblem, Sym
from .sdpsolver import SolverOptions, Status, solve
from .symmat import EPS_RANK


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineOptions:
    tol: float = 1e-8
    eps_bin: float = EPS_BIN
    eps_rank: float = EPS_RANK
    sigma: int = SIGMA
    workers: int = 1  # rounding program branch and bound
    node_limit: int = 10_000
    time_limit: float = 600.0

    def solver(self) -> SolverOptions:
        return SolverOptions(tol=self.tol)


@dataclass
class HucSolution:
    method: str  # "SDP", "RH" or "BB"
    schedule: CommitmentSchedule | None
    p: np.ndarray  # (T, N_H) MW
    q: np.ndarray
    e: np.ndarray  # (T, N_B)
    f: np.ndarray
    objective: float
    lower_bound: float
    timings: dict = field(default_factory=dict)
    status: str = "optimal"
    info: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.objective - self.lower_bound

    @property
    def rel_gap(self) -> float:
        return self.gap / max(1.0, abs(self.lower_bound))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except PipelineError:
        raise
    except Exception as exc:  # noqa: BLE001 - tag and re-raise
        raise PipelineError(name, exc) from exc


def _relax(inst: HucInstance, opts: PipelineOptions) -> tuple[RelaxationSolution, SdpBlockProblem]:
    prob = build_p1(inst)
    sol = solve(prob, opts.solver())
    return extract(sol, prob, inst), prob


def solve_sdp(inst: HucInstance, opts: PipelineOptions | None = None) -> HucSolution:
    """The relaxation alone: a lower bound with a fractional commitment."""
    opts = opts or PipelineOptions()
    t0 = time.perf_counter()
    rel, _ = _stage("relax", _relax, inst, opts)
    el = time.perf_counter() - t0
    return HucSolution("SDP", None, rel.p, rel.q, rel.e, rel.f, rel.objective, rel.objective,
                       {"relax": el, "total": el}, "optimal",
                       {"fractional": sum(1 for v in rel.x.values() if opts.eps_bin < v < 1 - opts.eps_bin)})


def solve_rh(inst: HucInstance, opts: PipelineOptions | None = None) -> HucSolution:
    opts = opts or PipelineOptions()
    timings = {}
    t0 = time.perf_counter()
    rel, _ = _stage("relax", _relax, inst, opts)
    timings["relax"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    schedule, omega, _, bb = _stage("round", round_relaxation, inst, rel, opts.eps_bin, opts.workers)
    timings["round"] = time.perf_counter() - t1

    t2 = time.perf_counter()
    opf_prob = _stage("reopt", build_opf, inst, schedule)
    opf = _stage("reopt", solve_opf, opf_prob, inst, opts.solver())
    timings["reopt"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    Zs = dict(opf.Z)
    X = {zname(t): Z for t, Z in Zs.items()}
    reports = {}
    pre = balance_residual(opf_prob, inst, Zs)
    for t in range(inst.horizon):
        cons = ConstraintSet.from_problem(opf_prob, zname(t), X, include_objective=True)
        rep = _stage("rankred", reduce, Zs[t], cons, opts.sigma, opts.eps_rank)
        Zs[t] = rep.Z
        X[zname(t)] = rep.Z
        reports[t] = rep
    post = balance_residual(opf_prob, inst, Zs)
    timings["rankred"] = time.perf_counter() - t3

    lay = opf_prob.meta["layout"]
    T, base = inst.horizon, inst.base_mva
    p = np.zeros((T, inst.n_plant))
    q = np.zeros_like(p)
    e = np.zeros((T, inst.network.n_bus))
    f = np.zeros_like(e)
    for t in range(T):
        z = rank1_point(Zs[t])
        z = z / z[0] if z[0] > 0 else z
        p[t] = z[1:1 + lay.n_plant] * base
        q[t] = z[1 + lay.n_plant:lay.v0] * base
        e[t] = z[lay.v0:lay.v0 + lay.n_bus]
        f[t] = z[lay.v0 + lay.n_bus:]
    objective = water_cost(inst, schedule, p) + schedule.startup_cost(inst)
    timings["total"] = time.perf_counter() - t0
    info = {
        "fractional": len(omega.omega1),
        "rounding_nodes": bb.nodes if bb is not None else 0,
        "opf_objective": opf.objective,
        "final_ranks": [reports[t].final_rank for t in range(T)],
        "rank_termination": [reports[t].reason.value for t in range(T)],
        "balance_residual_before": pre,
        "balance_residual_after": post,
        "max_violation": opf_prob.max_violation(X, {}),
    }
    status = "rank1" if all(r.reason == Termination.RANK1 for r in reports.values()) else "rank>1"
    return HucSolution("RH", schedule, p, q, e, f, objective, rel.objective, timings, status, info)


# --- exact reference: SDP branch and bound ------------------------------------------


def pin_rows(prob: SdpBlockProblem, inst: HucInstance, pins: dict) -> SdpBlockProblem:
    """Copy of the relaxation with commitments fixed.

    A pin to 1 fixes x = 1 and empties the sibling configuration blocks; a pin to
    0 empties the block (all three diagonal entries vanish, hence the block).
    """
    out = prob.copy()
    zero = set()
    for (t, h, u), v in sorted(pins.items()):
        if v:
            b = xname(t, h, u)
            out.add_eq(f"pin1[{b}]", {b: Sym(3, {(1, 1): 1.0})}, 1.0)
            zero.update((t, h, c.u) for c in inst.plants[h].configs if c.u != u)
        else:
            zero.add((t, h, u))
    for key in sorted(zero):
        if pins.get(key) == 1:
            continue
        b = xname(*key)
        for k in range(3):
            out.add_eq(f"pin0_{k}[{b}]", {b: Sym(3, {(k, k): 1.0})}, 0.0)
    return out


@dataclass(order=True)
class BnbNode:
    bound: float
    seq: int
    pins: dict = field(compare=False)


def _leaf_pins(inst: HucInstance, schedule: CommitmentSchedule) -> dict:
    return {(t, h, int(schedule.config[t, h])): 1 for t in range(inst.horizon) for h in range(inst.n_plant)}


def solve_bb(inst: HucInstance, opts: PipelineOptions | None = None, log=None) -> HucSolution:
    """Best-first branch and bound with the relaxation as node bound.

    The root relaxation is rounded once (the rounding program of the heuristic)
    and that schedule's leaf value seeds the incumbent, so a budget-limited run
    still returns an integral schedule. Nodes whose solve fails numerically are
    kept as unresolved: their parent bound stays in the proof bound and the
    result is not flagged optimal unless the incumbent beats them.
    """
    opts = opts or PipelineOptions()
    t0 = time.perf_counter()
    base = build_p1(inst)
    sopts = opts.solver()
    incumbent = None  # (objective, RelaxationSolution)
    root_bound = None
    nodes = 0
    unresolved = []  # (parent bound, pins) of nodes whose solve failed
    heap = [BnbNode(-math.inf, 0, {})]
    seq = 1
    status = "optimal"
    keys = sorted(inst.units())
    node_time = 0.0

    def tol(v):
        return 1e-9 * max(1.0, abs(v))

    def evaluate(pins):
        prob = pin_rows(base, inst, pins)
        sol = solve(prob, sopts)
        if sol.status != Status.OPTIMAL:
            return sol.status, None
        return sol.status, extract(sol, prob, inst)

    while heap:
        if incumbent is not None and heap[0].bound >= incumbent[0] - tol(incumbent[0]):
            break
        if nodes >= opts.node_limit:
            status = "node_limit"
            break
        elapsed = time.perf_counter() - t0
        # stop when the next node would likely overrun the budget
        if nodes and elapsed + node_time / nodes > opts.time_limit:
            status = "time_limit"
            break
        node = heapq.heappop(heap)
        nodes += 1
        tn = time.perf_counter()
        st, rel = evaluate(node.pins)
        node_time += time.perf_counter() - tn
        if st == Status.INFEASIBLE:
            continue
        if rel is None:
            if root_bound is None:
                raise PipelineError("bnb", RuntimeError(f"root relaxation ended with status {st.value}"))
            unresolved.append((node.bound, node.pins, st.value))
            continue
        val = rel.objective
        if root_bound is None:
            root_bound = val
            sched, *_ = round_relaxation(inst, rel, opts.eps_bin, opts.workers)
            hst, hrel = evaluate(_leaf_pins(inst, sched))
            if hrel is not None:
                incumbent = (hrel.objective, hrel)
        if log is not None:
            log(f"node {nodes} bound {val:.6f} pins {len(node.pins)} open {len(heap)}"
                + (f" incumbent {incumbent[0]:.6f}" if incumbent else ""))
        if incumbent is not None and val >= incumbent[0] - tol(incumbent[0]):
            continue
        frac = [(min(rel.x[k], 1 - rel.x[k]), k) for k in keys if opts.eps_bin < rel.x[k] < 1 - opts.eps_bin]
        if not frac:
            incumbent = (val, rel)
            continue
        best = max(f for f, _ in frac)
        branch = min(k for f, k in frac if f >= best - 1e-12)
        for v in (1, 0):
            child = dict(node.pins)
            child[branch] = v
            heapq.heappush(heap, BnbNode(val, seq, child))
            seq += 1
    elapsed = time.perf_counter() - t0
    if incumbent is None:
        raise PipelineError("bnb", RuntimeError(f"no integral schedule found ({status}, {nodes} nodes)"))
    val, rel = incumbent
    cfg = np.zeros((inst.horizon, inst.n_plant), dtype=int)
    for (t, h, u), x in rel.x.items():
        if x >= 1 - opts.eps_bin:
            cfg[t, h] = u
    schedule = CommitmentSchedule.from_configs(inst, cfg)
    open_bounds = [n.bound for n in heap] if status != "optimal" else []
    open_bounds += [b for b, _, _ in unresolved if b < val - tol(val)]
    if status == "optimal" and open_bounds:
        status = "unresolved_nodes"
    info = {
        "nodes": nodes,
        "failed_nodes": [{"pins": {f"{t},{h},{u}": v for (t, h, u), v in sorted(p.items())}, "status": s}
                         for _, p, s in unresolved],
        "proof_bound": min([val] + open_bounds),
        "open_nodes": len(heap),
    }
    return HucSolution("BB", schedule, rel.p, rel.q, rel.e, rel.f, val, root_bound,
                       {"bnb": elapsed, "total": elapsed}, status, info)


# --- benchmark --------------------------------------------------------------------

METHODS = {"sdp": solve_sdp, "rh": solve_rh, "bnb": solve_bb}


def _run_instance(args):
    inst, methods, opts = args
    row = {"instance": inst.name, "size": {"buses": inst.network.n_bus, "plants": inst.n_plant, "hours": inst.horizon}}
    sols = {}
    for m in methods:
        t0 = time.perf_counter()
        try:
            s = METHODS[m](inst, opts)
            sols[m] = s
            row[m] = {"objective": s.objective, "time": time.perf_counter() - t0, "status": s.status}
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            row[m] = {"error": str(exc), "time": time.perf_counter() - t0}
    bound = None
    for m in ("sdp", "rh", "bnb"):
        if m in sols:
            bound = sols[m].lower_bound
            break
    row["lower_bound"] = bound
    for m, s in sols.items():
        row[m]["gap"] = (s.objective - bound) / max(1.0, abs(bound)) if bound is not None else None
    if "rh" in sols and "bnb" in sols:
        row["hamming_rh_bnb"] = sols["rh"].schedule.hamming(sols["bnb"].schedule)
    return row


def bench(instances, methods=("sdp", "rh", "bnb"), opts: PipelineOptions | None = None, jobs: int = 1) -> dict:
    """One row per instance with objective, gap to the relaxation and wall time per method."""
    opts = opts or PipelineOptions()
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
    tasks = [(inst, tuple(methods), opts) for inst in instances]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_run_instance, tasks))
    else:
        rows = [_run_instance(t) for t in tasks]
    return {"methods": list(methods), "options": asdict(opts), "rows": rows}


def format_table(report: dict) -> str:
    methods = report["methods"]
    head = f"{'instance':<12}" + "".join(f"{m + ' obj':>16}{m + ' gap%':>11}{m + ' s':>10}" for m in methods)
    lines = [head, "-" * len(head)]
    for row in report["rows"]:
        line = f"{row['instance']:<12}"
        for m in methods:
            cell = row[m]
            if "error" in cell:
                line += f"{'failed':>16}{'':>11}{cell['time']:>10.2f}"
            else:
                gap = cell.get("gap")
                line += f"{cell['objective']:>16.4f}{(100 * gap if gap is not None else float('nan')):>11.4f}{cell['time']:>10.2f}"
        lines.append(line)
    return "\n".join(lines)


def report_json(report: dict, timings: bool = True) -> str:
    """Stable JSON; ``timings=False`` drops wall times so reruns compare byte for byte."""
    rep = json.loads(json.dumps(report, default=float))
    if not timings:
        for row in rep["rows"]:
            for m in rep["methods"]:
                row[m].pop("time", None)
    return json.dumps(rep, indent=2, sort_keys=True)
