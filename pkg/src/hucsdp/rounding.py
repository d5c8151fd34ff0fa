"""Commitment rounding: split the relaxed commitments into fixed and undecided
sets, then settle the undecided ones with a small binary program solved by
best-first branch and bound over LP relaxations.
"""

from __future__ import annotations

import heapq
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .model import HucInstance, OutOfRange, water_discharge
from .sdpsolver import SolverOptions, Status, solve_lp

EPS_BIN = 1e-4


class InfeasibleRounding(RuntimeError):
    pass


@dataclass
class OmegaSets:
    omega1: set  # fractional (t, h, u)
    omega2: set  # committed
    zero: set  # fixed off
    eps_bin: float = EPS_BIN

    def decided(self) -> dict:
        """(t, h) -> u for hours whose configuration is already settled."""
        return {(t, h): u for (t, h, u) in self.omega2}


@dataclass
class CommitmentSchedule:
    config: np.ndarray  # (T, N_H) chosen configuration index
    y: np.ndarray  # (T, N_H) startups

    @classmethod
    def from_configs(cls, inst: HucInstance, config) -> "CommitmentSchedule":
        config = np.asarray(config, dtype=int)
        y = np.zeros(config.shape)
        for h, plant in enumerate(inst.plants):
            prev = plant.initial_config
            for t in range(inst.horizon):
                y[t, h] = max(0, config[t, h] - prev)
                prev = config[t, h]
        return cls(config, y)

    def check(self, inst: HucInstance, tol: float = 1e-9) -> None:
        """Raise ValueError unless the schedule picks one valid configuration per
        (t, h) and covers every configuration increase with startups."""
        T, nh = inst.horizon, inst.n_plant
        if self.config.shape != (T, nh) or self.y.shape != (T, nh):
            raise ValueError(f"schedule shape {self.config.shape} does not match ({T}, {nh})")
        for h, plant in enumerate(inst.plants):
            valid = {c.u for c in plant.configs}
            prev = plant.initial_config
            for t in range(T):
                u = int(self.config[t, h])
                if u not in valid:
                    raise ValueError(f"plant {plant.id} hour {t}: configuration {u} does not exist")
                if self.y[t, h] < u - prev - tol or self.y[t, h] < -tol:
                    raise ValueError(f"plant {plant.id} hour {t}: startups {self.y[t, h]} below {u - prev}")
                prev = u

    def startup_cost(self, inst: HucInstance) -> float:
        return float(sum(self.y[:, h].sum() * p.startup_cost for h, p in enumerate(inst.plants)))

    def hamming(self, other: "CommitmentSchedule") -> int:
        return int(np.sum(self.config != other.config))


def classify(x: dict, eps_bin: float = EPS_BIN) -> OmegaSets:
    """Partition commitment levels ``x[(t, h, u)]`` (a dict or a relaxation solution)."""
    x = getattr(x, "x", x)
    om1, om2, zero = set(), set(), set()
    for key, v in x.items():
        if v >= 1.0 - eps_bin:
            om2.add(key)
        elif v <= eps_bin:
            zero.add(key)
        else:
            om1.add(key)
    return OmegaSets(om1, om2, zero, eps_bin)


def aggregate_dispatch(relax, inst: HucInstance | None = None) -> np.ndarray:
    """P*[t, h] in MW: the relaxed per-configuration contributions summed per plant.

    ``relax`` is a RelaxationSolution or a dict of contributions keyed (t, h, u);
    the dict form needs ``inst`` for the table shape.
    """
    contrib = getattr(relax, "p_unit", relax)
    if inst is not None:
        shape = (inst.horizon, inst.n_plant)
    else:
        shape = (max(k[0] for k in contrib) + 1, max(k[1] for k in contrib) + 1) if contrib else (0, 0)
    out = np.zeros(shape)
    for (t, h, _), v in contrib.items():
        out[t, h] += v
    return out


# --- the binary program ----------------------------------------------------------


@dataclass
class MilpProblem:
    """min c.z  s.t.  A_ub z <= b_ub, A_eq z == b_eq, z >= 0, z[binary] in {0, 1}.

    Columns are the undecided commitments (sorted by (t, h, u)) followed by one
    startup variable per (t, h).
    """

    keys: list  # ("x", t, h, u) or ("y", t, h)
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    binary: np.ndarray
    row_names: list  # inequality rows then equality rows
    horizon: int
    n_plant: int
    initial: tuple
    decided: dict  # (t, h) -> u known before the solve
    candidates: dict  # (t, h) -> list of candidate u
    p_star: np.ndarray
    startup_costs: tuple

    @property
    def n(self) -> int:
        return len(self.keys)

    def configs(self, assignment: dict) -> np.ndarray:
        """Full (T, N_H) configuration table from a choice per undecided (t, h)."""
        cfg = np.zeros((self.horizon, self.n_plant), dtype=int)
        for (t, h), u in self.decided.items():
            cfg[t, h] = u
        for (t, h), u in assignment.items():
            cfg[t, h] = u
        return cfg

    def evaluate(self, assignment: dict) -> float:
        """Exact objective of a choice per undecided (t, h), with optimal startups."""
        cfg = self.configs(assignment)
        total = 0.0
        col = {k: j for j, k in enumerate(self.keys)}
        for (t, h), u in assignment.items():
            total += self.c[col[("x", t, h, u)]]
        for h in range(self.n_plant):
            prev = self.initial[h]
            for t in range(self.horizon):
                total += self.startup_costs[h] * max(0, cfg[t, h] - prev)
                prev = cfg[t, h]
        return float(total)

    def write_lp(self, path) -> None:
        """Dump in CPLEX-LP style text for cross-checking with external solvers."""
        names = [_lp_name(k) for k in self.keys]

        def expr(row):
            parts = []
            for j, v in zip(row.indices, row.data):
                if v != 0:
                    parts.append(f"{'+' if v >= 0 else '-'} {abs(v)!r} {names[j]}")
            return " ".join(parts) if parts else "0 " + names[0]

        out = ["\\ commitment rounding program", "Minimize", " obj: " + expr(sp.csr_matrix(self.c)[0]), "Subject To"]
        for r in range(self.A_ub.shape[0]):
            out.append(f" {self.row_names[r]}: {expr(self.A_ub[r])} <= {self.b_ub[r]!r}")
        off = self.A_ub.shape[0]
        for r in range(self.A_eq.shape[0]):
            out.append(f" {self.row_names[off + r]}: {expr(self.A_eq[r])} = {self.b_eq[r]!r}")
        out.append("Bounds")
        for j in self.binary:
            out.append(f" 0 <= {names[j]} <= 1")
        out.append("Binary")
        out.extend(f" {names[j]}" for j in self.binary)
        out.append("End")
        Path(path).write_text("\n".join(out) + "\n")


def _lp_name(key) -> str:
    return "_".join(str(k) for k in key)


def build_p2(inst: HucInstance, omega: OmegaSets, p_star) -> MilpProblem:
    p_star = np.asarray(p_star, dtype=float)
    T, nh = inst.horizon, inst.n_plant
    decided = omega.decided()
    frac: dict = {}
    for (t, h, u) in omega.omega1:
        frac.setdefault((t, h), []).append(u)
    candidates = {}
    costs = {}
    for (t, h), us in sorted(frac.items()):
        plant = inst.plants[h]
        keep = []
        for u in sorted(us):
            curve = plant.config(u)
            try:
                q = water_discharge(curve, float(p_star[t, h]))
            except OutOfRange:
                continue
            keep.append(u)
            costs[(t, h, u)] = plant.water_value * inst.theta * q
        if not keep:
            raise InfeasibleRounding(
                f"plant {plant.id} hour {t}: no candidate configuration covers {p_star[t, h]:.6g} MW"
            )
        candidates[(t, h)] = keep
    for (t, h) in candidates:
        decided.pop((t, h), None)
    missing = [(t, h) for t in range(T) for h in range(nh) if (t, h) not in candidates and (t, h) not in decided]
    if missing:
        raise InfeasibleRounding(f"no configuration selected for (hour, plant) {missing[0]}")

    keys = [("x", t, h, u) for (t, h), us in sorted(candidates.items()) for u in us]
    keys += [("y", t, h) for t in range(T) for h in range(nh)]
    col = {k: j for j, k in enumerate(keys)}
    c = np.zeros(len(keys))
    for (t, h, u), w in costs.items():
        c[col[("x", t, h, u)]] = w
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            c[col[("y", t, h)]] = plant.startup_cost

    ub_rows, ub_b, ub_names = [], [], []
    # startups: level_t - level_{t-1} <= y_t, undecided levels as variables
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            row = {col[("y", t, h)]: -1.0}
            rhs = 0.0
            for tt, sign in ((t, 1.0), (t - 1, -1.0)):
                if tt < 0:
                    rhs += plant.initial_config  # -(-u0) moved to the right
                elif (tt, h) in candidates:
                    for u in candidates[(tt, h)]:
                        row[col[("x", tt, h, u)]] = row.get(col[("x", tt, h, u)], 0.0) + sign * u
                else:
                    rhs -= sign * decided[(tt, h)]
            ub_rows.append(row)
            ub_b.append(rhs)
            ub_names.append(f"startup_{t}_{h}")
    eq_rows, eq_b, eq_names = [], [], []
    for (t, h), us in sorted(candidates.items()):
        eq_rows.append({col[("x", t, h, u)]: 1.0 for u in us})
        eq_b.append(1.0)
        eq_names.append(f"unique_{t}_{h}")

    return MilpProblem(
        keys=keys,
        c=c,
        A_ub=_rows_to_csr(ub_rows, len(keys)),
        b_ub=np.asarray(ub_b, dtype=float),
        A_eq=_rows_to_csr(eq_rows, len(keys)),
        b_eq=np.asarray(eq_b, dtype=float),
        binary=np.array([j for j, k in enumerate(keys) if k[0] == "x"], dtype=int),
        row_names=ub_names + eq_names,
        horizon=T,
        n_plant=nh,
        initial=tuple(p.initial_config for p in inst.plants),
        decided=decided,
        candidates=candidates,
        p_star=p_star,
        startup_costs=tuple(p.startup_cost for p in inst.plants),
    )


def _rows_to_csr(rows, n) -> sp.csr_matrix:
    data, ri, ci = [], [], []
    for r, row in enumerate(rows):
        for j, v in sorted(row.items()):
            ri.append(r)
            ci.append(j)
            data.append(v)
    return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n))


# --- branch and bound ------------------------------------------------------------


@dataclass
class BnbStats:
    nodes: int = 0
    lp_solves: int = 0
    objective: float = math.inf
    bound: float = -math.inf
    status: str = "optimal"


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixed: dict = field(compare=False)  # column -> 0/1


def _solve_node(milp: MilpProblem, fixed: dict, opts: SolverOptions):
    free = np.array([j for j in range(milp.n) if j not in fixed], dtype=int)
    z = np.zeros(milp.n)
    for j, v in fixed.items():
        z[j] = v
    fix_idx = np.array(sorted(fixed), dtype=int)
    fix_val = z[fix_idx]
    b_ub = milp.b_ub - (milp.A_ub[:, fix_idx] @ fix_val if fix_idx.size else 0.0)
    b_eq = milp.b_eq - (milp.A_eq[:, fix_idx] @ fix_val if fix_idx.size else 0.0)
    A_eq = milp.A_eq[:, free]
    # rows emptied by fixing must already hold
    nz = np.diff(A_eq.tocsr().indptr) > 0
    if np.any(np.abs(b_eq[~nz]) > 1e-9):
        return None, math.inf
    lp = solve_lp(milp.c[free], milp.A_ub[:, free], b_ub, A_eq[nz], b_eq[nz], opts)
    if lp.status == Status.INFEASIBLE:
        return None, math.inf
    if lp.status != Status.OPTIMAL and not (lp.gap < 1e-6):
        raise InfeasibleRounding(f"LP relaxation failed with status {lp.status.value}")
    z[free] = lp.x
    return z, float(milp.c @ z)


def solve_bb(
    milp: MilpProblem,
    workers: int = 1,
    eps_bin: float = EPS_BIN,
    node_limit: int = 100_000,
    opts: SolverOptions | None = None,
) -> tuple[CommitmentSchedule, BnbStats]:
    """Best-first branch and bound on the most fractional commitment.

    Nodes are evaluated in batches of ``workers``; ties between equal-valued
    schedules go to the lexicographically smallest binary vector and near-tied
    nodes are never pruned, so the answer does not depend on ``workers``.
    """
    opts = opts or SolverOptions(tol=1e-9)
    stats = BnbStats()
    bin_set = list(milp.binary)
    col_of = {k: j for j, k in enumerate(milp.keys)}
    order = sorted(milp.candidates)
    best_obj, best_key, best_assign = math.inf, None, None

    def tol(v):
        return 1e-7 * (1.0 + abs(v))

    def consider(z):
        nonlocal best_obj, best_key, best_assign
        assign = {}
        for (t, h), us in milp.candidates.items():
            assign[(t, h)] = max(us, key=lambda u: (z[col_of[("x", t, h, u)]], -u))
        obj = milp.evaluate(assign)
        key = tuple(assign[k] for k in order)
        if best_key is None or obj < best_obj - tol(best_obj) or (obj <= best_obj + tol(best_obj) and key < best_key):
            best_obj, best_key, best_assign = obj, key, assign

    heap = [_Node(-math.inf, 0, {})]
    seq = 1
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while heap:
            batch = []
            while heap and len(batch) < max(1, workers):
                node = heapq.heappop(heap)
                if node.bound > best_obj + tol(best_obj):
                    heap.clear()
                    break
                batch.append(node)
            if not batch:
                break
            if stats.nodes + len(batch) > node_limit:
                stats.status = "node_limit"
                break
            if pool is not None:
                results = list(pool.map(lambda nd: _solve_node(milp, nd.fixed, opts), batch))
            else:
                results = [_solve_node(milp, nd.fixed, opts) for nd in batch]
            stats.nodes += len(batch)
            stats.lp_solves += len(batch)
            for node, (z, val) in zip(batch, results):
                if z is None or val > best_obj + tol(best_obj):
                    continue
                frac = [(min(z[j], 1 - z[j]), -j) for j in bin_set if j not in node.fixed and eps_bin < z[j] < 1 - eps_bin]
                if not frac:
                    consider(z)
                    continue
                _, neg_j = max(frac)
                j = -neg_j
                for v in (1, 0):
                    child = dict(node.fixed)
                    child[j] = v
                    if v == 1:
                        # the sibling configurations of a committed one are off
                        _, t, h, u = milp.keys[j]
                        for uu in milp.candidates[(t, h)]:
                            if uu != u:
                                child[col_of[("x", t, h, uu)]] = 0
                    heapq.heappush(heap, _Node(val, seq, child))
                    seq += 1
    finally:
        if pool is not None:
            pool.shutdown()
    if best_assign is None:
        if stats.status == "node_limit":
            raise InfeasibleRounding("node limit reached before any integer schedule was found")
        raise InfeasibleRounding("rounding program is infeasible")
    stats.objective = best_obj
    stats.bound = min([best_obj] + [n.bound for n in heap])
    cfg = milp.configs(best_assign)
    y = np.zeros_like(cfg, dtype=float)
    for h in range(milp.n_plant):
        prev = milp.initial[h]
        for t in range(milp.horizon):
            y[t, h] = max(0, cfg[t, h] - prev)
            prev = cfg[t, h]
    return CommitmentSchedule(cfg, y), stats


def round_relaxation(inst: HucInstance, relax, eps_bin: float = EPS_BIN, workers: int = 1):
    """Classify, aggregate, and settle the undecided commitments.

    Returns (schedule, omega, P*, stats); ``stats`` is None when nothing was undecided.
    """
    omega = classify(relax.x, eps_bin)
    p_star = aggregate_dispatch(relax, inst)
    if not omega.omega1:
        cfg = np.zeros((inst.horizon, inst.n_plant), dtype=int)
        for (t, h), u in omega.decided().items():
            cfg[t, h] = u
        return CommitmentSchedule.from_configs(inst, cfg), omega, p_star, None
    milp = build_p2(inst, omega, p_star)
    schedule, stats = solve_bb(milp, workers=workers, eps_bin=eps_bin)
    return schedule, omega, p_star, stats
