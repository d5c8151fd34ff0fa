"""AC optimal power flow with the commitment fixed.

One PSD block per hour over z = (1, p_1..p_H, q_1..q_H, e_1..e_N, f_1..f_N) with
p, q in p.u.; the corner entry is pinned to 1 so first-row entries are the
linear values and the rest of the block lifts their products. Reservoir bounds
and generation targets couple the hours through linear rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import HucInstance, reservoir_rhs
from .relaxation import flow_p, injection, magnitude
from .rounding import CommitmentSchedule
from .sdpproblem import SdpBlockProblem, Sym
from .sdpsolver import SdpSolution, SolverOptions, Status, solve
from .symmat import eig_sym


class OpfInfeasible(RuntimeError):
    def __init__(self, message: str, binding: list | None = None):
        super().__init__(message)
        self.binding = binding or []


@dataclass(frozen=True)
class OpfLayout:
    n_plant: int
    n_bus: int

    @property
    def dim(self) -> int:
        return 1 + 2 * self.n_plant + 2 * self.n_bus

    def p(self, h):
        return 1 + h

    def q(self, h):
        return 1 + self.n_plant + h

    @property
    def v0(self):
        return 1 + 2 * self.n_plant


def zname(t):
    return f"Z[{t}]"


def _embed(M: Sym, off: int, n: int) -> Sym:
    out = Sym(n)
    for (i, j), v in M.entries.items():
        out.add(i + off, j + off, v)
    return out


def _discharge(lay: OpfLayout, inst: HucInstance, h: int, u: int) -> Sym:
    c = inst.plants[h].config(u)
    base = inst.base_mva
    k = lay.p(h)
    return Sym(lay.dim, {(k, k): c.alpha * base * base, (0, k): 0.5 * c.beta * base, (0, 0): c.gamma})


def _linear(lay: OpfLayout, k: int, a: float = 1.0) -> Sym:
    return Sym(lay.dim, {(0, k): 0.5 * a})


def build_opf(inst: HucInstance, schedule: CommitmentSchedule) -> SdpBlockProblem:
    schedule.check(inst)
    T, net, base = inst.horizon, inst.network, inst.base_mva
    nb, nh = net.n_bus, inst.n_plant
    lay = OpfLayout(nh, nb)
    n = lay.dim
    prob = SdpBlockProblem()
    for t in range(T):
        prob.add_block(zname(t), n)

    def cfg(t, h):
        return inst.plants[h].config(int(schedule.config[t, h]))

    for t in range(T):
        for h, plant in enumerate(inst.plants):
            prob.add_objective(zname(t), _discharge(lay, inst, h, cfg(t, h).u), plant.water_value * inst.theta)

    for t in range(T):
        prob.add_eq(f"corner[{t}]", {zname(t): Sym(n, {(0, 0): 1.0})}, 1.0)

    inj_p = [_embed(injection(inst, i, False), lay.v0, n) for i in range(nb)]
    inj_q = [_embed(injection(inst, i, True), lay.v0, n) for i in range(nb)]
    for t in range(T):
        for i, bus in enumerate(net.buses):
            for tag, inj, load, var in (("pbal", inj_p[i], bus.p_load[t], lay.p), ("qbal", inj_q[i], bus.q_load[t], lay.q)):
                M = Sym(n).add_sym(inj, -1.0)
                for h in inst.plants_at(bus.id):
                    M.add(0, var(h), 0.5)
                prob.add_eq(f"{tag}[{t},{bus.id}]", {zname(t): M.prune()}, load)

    s = net.slack_index
    for t in range(T):
        e_s, f_s = lay.v0 + s, lay.v0 + nb + s
        prob.add_eq(f"vslack_e[{t}]", {zname(t): Sym(n, {(e_s, e_s): 1.0})}, net.v_slack ** 2)
        # the linear slack value fixes the sign of the voltage vector relative to
        # the corner, which the squared pin alone leaves free
        prob.add_eq(f"vslack_lin[{t}]", {zname(t): Sym(n, {(0, e_s): 0.5})}, net.v_slack)
        prob.add_eq(f"vslack_f[{t}]", {zname(t): Sym(n, {(f_s, f_s): 1.0})}, 0.0)

    for t in range(T):
        for ln in net.lines:
            F = _embed(flow_p(nb, net.index(ln.i), net.index(ln.j), ln.g, ln.b), lay.v0, n)
            prob.add_le(f"flow+[{t},{ln.i},{ln.j}]", {zname(t): F}, ln.f_max)
        for ln in net.lines:
            F = _embed(flow_p(nb, net.index(ln.i), net.index(ln.j), ln.g, ln.b), lay.v0, n)
            prob.add_le(f"flow-[{t},{ln.i},{ln.j}]", {zname(t): F.scaled(-1.0)}, ln.f_max)

    for t in range(T):
        for i, bus in enumerate(net.buses):
            if i == s:
                continue
            M = _embed(magnitude(nb, i), lay.v0, n)
            prob.add_le(f"vmax[{t},{bus.id}]", {zname(t): M}, bus.v_max ** 2)
            prob.add_ge(f"vmin[{t},{bus.id}]", {zname(t): M}, bus.v_min ** 2)

    # generation range of the chosen configuration, plus the product cut
    # (p - lo)(hi - p) >= 0 that ties the squared entry to the linear one
    for t in range(T):
        for h in range(nh):
            c = cfg(t, h)
            for tag, k, lo, hi in (("p", lay.p(h), c.p_min, c.p_max), ("q", lay.q(h), c.q_min, c.q_max)):
                lo, hi = lo / base, hi / base
                b = zname(t)
                prob.add_ge(f"{tag}min[{t},{h}]", {b: _linear(lay, k)}, lo)
                prob.add_le(f"{tag}max[{t},{h}]", {b: _linear(lay, k)}, hi)
                prob.add_le(f"box{tag}[{t},{h}]", {b: Sym(n, {(k, k): 1.0, (0, k): -0.5 * (lo + hi), (0, 0): lo * hi})}, 0.0)

    for h, plant in enumerate(inst.plants):
        if plant.target is None:
            continue
        prob.add_eq(f"target[{plant.id}]", {zname(t): _linear(lay, lay.p(h)) for t in range(T)}, plant.target / base)

    for h, plant in enumerate(inst.plants):
        for t in range(T):
            terms: dict = {}
            for i in range(t + 1):
                _acc(terms, zname(i), _discharge(lay, inst, h, cfg(i, h).u), inst.theta)
                for k, delay in inst.upstream(h):
                    if i - delay >= 0:
                        _acc(terms, zname(i - delay), _discharge(lay, inst, k, cfg(i - delay, k).u), -inst.theta)
            terms = {b: M.prune() for b, M in terms.items() if len(M.prune())}
            r = reservoir_rhs(inst, h, t)
            prob.add_le(f"vol_max[{h},{t}]", {b: M.scaled(-1.0) for b, M in terms.items()}, r)
            prob.add_le(f"vol_min[{h},{t}]", terms, plant.v_max - plant.v_min - r)

    prob.meta = {"kind": "opf", "horizon": T, "n_bus": nb, "n_plant": nh, "layout": lay}
    return prob


def _acc(terms: dict, b: str, M: Sym, scale: float) -> None:
    if b not in terms:
        terms[b] = Sym(M.n)
    terms[b].add_sym(M, scale)


@dataclass
class OpfSolution:
    p: np.ndarray  # (T, N_H) MW
    q: np.ndarray
    e: np.ndarray  # (T, N_B)
    f: np.ndarray
    Z: dict  # t -> block
    objective: float  # water cost in $
    status: Status
    solution: SdpSolution | None = field(default=None, repr=False)


def rank1_point(Z: np.ndarray) -> np.ndarray:
    """z with z z^T the best rank-1 approximation of Z, signed so z[0] >= 0."""
    w, U = eig_sym(Z)
    z = np.sqrt(max(w[0], 0.0)) * U[:, 0]
    return -z if z[0] < 0 else z


def unpack(prob: SdpBlockProblem, inst: HucInstance, Zs: dict) -> tuple:
    """(p, q, e, f) read off the blocks: dispatch from the first row, voltages
    from the rank-1 approximation."""
    lay: OpfLayout = prob.meta["layout"]
    T, base = inst.horizon, inst.base_mva
    p = np.zeros((T, lay.n_plant))
    q = np.zeros((T, lay.n_plant))
    e = np.zeros((T, lay.n_bus))
    f = np.zeros((T, lay.n_bus))
    for t in range(T):
        Z = Zs[t]
        for h in range(lay.n_plant):
            p[t, h] = Z[0, lay.p(h)] * base
            q[t, h] = Z[0, lay.q(h)] * base
        z = rank1_point(Z)
        z = z / z[0] if z[0] > 0 else z
        e[t] = z[lay.v0:lay.v0 + lay.n_bus]
        f[t] = z[lay.v0 + lay.n_bus:]
    return p, q, e, f


def solve_opf(prob: SdpBlockProblem, inst: HucInstance, opts: SolverOptions | None = None) -> OpfSolution:
    sol = solve(prob, opts)
    if sol.status == Status.INFEASIBLE:
        order = np.argsort(-np.abs(sol.duals), kind="stable")[:10]
        top = [prob.constraints[k].name for k in order if sol.duals[k] != 0]
        raise OpfInfeasible("the fixed commitment admits no feasible dispatch", top)
    if sol.status != Status.OPTIMAL:
        raise RuntimeError(f"OPF solve ended with status {sol.status.value}: {sol.message}")
    Zs = {t: sol.X[zname(t)] for t in range(inst.horizon)}
    p, q, e, f = unpack(prob, inst, Zs)
    return OpfSolution(p, q, e, f, Zs, sol.pobj, sol.status, sol)


def balance_residual(prob: SdpBlockProblem, inst: HucInstance, Zs: dict) -> float:
    """Largest power-balance violation of the rank-1 approximation of each block."""
    pts = {}
    for t, Z in Zs.items():
        z = rank1_point(Z)
        pts[zname(t)] = np.outer(z, z)
    worst = 0.0
    for con in prob.constraints:
        if con.name.startswith(("pbal", "qbal")):
            worst = max(worst, con.violation(pts, {}))
    return worst


def water_cost(inst: HucInstance, schedule: CommitmentSchedule, p: np.ndarray) -> float:
    """Water value times discharge at dispatch ``p`` (MW), in $."""
    total = 0.0
    for t in range(inst.horizon):
        for h, plant in enumerate(inst.plants):
            c = plant.config(int(schedule.config[t, h]))
            total += plant.water_value * inst.theta * (c.alpha * p[t, h] ** 2 + c.beta * p[t, h] + c.gamma)
    return total
