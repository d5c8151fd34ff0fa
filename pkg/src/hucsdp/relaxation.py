"""SDP relaxation of the HUC model: one 3x3 block per (hour, plant, configuration)
and one 2N_B x 2N_B voltage block per hour.

Block layouts
  X[t,h,u] over (dP, x, dQ) with dP, dQ in p.u. deviations above the configuration
  minimum; generation is X12 + Pmin X22, so dP enters only through its product
  with the commitment variable.
  V[t] over (e_1..e_N, f_1..f_N).

Costs are in $ (water value times theta times discharge), volumes in hm^3 and all
electrical rows in p.u.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import HucInstance, reservoir_rhs, shifted_curve
from .sdpproblem import SdpBlockProblem, Sym
from .sdpsolver import SdpSolution, SolverOptions, Status, solve
from .symmat import eig_sym

DP, XI, DQ = 0, 1, 2


class RelaxationError(RuntimeError):
    pass


@dataclass
class RelaxOptions:
    x_le_one: bool = True  # X22 <= 1 (implied by uniqueness; kept as an explicit cut)
    rlt_cuts: bool = True  # X11 <= dPmax X12, X33 <= dQmax X23
    y_upper: bool = True  # y <= largest configuration index


def xname(t, h, u):
    return f"X[{t},{h},{u}]"


def vname(t):
    return f"V[{t}]"


def yname(t, h):
    return f"y[{t},{h}]"


# --- network stencils -----------------------------------------------------------
# For a line i-j with series admittance g + jb and voltages e + jf the sending-end
# flow is P_ij = g A + b B, Q_ij = g B - b A with
#   A = e_i^2 + f_i^2 - e_i e_j - f_i f_j,   B = e_i f_j - f_i e_j.


def flow_p(nb: int, i: int, j: int, g: float, b: float) -> Sym:
    M = Sym(2 * nb)
    ei, fi, ej, fj = i, nb + i, j, nb + j
    M.add(ei, ei, g).add(fi, fi, g)
    M.add(ei, ej, -0.5 * g).add(fi, fj, -0.5 * g)
    M.add(ei, fj, 0.5 * b).add(fi, ej, -0.5 * b)
    return M


def flow_q(nb: int, i: int, j: int, g: float, b: float) -> Sym:
    M = Sym(2 * nb)
    ei, fi, ej, fj = i, nb + i, j, nb + j
    M.add(ei, ei, -b).add(fi, fi, -b)
    M.add(ei, ej, 0.5 * b).add(fi, fj, 0.5 * b)
    M.add(ei, fj, 0.5 * g).add(fi, ej, -0.5 * g)
    return M


def injection(inst: HucInstance, bus_index: int, reactive: bool) -> Sym:
    net = inst.network
    nb = net.n_bus
    M = Sym(nb * 2)
    bid = net.buses[bus_index].id
    for other, g, b in net.incident(bid):
        j = net.index(other)
        M.add_sym((flow_q if reactive else flow_p)(nb, bus_index, j, g, b))
    return M.prune()


def magnitude(nb: int, i: int) -> Sym:
    return Sym(2 * nb, {(i, i): 1.0, (nb + i, nb + i): 1.0})


# --- X-block stencils (p.u. deviations) -------------------------------------------


def gen_p(pmin_pu: float) -> Sym:
    return Sym(3, {(DP, XI): 0.5, (XI, XI): pmin_pu})


def gen_q(qmin_pu: float) -> Sym:
    return Sym(3, {(DQ, XI): 0.5, (XI, XI): qmin_pu})


def discharge(inst: HucInstance, h: int, u: int) -> Sym:
    """Discharge (m^3/s) of configuration u as a quadratic form in the p.u. block."""
    base = inst.base_mva
    a, bh, gh = shifted_curve(inst.plants[h].config(u))
    return Sym(3, {(DP, DP): a * base * base, (DP, XI): 0.5 * bh * base, (XI, XI): gh})


def commit() -> Sym:
    return Sym(3, {(XI, XI): 1.0})


def _hour_discharge_terms(inst, t, h, scale):
    return {xname(t, h, c.u): discharge(inst, h, c.u).scaled(scale) for c in inst.plants[h].configs}


def _merge(dst: dict, src: dict):
    for b, M in src.items():
        if b in dst:
            dst[b] = Sym(M.n).add_sym(dst[b]).add_sym(M)
        else:
            dst[b] = M
    return dst


def reservoir_terms(inst: HucInstance, h: int, t: int) -> dict:
    """theta * sum_{i<=t} (own discharge - upstream discharge arriving by i), in hm^3."""
    terms: dict = {}
    for i in range(t + 1):
        _merge(terms, _hour_discharge_terms(inst, i, h, inst.theta))
        for k, delay in inst.upstream(h):
            if i - delay >= 0:
                _merge(terms, _hour_discharge_terms(inst, i - delay, k, -inst.theta))
    return {b: M.prune() for b, M in terms.items() if len(M.prune())}


def build_p1(inst: HucInstance, opts: RelaxOptions | None = None) -> SdpBlockProblem:
    opts = opts or RelaxOptions()
    inst.validate()
    T, net, base = inst.horizon, inst.network, inst.base_mva
    nb = net.n_bus
    prob = SdpBlockProblem()

    for t in range(T):
        for h, plant in enumerate(inst.plants):
            for c in plant.configs:
                prob.add_block(xname(t, h, c.u), 3)
    for t in range(T):
        prob.add_block(vname(t), 2 * nb)
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            prob.add_var(yname(t, h), plant.startup_cost)

    # objective: water value * theta * discharge
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            for c in plant.configs:
                prob.add_objective(xname(t, h, c.u), discharge(inst, h, c.u), plant.water_value * inst.theta)

    # power balance: generation - injection = load
    inj_p = [injection(inst, i, False) for i in range(nb)]
    inj_q = [injection(inst, i, True) for i in range(nb)]
    for t in range(T):
        for i, bus in enumerate(net.buses):
            for tag, inj, load in (("pbal", inj_p[i], bus.p_load[t]), ("qbal", inj_q[i], bus.q_load[t])):
                terms = {}
                for h in inst.plants_at(bus.id):
                    for c in inst.plants[h].configs:
                        lo = c.p_min if tag == "pbal" else c.q_min
                        terms[xname(t, h, c.u)] = (gen_p if tag == "pbal" else gen_q)(lo / base)
                if len(inj):
                    terms[vname(t)] = inj.scaled(-1.0)
                prob.add_eq(f"{tag}[{t},{bus.id}]", terms, load)

    # slack voltage: e_s^2 = V_slack^2 and f_s^2 = 0
    s = net.slack_index
    for t in range(T):
        prob.add_eq(f"vslack_e[{t}]", {vname(t): Sym(2 * nb, {(s, s): 1.0})}, net.v_slack ** 2)
    for t in range(T):
        prob.add_eq(f"vslack_f[{t}]", {vname(t): Sym(2 * nb, {(nb + s, nb + s): 1.0})}, 0.0)

    # flow limits, both signs of the sending-end flow
    for t in range(T):
        for ln in net.lines:
            F = flow_p(nb, net.index(ln.i), net.index(ln.j), ln.g, ln.b)
            prob.add_le(f"flow+[{t},{ln.i},{ln.j}]", {vname(t): F}, ln.f_max)
        for ln in net.lines:
            F = flow_p(nb, net.index(ln.i), net.index(ln.j), ln.g, ln.b)
            prob.add_le(f"flow-[{t},{ln.i},{ln.j}]", {vname(t): F.scaled(-1.0)}, ln.f_max)

    # voltage magnitude box on non-slack buses (squared magnitudes)
    for t in range(T):
        for i, bus in enumerate(net.buses):
            if i == s:
                continue
            prob.add_le(f"vmax[{t},{bus.id}]", {vname(t): magnitude(nb, i)}, bus.v_max ** 2)
        for i, bus in enumerate(net.buses):
            if i == s:
                continue
            prob.add_ge(f"vmin[{t},{bus.id}]", {vname(t): magnitude(nb, i)}, bus.v_min ** 2)

    # generation targets (MWh over the horizon, in p.u.h)
    for h, plant in enumerate(inst.plants):
        if plant.target is None:
            continue
        terms = {xname(t, h, c.u): gen_p(c.p_min / base) for t in range(T) for c in plant.configs}
        prob.add_eq(f"target[{plant.id}]", terms, plant.target / base)

    # generation limits per configuration: dP x <= dPmax x, dQ x <= dQmax x
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            for c in plant.configs:
                b = xname(t, h, c.u)
                prob.add_le(f"pmax[{t},{h},{c.u}]", {b: Sym(3, {(DP, XI): 0.5, (XI, XI): -c.dp_max / base})}, 0.0)
                prob.add_le(f"qmax[{t},{h},{c.u}]", {b: Sym(3, {(DQ, XI): 0.5, (XI, XI): -c.dq_max / base})}, 0.0)
                prob.add_ge(f"pmin[{t},{h},{c.u}]", {b: Sym(3, {(DP, XI): 0.5})}, 0.0)
                prob.add_ge(f"qmin[{t},{h},{c.u}]", {b: Sym(3, {(DQ, XI): 0.5})}, 0.0)
                if opts.rlt_cuts:
                    prob.add_le(f"rltp[{t},{h},{c.u}]", {b: Sym(3, {(DP, DP): 1.0, (DP, XI): -0.5 * c.dp_max / base})}, 0.0)
                    prob.add_le(f"rltq[{t},{h},{c.u}]", {b: Sym(3, {(DQ, DQ): 1.0, (DQ, XI): -0.5 * c.dq_max / base})}, 0.0)
                if opts.x_le_one:
                    prob.add_le(f"xle1[{t},{h},{c.u}]", {b: commit()}, 1.0)

    # reservoir volume bounds
    for h, plant in enumerate(inst.plants):
        for t in range(T):
            r = reservoir_rhs(inst, h, t)
            terms = reservoir_terms(inst, h, t)
            # volume <= vmax  <=>  -theta sum(own - upstream) <= r
            prob.add_le(f"vol_max[{h},{t}]", {b: M.scaled(-1.0) for b, M in terms.items()}, r)
            prob.add_le(f"vol_min[{h},{t}]", terms, plant.v_max - plant.v_min - r)

    # configuration uniqueness
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            prob.add_eq(f"unique[{t},{h}]", {xname(t, h, c.u): commit() for c in plant.configs}, 1.0)

    # startups: sum u x_t - sum u x_{t-1} <= y
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            terms = {xname(t, h, c.u): commit().scaled(c.u) for c in plant.configs}
            rhs = 0.0
            if t == 0:
                rhs = float(plant.initial_config)
            else:
                for c in plant.configs:
                    terms[xname(t - 1, h, c.u)] = commit().scaled(-c.u)
            prob.add_le(f"startup[{t},{h}]", terms, rhs, lin={yname(t, h): -1.0})
            if opts.y_upper:
                prob.add_le(f"ymax[{t},{h}]", {}, float(plant.max_config), lin={yname(t, h): 1.0})

    prob.meta = {"kind": "p1", "horizon": T, "n_bus": nb}
    return prob


def constraint_counts(inst: HucInstance, opts: RelaxOptions | None = None) -> dict:
    """Closed-form row counts of build_p1 by family."""
    opts = opts or RelaxOptions()
    T, nh = inst.horizon, inst.n_plant
    nb, nl = inst.network.n_bus, inst.network.n_line
    nu = sum(len(p.configs) for p in inst.plants)
    return {
        "pbal": T * nb,
        "qbal": T * nb,
        "vslack": 2 * T,
        "flow": 2 * T * nl,
        "voltage": 2 * T * (nb - 1),
        "target": sum(p.target is not None for p in inst.plants),
        "genlim": 4 * T * nu,
        "rlt": 2 * T * nu if opts.rlt_cuts else 0,
        "xle1": T * nu if opts.x_le_one else 0,
        "reservoir": 2 * T * nh,
        "unique": T * nh,
        "startup": T * nh,
        "ymax": T * nh if opts.y_upper else 0,
    }


# --- extraction -------------------------------------------------------------------


@dataclass
class RelaxationSolution:
    objective: float
    x: dict  # (t, h, u) -> commitment level X22
    dp: dict  # (t, h, u) -> MW deviation X12 / X22 (0 when uncommitted)
    dq: dict  # (t, h, u) -> MVAr deviation
    p_unit: dict  # (t, h, u) -> X12 + Pmin X22 in MW (weighted contribution)
    q_unit: dict
    p: np.ndarray  # (T, N_H) aggregated dispatch, MW
    q: np.ndarray
    e: np.ndarray  # (T, N_B)
    f: np.ndarray
    y: np.ndarray  # (T, N_H)
    X: dict = field(repr=False, default_factory=dict)
    V: dict = field(repr=False, default_factory=dict)
    status: Status = Status.OPTIMAL
    solution: SdpSolution | None = field(repr=False, default=None)

    def max_uniqueness_error(self) -> float:
        sums = {}
        for (t, h, _), v in self.x.items():
            sums[(t, h)] = sums.get((t, h), 0.0) + v
        return max(abs(v - 1.0) for v in sums.values())


def extract_block(Xb: np.ndarray, pmin: float, qmin: float, base: float, eps: float = 1e-12):
    """(x, dP MW, dQ MVAr, p contribution MW, q contribution MVAr) from one 3x3 block."""
    x = float(Xb[XI, XI])
    xp = float(Xb[DP, XI]) * base
    xq = float(Xb[DQ, XI]) * base
    dp = xp / x if x > eps else 0.0
    dq = xq / x if x > eps else 0.0
    return x, dp, dq, xp + pmin * x, xq + qmin * x


def dominant_voltage(Vb: np.ndarray, slack: int) -> tuple[np.ndarray, np.ndarray]:
    nb = Vb.shape[0] // 2
    w, U = eig_sym(Vb)
    v = np.sqrt(max(w[0], 0.0)) * U[:, 0]
    if v[slack] < 0:
        v = -v
    return v[:nb].copy(), v[nb:].copy()


def extract(sol: SdpSolution, prob: SdpBlockProblem, inst: HucInstance, allow_inaccurate: bool = False) -> RelaxationSolution:
    if sol.status != Status.OPTIMAL and not allow_inaccurate:
        raise RelaxationError(f"relaxation solve ended with status {sol.status.value}: {sol.message}")
    T, base = inst.horizon, inst.base_mva
    nh, nb = inst.n_plant, inst.network.n_bus
    x, dp, dq, pu, qu = {}, {}, {}, {}, {}
    p = np.zeros((T, nh))
    q = np.zeros((T, nh))
    for t in range(T):
        for h, plant in enumerate(inst.plants):
            for c in plant.configs:
                key = (t, h, c.u)
                vals = extract_block(sol.X[xname(t, h, c.u)], c.p_min, c.q_min, base)
                x[key], dp[key], dq[key], pu[key], qu[key] = vals
                p[t, h] += vals[3]
                q[t, h] += vals[4]
    e = np.zeros((T, nb))
    f = np.zeros((T, nb))
    V = {}
    for t in range(T):
        if vname(t) in sol.X:
            V[t] = sol.X[vname(t)]
            e[t], f[t] = dominant_voltage(V[t], inst.network.slack_index)
    y = np.array([[sol.y.get(yname(t, h), 0.0) for h in range(nh)] for t in range(T)])
    X = {key: sol.X[xname(*key)] for key in x}
    return RelaxationSolution(sol.pobj, x, dp, dq, pu, qu, p, q, e, f, y, X, V, sol.status, sol)


def solve_p1(inst: HucInstance, opts: RelaxOptions | None = None, solver: SolverOptions | None = None):
    prob = build_p1(inst, opts)
    sol = solve(prob, solver)
    return extract(sol, prob, inst), prob


# --- lifting (used by feasibility checks) ------------------------------------------


def lift(inst: HucInstance, schedule, p, q, e, f, y) -> tuple[dict, dict]:
    """Rank-1 lift of a mixed-integer point.

    ``schedule[t][h]`` is the committed configuration, ``p``/``q`` are (T, N_H)
    MW / MVAr, ``e``/``f`` are (T, N_B) and ``y`` is (T, N_H).
    """
    base = inst.base_mva
    X = {}
    for t in range(inst.horizon):
        for h, plant in enumerate(inst.plants):
            for c in plant.configs:
                if schedule[t][h] == c.u:
                    vec = np.array([(p[t][h] - c.p_min) / base, 1.0, (q[t][h] - c.q_min) / base])
                else:
                    vec = np.zeros(3)
                X[xname(t, h, c.u)] = np.outer(vec, vec)
        v = np.concatenate([e[t], f[t]])
        X[vname(t)] = np.outer(v, v)
    ys = {yname(t, h): float(y[t][h]) for t in range(inst.horizon) for h in range(inst.n_plant)}
    return X, ys
