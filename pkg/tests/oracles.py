"""Independent reference computations used as test oracles.

Nothing here reuses the stencils or solvers under test: SDP instances are built
from known optimal pairs, MILPs and schedules are enumerated, and AC operating
points come from a complex-arithmetic Newton power flow.
"""

from __future__ import annotations

import itertools

import numpy as np

from hucsdp.model import HucInstance
from hucsdp.sdpproblem import SdpBlockProblem, Sym


# --- SDPs with a known optimum ------------------------------------------------------


def known_sdp(seed: int):
    """Random SDP built around a complementary primal-dual pair (X, y, S).

    Block X and S share eigenvectors with complementary supports, so X S = 0 and
    C = sum y_i A_i + S makes both feasible; the optimum is C . X exactly. The
    first row is a positive diagonal so the primal feasible set is bounded.
    """
    rng = np.random.default_rng(seed)
    dims = [int(d) for d in rng.integers(1, 6, size=rng.integers(1, 4))]
    nlp = int(rng.integers(0, 4))
    m = int(rng.integers(1, 8))
    prob = SdpBlockProblem()
    Xs, Ss = {}, {}
    for k, n in enumerate(dims):
        Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        r = int(rng.integers(0, n + 1))
        lx = np.r_[rng.uniform(0.5, 2, r), np.zeros(n - r)]
        ls = np.r_[np.zeros(r), rng.uniform(0.5, 2, n - r)]
        Xs[f"B{k}"] = Q @ np.diag(lx) @ Q.T
        Ss[f"B{k}"] = Q @ np.diag(ls) @ Q.T
        prob.add_block(f"B{k}", n)
    xl = rng.uniform(0.5, 2, nlp) * (rng.random(nlp) < 0.5)
    sl = np.where(xl > 0, 0.0, rng.uniform(0.5, 2, nlp))
    for i in range(nlp):
        prob.add_var(f"v{i}")
    y = rng.standard_normal(m)
    C = {b: S.copy() for b, S in Ss.items()}
    c = sl.copy()
    for i in range(m):
        terms, rhs = {}, 0.0
        for b, X in Xs.items():
            n = X.shape[0]
            A = rng.standard_normal((n, n))
            A = A + A.T
            if i == 0:
                A = np.diag(rng.uniform(0.5, 2, n))
            terms[b] = Sym.from_dense(A)
            rhs += float(np.sum(A * X))
            C[b] += y[i] * A
        a = rng.standard_normal(nlp) if i else rng.uniform(0.5, 2, nlp)
        rhs += float(a @ xl)
        c += y[i] * a
        prob.add_eq(f"r{i}", terms, rhs, lin={f"v{j}": a[j] for j in range(nlp)})
    for b, M in C.items():
        prob.add_objective(b, Sym.from_dense(M))
    for j in range(nlp):
        prob.costs[f"v{j}"] = float(c[j])
    opt = sum(float(np.sum(C[b] * Xs[b])) for b in C) + float(c @ xl)
    return prob, opt


# --- enumeration ------------------------------------------------------------------


def enumerate_milp(milp):
    """Best (objective, assignment) over every candidate combination."""
    keys = sorted(milp.candidates)
    best = None
    for choice in itertools.product(*[milp.candidates[k] for k in keys]):
        assign = dict(zip(keys, choice))
        val = milp.evaluate(assign)
        if best is None or val < best[0] - 1e-12:
            best = (val, assign)
    return best


def all_schedules(inst: HucInstance):
    pairs = [(t, h) for t in range(inst.horizon) for h in range(inst.n_plant)]
    options = [[c.u for c in inst.plants[h].configs] for _, h in pairs]
    for choice in itertools.product(*options):
        cfg = np.zeros((inst.horizon, inst.n_plant), dtype=int)
        for (t, h), u in zip(pairs, choice):
            cfg[t, h] = u
        yield cfg


# --- AC operating points ------------------------------------------------------------


def admittance(inst: HucInstance) -> np.ndarray:
    net = inst.network
    Y = np.zeros((net.n_bus, net.n_bus), dtype=complex)
    for ln in net.lines:
        i, j = net.index(ln.i), net.index(ln.j)
        y = complex(ln.g, ln.b)
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


def power_flow(Y, slack: int, v_slack: float, s_inj: np.ndarray, iters: int = 50):
    """Newton power flow in rectangular coordinates.

    ``s_inj`` holds the complex injections (p.u.) of the non-slack buses; the
    slack bus absorbs the rest. Returns (V, slack injection) or None.
    """
    n = Y.shape[0]
    others = [i for i in range(n) if i != slack]
    V = np.ones(n, dtype=complex) * v_slack

    def mismatch(V):
        S = V * np.conj(Y @ V)
        d = S[others] - s_inj[others]
        return np.r_[d.real, d.imag]

    for _ in range(iters):
        F = mismatch(V)
        if np.max(np.abs(F)) < 1e-14:
            break
        J = np.zeros((2 * len(others), 2 * len(others)))
        h = 1e-7
        for k, i in enumerate(others):
            for part, col in ((1.0, k), (1j, len(others) + k)):
                Vp = V.copy()
                Vp[i] += h * part
                Vm = V.copy()
                Vm[i] -= h * part
                J[:, col] = (mismatch(Vp) - mismatch(Vm)) / (2 * h)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        V[others] += dx[:len(others)] + 1j * dx[len(others):]
    if np.max(np.abs(mismatch(V))) > 1e-12:
        return None
    S = V * np.conj(Y @ V)
    return V, S[slack]


def ac_points(inst: HucInstance, count: int, seed: int = 0, max_tries: int = 20000):
    """Feasible mixed-integer operating points found by random sampling.

    Each sample draws a schedule, the dispatch of every plant off the slack bus
    (targets met exactly) and their reactive output, solves the power flow and
    keeps the point only if every physical limit holds.
    """
    rng = np.random.default_rng(seed)
    net, base, T = inst.network, inst.base_mva, inst.horizon
    Y = admittance(inst)
    s = net.slack_index
    slack_plants = inst.plants_at(net.buses[s].id)
    assert len(slack_plants) == 1, "oracle expects a single plant at the slack bus"
    hs = slack_plants[0]
    found = []
    for _ in range(max_tries):
        if len(found) >= count:
            break
        cfg = np.array([[rng.choice([c.u for c in p.configs]) for p in inst.plants] for _ in range(T)])
        p = np.zeros((T, inst.n_plant))
        q = np.zeros_like(p)
        ok = True
        for h, plant in enumerate(inst.plants):
            if h == hs:
                continue
            lo = np.array([plant.config(int(cfg[t, h])).p_min for t in range(T)])
            hi = np.array([plant.config(int(cfg[t, h])).p_max for t in range(T)])
            if plant.target is None:
                p[:, h] = rng.uniform(lo, hi)
            else:
                if not lo.sum() <= plant.target <= hi.sum():
                    ok = False
                    break
                w = rng.uniform(0.0, 1.0, T)
                lam = (plant.target - lo.sum()) / (hi - lo).sum()
                share = lo + lam * (hi - lo)
                # perturb along a zero-sum direction, then finish the last hour exactly
                d = (w - w.mean()) * 0.3 * (hi - lo).min()
                p[:, h] = share + d
                p[T - 1, h] = plant.target - p[:T - 1, h].sum()
                if np.any(p[:, h] < lo) or np.any(p[:, h] > hi):
                    ok = False
                    break
            for t in range(T):
                c = plant.config(int(cfg[t, h]))
                q[t, h] = rng.uniform(c.q_min, c.q_max) * 0.5
        if not ok:
            continue
        e = np.zeros((T, net.n_bus))
        f = np.zeros_like(e)
        for t in range(T):
            sinj = np.array([-(b.p_load[t] + 1j * b.q_load[t]) for b in net.buses], dtype=complex)
            for h, plant in enumerate(inst.plants):
                if h != hs:
                    sinj[net.index(plant.bus)] += (p[t, h] + 1j * q[t, h]) / base
            res = power_flow(Y, s, net.v_slack, sinj)
            if res is None:
                ok = False
                break
            V, s_slack = res
            gen = s_slack + net.buses[s].p_load[t] + 1j * net.buses[s].q_load[t]
            p[t, hs], q[t, hs] = gen.real * base, gen.imag * base
            e[t], f[t] = V.real, V.imag
        if not ok or not _within_limits(inst, cfg, p, q, e, f, Y):
            continue
        y = _startups(inst, cfg)
        found.append({"config": cfg, "p": p, "q": q, "e": e, "f": f, "y": y})
    return found


def _startups(inst, cfg):
    y = np.zeros(cfg.shape)
    for h, plant in enumerate(inst.plants):
        prev = plant.initial_config
        for t in range(inst.horizon):
            y[t, h] = max(0, cfg[t, h] - prev)
            prev = cfg[t, h]
    return y


def _within_limits(inst, cfg, p, q, e, f, Y) -> bool:
    net = inst.network
    margin = 1e-7
    for t in range(inst.horizon):
        for h, plant in enumerate(inst.plants):
            c = plant.config(int(cfg[t, h]))
            if not (c.p_min + margin <= p[t, h] <= c.p_max - margin):
                return False
            if not (c.q_min + margin <= q[t, h] <= c.q_max - margin):
                return False
        V = e[t] + 1j * f[t]
        for i, b in enumerate(net.buses):
            if i != net.slack_index and not (b.v_min ** 2 + margin <= abs(V[i]) ** 2 <= b.v_max ** 2 - margin):
                return False
        for ln in net.lines:
            i, j = net.index(ln.i), net.index(ln.j)
            y = complex(ln.g, ln.b)
            for a, bb in ((i, j), (j, i)):
                flow = (V[a] * np.conj(y * (V[a] - V[bb]))).real
                if flow > ln.f_max - margin:
                    return False
    discharge = [[plant.config(int(cfg[t, h])).alpha * p[t, h] ** 2 + plant.config(int(cfg[t, h])).beta * p[t, h]
                  + plant.config(int(cfg[t, h])).gamma for h, plant in enumerate(inst.plants)] for t in range(inst.horizon)]
    for h, plant in enumerate(inst.plants):
        feeders = [(k, other.downstream[1]) for k, other in enumerate(inst.plants)
                   if other.downstream is not None and other.downstream[0] == plant.id]
        vol = plant.v0
        for t in range(inst.horizon):
            net_in = plant.inflows[t] - plant.spillage - discharge[t][h]
            for k, delay in feeders:
                if t >= delay:
                    net_in += discharge[t - delay][k] + inst.plants[k].spillage
            vol += inst.theta * net_in
            if not plant.v_min + margin <= vol <= plant.v_max - margin:
                return False
    return True


# --- hand-sized instances -------------------------------------------------------------


def one_bus(loads_mw, configs=None, startup_cost=1.0, q_loads=None, initial_config=1):
    """A single plant at a single (slack) bus with no lines.

    Losses are zero, so the dispatch must equal the load in every hour and the
    cost of a schedule has a closed form.
    """
    from hucsdp.model import Bus, HucInstance, HydroPlant, Network, UnitConfigCurve

    T = len(loads_mw)
    if configs is None:
        configs = (
            UnitConfigCurve(1, 4e-3, 1.0, 8.0, 20.0, 40.0, -30.0, 30.0),
            UnitConfigCurve(2, 2e-3, 1.0, 16.0, 40.0, 80.0, -60.0, 60.0),
        )
    q_loads = q_loads if q_loads is not None else [0.0] * T
    bus = Bus(1, tuple(p / 100.0 for p in loads_mw), tuple(q / 100.0 for q in q_loads), 0.9, 1.1)
    plant = HydroPlant(
        id=1, bus=1, water_value=1000.0, startup_cost=startup_cost, v0=50.0, v_min=0.0, v_max=100.0,
        inflows=tuple([50.0] * T), spillage=0.0, configs=tuple(configs), initial_config=initial_config,
    )
    return HucInstance(T, (plant,), Network((bus,), (), slack=1, v_slack=1.0), name="one-bus").validate()


def one_bus_cost(inst, cfg):
    """Closed-form objective of schedule ``cfg`` on a ``one_bus`` instance (None if out of range)."""
    plant = inst.plants[0]
    total, prev = 0.0, plant.initial_config
    for t in range(inst.horizon):
        c = plant.config(int(cfg[t][0]))
        p = inst.network.buses[0].p_load[t] * inst.base_mva
        if not c.p_min - 1e-9 <= p <= c.p_max + 1e-9:
            return None
        total += plant.water_value * inst.theta * (c.alpha * p * p + c.beta * p + c.gamma)
        total += plant.startup_cost * max(0, c.u - prev)
        prev = c.u
    return total


def opf_point(seed: int, n_bus: int | None = None, n_plant: int | None = None, mix: int | None = None):
    """A feasible, usually higher-rank, one-hour OPF block: a convex mix of
    power-flow lifts sharing one schedule, plus PSD mass on the reactive-output
    squares sized to stay inside their box cuts. Returns (inst, prob, Z) or None.
    """
    from collections import Counter

    from hucsdp.fixtures import FixtureSpec, generate
    from hucsdp.reopt import build_opf
    from hucsdp.rounding import CommitmentSchedule

    rng = np.random.default_rng(seed)
    nb, nh = int(rng.integers(3, 9)), int(rng.integers(2, 4))
    spec = FixtureSpec("opf", n_bus=n_bus or nb, n_plant=n_plant or nh, horizon=1,
                       extra_lines=int(rng.integers(0, 3)), seed=seed)
    inst = generate(spec)
    pts = ac_points(inst, 30, seed=seed, max_tries=3000)
    if not pts:
        return None
    cfg, _ = Counter(tuple(p["config"].ravel()) for p in pts).most_common(1)[0]
    pts = [p for p in pts if tuple(p["config"].ravel()) == cfg]
    prob = build_opf(inst, CommitmentSchedule.from_configs(inst, pts[0]["config"]))
    base, H = inst.base_mva, inst.n_plant
    zs = [np.r_[1.0, p["p"][0] / base, p["q"][0] / base, p["e"][0], p["f"][0]] for p in pts]
    k = min(len(zs), mix or int(rng.integers(1, 6)))
    w = rng.dirichlet(np.ones(k))
    Z = sum(wi * np.outer(z, z) for wi, z in zip(w, zs[:k]))
    room = []
    for h in range(H):
        c = inst.plants[h].config(int(cfg[h]))
        lo, hi, qi = c.q_min / base, c.q_max / base, 1 + H + h
        room.append((lo + hi) * Z[0, qi] - lo * hi - Z[qi, qi])
    G = rng.standard_normal((H, H))
    P = G @ G.T
    d = np.sqrt(np.diag(P))
    Z[1 + H:1 + 2 * H, 1 + H:1 + 2 * H] += 0.5 * P / np.outer(d, d) * np.sqrt(np.outer(room, room))
    return inst, prob, Z
