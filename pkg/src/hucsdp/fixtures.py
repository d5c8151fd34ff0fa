"""Seeded synthetic HUC instances.

A configuration with u identical units running at equal share p/u discharges
u * q1(p/u), so its curve is (alpha1/u, beta1, u*gamma1) on [u*pmin1, u*pmax1].
Generation targets are taken from a proportional reference dispatch, which keeps
every generated instance feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .casefile import load_instance
from .model import Bus, HucInstance, HydroPlant, Line, Network, UnitConfigCurve


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    n_bus: int
    n_plant: int
    horizon: int
    extra_lines: int
    max_units: int = 3
    seed: int = 0
    load_factor: float = 0.55  # peak load as a fraction of installed capacity
    cascade: bool = True


SMALL = FixtureSpec("small", n_bus=3, n_plant=2, horizon=4, extra_lines=1, max_units=2, seed=11)
MEDIUM = FixtureSpec("medium", n_bus=14, n_plant=3, horizon=8, extra_lines=6, max_units=3, seed=23)
LARGE = FixtureSpec("large", n_bus=30, n_plant=4, horizon=12, extra_lines=6, max_units=3, seed=37)
BUNDLED = (SMALL, MEDIUM, LARGE)


def unit_configs(n_units: int, alpha1, beta1, gamma1, pmin1, pmax1, qmin1, qmax1) -> tuple[UnitConfigCurve, ...]:
    out = []
    for u in range(1, n_units + 1):
        out.append(
            UnitConfigCurve(
                u=u,
                alpha=alpha1 / u,
                beta=beta1,
                gamma=u * gamma1,
                p_min=u * pmin1,
                dp_max=u * (pmax1 - pmin1),
                q_min=u * qmin1,
                q_max=u * qmax1,
            )
        )
    return tuple(out)


def _topology(rng, n: int, extra: int) -> list[tuple[int, int]]:
    edges = set()
    for k in range(1, n):
        parent = int(rng.integers(max(0, k - 3), k))
        edges.add((parent, k))
    cand = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in edges]
    rng.shuffle(cand)
    for e in cand[:extra]:
        edges.add(e)
    return sorted(edges)


def generate(spec: FixtureSpec) -> HucInstance:
    rng = np.random.default_rng(spec.seed)
    n, T, base = spec.n_bus, spec.horizon, 100.0

    lines = []
    for i, j in _topology(rng, n, spec.extra_lines if n > 2 else 0):
        r = rng.uniform(0.005, 0.02)
        x = rng.uniform(0.03, 0.08)
        z2 = r * r + x * x
        lines.append(Line(i + 1, j + 1, g=r / z2, b=-x / z2, f_max=2.5))

    # plants on distinct buses, the first one at the slack bus
    plant_buses = [1] + sorted(int(b) + 1 for b in rng.choice(np.arange(1, n), size=spec.n_plant - 1, replace=False))
    plants_raw = []
    for h in range(spec.n_plant):
        n_units = int(rng.integers(2, spec.max_units + 1))
        pmax1 = float(np.round(rng.uniform(40, 90), 1))
        pmin1 = float(np.round(pmax1 * rng.uniform(0.35, 0.5), 1))
        alpha1 = float(np.round(rng.uniform(4e-3, 9e-3), 5))
        beta1 = float(np.round(rng.uniform(0.8, 1.4), 3))
        gamma1 = float(np.round(rng.uniform(6.0, 14.0), 2))
        configs = unit_configs(n_units, alpha1, beta1, gamma1, pmin1, pmax1, -0.4 * pmax1, 0.6 * pmax1)
        plants_raw.append((plant_buses[h], configs))
    capacity = sum(c[-1].p_max for _, c in plants_raw)
    floor = sum(c[0].p_min for _, c in plants_raw)

    # loads: random bus weights times a daily shape
    weights = rng.uniform(0.5, 1.5, size=n) * (rng.random(n) < 0.75)
    if weights.sum() == 0:
        weights[-1] = 1.0
    weights /= weights.sum()
    hours = np.arange(T)
    shape = 0.78 + 0.22 * np.sin(np.pi * (hours + 1) / (T + 1)) + rng.uniform(-0.03, 0.03, size=T)
    peak = max(spec.load_factor * capacity, 1.3 * floor)
    total = peak * shape / shape.max()
    buses = []
    for i in range(n):
        pl = tuple(float(np.round(total[t] * weights[i], 3)) / base for t in range(T))
        ql = tuple(float(np.round(0.25 * total[t] * weights[i], 3)) / base for t in range(T))
        buses.append(Bus(i + 1, pl, ql, v_min=0.9, v_max=1.1))
    network = Network(tuple(buses), tuple(lines), slack=1, v_slack=1.0)

    # reference dispatch for targets: shares proportional to capacity, 2% for losses
    load_mw = np.array([sum(b.p_load[t] for b in buses) * base for t in range(T)])
    caps = np.array([c[-1].p_max for _, c in plants_raw])
    share = np.outer(load_mw * 1.02, caps / caps.sum())

    plants = []
    for h, (bus, configs) in enumerate(plants_raw):
        mean_q = float(np.mean([c.alpha * p * p + c.beta * p + c.gamma for p, c in ((s, configs[-1]) for s in share[:, h])]))
        inflow = tuple(float(np.round(mean_q * rng.uniform(0.6, 0.9), 2)) for _ in range(T))
        downstream = None
        if spec.cascade and h + 1 < spec.n_plant and h % 2 == 1:
            downstream = (h + 2, 1)
        plants.append(
            HydroPlant(
                id=h + 1,
                bus=bus,
                water_value=float(np.round(rng.uniform(800.0, 1600.0), 1)),
                startup_cost=float(np.round(rng.uniform(2.0, 8.0), 2)),
                v0=60.0,
                v_min=20.0,
                v_max=100.0,
                inflows=inflow,
                spillage=0.0,
                configs=configs,
                initial_config=1,
                downstream=downstream,
                target=None if h == 0 else float(np.round(share[:, h].sum(), 2)),
            )
        )
    inst = HucInstance(T, tuple(plants), network, base_mva=base, name=spec.name)
    inst.validate()
    return inst


DATA_DIR = Path(__file__).parent / "data"


def bundled(name: str) -> HucInstance:
    """A shipped fixture, read from its files (``generate`` reproduces them up to
    the last bit of the line admittances)."""
    if name not in {s.name for s in BUNDLED}:
        raise KeyError(name)
    return load_instance(DATA_DIR / f"{name}.m", DATA_DIR / f"{name}.toml", name=name)
