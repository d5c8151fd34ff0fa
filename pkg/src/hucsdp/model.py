"""HUC instance data model: hydro plants, unit-configuration curves, AC network.

Units: curve coefficients and plant data are physical (MW, m^3/s, hm^3); network
quantities (loads, admittances, flow limits) are per-unit on ``base_mva``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

THETA = 0.0036  # hm^3 per (m^3/s * h)

_RANGE_TOL = 1e-9


class OutOfRange(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class UnitConfigCurve:
    u: int
    alpha: float
    beta: float
    gamma: float
    p_min: float
    dp_max: float
    q_min: float
    q_max: float

    @property
    def p_max(self) -> float:
        return self.p_min + self.dp_max

    @property
    def dq_max(self) -> float:
        return self.q_max - self.q_min

    def covers(self, p: float, tol: float = 1e-6) -> bool:
        scale = max(1.0, abs(self.p_max))
        return self.p_min - tol * scale <= p <= self.p_max + tol * scale


@dataclass(frozen=True)
class HydroPlant:
    id: int
    bus: int
    water_value: float
    startup_cost: float
    v0: float
    v_min: float
    v_max: float
    inflows: tuple[float, ...]
    spillage: float
    configs: tuple[UnitConfigCurve, ...]
    initial_config: int
    downstream: Optional[tuple[int, int]] = None  # (plant id, delay in hours)
    target: Optional[float] = None  # MWh over the horizon; None for a slack plant

    def config(self, u: int) -> UnitConfigCurve:
        for c in self.configs:
            if c.u == u:
                return c
        raise KeyError(f"plant {self.id} has no configuration {u}")

    @property
    def max_config(self) -> int:
        return max(c.u for c in self.configs)


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: tuple[float, ...]  # p.u. per hour
    q_load: tuple[float, ...]
    v_min: float
    v_max: float


@dataclass(frozen=True)
class Line:
    i: int  # bus id
    j: int
    g: float  # p.u. series conductance
    b: float  # p.u. series susceptance
    f_max: float  # p.u. active flow limit


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack: int  # bus id
    v_slack: float
    _index: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {b.id: k for k, b in enumerate(self.buses)})

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    def index(self, bus_id: int) -> int:
        return self._index[bus_id]

    @property
    def slack_index(self) -> int:
        return self._index[self.slack]

    def neighbors(self, bus_id: int) -> list[int]:
        out = []
        for ln in self.lines:
            if ln.i == bus_id:
                out.append(ln.j)
            elif ln.j == bus_id:
                out.append(ln.i)
        return out

    def incident(self, bus_id: int) -> list[tuple[int, float, float]]:
        """(other bus id, g, b) for every line touching ``bus_id``."""
        out = []
        for ln in self.lines:
            if ln.i == bus_id:
                out.append((ln.j, ln.g, ln.b))
            elif ln.j == bus_id:
                out.append((ln.i, ln.g, ln.b))
        return out


@dataclass(frozen=True)
class HucInstance:
    horizon: int
    plants: tuple[HydroPlant, ...]
    network: Network
    base_mva: float = 100.0
    theta: float = THETA
    name: str = "instance"

    @property
    def n_plant(self) -> int:
        return len(self.plants)

    def plant_index(self, plant_id: int) -> int:
        for k, p in enumerate(self.plants):
            if p.id == plant_id:
                return k
        raise KeyError(plant_id)

    def plants_at(self, bus_id: int) -> list[int]:
        """Indices of plants connected at ``bus_id`` (the set Psi_i)."""
        return [k for k, p in enumerate(self.plants) if p.bus == bus_id]

    def upstream(self, h: int) -> list[tuple[int, int]]:
        """(plant index, delay) for plants discharging into plant ``h``."""
        hid = self.plants[h].id
        return [
            (k, p.downstream[1])
            for k, p in enumerate(self.plants)
            if p.downstream is not None and p.downstream[0] == hid
        ]

    def units(self):
        """All (t, h, u) triples in canonical order (t, h 0-based; u is the config index)."""
        for t in range(self.horizon):
            for h, plant in enumerate(self.plants):
                for c in plant.configs:
                    yield (t, h, c.u)

    def validate(self) -> "HucInstance":
        validate_instance(self)
        return self


def water_discharge(curve: UnitConfigCurve, p: float) -> float:
    """Discharge (m^3/s) needed to generate ``p`` MW in this configuration."""
    tol = _RANGE_TOL * max(1.0, abs(curve.p_max))
    if p < curve.p_min - tol or p > curve.p_max + tol:
        raise OutOfRange(
            f"p = {p} outside [{curve.p_min}, {curve.p_max}] for configuration {curve.u}"
        )
    return curve.alpha * p * p + curve.beta * p + curve.gamma


def shifted_curve(curve: UnitConfigCurve) -> tuple[float, float, float]:
    """Discharge coefficients in the deviation dP, where p = dP + p_min."""
    a, b, g, pm = curve.alpha, curve.beta, curve.gamma, curve.p_min
    return a, b + 2.0 * a * pm, g + b * pm + a * pm * pm


def reservoir_rhs(inst: HucInstance, h: int, t: int) -> float:
    """Upper-volume slack term for plant ``h`` after hour ``t`` (0-based).

    v_max - v0 - theta * sum_{i<=t} (a_{h,i} - s_h + upstream spillage arriving by i).
    Upstream spillage is assumed to travel with the same delay as upstream discharge.
    """
    plant = inst.plants[h]
    total = 0.0
    for i in range(t + 1):
        total += plant.inflows[i] - plant.spillage
        for k, delay in inst.upstream(h):
            if i - delay >= 0:
                total += inst.plants[k].spillage
    return plant.v_max - plant.v0 - inst.theta * total


def volume_trajectory(inst: HucInstance, discharge) -> list[list[float]]:
    """Reservoir volumes (hm^3) at the end of each hour for discharges ``discharge[t][h]``."""
    vols = []
    for h, plant in enumerate(inst.plants):
        row = []
        v = plant.v0
        for t in range(inst.horizon):
            inflow = plant.inflows[t] - plant.spillage - discharge[t][h]
            for k, delay in inst.upstream(h):
                if t - delay >= 0:
                    inflow += discharge[t - delay][k] + inst.plants[k].spillage
            v += inst.theta * inflow
            row.append(v)
        vols.append(row)
    return vols


def _check_curve(plant_id: int, c: UnitConfigCurve) -> None:
    where = f"plant {plant_id} config {c.u}"
    if c.alpha < 0:
        raise ValidationError(f"{where}: alpha must be >= 0")
    if c.dp_max < 0:
        raise ValidationError(f"{where}: dp_max must be >= 0")
    if c.p_min < 0:
        raise ValidationError(f"{where}: p_min must be >= 0")
    if c.q_min > c.q_max:
        raise ValidationError(f"{where}: q_min > q_max")
    pts = [c.p_min, c.p_max]
    if c.alpha > 0:
        vertex = -c.beta / (2 * c.alpha)
        if c.p_min < vertex < c.p_max:
            pts.append(vertex)
    for p in pts:
        if c.alpha * p * p + c.beta * p + c.gamma < -1e-9:
            raise ValidationError(f"{where}: discharge negative at p = {p}")


def validate_instance(inst: HucInstance) -> None:
    T = inst.horizon
    net = inst.network
    if T < 1:
        raise ValidationError("horizon must be >= 1")
    if inst.base_mva <= 0:
        raise ValidationError("base_mva must be positive")
    if net.n_bus < 1:
        raise ValidationError("network has no buses")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    if net.slack not in ids:
        raise ValidationError("slack bus missing")
    if net.v_slack <= 0:
        raise ValidationError("slack voltage magnitude must be positive")
    for b in net.buses:
        if not (0 < b.v_min <= b.v_max):
            raise ValidationError(f"bus {b.id}: need 0 < v_min <= v_max")
        if len(b.p_load) != T or len(b.q_load) != T:
            raise ValidationError(f"bus {b.id}: load arrays must have length {T}")
    for ln in net.lines:
        if ln.i not in net._index or ln.j not in net._index:
            raise ValidationError(f"line {ln.i}-{ln.j}: unknown bus")
        if ln.i == ln.j:
            raise ValidationError(f"line {ln.i}-{ln.j}: self loop")
        if ln.f_max <= 0:
            raise ValidationError(f"line {ln.i}-{ln.j}: flow limit must be positive")
    # connectivity
    seen = {ids[0]}
    queue = deque([ids[0]])
    while queue:
        cur = queue.popleft()
        for nb in net.neighbors(cur):
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if len(seen) != len(ids):
        raise ValidationError("network graph is not connected")

    if not inst.plants:
        raise ValidationError("instance has no hydro plants")
    pids = [p.id for p in inst.plants]
    if len(set(pids)) != len(pids):
        raise ValidationError("duplicate plant ids")
    for p in inst.plants:
        where = f"plant {p.id}"
        if p.bus not in net._index:
            raise ValidationError(f"{where}: bus {p.bus} not in network")
        if not (p.v_min <= p.v0 <= p.v_max):
            raise ValidationError(f"{where}: need v_min <= v0 <= v_max")
        if len(p.inflows) != T:
            raise ValidationError(f"{where}: inflows must have length {T}, got {len(p.inflows)}")
        if not p.configs:
            raise ValidationError(f"{where}: no configurations")
        us = [c.u for c in p.configs]
        if len(set(us)) != len(us) or min(us) < 1:
            raise ValidationError(f"{where}: configuration indices must be unique and >= 1")
        if p.initial_config not in us and p.initial_config != 0:
            raise ValidationError(f"{where}: initial_config {p.initial_config} unknown")
        if p.water_value < 0 or p.startup_cost < 0:
            raise ValidationError(f"{where}: water_value and startup_cost must be >= 0")
        if p.spillage < 0:
            raise ValidationError(f"{where}: spillage must be >= 0")
        for c in p.configs:
            _check_curve(p.id, c)
        if p.downstream is not None:
            if p.downstream[0] not in pids:
                raise ValidationError(f"{where}: downstream plant {p.downstream[0]} unknown")
            if p.downstream[1] < 0:
                raise ValidationError(f"{where}: negative downstream delay")
    # acyclic cascade
    nxt = {p.id: (p.downstream[0] if p.downstream else None) for p in inst.plants}
    for start in pids:
        cur, steps = nxt[start], 0
        while cur is not None:
            if cur == start or steps > len(pids):
                raise ValidationError(f"plant {start}: downstream graph has a cycle")
            cur, steps = nxt[cur], steps + 1
