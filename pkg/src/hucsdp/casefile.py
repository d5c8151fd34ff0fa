"""Reading and writing instance files.

Network file (MATPOWER-style plain text)::

    mpc.baseMVA = 100;
    mpc.bus = [
    %  bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin
       1     3    0  0  0  0  1    1.0 0  135    1    1.05 0.95;
    ];
    mpc.branch = [
    %  fbus tbus r x b rateA [rateB rateC ratio angle status ...]
       1    2    0.01 0.06 0 100;
    ];
    mpc.pload = [
    %  bus_i  MW at hour 1 .. T
       2      40 42 45 43;
    ];
    mpc.qload = [
    %  bus_i  MVAr at hour 1 .. T
       2      10 10 11 10;
    ];

Bus columns follow MATPOWER (type 3 marks the slack bus; its ``Vm`` is the
fixed slack magnitude). ``pload``/``qload`` are optional: buses missing from
them use the constant ``Pd``/``Qd``. Shunts (``Gs``, ``Bs``) and line charging
(``b``) are not modelled and must be zero. Branches with status 0 are skipped.

Hydro file (TOML)::

    horizon = 4
    theta = 0.0036          # optional

    [[plant]]
    id = 1
    bus = 2
    water_value = 120.0     # $/hm^3
    startup_cost = 300.0    # $/startup
    v0 = 50.0               # hm^3
    v_min = 10.0
    v_max = 80.0
    inflows = [300.0, 300.0, 310.0, 305.0]   # m^3/s per hour
    spillage = 0.0          # m^3/s
    downstream = [2, 1]     # optional: plant id, delay (h)
    target = 400.0          # optional: MWh over the horizon; omit for the slack plant
    initial_config = 1
    configs = [
      # u, alpha, beta, gamma, p_min, dp_max, q_min, q_max
      [1, 0.002, 0.9, 10.0, 30.0, 70.0, -30.0, 30.0],
    ]
"""

from __future__ import annotations

import json
import re
import warnings
from pathlib import Path

import tomli

from .model import (
    THETA,
    Bus,
    HucInstance,
    HydroPlant,
    Line,
    Network,
    UnitConfigCurve,
    ValidationError,
    validate_instance,
)


class CaseParseError(ValueError):
    def __init__(self, path, line, msg):
        self.path, self.line = str(path), line
        loc = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{loc}: {msg}")


_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _strip_comment(s: str) -> str:
    return s.split("%", 1)[0].split("#", 1)[0]


def parse_matpower(text: str, path="<string>") -> dict:
    """Parse ``mpc.name = value;`` scalars and ``mpc.name = [ ... ];`` tables.

    Tables come back as lists of ``(line_number, [floats])`` rows.
    """
    out: dict = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines):
        raw = _strip_comment(lines[k])
        m = _ASSIGN.match(raw)
        if not m:
            if raw.strip() and not raw.strip().startswith("function"):
                raise CaseParseError(path, k + 1, f"unexpected content {raw.strip()!r}")
            k += 1
            continue
        name, rest = m.group(1), m.group(2).strip()
        if rest.startswith("["):
            rows = []
            body = rest[1:]
            lineno = k + 1
            while True:
                end = body.find("]")
                chunk = body if end < 0 else body[:end]
                for piece in chunk.split(";"):
                    if piece.strip():
                        try:
                            rows.append((lineno, [float(v) for v in piece.replace(",", " ").split()]))
                        except ValueError as exc:
                            raise CaseParseError(path, lineno, f"{name}: {exc}") from None
                if end >= 0:
                    break
                k += 1
                if k >= len(lines):
                    raise CaseParseError(path, lineno, f"unterminated table mpc.{name}")
                lineno = k + 1
                body = _strip_comment(lines[k])
            out[name] = rows
        else:
            val = rest.rstrip(";").strip().strip("'\"")
            try:
                out[name] = float(val)
            except ValueError:
                out[name] = val
        k += 1
    return out


def _row(rows, path, name, ncol):
    for lineno, vals in rows:
        if len(vals) < ncol:
            raise CaseParseError(path, lineno, f"mpc.{name} row needs >= {ncol} columns, got {len(vals)}")
        yield lineno, vals


def read_network(path, horizon: int) -> tuple[Network, float]:
    path = Path(path)
    data = parse_matpower(path.read_text(), path)
    for key in ("baseMVA", "bus", "branch"):
        if key not in data:
            raise CaseParseError(path, None, f"missing section mpc.{key}")
    base = data["baseMVA"]
    if not isinstance(base, float):
        raise CaseParseError(path, None, "mpc.baseMVA must be numeric")

    profiles = {}
    for key in ("pload", "qload"):
        prof = {}
        for lineno, vals in _row(data.get(key, []), path, key, 1):
            if len(vals) != horizon + 1:
                raise ValidationError(
                    f"{path}:{lineno}: mpc.{key} row for bus {int(vals[0])} has "
                    f"{len(vals) - 1} hourly values, expected {horizon}"
                )
            prof[int(vals[0])] = tuple(v / base for v in vals[1:])
        profiles[key] = prof

    buses, slack, v_slack = [], None, None
    for lineno, vals in _row(data["bus"], path, "bus", 13):
        bid, btype = int(vals[0]), int(vals[1])
        if vals[4] != 0 or vals[5] != 0:
            raise CaseParseError(path, lineno, f"bus {bid}: shunts (Gs, Bs) are not supported")
        if btype == 3:
            if slack is not None:
                raise ValidationError(f"{path}:{lineno}: more than one slack bus")
            slack, v_slack = bid, vals[7]
        pl = profiles["pload"].get(bid, tuple([vals[2] / base] * horizon))
        ql = profiles["qload"].get(bid, tuple([vals[3] / base] * horizon))
        buses.append(Bus(bid, pl, ql, v_min=vals[12], v_max=vals[11]))
    if slack is None:
        raise ValidationError(f"{path}: missing slack bus (no bus of type 3)")

    lines = []
    for lineno, vals in _row(data["branch"], path, "branch", 6):
        if len(vals) >= 11 and vals[10] == 0:
            continue
        r, x = vals[2], vals[3]
        if vals[4] != 0:
            warnings.warn(f"{path}:{lineno}: line charging ignored", stacklevel=2)
        z2 = r * r + x * x
        if z2 == 0:
            raise CaseParseError(path, lineno, "branch with zero impedance")
        rate = vals[5] if vals[5] > 0 else 9900.0
        lines.append(Line(int(vals[0]), int(vals[1]), g=r / z2, b=-x / z2, f_max=rate / base))
    return Network(tuple(buses), tuple(lines), slack, v_slack), base


_CONFIG_FIELDS = ("u", "alpha", "beta", "gamma", "p_min", "dp_max", "q_min", "q_max")
_PLANT_REQUIRED = (
    "id", "bus", "water_value", "startup_cost", "v0", "v_min", "v_max", "inflows", "configs",
)


def read_hydro(path) -> tuple[int, float, list[HydroPlant]]:
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise CaseParseError(path, int(m.group(1)) if m else None, str(exc)) from None
    if "horizon" not in doc:
        raise CaseParseError(path, None, "missing key 'horizon'")
    horizon = int(doc["horizon"])
    theta = float(doc.get("theta", THETA))
    plants = []
    for k, blk in enumerate(doc.get("plant", [])):
        where = f"{path}: plant #{k + 1}"
        for key in _PLANT_REQUIRED:
            if key not in blk:
                raise CaseParseError(path, None, f"plant #{k + 1}: missing field '{key}'")
        configs = []
        for row in blk["configs"]:
            if len(row) != len(_CONFIG_FIELDS):
                raise CaseParseError(
                    path, None, f"plant {blk['id']}: config row needs {len(_CONFIG_FIELDS)} values"
                )
            vals = dict(zip(_CONFIG_FIELDS, row))
            vals["u"] = int(vals["u"])
            configs.append(UnitConfigCurve(**{f: (vals[f] if f == "u" else float(vals[f])) for f in _CONFIG_FIELDS}))
        down = blk.get("downstream")
        if down is not None:
            if len(down) != 2:
                raise CaseParseError(path, None, f"{where}: downstream must be [plant_id, delay]")
            down = (int(down[0]), int(down[1]))
        plants.append(
            HydroPlant(
                id=int(blk["id"]),
                bus=int(blk["bus"]),
                water_value=float(blk["water_value"]),
                startup_cost=float(blk["startup_cost"]),
                v0=float(blk["v0"]),
                v_min=float(blk["v_min"]),
                v_max=float(blk["v_max"]),
                inflows=tuple(float(a) for a in blk["inflows"]),
                spillage=float(blk.get("spillage", 0.0)),
                configs=tuple(sorted(configs, key=lambda c: c.u)),
                initial_config=int(blk.get("initial_config", configs[0].u)),
                downstream=down,
                target=None if blk.get("target") is None else float(blk["target"]),
            )
        )
    return horizon, theta, plants


def load_instance(network_path, hydro_path, name: str | None = None) -> HucInstance:
    horizon, theta, plants = read_hydro(hydro_path)
    net, base = read_network(network_path, horizon)
    inst = HucInstance(
        horizon=horizon,
        plants=tuple(plants),
        network=net,
        base_mva=base,
        theta=theta,
        name=name or Path(network_path).stem,
    )
    validate_instance(inst)
    return inst


def _fmt(x: float) -> str:
    return repr(float(x))


def write_network(inst: HucInstance, path) -> None:
    net, base = inst.network, inst.base_mva
    out = [f"% network for {inst.name}", f"mpc.baseMVA = {_fmt(base)};", "mpc.bus = ["]
    out.append("%  bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin")
    for b in net.buses:
        btype = 3 if b.id == net.slack else 1
        vm = net.v_slack if b.id == net.slack else 1.0
        out.append(
            f"   {b.id} {btype} {_fmt(b.p_load[0] * base)} {_fmt(b.q_load[0] * base)} 0 0 1 "
            f"{_fmt(vm)} 0 135 1 {_fmt(b.v_max)} {_fmt(b.v_min)};"
        )
    out += ["];", "mpc.branch = [", "%  fbus tbus r x b rateA"]
    for ln in net.lines:
        y2 = ln.g * ln.g + ln.b * ln.b
        r, x = ln.g / y2, -ln.b / y2
        out.append(f"   {ln.i} {ln.j} {_fmt(r)} {_fmt(x)} 0 {_fmt(ln.f_max * base)};")
    out.append("];")
    for key, attr, unit in (("pload", "p_load", "MW"), ("qload", "q_load", "MVAr")):
        out += [f"mpc.{key} = [", f"%  bus_i  {unit} at hour 1..{inst.horizon}"]
        for b in net.buses:
            vals = " ".join(_fmt(v * base) for v in getattr(b, attr))
            out.append(f"   {b.id} {vals};")
        out.append("];")
    Path(path).write_text("\n".join(out) + "\n")


def write_hydro(inst: HucInstance, path) -> None:
    out = [f"# hydro data for {inst.name}", f"horizon = {inst.horizon}", f"theta = {_fmt(inst.theta)}", ""]
    for p in inst.plants:
        out += [
            "[[plant]]",
            f"id = {p.id}",
            f"bus = {p.bus}",
            f"water_value = {_fmt(p.water_value)}",
            f"startup_cost = {_fmt(p.startup_cost)}",
            f"v0 = {_fmt(p.v0)}",
            f"v_min = {_fmt(p.v_min)}",
            f"v_max = {_fmt(p.v_max)}",
            "inflows = [" + ", ".join(_fmt(a) for a in p.inflows) + "]",
            f"spillage = {_fmt(p.spillage)}",
        ]
        if p.downstream is not None:
            out.append(f"downstream = [{p.downstream[0]}, {p.downstream[1]}]")
        if p.target is not None:
            out.append(f"target = {_fmt(p.target)}")
        out.append(f"initial_config = {p.initial_config}")
        out.append("configs = [")
        out.append("  # " + ", ".join(_CONFIG_FIELDS))
        for c in p.configs:
            vals = [str(c.u)] + [_fmt(getattr(c, f)) for f in _CONFIG_FIELDS[1:]]
            out.append("  [" + ", ".join(vals) + "],")
        out += ["]", ""]
    Path(path).write_text("\n".join(out))


def instance_to_dict(inst: HucInstance) -> dict:
    net = inst.network
    return {
        "name": inst.name,
        "horizon": inst.horizon,
        "theta": inst.theta,
        "base_mva": inst.base_mva,
        "network": {
            "slack": net.slack,
            "v_slack": net.v_slack,
            "buses": [
                {"id": b.id, "p_load": list(b.p_load), "q_load": list(b.q_load),
                 "v_min": b.v_min, "v_max": b.v_max}
                for b in net.buses
            ],
            "lines": [
                {"i": ln.i, "j": ln.j, "g": ln.g, "b": ln.b, "f_max": ln.f_max} for ln in net.lines
            ],
        },
        "plants": [
            {
                "id": p.id, "bus": p.bus, "water_value": p.water_value,
                "startup_cost": p.startup_cost, "v0": p.v0, "v_min": p.v_min,
                "v_max": p.v_max, "inflows": list(p.inflows), "spillage": p.spillage,
                "downstream": list(p.downstream) if p.downstream else None,
                "target": p.target, "initial_config": p.initial_config,
                "configs": [{f: getattr(c, f) for f in _CONFIG_FIELDS} for c in p.configs],
            }
            for p in inst.plants
        ],
    }


def instance_from_dict(d: dict) -> HucInstance:
    net = d["network"]
    network = Network(
        buses=tuple(
            Bus(b["id"], tuple(b["p_load"]), tuple(b["q_load"]), b["v_min"], b["v_max"])
            for b in net["buses"]
        ),
        lines=tuple(Line(ln["i"], ln["j"], ln["g"], ln["b"], ln["f_max"]) for ln in net["lines"]),
        slack=net["slack"],
        v_slack=net["v_slack"],
    )
    plants = tuple(
        HydroPlant(
            id=p["id"], bus=p["bus"], water_value=p["water_value"],
            startup_cost=p["startup_cost"], v0=p["v0"], v_min=p["v_min"], v_max=p["v_max"],
            inflows=tuple(p["inflows"]), spillage=p["spillage"],
            configs=tuple(UnitConfigCurve(**c) for c in p["configs"]),
            initial_config=p["initial_config"],
            downstream=tuple(p["downstream"]) if p["downstream"] else None,
            target=p["target"],
        )
        for p in d["plants"]
    )
    inst = HucInstance(
        horizon=d["horizon"], plants=plants, network=network, base_mva=d["base_mva"],
        theta=d["theta"], name=d.get("name", "instance"),
    )
    validate_instance(inst)
    return inst


def dump_canonical(inst: HucInstance) -> str:
    """Deterministic JSON serialization used to pin fixtures."""
    return json.dumps(instance_to_dict(inst), sort_keys=True, indent=1) + "\n"


def load_canonical(text: str) -> HucInstance:
    return instance_from_dict(json.loads(text))
