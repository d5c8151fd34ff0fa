"""Command-line interface.

Exit codes: 0 success, 1 solver or stage failure, 2 bad flags or unreadable input.
Every tolerance defaults to the value in ``DEFAULTS``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .casefile import CaseParseError, load_instance, write_hydro, write_network
from .fixtures import FixtureSpec, generate
from .model import ValidationError
from .pipeline import METHODS, PipelineError, PipelineOptions, bench, format_table, report_json, solve_bb, solve_rh
from .rankred import SIGMA, ConstraintSet, RankReductionError, reduce
from .relaxation import RelaxationError, build_p1, extract
from .rounding import EPS_BIN
from .sdpsolver import SolverOptions, solve
from .symmat import EPS_PSD, EPS_RANK

FIXTURE_ENV = "HUC_FIXTURE_DIR"
BUNDLED_DIR = Path(__file__).parent / "data"

# name: (default, meaning)
DEFAULTS = {
    "tol": (1e-8, "interior point stopping tolerance (gap and residuals, relative)"),
    "eps_bin": (EPS_BIN, "commitment values within this of 0 or 1 count as integral"),
    "eps_rank": (EPS_RANK, "relative eigenvalue threshold for numerical rank"),
    "eps_psd": (EPS_PSD, "relative tolerance for PSD checks"),
    "sigma": (SIGMA, "extra rank-reduction iterations allowed for stalls"),
    "node_limit": (10_000, "branch-and-bound node budget"),
    "time_limit": (600.0, "branch-and-bound wall-time budget in seconds"),
    "workers": (1, "threads evaluating rounding-program nodes"),
    "jobs": (1, "instances benchmarked in parallel"),
}


@dataclass
class RunConfig:
    command: str
    inputs: list = field(default_factory=list)
    tol: float = DEFAULTS["tol"][0]
    eps_bin: float = DEFAULTS["eps_bin"][0]
    eps_rank: float = DEFAULTS["eps_rank"][0]
    sigma: int = DEFAULTS["sigma"][0]
    node_limit: int = DEFAULTS["node_limit"][0]
    time_limit: float = DEFAULTS["time_limit"][0]
    workers: int = DEFAULTS["workers"][0]
    output: Path | None = None
    verbose: int = 0

    def __post_init__(self):
        for name in ("tol", "eps_bin", "eps_rank", "time_limit"):
            if not getattr(self, name) > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        for name in ("sigma", "node_limit", "workers"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be at least 1")
        if self.eps_bin >= 0.5:
            raise UsageError("--eps-bin must be below 0.5")
        for p in self.inputs:
            if not Path(p).is_file():
                raise UsageError(f"input file not found: {p}")

    def pipeline(self) -> PipelineOptions:
        return PipelineOptions(tol=self.tol, eps_bin=self.eps_bin, eps_rank=self.eps_rank, sigma=self.sigma,
                               workers=self.workers, node_limit=self.node_limit, time_limit=self.time_limit)


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive(kind):
    def conv(s):
        v = kind(s)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {s}")
        return v
    return conv


def _tolerances(p, *names):
    for name in names:
        default, text = DEFAULTS[name]
        kind = int if isinstance(default, int) else float
        p.add_argument("--" + name.replace("_", "-"), type=_positive(kind), default=default,
                       help=f"{text} (default {default:g})")


def _instance_args(p):
    p.add_argument("--net", help="network file (MATPOWER-style)")
    p.add_argument("--hydro", help="hydro data file (TOML)")
    p.add_argument("--fixture", help=f"name of a fixture in ${FIXTURE_ENV} or the bundled set")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hucsdp", description="Hydro unit commitment through SDP relaxation and rounding.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("relax", help="solve the relaxation and report the bound")
    _instance_args(p)
    _tolerances(p, "tol", "eps_bin")
    p.add_argument("--out", type=Path, help="write a JSON report here")

    p = sub.add_parser("solve", help="rounding heuristic: relax, round, re-optimize, reduce rank")
    _instance_args(p)
    _tolerances(p, "tol", "eps_bin", "eps_rank", "sigma", "workers")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("bnb", help="exact SDP branch and bound")
    _instance_args(p)
    _tolerances(p, "tol", "eps_bin", "node_limit", "time_limit")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("rankreduce", help="reduce the rank of a PSD matrix under fixed constraint values")
    p.add_argument("--matrix", required=True, help="PSD matrix (.npy or whitespace text)")
    p.add_argument("--constraints", required=True,
                   help=".npz with array A of shape (k, n, n) and optional objective C")
    _tolerances(p, "sigma", "eps_rank", "eps_psd")
    p.add_argument("--out", type=Path, help="write the reduced matrix (.npy)")

    p = sub.add_parser("bench", help="compare methods over a fixture suite")
    p.add_argument("--suite", type=Path, help=f"directory of NAME.m / NAME.toml pairs (default ${FIXTURE_ENV} or bundled)")
    p.add_argument("--methods", default="sdp,rh,bnb", help=f"comma list from {','.join(METHODS)}")
    p.add_argument("--only", help="comma list of instance names to run")
    _tolerances(p, "tol", "eps_bin", "node_limit", "time_limit", "jobs")
    p.add_argument("--out", type=Path, help="write the JSON report here")
    p.add_argument("--no-timings", action="store_true", help="omit wall times from the JSON report")

    p = sub.add_parser("gen-fixture", help="write a seeded synthetic instance")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--buses", type=_positive(int), default=6)
    p.add_argument("--plants", type=_positive(int), default=2)
    p.add_argument("--hours", type=_positive(int), default=4)
    p.add_argument("--extra-lines", type=int, default=2)
    p.add_argument("--max-units", type=_positive(int), default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    return ap


def fixture_dir() -> Path:
    env = os.environ.get(FIXTURE_ENV)
    return Path(env) if env else BUNDLED_DIR


def suite_files(directory: Path) -> list[tuple[Path, Path]]:
    if not directory.is_dir():
        raise UsageError(f"fixture directory not found: {directory}")
    pairs = []
    for net in sorted(directory.glob("*.m")):
        hydro = net.with_suffix(".toml")
        if hydro.is_file():
            pairs.append((net, hydro))
    if not pairs:
        raise UsageError(f"no NAME.m / NAME.toml pairs in {directory}")
    return pairs


def _instance(args):
    if args.fixture:
        if args.net or args.hydro:
            raise UsageError("--fixture excludes --net/--hydro")
        d = fixture_dir()
        net, hydro = d / f"{args.fixture}.m", d / f"{args.fixture}.toml"
    elif args.net and args.hydro:
        net, hydro = Path(args.net), Path(args.hydro)
    else:
        raise UsageError("give --net and --hydro, or --fixture")
    for p in (net, hydro):
        if not p.is_file():
            raise UsageError(f"input file not found: {p}")
    return load_instance(net, hydro, name=args.fixture or net.stem)


def _config(args, inputs=()) -> RunConfig:
    kw = {k: getattr(args, k) for k in ("tol", "eps_bin", "eps_rank", "sigma", "node_limit", "time_limit", "workers")
          if hasattr(args, k)}
    return RunConfig(args.command, list(inputs), output=getattr(args, "out", None), verbose=args.verbose, **kw)


def _write_json(path, payload) -> None:
    if path is not None:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _histogram(values, eps) -> list[tuple[str, int]]:
    v = np.asarray(values)
    edges = [("0", v <= eps), ("(0,0.25]", (v > eps) & (v <= 0.25)), ("(0.25,0.5]", (v > 0.25) & (v <= 0.5)),
             ("(0.5,0.75]", (v > 0.5) & (v <= 0.75)), ("(0.75,1)", (v > 0.75) & (v < 1 - eps)), ("1", v >= 1 - eps)]
    return [(k, int(m.sum())) for k, m in edges]


def _solution_payload(sol) -> dict:
    return {
        "method": sol.method,
        "status": sol.status,
        "objective": sol.objective,
        "lower_bound": sol.lower_bound,
        "relative_gap": sol.rel_gap,
        "schedule": sol.schedule.config if sol.schedule is not None else None,
        "startups": sol.schedule.y if sol.schedule is not None else None,
        "p": sol.p,
        "q": sol.q,
        "e": sol.e,
        "f": sol.f,
        "info": sol.info,
    }


def _print_solution(sol, inst) -> None:
    print(f"instance   {inst.name}")
    print(f"method     {sol.method} ({sol.status})")
    print(f"objective  {sol.objective:.6f}")
    print(f"bound      {sol.lower_bound:.6f}")
    print(f"gap        {100 * sol.rel_gap:.4f}%")
    if sol.schedule is not None:
        print("schedule   " + " | ".join(" ".join(str(u) for u in row) for row in sol.schedule.config))
    print("timings    " + ", ".join(f"{k} {v:.2f}s" for k, v in sol.timings.items()))


def cmd_relax(args) -> int:
    inst = _instance(args)
    cfg = _config(args)
    prob = build_p1(inst)
    sol = solve(prob, SolverOptions(tol=cfg.tol))
    rel = extract(sol, prob, inst)
    hist = _histogram(list(rel.x.values()), cfg.eps_bin)
    print(f"instance   {inst.name}")
    print(f"bound      {rel.objective:.6f}")
    print(f"iterations {sol.iterations} ({sol.time:.2f}s)")
    print("x histogram")
    for k, n in hist:
        print(f"  {k:<11} {n}")
    _write_json(cfg.output, {"instance": inst.name, "bound": rel.objective, "histogram": dict(hist),
                             "x": {f"{t},{h},{u}": v for (t, h, u), v in sorted(rel.x.items())}})
    return 0


def cmd_solve(args) -> int:
    inst = _instance(args)
    cfg = _config(args)
    sol = solve_rh(inst, cfg.pipeline())
    _print_solution(sol, inst)
    _write_json(cfg.output, _solution_payload(sol))
    return 0


def cmd_bnb(args) -> int:
    inst = _instance(args)
    cfg = _config(args)
    log = (lambda m: print(m, file=sys.stderr)) if cfg.verbose else None
    sol = solve_bb(inst, cfg.pipeline(), log=log)
    _print_solution(sol, inst)
    print(f"nodes      {sol.info['nodes']}")
    _write_json(cfg.output, _solution_payload(sol))
    return 0


def _load_matrix(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, ndmin=2)


def cmd_rankreduce(args) -> int:
    for p in (args.matrix, args.constraints):
        if not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")
    try:
        Z = _load_matrix(Path(args.matrix))
        data = np.load(args.constraints)
        A = np.asarray(data["A"], dtype=float)
        C = np.asarray(data["C"], dtype=float) if "C" in data.files else None
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read inputs: {exc}") from exc
    if A.ndim == 2:
        A = A[None]
    cons = ConstraintSet(list(A), [f"c{k}" for k in range(len(A))], ["other"] * len(A), C)
    rep = reduce(Z, cons, args.sigma, args.eps_rank, args.eps_psd)
    print(f"ranks      {' -> '.join(map(str, rep.ranks))}")
    print(f"reason     {rep.reason.value}")
    print(f"residual   {max(rep.residuals, default=0.0):.3e}")
    if args.out is not None:
        np.save(args.out, rep.Z)
    return 0


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {','.join(METHODS)}")
    pairs = suite_files(args.suite or fixture_dir())
    if args.only:
        keep = set(args.only.split(","))
        pairs = [pr for pr in pairs if pr[0].stem in keep]
        if not pairs:
            raise UsageError(f"none of {sorted(keep)} found in the suite")
    insts = [load_instance(n, h, name=n.stem) for n, h in pairs]
    cfg = _config(args)
    report = bench(insts, methods, cfg.pipeline(), jobs=args.jobs)
    print(format_table(report))
    if args.out is not None:
        args.out.write_text(report_json(report, timings=not args.no_timings) + "\n")
    return 0 if all("error" not in row[m] for row in report["rows"] for m in methods) else 1


def cmd_gen_fixture(args) -> int:
    spec = FixtureSpec(args.name, n_bus=args.buses, n_plant=args.plants, horizon=args.hours,
                       extra_lines=args.extra_lines, max_units=max(2, args.max_units), seed=args.seed)
    if args.plants > args.buses:
        raise UsageError("--plants cannot exceed --buses")
    inst = generate(spec)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    net, hydro = args.out_dir / f"{args.name}.m", args.out_dir / f"{args.name}.toml"
    write_network(inst, net)
    write_hydro(inst, hydro)
    for path, mark in ((net, "%"), (hydro, "#")):
        path.write_text(f"{mark} seed = {args.seed}\n" + path.read_text())
    print(f"seed {args.seed}")
    print(f"wrote {net} and {hydro}")
    return 0


COMMANDS = {
    "relax": cmd_relax,
    "solve": cmd_solve,
    "bnb": cmd_bnb,
    "rankreduce": cmd_rankreduce,
    "bench": cmd_bench,
    "gen-fixture": cmd_gen_fixture,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hucsdp: error: {exc}", file=sys.stderr)
        return 2
    except (CaseParseError, ValidationError) as exc:
        print(f"hucsdp: invalid input: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"hucsdp: {exc}", file=sys.stderr)
        return 1
    except (RelaxationError, RankReductionError, RuntimeError, ValueError) as exc:
        print(f"hucsdp: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
