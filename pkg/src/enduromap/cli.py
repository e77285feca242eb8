"""Command-line entry point: ``enduromap <command> [options]``.

Commands
  endurance-map  voltage, endurance and delay maps for one crossbar
  place          optimize the placement of a single cluster
  map            full mapping pipeline with evaluation report
  gen-workload   write a synthetic clustered workload
  evaluate       re-evaluate a saved solution

Every command writes below ``--output`` (maps/, placements/, solutions/,
reports/, workloads/) and records the resolved configuration plus sha256
digests of inputs and outputs in ``manifest.json``. Outputs are
byte-identical for a fixed configuration and seed.

Exit codes: 0 success, 2 usage or configuration error, 3 infeasible
workload, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from . import __version__
from .crossbar import (
    SUPPORTED_NODES,
    CrossbarConfig,
    NumericalError,
    TechnologyNode,
    build_delay_map,
    build_endurance_maps,
    build_voltage_maps,
    default_config,
    export_map,
)
from .device import DeviceParams, ModelError, load_device_params
from .mapping import (
    DEFAULT_HC_BUDGET,
    DEFAULT_PATIENCE,
    HardwareConfig,
    SolutionError,
    hill_climb_map,
    load_solution,
    map_unlimited,
    validate_solution,
)
from .metrics import METRICS, evaluate, random_baseline
from .placement import DEFAULT_BUDGET, DEFAULT_RESTARTS, SizeError, place
from .workload import (
    FRAME_SEMANTICS,
    InfeasibleError,
    WorkloadError,
    generate_synthetic,
    load_workload,
    save_workload,
    spike_histogram,
)

log = logging.getLogger("enduromap")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _tech(text: str) -> int:
    try:
        v = int(text.lower().removesuffix("nm"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a technology node: {text!r}") from None
    if v not in SUPPORTED_NODES:
        raise argparse.ArgumentTypeError(f"unsupported node {v} (choose from {', '.join(map(str, SUPPORTED_NODES))})")
    return v


def _crossbars(text: str):
    if text == "unlimited":
        return text
    return _positive_int(text)


def _sweep(text: str) -> tuple[str, list[str]]:
    key, sep, values = text.partition("=")
    if not sep or not values:
        raise argparse.ArgumentTypeError(f"expected KEY=V1,V2,..., got {text!r}")
    key = key.strip().replace("-", "_")
    if key not in SWEEPABLE:
        raise argparse.ArgumentTypeError(f"cannot sweep {key!r} (choose from {', '.join(sorted(SWEEPABLE))})")
    return key, [v.strip() for v in values.split(",") if v.strip()]


# sweepable option -> converter
SWEEPABLE = {
    "tech": _tech,
    "temp": float,
    "size": _positive_int,
    "crossbars": _crossbars,
    "drive": _positive_float,
    "seed": int,
    "budget": _positive_int,
    "restarts": _nonneg_int,
    "patience": _positive_int,
    "hc_budget": _positive_int,
    "baseline": _nonneg_int,
}


@dataclass(frozen=True)
class RunConfig:
    tech: int = 45
    temp: float = 25.0
    size: int = 128
    crossbars: int | str = "unlimited"
    drive: float | None = None
    device_params: str | None = None
    seed: int = 0
    budget: int = DEFAULT_BUDGET
    restarts: int = DEFAULT_RESTARTS
    hc_budget: int = DEFAULT_HC_BUDGET
    patience: int = DEFAULT_PATIENCE
    baseline: int = 0
    exact: bool = False

    def validate(self) -> None:
        if self.tech not in SUPPORTED_NODES:
            raise ConfigError(f"unsupported technology node {self.tech}")
        for name in ("size", "budget", "hc_budget", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.drive is not None and not self.drive > 0:
            raise ConfigError("drive must be positive")
        if self.crossbars != "unlimited" and int(self.crossbars) < 1:
            raise ConfigError("crossbars must be >= 1 or 'unlimited'")

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        kw = {k: getattr(args, k) for k in cls.__dataclass_fields__ if hasattr(args, k)}
        cfg = cls(**kw)
        cfg.validate()
        return cfg


# -- model construction ---------------------------------------------------------

def crossbar_config(cfg: RunConfig) -> CrossbarConfig:
    """Explicit ``--drive`` wins; otherwise the drive is calibrated for the read margin."""
    try:
        if cfg.drive is not None:
            return CrossbarConfig(M=cfg.size, tech=TechnologyNode(cfg.tech), temperature=cfg.temp,
                                  drive_voltage=cfg.drive)
        return default_config(cfg.tech, M=cfg.size, temperature=cfg.temp)
    except NumericalError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def device_params(cfg: RunConfig) -> DeviceParams:
    if cfg.device_params is None:
        return DeviceParams()
    try:
        return load_device_params(cfg.device_params)
    except OSError as exc:
        raise ConfigError(f"cannot read device parameters: {exc}") from exc
    except ModelError as exc:
        raise ConfigError(f"{cfg.device_params}: {exc}") from exc


class Models:
    """Crossbar maps shared by the commands of one run."""

    def __init__(self, cfg: RunConfig, include_hrs: bool = False):
        self.xcfg = crossbar_config(cfg)
        self.params = device_params(cfg)
        self.voltages = build_voltage_maps(self.xcfg, include_hrs=include_hrs)
        self.endurance = build_endurance_maps(self.xcfg, self.params, voltages=self.voltages)
        self.delay = build_delay_map(self.xcfg)

    @property
    def inference_voltage(self):
        return self.voltages["lrs"].grid


# -- output bookkeeping --------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Output:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.files: list[Path] = []
        self.inputs: dict[str, str] = {}

    def path(self, sub: str, name: str) -> Path:
        d = self.root / sub
        d.mkdir(parents=True, exist_ok=True)
        p = d / name
        self.files.append(p)
        return p

    def write_text(self, sub: str, name: str, text: str) -> Path:
        p = self.path(sub, name)
        p.write_text(text)
        return p

    def add_input(self, path) -> None:
        self.inputs[str(path)] = _sha256(Path(path))

    def write_manifest(self, command: str, cfg: RunConfig, extra: dict | None = None) -> Path:
        manifest = {
            "command": command,
            "version": __version__,
            "config": asdict(cfg),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {str(p.relative_to(self.root)): _sha256(p) for p in sorted(set(self.files))},
        }
        manifest.update(extra or {})
        p = self.root / "manifest.json"
        self.root.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return p


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- commands --------------------------------------------------------------------

def cmd_endurance_map(cfg: RunConfig, args, out: Output) -> dict:
    models = Models(cfg, include_hrs=True)
    x = models.xcfg
    for state in ("lrs", "hrs"):
        vm = models.voltages[state]
        export_map(out.path("maps", f"voltage_{state}.csv"), vm.grid, x, f"voltage_all_{state}",
                   kirchhoff_residual=vm.residual, spread=vm.spread)
        out.files.append(out.root / "maps" / f"voltage_{state}.json")
    export_map(out.path("maps", "endurance_lrs.csv"), models.endurance.lrs, x, "endurance_lrs",
               voltage_basis="voltage_all_lrs")
    export_map(out.path("maps", "endurance_hrs.csv"), models.endurance.hrs, x, "endurance_hrs",
               voltage_basis="voltage_all_lrs")
    export_map(out.path("maps", "delay.csv"), models.delay.grid, x, "delay_ms",
               base_delay=models.delay.base_delay, per_segment_delay=models.delay.per_segment_delay)
    for name in ("endurance_lrs", "endurance_hrs", "delay"):
        out.files.append(out.root / "maps" / f"{name}.json")
    return {"crossbar": x.metadata()}


def _load_workload(args, out: Output):
    if not args.workload:
        raise ConfigError("--workload is required")
    out.add_input(args.workload)
    return load_workload(args.workload)


def cmd_place(cfg: RunConfig, args, out: Output) -> dict:
    w = _load_workload(args, out)
    if not args.cluster:
        raise ConfigError("--cluster is required")
    try:
        c = w.cluster(args.cluster)
    except KeyError:
        raise ConfigError(f"no cluster {args.cluster!r} in {args.workload}") from None
    if not c.fits(cfg.size):
        p, q = c.size
        raise InfeasibleError(f"cluster {c.id!r} ({p}x{q}) does not fit a {cfg.size}x{cfg.size} crossbar")
    models = Models(cfg)
    if cfg.exact:
        result = place(c, models.endurance, exact=True)
    else:
        result = place(c, models.endurance, budget=cfg.budget, restarts=cfg.restarts, seed=cfg.seed)
    data = result.to_dict()
    stats = result.solver_stats
    data["solver"] = {
        "oracle_used": bool(stats.get("oracle_used", False)),
        "iterations": stats.get("iterations"),
        "greedy_lifetime": stats.get("greedy_lifetime"),
    }
    out.write_text("placements", f"{c.id}.json", _dumps(data))
    return {"crossbar": models.xcfg.metadata()}


def _hardware(cfg: RunConfig, n: int, models: Models) -> dict:
    return {"mode": "unlimited" if cfg.crossbars == "unlimited" else "limited", "n_crossbars": n,
            **models.xcfg.metadata()}


def _report(sol, w, cfg: RunConfig, models: Models, out: Output) -> None:
    baseline = None
    if cfg.baseline:
        baseline = random_baseline(w, sol.n_crossbars, models.endurance, models.delay, models.inference_voltage,
                                   cfg.baseline, cfg.seed)
    report = evaluate(sol, w, models.delay, models.inference_voltage, baseline)
    out.write_text("reports", "report.json", report.to_json())
    out.write_text("reports", "report.csv", report.to_csv())
    spike_histogram(w).to_csv(out.path("reports", "spike_histogram.csv"))


def cmd_map(cfg: RunConfig, args, out: Output) -> dict:
    w = _load_workload(args, out)
    models = Models(cfg)
    if cfg.crossbars == "unlimited":
        sol = map_unlimited(w, models.endurance, cfg.budget, cfg.restarts, cfg.seed)
    else:
        hw = HardwareConfig(int(cfg.crossbars), models.xcfg)
        sol = hill_climb_map(w, hw, models.endurance, budget=cfg.hc_budget, patience=cfg.patience, seed=cfg.seed,
                             placement_budget=cfg.budget, restarts=cfg.restarts)
    validate_solution(sol, w, cfg.size, models.endurance)
    hardware = _hardware(cfg, sol.n_crossbars, models)
    out.write_text("solutions", "solution.json", sol.to_json(hardware, timing=args.record_timing))
    _report(sol, w, cfg, models, out)
    return {"crossbar": models.xcfg.metadata()}


def cmd_gen_workload(cfg: RunConfig, args, out: Output) -> dict:
    try:
        w = generate_synthetic(
            n_clusters=args.clusters, pre_per_cluster=args.pre, post_per_cluster=args.post, density=args.density,
            spike_sigma=args.spike_sigma, spike_max=args.spike_max, seed=cfg.seed,
            frame_semantics=args.frame_semantics,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_workload(w, out.path("workloads", "workload.json"))
    spike_histogram(w, args.bins).to_csv(out.path("reports", "spike_histogram.csv"))
    return {}


def cmd_evaluate(cfg: RunConfig, args, out: Output) -> dict:
    w = _load_workload(args, out)
    if not args.solution:
        raise ConfigError("--solution is required")
    out.add_input(args.solution)
    models = Models(cfg)
    sol = load_solution(args.solution, w, models.endurance)
    _report(sol, w, cfg, models, out)
    return {"crossbar": models.xcfg.metadata()}


COMMANDS = {
    "endurance-map": cmd_endurance_map,
    "place": cmd_place,
    "map": cmd_map,
    "gen-workload": cmd_gen_workload,
    "evaluate": cmd_evaluate,
}


# -- sweeps ----------------------------------------------------------------------------

def run_once(command: str, cfg: RunConfig, args, root: Path) -> Output:
    out = Output(root)
    extra = COMMANDS[command](cfg, args, out)
    out.write_manifest(command, cfg, extra)
    return out


def run_sweep(command: str, cfg: RunConfig, args, root: Path) -> None:
    key, values = args.sweep
    convert = SWEEPABLE[key]
    rows = []
    runs = []
    for raw in values:
        try:
            value = convert(raw)
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"--sweep {key}: {exc}") from None
        sub_cfg = replace(cfg, **{key: value})
        sub_cfg.validate()
        sub = root / "sweep" / f"{key}={raw}"
        log.info("sweep %s=%s -> %s", key, raw, sub)
        run_once(command, sub_cfg, args, sub)
        runs.append(str(sub.relative_to(root)))
        report = sub / "reports" / "report.json"
        if report.exists():
            data = json.loads(report.read_text())
            ratios = data.get("ratios", {})
            base = data.get("baseline", {}).get("metrics", {})
            values_by_metric = {"lifetime": data["overall_lifetime"], "hardware_delay": data["hardware_delay_ms"],
                                "avg_rram_voltage": data["avg_rram_voltage"]}
            for m in METRICS:
                rows.append([key, raw, m, values_by_metric[m], base.get(m, {}).get("median", ""), ratios.get(m, "")])
    out = Output(root)
    if rows:
        p = out.path("reports", "sweep.csv")
        with open(p, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["key", "value", "metric", "value_measured", "baseline_median", "ratio"])
            writer.writerows([[("" if x is None else x) for x in r] for r in rows])
    out.write_manifest(command, cfg, {"sweep": {"key": key, "values": values, "runs": runs}})


# -- argument parsing ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--tech", type=_tech, default=45, help="technology node in nm (65, 45, 32, 16)")
    g.add_argument("--temp", type=float, default=25.0, help="operating temperature in degrees C")
    g.add_argument("--size", type=_positive_int, default=128, help="crossbar dimension M")
    g.add_argument("--crossbars", type=_crossbars, default="unlimited", help="crossbar count or 'unlimited'")
    g.add_argument("--drive", type=_positive_float, default=None,
                   help="wordline drive in volts (default: calibrated to the read margin)")
    g.add_argument("--device-params", metavar="PATH", default=None, help="device parameter file (key = value)")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--budget", type=_positive_int, default=DEFAULT_BUDGET, help="placement improving moves per start")
    g.add_argument("--restarts", type=_nonneg_int, default=DEFAULT_RESTARTS, help="random placement starts")
    g.add_argument("--hc-budget", type=_positive_int, default=DEFAULT_HC_BUDGET, help="hill-climb move evaluations")
    g.add_argument("--patience", type=_positive_int, default=DEFAULT_PATIENCE, help="hill-climb rejected moves before stopping")
    g.add_argument("--baseline", type=_nonneg_int, default=0, metavar="N", help="random-baseline samples (0 = none)")
    g.add_argument("--exact", action="store_true", help="use exhaustive placement (tiny clusters only)")
    g.add_argument("--output", metavar="DIR", default="enduromap-out", help="output directory")
    g.add_argument("--sweep", type=_sweep, default=None, metavar="KEY=V1,V2,...", help="repeat the run per value")
    g.add_argument("--record-timing", action="store_true", help="include wall time in solutions (breaks byte identity)")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="enduromap", description="Endurance-aware mapping of SNN clusters onto RRAM crossbars.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sub.add_parser("endurance-map", parents=[common], help="write voltage, endurance and delay maps")

    p = sub.add_parser("place", parents=[common], help="place one cluster")
    p.add_argument("--workload", required=True, metavar="PATH")
    p.add_argument("--cluster", required=True, metavar="ID")

    p = sub.add_parser("map", parents=[common], help="map a workload and report")
    p.add_argument("--workload", required=True, metavar="PATH")

    p = sub.add_parser("gen-workload", parents=[common], help="write a synthetic workload")
    p.add_argument("--clusters", type=_positive_int, default=20)
    p.add_argument("--pre", type=_positive_int, default=16, help="pre-synaptic neurons per cluster")
    p.add_argument("--post", type=_positive_int, default=16, help="post-synaptic neurons per cluster")
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--spike-sigma", type=float, default=1.0, help="log-normal sigma of spike rates")
    p.add_argument("--spike-max", type=float, default=6.42, help="spikes per frame of the busiest neuron")
    p.add_argument("--frame-semantics", choices=FRAME_SEMANTICS, default="image")
    p.add_argument("--bins", type=_positive_int, default=20, help="spike histogram bins")

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a saved solution")
    p.add_argument("--workload", required=True, metavar="PATH")
    p.add_argument("--solution", required=True, metavar="PATH")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_args(args)
        root = Path(args.output)
        if args.sweep:
            run_sweep(args.command, cfg, args, root)
        else:
            run_once(args.command, cfg, args, root)
    except (InfeasibleError, SizeError) as exc:
        print(f"enduromap: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"enduromap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, WorkloadError, SolutionError, ModelError, OSError) as exc:
        print(f"enduromap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
