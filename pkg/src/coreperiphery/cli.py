"""Command-line entry points.

Every command reads a YAML configuration, runs one computation and writes a
JSON (or CSV plus a JSON sidecar) artifact that embeds the run manifest:
command, configuration, solver options, seed, a hash of the inputs and the
package version.  Outputs carry no timestamps, so rerunning a manifest
reproduces its files byte for byte.

Exit codes: 0 ok, 2 configuration or usage error, 3 assumption violation,
4 non-convergence, 5 property failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .analysis import (
    PropertyReport,
    brute_force_oracle,
    check_center_monotone,
    check_core_influence,
    check_derivatives,
    check_full_connectivity,
    check_participation_monotone,
    check_potential_exactness,
    check_threshold_following,
    check_welfare_optimal,
    find_budget_thresholds,
    sweep_parameter,
)
from .errors import AssumptionViolation, CorePeripheryError, InvalidConfigError, InvalidInputError
from .model import CommunityConfig, InterestKernel, validate_assumptions
from .solver import INIT_MODES, SolverOptions, solve_equilibrium

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_NOT_CONVERGED = 4
EXIT_PROPERTY = 5

COMMANDS = ("solve", "verify", "sweep", "thresholds", "oracle", "derivatives")
COMMUNITY_FIELDS = tuple(f.name for f in fields(CommunityConfig) if f.name != "kernel")
KERNEL_FIELDS = tuple(f.name for f in fields(InterestKernel))
OPTION_FIELDS = tuple(f.name for f in fields(SolverOptions) if f.name != "seed")  # seed lives at top level


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# Configuration


def _parse_section(raw, allowed, required, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise CliError(EXIT_CONFIG, f"{where}: expected a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise CliError(EXIT_CONFIG, f"{where}: unknown field(s) {', '.join(unknown)}")
    missing = [k for k in required if k not in raw]
    if missing:
        raise CliError(EXIT_CONFIG, f"{where}: missing required field(s) {', '.join(missing)}")
    return dict(raw)


def parse_config(data: Any, source: str = "<config>") -> tuple[CommunityConfig, SolverOptions, int]:
    """Build configuration, options and seed from a parsed YAML document."""
    if not isinstance(data, dict):
        raise CliError(EXIT_CONFIG, f"{source}: top level must be a mapping")
    top = _parse_section(data, ("community", "solver", "seed"), ("community",), source)
    community = _parse_section(top["community"], COMMUNITY_FIELDS + ("kernel",),
                               COMMUNITY_FIELDS + ("kernel",), f"{source}: community")
    kernel = _parse_section(community.pop("kernel"), KERNEL_FIELDS, KERNEL_FIELDS,
                            f"{source}: community.kernel")
    solver = _parse_section(top.get("solver"), OPTION_FIELDS, (), f"{source}: solver")
    seed = top.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise CliError(EXIT_CONFIG, f"{source}: seed must be an integer, got {seed!r}")
    try:
        config = CommunityConfig(kernel=InterestKernel(**kernel), **community)
        options = SolverOptions(**solver)
    except (InvalidConfigError, InvalidInputError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"{source}: {exc}") from exc
    return config, options, seed


def check_assumptions(config: CommunityConfig) -> None:
    report = validate_assumptions(config)
    if report.passed:
        return
    lines = ["configuration violates the model assumptions:"]
    if not report.cost_ok:
        lines.append(f"  per-item cost c={config.cost} must exceed exp(-1) ~ {math.exp(-1):.6f}")
    for y, (cons, prod) in enumerate(zip(report.consume_sums, report.produce_sums)):
        flag = "  <-- fails" if y in report.failing_agents else ""
        lines.append(f"  agent {y}: consume sum {cons:.6f}, produce sum {prod:.6f}{flag}")
    raise CliError(EXIT_ASSUMPTION, "\n".join(lines))


def load_config(path) -> tuple[CommunityConfig, SolverOptions, int]:
    """Read and fully validate a YAML configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise CliError(EXIT_CONFIG, f"{path}: YAML parse error{where}: {exc}") from exc
    config, options, seed = parse_config(data, str(path))
    check_assumptions(config)
    return config, options, seed


def config_to_yaml(config: CommunityConfig, options: SolverOptions | None = None, seed: int = 0) -> str:
    solver = (options or SolverOptions()).to_dict()
    solver.pop("seed")
    doc = {"community": config.to_dict(), "solver": solver, "seed": seed}
    return yaml.safe_dump(doc, sort_keys=False)


# --------------------------------------------------------------------------
# Manifest and serialization


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: CommunityConfig
    options: SolverOptions
    seed: int
    output_path: Path
    arguments: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise InvalidInputError(f"unknown command {self.command!r}")

    @property
    def config_hash(self) -> str:
        payload = json.dumps({"config": self.config.to_dict(), "options": self.options.to_dict()},
                             sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config.to_dict(),
            "options": self.options.to_dict(),
            "seed": self.seed,
            "arguments": {k: v for k, v in self.arguments},
            "output_path": str(self.output_path),
            "config_hash": self.config_hash,
            "version": __version__,
        }


def to_jsonable(value):
    """Plain Python types; floats keep their shortest round-trip repr."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def dumps(document) -> str:
    return json.dumps(to_jsonable(document), indent=2, sort_keys=False, allow_nan=False) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot write {path}: {exc}") from exc


def _write_json(path: Path, manifest: RunManifest, body: dict[str, Any]) -> None:
    _write_text(path, dumps({"manifest": manifest.to_dict(), **body}))


def _write_csv(path: Path, manifest: RunManifest, header: Sequence[str], rows, summary=None) -> None:
    """CSV with provenance columns on every row, plus a ``.manifest.json`` sidecar."""
    stamp = [manifest.config_hash, manifest.seed, __version__]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(list(header) + ["config_hash", "seed", "version"])
            for row in rows:
                writer.writerow([_csv_cell(v) for v in row] + stamp)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot write {path}: {exc}") from exc
    sidecar = path.with_name(path.name + ".manifest.json")
    _write_text(sidecar, dumps({"manifest": manifest.to_dict(), "summary": summary or {}}))


def _csv_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


# --------------------------------------------------------------------------
# Commands


def _solve(manifest: RunManifest):
    return solve_equilibrium(manifest.config, replace(manifest.options, seed=manifest.seed))


def run_solve(manifest: RunManifest) -> int:
    result = _solve(manifest)
    _write_json(manifest.output_path, manifest, {"result": result.to_dict()})
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def influence_values(config: CommunityConfig) -> list[float]:
    """Default core budgets for the core-influence check: the configured one and three larger."""
    return [config.budget_core * f for f in (1.0, 1.2, 1.4, 1.6)]


def verification_suite(result, config, options, trials=500, deviations=1000, seed=0,
                       influence=None) -> list[PropertyReport]:
    return [
        check_full_connectivity(result, config),
        check_threshold_following(result, config),
        check_center_monotone(result, config),
        check_participation_monotone(result, config),
        check_welfare_optimal(result, config, trials=trials, seed=seed),
        check_potential_exactness(result, config, deviations=deviations, seed=seed),
        check_core_influence(config, influence or influence_values(config), options),
    ]


def run_verify(manifest: RunManifest) -> int:
    args = dict(manifest.arguments)
    result = _solve(manifest)
    if not result.converged:
        _write_json(manifest.output_path, manifest, {"result": result.to_dict(), "reports": []})
        return EXIT_NOT_CONVERGED
    options = replace(manifest.options, seed=manifest.seed)
    reports = verification_suite(result, manifest.config, options, args["trials"],
                                 args["deviations"], manifest.seed, args.get("influence"))
    passed = all(r.passed for r in reports)
    _write_json(manifest.output_path, manifest, {
        "passed": passed,
        "reports": [r.to_dict() for r in reports],
        "result": result.to_dict(),
    })
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.property_id} ({len(r.witnesses)} witnesses)")
    return EXIT_OK if passed else EXIT_PROPERTY


SWEEP_COLUMNS = ("core_value", "outside", "participation", "via_core_utility",
                 "community_utility", "core_rates", "periphery_to_core")


def run_sweep(manifest: RunManifest) -> int:
    args = dict(manifest.arguments)
    values = np.linspace(args["start"], args["stop"], args["steps"])
    if args["param"] == "K":
        values = np.unique(np.round(values).astype(int))
    sweep = sweep_parameter(manifest.config, args["param"], values.tolist(),
                            replace(manifest.options, seed=manifest.seed))
    rows = []
    for value, rec in zip(sweep.values, sweep.records):
        for y in range(len(rec["core_value"])):
            rows.append([args["param"], value, y] + [rec[c][y] for c in SWEEP_COLUMNS]
                        + [rec["potential"], rec["converged"]])
    header = ["parameter", "value", "agent", *SWEEP_COLUMNS, "potential", "converged"]
    summary = {"monotone_witnesses": sweep.monotone_witnesses()}
    _write_csv(manifest.output_path, manifest, header, rows, summary)
    return EXIT_OK if all(r["converged"] for r in sweep.records) else EXIT_NOT_CONVERGED


def run_thresholds(manifest: RunManifest) -> int:
    args = dict(manifest.arguments)
    found = find_budget_thresholds(manifest.config, args["mc_grid"], args["mp_grid"],
                                   replace(manifest.options, seed=manifest.seed))
    rows = [[mc, mp, ok] for mc, mp, ok in found.grid]
    summary = {"m_c_hat": found.m_c_hat, "m_p_hat": found.m_p_hat, "monotone": found.monotone,
               "frontier_witnesses": found.frontier_witnesses()}
    _write_csv(manifest.output_path, manifest, ["budget_core", "budget_periphery", "fully_connected"],
               rows, summary)
    return EXIT_OK


def run_oracle(manifest: RunManifest) -> int:
    args = dict(manifest.arguments)
    try:
        oracle = brute_force_oracle(manifest.config, args["grid_steps"])
    except InvalidInputError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    result = _solve(manifest)
    gap = result.potential - oracle.potential
    _write_json(manifest.output_path, manifest, {
        "oracle": oracle.to_dict(),
        "result": result.to_dict(),
        "potential_gap": gap,
        "within_bound": abs(gap) <= oracle.bound,
    })
    if not result.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK if abs(gap) <= oracle.bound else EXIT_PROPERTY


def run_derivatives(manifest: RunManifest) -> int:
    args = dict(manifest.arguments)
    report = check_derivatives(manifest.config, args["samples"], manifest.seed)
    _write_json(manifest.output_path, manifest, {"report": report.to_dict()})
    return EXIT_OK if report.passed else EXIT_PROPERTY


RUNNERS = {
    "solve": run_solve,
    "verify": run_verify,
    "sweep": run_sweep,
    "thresholds": run_thresholds,
    "oracle": run_oracle,
    "derivatives": run_derivatives,
}


def run(manifest: RunManifest) -> int:
    return RUNNERS[manifest.command](manifest)


# --------------------------------------------------------------------------
# Argument parsing


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_CONFIG, f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coreperiphery", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")

    p = sub.add_parser("solve", help="solve for the equilibrium")
    common(p)
    p.add_argument("--init", choices=INIT_MODES + ("random",), default=None)

    p = sub.add_parser("verify", help="run the structural property suite")
    common(p)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--deviations", type=int, default=1000)
    p.add_argument("--influence", type=_float_list, default=None,
                   help="ascending core budgets for the core-influence check")

    p = sub.add_parser("sweep", help="solve over a range of one parameter")
    common(p)
    p.add_argument("--param", choices=("Mc", "Mp", "K"), required=True)
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)

    p = sub.add_parser("thresholds", help="full-connectivity search over budget grids")
    common(p)
    p.add_argument("--mc-grid", type=_float_list, required=True)
    p.add_argument("--mp-grid", type=_float_list, required=True)

    p = sub.add_parser("oracle", help="brute-force grid maximum for tiny communities")
    common(p)
    p.add_argument("--grid-steps", type=int, default=200)

    p = sub.add_parser("derivatives", help="check analytic derivatives by finite differences")
    common(p)
    p.add_argument("--samples", type=int, default=200)
    return parser


def manifest_from_args(ns: argparse.Namespace) -> RunManifest:
    config, options, seed = load_config(ns.config)
    if ns.seed is not None:
        seed = ns.seed
    extra = {}
    if ns.command == "solve" and ns.init:
        options = replace(options, init_mode="random-seeded" if ns.init == "random" else ns.init)
    elif ns.command == "verify":
        extra = {"trials": ns.trials, "deviations": ns.deviations, "influence": ns.influence}
    elif ns.command == "sweep":
        if ns.steps < 1:
            raise CliError(EXIT_CONFIG, "--steps must be at least 1")
        extra = {"param": ns.param, "start": ns.start, "stop": ns.stop, "steps": ns.steps}
    elif ns.command == "thresholds":
        extra = {"mc_grid": ns.mc_grid, "mp_grid": ns.mp_grid}
    elif ns.command == "oracle":
        extra = {"grid_steps": ns.grid_steps}
    elif ns.command == "derivatives":
        extra = {"samples": ns.samples}
    return RunManifest(ns.command, config, options, seed, ns.out, tuple(extra.items()))


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return run(manifest_from_args(ns))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except AssumptionViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except CorePeripheryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
