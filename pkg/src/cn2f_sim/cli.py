"""``cn2f-sim`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import manifest
from .catalog import catalog_tsv
from .manifest import ManifestError
from .scenarios import (
    DeploymentStuck,
    InsufficientRows,
    ProbeFailed,
    ScenarioRun,
    builtin_profiles,
    builtin_scenario,
    builtin_scenario_names,
    builtin_topology,
    emit_table,
    fit_calibration,
    load_profile,
    read_control_script,
    read_table1,
    read_table2,
    resolve_deployments,
    ScenarioResult,
)

EXIT_OK, EXIT_INVALID, EXIT_PROBE, EXIT_STUCK = 0, 1, 2, 3


def _load_scenario(ref: str) -> tuple[manifest.ScenarioDoc, Path | None]:
    path = Path(ref)
    if path.exists():
        return manifest.parse_scenario(path.read_bytes()), path.parent
    return builtin_scenario(ref), None


def _seed(value: int | None) -> int:
    if value is not None:
        return value
    return int(os.environ.get("CN2F_SEED", "0"))


def cmd_validate(args: argparse.Namespace) -> int:
    topology = None
    deployments: list[manifest.DeploymentDoc] = []
    scenarios: list[tuple[manifest.ScenarioDoc, Path]] = []
    report = manifest.ValidationReport()
    for name in args.docs:
        path = Path(name)
        try:
            raw = manifest._load(path.read_bytes())
            kind = manifest.detect_kind(raw)
            if kind == "topology":
                topology = manifest.topology_from_obj(raw)
            elif kind == "deployment":
                deployments.append(manifest.deployment_from_obj(raw))
            else:
                scenarios.append((manifest.scenario_from_obj(raw), path.parent))
        except OSError as exc:
            report.error("IOError", name, str(exc))
        except ManifestError as exc:
            report.error(type(exc).__name__, name, str(exc))
    if topology is None:
        topology = builtin_topology()
    profiles = set(builtin_profiles())
    if scenarios:
        for sc, base in scenarios:
            try:
                docs = deployments + resolve_deployments(sc, base)
            except (OSError, ManifestError) as exc:
                report.error("UnresolvedDeployment", f"scenario:{sc.name}", str(exc))
                continue
            sub = manifest.validate(topology, docs, sc, profiles)
            report.errors += sub.errors
            report.warnings += sub.warnings
    else:
        sub = manifest.validate(topology, deployments)
        report.errors += sub.errors
        report.warnings += sub.warnings
    for line in report.lines():
        print(line)
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_run(args: argparse.Namespace) -> int:
    seed = _seed(args.seed)
    topology = manifest.parse_topology(Path(args.topology).read_bytes()) if args.topology else builtin_topology()
    control = read_control_script(Path(args.control).read_text(encoding="utf-8")) if args.control else None
    refs = args.scenario or builtin_scenario_names()
    results: list[ScenarioResult] = []
    code = EXIT_OK
    for ref in refs:
        try:
            scenario, base = _load_scenario(ref)
            deployments = resolve_deployments(scenario, base)
        except (OSError, ManifestError) as exc:
            print(f"ERROR {type(exc).__name__} {ref}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        profile_name = args.profile or scenario.calibration_profile
        try:
            profile = load_profile(profile_name)
        except KeyError as exc:
            print(f"ERROR UnknownProfile {ref}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        report = manifest.validate(topology, deployments, scenario, {profile_name, *builtin_profiles()})
        if not report.ok:
            for line in report.lines():
                print(line, file=sys.stderr)
            return EXIT_INVALID
        run = ScenarioRun(scenario, topology, profile, seed, deployments, control)
        try:
            run.deploy()
            rows = run.measure()
        except DeploymentStuck as exc:
            print(f"DeploymentStuck {scenario.name}: {exc}", file=sys.stderr)
            code = max(code, EXIT_STUCK)
            continue
        except ProbeFailed as exc:
            print(f"ProbeFailed {scenario.name}: {exc}", file=sys.stderr)
            code = max(code, EXIT_PROBE)
            continue
        finally:
            if args.event_log:
                out = Path(args.event_log)
                if len(refs) > 1:
                    out = out.with_name(f"{out.stem}-{scenario.name}{out.suffix}")
                out.write_text(run.cluster.event_log_tsv(), encoding="utf-8")
        result = ScenarioResult(scenario.name, rows, seed, flow_table=run.flow_table,
                                control_responses=list(run.responses))
        results.append(result)
        for line in result.control_responses:
            print(f"control\t{line}", file=sys.stderr)
        if not result.passed:
            code = max(code, EXIT_PROBE)
    if results:
        sys.stdout.write(emit_table(results, args.format))
    return code


def cmd_calibrate(args: argparse.Namespace) -> int:
    t1 = read_table1(Path(args.table1).read_text(encoding="utf-8"))
    t2 = read_table2(Path(args.table2).read_text(encoding="utf-8")) if args.table2 else []
    try:
        profile = fit_calibration(t1, t2, name=args.name)
    except InsufficientRows as exc:
        print(f"ERROR InsufficientRows: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = json.dumps(profile.to_obj(), indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_catalog(args: argparse.Namespace) -> int:
    sys.stdout.write(catalog_tsv())
    return EXIT_OK


def cmd_list(args: argparse.Namespace) -> int:
    for name in builtin_scenario_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cn2f-sim", description="Cloud-native 4G network simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check topology/deployment/scenario documents")
    p.add_argument("docs", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run scenarios and print a result table")
    p.add_argument("--topology", help="topology JSON (default: built-in reference cluster)")
    p.add_argument("--scenario", action="append",
                   help="scenario JSON file or built-in name; repeatable (default: all built-ins)")
    p.add_argument("--profile", help="calibration profile name or JSON file")
    p.add_argument("--seed", type=int, help="RNG seed (default: $CN2F_SEED or 0)")
    p.add_argument("--format", choices=("tsv", "pretty"), default="tsv")
    p.add_argument("--control", help="slice control script, JSON lines with at_ms")
    p.add_argument("--event-log", help="write the pod event log TSV here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="fit a calibration profile from result tables")
    p.add_argument("--table1", required=True)
    p.add_argument("--table2")
    p.add_argument("--name", default="fitted")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("catalog", help="print the VNF catalog as TSV")
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("list", help="list built-in scenarios")
    p.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
