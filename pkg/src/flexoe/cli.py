"""Command-line front end.

Verbs
-----
parse     print a one-line summary of a Matpower case file
envelope  compute operating envelopes for one sampled scenario instance
clear     clear the balancing market for one scenario instance
verify    re-simulate a saved market solution and count grid violations
mc        run a Monte Carlo experiment plan and write results to a directory
report    aggregate a results.csv written by ``mc``

All quantities are printed in MW (internally the package works in per-unit).
Every printing verb accepts ``--format {human,csv,json-lines}``; ``human``
is the default.  Exit codes: 0 success, 1 validation error (including a
``verify`` run that finds violations), 2 solver failure or infeasibility,
3 I/O error.

Scenario and config files given by relative paths are also looked up in
``$FLEXOE_CONFIG_DIR`` when they do not exist relative to the working
directory.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import statistics
import sys
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .caseio import (
    BR_STATUS,
    BUS_I,
    ENVELOPE_COLUMNS,
    F_BUS,
    T_BUS,
    _fmt,
    config_from_dict,
    config_to_dict,
    load_config,
    read_results_csv,
    resolve_case,
    write_envelopes_csv,
)
from .clearing import MarketSolution, clear_full_dn, clear_no_dn, clear_oe
from .errors import ModelError, ScenarioError, SolverError
from .montecarlo import (
    ScenarioInstance,
    build_instance,
    instance_envelopes,
    run_plan,
    write_outputs,
)
from .network import S_BASE_MVA
from .powerflow import count_violations, run_linear_pf

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_IO = 3

CONFIG_DIR_ENV = "FLEXOE_CONFIG_DIR"
SOLUTION_SCHEMA = "flexoe-solution-1"
FORMATS = ("human", "csv", "json-lines")

_METHOD_FLAGS = {"two-step": "two_step", "one-step": "one_step"}
_REGIME_FLAGS = {"no-dn": "no_dn", "full-dn": "full_dn", "oe": "oe"}


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad flags; the contract here is 1."""

    def error(self, message):  # noqa: D102 - argparse override
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared helpers


def _resolve_input(path_str: str) -> Path:
    """Resolve an input file, falling back to $FLEXOE_CONFIG_DIR."""
    p = Path(path_str)
    if p.exists():
        return p
    if not p.is_absolute():
        base = os.environ.get(CONFIG_DIR_ENV)
        if base:
            candidate = Path(base) / p
            if candidate.exists():
                return candidate
    raise FileNotFoundError(f"no such file: {path_str}")


def _emit(rows: Sequence[Mapping], columns: Sequence[str], fmt: str) -> None:
    """Print rows as a human table, CSV, or JSON lines."""
    if fmt == "csv":
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    elif fmt == "json-lines":
        for row in rows:
            print(json.dumps({c: row.get(c) for c in columns}, sort_keys=True))
    else:
        cells = [[_fmt(row.get(c)) or "-" for c in columns] for row in rows]
        widths = [
            max(len(col), *(len(r[i]) for r in cells)) if cells else len(col)
            for i, col in enumerate(columns)
        ]
        print("  ".join(col.ljust(w) for col, w in zip(columns, widths)).rstrip())
        for r in cells:
            print("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())


def _mw(value_pu: float) -> float:
    return round(value_pu * S_BASE_MVA, 9)


def _load_instance(args):
    config = load_config(_resolve_input(args.scenario))
    return config, build_instance(config, args.instance)


def _audit_rows(instance: ScenarioInstance, cleared_pu: Mapping[str, float]) -> list[dict]:
    rows = []
    for dn in instance.dns:
        local = instance.feeder_resources(dn.id)
        activations = {r.id: cleared_pu.get(r.id, 0.0) for r in local}
        report = count_violations(dn, run_linear_pf(dn, local, activations))
        rows.append(
            {
                "feeder": dn.id,
                "violations_v": report.n_voltage,
                "violations_flow": report.n_flow,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# verbs


def _cmd_parse(args) -> int:
    case = resolve_case(args.case)
    n_bus = len(case.bus)
    branches = [row for row in case.branch if int(row[BR_STATUS]) != 0]
    # a case is radial when its in-service branches form a spanning tree
    parent = {int(row[BUS_I]): int(row[BUS_I]) for row in case.bus}

    def find(b: int) -> int:
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        return b

    merged = 0
    for row in branches:
        a, b = find(int(row[F_BUS])), find(int(row[T_BUS]))
        if a != b:
            parent[a] = b
            merged += 1
    radial = len(branches) == n_bus - 1 and merged == n_bus - 1
    if args.format == "human":
        print(f"{n_bus} buses, {len(branches)} branches, radial: {'yes' if radial else 'no'}")
    else:
        _emit(
            [
                {
                    "name": case.name,
                    "buses": n_bus,
                    "branches": len(branches),
                    "radial": radial,
                }
            ],
            ("name", "buses", "branches", "radial"),
            args.format,
        )
    return EXIT_OK


def _envelope_rows(instance: ScenarioInstance, method: str, rule: str) -> list[dict]:
    envelopes = instance_envelopes(instance, method, rule)
    by_id = {r.id: r for r in instance.resources}
    rows = []
    for rid in sorted(envelopes):
        res, env = by_id[rid], envelopes[rid]
        rows.append(
            {
                "resource_id": rid,
                "network": res.network,
                "bus": res.bus,
                "direction": res.direction.value,
                "p_min_mw": _mw(res.p_min),
                "p_max_mw": _mw(res.p_max),
                "eps_lo_mw": _mw(env.lower),
                "eps_hi_mw": _mw(env.upper),
            }
        )
    return rows


def _cmd_envelope(args) -> int:
    _, instance = _load_instance(args)
    method = _METHOD_FLAGS[args.method]
    rows = _envelope_rows(instance, method, args.weights)
    if args.out:
        write_envelopes_csv(args.out, rows)
        print(f"wrote {len(rows)} envelopes to {args.out}")
    else:
        _emit(rows, ENVELOPE_COLUMNS, args.format)
    return EXIT_OK


def _solve_regime(instance: ScenarioInstance, regime: str, method: str, rule: str) -> MarketSolution:
    if regime == "no_dn":
        return clear_no_dn(instance.tn, instance.dns, instance.resources)
    if regime == "full_dn":
        return clear_full_dn(instance.tn, instance.dns, instance.resources, instance.polygon)
    envelopes = instance_envelopes(instance, method, rule)
    return clear_oe(instance.tn, instance.dns, instance.resources, envelopes)


def _cmd_clear(args) -> int:
    config, instance = _load_instance(args)
    regime = _REGIME_FLAGS[args.regime]
    method = _METHOD_FLAGS[args.method]
    solution = _solve_regime(instance, regime, method, args.weights)
    label = f"{regime} ({method}, {args.weights})" if regime == "oe" else regime
    if not solution.ok:
        print(f"regime: {label}", file=sys.stderr)
        print(f"status: {solution.status.value}", file=sys.stderr)
        return EXIT_SOLVER
    cleared_mw = {rid: _mw(p) for rid, p in sorted(solution.cleared.items())}
    interface_mw = {dn: _mw(z) for dn, z in sorted(solution.interface.items())}
    if args.out:
        document = {
            "schema": SOLUTION_SCHEMA,
            "scenario": config_to_dict(config),
            "instance": instance.index,
            "regime": regime,
            "method": method if regime == "oe" else None,
            "weight_rule": args.weights if regime == "oe" else None,
            "status": solution.status.value,
            "cost": solution.cost,
            "cleared_mw": cleared_mw,
            "interface_mw": interface_mw,
        }
        Path(args.out).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
        print(f"wrote solution to {args.out}")
        return EXIT_OK
    if args.format == "json-lines":
        print(
            json.dumps(
                {
                    "regime": regime,
                    "method": method if regime == "oe" else None,
                    "weight_rule": args.weights if regime == "oe" else None,
                    "status": solution.status.value,
                    "cost": solution.cost,
                    "cleared_mw": cleared_mw,
                    "interface_mw": interface_mw,
                },
                sort_keys=True,
            )
        )
    elif args.format == "csv":
        rows = [
            {"record": "interface", "id": dn, "value_mw": z}
            for dn, z in interface_mw.items()
        ] + [
            {"record": "cleared", "id": rid, "value_mw": p}
            for rid, p in cleared_mw.items()
            if abs(p) > 1e-9
        ]
        for row in rows:
            row.update(regime=regime, status=solution.status.value, cost=solution.cost)
        _emit(rows, ("regime", "status", "cost", "record", "id", "value_mw"), "csv")
    else:
        print(f"regime: {label}")
        print(f"status: {solution.status.value}")
        print(f"cost: {solution.cost:.6f}")
        for dn, z in interface_mw.items():
            print(f"interface {dn}: {z:.6f} MW")
        for rid, p in cleared_mw.items():
            if abs(p) > 1e-9:
                print(f"cleared {rid}: {p:.6f} MW")
    return EXIT_OK


def _cmd_verify(args) -> int:
    path = _resolve_input(args.solution)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"solution file {path} is not valid JSON: {exc}") from None
    if not isinstance(document, dict) or document.get("schema") != SOLUTION_SCHEMA:
        raise ModelError(f"solution file {path} does not declare schema {SOLUTION_SCHEMA!r}")
    config = config_from_dict(document["scenario"])
    instance = build_instance(config, int(document["instance"]))
    known = {r.id for r in instance.resources}
    cleared_mw = document.get("cleared_mw", {})
    unknown = set(cleared_mw) - known
    if unknown:
        raise ModelError(f"solution clears unknown resources: {sorted(unknown)}")
    cleared_pu = {rid: mw / S_BASE_MVA for rid, mw in cleared_mw.items()}
    rows = _audit_rows(instance, cleared_pu)
    total = sum(r["violations_v"] + r["violations_flow"] for r in rows)
    _emit(rows, ("feeder", "violations_v", "violations_flow"), args.format)
    if args.format == "human":
        print(f"safe: {'yes' if total == 0 else 'no'}")
    return EXIT_OK if total == 0 else EXIT_VALIDATION


def _cmd_mc(args) -> int:
    config = load_config(_resolve_input(args.config))
    if not args.no_timestamp:
        print(f"# started {datetime.datetime.now().isoformat(timespec='seconds')}")
    reports = run_plan(config, args.instances, workers=args.workers)
    paths = write_outputs(reports, config, args.out, plots=args.plots)
    retained = sum(1 for r in reports if not r.discarded)
    print(f"instances: {len(reports)} run, {retained} retained, {len(reports) - retained} discarded")
    for key in sorted(paths):
        print(f"wrote {paths[key]}")
    return EXIT_OK


_REPORT_COLUMNS = (
    "regime",
    "weight_rule",
    "n",
    "mean_cost",
    "mean_eta_pct",
    "median_eta_pct",
    "n_with_violations",
    "total_violations",
    "mean_delta_u_pct",
    "mean_delta_d_pct",
)


def aggregate_rows(rows: Iterable[Mapping]) -> list[dict]:
    """Aggregate long-format result rows per (regime, weight rule) variant."""
    retained = [r for r in rows if not r.get("discarded_flag")]
    variants: dict[tuple[str, str], list[Mapping]] = {}
    for row in retained:
        variants.setdefault((row["regime"], row["weight_rule"]), []).append(row)
    out = []
    for (regime, rule), group in sorted(variants.items()):
        costs = [r["cost"] for r in group if r["cost"] is not None]
        etas = [r["eta_pct"] for r in group if r["eta_pct"] is not None]
        d_up = [r["delta_u_pct"] for r in group if r["delta_u_pct"] is not None]
        d_dn = [r["delta_d_pct"] for r in group if r["delta_d_pct"] is not None]
        audited = [
            r
            for r in group
            if r["violations_v"] is not None and r["violations_flow"] is not None
        ]
        out.append(
            {
                "regime": regime,
                "weight_rule": rule,
                "n": len(group),
                "mean_cost": statistics.fmean(costs) if costs else None,
                "mean_eta_pct": statistics.fmean(etas) if etas else None,
                "median_eta_pct": statistics.median(etas) if etas else None,
                "n_with_violations": sum(
                    1 for r in audited if r["violations_v"] + r["violations_flow"] > 0
                ),
                "total_violations": sum(
                    r["violations_v"] + r["violations_flow"] for r in audited
                ),
                "mean_delta_u_pct": statistics.fmean(d_up) if d_up else None,
                "mean_delta_d_pct": statistics.fmean(d_dn) if d_dn else None,
            }
        )
    return out


def _cmd_report(args) -> int:
    path = _resolve_input(args.results)
    if path.is_dir():
        path = path / "results.csv"
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
    rows = read_results_csv(path)
    if args.format == "human":
        ids = {r["instance_id"] for r in rows}
        discarded = {r["instance_id"] for r in rows if r["discarded_flag"]}
        print(f"instances: {len(ids)} run, {len(ids) - len(discarded)} retained, {len(discarded)} discarded")
    _emit(aggregate_rows(rows), _REPORT_COLUMNS, args.format)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--format",
        choices=FORMATS,
        default="human",
        help="output format (default: human-readable table)",
    )


def _add_scenario(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", required=True, help="scenario config JSON file")
    parser.add_argument(
        "--instance",
        type=int,
        default=0,
        help="index of the sampled instance within the scenario (default 0)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="flexoe",
        description="Operating envelopes for distribution-network flexibility "
        "in a transmission-level balancing market.",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("parse", help="summarize a Matpower case file")
    p.add_argument("case", help="case file path or bundled case name (e.g. case69)")
    _add_format(p)
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("envelope", help="compute operating envelopes for one instance")
    _add_scenario(p)
    p.add_argument("--method", choices=sorted(_METHOD_FLAGS), default="two-step")
    p.add_argument("--weights", choices=("equal", "price", "quantity"), default="equal")
    p.add_argument("--out", help="also write the table to this CSV file")
    _add_format(p)
    p.set_defaults(func=_cmd_envelope)

    p = sub.add_parser("clear", help="clear the balancing market for one instance")
    _add_scenario(p)
    p.add_argument("--regime", choices=sorted(_REGIME_FLAGS), required=True)
    p.add_argument("--method", choices=sorted(_METHOD_FLAGS), default="two-step")
    p.add_argument("--weights", choices=("equal", "price", "quantity"), default="equal")
    p.add_argument("--out", help="write the solution to this JSON file")
    _add_format(p)
    p.set_defaults(func=_cmd_clear)

    p = sub.add_parser("verify", help="re-simulate a saved solution and count violations")
    p.add_argument("solution", help="solution JSON file written by `clear --out`")
    _add_format(p)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("mc", help="run a Monte Carlo experiment plan")
    p.add_argument("--config", required=True, help="scenario config JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plots", action="store_true", help="also write PNG plots")
    p.add_argument(
        "--no-timestamp",
        action="store_true",
        help="suppress the start-time line for byte-identical reruns",
    )
    p.set_defaults(func=_cmd_mc)

    p = sub.add_parser("report", help="aggregate a results.csv written by `mc`")
    p.add_argument("results", help="results.csv file or the directory holding it")
    _add_format(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelError as exc:  # covers case format and radiality problems
        print(f"flexoe: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ScenarioError as exc:
        print(f"flexoe: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:  # covers infeasible scenarios
        print(f"flexoe: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"flexoe: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
