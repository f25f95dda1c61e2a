"""Seeded scenario generation and the regime-comparison experiment.

One *instance* is a fully specified market: a transmission grid with an
imbalance, several feeders at randomized load levels, and randomized
flexibility offers on both levels.  :func:`build_instance` derives
everything from ``(config.seed, index)`` alone, so any instance can be
rebuilt in isolation and a run is reproducible regardless of execution
order or worker count.

:func:`run_instance` clears the instance under every regime and scores it:

* ``no_dn`` first; if its outcome is already safe for every feeder the
  instance is *discarded* (it cannot distinguish envelope methods) and only
  a marker row is kept.
* otherwise ``full_dn`` provides the ideal reference cost, and each
  envelope method x weight rule is cleared, audited by linear power flow,
  and scored with inefficiency and unqualified-flexibility metrics.

Scenario shape (config knobs in :class:`~flexoe.caseio.ScenarioConfig`):
feeder loads are scaled into a safe-but-loaded band and resampled until the
base case is verifiably safe; the transmission imbalance is a fraction of
scaled load -- a surplus needing downward flexibility in case set 1, a
deficit needing upward in case set 2 (where feeders also host distributed
generation).  Interface capacities are sized generously so that feeder
voltage and line limits, not the interface, shape the envelopes.
"""

from __future__ import annotations

import dataclasses
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .caseio import (
    BUS_I,
    GEN_BUS,
    PD,
    PMAX,
    MatpowerCase,
    ScenarioConfig,
    _reference_bus,
    attach_resources,
    config_from_dict,
    config_to_dict,
    resolve_case,
    to_distribution_network,
    to_transmission_network,
    write_results_csv,
)
from .clearing import MarketSolution, clear_full_dn, clear_no_dn, clear_oe
from .envelopes import (
    ENVELOPE_METHODS,
    WEIGHT_RULES,
    Envelope,
    envelopes_for_method,
    weights,
)
from .errors import InfeasibleScenarioError, ScenarioError, SolverError
from .metrics import InstanceReport, VariantOutcome, inefficiency, unqualified_flex
from .network import (
    DistributionNetwork,
    FlexResource,
    PolygonApprox,
    TransmissionNetwork,
    make_polygon,
)
from .powerflow import count_violations, run_linear_pf

#: regime labels as they appear in result rows (envelope method folded in)
VARIANTS = (
    ("no_dn", "-"),
    ("full_dn", "-"),
    ("oe_two_step", "equal"),
    ("oe_two_step", "price"),
    ("oe_two_step", "quantity"),
    ("oe_one_step", "equal"),
    ("oe_one_step", "price"),
    ("oe_one_step", "quantity"),
)


@dataclass(frozen=True)
class ScenarioInstance:
    """One fully built market scenario."""

    index: int
    case_set: int
    tn: TransmissionNetwork
    dns: tuple[DistributionNetwork, ...]
    resources: tuple[FlexResource, ...]
    polygon: PolygonApprox
    imbalance: float  # pu magnitude of the system imbalance

    def feeder_resources(self, dn_id: str) -> list[FlexResource]:
        return [r for r in self.resources if r.network == dn_id]


@lru_cache(maxsize=32)
def _cached_case(name_or_path: str) -> MatpowerCase:
    return resolve_case(name_or_path)


def _feeder_base_is_safe(dn: DistributionNetwork, polygon: PolygonApprox) -> bool:
    """Zero-activation check: voltage band, polygon flow model, interface.

    The flow check uses the polygonal model rather than the quadratic disk
    because the market problems do: a base case outside the polygon would
    make every envelope problem infeasible even if the true apparent flow
    is within rating.
    """
    state = run_linear_pf(dn)
    if not count_violations(dn, state).safe:
        return False
    for line in dn.lines:
        if not np.isfinite(line.s_limit):
            continue
        p, q = state.p_flow[line.child], state.q_flow[line.child]
        if not polygon.contains(p / line.s_limit, q / line.s_limit, tol=0.0):
            return False
    if abs(state.z) > dn.z_limit or not dn.z_re_min <= state.z_re <= dn.z_re_max:
        return False
    return True


def _build_feeder(
    case: MatpowerCase,
    config: ScenarioConfig,
    dn_id: str,
    polygon: PolygonApprox,
    rng: np.random.Generator,
) -> DistributionNetwork:
    """Sample a load scale until the feeder base case is safe."""
    for _ in range(config.max_resample):
        scale = float(rng.uniform(*config.load_scale_range))
        dn = to_distribution_network(case, config, dn_id=dn_id, load_scale=scale)
        if _feeder_base_is_safe(dn, polygon):
            return dn
    raise ScenarioError(
        f"no safe base case for feeder {dn_id!r} ({case.name}) within "
        f"{config.max_resample} load-scale draws; widen load_scale_range "
        "or relax the limits"
    )


def _gen_distribution(case: MatpowerCase) -> list[tuple[int, float]]:
    """Generator buses with their share of total generation."""
    if case.gen is None or not len(case.gen):
        raise ScenarioError(
            f"case {case.name}: no generator table to synthesize injections from"
        )
    buses = [int(row[GEN_BUS]) for row in case.gen]
    pmax = np.array([max(float(row[PMAX]), 0.0) for row in case.gen])
    total = float(pmax.sum())
    if total <= 0.0:
        share = np.full(len(buses), 1.0 / len(buses))
    else:
        share = pmax / total
    return list(zip(buses, share))


def build_instance(config: ScenarioConfig, index: int) -> ScenarioInstance:
    """Deterministically build instance ``index`` of the experiment.

    All randomness flows from one generator seeded with
    ``SeedSequence(config.seed, spawn_key=(index,))`` through a fixed draw
    order: feeders (load scale, then offers) in declaration order, then
    attachment buses, transmission load scale, and transmission offers.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(index,)))
    polygon = make_polygon(config.polygon_sides)

    dns: list[DistributionNetwork] = []
    resources: list[FlexResource] = []
    for case_name, count in config.dn_cases:
        case = _cached_case(case_name)
        for _ in range(count):
            dn_id = f"d{len(dns)}"
            dn = _build_feeder(case, config, dn_id, polygon, rng)
            local = attach_resources(dn, config, rng)
            capacity = sum(r.p_max - r.p_min for r in local)
            dn = dataclasses.replace(
                dn, z_limit=dn.base_import + config.z_slack_scale * capacity
            )
            dns.append(dn)
            resources.extend(local)

    tn_case = _cached_case(config.tn_case)
    slack_candidates = [b for b in tn_case.bus_ids if b != _reference_bus(tn_case)]
    if len(slack_candidates) < len(dns):
        raise ScenarioError(
            f"case {tn_case.name}: {len(dns)} feeders need distinct non-reference "
            f"buses but only {len(slack_candidates)} exist"
        )
    attach_buses = rng.choice(slack_candidates, size=len(dns), replace=False)
    dn_attach = {dn.id: int(bus) for dn, bus in zip(dns, attach_buses)}

    tn_scale = float(rng.uniform(*config.load_scale_range))
    loads = {
        int(row[BUS_I]): float(row[PD]) * tn_scale / 100.0 for row in tn_case.bus
    }
    total_load = sum(loads.values())
    total_imports = sum(dn.base_import for dn in dns)
    imbalance = config.imbalance_fraction * total_load
    sign = 1.0 if config.case_set == 1 else -1.0
    total_gen = total_load + total_imports + sign * imbalance

    e = {b: -load for b, load in loads.items()}
    for bus, share in _gen_distribution(tn_case):
        e[bus] += total_gen * share

    dn_imports = {dn.id: dn.base_import for dn in dns}
    tn = to_transmission_network(tn_case, config, e, dn_attach, dn_imports)
    resources.extend(attach_resources(tn, config, rng))

    return ScenarioInstance(
        index=index,
        case_set=config.case_set,
        tn=tn,
        dns=tuple(dns),
        resources=tuple(resources),
        polygon=polygon,
        imbalance=imbalance,
    )


# ---------------------------------------------------------------------------
# scoring


def audit_solution(
    instance: ScenarioInstance, solution: MarketSolution
) -> tuple[int, int]:
    """Count feeder voltage/flow violations of a cleared outcome.

    Every feeder is re-simulated with its cleared activations through the
    linear power flow; the market's own claims are never trusted.
    """
    n_voltage = n_flow = 0
    for dn in instance.dns:
        local = instance.feeder_resources(dn.id)
        activations = {r.id: solution.cleared.get(r.id, 0.0) for r in local}
        state = run_linear_pf(dn, local, activations)
        report = count_violations(dn, state)
        n_voltage += report.n_voltage
        n_flow += report.n_flow
    return n_voltage, n_flow


def _variant_row(
    regime: str,
    rule: str,
    solution: MarketSolution,
    eta: float | None,
    violations: tuple[int, int] | None,
    deltas: tuple[float | None, float | None] = (None, None),
) -> VariantOutcome:
    nv, nf = violations if violations is not None else (None, None)
    return VariantOutcome(
        regime=regime,
        weight_rule=rule,
        status=solution.status.value,
        cost=solution.cost,
        eta_pct=eta,
        violations_v=nv,
        violations_flow=nf,
        delta_u_pct=deltas[1],
        delta_d_pct=deltas[0],
    )


def instance_envelopes(
    instance: ScenarioInstance, method: str, rule: str
) -> dict[str, Envelope]:
    """Envelopes for every feeder resource of the instance."""
    out: dict[str, Envelope] = {}
    for dn in instance.dns:
        local = instance.feeder_resources(dn.id)
        wa = weights(local, rule)
        out.update(envelopes_for_method(method, dn, local, wa, instance.polygon))
    return out


def run_instance(instance: ScenarioInstance) -> InstanceReport:
    """Clear one instance under every regime and score the outcomes."""
    no_dn = clear_no_dn(instance.tn, instance.dns, instance.resources)
    if not no_dn.ok:
        return InstanceReport(
            instance_id=instance.index,
            discarded=True,
            outcomes=(_variant_row("no_dn", "-", no_dn, None, None),),
            note=f"no_dn clearing ended {no_dn.status.value}",
        )
    base_violations = audit_solution(instance, no_dn)
    if sum(base_violations) == 0:
        return InstanceReport(
            instance_id=instance.index,
            discarded=True,
            outcomes=(_variant_row("no_dn", "-", no_dn, None, base_violations),),
            note="no_dn outcome already grid-safe",
        )

    full = clear_full_dn(instance.tn, instance.dns, instance.resources, instance.polygon)
    full_cost = full.cost if full.ok else None
    rows = [
        _variant_row(
            "no_dn", "-", no_dn, inefficiency(no_dn.cost, full_cost), base_violations
        ),
        _variant_row(
            "full_dn",
            "-",
            full,
            inefficiency(full_cost, full_cost),
            audit_solution(instance, full) if full.ok else None,
        ),
    ]
    notes = [] if full.ok else [f"full_dn clearing ended {full.status.value}"]

    for method in ENVELOPE_METHODS:
        for rule in WEIGHT_RULES:
            regime = f"oe_{method}"
            try:
                envs = instance_envelopes(instance, method, rule)
            except (InfeasibleScenarioError, SolverError) as exc:
                notes.append(f"{regime}/{rule}: {exc}")
                rows.append(
                    VariantOutcome(
                        regime=regime,
                        weight_rule=rule,
                        status="envelope_failure",
                        cost=None,
                        eta_pct=None,
                        violations_v=None,
                        violations_flow=None,
                        delta_u_pct=None,
                        delta_d_pct=None,
                    )
                )
                continue
            sol = clear_oe(instance.tn, instance.dns, instance.resources, envs)
            deltas = unqualified_flex(instance.resources, envs)
            rows.append(
                _variant_row(
                    regime,
                    rule,
                    sol,
                    inefficiency(sol.cost, full_cost),
                    audit_solution(instance, sol) if sol.ok else None,
                    deltas,
                )
            )

    return InstanceReport(
        instance_id=instance.index,
        discarded=False,
        outcomes=tuple(rows),
        note="; ".join(notes),
    )


# ---------------------------------------------------------------------------
# plan execution


def _run_index(payload: tuple[dict, int]) -> InstanceReport:
    config_dict, index = payload
    config = config_from_dict(config_dict)
    return run_instance(build_instance(config, index))


def run_plan(
    config: ScenarioConfig,
    n_instances: int,
    workers: int = 1,
) -> list[InstanceReport]:
    """Run ``n_instances`` seeded instances, optionally across processes.

    Results are identical for any worker count: every instance is seeded
    from its index alone and reports are ordered by index.
    """
    if n_instances < 1:
        raise ScenarioError("n_instances must be at least 1")
    indices = range(n_instances)
    if workers <= 1:
        return [run_instance(build_instance(config, i)) for i in indices]
    payloads = [(config_to_dict(config), i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_index, payloads, chunksize=1))


def reports_to_rows(reports: Iterable[InstanceReport]) -> list[dict]:
    """Flatten reports into result-table rows (one per instance x variant)."""
    rows = []
    for report in reports:
        for outcome in report.outcomes:
            rows.append(
                {
                    "instance_id": report.instance_id,
                    "regime": outcome.regime,
                    "weight_rule": outcome.weight_rule,
                    "cost": outcome.cost,
                    "eta_pct": outcome.eta_pct,
                    "violations_v": outcome.violations_v,
                    "violations_flow": outcome.violations_flow,
                    "delta_u_pct": outcome.delta_u_pct,
                    "delta_d_pct": outcome.delta_d_pct,
                    "discarded_flag": report.discarded,
                }
            )
    return rows


def _collect(values: Iterable[float | None]) -> list[float]:
    return [v for v in values if v is not None]


def summarize(reports: Sequence[InstanceReport], config: ScenarioConfig) -> dict:
    """Aggregate a run into a JSON-ready summary keyed by variant."""
    retained = [r for r in reports if not r.discarded]
    variants: dict[str, dict] = {}
    for regime, rule in VARIANTS:
        outcomes = [
            o
            for r in retained
            for o in r.outcomes
            if o.regime == regime and o.weight_rule == rule
        ]
        if not outcomes:
            continue
        etas = _collect(o.eta_pct for o in outcomes)
        costs = _collect(o.cost for o in outcomes)
        d_up = _collect(o.delta_u_pct for o in outcomes)
        d_down = _collect(o.delta_d_pct for o in outcomes)
        audited = [
            o
            for o in outcomes
            if o.violations_v is not None and o.violations_flow is not None
        ]
        unsafe = [o for o in audited if o.violations_v + o.violations_flow > 0]
        entry = {
            "n": len(outcomes),
            "n_optimal": sum(1 for o in outcomes if o.status == "optimal"),
            "mean_cost": statistics.fmean(costs) if costs else None,
            "mean_eta_pct": statistics.fmean(etas) if etas else None,
            "median_eta_pct": statistics.median(etas) if etas else None,
            "instances_with_violations": len(unsafe),
            "total_violations": sum(
                o.violations_v + o.violations_flow for o in audited
            ),
            "mean_delta_u_pct": statistics.fmean(d_up) if d_up else None,
            "mean_delta_d_pct": statistics.fmean(d_down) if d_down else None,
        }
        variants[f"{regime}|{rule}"] = entry
    return {
        "config": config_to_dict(config),
        "n_instances": len(reports),
        "n_retained": len(retained),
        "n_discarded": len(reports) - len(retained),
        "variants": variants,
    }


def write_outputs(
    reports: Sequence[InstanceReport],
    config: ScenarioConfig,
    out_dir: str | Path,
    plots: bool = False,
) -> dict[str, Path]:
    """Write results.csv and summary.json (and optional plots) to a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.csv", "summary": out / "summary.json"}
    write_results_csv(paths["results"], reports_to_rows(reports))
    summary = summarize(reports, config)
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plots:
        paths.update(write_plots(reports, out))
    return paths


def write_plots(
    reports: Sequence[InstanceReport], out_dir: str | Path
) -> dict[str, Path]:
    """Inefficiency histograms and unqualified-flexibility bars as PNGs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    retained = [r for r in reports if not r.discarded]
    oe_variants = [(rg, rl) for rg, rl in VARIANTS if rg.startswith("oe_")]

    fig, axes = plt.subplots(2, 3, figsize=(12, 6), sharex=False)
    for ax, (regime, rule) in zip(axes.flat, oe_variants):
        etas = _collect(
            o.eta_pct
            for r in retained
            for o in r.outcomes
            if o.regime == regime and o.weight_rule == rule
        )
        if etas:
            ax.hist(etas, bins=30, color="steelblue")
        ax.set_title(f"{regime} / {rule}", fontsize=9)
        ax.set_xlabel("inefficiency %")
    fig.tight_layout()
    eta_path = out / "eta_hist.png"
    fig.savefig(eta_path, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    labels, up_means, down_means = [], [], []
    for regime, rule in oe_variants:
        ups = _collect(
            o.delta_u_pct
            for r in retained
            for o in r.outcomes
            if o.regime == regime and o.weight_rule == rule
        )
        downs = _collect(
            o.delta_d_pct
            for r in retained
            for o in r.outcomes
            if o.regime == regime and o.weight_rule == rule
        )
        labels.append(f"{regime[3:]}\n{rule}")
        up_means.append(statistics.fmean(ups) if ups else 0.0)
        down_means.append(statistics.fmean(downs) if downs else 0.0)
    xs = np.arange(len(labels))
    ax.bar(xs - 0.2, up_means, width=0.4, label="unqualified upward %")
    ax.bar(xs + 0.2, down_means, width=0.4, label="unqualified downward %")
    ax.set_xticks(xs, labels, fontsize=8)
    ax.legend()
    fig.tight_layout()
    delta_path = out / "delta_bars.png"
    fig.savefig(delta_path, dpi=120)
    plt.close(fig)
    return {"eta_plot": eta_path, "delta_plot": delta_path}
