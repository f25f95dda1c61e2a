"""End-to-end acceptance checks for the envelope-comparison study.

Each test prints a single pass/fail verdict under ``pytest -v`` and covers
one headline behavior of the package:

1. two-step envelope markets clear grid-safe under every weight rule;
2. one-step envelope markets can violate feeder limits, never more than the
   unconstrained market;
3. the unconstrained market is the cheapest market per instance;
4. two-step inefficiency is non-negative, price weights beat quantity weights;
5. with slack grid limits both methods return the technical limits exactly;
6. the optimization layer matches brute-force oracles on small problems;
7. the linear power flow conserves energy on random radial networks;
8. the metric arithmetic matches hand-computed worked examples;
9. in the deficit case the two-step method restricts much flexibility while
   staying near the idealized clearing cost.

The two Monte Carlo fixtures take about a minute each on one core; the whole
module stays well inside a ten-minute budget.
"""

import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

from flexoe.caseio import ScenarioConfig
from flexoe.envelopes import WEIGHT_RULES, Envelope
from flexoe.metrics import inefficiency, unqualified_flex
from flexoe.montecarlo import build_instance, instance_envelopes, run_plan
from flexoe.optcore import ConvexProblem, SolveStatus, solve
from flexoe.powerflow import run_linear_pf
from helpers import downward, random_tree_feeder, upward
from oracles import lp_vertex_solve, qp_active_set_solve

N_INSTANCES = 120
MIN_RETAINED = 100
RUNTIME_BUDGET_S = 600.0

SURPLUS_CONFIG = ScenarioConfig(seed=7, case_set=1)
DEFICIT_CONFIG = ScenarioConfig(seed=11, case_set=2)


def outcome(report, regime, rule):
    for o in report.outcomes:
        if o.regime == regime and o.weight_rule == rule:
            return o
    raise AssertionError(f"no outcome for {regime}/{rule} in instance {report.instance_id}")


@pytest.fixture(scope="module")
def surplus_run():
    """Case set 1: system surplus, feeders host shiftable-load pairs."""
    start = time.monotonic()
    reports = run_plan(SURPLUS_CONFIG, N_INSTANCES)
    elapsed = time.monotonic() - start
    retained = [r for r in reports if not r.discarded]
    assert len(retained) >= MIN_RETAINED, (
        f"only {len(retained)} retained instances; need {MIN_RETAINED}"
    )
    return retained, elapsed


@pytest.fixture(scope="module")
def deficit_run():
    """Case set 2: system deficit, feeders add distributed generation."""
    reports = run_plan(DEFICIT_CONFIG, N_INSTANCES)
    retained = [r for r in reports if not r.discarded]
    assert len(retained) >= MIN_RETAINED, (
        f"only {len(retained)} retained instances; need {MIN_RETAINED}"
    )
    return retained


def test_two_step_markets_are_grid_safe(surplus_run):
    retained, elapsed = surplus_run
    assert elapsed < RUNTIME_BUDGET_S
    for report in retained:
        for rule in WEIGHT_RULES:
            o = outcome(report, "oe_two_step", rule)
            assert o.status == "optimal"
            assert o.violations_v == 0, (
                f"instance {report.instance_id} rule {rule}: "
                f"{o.violations_v} voltage violations"
            )
            assert o.violations_flow == 0, (
                f"instance {report.instance_id} rule {rule}: "
                f"{o.violations_flow} flow violations"
            )


def test_one_step_markets_can_violate_but_never_exceed_unconstrained(surplus_run):
    retained, _ = surplus_run
    n_violating = sum(
        1
        for report in retained
        for rule in WEIGHT_RULES
        if outcome(report, "oe_one_step", rule).violations_v
        + outcome(report, "oe_one_step", rule).violations_flow
        > 0
    )
    assert n_violating >= 1, "one-step envelopes never produced a violation"
    for rule in WEIGHT_RULES:
        dominated = 0
        for report in retained:
            base = outcome(report, "no_dn", "-")
            one = outcome(report, "oe_one_step", rule)
            if (
                base.violations_v + base.violations_flow
                >= one.violations_v + one.violations_flow
            ):
                dominated += 1
        assert dominated >= 0.9 * len(retained), (
            f"rule {rule}: unconstrained clearing dominated one-step violations "
            f"in only {dominated}/{len(retained)} instances"
        )


def test_unconstrained_market_is_cheapest(surplus_run):
    retained, _ = surplus_run
    for report in retained:
        base_cost = outcome(report, "no_dn", "-").cost
        for o in report.outcomes:
            if not o.regime.startswith("oe_") or o.cost is None:
                continue
            slack = 1e-6 * max(1.0, abs(o.cost))
            assert base_cost <= o.cost + slack, (
                f"instance {report.instance_id}: unconstrained cost {base_cost} "
                f"exceeds {o.regime}/{o.weight_rule} cost {o.cost}"
            )


def test_two_step_inefficiency_nonnegative_and_price_beats_quantity(surplus_run):
    retained, _ = surplus_run
    for report in retained:
        for rule in WEIGHT_RULES:
            eta = outcome(report, "oe_two_step", rule).eta_pct
            assert eta is not None and eta >= -1e-6, (
                f"instance {report.instance_id} rule {rule}: eta {eta}"
            )
    mean_eta = {
        rule: statistics.fmean(
            outcome(r, "oe_two_step", rule).eta_pct for r in retained
        )
        for rule in WEIGHT_RULES
    }
    assert mean_eta["price"] <= mean_eta["quantity"], (
        f"price-weight mean inefficiency {mean_eta['price']:.4f} should not exceed "
        f"quantity-weight mean {mean_eta['quantity']:.4f}"
    )


def test_slack_grid_limits_return_technical_limits_exactly():
    for case_set in (1, 2):
        config = ScenarioConfig(
            seed=5,
            case_set=case_set,
            dn_cases=(("case69", 1),),
            voltage_bounds=(0.5, 1.5),
            rate_default_scale=1000.0,
            rate_floor_frac=1000.0,
            tn_limit_scale=1000.0,
            tn_limit_floor_frac=1000.0,
            z_slack_scale=1000.0,
        )
        for index in range(2):
            instance = build_instance(config, index)
            local = instance.feeder_resources("d0")
            for method in ("two_step", "one_step"):
                for rule in WEIGHT_RULES:
                    envs = instance_envelopes(instance, method, rule)
                    for res in local:
                        env = envs[res.id]
                        assert env.lower == res.p_min and env.upper == res.p_max, (
                            f"{method}/{rule}: envelope {env} != technical limits "
                            f"[{res.p_min}, {res.p_max}] for {res.id}"
                        )
                    delta_down, delta_up = unqualified_flex(local, envs)
                    assert delta_up == 0.0
                    if delta_down is not None:  # deficit feeders are upward-heavy
                        assert delta_down == 0.0


def test_small_problems_match_bruteforce_oracles():
    rng = np.random.default_rng(2718)
    n_checked = 0
    for k in range(60):
        quadratic = k % 2 == 1
        n = int(rng.integers(2, 5 if quadratic else 7))
        lb = -rng.uniform(0.5, 2.0, n)
        ub = rng.uniform(0.5, 2.0, n)
        names = [f"x{i}" for i in range(n)]
        prob = ConvexProblem()
        for name, lo, hi in zip(names, lb, ub):
            prob.add_variable(name, lo, hi)
        m = int(rng.integers(0, 3))
        a_ub = rng.normal(size=(m, n)) if m else None
        b_ub = rng.uniform(0.05, 1.0, m) if m else None  # keeps x=0 feasible
        for i in range(m):
            prob.add_inequality(dict(zip(names, a_ub[i])), b_ub[i])
        a_eq = b_eq = None
        if n >= 3 and rng.random() < 0.5:
            row = rng.normal(size=n)
            a_eq, b_eq = row.reshape(1, -1), np.zeros(1)
            prob.add_equality(dict(zip(names, row)), 0.0)
        c = rng.normal(size=n)
        for name, coeff in zip(names, c):
            prob.add_linear_cost(name, coeff)
        if quadratic:
            w = rng.uniform(0.2, 2.0, n)
            offsets = rng.normal(scale=0.5, size=n)
            for name, coeff, off in zip(names, w, offsets):
                prob.add_quadratic_cost(name, coeff, offset=off)
            # same objective as 0.5 x'Px + q x up to a constant
            p_mat = np.diag(2.0 * w)
            q_vec = c - 2.0 * w * offsets
            status, x_ref, _ = qp_active_set_solve(
                p_mat, q_vec, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq, lb=lb, ub=ub
            )
        else:
            status, x_ref, _ = lp_vertex_solve(
                c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq, lb=lb, ub=ub
            )
        assert status == "optimal", f"oracle failed on problem {k}"
        res = solve(prob)
        assert res.status is SolveStatus.OPTIMAL, f"solver failed on problem {k}"
        obj_ref = prob.objective_value(dict(zip(names, x_ref)))
        assert res.objective == pytest.approx(obj_ref, abs=1e-6), (
            f"problem {k}: solver objective {res.objective} vs oracle {obj_ref}"
        )
        n_checked += 1
    assert n_checked >= 50


def test_linear_power_flow_conserves_energy_on_random_trees():
    rng = np.random.default_rng(2024)
    tol = 1e-9
    for _ in range(1000):
        dn = random_tree_feeder(rng, n_buses=int(rng.integers(2, 51)))
        resources, activations = [], {}
        for k in range(int(rng.integers(0, 4))):
            bus = int(rng.choice(dn.buses[1:])) if len(dn.buses) > 1 else dn.root
            if rng.random() < 0.5:
                res = upward(f"u{k}", dn.id, bus, 0.05, 40.0, alpha=0.33)
                activations[res.id] = float(rng.uniform(0.0, 0.05))
            else:
                res = downward(f"d{k}", dn.id, bus, -0.05, 20.0, alpha=0.33)
                activations[res.id] = float(rng.uniform(-0.05, 0.0))
            resources.append(res)
        state = run_linear_pf(dn, resources, activations)

        # nodal balance: line flow equals local consumption plus downstream flows
        for line in dn.lines:
            bus = line.child
            downstream_p = sum(state.p_flow[c] for c in dn.children[bus])
            downstream_q = sum(state.q_flow[c] for c in dn.children[bus])
            assert abs(state.p_flow[bus] - (downstream_p - state.p_in[bus])) <= tol
            assert abs(state.q_flow[bus] - (downstream_q - state.q_in[bus])) <= tol
            # voltage drop along the line
            drop = 2.0 * (line.r * state.p_flow[bus] + line.x * state.q_flow[bus])
            assert abs(state.v[bus] - (state.v[line.parent] - drop)) <= tol

        # interface balance at the root
        root_out_p = sum(state.p_flow[c] for c in dn.children[dn.root])
        assert abs(state.z - (root_out_p - state.p_in[dn.root])) <= tol

        # independent post-order accumulation of the subtree demands
        subtree = {b: -state.p_in[b] for b in dn.buses}
        for b in reversed(dn.topo_order):
            for child in dn.children[b]:
                subtree[b] += subtree[child]
        assert abs(state.z - subtree[dn.root]) <= tol


def test_metric_worked_examples():
    # cost 610 against an idealized clearing at 520
    expected_eta = Fraction(610 - 520, 520) * 100
    eta = inefficiency(610.0, 520.0)
    assert eta == pytest.approx(float(expected_eta), abs=1e-9)
    assert eta == pytest.approx(17.31, abs=0.01)

    # offered 4 + 6, enveloped to 2 + 6: one fifth of the volume is withheld
    resources = [
        upward("a", "d1", 1, 4.0, 40.0),
        upward("b", "d1", 2, 6.0, 40.0),
    ]
    envelopes = {
        "a": Envelope("a", 0.0, 2.0),
        "b": Envelope("b", 0.0, 6.0),
    }
    expected_delta = Fraction((4 - 2) + (6 - 6), 4 + 6) * 100
    delta_down, delta_up = unqualified_flex(resources, envelopes)
    assert delta_up == float(expected_delta) == 20.0
    assert delta_down is None  # no downward resources offered


def test_deficit_case_two_step_is_efficient_despite_withheld_flexibility(deficit_run):
    retained = deficit_run
    etas = [
        outcome(r, "oe_two_step", rule).eta_pct
        for r in retained
        for rule in WEIGHT_RULES
        if outcome(r, "oe_two_step", rule).eta_pct is not None
    ]
    delta_ups = [
        outcome(r, "oe_two_step", rule).delta_u_pct
        for r in retained
        for rule in WEIGHT_RULES
        if outcome(r, "oe_two_step", rule).delta_u_pct is not None
    ]
    assert len(etas) >= MIN_RETAINED and len(delta_ups) >= MIN_RETAINED
    median_eta = statistics.median(etas)
    mean_delta_up = statistics.fmean(delta_ups)
    assert median_eta <= 0.5, f"median two-step inefficiency {median_eta:.4f}% > 0.5%"
    assert mean_delta_up >= 10.0, (
        f"mean withheld upward flexibility {mean_delta_up:.2f}% < 10%"
    )
