"""Operating-envelope computation for feeder-hosted flexibility.

An envelope ``[lower, upper]`` is a per-resource activation range that the
feeder operator certifies as grid-safe, so the transmission-level market can
clear feeder resources inside it without seeing any feeder constraint.  Two
calculations are provided:

* :func:`oe_two_step` solves one LP per direction: maximize the weighted sum
  of upward activations with every downward resource pinned at zero (the
  maxima become the upper bounds), then minimize the weighted sum of downward
  activations with upward pinned (the minima become the lower bounds).  Each
  step certifies the *simultaneous* extreme, which is what makes the result
  robust: any market outcome inside the boxes is a convex combination of
  certified points and the base case.

* :func:`oe_one_step` solves a single QP that pulls every activation toward
  its technical limit, weighted per resource, subject to the same feeder
  constraints.  Co-located offers can cancel inside the QP, which tends to
  return wider -- not necessarily safe -- envelopes.

Weight rules (:func:`weights`) bias whose limits the feeder capacity is
spent on: ``equal`` treats resources alike, ``price`` favors cheap upward and
expensive downward offers relative to the feeder's priciest resource, and
``quantity`` favors large resources.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleScenarioError, ModelError, SolverError
from .network import (
    Direction,
    DistributionNetwork,
    FlexResource,
    PolygonApprox,
)
from .optcore import (
    ConvexProblem,
    SolveStatus,
    add_dn_constraint_set,
    p_var,
    solve,
)
from .powerflow import run_linear_pf

WEIGHT_RULES = ("equal", "price", "quantity")

#: LP solutions this close to a technical limit (pu) are snapped onto it.
SNAP_TOL = 1e-7

#: Interior-point QP solutions may wobble this far off a degenerate boundary;
#: candidates within this distance of a limit are snapped when (and only
#: when) the snapped point verifiably satisfies the feeder model.
POLISH_TOL = 1e-4


@dataclass(frozen=True)
class Envelope:
    """Certified activation range for one resource: ``lower <= 0 <= upper``."""

    resource_id: str
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not self.lower <= 0.0 <= self.upper:
            raise ModelError(
                f"envelope for {self.resource_id!r} must contain zero, "
                f"got [{self.lower}, {self.upper}]"
            )


@dataclass(frozen=True)
class WeightAssignment:
    rule: str
    weights: Mapping[str, float]


def weights(resources: Sequence[FlexResource], rule: str) -> WeightAssignment:
    """Per-resource weights for one feeder's envelope computation.

    ``price`` normalizes by the feeder's most expensive offer ``c_max``:
    downward resources get ``c / c_max`` (expensive curtailment is worth
    protecting), upward get ``c_max / c`` (cheap generation is worth
    protecting).  ``quantity`` uses the technical size of each resource.
    """

    if rule not in WEIGHT_RULES:
        raise ModelError(f"unknown weight rule {rule!r}; pick one of {WEIGHT_RULES}")
    resources = list(resources)
    if not resources:
        raise ModelError("cannot assign weights to an empty resource list")
    if rule == "equal":
        w = {r.id: 1.0 for r in resources}
    elif rule == "price":
        c_max = max(r.price for r in resources)
        w = {
            r.id: (
                r.price / c_max
                if r.direction is Direction.DOWNWARD
                else c_max / r.price
            )
            for r in resources
        }
    else:  # quantity
        w = {r.id: max(r.p_max, -r.p_min) for r in resources}
    return WeightAssignment(rule=rule, weights=w)


def _split(resources: Sequence[FlexResource], dn_id: str):
    local = [r for r in resources if r.network == dn_id]
    ups = [r for r in local if r.direction is Direction.UPWARD]
    downs = [r for r in local if r.direction is Direction.DOWNWARD]
    return local, ups, downs


def _check_weights(local: Sequence[FlexResource], wa: WeightAssignment) -> None:
    missing = {r.id for r in local} - set(wa.weights)
    if missing:
        raise ModelError(f"weight assignment missing resources: {sorted(missing)}")


def _snap(value: float, lo: float, hi: float) -> float:
    """Clip into [lo, hi] and snap onto {lo, 0, hi} within solver tolerance."""
    value = min(max(value, lo), hi)
    for target in (lo, 0.0, hi):
        if abs(value - target) <= SNAP_TOL:
            return target
    return value


def _simulation_feasible(
    dn: DistributionNetwork,
    local: Sequence[FlexResource],
    activations: Mapping[str, float],
    tol: float = 1e-9,
) -> bool:
    """Check an activation point against the feeder model by running it.

    Linear power flow plus every limit the envelope problems enforce:
    voltage band, apparent-flow ratings (the true quadratic limit, which
    contains the polygonal market model), and interface bounds.
    """
    state = run_linear_pf(dn, local, activations)
    for bus, v in state.v.items():
        if v < dn.v_min[bus] - tol or v > dn.v_max[bus] + tol:
            return False
    for line in dn.lines:
        if not np.isfinite(line.s_limit):
            continue
        s = float(np.hypot(state.p_flow[line.child], state.q_flow[line.child]))
        if s > line.s_limit + tol:
            return False
    if abs(state.z) > dn.z_limit + tol:
        return False
    if state.z_re < dn.z_re_min - tol or state.z_re > dn.z_re_max + tol:
        return False
    return True


def _polish_qp_point(
    dn: DistributionNetwork,
    local: Sequence[FlexResource],
    values: Mapping[str, float],
) -> dict[str, float]:
    """Round a QP iterate onto the nearby limits it was converging to.

    Interior-point solutions stop a small distance short of any boundary
    whose multiplier is (near) zero, which would make "the envelope equals
    the technical limit" hold only approximately.  Each coordinate within
    :data:`POLISH_TOL` of its pull target (or of zero) is snapped there,
    one at a time, keeping only snaps that leave the whole activation point
    feasible under simulation.  Snapping toward the target can only lower
    the objective, so an accepted point dominates the solver's iterate.
    """
    current = {
        r.id: min(max(values[p_var(r.id)], r.p_min), r.p_max) for r in local
    }
    for r in local:
        target = r.p_max if r.direction is Direction.UPWARD else r.p_min
        for candidate in (target, 0.0):
            if current[r.id] == candidate:
                break
            if abs(current[r.id] - candidate) <= POLISH_TOL:
                trial = dict(current)
                trial[r.id] = candidate
                if _simulation_feasible(dn, local, trial):
                    current = trial
                    break
    return current


def _interface_problem(
    dn: DistributionNetwork,
    local: Sequence[FlexResource],
    polygon: PolygonApprox,
    bounds: Mapping[str, tuple[float, float]],
) -> ConvexProblem:
    prob = ConvexProblem()
    for res in local:
        lo, hi = bounds[res.id]
        prob.add_variable(p_var(res.id), lo, hi)
    handles = add_dn_constraint_set(prob, dn, local, polygon)
    prob.set_bounds(handles.z, -dn.z_limit, dn.z_limit)
    return prob


def _run(prob: ConvexProblem, dn: DistributionNetwork, label: str):
    result = solve(prob)
    if result.status is SolveStatus.INFEASIBLE:
        raise InfeasibleScenarioError(
            f"feeder {dn.id!r}: {label} problem is infeasible "
            "(base case violates its own constraints)"
        )
    if result.status is not SolveStatus.OPTIMAL:
        raise SolverError(
            f"feeder {dn.id!r}: {label} problem ended {result.status.value}"
        )
    return result


def oe_two_step(
    dn: DistributionNetwork,
    resources: Sequence[FlexResource],
    weight_assignment: WeightAssignment,
    polygon: PolygonApprox,
) -> dict[str, Envelope]:
    """Direction-at-a-time envelopes (one LP per direction).

    Upper bounds come from maximizing weighted upward activation with the
    downward side at zero; lower bounds from the mirrored problem.  The
    unused side of each envelope is zero.
    """

    local, ups, downs = _split(resources, dn.id)
    if not local:
        return {}
    _check_weights(local, weight_assignment)
    w = weight_assignment.weights

    up_bounds = {r.id: ((0.0, r.p_max) if r.direction is Direction.UPWARD else (0.0, 0.0)) for r in local}
    prob_up = _interface_problem(dn, local, polygon, up_bounds)
    for r in ups:
        prob_up.add_linear_cost(p_var(r.id), -w[r.id])
    if not ups:
        # nothing to maximize; still solve to confirm the base case is feasible
        prob_up.add_linear_cost(p_var(local[0].id), 0.0)
    res_up = _run(prob_up, dn, "upward envelope")

    down_bounds = {r.id: ((r.p_min, 0.0) if r.direction is Direction.DOWNWARD else (0.0, 0.0)) for r in local}
    prob_dn = _interface_problem(dn, local, polygon, down_bounds)
    for r in downs:
        prob_dn.add_linear_cost(p_var(r.id), w[r.id])
    if not downs:
        prob_dn.add_linear_cost(p_var(local[0].id), 0.0)
    res_dn = _run(prob_dn, dn, "downward envelope")

    out: dict[str, Envelope] = {}
    for r in local:
        if r.direction is Direction.UPWARD:
            hi = _snap(res_up.values[p_var(r.id)], 0.0, r.p_max)
            out[r.id] = Envelope(r.id, 0.0, hi)
        else:
            lo = _snap(res_dn.values[p_var(r.id)], r.p_min, 0.0)
            out[r.id] = Envelope(r.id, lo, 0.0)
    return out


def oe_one_step(
    dn: DistributionNetwork,
    resources: Sequence[FlexResource],
    weight_assignment: WeightAssignment,
    polygon: PolygonApprox,
) -> dict[str, Envelope]:
    """Single-QP envelopes pulling every activation toward its limit.

    The optimum activation of each resource becomes its envelope bound; the
    opposite side is zero.  Because upward and downward offers co-optimize,
    a co-located pair can mask each other and come back at full size.
    """

    local, ups, downs = _split(resources, dn.id)
    if not local:
        return {}
    _check_weights(local, weight_assignment)
    w = weight_assignment.weights

    bounds = {r.id: (r.p_min, r.p_max) for r in local}
    prob = _interface_problem(dn, local, polygon, bounds)
    for r in local:
        target = r.p_max if r.direction is Direction.UPWARD else r.p_min
        prob.add_quadratic_cost(p_var(r.id), w[r.id], offset=target)
    result = _run(prob, dn, "one-step envelope")
    polished = _polish_qp_point(dn, local, result.values)

    out: dict[str, Envelope] = {}
    for r in local:
        if r.direction is Direction.UPWARD:
            out[r.id] = Envelope(r.id, 0.0, polished[r.id])
        else:
            out[r.id] = Envelope(r.id, polished[r.id], 0.0)
    return out


def envelopes_for_method(
    method: str,
    dn: DistributionNetwork,
    resources: Sequence[FlexResource],
    weight_assignment: WeightAssignment,
    polygon: PolygonApprox,
) -> dict[str, Envelope]:
    if method == "two_step":
        return oe_two_step(dn, resources, weight_assignment, polygon)
    if method == "one_step":
        return oe_one_step(dn, resources, weight_assignment, polygon)
    raise ModelError(f"unknown envelope method {method!r}")


ENVELOPE_METHODS = ("two_step", "one_step")
