"""Balancing-market clearing under three feeder-visibility regimes.

All three regimes minimize total activation cost subject to the transmission
constraints (DC line limits, nodal balance, interface consistency).  They
differ only in how feeder-hosted resources are constrained:

* ``no_dn``   -- feeder resources keep their technical ranges and no feeder
  network constraint enters the problem.  Cheapest outcome, but the market
  may dispatch feeders into voltage or thermal violations.
* ``full_dn`` -- every feeder's full network model (power flow, voltage band,
  apparent-flow polygons, interface limits) is embedded.  Safe by
  construction and the reference for what safety actually costs.
* ``oe``      -- feeder resources are boxed into precomputed envelopes, and
  no feeder constraint enters the market.  Safety then depends entirely on
  how the envelopes were built.

Costs are ``sum(price * activation)`` converted to physical units, so a
downward activation (negative power at a positive price) reduces the
objective: the market prefers to curtail the most expensive downward offers
first, mirroring how an imbalance toward surplus is settled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .envelopes import Envelope
from .errors import ModelError
from .network import (
    S_BASE_MVA,
    DistributionNetwork,
    FlexResource,
    PolygonApprox,
    TransmissionNetwork,
)
from .optcore import (
    ConvexProblem,
    SolveStatus,
    TnHandles,
    add_dn_constraint_set,
    add_tn_constraints,
    p_var,
    solve,
)

REGIMES = ("no_dn", "full_dn", "oe")

#: ``FlexResource.network`` value marking a transmission-level resource.
TN_NETWORK = "T"


@dataclass(frozen=True)
class MarketSolution:
    """Outcome of one clearing run.

    ``cleared`` maps resource id to activation (pu), ``interface`` maps
    feeder id to its import at the optimum (pu), ``tn_injections`` maps
    transmission bus to its net injection including activations (pu), and
    ``cost`` is the total activation cost in currency (price times MW).
    Non-optimal runs carry empty mappings and ``cost=None``.
    """

    regime: str
    status: SolveStatus
    cleared: Mapping[str, float]
    interface: Mapping[str, float]
    tn_injections: Mapping[int, float]
    cost: float | None

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


def _add_costs(prob: ConvexProblem, resources: Sequence[FlexResource]) -> None:
    for res in resources:
        prob.add_linear_cost(p_var(res.id), res.price)


def _finish(
    regime: str,
    prob: ConvexProblem,
    handles: TnHandles,
    tn: TransmissionNetwork,
    resources: Sequence[FlexResource],
) -> MarketSolution:
    result = solve(prob)
    if result.status is not SolveStatus.OPTIMAL:
        return MarketSolution(regime, result.status, {}, {}, {}, None)
    cleared = {res.id: result.values[p_var(res.id)] for res in resources}
    interface = {dn_id: result.values[z] for dn_id, z in handles.z.items()}
    injections: dict[int, float] = {}
    for bus in tn.buses:
        total = tn.e[bus]
        for res in resources:
            if res.network == TN_NETWORK and res.bus == bus:
                total += cleared[res.id]
        injections[bus] = total
    cost = sum(res.price * cleared[res.id] for res in resources) * S_BASE_MVA
    return MarketSolution(regime, result.status, cleared, interface, injections, cost)


def clear_no_dn(
    tn: TransmissionNetwork,
    dns: Sequence[DistributionNetwork],
    resources: Sequence[FlexResource],
) -> MarketSolution:
    """Clear with feeder resources at technical limits and no feeder model."""
    prob = ConvexProblem()
    handles = add_tn_constraints(prob, tn, resources, dns)
    _add_costs(prob, resources)
    return _finish("no_dn", prob, handles, tn, resources)


def clear_full_dn(
    tn: TransmissionNetwork,
    dns: Sequence[DistributionNetwork],
    resources: Sequence[FlexResource],
    polygon: PolygonApprox,
) -> MarketSolution:
    """Clear with every feeder's network model embedded in the market."""
    prob = ConvexProblem()
    for dn in dns:
        local = [r for r in resources if r.network == dn.id]
        add_dn_constraint_set(prob, dn, local, polygon)
    handles = add_tn_constraints(prob, tn, resources, dns)
    _add_costs(prob, resources)
    return _finish("full_dn", prob, handles, tn, resources)


def clear_oe(
    tn: TransmissionNetwork,
    dns: Sequence[DistributionNetwork],
    resources: Sequence[FlexResource],
    envelopes: Mapping[str, Envelope],
) -> MarketSolution:
    """Clear with feeder resources boxed into precomputed envelopes."""
    dn_ids = {dn.id for dn in dns}
    missing = [
        r.id for r in resources if r.network in dn_ids and r.id not in envelopes
    ]
    if missing:
        raise ModelError(f"no envelope given for feeder resources: {missing}")
    prob = ConvexProblem()
    handles = add_tn_constraints(prob, tn, resources, dns)
    for res in resources:
        if res.network in dn_ids:
            env = envelopes[res.id]
            if env.lower < res.p_min - 1e-12 or env.upper > res.p_max + 1e-12:
                raise ModelError(
                    f"envelope for {res.id!r} exceeds technical limits: "
                    f"[{env.lower}, {env.upper}] vs [{res.p_min}, {res.p_max}]"
                )
            prob.set_bounds(p_var(res.id), env.lower, env.upper)
    _add_costs(prob, resources)
    return _finish("oe", prob, handles, tn, resources)
