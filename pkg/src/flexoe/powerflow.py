"""Linearized branch-flow evaluation and safety checks for radial feeders.

Given fixed activations, the feeder state is fully determined: flows are
accumulated leaf-to-root from nodal injections, and squared voltage
magnitudes follow the recursion

    v_child = v_parent - 2 * (r * p_flow + x * q_flow)

with the root held at ``v0``.  This is the same physics the optimization
constraints encode, evaluated directly; it is used both to audit market
outcomes and to derive default branch ratings from a base case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelError
from .network import DistributionNetwork, FlexResource

#: Bound slack below which a limit crossing is not counted as a violation.
VIOLATION_TOL = 1e-6


@dataclass(frozen=True)
class PFState:
    """Feeder operating point: everything in pu (voltages in pu^2).

    ``p_flow``/``q_flow`` are keyed by the child bus of each branch and are
    positive when power moves from parent to child.  ``z`` is the active
    import over the interface (positive when the feeder consumes); ``z_re``
    the reactive import.
    """

    v: Mapping[int, float]
    p_in: Mapping[int, float]
    q_in: Mapping[int, float]
    p_flow: Mapping[int, float]
    q_flow: Mapping[int, float]
    z: float
    z_re: float


@dataclass(frozen=True)
class ViolationReport:
    n_voltage: int
    n_flow: int
    worst_voltage: float  # largest distance outside the [v_min, v_max] band, pu^2
    worst_flow_ratio: float  # max |S| / S_limit over all branches

    @property
    def total(self) -> int:
        return self.n_voltage + self.n_flow

    @property
    def safe(self) -> bool:
        return self.total == 0


def run_linear_pf(
    dn: DistributionNetwork,
    resources: Sequence[FlexResource] = (),
    activations: Mapping[str, float] | None = None,
) -> PFState:
    """Evaluate the feeder at the given resource activations (pu).

    Resources without an entry in ``activations`` sit at zero; an activation
    for an id not present in ``resources`` is an error.
    """

    activations = dict(activations or {})
    by_id = {r.id: r for r in resources if r.network == dn.id}
    unknown = set(activations) - set(by_id)
    if unknown:
        raise ModelError(
            f"activations reference resources not in feeder {dn.id!r}: "
            f"{sorted(unknown)}"
        )

    p_in = {b: dn.e[b] for b in dn.buses}
    q_in = {b: dn.e_re[b] for b in dn.buses}
    for rid, p in activations.items():
        res = by_id[rid]
        p_in[res.bus] += p
        q_in[res.bus] += res.alpha * p

    # flows: leaf-to-root accumulation of downstream net injections
    p_flow: dict[int, float] = {}
    q_flow: dict[int, float] = {}
    for b in reversed(dn.topo_order):
        if b == dn.root:
            continue
        p_flow[b] = -p_in[b] + sum(p_flow[c] for c in dn.children[b])
        q_flow[b] = -q_in[b] + sum(q_flow[c] for c in dn.children[b])

    z = -p_in[dn.root] + sum(p_flow[c] for c in dn.children[dn.root])
    z_re = -q_in[dn.root] + sum(q_flow[c] for c in dn.children[dn.root])

    v = {dn.root: dn.v0}
    for b in dn.topo_order:
        if b == dn.root:
            continue
        ln = dn.line_by_child[b]
        v[b] = v[ln.parent] - 2.0 * (ln.r * p_flow[b] + ln.x * q_flow[b])

    return PFState(
        v=v, p_in=p_in, q_in=q_in, p_flow=p_flow, q_flow=q_flow, z=z, z_re=z_re
    )


def count_violations(
    dn: DistributionNetwork, state: PFState, tol: float = VIOLATION_TOL
) -> ViolationReport:
    """Count voltage-band and apparent-flow violations of a feeder state.

    The flow check uses the true quadratic limit ``P^2 + Q^2 <= S^2`` (not the
    polygonal market approximation), so a market outcome certified by the
    polygon can never be flagged here spuriously: the polygon is inscribed in
    the disk.
    """

    n_v = 0
    worst_v = 0.0
    for b in dn.buses:
        dev = max(dn.v_min[b] - state.v[b], state.v[b] - dn.v_max[b])
        worst_v = max(worst_v, dev)
        if dev > tol:
            n_v += 1

    n_f = 0
    worst_ratio = 0.0
    for ln in dn.lines:
        s = float(np.hypot(state.p_flow[ln.child], state.q_flow[ln.child]))
        worst_ratio = max(worst_ratio, s / ln.s_limit)
        if s > ln.s_limit + tol:
            n_f += 1

    return ViolationReport(
        n_voltage=n_v, n_flow=n_f, worst_voltage=worst_v, worst_flow_ratio=worst_ratio
    )
