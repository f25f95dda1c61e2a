"""Comparison metrics for clearing regimes and envelope methods.

Two questions drive the comparison:

* **How far from ideal is a regime?**  :func:`inefficiency` is the percent
  cost excess over the full-network (idealized) clearing of the same
  instance.  Envelopes that truly respect the feeder model can only restrict
  the market, so their inefficiency is non-negative; an envelope method that
  comes in *below* the ideal is getting its discount by permitting points
  the feeder cannot actually host.
* **How much flexibility do envelopes leave unqualified?**
  :func:`unqualified_flex` is the percent of technically offered capacity,
  per direction, that the envelopes exclude from the market.

Both return ``None`` when undefined (zero reference cost, empty direction).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .envelopes import Envelope
from .network import Direction, FlexResource

#: Reference costs smaller than this (currency) make inefficiency undefined.
ZERO_COST_TOL = 1e-9


def inefficiency(cost: float | None, cost_reference: float | None) -> float | None:
    """Percent cost excess over a reference clearing (the full-network ideal).

    ``None`` when either cost is unavailable or the reference is (numerically)
    zero, in which case a ratio would be meaningless.
    """
    if cost is None or cost_reference is None:
        return None
    if abs(cost_reference) < ZERO_COST_TOL:
        return None
    return (cost - cost_reference) / abs(cost_reference) * 100.0


def unqualified_flex(
    resources: Sequence[FlexResource],
    envelopes: Mapping[str, Envelope],
) -> tuple[float | None, float | None]:
    """Percent of offered capacity the envelopes withhold, per direction.

    Returns ``(delta_down, delta_up)``.  Only resources with an envelope are
    considered (feeder resources; transmission offers are never enveloped).
    A direction with no enveloped resources yields ``None``.
    """
    up_offered = up_cut = 0.0
    down_offered = down_cut = 0.0
    has_up = has_down = False
    for res in resources:
        env = envelopes.get(res.id)
        if env is None:
            continue
        if res.direction is Direction.UPWARD:
            has_up = True
            up_offered += res.p_max
            up_cut += res.p_max - env.upper
        else:
            has_down = True
            down_offered += -res.p_min
            down_cut += env.lower - res.p_min
    delta_up = (
        (up_cut / up_offered * 100.0) if has_up and up_offered > ZERO_COST_TOL else None
    )
    delta_down = (
        (down_cut / down_offered * 100.0)
        if has_down and down_offered > ZERO_COST_TOL
        else None
    )
    return delta_down, delta_up


@dataclass(frozen=True)
class VariantOutcome:
    """One clearing variant's results on one scenario instance."""

    regime: str  # no_dn | full_dn | oe_two_step | oe_one_step
    weight_rule: str  # "-" where no envelope is involved
    status: str
    cost: float | None
    eta_pct: float | None
    violations_v: int | None
    violations_flow: int | None
    delta_u_pct: float | None
    delta_d_pct: float | None


@dataclass(frozen=True)
class InstanceReport:
    """Everything recorded about one scenario instance."""

    instance_id: int
    discarded: bool
    outcomes: tuple[VariantOutcome, ...] = field(default_factory=tuple)
    note: str = ""
