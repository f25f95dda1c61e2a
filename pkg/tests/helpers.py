"""Small hand-built networks shared across test modules."""

import numpy as np

from flexoe.network import (
    Direction,
    DistributionLine,
    DistributionNetwork,
    FlexResource,
    TransmissionLine,
    TransmissionNetwork,
)


def make_feeder(
    lines,
    e,
    e_re=None,
    dn_id="d1",
    root=0,
    v0=1.0,
    v_lo=0.81,
    v_hi=1.21,
    z_limit=10.0,
    z_re_limit=10.0,
):
    """Feeder from (parent, child, r, x, s_limit) tuples and an injection map."""
    e = dict(e)
    e_re = dict(e_re) if e_re is not None else {b: 0.0 for b in e}
    return DistributionNetwork(
        id=dn_id,
        root=root,
        lines=tuple(DistributionLine(*ln) for ln in lines),
        e=e,
        e_re=e_re,
        v0=v0,
        v_min={b: v_lo for b in e},
        v_max={b: v_hi for b in e},
        z_limit=z_limit,
        z_re_min=-z_re_limit,
        z_re_max=z_re_limit,
    )


def two_bus_feeder(
    load=0.02,
    load_re=0.0,
    r=0.01,
    x=0.02,
    s_limit=10.0,
    **kwargs,
):
    """Root 0 feeding bus 1 which carries the given load (positive = consumes)."""
    return make_feeder(
        lines=[(0, 1, r, x, s_limit)],
        e={0: 0.0, 1: -load},
        e_re={0: 0.0, 1: -load_re},
        **kwargs,
    )


def make_tn(lines, e, slack, dn_attach=None):
    return TransmissionNetwork.build(
        buses=tuple(e),
        e=dict(e),
        lines=tuple(TransmissionLine(*ln) for ln in lines),
        slack=slack,
        dn_attach=dn_attach or {},
    )


def upward(rid, network, bus, p_max, price, alpha=0.0):
    return FlexResource(
        id=rid,
        network=network,
        bus=bus,
        direction=Direction.UPWARD,
        p_min=0.0,
        p_max=p_max,
        price=price,
        alpha=alpha,
    )


def downward(rid, network, bus, p_min, price, alpha=0.0):
    return FlexResource(
        id=rid,
        network=network,
        bus=bus,
        direction=Direction.DOWNWARD,
        p_min=p_min,
        p_max=0.0,
        price=price,
        alpha=alpha,
    )


def random_tree_feeder(rng, n_buses, dn_id="t1", max_load=0.03, **kwargs):
    """Random feeder: each bus's parent drawn among earlier buses."""
    lines = []
    for child in range(1, n_buses):
        parent = int(rng.integers(0, child))
        lines.append(
            (
                parent,
                child,
                float(rng.uniform(0.001, 0.05)),
                float(rng.uniform(0.001, 0.05)),
                10.0,
            )
        )
    e = {0: 0.0}
    e_re = {0: 0.0}
    for b in range(1, n_buses):
        e[b] = -float(rng.uniform(0.0, max_load))
        e_re[b] = -float(rng.uniform(0.0, max_load / 2))
    return make_feeder(lines, e, e_re, dn_id=dn_id, v_lo=0.25, v_hi=4.0, **kwargs)
