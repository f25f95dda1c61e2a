"""Network models: a meshed transmission grid with PTDF-based DC flows and
radial distribution feeders described by parent pointers.

Conventions used throughout the package:

* every power quantity is stored in per-unit on a single system base
  (``S_BASE_MVA``); megawatt values appear only at I/O boundaries,
* bus injections ``e`` are net (generation minus load), so loads are negative,
* feeder voltages are squared magnitudes in pu^2, which keeps the linearized
  branch-flow voltage recursion exactly linear,
* the feeder interface flow ``z`` is the import seen from the transmission
  side: positive when the feeder consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import ModelError, RadialityError

S_BASE_MVA = 100.0

#: Hard floor used when validating reactances and resistances.
_MIN_IMPEDANCE = 0.0


class Direction(str, Enum):
    """Offer direction of a flexible resource as seen by the system operator."""

    UPWARD = "upward"
    DOWNWARD = "downward"


@dataclass(frozen=True)
class FlexResource:
    """A single-direction flexibility offer located at one bus.

    Upward resources can only increase their injection (``0 <= p <= p_max``),
    downward resources can only decrease it (``p_min <= p <= 0``).  A
    shiftable load is represented as a co-located pair of one upward and one
    downward resource.  ``alpha`` is the reactive-to-active ratio of the
    activation: activating ``p`` changes the reactive injection by
    ``alpha * p``.
    """

    id: str
    network: str
    bus: int
    direction: Direction
    p_min: float
    p_max: float
    price: float
    alpha: float = 0.33

    def __post_init__(self) -> None:
        if self.direction is Direction.UPWARD:
            if self.p_min != 0.0 or self.p_max <= 0.0:
                raise ModelError(
                    f"upward resource {self.id!r} must have p_min == 0 and "
                    f"p_max > 0, got [{self.p_min}, {self.p_max}]"
                )
        elif self.direction is Direction.DOWNWARD:
            if self.p_max != 0.0 or self.p_min >= 0.0:
                raise ModelError(
                    f"downward resource {self.id!r} must have p_max == 0 and "
                    f"p_min < 0, got [{self.p_min}, {self.p_max}]"
                )
        else:  # pragma: no cover - Enum guards this
            raise ModelError(f"unknown direction {self.direction!r}")
        if not self.price > 0.0:
            raise ModelError(f"resource {self.id!r} price must be positive")
        if self.alpha < 0.0:
            raise ModelError(f"resource {self.id!r} alpha must be >= 0")


@dataclass(frozen=True)
class TransmissionLine:
    from_bus: int
    to_bus: int
    reactance: float
    limit: float  # pu; thermal limit on |flow|

    def __post_init__(self) -> None:
        if self.reactance <= _MIN_IMPEDANCE:
            raise ModelError(
                f"line {self.from_bus}-{self.to_bus}: reactance must be positive"
            )
        if self.limit <= 0.0:
            raise ModelError(
                f"line {self.from_bus}-{self.to_bus}: flow limit must be positive"
            )


@dataclass(frozen=True)
class DistributionLine:
    """Feeder branch from ``parent`` towards ``child`` (one per non-root bus)."""

    parent: int
    child: int
    r: float
    x: float
    s_limit: float  # pu; apparent-flow limit

    def __post_init__(self) -> None:
        if self.r < 0.0 or self.x < 0.0 or (self.r == 0.0 and self.x == 0.0):
            raise ModelError(
                f"branch {self.parent}-{self.child}: impedance must be non-negative "
                "and not identically zero"
            )
        if self.s_limit <= 0.0:
            raise ModelError(
                f"branch {self.parent}-{self.child}: apparent-flow limit must be positive"
            )


@dataclass(frozen=True)
class PolygonApprox:
    """Inner polygonal approximation of the disk ``P^2 + Q^2 <= S^2``.

    ``rows`` are triples ``(eP, eQ, eS)``; a point is accepted when
    ``eP * P + eQ * Q <= eS * S`` holds for every row.  The polygon is the
    regular ``sides``-gon inscribed in the circle of radius ``S`` with one
    vertex on the positive P axis, so acceptance implies membership in the
    disk (inner approximation, never outer).
    """

    rows: tuple[tuple[float, float, float], ...]
    sides: int
    limit: float

    def contains(self, p: float, q: float, tol: float = 0.0) -> bool:
        return all(
            ep * p + eq * q <= es * self.limit + tol for ep, eq, es in self.rows
        )


def make_polygon(sides: int, limit: float = 1.0) -> PolygonApprox:
    """Build the inscribed regular polygon used for apparent-flow limits.

    Row ``j`` is the edge between vertices at angles ``2*pi*j/sides`` and
    ``2*pi*(j+1)/sides``; its outward normal points at the midpoint angle and
    the edge sits at distance ``S*cos(pi/sides)`` from the origin.
    """

    if sides < 4:
        raise ModelError(f"polygon needs at least 4 sides, got {sides}")
    if limit <= 0.0:
        raise ModelError("polygon limit must be positive")
    es = float(np.cos(np.pi / sides))
    rows = []
    for j in range(sides):
        phi = 2.0 * np.pi * (j + 0.5) / sides
        rows.append((float(np.cos(phi)), float(np.sin(phi)), es))
    return PolygonApprox(rows=tuple(rows), sides=sides, limit=limit)


def build_ptdf(
    lines: Sequence[TransmissionLine], buses: Sequence[int], slack: int
) -> np.ndarray:
    """Power-transfer distribution factors of a connected DC network.

    Returns the ``len(lines) x len(buses)`` matrix ``C`` such that line flows
    are ``C @ injections`` with the slack bus absorbing the residual; the
    slack column is identically zero.  Built by inverting the reduced nodal
    susceptance matrix (slack row/column removed).
    """

    if len(buses) != len(set(buses)):
        raise ModelError("duplicate bus ids")
    if slack not in buses:
        raise ModelError(f"slack bus {slack} not among buses")
    index = {b: i for i, b in enumerate(buses)}
    n, m = len(buses), len(lines)

    # connectivity check (BFS over the undirected line graph)
    adj: dict[int, list[int]] = {b: [] for b in buses}
    for ln in lines:
        if ln.from_bus not in index or ln.to_bus not in index:
            raise ModelError(
                f"line {ln.from_bus}-{ln.to_bus} references an unknown bus"
            )
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = {slack}
    stack = [slack]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n:
        missing = sorted(set(buses) - seen)
        raise ModelError(f"network is disconnected; unreachable buses: {missing}")

    incidence = np.zeros((m, n))
    suscept = np.zeros(m)
    for k, ln in enumerate(lines):
        incidence[k, index[ln.from_bus]] = 1.0
        incidence[k, index[ln.to_bus]] = -1.0
        suscept[k] = 1.0 / ln.reactance
    b_bus = incidence.T @ (suscept[:, None] * incidence)
    keep = [i for i in range(n) if i != index[slack]]
    b_red = b_bus[np.ix_(keep, keep)]
    b_flow = suscept[:, None] * incidence
    ptdf = np.zeros((m, n))
    ptdf[:, keep] = b_flow[:, keep] @ np.linalg.inv(b_red)
    ptdf.setflags(write=False)
    return ptdf


@dataclass(frozen=True)
class TransmissionNetwork:
    """Meshed grid with DC (PTDF) flow physics and feeder attachment points.

    ``dn_attach`` maps feeder id -> transmission bus; it plays the role of the
    selection matrix that routes each feeder's interface flow into the nodal
    balance of its attachment bus.
    """

    buses: tuple[int, ...]
    e: Mapping[int, float]  # net base injection per bus, pu
    lines: tuple[TransmissionLine, ...]
    slack: int
    dn_attach: Mapping[str, int]
    ptdf: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self) -> None:
        if set(self.e) != set(self.buses):
            raise ModelError("injection map must cover exactly the bus set")
        for dn_id, bus in self.dn_attach.items():
            if bus not in self.e:
                raise ModelError(
                    f"feeder {dn_id!r} attached at unknown bus {bus}"
                )
        if self.ptdf.shape != (len(self.lines), len(self.buses)):
            raise ModelError("PTDF shape does not match lines x buses")

    @classmethod
    def build(
        cls,
        buses: Sequence[int],
        e: Mapping[int, float],
        lines: Sequence[TransmissionLine],
        slack: int,
        dn_attach: Mapping[str, int] | None = None,
    ) -> "TransmissionNetwork":
        buses = tuple(buses)
        ptdf = build_ptdf(lines, buses, slack)
        return cls(
            buses=buses,
            e=dict(e),
            lines=tuple(lines),
            slack=slack,
            dn_attach=dict(dn_attach or {}),
            ptdf=ptdf,
        )

    @cached_property
    def bus_index(self) -> Mapping[int, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @property
    def total_load(self) -> float:
        """Sum of negative injections, as a positive number (pu)."""
        return -sum(v for v in self.e.values() if v < 0.0)


@dataclass(frozen=True)
class DistributionNetwork:
    """Radial feeder behind a single transmission interface.

    The tree is given by one :class:`DistributionLine` per non-root bus, keyed
    by its child bus.  ``e``/``e_re`` are the base net injections (loads are
    negative).  The interface import in the base case is ``-z0`` where
    ``z0 = sum(e)`` -- a feeder that nets out as load has negative total
    injection and therefore positive import.
    """

    id: str
    root: int
    lines: tuple[DistributionLine, ...]
    e: Mapping[int, float]
    e_re: Mapping[int, float]
    v0: float  # squared voltage magnitude held at the root, pu^2
    v_min: Mapping[int, float]
    v_max: Mapping[int, float]
    z_limit: float  # |interface active flow| bound, pu
    z_re_min: float
    z_re_max: float

    def __post_init__(self) -> None:
        buses = set(self.e)
        for name, mapping in (
            ("e_re", self.e_re),
            ("v_min", self.v_min),
            ("v_max", self.v_max),
        ):
            if set(mapping) != buses:
                raise ModelError(f"feeder {self.id!r}: {name} must cover every bus")
        for b in buses:
            if not self.v_min[b] < self.v_max[b]:
                raise ModelError(
                    f"feeder {self.id!r}: voltage bounds at bus {b} are empty"
                )
        if not self.v_min[self.root] <= self.v0 <= self.v_max[self.root]:
            raise ModelError(f"feeder {self.id!r}: root voltage outside its bounds")
        if self.z_limit <= 0.0:
            raise ModelError(f"feeder {self.id!r}: z_limit must be positive")
        if self.z_re_min > self.z_re_max:
            raise ModelError(f"feeder {self.id!r}: empty reactive interface range")
        validate_radial(self)

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(self.e)

    @property
    def z0(self) -> float:
        """Net base injection of the whole feeder (pu); equals ``sum(e)``."""
        return sum(self.e.values())

    @property
    def base_import(self) -> float:
        """Base-case active import over the interface (pu), ``-z0``."""
        return -self.z0

    @cached_property
    def parent(self) -> Mapping[int, int]:
        return {ln.child: ln.parent for ln in self.lines}

    @cached_property
    def line_by_child(self) -> Mapping[int, DistributionLine]:
        return {ln.child: ln for ln in self.lines}

    @cached_property
    def children(self) -> Mapping[int, tuple[int, ...]]:
        out: dict[int, list[int]] = {b: [] for b in self.e}
        for ln in self.lines:
            out[ln.parent].append(ln.child)
        return {b: tuple(v) for b, v in out.items()}

    @cached_property
    def topo_order(self) -> tuple[int, ...]:
        """Buses ordered root-first so every parent precedes its children."""
        order = [self.root]
        i = 0
        while i < len(order):
            order.extend(self.children[order[i]])
            i += 1
        return tuple(order)


def validate_radial(dn: DistributionNetwork) -> None:
    """Check that the feeder graph is a tree rooted at ``dn.root``.

    Raises :class:`RadialityError` naming the offending bus when the parent
    map has a cycle, a bus unreachable from the root, a duplicated child, or
    an edge that points at an unknown bus.
    """

    buses = set(dn.e)
    if dn.root not in buses:
        raise RadialityError(f"feeder {dn.id!r}: root {dn.root} is not a bus")
    seen_children: set[int] = set()
    for ln in dn.lines:
        if ln.parent not in buses or ln.child not in buses:
            raise RadialityError(
                f"feeder {dn.id!r}: branch {ln.parent}-{ln.child} references "
                "an unknown bus"
            )
        if ln.child == dn.root:
            raise RadialityError(
                f"feeder {dn.id!r}: root {dn.root} appears as a child"
            )
        if ln.child in seen_children:
            raise RadialityError(
                f"feeder {dn.id!r}: bus {ln.child} has multiple parents"
            )
        seen_children.add(ln.child)
    parent = {ln.child: ln.parent for ln in dn.lines}
    for b in buses:
        cur = b
        hops = 0
        while cur != dn.root:
            if cur not in parent:
                raise RadialityError(
                    f"feeder {dn.id!r}: bus {cur} is unreachable from the root"
                )
            cur = parent[cur]
            hops += 1
            if hops > len(buses):
                raise RadialityError(
                    f"feeder {dn.id!r}: cycle detected while walking up from bus {b}"
                )
    if len(dn.lines) != len(buses) - 1:
        raise RadialityError(
            f"feeder {dn.id!r}: {len(dn.lines)} branches for {len(buses)} buses "
            "(a tree needs exactly n-1)"
        )
