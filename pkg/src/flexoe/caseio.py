"""Case ingestion and file formats.

Handles three kinds of files:

* Matpower-style ``.m`` case files (the ``mpc.bus`` / ``mpc.branch`` /
  ``mpc.gen`` tables) for network topology and base loads,
* JSON scenario configuration files with a versioned schema,
* the fixed-column results CSV produced by Monte Carlo runs.

Everything numeric that leaves this module is in per-unit on the system base
(100 MVA); case-file impedances are rebased from the case MVA base at
ingestion.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import powerflow
from .errors import CaseFormatError, ModelError
from .network import (
    S_BASE_MVA,
    Direction,
    DistributionLine,
    DistributionNetwork,
    FlexResource,
    TransmissionLine,
    TransmissionNetwork,
)

logger = logging.getLogger(__name__)

# column positions in the standard bus/branch/gen tables
BUS_I, BUS_TYPE, PD, QD = 0, 1, 2, 3
BUS_REF = 3  # bus type code of the reference bus
F_BUS, T_BUS, BR_R, BR_X, RATE_A, BR_STATUS = 0, 1, 2, 3, 5, 10
GEN_BUS, PG, GEN_STATUS, PMAX = 0, 1, 7, 8

_MIN_COLS = {"bus": 13, "branch": 11, "gen": 9}
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([^\[\s;'\"]+)\s*;")
_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\];", re.DOTALL)
_STRING_RE = re.compile(r"mpc\.(\w+)\s*=\s*'([^']*)'\s*;")

#: Tables this package consumes; anything else in a case file is ignored.
_KNOWN_TABLES = ("bus", "branch", "gen")


@dataclass(frozen=True)
class MatpowerCase:
    """Parsed case file: raw tables plus the id remapping.

    ``bus_ids`` preserves the original (possibly non-contiguous) bus numbers
    in table order; all arrays keep the original ids in their id columns.
    """

    name: str
    base_mva: float
    bus: np.ndarray
    branch: np.ndarray
    gen: np.ndarray | None

    def __post_init__(self) -> None:
        self.bus.setflags(write=False)
        self.branch.setflags(write=False)
        if self.gen is not None:
            self.gen.setflags(write=False)

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(int(b) for b in self.bus[:, BUS_I])

    @property
    def bus_index(self) -> Mapping[int, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    @property
    def in_service_branches(self) -> np.ndarray:
        return self.branch[self.branch[:, BR_STATUS] != 0.0]

    def is_radial(self) -> bool:
        """True when the in-service graph is a spanning tree of the buses."""
        br = self.in_service_branches
        n = len(self.bus_ids)
        if len(br) != n - 1:
            return False
        parent = {b: b for b in self.bus_ids}

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for row in br:
            a, b = find(int(row[F_BUS])), find(int(row[T_BUS]))
            if a == b:
                return False
            parent[a] = b
        return True


def parse_matpower_case(text: str, name: str = "case") -> MatpowerCase:
    """Parse the subset of the Matpower case format this package uses.

    Recognizes ``mpc.baseMVA`` and the ``bus``, ``branch`` and ``gen`` tables;
    ``mpc.version`` is accepted and ignored.  Any other table is skipped with
    a warning.  Raises :class:`CaseFormatError` on missing tables, ragged
    rows, duplicate bus ids, or branches that reference unknown buses.
    """

    stripped = "\n".join(line.split("%", 1)[0] for line in text.splitlines())

    scalars = {m.group(1): m.group(2) for m in _SCALAR_RE.finditer(stripped)}
    strings = {m.group(1): m.group(2) for m in _STRING_RE.finditer(stripped)}
    tables: dict[str, np.ndarray] = {}
    for m in _MATRIX_RE.finditer(stripped):
        key, body = m.group(1), m.group(2)
        if key not in _KNOWN_TABLES:
            logger.warning("case %s: ignoring unknown table mpc.%s", name, key)
            continue
        rows = []
        for raw_row in body.replace("\n", ";").split(";"):
            tokens = raw_row.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append([float(t) for t in tokens])
            except ValueError as exc:
                raise CaseFormatError(
                    f"case {name}: non-numeric entry in mpc.{key}: {exc}"
                ) from None
        if not rows:
            raise CaseFormatError(f"case {name}: table mpc.{key} is empty")
        width = len(rows[0])
        if any(len(r) != width for r in rows):
            raise CaseFormatError(f"case {name}: ragged rows in mpc.{key}")
        if width < _MIN_COLS[key]:
            raise CaseFormatError(
                f"case {name}: mpc.{key} has {width} columns, "
                f"expected at least {_MIN_COLS[key]}"
            )
        tables[key] = np.array(rows)

    ignored = set(scalars) | set(strings)
    for key in sorted(ignored - {"baseMVA", "version"}):
        logger.warning("case %s: ignoring assignment mpc.%s", name, key)

    if "baseMVA" not in scalars:
        raise CaseFormatError(f"case {name}: missing mpc.baseMVA")
    base_mva = float(scalars["baseMVA"])
    if base_mva <= 0.0:
        raise CaseFormatError(f"case {name}: baseMVA must be positive")
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseFormatError(f"case {name}: missing mpc.{required}")

    bus = tables["bus"]
    ids = [int(b) for b in bus[:, BUS_I]]
    if len(ids) != len(set(ids)):
        raise CaseFormatError(f"case {name}: duplicate bus ids")
    known = set(ids)
    for row in tables["branch"]:
        if int(row[F_BUS]) not in known or int(row[T_BUS]) not in known:
            raise CaseFormatError(
                f"case {name}: branch {int(row[F_BUS])}-{int(row[T_BUS])} "
                "references an unknown bus"
            )
    gen = tables.get("gen")
    if gen is not None:
        for row in gen:
            if int(row[GEN_BUS]) not in known:
                raise CaseFormatError(
                    f"case {name}: generator at unknown bus {int(row[GEN_BUS])}"
                )

    return MatpowerCase(
        name=name, base_mva=base_mva, bus=bus, branch=tables["branch"], gen=gen
    )


def serialize_matpower_case(case: MatpowerCase) -> str:
    """Render a parsed case back to ``.m`` text (round-trips through parse)."""

    def block(key: str, arr: np.ndarray) -> str:
        lines = [f"mpc.{key} = ["]
        for row in arr:
            lines.append("\t" + "\t".join(f"{v:.10g}" for v in row) + ";")
        lines.append("];")
        return "\n".join(lines)

    parts = [
        f"function mpc = {case.name}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {case.base_mva:.10g};",
        block("bus", case.bus),
    ]
    if case.gen is not None:
        parts.append(block("gen", case.gen))
    parts.append(block("branch", case.branch))
    return "\n\n".join(parts) + "\n"


def load_case(path: str | Path) -> MatpowerCase:
    path = Path(path)
    return parse_matpower_case(path.read_text(), name=path.stem)


def bundled_case_path(name: str) -> Path:
    """Path of a case file shipped with the package (e.g. ``"case69"``)."""
    fname = name if name.endswith(".m") else f"{name}.m"
    candidate = importlib_resources.files("flexoe") / "cases" / fname
    with importlib_resources.as_file(candidate) as p:
        if not p.exists():
            raise FileNotFoundError(f"no bundled case named {name!r}")
        return Path(p)


def resolve_case(name_or_path: str | Path) -> MatpowerCase:
    """Load a case from a filesystem path, falling back to the bundled set."""
    p = Path(name_or_path)
    if p.exists():
        return load_case(p)
    return load_case(bundled_case_path(str(name_or_path)))


# ---------------------------------------------------------------------------
# scenario configuration


DEFAULT_PRICE_RANGES: Mapping[str, tuple[float, float]] = {
    "dn_up": (35.0, 55.0),
    "dn_down": (14.0, 34.0),
    "tn_up": (65.0, 75.0),
    "tn_down": (1.0, 11.0),
}

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything that defines a Monte Carlo experiment, seed included.

    Ranges are sampled per instance.  ``case_set=1`` models a system surplus
    (the operator needs downward flexibility) with feeders hosting shiftable
    loads only; ``case_set=2`` models a deficit (upward need) and adds
    distributed generation on the feeders.
    """

    seed: int = 0
    case_set: int = 1
    tn_case: str = "case14"
    dn_cases: tuple[tuple[str, int], ...] = (("case69", 4),)
    load_scale_range: tuple[float, float] = (0.35, 0.55)
    imbalance_fraction: float = 0.012
    dn_pairs: int = 5
    tn_per_direction: int = 4
    quantity_range_mw: tuple[float, float] = (0.1, 0.5)
    tn_quantity_range_mw: tuple[float, float] = (2.0, 6.0)
    dg_quantity_scale: float = 2.0
    price_ranges: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_PRICE_RANGES)
    )
    alpha: float = 0.33
    polygon_sides: int = 12
    voltage_bounds: tuple[float, float] = (0.95, 1.05)
    v0: float = 1.0
    rate_default_scale: float = 1.5
    rate_floor_frac: float = 0.05
    tn_limit_scale: float = 2.0
    tn_limit_floor_frac: float = 0.2
    z_slack_scale: float = 1.2
    max_resample: int = 100

    def __post_init__(self) -> None:
        if self.case_set not in (1, 2):
            raise ModelError(f"case_set must be 1 or 2, got {self.case_set}")
        if self.dn_pairs < 1 or self.tn_per_direction < 1:
            raise ModelError("resource counts must be at least 1")
        for label, rng in (
            ("load_scale_range", self.load_scale_range),
            ("quantity_range_mw", self.quantity_range_mw),
            ("tn_quantity_range_mw", self.tn_quantity_range_mw),
            ("voltage_bounds", self.voltage_bounds),
        ):
            if len(rng) != 2 or not rng[0] <= rng[1] or rng[0] <= 0.0:
                raise ModelError(f"{label} must be a positive (low, high) pair")
        missing = set(DEFAULT_PRICE_RANGES) - set(self.price_ranges)
        if missing:
            raise ModelError(f"price_ranges missing keys: {sorted(missing)}")
        for key, (lo, hi) in self.price_ranges.items():
            if not 0.0 < lo <= hi:
                raise ModelError(f"price range {key} must be positive and ordered")
        if not 0.0 < self.imbalance_fraction < 1.0:
            raise ModelError("imbalance_fraction must lie in (0, 1)")
        if self.polygon_sides < 4:
            raise ModelError("polygon_sides must be at least 4")
        if not self.voltage_bounds[0] < self.v0 < self.voltage_bounds[1]:
            raise ModelError("v0 must lie strictly inside voltage_bounds")
        if not self.dn_cases:
            raise ModelError("at least one feeder must be attached")


def config_to_dict(config: ScenarioConfig) -> dict:
    out = {"schema_version": CONFIG_SCHEMA_VERSION}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        elif isinstance(value, Mapping):
            value = {k: list(v) for k, v in value.items()}
        out[f.name] = value
    return out


def config_from_dict(data: Mapping) -> ScenarioConfig:
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != CONFIG_SCHEMA_VERSION:
        raise ModelError(
            f"unsupported scenario schema_version {version!r} "
            f"(this build reads {CONFIG_SCHEMA_VERSION})"
        )
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(data) - known
    if unknown:
        raise ModelError(f"unknown scenario config keys: {sorted(unknown)}")
    kwargs: dict = {}
    for key, value in data.items():
        if key == "dn_cases":
            kwargs[key] = tuple((str(c), int(b)) for c, b in value)
        elif key == "price_ranges":
            kwargs[key] = {k: (float(v[0]), float(v[1])) for k, v in value.items()}
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return ScenarioConfig(**kwargs)


def save_config(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2) + "\n")


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"scenario file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ModelError(f"scenario file {path} must contain a JSON object")
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# conversion to network models


def _reference_bus(case: MatpowerCase) -> int:
    refs = [int(row[BUS_I]) for row in case.bus if int(row[BUS_TYPE]) == BUS_REF]
    if len(refs) != 1:
        raise CaseFormatError(
            f"case {case.name}: expected exactly one reference bus, found {len(refs)}"
        )
    return refs[0]


def to_distribution_network(
    case: MatpowerCase,
    config: ScenarioConfig,
    dn_id: str = "dn",
    load_scale: float = 1.0,
) -> DistributionNetwork:
    """Turn a radial case into a feeder model at the given load scale.

    Branch impedances are rebased to the system MVA base.  Branches with a
    positive rateA keep it (converted to pu); unrated branches get
    ``rate_default_scale`` times their base-case apparent flow, floored at
    ``rate_floor_frac`` of the largest base flow so lightly loaded laterals
    are not pinned at zero.
    """

    root = _reference_bus(case)
    if not case.is_radial():
        raise CaseFormatError(f"case {case.name}: in-service graph is not radial")

    zfac = S_BASE_MVA / case.base_mva
    # orient every branch away from the root
    adj: dict[int, list[tuple[int, np.ndarray]]] = {b: [] for b in case.bus_ids}
    for row in case.in_service_branches:
        f, t = int(row[F_BUS]), int(row[T_BUS])
        adj[f].append((t, row))
        adj[t].append((f, row))
    lines: list[DistributionLine] = []
    seen = {root}
    frontier = [root]
    while frontier:
        parent_bus = frontier.pop()
        for child_bus, row in adj[parent_bus]:
            if child_bus in seen:
                continue
            seen.add(child_bus)
            frontier.append(child_bus)
            rate = float(row[RATE_A])
            lines.append(
                DistributionLine(
                    parent=parent_bus,
                    child=child_bus,
                    r=float(row[BR_R]) * zfac,
                    x=float(row[BR_X]) * zfac,
                    s_limit=rate / S_BASE_MVA if rate > 0.0 else np.inf,
                )
            )

    e = {
        int(row[BUS_I]): -float(row[PD]) * load_scale / S_BASE_MVA
        for row in case.bus
    }
    e_re = {
        int(row[BUS_I]): -float(row[QD]) * load_scale / S_BASE_MVA
        for row in case.bus
    }
    v_lo, v_hi = config.voltage_bounds
    v_min = {b: v_lo**2 for b in e}
    v_max = {b: v_hi**2 for b in e}

    provisional = DistributionNetwork(
        id=dn_id,
        root=root,
        lines=tuple(lines),
        e=e,
        e_re=e_re,
        v0=config.v0**2,
        v_min=v_min,
        v_max=v_max,
        z_limit=abs(sum(e.values())) + 1.0,
        z_re_min=-abs(sum(e_re.values())) - 1.0,
        z_re_max=abs(sum(e_re.values())) + 1.0,
    )
    if all(np.isfinite(ln.s_limit) for ln in lines):
        return provisional

    base = powerflow.run_linear_pf(provisional)
    s_base = {
        ln.child: float(np.hypot(base.p_flow[ln.child], base.q_flow[ln.child]))
        for ln in lines
    }
    floor = config.rate_floor_frac * max(max(s_base.values()), 1e-6)
    rated = tuple(
        ln
        if np.isfinite(ln.s_limit)
        else dataclasses.replace(
            ln, s_limit=config.rate_default_scale * max(s_base[ln.child], floor)
        )
        for ln in lines
    )
    return dataclasses.replace(provisional, lines=rated)


def to_transmission_network(
    case: MatpowerCase,
    config: ScenarioConfig,
    e: Mapping[int, float],
    dn_attach: Mapping[str, int],
    dn_imports: Mapping[str, float],
) -> TransmissionNetwork:
    """Build the meshed grid with the given injections and feeder attachments.

    ``e`` are net injections (pu) excluding feeder interchange; feeders enter
    the base flows through ``dn_imports``.  Unrated lines default to
    ``tn_limit_scale`` times their base-case flow magnitude, floored at
    ``tn_limit_floor_frac`` of the largest base flow.
    """

    slack = _reference_bus(case)
    rows = case.in_service_branches
    if not len(rows):
        raise CaseFormatError(f"case {case.name}: no in-service branches")
    xfac = S_BASE_MVA / case.base_mva
    provisional = [
        TransmissionLine(
            from_bus=int(row[F_BUS]),
            to_bus=int(row[T_BUS]),
            reactance=float(row[BR_X]) * xfac,
            limit=float(row[RATE_A]) / S_BASE_MVA if row[RATE_A] > 0.0 else np.inf,
        )
        for row in rows
    ]
    net = TransmissionNetwork.build(
        buses=case.bus_ids, e=e, lines=provisional, slack=slack, dn_attach=dn_attach
    )
    if all(np.isfinite(ln.limit) for ln in provisional):
        return net

    inj = np.array([e[b] for b in net.buses])
    for dn_id, bus in dn_attach.items():
        inj[net.bus_index[bus]] -= dn_imports[dn_id]
    base_flow = np.abs(net.ptdf @ inj)
    floor = config.tn_limit_floor_frac * max(float(base_flow.max()), 1e-6)
    rated = tuple(
        ln
        if np.isfinite(ln.limit)
        else dataclasses.replace(
            ln, limit=config.tn_limit_scale * max(float(base_flow[k]), floor)
        )
        for k, ln in enumerate(provisional)
    )
    return dataclasses.replace(net, lines=rated)


# ---------------------------------------------------------------------------
# resource attachment


def attach_resources(
    network: DistributionNetwork | TransmissionNetwork,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> list[FlexResource]:
    """Sample the flexibility offers hosted by one network.

    Feeders get ``dn_pairs`` shiftable loads -- co-located upward/downward
    pairs of equal size with independently drawn prices -- plus, in case set
    2, distributed generation as extra upward resources on buses that do not
    already host one.  The transmission side gets ``tn_per_direction`` offers
    each way.  Draw order is fixed, so one seeded stream reproduces the same
    portfolio.
    """

    if isinstance(network, DistributionNetwork):
        return _attach_dn(network, config, rng)
    return _attach_tn(network, config, rng)


def _pu(mw: float) -> float:
    return mw / S_BASE_MVA


def _attach_dn(
    dn: DistributionNetwork, config: ScenarioConfig, rng: np.random.Generator
) -> list[FlexResource]:
    candidates = [b for b in dn.buses if b != dn.root]
    if not candidates:
        raise ModelError(f"feeder {dn.id!r} has no non-root bus to host resources")
    out: list[FlexResource] = []
    used: set[int] = set()
    for k in range(config.dn_pairs):
        bus = int(rng.choice(candidates))
        used.add(bus)
        qty = _pu(rng.uniform(*config.quantity_range_mw))
        price_up = rng.uniform(*config.price_ranges["dn_up"])
        price_dn = rng.uniform(*config.price_ranges["dn_down"])
        out.append(
            FlexResource(
                id=f"{dn.id}:u{k}",
                network=dn.id,
                bus=bus,
                direction=Direction.UPWARD,
                p_min=0.0,
                p_max=qty,
                price=price_up,
                alpha=config.alpha,
            )
        )
        out.append(
            FlexResource(
                id=f"{dn.id}:d{k}",
                network=dn.id,
                bus=bus,
                direction=Direction.DOWNWARD,
                p_min=-qty,
                p_max=0.0,
                price=price_dn,
                alpha=config.alpha,
            )
        )
    if config.case_set == 2:
        n_extra = round(1.6 * 2 * config.dn_pairs)
        free = [b for b in candidates if b not in used]
        if len(free) < n_extra:
            raise ModelError(
                f"feeder {dn.id!r} has too few free buses for {n_extra} generators"
            )
        buses = rng.choice(free, size=n_extra, replace=False)
        for k, bus in enumerate(buses):
            qty = _pu(
                config.dg_quantity_scale * rng.uniform(*config.quantity_range_mw)
            )
            out.append(
                FlexResource(
                    id=f"{dn.id}:g{k}",
                    network=dn.id,
                    bus=int(bus),
                    direction=Direction.UPWARD,
                    p_min=0.0,
                    p_max=qty,
                    price=rng.uniform(*config.price_ranges["dn_up"]),
                    alpha=config.alpha,
                )
            )
    return out


def _attach_tn(
    tn: TransmissionNetwork, config: ScenarioConfig, rng: np.random.Generator
) -> list[FlexResource]:
    out: list[FlexResource] = []
    for k in range(config.tn_per_direction):
        bus = int(rng.choice(tn.buses))
        qty = _pu(rng.uniform(*config.tn_quantity_range_mw))
        out.append(
            FlexResource(
                id=f"T:u{k}",
                network="T",
                bus=bus,
                direction=Direction.UPWARD,
                p_min=0.0,
                p_max=qty,
                price=rng.uniform(*config.price_ranges["tn_up"]),
                alpha=config.alpha,
            )
        )
    for k in range(config.tn_per_direction):
        bus = int(rng.choice(tn.buses))
        qty = _pu(rng.uniform(*config.tn_quantity_range_mw))
        out.append(
            FlexResource(
                id=f"T:d{k}",
                network="T",
                bus=bus,
                direction=Direction.DOWNWARD,
                p_min=-qty,
                p_max=0.0,
                price=rng.uniform(*config.price_ranges["tn_down"]),
                alpha=config.alpha,
            )
        )
    return out


# ---------------------------------------------------------------------------
# results CSV

RESULTS_COLUMNS = (
    "instance_id",
    "regime",
    "weight_rule",
    "cost",
    "eta_pct",
    "violations_v",
    "violations_flow",
    "delta_u_pct",
    "delta_d_pct",
    "discarded_flag",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.10g}"


def write_results_csv(path: str | Path, rows: Iterable[Mapping]) -> None:
    """Write result rows with the fixed column set, deterministically."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULTS_COLUMNS)
    for row in rows:
        extra = set(row) - set(RESULTS_COLUMNS)
        if extra:
            raise ModelError(f"unexpected result columns: {sorted(extra)}")
        writer.writerow([_fmt(row.get(col)) for col in RESULTS_COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_results_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULTS_COLUMNS:
            raise ModelError(f"{path} does not have the expected result columns")
        out = []
        for raw in reader:
            row: dict = {}
            for key, val in raw.items():
                if val == "":
                    row[key] = None
                elif key in ("instance_id", "violations_v", "violations_flow", "discarded_flag"):
                    row[key] = int(val)
                elif key in ("regime", "weight_rule"):
                    row[key] = val
                else:
                    row[key] = float(val)
            out.append(row)
        return out


ENVELOPE_COLUMNS = (
    "resource_id",
    "network",
    "bus",
    "direction",
    "p_min_mw",
    "p_max_mw",
    "eps_lo_mw",
    "eps_hi_mw",
)


def write_envelopes_csv(path: str | Path, rows: Iterable[Mapping]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ENVELOPE_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(col)) for col in ENVELOPE_COLUMNS])
    Path(path).write_text(buf.getvalue())
