"""Convex problem container and the constraint builders shared by markets
and envelope calculations.

:class:`ConvexProblem` is a thin named-variable layer over two solvers: pure
LPs go to HiGHS (``scipy.optimize.linprog``), problems with quadratic cost
terms go to the Clarabel interior-point solver.  Both are deterministic, so a
given problem always solves to the same point.

The two builders encode the physics once so every consumer shares it:

* :func:`add_dn_constraint_set` -- linearized branch-flow feeder model:
  nodal balances with the reactive ratio ``alpha``, tree flow balances with
  the interface entering at the root, the voltage recursion in pu^2, a
  polygonal inner approximation of each branch's apparent-flow disk, voltage
  bands, and reactive interface bounds.
* :func:`add_tn_constraints` -- DC transmission model: nodal injection
  definitions, PTDF flow limits with feeder interchange netted at the
  attachment buses, the interface-consistency rows tying each feeder's
  import to its resource activations, interface bounds, and the system-wide
  balance row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import ModelError
from .network import (
    DistributionNetwork,
    FlexResource,
    PolygonApprox,
    TransmissionNetwork,
)

FEASIBILITY_TOL = 1e-7


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one solve.

    ``values`` and ``objective`` are populated only when ``status`` is
    optimal; the objective is re-evaluated from the returned point so it is
    always consistent with ``values``.
    """

    status: SolveStatus
    values: Mapping[str, float]
    objective: float | None

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


class ConvexProblem:
    """A linear or convex-quadratic program over named variables.

    Costs accumulate: repeated ``add_linear_cost`` calls on one variable sum
    their coefficients.  Quadratic terms have the form ``c * (x - offset)**2``
    with ``c >= 0``; at most one per variable.  Constraints reference
    variables by name and must only use declared names.
    """

    def __init__(self) -> None:
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._linear: dict[str, float] = {}
        self._quadratic: dict[str, tuple[float, float]] = {}
        self._eq: list[tuple[dict[str, float], float]] = []
        self._ineq: list[tuple[dict[str, float], float]] = []

    # -- variables ---------------------------------------------------------

    def add_variable(
        self, name: str, lb: float = -np.inf, ub: float = np.inf
    ) -> str:
        if name in self._index:
            raise ModelError(f"variable {name!r} already declared")
        if not lb <= ub:
            raise ModelError(f"variable {name!r}: empty bound interval [{lb}, {ub}]")
        self._index[name] = len(self._names)
        self._names.append(name)
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        return name

    def has_variable(self, name: str) -> bool:
        return name in self._index

    def set_bounds(self, name: str, lb: float, ub: float) -> None:
        i = self._require(name)
        if not lb <= ub:
            raise ModelError(f"variable {name!r}: empty bound interval [{lb}, {ub}]")
        self._lb[i] = float(lb)
        self._ub[i] = float(ub)

    def bounds(self, name: str) -> tuple[float, float]:
        i = self._require(name)
        return self._lb[i], self._ub[i]

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(self._names)

    @property
    def n_variables(self) -> int:
        return len(self._names)

    @property
    def n_constraints(self) -> int:
        return len(self._eq) + len(self._ineq)

    def _require(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    # -- objective ---------------------------------------------------------

    def add_linear_cost(self, name: str, coeff: float) -> None:
        self._require(name)
        self._linear[name] = self._linear.get(name, 0.0) + float(coeff)

    def add_quadratic_cost(self, name: str, coeff: float, offset: float = 0.0) -> None:
        self._require(name)
        if coeff < 0.0:
            raise ModelError(
                f"quadratic coefficient for {name!r} must be non-negative"
            )
        if name in self._quadratic:
            raise ModelError(f"variable {name!r} already has a quadratic term")
        self._quadratic[name] = (float(coeff), float(offset))

    @property
    def is_quadratic(self) -> bool:
        return any(c > 0.0 for c, _ in self._quadratic.values())

    def objective_value(self, values: Mapping[str, float]) -> float:
        total = sum(c * values[n] for n, c in self._linear.items())
        total += sum(
            c * (values[n] - o) ** 2 for n, (c, o) in self._quadratic.items()
        )
        return float(total)

    # -- constraints ---------------------------------------------------------

    def add_equality(self, coeffs: Mapping[str, float], rhs: float) -> None:
        self._eq.append((self._check_row(coeffs), float(rhs)))

    def add_inequality(self, coeffs: Mapping[str, float], rhs: float) -> None:
        """Add ``sum(coeffs[n] * x[n]) <= rhs``."""
        self._ineq.append((self._check_row(coeffs), float(rhs)))

    def _check_row(self, coeffs: Mapping[str, float]) -> dict[str, float]:
        if not coeffs:
            raise ModelError("constraint with no variables")
        for name in coeffs:
            self._require(name)
        return {n: float(c) for n, c in coeffs.items()}

    def _rows_matrix(
        self, rows: Sequence[tuple[dict[str, float], float]]
    ) -> tuple[sp.csr_matrix, np.ndarray]:
        data, indices, indptr = [], [], [0]
        rhs = np.empty(len(rows))
        for k, (coeffs, b) in enumerate(rows):
            for name, c in coeffs.items():
                indices.append(self._index[name])
                data.append(c)
            indptr.append(len(data))
            rhs[k] = b
        mat = sp.csr_matrix(
            (data, indices, indptr), shape=(len(rows), self.n_variables)
        )
        return mat, rhs

    def max_violation(self, values: Mapping[str, float]) -> float:
        """Largest constraint/bound violation of a candidate point."""
        x = np.array([values[n] for n in self._names])
        worst = 0.0
        if self._eq:
            a, b = self._rows_matrix(self._eq)
            worst = max(worst, float(np.max(np.abs(a @ x - b))))
        if self._ineq:
            a, b = self._rows_matrix(self._ineq)
            worst = max(worst, float(np.max(np.maximum(a @ x - b, 0.0))))
        lb = np.array(self._lb)
        ub = np.array(self._ub)
        worst = max(worst, float(np.max(np.maximum(lb - x, 0.0), initial=0.0)))
        worst = max(worst, float(np.max(np.maximum(x - ub, 0.0), initial=0.0)))
        return worst


def solve(problem: ConvexProblem) -> SolveResult:
    """Solve the problem, dispatching on whether a quadratic term exists.

    An ``optimal`` result is additionally audited against the problem's own
    constraints; a point that fails the feasibility tolerance is downgraded
    to ``numerical_failure`` rather than passed along.
    """

    if problem.n_variables == 0:
        raise ModelError("cannot solve a problem with no variables")
    if problem.is_quadratic:
        status, x = _solve_qp(problem)
    else:
        status, x = _solve_lp(problem)
    if status is not SolveStatus.OPTIMAL:
        return SolveResult(status=status, values={}, objective=None)
    values = dict(zip(problem.variable_names, (float(v) for v in x)))
    if problem.max_violation(values) > FEASIBILITY_TOL:
        return SolveResult(
            status=SolveStatus.NUMERICAL_FAILURE, values={}, objective=None
        )
    return SolveResult(
        status=SolveStatus.OPTIMAL,
        values=values,
        objective=problem.objective_value(values),
    )


def _solve_lp(problem: ConvexProblem) -> tuple[SolveStatus, np.ndarray | None]:
    c = np.zeros(problem.n_variables)
    for name, coeff in problem._linear.items():
        c[problem._index[name]] = coeff
    a_eq = b_eq = a_ub = b_ub = None
    if problem._eq:
        a_eq, b_eq = problem._rows_matrix(problem._eq)
    if problem._ineq:
        a_ub, b_ub = problem._rows_matrix(problem._ineq)
    bounds = [
        (lb if np.isfinite(lb) else None, ub if np.isfinite(ub) else None)
        for lb, ub in zip(problem._lb, problem._ub)
    ]
    res = linprog(
        c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    status = {
        0: SolveStatus.OPTIMAL,
        2: SolveStatus.INFEASIBLE,
        3: SolveStatus.UNBOUNDED,
    }.get(res.status, SolveStatus.NUMERICAL_FAILURE)
    return status, (res.x if status is SolveStatus.OPTIMAL else None)


def _solve_qp(problem: ConvexProblem) -> tuple[SolveStatus, np.ndarray | None]:
    import clarabel

    n = problem.n_variables
    p_diag = np.zeros(n)
    q = np.zeros(n)
    for name, coeff in problem._linear.items():
        q[problem._index[name]] += coeff
    for name, (coeff, offset) in problem._quadratic.items():
        i = problem._index[name]
        p_diag[i] += 2.0 * coeff
        q[i] += -2.0 * coeff * offset

    blocks: list[sp.csr_matrix] = []
    rhs_parts: list[np.ndarray] = []
    cones = []
    if problem._eq:
        a_eq, b_eq = problem._rows_matrix(problem._eq)
        blocks.append(a_eq)
        rhs_parts.append(b_eq)
        cones.append(clarabel.ZeroConeT(a_eq.shape[0]))
    ineq_rows: list[sp.csr_matrix] = []
    ineq_rhs: list[float] = []
    if problem._ineq:
        a_ub, b_ub = problem._rows_matrix(problem._ineq)
        ineq_rows.append(a_ub)
        ineq_rhs.extend(b_ub)
    eye = sp.identity(n, format="csr")
    for i, (lb, ub) in enumerate(zip(problem._lb, problem._ub)):
        if np.isfinite(ub):
            ineq_rows.append(eye[i])
            ineq_rhs.append(ub)
        if np.isfinite(lb):
            ineq_rows.append(-eye[i])
            ineq_rhs.append(-lb)
    if ineq_rows:
        stacked = sp.vstack(ineq_rows, format="csr")
        blocks.append(stacked)
        rhs_parts.append(np.array(ineq_rhs))
        cones.append(clarabel.NonnegativeConeT(stacked.shape[0]))

    if blocks:
        a = sp.vstack(blocks, format="csc")
        b = np.concatenate(rhs_parts)
    else:
        a = sp.csc_matrix((0, n))
        b = np.zeros(0)
    p_mat = sp.diags(p_diag, format="csc")

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    # tight tolerances: envelope bounds sit on (often degenerate) constraint
    # boundaries and downstream checks audit them at 1e-6
    settings.tol_gap_abs = 1e-12
    settings.tol_gap_rel = 1e-12
    settings.tol_feas = 1e-12
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(p_mat, q, a, b, cones, settings)
    sol = solver.solve()
    name = str(sol.status)
    if name in ("Solved", "AlmostSolved"):
        return SolveStatus.OPTIMAL, np.asarray(sol.x)
    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return SolveStatus.INFEASIBLE, None
    if name in ("DualInfeasible", "AlmostDualInfeasible"):
        return SolveStatus.UNBOUNDED, None
    return SolveStatus.NUMERICAL_FAILURE, None


# ---------------------------------------------------------------------------
# constraint builders


def p_var(resource_id: str) -> str:
    """Name of a resource's activation variable."""
    return f"p:{resource_id}"


def z_var(dn_id: str) -> str:
    """Name of a feeder's active interface-import variable."""
    return f"z:{dn_id}"


def phi_var(bus: int) -> str:
    """Name of a transmission bus's net-injection variable."""
    return f"phi:{bus}"


@dataclass(frozen=True)
class DnHandles:
    """Variable names created by :func:`add_dn_constraint_set`."""

    dn_id: str
    p: Mapping[str, str]  # resource id -> activation variable
    z: str
    z_re: str
    v: Mapping[int, str]
    p_flow: Mapping[int, str]  # keyed by child bus
    q_flow: Mapping[int, str]


def ensure_resource_variables(
    problem: ConvexProblem, resources: Sequence[FlexResource]
) -> dict[str, str]:
    """Declare each resource's activation variable at its technical limits.

    Existing variables are left untouched, so a caller may pre-declare some
    with tighter bounds (envelope steps do this) before invoking a builder.
    """

    out = {}
    for res in resources:
        name = p_var(res.id)
        if not problem.has_variable(name):
            problem.add_variable(name, lb=res.p_min, ub=res.p_max)
        out[res.id] = name
    return out


def add_dn_constraint_set(
    problem: ConvexProblem,
    dn: DistributionNetwork,
    resources: Sequence[FlexResource],
    polygon: PolygonApprox,
) -> DnHandles:
    """Append one feeder's full operating constraints to ``problem``.

    ``resources`` may span several networks; only those with
    ``network == dn.id`` participate here.  The interface import variable
    ``z:<dn>`` is created unbounded -- interface limits are the caller's
    choice (markets add them from the transmission side, envelope problems
    directly).
    """

    local = [r for r in resources if r.network == dn.id]
    for res in local:
        if res.bus not in dn.e:
            raise ModelError(
                f"resource {res.id!r} sits at bus {res.bus}, "
                f"not part of feeder {dn.id!r}"
            )
    p_names = ensure_resource_variables(problem, local)

    z = z_var(dn.id)
    if not problem.has_variable(z):
        problem.add_variable(z)
    z_re = problem.add_variable(f"zre:{dn.id}", lb=dn.z_re_min, ub=dn.z_re_max)
    v_names = {
        b: problem.add_variable(
            f"v:{dn.id}:{b}", lb=dn.v_min[b], ub=dn.v_max[b]
        )
        for b in dn.buses
    }
    pin = {b: problem.add_variable(f"pin:{dn.id}:{b}") for b in dn.buses}
    qin = {b: problem.add_variable(f"qin:{dn.id}:{b}") for b in dn.buses}
    pf = {
        ln.child: problem.add_variable(f"pf:{dn.id}:{ln.child}") for ln in dn.lines
    }
    qf = {
        ln.child: problem.add_variable(f"qf:{dn.id}:{ln.child}") for ln in dn.lines
    }

    by_bus: dict[int, list[FlexResource]] = {}
    for res in local:
        by_bus.setdefault(res.bus, []).append(res)

    for b in dn.buses:
        row_p: dict[str, float] = {pin[b]: 1.0}
        row_q: dict[str, float] = {qin[b]: 1.0}
        for res in by_bus.get(b, ()):
            row_p[p_names[res.id]] = -1.0
            row_q[p_names[res.id]] = -res.alpha
        problem.add_equality(row_p, dn.e[b])
        problem.add_equality(row_q, dn.e_re[b])

    for b in dn.buses:
        down_p = {pf[c]: -1.0 for c in dn.children[b]}
        down_q = {qf[c]: -1.0 for c in dn.children[b]}
        if b == dn.root:
            problem.add_equality({pin[b]: 1.0, z: 1.0, **down_p}, 0.0)
            problem.add_equality({qin[b]: 1.0, z_re: 1.0, **down_q}, 0.0)
        else:
            problem.add_equality({pin[b]: 1.0, pf[b]: 1.0, **down_p}, 0.0)
            problem.add_equality({qin[b]: 1.0, qf[b]: 1.0, **down_q}, 0.0)

    problem.add_equality({v_names[dn.root]: 1.0}, dn.v0)
    for ln in dn.lines:
        problem.add_equality(
            {
                v_names[ln.child]: 1.0,
                v_names[ln.parent]: -1.0,
                pf[ln.child]: 2.0 * ln.r,
                qf[ln.child]: 2.0 * ln.x,
            },
            0.0,
        )

    for ln in dn.lines:
        if not np.isfinite(ln.s_limit):
            continue
        for ep, eq, es in polygon.rows:
            problem.add_inequality(
                {pf[ln.child]: ep, qf[ln.child]: eq}, es * ln.s_limit
            )

    return DnHandles(
        dn_id=dn.id,
        p={r.id: p_names[r.id] for r in local},
        z=z,
        z_re=z_re,
        v=v_names,
        p_flow=pf,
        q_flow=qf,
    )


@dataclass(frozen=True)
class TnHandles:
    """Variable names created by :func:`add_tn_constraints`."""

    phi: Mapping[int, str]
    p: Mapping[str, str]
    z: Mapping[str, str]


def add_tn_constraints(
    problem: ConvexProblem,
    tn: TransmissionNetwork,
    resources: Sequence[FlexResource],
    dns: Sequence[DistributionNetwork],
) -> TnHandles:
    """Append the transmission-market constraints to ``problem``.

    Creates (or reuses) activation variables for *all* resources, one
    injection variable per transmission bus, and one interface variable per
    attached feeder, then adds: nodal injection definitions, PTDF flow
    limits, the interface-consistency row per feeder (its import falls by
    exactly the feeder's activated flexibility), interface bounds, and the
    system balance row.
    """

    attached = set(tn.dn_attach)
    given = {dn.id for dn in dns}
    if attached != given:
        raise ModelError(
            f"attachment map names feeders {sorted(attached)} but models were "
            f"given for {sorted(given)}"
        )
    known_networks = given | {"T"}
    for res in resources:
        if res.network not in known_networks:
            raise ModelError(
                f"resource {res.id!r} belongs to unknown network {res.network!r}"
            )
        if res.network == "T" and res.bus not in tn.e:
            raise ModelError(
                f"resource {res.id!r} sits at unknown transmission bus {res.bus}"
            )

    p_names = ensure_resource_variables(problem, resources)
    phi = {b: problem.add_variable(phi_var(b)) for b in tn.buses}
    z_names = {}
    for dn in dns:
        name = z_var(dn.id)
        if not problem.has_variable(name):
            problem.add_variable(name)
        z_names[dn.id] = name

    tn_by_bus: dict[int, list[FlexResource]] = {}
    for res in resources:
        if res.network == "T":
            tn_by_bus.setdefault(res.bus, []).append(res)

    for b in tn.buses:
        row = {phi[b]: 1.0}
        for res in tn_by_bus.get(b, ()):
            row[p_names[res.id]] = -1.0
        problem.add_equality(row, tn.e[b])

    # PTDF flow limits; feeder imports are withdrawals at their attach buses
    attach_index = {dn_id: tn.bus_index[bus] for dn_id, bus in tn.dn_attach.items()}
    for k, ln in enumerate(tn.lines):
        if not np.isfinite(ln.limit):
            continue
        row: dict[str, float] = {}
        for b in tn.buses:
            c = float(tn.ptdf[k, tn.bus_index[b]])
            if c != 0.0:
                row[phi[b]] = c
        for dn_id, idx in attach_index.items():
            c = float(tn.ptdf[k, idx])
            if c != 0.0:
                row[z_names[dn_id]] = row.get(z_names[dn_id], 0.0) - c
        if not row:
            continue
        problem.add_inequality(row, ln.limit)
        problem.add_inequality({n: -c for n, c in row.items()}, ln.limit)

    for dn in dns:
        row = {z_names[dn.id]: 1.0}
        for res in resources:
            if res.network == dn.id:
                row[p_names[res.id]] = 1.0
        problem.add_equality(row, dn.base_import)
        problem.set_bounds(z_names[dn.id], -dn.z_limit, dn.z_limit)

    balance = {phi[b]: 1.0 for b in tn.buses}
    for dn in dns:
        balance[z_names[dn.id]] = -1.0
    problem.add_equality(balance, 0.0)

    return TnHandles(phi=phi, p=p_names, z=z_names)
