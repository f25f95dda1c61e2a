"""Independent brute-force solvers used to cross-check the optimization layer.

These deliberately avoid scipy.optimize and clarabel: LPs are solved by
enumerating basic feasible points of the (compact) polytope, convex QPs by
enumerating active sets and solving the KKT system with plain numpy.  Both
are exponential and only suitable for the small problems used in tests.
"""

import itertools

import numpy as np


def lp_vertex_solve(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None, lb=None, ub=None):
    """Minimize ``c @ x`` over ``a_ub x <= b_ub, a_eq x = b_eq, lb <= x <= ub``.

    All variable bounds must be finite so the feasible set is compact and the
    optimum (if the set is nonempty) is attained at a vertex.  Returns
    ``(status, x, objective)`` with status in {"optimal", "infeasible"}.
    """

    c = np.asarray(c, float)
    n = len(c)
    lb = np.asarray(lb, float)
    ub = np.asarray(ub, float)
    if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
        raise ValueError("lp_vertex_solve needs finite variable bounds")

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    if a_ub is not None:
        for r, b in zip(np.atleast_2d(a_ub), np.atleast_1d(b_ub)):
            rows.append(np.asarray(r, float))
            rhs.append(float(b))
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e.copy())
        rhs.append(float(ub[i]))
        rows.append(-e)
        rhs.append(-float(lb[i]))

    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []
    if a_eq is not None:
        for r, b in zip(np.atleast_2d(a_eq), np.atleast_1d(b_eq)):
            eq_rows.append(np.asarray(r, float))
            eq_rhs.append(float(b))

    def feasible(x, tol=1e-8):
        if any(r @ x > s + tol for r, s in zip(rows, rhs)):
            return False
        return all(abs(r @ x - s) <= tol for r, s in zip(eq_rows, eq_rhs))

    need = n - len(eq_rows)
    best_val, best_x = None, None
    if need <= 0:
        if eq_rows:
            mat = np.array(eq_rows)
            vec = np.array(eq_rhs)
            x, *_ = np.linalg.lstsq(mat, vec, rcond=None)
            if feasible(x) and np.allclose(mat @ x, vec, atol=1e-9):
                best_val, best_x = float(c @ x), x
    else:
        for combo in itertools.combinations(range(len(rows)), need):
            mat = np.array(eq_rows + [rows[i] for i in combo])
            vec = np.array(eq_rhs + [rhs[i] for i in combo])
            try:
                x = np.linalg.solve(mat, vec)
            except np.linalg.LinAlgError:
                continue
            if not feasible(x):
                continue
            val = float(c @ x)
            if best_val is None or val < best_val:
                best_val, best_x = val, x
    if best_x is None:
        return "infeasible", None, None
    return "optimal", best_x, best_val


def qp_active_set_solve(
    p_mat, q, a_ub=None, b_ub=None, a_eq=None, b_eq=None, lb=None, ub=None
):
    """Minimize ``0.5 x P x + q x`` subject to the same constraint kinds.

    ``P`` must be positive semidefinite.  Enumerates every subset of the
    inequality rows (finite bounds included) as a trial active set, solves the
    KKT system, and accepts the first primal-feasible point with non-negative
    inequality multipliers -- for a convex problem this is the global optimum.
    Returns ``(status, x, objective)``.
    """

    p_mat = np.asarray(p_mat, float)
    q = np.asarray(q, float)
    n = len(q)

    ineq_rows: list[np.ndarray] = []
    ineq_rhs: list[float] = []
    if a_ub is not None:
        for r, b in zip(np.atleast_2d(a_ub), np.atleast_1d(b_ub)):
            ineq_rows.append(np.asarray(r, float))
            ineq_rhs.append(float(b))
    if lb is not None:
        for i, v in enumerate(np.asarray(lb, float)):
            if np.isfinite(v):
                e = np.zeros(n)
                e[i] = -1.0
                ineq_rows.append(e)
                ineq_rhs.append(-v)
    if ub is not None:
        for i, v in enumerate(np.asarray(ub, float)):
            if np.isfinite(v):
                e = np.zeros(n)
                e[i] = 1.0
                ineq_rows.append(e)
                ineq_rhs.append(v)

    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []
    if a_eq is not None:
        for r, b in zip(np.atleast_2d(a_eq), np.atleast_1d(b_eq)):
            eq_rows.append(np.asarray(r, float))
            eq_rhs.append(float(b))
    n_eq = len(eq_rows)

    def primal_ok(x, tol=1e-7):
        if any(r @ x > s + tol for r, s in zip(ineq_rows, ineq_rhs)):
            return False
        return all(abs(r @ x - s) <= tol for r, s in zip(eq_rows, eq_rhs))

    best_val, best_x = None, None
    m = len(ineq_rows)
    for k in range(m + 1):
        for combo in itertools.combinations(range(m), k):
            act_rows = eq_rows + [ineq_rows[i] for i in combo]
            act_rhs = eq_rhs + [ineq_rhs[i] for i in combo]
            size = n + len(act_rows)
            kkt = np.zeros((size, size))
            kkt[:n, :n] = p_mat
            if act_rows:
                mat = np.array(act_rows)
                kkt[:n, n:] = mat.T
                kkt[n:, :n] = mat
            rhs_vec = np.concatenate([-q, np.array(act_rhs)])
            try:
                sol = np.linalg.solve(kkt, rhs_vec)
            except np.linalg.LinAlgError:
                continue
            x = sol[:n]
            lam = sol[n + n_eq :]
            if len(lam) and np.min(lam) < -1e-8:
                continue
            if not primal_ok(x):
                continue
            val = float(0.5 * x @ p_mat @ x + q @ x)
            if best_val is None or val < best_val - 1e-12:
                best_val, best_x = val, x
    if best_x is None:
        return "no_kkt_point", None, None
    return "optimal", best_x, best_val


def feeder_point_safe(dn, resources, activations, tol=1e-9):
    """Simulation-based safety check: linear power flow + every feeder limit.

    Unlike the package's violation counter this also enforces the interface
    bounds, because envelope problems include them.  Apparent flows are
    checked against the true quadratic limit, which matches the polygonal
    market model exactly for pure-active flows on even-sided polygons (the
    regime used wherever this oracle cross-checks an optimizer).
    """
    from flexoe.powerflow import run_linear_pf

    state = run_linear_pf(dn, resources, activations)
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


def envelope_bisect(dn, resource, polygon_unused=None, n_iter=80):
    """Largest safe single-resource activation magnitude, by bisection.

    Safety along the activation axis is monotone for one resource on a
    radial feeder (every constraint is linear in the activation), so
    bisection between zero and the technical limit finds the exact envelope
    bound the optimizer should report.  Returns the signed activation.
    """
    sign = 1.0 if resource.p_max > 0 else -1.0
    hi_mag = resource.p_max if sign > 0 else -resource.p_min
    if feeder_point_safe(dn, [resource], {resource.id: sign * hi_mag}):
        return sign * hi_mag
    lo, hi = 0.0, hi_mag  # safe, unsafe
    if not feeder_point_safe(dn, [resource], {resource.id: 0.0}):
        raise AssertionError("base case itself is unsafe; bisection undefined")
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        if feeder_point_safe(dn, [resource], {resource.id: sign * mid}):
            lo = mid
        else:
            hi = mid
    return sign * lo
