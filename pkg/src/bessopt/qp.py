"""Convex quadratic programming by ADMM operator splitting.

Problems are posed in the two-sided standard form

    minimize   1/2 x' Q x + c' x
    subject to l <= A x <= u

with equalities expressed as l = u.  The solver follows the usual splitting:
a regularized KKT solve for the primal half-step, over-relaxed averaging, a
box projection, and a dual ascent step, with Ruiz equilibration up front and
an active-set polish at the end.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class QuadraticProgram:
    Q: object  # (n, n) symmetric PSD, dense or sparse
    c: np.ndarray
    A: object  # (m, n) dense or sparse
    l: np.ndarray
    u: np.ndarray
    names: list = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.l = np.asarray(self.l, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.Q = sp.csc_matrix(self.Q)
        self.A = sp.csc_matrix(self.A)
        n = self.c.size
        if self.Q.shape != (n, n):
            raise ValueError(f"Q shape {self.Q.shape} inconsistent with n = {n}")
        if self.A.shape[1] != n or self.A.shape[0] != self.l.size or self.l.size != self.u.size:
            raise ValueError("constraint dimensions inconsistent")
        if np.any(self.l > self.u):
            raise ValueError("every lower bound must not exceed its upper bound")

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return self.l.size

    def validate(self, eig_check=False):
        asym = abs(self.Q - self.Q.T).max() if self.Q.nnz else 0.0
        if asym > 1e-10:
            raise ValueError(f"Q asymmetric by {asym}")
        if eig_check and self.n:
            w = np.linalg.eigvalsh(self.Q.toarray())
            if w.min() < -1e-8:
                raise ValueError(f"Q indefinite: min eigenvalue {w.min()}")
        return self

    def objective(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.c @ x)


@dataclass
class Solution:
    x: np.ndarray
    objective: float
    status: str  # optimal | max_iter | infeasible
    iterations: int
    solve_time: float
    y: np.ndarray = None
    node_count: int = None
    gap: float = None


def _ruiz_equilibrate(Q, A, c, iters=10):
    """Symmetric diagonal scaling of the KKT block matrix plus cost scaling.

    Returns scaled (Q, A, c), the variable/constraint scalings (d, e) and the
    cost factor gamma.
    """
    n, m = Q.shape[0], A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    Qs, As, cs = Q.copy(), A.copy(), c.copy()
    for _ in range(iters):
        qcol = np.zeros(n) if Qs.nnz == 0 else np.abs(Qs).max(axis=0).toarray().ravel()
        acol = np.zeros(n) if As.nnz == 0 else np.abs(As).max(axis=0).toarray().ravel()
        arow = np.zeros(m) if As.nnz == 0 else np.abs(As).max(axis=1).toarray().ravel()
        dv = np.sqrt(np.maximum(qcol, acol))
        dr = np.sqrt(arow)
        dv = np.where(dv > 1e-8, 1.0 / dv, 1.0)
        dr = np.where(dr > 1e-8, 1.0 / dr, 1.0)
        Dv = sp.diags(dv)
        Dr = sp.diags(dr)
        Qs = Dv @ Qs @ Dv
        As = Dr @ As @ Dv
        cs = dv * cs
        d *= dv
        e *= dr
    qnorms = np.zeros(0) if Qs.nnz == 0 else np.abs(Qs).max(axis=0).toarray().ravel()
    qmean = qnorms.mean() if qnorms.size else 0.0
    cnorm = np.abs(cs).max() if cs.size else 0.0
    gamma = 1.0 / max(qmean, cnorm, 1e-6)
    return Qs * gamma, As, cs * gamma, d, e, gamma


def _primal_infeasibility_certificate(dy, A, l, u, eps=1e-9):
    """OSQP-style test: a direction of dual divergence certifying l <= Ax <= u empty."""
    norm = np.abs(dy).max() if dy.size else 0.0
    if norm <= eps:
        return False
    v = dy / norm
    pos, neg = np.maximum(v, 0.0), np.minimum(v, 0.0)
    # a certificate cannot lean on an infinite bound
    if np.any(pos[~np.isfinite(u)] > eps) or np.any(neg[~np.isfinite(l)] < -eps):
        return False
    support = float(np.sum(u[np.isfinite(u)] * pos[np.isfinite(u)]) + np.sum(l[np.isfinite(l)] * neg[np.isfinite(l)]))
    if support >= -eps:
        return False
    return bool(np.abs(A.T @ v).max() < eps * max(1.0, norm))


def _polish(qp, x, y, delta=1e-8, refine=3):
    """Solve the KKT system on the detected active set; None if it fails.

    A row counts as active only when its dual sign and its slack agree;
    equality rows are always active.
    """
    r = qp.A @ x
    viol = np.maximum(r - qp.u, 0.0) + np.maximum(qp.l - r, 0.0)
    eps_act = max(1e-7, 10.0 * (viol.max() if viol.size else 0.0))
    eq = np.isfinite(qp.l) & np.isfinite(qp.u) & ((qp.u - qp.l) <= 1e-12)
    low = eq | ((y < 0.0) & np.isfinite(qp.l) & (r - qp.l <= eps_act))
    upp = ~low & (y > 0.0) & np.isfinite(qp.u) & (qp.u - r <= eps_act)
    act = low | upp
    n_act = int(act.sum())
    A_red = qp.A[act]
    b_red = np.where(low[act], qp.l[act], qp.u[act])
    n = qp.n
    K = sp.bmat(
        [
            [qp.Q + delta * sp.eye(n), A_red.T if n_act else None],
            [A_red if n_act else None, -delta * sp.eye(n_act) if n_act else None],
        ],
        format="csc",
    ) if n_act else sp.csc_matrix(qp.Q + delta * sp.eye(n))
    rhs = np.concatenate([-qp.c, b_red]) if n_act else -qp.c
    try:
        lu = spla.splu(K)
    except RuntimeError:
        return None
    sol = lu.solve(rhs)
    # iterative refinement against the unregularized KKT conditions
    for _ in range(refine):
        xs, ys = sol[:n], sol[n:]
        res_top = -qp.c - (qp.Q @ xs) - (A_red.T @ ys if n_act else 0.0)
        res_bot = b_red - (A_red @ xs) if n_act else np.zeros(0)
        sol = sol + lu.solve(np.concatenate([res_top, res_bot]))
    xs, ys = sol[:n], sol[n:]
    y_full = np.zeros(qp.m)
    y_full[act] = ys
    return xs, y_full


def _residuals(qp, x, y):
    r = qp.A @ x
    viol = np.maximum(r - qp.u, 0.0) + np.maximum(qp.l - r, 0.0)
    pri = float(viol.max()) if viol.size else 0.0
    dua = float(np.abs(qp.Q @ x + qp.c + qp.A.T @ y).max())
    return pri, dua


def solve_qp(
    qp: QuadraticProgram,
    tol: float = 1e-6,
    max_iter: int = 50000,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    rho0: float = 0.1,
    adaptive_rho: bool = True,
    polish: bool = True,
    check_every: int = 25,
) -> Solution:
    """ADMM solve to infinity-norm residuals below ``tol``.

    Terminates with status 'optimal' on convergence, 'infeasible' on a primal
    divergence certificate, and 'max_iter' otherwise (best iterate kept).
    """
    t0 = time.perf_counter()
    n, m = qp.n, qp.m
    if m == 0:
        x = spla.spsolve(sp.csc_matrix(qp.Q + sigma * sp.eye(n)), -qp.c)
        return Solution(x, qp.objective(x), "optimal", 0, time.perf_counter() - t0, np.zeros(0))

    Qs, As, cs, d, e, gamma = _ruiz_equilibrate(qp.Q, qp.A, qp.c)
    ls, us = e * qp.l, e * qp.u

    eq = (us - ls) < 1e-12
    rho_scale = 1.0

    def rho_vec():
        base = rho0 * rho_scale
        return np.where(eq, 1e3 * base, base)

    def factor():
        rho = rho_vec()
        K = sp.bmat(
            [[Qs + sigma * sp.eye(n), As.T], [As, -sp.diags(1.0 / rho)]], format="csc"
        )
        return spla.splu(K), rho

    lu, rho = factor()
    x = np.zeros(n)
    z = np.clip(np.zeros(m), ls, us)
    y = np.zeros(m)
    y_at_last_check = y.copy()
    status = "max_iter"
    it = 0
    refactor_budget = 30
    while it < max_iter:
        it += 1
        rhs = np.concatenate([sigma * x - cs, z - y / rho])
        sol = lu.solve(rhs)
        x_t = sol[:n]
        z_t = z + (sol[n:] - y) / rho
        x = alpha * x_t + (1.0 - alpha) * x
        z_relaxed = alpha * z_t + (1.0 - alpha) * z
        z_new = np.clip(z_relaxed + y / rho, ls, us)
        y = y + rho * (z_relaxed - z_new)
        z = z_new
        if it % check_every == 0 or it == max_iter:
            x_true = d * x
            y_true = e * y / gamma
            pri, dua = _residuals(qp, x_true, y_true)
            if pri <= tol and dua <= tol:
                status = "optimal"
                break
            dy_true = e * (y - y_at_last_check) / gamma
            if _primal_infeasibility_certificate(dy_true, qp.A, qp.l, qp.u):
                status = "infeasible"
                break
            y_at_last_check = y.copy()
            if adaptive_rho and refactor_budget > 0 and it % (check_every * 8) == 0:
                if pri > 10.0 * dua and dua < np.inf:
                    rho_scale *= 10.0
                elif dua > 10.0 * pri:
                    rho_scale /= 10.0
                else:
                    continue
                rho_scale = min(max(rho_scale, 1e-6), 1e6)
                lu, rho = factor()
                refactor_budget -= 1

    x_true = d * x
    y_true = e * y / gamma
    if status == "infeasible":
        return Solution(x_true, np.nan, "infeasible", it, time.perf_counter() - t0, y_true)

    if polish and status == "optimal":
        out = _polish(qp, x_true, y_true)
        if out is not None:
            x_p, y_p = out
            pri0, dua0 = _residuals(qp, x_true, y_true)
            pri1, dua1 = _residuals(qp, x_p, y_p)
            if max(pri1, dua1) <= max(pri0, dua0):
                x_true, y_true = x_p, y_p

    return Solution(x_true, qp.objective(x_true), status, it, time.perf_counter() - t0, y_true)


def kkt_residuals(qp: QuadraticProgram, sol: Solution):
    """Infinity norms of (primal violation, stationarity, complementary slackness)."""
    x = sol.x
    y = sol.y if sol.y is not None else np.zeros(qp.m)
    r = qp.A @ x
    viol = np.maximum(r - qp.u, 0.0) + np.maximum(qp.l - r, 0.0)
    primal = float(viol.max()) if viol.size else 0.0
    dual = float(np.abs(qp.Q @ x + qp.c + qp.A.T @ y).max())
    y_pos, y_neg = np.maximum(y, 0.0), np.minimum(y, 0.0)
    slack_u = np.where(np.isfinite(qp.u), qp.u - r, 1.0)
    slack_l = np.where(np.isfinite(qp.l), r - qp.l, 1.0)
    # a multiplier leaning on an infinite bound is itself the violation
    comp_u = np.where(np.isfinite(qp.u), np.abs(y_pos * slack_u), np.abs(y_pos))
    comp_l = np.where(np.isfinite(qp.l), np.abs(y_neg * slack_l), np.abs(y_neg))
    comp = float(np.maximum(comp_u, comp_l).max()) if qp.m else 0.0
    return primal, dual, comp
