import numpy as np
import pytest

from bessopt import QuadraticProgram, kkt_residuals, solve_qp


def make_feasible_qp(rng, n=None, m=None):
    """Random PSD objective with constraints guaranteed feasible at a witness."""
    n = n or int(rng.integers(2, 21))
    m = m or int(rng.integers(1, 31))
    G = rng.normal(size=(n, n))
    Q = G.T @ G / n + float(rng.uniform(0.0, 1.0)) * np.eye(n)
    c = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    r0 = A @ x0
    slack_lo = rng.uniform(0.1, 2.0, size=m)
    slack_hi = rng.uniform(0.1, 2.0, size=m)
    l = r0 - slack_lo
    u = r0 + slack_hi
    # mix in equalities and one-sided rows
    kind = rng.integers(0, 4, size=m)
    l = np.where(kind == 1, u, l)
    l = np.where(kind == 2, -np.inf, l)
    u = np.where(kind == 3, np.inf, u)
    # box the variables so the oracle and the solver agree on boundedness
    A_full = np.vstack([A, np.eye(n)])
    l_full = np.concatenate([l, np.full(n, -10.0) + x0])
    u_full = np.concatenate([u, np.full(n, 10.0) + x0])
    return QuadraticProgram(Q, c, A_full, l_full, u_full)


def cvxpy_reference(qp):
    import cvxpy as cp

    x = cp.Variable(qp.n)
    r = qp.A @ x
    cons = []
    fin_l = np.isfinite(qp.l)
    fin_u = np.isfinite(qp.u)
    if fin_l.any():
        cons.append(r[fin_l] >= qp.l[fin_l])
    if fin_u.any():
        cons.append(r[fin_u] <= qp.u[fin_u])
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(qp.Q.toarray())) + qp.c @ x), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.value


class TestAnalyticCases:
    def test_scalar_lower_bound(self):
        # min x^2 s.t. x >= 1
        qp = QuadraticProgram([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
        sol = solve_qp(qp)
        assert sol.status == "optimal"
        assert sol.x[0] == pytest.approx(1.0, abs=1e-8)
        assert sol.objective == pytest.approx(1.0, abs=1e-8)

    def test_equality_symmetry(self):
        # min (x^2 + y^2)/2 s.t. x + y = 2
        qp = QuadraticProgram(np.eye(2), np.zeros(2), [[1.0, 1.0]], [2.0], [2.0])
        sol = solve_qp(qp)
        assert sol.x == pytest.approx([1.0, 1.0], abs=1e-8)

    def test_box_projection_case(self):
        # min x'x/2 - [1,2]'x on [0,1]^2; grid oracle confirms the corner
        qp = QuadraticProgram(np.eye(2), [-1.0, -2.0], np.eye(2), [0.0, 0.0], [1.0, 1.0])
        sol = solve_qp(qp)
        grid = np.linspace(0.0, 1.0, 41)
        xs, ys = np.meshgrid(grid, grid)
        vals = 0.5 * (xs**2 + ys**2) - xs - 2.0 * ys
        best = np.unravel_index(np.argmin(vals), vals.shape)
        assert (xs[best], ys[best]) == (1.0, 1.0)
        assert sol.x == pytest.approx([1.0, 1.0], abs=1e-8)

    def test_infeasible_detected(self):
        qp = QuadraticProgram([[2.0]], [0.0], [[1.0], [1.0]], [1.0, -np.inf], [np.inf, 0.0])
        sol = solve_qp(qp)
        assert sol.status == "infeasible"

    def test_max_iter_status(self):
        rng = np.random.default_rng(0)
        qp = make_feasible_qp(rng, n=8, m=10)
        sol = solve_qp(qp, tol=1e-12, max_iter=3)
        assert sol.status == "max_iter"
        assert sol.x.shape == (8,)

    def test_unconstrained(self):
        qp = QuadraticProgram(np.eye(2), [-1.0, 1.0], np.zeros((0, 2)), np.zeros(0), np.zeros(0))
        sol = solve_qp(qp)
        assert sol.x == pytest.approx([1.0, -1.0], abs=1e-5)


class TestValidation:
    def test_bound_order(self):
        with pytest.raises(ValueError):
            QuadraticProgram([[1.0]], [0.0], [[1.0]], [2.0], [1.0])

    def test_asymmetric_q(self):
        qp = QuadraticProgram([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0], np.eye(2), [-1, -1], [1, 1])
        with pytest.raises(ValueError):
            qp.validate()

    def test_indefinite_q_caught_by_eig_check(self):
        qp = QuadraticProgram([[-1.0]], [0.0], [[1.0]], [-1.0], [1.0])
        with pytest.raises(ValueError):
            qp.validate(eig_check=True)


class TestKktResiduals:
    def test_exact_optimum_clean(self):
        qp = QuadraticProgram([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
        sol = solve_qp(qp)
        pri, dua, comp = kkt_residuals(qp, sol)
        assert max(pri, dua, comp) <= 1e-8

    def test_perturbed_solution_flagged(self):
        qp = QuadraticProgram([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
        sol = solve_qp(qp)
        sol.x = sol.x + 0.1
        pri, dua, comp = kkt_residuals(qp, sol)
        assert max(pri, dua) >= 0.05

    def test_primal_residual_at_infeasible_point(self):
        qp = QuadraticProgram([[2.0]], [0.0], [[1.0]], [1.0], [np.inf])
        sol = solve_qp(qp)
        sol.x = np.array([0.0])
        sol.y = np.zeros(1)
        pri, _, _ = kkt_residuals(qp, sol)
        assert pri == pytest.approx(1.0, abs=1e-12)


class TestRandomSuite:
    def test_against_reference_solver(self):
        rng = np.random.default_rng(2024)
        for _ in range(30):
            qp = make_feasible_qp(rng)
            sol = solve_qp(qp)
            assert sol.status == "optimal"
            pri, dua, comp = kkt_residuals(qp, sol)
            assert max(pri, dua) <= 1e-5
            ref = cvxpy_reference(qp)
            scale = max(1.0, abs(ref))
            assert abs(sol.objective - ref) / scale <= 1e-4
