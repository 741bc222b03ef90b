import itertools

import numpy as np
import pytest

from bessopt import MixedIntegerProgram, QuadraticProgram, solve_miqp, solve_qp


def enumerate_oracle(mip, qp_tol=1e-8):
    """Exhaustive search over binary assignments, each subproblem via solve_qp."""
    nb = mip.binary_indices.size
    best = None
    base = mip.base
    for bits in itertools.product((0.0, 1.0), repeat=nb):
        rows = np.zeros((nb, base.n))
        rows[np.arange(nb), mip.binary_indices] = 1.0
        qp = QuadraticProgram(
            base.Q,
            base.c,
            np.vstack([base.A.toarray(), rows]),
            np.concatenate([base.l, bits]),
            np.concatenate([base.u, bits]),
        )
        sol = solve_qp(qp, tol=qp_tol)
        if sol.status == "optimal" and (best is None or sol.objective < best):
            best = sol.objective
    return best


def random_instance(rng, n_cont, nb):
    """Binaries couple to the continuous block only through the objective, so
    every assignment is feasible and the optimum varies across assignments."""
    n = n_cont + nb
    G = rng.normal(size=(n, n))
    Q = G.T @ G / n + 0.3 * np.eye(n)
    c = rng.normal(size=n)
    A = np.eye(n)
    l = np.concatenate([np.full(n_cont, -5.0), np.zeros(nb)])
    u = np.concatenate([np.full(n_cont, 5.0), np.ones(nb)])
    base = QuadraticProgram(Q, c, A, l, u)
    return MixedIntegerProgram(base, np.arange(n_cont, n))


class TestAnalytic:
    def test_integral_root_returns_immediately(self):
        # objective already prefers y = 1 exactly
        Q = np.diag([2.0, 2.0])
        c = np.array([-1.2, -2.0])
        base = QuadraticProgram(Q, c, np.eye(2), [0.0, 0.0], [1.0, 1.0])
        mip = MixedIntegerProgram(base, [1])
        sol = solve_miqp(mip)
        assert sol.status == "optimal"
        assert sol.node_count == 1
        assert sol.x[1] == pytest.approx(1.0, abs=1e-6)

    def test_coupled_upper_bound(self):
        # min (x - 0.6)^2 s.t. x <= y, y in {0, 1}: enumeration prefers y = 1
        Q = np.diag([2.0, 0.0])
        c = np.array([-1.2, 0.0])
        A = np.array([[1.0, -1.0], [0.0, 1.0], [1.0, 0.0]])
        l = np.array([-np.inf, 0.0, -5.0])
        u = np.array([0.0, 1.0, 5.0])
        mip = MixedIntegerProgram(QuadraticProgram(Q, c, A, l, u), [1])
        sol = solve_miqp(mip)
        # objective reported excludes the 0.36 constant
        assert sol.x[1] == pytest.approx(1.0, abs=1e-6)
        assert sol.x[0] == pytest.approx(0.6, abs=1e-6)
        assert sol.objective + 0.36 == pytest.approx(0.0, abs=1e-6)

    def test_disjunction_picks_freer_branch(self):
        # min (x-0.6)^2 s.t. x <= 1 - y, x >= 0.8 y, y in {0,1} -> y = 0, x = 0.6
        Q = np.diag([2.0, 0.0])
        c = np.array([-1.2, 0.0])
        A = np.array([[1.0, 1.0], [1.0, -0.8], [0.0, 1.0], [1.0, 0.0]])
        l = np.array([-np.inf, 0.0, 0.0, -5.0])
        u = np.array([1.0, np.inf, 1.0, 5.0])
        mip = MixedIntegerProgram(QuadraticProgram(Q, c, A, l, u), [1])
        sol = solve_miqp(mip)
        assert sol.x[1] == pytest.approx(0.0, abs=1e-6)
        assert sol.x[0] == pytest.approx(0.6, abs=1e-6)

    def test_no_binaries_degenerates_to_qp(self):
        base = QuadraticProgram([[2.0]], [-2.0], [[1.0]], [0.0], [5.0])
        mip = MixedIntegerProgram(base, [])
        sol = solve_miqp(mip)
        assert sol.x[0] == pytest.approx(1.0, abs=1e-7)

    def test_bad_binary_index(self):
        base = QuadraticProgram([[2.0]], [0.0], [[1.0]], [0.0], [1.0])
        with pytest.raises(ValueError):
            MixedIntegerProgram(base, [3])


class TestEnumerationAgreement:
    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(12):
            mip = random_instance(rng, n_cont=int(rng.integers(2, 5)), nb=int(rng.integers(2, 6)))
            sol = solve_miqp(mip, rel_gap=1e-7)
            ref = enumerate_oracle(mip)
            assert sol.status == "optimal"
            assert abs(sol.objective - ref) <= 1e-6

    def test_node_limit_reports_gap(self):
        rng = np.random.default_rng(5)
        mip = random_instance(rng, n_cont=3, nb=6)
        sol = solve_miqp(mip, rel_gap=1e-12, node_limit=4)
        assert sol.status in ("optimal", "max_iter")
        if sol.status == "max_iter":
            assert sol.gap is not None


class TestSearchInvariants:
    def test_incumbent_monotone(self):
        rng = np.random.default_rng(13)
        mip = random_instance(rng, n_cont=3, nb=5)
        seen = []
        sol = solve_miqp(mip, rel_gap=1e-9, on_incumbent=seen.append)
        assert sol.status == "optimal"
        assert len(seen) >= 1
        assert all(b < a for a, b in zip(seen, seen[1:]))
        assert seen[-1] == sol.objective

    def test_hinted_incumbent_never_worsens_result(self):
        rng = np.random.default_rng(14)
        mip = random_instance(rng, n_cont=3, nb=5)
        sol = solve_miqp(mip, rel_gap=1e-9)
        hinted = solve_miqp(mip, rel_gap=1e-9, initial_assignment=np.round(sol.x[mip.binary_indices]))
        assert hinted.objective <= sol.objective + 1e-8

    def test_deterministic(self):
        rng = np.random.default_rng(15)
        mip = random_instance(rng, n_cont=3, nb=4)
        a = solve_miqp(mip)
        b = solve_miqp(mip)
        assert np.array_equal(a.x, b.x)
        assert a.node_count == b.node_count
