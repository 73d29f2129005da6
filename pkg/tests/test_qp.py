import numpy as np
import pytest
from scipy.optimize import minimize

from bemsim.qp import (INFEASIBLE, MAX_ITER, OPTIMAL, BoxQpSolver,
                       InteriorPointQp, QpProblem, dump_problem, load_problem,
                       solve_qp)


def box_problem(p, q, lo, hi):
    n = len(q)
    return QpProblem(p=np.asarray(p, float), q=np.asarray(q, float), a=np.eye(n),
                     l=np.full(n, lo, dtype=float), u=np.full(n, hi, dtype=float))


def random_problem(rng, n_max=50):
    """Strictly convex QP with equality rows and finite boxes around a
    known feasible point."""
    n = int(rng.integers(5, n_max + 1))
    me = int(rng.integers(1, max(2, n // 4)))
    m0 = rng.standard_normal((n, n))
    p = m0 @ m0.T + (0.5 + rng.uniform()) * n * np.eye(n)
    q = rng.standard_normal(n) * 2.0
    aeq = rng.standard_normal((me, n))
    x_feas = rng.uniform(-1, 1, n)
    beq = aeq @ x_feas
    lb = x_feas - rng.uniform(0.1, 2.0, n)
    ub = x_feas + rng.uniform(0.1, 2.0, n)
    a = np.vstack([aeq, np.eye(n)])
    return (QpProblem(p=p, q=q, a=a, l=np.concatenate([beq, lb]),
                      u=np.concatenate([beq, ub])),
            dict(p=p, q=q, aeq=aeq, beq=beq, lb=lb, ub=ub, x0=x_feas))


def slsqp_oracle(data):
    p, q = data["p"], data["q"]
    res = minimize(lambda x: 0.5 * x @ p @ x + q @ x, data["x0"],
                   jac=lambda x: p @ x + q,
                   constraints=[{"type": "eq",
                                 "fun": lambda x: data["aeq"] @ x - data["beq"],
                                 "jac": lambda x: data["aeq"]}],
                   bounds=list(zip(data["lb"], data["ub"])), method="SLSQP",
                   options={"maxiter": 400, "ftol": 1e-14})
    return res.fun


class TestSolveQp:
    def test_interior_minimum(self):
        s = solve_qp(box_problem([[2.0]], [-2.0], 0.0, 2.0))
        assert s.status == OPTIMAL
        assert s.x[0] == pytest.approx(1.0, abs=1e-8)

    def test_active_bound(self):
        s = solve_qp(box_problem([[2.0]], [-2.0], 0.0, 0.5))
        assert s.x[0] == pytest.approx(0.5, abs=1e-8)
        assert s.objective == pytest.approx(0.25 - 1.0, abs=1e-8)

    def test_infeasible_detected(self):
        prob = QpProblem(p=np.array([[2.0]]), q=np.zeros(1),
                         a=np.array([[1.0], [1.0]]),
                         l=np.array([1.0, 2.0]), u=np.array([1.0, 3.0]))
        assert solve_qp(prob).status == INFEASIBLE

    def test_max_iter_keeps_best_iterate(self):
        rng = np.random.default_rng(0)
        prob, _ = random_problem(rng)
        s = solve_qp(prob, max_iter=3, polish=False)
        assert s.status == MAX_ITER
        assert np.all(np.isfinite(s.x))

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_slsqp_oracle(self, seed):
        rng = np.random.default_rng(seed)
        prob, data = random_problem(rng)
        s = solve_qp(prob)
        assert s.status == OPTIMAL
        assert max(s.kkt.values()) <= 1e-6
        assert abs(s.objective - slsqp_oracle(data)) <= 1e-5

    def test_warm_start_reuse(self):
        rng = np.random.default_rng(5)
        prob, _ = random_problem(rng)
        solver = BoxQpSolver(prob.p, prob.a)
        s1 = solver.solve(prob.q, prob.l, prob.u)
        s2 = solver.solve(prob.q * 1.01, prob.l, prob.u, x0=s1.x, y0=s1.y)
        assert s2.status == OPTIMAL
        assert s2.iterations <= s1.iterations

    def test_no_simultaneous_bound_violation_after_polish(self):
        rng = np.random.default_rng(7)
        prob, _ = random_problem(rng)
        s = solve_qp(prob)
        assert np.all(prob.a @ s.x <= prob.u + 1e-7)
        assert np.all(prob.a @ s.x >= prob.l - 1e-7)


class TestInteriorPoint:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_slsqp_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        prob, data = random_problem(rng, n_max=40)
        ipm = InteriorPointQp(prob.p, data["aeq"], np.zeros((0, len(data["q"]))))
        res = ipm.solve(data["q"], data["beq"], np.zeros(0), data["lb"],
                        data["ub"], tol=1e-9)
        assert res["status"] == OPTIMAL
        obj = 0.5 * res["x"] @ prob.p @ res["x"] + data["q"] @ res["x"]
        assert abs(obj - slsqp_oracle(data)) <= 1e-5

    def test_general_inequalities(self):
        # min (x-2)^2 + (y-2)^2 s.t. x + y <= 2 -> (1, 1)
        ipm = InteriorPointQp(2 * np.eye(2), np.zeros((0, 2)),
                              np.array([[1.0, 1.0]]))
        res = ipm.solve(np.array([-4.0, -4.0]), np.zeros(0), np.array([2.0]),
                        np.full(2, -np.inf), np.full(2, np.inf), tol=1e-10)
        assert res["status"] == OPTIMAL
        assert np.allclose(res["x"], [1.0, 1.0], atol=1e-6)

    @pytest.mark.parametrize("seed", range(4))
    def test_reduced_path_matches_generic(self, seed):
        """The Schur normal-equations path and the full-KKT path agree on
        diagonal-P problems with equalities, inequalities and bounds."""
        rng = np.random.default_rng(300 + seed)
        n = 40
        p = np.diag(rng.uniform(0.05, 3.0, n))
        q = rng.standard_normal(n)
        aeq = rng.standard_normal((6, n))
        x_feas = rng.uniform(-1, 1, n)
        beq = aeq @ x_feas
        a_in = rng.standard_normal((8, n))
        g = a_in @ x_feas + rng.uniform(0.1, 1.0, 8)
        lb = x_feas - rng.uniform(0.5, 2.0, n)
        ub = x_feas + rng.uniform(0.5, 2.0, n)
        out = {}
        for reduce in (False, True):
            ipm = InteriorPointQp(p, aeq, a_in, reduce=reduce)
            out[reduce] = ipm.solve(q, beq, g, lb, ub, tol=1e-7)
            assert out[reduce]["status"] == OPTIMAL
        assert np.max(np.abs(out[True]["x"] - out[False]["x"])) < 1e-5

    def test_reduced_path_rejects_full_p(self):
        with pytest.raises(ValueError):
            InteriorPointQp(np.ones((3, 3)), np.zeros((0, 3)),
                            np.zeros((0, 3)), reduce=True)


class TestDumpLoad:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        prob, _ = random_problem(rng, n_max=12)
        path = tmp_path / "problem.qp"
        dump_problem(prob, path)
        back = load_problem(path)
        assert back.n == prob.n and back.m == prob.m
        assert np.array_equal(back.q, prob.q)
        assert np.array_equal(back.l, prob.l)
        assert np.array_equal(back.u, prob.u)
        assert np.array_equal(np.asarray(back.p.todense()), prob.p)
        assert np.array_equal(np.asarray(back.a.todense()), prob.a)
        s1, s2 = solve_qp(prob), solve_qp(back)
        assert s1.objective == pytest.approx(s2.objective, abs=1e-9)

    def test_rejects_non_dump(self, tmp_path):
        path = tmp_path / "nope.qp"
        path.write_text("hello\n")
        with pytest.raises(ValueError):
            load_problem(path)
