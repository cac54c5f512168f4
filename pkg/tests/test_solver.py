"""Simplex against an exact Fourier-Motzkin oracle; branch-and-bound
against enumeration and against the encoder's gadget semantics."""

import numpy as np
import pytest

from helpers import (
    ball_points,
    fm_feasible,
    random_query,
    random_toy_model,
)

from qnnverify.encode import (
    GE,
    INT,
    LE,
    ILPModel,
    encode_max,
    encode_query,
)
from qnnverify.inference import validate_counterexample
from qnnverify.solver import (
    FEASIBLE,
    INFEASIBLE,
    LP_INFEASIBLE,
    LP_OPTIMAL,
    TIMEOUT,
    build_relaxation,
    check_exact,
    solve_ilp,
    solve_lp,
)


def make_lp(bounds, rows):
    """rows: (coeff list, sense, rhs)."""
    ilp = ILPModel()
    vs = [ilp.new_var(f"v{i}", INT, lo, hi) for i, (lo, hi) in enumerate(bounds)]
    for cs, sense, rhs in rows:
        ilp.add([(c, vs[i]) for i, c in enumerate(cs) if c != 0], sense, rhs)
    return ilp, vs


class TestSolveLP:
    def test_two_lower_bounds(self):
        ilp, _ = make_lp([(0, 10)], [([1], GE, 2), ([1], GE, 3)])
        res = solve_lp(build_relaxation(ilp))
        assert res.status == LP_OPTIMAL
        assert res.x[0] >= 3 - 1e-7

    def test_contradiction(self):
        ilp, _ = make_lp([(0, 10)], [([1], GE, 2), ([1], LE, 1)])
        assert solve_lp(build_relaxation(ilp)).status == LP_INFEASIBLE

    def test_solution_satisfies_all_rows(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 7))
            bounds = [(float(rng.integers(-5, 1)), float(rng.integers(1, 8))) for _ in range(n)]
            rows = []
            for _ in range(m):
                cs = rng.integers(-4, 5, size=n).astype(float)
                rows.append((list(cs), LE if rng.random() < 0.8 else GE,
                             float(rng.integers(-10, 11))))
            ilp, _ = make_lp(bounds, rows)
            res = solve_lp(build_relaxation(ilp))
            if res.status == LP_OPTIMAL:
                x = res.x
                for cs, sense, rhs in rows:
                    s = float(np.dot(cs, x))
                    if sense == LE:
                        assert s <= rhs + 1e-6
                    else:
                        assert s >= rhs - 1e-6
                for i, (lo, hi) in enumerate(bounds):
                    assert lo - 1e-7 <= x[i] <= hi + 1e-7

    def test_status_agrees_with_exact_rational_oracle(self, rng):
        """50 random small LPs, status checked by Fourier-Motzkin over
        exact rationals."""
        agree = 0
        for _ in range(50):
            n = int(rng.integers(1, 4))
            m = int(rng.integers(1, 6))
            bounds = [(int(rng.integers(-4, 1)), int(rng.integers(0, 6))) for _ in range(n)]
            fm_rows = []
            lp_rows = []
            for _ in range(m):
                cs = [int(c) for c in rng.integers(-3, 4, size=n)]
                rhs = int(rng.integers(-8, 9))
                lp_rows.append((cs, LE, rhs))
                fm_rows.append((cs, rhs))
            ilp, _ = make_lp(bounds, lp_rows)
            got = solve_lp(build_relaxation(ilp)).status
            want = fm_feasible(fm_rows, bounds)
            assert (got == LP_OPTIMAL) == want
            agree += 1
        assert agree == 50


class TestSolveILP:
    def test_simple_infeasible(self):
        ilp, _ = make_lp([(0, 5), (0, 5)],
                         [([1, 1], LE, 3), ([1, 0], GE, 2), ([0, 1], GE, 2)])
        assert solve_ilp(ilp).status == INFEASIBLE

    def test_max_gadget_feasible_with_unique_value(self):
        ilp = ILPModel()
        z = ilp.new_var("z", INT, -100, 100)
        encode_max(ilp, z, 5, 3, 100.0)
        res = solve_ilp(ilp)
        assert res.status == FEASIBLE
        assert res.witness["z"] == 5

    def test_witnesses_pass_exact_recheck(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 5))
            bounds = [(0, int(rng.integers(2, 6))) for _ in range(n)]
            rows = []
            for _ in range(int(rng.integers(1, 5))):
                cs = [int(c) for c in rng.integers(-3, 4, size=n)]
                rows.append((cs, LE, int(rng.integers(0, 12))))
            ilp, vs = make_lp(bounds, rows)
            res = solve_ilp(ilp)
            if res.status == FEASIBLE:
                assert check_exact(ilp, res.witness)

    def test_status_matches_enumeration_on_random_ilps(self, rng):
        """Small random pure-integer systems, enumerated exhaustively."""
        import itertools

        for _ in range(60):
            n = int(rng.integers(1, 4))
            bounds = [(0, int(rng.integers(1, 5))) for _ in range(n)]
            rows = []
            for _ in range(int(rng.integers(1, 6))):
                cs = [int(c) for c in rng.integers(-3, 4, size=n)]
                sense = LE if rng.random() < 0.7 else GE
                rows.append((cs, sense, int(rng.integers(-6, 10))))
            ilp, _ = make_lp(bounds, rows)
            want = False
            for combo in itertools.product(*[range(lo, hi + 1) for lo, hi in bounds]):
                ok = True
                for cs, sense, rhs in rows:
                    s = sum(c * v for c, v in zip(cs, combo))
                    if sense == LE and s > rhs:
                        ok = False
                        break
                    if sense == GE and s < rhs:
                        ok = False
                        break
                if ok:
                    want = True
                    break
            got = solve_ilp(ilp)
            assert (got.status == FEASIBLE) == want

    def test_query_ilps_match_exhaustive_search(self, rng):
        """Per-target feasibility agrees with enumeration restricted to
        that target."""
        from qnnverify.inference import predict

        for _ in range(25):
            model = random_toy_model(rng, n_in=2)
            q = random_query(rng, model, radius=1)
            per_target = {}
            for x in ball_points(model, q):
                p = predict(model, x)
                if p != q.label:
                    per_target.setdefault(p, x)
            for t, ilp in encode_query(model, q):
                res = solve_ilp(ilp)
                assert res.status in (FEASIBLE, INFEASIBLE)
                assert (res.status == FEASIBLE) == (t in per_target), t
                if res.status == FEASIBLE:
                    x = np.array([res.witness[f"x{i}"] for i in range(model.input_size)])
                    assert validate_counterexample(model, q, x)

    def test_deadline_produces_timeout(self, rng):
        import time

        model = random_toy_model(rng, n_in=3, hidden_layers=2)
        q = random_query(rng, model, radius=2)
        targets = encode_query(model, q)
        if not targets:
            pytest.skip("all targets pruned")
        res = solve_ilp(targets[0][1], deadline=time.monotonic() - 1.0)
        assert res.status == TIMEOUT

    def test_bound_tightening_never_changes_status(self, rng):
        """Supplying interval bounds must leave feasibility unchanged."""
        from qnnverify.intervals import analyze

        for _ in range(15):
            model = random_toy_model(rng, n_in=2)
            q = random_query(rng, model, radius=1)
            res = analyze(model, q)
            loose = dict(encode_query(model, q))
            tight = dict(encode_query(model, q, bounds=res.bounds, phases=res.phases))
            for t, ilp in tight.items():
                a = solve_ilp(loose[t]).status
                b = solve_ilp(ilp).status
                assert a == b, t

    def test_stats_present(self, rng):
        ilp, _ = make_lp([(0, 3)], [([1], GE, 1)])
        res = solve_ilp(ilp)
        assert res.stats["nodes"] >= 1
        assert "wall_time_s" in res.stats

    def test_determinism(self, rng):
        model = random_toy_model(rng, n_in=2)
        q = random_query(rng, model, radius=2)
        targets = encode_query(model, q)
        if not targets:
            pytest.skip("no targets")
        r1 = solve_ilp(targets[0][1])
        r2 = solve_ilp(targets[0][1])
        assert r1.status == r2.status
        assert r1.witness == r2.witness
        assert r1.stats["nodes"] == r2.stats["nodes"]
