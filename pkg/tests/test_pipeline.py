"""End-to-end verdicts against exhaustive enumeration, plus batch report
shape and cross-mode consistency."""

import json

import pytest

from helpers import exhaustive_verdict, random_query, random_toy_model

from qnnverify.inference import validate_counterexample
from qnnverify.model import RobustnessQuery
from qnnverify.pipeline import (
    MISCLASSIFIED,
    MODE_EQV,
    MODE_ILP,
    MODE_ILP_IN,
    MODES,
    ROBUST,
    UNSAFE,
    make_report,
    verify,
    verify_batch,
)


class TestVerify:
    def test_radius_zero_robust_in_every_mode(self, rng):
        model = random_toy_model(rng)
        q = random_query(rng, model, radius=0)
        for mode in MODES:
            assert verify(model, q, mode).status == ROBUST

    def test_misclassified_center(self, rng):
        found = False
        for _ in range(40):
            model = random_toy_model(rng)
            x = rng.integers(0, 16, size=model.input_size)
            from qnnverify.inference import predict

            p = predict(model, x)
            wrong = (p + 1) % model.num_classes
            q = RobustnessQuery(center=x, label=wrong, radius=2, timeout=30)
            v = verify(model, q, MODE_EQV)
            assert v.status == MISCLASSIFIED
            assert v.stage == "precheck"
            found = True
            break
        assert found

    def test_matches_enumeration_all_modes(self, rng):
        for _ in range(15):
            model = random_toy_model(rng)
            q = random_query(rng, model)
            truth, _ = exhaustive_verdict(model, q)
            for mode in MODES:
                v = verify(model, q, mode)
                assert v.status == truth, (mode, truth, v.detail)
                if v.status == UNSAFE:
                    assert v.witness is not None
                    assert validate_counterexample(model, q, v.witness)

    def test_stage_attribution_values(self, rng):
        seen = set()
        for _ in range(25):
            model = random_toy_model(rng)
            q = random_query(rng, model, radius=2)
            v = verify(model, q, MODE_EQV)
            if v.status in (ROBUST, UNSAFE):
                assert v.stage in ("attack", "interval", "ilp")
                seen.add(v.stage)
        assert "attack" in seen or "ilp" in seen
        assert "interval" in seen

    def test_half_even_model_degrades_to_unknown_or_interval(self, rng):
        model = random_toy_model(rng)
        model.rounding_mode = "half-even"
        q = random_query(rng, model, radius=1)
        v = verify(model, q, MODE_ILP_IN)
        # the encoder rejects half-even; only an interval proof can decide
        assert v.status in (ROBUST, "UNKNOWN")
        if v.status == "UNKNOWN":
            assert "ilp stage failed" in v.detail

    def test_unknown_on_zero_budget(self, rng):
        model = random_toy_model(rng, n_in=3, hidden_layers=2)
        q0 = random_query(rng, model, radius=2)
        q = RobustnessQuery(center=q0.center, label=q0.label, radius=2, timeout=0.0)
        v = verify(model, q, MODE_ILP)
        assert v.status in ("UNKNOWN", MISCLASSIFIED)

    def test_wall_time_stays_near_budget(self):
        """Per-query wall time is bounded by the timeout plus one node's
        grace period."""
        import json
        import time
        from pathlib import Path

        from qnnverify.model import load_model_file

        assets = Path(__file__).parent / "assets"
        model = load_model_file(assets / "fixture_digits.json")
        raw = json.loads((assets / "fixture_queries.json").read_text())
        budget = 1.5
        start = time.monotonic()
        for q in raw[:4]:
            query = RobustnessQuery(center=q["input"], label=q["label"],
                                    radius=q["radius"], timeout=budget)
            t0 = time.monotonic()
            verify(model, query, MODE_ILP)
            assert time.monotonic() - t0 <= budget + 2.0
        assert time.monotonic() - start <= 4 * (budget + 2.0)


class TestVerifyBatch:
    def test_empty_batch(self, rng):
        model = random_toy_model(rng)
        report = verify_batch(model, [], MODE_EQV)
        assert report["num_queries"] == 0
        assert report["queries"] == []

    def test_aggregates_match_per_query_recount(self, rng):
        model = random_toy_model(rng)
        queries = [random_query(rng, model) for _ in range(10)]
        report = verify_batch(model, queries, MODE_EQV)
        statuses = [q["status"] for q in report["queries"]]
        eligible = sum(1 for s in statuses if s != MISCLASSIFIED)
        assert report["counts"][ROBUST] == statuses.count(ROBUST)
        assert report["rob_pct"] == pytest.approx(
            100.0 * statuses.count(ROBUST) / max(eligible, 1))
        assert report["uns_pct"] == pytest.approx(
            100.0 * statuses.count(UNSAFE) / max(eligible, 1))

    def test_cross_mode_verdict_multiset(self, rng):
        model = random_toy_model(rng)
        queries = [random_query(rng, model) for _ in range(6)]
        rep_a = verify_batch(model, queries, MODE_ILP)
        rep_b = verify_batch(model, queries, MODE_EQV)
        for qa, qb in zip(rep_a["queries"], rep_b["queries"]):
            da = qa["status"] in (ROBUST, UNSAFE)
            db = qb["status"] in (ROBUST, UNSAFE)
            if da and db:
                assert qa["status"] == qb["status"]

    def test_parallel_equals_serial(self, rng):
        model = random_toy_model(rng)
        queries = [random_query(rng, model) for _ in range(6)]
        a = verify_batch(model, queries, MODE_EQV, parallelism=1)
        b = verify_batch(model, queries, MODE_EQV, parallelism=4)
        assert [q["status"] for q in a["queries"]] == [q["status"] for q in b["queries"]]

    def test_timeouts_counted_at_full_limit(self, rng):
        model = random_toy_model(rng)
        q = random_query(rng, model, radius=1)
        from qnnverify.pipeline import Verdict

        fake = Verdict(status="UNKNOWN", stage="ilp", timings={"ilp": 0.01})
        report = make_report([q], [fake], MODE_ILP)
        assert report["total_time_s"] == q.timeout

    def test_report_is_json_serializable(self, rng):
        model = random_toy_model(rng)
        queries = [random_query(rng, model) for _ in range(3)]
        report = verify_batch(model, queries, MODE_ILP_IN)
        text = json.dumps(report)
        assert "rob_pct" in json.loads(text)
