"""Acceptance suite.

One test per criterion, each printing a PASS/FAIL line.  The toy corpus
(random small networks with exhaustively enumerable perturbation balls) is
shared between the oracle-equivalence, interval-soundness and LP-round-trip
criteria; the fixture checks run the shipped 8x8 digits classifier.
"""

import itertools
import json
import math
from pathlib import Path

import numpy as np
import pytest

from helpers import ball_points, exhaustive_verdict, random_query, random_toy_model

from qnnverify.attack import build_dummy, forward_backward
from qnnverify.encode import EQ, GE, INT, LE, ILPModel, encode_max, encode_min, encode_query
from qnnverify.inference import forward, validate_counterexample
from qnnverify.intervals import VERDICT_ROBUST, analyze, round_epsilon
from qnnverify.lpformat import parse_lp, write_lp
from qnnverify.model import RobustnessQuery, load_model_file
from qnnverify.pipeline import (
    MODE_EQV,
    MODE_ILP,
    MODE_ILP_IN,
    ROBUST,
    UNSAFE,
    verify,
    verify_batch,
)
from qnnverify.solver import solve_ilp

ASSETS = Path(__file__).parent / "assets"
N_TOYS = 200
FIXTURE_BUDGET_S = 60.0


def report(n, ok, msg=""):
    status = "PASS" if ok else "FAIL"
    print(f"\n[acceptance] criterion {n}: {status} {msg}")
    assert ok, f"criterion {n} failed: {msg}"


@pytest.fixture(scope="module")
def toy_corpus():
    rng = np.random.default_rng(1234)
    corpus = []
    while len(corpus) < N_TOYS:
        model = random_toy_model(rng)
        query = random_query(rng, model, radius=int(rng.choice([1, 2])))
        truth, witness = exhaustive_verdict(model, query)
        corpus.append((model, query, truth, witness))
    return corpus


@pytest.fixture(scope="module")
def fixture_model():
    return load_model_file(ASSETS / "fixture_digits.json")


@pytest.fixture(scope="module")
def fixture_queries():
    raw = json.loads((ASSETS / "fixture_queries.json").read_text())
    return [RobustnessQuery(center=np.array(q["input"], dtype=np.int64),
                            label=q["label"], radius=q["radius"],
                            timeout=FIXTURE_BUDGET_S) for q in raw]


@pytest.fixture(scope="module")
def fixture_reports(fixture_model, fixture_queries):
    return {mode: verify_batch(fixture_model, fixture_queries, mode, parallelism=4)
            for mode in (MODE_ILP, MODE_ILP_IN, MODE_EQV)}


def test_criterion_1_exhaustive_oracle_equivalence(toy_corpus):
    """Pipeline verdicts (modes eqv and ilp) match exhaustive enumeration on
    every toy instance; every UNSAFE witness validates."""
    mismatches = []
    for i, (model, query, truth, _) in enumerate(toy_corpus):
        for mode in (MODE_EQV, MODE_ILP):
            v = verify(model, query, mode)
            if v.status != truth:
                mismatches.append((i, mode, truth, v.status, v.detail))
            elif v.status == UNSAFE and not validate_counterexample(model, query, v.witness):
                mismatches.append((i, mode, "witness-invalid", None, None))
    report(1, not mismatches,
           f"({len(toy_corpus)} toy instances x 2 modes; mismatches: {mismatches[:5]})")


def test_criterion_2_rounding_encoding_uniqueness():
    """For random lattice pre-round values, the unique integer satisfying
    the rounding constraint pair equals half-up rounding."""
    rng = np.random.default_rng(99)
    failures = 0
    for _ in range(10_000):
        f = float(rng.choice([1, 3, 5, 7, 11])) / (2 ** int(rng.integers(0, 9)))
        z = int(rng.integers(0, 40))
        k = int(rng.integers(-5000, 5000))
        y0 = z + f * k
        eps = round_epsilon(f)
        sols = [y1 for y1 in range(math.floor(y0) - 2, math.ceil(y0) + 3)
                if y1 - y0 <= 0.5 and y0 - y1 <= 0.5 - eps]
        if sols != [math.floor(y0 + 0.5)]:
            failures += 1
    report(2, failures == 0, f"(10^4 lattice values, {failures} failures)")


def _gadget_feasible_set(build, lo=-10, hi=10):
    got = set()
    for xv in range(lo, hi + 1):
        for yv in range(lo, hi + 1):
            ilp, z = build()
            zs = set()
            for zv in range(lo - 2, hi + 3):
                for bx in (0, 1):
                    by = 1 - bx
                    values = {"x": xv, "y": yv, "z": zv, "z.bx": bx, "z.by": by}
                    ok = True
                    for con in ilp.constraints:
                        s = sum(c * values[v.name] for v, c in con.coeffs.items())
                        if con.sense == LE and s > con.rhs + 1e-9:
                            ok = False
                        elif con.sense == GE and s < con.rhs - 1e-9:
                            ok = False
                        elif con.sense == EQ and abs(s - con.rhs) > 1e-9:
                            ok = False
                        if not ok:
                            break
                    if ok:
                        zs.add(zv)
            for zv in zs:
                got.add((xv, yv, zv))
    return got


def test_criterion_3_gadget_exactness():
    def build_max():
        ilp = ILPModel()
        x = ilp.new_var("x", INT, -10, 10)
        y = ilp.new_var("y", INT, -10, 10)
        z = ilp.new_var("z", INT, -12, 12)
        encode_max(ilp, z, x, y, 21.0 + 1)
        return ilp, z

    def build_min():
        ilp = ILPModel()
        x = ilp.new_var("x", INT, -10, 10)
        y = ilp.new_var("y", INT, -10, 10)
        z = ilp.new_var("z", INT, -12, 12)
        encode_min(ilp, z, x, y, 21.0 + 1)
        return ilp, z

    grid = range(-10, 11)
    want_max = {(a, b, max(a, b)) for a in grid for b in grid}
    want_min = {(a, b, min(a, b)) for a in grid for b in grid}
    got_max = _gadget_feasible_set(build_max)
    got_min = _gadget_feasible_set(build_min)

    clip_fail = 0
    for v in range(-512, 513):
        ymax = 0 + max(v - 0, 0)
        y2 = 255 - max(255 - ymax, 0)
        if y2 != min(max(v, 0), 255):
            clip_fail += 1

    ok = got_max == want_max and got_min == want_min and clip_fail == 0
    report(3, ok, f"(max grid: {len(got_max)}/{len(want_max)}, "
                  f"min grid: {len(got_min)}/{len(want_min)}, clip failures: {clip_fail})")


def test_criterion_4_interval_soundness(toy_corpus, fixture_model, fixture_queries):
    violations = 0
    unsound_robust = 0
    # toy nets: exhaustive over the whole ball (stronger than sampling)
    for model, query, truth, _ in toy_corpus:
        res = analyze(model, query)
        if res.verdict == VERDICT_ROBUST and truth == "UNSAFE":
            unsound_robust += 1
        for x in ball_points(model, query):
            trace = {}
            forward(model, x, trace=trace)
            for name, value in trace.items():
                iv = res.bounds[name]
                if not (iv.lo - 1e-9 <= value <= iv.hi + 1e-9):
                    violations += 1
    # fixture net: ten thousand sampled ball inputs
    rng = np.random.default_rng(5)
    query = fixture_queries[0]
    res = analyze(fixture_model, query)
    lo, hi = query.input_box(fixture_model)
    for _ in range(10_000):
        x = rng.integers(lo, hi + 1)
        trace = {}
        forward(fixture_model, x, trace=trace)
        for name, value in trace.items():
            iv = res.bounds[name]
            if not (iv.lo - 1e-9 <= value <= iv.hi + 1e-9):
                violations += 1
    report(4, violations == 0 and unsound_robust == 0,
           f"({violations} bound violations, {unsound_robust} unsound ROBUST verdicts)")


def test_criterion_5_straight_through_gradient():
    from test_attack import surrogate_factory

    rng = np.random.default_rng(31)
    h = 1e-5
    total = good = 0
    forward_mismatch = 0
    for _ in range(100):
        model = random_toy_model(rng)
        net = build_dummy(model, validate=False)
        for _ in range(20):
            xi = rng.integers(0, 16, size=model.input_size)
            if not np.array_equal(net.forward_exact(xi).astype(np.int64), forward(model, xi)):
                forward_mismatch += 1
        x0 = rng.integers(0, 16, size=model.input_size).astype(float)
        x0 = x0 + rng.uniform(-0.3, 0.3, size=x0.size)
        label = int(rng.integers(0, model.num_classes))
        _, grad = forward_backward(net, x0, label)
        loss_fn = surrogate_factory(net, x0)
        _, sig_0, _ = loss_fn(x0, label)
        for i in range(x0.size):
            xp, xm = x0.copy(), x0.copy()
            xp[i] += h
            xm[i] -= h
            lp, sig_p, _ = loss_fn(xp, label)
            lm, sig_m, _ = loss_fn(xm, label)
            if sig_p != sig_m or sig_p != sig_0:
                continue  # kink-adjacent coordinate
            fd = (lp - lm) / (2 * h)
            total += 1
            if max(abs(grad[i]), abs(fd)) < 1e-7:
                good += 1  # both zero at measurement resolution
                continue
            denom = max(abs(grad[i]), abs(fd))
            if abs(grad[i] - fd) / denom <= 1e-4:
                good += 1
    frac = good / total if total else 0.0
    report(5, frac >= 0.99 and forward_mismatch == 0 and total >= 100,
           f"({good}/{total} coordinates within 1e-4; {forward_mismatch} forward mismatches)")


def test_criterion_6_fixture_mode_consistency(fixture_reports):
    decided = {}
    for mode, rep in fixture_reports.items():
        decided[mode] = [(i, q["status"]) for i, q in enumerate(rep["queries"])
                         if q["status"] in (ROBUST, UNSAFE)]
    conflicts = []
    for mode_a, mode_b in itertools.combinations(fixture_reports, 2):
        a = dict(decided[mode_a])
        b = dict(decided[mode_b])
        for i in set(a) & set(b):
            if a[i] != b[i]:
                conflicts.append((i, mode_a, a[i], mode_b, b[i]))
    n_eqv = len(decided[MODE_EQV])
    n_ilp = len(decided[MODE_ILP])
    ok = not conflicts and n_eqv >= n_ilp
    report(6, ok, f"(decided: eqv {n_eqv}, ilp+in {len(decided[MODE_ILP_IN])}, "
                  f"ilp {n_ilp} of 50; conflicts: {conflicts})")


def test_criterion_7_stage_attribution(fixture_reports, fixture_queries):
    rep = fixture_reports[MODE_EQV]
    by_stage = rep["decided_by_stage"]
    assert set(by_stage) <= {"attack", "interval", "ilp"}
    small_radius_interval = sum(
        1 for q, out in zip(fixture_queries, rep["queries"])
        if q.radius == 2 and out["status"] in (ROBUST, UNSAFE) and out["stage"] == "interval")
    total_decided = sum(by_stage.values())
    recount = sum(1 for q in rep["queries"] if q["status"] in (ROBUST, UNSAFE))
    ok = small_radius_interval > 0 and total_decided == recount
    report(7, ok, f"(stage partition {by_stage}; interval-decided at r=2: "
                  f"{small_radius_interval})")


def test_criterion_8_lp_export_round_trip(toy_corpus):
    mismatches = 0
    checked = 0
    for model, query, _, _ in toy_corpus[:60]:
        for t, ilp in encode_query(model, query):
            a = solve_ilp(ilp).status
            b = solve_ilp(parse_lp(write_lp(ilp))).status
            checked += 1
            if a != b:
                mismatches += 1
    report(8, mismatches == 0, f"({checked} exported models re-solved, {mismatches} mismatches)")
