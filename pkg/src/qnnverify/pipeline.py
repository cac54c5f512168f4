"""Per-query orchestration and the batch harness.

A query runs through up to three stages under one deadline: the gradient
attack (cheap, finds counterexamples), interval analysis (cheap, proves
robustness and tightens the encoding), then one feasibility ILP per
surviving adversarial target.  Mode "eqv" runs all three, "ilp+in" skips
the attack, "ilp" additionally skips interval analysis and encodes with
structural bounds only.

Every UNSAFE verdict carries a witness that exact inference has validated;
ROBUST comes either from interval analysis or from all target ILPs being
infeasible.  Queries whose center is already misclassified get the distinct
MISCLASSIFIED status so robustness statistics stay meaningful.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, pgd_attack
from .encode import encode_query
from .inference import predict, validate_counterexample
from .intervals import VERDICT_ROBUST, analyze
from .model import QuantModel, RobustnessQuery
from .solver import FEASIBLE, INFEASIBLE, solve_ilp

MODE_ILP = "ilp"
MODE_ILP_IN = "ilp+in"
MODE_EQV = "eqv"
MODES = (MODE_ILP, MODE_ILP_IN, MODE_EQV)

ROBUST = "ROBUST"
UNSAFE = "UNSAFE"
UNKNOWN = "UNKNOWN"
MISCLASSIFIED = "MISCLASSIFIED"

# share of the per-query budget granted to the cheap front stages
ATTACK_BUDGET = 0.05
INTERVAL_BUDGET = 0.15


@dataclass
class Verdict:
    status: str
    stage: str = ""
    witness: np.ndarray = None
    timings: dict = field(default_factory=dict)
    solver_stats: dict = field(default_factory=dict)
    detail: str = ""

    def to_json_obj(self) -> dict:
        obj = {
            "status": self.status,
            "stage": self.stage,
            "time_s": round(sum(self.timings.values()), 6),
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
        }
        if self.witness is not None:
            obj["witness"] = [int(v) for v in self.witness]
        if self.solver_stats:
            obj["solver_stats"] = self.solver_stats
        if self.detail:
            obj["detail"] = self.detail
        return obj


def verify(model: QuantModel, query: RobustnessQuery, mode: str = MODE_EQV,
           seed: int = 0, lp_sink=None, bounds_sink=None) -> Verdict:
    """Decide one robustness query.  ``lp_sink(target, text)`` receives the
    LP export of each emitted model; ``bounds_sink(json_text)`` receives the
    interval bounds table."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    t0 = time.monotonic()
    deadline = t0 + query.timeout
    timings = {}

    center_label = predict(model, query.center)
    timings["precheck"] = time.monotonic() - t0
    if center_label != query.label:
        return Verdict(status=MISCLASSIFIED, stage="precheck", timings=timings,
                       detail=f"center classifies as {center_label}")

    # stage 1: gradient attack
    if mode == MODE_EQV:
        t = time.monotonic()
        attack_deadline = min(deadline, t + ATTACK_BUDGET * query.timeout)
        try:
            witness = pgd_attack(model, query, AttackConfig(seed=seed),
                                 deadline=attack_deadline)
        finally:
            timings["attack"] = time.monotonic() - t
        if witness is not None:
            return Verdict(status=UNSAFE, stage="attack", witness=witness, timings=timings)

    # stage 2: interval analysis
    analysis = None
    if mode in (MODE_EQV, MODE_ILP_IN):
        t = time.monotonic()
        try:
            analysis = analyze(model, query)
            timings["interval"] = time.monotonic() - t
        except Exception as exc:  # analysis failure degrades, never aborts
            timings["interval"] = time.monotonic() - t
            analysis = None
            if time.monotonic() > deadline:
                return Verdict(status=UNKNOWN, stage="interval", timings=timings,
                               detail=f"interval stage failed: {exc}")
        if bounds_sink is not None and analysis is not None:
            bounds_sink(analysis.bounds_json())
        if analysis is not None and analysis.verdict == VERDICT_ROBUST:
            return Verdict(status=ROBUST, stage="interval", timings=timings)

    # stage 3: ILP per target
    t = time.monotonic()
    totals = {"nodes": 0, "lp_iterations": 0, "targets": 0}
    try:
        bounds = analysis.bounds if analysis is not None else None
        phases = analysis.phases if analysis is not None else None
        skip = analysis.ruled_out if analysis is not None else None
        targets = encode_query(model, query, bounds=bounds, phases=phases,
                               skip_targets=skip)
        if analysis is not None:
            # most promising (smallest proven gap to the winner) first
            targets.sort(key=lambda pair: -analysis.gap_upper.get(pair[0], np.inf))
        if lp_sink is not None:
            from .lpformat import write_lp
            for tgt, ilp in targets:
                lp_sink(tgt, write_lp(ilp))

        decided_all = True
        for tgt, ilp in targets:
            if time.monotonic() > deadline:
                decided_all = False
                break
            res = solve_ilp(ilp, deadline=deadline)
            totals["targets"] += 1
            totals["nodes"] += res.stats.get("nodes", 0)
            totals["lp_iterations"] += res.stats.get("lp_iterations", 0)
            if res.status == FEASIBLE:
                witness = np.array([res.witness[f"x{i}"] for i in range(query.center.size)],
                                   dtype=np.int64)
                if validate_counterexample(model, query, witness):
                    timings["ilp"] = time.monotonic() - t
                    return Verdict(status=UNSAFE, stage="ilp", witness=witness,
                                   timings=timings, solver_stats=totals)
                decided_all = False  # encoding admitted a spurious point
            elif res.status != INFEASIBLE:
                decided_all = False
                break
        timings["ilp"] = time.monotonic() - t
        if decided_all:
            return Verdict(status=ROBUST, stage="ilp", timings=timings, solver_stats=totals)
        return Verdict(status=UNKNOWN, stage="ilp", timings=timings, solver_stats=totals,
                       detail="deadline reached before all targets were decided")
    except Exception as exc:
        timings.setdefault("ilp", time.monotonic() - t)
        return Verdict(status=UNKNOWN, stage="ilp", timings=timings, solver_stats=totals,
                       detail=f"ilp stage failed: {type(exc).__name__}: {exc}")


def verify_batch(model: QuantModel, queries: list, mode: str = MODE_EQV,
                 parallelism: int = 1, seed: int = 0) -> dict:
    """Run a list of queries; returns the report dict described in the
    README (per-query verdicts plus Rob/Uns/Unk aggregates, with every
    timeout accounted at the full per-query limit)."""
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            verdicts = list(pool.map(lambda q: verify(model, q, mode, seed=seed), queries))
    else:
        verdicts = [verify(model, q, mode, seed=seed) for q in queries]
    return make_report(queries, verdicts, mode)


def make_report(queries: list, verdicts: list, mode: str) -> dict:
    per_query = []
    counts = {ROBUST: 0, UNSAFE: 0, UNKNOWN: 0, MISCLASSIFIED: 0}
    by_stage = {}
    total_time = 0.0
    for q, v in zip(queries, verdicts):
        obj = v.to_json_obj()
        obj["label"] = int(q.label)
        obj["radius"] = int(q.radius)
        per_query.append(obj)
        counts[v.status] += 1
        if v.status in (ROBUST, UNSAFE):
            by_stage[v.stage] = by_stage.get(v.stage, 0) + 1
        total_time += q.timeout if v.status == UNKNOWN else obj["time_s"]
    eligible = len(queries) - counts[MISCLASSIFIED]
    denom = max(eligible, 1)
    return {
        "mode": mode,
        "num_queries": len(queries),
        "queries": per_query,
        "rob_pct": 100.0 * counts[ROBUST] / denom,
        "uns_pct": 100.0 * counts[UNSAFE] / denom,
        "unk_pct": 100.0 * counts[UNKNOWN] / denom,
        "counts": counts,
        "decided_by_stage": by_stage,
        "total_time_s": round(total_time, 6),
    }


def load_queries(path, timeout: float) -> list:
    """Query file: JSON array of {input: int array, label, radius}."""
    with open(path) as fh:
        arr = json.load(fh)
    return [RobustnessQuery(center=np.array(q["input"], dtype=np.int64),
                            label=int(q["label"]), radius=int(q["radius"]),
                            timeout=timeout) for q in arr]
