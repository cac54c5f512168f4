"""Command line interface.

    qnnverify verify --model m.json --input x.json --label 3 --radius 2 \
        --mode eqv --timeout 60 [--emit-lp DIR] [--bounds-dump FILE] [--seed N]
    qnnverify batch  --model m.json --queries q.json --mode ilp+in \
        --timeout 60 --jobs 4 --report out.json
    qnnverify infer  --model m.json --inputs x.json

Exit codes: 0 for a decisive answer, 2 for unknown/timeout, 1 for errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .inference import forward
from .model import RobustnessQuery, load_model_file
from .pipeline import MODES, UNKNOWN, load_queries, verify, verify_batch


def _add_common(p):
    p.add_argument("--model", required=True, help="model file (JSON)")
    p.add_argument("--mode", default="eqv", choices=MODES)
    p.add_argument("--timeout", type=float, default=300.0, help="per-query seconds")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qnnverify",
                                 description="robustness verification for quantized networks")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="verify a single query")
    _add_common(v)
    v.add_argument("--input", required=True, help="JSON file with one integer input vector")
    v.add_argument("--label", type=int, required=True)
    v.add_argument("--radius", type=int, required=True)
    v.add_argument("--emit-lp", metavar="DIR", help="write each target ILP in LP format")
    v.add_argument("--bounds-dump", metavar="FILE", help="write the interval bounds table")
    v.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("batch", help="verify a query file")
    _add_common(b)
    b.add_argument("--queries", required=True, help="JSON array of {input, label, radius}")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--report", help="write the JSON report here (default: stdout)")
    b.add_argument("--seed", type=int, default=0)

    i = sub.add_parser("infer", help="print integer logits for inputs")
    i.add_argument("--model", required=True)
    i.add_argument("--inputs", required=True,
                   help="JSON file: one input vector or an array of input vectors")
    return ap


def cmd_verify(args) -> int:
    model = load_model_file(args.model)
    with open(args.input) as fh:
        x = np.array(json.load(fh), dtype=np.int64).ravel()
    query = RobustnessQuery(center=x, label=args.label, radius=args.radius,
                            timeout=args.timeout)

    lp_sink = None
    if args.emit_lp:
        os.makedirs(args.emit_lp, exist_ok=True)

        def lp_sink(target, text):
            with open(os.path.join(args.emit_lp, f"target{target}.lp"), "w") as fh:
                fh.write(text)

    bounds_sink = None
    if args.bounds_dump:
        def bounds_sink(text):
            with open(args.bounds_dump, "w") as fh:
                fh.write(text)

    verdict = verify(model, query, mode=args.mode, seed=args.seed,
                     lp_sink=lp_sink, bounds_sink=bounds_sink)
    print(json.dumps(verdict.to_json_obj(), indent=1))
    return 2 if verdict.status == UNKNOWN else 0


def cmd_batch(args) -> int:
    model = load_model_file(args.model)
    queries = load_queries(args.queries, timeout=args.timeout)
    report = verify_batch(model, queries, mode=args.mode, parallelism=args.jobs,
                          seed=args.seed)
    text = json.dumps(report, indent=1)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
    else:
        print(text)
    return 2 if report["counts"][UNKNOWN] > 0 else 0


def cmd_infer(args) -> int:
    model = load_model_file(args.model)
    with open(args.inputs) as fh:
        data = json.load(fh)
    batch = data if data and isinstance(data[0], list) else [data]
    out = [[int(v) for v in forward(model, np.array(x, dtype=np.int64))] for x in batch]
    print(json.dumps(out if data and isinstance(data[0], list) else out[0]))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "batch":
            return cmd_batch(args)
        return cmd_infer(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
