"""Exporter command line.

    qnn-export export --in quantized.pt --out model.json --manifest manifest.json \
        [--input-shape 1,8,8] [--tie-scan N]
    qnn-export make-queries --model model.json --dataset data.npz --count 50 \
        --radius 2 --out queries.json

The .pt input is a torch.save of a *converted* (post-training static
quantized) model; the dataset is an .npz with arrays X and y.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def build_parser():
    ap = argparse.ArgumentParser(prog="qnn-export")
    sub = ap.add_subparsers(dest="command", required=True)

    e = sub.add_parser("export")
    e.add_argument("--in", dest="model_in", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--input-shape", default=None,
                   help="comma separated, e.g. 1,8,8; default: infer from first layer")
    e.add_argument("--tie-scan", type=int, default=100,
                   help="random inputs to scan for rounding ties (0 disables)")
    e.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("make-queries")
    q.add_argument("--model", required=True)
    q.add_argument("--dataset", required=True)
    q.add_argument("--count", type=int, required=True)
    q.add_argument("--radius", type=int, required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--seed", type=int, default=0)
    return ap


def cmd_export(args) -> int:
    import torch

    from .export import export_model, scan_ties
    from .extract import extract

    model = torch.load(args.model_in, weights_only=False)
    model.eval()
    extracted = extract(model)
    if args.input_shape:
        shape = tuple(int(v) for v in args.input_shape.split(","))
    else:
        first = extracted.layers[0]
        if first.kind != "linear":
            raise ValueError("--input-shape is required for convolutional models")
        shape = (first.weight_int.shape[1],)
    data, manifest = export_model(extracted, shape, source=args.model_in)
    if args.tie_scan:
        rng = np.random.default_rng(args.seed)
        inputs = rng.integers(0, 256, size=(args.tie_scan, int(np.prod(shape))))
        manifest.tie_scan = scan_ties(data, inputs)
    with open(args.out, "wb") as fh:
        fh.write(data)
    with open(args.manifest, "w") as fh:
        fh.write(manifest.to_json())
    print(f"wrote {args.out} ({len(manifest.layer_map)} layers), manifest {args.manifest}")
    return 0


def cmd_make_queries(args) -> int:
    from .queries import make_queries

    with open(args.model) as fh:
        doc = json.load(fh)
    data = np.load(args.dataset)
    text = make_queries(doc, data["X"], data["y"], args.count, args.radius, args.seed)
    with open(args.out, "w") as fh:
        fh.write(text)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            return cmd_export(args)
        return cmd_make_queries(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
