"""Turn a dataset slice into a robustness query file: inputs quantized with
the model's input parameters, labels attached, one radius for all."""

from __future__ import annotations

import json

import numpy as np


def quantize(x_real, scale, zero_point, lb, ub):
    q = np.floor(np.asarray(x_real, dtype=np.float64) / scale + zero_point + 0.5)
    return np.clip(q, lb, ub).astype(np.int64)


def make_queries(model_doc: dict, X, y, count: int, radius: int, seed: int = 0) -> str:
    iq = model_doc["input_quant"]
    scale = float(iq["scale"])
    zp = int(iq["zero_point"])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(X))[:count]
    out = []
    for i in order:
        xq = quantize(np.asarray(X[i]).ravel(), scale, zp, int(iq["lb"]), int(iq["ub"]))
        out.append({"input": [int(v) for v in xq], "label": int(y[i]), "radius": int(radius)})
    return json.dumps(out)
