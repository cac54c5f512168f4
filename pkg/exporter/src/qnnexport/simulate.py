"""Minimal numpy evaluation of an emitted model file, used only for the
manifest's tie scan.  Mirrors the file semantics: integer accumulation,
one float requantization multiply per neuron, half-up rounding, clip."""

from __future__ import annotations

import numpy as np


def _layer_arrays(layer):
    """Dense zero-point-centered weights (w - z_w at the taps each row
    reads), per-row scales, and accumulator bias."""
    w = np.asarray(layer["weight"], dtype=np.int64)
    qs = layer["weight_quant"]
    if layer["type"] == "qconv":
        oc, ic, kh, kw = w.shape
        c, h, wd = layer["in_shape"]
        _, oh, ow = layer["out_shape"]
        sh, sw = layer["stride"]
        ph, pw = layer["padding"]
        centered = np.zeros((oc * oh * ow, ic * h * wd), dtype=np.int64)
        row = 0
        for ch in range(oc):
            z_w = int(qs[ch]["zero_point"])
            for oy in range(oh):
                for ox in range(ow):
                    for cin in range(ic):
                        for dy in range(kh):
                            y = oy * sh + dy - ph
                            if y < 0 or y >= h:
                                continue
                            for dx in range(kw):
                                x = ox * sw + dx - pw
                                if x < 0 or x >= wd:
                                    continue
                                centered[row, cin * h * wd + y * wd + x] = \
                                    w[ch, cin, dy, dx] - z_w
                    row += 1
        per = oh * ow
        scales = np.repeat([float(q["scale"]) for q in qs], per)
        bias = np.repeat(np.asarray(layer["bias_acc"], dtype=np.int64), per)
        return centered, scales, bias
    scales = np.array([float(q["scale"]) for q in qs])
    zps = np.array([int(q["zero_point"]) for q in qs], dtype=np.int64)
    centered = w - zps[:, None]
    bias = np.asarray(layer["bias_acc"], dtype=np.int64)
    return centered, scales, bias


def tie_distance(doc: dict, x_int: np.ndarray) -> float:
    """Smallest distance of any pre-round value to a .5 rounding boundary
    over the whole forward pass."""
    v = x_int.astype(np.int64)
    in_scale = float(doc["input_quant"]["scale"])
    z_x = int(doc["input_quant"]["zero_point"])
    closest = np.inf
    for layer in doc["layers"]:
        if layer["type"] == "maxpool":
            c, h, w = layer["in_shape"]
            _, oh, ow = layer["out_shape"]
            k, s = layer["kernel"], layer["stride"]
            grid = v.reshape(c, h, w)
            out = np.empty((c, oh, ow), dtype=np.int64)
            for oy in range(oh):
                for ox in range(ow):
                    out[:, oy, ox] = grid[:, oy * s:oy * s + k, ox * s:ox * s + k].max(axis=(1, 2))
            v = out.ravel()
            continue
        centered, s_w, b_acc = _layer_arrays(layer)
        s_y = float(layer["output_quant"]["scale"])
        z_y = int(layer["output_quant"]["zero_point"])
        lb = int(layer["output_quant"]["lb"])
        ub = int(layer["output_quant"]["ub"])
        xm = v - z_x
        acc = centered @ xm + b_acc
        f = (s_w * in_scale) / s_y
        yhat0 = z_y + f * acc
        frac = np.abs(yhat0 - np.floor(yhat0) - 0.5)
        closest = min(closest, float(frac.min()))
        yhat1 = np.floor(yhat0 + 0.5).astype(np.int64)
        clip_lb = max(lb, z_y) if layer["activation"] == "relu" else lb
        v = np.clip(yhat1, clip_lb, ub)
        in_scale, z_x = s_y, z_y
    return closest
