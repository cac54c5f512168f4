"""Emit the verifier's model file format from an extracted PyTorch model,
plus a manifest tracing every emitted layer to its source module.

The file stores biases in accumulator units, b_acc = round(b / (s_x * s_w)),
which is how the integer kernels consume them.  The file declares half-up
rounding; PyTorch requantization kernels round half-to-even on exact .5
ties, so the manifest carries a tie scan marking inputs whose pre-round
values fall within 1e-9 of a tie (on those, file semantics and framework
kernels may legitimately disagree).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .extract import ExtractedModel, ExtractedPool, detect_tie_rounding
from .simulate import tie_distance

QUINT8 = (0, 255)
TIE_EPS = 1e-9


@dataclass
class ExportManifest:
    source: str
    layer_map: list = field(default_factory=list)
    rounding_mode_detected: str = ""
    file_rounding_mode: str = "half-up"
    checksum_sha256: str = ""
    tie_scan: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1)


def conv_out_shape(in_shape, kernel_hw, stride, padding):
    c, h, w = in_shape
    oh = (h + 2 * padding[0] - kernel_hw[0]) // stride[0] + 1
    ow = (w + 2 * padding[1] - kernel_hw[1]) // stride[1] + 1
    return oh, ow


def export_model(extracted: ExtractedModel, input_shape, source: str = "") -> tuple:
    """Returns (model file bytes, ExportManifest)."""
    input_shape = tuple(int(v) for v in input_shape)
    layers = []
    manifest = ExportManifest(source=source,
                              rounding_mode_detected=detect_tie_rounding())

    shape = input_shape
    in_scale = extracted.input_scale
    for i, layer in enumerate(extracted.layers):
        if isinstance(layer, ExtractedPool):
            if len(shape) != 3:
                raise ValueError(f"max-pool needs a (C,H,W) input, got {shape}")
            c, h, w = shape
            oh = (h - layer.kernel) // layer.stride + 1
            ow = (w - layer.kernel) // layer.stride + 1
            layers.append({
                "type": "maxpool",
                "kernel": layer.kernel,
                "stride": layer.stride,
                "in_shape": [c, h, w],
                "out_shape": [c, oh, ow],
            })
            manifest.layer_map.append({"source": layer.source, "file_index": i,
                                       "type": "maxpool"})
            shape = (c, oh, ow)
            continue

        b_acc = np.round(layer.bias_float / (in_scale * layer.weight_scales)).astype(np.int64)
        obj = {
            "type": "qlinear" if layer.kind == "linear" else "qconv",
            "weight": layer.weight_int.tolist(),
            "weight_quant": [
                {"scale": repr(float(s)), "zero_point": int(z)}
                for s, z in zip(layer.weight_scales, layer.weight_zero_points)
            ],
            "bias_acc": b_acc.tolist(),
            "output_quant": {"scale": repr(layer.out_scale),
                             "zero_point": layer.out_zero_point,
                             "lb": QUINT8[0], "ub": QUINT8[1]},
            "activation": "relu" if layer.relu_fused else "none",
        }
        if layer.kind == "conv":
            if len(shape) != 3:
                raise ValueError(f"convolution needs a (C,H,W) input, got {shape}")
            oc, ic, kh, kw = layer.weight_int.shape
            if ic != shape[0]:
                raise ValueError(f"layer {layer.source}: kernel expects {ic} channels, "
                                 f"input has {shape[0]}")
            oh, ow = conv_out_shape(shape, (kh, kw), layer.stride, layer.padding)
            obj["stride"] = list(layer.stride)
            obj["padding"] = list(layer.padding)
            obj["in_shape"] = list(shape)
            obj["out_shape"] = [oc, oh, ow]
            shape = (oc, oh, ow)
        else:
            n_out, n_in = layer.weight_int.shape
            flat = int(np.prod(shape))
            if n_in != flat:
                raise ValueError(f"layer {layer.source}: weight expects {n_in} inputs, "
                                 f"previous layer produces {flat}")
            shape = (n_out,)
        layers.append(obj)
        manifest.layer_map.append({"source": layer.source, "file_index": i,
                                   "type": obj["type"]})
        in_scale = layer.out_scale

    doc = {
        "format_version": 1,
        "input_shape": list(input_shape),
        "input_quant": {"scale": repr(extracted.input_scale),
                        "zero_point": extracted.input_zero_point,
                        "lb": QUINT8[0], "ub": QUINT8[1]},
        "rounding_mode": "half-up",
        "layers": layers,
    }
    data = json.dumps(doc, indent=1).encode("utf-8")
    manifest.checksum_sha256 = hashlib.sha256(data).hexdigest()
    return data, manifest


def scan_ties(doc_bytes: bytes, inputs) -> dict:
    """Flag inputs whose pre-round value anywhere in the network lands
    within TIE_EPS of a .5 boundary; framework kernels (half-even) and the
    file semantics (half-up) may disagree on exactly these."""
    doc = json.loads(doc_bytes)
    flagged = []
    for idx, x in enumerate(inputs):
        if tie_distance(doc, np.asarray(x, dtype=np.int64)) < TIE_EPS:
            flagged.append(idx)
    return {"num_inputs": len(inputs), "tie_input_indices": flagged,
            "tie_eps": TIE_EPS}
