"""Pull integer weights and quantization parameters out of a converted
(post-training static quantized) PyTorch model.

Supported module classes: the quantize stub, quantized Linear / LinearReLU,
quantized Conv2d / ConvReLU2d, float MaxPool2d, and the dequantize stub.
Batch normalization and standalone ReLU must already be fused into the
preceding affine module (torch.ao.quantization.fuse_modules); the converter
leaves Identity husks behind, which are skipped.  Modules are walked in
registration order, which for the sequential topologies supported here is
the execution order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.ao.nn.intrinsic.quantized as nniq
import torch.ao.nn.quantized as nnq
from torch import nn


class UnsupportedLayerError(ValueError):
    pass


@dataclass
class ExtractedAffine:
    kind: str                    # "linear" | "conv"
    weight_int: np.ndarray
    weight_scales: np.ndarray    # per output row/channel
    weight_zero_points: np.ndarray
    bias_float: np.ndarray
    out_scale: float
    out_zero_point: int
    relu_fused: bool
    source: str
    stride: tuple = ()
    padding: tuple = ()


@dataclass
class ExtractedPool:
    kernel: int
    stride: int
    source: str


@dataclass
class ExtractedModel:
    input_scale: float
    input_zero_point: int
    layers: list = field(default_factory=list)


def _weight_params(module, n_out):
    wq = module.weight()
    w_int = wq.int_repr().numpy().astype(np.int64)
    if wq.qscheme() in (torch.per_channel_affine, torch.per_channel_symmetric):
        scales = wq.q_per_channel_scales().numpy().astype(np.float64)
        zps = wq.q_per_channel_zero_points().numpy().astype(np.int64)
    else:
        scales = np.full(n_out, float(wq.q_scale()))
        zps = np.full(n_out, int(wq.q_zero_point()), dtype=np.int64)
    return w_int, scales, zps


def _affine(module, kind, relu_fused, name):
    n_out = module.weight().shape[0]
    w_int, s_w, z_w = _weight_params(module, n_out)
    bias = module.bias()
    b = bias.detach().numpy().astype(np.float64) if bias is not None else np.zeros(n_out)
    out = ExtractedAffine(
        kind=kind,
        weight_int=w_int,
        weight_scales=s_w,
        weight_zero_points=z_w,
        bias_float=b,
        out_scale=float(module.scale),
        out_zero_point=int(module.zero_point),
        relu_fused=relu_fused,
        source=name,
    )
    if kind == "conv":
        out.stride = tuple(module.stride)
        out.padding = tuple(module.padding)
    return out


def extract(model: nn.Module) -> ExtractedModel:
    """Walk a converted quantized model and collect its layer stack."""
    input_q = None
    layers = []
    consumed = []
    for name, module in model.named_modules():
        if any(name.startswith(p + ".") for p in consumed):
            continue  # internals of an already-extracted module
        if isinstance(module, (nnq.Quantize, nnq.Linear, nnq.Conv2d)):
            consumed.append(name)
        if isinstance(module, nnq.Quantize):
            if input_q is not None:
                raise UnsupportedLayerError("multiple quantize stubs")
            input_q = (float(module.scale), int(module.zero_point))
        elif isinstance(module, nniq.LinearReLU):
            layers.append(_affine(module, "linear", True, name))
        elif isinstance(module, nnq.Linear):
            layers.append(_affine(module, "linear", False, name))
        elif isinstance(module, nniq.ConvReLU2d):
            layers.append(_affine(module, "conv", True, name))
        elif isinstance(module, nnq.Conv2d):
            layers.append(_affine(module, "conv", False, name))
        elif isinstance(module, nn.MaxPool2d):
            k = module.kernel_size
            s = module.stride or k
            k = k[0] if isinstance(k, (tuple, list)) else k
            s = s[0] if isinstance(s, (tuple, list)) else s
            if module.padding not in (0, (0, 0)):
                raise UnsupportedLayerError(f"{name}: padded max-pool is not supported")
            layers.append(ExtractedPool(kernel=int(k), stride=int(s), source=name))
        elif isinstance(module, (nnq.DeQuantize, nn.Identity, nn.Flatten, nn.Dropout,
                                 nn.Sequential)) or module is model:
            continue
        elif isinstance(module, (nn.ReLU, nn.BatchNorm1d, nn.BatchNorm2d, nn.Linear,
                                 nn.Conv2d)):
            raise UnsupportedLayerError(
                f"{name}: {type(module).__name__} survived conversion; fuse and "
                "quantize the model before exporting")
        elif not list(module.children()):
            raise UnsupportedLayerError(f"{name}: unsupported layer type "
                                        f"{type(module).__name__}")
    if input_q is None:
        raise UnsupportedLayerError("model has no quantize stub")
    if not layers or isinstance(layers[-1], ExtractedPool):
        raise UnsupportedLayerError("model must end in an affine layer")
    return ExtractedModel(input_scale=input_q[0], input_zero_point=input_q[1],
                          layers=layers)


def detect_tie_rounding() -> str:
    """Probe how this torch build rounds exact .5 requantization ties."""
    q = torch.quantize_per_tensor(torch.tensor([0.5, 1.5, 2.5]), scale=1.0,
                                  zero_point=0, dtype=torch.quint8)
    ints = q.int_repr().tolist()
    if ints == [0, 2, 2]:
        return "half-even"
    if ints == [1, 2, 3]:
        return "half-up"
    return f"unrecognized ({ints})"
