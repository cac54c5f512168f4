"""Bit-exact integer forward inference.

This is the ground truth the rest of the pipeline is measured against:
counterexamples are only ever reported after this module confirms them, and
the desk-scale verification checks enumerate inputs through here.

All accumulator arithmetic is exact 64-bit integer; the only floating-point
step is the per-neuron requantization z_y + f * acc, computed in the same
association order the ILP encoder uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    ROUND_HALF_EVEN,
    ROUND_HALF_UP,
    DtypeBounds,
    MaxPoolLayer,
    QuantModel,
    QuantParams,
    RobustnessQuery,
    dense_affine,
    layer_io,
)


@dataclass(frozen=True)
class IntTensor:
    """Row-major integer tensor."""

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.int64).ravel())
        if self.data.size != int(np.prod(self.shape)):
            raise ValueError(f"data length {self.data.size} != prod{self.shape}")

    @classmethod
    def from_array(cls, arr) -> "IntTensor":
        arr = np.asarray(arr)
        return cls(shape=arr.shape, data=arr.astype(np.int64).ravel())


def round_mode(values: np.ndarray, mode: str) -> np.ndarray:
    """Round to integer.  half-up sends ties toward +infinity, half-even is
    banker's rounding."""
    if mode == ROUND_HALF_UP:
        return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)
    if mode == ROUND_HALF_EVEN:
        return np.rint(np.asarray(values, dtype=np.float64)).astype(np.int64)
    raise ValueError(f"unknown rounding mode {mode!r}")


def quantize_input(x_real, qp: QuantParams, bounds: DtypeBounds, mode: str = ROUND_HALF_UP) -> IntTensor:
    """Quantize a real vector: Clip(Round(x / s + z), lb, ub)."""
    x = np.asarray(x_real, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    q = round_mode(x / qp.scale + qp.zero_point, mode)
    q = np.clip(q, bounds.lb, bounds.ub)
    return IntTensor(shape=x.shape, data=q)


def _affine_accumulate(dense, x: np.ndarray) -> np.ndarray:
    xm = x - dense.z_x
    return dense.centered @ xm + dense.bias_acc


def layer_forward(layer, x_q: IntTensor, mode: str = ROUND_HALF_UP,
                  in_bounds: DtypeBounds = None, trace: dict = None,
                  layer_index: int = 0) -> IntTensor:
    """Evaluate one layer on an integer input.

    Affine layers run the four-step quantized semantics (accumulate, scale,
    round, clip); max pooling takes the windowed integer max.  When ``trace``
    is given, intermediate per-neuron integer values are recorded under the
    same names the ILP encoder assigns to its variables.
    """
    x = x_q.data
    if isinstance(layer, MaxPoolLayer):
        out = np.empty(layer.out_count, dtype=np.int64)
        for j, win in enumerate(layer.window_indices()):
            vals = x[win]
            if trace is not None:
                running = vals[0]
                for t in range(1, len(vals) - 1):
                    running = max(running, vals[t])
                    trace[f"L{layer_index}.n{j}.max{t}"] = int(running)
            out[j] = vals.max()
            if trace is not None:
                trace[f"L{layer_index}.n{j}.yq"] = int(out[j])
        return IntTensor(shape=layer.out_shape, data=out)

    if in_bounds is None:
        raise ValueError("affine layers need the input dtype bounds")
    if x.min(initial=in_bounds.lb) < in_bounds.lb or x.max(initial=in_bounds.ub) > in_bounds.ub:
        raise ValueError("input outside dtype bounds")

    dense = dense_affine(layer, in_bounds)
    acc = _affine_accumulate(dense, x)
    yhat0 = dense.z_y + dense.f * acc
    yhat1 = round_mode(yhat0, mode)
    out = np.clip(yhat1, dense.clip_lb, dense.clip_ub)

    if trace is not None:
        ymax = np.maximum(yhat1, dense.clip_lb)
        for j in range(out.size):
            trace[f"L{layer_index}.n{j}.yhat1"] = int(yhat1[j])
            trace[f"L{layer_index}.n{j}.ymax"] = int(ymax[j])
            trace[f"L{layer_index}.n{j}.yq"] = int(out[j])

    shape = layer.out_shape if hasattr(layer, "out_shape") else (layer.out_dim,)
    return IntTensor(shape=shape, data=out)


def forward(model: QuantModel, x_q, trace: dict = None) -> np.ndarray:
    """Run the whole stack; returns the integer logits o_0..o_{m-1}."""
    if isinstance(x_q, IntTensor):
        t = x_q
    else:
        t = IntTensor.from_array(x_q)
    if trace is not None:
        for i, v in enumerate(t.data):
            trace[f"x{i}"] = int(v)
    for k, layer, in_bounds in layer_io(model):
        t = layer_forward(layer, t, model.rounding_mode, in_bounds, trace, k)
    return t.data.copy()


def predict(model: QuantModel, x_q) -> int:
    """Argmax label; ties break to the smallest index."""
    return int(np.argmax(forward(model, x_q)))


def validate_counterexample(model: QuantModel, query: RobustnessQuery, x_q) -> bool:
    """True iff x_q lies in the query ball, within input bounds, and the
    model labels it differently from the query label."""
    x = np.asarray(x_q, dtype=np.int64).ravel()
    if x.size != query.center.size:
        return False
    if np.abs(x - query.center).max(initial=0) > query.radius:
        return False
    if x.min() < model.input_bounds.lb or x.max() > model.input_bounds.ub:
        return False
    return predict(model, x) != query.label
