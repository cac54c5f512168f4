"""Domain types and file format for integer-quantized networks.

A quantized tensor is described by a scale ``s`` and an integer zero point
``z``: real value = s * (q - z).  A quantized affine layer keeps integer
weights with per-output-row quantization parameters and an integer bias in
accumulator units (scale s_x * s_w^j, zero point 0).  The semantics used
everywhere in this package is, per output neuron j:

    acc   = sum_i (w[j,i] - z_w[j]) * (x[i] - z_x) + b_acc[j]     (exact int)
    yhat0 = z_y + f_j * acc              with f_j = (s_w[j] * s_x) / s_y
    yhat1 = Round(yhat0)
    y     = Clip(yhat1, clip_lb, ub)

where clip_lb is the dtype lower bound, raised to max(lb, z_y) when a ReLU
has been fused into the layer.  Models are immutable after loading and safe
to share between threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

import numpy as np

ACT_NONE = "none"
ACT_RELU_FUSED = "relu"

FORMAT_VERSION = 1

# Weights are validated against the signed 8-bit range; activations carry
# their own bounds in the file.
WEIGHT_LB = -128
WEIGHT_UB = 127

# Accumulators run in int64; reject models whose worst case could wrap.
ACC_LIMIT = 2**62


class ModelFormatError(ValueError):
    """Raised when a model file cannot be parsed."""


class ModelInvariantError(ValueError):
    """Raised when a parsed model violates a structural invariant."""


class AccumulatorOverflowError(OverflowError):
    """Raised when a layer's worst-case accumulator exceeds the int64 budget."""


@dataclass(frozen=True)
class QuantParams:
    """Scale and zero point of one quantized tensor.

    ``scale_str`` is the decimal string from the model file; ``scale`` is the
    parsed double.  All modules must use the parsed value so that inference,
    encoding and attack agree bit for bit.
    """

    scale: float
    zero_point: int
    scale_str: str = ""

    def __post_init__(self):
        if self.scale_str == "":
            object.__setattr__(self, "scale_str", repr(float(self.scale)))
        if not (self.scale > 0) or not math.isfinite(self.scale):
            raise ModelInvariantError(f"scale must be a positive finite real, got {self.scale!r}")

    @classmethod
    def from_string(cls, scale_str: str, zero_point: int) -> "QuantParams":
        try:
            scale = float(scale_str)
        except ValueError as exc:
            raise ModelFormatError(f"bad scale string {scale_str!r}") from exc
        return cls(scale=scale, zero_point=int(zero_point), scale_str=scale_str)

    def scale_fraction(self) -> Fraction:
        """Exact rational value of the parsed double scale."""
        return Fraction(self.scale)


@dataclass(frozen=True)
class DtypeBounds:
    lb: int
    ub: int

    def __post_init__(self):
        if self.lb >= self.ub:
            raise ModelInvariantError(f"dtype bounds need lb < ub, got [{self.lb}, {self.ub}]")

    def contains(self, v: int) -> bool:
        return self.lb <= v <= self.ub


U8 = DtypeBounds(0, 255)
I8 = DtypeBounds(-128, 127)


@dataclass(frozen=True)
class BatchNormParams:
    """Per-channel batch normalization constants, in real-valued form."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon_bn: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "running_mean", "running_var"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n = self.gamma.shape[0]
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != (n,):
                raise ModelInvariantError("batchnorm parameter vectors must share one channel count")
        if np.any(self.running_var < 0):
            raise ModelInvariantError("running_var must be non-negative")
        if not self.epsilon_bn > 0:
            raise ModelInvariantError("epsilon_bn must be positive")


@dataclass(frozen=True)
class RealAffine:
    """A real-valued affine transform (pre-quantization), used by the
    batch-norm fusion pass.  ``weight`` is (out, in) for linear layers or
    (out_ch, in_ch, kh, kw) for convolutions; fusion only rescales the
    leading output axis."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", np.asarray(self.weight, dtype=np.float64))
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64))
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ModelInvariantError("bias length must match output channel count")


@dataclass
class QLinearLayer:
    """Fully connected quantized layer."""

    weights: np.ndarray              # (out, in) int64
    weight_qps: list                 # per-output-row QuantParams
    bias_acc: np.ndarray             # (out,) int64, accumulator units
    input_qp: QuantParams
    output_qp: QuantParams
    out_bounds: DtypeBounds
    activation: str = ACT_NONE
    fused_clip_lb: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.int64)
        self.bias_acc = np.asarray(self.bias_acc, dtype=np.int64)
        if self.fused_clip_lb is None:
            self.fused_clip_lb = _expected_clip_lb(self.activation, self.out_bounds, self.output_qp)
        self._dense = None

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_count(self) -> int:
        return self.out_dim


@dataclass
class QConvLayer:
    """2-D convolution, quantized; same quantization fields as QLinearLayer."""

    kernel: np.ndarray               # (out_ch, in_ch, kh, kw) int64
    weight_qps: list                 # per-output-channel QuantParams
    bias_acc: np.ndarray             # (out_ch,) int64
    input_qp: QuantParams
    output_qp: QuantParams
    out_bounds: DtypeBounds
    stride: tuple
    padding: tuple
    in_shape: tuple                  # (C, H, W)
    out_shape: tuple                 # (C, H, W)
    activation: str = ACT_NONE
    fused_clip_lb: int = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.int64)
        self.bias_acc = np.asarray(self.bias_acc, dtype=np.int64)
        self.stride = tuple(int(v) for v in self.stride)
        self.padding = tuple(int(v) for v in self.padding)
        self.in_shape = tuple(int(v) for v in self.in_shape)
        self.out_shape = tuple(int(v) for v in self.out_shape)
        if self.fused_clip_lb is None:
            self.fused_clip_lb = _expected_clip_lb(self.activation, self.out_bounds, self.output_qp)
        self._dense = None

    @property
    def out_count(self) -> int:
        c, h, w = self.out_shape
        return c * h * w


@dataclass
class MaxPoolLayer:
    """Windowed integer max; passes quantization parameters through."""

    kernel: int
    stride: int
    in_shape: tuple                  # (C, H, W)
    out_shape: tuple                 # (C, H, W)

    def __post_init__(self):
        self.kernel = int(self.kernel)
        self.stride = int(self.stride)
        self.in_shape = tuple(int(v) for v in self.in_shape)
        self.out_shape = tuple(int(v) for v in self.out_shape)
        self._windows = None

    @property
    def out_count(self) -> int:
        c, h, w = self.out_shape
        return c * h * w

    def window_indices(self) -> list:
        """For each output position, the flat input indices of its window
        (row-major over (C, H, W))."""
        if self._windows is None:
            c, ih, iw = self.in_shape
            _, oh, ow = self.out_shape
            k, s = self.kernel, self.stride
            wins = []
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        idx = [
                            ch * ih * iw + (oy * s + dy) * iw + (ox * s + dx)
                            for dy in range(k)
                            for dx in range(k)
                        ]
                        wins.append(idx)
            self._windows = wins
        return self._windows


Layer = Union[QLinearLayer, QConvLayer, MaxPoolLayer]

ROUND_HALF_UP = "half-up"
ROUND_HALF_EVEN = "half-even"


@dataclass
class QuantModel:
    """An ordered stack of fused quantized layers.  Immutable after load."""

    input_shape: tuple
    input_qp: QuantParams
    input_bounds: DtypeBounds
    layers: list
    num_classes: int
    rounding_mode: str = ROUND_HALF_UP

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        validate_model(self)

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))


@dataclass(frozen=True)
class RobustnessQuery:
    """One local-robustness instance: is every integer input within
    l-infinity distance ``radius`` of ``center`` classified as ``label``?"""

    center: np.ndarray
    label: int
    radius: int
    timeout: float = 300.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.int64).ravel())
        if self.radius < 0:
            raise ValueError("radius must be non-negative")

    def input_box(self, model: QuantModel) -> tuple:
        """Per-pixel integer bounds of the quantized perturbation ball."""
        lb, ub = model.input_bounds.lb, model.input_bounds.ub
        lo = np.maximum(self.center - self.radius, lb)
        hi = np.minimum(self.center + self.radius, ub)
        return lo, hi


def _expected_clip_lb(activation: str, bounds: DtypeBounds, output_qp: QuantParams) -> int:
    if activation == ACT_RELU_FUSED:
        return max(bounds.lb, output_qp.zero_point)
    return bounds.lb


# ---------------------------------------------------------------------------
# Fusion passes
# ---------------------------------------------------------------------------


def fuse_batchnorm(affine: RealAffine, bn: BatchNormParams) -> RealAffine:
    """Fold a batch normalization into the preceding real-valued affine layer.

    Returns a transform computing BN(Wx + b):
        W' = diag(gamma / sqrt(var + eps)) @ W
        b' = gamma * (b - mean) / sqrt(var + eps) + beta

    This pass runs on pre-quantization parameters; it exists here mainly so
    the exporter-side fusion can be cross-checked.
    """
    n_out = affine.weight.shape[0]
    if bn.gamma.shape[0] != n_out:
        raise ModelInvariantError(
            f"batchnorm channels ({bn.gamma.shape[0]}) do not match layer outputs ({n_out})"
        )
    denom = np.sqrt(bn.running_var + bn.epsilon_bn)
    factor = bn.gamma / denom
    w = affine.weight * factor.reshape((n_out,) + (1,) * (affine.weight.ndim - 1))
    b = factor * (affine.bias - bn.running_mean) + bn.beta
    return RealAffine(weight=w, bias=b)


def fuse_relu(layer):
    """Fold a trailing ReLU into the layer's clip: the clip lower bound is
    raised to max(lb, z_y) and the separate max step disappears.  No-op when
    the layer is already fused."""
    if isinstance(layer, MaxPoolLayer):
        raise ModelInvariantError("cannot fuse a ReLU into a max-pool layer")
    if layer.activation == ACT_RELU_FUSED:
        return layer
    kwargs = dict(layer.__dict__)
    kwargs.pop("_dense", None)
    kwargs["activation"] = ACT_RELU_FUSED
    kwargs["fused_clip_lb"] = max(layer.out_bounds.lb, layer.output_qp.zero_point)
    return type(layer)(**kwargs)


# ---------------------------------------------------------------------------
# Dense lowering (shared by inference, intervals, encoder and attack)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DenseAffine:
    """A quantized affine layer lowered to one dense integer matrix of
    zero-point-centered weights: centered[j, i] = w[j, i] - z_w[j] at the
    positions the row actually reads, 0 elsewhere.  The accumulator is then
    exactly centered @ (x - z_x) + bias.

    Convolutions become their im2col matrix; padded taps are dropped (a pad
    pixel holds the input zero point, contributing exactly zero to the
    accumulator).  ``f`` is the per-row requantization factor (s_w*s_x)/s_y,
    evaluated once in that association order.
    """

    centered: np.ndarray   # (out, in) int64, w - z_w at taps
    f: np.ndarray          # (out,) float64
    bias_acc: np.ndarray   # (out,) int64
    z_x: int
    z_y: int
    clip_lb: int
    clip_ub: int
    row_sums: np.ndarray   # (out,) int64, sum_i centered[j, i]
    acc_bound: int         # worst-case |acc| over in-bounds inputs


def dense_affine(layer, in_bounds: DtypeBounds) -> DenseAffine:
    """Lower a QLinearLayer or QConvLayer to DenseAffine (cached)."""
    if layer._dense is not None:
        return layer._dense

    if isinstance(layer, QLinearLayer):
        z_w = np.array([qp.zero_point for qp in layer.weight_qps], dtype=np.int64)
        centered = layer.weights - z_w[:, None]
        qps = layer.weight_qps
        bias = layer.bias_acc
    elif isinstance(layer, QConvLayer):
        centered, qps, bias = _lower_conv(layer)
    else:
        raise TypeError(f"not an affine layer: {type(layer).__name__}")

    f = np.array(
        [(qp.scale * layer.input_qp.scale) / layer.output_qp.scale for qp in qps],
        dtype=np.float64,
    )
    row_sums = centered.sum(axis=1)

    # Worst-case accumulator magnitude over any in-bounds input (exact ints).
    xm_lo = in_bounds.lb - layer.input_qp.zero_point
    xm_hi = in_bounds.ub - layer.input_qp.zero_point
    mags = np.abs(centered).sum(axis=1) * max(abs(xm_lo), abs(xm_hi))
    acc_bound = int(mags.max(initial=0)) + int(np.abs(bias).max(initial=0))
    if acc_bound >= ACC_LIMIT:
        raise AccumulatorOverflowError(
            f"worst-case accumulator {acc_bound} exceeds the int64 budget"
        )

    clip_lb = layer.fused_clip_lb if layer.activation == ACT_RELU_FUSED else layer.out_bounds.lb
    dense = DenseAffine(
        centered=centered,
        f=f,
        bias_acc=np.asarray(bias, dtype=np.int64),
        z_x=layer.input_qp.zero_point,
        z_y=layer.output_qp.zero_point,
        clip_lb=int(clip_lb),
        clip_ub=layer.out_bounds.ub,
        row_sums=row_sums,
        acc_bound=acc_bound,
    )
    layer._dense = dense
    return dense


def _lower_conv(layer: QConvLayer):
    oc, ic, kh, kw = layer.kernel.shape
    _, ih, iw = layer.in_shape
    _, oh, ow = layer.out_shape
    sh, sw = layer.stride
    ph, pw = layer.padding
    n_in = ic * ih * iw
    n_out = oc * oh * ow
    centered = np.zeros((n_out, n_in), dtype=np.int64)
    row = 0
    for ch in range(oc):
        z_w = layer.weight_qps[ch].zero_point
        for oy in range(oh):
            for ox in range(ow):
                for cin in range(ic):
                    for dy in range(kh):
                        y = oy * sh + dy - ph
                        if y < 0 or y >= ih:
                            continue
                        for dx in range(kw):
                            x = ox * sw + dx - pw
                            if x < 0 or x >= iw:
                                continue
                            centered[row, cin * ih * iw + y * iw + x] = \
                                layer.kernel[ch, cin, dy, dx] - z_w
                row += 1
    qps = []
    bias = np.zeros(n_out, dtype=np.int64)
    per_pos = oh * ow
    for ch in range(oc):
        qps.extend([layer.weight_qps[ch]] * per_pos)
        bias[ch * per_pos:(ch + 1) * per_pos] = layer.bias_acc[ch]
    return centered, qps, bias


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def conv_out_extent(in_extent: int, kernel: int, stride: int, padding: int) -> int:
    return (in_extent + 2 * padding - kernel) // stride + 1


def _check_qp_in_bounds(qp: QuantParams, bounds: DtypeBounds, where: str):
    if not bounds.contains(qp.zero_point):
        raise ModelInvariantError(
            f"{where}: zero_point {qp.zero_point} outside dtype bounds [{bounds.lb}, {bounds.ub}]"
        )


def validate_model(model: QuantModel):
    _check_qp_in_bounds(model.input_qp, model.input_bounds, "input_quant")

    shape = model.input_shape
    count = int(np.prod(shape))
    qp = model.input_qp
    bounds = model.input_bounds

    for k, layer in enumerate(model.layers):
        where = f"layers[{k}]"
        if isinstance(layer, MaxPoolLayer):
            if len(shape) != 3:
                raise ModelInvariantError(f"{where}: max-pool needs a (C,H,W) input, got {shape}")
            c, h, w = layer.in_shape
            if tuple(shape) != layer.in_shape:
                raise ModelInvariantError(
                    f"{where}: declared in_shape {layer.in_shape} does not match incoming {shape}"
                )
            oh = conv_out_extent(h, layer.kernel, layer.stride, 0)
            ow = conv_out_extent(w, layer.kernel, layer.stride, 0)
            if layer.out_shape != (c, oh, ow):
                raise ModelInvariantError(
                    f"{where}: out_shape {layer.out_shape} inconsistent with pooling arithmetic "
                    f"(expected {(c, oh, ow)})"
                )
            shape = layer.out_shape
            count = layer.out_count
            continue

        if isinstance(layer, QConvLayer):
            if tuple(shape) != layer.in_shape:
                raise ModelInvariantError(
                    f"{where}: declared in_shape {layer.in_shape} does not match incoming {shape}"
                )
            oc, ic, kh, kw = layer.kernel.shape
            if ic != layer.in_shape[0]:
                raise ModelInvariantError(f"{where}: kernel in-channels {ic} != input channels")
            oh = conv_out_extent(layer.in_shape[1], kh, layer.stride[0], layer.padding[0])
            ow = conv_out_extent(layer.in_shape[2], kw, layer.stride[1], layer.padding[1])
            if layer.out_shape != (oc, oh, ow):
                raise ModelInvariantError(
                    f"{where}: out_shape {layer.out_shape} inconsistent with convolution "
                    f"arithmetic (expected {(oc, oh, ow)})"
                )
            n_ch = oc
            weights_flat = layer.kernel
        elif isinstance(layer, QLinearLayer):
            if layer.in_dim != count:
                raise ModelInvariantError(
                    f"{where}: weight expects {layer.in_dim} inputs but previous layer "
                    f"produces {count}"
                )
            n_ch = layer.out_dim
            weights_flat = layer.weights
        else:
            raise ModelInvariantError(f"{where}: unknown layer type {type(layer).__name__}")

        if len(layer.weight_qps) != n_ch:
            raise ModelInvariantError(
                f"{where}: weight_quant has {len(layer.weight_qps)} entries for {n_ch} output rows"
            )
        if layer.bias_acc.shape[0] != n_ch:
            raise ModelInvariantError(f"{where}: bias_acc length {layer.bias_acc.shape[0]} != {n_ch}")
        if weights_flat.min(initial=0) < WEIGHT_LB or weights_flat.max(initial=0) > WEIGHT_UB:
            raise ModelInvariantError(f"{where}: weight entries outside [{WEIGHT_LB}, {WEIGHT_UB}]")
        for j, wqp in enumerate(layer.weight_qps):
            if not (WEIGHT_LB <= wqp.zero_point <= WEIGHT_UB):
                raise ModelInvariantError(
                    f"{where}.weight_quant[{j}]: zero_point outside [{WEIGHT_LB}, {WEIGHT_UB}]"
                )
        if layer.activation not in (ACT_NONE, ACT_RELU_FUSED):
            raise ModelInvariantError(f"{where}: unknown activation {layer.activation!r}")
        _check_qp_in_bounds(layer.output_qp, layer.out_bounds, f"{where}.output_quant")
        expect = _expected_clip_lb(layer.activation, layer.out_bounds, layer.output_qp)
        if layer.fused_clip_lb != expect:
            raise ModelInvariantError(
                f"{where}: fused_clip_lb {layer.fused_clip_lb} != expected {expect}"
            )
        if layer.input_qp != qp:
            raise ModelInvariantError(f"{where}: input quant does not chain from previous layer")

        qp = layer.output_qp
        bounds = layer.out_bounds
        if isinstance(layer, QConvLayer):
            shape = layer.out_shape
            count = layer.out_count
        else:
            shape = (layer.out_dim,)
            count = layer.out_dim

        # Trigger the worst-case accumulator check at load time.
        dense_affine(layer, _layer_in_bounds(model, k))

    if model.rounding_mode not in (ROUND_HALF_UP, ROUND_HALF_EVEN):
        raise ModelInvariantError(f"unknown rounding_mode {model.rounding_mode!r}")
    last = model.layers[-1] if model.layers else None
    if last is None or isinstance(last, MaxPoolLayer):
        raise ModelInvariantError("model must end with an affine layer producing the logits")
    if count != model.num_classes:
        raise ModelInvariantError(
            f"last layer produces {count} outputs but num_classes = {model.num_classes}"
        )


def _layer_in_bounds(model: QuantModel, k: int) -> DtypeBounds:
    bounds = model.input_bounds
    for layer in model.layers[:k]:
        if not isinstance(layer, MaxPoolLayer):
            bounds = layer.out_bounds
    return bounds


def layer_io(model: QuantModel):
    """Yield (index, layer, input DtypeBounds) over the layer stack."""
    bounds = model.input_bounds
    for k, layer in enumerate(model.layers):
        yield k, layer, bounds
        if not isinstance(layer, MaxPoolLayer):
            bounds = layer.out_bounds


# ---------------------------------------------------------------------------
# File format (UTF-8 JSON, format_version 1)
# ---------------------------------------------------------------------------


def _req(obj: dict, key: str, where: str):
    if key not in obj:
        raise ModelFormatError(f"{where}: missing required field {key!r}")
    return obj[key]


def _parse_quant(obj, where: str, with_bounds: bool):
    if not isinstance(obj, dict):
        raise ModelFormatError(f"{where}: expected an object")
    scale = _req(obj, "scale", where)
    if not isinstance(scale, str):
        raise ModelFormatError(f"{where}.scale: scales must be decimal strings")
    try:
        qp = QuantParams.from_string(scale, int(_req(obj, "zero_point", where)))
    except ModelInvariantError as exc:
        raise ModelInvariantError(f"{where}: {exc}") from exc
    if with_bounds:
        try:
            bounds = DtypeBounds(int(_req(obj, "lb", where)), int(_req(obj, "ub", where)))
        except ModelInvariantError as exc:
            raise ModelInvariantError(f"{where}: {exc}") from exc
        return qp, bounds
    return qp


def _parse_layer(obj: dict, k: int, input_qp: QuantParams):
    where = f"layers[{k}]"
    ltype = _req(obj, "type", where)
    if ltype == "maxpool":
        return MaxPoolLayer(
            kernel=int(_req(obj, "kernel", where)),
            stride=int(_req(obj, "stride", where)),
            in_shape=tuple(_req(obj, "in_shape", where)),
            out_shape=tuple(_req(obj, "out_shape", where)),
        )
    if ltype not in ("qlinear", "qconv"):
        raise ModelFormatError(f"{where}: unknown layer type {ltype!r}")

    wq = _req(obj, "weight_quant", where)
    qps = [_parse_quant(q, f"{where}.weight_quant[{j}]", False) for j, q in enumerate(wq)]
    out_qp, out_bounds = _parse_quant(_req(obj, "output_quant", where), f"{where}.output_quant", True)
    activation = _req(obj, "activation", where)
    common = dict(
        weight_qps=qps,
        bias_acc=np.asarray(_req(obj, "bias_acc", where), dtype=np.int64),
        input_qp=input_qp,
        output_qp=out_qp,
        out_bounds=out_bounds,
        activation=activation,
    )
    try:
        if ltype == "qlinear":
            return QLinearLayer(weights=np.asarray(_req(obj, "weight", where)), **common)
        return QConvLayer(
            kernel=np.asarray(_req(obj, "weight", where)),
            stride=tuple(_req(obj, "stride", where)),
            padding=tuple(_req(obj, "padding", where)),
            in_shape=tuple(_req(obj, "in_shape", where)),
            out_shape=tuple(_req(obj, "out_shape", where)),
            **common,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ModelInvariantError):
            raise
        raise ModelFormatError(f"{where}: {exc}") from exc


def load_model(data: bytes) -> QuantModel:
    """Parse a model file.  Raises ModelFormatError for malformed input and
    ModelInvariantError when a structural invariant fails, naming the layer
    and field."""
    if isinstance(data, (bytes, bytearray)):
        text = data.decode("utf-8")
    else:
        text = data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ModelFormatError("top level must be an object")
    version = _req(obj, "format_version", "top level")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")

    input_qp, input_bounds = _parse_quant(_req(obj, "input_quant", "top level"), "input_quant", True)
    layer_objs = _req(obj, "layers", "top level")
    if not isinstance(layer_objs, list) or not layer_objs:
        raise ModelFormatError("layers must be a non-empty array")

    layers = []
    qp = input_qp
    for k, lobj in enumerate(layer_objs):
        layer = _parse_layer(lobj, k, qp)
        layers.append(layer)
        if not isinstance(layer, MaxPoolLayer):
            qp = layer.output_qp

    last = layers[-1]
    if isinstance(last, MaxPoolLayer):
        raise ModelInvariantError("last layer must be affine (produces the logits)")
    return QuantModel(
        input_shape=tuple(_req(obj, "input_shape", "top level")),
        input_qp=input_qp,
        input_bounds=input_bounds,
        layers=layers,
        num_classes=last.out_count,
        rounding_mode=obj.get("rounding_mode", ROUND_HALF_UP),
    )


def load_model_file(path) -> QuantModel:
    with open(path, "rb") as fh:
        return load_model(fh.read())


def _quant_obj(qp: QuantParams, bounds: DtypeBounds = None) -> dict:
    obj = {"scale": qp.scale_str, "zero_point": qp.zero_point}
    if bounds is not None:
        obj["lb"] = bounds.lb
        obj["ub"] = bounds.ub
    return obj


def serialize_model(model: QuantModel) -> bytes:
    """Inverse of load_model; scale strings are preserved bit for bit."""
    layers = []
    for layer in model.layers:
        if isinstance(layer, MaxPoolLayer):
            layers.append({
                "type": "maxpool",
                "kernel": layer.kernel,
                "stride": layer.stride,
                "in_shape": list(layer.in_shape),
                "out_shape": list(layer.out_shape),
            })
            continue
        obj = {
            "type": "qlinear" if isinstance(layer, QLinearLayer) else "qconv",
            "weight": (layer.weights if isinstance(layer, QLinearLayer) else layer.kernel).tolist(),
            "weight_quant": [_quant_obj(qp) for qp in layer.weight_qps],
            "bias_acc": layer.bias_acc.tolist(),
            "output_quant": _quant_obj(layer.output_qp, layer.out_bounds),
            "activation": layer.activation,
        }
        if isinstance(layer, QConvLayer):
            obj["stride"] = list(layer.stride)
            obj["padding"] = list(layer.padding)
            obj["in_shape"] = list(layer.in_shape)
            obj["out_shape"] = list(layer.out_shape)
        layers.append(obj)
    doc = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(model.input_shape),
        "input_quant": _quant_obj(model.input_qp, model.input_bounds),
        "rounding_mode": model.rounding_mode,
        "layers": layers,
    }
    return json.dumps(doc, indent=1).encode("utf-8")
