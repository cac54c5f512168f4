"""Gradient-based counterexample search.

The quantized network is mirrored by a float "dummy network" whose forward
pass reproduces the integer semantics exactly (same affine map, same
rounding, same clip).  Rounding is non-differentiable, so the backward pass
treats every Round node as identity while the forward value path keeps the
truly rounded activations; this is the detach rewriting

    y = Round(x) + x - detach(x)

evaluated by hand: values flow through Round, gradients flow through the
identity.  Clip and max contribute subgradient 1 inside their linear region
(including exactly at the kinks) and 0 outside.

On top of that, projected gradient descent maximizes the cross-entropy of
the true label inside the integer perturbation ball; every iterate is
rounded to integers and validated against exact inference before being
reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .inference import forward, round_mode, validate_counterexample
from .model import MaxPoolLayer, QuantModel, RobustnessQuery, dense_affine, layer_io


@dataclass
class AttackConfig:
    """step_size is in integer input units; None means radius / 7."""

    step_size: float = None
    iterations: int = 7
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class _DummyLayer:
    kind: str                   # "affine" | "maxpool"
    A: np.ndarray = None        # (out, in) float
    c: np.ndarray = None        # (out,) float
    clip_lb: int = 0
    clip_ub: int = 0
    windows: list = None


class DummyNet:
    """Float mirror of a QuantModel for gradient computation."""

    def __init__(self, layers, rounding_mode, out_scale, out_zero, num_classes):
        self.layers = layers
        self.rounding_mode = rounding_mode
        self.out_scale = out_scale
        self.out_zero = out_zero
        self.num_classes = num_classes

    def forward_exact(self, x) -> np.ndarray:
        """Exact-mode pass: true Round and Clip at every layer.  On integer
        inputs this reproduces the integer inference logits."""
        v = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            if layer.kind == "maxpool":
                v = np.array([v[w].max() for w in layer.windows])
                continue
            y0 = layer.A @ v + layer.c
            y1 = round_mode(y0, self.rounding_mode).astype(np.float64)
            v = np.clip(y1, layer.clip_lb, layer.clip_ub)
        return v


def build_dummy(model: QuantModel, validate: bool = True, n_check: int = 100,
                seed: int = 0) -> DummyNet:
    """Reconstruct each layer's requantization as one float affine map
    A x + c (pre-round value), keeping round/clip markers.  With
    ``validate`` the exact-mode forward is cross-checked against integer
    inference on random in-bounds inputs."""
    layers = []
    for k, layer, in_bounds in layer_io(model):
        if isinstance(layer, MaxPoolLayer):
            layers.append(_DummyLayer(kind="maxpool", windows=layer.window_indices()))
            continue
        dense = dense_affine(layer, in_bounds)
        A = dense.f[:, None] * dense.centered.astype(np.float64)
        c = dense.z_y + dense.f * (dense.bias_acc - dense.z_x * dense.row_sums).astype(np.float64)
        layers.append(_DummyLayer(kind="affine", A=A, c=c,
                                  clip_lb=dense.clip_lb, clip_ub=dense.clip_ub))
    last = model.layers[-1]
    net = DummyNet(layers, model.rounding_mode, last.output_qp.scale,
                   last.output_qp.zero_point, model.num_classes)

    if validate:
        rng = np.random.default_rng(seed)
        lb, ub = model.input_bounds.lb, model.input_bounds.ub
        for _ in range(n_check):
            x = rng.integers(lb, ub + 1, size=model.input_size)
            got = net.forward_exact(x)
            want = forward(model, x)
            if not np.array_equal(got.astype(np.int64), want):
                raise AssertionError("dummy network disagrees with integer inference")
    return net


def forward_backward(net: DummyNet, x, label: int):
    """Forward pass with rounded values, backward pass with round treated as
    identity, evaluated along the rounded forward activations.

    Returns (logits, gradient of the label's cross-entropy loss w.r.t. x).
    """
    v = np.asarray(x, dtype=np.float64)
    tape = []
    for layer in net.layers:
        if layer.kind == "maxpool":
            arg = np.array([w[int(np.argmax(v[w]))] for w in layer.windows])
            tape.append(("maxpool", arg, v.size))
            v = np.array([v[w].max() for w in layer.windows])
            continue
        y0 = layer.A @ v + layer.c
        y1 = round_mode(y0, net.rounding_mode).astype(np.float64)
        # subgradient 1 inside the clip (kinks count as inside), judged at
        # the rounded value actually propagated forward
        mask = (y1 >= layer.clip_lb) & (y1 <= layer.clip_ub)
        tape.append(("affine", layer.A, mask))
        v = np.clip(y1, layer.clip_lb, layer.clip_ub)

    logits = v
    z = net.out_scale * (logits - net.out_zero)
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    g = net.out_scale * (p - np.eye(net.num_classes)[label])  # d(-log p_label)/d logits

    for entry in reversed(tape):
        if entry[0] == "maxpool":
            _, arg, n_in = entry
            nxt = np.zeros(n_in)
            np.add.at(nxt, arg, g)
            g = nxt
        else:
            _, A, mask = entry
            g = A.T @ (g * mask)
    return logits, g


def pgd_attack(model: QuantModel, query: RobustnessQuery, config: AttackConfig = None,
               net: DummyNet = None, deadline: float = None):
    """Projected gradient ascent on the label's cross-entropy.

    Iterates x <- Proj(x + alpha * sign(grad)) inside the integer-unit ball,
    rounding each iterate and checking it with exact inference.  Returns the
    first validated counterexample or None.
    """
    import time

    config = config or AttackConfig()
    if query.radius == 0:
        return None
    if net is None:
        net = build_dummy(model, validate=False)
    lo, hi = query.input_box(model)
    lo = lo.astype(np.float64)
    hi = hi.astype(np.float64)
    alpha = config.step_size if config.step_size is not None else query.radius / 7.0
    rng = np.random.default_rng(config.seed)

    for restart in range(config.restarts):
        if restart == 0:
            x = query.center.astype(np.float64)
        else:
            x = rng.integers(lo.astype(np.int64), hi.astype(np.int64) + 1,
                             size=lo.size).astype(np.float64)
            cand = x.astype(np.int64)
            if validate_counterexample(model, query, cand):
                return cand
        for _ in range(config.iterations):
            if deadline is not None and time.monotonic() > deadline:
                return None
            _, grad = forward_backward(net, x, query.label)
            x = np.clip(x + alpha * np.sign(grad), lo, hi)
            cand = np.clip(round_mode(x, model.rounding_mode), lo, hi).astype(np.int64)
            if validate_counterexample(model, query, cand):
                return cand
    return None
