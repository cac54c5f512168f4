"""Shared test machinery: toy model builders, exhaustive oracles, and an
exact-arithmetic LP feasibility checker.

Toy generators draw scales from a dyadic grid (k / 2**t).  Products and
quotients of such scales are again dyadic with small exponents, so every
pre-round value in these models is computed exactly in double precision;
rounding ties are then genuinely deterministic and the encoding/inference
agreement can be tested to the last integer.  Scale strings that are not
dyadic (e.g. "0.1") are exercised separately in sampled tests.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from qnnverify.model import (
    DtypeBounds,
    QLinearLayer,
    QuantModel,
    QuantParams,
    RobustnessQuery,
)
from qnnverify.inference import predict


def qp(scale, zero_point):
    return QuantParams(scale=float(scale), zero_point=int(zero_point))


def dyadic_choice(rng, numerators, shift):
    return float(int(rng.choice(numerators))) / (2 ** shift)


def make_linear_layer(rng, n_in, n_out, input_qp, out_bounds, activation, out_z_hi=8):
    weights = rng.integers(-4, 5, size=(n_out, n_in))
    while not np.any(weights):
        weights = rng.integers(-4, 5, size=(n_out, n_in))
    w_qps = [qp(dyadic_choice(rng, [1, 2, 3], 3), int(rng.integers(-2, 3))) for _ in range(n_out)]
    s_y = dyadic_choice(rng, [1, 2, 4], 1)
    z_y = int(rng.integers(out_bounds.lb, min(out_bounds.ub, out_z_hi) + 1))
    return QLinearLayer(
        weights=weights,
        weight_qps=w_qps,
        bias_acc=rng.integers(-20, 21, size=n_out),
        input_qp=input_qp,
        output_qp=qp(s_y, z_y),
        out_bounds=out_bounds,
        activation=activation,
    )


def random_toy_model(rng, n_in=None, hidden_layers=None, n_out=None) -> QuantModel:
    """2-3 inputs bounded [0,15], 1-2 hidden layers of <=6 neurons, 2-3
    outputs, random valid (dyadic) quantization parameters."""
    n_in = n_in or int(rng.integers(2, 4))
    n_hidden = hidden_layers if hidden_layers is not None else int(rng.integers(1, 3))
    n_out = n_out or int(rng.integers(2, 4))
    in_bounds = DtypeBounds(0, 15)
    act_bounds = DtypeBounds(0, 15)
    input_qp = qp(dyadic_choice(rng, [1, 2, 4], 2), int(rng.integers(0, 8)))

    layers = []
    cur_qp, cur_n = input_qp, n_in
    for _ in range(n_hidden):
        width = int(rng.integers(2, 7))
        act = "relu" if rng.random() < 0.7 else "none"
        layer = make_linear_layer(rng, cur_n, width, cur_qp, act_bounds, act)
        layers.append(layer)
        cur_qp, cur_n = layer.output_qp, width
    last = make_linear_layer(rng, cur_n, n_out, cur_qp, DtypeBounds(0, 255), "none",
                             out_z_hi=20)
    layers.append(last)
    return QuantModel(input_shape=(n_in,), input_qp=input_qp, input_bounds=in_bounds,
                      layers=layers, num_classes=n_out)


def random_query(rng, model: QuantModel, radius=None) -> RobustnessQuery:
    """Query whose center the model classifies correctly by construction."""
    lb, ub = model.input_bounds.lb, model.input_bounds.ub
    center = rng.integers(lb, ub + 1, size=model.input_size)
    label = predict(model, center)
    r = radius if radius is not None else int(rng.choice([1, 2]))
    return RobustnessQuery(center=center, label=label, radius=r, timeout=120.0)


def ball_points(model: QuantModel, query: RobustnessQuery):
    lo, hi = query.input_box(model)
    for combo in itertools.product(*[range(int(lo[i]), int(hi[i]) + 1) for i in range(lo.size)]):
        yield np.array(combo, dtype=np.int64)


def exhaustive_verdict(model: QuantModel, query: RobustnessQuery):
    """Ground truth by enumerating every integer input in the ball."""
    for x in ball_points(model, query):
        if predict(model, x) != query.label:
            return "UNSAFE", x
    return "ROBUST", None


# ---------------------------------------------------------------------------
# Exact rational LP feasibility (Fourier-Motzkin), oracle for the simplex
# ---------------------------------------------------------------------------


def fm_feasible(rows, bounds) -> bool:
    """Decide feasibility of {A x <= b, lo <= x <= hi} exactly.

    rows: list of (coeff list, rhs); bounds: list of (lo, hi), values must
    be rationals/ints/floats (converted exactly).  Only for tiny systems.
    """
    n = len(bounds)
    ineqs = []  # (coeffs tuple, rhs) meaning sum c_i x_i <= rhs
    for cs, rhs in rows:
        ineqs.append(([Fraction(c) for c in cs], Fraction(rhs)))
    for i, (lo, hi) in enumerate(bounds):
        e = [Fraction(0)] * n
        e[i] = Fraction(1)
        ineqs.append((list(e), Fraction(hi)))
        e2 = [Fraction(0)] * n
        e2[i] = Fraction(-1)
        ineqs.append((e2, -Fraction(lo)))

    for k in range(n):  # eliminate variable k
        pos, neg, rest = [], [], []
        for cs, rhs in ineqs:
            if cs[k] > 0:
                pos.append((cs, rhs))
            elif cs[k] < 0:
                neg.append((cs, rhs))
            else:
                rest.append((cs, rhs))
        new = rest
        for cp, rp in pos:
            for cn, rn in neg:
                # combine so x_k cancels: cp/|cp_k| + cn/|cn_k|
                a, bq = cp[k], -cn[k]
                cs = [c / a + d / bq for c, d in zip(cp, cn)]
                new.append((cs, rp / a + rn / bq))
        ineqs = []
        seen = set()
        for cs, rhs in new:
            key = tuple(cs[k + 1:]) + (rhs,)
            if key not in seen:
                seen.add(key)
                ineqs.append((cs, rhs))
    for cs, rhs in ineqs:
        if rhs < 0:
            return False
    return True
