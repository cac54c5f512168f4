"""Sound interval and symbolic-bound propagation through a quantized network.

Every neuron gets a concrete integer interval plus (optionally) affine lower
and upper bounds over the input pixels.  Two transformers are specific to
quantized semantics: the rounding step maps input bounds [l, u] of the
pre-round value to [l + eps - 0.5, u + 0.5] for the same eps the ILP encoder
uses, and the clip is handled as a gadget of two ReLUs

    ymax = lbc + ReLU(yhat1 - lbc)
    yq   = ubc - ReLU(ubc - ymax)

with each ReLU relaxed by the standard triangle (upper chord, lower line
with slope 0 or 1).  Boxes use the exact transformer; the relaxation only
affects the symbolic planes.

The analysis treats inputs as reals inside the integer box, then tightens
boxes of integer-valued variables to integers with an outward guard band,
so everything the exact integer semantics can produce stays inside the
reported intervals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import (
    MaxPoolLayer,
    QuantModel,
    RobustnessQuery,
    dense_affine,
    layer_io,
)

# Outward slack absorbing float evaluation-order drift between the plane
# evaluation and exact inference; far below any quantization lattice gap.
PLANE_SLACK = 1e-9
INT_GUARD = 1e-9

# A misclassification gap bound must clear this margin before a target is
# declared impossible.
VERDICT_MARGIN = 1e-6

PHASE_ALWAYS_LB = "always-lb"
PHASE_ALWAYS_UB = "always-ub"
PHASE_ALWAYS_LINEAR = "always-linear"
PHASE_UNKNOWN = "unknown"

VERDICT_ROBUST = "ROBUST"
VERDICT_INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")


@dataclass
class AffineBound:
    """coeffs over the input variables plus a constant term."""

    coeffs: np.ndarray
    const: float


@dataclass
class AbstractState:
    """Bounds for one vector of values.

    ``lower``/``upper`` are (m, n+1) plane matrices over the n input pixels
    (last column is the constant term), or None in box-only mode.
    """

    in_lo: np.ndarray
    in_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    @property
    def symbolic(self) -> bool:
        return self.lower is not None

    def plane_box(self):
        """Evaluate the planes over the input box (sign-split endpoints)."""
        lo = _plane_min(self.lower, self.in_lo, self.in_hi)
        hi = _plane_max(self.upper, self.in_lo, self.in_hi)
        return lo, hi


def _plane_min(planes, in_lo, in_hi):
    c = planes[:, :-1]
    pos = np.maximum(c, 0.0)
    neg = np.minimum(c, 0.0)
    return pos @ in_lo + neg @ in_hi + planes[:, -1]


def _plane_max(planes, in_lo, in_hi):
    c = planes[:, :-1]
    pos = np.maximum(c, 0.0)
    neg = np.minimum(c, 0.0)
    return pos @ in_hi + neg @ in_lo + planes[:, -1]


def input_state(in_lo, in_hi, symbolic: bool = True) -> AbstractState:
    in_lo = np.asarray(in_lo, dtype=np.float64)
    in_hi = np.asarray(in_hi, dtype=np.float64)
    n = in_lo.size
    lower = upper = None
    if symbolic:
        eye = np.hstack([np.eye(n), np.zeros((n, 1))])
        lower = eye.copy()
        upper = eye.copy()
    return AbstractState(in_lo=in_lo, in_hi=in_hi, lo=in_lo.copy(), hi=in_hi.copy(),
                         lower=lower, upper=upper)


def propagate_affine(state: AbstractState, coeff: np.ndarray, const: np.ndarray) -> AbstractState:
    """Exact affine transform y = coeff @ v + const of the abstract state,
    with positive/negative coefficient splitting."""
    pos = np.maximum(coeff, 0.0)
    neg = np.minimum(coeff, 0.0)
    box_lo = pos @ state.lo + neg @ state.hi + const
    box_hi = pos @ state.hi + neg @ state.lo + const
    lower = upper = None
    if state.symbolic:
        lower = pos @ state.lower + neg @ state.upper
        upper = pos @ state.upper + neg @ state.lower
        lower[:, -1] += const - PLANE_SLACK
        upper[:, -1] += const + PLANE_SLACK
        plo = _plane_min(lower, state.in_lo, state.in_hi)
        phi = _plane_max(upper, state.in_lo, state.in_hi)
        box_lo = np.maximum(box_lo - PLANE_SLACK, plo)
        box_hi = np.minimum(box_hi + PLANE_SLACK, phi)
    return AbstractState(in_lo=state.in_lo, in_hi=state.in_hi, lo=box_lo, hi=box_hi,
                         lower=lower, upper=upper)


def propagate_round(state: AbstractState, eps) -> AbstractState:
    """Bounds for yhat1 = Round(yhat0):  eps - 0.5 + yhat0 <= yhat1 <= 0.5 + yhat0.
    The box is tightened to integers (the result is integer-valued)."""
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), state.lo.shape)
    lo = np.ceil(state.lo + eps - 0.5 - INT_GUARD)
    hi = np.floor(state.hi + 0.5 + INT_GUARD)
    lower = upper = None
    if state.symbolic:
        lower = state.lower.copy()
        upper = state.upper.copy()
        lower[:, -1] += eps - 0.5
        upper[:, -1] += 0.5
    return AbstractState(in_lo=state.in_lo, in_hi=state.in_hi, lo=lo, hi=hi,
                         lower=lower, upper=upper)


def _relu(state: AbstractState) -> AbstractState:
    """Abstract ReLU.  Boxes are exact; planes use the triangle relaxation
    with the area-minimizing lower slope (1 if |hi| >= |lo| else 0)."""
    lo = np.maximum(state.lo, 0.0)
    hi = np.maximum(state.hi, 0.0)
    lower = upper = None
    if state.symbolic:
        lower = np.zeros_like(state.lower)
        upper = np.zeros_like(state.upper)
        dead = state.hi <= 0.0
        live = state.lo >= 0.0
        cross = ~dead & ~live
        lower[live] = state.lower[live]
        upper[live] = state.upper[live]
        # dead rows stay identically zero
        if np.any(cross):
            l, u = state.lo[cross], state.hi[cross]
            lam_u = u / (u - l)
            mu = -u * l / (u - l)
            upper[cross] = lam_u[:, None] * state.upper[cross]
            upper[cross, -1] += mu + PLANE_SLACK
            lam_l = (np.abs(u) >= np.abs(l)).astype(np.float64)
            lower[cross] = lam_l[:, None] * state.lower[cross]
    return AbstractState(in_lo=state.in_lo, in_hi=state.in_hi, lo=lo, hi=hi,
                         lower=lower, upper=upper)


def _shift(state: AbstractState, offset: float) -> AbstractState:
    lower = upper = None
    if state.symbolic:
        lower = state.lower.copy()
        upper = state.upper.copy()
        lower[:, -1] += offset
        upper[:, -1] += offset
    return AbstractState(in_lo=state.in_lo, in_hi=state.in_hi,
                         lo=state.lo + offset, hi=state.hi + offset,
                         lower=lower, upper=upper)


def _negate(state: AbstractState) -> AbstractState:
    lower = upper = None
    if state.symbolic:
        lower = -state.upper
        upper = -state.lower
    return AbstractState(in_lo=state.in_lo, in_hi=state.in_hi,
                         lo=-state.hi, hi=-state.lo, lower=lower, upper=upper)


def propagate_clip(state: AbstractState, lbc: int, ubc: int):
    """Clip via the two-ReLU gadget.  Returns (ymax state, yq state, phases).

    Phases are judged from the integer box of the clip input: always-lb when
    it cannot exceed lbc, always-ub when it cannot fall below ubc,
    always-linear when the box sits inside [lbc, ubc].
    """
    if lbc > ubc:
        raise ValueError(f"clip bounds reversed: [{lbc}, {ubc}]")
    ymax = _shift(_relu(_shift(state, -lbc)), lbc)
    yq = _shift(_negate(_relu(_shift(_negate(ymax), ubc))), ubc)

    phases = np.full(state.lo.shape, PHASE_UNKNOWN, dtype=object)
    phases[state.hi <= lbc] = PHASE_ALWAYS_LB
    phases[state.lo >= ubc] = PHASE_ALWAYS_UB
    phases[(state.lo >= lbc) & (state.hi <= ubc)] = PHASE_ALWAYS_LINEAR
    return ymax, yq, phases


def propagate_maxpool(state: AbstractState, layer: MaxPoolLayer, record=None,
                      layer_index: int = 0) -> AbstractState:
    """Windowed max: boxes take the elementwise max over window boxes;
    symbolic bounds fall back to constant planes at the box."""
    wins = layer.window_indices()
    m = len(wins)
    lo = np.empty(m)
    hi = np.empty(m)
    for j, win in enumerate(wins):
        run_lo, run_hi = state.lo[win[0]], state.hi[win[0]]
        for t in range(1, len(win)):
            run_lo = max(run_lo, state.lo[win[t]])
            run_hi = max(run_hi, state.hi[win[t]])
            if record is not None and t < len(win) - 1:
                record(f"L{layer_index}.n{j}.max{t}", run_lo, run_hi)
        lo[j] = run_lo
        hi[j] = run_hi
    lower = upper = None
    if state.symbolic:
        n = state.in_lo.size
        lower = np.zeros((m, n + 1))
        upper = np.zeros((m, n + 1))
        lower[:, -1] = lo
        upper[:, -1] = hi
    return AbstractState(in_lo=state.in_lo, in_hi=state.in_hi, lo=lo, hi=hi,
                         lower=lower, upper=upper)


def round_epsilon(f: float) -> float:
    """The strict-inequality slack for the rounding constraints of a neuron
    with requantization factor f.

    Pre-round values live on the lattice z_y + f*Z.  Written as a dyadic
    rational f = p / 2**e in lowest terms, the fractional parts of f*Z are
    multiples of 2**-e, so no value can sit closer than 2**-e below a
    rounding tie; half that gap (additionally capped by f and by the unit
    gap) can never cut off a reachable value.  For factors with full 52-bit
    denominators the slack degenerates to below one ulp of 0.5, which keeps
    the encoding sound; exact integer re-checking of candidate solutions
    remains the correctness boundary there.
    """
    frac = Fraction(float(f))
    e = frac.denominator.bit_length() - 1
    delta = math.ldexp(1.0, -e) if e < 1074 else 0.0
    return min(f, 1.0, delta) / 2.0


@dataclass
class AnalysisResult:
    """Output of analyze(): a bounds table covering every ILP variable the
    encoder will create, clip phases, and the interval verdict."""

    bounds: dict
    phases: dict
    verdict: str
    gap_upper: dict
    ruled_out: set

    def bounds_json(self) -> str:
        return json.dumps({k: [v.lo, v.hi] for k, v in sorted(self.bounds.items())}, indent=1)


def _propagate(model: QuantModel, in_lo, in_hi, symbolic: bool):
    """Shared engine: walk the stack recording per-variable boxes and clip
    phases; returns (bounds table, phase table, final state)."""
    bounds = {}
    phases = {}
    state = input_state(in_lo, in_hi, symbolic=symbolic)
    for i in range(state.lo.size):
        bounds[f"x{i}"] = Interval(float(state.lo[i]), float(state.hi[i]))

    half_up = model.rounding_mode == "half-up"
    for k, layer, lbnds in layer_io(model):
        if isinstance(layer, MaxPoolLayer):
            def rec(name, lo, hi):
                bounds[name] = Interval(float(lo), float(hi))
            state = propagate_maxpool(state, layer, record=rec, layer_index=k)
            for j in range(state.lo.size):
                bounds[f"L{k}.n{j}.yq"] = Interval(float(state.lo[j]), float(state.hi[j]))
            continue

        dense = dense_affine(layer, lbnds)
        coeff = dense.f[:, None] * dense.centered.astype(np.float64)
        const = dense.z_y + dense.f * (dense.bias_acc - dense.z_x * dense.row_sums).astype(np.float64)
        state = propagate_affine(state, coeff, const)
        # the lower shift's strict-inequality slack only holds for half-up
        # ties; half-even ties can round down, so the slack must vanish
        if half_up:
            eps = np.array([round_epsilon(fv) for fv in dense.f])
        else:
            eps = np.zeros(dense.f.size)
        state = propagate_round(state, eps)
        for j in range(state.lo.size):
            bounds[f"L{k}.n{j}.yhat1"] = Interval(float(state.lo[j]), float(state.hi[j]))
        ymax, yq, layer_phases = propagate_clip(state, dense.clip_lb, dense.clip_ub)
        for j in range(yq.lo.size):
            bounds[f"L{k}.n{j}.ymax"] = Interval(float(ymax.lo[j]), float(ymax.hi[j]))
            bounds[f"L{k}.n{j}.yq"] = Interval(float(yq.lo[j]), float(yq.hi[j]))
            phases[f"L{k}.n{j}"] = layer_phases[j]
        state = yq
    return bounds, phases, state


def structural_bounds(model: QuantModel, query: RobustnessQuery):
    """Plain interval-arithmetic (box only) bounds for every encoder
    variable; the fallback when the symbolic analysis is skipped."""
    lo, hi = query.input_box(model)
    bounds, phases, _ = _propagate(model, lo, hi, symbolic=False)
    return bounds, phases


def analyze(model: QuantModel, query: RobustnessQuery) -> AnalysisResult:
    """Full symbolic analysis of one robustness query.

    The verdict is ROBUST only if, for every target t != label, the upper
    bound on o_t - o_label rules out misclassification under the smallest
    index tie-break (strict for t > label, non-strict for t < label).
    """
    lo, hi = query.input_box(model)
    bounds, phases, state = _propagate(model, lo, hi, symbolic=True)

    lstar = query.label
    m = model.num_classes
    gap_upper = {}
    ruled_out = set()
    for t in range(m):
        if t == lstar:
            continue
        # Upper bound of o_t - o_lstar: maximize the affine difference plane
        # over the input box; also take the box difference, keep the tighter.
        diff = state.upper[t] - state.lower[lstar]
        ub_plane = float(_plane_max(diff[None, :], state.in_lo, state.in_hi)[0])
        ub_box = float(state.hi[t] - state.lo[lstar])
        ub = min(ub_plane, ub_box)
        gap_upper[t] = ub
        threshold = 1.0 if t > lstar else 0.0
        if ub < threshold - VERDICT_MARGIN:
            ruled_out.add(t)

    verdict = VERDICT_ROBUST if len(ruled_out) == m - 1 else VERDICT_INCONCLUSIVE
    return AnalysisResult(bounds=bounds, phases=phases, verdict=verdict,
                          gap_upper=gap_upper, ruled_out=ruled_out)
