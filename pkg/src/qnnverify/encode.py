"""Translate a quantized model plus a robustness query into pure-integer
feasibility programs.

Per affine neuron the rounding step is captured by the constraint pair

    yhat1 - [z_y + f*(sum_i (w-z_w)(x-z_x) + b_acc)] <= 0.5
    [z_y + f*(sum_i (w-z_w)(x-z_x) + b_acc)] - yhat1 <= 0.5 - eps

whose unique integer solution is the half-up rounding of the pre-round
value; no real-valued temporary ever appears in the emitted model.  Clips
become a max-with-lb / min-with-ub gadget pair linearized with the big-M
method and fresh binaries; max pooling becomes a chain of the same max
gadget.  One feasibility model is emitted per adversarial target label;
any feasible assignment's input part is a counterexample candidate.

Interval bounds, when supplied, tighten every variable and let gadgets
whose phase is already decided collapse to constants or equalities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .intervals import (
    PHASE_ALWAYS_LB,
    PHASE_ALWAYS_LINEAR,
    PHASE_ALWAYS_UB,
    VERDICT_MARGIN,
    round_epsilon,
    structural_bounds,
)
from .inference import round_mode
from .model import (
    ROUND_HALF_UP,
    MaxPoolLayer,
    QuantModel,
    RobustnessQuery,
    dense_affine,
    layer_io,
)

INT = "integer"
BIN = "binary"

FALLBACK_BIG_M = float(2**20)


class EncodingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Var:
    """One ILP variable.  Bounds are fixed at creation; integer variables
    carry integral endpoints."""

    name: str
    kind: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise EncodingError(f"{self.name}: bounds reversed [{self.lo}, {self.hi}]")


Operand = Union[Var, int, float]

LE = "<="
GE = ">="
EQ = "="


@dataclass(frozen=True)
class LinConstraint:
    coeffs: dict               # Var -> float
    sense: str
    rhs: float
    name: str = ""

    def __post_init__(self):
        for v, c in self.coeffs.items():
            if not np.isfinite(c):
                raise EncodingError(f"constraint {self.name}: non-finite coefficient on {v.name}")
        if not np.isfinite(self.rhs):
            raise EncodingError(f"constraint {self.name}: non-finite rhs")


@dataclass
class ILPModel:
    """Variables plus linear constraints; pure feasibility (no objective)."""

    name: str = ""
    vars: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    _names: set = field(default_factory=set)

    def new_var(self, name: str, kind: str, lo: float, hi: float) -> Var:
        if name in self._names:
            raise EncodingError(f"duplicate variable name {name}")
        if kind == INT:
            lo, hi = float(np.ceil(lo)), float(np.floor(hi))
        v = Var(name=name, kind=kind, lo=float(lo), hi=float(hi))
        self._names.add(name)
        self.vars.append(v)
        return v

    def add(self, terms, sense: str, rhs: float, name: str = ""):
        """Add a constraint from (coef, operand) terms; constant operands
        fold into the right-hand side."""
        coeffs = {}
        rhs = float(rhs)
        for coef, op in terms:
            if isinstance(op, Var):
                coeffs[op] = coeffs.get(op, 0.0) + float(coef)
            else:
                rhs -= float(coef) * float(op)
        self.constraints.append(LinConstraint(coeffs=coeffs, sense=sense, rhs=rhs, name=name))

    def copy(self, name: str = None) -> "ILPModel":
        return ILPModel(name=name if name is not None else self.name,
                        vars=list(self.vars), constraints=list(self.constraints),
                        _names=set(self._names))

    def var_by_name(self, name: str) -> Var:
        for v in self.vars:
            if v.name == name:
                return v
        raise KeyError(name)


def op_bounds(op: Operand):
    if isinstance(op, Var):
        return op.lo, op.hi
    return float(op), float(op)


def gadget_big_m(*ops) -> float:
    los, his = [], []
    for op in ops:
        lo, hi = op_bounds(op)
        los.append(lo)
        his.append(hi)
    if not all(np.isfinite(v) for v in los + his):
        return FALLBACK_BIG_M
    return (max(his) - min(los)) + 1.0


def encode_max(ilp: ILPModel, z: Var, x: Operand, y: Operand, M: float):
    """z = max(x, y) with the six-constraint big-M gadget; the same encoding
    is used when x or y is a constant."""
    bx = ilp.new_var(f"{z.name}.bx", BIN, 0, 1)
    by = ilp.new_var(f"{z.name}.by", BIN, 0, 1)
    ilp.add([(1, bx), (1, by)], EQ, 1)
    ilp.add([(1, x), (-1, z)], LE, 0)
    ilp.add([(1, y), (-1, z)], LE, 0)
    ilp.add([(1, x), (-1, z), (M, by)], GE, 0)
    ilp.add([(1, y), (-1, z), (M, bx)], GE, 0)
    ilp.add([(1, y), (-1, x), (M, bx)], GE, 0)
    return bx, by


def encode_min(ilp: ILPModel, z: Var, x: Operand, y: Operand, M: float):
    """z = min(x, y); the max gadget with every comparison negated."""
    bx = ilp.new_var(f"{z.name}.bx", BIN, 0, 1)
    by = ilp.new_var(f"{z.name}.by", BIN, 0, 1)
    ilp.add([(1, bx), (1, by)], EQ, 1)
    ilp.add([(1, z), (-1, x)], LE, 0)
    ilp.add([(1, z), (-1, y)], LE, 0)
    ilp.add([(1, x), (-1, z), (-M, by)], LE, 0)
    ilp.add([(1, y), (-1, z), (-M, bx)], LE, 0)
    ilp.add([(1, y), (-1, x), (-M, bx)], LE, 0)
    return bx, by


def encode_input(ilp: ILPModel, query: RobustnessQuery, model: QuantModel) -> list:
    """One integer variable per input pixel, bounded by the quantized
    perturbation ball intersected with the input dtype bounds."""
    lo, hi = query.input_box(model)
    return [ilp.new_var(f"x{i}", INT, int(lo[i]), int(hi[i])) for i in range(lo.size)]


class _BoundsTable:
    """Structural box bounds, optionally intersected with a supplied
    (interval-analysis) table."""

    def __init__(self, model, query, supplied):
        struct, struct_phases = structural_bounds(model, query)
        self.struct = struct
        self.struct_phases = struct_phases
        self.supplied = supplied or {}

    def get(self, name: str, default=None):
        iv = self.struct.get(name)
        if iv is None:
            return default
        lo, hi = iv.lo, iv.hi
        sup = self.supplied.get(name)
        if sup is not None:
            slo, shi = (sup.lo, sup.hi) if hasattr(sup, "lo") else (sup[0], sup[1])
            lo, hi = max(lo, slo), min(hi, shi)
        return lo, hi


def encode_affine_round(ilp: ILPModel, dense, in_ops: list, layer_index: int,
                        table: _BoundsTable, rounding: str) -> list:
    """Encode steps (i)+(ii) of one affine layer: per neuron, the two
    constraints pinning the integer post-round variable.  Inputs that are
    already constants fold away; a neuron whose inputs are all constant is
    evaluated outright with the exact inference arithmetic."""
    if rounding != ROUND_HALF_UP:
        raise EncodingError(
            f"rounding mode {rounding!r} is not expressible by the strict-inequality "
            "encoding; only half-up models can be verified by ILP"
        )
    out_ops = []
    m = dense.centered.shape[0]
    const_in = all(not isinstance(op, Var) for op in in_ops)
    if const_in:
        x = np.array([int(op) for op in in_ops], dtype=np.int64)
        xm = x - dense.z_x
        acc = dense.centered @ xm + dense.bias_acc
        yhat0 = dense.z_y + dense.f * acc
        yhat1 = round_mode(yhat0, rounding)
        return [int(v) for v in yhat1]

    for j in range(m):
        coefs = dense.f[j] * dense.centered[j].astype(np.float64)
        d = dense.z_y + dense.f[j] * float(dense.bias_acc[j] - dense.z_x * dense.row_sums[j])
        eps = round_epsilon(dense.f[j])
        name = f"L{layer_index}.n{j}.yhat1"
        lo, hi = table.get(name)
        y1 = ilp.new_var(name, INT, lo, hi)
        terms_fwd = [(1.0, y1)] + [(-coefs[i], op) for i, op in enumerate(in_ops) if coefs[i] != 0.0]
        terms_rev = [(-1.0, y1)] + [(coefs[i], op) for i, op in enumerate(in_ops) if coefs[i] != 0.0]
        ilp.add(terms_fwd, LE, 0.5 + d, name=f"{name}.up")
        ilp.add(terms_rev, LE, 0.5 - eps - d, name=f"{name}.dn")
        out_ops.append(y1)
    return out_ops


def encode_clip(ilp: ILPModel, y1_op: Operand, lbc: int, ubc: int, *,
                name_prefix: str, table: _BoundsTable = None, phase: str = None,
                relu_zero_point: int = None) -> Operand:
    """Encode Clip(y1, lbc, ubc) as Encode_max with lbc then Encode_min with
    ubc.  A known phase (or bounds that already decide one side) collapses
    the corresponding gadget.  For a layer whose ReLU was *not* fused,
    ``relu_zero_point`` emits the additional max-with-zero-point gadget on
    the clipped value."""
    if lbc > ubc:
        raise EncodingError(f"clip bounds reversed: [{lbc}, {ubc}]")

    def lookup(suffix, default):
        if table is None:
            return default
        return table.get(f"{name_prefix}.{suffix}", default)

    if not isinstance(y1_op, Var):
        v = int(min(max(int(y1_op), lbc), ubc))
        if relu_zero_point is not None:
            v = max(v, relu_zero_point)
        return v

    y_lo, y_hi = y1_op.lo, y1_op.hi

    if phase == PHASE_ALWAYS_LB:
        out = lbc
    elif phase == PHASE_ALWAYS_UB:
        out = ubc
    elif phase == PHASE_ALWAYS_LINEAR:
        yq = ilp.new_var(f"{name_prefix}.yq", INT, max(y_lo, lbc), min(y_hi, ubc))
        ilp.add([(1, yq), (-1, y1_op)], EQ, 0, name=f"{name_prefix}.linear")
        out = yq
    else:
        # stage 1: ymax = max(y1, lbc)
        if y_lo >= lbc:
            ymax_op = y1_op
        elif y_hi <= lbc:
            ymax_op = lbc
        else:
            lo, hi = lookup("ymax", (max(y_lo, lbc), max(y_hi, lbc)))
            ymax = ilp.new_var(f"{name_prefix}.ymax", INT, lo, hi)
            encode_max(ilp, ymax, y1_op, lbc, gadget_big_m(y1_op, lbc, ymax))
            ymax_op = ymax
        # stage 2: yq = min(ymax, ubc)
        m_lo, m_hi = op_bounds(ymax_op)
        if m_hi <= ubc:
            out = ymax_op
        elif m_lo >= ubc:
            out = ubc
        else:
            suffix = "yq" if relu_zero_point is None else "yhat2"
            lo, hi = lookup(suffix, (min(m_lo, ubc), min(m_hi, ubc)))
            yq = ilp.new_var(f"{name_prefix}.{suffix}", INT, lo, hi)
            encode_min(ilp, yq, ymax_op, ubc, gadget_big_m(ymax_op, ubc, yq))
            out = yq

    if relu_zero_point is not None:
        z = relu_zero_point
        if not isinstance(out, Var):
            return max(int(out), z)
        if out.lo >= z:
            return out
        if out.hi <= z:
            return z
        yq = ilp.new_var(f"{name_prefix}.yq", INT, max(out.lo, z), max(out.hi, z))
        encode_max(ilp, yq, out, z, gadget_big_m(out, z, yq))
        return yq
    return out


def encode_maxpool(ilp: ILPModel, layer: MaxPoolLayer, in_ops: list, layer_index: int,
                   table: _BoundsTable) -> list:
    out_ops = []
    for j, win in enumerate(layer.window_indices()):
        ops = [in_ops[i] for i in win]
        run = ops[0]
        for t in range(1, len(ops)):
            nxt = ops[t]
            a_lo, a_hi = op_bounds(run)
            b_lo, b_hi = op_bounds(nxt)
            last = t == len(ops) - 1
            name = f"L{layer_index}.n{j}.yq" if last else f"L{layer_index}.n{j}.max{t}"
            if a_lo >= b_hi:
                merged = run
            elif b_lo >= a_hi:
                merged = nxt
            elif not isinstance(run, Var) and not isinstance(nxt, Var):
                merged = max(int(run), int(nxt))
            else:
                lo, hi = table.get(name)
                z = ilp.new_var(name, INT, lo, hi)
                encode_max(ilp, z, run, nxt, gadget_big_m(run, nxt, z))
                merged = z
            run = merged
        out_ops.append(run)
    return out_ops


def encode_misclassification(ilp: ILPModel, logit_ops: list, lstar: int, t: int) -> bool:
    """Require target t to win the argmax against lstar: strict when
    t > lstar, non-strict when t < lstar (ties fall to the smaller index).
    Returns False when constant logits already contradict the requirement."""
    delta = 1.0 if t > lstar else 0.0
    o_l, o_t = logit_ops[lstar], logit_ops[t]
    if not isinstance(o_l, Var) and not isinstance(o_t, Var):
        return float(o_t) >= float(o_l) + delta
    ilp.add([(1, o_l), (-1, o_t)], LE, -delta, name=f"adv.t{t}")
    return True


def _network_ops(ilp: ILPModel, model: QuantModel, query: RobustnessQuery,
                 table: _BoundsTable, phases: dict):
    ops = encode_input(ilp, query, model)
    for k, layer, in_bounds in layer_io(model):
        if isinstance(layer, MaxPoolLayer):
            ops = encode_maxpool(ilp, layer, ops, k, table)
            continue
        dense = dense_affine(layer, in_bounds)
        y1_ops = encode_affine_round(ilp, dense, ops, k, table, model.rounding_mode)
        nxt = []
        for j, y1 in enumerate(y1_ops):
            prefix = f"L{k}.n{j}"
            phase = phases.get(prefix) if phases else None
            nxt.append(encode_clip(ilp, y1, dense.clip_lb, dense.clip_ub,
                                   name_prefix=prefix, table=table, phase=phase))
        ops = nxt
    return ops


def encode_query(model: QuantModel, query: RobustnessQuery, bounds: dict = None,
                 phases: dict = None, skip_targets: set = None) -> list:
    """Build one feasibility ILP per adversarial target not already ruled
    out.  Returns [(target label, ILPModel), ...]; a feasible model's input
    assignment is a counterexample candidate for that target."""
    table = _BoundsTable(model, query, bounds)
    base = ILPModel(name="base")
    logit_layer = len(model.layers) - 1
    logits = _network_ops(base, model, query, table, phases or {})

    lstar = query.label
    out = []
    for t in range(model.num_classes):
        if t == lstar:
            continue
        if skip_targets and t in skip_targets:
            continue
        if bounds is not None:
            # box-level pruning from the supplied table
            lo_l, _ = table.get(f"L{logit_layer}.n{lstar}.yq")
            _, hi_t = table.get(f"L{logit_layer}.n{t}.yq")
            threshold = 1.0 if t > lstar else 0.0
            if hi_t - lo_l < threshold - VERDICT_MARGIN:
                continue
        ilp = base.copy(name=f"target{t}")
        if not encode_misclassification(ilp, logits, lstar, t):
            continue
        out.append((t, ilp))
    return out
