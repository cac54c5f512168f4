"""Exact feasibility solver for the emitted integer programs.

Branch-and-bound over an LP relaxation solved with a bounded-variable
primal simplex (phase 1 only: the models carry no objective).  Floating
point runs the search; correctness does not rest on it: every candidate
integer assignment is re-checked against all constraints in exact rational
arithmetic before FEASIBLE is returned, and INFEASIBLE is only reported
once the search tree is exhausted.

Branching follows the gadget structure: fractional binaries first (most
fractional wins), then general integers; the walk is a depth-first dive
with a best-node restart every 256 nodes.  Per-node bound propagation over
constraint activities prunes most gadget disjunctions before the LP runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .encode import BIN, EQ, GE, INT, LE, ILPModel

FEAS_TOL = 1e-7          # phase-1 objective threshold
INT_TOL = 1e-6           # integrality tolerance inside the LP
PIVOT_TOL = 1e-9
PRICE_TOL = 1e-9
RESTART_EVERY = 256
REFACTOR_EVERY = 128

LP_OPTIMAL = "optimal"
LP_INFEASIBLE = "infeasible"
LP_UNBOUNDED = "unbounded"

FEASIBLE = "FEASIBLE"
INFEASIBLE = "INFEASIBLE"
TIMEOUT = "TIMEOUT"


class NumericalDistressError(RuntimeError):
    """LP cycling persisted after the anti-cycling fallback."""


@dataclass
class LPRelaxation:
    """Standard-form rows A x (+ slack) = b with explicit variable bounds;
    integrality dropped but the integer feasible set unchanged."""

    A: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    n_struct: int


@dataclass
class LPResult:
    status: str
    x: np.ndarray = None
    iterations: int = 0


@dataclass
class SolveResult:
    status: str
    witness: dict = None
    stats: dict = field(default_factory=dict)


def _var_arrays(ilp: ILPModel):
    lo = np.empty(len(ilp.vars))
    hi = np.empty(len(ilp.vars))
    for i, v in enumerate(ilp.vars):
        if v.kind in (INT, BIN):
            lo[i] = np.ceil(v.lo - 1e-9)
            hi[i] = np.floor(v.hi + 1e-9)
        else:
            lo[i] = v.lo
            hi[i] = v.hi
    return lo, hi


def build_relaxation(ilp: ILPModel, lo=None, hi=None) -> LPRelaxation:
    """Normalize to A x + s = b.  >= rows are negated; equality rows get a
    slack fixed at zero so every row has one."""
    index = {v: i for i, v in enumerate(ilp.vars)}
    n = len(ilp.vars)
    m = len(ilp.constraints)
    if lo is None or hi is None:
        lo, hi = _var_arrays(ilp)
    A = np.zeros((m, n + m))
    b = np.empty(m)
    s_lo = np.zeros(m)
    s_hi = np.full(m, np.inf)
    for r, con in enumerate(ilp.constraints):
        sign = -1.0 if con.sense == GE else 1.0
        for v, c in con.coeffs.items():
            A[r, index[v]] = sign * c
        b[r] = sign * con.rhs
        A[r, n + r] = 1.0
        if con.sense == EQ:
            s_hi[r] = 0.0
    return LPRelaxation(A=A, b=b, lo=np.concatenate([lo, s_lo]),
                        hi=np.concatenate([hi, s_hi]), n_struct=n)


def solve_lp(relax: LPRelaxation, maxiter: int = None, objective: np.ndarray = None) -> LPResult:
    """Bounded-variable primal simplex.

    Phase 1 starts every column at a bound, covers the residual with
    artificial variables and minimizes their sum; Dantzig pricing with a
    switch to Bland's rule when the objective stalls.  When ``objective``
    (a cost vector over all relaxation columns, minimized) is given, a
    phase 2 continues from the feasible basis.
    """
    A, b = relax.A, relax.b
    m, n = A.shape
    if m == 0:
        x = np.clip(0.0, relax.lo, relax.hi)
        return LPResult(LP_OPTIMAL, x[: relax.n_struct] if x.ndim else x, 0)

    lo = relax.lo.copy()
    hi = relax.hi.copy()

    # nonbasic start: every column at the finite bound nearest zero
    x = np.where(np.abs(lo) <= np.abs(np.where(np.isfinite(hi), hi, np.inf)), lo, hi)
    x = np.where(np.isfinite(x), x, 0.0)
    at_upper = x == hi

    r = b - A @ x
    art_sign = np.where(r >= 0, 1.0, -1.0)
    A_full = np.hstack([A, np.diag(art_sign)])
    lo = np.concatenate([lo, np.zeros(m)])
    hi = np.concatenate([hi, np.full(m, np.inf)])
    x = np.concatenate([x, np.abs(r)])
    at_upper = np.concatenate([at_upper, np.zeros(m, dtype=bool)])
    n_all = n + m

    basis = np.arange(n, n_all)
    in_basis = np.zeros(n_all, dtype=bool)
    in_basis[basis] = True
    Binv = np.diag(art_sign)  # inverse of the artificial basis

    if maxiter is None:
        maxiter = 200 * (m + n)
    state = {"iters": 0, "Binv": Binv}

    def run(c, phase_cap):
        bland = False
        stall = 0
        last_obj = np.inf
        Binv = state["Binv"]
        steps = 0
        while True:
            if steps >= phase_cap:
                raise NumericalDistressError(
                    f"simplex exceeded {phase_cap} iterations "
                    f"(anti-cycling fallback active: {bland})"
                )
            obj = float(c[basis] @ x[basis])
            if obj < last_obj - 1e-12:
                last_obj = obj
                stall = 0
            else:
                stall += 1
                if stall > m + n:
                    bland = True

            y = c[basis] @ Binv
            d = c - y @ A_full
            movable = ~in_basis & (lo < hi)
            down = movable & ~at_upper & (d < -PRICE_TOL)
            up = movable & at_upper & (d > PRICE_TOL)
            eligible = np.where(down | up)[0]
            if eligible.size == 0:
                state["Binv"] = Binv
                return obj

            if bland:
                e = int(eligible[0])
            else:
                e = int(eligible[np.argmax(np.abs(d[eligible]))])
            sigma = -1.0 if at_upper[e] else 1.0

            u = Binv @ A_full[:, e]
            limit = hi[e] - lo[e]  # bound-flip distance
            leave_row = -1
            leave_to_upper = False
            su = sigma * u
            for i in range(m):
                bi = basis[i]
                if su[i] > PIVOT_TOL:
                    cand = (x[bi] - lo[bi]) / su[i]
                    if cand < limit - 1e-12 or (abs(cand - limit) <= 1e-12 and leave_row < 0):
                        limit, leave_row, leave_to_upper = cand, i, False
                elif su[i] < -PIVOT_TOL and np.isfinite(hi[bi]):
                    cand = (hi[bi] - x[bi]) / (-su[i])
                    if cand < limit - 1e-12 or (abs(cand - limit) <= 1e-12 and leave_row < 0):
                        limit, leave_row, leave_to_upper = cand, i, True

            if not np.isfinite(limit):
                state["Binv"] = Binv
                return -np.inf  # unbounded objective direction
            limit = max(limit, 0.0)

            x[basis] -= su * limit
            x[e] += sigma * limit
            steps += 1
            state["iters"] += 1

            if leave_row < 0:
                at_upper[e] = not at_upper[e]  # bound flip
                continue

            lv = basis[leave_row]
            x[lv] = hi[lv] if leave_to_upper else lo[lv]
            at_upper[lv] = leave_to_upper
            in_basis[lv] = False
            basis[leave_row] = e
            in_basis[e] = True

            piv = u[leave_row]
            if abs(piv) < PIVOT_TOL:
                raise NumericalDistressError("vanishing pivot element")
            if state["iters"] % REFACTOR_EVERY == 0:
                try:
                    Binv = np.linalg.inv(A_full[:, basis])
                except np.linalg.LinAlgError as exc:
                    raise NumericalDistressError(
                        "singular basis during refactorization") from exc
            else:
                row = Binv[leave_row] / piv
                Binv -= np.outer(u, row)
                Binv[leave_row] = row

    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    obj1 = run(c1, maxiter)
    if obj1 > FEAS_TOL:
        return LPResult(LP_INFEASIBLE, None, state["iters"])

    if objective is not None:
        # lock the artificials out and optimize the caller's costs
        hi[n:] = 0.0
        c2 = np.concatenate([np.asarray(objective, dtype=np.float64), np.zeros(m)])
        obj2 = run(c2, maxiter)
        if obj2 == -np.inf:
            return LPResult(LP_UNBOUNDED, x[: relax.n_struct].copy(), state["iters"])

    return LPResult(LP_OPTIMAL, x[: relax.n_struct].copy(), state["iters"])


# ---------------------------------------------------------------------------
# Exact re-checking
# ---------------------------------------------------------------------------


def check_exact(ilp: ILPModel, values: dict) -> bool:
    """Verify an integer assignment against every constraint and bound in
    exact rational arithmetic; this, not LP tolerances, decides FEASIBLE."""
    for v in ilp.vars:
        val = values.get(v.name)
        if val is None:
            return False
        if np.isfinite(v.lo) and not Fraction(v.lo) <= val:
            return False
        if np.isfinite(v.hi) and not val <= Fraction(v.hi):
            return False
    for con in ilp.constraints:
        total = Fraction(0)
        for v, cf in con.coeffs.items():
            total += Fraction(cf) * values[v.name]
        rhs = Fraction(con.rhs)
        if con.sense == LE and not total <= rhs:
            return False
        if con.sense == GE and not total >= rhs:
            return False
        if con.sense == EQ and total != rhs:
            return False
    return True


# ---------------------------------------------------------------------------
# Bound propagation (dense, vectorized)
# ---------------------------------------------------------------------------


class DenseRows:
    """All constraints normalized to <= rows over a dense matrix, for
    activity-based bound tightening at numpy speed."""

    def __init__(self, ilp: ILPModel, index: dict, is_int):
        n = len(ilp.vars)
        blocks = []
        rhs = []
        for con in ilp.constraints:
            row = np.zeros(n)
            for v, c in con.coeffs.items():
                row[index[v]] = c
            if con.sense in (LE, EQ):
                blocks.append(row)
                rhs.append(con.rhs)
            if con.sense in (GE, EQ):
                blocks.append(-row)
                rhs.append(-con.rhs)
        self.A = np.array(blocks) if blocks else np.zeros((0, n))
        self.rhs = np.array(rhs)
        self.pos = self.A > 0
        self.neg = self.A < 0
        self.is_int = is_int
        self.Apos = np.where(self.pos, self.A, 1.0)
        self.Aneg = np.where(self.neg, self.A, 1.0)

    def propagate(self, lo, hi, passes: int = 10) -> bool:
        """Tighten lo/hi in place; False when some row proves the box empty."""
        if self.A.shape[0] == 0:
            return bool(np.all(lo <= hi + 1e-9))
        for _ in range(passes):
            minact = np.where(self.pos, self.A * lo[None, :], 0.0).sum(axis=1) \
                + np.where(self.neg, self.A * hi[None, :], 0.0).sum(axis=1)
            gap = self.rhs - minact
            if np.any(gap < -1e-9):
                return False
            gap_col = gap[:, None]
            hi_cand = np.where(self.pos, lo[None, :] + gap_col / self.Apos, np.inf).min(axis=0)
            lo_cand = np.where(self.neg, hi[None, :] + gap_col / self.Aneg, -np.inf).max(axis=0)
            new_hi = np.minimum(hi, np.where(self.is_int, np.floor(hi_cand + 1e-9), hi_cand))
            new_lo = np.maximum(lo, np.where(self.is_int, np.ceil(lo_cand - 1e-9), lo_cand))
            if np.any(new_lo > new_hi + 1e-9):
                return False
            moved = max(np.max(hi - new_hi), np.max(new_lo - lo))
            lo[:] = new_lo
            hi[:] = new_hi
            if moved <= 1e-9:
                break
        return True

    def dive(self, lo, hi, x_lp):
        """Fix-and-propagate: walk variables in creation order (network
        topological order for encoded queries), pin each to the rounded LP
        value still inside its bounds, and let propagation force the rest.
        Returns a fully fixed bound vector or None."""
        lo = lo.copy()
        hi = hi.copy()
        if not self.propagate(lo, hi):
            return None
        for k in range(lo.size):
            if lo[k] >= hi[k] - 1e-9:
                continue
            lo[k] = hi[k] = np.clip(np.round(x_lp[k]), lo[k], hi[k])
            if not self.propagate(lo, hi, passes=4):
                return None
        if np.all(lo >= hi - 1e-9):
            return lo
        return None


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------


def solve_ilp(ilp: ILPModel, deadline: float = None, node_limit: int = None) -> SolveResult:
    """Decide feasibility of a pure-integer model.

    FEASIBLE results carry a witness assignment that passed exact rational
    re-checking; INFEASIBLE is returned only when the search tree is
    exhausted; TIMEOUT when the deadline arrives first.
    """
    start = time.monotonic()
    stats = {"nodes": 0, "lp_iterations": 0}

    def result(status, witness=None):
        stats["wall_time_s"] = time.monotonic() - start
        return SolveResult(status=status, witness=witness, stats=dict(stats))

    index = {v: i for i, v in enumerate(ilp.vars)}
    nvars = len(ilp.vars)
    lo0, hi0 = _var_arrays(ilp)
    if np.any(lo0 > hi0):
        return result(INFEASIBLE)
    is_int = np.array([v.kind in (INT, BIN) for v in ilp.vars])
    is_bin = np.array([v.kind == BIN for v in ilp.vars])
    if not np.all(np.isfinite(lo0)) or not np.all(np.isfinite(hi0)):
        raise ValueError("solve_ilp requires finite bounds on every variable")
    rows = DenseRows(ilp, index, is_int)
    base = build_relaxation(ilp)
    # phase-2 guidance: maximize total inequality slack, which pulls the LP
    # point toward the interior so rounding dives survive more often
    slack_cost = np.concatenate([np.zeros(nvars),
                                 np.where(np.isinf(base.hi[nvars:]), -1.0, 0.0)])

    def names(values):
        return {v.name: int(values[index[v]]) for v in ilp.vars}

    def try_point(values) -> dict:
        vals = np.clip(np.round(values), lo0, hi0)
        cand = names(vals)
        if check_exact(ilp, cand):
            return cand
        return None

    # frontier entries: (lo, hi, depth, promise)  -- promise = fractional
    # count of the parent LP point, used by the periodic best-node restart
    frontier = [(lo0.copy(), hi0.copy(), 0, nvars)]
    expansions = 0

    while frontier:
        if deadline is not None and time.monotonic() > deadline:
            return result(TIMEOUT)
        if node_limit is not None and stats["nodes"] >= node_limit:
            return result(TIMEOUT)

        expansions += 1
        if expansions % RESTART_EVERY == 0:
            pick = min(range(len(frontier)), key=lambda i: (frontier[i][3], -i))
            node = frontier.pop(pick)
        else:
            node = frontier.pop()
        lo, hi, depth, _ = node
        stats["nodes"] += 1

        if not rows.propagate(lo, hi):
            continue

        if np.all(lo >= hi - 1e-9):
            cand = try_point(lo)
            if cand is not None:
                return result(FEASIBLE, cand)
            continue

        relax = LPRelaxation(A=base.A, b=base.b,
                             lo=np.concatenate([lo, base.lo[nvars:]]),
                             hi=np.concatenate([hi, base.hi[nvars:]]),
                             n_struct=nvars)
        lp = solve_lp(relax, objective=slack_cost)
        stats["lp_iterations"] += lp.iterations
        if lp.status != LP_OPTIMAL:
            continue

        cand = try_point(lp.x)
        if cand is not None:
            return result(FEASIBLE, cand)

        fixed = rows.dive(lo, hi, lp.x)
        if fixed is not None:
            cand = try_point(fixed)
            if cand is not None:
                return result(FEASIBLE, cand)

        frac = np.abs(lp.x - np.round(lp.x))
        frac[~is_int] = 0.0
        fractional = frac > INT_TOL
        n_frac = int(fractional.sum())

        if n_frac == 0:
            # integral LP point that failed the exact re-check: split on any
            # open variable so no integer point is lost
            open_vars = np.where(lo < hi - 1e-9)[0]
            if open_vars.size == 0:
                continue
            k = int(open_vars[0])
            mid = min(max(np.floor(lp.x[k]), lo[k]), hi[k] - 1)
        else:
            cand_bins = np.where(fractional & is_bin)[0]
            pool = cand_bins if cand_bins.size else np.where(fractional)[0]
            score = np.minimum(frac[pool], 1.0 - frac[pool])
            k = int(pool[np.argmax(score)])
            mid = np.floor(lp.x[k])

        left_hi = hi.copy()
        left_hi[k] = mid
        right_lo = lo.copy()
        right_lo[k] = mid + 1
        left = (lo.copy(), left_hi, depth + 1, n_frac)
        right = (right_lo, hi.copy(), depth + 1, n_frac)
        if lp.x[k] - mid >= 0.5:
            frontier.append(left)
            frontier.append(right)   # dive toward the nearer integer
        else:
            frontier.append(right)
            frontier.append(left)

    return result(INFEASIBLE)
