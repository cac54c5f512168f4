"""Cross-check the in-repo solver against an external MILP solver (HiGHS
via scipy) fed through the LP text export, on toy query encodings."""

import numpy as np
import pytest

from helpers import random_query, random_toy_model

from qnnverify.encode import BIN, EQ, GE, INT, LE, encode_query
from qnnverify.lpformat import parse_lp, write_lp
from qnnverify.solver import FEASIBLE, INFEASIBLE, solve_ilp

scipy_opt = pytest.importorskip("scipy.optimize")


def highs_status(ilp):
    """Feasibility via scipy.optimize.milp on the parsed LP file."""
    n = len(ilp.vars)
    index = {v: i for i, v in enumerate(ilp.vars)}
    c = np.zeros(n)
    integrality = np.array([1 if v.kind in (INT, BIN) else 0 for v in ilp.vars])
    lb = np.array([v.lo for v in ilp.vars])
    ub = np.array([v.hi for v in ilp.vars])
    constraints = []
    for con in ilp.constraints:
        row = np.zeros(n)
        for v, cf in con.coeffs.items():
            row[index[v]] = cf
        if con.sense == LE:
            constraints.append(scipy_opt.LinearConstraint(row, -np.inf, con.rhs))
        elif con.sense == GE:
            constraints.append(scipy_opt.LinearConstraint(row, con.rhs, np.inf))
        else:
            constraints.append(scipy_opt.LinearConstraint(row, con.rhs, con.rhs))
    res = scipy_opt.milp(c=c, constraints=constraints,
                         integrality=integrality,
                         bounds=scipy_opt.Bounds(lb, ub))
    if res.status == 0:
        return FEASIBLE
    if res.status == 2:
        return INFEASIBLE
    return f"other({res.status})"


def test_toy_query_models_agree_with_highs(rng):
    checked = 0
    for _ in range(25):
        model = random_toy_model(rng)
        q = random_query(rng, model, radius=int(rng.choice([1, 2])))
        for t, ilp in encode_query(model, q):
            reparsed = parse_lp(write_lp(ilp))
            ours = solve_ilp(reparsed).status
            theirs = highs_status(reparsed)
            assert ours == theirs, (t, ours, theirs)
            checked += 1
    assert checked >= 20
