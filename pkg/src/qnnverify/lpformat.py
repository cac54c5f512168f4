"""Reader and writer for the standard LP text format.

The writer emits each feasibility model with an empty objective, one
constraint per line, a Bounds section for every variable, and Generals /
Binaries sections carrying the integrality information.  The parser accepts
everything the writer produces (plus scientific notation and comments), so
exported models can be re-solved as a cross-check or handed to an external
solver.
"""

from __future__ import annotations

import re

from .encode import BIN, EQ, GE, INT, LE, ILPModel

_NUM = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class LPParseError(ValueError):
    pass


def _fmt(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_lp(ilp: ILPModel) -> str:
    lines = [f"\\ {ilp.name or 'feasibility model'}", "Minimize", " obj:", "Subject To"]
    for i, con in enumerate(ilp.constraints):
        terms = []
        for v, c in con.coeffs.items():
            sign = "-" if c < 0 else "+"
            terms.append(f"{sign} {_fmt(abs(c))} {v.name}")
        expr = " ".join(terms) if terms else "0 __zero"
        if expr.startswith("+ "):
            expr = expr[2:]
        name = con.name or f"c{i}"
        lines.append(f" {name}: {expr} {con.sense} {_fmt(con.rhs)}")
    lines.append("Bounds")
    need_zero = any(not c.coeffs for c in ilp.constraints)
    for v in ilp.vars:
        if v.lo == v.hi:
            lines.append(f" {v.name} = {_fmt(v.lo)}")
        else:
            lines.append(f" {_fmt(v.lo)} <= {v.name} <= {_fmt(v.hi)}")
    if need_zero:
        lines.append(" __zero = 0")
    generals = [v.name for v in ilp.vars if v.kind == INT]
    binaries = [v.name for v in ilp.vars if v.kind == BIN]
    if generals:
        lines.append("Generals")
        lines.extend(f" {n}" for n in generals)
    if binaries:
        lines.append("Binaries")
        lines.extend(f" {n}" for n in binaries)
    lines.append("End")
    return "\n".join(lines) + "\n"


def _tokenize(line: str):
    # pad operators so "3x1+2x2<=4" also splits
    for op in ("<=", ">=", "="):
        line = line.replace(op, f" {op} ")
    line = line.replace("> =", ">=").replace("< =", "<=")
    return line.split()


def _parse_terms(tokens):
    """Parse [coef] name pairs with optional +/- signs into {name: coef}."""
    coeffs = {}
    sign = 1.0
    pending = None
    for tok in tokens:
        if tok == "+":
            continue
        if tok == "-":
            sign = -sign
            continue
        if _NUM.match(tok):
            if pending is not None:
                raise LPParseError(f"dangling coefficient before {tok!r}")
            pending = sign * float(tok)
            sign = 1.0
            continue
        coef = pending if pending is not None else sign
        coeffs[tok] = coeffs.get(tok, 0.0) + coef
        pending = None
        sign = 1.0
    if pending is not None:
        raise LPParseError("constraint ends with a dangling coefficient")
    return coeffs


def parse_lp(text: str) -> ILPModel:
    section = None
    raw_cons = []
    bounds = {}
    kinds = {}
    order = []
    seen = set()

    def note(name):
        if name not in seen:
            seen.add(name)
            order.append(name)

    for raw in text.splitlines():
        line = raw.split("\\")[0].strip()
        if not line:
            continue
        low = line.lower()
        if low in ("minimize", "maximize", "min", "max"):
            section = "objective"
            continue
        if low in ("subject to", "s.t.", "st"):
            section = "constraints"
            continue
        if low == "bounds":
            section = "bounds"
            continue
        if low in ("generals", "general", "integers", "integer"):
            section = "generals"
            continue
        if low in ("binaries", "binary", "bin"):
            section = "binaries"
            continue
        if low == "end":
            break

        if section == "objective":
            continue
        if section == "constraints":
            if ":" in line:
                name, line = line.split(":", 1)
                name = name.strip()
            else:
                name = f"c{len(raw_cons)}"
            tokens = _tokenize(line)
            sense_pos = [i for i, t in enumerate(tokens) if t in (LE, GE, EQ, "<", ">")]
            if len(sense_pos) != 1:
                raise LPParseError(f"constraint {name}: expected exactly one comparator: {line!r}")
            i = sense_pos[0]
            sense = {"<": LE, ">": GE}.get(tokens[i], tokens[i])
            lhs = _parse_terms(tokens[:i])
            if len(tokens) != i + 2 or not _NUM.match(tokens[i + 1]):
                raise LPParseError(f"constraint {name}: malformed right-hand side: {line!r}")
            rhs = float(tokens[i + 1])
            for n in lhs:
                note(n)
            raw_cons.append((name, lhs, sense, rhs))
        elif section == "bounds":
            tokens = _tokenize(line)
            if len(tokens) == 3 and tokens[1] == EQ:
                note(tokens[0])
                bounds[tokens[0]] = (float(tokens[2]), float(tokens[2]))
            elif len(tokens) == 5 and tokens[1] == LE and tokens[3] == LE:
                note(tokens[2])
                bounds[tokens[2]] = (float(tokens[0]), float(tokens[4]))
            elif len(tokens) == 3 and tokens[1] == LE and _NUM.match(tokens[2]):
                note(tokens[0])
                bounds.setdefault(tokens[0], (0.0, float("inf")))
                bounds[tokens[0]] = (bounds[tokens[0]][0], float(tokens[2]))
            elif len(tokens) == 3 and tokens[1] == GE and _NUM.match(tokens[2]):
                note(tokens[0])
                bounds.setdefault(tokens[0], (0.0, float("inf")))
                bounds[tokens[0]] = (float(tokens[2]), bounds[tokens[0]][1])
            else:
                raise LPParseError(f"unsupported bounds line: {line!r}")
        elif section == "generals":
            for tok in line.split():
                note(tok)
                kinds[tok] = INT
        elif section == "binaries":
            for tok in line.split():
                note(tok)
                kinds[tok] = BIN

    ilp = ILPModel(name="parsed")
    by_name = {}
    for name in order:
        kind = kinds.get(name, INT)
        lo, hi = bounds.get(name, (0.0, 1.0) if kind == BIN else (0.0, float("inf")))
        by_name[name] = ilp.new_var(name, kind, lo, hi)
    for name, lhs, sense, rhs in raw_cons:
        ilp.add([(c, by_name[n]) for n, c in lhs.items()], sense, rhs, name=name)
    return ilp
