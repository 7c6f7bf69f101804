"""Algebraic MILP models, LP-file text format and a feasibility evaluator.

A :class:`MilpModel` is a plain container: variables (continuous or binary),
sparse linear constraints and a linear objective. Variables are addressed by
integer id (their insertion position) or by name.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

INF = math.inf
FEAS_TOL = 1e-6
RELATIONS = ("<=", ">=", "=")

_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\[\]]*$")


class ModelError(ValueError):
    """Invalid model construction (duplicate names, bad ids, bad numbers)."""


class LPFormatError(ValueError):
    """Malformed LP text; the message carries the offending line number."""


def fmt(x: float) -> str:
    """17 significant digits, with the LP spelling of infinities."""
    if x == INF:
        return "+inf"
    if x == -INF:
        return "-inf"
    return format(float(x), ".17g")


@dataclass
class VarDef:
    name: str
    kind: str = "continuous"
    lower: float = -INF
    upper: float = INF

    @property
    def is_binary(self) -> bool:
        return self.kind == "binary"


@dataclass
class LinConstraint:
    terms: dict[int, float]
    relation: str
    rhs: float
    name: str | None = None

    def activity(self, x: Sequence[float]) -> float:
        return sum(c * x[i] for i, c in self.terms.items())


@dataclass
class Violation:
    kind: str  # constraint | lower | upper | integrality
    name: str
    amount: float


class MilpModel:
    """Variables, linear constraints and a linear objective."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[VarDef] = []
        self.constraints: list[LinConstraint] = []
        self.objective: dict[int, float] = {}
        self.objective_constant = 0.0
        self.sense = "min"
        self.name_index: dict[str, int] = {}
        self._con_names: set[str] = set()

    # -- construction -----------------------------------------------------

    def add_var(self, name: str, kind: str = "continuous",
                lower: float | None = None, upper: float | None = None) -> int:
        if name in self.name_index:
            raise ModelError(f"duplicate variable name {name!r}")
        if not _NAME_RE.match(name):
            raise ModelError(f"variable name {name!r} is not LP-safe")
        if kind not in ("continuous", "binary"):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == "binary":
            lower = 0.0 if lower is None else float(lower)
            upper = 1.0 if upper is None else float(upper)
            if lower < 0.0 or upper > 1.0:
                raise ModelError(f"binary {name!r} bounds [{lower}, {upper}] exceed [0, 1]")
        else:
            lower = -INF if lower is None else float(lower)
            upper = INF if upper is None else float(upper)
        if math.isnan(lower) or math.isnan(upper):
            raise ModelError(f"NaN bound on {name!r}")
        if lower > upper:
            raise ModelError(f"variable {name!r}: lower {lower} > upper {upper}")
        vid = len(self.variables)
        self.variables.append(VarDef(name, kind, lower, upper))
        self.name_index[name] = vid
        return vid

    def add_constraint(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                       relation: str, rhs: float, name: str | None = None) -> int:
        if relation not in RELATIONS:
            raise ModelError(f"unknown relation {relation!r}")
        clean = self._clean_terms(terms)
        if not clean:
            raise ModelError(f"constraint {name or len(self.constraints)} has no nonzero terms")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ModelError(f"non-finite rhs in constraint {name or len(self.constraints)}")
        if name is not None:
            if name in self._con_names:
                raise ModelError(f"duplicate constraint name {name!r}")
            self._con_names.add(name)
        self.constraints.append(LinConstraint(clean, relation, rhs, name))
        return len(self.constraints) - 1

    def set_objective(self, terms: Mapping[int, float] | Iterable[tuple[int, float]],
                      sense: str = "min", constant: float = 0.0) -> None:
        if sense not in ("min", "max"):
            raise ModelError(f"objective sense must be 'min' or 'max', got {sense!r}")
        self.objective = self._clean_terms(terms)
        self.sense = sense
        self.objective_constant = float(constant)

    def _clean_terms(self, terms) -> dict[int, float]:
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[int, float] = {}
        for vid, coef in items:
            vid = int(vid)
            if not 0 <= vid < len(self.variables):
                raise ModelError(f"unknown variable id {vid}")
            coef = float(coef)
            if not math.isfinite(coef):
                raise ModelError(f"non-finite coefficient on {self.variables[vid].name!r}")
            acc[vid] = acc.get(vid, 0.0) + coef
        return {k: acc[k] for k in sorted(acc) if acc[k] != 0.0}

    # -- access -----------------------------------------------------------

    def var_id(self, name: str) -> int:
        try:
            return self.name_index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def set_bounds(self, vid: int, lower: float, upper: float) -> None:
        v = self.variables[vid]
        if lower > upper:
            raise ModelError(f"variable {v.name!r}: lower {lower} > upper {upper}")
        if v.is_binary and (lower < 0.0 or upper > 1.0):
            raise ModelError(f"binary {v.name!r} bounds must lie in [0, 1]")
        v.lower, v.upper = float(lower), float(upper)

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def binary_ids(self) -> list[int]:
        return [i for i, v in enumerate(self.variables) if v.is_binary]

    def count_by_kind(self) -> dict[str, int]:
        nb = len(self.binary_ids())
        return {"binary": nb, "continuous": self.n_vars - nb}

    def objective_value(self, x: Sequence[float]) -> float:
        return self.objective_constant + sum(c * x[i] for i, c in self.objective.items())

    def copy(self) -> "MilpModel":
        m = MilpModel(self.name)
        m.variables = [VarDef(v.name, v.kind, v.lower, v.upper) for v in self.variables]
        m.constraints = [LinConstraint(dict(c.terms), c.relation, c.rhs, c.name)
                         for c in self.constraints]
        m.objective = dict(self.objective)
        m.objective_constant = self.objective_constant
        m.sense = self.sense
        m.name_index = dict(self.name_index)
        m._con_names = set(self._con_names)
        return m

    def structure(self):
        """Canonical tuple used for structural comparison of two models."""
        return (
            tuple((v.name, v.kind, v.lower, v.upper) for v in self.variables),
            tuple((tuple(sorted(c.terms.items())), c.relation, c.rhs)
                  for c in self.constraints),
            tuple(sorted(self.objective.items())),
            self.objective_constant,
            self.sense,
        )

    def same_structure(self, other: "MilpModel") -> bool:
        return self.structure() == other.structure()

    def to_arrays(self):
        """Dense (A, relations, rhs, c, lower, upper, binary mask) of the model."""
        n, m = self.n_vars, self.n_constraints
        A = np.zeros((m, n))
        for r, con in enumerate(self.constraints):
            for vid, coef in con.terms.items():
                A[r, vid] = coef
        rel = np.array([c.relation for c in self.constraints], dtype=object)
        b = np.array([c.rhs for c in self.constraints], dtype=float)
        c = np.zeros(n)
        for vid, coef in self.objective.items():
            c[vid] = coef
        lo = np.array([v.lower for v in self.variables], dtype=float)
        hi = np.array([v.upper for v in self.variables], dtype=float)
        binary = np.array([v.is_binary for v in self.variables], dtype=bool)
        return A, rel, b, c, lo, hi, binary

    def __repr__(self) -> str:
        k = self.count_by_kind()
        return (f"MilpModel({self.name!r}, {k['continuous']} continuous, "
                f"{k['binary']} binary, {self.n_constraints} constraints, {self.sense})")


# -- evaluation -------------------------------------------------------------

def _as_vector(model: MilpModel, assignment) -> np.ndarray:
    if isinstance(assignment, Mapping):
        x = np.empty(model.n_vars)
        for i, v in enumerate(model.variables):
            if v.name in assignment:
                x[i] = assignment[v.name]
            elif i in assignment:
                x[i] = assignment[i]
            else:
                raise ModelError(f"assignment misses variable {v.name!r}")
        return x
    x = np.asarray(assignment, dtype=float)
    if x.shape != (model.n_vars,):
        raise ModelError(f"assignment has length {x.size}, model has {model.n_vars} variables")
    return x


def evaluate(model: MilpModel, assignment, tol: float = FEAS_TOL):
    """Objective value and every violated bound, row or integrality condition.

    ``assignment`` maps variable names (or ids) to values, or is a vector
    indexed by id. Returns ``(objective, violations)``.
    """
    x = _as_vector(model, assignment)
    violations: list[Violation] = []
    for i, v in enumerate(model.variables):
        if x[i] < v.lower - tol:
            violations.append(Violation("lower", v.name, v.lower - x[i]))
        if x[i] > v.upper + tol:
            violations.append(Violation("upper", v.name, x[i] - v.upper))
        if v.is_binary:
            frac = abs(x[i] - round(x[i]))
            if frac > tol:
                violations.append(Violation("integrality", v.name, frac))
    for r, con in enumerate(model.constraints):
        lhs = con.activity(x)
        if con.relation == "<=":
            gap = lhs - con.rhs
        elif con.relation == ">=":
            gap = con.rhs - lhs
        else:
            gap = abs(lhs - con.rhs)
        if gap > tol:
            violations.append(Violation("constraint", con.name or f"c{r}", gap))
    return model.objective_value(x), violations


# -- LP text format -----------------------------------------------------------

_WRAP = 8  # terms per physical line


def _expr_lines(model: MilpModel, terms: Mapping[int, float], constant: float = 0.0) -> list[str]:
    parts = []
    for k, (vid, coef) in enumerate(terms.items()):
        sign = "-" if coef < 0 else "+"
        mag = fmt(abs(coef))
        name = model.variables[vid].name
        if k == 0 and sign == "+":
            parts.append(f"{mag} {name}")
        else:
            parts.append(f"{sign} {mag} {name}")
    if parts and constant != 0.0:
        parts.append(f"{'-' if constant < 0 else '+'} {fmt(abs(constant))}")
    elif not parts:
        parts.append(fmt(constant))
    return [" ".join(parts[i:i + _WRAP]) for i in range(0, len(parts), _WRAP)]


def export_lp(model: MilpModel) -> str:
    """Render the model in the CPLEX-style LP dialect.

    Variables are emitted in id order in the Bounds section, constraints in
    insertion order. Variables that occur nowhere else are declared through a
    zero objective coefficient so that every Bounds entry is defined.
    """
    used = set(model.objective)
    for con in model.constraints:
        used.update(con.terms)
    obj_terms = dict(model.objective)
    for vid in range(model.n_vars):
        if vid not in used:
            obj_terms[vid] = 0.0
    obj_terms = {k: obj_terms[k] for k in sorted(obj_terms)}

    out = [f"\\ {model.name}", "Maximize" if model.sense == "max" else "Minimize"]
    lines = _expr_lines(model, obj_terms, model.objective_constant)
    out.append(f" obj: {lines[0]}")
    out.extend(f"   {ln}" for ln in lines[1:])
    out.append("Subject To")
    for r, con in enumerate(model.constraints):
        lines = _expr_lines(model, con.terms)
        label = con.name or f"c{r}"
        lines[-1] = f"{lines[-1]} {con.relation} {fmt(con.rhs)}"
        out.append(f" {label}: {lines[0]}")
        out.extend(f"   {ln}" for ln in lines[1:])
    out.append("Bounds")
    for v in model.variables:
        if v.lower == v.upper:
            out.append(f" {v.name} = {fmt(v.lower)}")
        else:
            out.append(f" {fmt(v.lower)} <= {v.name} <= {fmt(v.upper)}")
    bins = [v.name for v in model.variables if v.is_binary]
    if bins:
        out.append("Binaries")
        out.extend(f" {' '.join(bins[i:i + _WRAP])}" for i in range(0, len(bins), _WRAP))
    out.append("End")
    return "\n".join(out) + "\n"


_SECTIONS = {
    "maximize": "max", "maximum": "max", "max": "max",
    "minimize": "min", "minimum": "min", "min": "min",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "end": "end",
}
_UNSUPPORTED = {"general", "generals", "gen", "semi-continuous", "semis", "semi", "sos"}

_TOKEN_RE = re.compile(r"""
    (?P<rel><=|>=|=<|=>|<|>|=)
  | (?P<num>[+-]?\s*(?:inf(?:inity)?\b|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?))
  | (?P<sign>[+-])
  | (?P<label>[A-Za-z_][A-Za-z0-9_.\[\]]*\s*:)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.\[\]]*)
  | (?P<ws>\s+)
""", re.VERBOSE | re.IGNORECASE)


def _tokenize(text: str, lineno: int):
    pos, toks = 0, []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise LPFormatError(f"line {lineno}: cannot parse {text[pos:]!r}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        val = m.group(kind)
        if kind == "num":
            val = _parse_number(val, lineno)
        elif kind == "label":
            val = val[:-1].strip()
        elif kind == "rel":
            val = {"=<": "<=", "<": "<=", "=>": ">=", ">": ">="}.get(val, val)
        toks.append((kind, val, lineno))
    return toks


def _parse_number(s: str, lineno: int) -> float:
    s = s.replace(" ", "").lower()
    try:
        if s.lstrip("+-") in ("inf", "infinity"):
            return -INF if s.startswith("-") else INF
        return float(s)
    except ValueError:
        raise LPFormatError(f"line {lineno}: unparseable number {s!r}") from None


def _parse_expr(toks, lineno):
    """Linear expression tokens -> (list of (name, coef), constant)."""
    terms, const = [], 0.0
    i, sign, coef = 0, 1.0, None
    while i < len(toks):
        kind, val, ln = toks[i]
        if kind == "sign":
            if coef is not None:
                raise LPFormatError(f"line {ln}: dangling coefficient before sign")
            sign = -sign if val == "-" else sign
        elif kind == "num":
            if coef is not None:
                raise LPFormatError(f"line {ln}: unparseable number (two numbers without "
                                    f"an operator)")
            coef = val
            if not math.isfinite(coef):
                raise LPFormatError(f"line {ln}: infinite coefficient")
        elif kind == "name":
            terms.append((val, sign * (1.0 if coef is None else coef)))
            sign, coef = 1.0, None
        else:
            raise LPFormatError(f"line {ln}: unexpected {val!r} in expression")
        i += 1
    if coef is not None:
        const += sign * coef
    return terms, const


def import_lp(text: str) -> MilpModel:
    """Parse LP text produced by :func:`export_lp` (or compatible)."""
    section = None
    sense = None
    obj_toks: list = []
    obj_line = 0
    rows: list[tuple[list, int]] = []
    pending: list = []
    pending_line = 0
    bound_lines: list[tuple[list, int]] = []
    binaries: list[tuple[str, int]] = []
    name = "model"
    seen_end = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("\\", 1)[0].strip() if not raw.lstrip().startswith("\\") else ""
        if raw.lstrip().startswith("\\") and lineno == 1:
            name = raw.lstrip()[1:].strip() or name
        if not line:
            continue
        if seen_end:
            raise LPFormatError(f"line {lineno}: content after End")
        key = line.lower().rstrip(":")
        head = key.split()[0] if key.split() else key
        if key in _SECTIONS:
            new = _SECTIONS[key]
            if section == "st" and pending:
                raise LPFormatError(f"line {pending_line}: incomplete constraint")
            if new in ("max", "min"):
                if sense is not None:
                    raise LPFormatError(f"line {lineno}: second objective section")
                sense = new
                section = "obj"
                obj_line = lineno
            elif new == "end":
                seen_end = True
                section = None
            else:
                if sense is None:
                    raise LPFormatError(f"line {lineno}: section {line!r} before objective")
                section = new
            continue
        if key in _UNSUPPORTED or head in _UNSUPPORTED:
            raise LPFormatError(f"line {lineno}: unsupported section {line!r}")
        if section is None:
            raise LPFormatError(f"line {lineno}: unknown section or stray text {line!r}")
        if section == "obj":
            obj_toks.extend(_tokenize(line, lineno))
        elif section == "st":
            toks = _tokenize(line, lineno)
            if not pending:
                pending_line = lineno
            pending.extend(toks)
            # complete once a relation is followed by its right-hand side
            rel_at = [k for k, t in enumerate(pending) if t[0] == "rel"]
            if rel_at and rel_at[0] < len(pending) - 1:
                rows.append((pending, pending_line))
                pending = []
        elif section == "bounds":
            bound_lines.append((_tokenize(line, lineno), lineno))
        elif section == "bin":
            for tok in line.split():
                if not _NAME_RE.match(tok):
                    raise LPFormatError(f"line {lineno}: bad binary name {tok!r}")
                binaries.append((tok, lineno))
    if pending:
        raise LPFormatError(f"line {pending_line}: incomplete constraint")
    if sense is None:
        raise LPFormatError("line 1: missing objective section")

    # objective
    if obj_toks and obj_toks[0][0] == "label":
        obj_toks = obj_toks[1:]
    obj_terms, obj_const = _parse_expr(obj_toks, obj_line)

    parsed_rows = []
    for toks, ln in rows:
        label = None
        if toks[0][0] == "label":
            label, toks = toks[0][1], toks[1:]
        rel_idx = next(k for k, t in enumerate(toks) if t[0] == "rel")
        lhs, lconst = _parse_expr(toks[:rel_idx], ln)
        rhs_toks = toks[rel_idx + 1:]
        if any(t[0] == "rel" for t in rhs_toks):
            raise LPFormatError(f"line {ln}: ranged constraints are not supported")
        rterms, rconst = _parse_expr(rhs_toks, ln)
        if rterms:
            raise LPFormatError(f"line {ln}: variables on the right-hand side")
        if not math.isfinite(rconst):
            raise LPFormatError(f"line {ln}: infinite right-hand side")
        parsed_rows.append((label, lhs, toks[rel_idx][1], rconst - lconst, ln))

    defined: dict[str, int] = {}
    for nm, _ in obj_terms:
        defined.setdefault(nm, len(defined))
    for _, lhs, _, _, _ in parsed_rows:
        for nm, _ in lhs:
            defined.setdefault(nm, len(defined))

    bounds: dict[str, list[float]] = {}
    order: list[str] = []
    for toks, ln in bound_lines:
        nm, lo, hi = _parse_bound(toks, ln)
        if nm not in defined:
            raise LPFormatError(f"line {ln}: bound on undefined variable {nm!r}")
        if nm not in bounds:
            bounds[nm] = [0.0, INF]
            order.append(nm)
        if lo is not None:
            bounds[nm][0] = lo
        if hi is not None:
            bounds[nm][1] = hi
    bin_set = set()
    for nm, ln in binaries:
        if nm not in defined:
            raise LPFormatError(f"line {ln}: binary declaration of undefined variable {nm!r}")
        bin_set.add(nm)

    model = MilpModel(name)
    for nm in order + [n for n in defined if n not in bounds]:
        lo, hi = bounds.get(nm, (0.0, INF))
        if nm in bin_set:
            lo, hi = max(lo, 0.0), min(hi, 1.0)
            model.add_var(nm, "binary", lo, hi)
        else:
            model.add_var(nm, "continuous", lo, hi)
    model.set_objective([(model.var_id(n), c) for n, c in obj_terms], sense, obj_const)
    for label, lhs, rel, rhs, ln in parsed_rows:
        try:
            model.add_constraint([(model.var_id(n), c) for n, c in lhs], rel, rhs, name=label)
        except ModelError as exc:
            raise LPFormatError(f"line {ln}: {exc}") from None
    return model


def _parse_bound(toks, ln):
    kinds = [t[0] for t in toks]
    vals = [t[1] for t in toks]
    if kinds == ["name", "name"] and vals[1].lower() == "free":
        return vals[0], -INF, INF
    if kinds == ["num", "rel", "name", "rel", "num"] and vals[1] == vals[3] == "<=":
        return vals[2], vals[0], vals[4]
    if kinds == ["name", "rel", "num"]:
        nm, rel, v = vals
        if rel == "<=":
            return nm, None, v
        if rel == ">=":
            return nm, v, None
        return nm, v, v
    if kinds == ["num", "rel", "name"]:
        v, rel, nm = vals
        if rel == "<=":
            return nm, v, None
        if rel == ">=":
            return nm, None, v
        return nm, v, v
    raise LPFormatError(f"line {ln}: unparseable bound")
