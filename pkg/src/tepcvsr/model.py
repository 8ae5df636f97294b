"""Solver-agnostic MILP container with LP/MPS export and LP re-import.

The container stores variables (continuous or binary, with bounds), linear
constraints and a linear minimization objective. Variable names double as the
stable wire format: every downstream consumer (solver backends, report
writers, audits) addresses the solution by name.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace

CONTINUOUS = "continuous"
BINARY = "binary"

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

_SENSES = ("<=", ">=", "==")


class ModelError(Exception):
    """Raised on inconsistent model construction or malformed model files."""


@dataclass
class Variable:
    name: str
    kind: str = CONTINUOUS
    lb: float = -math.inf
    ub: float = math.inf


@dataclass
class Row:
    """One linear constraint: sum(coeffs[v] * v) sense rhs."""

    name: str
    coeffs: dict[str, float]
    sense: str
    rhs: float


@dataclass
class Disjunction:
    """Audit record for one side of a big-M gated inequality.

    The underlying row is ``body <= M * gate`` (sense ``<=``) or
    ``body >= -M * gate`` (sense ``>=``) where ``gate`` is an affine
    expression in binaries and constants. The row counts as deactivated when
    the gate evaluates to >= 1, in which case the big-M term, not the body,
    must be doing the work.
    """

    constraint: str
    family: str
    body: dict[str, float]
    sense: str
    big_m: float
    gate: dict[str, float]
    gate_const: float

    def gate_value(self, values: dict[str, float]) -> float:
        return self.gate_const + sum(c * values[v] for v, c in self.gate.items())

    def relaxed_slack(self, values: dict[str, float]) -> float:
        """Distance from the body to its big-M bound (only meaningful when
        the gate is active, i.e. the constraint is deactivated)."""
        body = sum(c * values[v] for v, c in self.body.items())
        m_term = self.big_m * self.gate_value(values)
        if self.sense == "<=":
            return m_term - body
        return body + m_term


class MilpModel:
    """Mutable while being built, treated as immutable afterwards."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.variables: list[Variable] = []
        self.rows: list[Row] = []
        self.objective: dict[str, float] = {}
        self.objective_offset: float = 0.0
        self.disjunctions: list[Disjunction] = []
        self._var_index: dict[str, int] = {}
        self._row_names: set[str] = set()

    # -- construction -----------------------------------------------------

    def add_var(
        self,
        name: str,
        kind: str = CONTINUOUS,
        lb: float = -math.inf,
        ub: float = math.inf,
    ) -> str:
        if not _NAME_RE.match(name):
            raise ModelError(f"invalid variable name {name!r}")
        if name in self._var_index:
            raise ModelError(f"duplicate variable {name!r}")
        if kind not in (CONTINUOUS, BINARY):
            raise ModelError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lb = max(lb, 0.0)
            ub = min(ub, 1.0)
        if lb > ub:
            raise ModelError(f"variable {name!r} has empty bounds [{lb}, {ub}]")
        self._var_index[name] = len(self.variables)
        self.variables.append(Variable(name, kind, lb, ub))
        return name

    def add_row(self, name: str, coeffs: dict[str, float], sense: str, rhs: float) -> str:
        if sense not in _SENSES:
            raise ModelError(f"unknown constraint sense {sense!r}")
        if name in self._row_names:
            raise ModelError(f"duplicate constraint {name!r}")
        for v in coeffs:
            if v not in self._var_index:
                raise ModelError(f"constraint {name!r} references undeclared variable {v!r}")
        self.rows.append(Row(name, dict(coeffs), sense, float(rhs)))
        self._row_names.add(name)
        return name

    def add_objective(self, coeffs: dict[str, float], offset: float = 0.0) -> None:
        for v, c in coeffs.items():
            if v not in self._var_index:
                raise ModelError(f"objective references undeclared variable {v!r}")
            self.objective[v] = self.objective.get(v, 0.0) + c
        self.objective_offset += offset

    def add_disjunction(self, record: Disjunction) -> None:
        for v in list(record.body) + list(record.gate):
            if v not in self._var_index:
                raise ModelError(f"disjunction on {record.constraint!r} references {v!r}")
        self.disjunctions.append(record)

    # -- queries ----------------------------------------------------------

    def has_var(self, name: str) -> bool:
        return name in self._var_index

    def var(self, name: str) -> Variable:
        return self.variables[self._var_index[name]]

    def var_names(self) -> list[str]:
        return [v.name for v in self.variables]

    def binary_names(self) -> list[str]:
        return [v.name for v in self.variables if v.kind == BINARY]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def objective_value(self, values: dict[str, float]) -> float:
        return self.objective_offset + sum(c * values[v] for v, c in self.objective.items())

    # -- derived models ---------------------------------------------------

    def _shallow_clone(self) -> "MilpModel":
        clone = MilpModel(self.name)
        clone.variables = [replace(v) for v in self.variables]
        clone.rows = self.rows
        clone.objective = self.objective
        clone.objective_offset = self.objective_offset
        clone.disjunctions = self.disjunctions
        clone._var_index = dict(self._var_index)
        clone._row_names = self._row_names
        return clone

    def fixed(self, values: dict[str, float]) -> "MilpModel":
        """Copy of the model with the given variables pinned by bounds."""
        clone = self._shallow_clone()
        for name, val in values.items():
            if name not in clone._var_index:
                raise ModelError(f"cannot fix undeclared variable {name!r}")
            v = clone.variables[clone._var_index[name]]
            v.lb = v.ub = float(val)
        return clone

    def relaxed(self) -> "MilpModel":
        """Copy with every binary variable turned continuous on [lb, ub]."""
        clone = self._shallow_clone()
        for v in clone.variables:
            if v.kind == BINARY:
                v.kind = CONTINUOUS
        return clone

    # -- LP format --------------------------------------------------------

    def lp_string(self) -> str:
        out = [f"\\ {self.name}", "Minimize"]
        terms = [_term(c, v) for v, c in self.objective.items()]
        if self.objective_offset:
            terms.append(_num_term(self.objective_offset))
        out.append(_wrap(" obj:", terms if terms else [_num_term(0.0)]))
        out.append("Subject To")
        for row in self.rows:
            body = [_term(c, v) for v, c in row.coeffs.items()]
            sense = {"<=": "<=", ">=": ">=", "==": "="}[row.sense]
            out.append(_wrap(f" {row.name}:", body + [sense, _fmt(row.rhs)]))
        out.append("Bounds")
        for v in self.variables:
            if v.kind == BINARY:
                if (v.lb, v.ub) != (0.0, 1.0):
                    out.append(f" {_fmt(v.lb)} <= {v.name} <= {_fmt(v.ub)}")
                continue
            if v.lb == v.ub:
                out.append(f" {v.name} = {_fmt(v.lb)}")
            elif v.lb == -math.inf and v.ub == math.inf:
                out.append(f" {v.name} free")
            elif v.ub == math.inf:
                out.append(f" {v.name} >= {_fmt(v.lb)}")
            elif v.lb == -math.inf:
                out.append(f" -inf <= {v.name} <= {_fmt(v.ub)}")
            else:
                out.append(f" {_fmt(v.lb)} <= {v.name} <= {_fmt(v.ub)}")
        binaries = self.binary_names()
        if binaries:
            out.append("Binaries")
            for chunk in _chunks(binaries, 8):
                out.append(" " + " ".join(chunk))
        out.append("End")
        return "\n".join(out) + "\n"

    def write_lp(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.lp_string())

    # -- MPS format (write only) -------------------------------------------

    def mps_string(self) -> str:
        out = [f"NAME          {self.name}", "ROWS", " N  OBJ"]
        sense_code = {"<=": "L", ">=": "G", "==": "E"}
        for row in self.rows:
            out.append(f" {sense_code[row.sense]}  {row.name}")
        # column-major coefficient lists
        cols: dict[str, list[tuple[str, float]]] = {v.name: [] for v in self.variables}
        for v, c in self.objective.items():
            cols[v].append(("OBJ", c))
        for row in self.rows:
            for v, c in row.coeffs.items():
                cols[v].append((row.name, c))
        out.append("COLUMNS")
        in_int = False
        ordering = [v for v in self.variables if v.kind == CONTINUOUS] + [
            v for v in self.variables if v.kind == BINARY
        ]
        for v in ordering:
            if v.kind == BINARY and not in_int:
                out.append("    MARKER                 'MARKER'                 'INTORG'")
                in_int = True
            entries = cols[v.name] or [("OBJ", 0.0)]
            for rname, c in entries:
                out.append(f"    {v.name}  {rname}  {_fmt(c)}")
        if in_int:
            out.append("    MARKER                 'MARKER'                 'INTEND'")
        out.append("RHS")
        for row in self.rows:
            if row.rhs:
                out.append(f"    RHS  {row.name}  {_fmt(row.rhs)}")
        if self.objective_offset:
            out.append(f"    RHS  OBJ  {_fmt(-self.objective_offset)}")
        out.append("BOUNDS")
        for v in self.variables:
            if v.kind == BINARY:
                out.append(f" BV BND  {v.name}")
                if (v.lb, v.ub) != (0.0, 1.0):
                    out.append(f" LO BND  {v.name}  {_fmt(v.lb)}")
                    out.append(f" UP BND  {v.name}  {_fmt(v.ub)}")
                continue
            if v.lb == v.ub:
                out.append(f" FX BND  {v.name}  {_fmt(v.lb)}")
            elif v.lb == -math.inf and v.ub == math.inf:
                out.append(f" FR BND  {v.name}")
            else:
                if v.lb == -math.inf:
                    out.append(f" MI BND  {v.name}")
                elif v.lb != 0.0:
                    out.append(f" LO BND  {v.name}  {_fmt(v.lb)}")
                if v.ub != math.inf:
                    out.append(f" UP BND  {v.name}  {_fmt(v.ub)}")
        out.append("ENDATA")
        return "\n".join(out) + "\n"

    def write_mps(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.mps_string())


# -- formatting helpers ----------------------------------------------------


def _fmt(x: float) -> str:
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


def _term(coef: float, var: str) -> str:
    if coef < 0:
        return f"- {_fmt(-coef)} {var}"
    return f"+ {_fmt(coef)} {var}"


def _num_term(x: float) -> str:
    if x < 0:
        return f"- {_fmt(-x)}"
    return f"+ {_fmt(x)}"


def _wrap(head: str, tokens: list[str], width: int = 200) -> str:
    lines = [head]
    for tok in tokens:
        if len(lines[-1]) + 1 + len(tok) > width:
            lines.append("   " + tok)
        else:
            lines[-1] = lines[-1] + " " + tok
    return "\n".join(lines)


def _chunks(seq, n):
    for i in range(0, len(seq), n):
        yield seq[i : i + n]


# -- LP reader ---------------------------------------------------------------

_SECTION_WORDS = {
    "minimize": "objective",
    "minimise": "objective",
    "maximize": "objective-max",
    "maximise": "objective-max",
    "subject": "rows",
    "bounds": "bounds",
    "binaries": "binaries",
    "binary": "binaries",
    "generals": "generals",
    "general": "generals",
    "end": "end",
}

_NUM_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")


def _is_number(tok: str) -> bool:
    return bool(_NUM_RE.match(tok)) or tok.lower() in ("inf", "+inf", "-inf")


def _to_number(tok: str) -> float:
    low = tok.lower()
    if low in ("inf", "+inf"):
        return math.inf
    if low == "-inf":
        return -math.inf
    return float(tok)


def _parse_linear(toks: list[str], ensure):
    """Parse ``[label:] terms [sense rhs]`` from an LP token list.

    Returns (label, coeffs, const, sense, rhs) with sense/rhs None for a
    relation-free expression (the objective).
    """
    label = None
    if toks and toks[0].endswith(":") and len(toks[0]) > 1:
        label = toks[0][:-1]
        toks = toks[1:]
    coeffs: dict[str, float] = {}
    const = 0.0
    sense = None
    rhs = None
    sign = 1.0
    pending: float | None = None

    def flush_pending():
        nonlocal const, pending
        if pending is not None:
            const += pending
            pending = None

    i = 0
    while i < len(toks):
        tok = toks[i]
        if tok in ("<=", ">=", "=", "<", ">"):
            flush_pending()
            sense = {"<": "<=", ">": ">=", "=": "=="}.get(tok, tok)
            rest = toks[i + 1 :]
            rsign = 1.0
            if rest and rest[0] in ("+", "-"):
                rsign = -1.0 if rest[0] == "-" else 1.0
                rest = rest[1:]
            if len(rest) != 1 or not _is_number(rest[0]):
                raise ModelError(f"malformed constraint rhs near {toks[i:]}")
            rhs = rsign * _to_number(rest[0])
            break
        if tok == "+":
            flush_pending()
            sign = 1.0
        elif tok == "-":
            flush_pending()
            sign = -1.0
        elif _is_number(tok):
            flush_pending()
            pending = sign * _to_number(tok)
            sign = 1.0
        else:
            coef = pending if pending is not None else sign
            pending = None
            sign = 1.0
            ensure(tok)
            coeffs[tok] = coeffs.get(tok, 0.0) + coef
        i += 1
    flush_pending()
    return label, coeffs, const, sense, rhs


def read_lp(text: str, name: str = "model") -> MilpModel:
    """Parse the LP subset produced by :meth:`MilpModel.lp_string`.

    Accepts CPLEX-style LP files with a single linear objective, linear
    constraints, a Bounds section and Binaries/Generals sections.
    """
    model = MilpModel(name)
    seen: dict[str, Variable] = {}

    def ensure(varname: str) -> Variable:
        if varname not in seen:
            if not _NAME_RE.match(varname):
                raise ModelError(f"invalid variable name in LP file: {varname!r}")
            # default LP bound convention
            seen[varname] = Variable(varname, CONTINUOUS, 0.0, math.inf)
        return seen[varname]

    obj_tokens: list[str] = []
    row_exprs: list[list[str]] = []
    bound_lines: list[list[str]] = []
    integer_names: list[str] = []
    section = None
    maximize = False

    def feed(section: str, content: str) -> None:
        parts = content.split()
        if not parts:
            return
        if section == "objective":
            obj_tokens.extend(parts)
        elif section == "rows":
            if parts[0].endswith(":") or not row_exprs:
                row_exprs.append([])
            row_exprs[-1].extend(parts)
        elif section == "bounds":
            bound_lines.append(parts)
        elif section in ("binaries", "generals"):
            integer_names.extend(parts)

    for raw in text.splitlines():
        body = raw.split("\\", 1)[0]
        stripped = body.strip()
        if not stripped:
            continue
        norm = re.sub(r"\s+", " ", stripped.lower())
        if norm in ("subject to", "such that", "st", "s.t."):
            section = "rows"
            continue
        head = stripped.split(" ", 1)[0].rstrip(":").lower()
        if head in _SECTION_WORDS and head not in ("subject",):
            sec = _SECTION_WORDS[head]
            if sec == "objective-max":
                maximize = True
                sec = "objective"
            if sec == "end":
                break
            section = sec
            rest = stripped.split(" ", 1)[1] if " " in stripped else ""
            if rest:
                feed(section, rest)
            continue
        if section is None:
            raise ModelError(f"content before any LP section: {stripped!r}")
        feed(section, stripped)

    for tok in integer_names:
        v = ensure(tok)
        v.kind = BINARY
        v.lb = max(v.lb, 0.0)
        v.ub = 1.0 if v.ub == math.inf else min(v.ub, 1.0)

    if obj_tokens:
        _, coeffs, const, sense, _ = _parse_linear(obj_tokens, ensure)
        if sense is not None:
            raise ModelError("objective section contains a relation")
        scale = -1.0 if maximize else 1.0
        model.objective = {v: scale * c for v, c in coeffs.items()}
        model.objective_offset = scale * const

    auto = 0
    for toks in row_exprs:
        if not toks:
            continue
        label, coeffs, const, sense, rhs = _parse_linear(toks, ensure)
        if sense is None:
            raise ModelError(f"constraint without relation: {toks}")
        if label is None:
            label = f"c{auto}"
            auto += 1
        model.rows.append(Row(label, coeffs, sense, rhs - const))
        model._row_names.add(label)

    for toks in bound_lines:
        if len(toks) == 2 and toks[1].lower() == "free":
            v = ensure(toks[0])
            v.lb, v.ub = -math.inf, math.inf
        elif len(toks) == 3 and toks[1] in ("<=", ">=", "="):
            v = ensure(toks[0])
            val = _to_number(toks[2])
            if toks[1] == "<=":
                v.ub = val
            elif toks[1] == ">=":
                v.lb = val
            else:
                v.lb = v.ub = val
        elif len(toks) == 5 and toks[1] == "<=" and toks[3] == "<=":
            v = ensure(toks[2])
            v.lb = _to_number(toks[0])
            v.ub = _to_number(toks[4])
        else:
            raise ModelError(f"unsupported bounds line: {' '.join(toks)}")

    # register variables: referenced order, then orphans from bound sections
    order: list[str] = []
    for v in model.objective:
        if v not in order:
            order.append(v)
    for row in model.rows:
        for v in row.coeffs:
            if v not in order:
                order.append(v)
    for v in seen:
        if v not in order:
            order.append(v)
    for vname in order:
        model._var_index[vname] = len(model.variables)
        model.variables.append(seen[vname])
    return model
