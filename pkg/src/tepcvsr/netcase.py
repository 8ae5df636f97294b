"""Network cases: MATPOWER parsing, validation, and islanding screening."""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass


class CaseError(Exception):
    """Base class for case file problems."""


class ParseError(CaseError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(CaseError):
    pass


@dataclass
class Bus:
    id: int
    is_slack: bool = False


@dataclass
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    susceptance: float  # 1/x, per unit
    rating: float  # long-term thermal limit, MW
    rating_short: float  # short-term limit used in contingency states, MW
    is_transformer: bool = False
    in_service: bool = True


@dataclass
class Generator:
    id: int
    bus: int
    p_min: float
    p_max: float
    cost_coeff: float  # $/MWh, linear
    redispatchable: bool = True
    in_service: bool = True


@dataclass
class Load:
    id: int
    bus: int
    p_demand: float  # MW


@dataclass
class NetworkCase:
    buses: list[Bus]
    branches: list[Branch]
    generators: list[Generator]
    loads: list[Load]
    base_mva: float = 100.0

    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def slack_bus(self) -> int:
        for b in self.buses:
            if b.is_slack:
                return b.id
        raise ValidationError("case has no slack bus")

    def branch_by_id(self, branch_id: int) -> Branch:
        for k in self.branches:
            if k.id == branch_id:
                return k
        raise KeyError(f"no branch {branch_id}")

    def in_service_branches(self) -> list[Branch]:
        return [k for k in self.branches if k.in_service]

    def total_demand(self) -> float:
        return sum(d.p_demand for d in self.loads)


# -- MATPOWER parsing --------------------------------------------------------

_ASSIGN_RE = re.compile(r"mpc\.(\w+)\s*=\s*(.*)")


def _strip_comment(line: str) -> str:
    return line.split("%", 1)[0]


def _collect_matrices(text: str) -> tuple[dict, dict]:
    """Returns ({name: (rows, start_line)}, {name: scalar_string})."""
    matrices: dict[str, tuple[list[tuple[int, list[float]]], int]] = {}
    scalars: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        body = _strip_comment(lines[i])
        m = _ASSIGN_RE.search(body)
        if not m:
            i += 1
            continue
        name, rest = m.group(1), m.group(2).strip()
        if not rest.startswith("["):
            scalars[name] = rest.rstrip(";").strip()
            i += 1
            continue
        if rest.startswith("[") and "{" not in rest:
            rows: list[tuple[int, list[float]]] = []
            start = i
            chunk = rest[1:]
            closed = False
            while True:
                chunk = chunk.strip()
                if chunk.startswith("]"):
                    closed = True
                if chunk and not closed:
                    row_text = chunk.split("]", 1)[0].rstrip(";").strip()
                    if "]" in chunk:
                        closed = True
                    if row_text:
                        for piece in row_text.split(";"):
                            piece = piece.strip()
                            if not piece:
                                continue
                            try:
                                rows.append((i + 1, [float(x) for x in piece.split()]))
                            except ValueError as exc:
                                raise ParseError(
                                    f"malformed row in mpc.{name}: {piece!r}", i + 1
                                ) from exc
                if closed:
                    break
                i += 1
                if i >= len(lines):
                    raise ParseError(f"unterminated matrix mpc.{name}", start + 1)
                chunk = _strip_comment(lines[i])
            matrices[name] = (rows, start + 1)
        i += 1
    return matrices, scalars


def parse_matpower(text: str) -> NetworkCase:
    """Parse a MATPOWER version-2 case into a validated :class:`NetworkCase`.

    Only baseMVA and the bus/gen/branch/gencost matrices are read. AC-only
    quantities (resistance, charging, voltage limits) are ignored.
    """
    matrices, scalars = _collect_matrices(text)
    version = scalars.get("version", "'2'").strip("'\"")
    if version != "2":
        raise ParseError(f"unsupported MATPOWER case version {version!r}")
    try:
        base_mva = float(scalars.get("baseMVA", "100"))
    except ValueError as exc:
        raise ParseError(f"bad baseMVA value {scalars['baseMVA']!r}") from exc

    for required in ("bus", "gen", "branch"):
        if required not in matrices:
            raise ParseError(f"missing mpc.{required} matrix")

    buses: list[Bus] = []
    loads: list[Load] = []
    for lineno, row in matrices["bus"][0]:
        if len(row) < 3:
            raise ParseError("bus row needs at least 3 columns", lineno)
        bus_id = int(row[0])
        buses.append(Bus(id=bus_id, is_slack=int(row[1]) == 3))
        pd = row[2]
        if pd != 0.0:
            loads.append(Load(id=len(loads) + 1, bus=bus_id, p_demand=pd))

    branches: list[Branch] = []
    for lineno, row in matrices["branch"][0]:
        if len(row) < 11:
            raise ParseError("branch row needs at least 11 columns", lineno)
        x = row[3]
        status = int(row[10]) != 0
        if x <= 0.0:
            raise ValidationError(
                f"branch {len(branches) + 1} ({int(row[0])}-{int(row[1])}) has "
                f"non-positive reactance {x}"
                + ("" if status else " (out of service)")
            )
        rate_a = row[5]
        rate_b = row[6] if len(row) > 6 else 0.0
        branches.append(
            Branch(
                id=len(branches) + 1,
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                reactance=x,
                susceptance=1.0 / x,
                rating=rate_a,
                rating_short=rate_b if rate_b > 0 else rate_a,
                is_transformer=(len(row) > 8 and row[8] != 0.0),
                in_service=status,
            )
        )

    cost_rows = matrices.get("gencost", ([], 0))[0]
    n_gen = len(matrices["gen"][0])
    if cost_rows and len(cost_rows) not in (n_gen, 2 * n_gen):
        raise ParseError(
            f"gencost has {len(cost_rows)} rows for {n_gen} generators",
            matrices["gencost"][1],
        )

    generators: list[Generator] = []
    for gi, (lineno, row) in enumerate(matrices["gen"][0]):
        if len(row) < 10:
            raise ParseError("gen row needs at least 10 columns", lineno)
        cost = 0.0
        if cost_rows and gi < len(cost_rows):
            cost = _linear_cost(cost_rows[gi][1], gi + 1, cost_rows[gi][0])
        generators.append(
            Generator(
                id=gi + 1,
                bus=int(row[0]),
                p_min=row[9],
                p_max=row[8],
                cost_coeff=cost,
                in_service=int(row[7]) > 0,
            )
        )
    if not cost_rows and generators:
        warnings.warn("case has no gencost matrix; generator costs set to zero")

    case = NetworkCase(buses, branches, generators, loads, base_mva)
    validate_case(case)
    return case


def _linear_cost(row: list[float], gen_id: int, lineno: int) -> float:
    model = int(row[0])
    ncost = int(row[3])
    coeffs = row[4:]
    if model == 2:
        # polynomial: c_{n-1} .. c_0
        if ncost >= 3:
            warnings.warn(
                f"generator {gen_id}: quadratic cost curve; using its linear term"
            )
            return coeffs[ncost - 2]
        if ncost == 2:
            return coeffs[0]
        return 0.0
    if model == 1:
        # piecewise linear: (x0,y0, x1,y1, ...); use the first-to-last slope
        pts = [(coeffs[2 * i], coeffs[2 * i + 1]) for i in range(ncost)]
        if len(pts) < 2 or pts[-1][0] == pts[0][0]:
            raise ParseError(f"generator {gen_id}: degenerate piecewise cost", lineno)
        warnings.warn(
            f"generator {gen_id}: piecewise cost curve; using its average slope"
        )
        return (pts[-1][1] - pts[0][1]) / (pts[-1][0] - pts[0][0])
    raise ParseError(f"generator {gen_id}: unknown cost model {model}", lineno)


def validate_case(case: NetworkCase) -> None:
    ids = case.bus_ids()
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValidationError(f"duplicate bus ids: {dupes}")
    slack = [b.id for b in case.buses if b.is_slack]
    if not slack:
        raise ValidationError("no slack bus (one bus must have type 3)")
    if len(slack) > 1:
        raise ValidationError(f"multiple slack buses: {slack}")
    known = set(ids)
    for k in case.branches:
        if k.from_bus not in known or k.to_bus not in known:
            raise ValidationError(
                f"branch {k.id} references unknown bus ({k.from_bus}-{k.to_bus})"
            )
        if k.reactance <= 0:
            raise ValidationError(f"branch {k.id}: reactance must be positive")
        if abs(k.susceptance * k.reactance - 1.0) > 1e-12:
            raise ValidationError(f"branch {k.id}: susceptance is not 1/x")
        if k.rating <= 0 or k.rating_short <= 0:
            raise ValidationError(f"branch {k.id}: thermal rating must be positive")
    for g in case.generators:
        if g.bus not in known:
            raise ValidationError(f"generator {g.id} at unknown bus {g.bus}")
        if g.p_min > g.p_max:
            raise ValidationError(f"generator {g.id}: p_min > p_max")
        if g.cost_coeff < 0:
            raise ValidationError(f"generator {g.id}: negative cost coefficient")
    for d in case.loads:
        if d.bus not in known:
            raise ValidationError(f"load {d.id} at unknown bus {d.bus}")
        if d.p_demand < 0:
            raise ValidationError(f"load {d.id}: negative demand")


def to_matpower_text(case: NetworkCase, name: str = "case_export") -> str:
    """Serialize to MATPOWER v2 text; parse(to_matpower_text(c)) == c."""
    demand = {}
    for d in case.loads:
        demand[d.bus] = demand.get(d.bus, 0.0) + d.p_demand
    gen_buses = {g.bus for g in case.generators}
    out = [
        f"function mpc = {name}",
        "mpc.version = '2';",
        f"mpc.baseMVA = {case.base_mva!r};",
        "mpc.bus = [",
    ]
    for b in case.buses:
        btype = 3 if b.is_slack else (2 if b.id in gen_buses else 1)
        pd = demand.get(b.id, 0.0)
        out.append(f"\t{b.id}\t{btype}\t{pd!r}\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;")
    out.append("];")
    out.append("mpc.gen = [")
    for g in case.generators:
        status = 1 if g.in_service else 0
        out.append(
            f"\t{g.bus}\t0\t0\t0\t0\t1\t{case.base_mva!r}\t{status}\t{g.p_max!r}\t{g.p_min!r};"
        )
    out.append("];")
    out.append("mpc.branch = [")
    for k in case.branches:
        tap = 1 if k.is_transformer else 0
        status = 1 if k.in_service else 0
        rate_b = k.rating_short if k.rating_short != k.rating else 0
        out.append(
            f"\t{k.from_bus}\t{k.to_bus}\t0\t{k.reactance!r}\t0\t{k.rating!r}"
            f"\t{rate_b!r}\t0\t{tap}\t0\t{status}\t-360\t360;"
        )
    out.append("];")
    out.append("mpc.gencost = [")
    for g in case.generators:
        out.append(f"\t2\t0\t0\t2\t{g.cost_coeff!r}\t0;")
    out.append("];")
    return "\n".join(out) + "\n"


# -- connectivity ------------------------------------------------------------


def connected_components(
    case: NetworkCase, exclude_branch: int | None = None
) -> list[set[int]]:
    """Components of the in-service network, optionally with one branch removed."""
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for k in case.in_service_branches():
        if k.id == exclude_branch:
            continue
        adj[k.from_bus].append(k.to_bus)
        adj[k.to_bus].append(k.from_bus)
    seen: set[int] = set()
    comps: list[set[int]] = []
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    comp.add(v)
                    stack.append(v)
        comps.append(comp)
    return comps


def islanding_contingencies(case: NetworkCase) -> set[int]:
    """Branch ids whose single outage disconnects the in-service network.

    These are exactly the bridges of the in-service multigraph; a branch with
    an in-service parallel circuit is never a bridge. Raises
    :class:`ValidationError` when the network is already disconnected.
    """
    comps = connected_components(case)
    if len(comps) > 1:
        detail = "; ".join(str(sorted(c)) for c in comps)
        raise ValidationError(f"network is already disconnected: components {detail}")

    adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in case.buses}
    for k in case.in_service_branches():
        adj[k.from_bus].append((k.to_bus, k.id))
        adj[k.to_bus].append((k.from_bus, k.id))

    disc: dict[int, int] = {}
    low: dict[int, int] = {}
    bridges: set[int] = set()
    counter = 0
    for root in adj:
        if root in disc:
            continue
        # iterative Tarjan low-link; skips re-crossing the entry edge by id
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        disc[root] = low[root] = counter
        counter += 1
        while stack:
            u, entry_edge, ptr = stack.pop()
            if ptr < len(adj[u]):
                stack.append((u, entry_edge, ptr + 1))
                v, edge_id = adj[u][ptr]
                if edge_id == entry_edge:
                    continue
                if v in disc:
                    low[u] = min(low[u], disc[v])
                else:
                    disc[v] = low[v] = counter
                    counter += 1
                    stack.append((v, edge_id, 0))
            elif entry_edge != -1:
                # u is fully explored; propagate to its parent on the stack
                parent = stack[-1][0]
                low[parent] = min(low[parent], low[u])
                if low[u] > disc[parent]:
                    bridges.add(entry_edge)
    return bridges
