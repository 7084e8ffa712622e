"""Applications over flow results: program slicer, information-flow-control
checker, and the precision ablation reporter."""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .checker import TypedProgram, typecheck
from .infoflow import FlowResult, Mode, analyze_fn, theta_minus
from .ownership import OxError
from .parser import load_program
from .syntax import Location, PlaceExpr, Program, Span, place, walk_exprs
from . import syntax as S


class UnresolvedCriterion(OxError):
    pass


@dataclass(frozen=True)
class SliceCriterion:
    fn: str
    var: Optional[str] = None
    loc_id: Optional[int] = None
    direction: str = "back"  # "back" | "fwd"

    def __post_init__(self):
        if (self.var is None) == (self.loc_id is None):
            raise UnresolvedCriterion("criterion needs exactly one of: variable, location")


@dataclass
class SliceResult:
    fn: str
    direction: str
    locations: list[int]
    spans: list[Span]

    def to_json(self) -> dict:
        return {
            "fn": self.fn,
            "direction": self.direction,
            "locations": self.locations,
            "spans": [s.to_json() for s in self.spans],
        }


def resolve_span_criterion(
    program: Program, fn_name: str, line: int, col: int
) -> int:
    """The innermost expression covering a source point."""
    fn = program.functions.get(fn_name)
    if fn is None or fn.body is None:
        raise UnresolvedCriterion(f"unknown function {fn_name!r}")
    source = program.source
    offsets = _line_offsets(source)
    if line - 1 >= len(offsets):
        raise UnresolvedCriterion(f"line {line} is outside the source")
    point = offsets[line - 1] + (col - 1)
    best = None
    best_len = None
    for node in walk_exprs(fn.body):
        sp = node.span
        start = offsets[sp.line - 1] + (sp.col - 1)
        if start <= point < start + sp.length:
            if best_len is None or sp.length <= best_len:
                best, best_len = node, sp.length
    if best is None or best.loc is None:
        raise UnresolvedCriterion(f"no expression at {line}:{col} in {fn_name}")
    return best.loc.id


def _line_offsets(source: str) -> list[int]:
    offsets = [0]
    for i, ch in enumerate(source):
        if ch == "\n":
            offsets.append(i + 1)
    return offsets


def compute_slice(
    program: Program,
    criterion: SliceCriterion,
    mode: Mode = Mode.MODULAR,
    *,
    typed: Optional[TypedProgram] = None,
    result: Optional[FlowResult] = None,
) -> SliceResult:
    """Backward: the criterion's dependency set (a variable's exit
    dependencies, or the dependency set computed at a location). Forward:
    every location whose value or state contribution carries the criterion
    location."""
    typed = typed if typed is not None else typecheck(program)
    result = result if result is not None else analyze_fn(
        program, criterion.fn, mode, facts=typed
    )
    if criterion.direction == "back":
        if criterion.var is not None:
            try:
                dep = result.exit_deps(criterion.var)
            except KeyError:
                raise UnresolvedCriterion(
                    f"no variable {criterion.var!r} in {criterion.fn}"
                ) from None
        else:
            if criterion.loc_id not in result.per_loc:
                raise UnresolvedCriterion(f"no location {criterion.loc_id} in {criterion.fn}")
            dep = result.per_loc[criterion.loc_id].kappa
        locs = sorted(dep)
    else:
        if criterion.loc_id is None:
            target = _var_binding_loc(program, criterion.fn, criterion.var)
        else:
            target = criterion.loc_id
        locs = sorted(forward_slice(result, target))
    spans = [result.loc_table[l].span for l in locs if l in result.loc_table]
    return SliceResult(criterion.fn, criterion.direction, locs, spans)


def _var_binding_loc(program: Program, fn_name: str, var: str) -> int:
    fn = program.functions[fn_name]
    for node in walk_exprs(fn.body):
        if isinstance(node, S.Let) and node.var == var and node.loc is not None:
            return node.loc.id
    raise UnresolvedCriterion(f"no let binding for {var!r} in {fn_name}")


def forward_slice(result: FlowResult, target: int) -> set[int]:
    """Locations influenced by the target: value dependencies or new state
    contributions carrying it, closed transitively."""
    reached = {target}
    changed = True
    while changed:
        changed = False
        for loc, lf in result.per_loc.items():
            if loc in reached:
                continue
            hit = bool(lf.kappa & reached)
            if not hit:
                delta = theta_minus(lf.theta_after, lf.theta_before)
                hit = any(v & reached for v in delta.values())
            if hit:
                reached.add(loc)
                changed = True
    return reached


# ---------------------------------------------------------------------------
# IFC


@dataclass(frozen=True)
class IfcPolicy:
    secure_vars: frozenset[tuple[str, str]] = frozenset()  # (fn, var)
    secure_fns: frozenset[str] = frozenset()
    sink_fns: frozenset[str] = frozenset()


@dataclass
class IfcViolation:
    source: str
    sink_loc: int
    fn: str
    chain: list[int]

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "sink": self.sink_loc,
            "fn": self.fn,
            "chain": self.chain,
        }


def policy_from_annotations(program: Program) -> IfcPolicy:
    secure_vars = set()
    secure_fns = set()
    sink_fns = set()
    for fn in program.functions.values():
        if fn.secure:
            secure_fns.add(fn.name)
        if fn.insecure and fn.body is None:
            sink_fns.add(fn.name)
    for fn_name, vars_ in program.secure_lets.items():
        for v in vars_:
            secure_vars.add((fn_name, v))
    return IfcPolicy(frozenset(secure_vars), frozenset(secure_fns), frozenset(sink_fns))


def _source_locations(
    program: Program, result: FlowResult, fn_name: str, policy: IfcPolicy
) -> dict[str, set[int]]:
    """Location ids whose presence in a dependency set marks a secure
    source. A marked let contributes its right-hand side's locations plus
    the dependency set the binding starts with (a plain read such as
    `let secret: u32 = w` has no literal of its own, only dependencies);
    a marked function contributes every location where it is called."""
    fn = program.functions[fn_name]
    out: dict[str, set[int]] = {}
    for node in walk_exprs(fn.body):
        if isinstance(node, S.Let) and (fn_name, node.var) in policy.secure_vars:
            ids = {n.loc.id for n in walk_exprs(node.rhs) if n.loc is not None}
            rhs_loc = node.rhs.loc.id if node.rhs.loc is not None else None
            if rhs_loc is not None and rhs_loc in result.per_loc:
                ids |= result.per_loc[rhs_loc].kappa
            out.setdefault(f"{fn_name}.{node.var}", set()).update(ids)
        elif isinstance(node, S.Call) and node.fn in policy.secure_fns:
            if node.loc is not None:
                out.setdefault(node.fn, set()).add(node.loc.id)
    return out


def ifc_check(
    program: Program,
    policy: Optional[IfcPolicy] = None,
    mode: Mode = Mode.MODULAR,
    *,
    typed: Optional[TypedProgram] = None,
) -> list[IfcViolation]:
    """Flag flows from secure sources into insecure sink calls. A sink call
    leaks when any source location is in its argument dependencies or in
    the dependencies of a branch condition governing it (implicit flows)."""
    typed = typed if typed is not None else typecheck(program)
    policy = policy if policy is not None else policy_from_annotations(program)
    violations: list[IfcViolation] = []
    for fn in program.functions.values():
        if fn.body is None:
            continue
        result = analyze_fn(program, fn.name, mode, facts=typed)
        sources = _source_locations(program, result, fn.name, policy)
        if not sources:
            continue
        for node in walk_exprs(fn.body):
            if not isinstance(node, S.Call) or node.fn not in policy.sink_fns:
                continue
            if node.loc is None or node.loc.id not in result.per_loc:
                continue
            lf = result.per_loc[node.loc.id]
            for mark, src_locs in sources.items():
                chain: Optional[list[int]] = None
                direct = lf.kappa & src_locs
                if direct:
                    chain = [min(direct), node.loc.id]
                else:
                    for cond_loc, cond_kappa in lf.ctrl:
                        implied = cond_kappa & src_locs
                        if implied:
                            chain = [min(implied), cond_loc, node.loc.id]
                            break
                if chain is not None:
                    violations.append(IfcViolation(mark, node.loc.id, fn.name, chain))
    return violations


# ---------------------------------------------------------------------------
# Precision ablation


@dataclass
class AblationRow:
    program: str
    fn: str
    var: str
    mode: str
    size: int
    base_size: int

    @property
    def pct_increase(self) -> Optional[float]:
        if self.base_size == 0:
            return None
        return (self.size - self.base_size) / self.base_size

    def to_json(self) -> dict:
        return {
            "program": self.program,
            "fn": self.fn,
            "var": self.var,
            "mode": self.mode,
            "size": self.size,
            "base_size": self.base_size,
            "pct_increase": self.pct_increase,
        }


def pct_increase(size: int, base_size: int) -> float:
    """Relative growth of a dependency set against a baseline size."""
    if base_size == 0:
        raise ValueError("baseline dependency set is empty")
    return (size - base_size) / base_size


@dataclass
class AblationReport:
    rows: list[AblationRow] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (program, reason)

    def summary(self) -> dict:
        out: dict[str, dict] = {}
        by_mode: dict[str, list[AblationRow]] = {}
        for row in self.rows:
            by_mode.setdefault(row.mode, []).append(row)
        for mode, rows in sorted(by_mode.items()):
            pcts = [r.pct_increase for r in rows if r.pct_increase is not None]
            nonzero = [p for p in pcts if p != 0]
            out[mode] = {
                "cases": len(rows),
                "zero_fraction": (len(pcts) - len(nonzero)) / len(pcts) if pcts else 1.0,
                "median_nonzero_pct": statistics.median(nonzero) if nonzero else 0.0,
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["program", "fn", "var", "mode", "size", "base_size", "pct_increase"])
        for r in self.rows:
            pct = r.pct_increase
            writer.writerow(
                [r.program, r.fn, r.var, r.mode, r.size, r.base_size,
                 "" if pct is None else f"{pct:.6g}"]
            )
        return buf.getvalue()

    def histogram_json(self) -> str:
        data: dict[str, list[float]] = {}
        for r in self.rows:
            if r.pct_increase is not None:
                data.setdefault(r.mode, []).append(r.pct_increase)
        return json.dumps({"pct_increase": data, "summary": self.summary()}, indent=2)


def ablation_report(
    corpus: Iterable[tuple[str, Program, TypedProgram]],
    base: Mode = Mode.MODULAR,
    others: Iterable[Mode] = (Mode.WHOLE, Mode.MUTBLIND, Mode.REFBLIND),
) -> AblationReport:
    """Exit dependency-set sizes per (function, variable, mode) with the
    relative growth against the baseline mode."""
    report = AblationReport()
    others = list(others)
    for name, program, typed in corpus:
        for fn in program.functions.values():
            if fn.body is None:
                continue
            try:
                results = {m: analyze_fn(program, fn.name, m, facts=typed)
                           for m in [base] + others}
            except OxError as exc:
                report.skipped.append((f"{name}:{fn.name}", str(exc)))
                continue
            base_res = results[base]
            for var in sorted(base_res.var_exit):
                if var.startswith("%"):
                    continue
                base_size = len(base_res.exit_deps(var))
                for m in others:
                    try:
                        size = len(results[m].exit_deps(var))
                    except KeyError:
                        continue
                    report.rows.append(
                        AblationRow(name, fn.name, var, m.value, size, base_size)
                    )
    return report
