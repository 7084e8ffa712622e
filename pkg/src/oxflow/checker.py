"""Type checking with ownership safety, producing a typed program whose
per-location facts (types, loan sets, call instantiations, scopes) feed the
dataflow engine, the runtime property checks, and the applications."""

from __future__ import annotations

from dataclasses import dataclass, field

from .infoflow import CallFact, FactRecorder, FlowEngine, Mode
from .ownership import (
    Loan,
    OxError,
    TypeMismatch,
    UnknownFunction,
    UnknownProvenance,
)
from .syntax import (
    Call,
    FnDef,
    Let,
    LetProv,
    Location,
    Program,
    Ty,
    location_table,
    provs_in,
    walk_exprs,
)


@dataclass
class FnFacts:
    fn: FnDef
    loc_table: dict[int, Location]
    ty: dict[int, Ty]
    loan_sets: dict[int, frozenset[Loan]]
    loan_quals: dict[int, str]
    calls: dict[int, CallFact]
    scopes: dict[int, dict[str, Ty]]
    provs_after: dict[int, dict[str, frozenset[Loan]]]
    constraints: list[tuple[str, str]]


@dataclass
class TypedProgram:
    program: Program
    functions: dict[str, FnFacts] = field(default_factory=dict)


def _validate_fn(program: Program, fn: FnDef) -> None:
    """Structural rules that keep analysis results canonical: variable and
    provenance names are unique per function, signature provenances are
    declared, and called functions exist."""
    sig_provs = provs_in(fn.param_ty) | provs_in(fn.ret_ty)
    undeclared = sig_provs - set(fn.provs)
    if undeclared:
        raise UnknownProvenance(
            f"{fn.name}: signature mentions undeclared provenances {sorted(undeclared)}"
        )
    if len(set(fn.provs)) != len(fn.provs):
        raise UnknownProvenance(f"{fn.name}: duplicate provenance declaration")
    for p1, p2 in fn.outlives:
        if p1 not in fn.provs or p2 not in fn.provs:
            raise UnknownProvenance(f"{fn.name}: outlives constraint on undeclared provenance")
    if fn.body is None:
        return
    seen_vars = {fn.param}
    seen_provs = set(fn.provs)
    for node in walk_exprs(fn.body):
        if isinstance(node, Let):
            if node.var in seen_vars:
                raise TypeMismatch(
                    f"{fn.name}: variable {node.var!r} is bound more than once", node.span
                )
            seen_vars.add(node.var)
        elif isinstance(node, LetProv):
            for p in node.provs:
                if p in seen_provs:
                    raise UnknownProvenance(
                        f"{fn.name}: provenance {p!r} is declared more than once"
                    )
                seen_provs.add(p)
        elif isinstance(node, Call):
            if node.fn not in program.functions:
                raise UnknownFunction(f"{fn.name}: call to unknown function {node.fn!r}", node.span)


def typecheck(program: Program) -> TypedProgram:
    """Check every function and record per-location typing facts.

    Raises the first error encountered; use `check_all` to collect errors
    per function instead.
    """
    typed = TypedProgram(program)
    for fn in program.functions.values():
        _validate_fn(program, fn)
        if fn.body is None:
            typed.functions[fn.name] = FnFacts(
                fn, {}, {}, {}, {}, {}, {}, {}, list()
            )
            continue
        recorder = FactRecorder()
        engine = FlowEngine(program, Mode.MODULAR, recorder=recorder)
        engine.flow_fn(fn)
        typed.functions[fn.name] = FnFacts(
            fn=fn,
            loc_table=location_table(fn),
            ty=recorder.ty,
            loan_sets=recorder.loan_sets,
            loan_quals=recorder.loan_quals,
            calls=recorder.calls,
            scopes=recorder.scopes,
            provs_after=recorder.provs_after,
            constraints=recorder.constraints,
        )
    return typed


def check_all(program: Program) -> dict[str, list[OxError]]:
    """Check each function independently, collecting errors per function."""
    errors: dict[str, list[OxError]] = {}
    for fn in program.functions.values():
        errors[fn.name] = []
        try:
            _validate_fn(program, fn)
            if fn.body is not None:
                recorder = FactRecorder()
                FlowEngine(program, Mode.MODULAR, recorder=recorder).flow_fn(fn)
        except OxError as exc:
            errors[fn.name].append(exc)
    return errors
