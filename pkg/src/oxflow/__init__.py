"""oxflow: ownership-based modular information flow analysis for a small
borrow-checked language, with two analysis engines, a randomized
noninterference harness, a program slicer, and an IFC checker."""

from .apps import (
    AblationReport,
    AblationRow,
    IfcPolicy,
    IfcViolation,
    SliceCriterion,
    SliceResult,
    ablation_report,
    compute_slice,
    forward_slice,
    ifc_check,
    pct_increase,
)
from .cfgir import (
    Cfg,
    control_deps,
    dataflow,
    lower,
    postdominators,
    propagate_loans,
)
from .checker import TypedProgram, check_all, typecheck
from .harness import (
    NiReport,
    check_noninterference,
    gen_stack,
    load_corpus,
    run_corpus_ni,
)
from .infoflow import (
    BUG_NAMES,
    FlowResult,
    Mode,
    analyze_fn,
    deps,
    flow_expr,
    theta_join,
    theta_minus,
    update_conflicts,
)
from .interp import Interpreter, Ptr, Stack, eval_place, run_program
from .ownership import (
    Loan,
    OwnershipViolation,
    OxError,
    TypeEnv,
    TypeMismatch,
    UseAfterMove,
    loans,
    outlives,
    ownership_safe,
)
from .parser import load_program, parse, pretty_print
from .syntax import (
    Location,
    Place,
    PlaceExpr,
    Program,
    Span,
    Ty,
    assign_locations,
    conflicts,
    disjoint,
    place,
    places_under,
    refs,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
