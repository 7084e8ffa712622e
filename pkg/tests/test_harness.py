import pytest

from oxflow.checker import typecheck
from oxflow.harness import (
    check_argument_influence,
    check_mutation_conflicts,
    check_noninterference,
    check_unique_mutation_boundary,
    gen_stack,
    reference_taking_fns,
    make_call_context,
    ni_subjects,
)
from oxflow.infoflow import Mode
from oxflow.interp import Ptr
from oxflow.ownership import Loan, TypeEnv, outlives
from oxflow.parser import load_program
from oxflow.syntax import RefTy, U32_TY, UNIQ, place


def test_gen_stack_scalar():
    env = TypeEnv().bind_var("x", U32_TY)
    stack = gen_stack(env, 1)
    assert isinstance(stack.frames[0]["x"], int)
    assert 0 <= stack.frames[0]["x"] < (1 << 16)


def test_gen_stack_reference_targets_loan():
    env = TypeEnv().add_provs(["r"]).bind_var("y", U32_TY)
    env = env.set_prov("r", frozenset({Loan(UNIQ, place("y"))}))
    env = env.bind_var("p", RefTy(UNIQ, "r", U32_TY))
    stack = gen_stack(env, 3)
    assert stack.frames[0]["p"] == Ptr(0, "y", ())


def test_gen_stack_deterministic():
    env = TypeEnv().bind_var("x", U32_TY).bind_var("b", U32_TY)
    assert gen_stack(env, 42).frames == gen_stack(env, 42).frames


def test_trivial_program_passes():
    program = load_program("fn main(u: unit) -> u32 { let x: u32 = 1; x }")
    reports = check_noninterference(program, Mode.MODULAR, 50)
    assert all(r.passed for r in reports)
    assert sum(r.trials for r in reports) == 50


def test_branch_bug_detected():
    program = load_program(
        "fn main(w: (bool, u32)) -> u32 {"
        " let x: u32 = 1; if w.0 { x := 2; () } else { () }; x }"
    )
    typed = typecheck(program)
    clean = check_noninterference(program, Mode.MODULAR, 300, typed=typed, seed=5)
    assert all(r.passed for r in clean)
    bugged = check_noninterference(
        program, Mode.MODULAR, 300, typed=typed, seed=5,
        bugs=frozenset({"branch-ctrl"}),
    )
    assert any(r.violations for r in bugged)


def test_ni_subjects_excludes_reference_params():
    program = load_program(
        "fn helper<p>(x: &p uniq u32) -> u32 { *x }"
        "fn main(w: u32) -> u32 { w }"
    )
    assert ni_subjects(program) == ["main"]


def test_make_call_context_builds_loans():
    program = load_program(
        "fn f<pa>(q: (&pa uniq u32, u32)) -> u32 { *q.0 := q.1; q.1 }"
    )
    fn = program.functions["f"]
    ctx = make_call_context(program, fn)
    arg_ty = ctx.env.var_ty(ctx.arg_var)
    assert isinstance(arg_ty.elems[0], RefTy)
    assert len(ctx.env.prov_loans(arg_ty.elems[0].prov)) == 2  # retarget freedom
    stack = gen_stack(ctx.env, 7)
    assert isinstance(stack.frames[0][ctx.arg_var][0], Ptr)


def test_effect_boundary_on_reference_program():
    program = load_program(
        "fn f<pa, pb>(q: (&pa uniq u32, &pb shrd u32)) -> u32 {"
        " *q.0 := *q.1; *q.1 }"
    )
    typecheck(program)
    fn = program.functions["f"]
    assert fn in reference_taking_fns(program)
    r3 = check_unique_mutation_boundary(program, fn, 120, seed=2)
    assert r3.trials > 0 and r3.passed, r3.violations[:2]
    r4 = check_argument_influence(program, fn, 120, seed=2)
    assert r4.trials > 0 and r4.passed, r4.violations[:2]
    program2 = load_program(
        "fn main(w: (u32, u32)) -> u32 { let t: (u32, u32) = (w.0, w.1);"
        " t.0 := w.1; t.0 }"
    )
    typecheck(program2)
    r1 = check_mutation_conflicts(program2, "main", 50)
    assert r1.trials > 0 and r1.passed
