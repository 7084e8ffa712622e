import pytest

from oxflow.checker import typecheck
from oxflow.interp import (
    BudgetExceeded,
    Interpreter,
    Ptr,
    Stack,
    default_externs,
    eval_place,
    run_program,
    value_from_json,
    value_to_json,
)
from oxflow.ownership import OxError
from oxflow.parser import load_program
from oxflow.syntax import (
    BOOL_TY,
    TupleTy,
    U32_TY,
    UNIT,
    place,
    strip_dead,
)


def test_eval_place_examples():
    s = Stack()
    s.push({"x": (0, 0), "y": Ptr(0, "x", ()), "z": Ptr(0, "x", (1,))})
    assert eval_place(s, place("z").deref()) == Ptr(0, "x", (1,))
    assert eval_place(s, place("y").deref().field(1)) == Ptr(0, "x", (1,))
    assert eval_place(s, place("x")) == Ptr(0, "x", ())


def test_borrow_chain_mutates_target():
    program = load_program(
        "fn main(u: unit) -> (u32, u32) {"
        " let x: (u32, u32) = (0, 0);"
        " (letprov<r1, r2, r3, r4>"
        "  let y: &r2 uniq (u32, u32) = &r1 uniq x;"
        "  let z: &r4 uniq u32 = &r3 uniq (*y).1;"
        "  *z := 1);"
        " x }"
    )
    typecheck(program)
    value, _ = run_program(program, "main", UNIT)
    assert value == (0, 1)


def test_const_eval():
    program = load_program("fn main(u: unit) -> u32 { 1 }")
    value, _ = run_program(program, "main", UNIT)
    assert value == 1


def test_cp_copies_through_references():
    program = load_program(
        "fn cp<p1, p2>(a: (&p1 uniq u32, &p2 shrd u32)) -> unit { *a.0 := *a.1 }"
        "fn main(w: (u32, u32)) -> (u32, u32) {"
        " let x: u32 = w.0; let y: u32 = w.1;"
        " (letprov<r1, r2>"
        "  let t: (&r1 uniq u32, &r2 shrd u32) = (&r1 uniq x, &r2 shrd y);"
        "  cp<r1, r2>(t));"
        " (x, y) }"
    )
    typecheck(program)
    value, _ = run_program(program, "main", (7, 42))
    assert value == (42, 42)


def test_step_budget():
    program = load_program(
        "fn main(u: unit) -> unit { let g: bool = true; while g { () } }"
    )
    typecheck(program)
    with pytest.raises(BudgetExceeded):
        run_program(program, "main", UNIT, budget=1000)


def test_determinism():
    program = load_program(
        "extern fn osc(x: u32) -> u32;"
        "fn main(w: u32) -> u32 { osc<>(w) }"
    )
    typecheck(program)
    a, _ = run_program(program, "main", 5)
    b, _ = run_program(program, "main", 5)
    assert a == b


def test_extern_stub_only_mutates_unique_targets():
    program = load_program(
        "extern fn f<pa, pb>(q: (&pa uniq u32, &pb shrd u32)) -> u32;"
        "fn main(w: (u32, u32)) -> (u32, u32) {"
        " let a: u32 = w.0; let b: u32 = w.1;"
        " (letprov<r1, r2>"
        "  let q: (&r1 uniq u32, &r2 shrd u32) = (&r1 uniq a, &r2 shrd b);"
        "  f<r1, r2>(q));"
        " (a, b) }"
    )
    typecheck(program)
    value, _ = run_program(program, "main", (1, 2))
    assert value[1] == 2  # the shared target is untouched
    assert value[0] != 1  # the unique target was rewritten


def test_value_level_type_preservation(corpus):
    """Final parameter values keep the shape of their declared type."""

    def shape_ok(value, ty):
        ty = strip_dead(ty)
        if isinstance(ty, TupleTy):
            return isinstance(value, tuple) and len(value) == len(ty.elems) and all(
                shape_ok(v, t) for v, t in zip(value, ty.elems)
            )
        if ty == BOOL_TY:
            return isinstance(value, bool)
        if ty == U32_TY:
            return isinstance(value, int) and not isinstance(value, bool)
        return value == UNIT or isinstance(value, Ptr)

    from oxflow.harness import _build_arg, ni_subjects
    import random

    rng = random.Random(1)
    for name, program, typed in corpus[:12]:
        for fn_name in ni_subjects(program):
            fn = program.functions[fn_name]
            arg = _build_arg(fn.param_ty, rng)
            interp = Interpreter(program, externs=default_externs)
            stack = Stack()
            stack.push({fn.param: arg})
            value = interp.eval(stack, fn.body)
            assert shape_ok(stack.frames[0][fn.param], fn.param_ty), name
            assert shape_ok(value, fn.ret_ty), name


def test_value_json_round_trip():
    ty = TupleTy((U32_TY, BOOL_TY, TupleTy((U32_TY, U32_TY))))
    value = (5, True, (1, 2))
    encoded = value_to_json(value)
    assert value_from_json(encoded, ty) == value
    with pytest.raises(OxError):
        value_from_json([1], ty)
