"""Big-step interpreter over a stack of frames, the ground truth for the
noninterference harness and the runtime agreement checks.

Values are plain Python data: u32 as int, bool as bool, unit as the empty
tuple, tuples as tuples of values, and references as `Ptr` records holding a
fully concrete (frame, root, fields) address so shadowed or re-entered
frames cannot be confused.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

from . import syntax as S
from .ownership import OxError
from .syntax import DEREF, UNIT, Expr, FnDef, PlaceExpr, Program, RefTy, TupleTy, Ty


class BudgetExceeded(OxError):
    pass


class DanglingDeref(OxError):
    pass


class Ptr(NamedTuple):
    frame: int
    root: str
    fields: tuple[int, ...]

    def __str__(self) -> str:
        path = "".join(f".{i}" for i in self.fields)
        return f"ptr({self.frame}:{self.root}{path})"


Value = object  # int | bool | tuple | Ptr


class Stack:
    """A stack of frames mapping variables to values."""

    def __init__(self) -> None:
        self.frames: list[dict[str, Value]] = []

    def push(self, frame: Optional[dict[str, Value]] = None) -> None:
        self.frames.append(frame if frame is not None else {})

    def pop(self) -> dict[str, Value]:
        return self.frames.pop()

    def find_frame(self, root: str) -> int:
        for i in range(len(self.frames) - 1, -1, -1):
            if root in self.frames[i]:
                return i
        raise DanglingDeref(f"unbound variable {root!r} at runtime")

    def read_ptr(self, ptr: Ptr) -> Value:
        if ptr.frame >= len(self.frames) or ptr.root not in self.frames[ptr.frame]:
            raise DanglingDeref(f"dangling pointer {ptr}")
        val = self.frames[ptr.frame][ptr.root]
        for i in ptr.fields:
            val = val[i]
        return val

    def write_ptr(self, ptr: Ptr, value: Value) -> None:
        if ptr.frame >= len(self.frames) or ptr.root not in self.frames[ptr.frame]:
            raise DanglingDeref(f"dangling pointer {ptr}")
        frame = self.frames[ptr.frame]

        def rebuild(cur: Value, fields: tuple[int, ...]) -> Value:
            if not fields:
                return value
            assert isinstance(cur, tuple)
            i = fields[0]
            return cur[:i] + (rebuild(cur[i], fields[1:]),) + cur[i + 1 :]

        frame[ptr.root] = rebuild(frame[ptr.root], ptr.fields)

    def snapshot(self) -> list[dict[str, Value]]:
        return [dict(f) for f in self.frames]

    def restore(self, snap: list[dict[str, Value]]) -> None:
        self.frames = [dict(f) for f in snap]


def eval_place(stack: Stack, pe: PlaceExpr, frame: Optional[int] = None) -> Ptr:
    """Reduce a place expression to a concrete address, following pointer
    values through the stack."""
    cur = Ptr(stack.find_frame(pe.root) if frame is None else frame, pe.root, ())
    for seg in pe.path:
        if seg == DEREF:
            val = stack.read_ptr(cur)
            if not isinstance(val, Ptr):
                raise DanglingDeref(f"dereference of non-pointer value at {cur}")
            cur = val
        else:
            cur = Ptr(cur.frame, cur.root, cur.fields + (seg,))
    return cur


# invoked around each assignment: (expr, concrete target, frames before, stack after)
AssignHook = Callable[[Expr, Ptr, list, Stack], None]


@dataclass
class ExternCall:
    """Everything an extern implementation may inspect."""

    name: str
    arg_value: Value
    arg_ty: Ty
    stack: Stack
    ret_ty: Ty


class Interpreter:
    def __init__(
        self,
        program: Program,
        *,
        budget: int = 1_000_000,
        externs: Optional[Callable[[ExternCall], Value]] = None,
        on_assign: Optional[AssignHook] = None,
    ):
        self.program = program
        self.budget = budget
        self.steps = 0
        self.externs = externs
        self.on_assign = on_assign

    def _tick(self, span) -> None:
        self.steps += 1
        if self.steps > self.budget:
            raise BudgetExceeded("evaluation step budget exceeded", span)

    def call(self, fn_name: str, arg_value: Value, stack: Optional[Stack] = None) -> Value:
        fn = self.program.functions[fn_name]
        stack = stack if stack is not None else Stack()
        return self._call_fn(fn, arg_value, stack)

    def _call_fn(self, fn: FnDef, arg_value: Value, stack: Stack) -> Value:
        if fn.body is None:
            if self.externs is None:
                raise OxError(f"call to extern {fn.name!r} without extern semantics")
            return self.externs(
                ExternCall(fn.name, arg_value, fn.param_ty, stack, fn.ret_ty)
            )
        stack.push({fn.param: arg_value})
        try:
            return self.eval(stack, fn.body)
        finally:
            stack.pop()

    def eval(self, stack: Stack, e: Expr) -> Value:
        self._tick(e.span)
        match e:
            case S.Const(value=v):
                return v
            case S.PlaceUse(pe=pe):
                return stack.read_ptr(eval_place(stack, pe))
            case S.TupleE(elems=elems):
                return tuple(self.eval(stack, x) for x in elems)
            case S.Let(var=var, rhs=rhs, body=body):
                val = self.eval(stack, rhs)
                frame = stack.frames[-1]
                frame[var] = val
                try:
                    return self.eval(stack, body)
                finally:
                    del frame[var]
            case S.Assign(target=target, rhs=rhs):
                val = self.eval(stack, rhs)
                ptr = eval_place(stack, target)
                if self.on_assign is not None:
                    before = stack.snapshot()
                    stack.write_ptr(ptr, val)
                    self.on_assign(e, ptr, before, stack)
                else:
                    stack.write_ptr(ptr, val)
                return UNIT
            case S.Seq(first=first, second=second):
                self.eval(stack, first)
                return self.eval(stack, second)
            case S.Borrow(target=target):
                return eval_place(stack, target)
            case S.LetProv(body=body):
                return self.eval(stack, body)
            case S.If(cond=cond, then=then, els=els):
                c = self.eval(stack, cond)
                return self.eval(stack, then if c else els)
            case S.While(cond=cond, body=body):
                while self.eval(stack, cond):
                    self._tick(e.span)
                    self.eval(stack, body)
                return UNIT
            case S.Call(fn=name, arg=arg):
                arg_value = stack.read_ptr(eval_place(stack, arg))
                return self._call_fn(self.program.functions[name], arg_value, stack)
        raise TypeError(f"unhandled expression {e!r}")


def default_externs(call: ExternCall) -> Value:
    """Deterministic stand-in semantics for extern functions: read every
    value reachable from the argument (shared or unique), write a value
    derived from those reads into every unique-reference target, and return
    a value derived from them as well. This is a legitimate implementation
    of any signature, and an adversarial one for the modular call rule."""

    reads: list[int] = []

    def read_leaves(val: Value, ty: Ty) -> None:
        ty = S.strip_dead(ty)
        if isinstance(ty, TupleTy):
            for i, elem_ty in enumerate(ty.elems):
                read_leaves(val[i], elem_ty)
        elif isinstance(ty, RefTy):
            assert isinstance(val, Ptr)
            read_leaves(call.stack.read_ptr(val), ty.inner)
        elif val == UNIT:
            reads.append(0)
        else:
            reads.append(int(val))

    read_leaves(call.arg_value, call.arg_ty)
    h = 2166136261
    for b in call.name.encode():
        h = (h * 16777619 ^ b) & 0xFFFFFFFF
    for r in reads:
        h = (h * 16777619 ^ (r & 0xFFFF) ^ (r >> 16)) & 0xFFFFFFFF

    def mix(salt: int) -> int:
        x = (h ^ (salt * 0x9E3779B1)) & 0xFFFFFFFF
        x = (x * 0x85EBCA6B) & 0xFFFFFFFF
        x ^= x >> 13
        return x

    def value_of(ty: Ty, salt: int) -> Value:
        ty = S.strip_dead(ty)
        if isinstance(ty, TupleTy):
            return tuple(value_of(t, salt * 31 + i + 1) for i, t in enumerate(ty.elems))
        if isinstance(ty, RefTy):
            raise OxError(
                f"extern {call.name!r} cannot synthesize a reference return value"
            )
        if ty == S.BOOL_TY:
            return bool(mix(salt) & 1)
        if ty == S.UNIT_TY:
            return UNIT
        return mix(salt) % (1 << 16)

    def mutate(val: Value, ty: Ty, salt: int) -> None:
        ty = S.strip_dead(ty)
        if isinstance(ty, TupleTy):
            for i, elem_ty in enumerate(ty.elems):
                mutate(val[i], elem_ty, salt * 31 + i + 1)
        elif isinstance(ty, RefTy):
            assert isinstance(val, Ptr)
            pointee = call.stack.read_ptr(val)
            if ty.qual == S.UNIQ:
                call.stack.write_ptr(val, value_of(ty.inner, salt))
                pointee = call.stack.read_ptr(val)
            mutate(pointee, ty.inner, salt * 37 + 5)

    mutate(call.arg_value, call.arg_ty, 11)
    return value_of(call.ret_ty, 7)


def run_program(
    program: Program,
    entry: str,
    arg_value: Value,
    *,
    budget: int = 1_000_000,
    externs: Optional[Callable[[ExternCall], Value]] = default_externs,
    on_assign: Optional[AssignHook] = None,
) -> tuple[Value, Stack]:
    """Evaluate `entry(arg_value)` on a fresh stack; returns the result and
    the stack as it stood at the end of the entry frame."""
    interp = Interpreter(program, budget=budget, externs=externs, on_assign=on_assign)
    fn = program.functions[entry]
    if fn.body is None:
        raise OxError(f"entry function {entry!r} is extern")
    stack = Stack()
    stack.push({fn.param: arg_value})
    try:
        value = interp.eval(stack, fn.body)
    finally:
        final = Stack()
        final.frames = [dict(f) for f in stack.frames]
    return value, final


def value_to_json(val: Value) -> object:
    if isinstance(val, Ptr):
        return {"ptr": {"frame": val.frame, "root": val.root, "fields": list(val.fields)}}
    if isinstance(val, tuple):
        if val == UNIT:
            return None
        return [value_to_json(v) for v in val]
    return val


def value_from_json(data: object, ty: Ty) -> Value:
    ty = S.strip_dead(ty)
    if isinstance(ty, TupleTy):
        if not isinstance(data, list) or len(data) != len(ty.elems):
            raise OxError(f"expected a {len(ty.elems)}-element list for {ty}")
        return tuple(value_from_json(d, t) for d, t in zip(data, ty.elems))
    if ty == S.UNIT_TY:
        return UNIT
    if ty == S.BOOL_TY:
        if not isinstance(data, bool):
            raise OxError("expected a boolean")
        return data
    if ty == S.U32_TY:
        if not isinstance(data, int) or isinstance(data, bool):
            raise OxError("expected an integer")
        return data
    raise OxError(f"cannot build a value of type {ty} from JSON")
