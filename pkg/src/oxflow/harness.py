"""Randomized testing of the analysis soundness properties.

The noninterference harness draws pairs of well-typed stacks that agree on
a dependency closure, runs both, and checks that (a) the function's result
and (b) each tracked place's final value are equal whenever their
dependencies agreed initially. The same machinery drives mutation testing
(seeded analysis bugs must be caught) and the runtime property checks about
mutation conflicts and function-call effect boundaries.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import syntax as S
from .checker import TypedProgram, typecheck
from .infoflow import DepCtx, FlowResult, Mode, analyze_fn, deps
from .interp import (
    BudgetExceeded,
    Interpreter,
    Ptr,
    Stack,
    default_externs,
    eval_place,
    run_program,
)
from .ownership import Loan, TypeEnv, loans
from .parser import load_program
from .syntax import (
    SHRD,
    UNIT,
    UNIQ,
    BaseTy,
    FnDef,
    PlaceExpr,
    Program,
    RefTy,
    TupleTy,
    Ty,
    conflicts,
    key_universe,
    place,
    strip_dead,
)


@dataclass
class NiViolation:
    program: str
    fn: str
    mode: Mode
    part: str  # "a" or "b"
    key: Optional[str]
    seed: int
    detail: str


@dataclass
class NiReport:
    program: str
    fn: str
    mode: Mode
    trials: int = 0
    checks_a: int = 0
    checks_b: int = 0
    skipped_budget: int = 0
    violations: list[NiViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def merge(self, other: "NiReport") -> None:
        self.trials += other.trials
        self.checks_a += other.checks_a
        self.checks_b += other.checks_b
        self.skipped_budget += other.skipped_budget
        self.violations.extend(other.violations)


# ---------------------------------------------------------------------------
# Stack generation


def random_value(ty: Ty, rng: random.Random, env: Optional[TypeEnv] = None,
                 stack: Optional[Stack] = None) -> object:
    """A well-typed random value: u32 uniform in [0, 2^16), bool uniform,
    tuples componentwise. Reference types need an environment binding their
    provenance to candidate loan targets."""
    ty = strip_dead(ty)
    if isinstance(ty, TupleTy):
        return tuple(random_value(t, rng, env, stack) for t in ty.elems)
    if isinstance(ty, RefTy):
        if env is None or stack is None:
            raise ValueError("reference-typed values need provenance loan targets")
        targets = sorted(env.prov_loans(ty.prov), key=str)
        if not targets:
            raise ValueError(f"provenance {ty.prov} has no loan targets")
        chosen = rng.choice(targets)
        return eval_place(stack, chosen.place)
    if ty == S.BOOL_TY:
        return rng.random() < 0.5
    if ty == S.UNIT_TY:
        return UNIT
    return rng.randrange(0, 1 << 16)


def gen_stack(env: TypeEnv, seed: int) -> Stack:
    """A well-typed stack for a typing context: one frame binding every
    variable, references pointing at a uniformly chosen loan target of
    their provenance."""
    rng = random.Random(seed)
    stack = Stack()
    stack.push({})
    frame = stack.frames[0]
    ref_vars: list[tuple[str, Ty]] = []
    for name, ty in env.vars.items():
        if any(isinstance(t, RefTy) for t in _walk_tys(ty)):
            ref_vars.append((name, ty))
        else:
            frame[name] = random_value(ty, rng)
    for name, ty in ref_vars:  # backing variables exist by now
        frame[name] = random_value(ty, rng, env, stack)
    return stack


def _walk_tys(ty: Ty) -> Iterable[Ty]:
    yield ty
    ty = strip_dead(ty)
    if isinstance(ty, TupleTy):
        for t in ty.elems:
            yield from _walk_tys(t)
    elif isinstance(ty, RefTy):
        yield from _walk_tys(ty.inner)


def _leaf_places(root: str, ty: Ty) -> list[PlaceExpr]:
    """Scalar and reference cells under a variable (no dereferences)."""
    out: list[PlaceExpr] = []

    def walk(pe: PlaceExpr, t: Ty) -> None:
        t = strip_dead(t)
        if isinstance(t, TupleTy):
            for i, elem in enumerate(t.elems):
                walk(pe.field(i), elem)
        else:
            out.append(pe)

    walk(place(root), ty)
    return out


def _read_key(stack: Stack, pe: PlaceExpr):
    return stack.read_ptr(eval_place(stack, pe, frame=0))


# ---------------------------------------------------------------------------
# Noninterference


def ni_subjects(program: Program) -> list[str]:
    """Functions the harness can evaluate directly: defined, with a
    parameter type free of references (so no abstract provenances)."""
    out = []
    for fn in program.functions.values():
        if fn.body is None:
            continue
        if any(isinstance(t, RefTy) for t in _walk_tys(fn.param_ty)):
            continue
        out.append(fn.name)
    return out


def check_noninterference(
    program: Program,
    mode: Mode,
    trials: int,
    *,
    seed: int = 0,
    fn_name: Optional[str] = None,
    typed: Optional[TypedProgram] = None,
    bugs: frozenset[str] = frozenset(),
    program_name: str = "<program>",
    budget: int = 200_000,
) -> list[NiReport]:
    """Run randomized noninterference trials for every evaluable function.

    Each trial draws a base stack, picks a target (the result value or one
    tracked place), copies the target's dependency closure into a second
    stack while re-randomizing everything else, runs both, and asserts
    equality for every claim whose premise holds.
    """
    typed = typed if typed is not None else typecheck(program)
    subjects = [fn_name] if fn_name else ni_subjects(program)
    reports = []
    for name in subjects:
        reports.append(
            _check_fn(program, typed, name, mode, trials, seed, bugs, program_name, budget)
        )
    return reports


def _check_fn(
    program: Program,
    typed: TypedProgram,
    fn_name: str,
    mode: Mode,
    trials: int,
    seed: int,
    bugs: frozenset[str],
    program_name: str,
    budget: int,
) -> NiReport:
    fn = program.functions[fn_name]
    result = analyze_fn(program, fn_name, mode, facts=typed, bugs=bugs)
    report = NiReport(program_name, fn_name, mode)

    theta0 = result.theta_entry
    leaves = _leaf_places(fn.param, fn.param_ty)
    # precompute dependency closures: one for the result, one per exit key
    targets: list[tuple[str, Optional[PlaceExpr], set[PlaceExpr]]] = [
        ("a", None, deps(theta0, result.kappa))
    ]
    for key, kp in sorted(result.exit_theta.items(), key=lambda kv: str(kv[0])):
        targets.append(("b", key, deps(theta0, kp)))
    agree_leaves = {
        id(t): {l for d in t[2] for l in _leaf_places_under(d, fn, leaves)}
        for t in targets
    }

    rng = random.Random(seed)
    interp = Interpreter(program, budget=budget, externs=default_externs)
    for trial in range(trials):
        trial_seed = rng.randrange(1 << 62)
        trng = random.Random(trial_seed)
        v1 = _build_arg(fn.param_ty, trng)
        target = targets[trial % len(targets)]
        copy_set = agree_leaves[id(target)]
        v2 = _perturb(fn.param_ty, v1, copy_set, place(fn.param), trng)

        stacks = []
        values = []
        skipped = False
        for v in (v1, v2):
            stack = Stack()
            stack.push({fn.param: v})
            interp.steps = 0
            try:
                values.append(interp.eval(stack, fn.body))
            except BudgetExceeded:
                skipped = True
                break
            stacks.append(stack)
        if skipped:
            report.skipped_budget += 1
            continue
        report.trials += 1

        s1 = Stack()
        s1.frames = [stacks[0].frames[0]]
        s2 = Stack()
        s2.frames = [stacks[1].frames[0]]
        for part, key, dep_keys in targets:
            if not _agrees(fn, v1, v2, dep_keys):
                continue
            if part == "a":
                report.checks_a += 1
                if values[0] != values[1]:
                    report.violations.append(
                        NiViolation(
                            program_name, fn_name, mode, "a", None, trial_seed,
                            f"result differs: {values[0]!r} vs {values[1]!r}",
                        )
                    )
            else:
                report.checks_b += 1
                out1 = _read_key(s1, key)
                out2 = _read_key(s2, key)
                if out1 != out2:
                    report.violations.append(
                        NiViolation(
                            program_name, fn_name, mode, "b", str(key), trial_seed,
                            f"{key} differs: {out1!r} vs {out2!r}",
                        )
                    )
    return report


def _leaf_places_under(dep_key: PlaceExpr, fn: FnDef, leaves: list[PlaceExpr]):
    """Leaf cells that must agree for a dependency-context key to agree.

    Keys reaching through dereferences pin down the pointer cell too, so
    the whole prefix chain of leaf cells is included.
    """
    out = []
    for leaf in leaves:
        if conflicts(dep_key, leaf):
            out.append(leaf)
    return out


def _agrees(fn: FnDef, v1, v2, dep_keys: set[PlaceExpr]) -> bool:
    s1 = Stack()
    s1.push({fn.param: v1})
    s2 = Stack()
    s2.push({fn.param: v2})
    for k in dep_keys:
        try:
            if _read_key(s1, k) != _read_key(s2, k):
                return False
        except Exception:
            return False
    return True


def _build_arg(ty: Ty, rng: random.Random):
    return random_value(ty, rng)


def _perturb(ty: Ty, value, copy_leaves: set[PlaceExpr], root: PlaceExpr, rng: random.Random):
    """Copy the leaves in `copy_leaves`, re-randomize the rest."""
    ty = strip_dead(ty)
    if isinstance(ty, TupleTy):
        return tuple(
            _perturb(t, value[i], copy_leaves, root.field(i), rng)
            for i, t in enumerate(ty.elems)
        )
    if root in copy_leaves:
        return value
    return random_value(ty, rng)


# ---------------------------------------------------------------------------
# Corpus handling


def load_corpus(corpus_dir: str | Path) -> list[tuple[str, Program, TypedProgram]]:
    out = []
    for path in sorted(Path(corpus_dir).glob("*.ox")):
        program = load_program(path.read_text())
        typed = typecheck(program)
        out.append((path.name, program, typed))
    return out


def run_corpus_ni(
    corpus_dir: str | Path,
    modes: Iterable[Mode] = tuple(Mode),
    trials: int = 1000,
    seed: int = 0,
    bugs: frozenset[str] = frozenset(),
) -> list[NiReport]:
    reports = []
    for name, program, typed in load_corpus(corpus_dir):
        for mode in modes:
            reports.extend(
                check_noninterference(
                    program, mode, trials, seed=seed, typed=typed, bugs=bugs,
                    program_name=name,
                )
            )
    return reports


# ---------------------------------------------------------------------------
# Runtime effect-boundary and locality properties


@dataclass
class PropertyReport:
    name: str
    trials: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


def check_mutation_conflicts(
    program: Program, fn_name: str, trials: int, seed: int = 0
) -> PropertyReport:
    """After every single assignment, each place whose stored value changed
    must conflict with the assignment's concrete target."""
    fn = program.functions[fn_name]
    report = PropertyReport("mutation-conflicts")
    rng = random.Random(seed)

    def hook(expr, ptr: Ptr, before: list, stack: Stack) -> None:
        report.trials += 1
        target = PlaceExpr(ptr.root, ptr.fields)
        for fidx, frame in enumerate(before):
            if fidx != ptr.frame:
                if stack.frames[fidx] != frame:
                    # a different frame changed: always a violation
                    report.violations.append(
                        f"{fn_name}: assignment to {ptr} changed frame {fidx}"
                    )
                continue
            for var, old in frame.items():
                new = stack.frames[fidx].get(var)
                for leaf in _changed_leaves(old, new, place(var)):
                    if not conflicts(leaf, target):
                        report.violations.append(
                            f"{fn_name}: {leaf} changed but does not conflict "
                            f"with target {target}"
                        )

    interp = Interpreter(program, budget=200_000, externs=default_externs, on_assign=hook)
    for _ in range(trials):
        v = _build_arg(fn.param_ty, rng)
        stack = Stack()
        stack.push({fn.param: v})
        interp.steps = 0
        try:
            interp.eval(stack, fn.body)
        except BudgetExceeded:
            continue
    return report


def _changed_leaves(old, new, pe: PlaceExpr):
    if isinstance(old, tuple) and isinstance(new, tuple) and old != () and len(old) == len(new) \
            and not isinstance(old, Ptr):
        for i, (o, n) in enumerate(zip(old, new)):
            yield from _changed_leaves(o, n, pe.field(i))
    else:
        if old != new:
            yield pe


@dataclass
class CallContext:
    """A synthetic calling context for a reference-taking function: backing
    variables for every reference in the parameter type, with provenances
    mapped to candidate targets."""

    env: TypeEnv
    arg_var: str
    fn_name: str
    provargs: list[str]


def make_call_context(program: Program, fn: FnDef, n_extra_targets: int = 1) -> CallContext:
    """Build an environment for calling `fn` directly: each abstract
    provenance gets a concrete counterpart with one or more backing
    variables as loan targets, plus a few decoy variables."""
    env = TypeEnv()
    counter = [0]
    provargs: list[str] = []
    mapping: dict[str, str] = {}

    def fresh(prefix: str) -> str:
        counter[0] += 1
        return f"{prefix}{counter[0]}"

    for p in fn.provs:
        r = fresh("cr")
        mapping[p] = r
        provargs.append(r)
    arg_ty = S.subst_provs(fn.param_ty, mapping)

    env2 = env.add_provs(provargs)

    def walk(ty: Ty) -> None:
        nonlocal env2
        ty = strip_dead(ty)
        if isinstance(ty, TupleTy):
            for t in ty.elems:
                walk(t)
        elif isinstance(ty, RefTy):
            walk(ty.inner)
            targets = []
            for _ in range(1 + n_extra_targets):
                backing = fresh("b")
                env2 = env2.bind_var(backing, ty.inner)
                targets.append(Loan(ty.qual, place(backing)))
            current = env2.prov_loans(ty.prov)
            env2 = env2.set_prov(ty.prov, current | frozenset(targets))

    walk(arg_ty)
    for _ in range(2):  # decoys outside the argument's reach
        env2 = env2.bind_var(fresh("d"), S.U32_TY)
    arg = fresh("arg")
    env2 = env2.bind_var(arg, arg_ty)
    return CallContext(env2, arg, fn.name, provargs)


def reference_taking_fns(program: Program) -> list[FnDef]:
    """Defined functions whose parameter references have base-typed
    pointees (so backing variables and extern stubs are constructible)."""
    out = []
    for fn in program.functions.values():
        if fn.body is None:
            continue
        ok = True
        for t in _walk_tys(fn.param_ty):
            if isinstance(t, RefTy) and not isinstance(strip_dead(t.inner), BaseTy):
                ok = False
        for t in _walk_tys(fn.ret_ty):
            if isinstance(t, RefTy):
                ok = False
        if ok and fn.provs:
            out.append(fn)
    return out


def check_unique_mutation_boundary(
    program: Program, fn: FnDef, trials: int, seed: int = 0
) -> PropertyReport:
    """Reverting the unique-reference targets of the argument after a call
    must restore the caller-visible stack exactly."""
    report = PropertyReport("unique-mutation-boundary")
    ctx = make_call_context(program, fn)
    arg_ty = ctx.env.var_ty(ctx.arg_var)
    uniq_targets = loans(ctx.env, UNIQ, place(ctx.arg_var), arg_ty)
    interp = Interpreter(program, budget=200_000, externs=default_externs)
    rng = random.Random(seed)
    for t in range(trials):
        stack = gen_stack(ctx.env, rng.randrange(1 << 62))
        before = stack.snapshot()
        interp.steps = 0
        try:
            interp._call_fn(fn, stack.frames[0][ctx.arg_var], stack)
        except BudgetExceeded:
            continue
        report.trials += 1
        reverted = Stack()
        reverted.frames = stack.frames
        for pe in uniq_targets:
            try:
                ptr = eval_place(_of_frames(before), pe, frame=0)
            except Exception:
                continue
            old = _of_frames(before).read_ptr(ptr)
            reverted.write_ptr(ptr, old)
        if reverted.frames != before:
            report.violations.append(
                f"{fn.name}: call mutated places outside its unique targets"
            )
    return report


def check_argument_influence(
    program: Program, fn: FnDef, trials: int, seed: int = 0
) -> PropertyReport:
    """Two stacks agreeing on the argument and its reachable targets must
    produce equal call results and equal post-states on that set."""
    report = PropertyReport("argument-influence")
    ctx = make_call_context(program, fn)
    arg_ty = ctx.env.var_ty(ctx.arg_var)
    shrd_targets = loans(ctx.env, SHRD, place(ctx.arg_var), arg_ty)
    agreement = {place(ctx.arg_var)} | set(shrd_targets)
    interp = Interpreter(program, budget=200_000, externs=default_externs)
    rng = random.Random(seed)
    for t in range(trials):
        s1 = gen_stack(ctx.env, rng.randrange(1 << 62))
        s2 = gen_stack(ctx.env, rng.randrange(1 << 62))
        # force agreement on the argument (pointer values included) and on
        # every place reachable from it
        s2.frames[0][ctx.arg_var] = s1.frames[0][ctx.arg_var]
        for pe in shrd_targets:
            try:
                ptr = eval_place(s1, pe, frame=0)
            except Exception:
                continue
            s2.write_ptr(ptr, s1.read_ptr(ptr))
        interp.steps = 0
        try:
            v1 = interp._call_fn(fn, s1.frames[0][ctx.arg_var], s1)
            v2 = interp._call_fn(fn, s2.frames[0][ctx.arg_var], s2)
        except BudgetExceeded:
            continue
        report.trials += 1
        if v1 != v2:
            report.violations.append(f"{fn.name}: results differ on agreeing inputs")
            continue
        for pe in agreement:
            try:
                a = s1.read_ptr(eval_place(s1, pe, frame=0))
                b = s2.read_ptr(eval_place(s2, pe, frame=0))
            except Exception:
                continue
            if a != b:
                report.violations.append(
                    f"{fn.name}: post-state differs at {pe} despite agreement"
                )
    return report


def _of_frames(frames: list) -> Stack:
    s = Stack()
    s.frames = frames
    return s
