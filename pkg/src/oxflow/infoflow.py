"""Flow-extended type checking: computes, for every expression, its type,
its dependency set (source locations that influence its value), and the
updated dependency context mapping place expressions to dependency sets.

Four analysis modes share one rule engine and differ only in how function
calls are approximated:

* modular: callee effects derived from the instantiated signature, using
  loan sets for the pointer analysis.
* whole: callee bodies are re-analyzed with the argument's dependencies
  seeded onto the parameter; callee-internal locations are attributed to
  the call site. Externs and deep recursion fall back to modular.
* mutblind: every reference is treated as mutable when computing reachable
  targets.
* refblind: loan sets are replaced by type-based may-alias, so a
  dereference may target every in-scope place of the pointee's type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from . import syntax as S
from .ownership import (
    ArityOrProvenanceMismatch,
    IllFormedTheta,
    Loan,
    OwnershipViolation,
    TypeEnv,
    TypeMismatch,
    UnknownFunction,
    UseAfterMove,
    loans,
    mark_moved,
    outlives,
    ownership_safe,
    revive,
    subtype,
)
from .syntax import (
    BOOL_TY,
    SHRD,
    UNIT,
    UNIT_TY,
    UNIQ,
    U32_TY,
    BaseTy,
    Expr,
    FnDef,
    Location,
    PlaceExpr,
    Program,
    RefTy,
    Span,
    TupleTy,
    Ty,
    conflicts,
    copyable,
    erase_provs,
    is_dead,
    key_universe,
    refs,
    strip_dead,
    walk_exprs,
)

DepSet = frozenset  # of location ids
DepCtx = dict  # PlaceExpr -> DepSet

# id range reserved per inlined callee during whole-program analysis
CALLEE_ID_STRIDE = 1_000_000

WHOLE_RECURSION_LIMIT = 32

# names of deliberately seeded analysis bugs, used by mutation testing
BUG_NAMES = (
    "branch-ctrl",
    "assign-conflicts",
    "app-shrd-loans",
    "app-uniq-mut",
    "assignderef-loans",
)


class Mode(Enum):
    MODULAR = "modular"
    WHOLE = "whole"
    MUTBLIND = "mutblind"
    REFBLIND = "refblind"


def update_conflicts(theta: DepCtx, pe: PlaceExpr, kappa: DepSet) -> DepCtx:
    """Add `kappa` to every context entry whose key conflicts with `pe`."""
    if not kappa:
        return theta
    return {k: (v | kappa if conflicts(pe, k) else v) for k, v in theta.items()}


def theta_join(t1: DepCtx, t2: DepCtx) -> DepCtx:
    out = dict(t1)
    for k, v in t2.items():
        out[k] = out.get(k, frozenset()) | v
    return out


def theta_minus(t2: DepCtx, t1: DepCtx) -> DepCtx:
    """Key-wise difference, keeping only keys with new dependencies."""
    out: DepCtx = {}
    for k in set(t2) | set(t1):
        diff = t2.get(k, frozenset()) - t1.get(k, frozenset())
        if diff:
            out[k] = diff
    return out


def deps(theta: DepCtx, kappa: DepSet) -> set[PlaceExpr]:
    """Keys whose dependency set is contained in `kappa`."""
    return {p for p, kp in theta.items() if kp <= kappa}


def theta_get(theta: DepCtx, pe: PlaceExpr) -> DepSet:
    try:
        return theta[pe]
    except KeyError:
        raise IllFormedTheta(f"dependency context has no entry for {pe}") from None


def ptr_kappa(theta: DepCtx, pe: PlaceExpr) -> DepSet:
    """Dependencies of every pointer read while resolving `pe`: the entry of
    each prefix ending just before a dereference."""
    kappa = frozenset()
    for i, seg in enumerate(pe.path):
        if seg == S.DEREF:
            kappa |= theta_get(theta, PlaceExpr(pe.root, pe.path[:i]))
    return kappa


@dataclass
class LocFlow:
    """Analysis state recorded at one source location."""

    kappa: DepSet
    theta_before: DepCtx
    theta_after: DepCtx
    ctrl: tuple[tuple[int, DepSet], ...]  # active (condition location, deps) pairs


@dataclass
class FlowResult:
    fn: str
    mode: Mode
    theta_entry: DepCtx
    exit_theta: DepCtx
    var_exit: dict[str, DepCtx]
    per_loc: dict[int, LocFlow]
    loc_table: dict[int, Location]
    seed_locs: dict[PlaceExpr, Location]
    kappa: DepSet

    def exit_deps(self, var: str) -> DepSet:
        """Dependency set of a variable's root place at the moment its scope
        ends (function exit for parameters)."""
        theta = self.var_exit.get(var)
        if theta is None:
            raise KeyError(f"no exit information for variable {var!r}")
        return theta_get(theta, S.place(var))


def entry_context(fn: FnDef, n_locs: int) -> tuple[DepCtx, dict[PlaceExpr, Location]]:
    """Initial dependency context for a function: each parameter key starts
    from synthetic input locations, one per scalar or reference cell, so
    distinct inputs are distinguishable."""
    keys = key_universe(fn.param, fn.param_ty)
    seeded: dict[PlaceExpr, int] = {}
    seed_locs: dict[PlaceExpr, Location] = {}
    next_id = n_locs
    for k in keys:
        ty = strip_dead(S.type_at(fn.param_ty, k.path))
        if isinstance(ty, (BaseTy, RefTy)):
            seeded[k] = next_id
            seed_locs[k] = Location(next_id, fn.name, fn.span)
            next_id += 1
    theta: DepCtx = {}
    for k in keys:
        ids = {sid for sk, sid in seeded.items() if S.is_path_prefix(k.path, sk.path)
               and sk.root == k.root}
        theta[k] = frozenset(ids)
    return theta, seed_locs


@dataclass
class FactRecorder:
    """Per-location typing facts collected while checking, for downstream
    consumers (the CFG engine, the runtime property checks, the applications)."""

    ty: dict[int, Ty] = field(default_factory=dict)
    loan_sets: dict[int, frozenset[Loan]] = field(default_factory=dict)
    loan_quals: dict[int, str] = field(default_factory=dict)
    calls: dict[int, "CallFact"] = field(default_factory=dict)
    scopes: dict[int, dict[str, Ty]] = field(default_factory=dict)
    provs_after: dict[int, dict[str, frozenset[Loan]]] = field(default_factory=dict)
    constraints: list[tuple[str, str]] = field(default_factory=list)


@dataclass(frozen=True)
class CallFact:
    callee: str
    provargs: tuple[str, ...]
    param_ty: Ty
    ret_ty: Ty


class FlowEngine:
    def __init__(
        self,
        program: Program,
        mode: Mode = Mode.MODULAR,
        *,
        facts=None,
        bugs: frozenset[str] = frozenset(),
        recorder: Optional[FactRecorder] = None,
    ):
        self.program = program
        self.mode = mode
        self.facts = facts  # checker.TypedProgram or None
        self.bugs = bugs
        self.recorder = recorder
        self.depth = 0
        self.call_stack: tuple[str, ...] = ()
        self.ctrl_stack: list[tuple[int, DepSet]] = []
        self.next_offset = CALLEE_ID_STRIDE
        self.per_loc: dict[int, LocFlow] = {}
        self.var_exit: dict[str, DepCtx] = {}
        self.while_iters: dict[int, int] = {}
        self.fn_name = ""

    # -- entry points ---------------------------------------------------------

    def flow_fn(self, fn: FnDef) -> FlowResult:
        if fn.body is None:
            raise TypeMismatch(f"function {fn.name!r} has no body to analyze")
        self.fn_name = fn.name
        n_locs = sum(1 for _ in walk_exprs(fn.body))
        theta, seed_locs = entry_context(fn, n_locs)
        env = TypeEnv().add_provs(fn.provs, abstract=True)
        for p1, p2 in fn.outlives:
            env = outlives(env, p1, p2)
        env = env.bind_var(fn.param, fn.param_ty)
        ty, kappa, env, theta = self.flow(env, theta, fn.body)
        env = subtype(env, ty, fn.ret_ty, fn.span)
        self.var_exit[fn.param] = {k: v for k, v in theta.items() if k.root == fn.param}
        loc_table = S.location_table(fn)
        loc_table.update({l.id: l for l in seed_locs.values()})
        entry_theta, _ = entry_context(fn, n_locs)
        return FlowResult(
            fn=fn.name,
            mode=self.mode,
            theta_entry=entry_theta,
            exit_theta=theta,
            var_exit=self.var_exit,
            per_loc=self.per_loc,
            loc_table=loc_table,
            seed_locs=seed_locs,
            kappa=kappa,
        )

    # -- shared rule pieces -----------------------------------------------------

    def _record(self, e: Expr, env: TypeEnv) -> None:
        if self.recorder is not None and self.depth == 0 and e.loc is not None:
            self.recorder.scopes[e.loc.id] = dict(env.vars)

    def _record_after(self, e: Expr, ty: Ty, env: TypeEnv) -> None:
        if self.recorder is not None and self.depth == 0 and e.loc is not None:
            self.recorder.ty[e.loc.id] = ty
            self.recorder.provs_after[e.loc.id] = dict(env.provs)
            self.recorder.constraints = list(env.constraints)

    def _record_loans(self, e: Expr, qual: str, ls: frozenset[Loan]) -> None:
        if self.recorder is not None and self.depth == 0 and e.loc is not None:
            self.recorder.loan_sets[e.loc.id] = ls
            self.recorder.loan_quals[e.loc.id] = qual

    def _record_flow(self, e: Expr, kappa: DepSet, before: DepCtx, after: DepCtx) -> None:
        if self.depth == 0 and e.loc is not None:
            self.per_loc[e.loc.id] = LocFlow(kappa, before, after, tuple(self.ctrl_stack))

    def read_place(
        self, env: TypeEnv, theta: DepCtx, pe: PlaceExpr, span: Span
    ) -> tuple[Ty, DepSet, TypeEnv]:
        """Move or copy from a place expression, per its type."""
        ty = env.type_of(pe)
        if is_dead(ty):
            raise UseAfterMove(f"use of moved-out place {pe}", span)
        if copyable(ty):
            ls = ownership_safe(env, SHRD, pe, span=span)
            kappa = frozenset().union(*(theta_get(theta, l.place) for l in ls))
            return ty, kappa, env
        if not pe.is_place:
            raise TypeMismatch(f"cannot move {pe} out through a dereference", span)
        ownership_safe(env, UNIQ, pe, span=span)
        kappa = theta_get(theta, pe)
        return ty, kappa, mark_moved(env, pe)

    def _scope_vars_at(self, loc_id: Optional[int], env: TypeEnv) -> dict[str, Ty]:
        if self.facts is not None and loc_id is not None:
            fn_facts = self.facts.functions.get(self.fn_name)
            if fn_facts is not None and loc_id in fn_facts.scopes:
                return fn_facts.scopes[loc_id]
        return dict(env.vars)

    def _refblind_targets(
        self, env: TypeEnv, qual: str, arg: PlaceExpr, arg_ty: Ty, loc_id: Optional[int]
    ) -> frozenset[PlaceExpr]:
        scope = self._scope_vars_at(loc_id, env)
        universe: list[tuple[PlaceExpr, Ty]] = []
        for var, vty in scope.items():
            for k in key_universe(var, vty):
                universe.append((k, strip_dead(S.type_at(vty, k.path))))
        out: set[PlaceExpr] = set()
        for p1 in refs(qual, arg, arg_ty):
            out.add(p1)
            pointee = erase_provs(strip_dead(env.type_of(p1)))
            for k, kty in universe:
                if erase_provs(kty) == pointee:
                    out.add(k)
        return frozenset(out)

    def apply_call(
        self,
        env: TypeEnv,
        theta: DepCtx,
        e: S.Call,
        *,
        loc_id: Optional[int],
        call_loc: int,
        span: Span,
    ) -> tuple[Ty, DepSet, TypeEnv, DepCtx]:
        """Shared per-mode semantics of a function call, used by both the
        syntax-directed engine and the dataflow engine."""
        fn = self.program.functions.get(e.fn)
        if fn is None:
            raise UnknownFunction(f"unknown function {e.fn!r}", span)
        if len(e.provargs) != len(fn.provs):
            raise ArityOrProvenanceMismatch(
                f"{e.fn} expects {len(fn.provs)} provenance arguments, got {len(e.provargs)}",
                span,
            )
        for p in e.provargs:
            env.prov_loans(p)  # raises on unknown provenance
        subst = dict(zip(fn.provs, e.provargs))
        param_ty = S.subst_provs(fn.param_ty, subst)
        ret_ty = S.subst_provs(fn.ret_ty, subst)

        arg_ty = env.type_of(e.arg)
        if is_dead(arg_ty):
            raise UseAfterMove(f"use of moved-out place {e.arg}", span)
        env = subtype(env, arg_ty, param_ty, span)
        for p1, p2 in fn.outlives:
            env = outlives(env, subst[p1], subst[p2])

        if self.recorder is not None and self.depth == 0 and loc_id is not None:
            self.recorder.calls[loc_id] = CallFact(e.fn, tuple(e.provargs), param_ty, ret_ty)

        # reachable targets are computed while the argument is still live
        mutblind = self.mode is Mode.MUTBLIND
        if self.mode is Mode.REFBLIND:
            shrd_targets = self._refblind_targets(env, SHRD, e.arg, param_ty, loc_id)
            uniq_targets = self._refblind_targets(env, UNIQ, e.arg, param_ty, loc_id)
        else:
            shrd_targets = loans(env, SHRD, e.arg, param_ty, mutblind=mutblind, span=span)
            uniq_targets = loans(env, UNIQ, e.arg, param_ty, mutblind=mutblind, span=span)

        _, kappa_pi, env = self.read_place(env, theta, e.arg, span)

        kappa_arg = frozenset([call_loc]) | kappa_pi
        if "app-shrd-loans" not in self.bugs:
            for p in shrd_targets:
                kappa_arg |= theta_get(theta, p)

        if (
            self.mode is Mode.WHOLE
            and fn.body is not None
            and e.fn not in self.call_stack
            and len(self.call_stack) < WHOLE_RECURSION_LIMIT
        ):
            return self._whole_call(env, theta, fn, subst, e.arg, param_ty, ret_ty, call_loc)

        if "app-uniq-mut" not in self.bugs:
            for p in uniq_targets:
                theta = update_conflicts(theta, p, kappa_arg)
        return ret_ty, kappa_arg, env, theta

    def _whole_call(
        self,
        env: TypeEnv,
        theta: DepCtx,
        fn: FnDef,
        subst: dict[str, str],
        arg: PlaceExpr,
        param_ty: Ty,
        ret_ty: Ty,
        call_loc: int,
    ) -> tuple[Ty, DepSet, TypeEnv, DepCtx]:
        """Analyze the callee body with the argument's per-place dependencies
        seeded onto the parameter, then translate parameter flows back onto
        the argument and attribute callee-internal locations to the call."""
        offset = self.next_offset
        self.next_offset += CALLEE_ID_STRIDE
        prefix = f"{fn.name}@{offset // CALLEE_ID_STRIDE}::"

        var_map = {fn.param: prefix + fn.param}
        prov_map = dict(subst)
        for node in walk_exprs(fn.body):
            if isinstance(node, S.Let):
                var_map.setdefault(node.var, prefix + node.var)
            elif isinstance(node, S.LetProv):
                for p in node.provs:
                    prov_map.setdefault(p, prefix + p)
        body = _rename_expr(fn.body, var_map, prov_map, offset)

        param_name = var_map[fn.param]
        env_c = env.bind_var(param_name, param_ty)
        theta_c = dict(theta)
        for k in key_universe(param_name, param_ty):
            caller_key = arg.extend(k.path)
            theta_c[k] = theta_get(theta, caller_key)

        saved = (self.depth, self.call_stack)
        self.depth += 1
        self.call_stack = self.call_stack + (fn.name,)
        try:
            ty_r, kappa_r, env_r, theta_r = self.flow(env_c, theta_c, body)
            env_r = subtype(env_r, ty_r, ret_ty, fn.span)
        finally:
            self.depth, self.call_stack = saved

        env_r = env_r.drop_var(param_name)
        remap = lambda ids: frozenset(i if i < offset else call_loc for i in ids)
        theta_out = {
            k: remap(v) for k, v in theta_r.items() if not k.root.startswith(prefix)
        }
        return ret_ty, remap(kappa_r), env_r, theta_out

    # -- the rule dispatcher -----------------------------------------------------

    def flow(
        self, env: TypeEnv, theta: DepCtx, e: Expr
    ) -> tuple[Ty, DepSet, TypeEnv, DepCtx]:
        self._record(e, env)
        before = theta
        ty, kappa, env, theta = self._flow_inner(env, theta, e)
        self._record_after(e, ty, env)
        self._record_flow(e, kappa, before, theta)
        return ty, kappa, env, theta

    def _flow_inner(
        self, env: TypeEnv, theta: DepCtx, e: Expr
    ) -> tuple[Ty, DepSet, TypeEnv, DepCtx]:
        loc = e.loc.id if e.loc is not None else None
        span = e.span

        match e:
            case S.Const(value=v):
                if v is UNIT or v == UNIT:
                    ty: Ty = UNIT_TY
                elif isinstance(v, bool):
                    ty = BOOL_TY
                else:
                    ty = U32_TY
                return ty, frozenset([loc]), env, theta

            case S.PlaceUse(pe=pe):
                ty = env.type_of(pe)
                if is_dead(ty):
                    raise UseAfterMove(f"use of moved-out place {pe}", span)
                if copyable(ty):
                    ls = ownership_safe(env, SHRD, pe, span=span)
                    self._record_loans(e, SHRD, ls)
                    kappa = frozenset().union(*(theta_get(theta, l.place) for l in ls))
                    return ty, kappa, env, theta
                if not pe.is_place:
                    raise TypeMismatch(f"cannot move {pe} out through a dereference", span)
                ls = ownership_safe(env, UNIQ, pe, span=span)
                self._record_loans(e, UNIQ, ls)
                kappa = theta_get(theta, pe)
                return ty, kappa, mark_moved(env, pe), theta

            case S.TupleE(elems=elems):
                tys: list[Ty] = []
                kappa = frozenset([loc])
                for elem in elems:
                    t, k, env, theta = self.flow(env, theta, elem)
                    tys.append(t)
                    kappa |= k
                return TupleTy(tuple(tys)), kappa, env, theta

            case S.Let(var=var, ty=decl_ty, rhs=rhs, body=body):
                t1, k1, env, theta = self.flow(env, theta, rhs)
                env = subtype(env, t1, decl_ty, span)
                theta = dict(theta)
                for k in key_universe(var, decl_ty):
                    theta[k] = k1
                env = env.bind_var(var, decl_ty)
                t2, k2, env, theta = self.flow(env, theta, body)
                if self.depth == 0:
                    self.var_exit[var] = {k: v for k, v in theta.items() if k.root == var}
                theta = {k: v for k, v in theta.items() if k.root != var}
                env = env.drop_var(var)
                return t2, k2, env, theta

            case S.Assign(target=pe, rhs=rhs) if pe.is_place:
                t_rhs, k_rhs, env, theta = self.flow(env, theta, rhs)
                sx = env.type_of(pe)
                if not is_dead(sx):
                    ownership_safe(env, UNIQ, pe, span=span)
                env = subtype(env, t_rhs, strip_dead(sx), span)
                kappa_w = k_rhs | frozenset([loc])
                if "assign-conflicts" in self.bugs:
                    theta = dict(theta)
                    theta[pe] = theta_get(theta, pe) | kappa_w
                else:
                    theta = update_conflicts(theta, pe, kappa_w)
                env = revive(env, pe, strip_dead(sx))
                return UNIT_TY, frozenset(), env, theta

            case S.Assign(target=pe, rhs=rhs):
                t_rhs, k_rhs, env, theta = self.flow(env, theta, rhs)
                sx = env.type_of(pe)
                if is_dead(sx):
                    raise UseAfterMove(f"assignment through moved-out {pe}", span)
                ls = ownership_safe(env, UNIQ, pe, span=span)
                self._record_loans(e, UNIQ, ls)
                env = subtype(env, t_rhs, strip_dead(sx), span)
                # the write target is decided by the pointers read along the
                # dereference chain, so their dependencies flow into it too
                kappa_w = k_rhs | frozenset([loc]) | ptr_kappa(theta, pe)
                if "assignderef-loans" in self.bugs:
                    theta = update_conflicts(theta, pe, kappa_w)
                else:
                    for loan in ls:
                        theta = update_conflicts(theta, loan.place, kappa_w)
                return UNIT_TY, frozenset(), env, theta

            case S.Seq(first=first, second=second):
                _, _, env, theta = self.flow(env, theta, first)
                return self.flow(env, theta, second)

            case S.Borrow(qual=qual, prov=prov, target=target):
                if env.is_abstract(prov):
                    raise TypeMismatch(f"cannot borrow into abstract provenance {prov!r}", span)
                if env.prov_loans(prov):
                    raise OwnershipViolation(
                        f"provenance {prov!r} already holds loans", span
                    )
                t_target = env.type_of(target)
                if is_dead(t_target):
                    raise UseAfterMove(f"borrow of moved-out place {target}", span)
                ls = ownership_safe(env, qual, target, span=span)
                self._record_loans(e, qual, ls)
                kappa = frozenset([loc])
                for loan in ls:
                    kappa |= theta_get(theta, loan.place)
                env = env.set_prov(prov, ls)
                return RefTy(qual, prov, t_target), kappa, env, theta

            case S.LetProv(provs=provs, body=body):
                env = env.add_provs(provs)
                ty, kappa, env, theta = self.flow(env, theta, body)
                env = env.drop_provs(provs)
                return ty, kappa, env, theta

            case S.If(cond=cond, then=then, els=els):
                t_c, k1, env1, theta1 = self.flow(env, theta, cond)
                if strip_dead(t_c) != BOOL_TY:
                    raise TypeMismatch(f"branch condition must be bool, got {t_c}", span)
                self.ctrl_stack.append((cond.loc.id if cond.loc else -1, k1))
                try:
                    t2, k2, env2, theta2 = self.flow(env1, theta1, then)
                    t3, k3, env3, theta3 = self.flow(env1, theta1, els)
                finally:
                    self.ctrl_stack.pop()
                if strip_dead(t2) != strip_dead(t3):
                    raise TypeMismatch(
                        f"branch arms have different types: {t2} vs {t3}", span
                    )
                env_j = env2.join(env3)
                theta_p = theta_join(theta2, theta3)
                if "branch-ctrl" not in self.bugs:
                    changed = theta_minus(theta_p, theta1)
                    theta_p = {
                        k: (v | k1 if k in changed else v) for k, v in theta_p.items()
                    }
                return t2, k1 | k2 | k3, env_j, theta_p

            case S.While(cond=cond, body=body):
                n_locs = sum(1 for _ in walk_exprs(e))
                limit = 2 + (len(theta) + 4) * (n_locs + 4)
                iters = 0
                env_i, theta_i = env, theta
                for _ in range(limit):
                    iters += 1
                    t_c, k1, env1, theta1 = self.flow(env_i, theta_i, cond)
                    if strip_dead(t_c) != BOOL_TY:
                        raise TypeMismatch(f"loop condition must be bool, got {t_c}", span)
                    self.ctrl_stack.append((cond.loc.id if cond.loc else -1, k1))
                    try:
                        _, k2, env2, theta2 = self.flow(env1, theta1, body)
                    finally:
                        self.ctrl_stack.pop()
                    if env2.vars != env1.vars:
                        raise TypeMismatch(
                            "loop body moves or rebinds variables from the enclosing scope",
                            span,
                        )
                    theta_p = theta_join(theta1, theta2)
                    if "branch-ctrl" not in self.bugs:
                        changed = theta_minus(theta_p, theta1)
                        theta_p = {
                            k: (v | k1 if k in changed else v) for k, v in theta_p.items()
                        }
                    env_next = env1.join(env2)
                    if theta_p == theta_i and env_next.provs == env_i.provs:
                        if loc is not None:
                            self.while_iters[loc] = iters
                        return UNIT_TY, frozenset(), env_next, theta_p
                    env_i, theta_i = env_next, theta_p
                raise IllFormedTheta("loop analysis failed to reach a fixpoint", span)

            case S.Call():
                return self.apply_call(
                    env, theta, e, loc_id=loc, call_loc=loc, span=span
                )

        raise TypeError(f"unhandled expression {e!r}")


def _rename_expr(
    e: Expr, var_map: dict[str, str], prov_map: dict[str, str], offset: int
) -> Expr:
    """Copy an expression tree, renaming variables and provenances and
    shifting location ids into a private range."""

    def rpe(pe: PlaceExpr) -> PlaceExpr:
        return PlaceExpr(var_map.get(pe.root, pe.root), pe.path)

    def rloc(node: Expr, copy: Expr) -> Expr:
        copy.span = node.span
        if node.loc is not None:
            copy.loc = Location(node.loc.id + offset, node.loc.fn, node.loc.span)
        return copy

    match e:
        case S.Const(value=v):
            return rloc(e, S.Const(v))
        case S.PlaceUse(pe=pe):
            return rloc(e, S.PlaceUse(rpe(pe)))
        case S.TupleE(elems=elems):
            return rloc(e, S.TupleE([_rename_expr(x, var_map, prov_map, offset) for x in elems]))
        case S.Let(var=var, ty=ty, rhs=rhs, body=body):
            return rloc(
                e,
                S.Let(
                    var_map.get(var, var),
                    S.subst_provs(ty, prov_map),
                    _rename_expr(rhs, var_map, prov_map, offset),
                    _rename_expr(body, var_map, prov_map, offset),
                ),
            )
        case S.Assign(target=t, rhs=rhs):
            return rloc(e, S.Assign(rpe(t), _rename_expr(rhs, var_map, prov_map, offset)))
        case S.Seq(first=f, second=s):
            return rloc(
                e,
                S.Seq(
                    _rename_expr(f, var_map, prov_map, offset),
                    _rename_expr(s, var_map, prov_map, offset),
                ),
            )
        case S.Borrow(qual=q, prov=p, target=t):
            return rloc(e, S.Borrow(q, prov_map.get(p, p), rpe(t)))
        case S.LetProv(provs=ps, body=body):
            return rloc(
                e,
                S.LetProv(
                    [prov_map.get(p, p) for p in ps],
                    _rename_expr(body, var_map, prov_map, offset),
                ),
            )
        case S.If(cond=c, then=t, els=el):
            return rloc(
                e,
                S.If(
                    _rename_expr(c, var_map, prov_map, offset),
                    _rename_expr(t, var_map, prov_map, offset),
                    _rename_expr(el, var_map, prov_map, offset),
                ),
            )
        case S.While(cond=c, body=b):
            return rloc(
                e,
                S.While(
                    _rename_expr(c, var_map, prov_map, offset),
                    _rename_expr(b, var_map, prov_map, offset),
                ),
            )
        case S.Call(fn=f, provargs=pa, arg=arg):
            return rloc(e, S.Call(f, [prov_map.get(p, p) for p in pa], rpe(arg)))
    raise TypeError(f"unhandled expression {e!r}")


def flow_expr(
    mode: Mode,
    program: Program,
    env: TypeEnv,
    theta: DepCtx,
    e: Expr,
    *,
    bugs: frozenset[str] = frozenset(),
) -> tuple[Ty, DepSet, TypeEnv, DepCtx]:
    """Run the flow judgment on a single expression under a given context."""
    engine = FlowEngine(program, mode, bugs=bugs)
    return engine.flow(env, theta, e)


def analyze_fn(
    program: Program,
    fn_name: str,
    mode: Mode = Mode.MODULAR,
    *,
    facts=None,
    bugs: frozenset[str] = frozenset(),
    recorder: Optional[FactRecorder] = None,
) -> FlowResult:
    fn = program.functions.get(fn_name)
    if fn is None:
        raise UnknownFunction(f"unknown function {fn_name!r}")
    engine = FlowEngine(program, mode, facts=facts, bugs=bugs, recorder=recorder)
    return engine.flow_fn(fn)
