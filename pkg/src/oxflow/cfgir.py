"""Basic-block IR and the dataflow engine: lowers typed functions to a
control-flow graph, computes post-dominators and control dependence, builds
provenance loan sets by constraint propagation, and runs a forward dataflow
to a fixpoint whose per-instruction transfer mirrors the syntax-directed
rules.

The lowering consumes the recorded typing facts, so the dataflow pass never
re-runs ownership checking; borrow and dereference instructions carry the
loan sets recorded at their source locations, and call instructions rebuild
the scoped environment recorded at the call site.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from . import syntax as S
from .checker import FnFacts, TypedProgram
from .infoflow import (
    DepCtx,
    FlowEngine,
    FlowResult,
    LocFlow,
    Mode,
    entry_context,
    ptr_kappa,
    theta_get,
    theta_join,
    update_conflicts,
)
from .ownership import IllFormedTheta, Loan, TypeEnv
from .syntax import (
    UNIT,
    Expr,
    FnDef,
    PlaceExpr,
    Program,
    Ty,
    key_universe,
    place,
)


# ---------------------------------------------------------------------------
# IR


@dataclass
class RvConst:
    value: object
    own_loc: bool = True  # whether the constant's location enters its deps


@dataclass
class RvUse:
    pe: PlaceExpr


@dataclass
class RvTuple:
    operands: list[PlaceExpr]  # temporaries holding the element values


@dataclass
class RvRef:
    qual: str
    prov: str
    target: PlaceExpr


@dataclass
class RvJoin:
    """Value of a branch at its join point: the arm result plus the
    condition's dependencies."""

    value: PlaceExpr
    cond: PlaceExpr


Rvalue = Union[RvConst, RvUse, RvTuple, RvRef, RvJoin]


@dataclass
class AssignInstr:
    dest: PlaceExpr
    rv: Rvalue
    loc: int
    init: bool  # binding initialization (set) vs mutation (union conflicts)


@dataclass
class CallInstr:
    dest: PlaceExpr
    fn: str
    provargs: list[str]
    arg: PlaceExpr
    loc: int


@dataclass
class NopInstr:
    loc: int


Instr = Union[AssignInstr, CallInstr, NopInstr]


@dataclass
class Goto:
    target: int


@dataclass
class Switch:
    cond: PlaceExpr
    then_target: int
    else_target: int
    loc: int


@dataclass
class Ret:
    result: PlaceExpr


Terminator = Union[Goto, Switch, Ret]


@dataclass
class Block:
    id: int
    instrs: list[Instr] = field(default_factory=list)
    term: Optional[Terminator] = None


@dataclass
class Cfg:
    fn_name: str
    blocks: list[Block]
    locals: dict[str, Ty]  # parameter, let variables, temporaries
    let_vars: list[str]
    param: str
    n_locs: int

    def successors(self, bid: int) -> list[int]:
        term = self.blocks[bid].term
        if isinstance(term, Goto):
            return [term.target]
        if isinstance(term, Switch):
            return [term.then_target, term.else_target]
        return []

    def predecessors(self) -> dict[int, list[int]]:
        preds: dict[int, list[int]] = {b.id: [] for b in self.blocks}
        for b in self.blocks:
            for s in self.successors(b.id):
                preds[s].append(b.id)
        return preds

    def return_block(self) -> int:
        for b in self.blocks:
            if isinstance(b.term, Ret):
                return b.id
        raise IllFormedTheta("control-flow graph has no return block")


# ---------------------------------------------------------------------------
# Lowering


class _Lowerer:
    def __init__(self, typed: TypedProgram, fn: FnDef):
        self.facts = typed.functions[fn.name]
        self.fn = fn
        self.blocks: list[Block] = [Block(0)]
        self.cur = 0
        self.temps: dict[str, Ty] = {}
        self.let_tys: dict[str, Ty] = {}
        self.let_order: list[str] = []
        self.n_temp = 0

    def new_temp(self, ty: Ty) -> PlaceExpr:
        name = f"%{self.n_temp}"
        self.n_temp += 1
        self.temps[name] = ty
        return place(name)

    def new_block(self) -> int:
        b = Block(len(self.blocks))
        self.blocks.append(b)
        return b.id

    def emit(self, instr: Instr) -> None:
        self.blocks[self.cur].instrs.append(instr)

    def close(self, term: Terminator) -> None:
        assert self.blocks[self.cur].term is None
        self.blocks[self.cur].term = term

    def node_ty(self, e: Expr) -> Ty:
        assert e.loc is not None
        return self.facts.ty[e.loc.id]

    def lower_fn(self) -> Cfg:
        body = self.fn.body
        assert body is not None
        ret = self.lower(body, None)
        self.close(Ret(ret))
        locals_ = {self.fn.param: self.fn.param_ty}
        locals_.update(self.let_tys)
        locals_.update(self.temps)
        n_locs = sum(1 for _ in S.walk_exprs(body))
        return Cfg(
            fn_name=self.fn.name,
            blocks=self.blocks,
            locals=locals_,
            let_vars=self.let_order,
            param=self.fn.param,
            n_locs=n_locs,
        )

    def lower(self, e: Expr, dest: Optional[PlaceExpr], init: bool = True) -> PlaceExpr:
        """Lower `e`, writing its value into `dest` (or a fresh temporary);
        returns the place holding the value."""
        loc = e.loc.id if e.loc is not None else -1

        def target() -> PlaceExpr:
            nonlocal dest
            if dest is None:
                dest = self.new_temp(self.node_ty(e))
            return dest

        match e:
            case S.Const(value=v):
                d = target()
                self.emit(AssignInstr(d, RvConst(v), loc, init))
                return d
            case S.PlaceUse(pe=pe):
                d = target()
                self.emit(AssignInstr(d, RvUse(pe), loc, init))
                return d
            case S.TupleE(elems=elems):
                operands = [self.lower(x, None) for x in elems]
                d = target()
                self.emit(AssignInstr(d, RvTuple(operands), loc, init))
                return d
            case S.Let(var=var, ty=ty, rhs=rhs, body=body):
                self.let_tys[var] = ty
                self.let_order.append(var)
                self.lower(rhs, place(var), True)
                return self.lower(body, dest, init)
            case S.Assign(target=tgt, rhs=rhs):
                t = self.lower(rhs, None)
                self.emit(AssignInstr(tgt, RvUse(t), loc, False))
                d = target()
                self.emit(AssignInstr(d, RvConst(UNIT, own_loc=False), loc, init))
                return d
            case S.Seq(first=first, second=second):
                self.lower(first, None)
                return self.lower(second, dest, init)
            case S.Borrow(qual=q, prov=p, target=tgt):
                d = target()
                self.emit(AssignInstr(d, RvRef(q, p, tgt), loc, init))
                return d
            case S.LetProv(body=body):
                return self.lower(body, dest, init)
            case S.If(cond=cond, then=then, els=els):
                tc = self.lower(cond, None)
                arm_val = self.new_temp(self.node_ty(e))
                b_then = self.new_block()
                b_else = self.new_block()
                b_join = self.new_block()
                self.close(Switch(tc, b_then, b_else, loc))
                self.cur = b_then
                self.lower(then, arm_val, True)
                self.close(Goto(b_join))
                self.cur = b_else
                self.lower(els, arm_val, True)
                self.close(Goto(b_join))
                self.cur = b_join
                d = target()
                self.emit(AssignInstr(d, RvJoin(arm_val, tc), loc, init))
                return d
            case S.While(cond=cond, body=body):
                b_header = self.new_block()
                self.close(Goto(b_header))
                self.cur = b_header
                tc = self.lower(cond, None)
                b_body = self.new_block()
                b_exit = self.new_block()
                self.close(Switch(tc, b_body, b_exit, loc))
                self.cur = b_body
                self.lower(body, None)
                self.close(Goto(b_header))
                self.cur = b_exit
                d = target()
                self.emit(AssignInstr(d, RvConst(UNIT, own_loc=False), loc, init))
                return d
            case S.Call(fn=name, provargs=pa, arg=arg):
                d = target()
                self.emit(CallInstr(d, name, list(pa), arg, loc))
                return d
        raise TypeError(f"unhandled expression {e!r}")


def lower(typed: TypedProgram, fn_name: str) -> Cfg:
    fn = typed.program.functions[fn_name]
    if fn.body is None:
        raise IllFormedTheta(f"cannot lower extern function {fn_name!r}")
    return _Lowerer(typed, fn).lower_fn()


# ---------------------------------------------------------------------------
# Post-dominators and control dependence


def postdominators(cfg: Cfg) -> dict[int, Optional[int]]:
    """Immediate post-dominator of every block, by iterative intersection
    on the reversed graph rooted at the return block."""
    exit_b = cfg.return_block()
    succs = {b.id: cfg.successors(b.id) for b in cfg.blocks}
    for b in cfg.blocks:
        if not succs[b.id] and b.id != exit_b:
            raise IllFormedTheta(f"block {b.id} cannot reach the return block")

    # reverse post-order on the reversed CFG (edges flipped)
    rpreds = succs  # in the reversed graph, successors become predecessors
    radj: dict[int, list[int]] = {b.id: [] for b in cfg.blocks}
    for b in cfg.blocks:
        for s in succs[b.id]:
            radj[s].append(b.id)

    order: list[int] = []
    seen: set[int] = set()

    def dfs(n: int) -> None:
        seen.add(n)
        for m in radj[n]:
            if m not in seen:
                dfs(m)
        order.append(n)

    dfs(exit_b)
    unreachable = {b.id for b in cfg.blocks} - seen
    if unreachable:
        raise IllFormedTheta(f"blocks {sorted(unreachable)} cannot reach the return block")
    rpo = list(reversed(order))
    index = {b: i for i, b in enumerate(rpo)}

    ipdom: dict[int, Optional[int]] = {b.id: None for b in cfg.blocks}
    ipdom[exit_b] = exit_b

    def intersect(a: int, b: int) -> int:
        while a != b:
            while index[a] > index[b]:
                a = ipdom[a]  # type: ignore[assignment]
            while index[b] > index[a]:
                b = ipdom[b]  # type: ignore[assignment]
        return a

    changed = True
    while changed:
        changed = False
        for n in rpo:
            if n == exit_b:
                continue
            preds = [p for p in rpreds[n] if ipdom[p] is not None]
            if not preds:
                continue
            new = preds[0]
            for p in preds[1:]:
                new = intersect(new, p)
            if ipdom[n] != new:
                ipdom[n] = new
                changed = True
    ipdom[exit_b] = None
    return ipdom


def block_control_deps(cfg: Cfg) -> dict[int, set[int]]:
    """One-step control dependence: block -> switch blocks it directly
    depends on, by walking post-dominator chains from branch edges."""
    ipdom = postdominators(cfg)
    deps: dict[int, set[int]] = {b.id: set() for b in cfg.blocks}
    for b in cfg.blocks:
        if not isinstance(b.term, Switch):
            continue
        for s in (b.term.then_target, b.term.else_target):
            runner = s
            while runner != ipdom[b.id] and runner is not None:
                deps[runner].add(b.id)
                if runner == ipdom.get(runner):
                    break
                runner = ipdom[runner]  # type: ignore[assignment]
    return deps


def block_control_closure(cfg: Cfg) -> dict[int, set[int]]:
    """Transitive control dependence (self-dependence excluded): a block
    depends on every switch governing it, directly or through the switches'
    own governors."""
    direct = block_control_deps(cfg)
    closure: dict[int, set[int]] = {b: set(d) for b, d in direct.items()}
    changed = True
    while changed:
        changed = False
        for b, sws in closure.items():
            extra: set[int] = set()
            for sw in sws:
                extra |= closure[sw]
            extra -= sws
            extra.discard(b)
            if extra:
                closure[b] = sws | extra
                changed = True
    for b in closure:
        closure[b].discard(b)
    return closure


def control_deps(cfg: Cfg) -> dict[int, set[int]]:
    """Location-level control dependence: each instruction's location maps
    to the locations of the switch terminators its execution depends on."""
    closure = block_control_closure(cfg)
    out: dict[int, set[int]] = {}
    switch_loc = {
        b.id: b.term.loc for b in cfg.blocks if isinstance(b.term, Switch)
    }
    for b in cfg.blocks:
        sw_locs = {switch_loc[s] for s in closure[b.id]}
        for instr in b.instrs:
            loc = getattr(instr, "loc", None)
            if loc is not None and loc >= 0:
                out.setdefault(loc, set()).update(sw_locs)
    return out


# ---------------------------------------------------------------------------
# Loan propagation from outlives constraints


@dataclass
class OutlivesGraph:
    seeds: dict[str, set[Loan]]
    constraints: list[tuple[str, str]]  # (r1, r2): r1 outlives r2


def build_outlives_graph(cfg: Cfg, facts: FnFacts) -> OutlivesGraph:
    seeds: dict[str, set[Loan]] = {}
    for b in cfg.blocks:
        for instr in b.instrs:
            if isinstance(instr, AssignInstr) and isinstance(instr.rv, RvRef):
                seeds.setdefault(instr.rv.prov, set()).add(
                    Loan(instr.rv.qual, instr.rv.target)
                )
    for p1, p2 in facts.constraints:
        seeds.setdefault(p1, set())
        seeds.setdefault(p2, set())
    return OutlivesGraph(seeds, list(facts.constraints))


def propagate_loans(graph: OutlivesGraph) -> dict[str, frozenset[Loan]]:
    """Least fixpoint of the union equations: every provenance absorbs the
    loans of the provenances that outlive it."""
    out = {r: set(ls) for r, ls in graph.seeds.items()}
    changed = True
    while changed:
        changed = False
        for r1, r2 in graph.constraints:
            if r1 not in out or r2 not in out:
                continue
            before = len(out[r2])
            out[r2] |= out[r1]
            if len(out[r2]) != before:
                changed = True
    return {r: frozenset(ls) for r, ls in out.items()}


# ---------------------------------------------------------------------------
# The dataflow pass


@dataclass
class CfgFlowResult:
    fn: str
    mode: Mode
    cfg: Cfg
    theta_entry: DepCtx
    exit_theta: DepCtx
    var_exit: dict[str, DepCtx]
    block_in: dict[int, DepCtx]
    block_out: dict[int, DepCtx]
    per_instr: dict[int, list[tuple[Instr, DepCtx]]]  # block -> (instr, theta after)
    loan_map: dict[str, frozenset[Loan]]


class _Dataflow:
    def __init__(
        self,
        typed: TypedProgram,
        cfg: Cfg,
        mode: Mode,
        program: Program,
    ):
        self.typed = typed
        self.cfg = cfg
        self.mode = mode
        self.program = program
        self.facts = typed.functions[cfg.fn_name]
        self.fn = program.functions[cfg.fn_name]
        self.engine = FlowEngine(program, mode, facts=typed)
        self.engine.fn_name = cfg.fn_name
        self.ctrl = block_control_closure(cfg)
        self.switch_info = {
            b.id: b.term.cond for b in cfg.blocks if isinstance(b.term, Switch)
        }
        self.block_out: dict[int, DepCtx] = {}
        graph = build_outlives_graph(cfg, self.facts)
        self.loan_map = propagate_loans(graph)

    # loan sets recorded by the checker, per source location
    def _recorded_loans(self, loc: int) -> frozenset[Loan]:
        try:
            return self.facts.loan_sets[loc]
        except KeyError:
            raise IllFormedTheta(
                f"{self.cfg.fn_name}: no recorded loan set at location {loc}"
            ) from None

    def _read_kappa(self, theta: DepCtx, pe: PlaceExpr, loc: int) -> frozenset:
        if pe.is_place:
            return theta_get(theta, pe)
        kappa = frozenset()
        for loan in self._recorded_loans(loc):
            kappa |= theta_get(theta, loan.place)
        return kappa

    def _rv_kappa(self, rv: Rvalue, theta: DepCtx, loc: int) -> frozenset:
        match rv:
            case RvConst(own_loc=own):
                return frozenset([loc]) if own else frozenset()
            case RvUse(pe=pe):
                return self._read_kappa(theta, pe, loc)
            case RvTuple(operands=ops):
                kappa = frozenset([loc])
                for t in ops:
                    kappa |= theta_get(theta, t)
                return kappa
            case RvRef():
                kappa = frozenset([loc])
                for loan in self._recorded_loans(loc):
                    kappa |= theta_get(theta, loan.place)
                return kappa
            case RvJoin(value=v, cond=c):
                return theta_get(theta, v) | theta_get(theta, c)
        raise TypeError(f"unhandled rvalue {rv!r}")

    def _init_dest(self, theta: DepCtx, dest: PlaceExpr, kappa: frozenset) -> DepCtx:
        ty = self.cfg.locals[dest.root]
        theta = dict(theta)
        for k in key_universe(dest.root, ty):
            theta[k] = kappa
        return theta

    def _call_env(self, loc: int) -> TypeEnv:
        """Rebuild the scoped typing environment recorded at a call site."""
        scope = self.facts.scopes[loc]
        provs = dict(self.facts.provs_after[loc])
        for p in self.fn.provs:
            provs.setdefault(p, frozenset())
        return TypeEnv(dict(scope), provs, frozenset(self.fn.provs), ())

    def _transfer_call(self, instr: CallInstr, theta: DepCtx) -> DepCtx:
        env = self._call_env(instr.loc)
        call_expr = S.Call(instr.fn, list(instr.provargs), instr.arg)
        call_expr.span = S.Span(0, 0, 0)
        _, kappa_ret, _, theta = self.engine.apply_call(
            env, theta, call_expr, loc_id=instr.loc, call_loc=instr.loc,
            span=S.Span(0, 0, 0),
        )
        return self._init_dest(theta, instr.dest, kappa_ret)

    def transfer_instr(self, instr: Instr, theta: DepCtx) -> DepCtx:
        match instr:
            case AssignInstr(dest=dest, rv=rv, loc=loc, init=init):
                kappa = self._rv_kappa(rv, theta, loc)
                if init:
                    return self._init_dest(theta, dest, kappa)
                kappa_w = kappa | frozenset([loc])
                if dest.is_place:
                    return update_conflicts(theta, dest, kappa_w)
                kappa_w |= ptr_kappa(theta, dest)
                out = theta
                for loan in self._recorded_loans(loc):
                    out = update_conflicts(out, loan.place, kappa_w)
                return out
            case CallInstr():
                return self._transfer_call(instr, theta)
            case NopInstr():
                return theta
        raise TypeError(f"unhandled instruction {instr!r}")

    def _ctrl_kappa(self, bid: int) -> frozenset:
        kappa = frozenset()
        for sw in self.ctrl[bid]:
            cond = self.switch_info[sw]
            out = self.block_out.get(sw)
            if out is not None and cond in out:
                kappa |= out[cond]
        return kappa

    def transfer_block(
        self,
        block: Block,
        theta: DepCtx,
        record: Optional[list[tuple[Instr, DepCtx]]] = None,
    ) -> DepCtx:
        ctrl_kappa = self._ctrl_kappa(block.id)
        for instr in block.instrs:
            new_theta = self.transfer_instr(instr, theta)
            is_init = isinstance(instr, AssignInstr) and instr.init
            if ctrl_kappa and not is_init:
                changed = [k for k in new_theta if new_theta[k] != theta.get(k)]
                if isinstance(instr, CallInstr):
                    # the destination initialization is not a mutation
                    dest_keys = set(
                        key_universe(instr.dest.root, self.cfg.locals[instr.dest.root])
                    )
                    changed = [k for k in changed if k not in dest_keys]
                if changed:
                    new_theta = dict(new_theta)
                    for k in changed:
                        new_theta[k] = new_theta[k] | ctrl_kappa
            theta = new_theta
            if record is not None:
                record.append((instr, theta))
        return theta

    def run(self) -> CfgFlowResult:
        return self.run_with_order([b.id for b in self.cfg.blocks])

    def run_with_order(self, order: list[int]) -> CfgFlowResult:
        entry_theta, _seed_locs = entry_context(self.fn, self.cfg.n_locs)
        preds = self.cfg.predecessors()
        block_in: dict[int, DepCtx] = {}
        self.block_out = {}

        for _sweep in range(10_000):
            changed = False
            for bid in order:
                if bid == 0:
                    theta_in = dict(entry_theta)
                    for p in preds[bid]:
                        if p in self.block_out:
                            theta_in = theta_join(theta_in, self.block_out[p])
                else:
                    if not any(p in self.block_out for p in preds[bid]):
                        continue  # nothing has flowed here yet in this order
                    theta_in = {}
                    for p in preds[bid]:
                        if p in self.block_out:
                            theta_in = theta_join(theta_in, self.block_out[p])
                block_in[bid] = theta_in
                theta_out = self.transfer_block(self.cfg.blocks[bid], theta_in)
                if self.block_out.get(bid) != theta_out:
                    self.block_out[bid] = theta_out
                    changed = True
            if not changed:
                break
        else:
            raise IllFormedTheta("dataflow failed to reach a fixpoint")

        per_instr: dict[int, list[tuple[Instr, DepCtx]]] = {}
        for b in self.cfg.blocks:
            rows: list[tuple[Instr, DepCtx]] = []
            self.transfer_block(b, block_in[b.id], record=rows)
            per_instr[b.id] = rows

        exit_out = self.block_out[self.cfg.return_block()]
        exit_theta = {k: v for k, v in exit_out.items() if k.root == self.cfg.param}
        var_exit: dict[str, DepCtx] = {}
        for var in [self.cfg.param] + self.cfg.let_vars:
            var_exit[var] = {k: v for k, v in exit_out.items() if k.root == var}
        return CfgFlowResult(
            fn=self.cfg.fn_name,
            mode=self.mode,
            cfg=self.cfg,
            theta_entry=entry_theta,
            exit_theta=exit_theta,
            var_exit=var_exit,
            block_in=block_in,
            block_out=self.block_out,
            per_instr=per_instr,
            loan_map=self.loan_map,
        )


def dataflow(
    typed: TypedProgram, fn_name: str, mode: Mode = Mode.MODULAR
) -> CfgFlowResult:
    cfg = lower(typed, fn_name)
    return _Dataflow(typed, cfg, mode, typed.program).run()


# ---------------------------------------------------------------------------
# Rendering


def _instr_str(instr: Instr) -> str:
    match instr:
        case AssignInstr(dest=d, rv=rv, init=init):
            op = "=" if init else ":="
            match rv:
                case RvConst(value=v):
                    txt = "()" if v == UNIT else str(v).lower()
                case RvUse(pe=pe):
                    txt = str(pe)
                case RvTuple(operands=ops):
                    txt = "(" + ", ".join(str(o) for o in ops) + ")"
                case RvRef(qual=q, prov=p, target=t):
                    txt = f"&{p} {q} {t}"
                case RvJoin(value=v, cond=c):
                    txt = f"phi({v}, {c})"
                case _:
                    txt = "?"
            return f"{d} {op} {txt}"
        case CallInstr(dest=d, fn=f, provargs=pa, arg=a):
            return f"{d} = {f}<{', '.join(pa)}>({a})"
        case NopInstr():
            return "nop"
    return "?"


def to_dot(result: CfgFlowResult) -> str:
    """Graphviz rendering of the CFG with per-instruction dependency
    annotations (the keys each instruction changed and their new sets)."""
    lines = ["digraph cfg {", '  node [shape=box, fontname="monospace"];']
    cfg = result.cfg
    for b in cfg.blocks:
        rows = [f"bb{b.id}:"]
        theta_prev = result.block_in[b.id]
        for instr, theta_after in result.per_instr[b.id]:
            rows.append("  " + _instr_str(instr))
            changed = {
                k: sorted(v)
                for k, v in theta_after.items()
                if theta_prev.get(k) != v
            }
            for k, v in sorted(changed.items(), key=lambda kv: str(kv[0])):
                rows.append(f"    {k} -> {{{', '.join(map(str, v))}}}")
            theta_prev = theta_after
        term = b.term
        if isinstance(term, Switch):
            rows.append(f"  switch {term.cond}")
        elif isinstance(term, Ret):
            rows.append(f"  return {term.result}")
        label = "\\l".join(r.replace('"', "'") for r in rows) + "\\l"
        lines.append(f'  bb{b.id} [label="{label}"];')
        for s in cfg.successors(b.id):
            lines.append(f"  bb{b.id} -> bb{s};")
    lines.append("}")
    return "\n".join(lines)
