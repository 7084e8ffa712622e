"""Core syntax: located expressions, places, types, and path metafunctions.

The surface language is a small imperative calculus with tuples, borrows
(`&r uniq p` / `&r shrd p`), provenance declarations (`letprov`), branches,
loops, and single-argument function calls. Every expression node carries a
source span and, after `assign_locations`, a unique per-function location id.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union

# Path segments: non-negative ints are tuple field indices, DEREF marks a
# pointer dereference.
DEREF = -1

SHRD = "shrd"
UNIQ = "uniq"


def qual_usable_as(om: str, om2: str) -> bool:
    """Whether a loan at qualifier `om` may be used where `om2` is offered.

    The only forbidden combination is using something unique-ly through a
    shared capability.
    """
    return not (om == UNIQ and om2 == SHRD)


@dataclass(frozen=True)
class Span:
    line: int  # 1-based
    col: int  # 1-based
    length: int

    def to_json(self) -> dict:
        return {"line": self.line, "col": self.col, "len": self.length}


@dataclass(frozen=True)
class Location:
    """A unique label for one expression (or synthetic input) in a function."""

    id: int
    fn: str
    span: Span

    def to_json(self) -> dict:
        return {"id": self.id, "span": self.span.to_json()}


# ---------------------------------------------------------------------------
# Places and place expressions


@dataclass(frozen=True)
class PlaceExpr:
    """A root variable plus a path of field projections and dereferences.

    A place expression whose path contains no dereference is a *place*: a
    concrete region of stack memory. Paths are applied left to right from
    the root, so ``(*y).1`` has path ``(DEREF, 1)`` and ``*y.1`` has path
    ``(1, DEREF)``.
    """

    root: str
    path: tuple[int, ...] = ()

    @property
    def is_place(self) -> bool:
        return DEREF not in self.path

    def field(self, n: int) -> "PlaceExpr":
        return PlaceExpr(self.root, self.path + (n,))

    def deref(self) -> "PlaceExpr":
        return PlaceExpr(self.root, self.path + (DEREF,))

    def extend(self, path: tuple[int, ...]) -> "PlaceExpr":
        return PlaceExpr(self.root, self.path + path)

    def __str__(self) -> str:
        text = self.root
        outer_deref = False
        for seg in self.path:
            if seg == DEREF:
                text = "*" + text
                outer_deref = True
            else:
                if outer_deref:
                    text = "(" + text + ")"
                    outer_deref = False
                text = f"{text}.{seg}"
        return text


Place = PlaceExpr  # a Place is a PlaceExpr whose path has no DEREF


def place(root: str, *fields: int) -> PlaceExpr:
    assert all(f >= 0 for f in fields)
    return PlaceExpr(root, tuple(fields))


def is_path_prefix(p1: tuple[int, ...], p2: tuple[int, ...]) -> bool:
    return len(p1) <= len(p2) and p2[: len(p1)] == p1


def disjoint(p1: PlaceExpr, p2: PlaceExpr) -> bool:
    """True when mutating one place expression cannot change the other.

    Roots must differ, or neither path may be a prefix of the other
    (dereference segments compare purely syntactically).
    """
    if p1.root != p2.root:
        return True
    return not is_path_prefix(p1.path, p2.path) and not is_path_prefix(p2.path, p1.path)


def conflicts(p1: PlaceExpr, p2: PlaceExpr) -> bool:
    return not disjoint(p1, p2)


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class Ty:
    pass


@dataclass(frozen=True)
class BaseTy(Ty):
    kind: str  # "unit" | "u32" | "bool"

    def __str__(self) -> str:
        return self.kind


UNIT_TY = BaseTy("unit")
U32_TY = BaseTy("u32")
BOOL_TY = BaseTy("bool")


@dataclass(frozen=True)
class TupleTy(Ty):
    elems: tuple[Ty, ...]

    def __str__(self) -> str:
        return "(" + ", ".join(str(t) for t in self.elems) + ")"


@dataclass(frozen=True)
class RefTy(Ty):
    qual: str  # SHRD | UNIQ
    prov: str
    inner: Ty

    def __str__(self) -> str:
        return f"&{self.prov} {self.qual} {self.inner}"


@dataclass(frozen=True)
class DeadTy(Ty):
    """Marks a moved-out value; never appears in source syntax."""

    inner: Ty

    def __str__(self) -> str:
        return f"{self.inner}†"


def is_dead(ty: Ty) -> bool:
    if isinstance(ty, DeadTy):
        return True
    if isinstance(ty, TupleTy):
        return any(is_dead(t) for t in ty.elems)
    return False


def strip_dead(ty: Ty) -> Ty:
    if isinstance(ty, DeadTy):
        return strip_dead(ty.inner)
    if isinstance(ty, TupleTy):
        return TupleTy(tuple(strip_dead(t) for t in ty.elems))
    return ty


def erase_provs(ty: Ty) -> Ty:
    """Provenance-erased shape of a type, used for may-alias comparisons."""
    if isinstance(ty, RefTy):
        return RefTy(ty.qual, "_", erase_provs(ty.inner))
    if isinstance(ty, TupleTy):
        return TupleTy(tuple(erase_provs(t) for t in ty.elems))
    if isinstance(ty, DeadTy):
        return DeadTy(erase_provs(ty.inner))
    return ty


def provs_in(ty: Ty) -> set[str]:
    if isinstance(ty, RefTy):
        return {ty.prov} | provs_in(ty.inner)
    if isinstance(ty, TupleTy):
        out: set[str] = set()
        for t in ty.elems:
            out |= provs_in(t)
        return out
    if isinstance(ty, DeadTy):
        return provs_in(ty.inner)
    return set()


def subst_provs(ty: Ty, mapping: dict[str, str]) -> Ty:
    if isinstance(ty, RefTy):
        return RefTy(ty.qual, mapping.get(ty.prov, ty.prov), subst_provs(ty.inner, mapping))
    if isinstance(ty, TupleTy):
        return TupleTy(tuple(subst_provs(t, mapping) for t in ty.elems))
    if isinstance(ty, DeadTy):
        return DeadTy(subst_provs(ty.inner, mapping))
    return ty


def copyable(ty: Ty) -> bool:
    """Scalars and shared references copy; tuples and unique references move."""
    if isinstance(ty, BaseTy):
        return True
    if isinstance(ty, RefTy):
        return ty.qual == SHRD
    return False


def places_under(root: str, ty: Ty) -> set[PlaceExpr]:
    """The root place and every field projection reachable without crossing
    a reference. Reference-typed places are leaves of the place tree."""
    out: set[PlaceExpr] = set()

    def walk(pe: PlaceExpr, t: Ty) -> None:
        while isinstance(t, DeadTy):
            t = t.inner
        out.add(pe)
        if isinstance(t, TupleTy):
            for i, elem in enumerate(t.elems):
                walk(pe.field(i), elem)

    walk(place(root), ty)
    return out


def key_universe(root: str, ty: Ty) -> list[PlaceExpr]:
    """All dependency-context keys for a variable: its places plus the
    deref-extended place expressions behind each reference, one level per
    reference nesting. Deterministic pre-order."""
    out: list[PlaceExpr] = []

    def walk(pe: PlaceExpr, t: Ty) -> None:
        out.append(pe)
        t = strip_dead(t)
        if isinstance(t, TupleTy):
            for i, elem in enumerate(t.elems):
                walk(pe.field(i), elem)
        elif isinstance(t, RefTy):
            walk(pe.deref(), t.inner)

    walk(place(root), ty)
    return out


def type_at(ty: Ty, path: tuple[int, ...]) -> Ty:
    """The type reached by following `path` from a value of type `ty`.

    Raises KeyError on shape mismatch. Deadness encountered anywhere along
    the path taints the result.
    """
    cur = ty
    dead = False
    for seg in path:
        if isinstance(cur, DeadTy):
            dead = True
            cur = cur.inner
        if seg == DEREF:
            if not isinstance(cur, RefTy):
                raise KeyError(f"dereference of non-reference type {cur}")
            cur = cur.inner
        else:
            if not isinstance(cur, TupleTy) or seg >= len(cur.elems):
                raise KeyError(f"projection .{seg} of type {cur}")
            cur = cur.elems[seg]
    if dead and not isinstance(cur, DeadTy):
        return DeadTy(cur)
    return cur


def refs(om: str, pe: PlaceExpr, ty: Ty, *, mutblind: bool = False) -> list[PlaceExpr]:
    """Every reference accessible from `pe` at qualifier `om`, as the place
    expressions obtained by dereferencing. With `mutblind`, the mutability
    of references is ignored and every reference is traversed."""
    out: list[PlaceExpr] = []
    ty = strip_dead(ty)
    if isinstance(ty, TupleTy):
        for i, elem in enumerate(ty.elems):
            out.extend(refs(om, pe.field(i), elem, mutblind=mutblind))
    elif isinstance(ty, RefTy):
        if mutblind or qual_usable_as(om, ty.qual):
            deref = pe.deref()
            out.append(deref)
            out.extend(refs(om, deref, ty.inner, mutblind=mutblind))
    return out


# ---------------------------------------------------------------------------
# Expressions

UNIT = ()  # the unit literal value


@dataclass
class Expr:
    span: Span = field(init=False, default=Span(0, 0, 0))
    loc: Optional[Location] = field(init=False, default=None)

    def children(self) -> Iterator["Expr"]:
        return iter(())


@dataclass
class Const(Expr):
    value: Union[int, bool, tuple]  # int (u32), bool, or UNIT


@dataclass
class PlaceUse(Expr):
    pe: PlaceExpr


@dataclass
class TupleE(Expr):
    elems: list[Expr]

    def children(self) -> Iterator[Expr]:
        return iter(self.elems)


@dataclass
class Let(Expr):
    var: str
    ty: Ty
    rhs: Expr
    body: Expr

    def children(self) -> Iterator[Expr]:
        return iter((self.rhs, self.body))


@dataclass
class Assign(Expr):
    target: PlaceExpr
    rhs: Expr

    def children(self) -> Iterator[Expr]:
        return iter((self.rhs,))


@dataclass
class Seq(Expr):
    first: Expr
    second: Expr

    def children(self) -> Iterator[Expr]:
        return iter((self.first, self.second))


@dataclass
class Borrow(Expr):
    qual: str
    prov: str
    target: PlaceExpr


@dataclass
class LetProv(Expr):
    provs: list[str]
    body: Expr

    def children(self) -> Iterator[Expr]:
        return iter((self.body,))


@dataclass
class If(Expr):
    cond: Expr
    then: Expr
    els: Expr

    def children(self) -> Iterator[Expr]:
        return iter((self.cond, self.then, self.els))


@dataclass
class While(Expr):
    cond: Expr
    body: Expr

    def children(self) -> Iterator[Expr]:
        return iter((self.cond, self.body))


@dataclass
class Call(Expr):
    fn: str
    provargs: list[str]
    arg: PlaceExpr  # restricted to a place

    def children(self) -> Iterator[Expr]:
        return iter(())


@dataclass
class FnDef:
    name: str
    provs: list[str]  # declared abstract provenances
    outlives: list[tuple[str, str]]  # (p1, p2) meaning p1 outlives p2
    param: str
    param_ty: Ty
    ret_ty: Ty
    body: Optional[Expr]  # None for extern declarations
    span: Span = Span(0, 0, 0)
    secure: bool = False
    insecure: bool = False

    @property
    def is_extern(self) -> bool:
        return self.body is None


@dataclass
class Program:
    functions: dict[str, FnDef]
    source: str = ""
    # secure-annotated let bindings, per function: fn -> set of var names
    secure_lets: dict[str, set[str]] = field(default_factory=dict)


def walk_exprs(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal of an expression tree."""
    yield e
    for child in e.children():
        yield from walk_exprs(child)


def assign_locations(program: Program) -> Program:
    """Label every expression with a pre-order, per-function location id.

    Idempotent: rerunning yields identical ids because ids depend only on
    tree structure.
    """
    for fn in program.functions.values():
        if fn.body is None:
            continue
        for i, node in enumerate(walk_exprs(fn.body)):
            node.loc = Location(i, fn.name, node.span)
    return program


def location_table(fn: FnDef) -> dict[int, Location]:
    out: dict[int, Location] = {}
    if fn.body is not None:
        for node in walk_exprs(fn.body):
            if node.loc is not None:
                out[node.loc.id] = node.loc
    return out
