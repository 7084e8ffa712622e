"""Ownership machinery: loans, type environments, the ownership-safety
judgment, outlives constraints, and the loan-set metafunction.

Loan sets double as a pointer analysis: the loan set of a place expression
contains every concrete place it may denote at runtime, alongside the
symbolic dereference chains that reach them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Protocol

from .syntax import (
    DEREF,
    SHRD,
    UNIQ,
    DeadTy,
    PlaceExpr,
    RefTy,
    TupleTy,
    Ty,
    conflicts,
    copyable,
    is_dead,
    qual_usable_as,
    refs,
    strip_dead,
    type_at,
)


class OxError(Exception):
    """Base class for checker and analysis errors."""

    def __init__(self, message: str, span=None):
        self.span = span
        super().__init__(message)


class TypeMismatch(OxError):
    pass


class UseAfterMove(OxError):
    pass


class OwnershipViolation(OxError):
    pass


class ArityOrProvenanceMismatch(OxError):
    pass


class UnknownFunction(OxError):
    pass


class UnknownProvenance(OxError):
    pass


class IllFormedTheta(OxError):
    """Internal invariant violation: a rule addressed a missing context key."""


class Loan(NamedTuple):
    qual: str
    place: PlaceExpr

    def __str__(self) -> str:
        return f"{self.qual} {self.place}"


class LoanEnv(Protocol):
    """What the ownership-safety judgment needs from its environment."""

    def type_of(self, pe: PlaceExpr) -> Ty: ...

    def prov_loans(self, prov: str) -> frozenset[Loan]: ...

    def is_abstract(self, prov: str) -> bool: ...

    def live_loans(self) -> Iterable[Loan]: ...


def close_loans(
    provs: dict[str, frozenset[Loan]], constraints: Iterable[tuple[str, str]]
) -> dict[str, frozenset[Loan]]:
    """Least fixpoint of the outlives equations: each constraint (r1, r2)
    flows the loans of r1 into r2. Missing provenances are skipped."""
    out = dict(provs)
    pairs = [(a, b) for a, b in constraints if a in out and b in out]
    changed = True
    while changed:
        changed = False
        for a, b in pairs:
            merged = out[b] | out[a]
            if merged != out[b]:
                out[b] = merged
                changed = True
    return out


@dataclass(frozen=True)
class TypeEnv:
    """Variable types plus provenance loan sets, updated functionally."""

    vars: dict[str, Ty] = field(default_factory=dict)
    provs: dict[str, frozenset[Loan]] = field(default_factory=dict)
    abstract: frozenset[str] = frozenset()
    constraints: tuple[tuple[str, str], ...] = ()

    # -- lookups ------------------------------------------------------------

    def var_ty(self, name: str) -> Ty:
        if name not in self.vars:
            raise TypeMismatch(f"unbound variable {name!r}")
        return self.vars[name]

    def type_of(self, pe: PlaceExpr) -> Ty:
        try:
            return type_at(self.var_ty(pe.root), pe.path)
        except KeyError as exc:
            raise TypeMismatch(f"bad projection on {pe}: {exc.args[0]}") from exc

    def prov_loans(self, prov: str) -> frozenset[Loan]:
        if prov not in self.provs:
            raise UnknownProvenance(f"unknown provenance {prov!r}")
        return self.provs[prov]

    def is_abstract(self, prov: str) -> bool:
        return prov in self.abstract

    def live_loans(self) -> Iterable[Loan]:
        for loans_ in self.provs.values():
            yield from loans_

    # -- functional updates --------------------------------------------------

    def bind_var(self, name: str, ty: Ty) -> "TypeEnv":
        if name in self.vars:
            raise TypeMismatch(f"variable {name!r} is already in scope (shadowing is rejected)")
        nv = dict(self.vars)
        nv[name] = ty
        return TypeEnv(nv, self.provs, self.abstract, self.constraints)

    def set_var_ty(self, name: str, ty: Ty) -> "TypeEnv":
        nv = dict(self.vars)
        nv[name] = ty
        return TypeEnv(nv, self.provs, self.abstract, self.constraints)

    def drop_var(self, name: str) -> "TypeEnv":
        """Remove a binding and garbage-collect loans rooted at it."""
        nv = dict(self.vars)
        nv.pop(name, None)
        np = {
            r: frozenset(l for l in loans_ if l.place.root != name)
            for r, loans_ in self.provs.items()
        }
        return TypeEnv(nv, np, self.abstract, self.constraints)

    def add_provs(self, names: Iterable[str], *, abstract: bool = False) -> "TypeEnv":
        np = dict(self.provs)
        ab = set(self.abstract)
        for n in names:
            if n in np:
                raise UnknownProvenance(f"provenance {n!r} is already declared")
            np[n] = frozenset()
            if abstract:
                ab.add(n)
        return TypeEnv(self.vars, np, frozenset(ab), self.constraints)

    def drop_provs(self, names: Iterable[str]) -> "TypeEnv":
        names = set(names)
        np = {r: ls for r, ls in self.provs.items() if r not in names}
        return TypeEnv(self.vars, np, self.abstract - names, self.constraints)

    def set_prov(self, prov: str, loans_: frozenset[Loan]) -> "TypeEnv":
        if prov not in self.provs:
            raise UnknownProvenance(f"unknown provenance {prov!r}")
        np = dict(self.provs)
        np[prov] = loans_
        np = close_loans(np, self.constraints)
        return TypeEnv(self.vars, np, self.abstract, self.constraints)

    def add_constraint(self, p1: str, p2: str) -> "TypeEnv":
        for p in (p1, p2):
            if p not in self.provs:
                raise UnknownProvenance(f"unknown provenance {p!r}")
        cons = self.constraints + ((p1, p2),)
        np = close_loans(dict(self.provs), cons)
        return TypeEnv(self.vars, np, self.abstract, cons)

    def join(self, other: "TypeEnv") -> "TypeEnv":
        """Join after a branch: variable types must agree, provenance loan
        sets union, constraints accumulate."""
        if set(self.vars) != set(other.vars):
            raise TypeMismatch("branches bind different variables at the join point")
        for name, ty in self.vars.items():
            if other.vars[name] != ty:
                raise TypeMismatch(
                    f"variable {name!r} has diverging types across branches: "
                    f"{ty} vs {other.vars[name]}"
                )
        np = dict(self.provs)
        for r, ls in other.provs.items():
            np[r] = np.get(r, frozenset()) | ls
        cons = self.constraints + tuple(c for c in other.constraints if c not in self.constraints)
        np = close_loans(np, cons)
        return TypeEnv(dict(self.vars), np, self.abstract | other.abstract, cons)


def outlives(env: TypeEnv, p1: str, p2: str) -> TypeEnv:
    """Record `p1 outlives p2` and flow p1's loans into p2 (transitively)."""
    if p1 == p2:
        return env
    return env.add_constraint(p1, p2)


def first_deref_split(pe: PlaceExpr) -> Optional[tuple[PlaceExpr, tuple[int, ...]]]:
    """Split at the innermost dereference: returns (plain reference place,
    remaining path after the deref), or None for a plain place."""
    for i, seg in enumerate(pe.path):
        if seg == DEREF:
            return PlaceExpr(pe.root, pe.path[:i]), pe.path[i + 1 :]
    return None


def _check_place_conflicts(env: LoanEnv, qual: str, pl: PlaceExpr, span) -> None:
    """Direct uses of a plain place must not conflict with live loans:
    unique uses conflict with any live loan, shared uses only with live
    unique loans."""
    for loan in env.live_loans():
        if qual == SHRD and loan.qual == SHRD:
            continue
        if conflicts(loan.place, pl):
            raise OwnershipViolation(
                f"cannot use {pl} {qual}-ly while {loan} is live", span
            )


def ownership_safe(
    env: LoanEnv,
    qual: str,
    pe: PlaceExpr,
    *,
    mutblind: bool = False,
    span=None,
    _top: bool = True,
    _seen: Optional[frozenset] = None,
) -> frozenset[Loan]:
    """The ownership-safety judgment: the loan set reachable by using `pe`
    at qualifier `qual`.

    A plain place is checked against live conflicting loans and yields just
    itself. A dereference resolves through the reference's provenance: each
    loan substitutes for the dereference with the remaining projection
    appended, recursively. Loans justified by the chain itself are not
    re-checked for conflicts.
    """
    ty = env.type_of(pe)
    if is_dead(ty):
        raise UseAfterMove(f"use of moved-out place {pe}", span)
    split = first_deref_split(pe)
    if split is None:
        if _top:
            _check_place_conflicts(env, qual, pe, span)
        return frozenset([Loan(qual, pe)])

    ref_place, rest = split
    ref_ty = env.type_of(ref_place)
    ref_ty = strip_dead(ref_ty)
    if not isinstance(ref_ty, RefTy):
        raise TypeMismatch(f"dereference of non-reference {ref_place}: {ref_ty}", span)
    if not mutblind and not qual_usable_as(qual, ref_ty.qual):
        raise OwnershipViolation(
            f"cannot use {pe} {qual}-ly through a {ref_ty.qual} reference", span
        )
    if env.is_abstract(ref_ty.prov):
        # opaque: inside a generic body the pointee is only known by type
        return frozenset([Loan(qual, pe)])

    seen = _seen or frozenset()
    if pe in seen:
        return frozenset()
    seen = seen | {pe}

    out: set[Loan] = {Loan(qual, pe)}
    for loan in env.prov_loans(ref_ty.prov):
        if not mutblind and not qual_usable_as(qual, loan.qual):
            continue
        target = loan.place.extend(rest)
        out |= ownership_safe(
            env, qual, target, mutblind=mutblind, span=span, _top=False, _seen=seen
        )
    return frozenset(out)


def loans(
    env: LoanEnv,
    qual: str,
    pe: PlaceExpr,
    ty: Ty,
    *,
    mutblind: bool = False,
    span=None,
) -> frozenset[PlaceExpr]:
    """Concrete and symbolic targets accessible through the transitive
    references of `pe` at qualifier `qual`."""
    out: set[PlaceExpr] = set()
    for p1 in refs(qual, pe, ty, mutblind=mutblind):
        for loan in ownership_safe(env, qual, p1, mutblind=mutblind, span=span, _top=False):
            if loan.qual == qual:
                out.add(loan.place)
    return frozenset(out)


def subtype(env: TypeEnv, sub: Ty, sup: Ty, span=None) -> TypeEnv:
    """Require identical type shape; provenance mismatches emit outlives
    constraints (the supplied type's provenance outlives the expected one)."""
    if is_dead(sub):
        raise UseAfterMove("moved-out value used where a live value is required", span)
    sub = strip_dead(sub)
    sup = strip_dead(sup)
    if isinstance(sub, RefTy) and isinstance(sup, RefTy):
        if sub.qual != sup.qual:
            raise TypeMismatch(f"reference qualifier mismatch: {sub} vs {sup}", span)
        env = subtype(env, sub.inner, sup.inner, span)
        if sub.prov != sup.prov:
            env = outlives(env, sub.prov, sup.prov)
        return env
    if isinstance(sub, TupleTy) and isinstance(sup, TupleTy):
        if len(sub.elems) != len(sup.elems):
            raise TypeMismatch(f"tuple arity mismatch: {sub} vs {sup}", span)
        for a, b in zip(sub.elems, sup.elems):
            env = subtype(env, a, b, span)
        return env
    if sub == sup:
        return env
    raise TypeMismatch(f"type mismatch: {sub} vs {sup}", span)


def mark_moved(env: TypeEnv, pl: PlaceExpr) -> TypeEnv:
    """Replace the type at a plain place with its dead marker."""
    assert pl.is_place

    def rebuild(ty: Ty, path: tuple[int, ...]) -> Ty:
        if not path:
            return ty if isinstance(ty, DeadTy) else DeadTy(ty)
        if not isinstance(ty, TupleTy):
            raise TypeMismatch(f"projection into non-tuple while moving {pl}")
        i = path[0]
        elems = list(ty.elems)
        elems[i] = rebuild(elems[i], path[1:])
        return TupleTy(tuple(elems))

    return env.set_var_ty(pl.root, rebuild(env.var_ty(pl.root), pl.path))


def revive(env: TypeEnv, pl: PlaceExpr, ty: Ty) -> TypeEnv:
    """Assignment re-initializes a place: install the (live) type there."""
    assert pl.is_place

    def rebuild(cur: Ty, path: tuple[int, ...]) -> Ty:
        if not path:
            return ty
        if isinstance(cur, DeadTy):
            # distribute deadness over the elements, so siblings stay moved
            inner = strip_dead(cur)
            if not isinstance(inner, TupleTy):
                raise TypeMismatch(f"projection into non-tuple while assigning {pl}")
            cur = TupleTy(tuple(DeadTy(e) for e in inner.elems))
        if not isinstance(cur, TupleTy):
            raise TypeMismatch(f"projection into non-tuple while assigning {pl}")
        i = path[0]
        elems = list(cur.elems)
        elems[i] = rebuild(elems[i], path[1:])
        return TupleTy(tuple(elems))

    return env.set_var_ty(pl.root, rebuild(env.var_ty(pl.root), pl.path))
