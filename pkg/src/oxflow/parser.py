"""Text format for `.ox` programs: lexer, recursive-descent parser, and the
matching pretty-printer.

Grammar sketch (whitespace-insensitive, `//` line comments):

    program  := fn*
    fn       := "extern"? "fn" IDENT provlist? "(" IDENT ":" ty ")" ("->" ty)? (block | ";")
    provlist := "<" (IDENT (":" IDENT)?) ("," ...)* ">"        // "p1: p2" declares p1 outlives p2
    ty       := "unit" | "u32" | "bool" | "(" ty ("," ty)+ ")" | "&" IDENT ("uniq"|"shrd") ty
    expr     := "let" IDENT ":" ty "=" nonseq ";" expr
              | "letprov" "<" IDENT,* ">" expr
              | nonseq (";" expr)?
    nonseq   := pexpr ":=" nonseq | "&" IDENT ("uniq"|"shrd") pexpr
              | "if" nonseq block "else" block | "while" nonseq block
              | IDENT ("<" IDENT,* ">")? "(" place ")" | pexpr | literal
              | "(" expr ("," expr)* ")"
    pexpr    := "*" pexpr | (IDENT | "(" pexpr ")") ("." NAT)*

A comment containing `@secure` or `@insecure` on the same line as (or the
line above) a `let` or a function header marks it for the IFC checker.
"""

from __future__ import annotations

from dataclasses import dataclass

from .syntax import (
    BOOL_TY,
    DEREF,
    SHRD,
    U32_TY,
    UNIT,
    UNIT_TY,
    UNIQ,
    Assign,
    Borrow,
    Call,
    Const,
    Expr,
    FnDef,
    If,
    Let,
    LetProv,
    PlaceExpr,
    PlaceUse,
    Program,
    RefTy,
    Seq,
    Span,
    TupleE,
    TupleTy,
    Ty,
    While,
    assign_locations,
)

KEYWORDS = {
    "fn", "extern", "let", "letprov", "if", "else", "while",
    "uniq", "shrd", "unit", "u32", "bool", "true", "false",
}

PUNCT = [":=", "->", "(", ")", "{", "}", "<", ">", ",", ";", ":", ".", "&", "*", "="]


class OxSyntaxError(Exception):
    def __init__(self, message: str, line: int, col: int, expected: set[str] | None = None):
        self.line = line
        self.col = col
        self.expected = sorted(expected) if expected else []
        detail = f"{message} at {line}:{col}"
        if self.expected:
            detail += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(detail)


@dataclass
class Token:
    kind: str  # "ident", "nat", "punct", "kw", "eof"
    text: str
    line: int
    col: int
    offset: int


def lex(text: str) -> tuple[list[Token], list[tuple[int, str]]]:
    """Tokenize, returning tokens plus (line, mark) annotation comments."""
    tokens: list[Token] = []
    annotations: list[tuple[int, str]] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            j = text.find("\n", i)
            if j == -1:
                j = n
            comment = text[i:j]
            if "@secure" in comment:
                annotations.append((line, "secure"))
            if "@insecure" in comment:
                annotations.append((line, "insecure"))
            col += j - i
            i = j
            continue
        if c.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(Token("nat", text[i:j], line, col, i))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "kw" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, line, col, i))
            col += j - i
            i = j
            continue
        for p in PUNCT:
            if text.startswith(p, i):
                tokens.append(Token("punct", p, line, col, i))
                col += len(p)
                i += len(p)
                break
        else:
            raise OxSyntaxError(f"unexpected character {c!r}", line, col)
    tokens.append(Token("eof", "", line, col, n))
    return tokens, annotations


class Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens, self.annotations = lex(text)
        self.pos = 0
        self._secure_vars: set[str] = set()

    # -- token helpers ------------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind in ("punct", "kw")

    def eat(self, text: str) -> Token:
        if not self.at(text):
            tok = self.peek()
            raise OxSyntaxError(f"unexpected {tok.text!r}", tok.line, tok.col, {text})
        return self.next()

    def eat_ident(self) -> Token:
        tok = self.peek()
        if tok.kind != "ident":
            raise OxSyntaxError(f"unexpected {tok.text!r}", tok.line, tok.col, {"identifier"})
        return self.next()

    def eat_nat(self) -> Token:
        tok = self.peek()
        if tok.kind != "nat":
            raise OxSyntaxError(f"unexpected {tok.text!r}", tok.line, tok.col, {"number"})
        return self.next()

    def span_from(self, start: Token) -> Span:
        end_tok = self.tokens[max(self.pos - 1, 0)]
        end = end_tok.offset + len(end_tok.text)
        return Span(start.line, start.col, max(end - start.offset, 1))

    def marked(self, line: int, mark: str) -> bool:
        return any(l in (line, line - 1) and m == mark for l, m in self.annotations)

    # -- grammar ------------------------------------------------------------

    def parse_program(self) -> Program:
        fns: dict[str, FnDef] = {}
        secure_lets: dict[str, set[str]] = {}
        while self.peek().kind != "eof":
            fn, marked_vars = self.parse_fn()
            if fn.name in fns:
                tok = self.peek()
                raise OxSyntaxError(f"duplicate function {fn.name!r}", fn.span.line, fn.span.col)
            fns[fn.name] = fn
            secure_lets[fn.name] = marked_vars
        return Program(fns, source=self.text, secure_lets=secure_lets)

    def parse_fn(self) -> tuple[FnDef, set[str]]:
        start = self.peek()
        explicit_extern = False
        if self.at("extern"):
            self.next()
            explicit_extern = True
        self.eat("fn")
        name = self.eat_ident().text
        provs: list[str] = []
        outlives: list[tuple[str, str]] = []
        if self.at("<"):
            self.next()
            while not self.at(">"):
                p1 = self.eat_ident().text
                provs.append(p1)
                if self.at(":"):
                    self.next()
                    p2 = self.eat_ident().text
                    outlives.append((p1, p2))
                if not self.at(">"):
                    self.eat(",")
            self.eat(">")
        self.eat("(")
        param = self.eat_ident().text
        self.eat(":")
        param_ty = self.parse_ty()
        self.eat(")")
        ret_ty: Ty = UNIT_TY
        if self.at("->"):
            self.next()
            ret_ty = self.parse_ty()
        body = None
        marked_vars: set[str] = set()
        if self.at(";"):
            self.next()
        else:
            if explicit_extern:
                tok = self.peek()
                raise OxSyntaxError("extern function must end with ';'", tok.line, tok.col, {";"})
            self._secure_vars = set()
            self.eat("{")
            body = self.parse_expr()
            self.eat("}")
            marked_vars = self._secure_vars
        fn = FnDef(name, provs, outlives, param, param_ty, ret_ty, body)
        fn.span = self.span_from(start)
        fn.secure = self.marked(start.line, "secure")
        fn.insecure = self.marked(start.line, "insecure")
        return fn, marked_vars

    def parse_ty(self) -> Ty:
        tok = self.peek()
        if self.at("unit"):
            self.next()
            return UNIT_TY
        if self.at("u32"):
            self.next()
            return U32_TY
        if self.at("bool"):
            self.next()
            return BOOL_TY
        if self.at("&"):
            self.next()
            prov = self.eat_ident().text
            if self.at("uniq"):
                self.next()
                qual = UNIQ
            elif self.at("shrd"):
                self.next()
                qual = SHRD
            else:
                t = self.peek()
                raise OxSyntaxError(f"unexpected {t.text!r}", t.line, t.col, {"uniq", "shrd"})
            return RefTy(qual, prov, self.parse_ty())
        if self.at("("):
            self.next()
            elems = [self.parse_ty()]
            while self.at(","):
                self.next()
                elems.append(self.parse_ty())
            self.eat(")")
            if len(elems) < 2:
                raise OxSyntaxError("tuple types need at least two elements", tok.line, tok.col)
            return TupleTy(tuple(elems))
        raise OxSyntaxError(
            f"unexpected {tok.text!r}", tok.line, tok.col, {"unit", "u32", "bool", "(", "&"}
        )

    def parse_block(self) -> Expr:
        self.eat("{")
        body = self.parse_expr()
        self.eat("}")
        return body

    def parse_expr(self) -> Expr:
        start = self.peek()
        if self.at("let"):
            self.next()
            var_tok = self.eat_ident()
            self.eat(":")
            ty = self.parse_ty()
            self.eat("=")
            rhs = self.parse_nonseq()
            self.eat(";")
            body = self.parse_expr()
            node = Let(var_tok.text, ty, rhs, body)
            node.span = self.span_from(start)
            if self.marked(start.line, "secure"):
                self._secure_vars.add(var_tok.text)
            return node
        if self.at("letprov"):
            self.next()
            self.eat("<")
            provs = [self.eat_ident().text]
            while self.at(","):
                self.next()
                provs.append(self.eat_ident().text)
            self.eat(">")
            body = self.parse_expr()
            node = LetProv(provs, body)
            node.span = self.span_from(start)
            return node
        first = self.parse_nonseq()
        if self.at(";"):
            self.next()
            second = self.parse_expr()
            node = Seq(first, second)
            node.span = self.span_from(start)
            return node
        return first

    def parse_nonseq(self) -> Expr:
        start = self.peek()
        if self.at("let") or self.at("letprov"):
            return self.parse_expr()
        if self.at("if"):
            self.next()
            cond = self.parse_nonseq()
            then = self.parse_block()
            self.eat("else")
            els = self.parse_block()
            node = If(cond, then, els)
            node.span = self.span_from(start)
            return node
        if self.at("while"):
            self.next()
            cond = self.parse_nonseq()
            body = self.parse_block()
            node = While(cond, body)
            node.span = self.span_from(start)
            return node
        if self.at("&"):
            self.next()
            prov = self.eat_ident().text
            if self.at("uniq"):
                self.next()
                qual = UNIQ
            elif self.at("shrd"):
                self.next()
                qual = SHRD
            else:
                t = self.peek()
                raise OxSyntaxError(f"unexpected {t.text!r}", t.line, t.col, {"uniq", "shrd"})
            target = self.parse_pexpr()
            node = Borrow(qual, prov, target)
            node.span = self.span_from(start)
            return node
        return self.parse_assign_or_atom()

    def parse_assign_or_atom(self) -> Expr:
        start = self.peek()
        e = self.parse_atom()
        if self.at(":="):
            if not isinstance(e, PlaceUse):
                raise OxSyntaxError("assignment target must be a place expression",
                                    start.line, start.col)
            self.next()
            rhs = self.parse_nonseq()
            node = Assign(e.pe, rhs)
            node.span = self.span_from(start)
            return node
        return e

    def parse_atom(self) -> Expr:
        start = self.peek()
        if start.kind == "nat":
            self.next()
            node: Expr = Const(int(start.text))
            node.span = self.span_from(start)
            return node
        if self.at("true") or self.at("false"):
            self.next()
            node = Const(start.text == "true")
            node.span = self.span_from(start)
            return node
        if self.at("*"):
            pe = self.parse_pexpr()
            node = PlaceUse(pe)
            node.span = self.span_from(start)
            return node
        if start.kind == "ident":
            # call when the identifier is followed by `(`, or by a
            # provenance list then `(`
            if self.peek(1).text == "(" or (self.peek(1).text == "<" and self._looks_like_call()):
                return self.parse_call()
            pe = self.parse_pexpr()
            node = PlaceUse(pe)
            node.span = self.span_from(start)
            return node
        if self.at("("):
            self.next()
            if self.at(")"):
                self.next()
                node = Const(UNIT)
                node.span = self.span_from(start)
                return node
            inner = self.parse_expr()
            if self.at(","):
                elems = [inner]
                while self.at(","):
                    self.next()
                    elems.append(self.parse_nonseq())
                self.eat(")")
                node = TupleE(elems)
                node.span = self.span_from(start)
                return node
            self.eat(")")
            if self.at("."):
                if not isinstance(inner, PlaceUse):
                    raise OxSyntaxError("projection applies to place expressions",
                                        start.line, start.col)
                pe = inner.pe
                while self.at("."):
                    self.next()
                    pe = pe.field(int(self.eat_nat().text))
                node = PlaceUse(pe)
                node.span = self.span_from(start)
                return node
            inner.span = self.span_from(start)
            return inner
        raise OxSyntaxError(
            f"unexpected {start.text!r}", start.line, start.col,
            {"literal", "identifier", "(", "*", "&", "if", "while", "let"},
        )

    def _looks_like_call(self) -> bool:
        """Disambiguate `f<r1, r2>(x)` from a pexpr followed by `<` (which the
        grammar never produces; still, scan ahead conservatively)."""
        i = self.pos + 1  # at "<"
        depth = 0
        while i < len(self.tokens):
            t = self.tokens[i]
            if t.text == "<":
                depth += 1
            elif t.text == ">":
                depth -= 1
                if depth == 0:
                    return i + 1 < len(self.tokens) and self.tokens[i + 1].text == "("
            elif t.kind not in ("ident",) and t.text not in (",", ":"):
                return False
            i += 1
        return False

    def parse_call(self) -> Expr:
        start = self.peek()
        name = self.eat_ident().text
        provargs: list[str] = []
        if self.at("<"):
            self.next()
            while not self.at(">"):
                provargs.append(self.eat_ident().text)
                if not self.at(">"):
                    self.eat(",")
            self.eat(">")
        self.eat("(")
        arg = self.parse_place()
        self.eat(")")
        node = Call(name, provargs, arg)
        node.span = self.span_from(start)
        return node

    def parse_place(self) -> PlaceExpr:
        root = self.eat_ident().text
        pe = PlaceExpr(root)
        while self.at("."):
            self.next()
            pe = pe.field(int(self.eat_nat().text))
        return pe

    def parse_pexpr(self) -> PlaceExpr:
        if self.at("*"):
            self.next()
            return self.parse_pexpr().deref()
        if self.at("("):
            self.next()
            pe = self.parse_pexpr()
            self.eat(")")
        else:
            pe = PlaceExpr(self.eat_ident().text)
        while self.at("."):
            self.next()
            pe = pe.field(int(self.eat_nat().text))
        return pe


def parse(text: str) -> Program:
    """Parse source text into a program; location ids are not yet assigned."""
    return Parser(text).parse_program()


def load_program(text: str) -> Program:
    """Parse and label a program in one step."""
    return assign_locations(parse(text))


# ---------------------------------------------------------------------------
# Pretty-printer


def pp_ty(ty: Ty) -> str:
    return str(ty)


def _needs_parens_as_rhs(e: Expr) -> bool:
    return isinstance(e, (Seq, Let, LetProv))


def pp_expr(e: Expr) -> str:
    if isinstance(e, Const):
        if e.value is UNIT or e.value == UNIT:
            return "()"
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        return str(e.value)
    if isinstance(e, PlaceUse):
        return str(e.pe)
    if isinstance(e, TupleE):
        return "(" + ", ".join(pp_expr(x) for x in e.elems) + ")"
    if isinstance(e, Let):
        rhs = pp_expr(e.rhs)
        if _needs_parens_as_rhs(e.rhs):
            rhs = "(" + rhs + ")"
        return f"let {e.var}: {pp_ty(e.ty)} = {rhs}; {pp_expr(e.body)}"
    if isinstance(e, Assign):
        return f"{e.target} := {pp_expr(e.rhs)}"
    if isinstance(e, Seq):
        first = pp_expr(e.first)
        if _needs_parens_as_rhs(e.first):
            first = "(" + first + ")"
        return f"{first}; {pp_expr(e.second)}"
    if isinstance(e, Borrow):
        return f"&{e.prov} {e.qual} {e.target}"
    if isinstance(e, LetProv):
        return f"letprov<{', '.join(e.provs)}> {pp_expr(e.body)}"
    if isinstance(e, If):
        return f"if {pp_expr(e.cond)} {{ {pp_expr(e.then)} }} else {{ {pp_expr(e.els)} }}"
    if isinstance(e, While):
        return f"while {pp_expr(e.cond)} {{ {pp_expr(e.body)} }}"
    if isinstance(e, Call):
        return f"{e.fn}<{', '.join(e.provargs)}>({e.arg})"
    raise TypeError(f"unknown expression {e!r}")


def pp_fn(fn: FnDef) -> str:
    items = list(fn.provs)
    decorated = []
    outlive_map = dict(fn.outlives)
    for p in items:
        decorated.append(f"{p}: {outlive_map[p]}" if p in outlive_map else p)
    provs = f"<{', '.join(decorated)}>" if decorated else ""
    head = f"fn {fn.name}{provs}({fn.param}: {pp_ty(fn.param_ty)})"
    if fn.ret_ty != UNIT_TY:
        head += f" -> {pp_ty(fn.ret_ty)}"
    if fn.body is None:
        return f"extern {head};"
    return f"{head} {{ {pp_expr(fn.body)} }}"


def pretty_print(program: Program) -> str:
    return "\n".join(pp_fn(fn) for fn in program.functions.values()) + "\n"
