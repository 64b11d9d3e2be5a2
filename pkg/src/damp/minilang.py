"""MiniLang: a tiny Java-like language used as the victim models' input domain.

Grammar (LL(1), parsed by recursive descent)::

    method  := type NAME '(' [param {',' param}] ')' block
    param   := type IDENT
    type    := 'int' ['[' ']'] | 'bool'
    block   := '{' {stmt} '}'
    stmt    := type IDENT '=' expr ';'
             | lvalue '=' expr ';'
             | 'if' '(' expr ')' block ['else' block]
             | 'for' '(' (decl | assign) ';' expr ';' assign ')' block
             | 'return' expr ';'
    lvalue  := IDENT ['[' expr ']']
    expr    := binary expressions over || && == != < <= > >= + - * / %
    primary := INT | '-' INT | 'true' | 'false' | IDENT ['[' expr ']']
             | ('len' | 'alloc') '(' expr ')' | '(' expr ')'

Variable names must match ``[a-z][a-z0-9_]{0,11}``; the method name may be
camelCase since it doubles as the label. Every variable name is unique within
a method, which keeps renaming and alpha-equivalence simple.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Union

IDENT_RE = re.compile(r"[a-z][a-z0-9_]{0,11}\Z")
MAX_NAME_LENGTH = 12

KEYWORDS = frozenset({"int", "bool", "if", "else", "for", "return", "true", "false", "len", "alloc"})
BUILTINS = {"len": ("int[]", "int"), "alloc": ("int", "int[]")}
TYPES = ("int", "bool", "int[]")

# binding power, weakest first
PRECEDENCE = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
}
ARITHMETIC = {"+", "-", "*", "/", "%"}
ORDERING = {"<", "<=", ">", ">="}
LOGICAL = {"&&", "||"}


class MiniLangError(Exception):
    """Base class for all MiniLang failures."""


class LexError(MiniLangError):
    def __init__(self, position: int, char: str):
        super().__init__(f"unexpected character {char!r} at offset {position}")
        self.position = position
        self.char = char


class ParseError(MiniLangError):
    def __init__(self, position: int, expected: str, found: str):
        super().__init__(f"expected {expected} at offset {position}, found {found!r}")
        self.position = position
        self.expected = expected
        self.found = found


class ScopeError(MiniLangError):
    pass


class TypeCheckError(MiniLangError):
    pass


class CollisionError(MiniLangError):
    pass


class InvalidIdentifier(MiniLangError):
    pass


def is_valid_identifier(name: str) -> bool:
    return bool(IDENT_RE.match(name)) and name not in KEYWORDS


# ---------------------------------------------------------------- lexer


class TokenKind(Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    INT = "int-literal"
    BOOL = "bool-literal"
    OPERATOR = "operator"
    PUNCT = "punctuation"
    EOF = "eof"  # parser sentinel only, never produced by tokenize


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    lexeme: str
    span: tuple[int, int]


_OPERATORS = ("==", "!=", "<=", ">=", "&&", "||", "<", ">", "+", "-", "*", "/", "%", "=")
_PUNCT = set("(){}[];,")


def tokenize(source: str) -> list[Token]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        ch = source[pos]
        if ch.isspace():
            pos += 1
            continue
        if source.startswith("//", pos):
            end = source.find("\n", pos)
            pos = n if end < 0 else end
            continue
        if ch.isascii() and (ch.isalpha() or ch == "_"):
            end = pos + 1
            while end < n and source[end].isascii() and (source[end].isalnum() or source[end] == "_"):
                end += 1
            word = source[pos:end]
            if word in ("true", "false"):
                kind = TokenKind.BOOL
            elif word in KEYWORDS:
                kind = TokenKind.KEYWORD
            else:
                kind = TokenKind.IDENTIFIER
            tokens.append(Token(kind, word, (pos, end)))
            pos = end
            continue
        if ch.isascii() and ch.isdigit():
            end = pos + 1
            while end < n and source[end].isascii() and source[end].isdigit():
                end += 1
            tokens.append(Token(TokenKind.INT, source[pos:end], (pos, end)))
            pos = end
            continue
        for op in _OPERATORS:
            if source.startswith(op, pos):
                tokens.append(Token(TokenKind.OPERATOR, op, (pos, pos + len(op))))
                pos += len(op)
                break
        else:
            if ch in _PUNCT:
                tokens.append(Token(TokenKind.PUNCT, ch, (pos, pos + 1)))
                pos += 1
            else:
                raise LexError(pos, ch)
    return tokens


# ---------------------------------------------------------------- AST
# node_id and span never take part in equality, so == is structural equality.


@dataclass(frozen=True, kw_only=True)
class Node:
    node_id: int = field(default=-1, compare=False, repr=False)


@dataclass(frozen=True, kw_only=True)
class IntLit(Node):
    value: int


@dataclass(frozen=True, kw_only=True)
class BoolLit(Node):
    value: bool


@dataclass(frozen=True, kw_only=True)
class Name(Node):
    name: str


@dataclass(frozen=True, kw_only=True)
class Index(Node):
    base: "Expr"
    index: "Expr"


@dataclass(frozen=True, kw_only=True)
class Binary(Node):
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, kw_only=True)
class Call(Node):
    func: str
    args: tuple["Expr", ...]


Expr = Union[IntLit, BoolLit, Name, Index, Binary, Call]


@dataclass(frozen=True, kw_only=True)
class VarDecl(Node):
    type: str
    name: str
    init: Expr


@dataclass(frozen=True, kw_only=True)
class Assign(Node):
    target: Union[Name, Index]
    value: Expr


@dataclass(frozen=True, kw_only=True)
class If(Node):
    cond: Expr
    then: tuple["Stmt", ...]
    orelse: Optional[tuple["Stmt", ...]] = None


@dataclass(frozen=True, kw_only=True)
class For(Node):
    init: Union[VarDecl, Assign]
    cond: Expr
    step: Assign
    body: tuple["Stmt", ...]


@dataclass(frozen=True, kw_only=True)
class Return(Node):
    value: Expr


Stmt = Union[VarDecl, Assign, If, For, Return]


@dataclass(frozen=True, kw_only=True)
class Param(Node):
    type: str
    name: str


@dataclass(frozen=True, kw_only=True)
class MethodAst(Node):
    return_type: str
    label: str
    params: tuple[Param, ...]
    body: tuple[Stmt, ...]


@dataclass(frozen=True)
class VarRef:
    name: str
    kind: str  # "parameter" | "local"
    decl_id: int


_CHILD_FIELDS = {
    MethodAst: ("params", "body"),
    Param: (),
    VarDecl: ("init",),
    Assign: ("target", "value"),
    If: ("cond", "then", "orelse"),
    For: ("init", "cond", "step", "body"),
    Return: ("value",),
    IntLit: (),
    BoolLit: (),
    Name: (),
    Index: ("base", "index"),
    Binary: ("left", "right"),
    Call: ("args",),
}


def children(node: Node) -> Iterator[Node]:
    for fname in _CHILD_FIELDS[type(node)]:
        value = getattr(node, fname)
        if value is None:
            continue
        if isinstance(value, tuple):
            yield from value
        else:
            yield value


def walk(node: Node) -> Iterator[Node]:
    """Pre-order traversal."""
    yield node
    for child in children(node):
        yield from walk(child)


def _map_tree(node, fn):
    """Rebuild ``node`` bottom-up, letting ``fn`` replace each rebuilt node."""
    updates = {}
    for fname in _CHILD_FIELDS[type(node)]:
        value = getattr(node, fname)
        if value is None:
            continue
        if isinstance(value, tuple):
            updates[fname] = tuple(_map_tree(v, fn) for v in value)
        else:
            updates[fname] = _map_tree(value, fn)
    if updates:
        node = dataclasses.replace(node, **updates)
    return fn(node)


def _renumber(ast: MethodAst) -> MethodAst:
    counter = iter(range(1 << 30))

    def assign(node):
        # pre-order numbering: parent first
        nid = next(counter)
        updates = {"node_id": nid}
        for fname in _CHILD_FIELDS[type(node)]:
            value = getattr(node, fname)
            if value is None:
                continue
            if isinstance(value, tuple):
                updates[fname] = tuple(assign(v) for v in value)
            else:
                updates[fname] = assign(value)
        return dataclasses.replace(node, **updates)

    return assign(ast)


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.tokens.append(Token(TokenKind.EOF, "", (len(source), len(source))))
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def at(self, lexeme: str) -> bool:
        return self.tok.lexeme == lexeme and self.tok.kind is not TokenKind.IDENTIFIER

    def expect(self, lexeme: str) -> Token:
        if not self.at(lexeme):
            raise ParseError(self.tok.span[0], repr(lexeme), self.tok.lexeme or "<eof>")
        return self.advance()

    def ident(self, what="identifier") -> str:
        if self.tok.kind is not TokenKind.IDENTIFIER:
            raise ParseError(self.tok.span[0], what, self.tok.lexeme or "<eof>")
        return self.advance().lexeme

    def var_name(self) -> str:
        start = self.tok.span[0]
        name = self.ident("variable name")
        if not is_valid_identifier(name):
            raise ParseError(start, "variable name matching [a-z][a-z0-9_]{0,11}", name)
        return name

    def at_type(self) -> bool:
        return self.tok.kind is TokenKind.KEYWORD and self.tok.lexeme in ("int", "bool")

    def type_(self) -> str:
        if not self.at_type():
            raise ParseError(self.tok.span[0], "type", self.tok.lexeme or "<eof>")
        base = self.advance().lexeme
        if base == "int" and self.at("["):
            self.advance()
            self.expect("]")
            return "int[]"
        return base

    def method(self) -> MethodAst:
        rtype = self.type_()
        label = self.ident("method name")
        self.expect("(")
        params = []
        if not self.at(")"):
            while True:
                ptype = self.type_()
                params.append(Param(type=ptype, name=self.var_name()))
                if not self.at(","):
                    break
                self.advance()
        self.expect(")")
        body = self.block()
        if self.tok.kind is not TokenKind.EOF:
            raise ParseError(self.tok.span[0], "end of input", self.tok.lexeme)
        return MethodAst(return_type=rtype, label=label, params=tuple(params), body=body)

    def block(self) -> tuple:
        self.expect("{")
        stmts = []
        while not self.at("}"):
            if self.tok.kind is TokenKind.EOF:
                raise ParseError(self.tok.span[0], "'}'", "<eof>")
            stmts.append(self.stmt())
        self.advance()
        return tuple(stmts)

    def decl(self) -> VarDecl:
        vtype = self.type_()
        name = self.var_name()
        self.expect("=")
        return VarDecl(type=vtype, name=name, init=self.expr())

    def assign(self) -> Assign:
        target: Union[Name, Index] = Name(name=self.ident())
        if self.at("["):
            self.advance()
            idx = self.expr()
            self.expect("]")
            target = Index(base=target, index=idx)
        self.expect("=")
        return Assign(target=target, value=self.expr())

    def stmt(self):
        if self.at_type():
            node = self.decl()
            self.expect(";")
            return node
        if self.at("if"):
            self.advance()
            self.expect("(")
            cond = self.expr()
            self.expect(")")
            then = self.block()
            orelse = None
            if self.at("else"):
                self.advance()
                orelse = self.block()
            return If(cond=cond, then=then, orelse=orelse)
        if self.at("for"):
            self.advance()
            self.expect("(")
            init = self.decl() if self.at_type() else self.assign()
            self.expect(";")
            cond = self.expr()
            self.expect(";")
            step = self.assign()
            self.expect(")")
            return For(init=init, cond=cond, step=step, body=self.block())
        if self.at("return"):
            self.advance()
            value = self.expr()
            self.expect(";")
            return Return(value=value)
        if self.tok.kind is TokenKind.IDENTIFIER:
            node = self.assign()
            self.expect(";")
            return node
        raise ParseError(self.tok.span[0], "statement", self.tok.lexeme or "<eof>")

    def expr(self, min_prec: int = 1):
        left = self.primary()
        while self.tok.kind is TokenKind.OPERATOR and PRECEDENCE.get(self.tok.lexeme, 0) >= min_prec:
            op = self.advance().lexeme
            right = self.expr(PRECEDENCE[op] + 1)
            left = Binary(op=op, left=left, right=right)
        return left

    def primary(self):
        tok = self.tok
        if tok.kind is TokenKind.INT:
            self.advance()
            return IntLit(value=int(tok.lexeme))
        if tok.kind is TokenKind.OPERATOR and tok.lexeme == "-":
            self.advance()
            if self.tok.kind is not TokenKind.INT:
                raise ParseError(self.tok.span[0], "integer literal", self.tok.lexeme or "<eof>")
            return IntLit(value=-int(self.advance().lexeme))
        if tok.kind is TokenKind.BOOL:
            self.advance()
            return BoolLit(value=tok.lexeme == "true")
        if tok.kind is TokenKind.KEYWORD and tok.lexeme in BUILTINS:
            self.advance()
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(func=tok.lexeme, args=(arg,))
        if tok.kind is TokenKind.IDENTIFIER:
            self.advance()
            node: Expr = Name(name=tok.lexeme)
            if self.at("["):
                self.advance()
                idx = self.expr()
                self.expect("]")
                node = Index(base=node, index=idx)
            return node
        if self.at("("):
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(tok.span[0], "expression", tok.lexeme or "<eof>")


# ---------------------------------------------------------------- semantic checks


class _Checker:
    """Resolves names and type-checks a method in one pass."""

    def __init__(self, ast: MethodAst):
        self.ast = ast
        self.declared: dict[str, int] = {}
        self.types: dict[str, str] = {}

    def declare(self, name: str, vtype: str, decl_id: int, scope: list):
        if name in self.declared:
            raise ScopeError(f"duplicate declaration of {name!r}")
        self.declared[name] = decl_id
        self.types[name] = vtype
        scope.append(name)

    def check(self):
        scope: list[str] = []
        for p in self.ast.params:
            self.declare(p.name, p.type, p.node_id, scope)
        self.block(self.ast.body, [scope])

    def block(self, stmts, scopes):
        scopes = scopes + [[]]
        for s in stmts:
            self.stmt(s, scopes)

    def visible(self, name, scopes):
        return any(name in s for s in scopes)

    def stmt(self, s, scopes):
        if isinstance(s, VarDecl):
            init_t = self.expr(s.init, scopes)
            self.expect_type(init_t, s.type, f"initializer of {s.name!r}")
            self.declare(s.name, s.type, s.node_id, scopes[-1])
        elif isinstance(s, Assign):
            lhs = self.expr(s.target, scopes)
            self.expect_type(self.expr(s.value, scopes), lhs, "assignment")
        elif isinstance(s, If):
            self.expect_type(self.expr(s.cond, scopes), "bool", "if condition")
            self.block(s.then, scopes)
            if s.orelse is not None:
                self.block(s.orelse, scopes)
        elif isinstance(s, For):
            inner = scopes + [[]]
            self.stmt(s.init, inner)
            self.expect_type(self.expr(s.cond, inner), "bool", "for condition")
            self.stmt(s.step, inner)
            self.block(s.body, inner)
        elif isinstance(s, Return):
            self.expect_type(self.expr(s.value, scopes), self.ast.return_type, "return value")

    @staticmethod
    def expect_type(got, want, what):
        if got != want:
            raise TypeCheckError(f"{what}: expected {want}, got {got}")

    def expr(self, e, scopes) -> str:
        if isinstance(e, IntLit):
            return "int"
        if isinstance(e, BoolLit):
            return "bool"
        if isinstance(e, Name):
            if not self.visible(e.name, scopes):
                raise ScopeError(f"use of undeclared name {e.name!r}")
            return self.types[e.name]
        if isinstance(e, Index):
            self.expect_type(self.expr(e.base, scopes), "int[]", "indexed value")
            self.expect_type(self.expr(e.index, scopes), "int", "index")
            return "int"
        if isinstance(e, Call):
            arg_t, ret_t = BUILTINS[e.func]
            self.expect_type(self.expr(e.args[0], scopes), arg_t, f"argument of {e.func}")
            return ret_t
        if isinstance(e, Binary):
            lt = self.expr(e.left, scopes)
            rt = self.expr(e.right, scopes)
            if e.op in ARITHMETIC:
                self.expect_type(lt, "int", e.op)
                self.expect_type(rt, "int", e.op)
                return "int"
            if e.op in ORDERING:
                self.expect_type(lt, "int", e.op)
                self.expect_type(rt, "int", e.op)
                return "bool"
            if e.op in LOGICAL:
                self.expect_type(lt, "bool", e.op)
                self.expect_type(rt, "bool", e.op)
                return "bool"
            if lt != rt or lt == "int[]":
                raise TypeCheckError(f"{e.op}: cannot compare {lt} with {rt}")
            return "bool"
        raise TypeError(f"not an expression: {e!r}")


def check(ast: MethodAst) -> None:
    """Raise ScopeError/TypeCheckError unless ``ast`` is well formed."""
    _Checker(ast).check()


def parse(source: str) -> MethodAst:
    ast = _Parser(source).method()
    ast = _renumber(ast)
    check(ast)
    return ast


# ---------------------------------------------------------------- printer


def _expr_text(e, parent_prec: int = 0) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, Name):
        return e.name
    if isinstance(e, Index):
        return f"{_expr_text(e.base, 99)}[{_expr_text(e.index)}]"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(_expr_text(a) for a in e.args)})"
    prec = PRECEDENCE[e.op]
    # left-associative: the right operand needs parens at equal precedence
    text = f"{_expr_text(e.left, prec)} {e.op} {_expr_text(e.right, prec + 1)}"
    return f"({text})" if prec < parent_prec else text


def _simple_stmt(s) -> str:
    if isinstance(s, VarDecl):
        return f"{s.type} {s.name} = {_expr_text(s.init)}"
    return f"{_expr_text(s.target)} = {_expr_text(s.value)}"


def _stmt_lines(s, depth: int) -> list[str]:
    pad = "  " * depth
    if isinstance(s, (VarDecl, Assign)):
        return [f"{pad}{_simple_stmt(s)};"]
    if isinstance(s, Return):
        return [f"{pad}return {_expr_text(s.value)};"]
    if isinstance(s, If):
        lines = [f"{pad}if ({_expr_text(s.cond)}) {{"]
        for t in s.then:
            lines += _stmt_lines(t, depth + 1)
        if s.orelse is not None:
            lines.append(f"{pad}}} else {{")
            for t in s.orelse:
                lines += _stmt_lines(t, depth + 1)
        lines.append(f"{pad}}}")
        return lines
    if isinstance(s, For):
        head = f"{_simple_stmt(s.init)}; {_expr_text(s.cond)}; {_simple_stmt(s.step)}"
        lines = [f"{pad}for ({head}) {{"]
        for t in s.body:
            lines += _stmt_lines(t, depth + 1)
        lines.append(f"{pad}}}")
        return lines
    raise TypeError(f"not a statement: {s!r}")


def pretty_print(ast: MethodAst) -> str:
    params = ", ".join(f"{p.type} {p.name}" for p in ast.params)
    lines = [f"{ast.return_type} {ast.label}({params}) {{"]
    for s in ast.body:
        lines += _stmt_lines(s, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- variables and transforms


def variables(ast: MethodAst) -> list[VarRef]:
    """All parameters and locals, in declaration (pre-order) order."""
    refs = [VarRef(p.name, "parameter", p.node_id) for p in ast.params]
    for stmt in ast.body:
        for node in walk(stmt):
            if isinstance(node, VarDecl):
                refs.append(VarRef(node.name, "local", node.node_id))
    return refs


def variable_names(ast: MethodAst) -> list[str]:
    return [v.name for v in variables(ast)]


def occurrences(ast: MethodAst, name: str) -> int:
    """Number of sites (declaration plus uses) carrying ``name``."""
    count = 0
    for node in walk(ast):
        if isinstance(node, (Param, VarDecl, Name)) and node.name == name:
            count += 1
    return count


def _rename_unchecked(ast: MethodAst, old: str, new: str) -> MethodAst:
    def fn(node):
        if isinstance(node, (Param, VarDecl, Name)) and node.name == old:
            return dataclasses.replace(node, name=new)
        return node

    return _map_tree(ast, fn)


def _as_name(v: Union[VarRef, str]) -> str:
    return v.name if isinstance(v, VarRef) else v


def rename_variable(ast: MethodAst, v: Union[VarRef, str], new_name: str) -> MethodAst:
    """Rename the declaration and every use of ``v``; node ids are kept."""
    old = _as_name(v)
    names = variable_names(ast)
    if old not in names:
        raise ScopeError(f"{old!r} is not a variable of {ast.label}")
    if new_name == old:
        return ast
    if not is_valid_identifier(new_name):
        raise InvalidIdentifier(new_name)
    if new_name in names:
        raise CollisionError(f"{new_name!r} already names a variable")
    return _rename_unchecked(ast, old, new_name)


def rename_many(ast: MethodAst, mapping: dict[str, str]) -> MethodAst:
    """Simultaneous rename without identifier validation (used for masking)."""

    def fn(node):
        if isinstance(node, (Param, VarDecl, Name)) and node.name in mapping:
            return dataclasses.replace(node, name=mapping[node.name])
        return node

    return _map_tree(ast, fn)


def insert_dead_code(ast: MethodAst, name: str) -> MethodAst:
    """Append ``int <name> = 0;`` as the last statement of the body."""
    if not is_valid_identifier(name):
        raise InvalidIdentifier(name)
    if name in variable_names(ast):
        raise CollisionError(f"{name!r} already names a variable")
    decl = VarDecl(type="int", name=name, init=IntLit(value=0))
    return _renumber(dataclasses.replace(ast, body=ast.body + (decl,)))


def _uses(ast: MethodAst) -> dict[str, int]:
    counts: dict[str, int] = {}
    for node in walk(ast):
        if isinstance(node, Name):
            counts[node.name] = counts.get(node.name, 0) + 1
    return counts


def strip_dead_declarations(ast: MethodAst) -> MethodAst:
    """Drop local declarations whose variable is never used.

    Only declarations with side-effect-free initializers exist in MiniLang,
    so removing them never changes behaviour.
    """
    while True:
        uses = _uses(ast)
        dead = {v.name for v in variables(ast) if v.kind == "local" and uses.get(v.name, 0) == 0}
        if not dead:
            return ast

        def prune(stmts):
            out = []
            for s in stmts:
                if isinstance(s, VarDecl) and s.name in dead:
                    continue
                if isinstance(s, If):
                    s = dataclasses.replace(
                        s, then=prune(s.then), orelse=None if s.orelse is None else prune(s.orelse)
                    )
                elif isinstance(s, For):
                    # a loop's own init declaration is kept even when unused
                    s = dataclasses.replace(s, body=prune(s.body))
                out.append(s)
            return tuple(out)

        pruned = dataclasses.replace(ast, body=prune(ast.body))
        if pruned == ast:
            return ast
        ast = pruned


def canonicalize_names(ast: MethodAst) -> MethodAst:
    """Rename variables to v0, v1, ... in declaration order."""
    mapping = {v.name: f"v{i}" for i, v in enumerate(variables(ast))}
    return rename_many(ast, mapping)


def check_semantic_equivalence(a: MethodAst, b: MethodAst) -> bool:
    """Alpha-equivalence modulo unused local declarations.

    Sound for the two transforms the attacks perform (renaming and dead
    declaration insertion); not a general equivalence check.
    """
    return canonicalize_names(strip_dead_declarations(a)) == canonicalize_names(strip_dead_declarations(b))
