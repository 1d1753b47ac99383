"""Front end and ground-truth semantics of the analyzed language.

The language is deliberately tiny: arbitrary-precision integer variables,
``+ - *`` arithmetic, a single comparison at the root of every condition,
``skip`` / assignment / ``if`` / ``while`` statements.  A program couples a
command with the set of *low* (publicly observable) variables; every other
declared variable is high.

The small-step interpreter in this module is the oracle every analysis is
tested against: it is deterministic and total over declared variables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

ARITH_OPS = ("+", "-", "*")
CMP_OPS = ("<", "<=", "==", "!=", ">", ">=")

# Negation stays inside the comparison language.
NEGATED_CMP = {
    "<": ">=",
    "<=": ">",
    "==": "!=",
    "!=": "==",
    ">": "<=",
    ">=": "<",
}


class LangError(Exception):
    """Base error for this module."""


class ParseError(LangError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expr
    right: Expr

    def __str__(self) -> str:
        return f"({self.left} {self.op} {self.right})"


Expr = Const | Var | BinOp


@dataclass(frozen=True)
class Cmp:
    """A single comparison; the condition grammar has no connectives."""

    op: str
    left: Expr
    right: Expr

    def negate(self) -> Cmp:
        return Cmp(NEGATED_CMP[self.op], self.left, self.right)

    def __str__(self) -> str:
        return f"{self.left} {self.op} {self.right}"


BExpr = Cmp


@dataclass(frozen=True)
class Skip:
    def __str__(self) -> str:
        return "skip"


@dataclass(frozen=True)
class Assign:
    var: str
    expr: Expr

    def __str__(self) -> str:
        return f"{self.var} := {self.expr}"


@dataclass(frozen=True)
class If:
    guard: BExpr
    then_branch: Command
    else_branch: Command

    def __str__(self) -> str:
        return f"if ({self.guard}) {{ {self.then_branch} }} else {{ {self.else_branch} }}"


@dataclass(frozen=True)
class While:
    guard: BExpr
    body: Command
    # Engine-internal marker: true on the copy left behind by unrolling a
    # loop, so the iteration counter can tell a fresh entry from the next
    # iteration of an already-entered loop.  Never produced by the parser.
    active: bool = False

    def __str__(self) -> str:
        return f"while ({self.guard}) {{ {self.body} }}"


@dataclass(frozen=True)
class Seq:
    first: Command
    second: Command

    def __str__(self) -> str:
        return f"{self.first}; {self.second}"


Command = Skip | Assign | If | While | Seq

SKIP = Skip()


@dataclass(frozen=True)
class Program:
    body: Command
    low_vars: frozenset[str]
    all_vars: frozenset[str]

    @property
    def high_vars(self) -> frozenset[str]:
        return self.all_vars - self.low_vars


Store = dict[str, int]


@dataclass(frozen=True)
class Final:
    """Terminated run: the final store."""

    store: tuple[tuple[str, int], ...]

    @staticmethod
    def of(store: Store) -> Final:
        return Final(tuple(sorted(store.items())))

    def as_store(self) -> Store:
        return dict(self.store)


@dataclass(frozen=True)
class OutOfFuel:
    """The run did not reach skip within the given number of steps."""


OUT_OF_FUEL = OutOfFuel()


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_KEYWORDS = {"low", "high", "skip", "if", "else", "while"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|<=|>=|==|!=|[<>{}();,+\-*=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        lexeme = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        return ParseError(message, tok.line, tok.col)

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text:
            raise self.error(f"expected {text!r}, found {tok.text or 'end of input'!r}")
        return self.next()

    def at_ident(self) -> bool:
        tok = self.peek()
        return tok.kind == "ident" and tok.text not in _KEYWORDS

    def parse_program(self) -> Program:
        low: list[str] = []
        high: list[str] = []
        seen: set[str] = set()
        while self.peek().text in ("low", "high"):
            which = self.next().text
            while True:
                tok = self.peek()
                if tok.kind != "ident" or tok.text in _KEYWORDS:
                    raise self.error("expected variable name in declaration")
                self.next()
                if tok.text in seen:
                    raise ParseError(f"duplicate declaration of {tok.text!r}", tok.line, tok.col)
                seen.add(tok.text)
                (low if which == "low" else high).append(tok.text)
                if self.peek().text == ",":
                    self.next()
                    continue
                break
            self.expect(";")
        body = self.parse_command(stop_at="eof")
        self.expect_eof()
        program = Program(body, frozenset(low), frozenset(low) | frozenset(high))
        undeclared = used_vars(body) - program.all_vars
        if undeclared:
            name = sorted(undeclared)[0]
            raise ParseError(f"use of undeclared variable {name!r}", 0, 0)
        return program

    def expect_eof(self) -> None:
        if self.peek().kind != "eof":
            raise self.error(f"unexpected trailing input {self.peek().text!r}")

    def parse_command(self, stop_at: str) -> Command:
        stmts: list[Command] = []
        while self.peek().kind != "eof" and self.peek().text != stop_at:
            stmts.append(self.parse_statement())
        if not stmts:
            return SKIP
        cmd = stmts[-1]
        for stmt in reversed(stmts[:-1]):
            cmd = Seq(stmt, cmd)
        return cmd

    def parse_statement(self) -> Command:
        tok = self.peek()
        if tok.text == "skip":
            self.next()
            self.expect(";")
            return SKIP
        if tok.text == "if":
            self.next()
            self.expect("(")
            guard = self.parse_bexpr()
            self.expect(")")
            then_branch = self.parse_block()
            else_branch: Command = SKIP
            if self.peek().text == "else":
                self.next()
                else_branch = self.parse_block()
            return If(guard, then_branch, else_branch)
        if tok.text == "while":
            self.next()
            self.expect("(")
            guard = self.parse_bexpr()
            self.expect(")")
            body = self.parse_block()
            return While(guard, body)
        if self.at_ident():
            name = self.next().text
            self.expect(":=")
            expr = self.parse_expr()
            self.expect(";")
            return Assign(name, expr)
        raise self.error(f"expected statement, found {tok.text or 'end of input'!r}")

    def parse_block(self) -> Command:
        self.expect("{")
        cmd = self.parse_command(stop_at="}")
        self.expect("}")
        return cmd

    def parse_bexpr(self) -> BExpr:
        left = self.parse_expr()
        tok = self.peek()
        op = tok.text
        if op == "=":
            op = "=="
        if op not in CMP_OPS:
            raise self.error(f"expected comparison operator, found {tok.text!r}")
        self.next()
        right = self.parse_expr()
        return Cmp(op, left, right)

    def parse_expr(self) -> Expr:
        expr = self.parse_term()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            expr = BinOp(op, expr, self.parse_term())
        return expr

    def parse_term(self) -> Expr:
        expr = self.parse_atom()
        while self.peek().text == "*":
            self.next()
            expr = BinOp("*", expr, self.parse_atom())
        return expr

    def parse_atom(self) -> Expr:
        tok = self.peek()
        if tok.text == "-":
            self.next()
            num = self.peek()
            if num.kind != "num":
                raise self.error("expected numeric literal after unary '-'")
            self.next()
            return Const(-int(num.text))
        if tok.kind == "num":
            self.next()
            return Const(int(tok.text))
        if tok.text == "(":
            self.next()
            expr = self.parse_expr()
            self.expect(")")
            return expr
        if self.at_ident():
            self.next()
            return Var(tok.text)
        raise self.error(f"expected expression, found {tok.text or 'end of input'!r}")


def parse_program(text: str) -> Program:
    """Parse a ``.imp`` source: ``low``/``high`` headers, then the command."""
    return _Parser(_tokenize(text)).parse_program()


# ---------------------------------------------------------------------------
# Semantics
# ---------------------------------------------------------------------------


def used_vars(node: Expr | BExpr | Command) -> set[str]:
    """All variable names occurring anywhere in the given tree."""
    match node:
        case Const():
            return set()
        case Var(name):
            return {name}
        case BinOp(_, left, right) | Cmp(_, left, right):
            return used_vars(left) | used_vars(right)
        case Skip():
            return set()
        case Assign(var, expr):
            return {var} | used_vars(expr)
        case If(guard, then_branch, else_branch):
            return used_vars(guard) | used_vars(then_branch) | used_vars(else_branch)
        case While(guard, body):
            return used_vars(guard) | used_vars(body)
        case Seq(first, second):
            return used_vars(first) | used_vars(second)
    raise LangError(f"unknown node {node!r}")


def assigned_vars(cmd: Command) -> set[str]:
    """Syntactic over-approximation of the variables a command may write."""
    match cmd:
        case Skip():
            return set()
        case Assign(var, _):
            return {var}
        case If(_, then_branch, else_branch):
            return assigned_vars(then_branch) | assigned_vars(else_branch)
        case While(_, body):
            return assigned_vars(body)
        case Seq(first, second):
            return assigned_vars(first) | assigned_vars(second)
    raise LangError(f"unknown command {cmd!r}")


def apply_op(op: str, left: int, right: int) -> int:
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    raise LangError(f"unknown operator {op!r}")


def apply_cmp(op: str, left: int, right: int) -> bool:
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == "==":
        return left == right
    if op == "!=":
        return left != right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise LangError(f"unknown comparison {op!r}")


def eval_expr(expr: Expr, store: Store) -> int:
    match expr:
        case Const(value):
            return value
        case Var(name):
            return store[name]
        case BinOp(op, left, right):
            return apply_op(op, eval_expr(left, store), eval_expr(right, store))
    raise LangError(f"unknown expression {expr!r}")


def eval_bool(bexpr: BExpr, store: Store) -> bool:
    return apply_cmp(bexpr.op, eval_expr(bexpr.left, store), eval_expr(bexpr.right, store))


def concrete_step(state: tuple[Command, Store]) -> tuple[Command, Store]:
    """One small step.  The language is deterministic, so this is a function."""
    cmd, store = state
    match cmd:
        case Skip():
            raise LangError("skip has no successor")
        case Assign(var, expr):
            new_store = dict(store)
            new_store[var] = eval_expr(expr, store)
            return SKIP, new_store
        case If(guard, then_branch, else_branch):
            return (then_branch if eval_bool(guard, store) else else_branch), store
        case While(guard, body):
            if eval_bool(guard, store):
                return Seq(body, cmd), store
            return SKIP, store
        case Seq(first, second):
            if isinstance(first, Skip):
                return second, store
            first2, store2 = concrete_step((first, store))
            return Seq(first2, second), store2
    raise LangError(f"unknown command {cmd!r}")


def run_command(cmd: Command, store: Store, fuel: int) -> Final | OutOfFuel:
    """Run a bare command to completion or give up after ``fuel`` small steps."""
    current = dict(store)
    for _ in range(fuel):
        if isinstance(cmd, Skip):
            return Final.of(current)
        cmd, current = concrete_step((cmd, current))
    if isinstance(cmd, Skip):
        return Final.of(current)
    return OUT_OF_FUEL


def run(program: Program, store: Store, fuel: int) -> Final | OutOfFuel:
    """Run to completion or give up after ``fuel`` small steps."""
    return run_command(program.body, store, fuel)


def low_equal(store0: Store, store1: Store, low_vars: frozenset[str] | set[str]) -> bool:
    return all(store0[x] == store1[x] for x in low_vars)
