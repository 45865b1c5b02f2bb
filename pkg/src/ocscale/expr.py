"""Scalar symbolic expressions: parsing, evaluation, differentiation, printing.

The expression language covers real arithmetic (+, -, *, /, ^ with ^ binding
tighter than unary minus and associating to the right), the functions sin,
cos, tan, exp, log, sqrt, abs, atan, and the two-argument atan2.  Trees are
immutable and compare structurally.  Evaluation is IEEE double precision;
domain failures (sqrt of a negative, log of a non-positive, division by
zero, overflow) yield NaN plus a flag instead of an exception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

__all__ = [
    "Expr",
    "ParseError",
    "EvalError",
    "parse",
    "to_text",
    "evaluate",
    "evaluate_flagged",
    "diff",
    "fold_constants",
    "substitute",
    "variables",
    "compile_fn",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "pow_",
    "neg",
    "call",
]

UNARY_FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "atan")
BINARY_FUNCTIONS = ("atan2",)
# "sign" is not part of the input grammar; it exists so that the derivative
# of abs has a value (0) at the origin.  It prints as sign(...) but parse()
# rejects it.
_INTERNAL_FUNCTIONS = ("sign",)

_BINARY_OPS = ("add", "sub", "mul", "div", "pow")


class ParseError(ValueError):
    """Raised on malformed input; `offset` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte {offset})")
        self.offset = offset


class EvalError(ValueError):
    """Raised when evaluation meets a variable missing from the environment."""


@dataclass(frozen=True, slots=True)
class Expr:
    """One node of an expression tree.

    `op` is "const", "var", "neg", one of the arithmetic tags add/sub/mul/
    div/pow, or a function name.  Constants carry `value`, variables carry
    `name`, everything else carries `args`.
    """

    op: str
    value: float = 0.0
    name: str = ""
    args: tuple["Expr", ...] = field(default=())

    def __repr__(self) -> str:  # keeps test failures readable
        return f"Expr({to_text(self)!r})"


def const(v: float) -> Expr:
    return Expr("const", value=float(v))


def var(name: str) -> Expr:
    return Expr("var", name=name)


_ZERO = const(0.0)
_ONE = const(1.0)


def _is_const(e: Expr, v: float | None = None) -> bool:
    return e.op == "const" and (v is None or e.value == v)


def add(a: Expr, b: Expr) -> Expr:
    """Sum with literal-constant shortcuts; used when building derived trees."""
    if _is_const(a) and _is_const(b):
        return const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Expr("add", args=(a, b))


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Expr("sub", args=(a, b))


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return const(a.value * b.value)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return _ZERO
    return Expr("mul", args=(a, b))


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0):
        return _ZERO
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return const(a.value / b.value)
    return Expr("div", args=(a, b))


def pow_(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 1.0):
        return a
    if _is_const(b, 0.0):
        return _ONE
    return Expr("pow", args=(a, b))


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    return Expr("neg", args=(a,))


def call(name: str, *args: Expr) -> Expr:
    return Expr(name, args=args)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_DIGITS = "0123456789"
_NAME_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_NAME_CONT = _NAME_START | set(_DIGITS)


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.tokens: list[tuple[str, str, int]] = []
        self._scan()
        self.index = 0

    def _byte_offset(self, pos: int) -> int:
        return len(self.text[:pos].encode("utf-8"))

    def _scan(self) -> None:
        text, n = self.text, len(self.text)
        i = 0
        while i < n:
            c = text[i]
            if c in " \t\r\n":
                i += 1
                continue
            if c in "+-*/^(),":
                self.tokens.append(("op", c, i))
                i += 1
                continue
            if c in _DIGITS or (c == "." and i + 1 < n and text[i + 1] in _DIGITS):
                j = i
                while j < n and text[j] in _DIGITS:
                    j += 1
                if j < n and text[j] == ".":
                    j += 1
                    while j < n and text[j] in _DIGITS:
                        j += 1
                if j < n and text[j] in "eE":
                    k = j + 1
                    if k < n and text[k] in "+-":
                        k += 1
                    if k < n and text[k] in _DIGITS:
                        j = k
                        while j < n and text[j] in _DIGITS:
                            j += 1
                self.tokens.append(("num", text[i:j], i))
                i = j
                continue
            if c in _NAME_START:
                j = i
                while j < n and text[j] in _NAME_CONT:
                    j += 1
                self.tokens.append(("name", text[i:j], i))
                i = j
                continue
            raise ParseError(f"unexpected character {c!r}", self._byte_offset(i))
        self.tokens.append(("end", "", n))

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.index]

    def next(self) -> tuple[str, str, int]:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def error(self, message: str, pos: int) -> ParseError:
        return ParseError(message, self._byte_offset(pos))


def parse(text: str) -> Expr:
    """Parse `text` into an expression tree.

    Raises ParseError (carrying the byte offset of the first fault) on
    malformed input.  A unary minus applied directly to a numeric literal
    folds into a negative constant, so to_text output re-parses to the
    identical tree.
    """
    tz = _Tokenizer(text)
    e = _parse_expression(tz)
    kind, value, pos = tz.peek()
    if kind != "end":
        raise tz.error(f"unexpected {value!r} after expression", pos)
    return e


def _parse_expression(tz: _Tokenizer) -> Expr:
    e = _parse_term(tz)
    while True:
        kind, value, _ = tz.peek()
        if kind == "op" and value in "+-":
            tz.next()
            rhs = _parse_term(tz)
            e = Expr("add" if value == "+" else "sub", args=(e, rhs))
        else:
            return e


def _parse_term(tz: _Tokenizer) -> Expr:
    e = _parse_unary(tz)
    while True:
        kind, value, _ = tz.peek()
        if kind == "op" and value in "*/":
            tz.next()
            rhs = _parse_unary(tz)
            e = Expr("mul" if value == "*" else "div", args=(e, rhs))
        else:
            return e


def _parse_unary(tz: _Tokenizer) -> Expr:
    kind, value, _ = tz.peek()
    if kind == "op" and value == "-":
        tz.next()
        operand = _parse_unary(tz)
        if operand.op == "const":
            return const(-operand.value)
        return Expr("neg", args=(operand,))
    return _parse_power(tz)


def _parse_power(tz: _Tokenizer) -> Expr:
    base = _parse_atom(tz)
    kind, value, _ = tz.peek()
    if kind == "op" and value == "^":
        tz.next()
        exponent = _parse_unary(tz)  # right associative, exponent may be signed
        return Expr("pow", args=(base, exponent))
    return base


def _parse_atom(tz: _Tokenizer) -> Expr:
    kind, value, pos = tz.next()
    if kind == "num":
        return const(float(value))
    if kind == "name":
        nkind, nvalue, _ = tz.peek()
        if nkind == "op" and nvalue == "(":
            if value not in UNARY_FUNCTIONS and value not in BINARY_FUNCTIONS:
                raise tz.error(f"unknown function {value!r}", pos)
            tz.next()
            args = [_parse_expression(tz)]
            while True:
                ckind, cvalue, cpos = tz.next()
                if ckind == "op" and cvalue == ",":
                    args.append(_parse_expression(tz))
                elif ckind == "op" and cvalue == ")":
                    break
                else:
                    raise tz.error("expected ',' or ')'", cpos)
            want = 2 if value in BINARY_FUNCTIONS else 1
            if len(args) != want:
                raise tz.error(f"{value} takes {want} argument(s)", pos)
            return Expr(value, args=tuple(args))
        return var(value)
    if kind == "op" and value == "(":
        e = _parse_expression(tz)
        ckind, cvalue, cpos = tz.next()
        if not (ckind == "op" and cvalue == ")"):
            raise tz.error("expected ')'", cpos)
        return e
    raise tz.error(f"unexpected {value!r}" if value else "unexpected end of input", pos)


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(e: Expr) -> int:
    if e.op in ("add", "sub"):
        return _PREC_ADD
    if e.op in ("mul", "div"):
        return _PREC_MUL
    if e.op == "neg" or (e.op == "const" and (e.value < 0 or math.copysign(1.0, e.value) < 0)):
        return _PREC_NEG
    if e.op == "pow":
        return _PREC_POW
    return _PREC_ATOM


def _fmt_const(v: float) -> str:
    if v != v:
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if v == int(v) and abs(v) < 1e16 and not (v == 0.0 and math.copysign(1.0, v) < 0):
        return str(int(v))
    return repr(v)


def to_text(e: Expr) -> str:
    """Render with minimal parentheses; re-parses to the same tree."""
    match e.op:
        case "const":
            return _fmt_const(e.value)
        case "var":
            return e.name
        case "neg":
            inner = to_text(e.args[0])
            if _prec(e.args[0]) <= _PREC_NEG:
                inner = f"({inner})"
            return f"-{inner}"
        case "add" | "sub":
            sign = "+" if e.op == "add" else "-"
            left, right = e.args
            ls = to_text(left)
            rs = to_text(right)
            if _prec(left) < _PREC_ADD:
                ls = f"({ls})"
            if _prec(right) <= _PREC_ADD:
                rs = f"({rs})"
            return f"{ls} {sign} {rs}"
        case "mul" | "div":
            sign = "*" if e.op == "mul" else "/"
            left, right = e.args
            ls = to_text(left)
            rs = to_text(right)
            if _prec(left) < _PREC_MUL:
                ls = f"({ls})"
            if _prec(right) <= _PREC_MUL:
                rs = f"({rs})"
            return f"{ls}{sign}{rs}"
        case "pow":
            base, exponent = e.args
            bs = to_text(base)
            es = to_text(exponent)
            if _prec(base) <= _PREC_POW:
                bs = f"({bs})"
            # the exponent slot accepts unary minus and further powers bare
            if _prec(exponent) < _PREC_NEG:
                es = f"({es})"
            return f"{bs}^{es}"
        case _:
            inner = ", ".join(to_text(a) for a in e.args)
            return f"{e.op}({inner})"


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_NAN = float("nan")


def evaluate_flagged(e: Expr, env: Mapping[str, float]) -> tuple[float, bool]:
    """Evaluate and report whether any domain failure occurred.

    Unknown variables raise EvalError naming the symbol; domain failures
    (including division by zero and overflow) produce NaN and set the flag.
    """
    flag = False

    def rec(node: Expr) -> float:
        nonlocal flag
        match node.op:
            case "const":
                return node.value
            case "var":
                try:
                    return float(env[node.name])
                except KeyError:
                    raise EvalError(f"unknown variable {node.name!r}") from None
            case "add":
                return rec(node.args[0]) + rec(node.args[1])
            case "sub":
                return rec(node.args[0]) - rec(node.args[1])
            case "mul":
                return rec(node.args[0]) * rec(node.args[1])
            case "neg":
                return -rec(node.args[0])
            case "div":
                a, b = rec(node.args[0]), rec(node.args[1])
                try:
                    return a / b
                except ZeroDivisionError:
                    flag = True
                    return _NAN
            case "pow":
                # math.pow, not **: Python ** promotes negative-base
                # fractional powers to complex instead of raising
                a, b = rec(node.args[0]), rec(node.args[1])
                try:
                    return math.pow(a, b)
                except (ValueError, ZeroDivisionError, OverflowError):
                    flag = True
                    return _NAN
            case "abs":
                return abs(rec(node.args[0]))
            case "sign":
                x = rec(node.args[0])
                if x != x:
                    return x
                return 0.0 if x == 0.0 else math.copysign(1.0, x)
            case "atan2":
                return math.atan2(rec(node.args[0]), rec(node.args[1]))
            case _:
                x = rec(node.args[0])
                fn = _MATH_UNARY[node.op]
                try:
                    return fn(x)
                except (ValueError, OverflowError):
                    flag = True
                    return _NAN

    return rec(e), flag


_MATH_UNARY = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "atan": math.atan,
}


def evaluate(e: Expr, env: Mapping[str, float]) -> float:
    """Evaluate at `env`; NaN on domain failure (see evaluate_flagged)."""
    return evaluate_flagged(e, env)[0]


def variables(e: Expr) -> frozenset[str]:
    out: set[str] = set()

    def rec(node: Expr) -> None:
        if node.op == "var":
            out.add(node.name)
        for a in node.args:
            rec(a)

    rec(e)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------


def diff(e: Expr, name: str) -> Expr:
    """Symbolic partial derivative of `e` with respect to `name`.

    The derivative of abs uses sign, with sign(0) = 0, so the derivative of
    abs at the origin is 0 by convention.  No simplification is performed
    beyond dropping literal zero and one factors while the result is built.
    """
    match e.op:
        case "const":
            return _ZERO
        case "var":
            return _ONE if e.name == name else _ZERO
        case "add":
            return add(diff(e.args[0], name), diff(e.args[1], name))
        case "sub":
            return sub(diff(e.args[0], name), diff(e.args[1], name))
        case "neg":
            return neg(diff(e.args[0], name))
        case "mul":
            a, b = e.args
            return add(mul(diff(a, name), b), mul(a, diff(b, name)))
        case "div":
            a, b = e.args
            return div(
                sub(mul(diff(a, name), b), mul(a, diff(b, name))),
                pow_(b, const(2.0)),
            )
        case "pow":
            base, exponent = e.args
            db = diff(base, name)
            de = diff(exponent, name)
            if _is_const(exponent):
                c = exponent.value
                return mul(mul(exponent, pow_(base, const(c - 1.0))), db)
            if _is_const(base):
                return mul(mul(e, call("log", base)), de)
            term1 = mul(de, call("log", base))
            term2 = div(mul(exponent, db), base)
            return mul(e, add(term1, term2))
        case "sin":
            return mul(call("cos", e.args[0]), diff(e.args[0], name))
        case "cos":
            return neg(mul(call("sin", e.args[0]), diff(e.args[0], name)))
        case "tan":
            return div(diff(e.args[0], name), pow_(call("cos", e.args[0]), const(2.0)))
        case "exp":
            return mul(e, diff(e.args[0], name))
        case "log":
            return div(diff(e.args[0], name), e.args[0])
        case "sqrt":
            return div(diff(e.args[0], name), mul(const(2.0), e))
        case "abs":
            return mul(call("sign", e.args[0]), diff(e.args[0], name))
        case "sign":
            return _ZERO
        case "atan":
            f = e.args[0]
            return div(diff(f, name), add(_ONE, pow_(f, const(2.0))))
        case "atan2":
            y, x = e.args
            dy = diff(y, name)
            dx = diff(x, name)
            num = sub(mul(x, dy), mul(y, dx))
            den = add(pow_(x, const(2.0)), pow_(y, const(2.0)))
            return div(num, den)
        case _:
            raise ValueError(f"cannot differentiate node {e.op!r}")


# ---------------------------------------------------------------------------
# Rewriting
# ---------------------------------------------------------------------------


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace each variable present in `mapping` with its expression."""
    match e.op:
        case "var":
            return mapping.get(e.name, e)
        case "const":
            return e
        case _:
            new_args = tuple(substitute(a, mapping) for a in e.args)
            if new_args == e.args:
                return e
            return Expr(e.op, value=e.value, name=e.name, args=new_args)


def fold_constants(e: Expr) -> Expr:
    """Collapse subtrees whose leaves are all constants.

    A subtree folds only when every child is a constant and the result is
    finite; nothing else is rewritten, so NaN flags and evaluation order of
    non-constant parts are preserved.
    """
    if e.op in ("const", "var"):
        return e
    new_args = tuple(fold_constants(a) for a in e.args)
    node = e if new_args == e.args else Expr(e.op, value=e.value, name=e.name, args=new_args)
    if all(a.op == "const" for a in new_args):
        value, flag = evaluate_flagged(node, {})
        if not flag and math.isfinite(value):
            return const(value)
    return node


# ---------------------------------------------------------------------------
# Compilation to a Python callable (used by hot loops; same arithmetic
# order and primitives as evaluate, so results agree bitwise)
# ---------------------------------------------------------------------------


def _py_src(e: Expr, names: Mapping[str, str]) -> str:
    match e.op:
        case "const":
            return repr(e.value)
        case "var":
            try:
                return names[e.name]
            except KeyError:
                raise EvalError(f"unknown variable {e.name!r}") from None
        case "add":
            return f"({_py_src(e.args[0], names)} + {_py_src(e.args[1], names)})"
        case "sub":
            return f"({_py_src(e.args[0], names)} - {_py_src(e.args[1], names)})"
        case "mul":
            return f"({_py_src(e.args[0], names)} * {_py_src(e.args[1], names)})"
        case "div":
            return f"({_py_src(e.args[0], names)} / {_py_src(e.args[1], names)})"
        case "pow":
            return f"_pow({_py_src(e.args[0], names)}, {_py_src(e.args[1], names)})"
        case "neg":
            return f"(-{_py_src(e.args[0], names)})"
        case "abs":
            return f"abs({_py_src(e.args[0], names)})"
        case _:
            inner = ", ".join(_py_src(a, names) for a in e.args)
            return f"_{e.op}({inner})"


def _sign(x: float) -> float:
    if x != x:
        return x
    return 0.0 if x == 0.0 else math.copysign(1.0, x)


_COMPILE_GLOBALS = {
    "__builtins__": {"abs": abs},
    "_sin": math.sin,
    "_cos": math.cos,
    "_tan": math.tan,
    "_exp": math.exp,
    "_log": math.log,
    "_sqrt": math.sqrt,
    "_atan": math.atan,
    "_atan2": math.atan2,
    "_pow": math.pow,
    "_sign": _sign,
    "_nan": _NAN,
}


def compile_fn(e: Expr, argnames: Iterable[str]) -> Callable[..., float]:
    """Compile to a positional-argument callable.

    Arguments arrive in the order of `argnames`; a variable outside that
    list raises EvalError at compile time.  Domain failures return NaN,
    matching evaluate().
    """
    argnames = list(argnames)
    names = {n: f"_a{i}" for i, n in enumerate(argnames)}
    body = _py_src(e, names)
    params = ", ".join(names[n] for n in argnames)
    src = (
        f"def _compiled({params}):\n"
        f"    try:\n"
        f"        return {body}\n"
        f"    except (ValueError, ZeroDivisionError, OverflowError):\n"
        f"        return _nan\n"
    )
    scope: dict = {}
    exec(src, dict(_COMPILE_GLOBALS), scope)  # noqa: S102 source built from our own printer
    return scope["_compiled"]
