"""Scalar expression fields with exact forward-mode derivatives.

Expressions are parsed from a small infix language over variables
``x1 .. xn`` (aliased ``x, y, z`` when n <= 3) with the unary functions
``neg, exp, log, sqrt, sin, cos, tan`` and binary ``+ - * / ^``.

First derivatives are propagated through dual numbers whose derivative
part is a numpy vector (one sweep yields a full gradient).  Second
derivatives use hyper-dual numbers a + b*e1 + c*e2 + d*e1*e2 with
e1^2 = e2^2 = 0, never nested first-order passes and never finite
differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "DomainError",
    "parse_expression",
    "to_source",
    "evaluate",
    "gradient",
    "jacobian",
    "hessian",
    "compile_scalar",
    "compile_field",
    "compile_field_jacobian",
]

_FUNCTIONS = ("exp", "log", "sqrt", "sin", "cos", "tan")


class ExpressionError(ValueError):
    """Parse failure; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DomainError(ArithmeticError):
    """Evaluation outside the function domain (log <= 0, 0 division, ...)."""


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class _Node:
    pass


@dataclass(frozen=True)
class Const(_Node):
    value: float


@dataclass(frozen=True)
class Var(_Node):
    index: int  # 0-based


@dataclass(frozen=True)
class Unary(_Node):
    op: str  # neg | exp | log | sqrt | sin | cos | tan
    arg: "Expression"


@dataclass(frozen=True)
class Binary(_Node):
    op: str  # add | sub | mul | div | pow
    left: "Expression"
    right: "Expression"


Expression = Const | Var | Unary | Binary


# ---------------------------------------------------------------------------
# Tokenizer / recursive-descent parser


def _tokenize(text: str):
    tokens = []  # (kind, payload, offset)
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot)):
                seen_dot = seen_dot or text[j] == "."
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    while k < n and text[k].isdigit():
                        k += 1
                    j = k
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExpressionError(f"bad numeric literal {text[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        if ch in "+-*/^()":
            tokens.append((ch, ch, i))
            i += 1
            continue
        raise ExpressionError(f"unexpected character {ch!r}", i)
    tokens.append(("end", None, n))
    return tokens


class _Parser:
    def __init__(self, tokens, n_vars: int):
        self.tokens = tokens
        self.pos = 0
        self.n_vars = n_vars
        self.var_names = {f"x{i + 1}": i for i in range(n_vars)}
        if n_vars <= 3:
            for alias, idx in zip("xyz", range(n_vars)):
                self.var_names[alias] = idx

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str):
        tok = self.advance()
        if tok[0] != kind:
            raise ExpressionError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        return tok

    def parse(self) -> Expression:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExpressionError(f"trailing input {tok[1]!r}", tok[2])
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.advance()[0]
            rhs = self.term()
            node = Binary("add" if op == "+" else "sub", node, rhs)
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.peek()[0] in ("*", "/"):
            op = self.advance()[0]
            rhs = self.unary()
            node = Binary("mul" if op == "*" else "div", node, rhs)
        return node

    def unary(self) -> Expression:
        if self.peek()[0] == "-":
            self.advance()
            return Unary("neg", self.unary())
        if self.peek()[0] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.peek()[0] == "^":
            self.advance()
            exponent = self.unary()  # right associative, binds unary minus
            return Binary("pow", base, exponent)
        return base

    def atom(self) -> Expression:
        tok = self.advance()
        kind, payload, offset = tok
        if kind == "num":
            return Const(payload)
        if kind == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "name":
            if payload in _FUNCTIONS:
                nxt = self.peek()
                if nxt[0] != "(":
                    raise ExpressionError(
                        f"function {payload!r} takes exactly one parenthesized argument", nxt[2]
                    )
                self.advance()
                arg = self.expr()
                self.expect(")")
                return Unary(payload, arg)
            if payload in self.var_names:
                return Var(self.var_names[payload])
            raise ExpressionError(f"unknown identifier {payload!r}", offset)
        raise ExpressionError(f"unexpected token {payload!r}", offset)


def parse_expression(text: str, n_vars: int) -> Expression:
    """Parse ``text`` as an expression in n_vars variables."""
    if n_vars < 1:
        raise ValueError("n_vars must be >= 1")
    return _Parser(_tokenize(text), n_vars).parse()


# ---------------------------------------------------------------------------
# Pretty printer (round-trips through parse_expression)

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def to_source(expr: Expression) -> str:
    def emit(node: Expression, parent_prec: int) -> str:
        if isinstance(node, Const):
            v = node.value
            text = repr(int(v)) if v == int(v) and abs(v) < 1e16 else repr(v)
            return text
        if isinstance(node, Var):
            return f"x{node.index + 1}"
        if isinstance(node, Unary):
            if node.op == "neg":
                inner = emit(node.arg, _PREC["neg"])
                text = f"-{inner}"
                return f"({text})" if parent_prec > _PREC["neg"] else text
            return f"{node.op}({emit(node.arg, 0)})"
        assert isinstance(node, Binary)
        prec = _PREC[node.op]
        sym = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}[node.op]
        # right operand needs a bump for left-assoc ops; pow is right-assoc
        if node.op == "pow":
            left = emit(node.left, prec + 1)
            right = emit(node.right, prec)
        else:
            left = emit(node.left, prec)
            right = emit(node.right, prec + 1)
        text = f"{left} {sym} {right}"
        return f"({text})" if prec < parent_prec else text

    return emit(expr, 0)


# ---------------------------------------------------------------------------
# Scalar types for forward AD


class Dual:
    """First-order dual number with a vector derivative part."""

    __slots__ = ("val", "der")

    def __init__(self, val: float, der: np.ndarray):
        self.val = float(val)
        self.der = der

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.der + other.der)
        return Dual(self.val + other, self.der)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.der - other.der)
        return Dual(self.val - other, self.der)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.der)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.val * other.der + other.val * self.der)
        return Dual(self.val * other, self.der * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            if other.val == 0.0:
                raise DomainError("division by zero")
            inv = 1.0 / other.val
            return Dual(self.val * inv, (self.der - self.val * inv * other.der) * inv)
        if other == 0.0:
            raise DomainError("division by zero")
        return Dual(self.val / other, self.der / other)

    def __rtruediv__(self, other):
        if self.val == 0.0:
            raise DomainError("division by zero")
        inv = 1.0 / self.val
        return Dual(other * inv, -other * inv * inv * self.der)

    def __neg__(self):
        return Dual(-self.val, -self.der)


class Hyper:
    """Hyper-dual number a + b e1 + c e2 + d e1 e2 (e1^2 = e2^2 = 0)."""

    __slots__ = ("a", "b", "c", "d")

    def __init__(self, a, b=0.0, c=0.0, d=0.0):
        self.a, self.b, self.c, self.d = float(a), float(b), float(c), float(d)

    def __add__(self, other):
        o = other if isinstance(other, Hyper) else Hyper(other)
        return Hyper(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)

    __radd__ = __add__

    def __sub__(self, other):
        o = other if isinstance(other, Hyper) else Hyper(other)
        return Hyper(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)

    def __rsub__(self, other):
        return Hyper(other) - self

    def __mul__(self, other):
        o = other if isinstance(other, Hyper) else Hyper(other)
        return Hyper(
            self.a * o.a,
            self.a * o.b + self.b * o.a,
            self.a * o.c + self.c * o.a,
            self.a * o.d + self.b * o.c + self.c * o.b + self.d * o.a,
        )

    __rmul__ = __mul__

    def reciprocal(self):
        if self.a == 0.0:
            raise DomainError("division by zero")
        ia = 1.0 / self.a
        ia2 = ia * ia
        return Hyper(ia, -self.b * ia2, -self.c * ia2,
                     (2.0 * self.b * self.c * ia - self.d) * ia2)

    def __truediv__(self, other):
        o = other if isinstance(other, Hyper) else Hyper(other)
        return self * o.reciprocal()

    def __rtruediv__(self, other):
        return Hyper(other) * self.reciprocal()

    def __neg__(self):
        return Hyper(-self.a, -self.b, -self.c, -self.d)


def _lift(fn_val: Callable[[float], float], fn_d1: Callable[[float], float],
          fn_d2: Callable[[float], float], guard: Callable[[float], None]):
    """Build the unary-function rule for floats, Dual, and Hyper."""

    def apply(x):
        if isinstance(x, Dual):
            guard(x.val)
            return Dual(fn_val(x.val), fn_d1(x.val) * x.der)
        if isinstance(x, Hyper):
            guard(x.a)
            d1, d2 = fn_d1(x.a), fn_d2(x.a)
            return Hyper(fn_val(x.a), d1 * x.b, d1 * x.c, d1 * x.d + d2 * x.b * x.c)
        guard(x)
        return fn_val(x)

    return apply


def _no_guard(_v: float) -> None:
    return None


def _log_guard(v: float) -> None:
    if v <= 0.0:
        raise DomainError("log of non-positive value")


def _sqrt_guard(v: float) -> None:
    if v < 0.0:
        raise DomainError("sqrt of negative value")
    if v == 0.0:
        raise DomainError("sqrt derivative undefined at zero")


_UNARY_RULES = {
    "exp": _lift(math.exp, math.exp, math.exp, _no_guard),
    "log": _lift(math.log, lambda v: 1.0 / v, lambda v: -1.0 / (v * v), _log_guard),
    "sqrt": _lift(math.sqrt, lambda v: 0.5 / math.sqrt(v),
                  lambda v: -0.25 / (v * math.sqrt(v)), _sqrt_guard),
    "sin": _lift(math.sin, math.cos, lambda v: -math.sin(v), _no_guard),
    "cos": _lift(math.cos, lambda v: -math.sin(v), lambda v: -math.cos(v), _no_guard),
    "tan": _lift(math.tan, lambda v: 1.0 + math.tan(v) ** 2,
                 lambda v: 2.0 * math.tan(v) * (1.0 + math.tan(v) ** 2), _no_guard),
}


def _as_value(x):
    if isinstance(x, Dual):
        return x.val
    if isinstance(x, Hyper):
        return x.a
    return x


def _pow(base, exponent):
    """base^exponent; integer exponents are exact, others need base > 0."""
    exp_val = _as_value(exponent)
    is_const_exp = isinstance(exponent, (int, float))
    if is_const_exp and float(exp_val) == int(exp_val):
        n = int(exp_val)
        if n == 0:
            return 1.0
        if n < 0:
            if _as_value(base) == 0.0:
                raise DomainError("zero raised to negative power")
            inv = 1.0 / base if not isinstance(base, (Dual, Hyper)) else base.__rtruediv__(1.0)
            return _pow(inv, -n)
        result = base
        for _ in range(n - 1):
            result = result * base
        return result
    # general power via exp(exponent * log(base)); requires positive base
    if _as_value(base) <= 0.0:
        raise DomainError("non-integer power requires positive base")
    return _UNARY_RULES["exp"](exponent * _UNARY_RULES["log"](base))


def evaluate(expr: Expression, values: Sequence):
    """Evaluate over floats, Dual, or Hyper scalars."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return values[expr.index]
    if isinstance(expr, Unary):
        inner = evaluate(expr.arg, values)
        if expr.op == "neg":
            return -inner
        return _UNARY_RULES[expr.op](inner)
    assert isinstance(expr, Binary)
    left = evaluate(expr.left, values)
    if expr.op == "pow" and isinstance(expr.right, Const):
        return _pow(left, expr.right.value)
    right = evaluate(expr.right, values)
    if expr.op == "add":
        return left + right
    if expr.op == "sub":
        return left - right
    if expr.op == "mul":
        return left * right
    if expr.op == "div":
        if _as_value(right) == 0.0:
            raise DomainError("division by zero")
        return left / right
    return _pow(left, right)


# ---------------------------------------------------------------------------
# Derivative operations


def gradient(expr: Expression, point: Sequence[float]) -> np.ndarray:
    """Exact gradient at ``point`` via one vector-dual sweep."""
    n = len(point)
    eye = np.eye(n)
    duals = [Dual(point[i], eye[i]) for i in range(n)]
    out = evaluate(expr, duals)
    if isinstance(out, Dual):
        return np.array(out.der, dtype=float)
    return np.zeros(n)


def jacobian(field: Sequence[Expression], point: Sequence[float]) -> np.ndarray:
    """Stacked gradients of the field components (rows)."""
    return np.array([gradient(f, point) for f in field])


def hessian(expr: Expression, point: Sequence[float]) -> np.ndarray:
    """Exact Hessian via hyper-dual sweeps, one per index pair (i <= j)."""
    n = len(point)
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            values = []
            for k in range(n):
                b = 1.0 if k == i else 0.0
                c = 1.0 if k == j else 0.0
                values.append(Hyper(point[k], b, c, 0.0))
            out = evaluate(expr, values)
            d = out.d if isinstance(out, Hyper) else 0.0
            H[i, j] = d
            H[j, i] = d
    return H


# ---------------------------------------------------------------------------
# Compilation to plain Python for tight integration loops.  The generated
# jacobian code is an unrolled forward-mode dual sweep (same rules as Dual),
# not symbolic simplification and not finite differencing.


class _Emitter:
    def __init__(self, n_vars: int, want_derivs: bool):
        self.n = n_vars
        self.want = want_derivs
        self.lines: list[str] = []
        self.counter = 0

    def tmp(self) -> str:
        self.counter += 1
        return f"t{self.counter}"

    def emit(self, expr: Expression) -> tuple[int | str, list]:
        """Return (value_sym, deriv_syms); symbols are source fragments."""
        zero = ["0.0"] * self.n
        if isinstance(expr, Const):
            return repr(expr.value), zero
        if isinstance(expr, Var):
            dv = list(zero)
            dv[expr.index] = "1.0"
            return f"v[{expr.index}]", dv
        if isinstance(expr, Unary):
            a, da = self.emit(expr.arg)
            v = self.tmp()
            if expr.op == "neg":
                self.lines.append(f"{v} = -({a})")
                return v, [f"-({d})" if d != "0.0" else "0.0" for d in da]
            rules = {
                "exp": (f"_exp({a})", None),
                "log": (f"_log({a})", f"1.0/({a})"),
                "sqrt": (f"_sqrt({a})", None),
                "sin": (f"_sin({a})", f"_cos({a})"),
                "cos": (f"_cos({a})", f"-_sin({a})"),
                "tan": (f"_tan({a})", None),
            }
            val_src, der_src = rules[expr.op]
            self.lines.append(f"{v} = {val_src}")
            if not self.want:
                return v, zero
            d = self.tmp()
            if expr.op == "exp":
                self.lines.append(f"{d} = {v}")
            elif expr.op == "sqrt":
                self.lines.append(f"{d} = 0.5/{v}")
            elif expr.op == "tan":
                self.lines.append(f"{d} = 1.0 + {v}*{v}")
            else:
                self.lines.append(f"{d} = {der_src}")
            return v, [f"({d}*({g}))" if g != "0.0" else "0.0" for g in da]
        assert isinstance(expr, Binary)
        a, da = self.emit(expr.left)
        if expr.op == "pow" and isinstance(expr.right, Const) and \
                float(expr.right.value) == int(expr.right.value):
            k = int(expr.right.value)
            v = self.tmp()
            self.lines.append(f"{v} = ({a})**{k}")
            if not self.want or k == 0:
                return v, zero
            d = self.tmp()
            self.lines.append(f"{d} = {k}.0*({a})**{k - 1}")
            return v, [f"({d}*({g}))" if g != "0.0" else "0.0" for g in da]
        b, db = self.emit(expr.right)
        v = self.tmp()
        if expr.op == "add":
            self.lines.append(f"{v} = ({a}) + ({b})")
            return v, [self._sum2(g, h) for g, h in zip(da, db)]
        if expr.op == "sub":
            self.lines.append(f"{v} = ({a}) - ({b})")
            return v, [self._sum2(g, f"-({h})" if h != "0.0" else "0.0") for g, h in zip(da, db)]
        if expr.op == "mul":
            self.lines.append(f"{v} = ({a}) * ({b})")
            if not self.want:
                return v, zero
            out = []
            for g, h in zip(da, db):
                terms = []
                if g != "0.0":
                    terms.append(f"({b})*({g})")
                if h != "0.0":
                    terms.append(f"({a})*({h})")
                out.append(" + ".join(terms) if terms else "0.0")
            return v, out
        if expr.op == "div":
            self.lines.append(f"{v} = ({a}) / ({b})")
            if not self.want:
                return v, zero
            out = []
            for g, h in zip(da, db):
                terms = []
                if g != "0.0":
                    terms.append(f"({g})/({b})")
                if h != "0.0":
                    terms.append(f"-{v}*({h})/({b})")
                out.append(" + ".join(terms) if terms else "0.0")
            return v, out
        # general pow: value via _pow_rt, derivative via log rule
        self.lines.append(f"{v} = _pow_rt({a}, {b})")
        if not self.want:
            return v, zero
        out = []
        for g, h in zip(da, db):
            terms = []
            if g != "0.0":
                terms.append(f"({b})*{v}/({a})*({g})")
            if h != "0.0":
                terms.append(f"{v}*_log({a})*({h})")
            out.append(" + ".join(terms) if terms else "0.0")
        return v, out

    @staticmethod
    def _sum2(g: str, h: str) -> str:
        if g == "0.0":
            return h
        if h == "0.0":
            return g
        return f"({g}) + ({h})"


def _pow_rt(base: float, exponent: float) -> float:
    if float(exponent) == int(exponent):
        if base == 0.0 and exponent < 0:
            raise DomainError("zero raised to a negative power")
        return base ** int(exponent)
    if base <= 0.0:
        raise DomainError("non-integer power requires positive base")
    return math.pow(base, exponent)


def _log_rt(x: float) -> float:
    if x <= 0.0:
        raise DomainError("log requires a positive argument")
    return math.log(x)


def _sqrt_rt(x: float) -> float:
    if x < 0.0:
        raise DomainError("sqrt requires a nonnegative argument")
    return math.sqrt(x)


def _exp_rt(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        raise DomainError("exp overflow") from None


_COMPILE_GLOBALS = {
    "_exp": _exp_rt, "_log": _log_rt, "_sqrt": _sqrt_rt,
    "_sin": math.sin, "_cos": math.cos, "_tan": math.tan,
    "_pow_rt": _pow_rt, "np": np,
}


def _build(source: str, name: str):
    namespace = dict(_COMPILE_GLOBALS)
    exec(compile(source, f"<morseflow:{name}>", "exec"), namespace)
    return namespace[name]


def compile_scalar(expr: Expression, n_vars: int) -> Callable:
    em = _Emitter(n_vars, want_derivs=False)
    sym, _ = em.emit(expr)
    body = "\n    ".join(em.lines) or "pass"
    src = f"def _scalar(v):\n    {body}\n    return {sym}\n"
    return _build(src, "_scalar")


def compile_field(field: Sequence[Expression], n_vars: int) -> Callable:
    """Compile a field to f(v) -> ndarray of shape (len(field),)."""
    em = _Emitter(n_vars, want_derivs=False)
    syms = [em.emit(f)[0] for f in field]
    body = "\n    ".join(em.lines) or "pass"
    ret = ", ".join(str(s) for s in syms)
    src = f"def _field(v):\n    {body}\n    return np.array(({ret},))\n"
    return _build(src, "_field")


def compile_field_jacobian(field: Sequence[Expression], n_vars: int) -> Callable:
    """Compile to f(v) -> (value ndarray, jacobian ndarray)."""
    em = _Emitter(n_vars, want_derivs=True)
    rows = []
    vals = []
    for f in field:
        sym, dsyms = em.emit(f)
        vals.append(str(sym))
        rows.append("(" + ", ".join(dsyms) + ",)")
    body = "\n    ".join(em.lines) or "pass"
    src = (
        "def _fieldjac(v):\n"
        f"    {body}\n"
        f"    val = np.array(({', '.join(vals)},))\n"
        f"    jac = np.array(({', '.join(rows)},))\n"
        "    return val, jac\n"
    )
    return _build(src, "_fieldjac")
