"""Expression trees with protected arithmetic.

An :class:`Expr` is an immutable node: a literal, a variable reference, a
reference to a named constant parameter, or a unary/binary operator
application. Expressions serialise to S-expressions such as
``(- (* B_Phy (- mu_Phy gamma_Phy)) (* B_Zoo phi))``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

DIV_EPS = 1e-9
EXP_CLAMP = 50.0

UNARY_OPS = ("neg", "log", "exp")
BINARY_OPS = ("+", "-", "*", "/", "min", "max", "pow")
COMMUTATIVE = frozenset({"+", "*", "min", "max"})
VARIADIC = frozenset({"+", "*", "min", "max"})


class EnvError(KeyError):
    """An expression referenced an identifier the environment does not bind."""


class ExprError(ValueError):
    pass


def pdiv(a: float, b: float) -> float:
    return 1.0 if abs(b) < DIV_EPS else a / b


def plog(x: float) -> float:
    if x == 0.0:
        return 0.0
    return math.log(abs(x))


def pexp(x: float) -> float:
    if x > EXP_CLAMP:
        x = EXP_CLAMP
    elif x < -EXP_CLAMP:
        x = -EXP_CLAMP
    return math.exp(x)


def ppow(x: float, n: int) -> float:
    # repeated multiplication keeps results bit-identical with the compiled path
    r = 1.0
    for _ in range(n):
        r *= x
    return r


def pmin(a: float, b: float) -> float:
    return a if a <= b else b


def pmax(a: float, b: float) -> float:
    return a if a >= b else b


BINARY_FUNCS: dict[str, Callable[[float, float], float]] = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": pdiv,
    "min": pmin,
    "max": pmax,
}
UNARY_FUNCS: dict[str, Callable[[float], float]] = {
    "neg": lambda x: -x,
    "log": plog,
    "exp": pexp,
}


@dataclass(frozen=True)
class Expr:
    kind: str  # "lit" | "var" | "param" | "unary" | "binary"
    op: str = ""
    name: str = ""
    value: float = 0.0
    args: tuple = field(default=())

    def __str__(self) -> str:
        return to_sexpr(self)


def lit(value: float) -> Expr:
    return Expr("lit", value=float(value))


def var(name: str) -> Expr:
    return Expr("var", name=name)


def param(name: str) -> Expr:
    return Expr("param", name=name)


def unary(op: str, x: Expr) -> Expr:
    if op not in UNARY_OPS:
        raise ExprError(f"unknown unary operator {op!r}")
    return Expr("unary", op=op, args=(x,))


def binary(op: str, a: Expr, b: Expr) -> Expr:
    if op not in BINARY_OPS:
        raise ExprError(f"unknown binary operator {op!r}")
    if op == "pow":
        if b.kind != "lit" or b.value != int(b.value) or b.value < 0:
            raise ExprError("pow needs a non-negative integer literal exponent")
    return Expr("binary", op=op, args=(a, b))


@dataclass
class Environment:
    variables: dict[str, float] = field(default_factory=dict)
    parameters: dict[str, float] = field(default_factory=dict)


def _lookup(table: Mapping[str, float], name: str, what: str) -> float:
    try:
        return table[name]
    except KeyError:
        raise EnvError(f"unbound {what} {name!r}") from None


def eval_tree(e: Expr, env: Environment) -> float:
    """Recursive tree-walk evaluation under the protected operator rules."""
    k = e.kind
    if k == "lit":
        return e.value
    if k == "var":
        return _lookup(env.variables, e.name, "variable")
    if k == "param":
        return _lookup(env.parameters, e.name, "parameter")
    if k == "unary":
        return UNARY_FUNCS[e.op](eval_tree(e.args[0], env))
    a = eval_tree(e.args[0], env)
    if e.op == "pow":
        return ppow(a, int(e.args[1].value))
    return BINARY_FUNCS[e.op](a, eval_tree(e.args[1], env))


def eval_system(defs: Iterable[tuple[str, Expr]], env: Environment) -> dict[str, float]:
    """Evaluate named definitions in order; later ones may refer to earlier
    ones by name as variables."""
    variables = dict(env.variables)
    scope = Environment(variables, env.parameters)
    out = {}
    for name, e in defs:
        v = eval_tree(e, scope)
        variables[name] = v
        out[name] = v
    return out


# --------------------------------------------------------------------------
# traversal helpers


def iter_nodes(e: Expr):
    stack = [e]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.args))


def size(e: Expr) -> int:
    return sum(1 for _ in iter_nodes(e))


def depth(e: Expr) -> int:
    if not e.args:
        return 1
    return 1 + max(depth(a) for a in e.args)


def names(e: Expr, kind: str) -> set[str]:
    return {n.name for n in iter_nodes(e) if n.kind == kind}


def substitute_names(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variable/parameter references by expressions."""
    if e.kind in ("var", "param"):
        return mapping.get(e.name, e)
    if not e.args:
        return e
    return Expr(e.kind, e.op, e.name, e.value, tuple(substitute_names(a, mapping) for a in e.args))


# --------------------------------------------------------------------------
# S-expressions


def _fmt_lit(v: float) -> str:
    return repr(float(v))


def to_sexpr(e: Expr) -> str:
    k = e.kind
    if k == "lit":
        return _fmt_lit(e.value)
    if k in ("var", "param"):
        return e.name
    if k == "binary" and e.op == "pow":
        return f"(pow {to_sexpr(e.args[0])} {int(e.args[1].value)})"
    return "(" + e.op + " " + " ".join(to_sexpr(a) for a in e.args) + ")"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def default_is_param(name: str) -> bool:
    return name.startswith("C_") or name.startswith("R:") or name.startswith("R_")


def parse_sexpr(text: str, is_param: Callable[[str], bool] = default_is_param) -> Expr:
    """Parse an S-expression. ``+ * min max`` accept more than two operands
    and fold to the left."""
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ExprError("empty expression")
    pos = 0

    def atom(tok: str) -> Expr:
        try:
            return lit(float(tok))
        except ValueError:
            pass
        return param(tok) if is_param(tok) else var(tok)

    def rec() -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise ExprError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ExprError("unexpected ')'")
        if tok != "(":
            return atom(tok)
        if pos >= len(tokens):
            raise ExprError("unexpected end of expression")
        op = tokens[pos]
        pos += 1
        args = []
        while pos < len(tokens) and tokens[pos] != ")":
            args.append(rec())
        if pos >= len(tokens):
            raise ExprError("missing ')'")
        pos += 1
        if op in UNARY_OPS:
            if len(args) != 1:
                raise ExprError(f"{op} takes one operand")
            return unary(op, args[0])
        if op == "-" and len(args) == 1:
            return unary("neg", args[0])
        if op in VARIADIC and len(args) >= 2:
            out = args[0]
            for a in args[1:]:
                out = binary(op, out, a)
            return out
        if op in BINARY_OPS and len(args) == 2:
            return binary(op, args[0], args[1])
        raise ExprError(f"bad operator/arity: ({op} ...{len(args)} operands)")

    e = rec()
    if pos != len(tokens):
        raise ExprError("trailing tokens after expression")
    return e


# --------------------------------------------------------------------------
# simplification and cache keys

_RPARAM = re.compile(r"R:[^\s()]*")


def _order_key(s: str) -> str:
    # random-constant names depend on where they sit in the derivation, so
    # they are masked when choosing a canonical operand order
    return _RPARAM.sub("R", s)


def _is_lit(e: Expr, v: float | None = None) -> bool:
    return e.kind == "lit" and (v is None or e.value == v)


def simplify(e: Expr) -> Expr:
    """Constant folding, identity rules and canonical operand order.

    Rules: ``x*1 -> x``, ``x+0 -> x``, ``x-0 -> x``, ``x/1 -> x``,
    ``x*0 -> 0``, ``x-x -> 0``, ``x/x -> 1`` (protected division yields 1
    for a vanishing denominator too). Operands of commutative operators are
    sorted by their serialised form. Results agree with the original under
    the protected semantics whenever the original evaluates to a finite value.
    """
    return _simplify(e)[0]


def _simplify(e: Expr) -> tuple[Expr, str]:
    k = e.kind
    if k in ("lit", "var", "param"):
        return e, to_sexpr(e)
    if k == "unary":
        x, sx = _simplify(e.args[0])
        if x.kind == "lit":
            out = lit(UNARY_FUNCS[e.op](x.value))
            return out, to_sexpr(out)
        if e.op == "neg" and x.kind == "unary" and x.op == "neg":
            inner = x.args[0]
            return inner, to_sexpr(inner)
        return unary(e.op, x), f"({e.op} {sx})"
    op = e.op
    a, sa = _simplify(e.args[0])
    if op == "pow":
        n = int(e.args[1].value)
        if a.kind == "lit":
            out = lit(ppow(a.value, n))
            return out, to_sexpr(out)
        if n == 1:
            return a, sa
        if n == 0:
            return lit(1.0), _fmt_lit(1.0)
        return binary("pow", a, e.args[1]), f"(pow {sa} {n})"
    b, sb = _simplify(e.args[1])
    if a.kind == "lit" and b.kind == "lit":
        out = lit(BINARY_FUNCS[op](a.value, b.value))
        return out, to_sexpr(out)
    if op in COMMUTATIVE and _order_key(sb) < _order_key(sa):
        a, b, sa, sb = b, a, sb, sa
    if op == "+":
        if _is_lit(a, 0.0):
            return b, sb
        if _is_lit(b, 0.0):
            return a, sa
    elif op == "-":
        if _is_lit(b, 0.0):
            return a, sa
        if sa == sb:
            return lit(0.0), _fmt_lit(0.0)
    elif op == "*":
        if _is_lit(a, 0.0) or _is_lit(b, 0.0):
            return lit(0.0), _fmt_lit(0.0)
        if _is_lit(a, 1.0):
            return b, sb
        if _is_lit(b, 1.0):
            return a, sa
    elif op == "/":
        if _is_lit(b, 1.0):
            return a, sa
        if sa == sb or (b.kind == "lit" and abs(b.value) < DIV_EPS):
            return lit(1.0), _fmt_lit(1.0)
    elif op in ("min", "max") and sa == sb:
        return a, sa
    return Expr("binary", op=op, args=(a, b)), f"({op} {sa} {sb})"


def quantize(v: float) -> str:
    """Parameter value rounded to 12 significant digits."""
    return format(float(v), ".12g")


def structure_key(defs: Iterable[tuple[str, Expr]]) -> tuple[str, list[str]]:
    """Canonical text of already simplified definitions with random constants
    renamed in order of first appearance.

    Returns the key text and the original parameter names of the random
    constants in canonical order.
    """
    return rename_random(";".join(f"{name}={to_sexpr(e)}" for name, e in defs))


def rename_random(text: str) -> tuple[str, list[str]]:
    """Rename random-constant names in ``text`` to ``R#0, R#1, ...``."""
    order: list[str] = []
    index: dict[str, int] = {}

    def rename(m: re.Match) -> str:
        nm = m.group(0)
        if nm not in index:
            index[nm] = len(order)
            order.append(nm)
        return f"R#{index[nm]}"

    return _RPARAM.sub(rename, text), order


def canonical_key(e: Expr | Iterable[tuple[str, Expr]], params: Mapping[str, float],
                  split_id: str) -> tuple:
    """Cache key: simplified structure + quantised parameters + data split.

    ``e`` is a single expression or a sequence of named definitions.
    """
    defs = [("", e)] if isinstance(e, Expr) else list(e)
    simp = [(name, simplify(x)) for name, x in defs]
    text, r_order = structure_key(simp)
    consts = sorted(set().union(*(names(x, "param") for _, x in simp)) - set(r_order))
    values = tuple(quantize(params[c]) for c in consts) + tuple(quantize(params[r]) for r in r_order)
    return text, tuple(consts), values, split_id


class EvalCache:
    """Maps canonical keys to fitness records, counting hits and misses."""

    def __init__(self, max_entries: int | None = None):
        self._data: dict = {}
        self.max_entries = max_entries
        self.hits = 0
        self.misses = 0

    def get(self, key):
        rec = self._data.get(key)
        if rec is None:
            self.misses += 1
        else:
            self.hits += 1
        return rec

    def put(self, key, record) -> None:
        if self.max_entries is not None and len(self._data) >= self.max_entries:
            # drop the oldest entry (dicts keep insertion order)
            self._data.pop(next(iter(self._data)))
        self._data[key] = record

    def __len__(self) -> int:
        return len(self._data)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
