"""Turning prior knowledge into a TAG.

A knowledge file lists the initial process as named S-expression equations,
marks extensible subexpressions with extension points, and gives per-point
variables, connector operators and extender operators, plus parameter priors
and the variable catalog.

Every extension point ``X`` gets three nonterminals: ``X_c`` (connector
site, wrapping the original subexpression), ``X_e`` (extender site, only
ever created by adjoining) and ``X_l`` (lexeme slot). Keeping connector and
extender symbols apart is what stops extender operators from touching the
initial process.
"""

from __future__ import annotations

import json
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as E
from . import tag as T
from .process import ParameterPrior, R_PRIOR

START = "S"
EQ = "Eq"
EXPR = "E"
RANDOM = "R"
EQUALS = "="


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExtensionPoint:
    id: str
    variables: tuple[str, ...]
    connectors: tuple[str, ...]
    extenders: tuple[str, ...]

    @property
    def c(self) -> str:
        return f"{self.id}_c"

    @property
    def e(self) -> str:
        return f"{self.id}_e"

    @property
    def l(self) -> str:  # noqa: E743
        return f"{self.id}_l"


@dataclass
class Equation:
    lhs: str
    rhs_sexpr: str
    extensions: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)

    @property
    def rhs(self) -> E.Expr:
        return E.parse_sexpr(self.rhs_sexpr)


@dataclass
class KnowledgeSpec:
    equations: list[Equation]
    extension_table: dict[str, ExtensionPoint]
    priors: list[ParameterPrior]
    variables: list[dict]
    states: list[dict] = field(default_factory=list)

    @property
    def prior_map(self) -> dict[str, ParameterPrior]:
        return {p.id: p for p in self.priors}

    @property
    def variable_ids(self) -> list[str]:
        return [v["id"] for v in self.variables]

    @property
    def state_pairs(self) -> tuple[tuple[str, str], ...]:
        return tuple((s["id"], s["derivative"]) for s in self.states)

    def initial(self, state: str, default: float | None = None) -> float | None:
        for s in self.states:
            if s["id"] == state and "initial" in s:
                return float(s["initial"])
        return default

    def adjusted(self, means: Mapping[str, float] | None = None,
                 initial: Mapping[str, float] | None = None) -> KnowledgeSpec:
        """Copy with some prior means and initial states replaced."""
        means = dict(means or {})
        priors = [dataclasses.replace(p, mean=float(means[p.id])) if p.id in means else p
                  for p in self.priors]
        states = []
        for st in self.states:
            st = dict(st)
            if initial and st["id"] in initial:
                st["initial"] = float(initial[st["id"]])
            states.append(st)
        return KnowledgeSpec(list(self.equations), dict(self.extension_table), priors,
                             list(self.variables), states)

    @classmethod
    def from_json(cls, obj: dict) -> KnowledgeSpec:
        eqs = [Equation(q["lhs"], q["rhs_sexpr"],
                        [(x["id"], tuple(x.get("at_path", []))) for x in q.get("extensions", [])])
               for q in obj["equations"]]
        table = {}
        for x in obj.get("extension_table", []):
            table[x["id"]] = ExtensionPoint(x["id"], tuple(x["variables"]),
                                            tuple(x.get("connectors", [])),
                                            tuple(x.get("extenders", [])))
        priors = [ParameterPrior(p["id"], float(p["mean"]), float(p["min"]), float(p["max"]),
                                 p.get("unit", ""), p.get("description", ""))
                  for p in obj.get("priors", [])]
        spec = cls(eqs, table, priors, list(obj.get("variables", [])), list(obj.get("states", [])))
        spec.validate()
        return spec

    def to_json(self) -> dict:
        return {
            "equations": [{"lhs": q.lhs, "rhs_sexpr": q.rhs_sexpr,
                           "extensions": [{"id": i, "at_path": list(p)} for i, p in q.extensions]}
                          for q in self.equations],
            "extension_table": [{"id": x.id, "variables": list(x.variables),
                                 "connectors": list(x.connectors), "extenders": list(x.extenders)}
                                for x in self.extension_table.values()],
            "priors": [{"id": p.id, "mean": p.mean, "min": p.min, "max": p.max, "unit": p.unit,
                        "description": p.description} for p in self.priors],
            "variables": self.variables,
            "states": self.states,
        }

    def validate(self) -> None:
        lhs = [q.lhs for q in self.equations]
        if len(set(lhs)) != len(lhs):
            raise SpecError("duplicate equation left-hand sides")
        clash = set(lhs) & set(self.variable_ids)
        if clash:
            raise SpecError(f"names used both as variable and equation: {sorted(clash)}")
        known = set(lhs) | set(self.variable_ids) | {s["id"] for s in self.states}
        known |= {p.id for p in self.priors}
        for q in self.equations:
            try:
                rhs = q.rhs
            except E.ExprError as exc:
                raise SpecError(f"{q.lhs}: {exc}") from None
            for n in E.iter_nodes(rhs):
                if n.kind in ("var", "param") and n.name not in known:
                    raise SpecError(f"{q.lhs}: unresolved symbol {n.name!r}")
            for ext_id, path in q.extensions:
                if ext_id not in self.extension_table:
                    raise SpecError(f"{q.lhs}: extension {ext_id} missing from the extension table")
                _subexpr(rhs, path, q.lhs)
        for x in self.extension_table.values():
            for v in x.variables:
                if v != RANDOM and v not in self.variable_ids:
                    raise SpecError(f"{x.id}: unknown variable {v!r}")
            for op in x.connectors + x.extenders:
                if op not in E.BINARY_OPS and op not in E.UNARY_OPS or op == "pow":
                    raise SpecError(f"{x.id}: unsupported operator {op!r}")
            for op in x.connectors:
                if op in E.UNARY_OPS:
                    raise SpecError(f"{x.id}: connector {op!r} must be binary")
        for s in self.states:
            if s["derivative"] not in lhs:
                raise SpecError(f"state {s['id']}: no equation for {s['derivative']}")


def _subexpr(e: E.Expr, path: Sequence[int], where: str) -> E.Expr:
    for i in path:
        if not 0 <= i < len(e.args) or e.op == "pow" and i == 1:
            raise SpecError(f"{where}: extension path {list(path)} does not exist")
        e = e.args[i]
    return e


def load_knowledge(path: str | Path) -> KnowledgeSpec:
    with open(path, encoding="utf-8") as fh:
        return KnowledgeSpec.from_json(json.load(fh))


def river_knowledge() -> KnowledgeSpec:
    """The packaged river water-quality knowledge file."""
    text = resources.files("tagrevise").joinpath("data/river_knowledge.json").read_text("utf-8")
    return KnowledgeSpec.from_json(json.loads(text))


# --------------------------------------------------------------------------
# grammar construction


def _atom_label(e: E.Expr) -> str:
    return E.to_sexpr(e)


def _expr_to_node(e: E.Expr, wraps: Mapping[tuple[int, ...], str], path=()) -> T.Node:
    if e.kind in ("lit", "var", "param"):
        node = T.Node(_atom_label(e))
    elif e.kind == "unary":
        node = T.Node(EXPR, [T.Node(e.op), _expr_to_node(e.args[0], wraps, path + (0,))])
    elif e.op == "pow":
        node = T.Node(EXPR, [_expr_to_node(e.args[0], wraps, path + (0,)), T.Node("pow"),
                             T.Node(str(int(e.args[1].value)))])
    else:
        node = T.Node(EXPR, [_expr_to_node(e.args[0], wraps, path + (0,)), T.Node(e.op),
                             _expr_to_node(e.args[1], wraps, path + (1,))])
    ext = wraps.get(path)
    if ext is not None:
        node = T.Node(ext, [node])
    return node


def build_alpha(spec: KnowledgeSpec) -> T.ElementaryTree:
    """One initial tree holding every equation under a common root."""
    eqs = []
    for q in spec.equations:
        wraps = {tuple(p): spec.extension_table[x].c for x, p in q.extensions}
        eqs.append(T.Node(EQ, [T.Node(q.lhs), T.Node(EQUALS), _expr_to_node(q.rhs, wraps)]))
    return T.ElementaryTree("alpha", T.ALPHA, T.Node(START, eqs))


def _lexeme_slot(x: ExtensionPoint) -> T.Node:
    return T.Node(x.e, [T.Node(x.l)])


def build_betas(spec: KnowledgeSpec) -> list[T.ElementaryTree]:
    """Connector and extender auxiliary trees plus lexeme initial trees for
    every extension point in the table."""
    out: list[T.ElementaryTree] = []
    for x in spec.extension_table.values():
        for op in x.connectors:
            root = T.Node(x.c, [T.Node(x.c), T.Node(op), _lexeme_slot(x)])
            out.append(T.ElementaryTree(f"{x.id}:c:{op}", T.BETA, root, (0,), [(2, 0)]))
            if op not in E.COMMUTATIVE:
                root = T.Node(x.c, [_lexeme_slot(x), T.Node(op), T.Node(x.c)])
                out.append(T.ElementaryTree(f"{x.id}:c:{op}:r", T.BETA, root, (2,), [(0, 0)]))
        for op in x.extenders:
            if op in E.UNARY_OPS:
                root = T.Node(x.e, [T.Node(op), T.Node(x.e)])
                out.append(T.ElementaryTree(f"{x.id}:e:{op}", T.BETA, root, (1,)))
                continue
            root = T.Node(x.e, [T.Node(x.e), T.Node(op), _lexeme_slot(x)])
            out.append(T.ElementaryTree(f"{x.id}:e:{op}", T.BETA, root, (0,), [(2, 0)]))
            if op not in E.COMMUTATIVE:
                root = T.Node(x.e, [_lexeme_slot(x), T.Node(op), T.Node(x.e)])
                out.append(T.ElementaryTree(f"{x.id}:e:{op}:r", T.BETA, root, (2,), [(0, 0)]))
        for v in x.variables:
            out.append(T.ElementaryTree(f"{x.id}:l:{v}", T.ALPHA, T.Node(x.l, [T.Node(v)])))
    return out


def expected_tree_counts(x: ExtensionPoint) -> dict[str, int]:
    """Number of elementary trees one extension point should contribute."""
    def n_binary(ops):
        return sum(1 if op in E.COMMUTATIVE else 2 for op in ops if op not in E.UNARY_OPS)
    return {"connector": n_binary(x.connectors),
            "extender": n_binary(x.extenders) + sum(op in E.UNARY_OPS for op in x.extenders),
            "lexeme": len(x.variables)}


def build_grammar(spec: KnowledgeSpec) -> T.Grammar:
    alpha = build_alpha(spec)
    trees = [alpha] + build_betas(spec)
    nonterminals = {START, EQ, EXPR}
    for x in spec.extension_table.values():
        nonterminals |= {x.c, x.e, x.l}
    labels = set()
    for t in trees:
        labels |= {n.label for _, n in t.root.walk()}
    symbols = [T.Symbol(n, T.NONTERMINAL) for n in sorted(nonterminals)]
    symbols += [T.Symbol(n, T.TERMINAL) for n in sorted(labels - nonterminals)]
    return T.Grammar(symbols, trees, START, {RANDOM: (R_PRIOR.min, R_PRIOR.max)})


# --------------------------------------------------------------------------
# derived trees back to equations


def node_to_expr(node: T.Node, is_param=E.default_is_param) -> E.Expr:
    ch = node.children
    if not ch:
        if node.label == RANDOM:
            if node.payload is None:
                raise SpecError("random constant without a parameter name")
            return E.param(node.payload)
        try:
            return E.lit(float(node.label))
        except ValueError:
            pass
        return E.param(node.label) if is_param(node.label) else E.var(node.label)
    if len(ch) == 1:
        return node_to_expr(ch[0], is_param)
    if len(ch) == 2:
        return E.unary(ch[0].label, node_to_expr(ch[1], is_param))
    op = ch[1].label
    if op == "pow":
        return E.binary("pow", node_to_expr(ch[0], is_param), E.lit(float(ch[2].label)))
    return E.binary(op, node_to_expr(ch[0], is_param), node_to_expr(ch[2], is_param))


def topo_order(defs: Sequence[tuple[str, E.Expr]]) -> list[tuple[str, E.Expr]]:
    """Order definitions so each comes after the definitions it uses."""
    table = dict(defs)
    done: list[tuple[str, E.Expr]] = []
    state: dict[str, int] = {}

    def visit(name: str):
        st = state.get(name)
        if st == 2:
            return
        if st == 1:
            raise SpecError(f"cyclic definition involving {name!r}")
        state[name] = 1
        for dep in sorted(E.names(table[name], "var") & table.keys()):
            visit(dep)
        state[name] = 2
        done.append((name, table[name]))

    for name, _ in defs:
        visit(name)
    return done


def derived_to_defs(root: T.Node) -> list[tuple[str, E.Expr]]:
    """Named equations of a derived tree, dependency ordered."""
    if root.label != START:
        raise SpecError(f"derived tree root is {root.label!r}, expected {START!r}")
    defs = []
    for eq in root.children:
        lhs, _, rhs = eq.children
        defs.append((lhs.label, node_to_expr(rhs)))
    return topo_order(defs)


def model_defs(d: T.DerivationTree, grammar: T.Grammar) -> list[tuple[str, E.Expr]]:
    return derived_to_defs(T.derive(d, grammar))


def model_sexprs(d: T.DerivationTree, grammar: T.Grammar) -> dict[str, str]:
    return {n: E.to_sexpr(e) for n, e in model_defs(d, grammar)}


class ModelBuilder:
    """Memoised derivation-to-equations conversion.

    An adjunction under the initial tree only ever changes the equation it
    sits in, so each equation is derived and simplified once per distinct
    set of derivation subtrees attached to it.
    """

    def __init__(self, grammar: T.Grammar, max_entries: int = 200_000):
        self.grammar = grammar
        self.alpha = grammar.starts[0]
        if self.alpha.root.label != START:
            raise SpecError("initial tree is not an equation system")
        self.names = [eq.children[0].label for eq in self.alpha.root.children]
        base = derived_to_defs(self.alpha.root)
        self.order = [self.names.index(n) for n, _ in base]
        self.max_entries = max_entries
        self._memo: dict[tuple[int, str], tuple[E.Expr, E.Expr, str]] = {}

    def _equation(self, i: int, children: list[T.DNode]) -> tuple[E.Expr, E.Expr, str]:
        key = (i, "".join(c.signature() for c in sorted(children, key=lambda c: c.address)))
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        src = self.alpha.root.children[i]
        nodemap: dict[T.Address, T.Node] = {}

        def rec(node: T.Node, addr: T.Address) -> T.Node:
            out = T.Node(node.label, [rec(c, addr + (j,)) for j, c in enumerate(node.children)])
            nodemap[addr] = out
            return out

        eq = rec(src, (i,))
        for child in children:
            sub, foot = T._derive(child, self.grammar, (child.address,))
            T._adjoin_inplace(nodemap[child.address], sub, foot)
        raw = node_to_expr(eq.children[2])
        simp = E.simplify(raw)
        if len(self._memo) >= self.max_entries:
            self._memo.clear()
        out = self._memo[key] = (raw, simp, E.to_sexpr(simp))
        return out

    def _parts(self, d: T.DerivationTree) -> list[tuple[E.Expr, E.Expr, str]]:
        if d.root.tree != self.alpha.id:
            raise SpecError(f"derivation root {d.root.tree!r} is not the initial tree")
        groups: dict[int, list[T.DNode]] = {}
        for c in d.root.children:
            groups.setdefault(c.address[0], []).append(c)
        return [self._equation(i, groups.get(i, [])) for i in self.order]

    def defs(self, d: T.DerivationTree) -> list[tuple[str, E.Expr]]:
        return [(self.names[i], p[0]) for i, p in zip(self.order, self._parts(d))]

    def simplified(self, d: T.DerivationTree) -> tuple[list[tuple[str, E.Expr]], str]:
        """Simplified definitions and their joined S-expression text."""
        parts = self._parts(d)
        defs = [(self.names[i], p[1]) for i, p in zip(self.order, parts)]
        text = ";".join(f"{self.names[i]}={p[2]}" for i, p in zip(self.order, parts))
        return defs, text


def initial_derivation(grammar: T.Grammar) -> T.DerivationTree:
    """The size-one derivation: the initial process itself."""
    return T.DerivationTree(T.DNode(grammar.starts[0].id))


# --------------------------------------------------------------------------
# parameters


def init_parameters(priors: Iterable[ParameterPrior], rng: np.random.Generator | None = None,
                    random_names: Iterable[str] = ()) -> dict[str, float]:
    """Constants at their prior means; random constants uniform in [0, 1]."""
    out = {p.id: float(p.mean) for p in priors}
    names = list(random_names)
    if names:
        if rng is None:
            raise ValueError("random constants need a random generator")
        for n in names:
            out[n] = float(rng.uniform(R_PRIOR.min, R_PRIOR.max))
    return out


def prior_for(name: str, priors: Mapping[str, ParameterPrior]) -> ParameterPrior:
    if name.startswith("R:"):
        return R_PRIOR
    return priors[name]
