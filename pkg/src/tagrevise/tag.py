"""Tree-adjoining grammar primitives.

Elementary trees, adjoining and substitution, and derivation trees with
restricted (in-node) substitution. Node addresses are Gorn paths: tuples of
child indices from the root, ``()`` being the root itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

Address = tuple[int, ...]

TERMINAL = "terminal"
NONTERMINAL = "nonterminal"
ALPHA = "alpha"
BETA = "beta"


class TAGError(Exception):
    pass


class CompatibilityError(TAGError):
    """Label mismatch or wrong node kind for adjoining/substitution."""


class AddressError(TAGError):
    pass


class IncompleteDerivation(TAGError):
    """A substitution slot was left without a lexeme."""


class GenerationError(TAGError):
    pass


class GrammarError(TAGError):
    pass


@dataclass(frozen=True)
class Symbol:
    name: str
    kind: str  # TERMINAL or NONTERMINAL


class Node:
    """A labelled ordered tree node.

    ``payload`` carries lexeme data on derived trees (the parameter name of a
    random constant, for instance); elementary trees leave it ``None``.
    """

    __slots__ = ("label", "children", "payload")

    def __init__(self, label: str, children: list[Node] | None = None, payload=None):
        self.label = label
        self.children = children if children is not None else []
        self.payload = payload

    def copy(self) -> Node:
        return Node(self.label, [c.copy() for c in self.children], self.payload)

    def is_leaf(self) -> bool:
        return not self.children

    def size(self) -> int:
        n = 1
        stack = list(self.children)
        while stack:
            node = stack.pop()
            n += 1
            stack.extend(node.children)
        return n

    def get(self, address: Address) -> Node:
        node = self
        for i in address:
            if not 0 <= i < len(node.children):
                raise AddressError(f"address {address} does not exist")
            node = node.children[i]
        return node

    def walk(self, address: Address = ()) -> Iterator[tuple[Address, Node]]:
        """Pre-order traversal yielding ``(address, node)`` pairs."""
        yield address, self
        for i, child in enumerate(self.children):
            yield from child.walk(address + (i,))

    def to_bracket(self) -> str:
        label = self.label if self.payload is None else f"{self.label}{{{self.payload}}}"
        if not self.children:
            return label
        return "(" + label + " " + " ".join(c.to_bracket() for c in self.children) + ")"

    def to_json(self) -> dict:
        out = {"root": self.label, "children": [c.to_json() for c in self.children]}
        if self.payload is not None:
            out["payload"] = self.payload
        return out

    @classmethod
    def from_json(cls, obj: dict) -> Node:
        return cls(obj["root"], [cls.from_json(c) for c in obj.get("children", [])],
                   obj.get("payload"))

    def __repr__(self) -> str:
        return f"Node({self.to_bracket()})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Node) and self.to_bracket() == other.to_bracket()

    __hash__ = None


def tree(label: str, *children) -> Node:
    """Shorthand constructor: strings become leaves."""
    return Node(label, [c if isinstance(c, Node) else Node(c) for c in children])


class ElementaryTree:
    """An alpha (initial) or beta (auxiliary) tree; immutable once built."""

    def __init__(self, id: str, kind: str, root: Node, foot: Address | None = None,
                 slots: list[Address] | None = None):
        if kind not in (ALPHA, BETA):
            raise GrammarError(f"tree {id}: unknown kind {kind!r}")
        if kind == ALPHA and foot is not None:
            raise GrammarError(f"alpha tree {id} cannot have a foot node")
        if kind == BETA:
            if foot is None:
                raise GrammarError(f"beta tree {id} needs a foot node")
            foot_node = root.get(tuple(foot))
            if foot_node.children:
                raise GrammarError(f"beta tree {id}: foot node is not on the frontier")
            if foot_node.label != root.label:
                raise GrammarError(f"beta tree {id}: foot label {foot_node.label!r} "
                                   f"differs from root label {root.label!r}")
        self.id = id
        self.kind = kind
        self.root = root
        self.foot: Address | None = tuple(foot) if foot is not None else None
        self.slots: tuple[Address, ...] = tuple(tuple(s) for s in (slots or ()))
        for s in self.slots:
            if root.get(s).children:
                raise GrammarError(f"tree {id}: slot {s} is not a frontier node")
            if s == self.foot:
                raise GrammarError(f"tree {id}: slot {s} coincides with the foot")
        self.addresses: tuple[Address, ...] = tuple(a for a, _ in root.walk())
        self.interior: tuple[tuple[Address, str], ...] = tuple(
            (a, n.label) for a, n in root.walk() if n.children)
        self.n_nodes = len(self.addresses)

    @property
    def label(self) -> str:
        return self.root.label

    def slot_label(self, slot: Address) -> str:
        return self.root.get(slot).label

    def instantiate(self) -> tuple[Node, dict[Address, Node]]:
        """Copy the tree, returning the copy and an address -> node map."""
        nodemap: dict[Address, Node] = {}

        def rec(src: Node, addr: Address) -> Node:
            node = Node(src.label, [rec(c, addr + (i,)) for i, c in enumerate(src.children)])
            nodemap[addr] = node
            return node

        return rec(self.root, ()), nodemap

    def to_json(self) -> dict:
        out = {"id": self.id, "kind": self.kind, "root": self.root.label,
               "children": [c.to_json() for c in self.root.children],
               "slots": [list(s) for s in self.slots]}
        if self.foot is not None:
            out["foot"] = list(self.foot)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> ElementaryTree:
        root = Node(obj["root"], [Node.from_json(c) for c in obj.get("children", [])])
        return cls(obj["id"], obj["kind"], root, obj.get("foot"), obj.get("slots", []))

    def __repr__(self) -> str:
        return f"ElementaryTree({self.id!r}, {self.kind}, {self.root.to_bracket()})"


# --------------------------------------------------------------------------
# composition operations on concrete trees


def adjoin(host: Node | ElementaryTree, beta: ElementaryTree, at: Address) -> Node:
    """Adjoin ``beta`` into ``host`` at interior node ``at``.

    The subtree rooted at ``at`` is cut out, ``beta`` takes its place and the
    cut subtree's root is identified with the foot node of ``beta``.
    """
    if beta.kind != BETA:
        raise CompatibilityError(f"{beta.id} is not an auxiliary tree")
    host_root = host.root if isinstance(host, ElementaryTree) else host
    target = host_root.get(tuple(at))
    if not target.children:
        raise CompatibilityError(f"node at {tuple(at)} is not an interior node")
    if target.label != beta.label:
        raise CompatibilityError(
            f"cannot adjoin {beta.id} (root {beta.label!r}) at node labelled {target.label!r}")
    new_root = host_root.copy()
    b_root = beta.root.copy()
    _adjoin_inplace(new_root.get(tuple(at)), b_root, b_root.get(beta.foot))
    return new_root


def substitute(host: Node | ElementaryTree, lexeme: ElementaryTree, at: Address) -> Node:
    """Replace the frontier slot ``at`` of ``host`` with the initial tree ``lexeme``."""
    if lexeme.kind != ALPHA:
        raise CompatibilityError(f"{lexeme.id} is not an initial tree")
    host_root = host.root if isinstance(host, ElementaryTree) else host
    target = host_root.get(tuple(at))
    if target.children or target.payload is not None:
        raise CompatibilityError(f"node at {tuple(at)} is not an open substitution slot")
    if target.label != lexeme.label:
        raise CompatibilityError(
            f"cannot substitute {lexeme.id} (root {lexeme.label!r}) into slot {target.label!r}")
    new_root = host_root.copy()
    slot = new_root.get(tuple(at))
    slot.children = [c.copy() for c in lexeme.root.children]
    return new_root


def _adjoin_inplace(target: Node, beta_root: Node, foot: Node) -> None:
    # The target object becomes the beta root and the foot object takes over
    # the excised subtree, so node objects below ``target`` keep their identity.
    foot.children = target.children
    foot.payload = target.payload
    target.label = beta_root.label
    target.children = beta_root.children
    target.payload = beta_root.payload


# --------------------------------------------------------------------------
# grammar


class Grammar:
    """A TAG: symbols, elementary trees and a start symbol.

    ``random_terminals`` maps terminal labels whose lexemes carry a numeric
    value (a random constant) to the uniform range that value is drawn from.
    """

    def __init__(self, symbols: list[Symbol], trees: list[ElementaryTree], start: str,
                 random_terminals: dict[str, tuple[float, float]] | None = None):
        self.symbols: dict[str, Symbol] = {}
        for s in symbols:
            if s.name in self.symbols and self.symbols[s.name].kind != s.kind:
                raise GrammarError(f"symbol {s.name!r} is both terminal and nonterminal")
            self.symbols[s.name] = s
        self.trees: dict[str, ElementaryTree] = {}
        for t in trees:
            if t.id in self.trees:
                raise GrammarError(f"duplicate tree id {t.id!r}")
            self.trees[t.id] = t
        self.start = start
        self.random_terminals = dict(random_terminals or {"R": (0.0, 1.0)})
        if self.kind_of(start) != NONTERMINAL:
            raise GrammarError(f"start symbol {start!r} must be a nonterminal")
        for t in self.trees.values():
            self._validate_tree(t)

        self.starts = [t for t in self.trees.values() if t.kind == ALPHA and t.label == start]
        self.betas_by_label: dict[str, list[ElementaryTree]] = {}
        self.lexemes_by_label: dict[str, list[ElementaryTree]] = {}
        for t in self.trees.values():
            if t.kind == BETA:
                self.betas_by_label.setdefault(t.label, []).append(t)
            elif t.label != start:
                self.lexemes_by_label.setdefault(t.label, []).append(t)
        # adjoinable interior addresses per elementary tree
        self.adjoin_sites: dict[str, tuple[tuple[Address, str], ...]] = {
            t.id: tuple((a, lab) for a, lab in t.interior if lab in self.betas_by_label)
            for t in self.trees.values()}

    def kind_of(self, name: str) -> str:
        try:
            return self.symbols[name].kind
        except KeyError:
            raise GrammarError(f"unknown symbol {name!r}") from None

    def _validate_tree(self, t: ElementaryTree) -> None:
        for addr, node in t.root.walk():
            kind = self.kind_of(node.label)
            if node.children and kind != NONTERMINAL:
                raise GrammarError(f"tree {t.id}: interior node {addr} has terminal label")
        for s in t.slots:
            if self.kind_of(t.slot_label(s)) != NONTERMINAL:
                raise GrammarError(f"tree {t.id}: slot {s} is not a nonterminal")
        open_frontier = {a for a, n in t.root.walk()
                         if not n.children and self.kind_of(n.label) == NONTERMINAL}
        open_frontier.discard(t.foot)
        if open_frontier != set(t.slots):
            raise GrammarError(f"tree {t.id}: frontier nonterminals {sorted(open_frontier)} "
                               f"do not match declared slots {sorted(t.slots)}")

    def closure_problems(self) -> list[str]:
        """Slots without lexemes and labels no tree can realise."""
        problems = []
        for t in self.trees.values():
            for s in t.slots:
                if not self.lexemes_by_label.get(t.slot_label(s)):
                    problems.append(f"{t.id}: slot {s} ({t.slot_label(s)}) has no lexeme")
        if not self.starts:
            problems.append(f"no initial tree rooted at start symbol {self.start!r}")
        return problems

    def to_json(self) -> dict:
        return {"symbols": [{"name": s.name, "kind": s.kind} for s in self.symbols.values()],
                "trees": [t.to_json() for t in self.trees.values()],
                "start": self.start,
                "random_terminals": {k: list(v) for k, v in self.random_terminals.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> Grammar:
        rt = obj.get("random_terminals")
        return cls([Symbol(s["name"], s["kind"]) for s in obj["symbols"]],
                   [ElementaryTree.from_json(t) for t in obj["trees"]],
                   obj["start"],
                   {k: tuple(v) for k, v in rt.items()} if rt is not None else None)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# derivation trees


@dataclass(frozen=True)
class Lexeme:
    tree: str
    value: float | None = None


class DNode:
    """One derivation node: an elementary tree adjoined at ``address`` of its
    parent's elementary tree, with lexemes substituted in-node."""

    __slots__ = ("tree", "address", "lexemes", "children")

    def __init__(self, tree: str, address: Address = (), lexemes: dict | None = None,
                 children: list[DNode] | None = None):
        self.tree = tree
        self.address = tuple(address)
        self.lexemes: dict[Address, Lexeme] = lexemes if lexemes is not None else {}
        self.children: list[DNode] = children if children is not None else []

    def copy(self) -> DNode:
        return DNode(self.tree, self.address, dict(self.lexemes),
                     [c.copy() for c in self.children])

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def used_addresses(self) -> set[Address]:
        return {c.address for c in self.children}

    def signature(self) -> str:
        lex = ",".join(f"{_addr_str(s)}={self.lexemes[s].tree}" for s in sorted(self.lexemes))
        kids = "".join(c.signature() for c in sorted(self.children, key=lambda c: c.address))
        return f"[{self.tree}@{_addr_str(self.address)}<{lex}>{kids}]"

    def to_json(self) -> dict:
        return {"tree": self.tree, "address": list(self.address),
                "lexemes": [{"slot": list(s), "tree": self.lexemes[s].tree,
                             "value": self.lexemes[s].value}
                            for s in sorted(self.lexemes)],
                "children": [c.to_json() for c in self.children]}

    @classmethod
    def from_json(cls, obj: dict) -> DNode:
        lex = {tuple(x["slot"]): Lexeme(x["tree"], x.get("value")) for x in obj.get("lexemes", [])}
        return cls(obj["tree"], tuple(obj.get("address", ())), lex,
                   [cls.from_json(c) for c in obj.get("children", [])])


def _addr_str(a: Address) -> str:
    return ".".join(map(str, a))


def param_name(path: tuple[Address, ...], slot: Address) -> str:
    """Name of the random constant held by the lexeme at ``slot`` of the
    derivation node reached by following host addresses ``path``."""
    return "R:" + "/".join(_addr_str(a) for a in path) + ":" + _addr_str(slot)


class DerivationTree:
    """The genotype: a tree of derivation nodes rooted at an initial tree."""

    def __init__(self, root: DNode):
        self.root = root

    def copy(self) -> DerivationTree:
        return DerivationTree(self.root.copy())

    def size(self) -> int:
        return self.root.size()

    def walk(self) -> Iterator[tuple[tuple[Address, ...], DNode, DNode | None]]:
        """Pre-order ``(path, node, parent)`` triples; ``path`` lists host addresses."""
        stack: list[tuple[tuple[Address, ...], DNode, DNode | None]] = [((), self.root, None)]
        while stack:
            path, node, parent = stack.pop()
            yield path, node, parent
            for child in reversed(node.children):
                stack.append((path + (child.address,), child, node))

    def nodes(self) -> list[DNode]:
        return [n for _, n, _ in self.walk()]

    def random_values(self) -> dict[str, float]:
        """Values of all value-carrying lexemes, keyed by parameter name."""
        out = {}
        for path, node, _ in self.walk():
            for slot, lx in node.lexemes.items():
                if lx.value is not None:
                    out[param_name(path, slot)] = lx.value
        return out

    def signature(self) -> str:
        return self.root.signature()

    def to_json(self) -> dict:
        return self.root.to_json()

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict) -> DerivationTree:
        return cls(DNode.from_json(obj))

    @classmethod
    def loads(cls, text: str) -> DerivationTree:
        return cls.from_json(json.loads(text))


def validate(d: DerivationTree, grammar: Grammar, size_range: tuple[int, int] | None = None) -> list[str]:
    """Check the derivation-tree invariants; returns a list of violations."""
    errors = []
    root_tree = grammar.trees.get(d.root.tree)
    if root_tree is None or root_tree.kind != ALPHA or root_tree.label != grammar.start:
        errors.append("root is not an initial tree rooted at the start symbol")
    if d.root.address != ():
        errors.append("root carries a host address")
    for path, node, parent in d.walk():
        et = grammar.trees.get(node.tree)
        if et is None:
            errors.append(f"{path}: unknown tree {node.tree!r}")
            continue
        if parent is not None:
            if et.kind != BETA:
                errors.append(f"{path}: non-root node {node.tree} is not a beta tree")
            host = grammar.trees.get(parent.tree)
            if host is not None:
                try:
                    hn = host.root.get(node.address)
                except AddressError:
                    errors.append(f"{path}: host address {node.address} invalid in {host.id}")
                else:
                    if not hn.children or hn.label != et.label:
                        errors.append(f"{path}: {et.id} cannot adjoin at {node.address} of {host.id}")
        addrs = [c.address for c in node.children]
        if len(addrs) != len(set(addrs)):
            errors.append(f"{path}: two adjunctions at the same address")
        for slot in et.slots:
            lx = node.lexemes.get(slot)
            if lx is None:
                errors.append(f"{path}: slot {slot} unfilled")
                continue
            lt = grammar.trees.get(lx.tree)
            if lt is None or lt.kind != ALPHA or lt.label != et.slot_label(slot):
                errors.append(f"{path}: lexeme {lx.tree} incompatible with slot {slot}")
        if set(node.lexemes) - set(et.slots):
            errors.append(f"{path}: lexemes on non-slot addresses")
    if size_range is not None:
        n = d.size()
        if not size_range[0] <= n <= size_range[1]:
            errors.append(f"size {n} outside {list(size_range)}")
    return errors


def derive(d: DerivationTree, grammar: Grammar) -> Node:
    """Build the derived tree: substitute each node's lexemes, then adjoin
    the (recursively derived) children bottom-up."""
    root, _ = _derive(d.root, grammar, ())
    return root


def _derive(dn: DNode, grammar: Grammar, path: tuple[Address, ...]) -> tuple[Node, Node | None]:
    et = grammar.trees[dn.tree]
    root, nodemap = et.instantiate()
    for slot in et.slots:
        lx = dn.lexemes.get(slot)
        if lx is None:
            raise IncompleteDerivation(f"slot {slot} of {et.id} at {path} has no lexeme")
        lt = grammar.trees[lx.tree]
        node = nodemap[slot]
        if lt.label != node.label:
            raise CompatibilityError(f"lexeme {lt.id} does not fit slot {node.label!r}")
        node.children = [c.copy() for c in lt.root.children]
        if lx.value is not None:
            for leaf in node.children:
                leaf.payload = param_name(path, slot)
    for child in dn.children:
        sub, foot = _derive(child, grammar, path + (child.address,))
        _adjoin_inplace(nodemap[child.address], sub, foot)
    foot = nodemap[et.foot] if et.foot is not None else None
    return root, foot


def is_complete(t: Node, grammar: Grammar) -> bool:
    return all(n.children or grammar.kind_of(n.label) == TERMINAL for _, n in t.walk())


def open_addresses(d: DerivationTree, grammar: Grammar) -> list[tuple[DNode, Address, str]]:
    """Adjoinable interior addresses not yet used by a child adjunction.

    Only labels that root at least one beta tree are reported, so addresses
    where nothing could ever adjoin are left out.
    """
    out = []
    for _, node, _ in d.walk():
        used = node.used_addresses()
        for addr, label in grammar.adjoin_sites[node.tree]:
            if addr not in used:
                out.append((node, addr, label))
    return out


# --------------------------------------------------------------------------
# random generation


def random_lexemes(grammar: Grammar, et: ElementaryTree, rng: np.random.Generator) -> dict[Address, Lexeme]:
    lex = {}
    for slot in et.slots:
        choices = grammar.lexemes_by_label.get(et.slot_label(slot))
        if not choices:
            raise GenerationError(f"no lexeme for slot {et.slot_label(slot)!r} of {et.id}")
        lt = choices[int(rng.integers(len(choices)))]
        leaf = lt.root.children[0].label if lt.root.children else None
        value = None
        if leaf in grammar.random_terminals:
            lo, hi = grammar.random_terminals[leaf]
            value = float(rng.uniform(lo, hi))
        lex[slot] = Lexeme(lt.id, value)
    return lex


def new_adjunction(grammar: Grammar, label: str, address: Address,
                   rng: np.random.Generator) -> DNode:
    """A fresh derivation node holding a random beta tree rooted at ``label``."""
    betas = grammar.betas_by_label[label]
    bt = betas[int(rng.integers(len(betas)))]
    return DNode(bt.id, address, random_lexemes(grammar, bt, rng))


def grow(d: DerivationTree | DNode, n: int, grammar: Grammar, rng: np.random.Generator) -> bool:
    """Add ``n`` random adjunctions at uniformly chosen open addresses within
    ``d``. Returns False when the tree runs out of open addresses."""
    sub = d if isinstance(d, DerivationTree) else DerivationTree(d)
    for _ in range(n):
        sites = open_addresses(sub, grammar)
        if not sites:
            return False
        host, addr, label = sites[int(rng.integers(len(sites)))]
        host.children.append(new_adjunction(grammar, label, addr, rng))
    return True


def random_derivation(grammar: Grammar, size_range: tuple[int, int], rng: np.random.Generator,
                      max_retries: int = 20) -> DerivationTree:
    """Random complete derivation whose size is drawn uniformly from ``size_range``."""
    if not grammar.starts:
        raise GenerationError("grammar has no initial tree rooted at the start symbol")
    lo, hi = int(size_range[0]), int(size_range[1])
    if lo < 1 or hi < lo:
        raise GenerationError(f"invalid size range {size_range}")
    for _ in range(max_retries):
        n = int(rng.integers(lo, hi + 1))
        start = grammar.starts[int(rng.integers(len(grammar.starts)))]
        d = DerivationTree(DNode(start.id, (), random_lexemes(grammar, start, rng)))
        if grow(d, n - 1, grammar, rng):
            return d
    raise GenerationError(f"could not reach a size in {list(size_range)} "
                          f"after {max_retries} attempts")


def derivation_subtrees(d: DerivationTree) -> list[tuple[DNode, DNode]]:
    """All ``(parent, child)`` pairs, i.e. every non-root subtree with its host."""
    return [(parent, node) for _, node, parent in d.walk() if parent is not None]


def enumerate_derivations(grammar: Grammar, max_adjunctions: int,
                          lexeme_choice: Callable[[ElementaryTree], dict] | None = None
                          ) -> Iterator[DerivationTree]:
    """Exhaustively enumerate derivations with up to ``max_adjunctions``
    adjunctions, using the first lexeme for every slot unless
    ``lexeme_choice`` says otherwise. Intended for small grammars/depths."""

    def first_lexemes(et: ElementaryTree) -> dict:
        lex = {}
        for slot in et.slots:
            lt = grammar.lexemes_by_label[et.slot_label(slot)][0]
            leaf = lt.root.children[0].label if lt.root.children else None
            lex[slot] = Lexeme(lt.id, 0.5 if leaf in grammar.random_terminals else None)
        return lex

    choose = lexeme_choice or first_lexemes
    seen = set()

    def rec(d: DerivationTree, remaining: int):
        sig = d.signature()
        if sig in seen:
            return
        seen.add(sig)
        yield d
        if remaining == 0:
            return
        for i, (host, addr, label) in enumerate(open_addresses(d, grammar)):
            for bt in grammar.betas_by_label[label]:
                nd = d.copy()
                nhost = nd.nodes()[d.nodes().index(host)]
                nhost.children.append(DNode(bt.id, addr, choose(bt)))
                yield from rec(nd, remaining - 1)

    for start in grammar.starts:
        yield from rec(DerivationTree(DNode(start.id, (), choose(start))), max_adjunctions)
