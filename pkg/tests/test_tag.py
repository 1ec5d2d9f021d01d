import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagrevise import tag as T


def derived_size_law(d, g):
    n = 0
    for _, node, parent in d.walk():
        et = g.trees[node.tree]
        n += et.n_nodes if parent is None else et.n_nodes - 1
        n += sum(g.trees[lx.tree].n_nodes - 1 for lx in node.lexemes.values())
    return n


def test_adjoin_identifies_foot_with_excised_subtree(toy_grammar):
    g = toy_grammar
    host = T.tree("S", T.tree("E", "x"))
    out = T.adjoin(host, g.trees["b+"], (0,))
    assert out.to_bracket() == "(S (E (E x) + L))"
    assert out.size() == host.size() + g.trees["b+"].n_nodes - 1
    # host untouched
    assert host.to_bracket() == "(S (E x))"


def test_substitute_fills_slot(toy_grammar):
    g = toy_grammar
    host = T.adjoin(T.tree("S", T.tree("E", "x")), g.trees["b*"], (0,))
    out = T.substitute(host, g.trees["ly"], (0, 2))
    assert out.to_bracket() == "(S (E (E x) * (L y)))"
    assert out.size() == host.size() + g.trees["ly"].n_nodes - 1


def test_adjoin_rejects_leaf_and_mismatch(toy_grammar):
    g = toy_grammar
    host = T.tree("S", T.tree("E", "x"))
    with pytest.raises(T.CompatibilityError):
        T.adjoin(host, g.trees["b+"], (0, 0))
    with pytest.raises(T.CompatibilityError):
        T.adjoin(host, g.trees["b+"], ())
    with pytest.raises(T.AddressError):
        T.adjoin(host, g.trees["b+"], (3,))
    with pytest.raises(T.CompatibilityError):
        T.substitute(host, g.trees["b+"], (0,))


def test_elementary_tree_checks():
    with pytest.raises(T.GrammarError):
        T.ElementaryTree("b", T.BETA, T.tree("E", "E", "+"))
    with pytest.raises(T.GrammarError):
        T.ElementaryTree("b", T.BETA, T.tree("E", "F", "+"), foot=(0,))
    with pytest.raises(T.GrammarError):
        T.ElementaryTree("a", T.ALPHA, T.tree("S", "x"), foot=(0,))
    with pytest.raises(T.GrammarError):
        T.Grammar([T.Symbol("S", T.NONTERMINAL), T.Symbol("S", T.TERMINAL)], [], "S")


def test_grammar_requires_declared_slots():
    syms = [T.Symbol("S", T.NONTERMINAL), T.Symbol("L", T.NONTERMINAL)]
    bad = T.ElementaryTree("a", T.ALPHA, T.tree("S", "L"))
    with pytest.raises(T.GrammarError):
        T.Grammar(syms, [bad], "S")


def test_initial_derivation_is_valid(toy_grammar):
    d = T.DerivationTree(T.DNode("a"))
    assert T.validate(d, toy_grammar, (1, 5)) == []
    assert T.derive(d, toy_grammar).to_bracket() == "(S (E x))"


def test_validate_reports_problems(toy_grammar):
    d = T.DerivationTree(T.DNode("a", children=[T.DNode("b+", (0,))]))
    errs = T.validate(d, toy_grammar)
    assert any("unfilled" in e for e in errs)
    d = T.DerivationTree(T.DNode("a", children=[T.DNode("b+", (0, 0), {(2,): T.Lexeme("lx")})]))
    assert any("cannot adjoin" in e for e in T.validate(d, toy_grammar))
    d = T.DerivationTree(T.DNode("b+"))
    assert T.validate(d, toy_grammar)
    with pytest.raises(T.IncompleteDerivation):
        T.derive(T.DerivationTree(T.DNode("a", children=[T.DNode("b+", (0,))])), toy_grammar)


def test_derivation_order_of_adjunctions(toy_grammar):
    # two adjunctions at the same host node: the later one wraps the earlier
    d = T.DerivationTree(T.DNode("a", children=[
        T.DNode("b+", (0,), {(2,): T.Lexeme("ly")},
                children=[T.DNode("b*", (), {(2,): T.Lexeme("lx")})])]))
    assert T.validate(d, toy_grammar) == []
    assert T.derive(d, toy_grammar).to_bracket() == "(S (E (E (E x) + (L y)) * (L x)))"


def test_random_constants_get_payloads(toy_grammar):
    d = T.DerivationTree(T.DNode("a", children=[T.DNode("b+", (0,), {(2,): T.Lexeme("lR", 0.25)})]))
    t = T.derive(d, toy_grammar)
    payloads = [n.payload for _, n in t.walk() if n.payload]
    assert payloads == [T.param_name(((0,),), (2,))]
    assert d.random_values() == {payloads[0]: 0.25}


def test_enumerate_small(toy_grammar):
    ds = list(T.enumerate_derivations(toy_grammar, 2))
    # 1 + 2 + 4: every adjunction uses up one site and opens one new site
    assert len(ds) == 7
    assert all(T.validate(d, toy_grammar) == [] for d in ds)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lo=st.integers(1, 10), span=st.integers(0, 20))
def test_random_derivations_satisfy_invariants(grammar, seed, lo, span):
    rng = np.random.default_rng(seed)
    d = T.random_derivation(grammar, (lo, lo + span), rng)
    assert T.validate(d, grammar, (lo, lo + span)) == []
    t = T.derive(d, grammar)
    assert T.is_complete(t, grammar)
    assert t.size() == derived_size_law(d, grammar)
    # substitution is in-node: lexeme trees never appear as derivation nodes
    assert all(grammar.trees[n.tree].kind == T.BETA for n in d.nodes()[1:])
    assert T.DerivationTree.loads(d.dumps()).signature() == d.signature()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_grow_keeps_validity(toy_grammar, seed):
    rng = np.random.default_rng(seed)
    d = T.DerivationTree(T.DNode("a"))
    for k in range(1, 8):
        assert T.grow(d, 1, toy_grammar, rng)
        assert d.size() == k + 1
        assert T.validate(d, toy_grammar) == []
        assert T.derive(d, toy_grammar).size() == derived_size_law(d, toy_grammar)


def test_random_derivation_bad_range(grammar):
    with pytest.raises(T.GenerationError):
        T.random_derivation(grammar, (5, 2), np.random.default_rng(0))


def test_grammar_json_roundtrip(toy_grammar):
    g2 = T.Grammar.from_json(toy_grammar.to_json())
    assert g2.dumps() == toy_grammar.dumps()


def test_small_revision_example():
    # S[ E[ E[B_Phy] * E[mu] ] ] has 7 nodes, the auxiliary tree E[E* - R] has 4
    syms = [T.Symbol(n, T.NONTERMINAL) for n in ("S", "E", "R")]
    syms += [T.Symbol(n, T.TERMINAL) for n in ("B_Phy", "mu", "*", "-", "1.5")]
    host = T.ElementaryTree("a", T.ALPHA, T.tree("S", T.tree("E", T.tree("E", "B_Phy"), "*",
                                                                 T.tree("E", "mu"))))
    beta = T.ElementaryTree("b", T.BETA, T.tree("E", "E", "-", "R"), foot=(0,), slots=[(2,)])
    lex = T.ElementaryTree("l", T.ALPHA, T.tree("R", "1.5"))
    T.Grammar(syms, [host, beta, lex], "S")
    assert host.n_nodes == 7 and beta.n_nodes == 4
    out = T.adjoin(host, beta, (0, 2))
    assert out.size() == 10
    out = T.substitute(out, lex, (0, 2, 2))
    assert out.to_bracket() == "(S (E (E B_Phy) * (E (E mu) - (R 1.5))))"


def test_open_addresses_of_initial_river_model(spec, grammar):
    from tagrevise import knowledge as K
    d = K.initial_derivation(grammar)
    sites = T.open_addresses(d, grammar)
    n_ext = sum(len(q.extensions) for q in spec.equations)
    assert len(sites) == n_ext
    assert all(label.endswith("_c") for _, _, label in sites)
