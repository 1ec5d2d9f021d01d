import numpy as np
import pytest

from tagrevise import evolution as V
from tagrevise import hydrology as H
from tagrevise import knowledge as K
from tagrevise import tag as T


@pytest.fixture(scope="session")
def spec():
    return K.river_knowledge()


@pytest.fixture(scope="session")
def grammar(spec):
    return K.build_grammar(spec)


@pytest.fixture(scope="session")
def toy_grammar():
    """S -> E with E[E* + E_l] and E[E* * E_l]; lexemes x, y and R."""
    syms = [T.Symbol(n, T.NONTERMINAL) for n in ("S", "E", "L")]
    syms += [T.Symbol(n, T.TERMINAL) for n in ("x", "y", "R", "+", "*")]
    alpha = T.ElementaryTree("a", T.ALPHA, T.tree("S", T.tree("E", "x")))
    b_add = T.ElementaryTree("b+", T.BETA, T.tree("E", "E", "+", "L"), foot=(0,), slots=[(2,)])
    b_mul = T.ElementaryTree("b*", T.BETA, T.tree("E", "E", "*", "L"), foot=(0,), slots=[(2,)])
    lex = [T.ElementaryTree(f"l{v}", T.ALPHA, T.tree("L", v)) for v in ("x", "y", "R")]
    return T.Grammar(syms, [alpha, b_add, b_mul] + lex, "S")


@pytest.fixture(scope="session")
def recovery_series():
    sc = H.Scenario.recovery()
    return sc, H.gen_synthetic(sc, np.random.default_rng(0))


@pytest.fixture(scope="session")
def small_data(recovery_series):
    """150 days: 100 for training, 50 held out."""
    sc, series = recovery_series
    return V.FitnessData.from_series(series, H.DataSplit((0, 99), (100, 149), "small"),
                                     zoo0=sc.B_Zoo0)
