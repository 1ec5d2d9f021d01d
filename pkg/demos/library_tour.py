"""Short tour of the library API: grammar, one revision step, simulation."""

import numpy as np

from tagrevise import evolution as V
from tagrevise import hydrology as H
from tagrevise import knowledge as K
from tagrevise import tag as T


def main():
    sc = H.Scenario.recovery()
    series = H.gen_synthetic(sc, np.random.default_rng(0))
    spec = K.river_knowledge().adjusted(H.truth_parameters(sc), {"B_Zoo": sc.B_Zoo0})
    grammar = K.build_grammar(spec)
    data = V.FitnessData.from_series(series, sc.default_split(), zoo0=sc.B_Zoo0)

    ev = V.Evaluator(grammar, data)
    base = V.Individual(K.initial_derivation(grammar), {p.id: p.mean for p in spec.priors})
    print("unrevised model, train RMSE", ev.evaluate(base).rmse)

    rng = np.random.default_rng(1)
    for _ in range(3):
        d = K.initial_derivation(grammar)
        T.grow(d, 2, grammar, rng)
        ind = V.Individual(d, base.params)
        eqs = K.model_sexprs(d, grammar)
        changed = {n: s for n, s in eqs.items() if s != K.model_sexprs(base.derivation, grammar)[n]}
        print(changed, "train RMSE", ev.evaluate(ind).rmse)

    res = V.run_revision(V.RunConfig(generations=10, popsize=60, seed=2), grammar, spec.priors,
                         evaluator=ev)
    print("after 10 generations:", res.model["equations"]["gamma_Phy"], res.metrics)


if __name__ == "__main__":
    main()
