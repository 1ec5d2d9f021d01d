"""Post-hoc analyses of revised models: variable selectivity among the best
models and the response of predicted B_Phy to perturbed inputs."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as E
from .compiler import compile_system, run_simulation
from .knowledge import topo_order
from .process import DERIVATIVES, VARIABLE_IDS


class AnalysisError(ValueError):
    pass


def model_equations(model: Mapping) -> list[tuple[str, E.Expr]]:
    """Parse the ``equations`` table of an exported model, dependency ordered."""
    eqs = model.get("equations")
    if not eqs:
        raise AnalysisError("model has no equations")
    return topo_order([(n, E.parse_sexpr(s)) for n, s in eqs.items()])


def referenced_variables(model: Mapping, variables: Sequence[str] = VARIABLE_IDS,
                         baseline: Mapping[str, str] | None = None) -> set[str]:
    """Variables used by a model's equations.

    With a ``baseline`` (equation name -> S-expression) only variables that an
    equation uses beyond its baseline form are counted, i.e. the ones a
    revision brought in.
    """
    found: set[str] = set()
    for name, e in model_equations(model):
        used = E.names(e, "var") & set(variables)
        if baseline is not None and name in baseline:
            used -= E.names(E.parse_sexpr(baseline[name]), "var")
        found |= used
    return found


def selectivity(models: Sequence[Mapping], K: int = 50, variables: Sequence[str] = VARIABLE_IDS,
                baseline: Mapping[str, str] | None = None) -> dict[str, float]:
    """Percentage of the first ``K`` models that reference each variable."""
    if K < 1:
        raise AnalysisError("K must be positive")
    if len(models) < K:
        raise AnalysisError(f"need {K} models, got {len(models)}")
    counts = dict.fromkeys(variables, 0)
    for m in models[:K]:
        for v in referenced_variables(m, variables, baseline):
            counts[v] += 1
    return {v: 100.0 * c / K for v, c in counts.items()}


def simulate_model(model: Mapping, env: np.ndarray, columns: Mapping[str, int],
                   state0: Sequence[float], n_steps: int | None = None,
                   states: Iterable[tuple[str, str]] = DERIVATIVES) -> np.ndarray:
    """B_Phy trajectory of an exported model on a variable matrix."""
    states = list(states)
    prog = compile_system(model_equations(model), outputs=[d for _, d in states])
    params = {k: float(v) for k, v in model.get("parameters", {}).items()}
    n = env.shape[0] if n_steps is None else n_steps
    sim = run_simulation(prog, states, np.ascontiguousarray(env), dict(columns), params,
                         list(state0), n)
    return sim.trajectory


def perturb_correlation(model: Mapping, data, variable: str, delta: float = 0.1) -> float:
    """Change in mean predicted B_Phy when ``variable`` is scaled by ``1 + delta``.

    ``data`` is a :class:`~tagrevise.evolution.FitnessData`; the simulation
    covers all of its rows.
    """
    if variable not in data.columns:
        raise AnalysisError(f"variable {variable!r} not in data")
    base = simulate_model(model, data.env, data.columns, data.state0)
    env = data.env.copy()
    env[:, data.columns[variable]] *= 1.0 + delta
    pert = simulate_model(model, env, data.columns, data.state0)
    if not (np.all(np.isfinite(base)) and np.all(np.isfinite(pert))):
        return float("nan")
    return float(np.mean(pert) - np.mean(base))


def selectivity_report(models: Sequence[Mapping], data=None, K: int = 50,
                       variables: Sequence[str] = VARIABLE_IDS,
                       baseline: Mapping[str, str] | None = None,
                       delta: float = 0.1) -> dict[str, dict]:
    """Selectivity per variable plus, when ``data`` is given, the perturbation
    response of the best model."""
    sel = selectivity(models, K, variables, baseline)
    out = {}
    for v in variables:
        row = {"selectivity": sel[v]}
        if data is not None and v in data.columns:
            c = perturb_correlation(models[0], data, v, delta)
            row["perturbation"] = c
            row["sign"] = 0 if c == 0 or not np.isfinite(c) else int(np.sign(c))
        out[v] = row
    return out
