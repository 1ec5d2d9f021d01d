"""TAG-guided genetic model revision and the calibration-only baseline.

Fitness is the training RMSE of the simulated B_Phy trajectory. Evaluation
follows the short-circuiting scheme: the running fitness after ``k`` of
``N`` cases is ``sqrt(SSE_k / N)``, which only grows and ends at the RMSE.
Once it exceeds ``bestPrevFull * threshold`` the final fitness is
extrapolated; if the estimate exceeds ``bestPrevFull`` the evaluation stops
and returns the estimate. ``bestPrevFull`` is the best fully evaluated
fitness seen so far in the run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr as E
from . import tag as T
from .compiler import (EXTRAPOLATE_IDENTITY, EXTRAPOLATE_LINEAR, Program, SimulationResult,
                       compile_system, run_simulation)
from .hydrology import DataSplit, MeasurementSeries, RiverNetwork, SINGLE_STATION, \
    env_series_at_target, observed_at_target
from .knowledge import ModelBuilder, initial_derivation, model_defs, prior_for
from .metrics import mae, rmse
from .process import DEFAULT_ZOO0, DERIVATIVES, VARIABLE_IDS, ParameterPrior, R_PRIOR, env_matrix

EXTRAPOLATIONS = {"identity": EXTRAPOLATE_IDENTITY, "linear": EXTRAPOLATE_LINEAR}


@dataclass
class RunConfig:
    generations: int = 100
    popsize: int = 200
    elite: int = 2
    tournament: int = 5
    local_search_steps: int = 5
    minsize: int = 2
    maxsize: int = 50
    p_crossover: float = 0.3
    p_subtree: float = 0.3
    p_gaussian: float = 0.3
    p_replication: float = 0.1
    threshold: float = 1.0
    extrapolation: str = "identity"
    ramp_generations: int = 20
    ramp_floor: float = 0.1
    retry_limit: int = 10
    size_tolerance: int = 2
    seed: int = 0
    compiled: bool = True
    cache: bool = True
    strict_bounds: bool = True

    def __post_init__(self):
        probs = (self.p_crossover, self.p_subtree, self.p_gaussian, self.p_replication)
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError("operator probabilities must be non-negative and sum to 1")
        if self.popsize < 1 or self.tournament < 1 or self.generations < 0:
            raise ValueError("popsize and tournament must be positive, generations non-negative")
        if not 0 <= self.elite <= self.popsize:
            raise ValueError("elite must lie in [0, popsize]")
        if not 1 <= self.minsize <= self.maxsize:
            raise ValueError("need 1 <= minsize <= maxsize")
        if self.extrapolation not in EXTRAPOLATIONS:
            raise ValueError(f"extrapolation must be one of {sorted(EXTRAPOLATIONS)}")
        if self.threshold < 0:
            raise ValueError("threshold must be non-negative")

    @property
    def size_range(self) -> tuple[int, int]:
        return (self.minsize, self.maxsize)

    @classmethod
    def calibration(cls, **kw) -> RunConfig:
        """Defaults for the parameter-only GA: larger population, no
        structural operators and no local search."""
        base = dict(popsize=1200, local_search_steps=0, minsize=1, p_crossover=0.3,
                    p_subtree=0.0, p_gaussian=0.6, p_replication=0.1)
        base.update(kw)
        return cls(**base)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# --------------------------------------------------------------------------
# data


@dataclass
class FitnessData:
    """Environment and observations from the training start to the test end.

    Row 0 is the first training day. ``train``/``test`` are half-open row
    ranges.
    """
    env: np.ndarray
    columns: dict[str, int]
    observed: np.ndarray
    train: tuple[int, int]
    test: tuple[int, int]
    split_id: str
    state0: tuple[float, float]

    @property
    def n_rows(self) -> int:
        return self.env.shape[0]

    @property
    def n_train(self) -> int:
        return self.train[1] - self.train[0]

    def env_dict(self) -> dict[str, np.ndarray]:
        return {v: self.env[:, c] for v, c in self.columns.items()}

    @classmethod
    def from_arrays(cls, env: Mapping[str, np.ndarray], observed: np.ndarray, split: DataSplit,
                    zoo0: float = DEFAULT_ZOO0) -> FitnessData:
        a, b = split.train
        c, d = split.test
        if d >= len(observed):
            raise ValueError(f"split ends at day {d} but data has {len(observed)} days")
        rows = slice(a, d + 1)
        mat, cols = env_matrix({k: np.asarray(v)[rows] for k, v in env.items()})
        obs = np.ascontiguousarray(np.asarray(observed, dtype=float)[rows])
        return cls(mat, cols, obs, (0, b - a + 1), (c - a, d - a + 1), split.id,
                   (float(obs[0]), float(zoo0)))

    @classmethod
    def from_series(cls, data: MeasurementSeries, split: DataSplit, net: RiverNetwork | None = None,
                    mode: str = SINGLE_STATION, zoo0: float = DEFAULT_ZOO0) -> FitnessData:
        net = net or RiverNetwork.single(data.stations()[0] if data.stations() else "S1")
        n = max(data.n_days, split.n_days)
        env = env_series_at_target(net, data, mode, n, VARIABLE_IDS)
        return cls.from_arrays(env, observed_at_target(net, data, n), split, zoo0)


# --------------------------------------------------------------------------
# individuals


@dataclass
class FitnessRecord:
    rmse: float
    mae: float
    evaluated_cases: int
    short_circuited: bool = False
    invalid: bool = False
    cached: bool = False

    @property
    def full(self) -> bool:
        return not self.short_circuited and not self.invalid


@dataclass
class Individual:
    derivation: T.DerivationTree
    params: dict[str, float]
    fitness: FitnessRecord | None = None

    def copy(self, keep_fitness: bool = True) -> Individual:
        return Individual(self.derivation.copy(), dict(self.params),
                          self.fitness if keep_fitness else None)

    @property
    def size(self) -> int:
        return self.derivation.size()

    @property
    def value(self) -> float:
        return self.fitness.rmse if self.fitness is not None else math.inf

    def all_params(self) -> dict[str, float]:
        out = dict(self.params)
        out.update(self.derivation.random_values())
        return out


def bound_violations(ind: Individual, priors: Mapping[str, ParameterPrior]) -> list[str]:
    out = []
    for name, v in ind.all_params().items():
        p = prior_for(name, priors)
        if not (p.min <= v <= p.max):
            out.append(f"{name}={v!r} outside [{p.min}, {p.max}]")
    return out


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Structure:
    """Everything about an individual's model that does not depend on its
    parameter values."""
    text: str
    program: Program | None
    r_order: list[str]
    defs: list[tuple[str, E.Expr]]

    def param_vector(self, ind: Individual) -> np.ndarray:
        rv = ind.derivation.random_values() if self.r_order else {}
        out = np.empty(len(self.program.param_names))
        for i, name in enumerate(self.program.param_names):
            out[i] = rv[self.r_order[int(name[2:])]] if name.startswith("R#") else ind.params[name]
        return out


def build_structure(d: T.DerivationTree, grammar: T.Grammar,
                    states: Sequence[tuple[str, str]] = DERIVATIVES,
                    builder: ModelBuilder | None = None) -> Structure:
    """Simplify, canonicalise and compile an individual's model."""
    builder = builder or ModelBuilder(grammar)
    simp, text = builder.simplified(d)
    text, r_order = E.rename_random(text)
    if r_order:
        rename = {r: E.param(f"R#{i}") for i, r in enumerate(r_order)}
        parts = text.split(";")
        simp = [(n, E.substitute_names(e, rename) if "R#" in part else e)
                for (n, e), part in zip(simp, parts)]
    prog = compile_system(simp, outputs=[dv for _, dv in states])
    return Structure(text, prog, list(r_order), simp)


def interpret_simulation(defs: Sequence[tuple[str, E.Expr]], states: Sequence[tuple[str, str]],
                         env: np.ndarray, columns: Mapping[str, int], params: Mapping[str, float],
                         state0: Sequence[float], n_steps: int, observed: np.ndarray | None = None,
                         case_range: tuple[int, int] | None = None, best: float = math.inf,
                         threshold: float = math.inf, extrapolation: int = EXTRAPOLATE_IDENTITY
                         ) -> SimulationResult:
    """Tree-walking counterpart of :func:`compiler.run_simulation`, with the
    same stepping, clamping and short-circuit rules."""
    state = [float(s) for s in state0]
    traj = np.empty(n_steps)
    if observed is None or case_range is None:
        lo, n_cases = 0, 0
    else:
        lo, hi = case_range
        n_cases = max(0, min(hi, n_steps) - lo)
    sse, k = 0.0, 0
    limit = best * threshold
    names = list(columns)
    for t in range(n_steps):
        traj[t] = state[0]
        if n_cases and lo <= t and k < n_cases:
            d = state[0] - observed[t]
            sse += d * d
            k += 1
            fit = math.sqrt(sse / n_cases)
            if fit > limit:
                est = fit if extrapolation == EXTRAPOLATE_IDENTITY else math.sqrt(sse / k)
                if est > best:
                    return SimulationResult(traj[:t + 1], est, k, True, False, t + 1)
        if t == n_steps - 1:
            break
        variables = {v: env[t, columns[v]] for v in names}
        for (s, _), x in zip(states, state):
            variables[s] = x
        out = E.eval_system(defs, E.Environment(variables, params))
        bad = False
        for i, (_, dv_name) in enumerate(states):
            dv = out[dv_name]
            if not math.isfinite(dv):
                bad = True
                dv = 0.0 if math.isnan(dv) else dv
            v = state[i] + dv
            if not v > 0.0:
                v = 0.0
            if not math.isfinite(v):
                bad = True
                v = 0.0
            state[i] = v
        if bad:
            traj[t + 1:] = np.nan
            return SimulationResult(traj, math.inf, k, False, True, t + 1)
    fit = math.sqrt(sse / n_cases) if n_cases else 0.0
    return SimulationResult(traj, fit, k, False, False, n_steps)


@dataclass
class EvalEvent:
    kind: str           # full | short | invalid | hit
    fitness: float
    best_before: float
    best_after: float
    cases: int


class Evaluator:
    """Fitness evaluation with short-circuiting, compiled programs and caching.

    With ``compiled=False`` and ``use_cache=False`` every evaluation derives
    the model afresh and walks the expression trees day by day; this is the
    naive baseline used for speed comparisons.
    """

    def __init__(self, grammar: T.Grammar, data: FitnessData, threshold: float = 1.0,
                 extrapolation: str = "identity", compiled: bool = True, use_cache: bool = True,
                 states: Sequence[tuple[str, str]] = DERIVATIVES, record_events: bool = False):
        self.grammar = grammar
        self.data = data
        self.threshold = float(threshold)
        self.extrapolation = EXTRAPOLATIONS[extrapolation]
        self.compiled = compiled
        self.use_cache = use_cache
        self.states = tuple(states)
        self.best_prev_full = math.inf
        self.cache = E.EvalCache()
        self.structures: dict[str, Structure | None] = {}
        self.builder = ModelBuilder(grammar) if compiled else None
        self.events: list[EvalEvent] | None = [] if record_events else None
        self.evaluations = 0        # evaluation requests
        self.simulations = 0        # requests not answered by the cache
        self.fitness_cases = 0
        self.short_circuits = 0
        self.invalid = 0
        self.train_env = np.ascontiguousarray(data.env[:data.train[1]])
        self.train_obs = data.observed[:data.train[1]]

    # ---- structure

    def structure(self, d: T.DerivationTree) -> Structure | None:
        if not self.use_cache and not self.compiled:
            return self._fresh_structure(d)
        sig = d.signature()
        if sig not in self.structures:
            self.structures[sig] = self._fresh_structure(d)
        return self.structures[sig]

    def _fresh_structure(self, d: T.DerivationTree) -> Structure | None:
        try:
            if self.compiled:
                return build_structure(d, self.grammar, self.states, self.builder)
            return Structure("", None, [], model_defs(d, self.grammar))
        except (T.TAGError, E.ExprError, KeyError):
            return None

    # ---- fitness

    def _log(self, kind, fitness, before, cases):
        if self.events is not None:
            self.events.append(EvalEvent(kind, fitness, before, self.best_prev_full, cases))

    def evaluate(self, ind: Individual) -> FitnessRecord:
        self.evaluations += 1
        before = self.best_prev_full
        st = self.structure(ind.derivation)
        if st is None:
            self.invalid += 1
            rec = FitnessRecord(math.inf, math.inf, 0, invalid=True)
            self._log("invalid", rec.rmse, before, 0)
            ind.fitness = rec
            return rec
        key = None
        if self.use_cache and st.program is not None:
            pvec = st.param_vector(ind)
            key = (st.text, tuple(E.quantize(v) for v in pvec), self.data.split_id)
            hit = self.cache.get(key)
            if hit is not None:
                rec = FitnessRecord(hit.rmse, hit.mae, 0, hit.short_circuited, hit.invalid, True)
                self._log("hit", rec.rmse, before, 0)
                ind.fitness = rec
                return rec
        self.simulations += 1
        n = self.data.train[1]
        case_range = self.data.train
        if st.program is not None:
            sim = run_simulation(st.program, list(self.states), self.train_env, self.data.columns,
                                 st.param_vector(ind), self.data.state0, n, 1.0, self.train_obs,
                                 case_range, self.best_prev_full, self.threshold, self.extrapolation)
        else:
            sim = interpret_simulation(st.defs, self.states, self.train_env, self.data.columns,
                                       ind.all_params(), self.data.state0, n, self.train_obs,
                                       case_range, self.best_prev_full, self.threshold,
                                       self.extrapolation)
        self.fitness_cases += sim.evaluated_cases
        lo = case_range[0]
        if sim.invalid:
            self.invalid += 1
            rec = FitnessRecord(math.inf, math.inf, sim.evaluated_cases, invalid=True)
            kind = "invalid"
        elif sim.short_circuited:
            self.short_circuits += 1
            k = sim.evaluated_cases
            part = sim.trajectory[lo:lo + k] - self.train_obs[lo:lo + k]
            rec = FitnessRecord(sim.fitness, float(np.mean(np.abs(part))), k, short_circuited=True)
            kind = "short"
        else:
            pred = sim.trajectory[lo:case_range[1]]
            rec = FitnessRecord(sim.fitness, mae(pred, self.train_obs[lo:case_range[1]]),
                                sim.evaluated_cases)
            if rec.rmse < self.best_prev_full:
                self.best_prev_full = rec.rmse
            kind = "full"
        if key is not None and not rec.short_circuited:
            self.cache.put(key, rec)
        self._log(kind, rec.rmse, before, sim.evaluated_cases)
        ind.fitness = rec
        return rec

    # ---- reporting

    def trajectory(self, ind: Individual) -> np.ndarray:
        """Full trajectory from the training start to the test end."""
        st = self.structure(ind.derivation)
        if st is None:
            return np.full(self.data.n_rows, np.nan)
        if st.program is not None:
            sim = run_simulation(st.program, list(self.states), self.data.env, self.data.columns,
                                 st.param_vector(ind), self.data.state0, self.data.n_rows)
        else:
            sim = interpret_simulation(st.defs, self.states, self.data.env, self.data.columns,
                                       ind.all_params(), self.data.state0, self.data.n_rows)
        return sim.trajectory

    def metrics(self, ind: Individual) -> dict[str, float]:
        traj = self.trajectory(ind)
        out = {}
        for part, (a, b) in (("train", self.data.train), ("test", self.data.test)):
            p, o = traj[a:b], self.data.observed[a:b]
            if not np.all(np.isfinite(p)):
                out[f"{part}_rmse"] = out[f"{part}_mae"] = math.inf
            else:
                out[f"{part}_rmse"] = rmse(p, o)
                out[f"{part}_mae"] = mae(p, o)
        return out

    def counters(self) -> dict[str, float]:
        return {"evaluations": self.evaluations, "simulations": self.simulations,
                "fitness_cases": self.fitness_cases, "short_circuits": self.short_circuits,
                "invalid": self.invalid, "cache_hits": self.cache.hits,
                "cache_misses": self.cache.misses, "structures": len(self.structures),
                "best_prev_full": self.best_prev_full}


# --------------------------------------------------------------------------
# operators


def init_population(grammar: T.Grammar, priors: Sequence[ParameterPrior], cfg: RunConfig,
                    rng: np.random.Generator) -> list[Individual]:
    means = {p.id: float(p.mean) for p in priors}
    return [Individual(T.random_derivation(grammar, cfg.size_range, rng), dict(means))
            for _ in range(cfg.popsize)]


def tournament_select(pop: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Best of ``k`` uniform draws with replacement; ties go to the lower index."""
    idx = rng.integers(len(pop), size=k)
    best = min(int(i) for i in idx)
    for i in idx:
        i = int(i)
        if pop[i].value < pop[best].value or (pop[i].value == pop[best].value and i < best):
            best = i
    return pop[best]


def _host_label(grammar: T.Grammar, parent: T.DNode, address: T.Address) -> str:
    return grammar.trees[parent.tree].root.get(address).label


def crossover(a: Individual, b: Individual, grammar: T.Grammar, cfg: RunConfig,
              rng: np.random.Generator) -> tuple[Individual, Individual, bool]:
    """Swap compatible derivation subtrees; falls back to copies of the
    parents after ``retry_limit`` failed attempts."""
    for _ in range(cfg.retry_limit):
        da, db = a.derivation.copy(), b.derivation.copy()
        sa, sb = T.derivation_subtrees(da), T.derivation_subtrees(db)
        if not sa or not sb:
            break
        pa, xa = sa[int(rng.integers(len(sa)))]
        pb, xb = sb[int(rng.integers(len(sb)))]
        if _host_label(grammar, pa, xa.address) != _host_label(grammar, pb, xb.address):
            continue
        na = da.size() - xa.size() + xb.size()
        nb = db.size() - xb.size() + xa.size()
        if not (cfg.minsize <= na <= cfg.maxsize and cfg.minsize <= nb <= cfg.maxsize):
            continue
        ia, ib = pa.children.index(xa), pb.children.index(xb)
        addr_a, addr_b = xa.address, xb.address
        xa.address, xb.address = addr_b, addr_a
        pa.children[ia], pb.children[ib] = xb, xa
        return Individual(da, dict(a.params)), Individual(db, dict(b.params)), True
    return a.copy(), b.copy(), False


def subtree_mutation(a: Individual, grammar: T.Grammar, cfg: RunConfig,
                     rng: np.random.Generator) -> tuple[Individual, bool]:
    """Replace a random derivation subtree by a fresh one of similar size."""
    for _ in range(cfg.retry_limit):
        d = a.derivation.copy()
        subs = T.derivation_subtrees(d)
        if not subs:
            break
        parent, x = subs[int(rng.integers(len(subs)))]
        sx, rest = x.size(), d.size() - x.size()
        lo = max(1, sx - cfg.size_tolerance, cfg.minsize - rest)
        hi = min(sx + cfg.size_tolerance, cfg.maxsize - rest)
        if lo > hi:
            continue
        n = int(rng.integers(lo, hi + 1))
        new = T.new_adjunction(grammar, _host_label(grammar, parent, x.address), x.address, rng)
        if not T.grow(new, n - 1, grammar, rng):
            continue
        parent.children[parent.children.index(x)] = new
        return Individual(d, dict(a.params)), True
    return a.copy(), False


def sigma_factor(gen: int, cfg: RunConfig) -> float:
    """Multiplier on the initial mutation width: 1 until the last
    ``ramp_generations`` generations, then linearly down to ``ramp_floor``."""
    k = cfg.ramp_generations
    start = cfg.generations - k
    if k <= 0 or gen <= start:
        return 1.0
    return 1.0 - (1.0 - cfg.ramp_floor) * min(gen - start, k) / k


def gaussian_mutation(a: Individual, gen: int, cfg: RunConfig, priors: Mapping[str, ParameterPrior],
                      rng: np.random.Generator) -> Individual:
    """Resample every constant around its current value; out-of-range draws
    are replaced by the violated bound."""
    f = sigma_factor(gen, cfg)
    params = {}
    for name, v in a.params.items():
        p = priors[name]
        params[name] = p.clamp(float(rng.normal(v, p.sigma0 * f)))
    d = a.derivation.copy()
    for node in d.nodes():
        for slot in sorted(node.lexemes):
            lx = node.lexemes[slot]
            if lx.value is not None:
                v = R_PRIOR.clamp(float(rng.normal(lx.value, R_PRIOR.sigma0 * f)))
                node.lexemes[slot] = T.Lexeme(lx.tree, v)
    return Individual(d, params)


def insertion(a: Individual, grammar: T.Grammar, cfg: RunConfig,
              rng: np.random.Generator) -> Individual | None:
    if a.size >= cfg.maxsize:
        return None
    d = a.derivation.copy()
    sites = T.open_addresses(d, grammar)
    if not sites:
        return None
    host, addr, label = sites[int(rng.integers(len(sites)))]
    host.children.append(T.new_adjunction(grammar, label, addr, rng))
    return Individual(d, dict(a.params))


def deletion(a: Individual, cfg: RunConfig, rng: np.random.Generator) -> Individual | None:
    """Remove a random childless non-root derivation node."""
    if a.size <= cfg.minsize:
        return None
    d = a.derivation.copy()
    leaves = [(p, n) for p, n in T.derivation_subtrees(d) if not n.children]
    if not leaves:
        return None
    parent, node = leaves[int(rng.integers(len(leaves)))]
    parent.children.remove(node)
    return Individual(d, dict(a.params))


def local_search(a: Individual, steps: int, evaluate: Callable[[Individual], FitnessRecord],
                 grammar: T.Grammar, cfg: RunConfig, rng: np.random.Generator) -> Individual:
    """Stochastic hill climbing with insertion/deletion moves; a move is kept
    only when it strictly improves fitness."""
    cur = a
    if cur.fitness is None:
        evaluate(cur)
    for _ in range(steps):
        cand = insertion(cur, grammar, cfg, rng) if rng.random() < 0.5 else deletion(cur, cfg, rng)
        if cand is None:
            continue
        evaluate(cand)
        if cand.value < cur.value:
            cur = cand
    return cur


# --------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    best: Individual
    history: list[dict]
    metrics: dict[str, float]
    model: dict
    counters: dict
    population: list[Individual] = field(default_factory=list)
    bound_violations: int = 0


def export_model(ind: Individual, grammar: T.Grammar) -> dict:
    """JSON-ready description of an individual: derivation, parameters and
    the derived equations as S-expressions."""
    try:
        eqs = {n: E.to_sexpr(e) for n, e in model_defs(ind.derivation, grammar)}
    except T.TAGError:
        eqs = {}
    return {"derivation": ind.derivation.to_json(),
            "parameters": {k: float(v) for k, v in sorted(ind.all_params().items())},
            "equations": eqs,
            "size": ind.size}


class _Run:
    """Shared plumbing of the revision and calibration loops."""

    def __init__(self, cfg: RunConfig, grammar: T.Grammar, priors: Sequence[ParameterPrior],
                 evaluator: Evaluator, progress: Callable[[dict], None] | None):
        self.cfg = cfg
        self.grammar = grammar
        self.priors = list(priors)
        self.prior_map = {p.id: p for p in priors}
        self.ev = evaluator
        self.rng = np.random.default_rng(cfg.seed)
        self.progress = progress
        self.violations = 0
        self.history: list[dict] = []
        self.best: Individual | None = None
        self._mark = (0, 0, 0, 0)

    def check(self, ind: Individual) -> Individual:
        bad = bound_violations(ind, self.prior_map)
        if bad:
            self.violations += len(bad)
            if self.cfg.strict_bounds:
                raise AssertionError("parameter bound violated: " + "; ".join(bad))
        return ind

    def evaluate(self, ind: Individual) -> FitnessRecord:
        self.check(ind)
        rec = self.ev.evaluate(ind)
        if rec.full and (self.best is None or rec.rmse < self.best.value):
            self.best = ind.copy()
        return rec

    def record(self, gen: int, pop: list[Individual]) -> None:
        ev = self.ev
        hits = ev.cache.hits - self._mark[0]
        lookups = ev.cache.hits + ev.cache.misses - self._mark[1]
        sims = ev.simulations - self._mark[2]
        shorts = ev.short_circuits - self._mark[3]
        self._mark = (ev.cache.hits, ev.cache.hits + ev.cache.misses, ev.simulations,
                      ev.short_circuits)
        vals = np.array([i.value for i in pop])
        finite = vals[np.isfinite(vals)]
        row = {"generation": gen,
               "bestRMSE": float(vals.min()) if vals.size else math.inf,
               "meanRMSE": float(finite.mean()) if finite.size else math.inf,
               "cacheHitRate": hits / lookups if lookups else 0.0,
               "shortCircuitRate": shorts / sims if sims else 0.0}
        self.history.append(row)
        if self.progress is not None:
            self.progress(row)

    def elites(self, pop: list[Individual]) -> list[Individual]:
        order = sorted(range(len(pop)), key=lambda i: (pop[i].value, i))
        return [pop[i].copy() for i in order[:self.cfg.elite]]

    def pick_op(self) -> str:
        c = self.cfg
        r = self.rng.random()
        for name, p in (("crossover", c.p_crossover), ("subtree", c.p_subtree),
                        ("gaussian", c.p_gaussian)):
            if r < p:
                return name
            r -= p
        return "replication"

    def finish(self, pop: list[Individual]) -> RunResult:
        best = self.best
        if best is None:
            best = min(pop, key=lambda i: i.value)
        metrics = self.ev.metrics(best)
        metrics["fitness"] = best.value
        return RunResult(best, self.history, metrics, export_model(best, self.grammar),
                         self.ev.counters(), pop, self.violations)


def run_revision(cfg: RunConfig, grammar: T.Grammar, priors: Sequence[ParameterPrior],
                 data: FitnessData | None = None, evaluator: Evaluator | None = None,
                 progress: Callable[[dict], None] | None = None) -> RunResult:
    """The generational loop: elitism, tournament selection, crossover,
    subtree mutation, Gaussian mutation, replication and local search."""
    if evaluator is None:
        if data is None:
            raise ValueError("need data or an evaluator")
        evaluator = Evaluator(grammar, data, cfg.threshold, cfg.extrapolation, cfg.compiled, cfg.cache)
    run = _Run(cfg, grammar, priors, evaluator, progress)
    rng = run.rng
    pop = init_population(grammar, priors, cfg, rng)
    for ind in pop:
        run.evaluate(ind)
    run.record(0, pop)
    for gen in range(1, cfg.generations + 1):
        new = run.elites(pop)
        while len(new) < cfg.popsize:
            op = run.pick_op()
            if op == "replication":
                new.append(run.check(tournament_select(pop, cfg.tournament, rng).copy()))
                continue
            if op == "crossover":
                a = tournament_select(pop, cfg.tournament, rng)
                b = tournament_select(pop, cfg.tournament, rng)
                c1, c2, _ = crossover(a, b, grammar, cfg, rng)
                kids = [c1, c2]
            elif op == "subtree":
                kids = [subtree_mutation(tournament_select(pop, cfg.tournament, rng), grammar, cfg, rng)[0]]
            else:
                kids = [gaussian_mutation(tournament_select(pop, cfg.tournament, rng), gen, cfg,
                                          run.prior_map, rng)]
            for kid in kids[:cfg.popsize - len(new)]:
                kid.fitness = None
                run.evaluate(kid)
                kid = local_search(kid, cfg.local_search_steps, run.evaluate, grammar, cfg, rng)
                new.append(kid)
        pop = new
        run.record(gen, pop)
    return run.finish(pop)


def uniform_crossover(a: Individual, b: Individual, rng: np.random.Generator) -> tuple[Individual, Individual]:
    pa, pb = {}, {}
    for name in a.params:
        if rng.random() < 0.5:
            pa[name], pb[name] = a.params[name], b.params[name]
        else:
            pa[name], pb[name] = b.params[name], a.params[name]
    return Individual(a.derivation.copy(), pa), Individual(b.derivation.copy(), pb)


def run_calibration(cfg: RunConfig, grammar: T.Grammar, priors: Sequence[ParameterPrior],
                    data: FitnessData | None = None, evaluator: Evaluator | None = None,
                    progress: Callable[[dict], None] | None = None) -> RunResult:
    """Parameter-only GA on the unrevised model. Subtree-mutation probability,
    if any, is spent on Gaussian mutation since the structure is frozen."""
    if evaluator is None:
        if data is None:
            raise ValueError("need data or an evaluator")
        evaluator = Evaluator(grammar, data, cfg.threshold, cfg.extrapolation, cfg.compiled, cfg.cache)
    run = _Run(cfg, grammar, priors, evaluator, progress)
    rng = run.rng
    base = initial_derivation(grammar)
    means = {p.id: float(p.mean) for p in priors}
    pop = [Individual(base.copy(), dict(means)) for _ in range(cfg.popsize)]
    for ind in pop:
        run.evaluate(ind)
    run.record(0, pop)
    for gen in range(1, cfg.generations + 1):
        new = run.elites(pop)
        while len(new) < cfg.popsize:
            op = run.pick_op()
            if op == "replication":
                new.append(run.check(tournament_select(pop, cfg.tournament, rng).copy()))
                continue
            if op == "crossover":
                a = tournament_select(pop, cfg.tournament, rng)
                b = tournament_select(pop, cfg.tournament, rng)
                kids = list(uniform_crossover(a, b, rng))
            else:
                kids = [gaussian_mutation(tournament_select(pop, cfg.tournament, rng), gen, cfg,
                                          run.prior_map, rng)]
            for kid in kids[:cfg.popsize - len(new)]:
                run.evaluate(kid)
                new.append(kid)
        pop = new
        run.record(gen, pop)
    return run.finish(pop)
