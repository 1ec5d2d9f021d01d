"""Phytoplankton/zooplankton process model.

The subprocess functions are plain numpy code and double as oracles for the
expression-tree form of the same model. Integration is explicit forward
Euler on a daily grid; states are clamped at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import expr as E
from .compiler import Program, SimulationResult, compile_system, run_simulation


@dataclass(frozen=True)
class ParameterPrior:
    id: str
    mean: float
    min: float
    max: float
    unit: str = ""
    description: str = ""

    def __post_init__(self):
        if not self.min <= self.mean <= self.max:
            raise ValueError(f"{self.id}: mean {self.mean} outside [{self.min}, {self.max}]")

    @property
    def sigma0(self) -> float:
        # initial Gaussian-mutation width: a quarter of the prior mean
        return self.mean / 4.0

    def clamp(self, v: float) -> float:
        return min(max(v, self.min), self.max)


PRIORS: tuple[ParameterPrior, ...] = (
    ParameterPrior("C_UA", 1.89, 0.1, 4.0, "1/day", "max growth rate of phytoplankton"),
    ParameterPrior("C_UZ", 0.15, 0.0, 0.3, "1/day", "max growth rate of zooplankton"),
    ParameterPrior("C_BRA", 0.021, 0.0, 0.17, "1/day", "respiration rate of phytoplankton"),
    ParameterPrior("C_BRZ", 0.05, 0.0, 0.2, "1/day", "respiration rate of zooplankton"),
    ParameterPrior("C_MFR", 0.19, 0.01, 0.8, "1/day", "maximum feeding rate"),
    ParameterPrior("C_DZ", 0.04, 0.01, 0.1, "1/day", "death rate of zooplankton"),
    ParameterPrior("C_FS", 5.0, 4.0, 6.0, "ug/L", "half-saturation constant of food"),
    ParameterPrior("C_BTP1", 27.0, 20.0, 34.0, "degC", "blue-green optimal temperature"),
    ParameterPrior("C_BTP2", 5.0, 1.0, 20.0, "degC", "diatom optimal temperature"),
    ParameterPrior("C_Fmin", 1.0, 0.1, 1.9, "ug/L", "minimum food concentration"),
    ParameterPrior("C_BL", 26.78, 24.0, 30.0, "MJ/m2/day", "best light for phytoplankton"),
    ParameterPrior("C_N", 0.0351, 0.02, 0.05, "mg/L", "half-saturation constant of nitrogen"),
    ParameterPrior("C_P", 0.00167, 0.001, 0.02, "mg/L", "half-saturation constant of phosphorus"),
    ParameterPrior("C_SI", 0.00467, 0.001, 0.2, "mg/L", "half-saturation constant of silica"),
    ParameterPrior("C_BMT", 0.04, 0.01, 0.07, "", "respiration multiplier on grazing"),
    ParameterPrior("C_PT", 0.005, 0.003, 0.2, "1/degC^2", "temperature coefficient of growth"),
)

PRIOR_MAP: dict[str, ParameterPrior] = {p.id: p for p in PRIORS}

# random constants introduced by revisions
R_PRIOR = ParameterPrior("R", 0.5, 0.0, 1.0, "", "random constant")


@dataclass(frozen=True)
class Variable:
    id: str
    unit: str
    description: str
    low: float    # plausible physical range, used for synthetic data
    high: float


VARIABLES: tuple[Variable, ...] = (
    Variable("V_lgt", "MJ/m2/day", "irradiance", 2.0, 30.0),
    Variable("V_n", "mg/L", "nitrogen concentration", 0.5, 5.0),
    Variable("V_p", "mg/L", "phosphorus concentration", 0.005, 0.3),
    Variable("V_si", "mg/L", "silica concentration", 0.5, 15.0),
    Variable("V_tmp", "degC", "water temperature", 2.0, 30.0),
    Variable("V_do", "mg/L", "dissolved oxygen", 6.0, 14.0),
    Variable("V_cd", "uS/cm", "electric conductivity", 150.0, 600.0),
    Variable("V_ph", "", "pH", 6.5, 9.0),
    Variable("V_alk", "mg/L", "alkalinity", 30.0, 90.0),
    Variable("V_sd", "m", "water transparency", 0.3, 2.5),
)

VARIABLE_IDS = tuple(v.id for v in VARIABLES)
STATE_IDS = ("B_Phy", "B_Zoo")
DEFAULT_ZOO0 = 1.0


def prior_means(priors: Sequence[ParameterPrior] = PRIORS) -> dict[str, float]:
    return {p.id: p.mean for p in priors}


# --------------------------------------------------------------------------
# subprocesses


def eval_subprocess_f(V_lgt, C_BL):
    """Light response, peaking at 1 when ``V_lgt == C_BL``."""
    x = np.asarray(V_lgt, dtype=float) / C_BL
    return x * np.exp(1.0 - x)


def eval_subprocess_g(V_n, V_p, V_si, C_N, C_P, C_SI):
    """Nutrient limitation: the smallest of three Monod terms."""
    V_n, V_p, V_si = (np.asarray(v, dtype=float) for v in (V_n, V_p, V_si))
    return np.minimum(np.minimum(V_n / (C_N + V_n), V_p / (C_P + V_p)), V_si / (C_SI + V_si))


def eval_subprocess_h(V_tmp, C_PT, C_BTP1, C_BTP2):
    """Temperature response with two optima (blue-green algae, diatoms)."""
    t = np.asarray(V_tmp, dtype=float)
    return np.maximum(np.exp(-C_PT * (t - C_BTP1) ** 2), np.exp(-C_PT * (t - C_BTP2) ** 2))


def eval_lambda(B_Phy, C_Fmin, C_FS):
    """Food availability for grazing, clamped to [0, 1]."""
    b = np.asarray(B_Phy, dtype=float)
    return np.clip((b - C_Fmin) / (C_FS + b - C_Fmin), 0.0, 1.0)


def manual_derivatives(B_Phy, B_Zoo, env: Mapping[str, float], c: Mapping[str, float]):
    """Right-hand sides of the unrevised model, straight from the formulas."""
    f = eval_subprocess_f(env["V_lgt"], c["C_BL"])
    g = eval_subprocess_g(env["V_n"], env["V_p"], env["V_si"], c["C_N"], c["C_P"], c["C_SI"])
    h = eval_subprocess_h(env["V_tmp"], c["C_PT"], c["C_BTP1"], c["C_BTP2"])
    lam = eval_lambda(B_Phy, c["C_Fmin"], c["C_FS"])
    mu_phy = c["C_UA"] * f * g * h
    phi = c["C_MFR"] * lam
    d_phy = B_Phy * (mu_phy - c["C_BRA"]) - B_Zoo * phi
    d_zoo = B_Zoo * (c["C_UZ"] * lam - (c["C_BRZ"] + c["C_BMT"] * phi) - c["C_DZ"])
    return float(d_phy), float(d_zoo)


# The same model as ordered S-expression definitions; later definitions may
# refer to earlier ones by name.
MANUAL_EQUATIONS: tuple[tuple[str, str], ...] = (
    ("f", "(* (/ V_lgt C_BL) (exp (- 1 (/ V_lgt C_BL))))"),
    ("g", "(min (min (/ V_n (+ C_N V_n)) (/ V_p (+ C_P V_p))) (/ V_si (+ C_SI V_si)))"),
    ("h", "(max (exp (neg (* C_PT (pow (- V_tmp C_BTP1) 2)))) "
          "(exp (neg (* C_PT (pow (- V_tmp C_BTP2) 2)))))"),
    ("lambda_Phy", "(max 0 (min 1 (/ (- B_Phy C_Fmin) (- (+ C_FS B_Phy) C_Fmin))))"),
    ("mu_Phy", "(* (* (* C_UA f) g) h)"),
    ("gamma_Phy", "C_BRA"),
    ("phi", "(* C_MFR lambda_Phy)"),
    ("dB_Phy", "(- (* B_Phy (- mu_Phy gamma_Phy)) (* B_Zoo phi))"),
    ("mu_Zoo", "(* C_UZ lambda_Phy)"),
    ("gamma_Zoo", "(+ C_BRZ (* C_BMT phi))"),
    ("delta_Zoo", "C_DZ"),
    ("dB_Zoo", "(* B_Zoo (- (- mu_Zoo gamma_Zoo) delta_Zoo))"),
)

DERIVATIVES = (("B_Phy", "dB_Phy"), ("B_Zoo", "dB_Zoo"))


def manual_defs() -> list[tuple[str, E.Expr]]:
    return [(n, E.parse_sexpr(s)) for n, s in MANUAL_EQUATIONS]


# --------------------------------------------------------------------------
# integration


@dataclass
class BioState:
    B_Phy: float
    B_Zoo: float
    t: int = 0
    invalid: bool = False


@dataclass
class CompiledModel:
    """A compiled system of definitions plus the state/derivative pairing."""
    program: Program
    states: tuple[tuple[str, str], ...] = DERIVATIVES
    params: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_defs(cls, defs: Sequence[tuple[str, E.Expr]], params: Mapping[str, float],
                  states=DERIVATIVES) -> CompiledModel:
        prog = compile_system(defs, outputs=[d for _, d in states])
        return cls(prog, tuple(states), dict(params))


def step(state: BioState, env: Mapping[str, float], model: CompiledModel, dt: float = 1.0) -> BioState:
    """One forward Euler step with clamping; non-finite derivatives flag the state."""
    from .compiler import eval_program_all
    variables = dict(env)
    variables["B_Phy"] = state.B_Phy
    variables["B_Zoo"] = state.B_Zoo
    out = eval_program_all(model.program, E.Environment(variables, model.params))
    new = {}
    invalid = state.invalid
    for s, d in model.states:
        dv = out[d]
        if not np.isfinite(dv):
            invalid = True
            dv = 0.0 if np.isnan(dv) else dv
        v = getattr(state, s) + dt * dv
        if not np.isfinite(v):
            invalid = True
        new[s] = v if v > 0.0 and np.isfinite(v) else 0.0
    return BioState(new["B_Phy"], new["B_Zoo"], state.t + 1, invalid)


def env_matrix(env: Mapping[str, np.ndarray], names: Sequence[str] = VARIABLE_IDS):
    """Stack variable series column-wise; returns ``(matrix, column map)``."""
    present = [n for n in names if n in env]
    mat = np.ascontiguousarray(np.column_stack([np.asarray(env[n], dtype=float) for n in present]))
    return mat, {n: i for i, n in enumerate(present)}


def simulate(model: CompiledModel, initial: BioState | Sequence[float],
             env: Mapping[str, np.ndarray], horizon: int, dt: float = 1.0) -> SimulationResult:
    """Daily B_Phy trajectory of length ``horizon``; ``trajectory[t]`` is the
    state at day ``t``, starting from ``initial``."""
    if isinstance(initial, BioState):
        s0 = [initial.B_Phy, initial.B_Zoo]
    else:
        s0 = list(initial)
    mat, cols = env_matrix(env)
    if mat.shape[0] < horizon:
        raise ValueError(f"environment covers {mat.shape[0]} days, horizon is {horizon}")
    return run_simulation(model.program, list(model.states), mat, cols, model.params,
                          s0, horizon, dt)


def simulate_reference(params: Mapping[str, float], initial: Sequence[float],
                       env: Mapping[str, np.ndarray], horizon: int, dt: float = 1.0) -> np.ndarray:
    """Pure-Python Euler integration of the unrevised model (test oracle)."""
    b_phy, b_zoo = float(initial[0]), float(initial[1])
    out = np.empty(horizon)
    for t in range(horizon):
        out[t] = b_phy
        if t == horizon - 1:
            break
        e = {k: float(np.asarray(v)[t]) for k, v in env.items()}
        d_phy, d_zoo = manual_derivatives(b_phy, b_zoo, e, params)
        b_phy = max(b_phy + dt * d_phy, 0.0)
        b_zoo = max(b_zoo + dt * d_zoo, 0.0)
    return out
