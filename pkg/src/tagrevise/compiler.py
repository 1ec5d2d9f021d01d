"""Compilation of expression trees to flat register programs.

A :class:`Program` is a single-static-assignment instruction list over a
register file laid out as ``[variables | parameters | instruction results]``.
Identical subexpressions share one register. Programs are executed by small
numba kernels, either once (:func:`eval_program`) or inside a whole forward
Euler simulation (:func:`run_simulation`), which removes per-node tree
walking from the fitness loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from numba import njit

from .expr import DIV_EPS, EXP_CLAMP, Environment, EnvError, Expr

OP_LIT, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_MIN, OP_MAX, OP_NEG, OP_LOG, OP_EXP, OP_POW = range(11)

_BINARY_CODES = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "min": OP_MIN, "max": OP_MAX}
_UNARY_CODES = {"neg": OP_NEG, "log": OP_LOG, "exp": OP_EXP}
_MNEMONIC = {OP_LIT: "lit", OP_ADD: "add", OP_SUB: "sub", OP_MUL: "mul", OP_DIV: "div",
             OP_MIN: "min", OP_MAX: "max", OP_NEG: "neg", OP_LOG: "log", OP_EXP: "exp",
             OP_POW: "pow"}

EXTRAPOLATE_IDENTITY = 0
EXTRAPOLATE_LINEAR = 1


@dataclass(frozen=True, eq=False)
class Program:
    ops: np.ndarray       # int64 opcodes
    a: np.ndarray         # int64 first operand register
    b: np.ndarray         # int64 second operand register (or pow exponent)
    imm: np.ndarray       # float64 literal values
    var_names: tuple[str, ...]
    param_names: tuple[str, ...]
    outputs: tuple[tuple[str, int], ...]

    @property
    def n_instructions(self) -> int:
        return len(self.ops)

    @property
    def base(self) -> int:
        return len(self.var_names) + len(self.param_names)

    @property
    def n_regs(self) -> int:
        return self.base + len(self.ops)

    def output_reg(self, name: str | None = None) -> int:
        if name is None:
            return self.outputs[0][1]
        return dict(self.outputs)[name]

    def listing(self) -> list[str]:
        """Human-readable instruction listing."""
        regname = {i: v for i, v in enumerate(self.var_names)}
        regname.update({len(self.var_names) + i: p for i, p in enumerate(self.param_names)})
        lines = []
        for i, op in enumerate(self.ops.tolist()):
            dst = f"r{self.base + i}"
            if op == OP_LIT:
                lines.append(f"{dst} = lit {float(self.imm[i])!r}")
                continue
            ra = regname.get(int(self.a[i]), f"r{int(self.a[i])}")
            if op in (OP_NEG, OP_LOG, OP_EXP):
                lines.append(f"{dst} = {_MNEMONIC[op]} {ra}")
            elif op == OP_POW:
                lines.append(f"{dst} = pow {ra} {int(self.b[i])}")
            else:
                rb = regname.get(int(self.b[i]), f"r{int(self.b[i])}")
                lines.append(f"{dst} = {_MNEMONIC[op]} {ra} {rb}")
        for name, reg in self.outputs:
            lines.append(f"ret {name} {regname.get(reg, f'r{reg}')}")
        return lines


class _Builder:
    def __init__(self, var_names, param_names, defs_names):
        self.var_index = {v: i for i, v in enumerate(var_names)}
        self.param_index = {p: len(var_names) + i for i, p in enumerate(param_names)}
        self.base = len(var_names) + len(param_names)
        self.defs: dict[str, int] = {}
        self.def_names = set(defs_names)
        self.ops: list[int] = []
        self.a: list[int] = []
        self.b: list[int] = []
        self.imm: list[float] = []
        self.memo: dict[tuple, int] = {}

    def emit(self, op: int, a: int = 0, b: int = 0, imm: float = 0.0) -> int:
        key = (op, a, b, imm if op == OP_LIT else 0.0)
        if op == OP_LIT:
            # keep -0.0 and 0.0 apart
            key = (op, a, b, repr(imm))
        reg = self.memo.get(key)
        if reg is not None:
            return reg
        reg = self.base + len(self.ops)
        self.ops.append(op)
        self.a.append(a)
        self.b.append(b)
        self.imm.append(imm)
        self.memo[key] = reg
        return reg

    def build(self, e: Expr) -> int:
        k = e.kind
        if k == "lit":
            return self.emit(OP_LIT, imm=e.value)
        if k == "var":
            if e.name in self.defs:
                return self.defs[e.name]
            return self.var_index[e.name]
        if k == "param":
            return self.param_index[e.name]
        if k == "unary":
            return self.emit(_UNARY_CODES[e.op], self.build(e.args[0]))
        if e.op == "pow":
            return self.emit(OP_POW, self.build(e.args[0]), int(e.args[1].value))
        return self.emit(_BINARY_CODES[e.op], self.build(e.args[0]), self.build(e.args[1]))


def _collect(defs: list[tuple[str, Expr]]):
    defined = set()
    var_names: list[str] = []
    param_names: list[str] = []
    seen_v, seen_p = set(), set()
    for name, e in defs:
        stack = [e]
        while stack:
            n = stack.pop()
            if n.kind == "var" and n.name not in defined and n.name not in seen_v:
                seen_v.add(n.name)
                var_names.append(n.name)
            elif n.kind == "param" and n.name not in seen_p:
                seen_p.add(n.name)
                param_names.append(n.name)
            stack.extend(n.args)
        defined.add(name)
    return var_names, param_names


def compile_system(defs: Iterable[tuple[str, Expr]], outputs: Iterable[str] | None = None,
                   var_names: Iterable[str] | None = None,
                   param_names: Iterable[str] | None = None) -> Program:
    """Compile ordered named definitions into one program.

    A definition may reference any earlier definition by name (as a
    variable). ``outputs`` defaults to every definition.
    """
    defs = list(defs)
    found_v, found_p = _collect(defs)
    vnames = list(var_names) if var_names is not None else found_v
    pnames = list(param_names) if param_names is not None else found_p
    missing = (set(found_v) - set(vnames)) | (set(found_p) - set(pnames))
    if missing:
        raise EnvError(f"identifiers without a slot: {sorted(missing)}")
    bld = _Builder(vnames, pnames, [n for n, _ in defs])
    for name, e in defs:
        bld.defs[name] = bld.build(e)
    outs = list(outputs) if outputs is not None else [n for n, _ in defs]
    return Program(np.asarray(bld.ops, dtype=np.int64), np.asarray(bld.a, dtype=np.int64),
                   np.asarray(bld.b, dtype=np.int64), np.asarray(bld.imm, dtype=np.float64),
                   tuple(vnames), tuple(pnames), tuple((o, bld.defs[o]) for o in outs))


def compile(e: Expr) -> Program:  # noqa: A001 - mirrors the operation name
    """Compile a single expression; its value is the program's only output."""
    return compile_system([("out", e)])


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _exec(ops, a, b, imm, regs, base):
    for i in range(ops.shape[0]):
        op = ops[i]
        if op == OP_LIT:
            v = imm[i]
        elif op == OP_ADD:
            v = regs[a[i]] + regs[b[i]]
        elif op == OP_SUB:
            v = regs[a[i]] - regs[b[i]]
        elif op == OP_MUL:
            v = regs[a[i]] * regs[b[i]]
        elif op == OP_DIV:
            d = regs[b[i]]
            if abs(d) < DIV_EPS:
                v = 1.0
            else:
                v = regs[a[i]] / d
        elif op == OP_MIN:
            x = regs[a[i]]
            y = regs[b[i]]
            v = x if x <= y else y
        elif op == OP_MAX:
            x = regs[a[i]]
            y = regs[b[i]]
            v = x if x >= y else y
        elif op == OP_NEG:
            v = -regs[a[i]]
        elif op == OP_LOG:
            x = regs[a[i]]
            if x == 0.0:
                v = 0.0
            else:
                v = np.log(abs(x))
        elif op == OP_EXP:
            x = regs[a[i]]
            if x > EXP_CLAMP:
                x = EXP_CLAMP
            elif x < -EXP_CLAMP:
                x = -EXP_CLAMP
            v = np.exp(x)
        else:  # OP_POW
            x = regs[a[i]]
            v = 1.0
            for _ in range(b[i]):
                v *= x
        regs[base + i] = v


@njit(cache=True)
def _eval_batch(ops, a, b, imm, base, n_regs, var_matrix, params, out_regs, result):
    regs = np.zeros(n_regs)
    nv = var_matrix.shape[1]
    for j in range(params.shape[0]):
        regs[nv + j] = params[j]
    for t in range(var_matrix.shape[0]):
        for j in range(nv):
            regs[j] = var_matrix[t, j]
        _exec(ops, a, b, imm, regs, base)
        for k in range(out_regs.shape[0]):
            result[t, k] = regs[out_regs[k]]


@njit(cache=True)
def _simulate(ops, a, b, imm, base, n_regs, var_cols, state_regs, deriv_regs,
              env, params, state0, dt, n_steps, obs, case_lo, n_cases,
              best, threshold, extrapolation, traj):
    # returns (fitness, cases evaluated, short-circuited, invalid, steps done)
    regs = np.zeros(n_regs)
    nv = var_cols.shape[0]
    for j in range(params.shape[0]):
        regs[nv + j] = params[j]
    ns = state0.shape[0]
    state = state0.copy()
    sse = 0.0
    k = 0
    limit = best * threshold
    for t in range(n_steps):
        traj[t] = state[0]
        if n_cases > 0 and t >= case_lo and k < n_cases:
            d = state[0] - obs[t]
            sse += d * d
            k += 1
            fit = np.sqrt(sse / n_cases)
            if fit > limit:
                if extrapolation == 0:
                    est = fit
                else:
                    est = np.sqrt(sse / k)
                if est > best:
                    return est, k, True, False, t + 1
        if t == n_steps - 1:
            break
        for j in range(nv):
            c = var_cols[j]
            if c >= 0:
                regs[j] = env[t, c]
        for s in range(ns):
            if state_regs[s] >= 0:
                regs[state_regs[s]] = state[s]
        _exec(ops, a, b, imm, regs, base)
        bad = False
        for s in range(ns):
            dv = regs[deriv_regs[s]] if deriv_regs[s] >= 0 else 0.0
            if not np.isfinite(dv):
                bad = True
                dv = 0.0 if np.isnan(dv) else dv
            v = state[s] + dt * dv
            if not v > 0.0:
                v = 0.0
            if not np.isfinite(v):
                bad = True
                v = 0.0
            state[s] = v
        if bad:
            for u in range(t + 1, n_steps):
                traj[u] = np.nan
            return np.inf, k, False, True, t + 1
    fit = np.sqrt(sse / n_cases) if n_cases > 0 else 0.0
    return fit, k, False, False, n_steps


# --------------------------------------------------------------------------
# Python-facing wrappers


def _params_vector(p: Program, params: Mapping[str, float]) -> np.ndarray:
    try:
        return np.array([params[n] for n in p.param_names], dtype=np.float64)
    except KeyError as exc:
        raise EnvError(f"unbound parameter {exc.args[0]!r}") from None


def eval_program(p: Program, env: Environment, output: str | None = None) -> float:
    """Run the program once; returns the named (or first) output."""
    regs = np.zeros(p.n_regs)
    try:
        for i, v in enumerate(p.var_names):
            regs[i] = env.variables[v]
    except KeyError as exc:
        raise EnvError(f"unbound variable {exc.args[0]!r}") from None
    regs[len(p.var_names):p.base] = _params_vector(p, env.parameters)
    _exec(p.ops, p.a, p.b, p.imm, regs, p.base)
    return float(regs[p.output_reg(output)])


def eval_program_all(p: Program, env: Environment) -> dict[str, float]:
    regs = np.zeros(p.n_regs)
    for i, v in enumerate(p.var_names):
        regs[i] = env.variables[v]
    regs[len(p.var_names):p.base] = _params_vector(p, env.parameters)
    _exec(p.ops, p.a, p.b, p.imm, regs, p.base)
    return {name: float(regs[r]) for name, r in p.outputs}


def eval_program_batch(p: Program, variables: Mapping[str, np.ndarray],
                       params: Mapping[str, float]) -> dict[str, np.ndarray]:
    """Evaluate the program for every row of the variable columns."""
    cols = [np.asarray(variables[v], dtype=np.float64) for v in p.var_names]
    n = len(cols[0]) if cols else 1
    mat = np.column_stack(cols) if cols else np.zeros((n, 0))
    out_regs = np.array([r for _, r in p.outputs], dtype=np.int64)
    result = np.empty((n, len(out_regs)))
    _eval_batch(p.ops, p.a, p.b, p.imm, p.base, p.n_regs, np.ascontiguousarray(mat),
                _params_vector(p, params), out_regs, result)
    return {name: result[:, k] for k, (name, _) in enumerate(p.outputs)}


@dataclass
class SimulationResult:
    trajectory: np.ndarray
    fitness: float
    evaluated_cases: int
    short_circuited: bool
    invalid: bool
    steps: int


def run_simulation(p: Program, states: list[tuple[str, str]], env: np.ndarray,
                   env_columns: Mapping[str, int], params: Mapping[str, float] | np.ndarray,
                   state0: Iterable[float], n_steps: int, dt: float = 1.0,
                   observed: np.ndarray | None = None, case_range: tuple[int, int] | None = None,
                   best: float = np.inf, threshold: float = np.inf,
                   extrapolation: int = EXTRAPOLATE_IDENTITY) -> SimulationResult:
    """Forward Euler integration of the compiled derivatives.

    ``states`` pairs each state variable with the output holding its
    derivative; the first state is the predicted (observed) quantity. When
    ``observed`` and ``case_range = (lo, hi)`` are given, days ``lo..hi-1``
    are fitness cases and the RMSE is accumulated with evaluation
    short-circuiting against ``best``.
    """
    var_cols = np.array([env_columns.get(v, -1) for v in p.var_names], dtype=np.int64)
    state_names = [s for s, _ in states]
    for v, c in zip(p.var_names, var_cols):
        if c < 0 and v not in state_names:
            raise EnvError(f"variable {v!r} has no data column")
    vindex = {v: i for i, v in enumerate(p.var_names)}
    state_regs = np.array([vindex.get(s, -1) for s in state_names], dtype=np.int64)
    outputs = dict(p.outputs)
    deriv_regs = np.array([outputs.get(d, -1) for _, d in states], dtype=np.int64)
    pvec = params if isinstance(params, np.ndarray) else _params_vector(p, params)
    s0 = np.asarray(list(state0), dtype=np.float64)
    traj = np.empty(n_steps)
    if observed is None or case_range is None:
        obs = np.zeros(n_steps)
        lo, n_cases = 0, 0
    else:
        obs = np.asarray(observed, dtype=np.float64)
        lo, hi = case_range
        n_cases = max(0, min(hi, n_steps) - lo)
    fit, k, sc, bad, steps = _simulate(p.ops, p.a, p.b, p.imm, p.base, p.n_regs, var_cols,
                                       state_regs, deriv_regs, env, pvec, s0, float(dt),
                                       int(n_steps), obs, int(lo), int(n_cases), float(best),
                                       float(threshold), int(extrapolation), traj)
    return SimulationResult(traj[:steps] if sc else traj, float(fit), int(k), bool(sc), bool(bad), int(steps))
