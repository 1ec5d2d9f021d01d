"""River network routing, measurement ingestion and synthetic scenarios.

Measurements are long-form CSV rows ``date,station,variable,value``. Days
are indexed from the earliest date in the file. Flow is the variable ``F``
and local runoff ``R``; observed phytoplankton biomass is ``B_Phy``.
"""

from __future__ import annotations

import csv
import io
import datetime as dt
import json
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .process import VARIABLES, DEFAULT_ZOO0

FLOW = "F"
RUNOFF = "R"
OBSERVED = "B_Phy"
SINGLE_STATION = "single-station"
NETWORK = "network"


class DataError(ValueError):
    pass


def interpolate(days: Sequence[float], values: Sequence[float], n_days: int | None = None,
                start: int = 0) -> np.ndarray:
    """Daily series from sparse observations: linear in between, held
    constant before the first and after the last observation."""
    x = np.asarray(days, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DataError("interpolation needs at least two observations")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if np.any(np.diff(x) <= 0):
        raise DataError("observation days must be strictly increasing")
    if n_days is None:
        n_days = int(x[-1]) + 1 - start
    grid = np.arange(start, start + n_days, dtype=float)
    return np.interp(grid, x, y)


# --------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class Station:
    id: str
    r: float = 0.0          # retention ratio
    virtual: bool = False


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    delta: int = 1          # travel time in days


@dataclass
class RiverNetwork:
    stations: dict[str, Station]
    edges: list[Edge]
    target: str

    def __post_init__(self):
        for e in self.edges:
            for s in (e.src, e.dst):
                if s not in self.stations:
                    raise DataError(f"edge references unknown station {s!r}")
            if e.delta < 0:
                raise DataError(f"edge {e.src}->{e.dst}: negative travel time")
        if self.target not in self.stations:
            raise DataError(f"unknown target station {self.target!r}")
        for s in self.stations.values():
            if not 0.0 <= s.r <= 1.0:
                raise DataError(f"station {s.id}: retention ratio outside [0, 1]")
        try:
            self.order = list(TopologicalSorter(
                {s: [e.src for e in self.incoming(s)] for s in self.stations}).static_order())
        except CycleError:
            raise DataError("river network contains a cycle") from None
        for s in self.stations.values():
            if len(self.incoming(s.id)) >= 2 and not s.virtual:
                raise DataError(f"confluence {s.id} must be a virtual station")

    def incoming(self, station: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == station]

    def sources(self) -> list[str]:
        return [s for s in self.order if not self.incoming(s)]

    def upstream_of(self, station: str) -> set[str]:
        out, todo = set(), [station]
        while todo:
            for e in self.incoming(todo.pop()):
                if e.src not in out:
                    out.add(e.src)
                    todo.append(e.src)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> RiverNetwork:
        stations = {s["id"]: Station(s["id"], float(s.get("r", 0.0)), bool(s.get("virtual", False)))
                    for s in obj["stations"]}
        edges = [Edge(e["from"], e["to"], int(e.get("delta_days", 1))) for e in obj.get("edges", [])]
        return cls(stations, edges, obj["target"])

    def to_json(self) -> dict:
        return {"stations": [{"id": s.id, "r": s.r, "virtual": s.virtual}
                             for s in self.stations.values()],
                "edges": [{"from": e.src, "to": e.dst, "delta_days": e.delta} for e in self.edges],
                "target": self.target}

    @classmethod
    def single(cls, station: str = "S1") -> RiverNetwork:
        return cls({station: Station(station)}, [], station)


def load_network(path: str | Path) -> RiverNetwork:
    with open(path, encoding="utf-8") as fh:
        return RiverNetwork.from_json(json.load(fh))


def route_flow(F_B: float, r_B: float, upstream: Iterable[tuple[float, float]], R_B: float) -> float:
    """Mass balance at station B: retained own water, released upstream water
    and local runoff. ``upstream`` holds ``(F_A at t, r_A)`` pairs."""
    return r_B * F_B + sum((1.0 - r_A) * F_A for F_A, r_A in upstream) + R_B


def merge_parcels(flows: Sequence[float], values: Sequence[float]) -> float:
    """Flow-weighted average of a variable over merging water parcels."""
    w = np.asarray(flows, dtype=float)
    v = np.asarray(values, dtype=float)
    total = w.sum()
    if total <= 0.0:
        return float(v.mean())
    return float((w * v).sum() / total)


# --------------------------------------------------------------------------
# measurements


@dataclass
class MeasurementSeries:
    """Sparse observations per ``(station, variable)`` on a day index."""
    points: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    start_date: dt.date = dt.date(2000, 1, 1)
    n_days: int = 0

    def add(self, station: str, variable: str, days, values) -> None:
        d = np.asarray(days, dtype=np.int64)
        v = np.asarray(values, dtype=float)
        if d.size and np.any(np.diff(d) <= 0):
            raise DataError(f"{station}/{variable}: days must be strictly increasing")
        self.points[(station, variable)] = (d, v)
        if d.size:
            self.n_days = max(self.n_days, int(d[-1]) + 1)

    def stations(self) -> list[str]:
        return sorted({s for s, _ in self.points})

    def variables(self, station: str) -> list[str]:
        return sorted(v for s, v in self.points if s == station)

    def has(self, station: str, variable: str) -> bool:
        return (station, variable) in self.points

    def daily(self, station: str, variable: str, n_days: int | None = None) -> np.ndarray:
        days, values = self.points[(station, variable)]
        n = self.n_days if n_days is None else n_days
        if days.size == n and np.array_equal(days, np.arange(n)):
            return values.astype(float).copy()
        return interpolate(days, values, n)

    def station_frame(self, station: str, n_days: int | None = None) -> dict[str, np.ndarray]:
        return {v: self.daily(station, v, n_days) for v in self.variables(station)}

    def to_csv_text(self) -> str:
        rows = []
        for (s, v), (days, vals) in self.points.items():
            for d, x in zip(days.tolist(), vals.tolist()):
                rows.append((d, s, v, x))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "station", "variable", "value"])
        for d, s, v, x in rows:
            w.writerow([(self.start_date + dt.timedelta(days=d)).isoformat(), s, v, repr(float(x))])
        return buf.getvalue()

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv_text())


def load_csv(path: str | Path) -> MeasurementSeries:
    """Read long-form measurements (``date,station,variable,value``)."""
    raw: dict[tuple[str, str], dict[dt.date, float]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "station", "variable", "value"]:
            raise DataError("CSV header must be date,station,variable,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"line {lineno}: expected 4 fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[0].strip())
                value = float(row[3])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            key = (row[1].strip(), row[2].strip())
            if day in raw.setdefault(key, {}):
                raise DataError(f"line {lineno}: duplicate observation for {key} on {day}")
            raw[key][day] = value
    if not raw:
        raise DataError("no measurements in file")
    start = min(min(v) for v in raw.values())
    out = MeasurementSeries(start_date=start)
    for key, obs in raw.items():
        dates = sorted(obs)
        out.add(key[0], key[1], [(d - start).days for d in dates], [obs[d] for d in dates])
    return out


@dataclass(frozen=True)
class DataSplit:
    """Inclusive day-index ranges for training and testing."""
    train: tuple[int, int]
    test: tuple[int, int]
    id: str = "default"

    def __post_init__(self):
        (a, b), (c, d) = self.train, self.test
        if not (0 <= a <= b and c <= d):
            raise DataError(f"malformed split {self.train} / {self.test}")
        if c <= b:
            raise DataError("test range must come after the training range")

    @property
    def n_days(self) -> int:
        return self.test[1] + 1

    @classmethod
    def from_json(cls, obj: dict) -> DataSplit:
        return cls(tuple(obj["train"]), tuple(obj["test"]),
                   obj.get("id", f"train{obj['train'][0]}-{obj['train'][1]}"
                                 f"_test{obj['test'][0]}-{obj['test'][1]}"))

    def to_json(self) -> dict:
        return {"id": self.id, "train": list(self.train), "test": list(self.test)}


def load_split(path: str | Path) -> DataSplit:
    with open(path, encoding="utf-8") as fh:
        return DataSplit.from_json(json.load(fh))


# --------------------------------------------------------------------------
# environment at the target


def route_network(net: RiverNetwork, data: MeasurementSeries, n_days: int,
                  variables: Sequence[str]) -> dict[str, dict[str, np.ndarray]]:
    """Route flow and variable attributes through the network.

    Source stations take their measured flow and variables. Downstream, flow
    follows the mass balance and each variable is the flow-weighted mix of
    retained water, released upstream parcels and local runoff (runoff
    carries the station's own measurement when it has one).
    """
    out: dict[str, dict[str, np.ndarray]] = {}
    for s in net.order:
        st = net.stations[s]
        inc = net.incoming(s)
        runoff = data.daily(s, RUNOFF, n_days) if data.has(s, RUNOFF) else np.zeros(n_days)
        if not inc:
            if not data.has(s, FLOW):
                raise DataError(f"source station {s} has no flow series")
            frame = {FLOW: data.daily(s, FLOW, n_days)}
            for v in variables:
                if not data.has(s, v):
                    raise DataError(f"source station {s} has no series for {v}")
                frame[v] = data.daily(s, v, n_days)
            out[s] = frame
            continue
        lag = max(1, min(e.delta for e in inc))
        F = np.zeros(n_days)
        V = {v: np.zeros(n_days) for v in variables}
        local = {v: data.daily(s, v, n_days) for v in variables if data.has(s, v)}
        for t in range(n_days):
            tb = max(t - lag, 0)
            parcels_f = [st.r * F[tb] if t > 0 else 0.0]
            parcels_v = {v: [V[v][tb]] for v in variables}
            for e in inc:
                ta = max(t - e.delta, 0)
                up = out[e.src]
                parcels_f.append((1.0 - net.stations[e.src].r) * up[FLOW][ta])
                for v in variables:
                    parcels_v[v].append(up[v][ta])
            F[t] = sum(parcels_f) + runoff[t]
            for v in variables:
                fl, vals = list(parcels_f), parcels_v[v]
                if v in local:
                    fl.append(runoff[t])
                    vals = vals + [local[v][t]]
                if t == 0 and len(vals) > 1:
                    fl, vals = fl[1:], vals[1:]   # no retained water yet
                V[v][t] = merge_parcels(fl, vals)
        frame = {FLOW: F}
        frame.update(V)
        out[s] = frame
    return out


def env_series_at_target(net: RiverNetwork, data: MeasurementSeries, mode: str = SINGLE_STATION,
                         n_days: int | None = None,
                         variables: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Daily temporal variables seen by the biological process at the target."""
    n = data.n_days if n_days is None else n_days
    names = list(variables) if variables is not None else [v.id for v in VARIABLES]
    if mode == SINGLE_STATION:
        missing = [v for v in names if not data.has(net.target, v)]
        if missing:
            raise DataError(f"target {net.target} lacks series for {missing}")
        return {v: data.daily(net.target, v, n) for v in names}
    if mode == NETWORK:
        return {v: x for v, x in route_network(net, data, n, names)[net.target].items() if v in names}
    raise DataError(f"unknown mode {mode!r}")


def observed_at_target(net: RiverNetwork, data: MeasurementSeries, n_days: int | None = None) -> np.ndarray:
    if not data.has(net.target, OBSERVED):
        raise DataError(f"no {OBSERVED} observations at {net.target}")
    return data.daily(net.target, OBSERVED, data.n_days if n_days is None else n_days)


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class Scenario:
    """Configuration of a synthetic single-station dataset."""
    n_days: int = 365
    station: str = "S1"
    noise: float = 0.0                 # relative sd of multiplicative observation noise
    variable_noise: float = 0.02       # relative sd of day-to-day variable jitter
    obs_every: int = 1                 # keep every n-th B_Phy observation
    B_Phy0: float = 5.0
    B_Zoo0: float = DEFAULT_ZOO0
    truth: str = "manual"              # "manual" or "temperature-respiration"
    params: dict[str, float] = field(default_factory=dict)
    revision_scale: float = 0.08       # gamma_Phy = C_BRA * scale * V_tmp for the revised truth
    flow: float = 100.0

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def recovery(cls, **kw) -> Scenario:
        """Three years of daily data from the model with temperature-scaled
        phytoplankton respiration. The parameters keep both populations
        bounded and oscillating."""
        base = dict(n_days=1095, noise=0.02, B_Zoo0=3.7, truth="temperature-respiration",
                    revision_scale=1.0,
                    params=dict(C_UA=0.75, C_BRA=0.0143, C_MFR=0.23, C_UZ=0.27, C_DZ=0.015,
                                C_BRZ=0.014))
        base.update(kw)
        return cls(**base)

    def default_split(self) -> DataSplit:
        """First two thirds for training, the rest held out."""
        cut = (2 * self.n_days) // 3
        return DataSplit((0, cut - 1), (cut, self.n_days - 1), f"synthetic-{self.n_days}")


SEASONAL_PHASE = {"V_lgt": 80, "V_tmp": 110, "V_do": -90, "V_n": -60, "V_p": 30,
                  "V_si": -30, "V_cd": 200, "V_ph": 120, "V_alk": 20, "V_sd": 240}


def seasonal_variables(n_days: int, rng: np.random.Generator, jitter: float = 0.02) -> dict[str, np.ndarray]:
    t = np.arange(n_days, dtype=float)
    out = {}
    for v in VARIABLES:
        mid, amp = (v.low + v.high) / 2, (v.high - v.low) / 2
        phase = SEASONAL_PHASE.get(v.id, 0)
        x = mid + 0.85 * amp * np.sin(2 * np.pi * (t - phase) / 365.0)
        x = x * (1.0 + jitter * rng.standard_normal(n_days))
        out[v.id] = np.clip(x, v.low, v.high)
    return out


def truth_defs(scenario: Scenario):
    """Ground-truth model definitions for a scenario."""
    from . import expr as E
    from .process import manual_defs
    defs = manual_defs()
    if scenario.truth == "manual":
        return defs
    if scenario.truth == "temperature-respiration":
        temp = E.var("V_tmp")
        if scenario.revision_scale != 1.0:
            temp = E.binary("*", temp, E.lit(scenario.revision_scale))
        repl = E.binary("*", E.param("C_BRA"), temp)
        return [(n, repl if n == "gamma_Phy" else e) for n, e in defs]
    raise DataError(f"unknown ground truth {scenario.truth!r}")


def truth_parameters(scenario: Scenario) -> dict[str, float]:
    from .process import prior_means
    params = prior_means()
    params.update(scenario.params)
    return params


def gen_synthetic(scenario: Scenario, rng: np.random.Generator) -> MeasurementSeries:
    """Seasonal variables plus B_Phy simulated from the ground-truth model."""
    from .process import CompiledModel, simulate

    env = seasonal_variables(scenario.n_days, rng, scenario.variable_noise)
    model = CompiledModel.from_defs(truth_defs(scenario), truth_parameters(scenario))
    sim = simulate(model, [scenario.B_Phy0, scenario.B_Zoo0], env, scenario.n_days)
    if sim.invalid:
        raise DataError("ground-truth simulation became non-finite")
    obs = sim.trajectory.copy()
    if scenario.noise > 0:
        obs = obs * np.exp(scenario.noise * rng.standard_normal(obs.size))
    days = np.arange(scenario.n_days)
    out = MeasurementSeries()
    for v, x in env.items():
        out.add(scenario.station, v, days, x)
    keep = days[::max(1, scenario.obs_every)]
    if keep[-1] != days[-1]:
        keep = np.append(keep, days[-1])
    out.add(scenario.station, OBSERVED, keep, obs[keep])
    out.add(scenario.station, FLOW, days, np.full(scenario.n_days, scenario.flow))
    return out
