"""Command-line interface: ``tagrevise <command> [options]``.

Commands: revise, calibrate, simulate, evaluate, gen-synthetic, analyze.
Every command either writes its complete set of artifacts or exits with a
nonzero status and a message on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import evolution as V
from . import expr as E
from . import hydrology as H
from . import knowledge as K
from .analysis import AnalysisError, selectivity_report, simulate_model
from .metrics import mae, rmse
from .process import DEFAULT_ZOO0

TOP_K = 50


class CLIError(Exception):
    pass


# --------------------------------------------------------------------------
# output helpers


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def write_artifacts(out: Path, files: dict[str, str]) -> None:
    """Write all files or none: each goes to a temporary name first and is
    renamed into place only once every file has been written."""
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, out / name))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, dst in staged:
        os.replace(tmp, dst)


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# configuration


def _coerce(field: dataclasses.Field, text: str):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    if kind == "bool":
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise CLIError(f"{field.name}: expected a boolean, got {text!r}")
    conv = {"int": int, "float": float, "str": str}.get(kind)
    if conv is None:
        raise CLIError(f"{field.name}: cannot override a {kind} field")
    try:
        return conv(text)
    except ValueError:
        raise CLIError(f"{field.name}: expected {kind}, got {text!r}") from None


def run_config(args, calibration: bool = False) -> V.RunConfig:
    kw = {}
    table = {f.name: f for f in dataclasses.fields(V.RunConfig)}
    for item in args.set or []:
        key, sep, val = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in table:
            raise CLIError(f"bad override {item!r}; fields are {', '.join(table)}")
        kw[key] = _coerce(table[key], val.strip())
    for name in ("seed", "generations", "popsize", "threshold", "extrapolation"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    try:
        return V.RunConfig.calibration(**kw) if calibration else V.RunConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise CLIError(str(exc)) from None


def load_spec(args) -> K.KnowledgeSpec:
    if args.knowledge:
        if not Path(args.knowledge).is_file():
            raise CLIError(f"file not found: {args.knowledge}")
        return K.load_knowledge(args.knowledge)
    return K.river_knowledge()


def load_data(args, spec: K.KnowledgeSpec) -> V.FitnessData:
    for name in ("data", "split"):
        path = getattr(args, name)
        if not path:
            raise CLIError(f"--{name} is required")
        if not Path(path).is_file():
            raise CLIError(f"file not found: {path}")
    series = H.load_csv(args.data)
    split = H.load_split(args.split)
    net = None
    if args.network:
        if not Path(args.network).is_file():
            raise CLIError(f"file not found: {args.network}")
        net = H.load_network(args.network)
    zoo0 = spec.initial("B_Zoo", DEFAULT_ZOO0)
    return V.FitnessData.from_series(series, split, net, args.mode, zoo0)


# --------------------------------------------------------------------------
# commands


def _history_csv(history: list[dict]) -> str:
    cols = ["generation", "bestRMSE", "meanRMSE", "cacheHitRate", "shortCircuitRate"]
    return csv_text(cols, ([h[c] for c in cols] for h in history))


def top_models(result: V.RunResult, evaluator: V.Evaluator, grammar, k: int = TOP_K) -> list[dict]:
    """Distinct valid models of the final population, best test RMSE first.
    Each is re-simulated in full, so short-circuited members are included."""
    seen = set()
    rows = []
    for ind in [result.best] + list(result.population):
        if ind.fitness is None or ind.fitness.invalid:
            continue
        key = (ind.derivation.signature(),
               tuple(sorted((n, repr(v)) for n, v in ind.all_params().items())))
        if key in seen:
            continue
        seen.add(key)
        m = evaluator.metrics(ind)
        if not all(math.isfinite(v) for v in m.values()):
            continue
        model = V.export_model(ind, grammar)
        model["metrics"] = m
        rows.append((m["test_rmse"], len(rows), model))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in rows[:k]]


def _run(args, calibration: bool) -> int:
    spec = load_spec(args)
    cfg = run_config(args, calibration)
    data = load_data(args, spec)
    grammar = K.build_grammar(spec)
    ev = V.Evaluator(grammar, data, cfg.threshold, cfg.extrapolation, cfg.compiled, cfg.cache,
                     spec.state_pairs or V.DERIVATIVES)
    t0 = time.perf_counter()
    progress = None
    if args.verbose:
        def progress(row):
            print(f"gen {row['generation']:4d} best {row['bestRMSE']:.6g} "
                  f"mean {row['meanRMSE']:.6g}", file=sys.stderr)
    runner = V.run_calibration if calibration else V.run_revision
    res = runner(cfg, grammar, spec.priors, evaluator=ev, progress=progress)
    elapsed = time.perf_counter() - t0
    model = dict(res.model)
    model["initial"] = {"B_Phy": data.state0[0], "B_Zoo": data.state0[1]}
    metrics = dict(res.metrics)
    metrics.update({"split": data.split_id, "seed": cfg.seed,
                    "command": "calibrate" if calibration else "revise"})
    files = {
        "best_model.json": dumps_json(model),
        "history.csv": _history_csv(res.history),
        "metrics.json": dumps_json(metrics),
        "top_models.json": dumps_json(top_models(res, ev, grammar)),
        "run_config.json": dumps_json(cfg.to_json()),
        "counters.json": dumps_json(res.counters),
    }
    write_artifacts(Path(args.out), files)
    print(f"train RMSE {metrics['train_rmse']:.6g}  test RMSE {metrics['test_rmse']:.6g}  "
          f"({elapsed:.1f} s) -> {args.out}")
    return 0


def cmd_revise(args) -> int:
    return _run(args, calibration=False)


def cmd_calibrate(args) -> int:
    return _run(args, calibration=True)


def _load_model(args, spec: K.KnowledgeSpec) -> dict:
    if args.model:
        return _read_json(args.model)
    grammar = K.build_grammar(spec)
    d = K.initial_derivation(grammar)
    params = {p.id: p.mean for p in spec.priors}
    return {"equations": K.model_sexprs(d, grammar), "parameters": params}


def _model_state0(model: dict, data: V.FitnessData) -> tuple[float, float]:
    init = model.get("initial") or {}
    return (data.state0[0], float(init.get("B_Zoo", data.state0[1])))


def cmd_simulate(args) -> int:
    spec = load_spec(args)
    data = load_data(args, spec)
    model = _load_model(args, spec)
    states = spec.state_pairs or V.DERIVATIVES
    traj = simulate_model(model, data.env, data.columns, _model_state0(model, data), None, states)
    metrics = _split_metrics(traj, data)
    rows = ((i, traj[i], data.observed[i]) for i in range(data.n_rows))
    write_artifacts(Path(args.out), {
        "trajectory.csv": csv_text(["day", "predicted", "observed"], rows),
        "metrics.json": dumps_json(metrics),
    })
    print(f"train RMSE {metrics['train_rmse']:.6g}  test RMSE {metrics['test_rmse']:.6g}")
    return 0


def _split_metrics(traj: np.ndarray, data: V.FitnessData) -> dict:
    out = {}
    for part, (a, b) in (("train", data.train), ("test", data.test)):
        p, o = traj[a:b], data.observed[a:b]
        ok = np.all(np.isfinite(p))
        out[f"{part}_rmse"] = rmse(p, o) if ok else math.inf
        out[f"{part}_mae"] = mae(p, o) if ok else math.inf
    return out


def cmd_evaluate(args) -> int:
    if args.predictions:
        p = Path(args.predictions)
        if not p.is_file():
            raise CLIError(f"file not found: {p}")
        with open(p, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or not {"predicted", "observed"} <= set(reader.fieldnames):
                raise CLIError("predictions file needs 'predicted' and 'observed' columns")
            rows = [(float(r["predicted"]), float(r["observed"])) for r in reader]
        if not rows:
            raise CLIError("predictions file is empty")
        pred, obs = np.array(rows).T
        metrics = {"rmse": rmse(pred, obs), "mae": mae(pred, obs), "n": len(rows)}
    else:
        spec = load_spec(args)
        data = load_data(args, spec)
        model = _load_model(args, spec)
        traj = simulate_model(model, data.env, data.columns, _model_state0(model, data), None,
                              spec.state_pairs or V.DERIVATIVES)
        metrics = _split_metrics(traj, data)
    text = dumps_json(metrics)
    if args.out:
        write_artifacts(Path(args.out), {"metrics.json": text})
    sys.stdout.write(text)
    return 0


def cmd_gen_synthetic(args) -> int:
    kw = {}
    if args.days is not None:
        kw["n_days"] = args.days
    if args.noise is not None:
        kw["noise"] = args.noise
    if args.truth is not None:
        kw["truth"] = args.truth
    sc = H.Scenario.recovery(**kw)
    rng = np.random.default_rng(args.seed)
    series = H.gen_synthetic(sc, rng)
    split = sc.default_split()
    # the knowledge file carries the generating parameter values as prior means
    params = H.truth_parameters(sc)
    spec = K.river_knowledge().adjusted(params, {"B_Zoo": sc.B_Zoo0})
    obj = spec.to_json()
    truth = {"equations": {n: E.to_sexpr(e) for n, e in H.truth_defs(sc)},
             "parameters": params, "initial": {"B_Phy": sc.B_Phy0, "B_Zoo": sc.B_Zoo0}}
    write_artifacts(Path(args.out), {
        "data.csv": series.to_csv_text(),
        "split.json": dumps_json(split.to_json()),
        "network.json": dumps_json(H.RiverNetwork.single(sc.station).to_json()),
        "knowledge.json": dumps_json(obj),
        "truth_model.json": dumps_json(truth),
        "scenario.json": dumps_json(sc.to_json()),
    })
    print(f"wrote {sc.n_days} days of synthetic data to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    spec = load_spec(args)
    models = []
    for path in args.models:
        obj = _read_json(path)
        models.extend(obj if isinstance(obj, list) else [obj])

    def test_rmse(m):
        v = (m.get("metrics") or {}).get("test_rmse")
        return math.inf if v is None else float(v)

    order = sorted(range(len(models)), key=lambda i: (test_rmse(models[i]), i))
    models = [models[i] for i in order]
    grammar = K.build_grammar(spec)
    baseline = K.model_sexprs(K.initial_derivation(grammar), grammar)
    data = load_data(args, spec) if args.data else None
    try:
        report = selectivity_report(models, data, args.K, spec.variable_ids, baseline, args.delta)
    except AnalysisError as exc:
        raise CLIError(str(exc)) from None
    rows = ((v, r["selectivity"], r.get("perturbation", ""), r.get("sign", ""))
            for v, r in report.items())
    write_artifacts(Path(args.out), {
        "selectivity.json": dumps_json({"K": args.K, "delta": args.delta, "variables": report}),
        "selectivity.csv": csv_text(["variable", "selectivity", "perturbation", "sign"], rows),
    })
    for v, r in report.items():
        print(f"{v:8s} {r['selectivity']:6.1f}%  {r.get('perturbation', '')}")
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tagrevise",
                                 description="Knowledge-guided revision of process models.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--knowledge", help="knowledge JSON (default: packaged river model)")
        p.add_argument("--network", help="river network JSON")
        p.add_argument("--data", help="long-form measurement CSV")
        p.add_argument("--split", help="train/test split JSON")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--mode", default=H.SINGLE_STATION, choices=[H.SINGLE_STATION, H.NETWORK])
        return p

    for name, fn, helptext in (("revise", cmd_revise, "revise structure and parameters"),
                               ("calibrate", cmd_calibrate, "tune parameters only")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--seed", type=int)
        p.add_argument("--generations", type=int)
        p.add_argument("--popsize", type=int)
        p.add_argument("--threshold", type=float)
        p.add_argument("--extrapolation", choices=sorted(V.EXTRAPOLATIONS))
        p.add_argument("--set", action="append", metavar="FIELD=VALUE",
                       help="override any run setting, e.g. --set local_search_steps=0")
        p.add_argument("-v", "--verbose", action="store_true")
        p.set_defaults(func=fn)

    p = common(sub.add_parser("simulate", help="simulate a model over the split"))
    p.add_argument("--model", help="model JSON (default: unrevised model at prior means)")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("evaluate", help="RMSE/MAE of predictions or of a model"),
               out_required=False)
    p.add_argument("--model")
    p.add_argument("--predictions", help="CSV with 'predicted' and 'observed' columns")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen-synthetic", help="write a synthetic single-station dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--truth", choices=["manual", "temperature-respiration"])
    p.set_defaults(func=cmd_gen_synthetic)

    p = common(sub.add_parser("analyze", help="variable selectivity and perturbation response"))
    p.add_argument("models", nargs="+", help="top_models.json or model JSON files")
    p.add_argument("--K", type=int, default=TOP_K)
    p.add_argument("--delta", type=float, default=0.1)
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, H.DataError, K.SpecError, V.T.TAGError, ValueError, KeyError,
            json.JSONDecodeError, OSError) as exc:
        print(f"tagrevise {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
