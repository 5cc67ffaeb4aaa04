"""Command line: ``wdr simulate | fit | predict | evaluate``.

Options can come from an INI file (``--config``, section named after the
subcommand); flags given on the command line override it.  Every run writes
the resolved options next to its outputs.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import multiprocessing
import sys
from pathlib import Path

import numpy as np

from .data import CsvSchema, TimeKind, load_csv, write_csv
from .errors import NumericalError, WDRError
from .gibbs import McmcConfig, read_trace, run_chain
from .map_estimator import MapConfig, MapParams, fit_map
from .metrics import UndefinedMetricError, brier_score, c_index, classification_metrics
from .model import HyperParams, ModelState
from .predict import (cif_curves, event_probabilities, write_cif_csv,
                      write_event_probability_csv)
from .rng import RngStream
from .synth import generate, scenario

log = logging.getLogger("wdr")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _categorical(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        for part in str(item).split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise UsageError(f"categorical spec {part!r} must look like column=baseline")
            col, base = part.split("=", 1)
            out[col.strip()] = base.strip()
    return out


def _bool(text) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


DEFAULTS = {
    "simulate": dict(scenario=1, n=2000),
    "fit": dict(method="mcmc", k=10, j=None, iters=20_000, burnin=15_000, thin=5,
                chains=1, dump_beta=True, paper_scale=False, prune=True,
                m=10, epochs=100, lr=0.01, minibatch=100, prior_r="gamma_small",
                dof=3.0, adaptive=False),
    "predict": dict(n_mc=200, seed=0, times="0.4,0.8,1.2,1.6,2.0", event_probability=False,
                    j=None),
    "evaluate": dict(n_mc=200, seed=0, times="0.4,0.8,1.2,1.6,2.0", j=None),
}
REQUIRED = {"simulate": ("seed", "out"), "fit": ("seed", "data", "out"),
            "predict": ("model", "data", "out"), "evaluate": ("model", "data", "out")}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wdr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file with a section named after the subcommand")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(s)
    s.add_argument("--scenario", type=int, choices=(1, 2))
    s.add_argument("--n", type=int)

    f = sub.add_parser("fit", help="fit by MCMC or MAP")
    common(f)
    f.add_argument("--data")
    f.add_argument("--method", choices=("mcmc", "map"))
    f.add_argument("--k", type=int)
    f.add_argument("--j", type=int)
    f.add_argument("--categorical", action="append", help="column=baseline (repeatable)")
    f.add_argument("--iters", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--paper-scale", action="store_true", default=None)
    f.add_argument("--dump-beta", action=argparse.BooleanOptionalAction, default=None)
    f.add_argument("--prune", action=argparse.BooleanOptionalAction, default=None)
    f.add_argument("--m", type=int)
    f.add_argument("--epochs", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--minibatch", type=int)
    f.add_argument("--prior-r", choices=("gamma_small", "gamma_unit", "l2"))
    f.add_argument("--dof", type=float)
    f.add_argument("--adaptive", action="store_true", default=None)

    for name, hlp in (("predict", "CIF curves or event probabilities"),
                      ("evaluate", "Brier score, C-index, accuracy and AUC")):
        q = sub.add_parser(name, help=hlp)
        common(q)
        q.add_argument("--model", help="fit output directory, trace file or params file")
        q.add_argument("--data")
        q.add_argument("--j", type=int)
        q.add_argument("--categorical", action="append")
        q.add_argument("--times", type=str)
        q.add_argument("--n-mc", type=int)
        if name == "predict":
            q.add_argument("--event-probability", action="store_true", default=None)
    return p


def _file_options(path, command, parser) -> dict:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except configparser.Error as e:
        raise UsageError(f"bad config file {path}: {e}") from None
    if not cp.has_section(command):
        return {}
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    actions = {a.dest: a for a in sub.choices[command]._actions}
    out = {}
    for key, raw in cp.items(command):
        dest = key.replace("-", "_")
        if dest not in actions or dest == "config":
            raise UsageError(f"unknown option {key!r} in [{command}] of {path}")
        act = actions[dest]
        if act.type is not None:
            try:
                out[dest] = act.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise UsageError(f"bad value for {key!r} in {path}: {e}") from None
        elif isinstance(act, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            out[dest] = _bool(raw)
        elif dest == "categorical":
            out[dest] = [raw]
        else:
            out[dest] = raw
    return out


def resolve(args, parser) -> dict:
    """Defaults, then config file, then explicit flags."""
    cmd = args.command
    opts = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        opts.update(_file_options(args.config, cmd, parser))
    for k, v in vars(args).items():
        if k in ("command", "config", "verbose") or v is None:
            continue
        opts[k] = v
    missing = [k for k in REQUIRED[cmd] if opts.get(k) is None]
    if missing:
        raise UsageError(f"{cmd}: missing required option(s) " +
                         ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


def write_snapshot(path, command, opts) -> None:
    cp = configparser.ConfigParser()
    cp[command] = {k: _ini_value(v) for k, v in sorted(opts.items()) if v is not None}
    with open(path, "w") as fh:
        cp.write(fh)


def _ini_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def _schema(opts) -> CsvSchema:
    return CsvSchema(J=opts.get("j"), categorical=_categorical(opts.get("categorical")))


def _load(path, opts):
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return load_csv(path, _schema(opts))


def cmd_simulate(opts) -> int:
    spec = scenario(opts["scenario"], n=opts["n"])
    data, truth = generate(spec, RngStream(opts["seed"]))
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out)
    sidecar = {"scenario": json.loads(spec.to_json()), "seed": opts["seed"],
               "true_event": truth.true_event.tolist(),
               "latent_times": truth.latent_times.tolist()}
    out.with_suffix(".truth.json").write_text(json.dumps(sidecar) + "\n")
    write_snapshot(out.with_suffix(".config.ini"), "simulate", opts)
    return EXIT_OK


def _chain_job(args):
    cfg, hyper, data, seed, chain, path, dump = args
    draws = run_chain(cfg, hyper, data, RngStream(seed, chain), path, dump)
    return chain, float(np.mean(draws.a_samples)), draws.active_subevents().tolist()


def cmd_fit(opts) -> int:
    data = _load(opts["data"], opts)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    if opts["method"] == "map":
        cfg = MapConfig(K=opts["k"], M=opts["m"], learning_rate=opts["lr"],
                        adaptive=opts["adaptive"], minibatch_size=opts["minibatch"],
                        n_epochs=opts["epochs"], prior_r=opts["prior_r"],
                        student_t_dof=opts["dof"], seed=opts["seed"])
        fit = fit_map(data, cfg, RngStream(opts["seed"]))
        (out / "params.json").write_text(fit.to_json() + "\n")
    else:
        if opts["paper_scale"]:
            opts["iters"], opts["burnin"] = McmcConfig.paper_scale().n_iterations, \
                McmcConfig.paper_scale().n_burnin
        cfg = McmcConfig(n_iterations=opts["iters"], n_burnin=opts["burnin"], thin=opts["thin"],
                         K=opts["k"], seed=opts["seed"], n_chains=opts["chains"],
                         prune=opts["prune"])
        hyper = HyperParams(J=data.J, K=opts["k"])
        jobs = [(cfg, hyper, data, opts["seed"], c, out / f"trace_chain{c}.ndjson",
                 opts["dump_beta"]) for c in range(opts["chains"])]
        if opts["chains"] > 1:
            with multiprocessing.get_context("spawn").Pool(opts["chains"]) as pool:
                results = pool.map(_chain_job, jobs)
        else:
            results = [_chain_job(jobs[0])]
        for chain, a_mean, active in results:
            log.info("chain %d: mean a %.4f, active sub-events %s", chain, a_mean, active)
    write_snapshot(out / "config.ini", "fit", opts)
    return EXIT_OK


def load_model(path):
    """Posterior states from a fit directory, trace file(s) or params JSON."""
    p = Path(path)
    if p.is_dir():
        traces = sorted(p.glob("trace_chain*.ndjson"))
        if traces:
            states = []
            for t in traces:
                states.extend(read_trace(t).states)
            return states, "mcmc"
        p = p / "params.json"
    if not p.is_file():
        raise UsageError(f"model not found: {path}")
    if p.suffix == ".ndjson":
        return read_trace(p).states, "mcmc"
    return [MapParams.from_json(p.read_text()).to_model_state()], "map"


def _prediction_inputs(opts):
    states, source = load_model(opts["model"])
    data = _load(opts["data"], opts)
    if data.n == 0:
        raise UsageError("test set is empty")
    if data.P != states[0].P:
        raise UsageError(f"data has {data.P} columns with intercept, model expects {states[0].P}")
    return states, source, data, _floats(opts["times"])


def cmd_predict(opts) -> int:
    states, source, data, times = _prediction_inputs(opts)
    rng = RngStream(opts["seed"])
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    if opts["event_probability"]:
        write_event_probability_csv(out, event_probabilities(data.X, states, opts["n_mc"], rng))
    else:
        write_cif_csv(out, cif_curves(data.X, times, states, opts["n_mc"], rng, source))
    write_snapshot(out.with_suffix(".config.ini"), "predict", opts)
    return EXIT_OK


def evaluate_table(states, data, times, n_mc, rng, source=None):
    """Rows of (time, event, brier, c_index) and the classification summary."""
    est = cif_curves(data.X, times, states, n_mc, rng, source)
    keep = (data.time_kind == TimeKind.OBSERVED) & (data.event > 0)
    rows = []
    for k, t in enumerate(times):
        for j in range(1, data.J + 1):
            pred = est.values[:, j - 1, k]
            bs = brier_score(pred, data, j, t)
            try:
                ci = c_index(pred, data, j, t)
            except UndefinedMetricError:
                ci = float("nan")
            rows.append((t, j, bs, ci))
    probs = event_probabilities(data.X, states, n_mc, rng)
    cls = None
    if data.J == 2 and keep.any():
        labels = (data.event[keep] == 1).astype(int)
        try:
            cls = classification_metrics(probs[keep, 0], labels)
        except UndefinedMetricError:
            cls = None
    return rows, cls


def cmd_evaluate(opts) -> int:
    states, source, data, times = _prediction_inputs(opts)
    if not ((data.time_kind == TimeKind.OBSERVED) & (data.event > 0)).any():
        raise UsageError("test set has no uncensored rows")
    rows, cls = evaluate_table(states, data, times, opts["n_mc"], RngStream(opts["seed"]), source)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w") as fh:
        fh.write("time,event,brier,c_index\n")
        for t, j, bs, ci in rows:
            fh.write(f"{t!r},{j},{bs!r},{ci!r}\n")
    with open(out / "classification.csv", "w") as fh:
        fh.write("metric,value\n")
        acc, auc = cls if cls is not None else (float("nan"), float("nan"))
        fh.write(f"accuracy,{acc!r}\nauc,{auc!r}\n")
    write_snapshot(out / "config.ini", "evaluate", opts)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        opts = resolve(args, parser)
        return COMMANDS[args.command](opts)
    except NumericalError as e:
        print(f"wdr {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, WDRError, ValueError, OSError) as e:
        print(f"wdr {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
