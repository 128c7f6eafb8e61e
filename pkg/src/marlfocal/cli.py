"""Command line entry point.

Exit codes: 0 ok, 2 bad config or flags, 3 bad data, 4 checkpoint problem,
5 backend failure.  Every artifact goes under ``--out``.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import data as dm
from . import policy as pn
from .backend import BackendError, BackendSpec, harvest_dataset
from .diversity import ContractError
from .engine import CHECKPOINT_VERSION, STATE_LAYOUT_VERSION, CheckpointError, EngineConfig, MarlFocal
from .evaluation import MAX_SURFACE_MODELS, cost_curve, eval_baselines, surface_export

log = logging.getLogger("marlfocal")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT, EXIT_BACKEND = 0, 2, 3, 4, 5

# flag name -> engine config key, for flags that override the config file
ENGINE_FLAGS = {
    "episodes": "episodes", "alpha": "alpha", "gamma": "gamma", "lr": "lr",
    "online_lr": "online_lr", "clip_eps": "clip_eps", "algorithm": "algorithm",
    "ppo_epochs": "ppo_epochs", "window": "window", "update_period": "update_period",
    "hidden": "hidden", "seed": "seed", "accuracy_features": "accuracy_features",
}


class ConfigError(ValueError):
    pass


def _versions():
    return {
        "marlfocal": __version__,
        "record_schema": dm.SCHEMA_VERSION,
        "checkpoint": CHECKPOINT_VERSION,
        "policy_checkpoint": pn.CHECKPOINT_VERSION,
        "state_layout": STATE_LAYOUT_VERSION,
    }


def _hidden(text):
    try:
        return tuple(int(h) for h in text.split(",") if h.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden sizes must be comma-separated integers, got {text!r}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    engine = argparse.ArgumentParser(add_help=False)
    g = engine.add_argument_group("engine")
    g.add_argument("--episodes", type=int, help="warm-start episodes K")
    g.add_argument("--alpha", type=float, help="pool-size penalty in the decider reward")
    g.add_argument("--gamma", type=float, help="discount factor")
    g.add_argument("--lr", type=float, help="learning rate")
    g.add_argument("--online-lr", type=float, help="learning rate for online updates (default: --lr)")
    g.add_argument("--clip-eps", type=float, help="PPO clipping range")
    g.add_argument("--algorithm", choices=["reinforce", "ppo"])
    g.add_argument("--ppo-epochs", type=int)
    g.add_argument("--window", type=int, help="failure-history window T")
    g.add_argument("--update-period", type=int, help="online update period in queries")
    g.add_argument("--hidden", type=_hidden, help="hidden layer sizes, e.g. 64 or 64,32")
    g.add_argument("--accuracy-features", action="store_const", const=True,
                   help="add per-model rolling accuracy to the decider state")

    p = argparse.ArgumentParser(prog="marlfocal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="store_true", help="print package and format versions as JSON")
    sub = p.add_subparsers(dest="command")

    t = sub.add_parser("train", parents=[common, engine], help="warm-start both agents on a JSONL dataset")
    t.add_argument("--data", required=True, help="QueryRecord JSONL")
    t.add_argument("--renormalize", action="store_true", help="rescale rows that are off the simplex")

    e = sub.add_parser("eval", parents=[common], help="baselines and optional trained-engine accuracy")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", help="engine checkpoint from train")
    e.add_argument("--costs", help="cost table JSON, or 'default' for the bundled illustrative table")
    e.add_argument("--seeds", type=int, default=5, help="seeds for the random-subset baseline")
    e.add_argument("--renormalize", action="store_true")

    s = sub.add_parser("surface", parents=[common], help="diversity/accuracy CSV over every team")
    s.add_argument("--data", required=True)
    s.add_argument("--renormalize", action="store_true")

    st = sub.add_parser("stream", parents=[common], help="run a trained engine over a query stream")
    st.add_argument("--data", required=True)
    st.add_argument("--checkpoint", required=True)
    st.add_argument("--no-feedback", action="store_true", help="inference only; no updates")
    st.add_argument("--renormalize", action="store_true")

    h = sub.add_parser("harvest", parents=[common], help="query live endpoints into a JSONL dataset")
    h.add_argument("--backends", required=True, help="JSON list of backend specs")
    h.add_argument("--questions", required=True, help='JSONL of {"id","prompt","choices","gold"}')
    h.add_argument("--workers", type=int, default=4)

    y = sub.add_parser("synth", parents=[common], help="write a synthetic correlated-pool dataset")
    y.add_argument("--n", type=int, required=True, help="number of agents")
    y.add_argument("--queries", type=int, required=True)
    y.add_argument("--k", type=int, default=4, help="choices per query")
    y.add_argument("--accuracy", type=_floats, default=[0.7], help="one accuracy or one per agent")
    y.add_argument("--groups", type=_ints, help="correlation group per agent (default: all independent)")
    y.add_argument("--corr", type=float, default=0.0, help="probability of copying the group outcome")
    y.add_argument("--conf", type=float, default=0.7, help="mass on each agent's chosen answer")
    y.add_argument("--name", default="synth.jsonl", help="output file name inside --out")
    return p


def _read_config(path):
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    return cfg


def engine_config(args, n_models, k):
    """File values, then flags; pool shape always comes from the data."""
    cfg = _read_config(args.config)
    cfg = dict(cfg.get("engine", cfg))
    for flag, key in ENGINE_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg[key] = val
    cfg["n_models"], cfg["k"] = n_models, k
    try:
        return EngineConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid engine config: {exc}")


def _load(args):
    path = args.data
    if not os.path.exists(path):
        raise dm.DataError(f"data file not found: {path}")
    records = dm.load_jsonl(path, renormalize=getattr(args, "renormalize", False))
    if not records:
        raise dm.DataError(f"{path} holds no records")
    return records


def _snapshot(args, out, extra=None):
    snap = {k: v for k, v in vars(args).items() if k != "func"}
    snap["hidden"] = list(snap["hidden"]) if snap.get("hidden") else snap.get("hidden")
    snap.update(extra or {})
    snap["versions"] = _versions()
    with open(os.path.join(out, f"{args.command}_config.json"), "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True)


def cmd_train(args, out):
    records = _load(args)
    n, k = records[0].outputs.shape
    cfg = engine_config(args, n, k)
    _snapshot(args, out, {"engine": cfg.to_dict(), "config_hash": cfg.hash()})
    eng = MarlFocal(cfg)
    with open(os.path.join(out, "train_log.jsonl"), "w") as fh:
        def write(entry):
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
        eng.warm_start(records, on_episode=write)
    eng.save(os.path.join(out, "checkpoint.json"))
    print(f"trained {cfg.episodes} episodes on {len(records)} queries; checkpoint in {out}")
    return EXIT_OK


def _expected_hash(args, n, k):
    if not args.config:
        return None
    return engine_config(args, n, k).hash()


def _cost_table(args, records):
    if args.costs is None:
        return None
    n = records[0].n_models
    if args.costs == "default":
        return dm.CostTable.default(n)
    try:
        table = dm.CostTable.load(args.costs)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read cost table {args.costs}: {exc}")
    if len(table) < n:
        raise ConfigError(f"cost table has {len(table)} entries for {n} models")
    return table


def cmd_eval(args, out):
    records = _load(args)
    n, k = records[0].outputs.shape
    table = _cost_table(args, records)
    engine = None
    if args.checkpoint:
        engine = MarlFocal.load(args.checkpoint, expect_hash=_expected_hash(args, n, k))
        if (engine.config.n_models, engine.config.k) != (n, k):
            raise CheckpointError(f"checkpoint expects {engine.config.n_models}x{engine.config.k} outputs, data has {n}x{k}")
    _snapshot(args, out)
    report = eval_baselines(records, table, engine, seeds=args.seeds)
    with open(os.path.join(out, "report.json"), "w") as fh:
        fh.write(report.to_json() + "\n")
    if all(m.mean_cost is not None for m in report.methods):
        cost_curve(report, os.path.join(out, "cost_curve.csv"))
    print(report.table())
    return EXIT_OK


def cmd_surface(args, out):
    records = _load(args)
    n = records[0].n_models
    if n > MAX_SURFACE_MODELS:
        raise ConfigError(f"surface needs at most {MAX_SURFACE_MODELS} models, data has {n}; subset the pool first")
    _snapshot(args, out)
    rows = surface_export(records, os.path.join(out, "surface.csv"))
    print(f"wrote {rows} teams to {os.path.join(out, 'surface.csv')}")
    return EXIT_OK


def cmd_stream(args, out):
    records = _load(args)
    n, k = records[0].outputs.shape
    engine = MarlFocal.load(args.checkpoint, expect_hash=_expected_hash(args, n, k))
    if (engine.config.n_models, engine.config.k) != (n, k):
        raise CheckpointError(f"checkpoint expects {engine.config.n_models}x{engine.config.k} outputs, data has {n}x{k}")
    _snapshot(args, out)
    feedback = not args.no_feedback
    hits = []
    with open(os.path.join(out, "predictions.jsonl"), "w") as fh:
        for rec in records:
            res = engine.online_step(rec, feedback=feedback)
            row = {"id": rec.id, "prediction": res.prediction, "mask": res.mask.astype(int).tolist()}
            if res.correct is not None:
                row["correct"] = bool(res.correct)
                hits.append(res.correct)
            fh.write(json.dumps(row) + "\n")
    if feedback:
        engine.save(os.path.join(out, "checkpoint.json"))
    if hits:
        print(f"accuracy {100 * np.mean(hits):.2f}% over {len(hits)} labelled queries")
    return EXIT_OK


def cmd_harvest(args, out):
    try:
        with open(args.backends) as fh:
            specs = [BackendSpec.from_dict(d) for d in json.load(fh)]
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad backend list {args.backends}: {exc}")
    if not os.path.exists(args.questions):
        raise dm.DataError(f"questions file not found: {args.questions}")
    _snapshot(args, out)
    try:
        summary = harvest_dataset(specs, args.questions, os.path.join(out, "dataset.jsonl"),
                                  workers=args.workers, seed=args.seed or 0)
    except ValueError as exc:
        raise dm.DataError(str(exc))
    print(f"{summary.complete} complete, {summary.quarantined} quarantined")
    return EXIT_BACKEND if summary.partial else EXIT_OK


def cmd_synth(args, out):
    seed = 0 if args.seed is None else args.seed
    acc = args.accuracy[0] if len(args.accuracy) == 1 else args.accuracy
    try:
        spec = dm.SyntheticPoolSpec(n=args.n, k=args.k, accuracies=acc, groups=args.groups,
                                    corr=args.corr, conf=args.conf, seed=seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic pool: {exc}")
    _snapshot(args, out)
    path = os.path.join(out, args.name)
    dm.save_jsonl(dm.synth_stream(spec, args.queries), path)
    print(f"wrote {args.queries} queries to {path}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "surface": cmd_surface,
    "stream": cmd_stream, "harvest": cmd_harvest, "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.version:
        print(json.dumps(_versions(), sort_keys=True))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    out = args.out
    if os.path.basename(getattr(args, "name", "") or "") != (getattr(args, "name", "") or ""):
        print("error: --name must be a plain file name", file=sys.stderr)
        return EXIT_CONFIG
    try:
        os.makedirs(out, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (dm.DataError, ContractError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
