"""Command line: ``train``, ``eval`` and ``gradcheck``.

``train`` writes ``metrics.jsonl`` (one line per epoch), ``report.json`` and
a ``weights/`` directory holding SPKT tensors, their manifest and
``run.json`` (the config and data source needed to rebuild the model).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import gradcheck, io
from .config import Config, load_config
from .data import SyntheticSpec, generate_synthetic, load_features
from .errors import MdstError
from .model import MDST
from .training import evaluate, train

RUN_FILE = "run.json"


def _dump(obj):
    return json.dumps(obj, sort_keys=True)


def load_dataset(source):
    """``source`` is ``{"dir": path}`` or ``{"synthetic": {...}, "seed": n}``."""
    if "dir" in source:
        return load_features(source["dir"], source.get("split_seed", 0))
    return generate_synthetic(SyntheticSpec.from_dict(source["synthetic"]), source["seed"])


def data_source(config, seed, data_dir=None):
    if data_dir is not None:
        return {"dir": os.path.abspath(data_dir), "split_seed": seed}
    spec = SyntheticSpec.from_dict(config.data)
    return {"synthetic": dataclasses.asdict(spec), "seed": seed}


def save_run(weights_dir, model, source):
    io.save_named(weights_dir, model.state_dict())
    run = {"config": model.config.to_dict(), "d_audio": model.d_audio, "d_visual": model.d_visual,
           "data": source}
    with open(os.path.join(weights_dir, RUN_FILE), "w") as fh:
        fh.write(_dump(run) + "\n")


def load_run(weights_dir):
    """Rebuild a trained model and its data source from a weights directory."""
    path = os.path.join(weights_dir, RUN_FILE)
    if not os.path.exists(path):
        nested = os.path.join(weights_dir, "weights")
        if os.path.exists(os.path.join(nested, RUN_FILE)):
            return load_run(nested)
        raise MdstError(f"{weights_dir}: no {RUN_FILE}; pass the directory written by train")
    with open(path) as fh:
        run = json.load(fh)
    config = Config.from_dict(run["config"])
    model = MDST(config, run["d_audio"], run["d_visual"], np.random.default_rng(config.seed))
    model.load_state_dict(io.load_named(weights_dir))
    model.eval()
    return model, run["data"]


def report_dict(model, dataset):
    return {"model": model.config.model, "seed": model.config.seed,
            "zsl": evaluate(model, dataset, "zsl").to_dict(),
            "gzsl": evaluate(model, dataset, "gzsl").to_dict()}


def cmd_train(args):
    config = load_config(args.config) if args.config else Config.desk()
    config = config.replace(model=args.model, body=None if config.model != args.model else config.body)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.epochs is not None:
        config = config.replace(epochs=args.epochs)
    source = data_source(config, config.seed, args.data)
    dataset = load_dataset(source)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.jsonl"), "w") as fh:
        def log(m):
            fh.write(m.to_json() + "\n")
            fh.flush()
        result = train(dataset, config, on_epoch=log)
    weights_dir = os.path.join(args.out, "weights")
    save_run(weights_dir, result.model, source)
    # score the saved (float32) weights so `eval` reproduces the report
    model, _ = load_run(weights_dir)
    report = report_dict(model, dataset)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(_dump(report) + "\n")
    print(_dump(report))
    return 0


def cmd_eval(args):
    model, source = load_run(args.weights)
    if args.data is not None:
        source = {"dir": os.path.abspath(args.data), "split_seed": model.config.seed}
    dataset = load_dataset(source)
    report = evaluate(model, dataset, args.split).to_dict()
    report["split"] = args.split
    print(_dump(report))
    return 0


def cmd_gradcheck(args):
    errors = gradcheck.run(args.module, args.seed or 0)
    worst = 0.0
    for name, err in errors.items():
        ok = err < gradcheck.TOLERANCE
        worst = max(worst, err)
        print(_dump({"case": name, "max_rel_error": err, "ok": ok}))
    print(_dump({"module": args.module, "max_rel_error": worst, "ok": worst < gradcheck.TOLERANCE}))
    return 0 if worst < gradcheck.TOLERANCE else 1


def build_parser():
    p = argparse.ArgumentParser(prog="mdst", description="Spiking audio-visual zero-shot learning at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write metrics, report and weights")
    t.add_argument("--model", choices=["mdst", "mdstpp"], default="mdst")
    t.add_argument("--config", help="key-value config file (default: desk preset)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int, help="override the configured epoch budget")
    t.add_argument("--out", required=True)
    t.add_argument("--data", help="feature directory; synthetic data when omitted")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score saved weights")
    e.add_argument("--weights", required=True)
    e.add_argument("--split", choices=["zsl", "gzsl"], default="zsl")
    e.add_argument("--data", help="feature directory; defaults to the data the weights were trained on")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of one module's gradients")
    g.add_argument("--module", required=True, choices=sorted(gradcheck.SUITES) + ["all"])
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MdstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
