"""Command-line entry points: train, eval, predict, and the ablation sweep.

Configuration is a JSON file with flat dotted keys (e.g. "train.batch_size")
mirroring ModelConfig/TrainConfig plus data paths; command-line flags win
over file values. Exit codes: 0 ok, 2 usage/config error, 3 numeric failure.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .tensor import ConfigError, NumericError
from . import data as D
from . import evaluation
from . import model as M
from . import training

log = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_NUMERIC = 3

DATA_KEYS = ("alsc_train", "alsc_test", "aowe_train", "aowe_test", "embeddings")


class UsageError(Exception):
    pass


def load_run_config(path=None, overrides=None):
    """Merge defaults, a flat-dotted-key JSON file, and CLI overrides."""
    model_cfg = M.ModelConfig()
    train_cfg = training.TrainConfig()
    paths = {k: None for k in DATA_KEYS}
    merged = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                merged.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError("cannot read config %s: %s" % (path, exc))
    merged.update(overrides or {})
    for key, value in merged.items():
        section, _, name = key.partition(".")
        if section == "model" and hasattr(model_cfg, name):
            setattr(model_cfg, name, value)
        elif section == "train" and hasattr(train_cfg, name):
            setattr(train_cfg, name, value)
        elif section == "data" and name in paths:
            paths[name] = value
        else:
            raise UsageError("unknown config key %r" % key)
    model_cfg.validate()
    train_cfg.validate()
    return model_cfg, train_cfg, paths


def _load_datasets(paths, need_alsc, need_aowe, split="train"):
    out = {}
    for task, loader, needed in (("alsc", D.load_alsc_dataset, need_alsc),
                                 ("aowe", D.load_aowe_dataset, need_aowe)):
        key = "%s_%s" % (task, split)
        if not needed:
            out[task] = None
            continue
        if paths.get(key) is None:
            raise UsageError("missing data path %r" % key)
        if not Path(paths[key]).exists():
            raise UsageError("data path %r does not exist: %s" % (key, paths[key]))
        out[task] = loader(paths[key])
    return out


def run_single(model_cfg, train_cfg, paths, seed, log_sink=None):
    """One full experiment: load, split, train, evaluate on the test sets.

    Returns (params, vocab, flat metric dict, TrainResult).
    """
    need_alsc = model_cfg.enable_alsc_task
    need_aowe = model_cfg.enable_aowe_task
    train_sets = _load_datasets(paths, need_alsc, need_aowe, "train")
    test_sets = _load_datasets(paths, need_alsc, need_aowe, "test")
    datasets = [d for d in (train_sets["alsc"], train_sets["aowe"],
                            test_sets["alsc"], test_sets["aowe"]) if d]
    vocab = D.build_vocab(*datasets)

    if paths.get("embeddings") is None or not Path(paths["embeddings"]).exists():
        raise UsageError("missing or nonexistent embeddings path")
    seedseq = np.random.SeedSequence(seed)
    init_rng, split_rng = [np.random.default_rng(s) for s in seedseq.spawn(2)]
    table = D.load_pretrained_embeddings(paths["embeddings"], vocab, init_rng,
                                         pos_dim=model_cfg.pos_dim,
                                         max_position=model_cfg.max_position)
    params = M.OtnParams(model_cfg, table, init_rng)

    run_train = dataclasses.replace(train_cfg, seed=seed)
    splits = {}
    for task in ("alsc", "aowe"):
        if train_sets[task]:
            splits[task] = training.split_validation(
                train_sets[task], run_train.validation_fraction, split_rng)
        else:
            splits[task] = (None, None)
    result = training.train_joint(splits["alsc"][0], splits["aowe"][0],
                                  params, run_train, vocab,
                                  alsc_valid=splits["alsc"][1],
                                  aowe_valid=splits["aowe"][1],
                                  log_sink=log_sink)
    report = evaluation.evaluate_model(params, vocab,
                                       alsc_data=test_sets["alsc"],
                                       aowe_data=test_sets["aowe"])
    metrics = {}
    if report.alsc:
        metrics["alsc_acc"] = report.alsc["accuracy"]
        metrics["alsc_f1"] = report.alsc["macro_f1"]
    if report.aowe:
        metrics["aowe_p"] = report.aowe["precision"]
        metrics["aowe_r"] = report.aowe["recall"]
        metrics["aowe_f1"] = report.aowe["f1"]
    return params, vocab, metrics, result


def _ensure_out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _apply_flag_overrides(args, model_cfg):
    if getattr(args, "no_aowe2alsc", False):
        model_cfg.enable_aowe2alsc = False
    if getattr(args, "no_alsc2aowe", False):
        model_cfg.enable_alsc2aowe = False
    if getattr(args, "alsc_only", False):
        model_cfg.enable_aowe_task = False
    if getattr(args, "aowe_only", False):
        model_cfg.enable_alsc_task = False
    model_cfg.validate()


def cmd_train(args):
    model_cfg, train_cfg, paths = load_run_config(args.config, _data_overrides(args))
    _apply_flag_overrides(args, model_cfg)
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.runs is not None:
        train_cfg.num_runs = args.runs
    out = _ensure_out(args)
    seeds = [train_cfg.seed + k for k in range(train_cfg.num_runs)]

    first = {}

    def run(seed):
        epoch_path = out / ("epochs.seed%d.jsonl" % seed)
        with open(epoch_path, "w", encoding="utf-8") as fh:
            params, vocab, metrics, result = run_single(
                model_cfg, train_cfg, paths, seed,
                log_sink=lambda e: fh.write(json.dumps(e) + "\n"))
        if result.diverged:
            raise NumericError("training diverged (seed %d)" % seed)
        if not first:
            first["params"], first["vocab"] = params, vocab
        return metrics

    summary = training.run_repeated(run, seeds)
    M.save_checkpoint(out / "checkpoint.npz", first["params"], first["vocab"],
                      extra={"seeds": seeds})
    payload = {"seeds": seeds, "metrics": summary}
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    for key, stats in summary.items():
        print("%-10s %.4f +/- %.4f" % (key, stats["mean"], stats["std"]))
    print("checkpoint written to", out / "checkpoint.npz")
    return 0


def cmd_eval(args):
    params, vocab, _ = M.load_checkpoint(args.checkpoint)
    report = evaluation.evaluate_model(
        params, vocab,
        alsc_data=D.load_alsc_dataset(args.alsc_test) if args.alsc_test else None,
        aowe_data=D.load_aowe_dataset(args.aowe_test) if args.aowe_test else None)
    print(report.to_table())
    if args.out:
        out = _ensure_out(args)
        (out / "eval.json").write_text(json.dumps(report.to_json(), indent=2))
    else:
        print(json.dumps(report.to_json()))
    return 0


def cmd_predict(args):
    params, vocab, _ = M.load_checkpoint(args.checkpoint)
    tokens = args.tokens.split()
    if not tokens:
        raise UsageError("empty sentence")
    start, end = args.aspect
    span = D.AspectSpan(start, end)
    try:
        span.validate(len(tokens))
    except D.DatasetError as exc:
        raise UsageError(str(exc))
    token_ids = vocab.encode(tokens)
    distances = D.position_distances(len(tokens), span, params.table.max_position)
    result = M.forward_joint(token_ids, distances, span, params,
                             want_alsc=True, want_aowe=True)
    output = {"tokens": tokens, "aspect": [start, end]}
    if result.alsc_probs is not None:
        output["sentiment"] = D.SENTIMENT_LABELS[int(np.argmax(result.alsc_probs.data))]
        output["sentiment_probs"] = result.alsc_probs.data.tolist()
    if result.aowe_probs is not None:
        tags = np.argmax(result.aowe_probs.data, axis=1)
        spans = sorted(evaluation.decode_bio_spans(tags))
        output["opinion_spans"] = [
            {"start": s.start, "end": s.end,
             "text": " ".join(tokens[s.start:s.end])} for s in spans]
    if result.alpha is not None:
        output["alpha"] = result.alpha.data.tolist()
    if result.p is not None:
        output["p"] = result.p.data.tolist()
    print(json.dumps(output, indent=2))
    return 0


ABLATIONS = [
    ("OTN", {}),
    ("-ALSC task", {"enable_alsc_task": False}),
    ("-AOWE task", {"enable_aowe_task": False}),
    ("-AOWE2ALSC", {"enable_aowe2alsc": False}),
    ("-ALSC2AOWE", {"enable_alsc2aowe": False}),
]


def run_ablation(model_cfg, train_cfg, paths, seeds):
    """Train/evaluate the 5 ablation configurations with shared seeds."""
    rows = []
    for name, changes in ABLATIONS:
        cfg = dataclasses.replace(model_cfg, **changes)
        summary = training.run_repeated(
            lambda seed: run_single(cfg, train_cfg, paths, seed)[2], seeds)
        rows.append({"name": name,
                     "metrics": {k: v["mean"] for k, v in summary.items()}})
    return rows


def _format_ablation_table(rows):
    cols = ["alsc_acc", "alsc_f1", "aowe_p", "aowe_r", "aowe_f1"]
    lines = ["%-12s %9s %9s %9s %9s %9s" % ("Model", "Acc", "F1", "P", "R", "F1")]
    for row in rows:
        cells = [("%9.4f" % row["metrics"][c]) if c in row["metrics"] else "%9s" % "-"
                 for c in cols]
        lines.append("%-12s %s" % (row["name"], " ".join(cells)))
    return "\n".join(lines)


def cmd_ablate(args):
    model_cfg, train_cfg, paths = load_run_config(args.config, _data_overrides(args))
    _apply_flag_overrides(args, model_cfg)
    if not (model_cfg.enable_alsc_task and model_cfg.enable_aowe_task
            and model_cfg.enable_aowe2alsc and model_cfg.enable_alsc2aowe):
        raise UsageError("ablate needs the full joint configuration as baseline")
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.runs is not None:
        train_cfg.num_runs = args.runs
    out = _ensure_out(args)
    seeds = [train_cfg.seed + k for k in range(train_cfg.num_runs)]
    rows = run_ablation(model_cfg, train_cfg, paths, seeds)
    table = _format_ablation_table(rows)
    print(table)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    (out / "ablation.txt").write_text(table + "\n")
    return 0


def _data_overrides(args):
    overrides = {}
    for key in DATA_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            overrides["data." + key] = value
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(prog="otn")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False, train_flags=False):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--runs", type=int, default=None)
        p.add_argument("--out", default="otn-out")
        if train_flags:
            p.add_argument("--no-aowe2alsc", action="store_true")
            p.add_argument("--no-alsc2aowe", action="store_true")
            p.add_argument("--alsc-only", action="store_true")
            p.add_argument("--aowe-only", action="store_true")
            for key in DATA_KEYS:
                p.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    p_train = sub.add_parser("train", help="train the joint model")
    common(p_train, train_flags=True)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--alsc-test", dest="alsc_test", default=None)
    p_eval.add_argument("--aowe-test", dest="aowe_test", default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_pred = sub.add_parser("predict", help="predict one sentence")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--tokens", required=True,
                        help="space-separated sentence tokens")
    p_pred.add_argument("--aspect", type=int, nargs=2, required=True,
                        metavar=("START", "END"))
    p_pred.set_defaults(fn=cmd_predict)

    p_abl = sub.add_parser("ablate", help="run the 5-row ablation sweep")
    common(p_abl, train_flags=True)
    p_abl.set_defaults(fn=cmd_ablate)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (UsageError, ConfigError, D.DatasetError, FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
