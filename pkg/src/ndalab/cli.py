"""Command-line front end: ``ndalab <subcommand> [options]``.

Every subcommand reads the flat config (defaults, then ``--config``, then
``--set key=value`` and ``--seed``), writes ``config.snapshot`` plus its
outputs into a run directory, and exits 0 on success. Usage problems exit
2 and other failures exit 1, each with a single-line message on stderr.

The run directory is ``--run-dir`` if given, else ``$NDALAB_RUN_ROOT/<cmd>``,
else ``runs/<cmd>`` under the working directory.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import config as cfgmod
from .data import (BlobSpec, Dataset, atomic_write_text, gen_blobs, gen_ood_set, load_features,
                   save_features, sub_seed)
from .discriminant import (DIAGNOSTICS_HEADER, Diagnostics, append_diagnostics_row, diagnose_latents,
                           lda_projection, scatter_matrices)
from .errors import ConfigError, NdaError, ParseError
from .losses import compute_class_means
from .models import build_model, latent_features, load_model, save_model
from .ood import ScoredPrediction, ensemble_probs, metrics_from_predictions, reliability_table, \
    score_predictions
from .reporting import RUN_LAYOUT_VERSION, parse_report, write_csv, write_report
from .ssl import run_ssl
from .training import COMPONENTS, split_dataset, train

RUN_ROOT_ENV = "NDALAB_RUN_ROOT"
COMMANDS = ("gen-data", "train", "train-ssl", "eval-ood", "diagnose", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("--run-dir", help=f"output directory (overrides ${RUN_ROOT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ndalab", description="Neural discriminant analysis toolkit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write a blobs dataset and its shifted OOD copy")
    _add_common(p)

    p = sub.add_parser("train", help="train one model with the NDA loss")
    _add_common(p)
    p.add_argument("--features", help="feature CSV to train on instead of generated blobs")

    p = sub.add_parser("train-ssl", help="two-phase semi-supervised ensemble training")
    _add_common(p)
    p.add_argument("--features", help="feature CSV instead of generated blobs")

    p = sub.add_parser("eval-ood", help="OOD and calibration metrics")
    _add_common(p)
    p.add_argument("--in-scores", help="CSV with column score (and optionally correct)")
    p.add_argument("--out-scores", help="CSV with column score")
    p.add_argument("--model", action="append", default=[], help="checkpoint; repeat for an ensemble")
    p.add_argument("--in-data", help="in-distribution feature CSV")
    p.add_argument("--out-data", help="OOD feature CSV")

    p = sub.add_parser("diagnose", help="scatter matrices and Fisher score of a feature set")
    _add_common(p)
    p.add_argument("--features", required=True, help="feature CSV")
    p.add_argument("--model", help="map features through this checkpoint's latent layer first")

    p = sub.add_parser("report", help="summarise an existing run directory")
    p.add_argument("path", help="run directory")
    return parser


# --- shared plumbing -------------------------------------------------------


def _resolve_config(args) -> dict:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        overrides[key] = cfgmod.parse_value(key, value, "--set: ")
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "features", None):
        overrides["features"] = args.features
    return cfgmod.load_config(args.config, overrides)


def _run_dir(args) -> str:
    if args.run_dir:
        path = args.run_dir
    else:
        path = os.path.join(os.environ.get(RUN_ROOT_ENV) or "runs", args.command)
    os.makedirs(path, exist_ok=True)
    return path


def _blob_spec(cfg) -> BlobSpec:
    seed = cfg["data_seed"] if cfg["data_seed"] >= 0 else sub_seed(cfg["seed"], "data")
    try:
        return BlobSpec(cfg["num_classes"], cfg["dim"], cfg["per_class"], cfg["spread"],
                        cfg["sigma"], seed)
    except ValueError as exc:
        raise ConfigError(f"invalid data settings: {exc}") from exc


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _dataset(cfg) -> Dataset:
    if cfg["features"]:
        _require_file(cfg["features"], "feature file")
        return load_features(cfg["features"])
    return gen_blobs(_blob_spec(cfg))


def _fractions(cfg):
    test = cfg["test_fraction"]
    val = (1.0 - test) * cfg["validation_fraction"]
    if not (0 <= test < 1 and 0 <= cfg["validation_fraction"] < 1):
        raise ConfigError("test_fraction and validation_fraction must lie in [0, 1)")
    return (1.0 - test - val, val, test)


def _start(args, cfg):
    run_dir = _run_dir(args)
    atomic_write_text(os.path.join(run_dir, "config.snapshot"), cfgmod.snapshot_text(cfg))
    return run_dir


def _header(command, cfg):
    return ("run", [("command", command), ("layout_version", RUN_LAYOUT_VERSION), ("seed", cfg["seed"])])


# --- subcommands -----------------------------------------------------------


def cmd_gen_data(args, cfg):
    run_dir = _start(args, cfg)
    spec = _blob_spec(cfg)
    data = gen_blobs(spec)
    ood = gen_ood_set(spec, cfg["ood_shift"] * spec.sigma)
    save_features(data, os.path.join(run_dir, "data.csv"))
    save_features(ood, os.path.join(run_dir, "ood.csv"))
    write_report(os.path.join(run_dir, "report.txt"), [
        _header("gen-data", cfg),
        ("data", [("samples", len(data)), ("dim", data.dim), ("classes", data.num_classes),
                  ("data_seed", spec.seed), ("ood_shift", float(cfg["ood_shift"] * spec.sigma))]),
    ])


def cmd_train(args, cfg):
    run_dir = _start(args, cfg)
    tcfg = cfgmod.train_config(cfg)
    data = _dataset(cfg)
    splits = split_dataset(data, _fractions(cfg), seed=sub_seed(cfg["seed"], "split"))
    model = build_model(data.dim, cfg["hidden_dims"], cfg["latent_dim"], data.num_classes,
                        seed=sub_seed(cfg["seed"], "init"))
    diag_path = os.path.join(run_dir, "diagnostics.csv")
    atomic_write_text(diag_path, DIAGNOSTICS_HEADER + "\n")

    def on_epoch(rec):
        append_diagnostics_row(diag_path, rec.epoch,
                               Diagnostics(rec.fisher_score, rec.intra_distance, rec.inter_distance))

    report = train(model, splits, tcfg, on_epoch=on_epoch)
    save_model(model, os.path.join(run_dir, "model.json"))
    write_csv(os.path.join(run_dir, "epochs.csv"),
              ["epoch", *COMPONENTS, "val_accuracy", "fisher_score", "intra_distance", "inter_distance"],
              [[r.epoch, *(r.losses[c] for c in COMPONENTS), r.val_accuracy, r.fisher_score,
                r.intra_distance, r.inter_distance] for r in report.epochs])
    train_set = splits[0]
    means = compute_class_means(model, train_set, epoch=len(report.epochs))
    write_csv(os.path.join(run_dir, "means.csv"),
              ["class", "count", *(f"m{j}" for j in range(means.means.shape[1]))],
              [[j, int(means.counts[j]), *means.means[j]] for j in range(means.num_classes)])
    last = report.epochs[-1]
    sizes = [0 if s is None else len(s) for s in splits]
    write_report(os.path.join(run_dir, "report.txt"), [
        _header("train", cfg),
        ("data", [("source", cfg["features"] or "blobs"), ("train", sizes[0]), ("val", sizes[1]),
                  ("test", sizes[2]), ("classes", data.num_classes)]),
        ("result", [("epochs", len(report.epochs)), ("best_epoch", report.best_epoch),
                    ("best_val_accuracy", report.best_val_accuracy),
                    ("test_accuracy", report.test_accuracy),
                    ("mean_refreshes", report.mean_refreshes)]),
        ("final_epoch", [("total_loss", last.losses["total"]), ("fisher_score", last.fisher_score),
                         ("intra_distance", last.intra_distance),
                         ("inter_distance", last.inter_distance)]),
    ])


def cmd_train_ssl(args, cfg):
    run_dir = _start(args, cfg)
    scfg = cfgmod.ssl_config(cfg)
    data = _dataset(cfg)
    report, models = run_ssl(data, scfg)
    for i, m in enumerate(models):
        save_model(m, os.path.join(run_dir, f"member{i}.json"))
    pseudo = report.pseudo
    write_csv(os.path.join(run_dir, "pseudo_labels.csv"), ["id", "label", "confidence"],
              [[int(i), int(l), float(c)] for i, l, c in zip(pseudo.ids, pseudo.labels, pseudo.confidence)])
    write_csv(os.path.join(run_dir, "phase2_val.csv"), ["member", "epoch", "val_accuracy", "updated"],
              [[m, e, acc, e in report.phase2.updates[m]]
               for m, hist in enumerate(report.phase2.val_history) for e, acc in enumerate(hist)])
    write_report(os.path.join(run_dir, "report.txt"), [
        _header("train-ssl", cfg),
        ("data", [("labeled", report.labeled_count), ("unlabeled", report.unlabeled_count)]),
        ("phase1", [("member_val_accuracy", [float(v) for v in report.phase1_member_val]),
                    ("ensemble_test_accuracy", report.phase1_ensemble_test)]),
        ("pseudo_labels", [("threshold", pseudo.threshold), ("admitted", len(pseudo)),
                           ("min_confidence", float(pseudo.confidence.min()) if len(pseudo) else float("nan")),
                           ("accuracy", report.pseudo_accuracy)]),
        ("phase2", [("member_val_accuracy", [float(v) for v in report.phase2_member_val]),
                    ("updates", [len(u) for u in report.phase2.updates]),
                    ("ensemble_test_accuracy", report.phase2_ensemble_test)]),
    ])


def _read_scores(path):
    _require_file(path, "score file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", line=1)
    header = [h.strip() for h in rows[0]]
    if header not in (["score"], ["score", "correct"]):
        raise ParseError("header must be 'score' or 'score,correct'", line=1)
    scores, correct = [], []
    for line_no, cells in enumerate(rows[1:], start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} cells, got {len(cells)}", line=line_no)
        try:
            scores.append(float(cells[0]))
            if len(header) == 2:
                correct.append(int(cells[1]) != 0)
        except ValueError:
            raise ParseError("non-numeric cell", line=line_no) from None
    if not scores:
        raise ParseError("no data rows", line=2)
    return np.array(scores), (np.array(correct) if correct else None)


def _score_predictions(scores, correct, in_distribution):
    out = []
    for i, s in enumerate(scores):
        ok = correct is not None and bool(correct[i])
        out.append(ScoredPrediction(np.array([s]), float(s), 0, 0 if ok else 1, in_distribution))
    return out


def cmd_eval_ood(args, cfg):
    score_mode = args.in_scores or args.out_scores
    model_mode = args.model or args.in_data or args.out_data
    if score_mode and model_mode:
        raise UsageError("give either --in-scores/--out-scores or --model/--in-data/--out-data")
    if score_mode:
        if not (args.in_scores and args.out_scores):
            raise UsageError("--in-scores and --out-scores go together")
        s_in, correct = _read_scores(args.in_scores)
        s_out, _ = _read_scores(args.out_scores)
        pred_in = _score_predictions(s_in, correct, True)
        pred_out = _score_predictions(s_out, None, False)
    elif model_mode:
        if not (args.model and args.in_data and args.out_data):
            raise UsageError("--model, --in-data and --out-data go together")
        for path in args.model:
            _require_file(path, "checkpoint")
        _require_file(args.in_data, "feature file")
        _require_file(args.out_data, "feature file")
        models = [load_model(p) for p in args.model]
        d_in, d_out = load_features(args.in_data), load_features(args.out_data)
        pred_in = score_predictions(ensemble_probs(models, d_in.features), d_in.labels)
        pred_out = score_predictions(ensemble_probs(models, d_out.features), in_distribution=False)
        correct = True
    else:
        raise UsageError("eval-ood needs score files or a model with two feature files")
    run_dir = _start(args, cfg)
    metrics = metrics_from_predictions(pred_in, pred_out, cfg["num_bins"])
    items = [(k, v) for k, v in metrics.as_dict().items()]
    if correct is None:
        # no correctness column: calibration is undefined
        items = [(k, float("nan") if k == "ece" else v) for k, v in items]
    write_report(os.path.join(run_dir, "ood_report.txt"), [
        _header("eval-ood", cfg),
        ("counts", [("in_distribution", len(pred_in)), ("ood", len(pred_out))]),
        ("metrics", items),
    ])
    write_csv(os.path.join(run_dir, "reliability.csv"), ["bin", "count", "accuracy", "confidence"],
              reliability_table(pred_in, cfg["num_bins"]) if correct is not None else [])


def cmd_diagnose(args, cfg):
    _require_file(args.features, "feature file")
    data = load_features(args.features)
    latents = data.features
    if args.model:
        _require_file(args.model, "checkpoint")
        latents = latent_features(load_model(args.model), data.features)
    run_dir = _start(args, cfg)
    stats = scatter_matrices(latents, data.labels, data.num_classes)
    diag = diagnose_latents(latents, data.labels, data.num_classes, cfg["ridge"])
    k_present = int(np.count_nonzero(stats.counts))
    target = max(1, min(stats.dim, k_present - 1))
    lda = lda_projection(stats, target, cfg["ridge"])
    d = stats.dim
    write_csv(os.path.join(run_dir, "scatter_within.csv"), [f"c{j}" for j in range(d)], stats.s_within)
    write_csv(os.path.join(run_dir, "scatter_between.csv"), [f"c{j}" for j in range(d)], stats.s_between)
    write_report(os.path.join(run_dir, "report.txt"), [
        _header("diagnose", cfg),
        ("data", [("samples", len(data)), ("dim", d), ("class_counts", [int(c) for c in stats.counts]),
                  ("latent", bool(args.model))]),
        ("scatter", [("trace_within", float(np.trace(stats.s_within))),
                     ("trace_between", float(np.trace(stats.s_between))),
                     ("single_class", stats.single_class)]),
        ("diagnostics", [("fisher_score", diag.fisher_score), ("intra_distance", diag.intra_distance),
                         ("inter_distance", diag.inter_distance), ("ridge", cfg["ridge"])]),
        ("lda", [("target_dim", target), ("eigenvalues", [float(v) for v in lda.eigenvalues]),
                 ("degenerate", lda.degenerate)]),
    ])


def cmd_report(args):
    if not os.path.isdir(args.path):
        raise UsageError(f"run directory not found: {args.path}")
    found = False
    for name in ("report.txt", "ood_report.txt"):
        path = os.path.join(args.path, name)
        if os.path.isfile(path):
            found = True
            with open(path) as fh:
                sections = parse_report(fh.read())
            for section, items in sections.items():
                for key, value in items.items():
                    print(f"{section}.{key} = {value}")
    if not found:
        raise UsageError(f"no report in {args.path}")
    epochs = os.path.join(args.path, "epochs.csv")
    if os.path.isfile(epochs):
        with open(epochs, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows:
            print(f"epochs.count = {len(rows)}")
            print(f"epochs.last_total = {rows[-1]['total']}")


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "train-ssl": cmd_train_ssl,
    "eval-ood": cmd_eval_ood,
    "diagnose": cmd_diagnose,
}


def _fail(code, message):
    print(f"ndalab: error: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(2, exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command == "report":
            cmd_report(args)
            return 0
        cfg = _resolve_config(args)
        HANDLERS[args.command](args, cfg)
    except (UsageError, ConfigError, ParseError) as exc:
        return _fail(2, exc)
    except (NdaError, ValueError, OSError) as exc:
        return _fail(1, exc)
    return 0


def main():  # console-script entry
    sys.exit(cli_main())
