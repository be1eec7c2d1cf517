"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every failure prints exactly one line to stderr.
"""
from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._fileio import atomic_write_text
from .attacks import (FAMILIES, AttackSpec, batch_attack, format_epsilon, immutable_bounds,
                      true_positive_malware)
from .data import MALWARE, drift_shift, load_dataset, save_dataset, split
from .errors import BayesmalError, DataError, NumericError
from .evaluation import detection_auc, diversity, drift_histogram_csv, drift_report
from .experiment import (ExperimentConfig, build_dataset, drift_config_for, dumps_report,
                         reference_config, reproduce, run_experiment, write_outputs)
from .inference import METHODS, train
from .model_io import load_posterior, save_posterior
from .uncertainty import score_dataset

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it to our usage code instead."""

    def error(self, message):
        raise UsageError(message)


def _common(p, *names):
    if "config" in names:
        p.add_argument("--config", help="experiment config JSON (or a run.json)")
    if "seed" in names:
        p.add_argument("--seed", type=int, help="global seed override")
    if "out" in names:
        p.add_argument("--out", help="output directory")
    if "method" in names:
        p.add_argument("--method", choices=METHODS)
    if "attack" in names:
        p.add_argument("--attack", choices=FAMILIES)
    if "epsilon" in names:
        p.add_argument("--epsilon", type=float)
    if "n" in names:
        p.add_argument("--n", type=int, help="MC inference samples")
    if "data" in names:
        p.add_argument("--data", help="dataset file (sparse text format)")
    if "model" in names:
        p.add_argument("--model", help="posterior file written by `train`")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bayesmal", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bayesmal {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic dataset and its train/test split")
    _common(p, "config", "seed", "out")

    p = sub.add_parser("train", help="fit one posterior")
    _common(p, "config", "seed", "out", "method", "data")

    p = sub.add_parser("attack", help="attack the true-positive malware of a dataset")
    _common(p, "config", "seed", "out", "attack", "epsilon", "n", "data", "model")
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--iterations", type=int, default=50)

    p = sub.add_parser("score", help="per-sample malware probability, PE and MI")
    _common(p, "seed", "out", "n", "data", "model")

    p = sub.add_parser("eval", help="detection AUCs for one model, or the full table from a config")
    _common(p, "config", "seed", "out", "n", "data", "model")
    p.add_argument("--adv", help="adversarial dataset (positives); --data gives benign negatives")

    p = sub.add_parser("drift", help="uncertainty shift between a reference and a drifted set")
    _common(p, "config", "seed", "out", "n", "data", "model")
    p.add_argument("--drifted", help="drifted dataset; default applies the config's drift to --data")
    p.add_argument("--quantile", type=float, default=0.95)
    p.add_argument("--score", choices=("pe", "mi"), default="pe")

    p = sub.add_parser("diversity", help="mean KL between particle outputs and their average")
    _common(p, "seed", "out", "n", "data", "model")

    p = sub.add_parser("reproduce", help="run the whole pipeline and write report.json")
    _common(p, "config", "seed", "out")
    p.add_argument("--quiet", action="store_true")
    return ap


# --------------------------------------------------------------------- helpers

def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"{args.command} requires {', '.join(missing)}")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else reference_config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args, default=".") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, default=0) -> int:
    return default if args.seed is None else args.seed


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


def _mi_text(method, value) -> str:
    # a single deterministic particle has no epistemic term to report
    return "n/a" if method == "MAP" else repr(float(value))


# --------------------------------------------------------------------- commands

def cmd_synth(args, out):
    cfg = _config(args)
    data = build_dataset(cfg)
    train_set, test_set = split(data, cfg.train_fraction, cfg.seeds["split"])
    d = _out_dir(args)
    save_dataset(data, d / "dataset.txt")
    save_dataset(train_set, d / "train.txt")
    save_dataset(test_set, d / "test.txt")
    b, m = data.class_counts()
    print(f"wrote {len(data)} samples ({b} benign / {m} malware, dim {data.dim}) "
          f"-> {len(train_set)} train / {len(test_set)} test in {d}", file=out)


def cmd_train(args, out):
    _need(args, "method", "data")
    cfg = _config(args)
    data = load_dataset(args.data)
    post = train(args.method, data, cfg.arch(data.dim), cfg.train_config(args.method))
    post.n_inference = cfg.n_inference
    path = _out_dir(args) / f"model_{args.method}.bmal"
    save_posterior(post, path)
    final = post.history[-1] if post.history else float("nan")
    print(f"trained {args.method} on {len(data)} samples, final loss {final:.6f} -> {path}", file=out)


def cmd_attack(args, out):
    _need(args, "model", "data", "attack", "epsilon")
    cfg = _config(args)
    post = load_posterior(args.model)
    data = load_dataset(args.data)
    seeds = cfg.seeds
    tp = true_positive_malware(post, data, n=args.n, seed=seeds["score"])
    immutable = cfg.immutable_ranges(data.dim)
    lb, ub = immutable_bounds(data.dim, immutable) if immutable else (None, None)
    spec = AttackSpec(args.attack, args.epsilon, args.step_size, args.iterations,
                      delta_lb=lb if args.attack == "unbounded_gradient" else None, delta_ub=ub,
                      n_particles_for_gradient=args.n, seed=seeds["attack"])
    adv, results, summary = batch_attack(post, tp, spec)
    path = _out_dir(args) / f"adv_{args.attack}_{format_epsilon(args.epsilon)}.txt"
    save_dataset(adv, path)
    rate = summary.evasion_rate
    print(f"{spec.tag}: evaded {summary} (rate {_fmt(rate)}) -> {path}", file=out)


def cmd_score(args, out):
    _need(args, "model", "data")
    post = load_posterior(args.model)
    data = load_dataset(args.data)
    s = score_dataset(post, data, n=args.n, seed=_seed(args))
    buf = io.StringIO()
    buf.write("index,label,p_malware,pe,mi\n")
    for i in range(len(s)):
        buf.write(f"{i},{int(data.y[i])},{float(s.p_malware[i])!r},{float(s.pe[i])!r},"
                  f"{_mi_text(post.method, s.mi[i])}\n")
    if args.out:
        path = _out_dir(args) / f"scores_{post.method}.csv"
        atomic_write_text(path, buf.getvalue())
        print(f"scored {len(s)} samples with {post.method} (n={s.n}) -> {path}", file=out)
    else:
        out.write(buf.getvalue())


def cmd_eval(args, out):
    if args.model is None:
        cfg = _config(args)
        result = run_experiment(cfg)
        d = _out_dir(args)
        atomic_write_text(d / "report.json", dumps_report(result.report))
        for name, text in result.curves.items():
            atomic_write_text(d / name, text)
        _print_tables(result.report, out)
        return
    _need(args, "data", "adv")
    post = load_posterior(args.model)
    neg = load_dataset(args.data).where(0)
    pos = load_dataset(args.adv)
    if len(neg) == 0 or len(pos) == 0:
        raise DataError("eval needs benign samples in --data and a nonempty --adv set")
    seed = _seed(args)
    sb = score_dataset(post, neg, n=args.n, seed=seed)
    sa = score_dataset(post, pos, n=args.n, seed=seed)
    res = {}
    d = _out_dir(args) if args.out else None
    for score in ("pe", "mi"):
        roc = detection_auc(sb, sa, score)
        res[score] = roc.auc
        if d is not None:
            atomic_write_text(d / f"roc_{post.method}_{score}.csv", roc.to_csv())
    doc = {"method": post.method, "n_benign": len(neg), "n_adversarial": len(pos), "auc": res}
    if d is not None:
        atomic_write_text(d / "eval.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    mi = "n/a" if post.method == "MAP" else _fmt(res["mi"])
    print(f"{post.method}: PE-AUC {_fmt(res['pe'])}  MI-AUC {mi}", file=out)


def cmd_drift(args, out):
    _need(args, "model", "data")
    post = load_posterior(args.model)
    ref = load_dataset(args.data)
    if args.drifted:
        drifted = load_dataset(args.drifted)
    else:
        cfg = _config(args)
        ref = ref.where(MALWARE)
        drifted = drift_shift(ref, drift_config_for(cfg, ref.dim))
    rep = drift_report(post, ref, drifted, n=args.n, seed=_seed(args),
                       threshold_quantile=args.quantile, score=args.score)
    if args.out:
        d = _out_dir(args)
        atomic_write_text(d / "drift.json", json.dumps(rep.as_dict(), indent=2, sort_keys=True) + "\n")
        for name in ("pe", "mi"):
            atomic_write_text(d / f"drift_hist_{name}.csv", drift_histogram_csv([rep], name))
    print(f"{post.method}: mean {args.score} {rep.reference_mean[args.score]:.4f} -> "
          f"{rep.drifted_mean[args.score]:.4f}, threshold {rep.threshold:.4f}, "
          f"drift_flag={str(rep.drift_flag).lower()}", file=out)


def cmd_diversity(args, out):
    _need(args, "model", "data")
    post = load_posterior(args.model)
    entry = diversity(post, load_dataset(args.data), n=args.n, seed=_seed(args))
    if args.out:
        doc = {"method": entry.method, "diversity": entry.diversity, "n": entry.n,
               "n_samples": entry.n_samples}
        atomic_write_text(_out_dir(args) / f"diversity_{entry.method}.json",
                          json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"{entry.method}: diversity {entry.diversity:.6f} over {entry.n_samples} samples (n={entry.n})",
          file=out)


def cmd_reproduce(args, out):
    cfg = _config(args)
    target = args.out or cfg.output_dir
    if target is None:
        raise UsageError("reproduce requires --out or output_dir in the config")
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    result = reproduce(cfg, None, log)
    write_outputs(cfg, result, target)
    _print_tables(result.report, out)
    print(f"report -> {Path(target) / 'report.json'}", file=out)


def _print_tables(report, out):
    methods = report["methods"]
    print("clean: " + "  ".join(f"{m} auc={v['auc']:.3f} f1={v['f1']:.3f}"
                                for m, v in report["clean"].items()), file=out)
    for fam, rows in report["detection"].items():
        for eps, row in rows.items():
            cells = []
            for m in methods:
                c = row[m]
                mi = "n/a" if m == "MAP" else _fmt(c["mi"])
                cells.append(f"{m} pe={_fmt(c['pe'])} mi={mi}")
            print(f"{fam} eps={eps}: " + "  ".join(cells), file=out)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "attack": cmd_attack,
    "score": cmd_score,
    "eval": cmd_eval,
    "drift": cmd_drift,
    "diversity": cmd_diversity,
    "reproduce": cmd_reproduce,
}


def run_command(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand (one of: " + ", ".join(COMMANDS) + ")")
        # non-finite losses are detected explicitly and reported as one line
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=err)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=err)
        return EXIT_NUMERIC
    except (BayesmalError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"data error: {msg}", file=err)
        return EXIT_DATA
    return 0


def main(argv=None):
    sys.exit(run_command(argv))
