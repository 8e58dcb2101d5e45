"""Command-line entry point.

Subcommands: gen-data, train-f, distill, build-cascade, eval, bench, map and
run (all of the above in one run directory). Every command writes into a
run directory (``--out``, default ``runs/<command>-<timestamp>``) together
with the resolved configuration it used.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace
from datetime import datetime

import numpy as np

from . import artifacts, cascade, data, distill, plotting, reports
from .base_kernels import KernelBank
from .config import RunConfig
from .errors import (ConfigError, FormatError, InvalidInputError, TrainingDivergedError,
                     VersionMismatchError)

log = logging.getLogger("kcascade")

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_VERSION = 4
EXIT_DIVERGED = 5

LOG_COLUMNS = ("epoch", "objective", "step", "train_eer", "val_eer", "support")


def _load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.default()
    if args.seed is not None:
        cfg.override_seed(args.seed)
    return cfg


def _run_dir(args):
    out = args.out or os.path.join(
        "runs", f"{args.command}-{datetime.now().strftime('%Y%m%d-%H%M%S-%f')}")
    os.makedirs(out, exist_ok=True)
    return out


def _echo_config(cfg, out):
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(f"# config_sha256={cfg.digest()}\n")
        fh.write(cfg.to_text())


def resolve_dataset(cfg, path=None):
    """Dataset from ``path``, the config's ``[data] path``, or the generator.

    Generated data goes through the file encoding so it matches what
    ``gen-data`` writes bit for bit.
    """
    path = path or cfg["data"]["path"]
    if path:
        return data.load_pairs(path)
    d = cfg["data"]
    ds = data.generate_synthetic(d["n"], d["d"], d["positive_fraction"], d["separation"],
                                 d["seed"])
    return data.loads_pairs(data.dumps_pairs(ds))


def _split(cfg, ds):
    s = cfg["split"]
    return data.split(ds, data.SplitSpec(s["labeled_count"], s["seed"]))


def _write_log(path, records):
    with open(path, "w") as fh:
        fh.write("\t".join(LOG_COLUMNS) + "\n")
        for r in records:
            fh.write("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                               for c in LOG_COLUMNS) + "\n")


def _read_log(path):
    rows = reports.read_tsv(open(path).read())
    return [{k: float(v) for k, v in r.items()} for r in rows]


def _specs(cfg, n1):
    specs = cascade.default_stage_specs(n1, cfg["f"]["width"], cfg.distill_config("g"),
                                        cfg.distill_config("f"))
    k = cfg["cascade"]["g_stages"]
    if not 0 <= k <= len(specs) - 1:
        raise ConfigError(f"g_stages must be between 0 and {len(specs) - 1}", "g_stages")
    return specs[:k] + specs[-1:]


def _progress(name):
    def cb(record):
        if record["epoch"] % 50 == 0:
            log.info("%s epoch %d objective %.6g step %.4g train EER %.2f support %d", name,
                     record["epoch"], record["objective"], record["step"],
                     record["train_eer"], record["support"])
    return cb


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, cfg, out):
    d = cfg["data"]
    for key in ("n", "d", "positive_fraction", "separation"):
        if getattr(args, key, None) is not None:
            d[key] = getattr(args, key)
    ds = data.generate_synthetic(d["n"], d["d"], d["positive_fraction"], d["separation"],
                                 d["seed"])
    path = os.path.join(out, "data.kcpf")
    data.save_pairs(path, ds)
    log.info("wrote %s (%d samples, %d positives)", path, len(ds), int(np.sum(ds.labels > 0)))
    return path


def cmd_train_f(args, cfg, out, ds=None):
    ds = ds if ds is not None else resolve_dataset(cfg, getattr(args, "data", None))
    train_idx, val_idx, _ = _split(cfg, ds)
    X = ds.features.astype(np.float64)
    bank = KernelBank.from_data(X[train_idx], cfg["bank"]["num_chunks"],
                                cfg["bank"]["k_neighbors"])
    spec = _specs(cfg, bank.num_chunks)[-1]
    state = distill.train(X[train_idx], ds.labels[train_idx], spec.arch, bank, spec.config,
                          validation=(X[val_idx], ds.labels[val_idx]), on_epoch=_progress("f"))
    path = os.path.join(out, "f.kcas")
    artifacts.save_f(path, state, bank, train_idx,
                     {"config_sha256": cfg.digest(), "config": cfg.to_text()})
    _write_log(os.path.join(out, "f_train_log.tsv"), state.log)
    plotting.plot_training({"f": state.log}, os.path.join(out, "f_training.png"))
    last = state.log[-1]
    log.info("f trained: %d epochs, train EER %.2f, validation EER %.2f",
             state.epochs, last["train_eer"], last["val_eer"])
    return path


def _unlabeled(cfg, ds):
    c = cfg["cascade"]
    if not c["use_unlabeled"] or c["unlabeled_count"] <= 0:
        return None
    _, _, test_idx = _split(cfg, ds)
    rng = np.random.default_rng(cfg["split"]["seed"] + 1)
    pick = np.sort(rng.choice(test_idx, size=min(c["unlabeled_count"], len(test_idx)),
                              replace=False))
    return ds.features[pick].astype(np.float64)


def cmd_distill(args, cfg, out, stage_index=None, ds=None):
    f_state, bank, _, _ = artifacts.load_f(args.f)
    specs = _specs(cfg, bank.num_chunks)
    k = stage_index if stage_index is not None else args.stage
    if not 1 <= k < len(specs):
        raise InvalidInputError(f"stage must be between 1 and {len(specs) - 1}")
    extra = extra_scores = None
    if cfg["cascade"]["use_unlabeled"]:
        ds = ds if ds is not None else resolve_dataset(cfg, getattr(args, "data", None))
        extra = _unlabeled(cfg, ds)
        if extra is not None:
            f_only = cascade.assemble(f_state, bank, [])
            extra_scores = f_only.stages[0].scores(bank, f_only.store, extra)
    stage, state = cascade.distill_stage(f_state, bank, specs[k - 1], k, extra, extra_scores)
    path = os.path.join(out, f"stage_{k}.kcas")
    artifacts.save_stage(path, stage, k, {"config_sha256": cfg.digest()})
    _write_log(os.path.join(out, f"stage_{k}_train_log.tsv"), state.log)
    log.info("stage %d distilled: %d epochs, %d support vectors", k, state.epochs,
             stage.num_support)
    return path


def cmd_build_cascade(args, cfg, out, ds=None):
    f_state, bank, _, f_meta = artifacts.load_f(args.f)
    specs = _specs(cfg, bank.num_chunks)
    stages = []
    logs = {}
    f_log = os.path.join(os.path.dirname(args.f), "f_train_log.tsv")
    if os.path.exists(f_log):
        logs["f"] = _read_log(f_log)
    for k in range(1, len(specs)):
        path = os.path.join(out, f"stage_{k}.kcas")
        reuse = False
        if os.path.exists(path):
            stage, _, meta = artifacts.load_stage(path)
            reuse = meta.get("config_sha256") == cfg.digest()
        if not reuse:
            path = cmd_distill(args, cfg, out, stage_index=k, ds=ds)
            stage, _, _ = artifacts.load_stage(path)
        else:
            log.info("reusing %s", path)
        stages.append(stage)
        stage_log = os.path.join(out, f"stage_{k}_train_log.tsv")
        if os.path.exists(stage_log):
            logs[f"stage {k}"] = _read_log(stage_log)
    extra = None
    if cfg["cascade"]["use_unlabeled"]:
        extra = _unlabeled(cfg, ds if ds is not None else resolve_dataset(cfg, args.data))
    meta = {"config_sha256": cfg.digest(), "config": f_meta.get("config", cfg.to_text())}
    casc = cascade.assemble(f_state, bank, stages, extra, meta)
    path = os.path.join(out, "cascade.kcas")
    casc.save(path)
    plotting.plot_training(logs, os.path.join(out, "training.png"))
    log.info("cascade written: stage costs %s", casc.costs())
    return path


def _eval_set(cfg, ds, subset):
    if subset == "all":
        return np.arange(len(ds))
    return _split(cfg, ds)[2]


def _comments(cfg, casc, what, subset, n):
    return (f"kcascade {what}", f"config_sha256={cfg.digest()}",
            f"cascade_sha256={casc.digest()}", f"evaluation_set={subset} patterns={n}")


def cmd_eval(args, cfg, out, ds=None):
    casc = cascade.Cascade.load(args.cascade)
    ds = ds if ds is not None else resolve_dataset(cfg, args.data)
    idx = _eval_set(cfg, ds, args.subset)
    X, y = ds.features[idx].astype(np.float64), ds.labels[idx]
    exhaustive = cascade.evaluate_many(casc, X, threads=args.threads, exhaustive=True)
    pipe = cascade.evaluate_many(casc, X, threads=args.threads)
    srows = reports.stage_rows(casc, exhaustive, y)
    comments = _comments(cfg, casc, "evaluation report", args.subset, len(idx))
    outputs = {
        "stages.tsv": reports.render_tsv(srows, reports.STAGE_COLUMNS,
                                         comments + ("mode=independent",)),
        "pipeline.tsv": reports.render_tsv(reports.pipeline_rows(casc, pipe, y),
                                           reports.PIPELINE_COLUMNS, comments + ("mode=pipeline",)),
        "summary.tsv": reports.render_tsv(reports.summary_rows(casc, pipe, exhaustive, y),
                                          reports.SUMMARY_COLUMNS, comments),
    }
    for name, text in outputs.items():
        with open(os.path.join(out, name), "w") as fh:
            fh.write(text)
    plotting.plot_stage_report(srows, os.path.join(out, "stages.png"))
    sys.stdout.write(outputs["stages.tsv"])
    sys.stdout.write(outputs["summary.tsv"])
    return os.path.join(out, "stages.tsv")


def _time_ms(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return 1000.0 * best


def cmd_bench(args, cfg, out, ds=None):
    casc = cascade.Cascade.load(args.cascade)
    ds = ds if ds is not None else resolve_dataset(cfg, args.data)
    idx = _eval_set(cfg, ds, args.subset)
    X, y = ds.features[idx].astype(np.float64), ds.labels[idx]
    times = []
    for stage in casc.stages:
        single = cascade.Cascade(casc.bank, casc.store, [replace(stage, is_f=True)])
        times.append(_time_ms(lambda: cascade.evaluate_many(single, X, threads=args.threads),
                              args.repeats))
    t_cascade = _time_ms(lambda: cascade.evaluate_many(casc, X, threads=args.threads),
                         args.repeats)
    exhaustive = cascade.evaluate_many(casc, X, threads=args.threads, exhaustive=True)
    pipe = cascade.evaluate_many(casc, X, threads=args.threads)
    comments = _comments(cfg, casc, "benchmark", args.subset, len(idx)) + (
        f"threads={args.threads} repeats={args.repeats} time_ms=best wall time for all patterns",)
    text = reports.render_tsv(reports.stage_rows(casc, exhaustive, y, times),
                              reports.STAGE_COLUMNS, comments)
    text += reports.render_tsv(
        reports.summary_rows(casc, pipe, exhaustive, y, {"f": times[-1], "cascade": t_cascade}),
        reports.SUMMARY_COLUMNS)
    with open(os.path.join(out, "bench.tsv"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return os.path.join(out, "bench.tsv")


def cmd_map(args, cfg, out, ds=None):
    casc = cascade.Cascade.load(args.cascade)
    ds = ds if ds is not None else resolve_dataset(cfg, args.data)
    if ds.grid is None:
        raise InvalidInputError("dataset has no grid layout; cannot draw a map")
    res = cascade.evaluate_many(casc, ds.features.astype(np.float64), threads=args.threads)
    pgm = os.path.join(out, "stage_map.pgm")
    data.emit_stage_map(res.stages_consumed, casc.num_stages, ds.grid, pgm,
                        os.path.join(out, "stage_counts.tsv"))
    plotting.plot_stage_map(res.stages_consumed, casc.num_stages, ds.grid,
                            os.path.join(out, "stage_map.png"))
    log.info("map written to %s", pgm)
    return pgm


def cmd_run(args, cfg, out):
    ds = resolve_dataset(cfg, args.data)
    data.save_pairs(os.path.join(out, "data.kcpf"), ds)
    args.f = cmd_train_f(args, cfg, out, ds)
    args.cascade = cmd_build_cascade(args, cfg, out, ds)
    cmd_eval(args, cfg, out, ds)
    if ds.grid is not None:
        cmd_map(args, cfg, out, ds)
    if args.bench:
        cmd_bench(args, cfg, out, ds)
    return args.cascade


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="override every seed in the configuration")
    common.add_argument("--threads", type=int, default=1, help="evaluation worker threads")
    common.add_argument("--out", help="run directory (default: runs/<command>-<timestamp>)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kcascade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--positive-fraction", dest="positive_fraction", type=float)
    p.add_argument("--separation", type=float)

    p = sub.add_parser("train-f", parents=[common], help="train the f-network")
    p.add_argument("--data")

    p = sub.add_parser("distill", parents=[common], help="distill one g stage")
    p.add_argument("--f", required=True, help="f artifact from train-f")
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--data")

    p = sub.add_parser("build-cascade", parents=[common], help="distill all stages, assemble")
    p.add_argument("--f", required=True)
    p.add_argument("--data")

    for name, helptext in (("eval", "accuracy/cost report"), ("bench", "timing report"),
                           ("map", "stage-count map")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--cascade", required=True)
        p.add_argument("--data")
        p.add_argument("--subset", choices=("test", "all"), default="test")
        if name == "bench":
            p.add_argument("--repeats", type=int, default=3)

    p = sub.add_parser("run", parents=[common], help="whole pipeline in one directory")
    p.add_argument("--data")
    p.add_argument("--subset", choices=("test", "all"), default="test")
    p.add_argument("--bench", action="store_true")
    p.add_argument("--repeats", type=int, default=3)
    return parser


COMMANDS = {
    "gen-data": cmd_gen_data, "train-f": cmd_train_f, "distill": cmd_distill,
    "build-cascade": cmd_build_cascade, "eval": cmd_eval, "bench": cmd_bench,
    "map": cmd_map, "run": cmd_run,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = _load_config(args)
        cfg.distill_config("f")
        cfg.distill_config("g")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        out = _run_dir(args)
        _echo_config(cfg, out)
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VersionMismatchError as exc:
        print(f"version mismatch: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (FormatError, InvalidInputError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return 0


if __name__ == "__main__":
    sys.exit(main())
