"""Command-line entry point: train, eval, check, stats, bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import checks
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TASKS, RunConfig, dump_config, load_config
from .data import DATA_ROOT_ENV, load_cifar10_gray_seq, load_mnist_seq, resolve_data_root, synth_task_gen
from .errors import ConfigError, RefSsmError
from .model import effective_rate, forward, init_params, param_count
from .ssm import fft_convolve, init_s4d_lin, recurrent_scan, ssm_kernel
from .training import RunLog, TrainState, evaluate, fit

log = logging.getLogger("refssm")

# flag -> RunConfig field
OVERRIDES = {
    "variant": "variant", "layers": "layers", "dim": "model_dim", "kernel_dim": "kernel_dim",
    "dropout": "dropout", "refractory": "reset_timestep", "theta": "theta", "fr_mode": "fr_mode",
    "lr": "learning_rate", "weight_decay": "weight_decay", "epochs": "epochs",
    "batch_size": "batch_size", "checkpoint_every": "checkpoint_every", "task": "task",
    "data_root": "data_root", "len": "seq_len", "n_train": "n_train", "n_test": "n_test",
    "n_classes": "n_classes", "seed": "seed", "out": "out_dir", "precision": "precision",
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run config; flags given here override it")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--data-root", help=f"dataset directory (fallback: ${DATA_ROOT_ENV})")
    p.add_argument("--len", type=int, help="sequence length for synthetic tasks")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--variant", choices=("frssm", "pssm", "linear"))
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int, help="model dim H")
    p.add_argument("--kernel-dim", type=int, help="state dim N")
    p.add_argument("--dropout", type=float)
    p.add_argument("--refractory", type=int, help="reset timestep r")
    p.add_argument("--theta", type=float)
    p.add_argument("--fr-mode", choices=("mask", "event"))
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--precision", choices=("float64", "float32"))


def run_config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {field: getattr(args, flag) for flag, field in OVERRIDES.items()
            if getattr(args, flag, None) is not None}
    return cfg.replace(**over)


def load_task(cfg: RunConfig):
    """(train, test) datasets for the configured task."""
    if cfg.task.startswith("synth-"):
        kind = cfg.task.split("-", 1)[1]
        kind = "delayed_class" if kind == "delayed" else kind
        train = synth_task_gen(kind, cfg.n_train, cfg.seq_len, cfg.seed, cfg.n_classes)
        test = synth_task_gen(kind, cfg.n_test, cfg.seq_len, cfg.seed + 1, cfg.n_classes, split="test")
        return train, test
    root = resolve_data_root(cfg.data_root)
    if root is None:
        raise ConfigError(f"task {cfg.task} needs a dataset: pass --data-root or set {DATA_ROOT_ENV}")
    if not root.is_dir():
        raise ConfigError(f"--data-root {root} is not a directory")
    if cfg.task == "scifar":
        return load_cifar10_gray_seq(root)
    return load_mnist_seq(root, crop=16 if cfg.task == "smnist256" else None)


def cmd_train(args) -> int:
    cfg = run_config_from_args(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    train, test = load_task(cfg)
    mcfg = cfg.model_config(train.d_input, train.n_classes)
    tcfg = cfg.train_config()
    params = init_params(mcfg, np.random.default_rng(cfg.seed), dtype=cfg.dtype)
    state = TrainState.fresh(params, cfg.seed)
    log.info("%s: %d parameters, %d train / %d test sequences of length %d",
             cfg.task, param_count(params), len(train), len(test), train.seq_len)
    metrics = out / "metrics.jsonl"
    metrics.unlink(missing_ok=True)
    extra = {"run_config": asdict(cfg)}

    def ckpt(st):
        save_checkpoint(out / "checkpoints" / f"epoch_{st.epoch:04d}.npz", st, mcfg, extra)

    t0 = time.perf_counter()
    state = fit(state, train, mcfg, tcfg, test_set=test, run_log=RunLog(metrics), checkpoint_fn=ckpt,
                target_train_acc=args.target_acc)
    save_checkpoint(out / "final.npz", state, mcfg, extra)
    last = json.loads(metrics.read_text().splitlines()[-1]) if state.epoch else {}
    summary = {
        "epochs": state.epoch,
        "train_acc": last.get("acc"),
        "test_acc": last.get("test_acc"),
        "best_test_acc": state.best_metric if state.epoch else None,
        "firing_rates": last.get("firing_rates", []),
        "wall_time_s": time.perf_counter() - t0,
        "n_params": param_count(state.params),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return 0


def _checkpoint_and_data(args):
    state, mcfg, meta = load_checkpoint(args.checkpoint)
    base = RunConfig(**meta.get("extra", {}).get("run_config", {}))
    over = {field: getattr(args, flag) for flag, field in OVERRIDES.items()
            if getattr(args, flag, None) is not None}
    cfg = base.replace(**over)
    _, test = load_task(cfg)
    if test.d_input != mcfg.d_input or test.n_classes != mcfg.n_classes:
        raise ConfigError(f"dataset ({test.d_input} channels, {test.n_classes} classes) does not "
                          f"match the checkpoint ({mcfg.d_input}, {mcfg.n_classes})")
    return state, mcfg, test


def cmd_eval(args) -> int:
    state, mcfg, test = _checkpoint_and_data(args)
    res = evaluate(state.params, test, mcfg)
    print(json.dumps(res))
    return 0


def write_stats_csv(path, rates: list[float], mcfg) -> None:
    """Per-layer rates plus a trailing mean row."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["layer_index", "firing_rate", "effective_rate"])
        for i, r in enumerate(rates):
            w.writerow([i, repr(r), repr(effective_rate(r, mcfg))])
        mean = float(np.mean(rates)) if rates else 0.0
        w.writerow(["mean", repr(mean), repr(effective_rate(mean, mcfg))])


def cmd_stats(args) -> int:
    state, mcfg, test = _checkpoint_and_data(args)
    if mcfg.variant == "linear":
        raise ConfigError("linear model has no spiking layers")
    n = min(args.n_samples, len(test))
    sums = np.zeros(mcfg.n_layers)
    for i in range(0, n, 256):
        xb = test.sequences[i : min(i + 256, n)]
        _, tape = forward(state.params, xb, mcfg)
        sums += np.asarray(tape.spike_rates) * len(xb)
    rates = (sums / n).tolist()
    out = Path(args.csv_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_stats_csv(out, rates, mcfg)
    print(out.read_text(), end="")
    return 0


def _parse_tols(items) -> dict[str, float]:
    tols = {}
    for item in items or []:
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--tol expects NAME=VALUE, got {item!r}")
        try:
            tols[name] = float(val)
        except ValueError:
            raise ConfigError(f"--tol {name}: {val!r} is not a number") from None
    return tols


def cmd_check(args) -> int:
    try:
        results = checks.run_suite(args.suite, seed=args.seed, tolerances=_parse_tols(args.tol))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    report = checks.report_json(results)
    if args.out:
        Path(args.out).write_text(report)
    print(report)
    for r in results:
        if r.status != "pass":
            print(f"FAILED {r.check_name}: measured {r.measured_error} vs tolerance {r.tolerance} "
                  f"({r.detail})", file=sys.stderr)
    return 0 if checks.all_passed(results) else 1


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rows(lengths=(256, 1024, 4096), H: int = 16, N: int = 64, repeats: int = 3, seed: int = 0):
    rng = np.random.default_rng(seed)
    p = init_s4d_lin(N, H, rng)
    rows = []
    for L in lengths:
        x = rng.normal(size=(1, H, L))
        t_fft = _best_time(lambda: fft_convolve(ssm_kernel(p, L), x) + p.d_skip[:, None] * x, repeats)
        t_scan = _best_time(lambda: recurrent_scan(p, x), repeats)
        rows.append({"L": L, "fft_ms": t_fft * 1e3, "scan_ms": t_scan * 1e3})
    return rows


def cmd_bench(args) -> int:
    rows = bench_rows(tuple(args.lengths), args.dim, args.kernel_dim, args.repeats)
    faster = [r["L"] for r in rows if r["fft_ms"] < r["scan_ms"]]
    crossover = min(faster) if faster else None
    print(json.dumps({"rows": rows, "fft_faster_from_L": crossover}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="refssm", description="Spiking diagonal-SSM sequence models")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model and write metrics, checkpoints and a summary")
    _add_run_flags(p)
    p.add_argument("--target-acc", type=float, help="stop once train accuracy reaches this value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p.add_argument("checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", parents=[common], help="run verification suites; exit 0 iff all pass")
    p.add_argument("suite", nargs="?", default="all", choices=("all",) + checks.SUITES)
    p.add_argument("--tol", action="append", metavar="NAME=VALUE", help="override a check tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("stats", parents=[common], help="per-layer spike rates of a checkpoint as CSV")
    p.add_argument("checkpoint")
    _add_run_flags(p)
    p.add_argument("--csv", dest="csv_out", default="stats.csv")
    p.add_argument("--n-samples", type=int, default=1000)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bench", parents=[common], help="time FFT convolution against the recurrent scan")
    p.add_argument("--lengths", type=int, nargs="+", default=[256, 1024, 4096])
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--kernel-dim", type=int, default=64)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except RefSsmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
