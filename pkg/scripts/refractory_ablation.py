"""Sweep the reset timestep r on the delayed-class task and tabulate accuracy and spike rates."""

import argparse
import json

import numpy as np

from refssm.config import RunConfig
from refssm.data import synth_task_gen
from refssm.model import effective_rate, init_params
from refssm.training import TrainState, evaluate, fit


def run(variant: str, r: int, epochs: int, seed: int) -> dict:
    cfg = RunConfig(task="synth-delayed", variant=variant, reset_timestep=r, layers=2, model_dim=64,
                    seq_len=256, n_train=500, n_test=200, epochs=epochs, seed=seed,
                    theta=0.0 if variant == "frssm" else None)
    train = synth_task_gen("delayed_class", cfg.n_train, cfg.seq_len, seed)
    test = synth_task_gen("delayed_class", cfg.n_test, cfg.seq_len, seed + 1, split="test")
    mcfg = cfg.model_config(train.d_input, train.n_classes)
    state = fit(TrainState.fresh(init_params(mcfg, np.random.default_rng(seed)), seed),
                train, mcfg, cfg.train_config())
    ev = evaluate(state.params, test, mcfg)
    rate = float(np.mean(ev["firing_rates"]))
    return {"variant": variant, "r": r, "test_acc": ev["accuracy"], "firing_rate": rate,
            "effective_rate": effective_rate(rate, mcfg)}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", nargs="+", default=["pssm", "frssm"])
    ap.add_argument("--r", type=int, nargs="+", default=[1, 2, 3, 5, 8])
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for v in args.variants:
        for r in args.r:
            print(json.dumps(run(v, r, args.epochs, args.seed)), flush=True)
