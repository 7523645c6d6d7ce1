"""Training engine: surrogate-gradient backprop, AdamW, finite-difference checks, loops."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericHealthError
from .functional import softmax_cross_entropy
from .model import NO_DECAY_SUFFIXES, ModelConfig, backward, forward
from .spiking import SteepSigmoid

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    checkpoint_every: int = 0
    eval_batch_size: int = 256


@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    rng_seed: int = 0
    best_metric: float = float("-inf")

    @classmethod
    def fresh(cls, params, seed: int = 0) -> "TrainState":
        return cls(
            params=params,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            rng_seed=seed,
        )


@dataclass
class GradReport:
    rel_err: dict[str, float]
    max: float
    mean: float
    n_coords: int


def _check_finite(grads):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericHealthError(k, f"non-finite gradient in tensor {k}")


def loss_fn(params, batch, labels, cfg: ModelConfig, spike_fn=None) -> float:
    logits, _ = forward(params, batch, cfg, train=False, spike_fn=spike_fn)
    return softmax_cross_entropy(logits, labels)[0]


def backward_pass(params, batch, labels, cfg: ModelConfig, *, train: bool = False,
                  rng=None, spike_fn=None):
    """Loss, gradients for every parameter tensor, and the forward tape."""
    logits, tape = forward(params, batch, cfg, train=train, rng=rng, spike_fn=spike_fn)
    loss, g_logits = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericHealthError("loss")
    grads = backward(g_logits, tape, params, cfg)
    _check_finite(grads)
    return loss, grads, {"logits": logits, "tape": tape}


def grad_check_fd(params, batch, labels, cfg: ModelConfig, epsilon: float = 1e-5,
                  spike_fn=None) -> GradReport:
    """Central differences against ``backward_pass`` on the smooth-relaxed network.

    Every Heaviside is replaced by a steep sigmoid (its derivative is then
    exact, not a surrogate), so analytic and numeric gradients must agree.
    Meant for tiny float64 models.
    """
    spike_fn = SteepSigmoid() if spike_fn is None else spike_fn
    _, grads, _ = backward_pass(params, batch, labels, cfg, spike_fn=spike_fn)
    rel = {}
    n = 0
    for name, p in params.items():
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = loss_fn(params, batch, labels, cfg, spike_fn)
            flat[i] = orig - epsilon
            fm = loss_fn(params, batch, labels, cfg, spike_fn)
            flat[i] = orig
            num.reshape(-1)[i] = (fp - fm) / (2 * epsilon)
        n += flat.size
        g = grads[name]
        denom = max(np.linalg.norm(g), np.linalg.norm(num), 1e-12)
        rel[name] = float(np.linalg.norm(g - num) / denom)
    vals = list(rel.values())
    return GradReport(rel_err=rel, max=max(vals), mean=float(np.mean(vals)), n_coords=n)


class AdamW:
    """Adam with decoupled weight decay: p <- p - lr*wd*p, then the Adam step."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01,
                 no_decay=NO_DECAY_SUFFIXES):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = tuple(no_decay)

    def decays(self, name: str) -> bool:
        return not name.endswith(self.no_decay)

    def step(self, state: TrainState, grads: dict[str, np.ndarray]) -> None:
        b1, b2 = self.betas
        state.step += 1
        t = state.step
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for k, p in state.params.items():
            g = grads[k]
            if self.weight_decay and self.decays(k):
                p -= self.lr * self.weight_decay * p
            m, v = state.m[k], state.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def iter_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    idx = np.arange(n) if rng is None else rng.permutation(n)
    for i in range(0, n, batch_size):
        yield idx[i : i + batch_size]


def train_epoch(state: TrainState, dataset, cfg: ModelConfig, tcfg: TrainConfig,
                opt: AdamW | None = None) -> tuple[TrainState, dict]:
    """One pass over ``dataset`` with AdamW updates; returns training metrics."""
    opt = opt or AdamW(tcfg.lr, tcfg.betas, tcfg.eps, tcfg.weight_decay)
    shuffle = np.random.default_rng([state.rng_seed, state.epoch, 0])
    t0 = time.perf_counter()
    tot_loss = 0.0
    correct = 0
    seen = 0
    rates = []
    for idx in iter_batches(len(dataset), tcfg.batch_size, shuffle):
        xb, yb = dataset.sequences[idx], dataset.labels[idx]
        drop_rng = np.random.default_rng([state.rng_seed, state.epoch, 1, state.step])
        loss, grads, aux = backward_pass(state.params, xb, yb, cfg, train=True, rng=drop_rng)
        opt.step(state, grads)
        tot_loss += loss * len(idx)
        correct += int(np.sum(aux["logits"].argmax(axis=1) == yb))
        seen += len(idx)
        rates.append(aux["tape"].spike_rates)
    state.epoch += 1
    metrics = {
        "epoch": state.epoch,
        "loss": tot_loss / seen,
        "acc": correct / seen,
        "firing_rates": np.mean(rates, axis=0).tolist() if rates and rates[0] else [],
        "wall_time": time.perf_counter() - t0,
    }
    return state, metrics


def evaluate(params, dataset, cfg: ModelConfig, batch_size: int = 256) -> dict:
    """Deterministic accuracy, loss and per-layer spike rates (dropout off)."""
    tot_loss = 0.0
    correct = 0
    rate_sum = None
    for idx in iter_batches(len(dataset), batch_size):
        xb, yb = dataset.sequences[idx], dataset.labels[idx]
        logits, tape = forward(params, xb, cfg, train=False)
        loss, _ = softmax_cross_entropy(logits, yb)
        tot_loss += loss * len(idx)
        correct += int(np.sum(logits.argmax(axis=1) == yb))
        r = np.asarray(tape.spike_rates) * len(idx)
        rate_sum = r if rate_sum is None else rate_sum + r
    n = len(dataset)
    rates = (rate_sum / n).tolist() if rate_sum is not None and rate_sum.size else []
    return {"accuracy": correct / n, "loss": tot_loss / n, "firing_rates": rates}


@dataclass
class RunLog:
    """Append-only JSON-lines metrics file (one object per epoch)."""

    path: Path | None = None
    records: list = field(default_factory=list)

    def write(self, rec: dict) -> None:
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec) + "\n")


def fit(state: TrainState, train_set, cfg: ModelConfig, tcfg: TrainConfig, *,
        test_set=None, run_log: RunLog | None = None, checkpoint_fn=None,
        target_train_acc: float | None = None) -> TrainState:
    """Train for ``tcfg.epochs`` epochs (optionally stopping at a train-accuracy target)."""
    opt = AdamW(tcfg.lr, tcfg.betas, tcfg.eps, tcfg.weight_decay)
    run_log = run_log or RunLog()
    while state.epoch < tcfg.epochs:
        state, m = train_epoch(state, train_set, cfg, tcfg, opt)
        if not np.isfinite(m["loss"]):
            raise NumericHealthError("loss", f"non-finite training loss at epoch {state.epoch}")
        if test_set is not None:
            ev = evaluate(state.params, test_set, cfg, tcfg.eval_batch_size)
            m["test_acc"], m["test_loss"] = ev["accuracy"], ev["loss"]
            state.best_metric = max(state.best_metric, ev["accuracy"])
        else:
            state.best_metric = max(state.best_metric, m["acc"])
        run_log.write(m)
        log.info("epoch %d loss %.4f acc %.4f", m["epoch"], m["loss"], m["acc"])
        if checkpoint_fn is not None and tcfg.checkpoint_every and state.epoch % tcfg.checkpoint_every == 0:
            checkpoint_fn(state)
        if target_train_acc is not None and m["acc"] >= target_train_acc:
            break
    return state
