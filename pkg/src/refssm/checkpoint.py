"""Checkpoints: one .npz holding parameters, optimizer moments and a JSON header."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, init_params
from .training import TrainState

FORMAT = "refssm-checkpoint"
VERSION = 1


def save_checkpoint(path, state: TrainState, cfg: ModelConfig, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "model_config": asdict(cfg),
        "step": state.step,
        "epoch": state.epoch,
        "rng_seed": state.rng_seed,
        "best_metric": state.best_metric if np.isfinite(state.best_metric) else None,
        "shapes": {k: list(v.shape) for k, v in state.params.items()},
        "dtype": str(next(iter(state.params.values())).dtype),
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for k in state.params:
        arrays[f"p/{k}"] = state.params[k]
        arrays[f"m/{k}"] = state.m[k]
        arrays[f"v/{k}"] = state.v[k]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path, expect: ModelConfig | None = None):
    """Return (state, model config, header). Rejects format, version or shape mismatches."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        z = np.load(path, allow_pickle=False)
        meta = json.loads(bytes(z["__meta__"]).decode())
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if meta.get("format") != FORMAT or meta.get("version") != VERSION:
        raise CheckpointError(
            f"checkpoint version mismatch: got {meta.get('format')} v{meta.get('version')}, "
            f"expected {FORMAT} v{VERSION}"
        )
    cfg = ModelConfig(**meta["model_config"])
    if expect is not None and expect != cfg:
        raise CheckpointError("checkpoint version mismatch: model config differs from the requested one")
    reference = init_params(cfg, np.random.default_rng(0))
    if set(reference) != set(meta["shapes"]):
        raise CheckpointError("checkpoint version mismatch: parameter names differ from config")
    for k, ref in reference.items():
        stored = [z[f"{g}/{k}"].shape for g in ("p", "m", "v")]
        if list(ref.shape) != meta["shapes"][k] or any(s != ref.shape for s in stored):
            raise CheckpointError(f"checkpoint version mismatch: {k} has shape {meta['shapes'][k]}, "
                                  f"config implies {list(ref.shape)}")
    names = list(meta["shapes"])
    best = meta.get("best_metric")
    state = TrainState(
        params={k: z[f"p/{k}"].copy() for k in names},
        m={k: z[f"m/{k}"].copy() for k in names},
        v={k: z[f"v/{k}"].copy() for k in names},
        step=meta["step"], epoch=meta["epoch"], rng_seed=meta["rng_seed"],
        best_metric=float("-inf") if best is None else best,
    )
    return state, cfg, meta
