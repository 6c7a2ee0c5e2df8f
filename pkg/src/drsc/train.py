"""Alternating min/max training, checkpoints and run logs."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from drsc.config import RunConfig
from drsc.dataio.features import FeatureSet, load_features
from drsc.losses import adversarial_loss, classification_loss, total_objective
from drsc.model import DRSC, argmax_lowest, build_model

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "drsc-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, breakdown: dict, last_checkpoint: str | None):
        super().__init__(f"non-finite loss at step {step}: {breakdown}; "
                         f"last good checkpoint: {last_checkpoint or 'none'}")
        self.last_checkpoint = last_checkpoint


class CheckpointMismatchError(ValueError):
    pass


@dataclass
class TrainState:
    model: nn.Module
    opt_min: torch.optim.Optimizer
    opt_max: torch.optim.Optimizer | None
    rng: torch.Generator
    step: int = 0
    epoch: int = 0
    best_accuracy: float = -1.0
    best_epoch: int = -1
    last_checkpoint: str | None = None


@dataclass
class FitResult:
    state: TrainState
    history: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def torch_dtype(config: RunConfig) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[config.dtype]


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def _adam(params, config: RunConfig):
    return torch.optim.Adam(params, lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)


def init_state(config: RunConfig, model: nn.Module | None = None) -> TrainState:
    config.validate()
    if model is None:
        model = build_model(config.method, config.model, config.dropout)
    model = model.to(torch_dtype(config))
    opt_max = _adam(model.max_parameters(), config) if isinstance(model, DRSC) else None
    rng = torch.Generator().manual_seed(config.seed)
    return TrainState(model, _adam(model.min_parameters(), config), opt_max, rng)


def to_batch(data: FeatureSet, idx, dtype=torch.float32) -> dict:
    text = torch.as_tensor(data.text[idx])
    if text.is_floating_point():
        text = text.to(dtype)
    return {
        "text": text,
        "lengths": torch.as_tensor(data.lengths[idx]).long(),
        "mel": torch.as_tensor(data.mel[idx]).to(dtype),
        "labels": torch.as_tensor(data.labels[idx]).long(),
    }


def _clip(params, max_norm):
    if max_norm:
        nn.utils.clip_grad_norm_(params, max_norm)


def discriminator_phase(state: TrainState, batch: dict, config: RunConfig) -> float:
    """One max-player update; min-player outputs are produced without gradients."""
    model, w = state.model, config.weights.effective()["adversarial"]
    lengths = batch["lengths"]
    with torch.no_grad():
        T = model.text_features(batch["text"], lengths)
        u, v, _ = model.cross(T, batch["mel"], lengths, state.rng)
        T_hat, M_hat = model.restore(u, v, lengths, state.rng)
    loss = sum(adversarial_loss(real, fake, lambda x, d=d: model.discriminate(d, x),
                                "discriminator_step")
               for d, real, fake in (("text", T, T_hat), ("mel", batch["mel"], M_hat)))
    state.opt_max.zero_grad(set_to_none=True)
    (w * loss).backward()
    _clip(model.max_parameters(), config.grad_clip)
    state.opt_max.step()
    return float(loss.detach())


def train_step(state: TrainState, batch: dict, config: RunConfig) -> dict:
    """Discriminator update(s), then one update of encoders/generators/classifier."""
    model = state.model
    model.train()
    if isinstance(model, DRSC):
        l_adv_d = 0.0
        if config.weights.effective()["adversarial"] > 0:
            for _ in range(config.d_steps_per_g_step):
                l_adv_d = discriminator_phase(state, batch, config)
        loss, _, metrics = total_objective(model, batch, config.weights, config.criterion,
                                           state.rng, compute_max=False)
        metrics["L_adv_d"] = l_adv_d
    else:
        logits = model(batch["text"], batch["mel"], batch["lengths"])
        loss = classification_loss(logits, batch["labels"])
        metrics = {"L_CE": float(loss.detach()), "total": float(loss.detach())}

    if not all(math.isfinite(v) for v in metrics.values()):
        raise NonFiniteLossError(state.step, metrics, state.last_checkpoint)
    state.opt_min.zero_grad(set_to_none=True)
    if torch.is_tensor(loss) and loss.requires_grad:
        loss.backward()
        _clip(model.min_parameters(), config.grad_clip)
        state.opt_min.step()
    state.step += 1
    return metrics


# checkpoints ---------------------------------------------------------------

def save_checkpoint(state: TrainState, config: RunConfig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.model_hash(),
        "step": state.step,
        "epoch": state.epoch,
        "best_accuracy": state.best_accuracy,
        "best_epoch": state.best_epoch,
        "model": state.model.state_dict(),
        "opt_min": state.opt_min.state_dict(),
        "opt_max": state.opt_max.state_dict() if state.opt_max is not None else None,
        "rng_noise": state.rng.get_state(),
        "rng_torch": torch.get_rng_state(),
    }
    tmp = path.with_suffix(".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: str | Path, config: RunConfig | None = None,
                    force: bool = False) -> tuple[TrainState, RunConfig]:
    """Rebuild a training state from disk.

    When ``config`` is given its model hash must match the stored one unless
    ``force`` is set; the stored config is used otherwise.
    """
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a DRSC checkpoint")
    if payload["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {payload['version']} unsupported")
    stored = RunConfig.from_dict(payload["config"])
    if config is not None and config.model_hash() != payload["config_hash"] and not force:
        raise CheckpointMismatchError(
            f"{path} was trained with config hash {payload['config_hash']}, "
            f"current config hash is {config.model_hash()} (use --force to override)")
    use = config if config is not None else stored
    state = init_state(use, build_model(stored.method, stored.model, use.dropout))
    state.model.load_state_dict(payload["model"])
    state.opt_min.load_state_dict(payload["opt_min"])
    if state.opt_max is not None and payload["opt_max"] is not None:
        state.opt_max.load_state_dict(payload["opt_max"])
    state.rng.set_state(payload["rng_noise"])
    torch.set_rng_state(payload["rng_torch"])
    state.step, state.epoch = payload["step"], payload["epoch"]
    state.best_accuracy, state.best_epoch = payload["best_accuracy"], payload["best_epoch"]
    state.last_checkpoint = str(path)
    return state, use


# fitting -------------------------------------------------------------------

@torch.no_grad()
def predict_dataset(model: nn.Module, data: FeatureSet, batch_size: int = 64,
                    dtype=torch.float32) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(data), batch_size):
        b = to_batch(data, np.arange(start, min(start + batch_size, len(data))), dtype)
        out.append(argmax_lowest(model(b["text"], b["mel"], b["lengths"])).numpy())
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(model: nn.Module, data: FeatureSet, dtype=torch.float32) -> float:
    if len(data) == 0:
        return 0.0
    return float((predict_dataset(model, data, dtype=dtype) == data.labels).mean())


def _epoch_order(seed: int, epoch: int, n: int) -> torch.Tensor:
    return torch.randperm(n, generator=torch.Generator().manual_seed(seed * 1_000_003 + epoch))


def _append_jsonl(path: Path, record: dict) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record) + "\n")


def fit(config: RunConfig, train: FeatureSet | None = None, test: FeatureSet | None = None,
        resume: bool = False, stop_after_epochs: int | None = None,
        force: bool = False) -> FitResult:
    """Train until ``config.max_epochs``.

    Features come from ``config.paths.cache_dir`` unless ``train``/``test``
    are passed in. Writes ``config.json``, ``metrics.jsonl`` (per logging
    step), ``epochs.jsonl``, ``last.pt``, ``best.pt`` and ``summary.json``
    under ``config.paths.out_dir``. ``stop_after_epochs`` ends the call early,
    as an interruption would; a later ``resume=True`` call continues, and
    ``force`` lets it continue under a changed model config.
    """
    config.validate()
    if train is None:
        train, test, vocab = load_features(config.paths.cache_dir, config.features, config.text_source)
        if config.model.vocab_size != len(vocab):
            config = config.with_overrides({"model.vocab_size": len(vocab)})
        if config.eval_text_source != config.text_source:
            _, test, _ = load_features(config.paths.cache_dir, config.features, config.eval_text_source)
    out = Path(config.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dtype = torch_dtype(config)

    last = out / "last.pt"
    if resume and last.exists():
        state, config = load_checkpoint(last, config, force)
        log.info("resumed from %s at epoch %d", last, state.epoch)
    else:
        seed_everything(config.seed, config.deterministic)
        state = init_state(config)
        for name in ("metrics.jsonl", "epochs.jsonl"):
            (out / name).unlink(missing_ok=True)
    config.save(out / "config.json")

    history = []
    epochs_run = 0
    while state.epoch < config.max_epochs:
        sums: dict[str, float] = {}
        n_batches = 0
        order = _epoch_order(config.seed, state.epoch, len(train)).numpy()
        for start in range(0, len(order), config.batch_size):
            batch = to_batch(train, order[start:start + config.batch_size], dtype)
            metrics = train_step(state, batch, config)
            for k, v in metrics.items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
            if state.step % config.log_every == 0:
                _append_jsonl(out / "metrics.jsonl", {"step": state.step, **metrics})
        record = {"epoch": state.epoch, "step": state.step,
                  **{k: v / max(n_batches, 1) for k, v in sums.items()}}
        record["test_accuracy"] = accuracy(state.model, test, dtype) if test is not None else None
        state.epoch += 1
        if record["test_accuracy"] is not None and record["test_accuracy"] > state.best_accuracy:
            state.best_accuracy, state.best_epoch = record["test_accuracy"], record["epoch"]
            save_checkpoint(state, config, out / "best.pt")
        save_checkpoint(state, config, last)
        state.last_checkpoint = str(last)
        _append_jsonl(out / "epochs.jsonl", record)
        history.append(record)
        log.info("epoch %d: %s", record["epoch"],
                 " ".join(f"{k}={v:.4f}" for k, v in record.items() if isinstance(v, float)))
        epochs_run += 1
        if stop_after_epochs is not None and epochs_run >= stop_after_epochs:
            break

    summary = {
        "best_accuracy": state.best_accuracy,
        "best_epoch": state.best_epoch,
        "final_accuracy": history[-1]["test_accuracy"] if history else None,
        "epochs": state.epoch,
        "steps": state.step,
        "config_hash": config.hash(),
        "model_hash": config.model_hash(),
        "method": config.method,
        "criterion": config.criterion,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return FitResult(state, history, summary)
