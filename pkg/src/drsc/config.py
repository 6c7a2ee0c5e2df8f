"""Run configuration: every knob needed to reproduce a training run."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

CRITERIA = ("L1", "L2", "cosine")
METHODS = ("drsc", "speechic_txt", "speechic_mel", "speechic_combined")


@dataclass
class FeatureConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    window: str = "hann"
    n_mels: int = 256
    f_min: float = 0.0
    f_max: float = 8000.0
    log_floor: float = 1e-10
    max_frames: int = 256
    max_tokens: int = 32
    filter_order: int = 4
    filter_band: tuple[float, float] = (60.0, 7600.0)
    test_fraction: float = 0.2
    corruption_wer: float = 0.26
    corruption_rates: tuple[float, float, float] = (0.6, 0.2, 0.2)  # sub, del, ins

    def extraction_params(self) -> dict[str, Any]:
        """Parameters that change the cached Mel features."""
        keys = ("sample_rate", "n_fft", "win_length", "hop_length", "window",
                "n_mels", "f_min", "f_max", "log_floor", "filter_order", "filter_band")
        return {k: _jsonable(getattr(self, k)) for k in keys}


@dataclass
class ModelConfig:
    text_dim: int = 256          # embedding width of one token
    mel_bins: int = 256
    conv_bank_kernels: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    channels: int = 128
    n_res_blocks: int = 3
    content_dim: int = 128
    intent_dim: int = 128
    fusion_dim: int = 256
    disc_channels: int = 64
    n_classes: int = 25
    vocab_size: int = 0          # 0 means features arrive pre-embedded
    mask_padding: bool = True
    # SpeechIC baseline
    baseline_channels: int = 128
    baseline_kernel: int = 3
    baseline_hidden: int = 256


@dataclass
class LossWeights:
    cycle: float = 1.0
    distribution: float = 1.0
    classification: float = 1.0
    kl: float = 1.0
    latent_regression: float = 1.0
    adversarial: float = 1.0
    use_optional: bool = True    # toggles kl, latent_regression, adversarial together
    # intents fed to the classification term: from the reconstructions only,
    # or averaged with the inference path on the original features
    classify_on: str = "both"

    def effective(self) -> dict[str, float]:
        gate = 1.0 if self.use_optional else 0.0
        return {
            "cycle": self.cycle,
            "distribution": self.distribution,
            "classification": self.classification,
            "kl": self.kl * gate,
            "latent_regression": self.latent_regression * gate,
            "adversarial": self.adversarial * gate,
        }

    @classmethod
    def ablated(cls) -> "LossWeights":
        return cls(kl=0.0, latent_regression=0.0, adversarial=0.0)


@dataclass
class PathsConfig:
    data_root: str = ""
    cache_dir: str = "cache"
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    method: str = "drsc"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    dropout: float = 0.1
    max_epochs: int = 100
    seed: int = 0
    criterion: str = "L1"
    d_steps_per_g_step: int = 1
    grad_clip: float | None = 5.0
    deterministic: bool = True
    dtype: str = "float32"
    log_every: int = 10
    text_source: str = "accurate"   # "accurate" or "corrupted"
    eval_text_source: str = "accurate"
    weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.d_steps_per_g_step < 1:
            raise ValueError("d_steps_per_g_step must be >= 1")
        if self.weights.classify_on not in ("reconstructed", "both"):
            raise ValueError(f"weights.classify_on must be reconstructed or both, "
                             f"got {self.weights.classify_on!r}")
        for name, value in dataclasses.asdict(self.weights).items():
            if name not in ("use_optional", "classify_on") and value < 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {value}")
        for src in (self.text_source, self.eval_text_source):
            if src not in ("accurate", "corrupted"):
                raise ValueError(f"unknown text source {src!r}")
        if self.model.intent_dim <= 0 or any(k <= 0 for k in self.model.conv_bank_kernels):
            raise ValueError("intent_dim and kernel widths must be positive")

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return _from_dict(cls, data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def with_overrides(self, overrides: dict[str, Any] | list[str]) -> "RunConfig":
        """Return a copy with dotted-path overrides applied.

        ``overrides`` is either a mapping ``{"weights.kl": 0.0}`` or a list of
        ``key=value`` strings as given to ``--set``; values are parsed as JSON
        when possible and kept as strings otherwise.
        """
        if isinstance(overrides, list):
            overrides = dict(parse_assignment(item) for item in overrides)
        data = self.to_dict()
        for key, value in overrides.items():
            node = data
            *parents, leaf = key.split(".")
            for part in parents:
                if part not in node or not isinstance(node[part], dict):
                    raise KeyError(f"unknown config key {key!r}")
                node = node[part]
            if leaf not in node:
                raise KeyError(f"unknown config key {key!r}")
            node[leaf] = value
        out = RunConfig.from_dict(data)
        out.validate()
        return out

    def hash(self) -> str:
        return stable_hash(self.to_dict())

    def model_hash(self) -> str:
        """Hash of everything that fixes parameter shapes and input features."""
        return stable_hash({
            "method": self.method,
            "model": _jsonable(dataclasses.asdict(self.model)),
            "features": self.features.extraction_params(),
            "max_frames": self.features.max_frames,
            "max_tokens": self.features.max_tokens,
        })


def parse_assignment(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ValueError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def stable_hash(obj: Any) -> str:
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _from_dict(cls, data: dict[str, Any]):
    kwargs = {}
    hints = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in hints:
            raise KeyError(f"unknown config key {key!r} for {cls.__name__}")
        default = hints[key].default_factory() if hints[key].default_factory is not dataclasses.MISSING else hints[key].default
        if dataclasses.is_dataclass(default) and isinstance(value, dict):
            kwargs[key] = _from_dict(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = copy.deepcopy(value)
    return cls(**kwargs)
