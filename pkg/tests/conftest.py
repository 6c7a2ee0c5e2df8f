import csv

import numpy as np
import pytest
import torch
from scipy.io import wavfile

from drsc.config import ModelConfig, RunConfig
from drsc.dataio.manifest import SYMPTOMS
from drsc.model import DRSC


def toy_model_config(**kw) -> ModelConfig:
    base = dict(text_dim=6, mel_bins=5, conv_bank_kernels=(1, 2, 3), channels=4, n_res_blocks=1,
                content_dim=3, intent_dim=4, fusion_dim=8, disc_channels=2, n_classes=25)
    base.update(kw)
    return ModelConfig(**base)


def toy_batch(batch=3, text_len=8, mel_frames=8, cfg=None, seed=0, dtype=torch.float64):
    cfg = cfg or toy_model_config()
    g = torch.Generator().manual_seed(seed)
    return {
        "text": torch.randn(batch, text_len, cfg.text_dim, generator=g, dtype=dtype),
        "lengths": torch.full((batch,), text_len, dtype=torch.long),
        "mel": torch.randn(batch, cfg.mel_bins, mel_frames, generator=g, dtype=dtype),
        "labels": torch.randint(0, cfg.n_classes, (batch,), generator=g),
    }


@pytest.fixture
def toy_cfg():
    return toy_model_config()


@pytest.fixture
def toy_model(toy_cfg):
    torch.manual_seed(0)
    return DRSC(toy_cfg, dropout=0.0).double().eval()


@pytest.fixture
def toy_run_config(toy_cfg, tmp_path):
    cfg = RunConfig(model=toy_cfg, dtype="float64", dropout=0.0, batch_size=4, max_epochs=2, log_every=1)
    cfg.paths.out_dir = str(tmp_path / "run")
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def write_dataset(root, per_class, classes=(0,), missing=()):
    rec = root / "recordings" / "train"
    root.mkdir(parents=True, exist_ok=True)
    rec.mkdir(parents=True)
    rows = []
    k = 0
    for c in classes:
        for i in range(per_class):
            name = f"clip_{c:02d}_{i:03d}.wav"
            if name not in missing:
                wav = (0.1 * np.sin(np.arange(4000) * 0.05 * (c + 1)) * 32767).astype(np.int16)
                wavfile.write(rec / name, 8000, wav)
            rows.append({"file_name": name, "phrase": f"my {SYMPTOMS[c].lower()} is bad number {i}",
                         "prompt": SYMPTOMS[c]})
            k += 1
    with (root / "overview-of-recordings.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["file_name", "phrase", "prompt"])
        w.writeheader()
        w.writerows(rows)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""
    def add(number, ok, detail):
        _ACCEPTANCE.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
