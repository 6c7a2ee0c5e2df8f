"""Accuracy, confusion matrices and the experiment grids."""

from __future__ import annotations

import csv
import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from drsc.config import LossWeights, ModelConfig, RunConfig, stable_hash
from drsc.dataio.features import FeatureSet, load_features, synthetic_feature_sets
from drsc.dataio.manifest import SYMPTOMS
from drsc.dataio.synthetic import make_synthetic_dataset
from drsc.model import DRSC, argmax_lowest
from drsc.train import accuracy, fit, load_checkpoint, predict_dataset, to_batch, torch_dtype

log = logging.getLogger(__name__)

EXPERIMENTS = ("table1_criterion_sweep", "table2_method_comparison", "table3_loss_ablation",
               "table4_robustness")

# Published single-run accuracies (percent), shown next to ours in the tables.
REFERENCE_ACCURACY = {
    "table1_criterion_sweep": {"L1": 95.58, "L2": 94.34, "cosine": 94.66},
    "table2_method_comparison": {"speechic_txt": 67.65, "speechic_mel": 73.04,
                                 "speechic_combined": 82.47, "drsc": 95.58},
    "table3_loss_ablation": {"full": 95.58, "ablated": 81.19},
    "table4_robustness": {"accurate/speechic_txt": 67.65, "corrupted/speechic_txt": 58.29,
                          "accurate/speechic_combined": 82.47, "corrupted/speechic_combined": 74.73,
                          "accurate/drsc": 95.58, "corrupted/drsc": 91.43},
}

# (config, text_source) -> (train, test, vocab_size or None)
DataFn = Callable[[RunConfig, str], tuple[FeatureSet, FeatureSet, int | None]]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray   # rows: true class, columns: predicted class

    @classmethod
    def from_predictions(cls, labels, preds, n_classes: int) -> "ConfusionMatrix":
        labels, preds = np.asarray(labels, dtype=np.int64), np.asarray(preds, dtype=np.int64)
        if labels.shape != preds.shape:
            raise ValueError(f"{labels.size} labels but {preds.size} predictions")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (labels, preds), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def class_names(self) -> list[str]:
        n = len(self.counts)
        return list(SYMPTOMS) if n == len(SYMPTOMS) else [str(i) for i in range(n)]

    def to_csv(self, path: str | Path) -> None:
        names = self.class_names()
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\predicted", *names])
            for name, row in zip(names, self.counts):
                w.writerow([name, *row.tolist()])

    @classmethod
    def read_csv(cls, path: str | Path) -> "ConfusionMatrix":
        with Path(path).open("r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        return cls(np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.int64))

    def to_png(self, path: str | Path, title: str = "") -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        n = len(self.counts)
        rows = np.maximum(self.row_sums()[:, None], 1)
        fig, ax = plt.subplots(figsize=(4 + 0.35 * n, 3.5 + 0.35 * n))
        im = ax.imshow(self.counts / rows, cmap="Blues", vmin=0, vmax=1)
        names = self.class_names()
        ax.set_xticks(range(n), names, rotation=90, fontsize=7)
        ax.set_yticks(range(n), names, fontsize=7)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(title or f"accuracy {100 * self.accuracy:.2f}%")
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def evaluate(checkpoint: str | Path, test: FeatureSet | None = None, config: RunConfig | None = None,
             force: bool = False, text_source: str | None = None) -> tuple[float, ConfusionMatrix]:
    """Accuracy and confusion matrix of a saved model on a test split.

    Without ``test`` the split is read from the feature cache named in the
    checkpoint's config, which also checks the cache parameters.
    """
    state, cfg = load_checkpoint(checkpoint, config, force)
    if test is None:
        _, test, _ = load_features(cfg.paths.cache_dir, cfg.features, text_source or cfg.eval_text_source)
    preds = predict_dataset(state.model, test, dtype=torch_dtype(cfg))
    cm = ConfusionMatrix.from_predictions(test.labels, preds, cfg.model.n_classes)
    return cm.accuracy, cm


@torch.no_grad()
def swap_flip_rate(model: DRSC, data: FeatureSet, seed: int = 1,
                   dtype=torch.float32) -> tuple[float, float]:
    """Cross each sample's content with another sample's intents.

    Returns ``(flip, stay)`` over pairs with different labels: the fraction
    classified as the intent donor's class and as the content owner's.
    """
    model.eval()
    perm = np.random.default_rng(seed).permutation(len(data))
    diff = data.labels != data.labels[perm]
    if not diff.any():
        raise ValueError("no pairs with different labels")
    a, b = to_batch(data, np.arange(len(data)), dtype), to_batch(data, perm, dtype)
    Ta, Tb = model.text_features(a["text"], a["lengths"]), model.text_features(b["text"], b["lengths"])
    u, v = model.swap_intents(Ta, a["mel"], Tb, b["mel"], a["lengths"], b["lengths"])
    pred = argmax_lowest(model.logits(u, v, a["lengths"])).numpy()
    return (float((pred[diff] == data.labels[perm][diff]).mean()),
            float((pred[diff] == data.labels[diff]).mean()))


# grids ---------------------------------------------------------------------

def cache_data(config: RunConfig, text_source: str) -> tuple[FeatureSet, FeatureSet, int | None]:
    train, test, vocab = load_features(config.paths.cache_dir, config.features, text_source)
    return train, test, len(vocab)


def cell_hash(config: RunConfig, ignore: tuple[str, ...] = ()) -> str:
    """Config hash without seed and paths, and without any dotted keys in ``ignore``."""
    data = config.to_dict()
    data.pop("seed")
    data.pop("paths")
    for key in ignore:
        *parents, leaf = key.split(".")
        node = data
        for p in parents:
            node = node[p]
        node.pop(leaf, None)
    return stable_hash(data)


@dataclass
class CellResult:
    experiment: str
    cell: str
    accuracies: list[float]
    seeds: list[int]
    config_hashes: list[str]
    cell_hash: str
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.accuracies)

    @property
    def std(self) -> float:
        return statistics.pstdev(self.accuracies) if len(self.accuracies) > 1 else 0.0

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "cell": self.cell, "accuracy": self.mean,
                "accuracy_std": self.std, "cell_hash": self.cell_hash,
                "per_seed": [{"seed": s, "accuracy": a, "config_hash": h}
                             for s, a, h in zip(self.seeds, self.accuracies, self.config_hashes)],
                **self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        known = {"experiment", "cell", "accuracy", "accuracy_std", "cell_hash", "per_seed"}
        return cls(d["experiment"], d["cell"], [p["accuracy"] for p in d["per_seed"]],
                   [p["seed"] for p in d["per_seed"]], [p["config_hash"] for p in d["per_seed"]],
                   d["cell_hash"], {k: v for k, v in d.items() if k not in known})


def _write_cell(out: Path, result: CellResult, cm: ConfusionMatrix) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
    cm.to_csv(out / "confusion.csv")
    cm.to_png(out / "confusion.png", f"{result.experiment} / {result.cell}")


def _completed(out: Path, chash: str, seeds) -> CellResult | None:
    path = out / "summary.json"
    if not path.exists():
        return None
    res = CellResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    return res if res.cell_hash == chash and res.seeds == list(seeds) else None


def _train_cell(config: RunConfig, out: Path, seeds, data: DataFn,
                eval_sources: tuple[str, ...]) -> dict[str, tuple[list, list, ConfusionMatrix]]:
    """Train one config per seed; evaluate the best checkpoint on each text source.

    Returns ``{source: (accuracies, config_hashes, confusion_of_first_seed)}``.
    """
    results = {s: ([], [], None) for s in eval_sources}
    for seed in seeds:
        train, _, vocab_size = data(config, config.text_source)
        cfg = config.with_overrides({"seed": seed, "paths.out_dir": str(out / f"seed_{seed}")})
        if vocab_size is not None and cfg.model.vocab_size != vocab_size:
            cfg = cfg.with_overrides({"model.vocab_size": vocab_size})
        _, test, _ = data(cfg, cfg.eval_text_source)
        fit(cfg, train, test)
        for source in eval_sources:
            _, test_s, _ = data(cfg, source)
            acc, cm = evaluate(Path(cfg.paths.out_dir) / "best.pt", test_s, cfg)
            accs, hashes, first = results[source]
            accs.append(acc)
            hashes.append(cfg.hash())
            results[source] = (accs, hashes, first if first is not None else cm)
            log.info("%s seed %d [%s text]: accuracy %.4f", out.name, seed, source, acc)
    return results


def run_grid(experiment: str, cells: dict[str, RunConfig], out_root: str | Path,
             seeds=(0, 1, 2), data: DataFn = cache_data, force: bool = False,
             ignore: tuple[str, ...] = ()) -> list[CellResult]:
    """Run each cell for every seed under ``out_root/<experiment>/<cell>/``.

    A cell whose stored summary has the same hash and seeds is reused
    unless ``force`` is set.
    """
    root = Path(out_root) / experiment
    out = []
    for name, config in cells.items():
        chash = cell_hash(config, ignore)
        cell_dir = root / name.replace("/", "__")
        done = None if force else _completed(cell_dir, chash, seeds)
        if done is not None:
            log.info("%s/%s: reusing stored result", experiment, name)
            out.append(done)
            continue
        res = _train_cell(config, cell_dir, seeds, data, (config.eval_text_source,))
        accs, hashes, cm = res[config.eval_text_source]
        result = CellResult(experiment, name, accs, list(seeds), hashes, chash)
        _write_cell(cell_dir, result, cm)
        out.append(result)
    return out


def run_table1(base: RunConfig, out_root="results", seeds=(0, 1, 2), data: DataFn = cache_data,
               force=False) -> list[CellResult]:
    cells = {c: base.with_overrides({"criterion": c}) for c in ("L1", "L2", "cosine")}
    return run_grid(EXPERIMENTS[0], cells, out_root, seeds, data, force)


def run_table2(base: RunConfig, out_root="results", seeds=(0, 1, 2), data: DataFn = cache_data,
               force=False) -> list[CellResult]:
    cells = {m: base.with_overrides({"method": m})
             for m in ("speechic_txt", "speechic_mel", "speechic_combined", "drsc")}
    return run_grid(EXPERIMENTS[1], cells, out_root, seeds, data, force)


def run_table3(base: RunConfig, out_root="results", seeds=(0, 1, 2), data: DataFn = cache_data,
               force=False) -> list[CellResult]:
    cells = {"full": base.with_overrides({"method": "drsc", "weights.use_optional": True}),
             "ablated": base.with_overrides({"method": "drsc", "weights.kl": 0.0,
                                             "weights.latent_regression": 0.0,
                                             "weights.adversarial": 0.0})}
    return run_grid(EXPERIMENTS[2], cells, out_root, seeds, data, force)


def run_table4(base: RunConfig, out_root="results", seeds=(0, 1, 2), data: DataFn = cache_data,
               force=False) -> list[CellResult]:
    """Train on accurate text, then test each model on accurate and corrupted text."""
    experiment = EXPERIMENTS[3]
    root = Path(out_root) / experiment
    results = []
    for method in ("speechic_txt", "speechic_combined", "drsc"):
        config = base.with_overrides({"method": method, "text_source": "accurate",
                                      "eval_text_source": "accurate"})
        chash = cell_hash(config)
        dirs = {s: root / f"{s}__{method}" for s in ("accurate", "corrupted")}
        done = [None if force else _completed(dirs[s], chash, seeds) for s in dirs]
        if all(d is not None for d in done):
            results.extend(done)
            continue
        res = _train_cell(config, dirs["accurate"], seeds, data, ("accurate", "corrupted"))
        for source, cell_dir in dirs.items():
            accs, hashes, cm = res[source]
            result = CellResult(experiment, f"{source}/{method}", accs, list(seeds), hashes, chash,
                                {"trained_on": "accurate", "evaluated_on": source})
            _write_cell(cell_dir, result, cm)
            results.append(result)
    return results


RUNNERS = {EXPERIMENTS[0]: run_table1, EXPERIMENTS[1]: run_table2,
           EXPERIMENTS[2]: run_table3, EXPERIMENTS[3]: run_table4}


def load_grid(out_root: str | Path, experiment: str) -> list[CellResult]:
    """Collect completed cell summaries of one experiment."""
    root = Path(out_root) / experiment
    return [CellResult.from_dict(json.loads(p.read_text(encoding="utf-8")))
            for p in sorted(root.glob("*/summary.json"))]


def markdown_table(experiment: str, results: list[CellResult]) -> str:
    ref = REFERENCE_ACCURACY.get(experiment, {})
    lines = [f"### {experiment}", "", "| cell | accuracy (%) | seeds | reference (%) |",
             "|---|---|---|---|"]
    for r in results:
        acc = f"{100 * r.mean:.2f} ± {100 * r.std:.2f}" if len(r.accuracies) > 1 else f"{100 * r.mean:.2f}"
        reference = ref.get(r.cell)
        lines.append(f"| {r.cell} | {acc} | {len(r.accuracies)} | "
                     f"{'' if reference is None else f'{reference:.2f}'} |")
    return "\n".join(lines) + "\n"


def reproduction_checks(results: list[CellResult]) -> list[tuple[str, bool, str]]:
    """Qualitative claims over whichever grids are present in ``results``."""
    acc = {(r.experiment, r.cell): r.mean for r in results}
    checks = []
    t2 = [acc.get((EXPERIMENTS[1], m)) for m in ("drsc", "speechic_combined", "speechic_mel", "speechic_txt")]
    if None not in t2:
        checks.append(("method ordering drsc > combined > mel > txt",
                       all(a > b for a, b in zip(t2, t2[1:])), " > ".join(f"{100 * a:.2f}" for a in t2)))
        checks.append(("drsc accuracy >= 90%", t2[0] >= 0.90, f"{100 * t2[0]:.2f}"))
    full, abl = acc.get((EXPERIMENTS[2], "full")), acc.get((EXPERIMENTS[2], "ablated"))
    if full is not None and abl is not None:
        gap = 100 * (full - abl)
        checks.append(("ablation costs >= 8 points", gap >= 8.0, f"{gap:.2f} points"))
    drops = {}
    for m in ("drsc", "speechic_combined", "speechic_txt"):
        a, c = acc.get((EXPERIMENTS[3], f"accurate/{m}")), acc.get((EXPERIMENTS[3], f"corrupted/{m}"))
        if a is not None and c is not None:
            drops[m] = 100 * (a - c)
    if "drsc" in drops and "speechic_combined" in drops:
        checks.append(("drsc robustness drop < combined drop",
                       drops["drsc"] < drops["speechic_combined"],
                       f"{drops['drsc']:.2f} vs {drops['speechic_combined']:.2f} points"))
    return checks


# synthetic oracle ------------------------------------------------------------

SYNTHETIC_MODEL = ModelConfig(text_dim=16, mel_bins=16, conv_bank_kernels=(1, 2, 3, 4), channels=32,
                              n_res_blocks=2, content_dim=8, intent_dim=16, fusion_dim=64,
                              disc_channels=4, n_classes=5)
SYNTHETIC_WEIGHTS = LossWeights()


def synthetic_run_config(epochs: int = 30, seed: int = 0, out_dir: str = "runs/synth-test") -> RunConfig:
    """Small DRSC sized for the 5-class synthetic dataset."""
    cfg = RunConfig(model=SYNTHETIC_MODEL, weights=SYNTHETIC_WEIGHTS, max_epochs=epochs, seed=seed, lr=1e-3)
    return cfg.with_overrides({"paths.out_dir": out_dir})


def synthetic_oracle(config: RunConfig, data_seed: int = 0) -> dict:
    """Train on the noiseless synthetic set; report accuracy and intent-swap flips."""
    m = config.model
    data = make_synthetic_dataset(m.n_classes, 200, noise_scale=0.0, seed=data_seed,
                                  text_shape=(8, m.text_dim), mel_shape=(m.mel_bins, 16))
    train, test = synthetic_feature_sets(data)
    result = fit(config, train, test)
    model = result.state.model
    acc = accuracy(model, test, torch_dtype(config))
    flip, stay = swap_flip_rate(model, test, dtype=torch_dtype(config))
    return {"accuracy": acc, "flip": flip, "stay": stay, "accuracy_ok": acc >= 0.95,
            "flip_ok": flip >= 0.90, "summary": result.summary}
