"""Dataset preparation and fixed-shape feature sets for training."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from drsc.config import FeatureConfig, stable_hash
from drsc.dataio.audio import (AudioClip, STFTSpec, design_bandpass, fit_frames, load_audio,
                               mel_spectrogram, zero_phase_filter)
from drsc.dataio.cache import FeatureCache
from drsc.dataio.manifest import Manifest, build_manifest
from drsc.dataio.synthetic import SyntheticDataset, split_synthetic
from drsc.dataio.text import (CorruptionSpec, Vocab, corrupt_transcription, edit_distance,
                              tokenize)

log = logging.getLogger(__name__)


@dataclass
class FeatureSet:
    """Fixed-shape arrays for one split.

    ``text`` holds token ids ``(n, max_tokens)`` for real data, or float
    matrices ``(n, length, dim)`` for data that is already embedded.
    """
    text: np.ndarray
    lengths: np.ndarray
    mel: np.ndarray
    labels: np.ndarray
    ids: list[str]

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        return FeatureSet(self.text[idx], self.lengths[idx], self.mel[idx],
                          self.labels[idx], [self.ids[i] for i in idx])

    def with_text(self, text: np.ndarray, lengths: np.ndarray) -> "FeatureSet":
        return replace(self, text=text, lengths=lengths)


def extract_mel(clip: AudioClip, feats: FeatureConfig) -> np.ndarray:
    clip = zero_phase_filter(clip, design_bandpass(*feats.filter_band, order=feats.filter_order,
                                                   sample_rate=clip.sample_rate))
    stft = STFTSpec(feats.n_fft, feats.win_length, feats.hop_length, feats.window)
    if len(clip) < stft.win_length:
        clip = AudioClip(np.pad(clip.samples, (0, stft.win_length - len(clip))), clip.sample_rate)
    return mel_spectrogram(clip, stft, feats.n_mels, feats.f_min, feats.f_max, feats.log_floor)


def prepare(data_root: str | Path, out_dir: str | Path, feats: FeatureConfig | None = None,
            seed: int = 0) -> Manifest:
    """Build manifest, vocabulary, corrupted transcripts, Mel cache and norm stats."""
    feats = feats or FeatureConfig()
    data_root, out_dir = Path(data_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = build_manifest(data_root, feats.test_fraction, seed)
    manifest.write_csv(out_dir / "manifest.csv")
    vocab = Vocab.build(e.transcription for e in manifest.split("train"))
    vocab.save(out_dir / "vocab.json")
    write_corrupted(manifest, vocab, feats, seed, out_dir / "corrupted.csv")

    cache = FeatureCache(out_dir / "mel", feats.extraction_params())
    train_sum = np.zeros(feats.n_mels)
    train_sq = np.zeros(feats.n_mels)
    n_frames = 0
    for i, entry in enumerate(manifest):
        (mel,) = cache.get_or_compute(
            entry.id, lambda e=entry: [extract_mel(load_audio(data_root / e.audio_path), feats)])
        if entry.split == "train":
            m = mel.astype(np.float64)
            train_sum += m.sum(1)
            train_sq += (m ** 2).sum(1)
            n_frames += m.shape[1]
        if (i + 1) % 500 == 0:
            log.info("extracted %d/%d utterances", i + 1, len(manifest))
    mean = train_sum / max(n_frames, 1)
    std = np.sqrt(np.maximum(train_sq / max(n_frames, 1) - mean ** 2, 1e-12))
    meta = {"params": feats.extraction_params(), "params_hash": stable_hash(feats.extraction_params()),
            "mel_mean": mean.tolist(), "mel_std": std.tolist(), "n_entries": len(manifest)}
    (out_dir / "prep.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
    return manifest


def write_corrupted(manifest: Manifest, vocab: Vocab, feats: FeatureConfig, seed: int,
                    path: Path) -> float:
    """Corrupted-transcript csv (manifest schema plus ``wer``); returns corpus WER."""
    sub, dele, ins = feats.corruption_rates
    spec = CorruptionSpec(feats.corruption_wer, sub, dele, ins, seed)
    words = vocab.words() or ["<unk>"]
    texts, wers, edits, total = [], [], 0, 0
    for e in manifest:
        hyp = corrupt_transcription(e.transcription, spec, words, key=e.id)
        ref_w = e.transcription.split()
        d = edit_distance(ref_w, hyp.split())
        edits, total = edits + d, total + len(ref_w)
        texts.append(hyp)
        wers.append(f"{d / len(ref_w):.6f}" if ref_w else "0.000000")
    corrupted = Manifest([replace(e, transcription=t) for e, t in zip(manifest, texts)])
    corrupted.write_csv(path, extra={"wer": wers})
    return edits / total if total else 0.0


def read_corrupted(path: str | Path) -> dict[str, str]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return {row["id"]: row["transcription"] for row in csv.DictReader(fh)}


def load_features(cache_dir: str | Path, feats: FeatureConfig,
                  text_source: str = "accurate") -> tuple[FeatureSet, FeatureSet, Vocab]:
    """Load the prepared train/test splits as fixed-shape arrays."""
    cache_dir = Path(cache_dir)
    prep_path = cache_dir / "prep.json"
    if not prep_path.exists():
        raise FileNotFoundError(
            f"no prepared features in {cache_dir}; run `drsc prep --data <dataset> --out {cache_dir}` first")
    meta = json.loads(prep_path.read_text(encoding="utf-8"))
    if meta["params_hash"] != stable_hash(feats.extraction_params()):
        raise ValueError(
            f"feature cache {cache_dir} was extracted with different parameters; re-run prep")
    manifest = Manifest.read_csv(cache_dir / "manifest.csv")
    vocab = Vocab.load(cache_dir / "vocab.json")
    texts = {e.id: e.transcription for e in manifest}
    if text_source == "corrupted":
        texts = read_corrupted(cache_dir / "corrupted.csv")
    cache = FeatureCache(cache_dir / "mel", feats.extraction_params())
    mean = np.asarray(meta["mel_mean"])[:, None]
    std = np.asarray(meta["mel_std"])[:, None]

    def build(split: str) -> FeatureSet:
        entries = manifest.split(split)
        ids, lens, mels = [], [], []
        for e in entries:
            arrays = cache.get(e.id)
            if arrays is None:
                raise FileNotFoundError(f"missing cached features for {e.id}; re-run prep")
            tf = tokenize(texts[e.id], vocab, feats.max_tokens)
            ids.append(tf.token_ids)
            lens.append(tf.length)
            mels.append(fit_frames((arrays[0] - mean) / std, feats.max_frames, 0.0))
        return FeatureSet(np.stack(ids), np.asarray(lens), np.stack(mels).astype(np.float32),
                          np.asarray([e.label for e in entries]), [e.id for e in entries])

    return build("train"), build("test"), vocab


def synthetic_feature_sets(data: SyntheticDataset, test_fraction: float = 0.2,
                           seed: int = 0) -> tuple[FeatureSet, FeatureSet]:
    train_idx, test_idx = split_synthetic(data, test_fraction, seed)
    full = FeatureSet(data.text.astype(np.float32),
                      np.full(len(data.labels), data.text.shape[1]),
                      data.mel.astype(np.float32), data.labels,
                      [f"syn{i:05d}" for i in range(len(data.labels))])
    return full.subset(train_idx), full.subset(test_idx)
