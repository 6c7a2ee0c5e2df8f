"""Paired two-domain toy data with a known shared factor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticDataset:
    text: np.ndarray        # (n, text_len, text_dim), text-feature layout
    mel: np.ndarray         # (n, mel_bins, mel_frames), Mel-feature layout
    labels: np.ndarray      # (n,)
    shared: np.ndarray      # (n, shared_dim) class factor
    private_text: np.ndarray
    private_mel: np.ndarray


def make_synthetic_dataset(n_classes: int = 5, n_per_class: int = 200, shared_dim: int = 4,
                           private_dim: int = 4, noise_scale: float = 0.0, seed: int = 0,
                           text_shape: tuple[int, int] = (8, 16),
                           mel_shape: tuple[int, int] = (16, 16)) -> SyntheticDataset:
    """Generate two views per sample from one class factor plus per-view content.

    Each class owns a prototype vector in the shared space. A sample's
    domain-A (text-shaped) view is a fixed random linear map of
    ``[shared, private_A]`` reshaped to ``text_shape``; domain B does the
    same with its own map and an independent ``private_B``. The class
    prototype is therefore the only signal the two views have in common.
    """
    for name, val in (("shared_dim", shared_dim), ("private_dim", private_dim),
                      ("n_classes", n_classes), ("n_per_class", n_per_class)):
        if val <= 0:
            raise ValueError(f"{name} must be positive, got {val}")
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((n_classes, shared_dim)) * 2.0
    labels = np.repeat(np.arange(n_classes), n_per_class)
    n = labels.size
    shared = prototypes[labels]
    p_text = rng.standard_normal((n, private_dim))
    p_mel = rng.standard_normal((n, private_dim))
    k = shared_dim + private_dim
    map_text = rng.standard_normal((k, int(np.prod(text_shape)))) / np.sqrt(k)
    map_mel = rng.standard_normal((k, int(np.prod(mel_shape)))) / np.sqrt(k)
    text = np.concatenate([shared, p_text], 1) @ map_text
    mel = np.concatenate([shared, p_mel], 1) @ map_mel
    text = text + noise_scale * rng.standard_normal(text.shape)
    mel = mel + noise_scale * rng.standard_normal(mel.shape)
    order = rng.permutation(n)
    return SyntheticDataset(
        text=text.reshape(n, *text_shape)[order],
        mel=mel.reshape(n, *mel_shape)[order],
        labels=labels[order],
        shared=shared[order],
        private_text=p_text[order],
        private_mel=p_mel[order],
    )


def split_synthetic(data: SyntheticDataset, test_fraction: float = 0.2, seed: int = 0):
    """Stratified index split, returned as ``(train_idx, test_idx)``."""
    rng = np.random.default_rng(seed)
    test = []
    for c in np.unique(data.labels):
        members = np.flatnonzero(data.labels == c)
        n_test = int(np.floor(test_fraction * len(members) + 0.5))
        test.extend(rng.permutation(members)[:n_test])
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(len(data.labels)), test)
    return train, test
