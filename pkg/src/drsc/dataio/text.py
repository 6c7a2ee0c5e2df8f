"""Tokenization, vocabularies and simulated ASR errors."""

from __future__ import annotations

import json
import logging
import re
import zlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

_PUNCT = re.compile(r"[^\w\s]|_")


def normalize_words(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub("", text.lower()).split()


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def words(self) -> list[str]:
        """Real words only, without the special tokens."""
        return self.itos[2:]

    @classmethod
    def build(cls, transcriptions: Iterable[str], min_freq: int = 1) -> "Vocab":
        counts = Counter(w for t in transcriptions for w in normalize_words(t))
        # frequency-descending, ties alphabetical, so the id map is reproducible
        ordered = sorted((w for w, c in counts.items() if c >= min_freq),
                         key=lambda w: (-counts[w], w))
        return cls(ordered)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.itos, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        itos = json.loads(Path(path).read_text(encoding="utf-8"))
        if itos[:2] != [PAD, UNK]:
            raise ValueError(f"{path} is not a vocabulary file")
        return cls(itos[2:])


@dataclass
class TextFeature:
    token_ids: np.ndarray
    length: int


def tokenize(transcription: str, vocab: Vocab, max_len: int = 32) -> TextFeature:
    words = normalize_words(transcription)
    if not words:
        log.warning("empty transcription %r, encoding as a single UNK", transcription)
        ids = [UNK_ID]
    else:
        ids = [vocab[w] for w in words[:max_len]]
    out = np.full(max_len, PAD_ID, dtype=np.int64)
    out[:len(ids)] = ids
    return TextFeature(out, len(ids))


@dataclass(frozen=True)
class CorruptionSpec:
    target_wer: float = 0.26
    sub_rate: float = 0.6
    del_rate: float = 0.2
    ins_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        rates = (self.sub_rate, self.del_rate, self.ins_rate)
        if min(rates) < 0:
            raise ValueError(f"edit-type rates must be nonnegative, got {rates}")
        if abs(sum(rates) - 1.0) > 1e-9:
            raise ValueError(f"edit-type rates must sum to 1, got {sum(rates)}")
        if not 0.0 <= self.target_wer <= 1.0:
            raise ValueError(f"target_wer must lie in [0, 1], got {self.target_wer}")


def corrupt_transcription(transcription: str, spec: CorruptionSpec, vocab: Sequence[str],
                          key: str = "") -> str:
    """Inject word-level ASR-style errors.

    Every reference word is independently hit with probability
    ``spec.target_wer``; a hit is a substitution, deletion or insertion
    drawn with the spec's mix. Each hit costs exactly one edit, so the
    expected WER against the input equals ``target_wer``. The output depends
    only on ``(spec.seed, key, transcription)``.
    """
    if not vocab:
        raise ValueError("vocabulary for corruption must be nonempty")
    words = transcription.split()
    if not words or spec.target_wer == 0.0:
        return transcription
    seed_key = zlib.crc32(f"{key}\x00{transcription}".encode("utf-8"))
    rng = np.random.default_rng([spec.seed, seed_key])
    probs = np.array([spec.sub_rate, spec.del_rate, spec.ins_rate])
    out: list[str] = []
    for word in words:
        if rng.random() >= spec.target_wer:
            out.append(word)
            continue
        kind = rng.choice(3, p=probs)
        if kind == 0:
            out.append(_draw_other(rng, vocab, word))
        elif kind == 2:
            out.append(word)
            out.append(_draw_other(rng, vocab, word))
    return " ".join(out)


def _draw_other(rng: np.random.Generator, vocab: Sequence[str], avoid: str) -> str:
    norm = normalize_words(avoid)
    avoid_norm = norm[0] if norm else avoid
    for _ in range(32):
        cand = vocab[rng.integers(len(vocab))]
        if cand != avoid_norm and cand != avoid:
            return cand
    return f"{avoid_norm}x"  # vocab holds only the avoided word


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Word-level Levenshtein distance."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def word_error_rate(refs: Iterable[str], hyps: Iterable[str]) -> float:
    """Corpus WER: total edits over total reference words."""
    edits = words = 0
    for ref, hyp in zip(refs, hyps, strict=True):
        r, h = ref.split(), hyp.split()
        edits += edit_distance(r, h)
        words += len(r)
    return edits / words if words else 0.0
