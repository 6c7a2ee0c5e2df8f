"""Dataset manifest: utterances, labels and the stratified train/test split."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

# Class inventory of the Medical Speech, Transcription, and Intent corpus.
SYMPTOMS = (
    "Acne", "Back pain", "Blurry vision", "Body feels weak", "Cough",
    "Ear ache", "Emotional pain", "Feeling cold", "Feeling dizzy", "Foot ache",
    "Hair falling out", "Hard to breath", "Head ache", "Heart hurts",
    "Infected wound", "Injury from sports", "Internal pain", "Joint pain",
    "Knee pain", "Muscle pain", "Neck pain", "Open wound", "Shoulder pain",
    "Skin issue", "Stomach ache",
)
_LABEL_IDS = {name.lower(): i for i, name in enumerate(SYMPTOMS)}

FIELDS = ("id", "audio_path", "transcription", "label", "split")

# index-column aliases: Kaggle overview csv first, generic names second
_FILE_COLS = ("file_name", "audio_path", "file", "path")
_TEXT_COLS = ("phrase", "transcription", "text")
_LABEL_COLS = ("prompt", "label", "intent")


class MissingAudioError(FileNotFoundError):
    def __init__(self, utterance_id: str, path: str):
        super().__init__(f"audio for utterance {utterance_id!r} not found: {path}")
        self.utterance_id = utterance_id


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    audio_path: str
    transcription: str
    label: int
    split: str

    def __post_init__(self):
        if not 0 <= self.label < len(SYMPTOMS):
            raise ValueError(f"label id {self.label} outside [0, {len(SYMPTOMS)})")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")


class Manifest:
    def __init__(self, entries: list[ManifestEntry]):
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ValueError(f"duplicate utterance id {dup!r}")
        self.entries = list(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def class_counts(self, split: str | None = None, n_classes: int = len(SYMPTOMS)) -> np.ndarray:
        counts = np.zeros(n_classes, dtype=np.int64)
        for e in self.entries:
            if split is None or e.split == split:
                counts[e.label] += 1
        return counts

    def write_csv(self, path: str | Path, extra: dict[str, list] | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fields = list(FIELDS) + list(extra or {})
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(fields)
            for i, e in enumerate(self.entries):
                row = [e.id, e.audio_path, e.transcription, e.label, e.split]
                row += [extra[k][i] for k in (extra or {})]
                writer.writerow(row)

    @classmethod
    def read_csv(cls, path: str | Path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        with path.open("r", encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([ManifestEntry(r["id"], r["audio_path"], r["transcription"],
                                  int(r["label"]), r["split"]) for r in rows])


def label_id(name: str) -> int:
    try:
        return _LABEL_IDS[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown symptom label {name!r}") from None


def stratified_split(labels: list[int], test_fraction: float, seed: int) -> list[str]:
    """Per class, mark ``round(test_fraction * n_class)`` random members as test."""
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = defaultdict(list)
    for idx, lab in enumerate(labels):
        by_class[lab].append(idx)
    split = ["train"] * len(labels)
    for lab in sorted(by_class):
        members = by_class[lab]
        n_test = int(np.floor(test_fraction * len(members) + 0.5))
        for idx in rng.permutation(members)[:n_test]:
            split[idx] = "test"
    return split


def _find_index(root: Path) -> Path:
    for cand in sorted(root.rglob("*.csv")):
        with cand.open("r", encoding="utf-8", newline="") as fh:
            header = next(csv.reader(fh), [])
        if any(c in header for c in _FILE_COLS) and any(c in header for c in _LABEL_COLS):
            return cand
    raise FileNotFoundError(f"no transcription/label index csv under {root}")


def _pick(row: dict, names: tuple[str, ...]) -> str:
    for name in names:
        if name in row:
            return row[name]
    raise KeyError(f"index row lacks any of the columns {names}")


def build_manifest(dataset_root: str | Path, test_fraction: float = 0.2, seed: int = 0,
                   strict: bool = False) -> Manifest:
    """Index a dataset directory and split it per class.

    Audio files are located by file name anywhere below ``dataset_root``.
    Entries whose audio is missing are dropped with a warning, or raise
    :class:`MissingAudioError` when ``strict`` is set.
    """
    root = Path(dataset_root)
    index = _find_index(root)
    audio_by_name = {p.name: p for p in root.rglob("*.wav")}
    with index.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))

    records = []
    for row in rows:
        fname = Path(_pick(row, _FILE_COLS)).name
        uid = row.get("id") or Path(fname).stem
        label = label_id(_pick(row, _LABEL_COLS))
        audio = audio_by_name.get(fname)
        if audio is None:
            err = MissingAudioError(uid, fname)
            if strict:
                raise err
            log.warning("%s", err)
            continue
        text = _pick(row, _TEXT_COLS).strip()
        records.append((uid, str(audio.relative_to(root)), text, label))

    records.sort(key=lambda r: r[0])
    splits = stratified_split([r[3] for r in records], test_fraction, seed)
    return Manifest([ManifestEntry(uid, path, text, lab, sp)
                     for (uid, path, text, lab), sp in zip(records, splits)])
