"""Speech Commands (V1 layout) ingestion for the 12-class task.

Labels 0-9 are the ten keywords, 10 is ``_unknown_`` (any other word) and 11
is ``_silence_`` (one-second crops of the background-noise recordings).
Splits follow ``validation_list.txt`` / ``testing_list.txt``; everything
else is training data.  Per split, unknown-word files are kept for about 10%
of the keyword count (lowest path hash first) and the same number of
silence crops is added with seeded offsets.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .audio import (SAMPLE_RATE, AudioClip, extract_features, read_feature_cache, read_wav,
                    write_feature_cache)
from .autograd import Tensor
from .exceptions import ConfigError, ValidationError

log = logging.getLogger(__name__)

KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN = 10
SILENCE = 11
CLASS_NAMES = KEYWORDS + ("_unknown_", "_silence_")
SPLITS = ("train", "dev", "test")
BACKGROUND_DIR = "_background_noise_"
T_FRAMES, N_FEATURES = 98, 40


def label_for_word(word: str) -> int:
    try:
        return KEYWORDS.index(word)
    except ValueError:
        return UNKNOWN


@dataclass(frozen=True)
class Entry:
    """One example: a word recording, or a silence crop ``offset`` samples into a noise file."""

    path: str
    label: int
    offset: int | None = None

    @property
    def key(self) -> str:
        return self.path if self.offset is None else f"{self.path}@{self.offset}"


@dataclass
class SplitManifest:
    root: str
    train: list[Entry] = field(default_factory=list)
    dev: list[Entry] = field(default_factory=list)
    test: list[Entry] = field(default_factory=list)
    word_counts: dict[str, int] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)

    def split(self, name: str) -> list[Entry]:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; choose from {SPLITS}")
        return getattr(self, name)

    def counts(self) -> dict[str, dict[str, int]]:
        out = {}
        for name in SPLITS:
            labels = [e.label for e in self.split(name)]
            out[name] = {CLASS_NAMES[k]: labels.count(k) for k in range(len(CLASS_NAMES))}
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["split", "path", "label", "class", "offset"])
            for name in SPLITS:
                for e in self.split(name):
                    writer.writerow([name, e.path, e.label, CLASS_NAMES[e.label],
                                     "" if e.offset is None else e.offset])


def _path_hash(rel: str) -> str:
    return hashlib.sha1(rel.encode("utf-8")).hexdigest()


def _read_list(path: Path) -> set[str]:
    return {line.strip() for line in path.read_text().splitlines() if line.strip()}


def _readable(path: Path) -> bool:
    try:
        read_wav(path)
    except ValidationError as exc:
        log.warning("skipping %s", exc)
        return False
    return True


def scan_dataset(root, seed: int = 0, unknown_fraction: float = 0.1,
                 silence_fraction: float = 0.1, check_audio: bool = True) -> SplitManifest:
    """Assign every word recording under ``root`` to a split and select the task examples."""
    root = Path(root)
    val_list, test_list = root / "validation_list.txt", root / "testing_list.txt"
    if not root.is_dir():
        raise ConfigError(f"dataset root {root} does not exist")
    missing = [p.name for p in (val_list, test_list) if not p.is_file()]
    if missing:
        raise ConfigError(f"{root} is not a Speech Commands V1 tree: missing {', '.join(missing)}")
    dev_files, test_files = _read_list(val_list), _read_list(test_list)

    words: dict[str, list[tuple[str, int]]] = {s: [] for s in SPLITS}
    manifest = SplitManifest(str(root))
    for word_dir in sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("_")):
        label = label_for_word(word_dir.name)
        for wav in sorted(word_dir.glob("*.wav")):
            rel = f"{word_dir.name}/{wav.name}"
            if check_audio and not _readable(wav):
                manifest.skipped.append(rel)
                continue
            split = "dev" if rel in dev_files else "test" if rel in test_files else "train"
            words[split].append((rel, label))
    manifest.word_counts = {s: len(words[s]) for s in SPLITS}

    noise_files = _background_files(root)
    for index, split in enumerate(SPLITS):
        keyword = [Entry(rel, lab) for rel, lab in words[split] if lab != UNKNOWN]
        unknown = sorted((rel for rel, lab in words[split] if lab == UNKNOWN), key=_path_hash)
        n_unknown = min(len(unknown), math.ceil(unknown_fraction * len(keyword)))
        chosen = [Entry(rel, UNKNOWN) for rel in sorted(unknown[:n_unknown])]
        n_silence = math.ceil(silence_fraction * len(keyword))
        silence = _silence_entries(noise_files, n_silence, seed, index)
        getattr(manifest, split).extend(keyword + chosen + silence)
    log.info("scanned %s: word files %s, skipped %d", root, manifest.word_counts, len(manifest.skipped))
    return manifest


def _background_files(root: Path) -> list[tuple[str, int]]:
    out = []
    noise_dir = root / BACKGROUND_DIR
    if noise_dir.is_dir():
        for wav in sorted(noise_dir.glob("*.wav")):
            try:
                n = len(read_wav(wav, allow_long=True))
            except ValidationError as exc:
                log.warning("skipping background file: %s", exc)
                continue
            if n >= SAMPLE_RATE:
                out.append((f"{BACKGROUND_DIR}/{wav.name}", n))
    return out


def _silence_entries(noise_files, count: int, seed: int, split_index: int) -> list[Entry]:
    entries = []
    for i in range(count):
        if not noise_files:
            entries.append(Entry("", SILENCE, 0))
            continue
        rng = np.random.default_rng([seed, split_index, i])
        rel, n = noise_files[rng.integers(len(noise_files))]
        entries.append(Entry(rel, SILENCE, int(rng.integers(0, n - SAMPLE_RATE + 1))))
    return entries


def load_audio(root, entry: Entry) -> AudioClip:
    """Samples for one entry; silence without noise files is all zeros."""
    root = Path(root)
    if entry.offset is None:
        return AudioClip(read_wav(root / entry.path), SAMPLE_RATE)
    if not entry.path:
        return AudioClip(np.zeros(SAMPLE_RATE), SAMPLE_RATE)
    noise = read_wav(root / entry.path, allow_long=True)
    return AudioClip(noise[entry.offset:entry.offset + SAMPLE_RATE], SAMPLE_RATE)


def augment(clip: AudioClip, rng: np.random.Generator, max_shift_ms: int = 100,
            noise_level: float = 0.005) -> AudioClip:
    """Random time shift (zero fill) plus low-level white noise."""
    s = clip.fit_to_one_second().samples
    shift = int(rng.integers(-max_shift_ms, max_shift_ms + 1)) * clip.sample_rate_hz // 1000
    s = np.roll(s, shift)
    if shift > 0:
        s[:shift] = 0
    elif shift < 0:
        s[shift:] = 0
    s = np.clip(s + noise_level * rng.standard_normal(len(s)), -1.0, 1.0)
    return AudioClip(s, clip.sample_rate_hz)


class FeatureStore:
    """Memoising feature lookup with an optional on-disk cache directory."""

    def __init__(self, root, cache_dir=None):
        self.root = Path(root)
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._memory: dict[str, np.ndarray] = {}

    def _cache_path(self, entry: Entry) -> Path:
        name = entry.path or "zeros"
        suffix = "" if entry.offset is None else f".{entry.offset}"
        return self.cache_dir / f"{name}{suffix}.feat"

    def get(self, entry: Entry) -> np.ndarray:
        key = entry.key
        if key in self._memory:
            return self._memory[key]
        feats = None
        if self.cache_dir is not None:
            path = self._cache_path(entry)
            if path.is_file():
                feats = read_feature_cache(path)
        if feats is None:
            feats = extract_features(load_audio(self.root, entry)).astype(np.float32)
            if self.cache_dir is not None:
                write_feature_cache(self._cache_path(entry), feats)
        self._memory[key] = feats
        return feats

    def arrays(self, entries: list[Entry]) -> tuple[np.ndarray, np.ndarray]:
        if not entries:
            return np.zeros((0, T_FRAMES, N_FEATURES), np.float32), np.zeros(0, np.int64)
        X = np.stack([self.get(e) for e in entries])
        y = np.array([e.label for e in entries], dtype=np.int64)
        return X, y


def make_batches(manifest: SplitManifest, split: str, batch_size: int, seed: int, epoch: int = 0,
                 store: FeatureStore | None = None, shuffle: bool = True,
                 augmentation: bool = False) -> Iterator[tuple[Tensor, np.ndarray]]:
    """Yield ``(features (B, 98, 40), labels)`` batches in a seeded per-epoch order.

    The final batch may be short.
    """
    entries = manifest.split(split)
    if not entries:
        raise ConfigError(f"split {split!r} is empty")
    if batch_size < 1:
        raise ConfigError("batch_size must be positive")
    store = store or FeatureStore(manifest.root)
    order = np.arange(len(entries))
    if shuffle:
        order = np.random.default_rng([seed, epoch]).permutation(len(entries))
    aug_rng = np.random.default_rng([seed, epoch, 1]) if augmentation else None
    for start in range(0, len(order), batch_size):
        batch = [entries[i] for i in order[start:start + batch_size]]
        if aug_rng is not None:
            X = np.stack([extract_features(augment(load_audio(store.root, e), aug_rng)) for e in batch])
            X = X.astype(np.float32)
        else:
            X = np.stack([store.get(e) for e in batch])
        yield Tensor(X), np.array([e.label for e in batch], dtype=np.int64)
