"""Synthetic Speech Commands-style corpus for desk-scale runs and tests.

Each word is a fixed sequence of three voiced segments with its own pair of
formant-like tones and glide direction.  Every recording perturbs pitch,
segment timing, onset, loudness and background noise, so classes overlap
enough that a classifier has to learn the spectral-temporal pattern.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from .audio import SAMPLE_RATE, write_wav
from .data import BACKGROUND_DIR, KEYWORDS

FILLERS = ("bed", "bird", "cat", "dog", "happy", "house", "marvin", "sheila", "tree", "wow")


def _word_recipe(word: str) -> np.ndarray:
    """``(3, 4)`` per-segment (f1, f2, glide, relative length) for ``word``."""
    rng = np.random.default_rng(zlib.crc32(word.encode()))
    f1 = rng.uniform(250, 900, 3)
    f2 = rng.uniform(1000, 3200, 3)
    glide = rng.uniform(-0.25, 0.25, 3)
    length = rng.uniform(0.6, 1.4, 3)
    return np.stack([f1, f2, glide, length], axis=1)


def synth_word(word: str, rng: np.random.Generator, noise_level: float = 0.02,
               sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    recipe = _word_recipe(word)
    pitch = rng.uniform(0.9, 1.1)
    f0 = rng.uniform(90, 220)
    total = rng.uniform(0.45, 0.7) * sample_rate
    lengths = recipe[:, 3] * rng.uniform(0.85, 1.15, 3)
    lengths = (lengths / lengths.sum() * total).astype(int)
    pieces = []
    for (f1, f2, glide, _), n in zip(recipe, lengths):
        t = np.arange(n) / sample_rate
        sweep = 1 + glide * t / max(t[-1], 1e-9)
        phase1 = 2 * np.pi * np.cumsum(f1 * pitch * sweep) / sample_rate
        phase2 = 2 * np.pi * np.cumsum(f2 * pitch * sweep) / sample_rate
        phase0 = 2 * np.pi * f0 * t
        seg = (0.6 * np.sin(phase1) + 0.4 * np.sin(phase2)) * (0.7 + 0.3 * np.sin(phase0))
        pieces.append(seg * np.hanning(n))
    voice = np.concatenate(pieces)
    clip = np.zeros(sample_rate)
    onset = rng.integers(0, sample_rate - len(voice))
    clip[onset:onset + len(voice)] = voice * rng.uniform(0.3, 0.8)
    clip += noise_level * rng.standard_normal(sample_rate)
    return np.clip(clip, -1.0, 1.0)


def synth_noise(seconds: float, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Brown-ish background noise."""
    white = rng.standard_normal(int(seconds * sample_rate))
    brown = np.cumsum(white)
    brown -= np.convolve(brown, np.ones(400) / 400, mode="same")
    brown /= np.abs(brown).max() + 1e-12
    return 0.3 * brown + 0.02 * white


def make_dataset(words: dict[str, int], seed: int = 0, noise_level: float = 0.02) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """In-memory clips ``(N, 16000)``, labels (index into ``list(words)``) and word names."""
    rng = np.random.default_rng(seed)
    clips, labels, names = [], [], list(words)
    for label, (word, count) in enumerate(words.items()):
        for _ in range(count):
            clips.append(synth_word(word, rng, noise_level))
            labels.append(label)
    return np.stack(clips), np.array(labels), names


def write_fixture(root, per_word: int = 10, words=None, seed: int = 0, dev_fraction: float = 0.1,
                  test_fraction: float = 0.1, noise_files: int = 2, noise_level: float = 0.02) -> Path:
    """Write a Speech Commands V1-shaped tree: word folders, list files and background noise."""
    root = Path(root)
    words = list(words) if words is not None else list(KEYWORDS) + list(FILLERS[:4])
    rng = np.random.default_rng(seed)
    dev, test = [], []
    k = 0
    for word in words:
        for i in range(per_word):
            speaker = f"{rng.integers(0, 2**32):08x}"
            rel = f"{word}/{speaker}_nohash_{i % 3}.wav"
            write_wav(root / rel, synth_word(word, rng, noise_level))
            # golden-ratio sequence: even split coverage even for tiny fixtures
            u = (k * 0.6180339887498949) % 1.0
            k += 1
            if u < dev_fraction:
                dev.append(rel)
            elif u < dev_fraction + test_fraction:
                test.append(rel)
    (root / "validation_list.txt").write_text("".join(f"{p}\n" for p in dev))
    (root / "testing_list.txt").write_text("".join(f"{p}\n" for p in test))
    for i in range(noise_files):
        write_wav(root / BACKGROUND_DIR / f"noise_{i}.wav", synth_noise(3.0, rng))
    return root
