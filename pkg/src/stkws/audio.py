"""Audio ingestion and MFCC front end.

Pipeline for a 1 s, 16 kHz clip: FFT brick-wall band limit (20 Hz - 7.8 kHz),
480-sample Hamming frames every 160 samples, 512-point power spectrum,
40 triangular mel filters spanning the same band, natural log with a 1e-12
floor, orthonormal DCT-II keeping all 40 coefficients.  The result is a
98 x 40 feature map.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, irfft, rfft

from .exceptions import RangeError, ValidationError

SAMPLE_RATE = 16000
WINDOW_MS = 30
SHIFT_MS = 10
N_FFT = 512
N_MELS = 40
N_MFCC = 40
LOW_HZ = 20.0
HIGH_HZ = 7800.0
LOG_FLOOR = 1e-12
MAX_DURATION_SLACK = 1.05


@dataclass
class AudioClip:
    """Mono PCM samples in ``[-1, 1]`` with their sample rate."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValidationError(f"expected mono samples, got shape {self.samples.shape}")
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ValidationError(f"sample rate must be a positive integer, got {self.sample_rate_hz}")
        self.sample_rate_hz = int(self.sample_rate_hz)
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("audio samples must be finite")
        if len(self.samples) > self.sample_rate_hz * MAX_DURATION_SLACK:
            raise ValidationError(f"clip of {len(self.samples)} samples exceeds ~1 s at {self.sample_rate_hz} Hz")

    def __len__(self) -> int:
        return len(self.samples)

    def fit_to_one_second(self) -> "AudioClip":
        """Zero-pad at the end or truncate to exactly one second."""
        n = self.sample_rate_hz
        s = self.samples[:n]
        if len(s) < n:
            s = np.concatenate([s, np.zeros(n - len(s))])
        return AudioClip(s, self.sample_rate_hz)


@dataclass
class FeatureMap:
    """``T x F`` MFCC matrix."""

    values: np.ndarray
    frame_shift_ms: int = SHIFT_MS
    window_ms: int = WINDOW_MS
    n_mfcc: int = N_MFCC

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def band_limit(clip: AudioClip, low_hz: float = LOW_HZ, high_hz: float = HIGH_HZ) -> AudioClip:
    """Zero every FFT bin outside ``[low_hz, high_hz]`` and transform back."""
    if not isinstance(clip, AudioClip):
        clip = AudioClip(clip)
    nyquist = clip.sample_rate_hz / 2
    if not 0 <= low_hz < high_hz:
        raise RangeError(f"need 0 <= low_hz < high_hz, got {low_hz}, {high_hz}")
    if high_hz > nyquist:
        raise RangeError(f"high_hz {high_hz} exceeds Nyquist {nyquist}")
    n = len(clip.samples)
    if n == 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate_hz)
    spectrum = rfft(clip.samples)
    freqs = np.arange(len(spectrum)) * clip.sample_rate_hz / n
    spectrum[(freqs < low_hz) | (freqs > high_hz)] = 0
    return AudioClip(irfft(spectrum, n), clip.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT, n_mels: int = N_MELS,
                   low_hz: float = LOW_HZ, high_hz: float = HIGH_HZ) -> np.ndarray:
    """``(n_mels, n_fft//2 + 1)`` triangular filters with mel-spaced edges, unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - left) / (centre - left)
    falling = (right - freqs) / (right - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_signal(samples: np.ndarray, window: int, shift: int) -> np.ndarray:
    if len(samples) < window:
        raise ValidationError(f"need at least {window} samples for one frame, got {len(samples)}")
    n_frames = (len(samples) - window) // shift + 1
    return np.lib.stride_tricks.sliding_window_view(samples, window)[::shift][:n_frames]


def mfcc(clip: AudioClip, n_mfcc: int = N_MFCC) -> FeatureMap:
    """MFCC feature map of an (already band-limited, 1 s) clip."""
    if not isinstance(clip, AudioClip):
        clip = AudioClip(clip)
    sr = clip.sample_rate_hz
    window = sr * WINDOW_MS // 1000
    shift = sr * SHIFT_MS // 1000
    frames = frame_signal(clip.samples, window, shift) * np.hamming(window)
    power = np.abs(rfft(frames, N_FFT, axis=1)) ** 2
    energies = power @ _filterbank(sr).T
    log_mel = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_mfcc]
    return FeatureMap(coeffs, n_mfcc=n_mfcc)


_FILTERBANKS: dict[int, np.ndarray] = {}


def _filterbank(sr: int) -> np.ndarray:
    if sr not in _FILTERBANKS:
        _FILTERBANKS[sr] = mel_filterbank(sr)
    return _FILTERBANKS[sr]


def extract_features(clip: AudioClip) -> np.ndarray:
    """Full front end: fit to 1 s, band limit, MFCC.  Returns a float64 ``(98, 40)`` array."""
    clip = clip.fit_to_one_second()
    return mfcc(band_limit(clip)).values


def read_wav(path, expected_rate: int | None = SAMPLE_RATE, allow_long: bool = False) -> np.ndarray:
    """Read a 16-bit PCM mono WAV file into float64 samples scaled to ``[-1, 1)``."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate, n = wf.getnchannels(), wf.getsampwidth(), wf.getframerate(), wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise ValidationError(f"{path}: unreadable WAV ({exc})") from exc
    if channels != 1:
        raise ValidationError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise ValidationError(f"{path}: expected 16-bit PCM, found {8 * width}-bit samples")
    if expected_rate is not None and rate != expected_rate:
        raise ValidationError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no resampling)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if not allow_long and len(samples) > rate * MAX_DURATION_SLACK:
        raise ValidationError(f"{path}: {len(samples)} samples is longer than one second")
    return samples


def load_clip(path) -> AudioClip:
    return AudioClip(read_wav(path), SAMPLE_RATE)


def write_wav(path, samples, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


# -- feature cache ----------------------------------------------------------
CACHE_MAGIC = b"KWSF"


def write_feature_cache(path, features) -> None:
    """Header ``{magic, T, F}`` (uint32 LE) followed by row-major float32 values."""
    values = np.asarray(features.values if isinstance(features, FeatureMap) else features)
    T, F = values.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC + struct.pack("<II", T, F))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_feature_cache(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != CACHE_MAGIC:
        raise ValidationError(f"{path}: not a feature cache file")
    T, F = struct.unpack("<II", blob[4:12])
    if len(blob) != 12 + 4 * T * F:
        raise ValidationError(f"{path}: truncated feature cache")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(T, F).astype(np.float32)
