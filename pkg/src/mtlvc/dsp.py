"""Waveform/feature conversions: trimming, resampling, STFT, mel projection,
dB normalization and Griffin-Lim inversion.

Framing never center-pads: a signal of N samples yields
``1 + (N - win) // hop`` frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .errors import AllSilent, TooShort
from .features import FeatureKind, FeatureMatrix

MAG_FLOOR = 1e-5


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("waveform must be 1-D")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class SpectroConfig:
    sample_rate: int = 16000
    win_length: float = 0.050
    hop_length: float = 0.0125
    nfft: int = 2048
    n_mels: int = 80
    fmin: float = 50.0
    fmax: Optional[float] = None
    # A full-scale sine under an 800-tap Hann window peaks near 46 dB.
    ref_db: float = 46.0
    dynamic_range_db: float = 100.0

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.win_samples > self.nfft:
            raise ValueError(f"window of {self.win_samples} samples exceeds nfft={self.nfft}")
        if not 0 < self.hop_samples <= self.win_samples:
            raise ValueError("hop must be positive and no longer than the window")
        if not 0 < self.n_mels < self.n_freqs:
            raise ValueError(f"n_mels must lie in (0, {self.n_freqs})")
        if not 0 <= self.fmin < self.f_max <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate/2")
        if self.dynamic_range_db <= 0:
            raise ValueError("dynamic_range_db must be positive")

    @property
    def win_samples(self) -> int:
        return int(round(self.win_length * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_length * self.sample_rate))

    @property
    def n_freqs(self) -> int:
        return self.nfft // 2 + 1

    @property
    def f_max(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_samples:
            raise TooShort(f"{n_samples} samples is shorter than one {self.win_samples}-sample window")
        return 1 + (n_samples - self.win_samples) // self.hop_samples

    def to_dict(self) -> dict:
        return asdict(self)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def _window_rms_db(x: np.ndarray, win: int) -> np.ndarray:
    n_win = int(np.ceil(len(x) / win))
    padded = np.zeros(n_win * win)
    padded[: len(x)] = x
    rms = np.sqrt(np.mean(padded.reshape(n_win, win) ** 2, axis=1))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(rms)


def trim_silence(
    w: Waveform,
    threshold_db: float = -40.0,
    min_voiced: float = 0.0,
    window: float = 0.030,
) -> Waveform:
    """Cut leading/trailing silence using non-overlapping RMS windows.

    A window is voiced when its RMS level, relative to the loudest window,
    exceeds ``threshold_db``; voiced runs shorter than ``min_voiced`` seconds
    are ignored. The result spans the first through last voiced window.
    """
    begin, end = trim_bounds(w, threshold_db, min_voiced, window)
    return Waveform(w.samples[begin:end], w.sample_rate)


def trim_bounds(
    w: Waveform,
    threshold_db: float = -40.0,
    min_voiced: float = 0.0,
    window: float = 0.030,
) -> Tuple[int, int]:
    """Sample range ``[begin, end)`` kept by :func:`trim_silence`."""
    if len(w) == 0:
        raise ValueError("cannot trim an empty waveform")
    win = max(1, int(round(window * w.sample_rate)))
    level = _window_rms_db(w.samples, win)
    if not np.isfinite(level.max()):
        raise AllSilent("waveform has no energy")
    voiced = level - level.max() > threshold_db

    min_run = max(1, int(np.ceil(min_voiced * w.sample_rate / win)))
    if min_run > 1:
        keep = np.zeros_like(voiced)
        start = None
        for i, v in enumerate(np.append(voiced, False)):
            if v and start is None:
                start = i
            elif not v and start is not None:
                if i - start >= min_run:
                    keep[start:i] = True
                start = None
        voiced = keep

    idx = np.flatnonzero(voiced)
    if idx.size == 0:
        raise AllSilent(f"no window exceeds {threshold_db} dB")
    return int(idx[0] * win), int(min(len(w), (idx[-1] + 1) * win))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling to ``target_rate``."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(target_rate, w.sample_rate)
    out = sps.resample_poly(w.samples, ratio.numerator, ratio.denominator, padtype="line")
    n_out = int(round(len(w) * target_rate / w.sample_rate))
    if len(out) >= n_out:
        out = out[:n_out]
    else:
        out = np.pad(out, (0, n_out - len(out)), mode="edge")
    return Waveform(out, target_rate)


def _hann(c: SpectroConfig) -> np.ndarray:
    return sps.get_window("hann", c.win_samples, fftbins=True)


def stft(x: np.ndarray, c: SpectroConfig) -> np.ndarray:
    """Complex STFT, shape (T, nfft//2 + 1)."""
    c.n_frames(len(x))
    frames = sliding_window_view(x, c.win_samples)[:: c.hop_samples]
    return np.fft.rfft(frames * _hann(c), n=c.nfft, axis=1)


def istft(spec: np.ndarray, c: SpectroConfig) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` (length (T-1)*hop + win)."""
    win, hop = c.win_samples, c.hop_samples
    n_frames = spec.shape[0]
    length = (n_frames - 1) * hop + win
    window = _hann(c)
    frames = np.fft.irfft(spec, n=c.nfft, axis=1)[:, :win] * window
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n_frames):
        out[t * hop : t * hop + win] += frames[t]
        norm[t * hop : t * hop + win] += window**2
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    return out


def stft_magnitude(w: Waveform, c: SpectroConfig) -> np.ndarray:
    if w.sample_rate != c.sample_rate:
        raise ValueError(f"waveform at {w.sample_rate} Hz, config expects {c.sample_rate} Hz")
    return np.abs(stft(w.samples, c))


def mel_center_frequencies(c: SpectroConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    mels = np.linspace(hz_to_mel(c.fmin), hz_to_mel(c.f_max), c.n_mels + 2)
    return mel_to_hz(mels[1:-1])


def mel_filterbank(c: SpectroConfig) -> np.ndarray:
    """HTK-scale triangular filters, shape (n_mels, nfft//2 + 1), unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(c.fmin), hz_to_mel(c.f_max), c.n_mels + 2))
    freqs = np.arange(c.n_freqs) * c.sample_rate / c.nfft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def amplitude_to_db(mag: np.ndarray) -> np.ndarray:
    return 20.0 * np.log10(np.maximum(mag, MAG_FLOOR))


def normalize_db(db: np.ndarray, c: SpectroConfig) -> np.ndarray:
    """Map [ref_db - range, ref_db] affinely onto [0, 1], clipping outside."""
    floor = c.ref_db - c.dynamic_range_db
    return np.clip((db - floor) / c.dynamic_range_db, 0.0, 1.0)


def denormalize_db(values: np.ndarray, c: SpectroConfig) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * c.dynamic_range_db + (c.ref_db - c.dynamic_range_db)


def extract_features(w: Waveform, c: SpectroConfig) -> Tuple[FeatureMatrix, FeatureMatrix]:
    mag = stft_magnitude(w, c)
    linear = normalize_db(amplitude_to_db(mag), c)
    mel = normalize_db(amplitude_to_db(mag @ mel_filterbank(c).T), c)
    return FeatureMatrix(mel, FeatureKind.MEL, c), FeatureMatrix(linear, FeatureKind.LINEAR, c)


def spectral_convergence(target_mag: np.ndarray, estimate_mag: np.ndarray) -> float:
    denom = np.linalg.norm(target_mag)
    if denom == 0.0:
        return float(np.linalg.norm(estimate_mag))
    return float(np.linalg.norm(target_mag - estimate_mag) / denom)


@dataclass
class GriffinLimResult:
    waveform: Waveform
    convergence: List[float] = field(default_factory=list)


def griffin_lim(
    linear: FeatureMatrix,
    iters: int = 60,
    config: Optional[SpectroConfig] = None,
    seed: int = 0,
    momentum: float = 0.99,
    return_history: bool = False,
):
    """Recover a waveform from a normalized linear spectrogram.

    Uses the accelerated Griffin-Lim update (``momentum=0`` gives the plain
    algorithm) from a seeded random initial phase. Values at the
    normalization floor (0) are treated as silence rather than as
    ``ref_db - dynamic_range_db``. With ``return_history`` the spectral
    convergence after 0..iters iterations is returned alongside.
    """
    if linear.kind != FeatureKind.LINEAR:
        raise ValueError("griffin_lim needs a LINEAR feature matrix")
    c = config or linear.config or SpectroConfig()
    if linear.n_bins != c.n_freqs:
        raise ValueError(f"expected {c.n_freqs} bins, got {linear.n_bins}")
    values = linear.values.astype(np.float64)
    mag = np.where(values > 0.0, 10.0 ** (denormalize_db(values, c) / 20.0), 0.0)

    rng = np.random.default_rng(seed)
    estimate = mag * np.exp(2j * np.pi * rng.random(mag.shape))
    x = istft(estimate, c)
    history: List[float] = []
    accel = estimate
    prev = None
    for _ in range(iters):
        rebuilt = stft(x, c)
        history.append(spectral_convergence(mag, np.abs(rebuilt)))
        estimate = mag * np.exp(1j * np.angle(rebuilt))
        accel = estimate if prev is None else estimate + momentum * (estimate - prev)
        prev = estimate
        x = istft(accel, c)
    x = istft(estimate, c)
    history.append(spectral_convergence(mag, np.abs(stft(x, c))))
    wave = Waveform(x, c.sample_rate)
    if return_history:
        return GriffinLimResult(wave, history)
    return wave
