"""Waveform loading, zero-phase filtering and log-Mel features."""

from __future__ import annotations

from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

SAMPLE_RATE = 16000


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains NaN or Inf samples")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class STFTSpec:
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    window: str = "hann"
    center: bool = True


def load_audio(path: str | Path, target_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a wav file as mono floats in [-1, 1], resampled to ``target_rate``."""
    rate, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        if info.min == 0:  # unsigned 8-bit PCM
            data = (data.astype(np.float64) - (info.max + 1) / 2) / ((info.max + 1) / 2)
        else:
            data = data.astype(np.float64) / -float(info.min)
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != target_rate:
        g = gcd(int(rate), int(target_rate))
        data = signal.resample_poly(data, target_rate // g, int(rate) // g)
    return AudioClip(np.clip(data, -1.0, 1.0), target_rate)


def design_bandpass(low: float = 60.0, high: float = 7600.0, order: int = 4,
                    sample_rate: int = SAMPLE_RATE, output: str = "ba"):
    """Butterworth band-pass as ``(b, a)`` or, with ``output="sos"``, sections."""
    return signal.butter(order, (low, high), btype="bandpass", fs=sample_rate, output=output)


def _check_stable(filter_spec) -> None:
    if isinstance(filter_spec, tuple):
        poles = np.roots(np.atleast_1d(filter_spec[1]))
    else:
        sos = np.atleast_2d(filter_spec)
        if sos.shape[1] != 6:
            raise ValueError(f"second-order sections must have 6 columns, got {sos.shape}")
        poles = np.concatenate([np.roots(section[3:]) for section in sos])
    if poles.size and np.max(np.abs(poles)) >= 1.0:
        raise ValueError(
            f"unstable filter: pole magnitude {np.max(np.abs(poles)):.6f} >= 1")


def zero_phase_filter(clip: AudioClip, filter_spec=None) -> AudioClip:
    """Run the filter forward, then backward over the reversed output.

    ``filter_spec`` is a ``(b, a)`` tuple or an ``(n_sections, 6)`` SOS
    array; the default is a 4th-order 60-7600 Hz Butterworth band-pass.
    ``(b, a)`` filters use Gustafsson's initial conditions, which make the
    result invariant to time reversal of the input. SOS filters use
    odd-extension edge padding and are reversal invariant only away from
    the edges.
    """
    if filter_spec is None:
        filter_spec = design_bandpass(sample_rate=clip.sample_rate)
    _check_stable(filter_spec)
    x = clip.samples
    if len(x) == 0:
        return AudioClip(x.copy(), clip.sample_rate)
    if isinstance(filter_spec, tuple):
        b, a = (np.atleast_1d(np.asarray(c, dtype=np.float64)) for c in filter_spec)
        y = signal.filtfilt(b, a, x, method="gust")
    else:
        sos = np.atleast_2d(np.asarray(filter_spec, dtype=np.float64))
        padlen = min(3 * (2 * len(sos) + 1), len(x) - 1)
        y = signal.sosfiltfilt(sos, x, padtype="odd", padlen=padlen)
    return AudioClip(y, clip.sample_rate)


def hz_to_mel(freq):
    """HTK Mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = 256, n_fft: int = 1024, sample_rate: int = SAMPLE_RATE,
                   f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular HTK filters, shape ``(n_mels, n_fft // 2 + 1)``, unit peak."""
    f_max = sample_rate / 2 if f_max is None else f_max
    fft_freqs = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs[None, :] - lower) / (center - lower)
    falling = (upper - fft_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_count(n_samples: int, stft: STFTSpec) -> int:
    padded = n_samples + (2 * (stft.n_fft // 2) if stft.center else 0)
    return (padded - stft.n_fft) // stft.hop_length + 1


def power_spectrogram(x: np.ndarray, stft: STFTSpec) -> np.ndarray:
    """|STFT|^2, shape ``(n_fft // 2 + 1, n_frames)``."""
    if stft.win_length > stft.n_fft:
        raise ValueError("win_length cannot exceed n_fft")
    if len(x) < stft.win_length:
        raise ValueError(
            f"clip has {len(x)} samples, shorter than one window ({stft.win_length}); "
            "pad the clip or drop it")
    if stft.center:
        x = np.pad(x, stft.n_fft // 2, mode="reflect")
    window = signal.get_window(stft.window, stft.win_length, fftbins=True)
    offset = (stft.n_fft - stft.win_length) // 2
    window = np.pad(window, (offset, stft.n_fft - stft.win_length - offset))
    frames = np.lib.stride_tricks.sliding_window_view(x, stft.n_fft)[::stft.hop_length]
    spec = np.fft.rfft(frames * window, axis=1)
    return (np.abs(spec) ** 2).T


def mel_spectrogram(clip: AudioClip, stft: STFTSpec | None = None, n_mels: int = 256,
                    f_min: float = 0.0, f_max: float = 8000.0, log_floor: float = 1e-10,
                    log: bool = True) -> np.ndarray:
    """Log-Mel energies of shape ``(n_mels, n_frames)``.

    With ``log=False`` the pre-log Mel energies are returned instead.
    """
    stft = stft or STFTSpec()
    if clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {clip.sample_rate} Hz")
    power = power_spectrogram(clip.samples, stft)
    fb = mel_filterbank(n_mels, stft.n_fft, clip.sample_rate, f_min, f_max)
    energies = fb @ power
    if not log:
        return energies
    return np.log(energies + log_floor)


def fit_frames(mel: np.ndarray, max_frames: int, pad_value: float) -> np.ndarray:
    """Truncate or right-pad the time axis to exactly ``max_frames``."""
    if mel.shape[1] >= max_frames:
        return mel[:, :max_frames]
    pad = np.full((mel.shape[0], max_frames - mel.shape[1]), pad_value, dtype=mel.dtype)
    return np.concatenate([mel, pad], axis=1)
