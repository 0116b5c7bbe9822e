"""Short-time Fourier analysis, SI-SDR, and SNR-controlled mixing.

Analysis uses a periodic Hann window with fft size equal to the window
length and a onesided spectrum. Synthesis is weighted overlap-add with
per-sample window-power normalization, so analysis followed by synthesis
reproduces interior samples to rounding error.

`istft_frames` and `si_sdr_frames` run on `Tensor` inputs and participate in
gradient recordings; the array-level wrappers (`istft`, `si_sdr`) are plain
numpy and double as independent references for the differentiable paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import Tensor, concat, no_grad

__all__ = [
    "ComplexSpectrogram",
    "SignalError",
    "StftConfig",
    "Waveform",
    "istft",
    "istft_frames",
    "mix_at_snr",
    "si_sdr",
    "si_sdr_frames",
    "stft",
]

SI_SDR_CAP_DB = 120.0
SI_SDR_EPS = 1e-12
MAX_NOISE_SOURCES = 5


class SignalError(ValueError):
    """Waveform or spectrogram input violates an operation's contract."""


@dataclass(frozen=True)
class Waveform:
    """Mono float waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise SignalError(f"Waveform: expected non-empty 1-d samples, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise SignalError("Waveform: non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    def power(self) -> float:
        return float(np.mean(self.samples**2))


@dataclass(frozen=True)
class StftConfig:
    window_ms: float = 20.0
    hop_ms: float = 10.0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.window_ms < self.hop_ms:
            raise SignalError("StftConfig: window must be at least one hop long")
        if self.win_length % self.hop_length != 0:
            raise SignalError("StftConfig: hop must divide the window length")

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.window_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.hop_ms / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.win_length // 2 + 1

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop_length

    def frame_count(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            raise SignalError(
                f"stft: waveform of {n_samples} samples is shorter than one "
                f"{self.win_length}-sample window"
            )
        return 1 + (n_samples - self.win_length) // self.hop_length

    def output_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop_length + self.win_length


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Onesided complex spectrogram stored as separate real/imag planes."""

    real: np.ndarray
    imag: np.ndarray
    config: StftConfig

    def __post_init__(self):
        r, i = np.asarray(self.real, np.float64), np.asarray(self.imag, np.float64)
        if r.shape != i.shape or r.ndim != 2:
            raise SignalError(f"ComplexSpectrogram: planes {r.shape} vs {i.shape} must be equal 2-d")
        if r.shape[1] != self.config.n_bins:
            raise SignalError(
                f"ComplexSpectrogram: {r.shape[1]} bins inconsistent with window "
                f"({self.config.n_bins} expected)"
            )
        object.__setattr__(self, "real", r)
        object.__setattr__(self, "imag", i)

    @property
    def n_frames(self) -> int:
        return self.real.shape[0]

    @property
    def n_bins(self) -> int:
        return self.real.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.real, self.imag)


def hann_window(n: int) -> np.ndarray:
    # periodic variant: exact unit overlap-add at hop = n / k
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@lru_cache(maxsize=8)
def _synthesis_basis(win_length: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed inverse-rfft basis pair, each (n_bins, win_length)."""
    n_bins = win_length // 2 + 1
    k = np.arange(n_bins)[:, None]
    n = np.arange(win_length)[None, :]
    mult = np.full(n_bins, 2.0)
    mult[0] = 1.0
    if win_length % 2 == 0:
        mult[-1] = 1.0
    ang = 2.0 * np.pi * k * n / win_length
    w = hann_window(win_length)[None, :]
    basis_r = (mult[:, None] * np.cos(ang) / win_length) * w
    basis_i = (-mult[:, None] * np.sin(ang) / win_length) * w
    return basis_r, basis_i


@lru_cache(maxsize=32)
def _window_power(win_length: int, hop: int, n_frames: int) -> np.ndarray:
    out_len = (n_frames - 1) * hop + win_length
    w2 = hann_window(win_length) ** 2
    den = np.zeros(out_len)
    for t in range(n_frames):
        den[t * hop : t * hop + win_length] += w2
    return np.maximum(den, 1e-8)


def stft(w: Waveform, config: StftConfig | None = None) -> ComplexSpectrogram:
    """Hann-windowed onesided STFT with no padding.

    Frame count is 1 + floor((len - win) / hop); trailing samples that do
    not fill a window are dropped.
    """
    config = config or StftConfig(sample_rate=w.sample_rate)
    win, hop = config.win_length, config.hop_length
    n_frames = config.frame_count(len(w))
    idx = hop * np.arange(n_frames)[:, None] + np.arange(win)[None, :]
    frames = w.samples[idx] * hann_window(win)[None, :]
    spec = np.fft.rfft(frames, n=win, axis=1)
    return ComplexSpectrogram(spec.real.copy(), spec.imag.copy(), config)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse of `stft` (numpy reference path)."""
    win, hop = s.config.win_length, s.config.hop_length
    frames = np.fft.irfft(s.real + 1j * s.imag, n=win, axis=1) * hann_window(win)[None, :]
    out = np.zeros(s.config.output_length(s.n_frames))
    for t in range(s.n_frames):
        out[t * hop : t * hop + win] += frames[t]
    out /= _window_power(win, hop, s.n_frames)
    return Waveform(out, s.config.sample_rate)


def istft_frames(real: Tensor, imag: Tensor, config: StftConfig) -> Tensor:
    """Differentiable overlap-add synthesis of one spectrogram.

    Takes (n_frames, n_bins) planes and returns the time signal of length
    (n_frames - 1) * hop + win. Frames with the same index modulo win/hop
    tile the output contiguously, so overlap-add reduces to one shifted
    concatenation per parity group.
    """
    if real.shape != imag.shape or real.ndim != 2:
        raise SignalError(f"istft_frames: planes {real.shape} vs {imag.shape} must be equal 2-d")
    if real.shape[1] != config.n_bins:
        raise SignalError(
            f"istft_frames: {real.shape[1]} bins inconsistent with window "
            f"({config.n_bins} expected)"
        )
    win, hop = config.win_length, config.hop_length
    n_frames = real.shape[0]
    out_len = config.output_length(n_frames)
    basis_r, basis_i = _synthesis_basis(win)
    time_frames = real @ Tensor(basis_r) + imag @ Tensor(basis_i)

    groups = win // hop
    total = None
    for j in range(groups):
        rows = time_frames[j::groups]
        flat = rows.reshape(rows.shape[0] * win)
        pieces = []
        if j:
            pieces.append(Tensor(np.zeros(j * hop)))
        pieces.append(flat)
        tail = out_len - j * hop - flat.shape[0]
        if tail:
            pieces.append(Tensor(np.zeros(tail)))
        shifted = concat(pieces) if len(pieces) > 1 else pieces[0]
        total = shifted if total is None else total + shifted
    return total / Tensor(_window_power(win, hop, n_frames))


def si_sdr_frames(estimate: Tensor, reference: Tensor) -> Tensor:
    """Scale-invariant SDR in dB, row-wise over (batch, samples) tensors.

    The reference is rescaled by the projection coefficient before the
    distortion power is measured; the ratio and the output are clipped so
    perfect or empty estimates hit +-120 dB instead of infinities.
    """
    if estimate.shape != reference.shape or estimate.ndim != 2:
        raise SignalError(
            f"si_sdr_frames: expected equal (batch, samples) shapes, got "
            f"{estimate.shape} and {reference.shape}"
        )
    ref_power = (reference * reference).sum(axis=1, keepdims=True)
    if np.any(ref_power.data <= 0.0):
        raise SignalError("si_sdr_frames: reference has zero power")
    alpha = (estimate * reference).sum(axis=1, keepdims=True) / ref_power
    target = alpha * reference
    target_power = (target * target).sum(axis=1)
    resid_power = ((target - estimate) * (target - estimate)).sum(axis=1).clip(lo=SI_SDR_EPS)
    ratio = (target_power / resid_power).clip(lo=SI_SDR_EPS)
    db = ratio.log() * (10.0 / np.log(10.0))
    return db.clip(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)


def si_sdr(estimate: Waveform | np.ndarray, reference: Waveform | np.ndarray) -> float:
    """Scalar SI-SDR of one estimate against one reference, in dB."""
    e = estimate.samples if isinstance(estimate, Waveform) else np.asarray(estimate, np.float64)
    c = reference.samples if isinstance(reference, Waveform) else np.asarray(reference, np.float64)
    if e.shape != c.shape or e.ndim != 1:
        raise SignalError(f"si_sdr: expected equal 1-d inputs, got {e.shape} and {c.shape}")
    ref_power = float(np.dot(c, c))
    if ref_power <= 0.0:
        raise SignalError("si_sdr: reference has zero power")
    alpha = float(np.dot(e, c)) / ref_power
    target = alpha * c
    num = float(np.dot(target, target))
    den = max(float(np.dot(target - e, target - e)), SI_SDR_EPS)
    db = 10.0 * np.log10(max(num / den, SI_SDR_EPS))
    return float(np.clip(db, -SI_SDR_CAP_DB, SI_SDR_CAP_DB))


def _fit_length(noise: np.ndarray, n: int) -> np.ndarray:
    if noise.size >= n:
        return noise[:n]
    reps = int(np.ceil(n / noise.size))
    return np.tile(noise, reps)[:n]


def mix_at_snr(clean: Waveform, noises: list[Waveform], snr_db: float) -> Waveform:
    """Sum up to five noise sources and scale them to sit `snr_db` below the
    clean signal power, then add to the clean waveform."""
    if not 1 <= len(noises) <= MAX_NOISE_SOURCES:
        raise SignalError(f"mix_at_snr: expected 1..{MAX_NOISE_SOURCES} noise sources, got {len(noises)}")
    clean_power = clean.power()
    if clean_power <= 0.0:
        raise SignalError("mix_at_snr: clean signal is silent")
    total = np.zeros(len(clean))
    for nz in noises:
        if nz.sample_rate != clean.sample_rate:
            raise SignalError("mix_at_snr: sample rates differ")
        total += _fit_length(nz.samples, len(clean))
    noise_power = float(np.mean(total**2))
    if noise_power <= 0.0:
        raise SignalError("mix_at_snr: summed noise is silent")
    scale = np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0)))
    return Waveform(clean.samples + scale * total, clean.sample_rate)
