"""Synthetic audiovisual scenes: a slow latent process drives both channels.

The latent is a seeded sum of low-frequency sinusoids. It modulates the
pitch and amplitude of a harmonic tone (the clean speech stand-in) and, via
a fixed affine map seeded at the dataset level, produces a low-dimensional
video feature track sampled once per block of `k_factor` audio frames. The
video track therefore carries clean-signal information through a channel
the acoustic noise never touches. Noise is a seeded mixture of up to five
band-limited burst sources, scaled to an exact target SNR.

Everything is a pure function of (seed, config): the same pair always
yields bit-identical samples.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dsp import SignalError, StftConfig, Waveform, mix_at_snr
from .tame import FeatureSequence

__all__ = [
    "SceneConfig",
    "SceneSample",
    "generate_scene",
    "load_scene",
    "read_wav",
    "save_scene",
    "write_wav",
]

CLEAN_RMS = 0.02            # leaves PCM16 headroom for -15 dB noise
VIDEO_NOISE_SIGMA = 0.05
HARMONIC_WEIGHTS = (1.0, 0.55, 0.35, 0.2)
PCM_SCALE = 32767.0


@dataclass(frozen=True)
class SceneConfig:
    duration_s: float = 2.0
    sample_rate: int = 16000
    snr_db: float = 0.0
    k_factor: int = 4
    d_v: int = 16
    window_ms: float = 20.0
    hop_ms: float = 10.0
    latent_dim: int = 4
    map_seed: int = 777     # dataset-level: fixes the latent -> video map

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_ms, self.hop_ms, self.sample_rate)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate))

    @property
    def n_video_frames(self) -> int:
        return self.stft.frame_count(self.n_samples) // self.k_factor

    @property
    def n_audio_frames(self) -> int:
        """Spectrogram frames kept after trimming to a block multiple."""
        return self.n_video_frames * self.k_factor


@dataclass(frozen=True)
class SceneSample:
    clean: Waveform
    noisy: Waveform
    video_track: FeatureSequence
    snr_db: float
    seed: int
    config: SceneConfig

    def __post_init__(self):
        if len(self.noisy) != len(self.clean):
            raise SignalError(
                f"SceneSample: noisy length {len(self.noisy)} != clean length {len(self.clean)}"
            )
        expected = self.config.n_video_frames
        if self.video_track.n_frames != expected:
            raise SignalError(
                f"SceneSample: {self.video_track.n_frames} video frames, expected {expected}"
            )


def _latent(rng: np.random.Generator, dim: int, times: list[np.ndarray]) -> list[np.ndarray]:
    """Evaluate a seeded sum of slow sinusoids at each requested time grid."""
    n_sin = 3
    freqs = rng.uniform(0.3, 2.2, size=(dim, n_sin))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(dim, n_sin))
    amps = rng.uniform(0.4, 1.0, size=(dim, n_sin))
    amps /= np.linalg.norm(amps, axis=1, keepdims=True)
    outs = []
    for t in times:
        z = np.zeros((t.size, dim))
        for i in range(dim):
            for j in range(n_sin):
                z[:, i] += amps[i, j] * np.sin(2.0 * np.pi * freqs[i, j] * t + phases[i, j])
        outs.append(z)
    return outs


def _harmonic_tone(z: np.ndarray, sample_rate: int) -> np.ndarray:
    """Amplitude- and pitch-modulated tone driven by the first two latents."""
    f0 = 150.0 + 45.0 * np.tanh(z[:, 0])
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    env = 1.0 + 0.6 * np.tanh(z[:, 1])
    x = np.zeros(z.shape[0])
    for h, w in enumerate(HARMONIC_WEIGHTS, start=1):
        x += w * np.sin(h * phase)
    x *= env
    rms = np.sqrt(np.mean(x**2))
    return x * (CLEAN_RMS / rms)


def _burst_noise(rng: np.random.Generator, n: int, sample_rate: int) -> np.ndarray:
    """One band-limited noise source gated by smooth random bursts."""
    white = rng.normal(size=n)
    lo = rng.uniform(60.0, 4000.0)
    hi = min(lo + rng.uniform(200.0, 3000.0), 7600.0)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    band = np.fft.irfft(spec, n=n)

    t = np.arange(n) / sample_rate
    envelope = np.full(n, 0.05)
    for _ in range(int(rng.integers(2, 6))):
        center = rng.uniform(0.0, n / sample_rate)
        width = rng.uniform(0.1, 0.6)
        envelope += np.exp(-0.5 * ((t - center) / (width / 2.0)) ** 2)
    return band * np.minimum(envelope, 1.0)


def generate_scene(seed: int, cfg: SceneConfig) -> SceneSample:
    """Build one scene deterministically from (seed, cfg)."""
    if cfg.n_video_frames < 1:
        raise SignalError(
            f"generate_scene: {cfg.duration_s}s is too short for one video frame "
            f"(k_factor={cfg.k_factor})"
        )
    seq = np.random.SeedSequence(entropy=(int(seed), 0x5CE9E))
    rng_latent, rng_noise, rng_video = (np.random.default_rng(s) for s in seq.spawn(3))

    n = cfg.n_samples
    stft_cfg = cfg.stft
    audio_times = np.arange(n) / cfg.sample_rate
    k, hop, win = cfg.k_factor, stft_cfg.hop_length, stft_cfg.win_length
    block_centers = (
        (np.arange(cfg.n_video_frames) * k + (k - 1) / 2.0) * hop + win / 2.0
    ) / cfg.sample_rate
    z_audio, z_video = _latent(rng_latent, cfg.latent_dim, [audio_times, block_centers])

    clean = Waveform(_harmonic_tone(z_audio, cfg.sample_rate), cfg.sample_rate)

    map_rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(cfg.map_seed), 0xFACE)))
    video_map = map_rng.normal(scale=1.0 / np.sqrt(cfg.latent_dim), size=(cfg.latent_dim, cfg.d_v))
    video = z_video @ video_map + VIDEO_NOISE_SIGMA * rng_video.normal(size=(cfg.n_video_frames, cfg.d_v))

    n_sources = int(rng_noise.integers(1, 6))
    sources = [Waveform(_burst_noise(rng_noise, n, cfg.sample_rate), cfg.sample_rate)
               for _ in range(n_sources)]
    noisy = mix_at_snr(clean, sources, cfg.snr_db)

    return SceneSample(
        clean=clean,
        noisy=noisy,
        video_track=FeatureSequence(video, "video"),
        snr_db=cfg.snr_db,
        seed=int(seed),
        config=cfg,
    )


# -- persistence ---------------------------------------------------------------

def write_wav(path: Path | str, w: Waveform) -> None:
    """Write mono PCM16."""
    data = np.clip(np.round(w.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(data.tobytes())


def read_wav(path: Path | str) -> Waveform:
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise SignalError(f"read_wav: {path} is not mono PCM16")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM_SCALE
    return Waveform(samples, rate)


def _config_dict(cfg: SceneConfig) -> dict:
    return {
        "duration_s": cfg.duration_s,
        "sample_rate": cfg.sample_rate,
        "k_factor": cfg.k_factor,
        "d_v": cfg.d_v,
        "window_ms": cfg.window_ms,
        "hop_ms": cfg.hop_ms,
        "latent_dim": cfg.latent_dim,
        "map_seed": cfg.map_seed,
    }


def save_scene(sample: SceneSample, out_dir: Path | str, stem: str) -> dict:
    """Write clean/noisy WAVs plus a JSON sidecar; returns the manifest entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_wav(out_dir / f"{stem}_clean.wav", sample.clean)
    write_wav(out_dir / f"{stem}_noisy.wav", sample.noisy)
    sidecar = {
        "snr_db": sample.snr_db,
        "seed": sample.seed,
        "k_factor": sample.config.k_factor,
        "sample_rate": sample.config.sample_rate,
        "video_track": np.asarray(sample.video_track.frames.data).tolist(),
        "config": _config_dict(sample.config),
    }
    with open(out_dir / f"{stem}.json", "w") as f:
        json.dump(sidecar, f, sort_keys=True, separators=(",", ":"))
    return {"stem": stem, "seed": sample.seed, "snr_db": sample.snr_db}


def load_scene(out_dir: Path | str, stem: str) -> SceneSample:
    out_dir = Path(out_dir)
    with open(out_dir / f"{stem}.json") as f:
        sidecar = json.load(f)
    cfg = SceneConfig(snr_db=sidecar["snr_db"], **sidecar["config"])
    return SceneSample(
        clean=read_wav(out_dir / f"{stem}_clean.wav"),
        noisy=read_wav(out_dir / f"{stem}_noisy.wav"),
        video_track=FeatureSequence(np.asarray(sidecar["video_track"], np.float64), "video"),
        snr_db=sidecar["snr_db"],
        seed=sidecar["seed"],
        config=cfg,
    )


def scene_for_snr(seed: int, cfg: SceneConfig, snr_db: float) -> SceneSample:
    return generate_scene(seed, replace(cfg, snr_db=float(snr_db)))


def training_snr(seed: int, snr_range: tuple[float, float]) -> float:
    """Deterministic per-seed draw from the training SNR range."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0x50A2)))
    return float(rng.uniform(snr_range[0], snr_range[1]))
