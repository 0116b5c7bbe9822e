"""Modality-specific codebooks and cross-modal feature retrieval.

Each modality owns `n_blocks` stacked codebooks of `n_codes` vectors. A
feature frame is related to one block by cosine similarity against every
code, the relation vector is pushed through a tempered softmax, and the
resulting distribution mixes the codes of the target modality's same-index
block. The mixed vector passes through a shared affine map with batch
normalization.

Block index k of the audio codebook is tied to audio frame K*t + k, the
k-th audio frame inside video frame t, which is what keeps the audio and
video temporal grids aligned (one video frame per K audio frames).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    concat,
    cosine_similarity,
    softmax_tempered,
)

__all__ = [
    "BatchNorm",
    "FeatureSequence",
    "ModalityCodebook",
    "Projection",
    "TameError",
    "TameModule",
    "code_distribution",
    "relate",
    "retrieve",
]

COSINE_EPS = 1e-8
SIMPLEX_TOL = 1e-6
NORM_FLOOR = 1e-3

Rate = Literal["audio", "video"]


class TameError(ValueError):
    """Codebook arguments violate an operation's contract."""


@dataclass
class FeatureSequence:
    """Time-major feature frames for one modality."""

    frames: Tensor
    rate: Rate

    def __post_init__(self):
        if not isinstance(self.frames, Tensor):
            self.frames = Tensor(self.frames)
        if self.frames.ndim != 2:
            raise TameError(f"FeatureSequence: expected (frames, dim), got {self.frames.shape}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass
class ModalityCodebook:
    """Stack of `n_blocks` codebooks, each `n_codes` vectors of width `dim`."""

    codes: Tensor
    modality: str

    def __post_init__(self):
        if self.codes.ndim != 3:
            raise TameError(f"ModalityCodebook: expected (blocks, codes, dim), got {self.codes.shape}")

    @property
    def n_blocks(self) -> int:
        return self.codes.shape[0]

    @property
    def n_codes(self) -> int:
        return self.codes.shape[1]

    @property
    def dim(self) -> int:
        return self.codes.shape[2]

    @classmethod
    def initialize(cls, n_blocks: int, n_codes: int, dim: int, rng: np.random.Generator,
                   modality: str) -> "ModalityCodebook":
        """Seeded Gaussian init at scale 1/sqrt(dim); codes whose norm falls
        under the floor are redrawn so every code has a usable direction."""
        if min(n_blocks, n_codes, dim) < 1:
            raise TameError("ModalityCodebook: blocks, codes and dim must be positive")
        codes = rng.normal(scale=1.0 / np.sqrt(dim), size=(n_blocks, n_codes, dim))
        norms = np.linalg.norm(codes, axis=2)
        while np.any(norms < NORM_FLOOR):
            redraw = norms < NORM_FLOOR
            codes[redraw] = rng.normal(scale=1.0 / np.sqrt(dim), size=(int(redraw.sum()), dim))
            norms = np.linalg.norm(codes, axis=2)
        return cls(Tensor(codes, requires_grad=True), modality)

    def block(self, k: int) -> Tensor:
        if not 0 <= k < self.n_blocks:
            raise TameError(f"block index {k} out of range [0, {self.n_blocks})")
        return self.codes[k]


class BatchNorm:
    """1-d batch normalization over the frame axis with running statistics.

    Train mode normalizes by the batch moments and (optionally) folds them
    into the running buffers with the given momentum; eval mode uses the
    frozen buffers, making the op a pure per-frame function.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.scale = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool, update_stats: bool = True) -> Tensor:
        if train:
            mean = x.mean(axis=0)
            var = ((x - mean) * (x - mean)).mean(axis=0)  # biased, as normalized
            if update_stats:
                m = self.momentum
                self.running_mean = (1 - m) * self.running_mean + m * mean.data
                self.running_var = (1 - m) * self.running_var + m * var.data
        else:
            mean, var = Tensor(self.running_mean), Tensor(self.running_var)
        normed = (x - mean) / (var + self.eps).sqrt()
        return normed * self.scale + self.shift

    def params(self) -> list[tuple[str, Tensor]]:
        return [("scale", self.scale), ("shift", self.shift)]

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def load_buffers(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.running_mean = np.asarray(mean, np.float64).copy()
        self.running_var = np.asarray(var, np.float64).copy()


class Projection:
    """Affine map dim -> dim followed by batch normalization."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(scale=1.0 / np.sqrt(dim), size=(dim, dim)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.norm = BatchNorm(dim)

    def affine(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def __call__(self, x: Tensor, train: bool, update_stats: bool = True) -> Tensor:
        return self.norm(self.affine(x), train, update_stats)

    def params(self) -> list[tuple[str, Tensor]]:
        return [("weight", self.weight), ("bias", self.bias)] + [
            (f"norm.{n}", p) for n, p in self.norm.params()
        ]


def relate_frames(frames: Tensor, codebook: ModalityCodebook, k: int,
                  eps: float = COSINE_EPS) -> Tensor:
    """Cosine similarity of each frame against every code of block k.

    frames: (n, dim) -> relations: (n, n_codes), entries clipped to [-1, 1]
    with both norms floored at `eps`.
    """
    codes = codebook.block(k)
    if frames.shape[1] != codebook.dim:
        raise ShapeError(
            f"relate: frame dim {frames.shape[1]} != codebook dim {codebook.dim}"
        )
    sims = frames @ codes.T
    frame_norms = frames.norm(axis=1, keepdims=True).clip(lo=eps)
    code_norms = codes.norm(axis=1).clip(lo=eps)
    return (sims / (frame_norms * code_norms)).clip(-1.0, 1.0)


def relate(feature: Tensor, codebook: ModalityCodebook, k: int) -> Tensor:
    """Relation vector of one feature frame to block k (length n_codes)."""
    if feature.ndim != 1:
        raise ShapeError(f"relate: expected 1-d feature, got {feature.shape}")
    return relate_frames(feature.reshape(1, feature.shape[0]), codebook, k)[0]


def code_distribution(relation: Tensor, tau: float) -> Tensor:
    """Tempered softmax of a relation vector (rows when 2-d)."""
    return softmax_tempered(relation, tau, axis=-1)


def _check_simplex(dist: Tensor) -> None:
    sums = dist.data.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL) or np.any(dist.data < -SIMPLEX_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise TameError(f"retrieve: distribution off the simplex by {worst:.3e}")


def retrieve_frames(dists: Tensor, codebook: ModalityCodebook, k: int,
                    projection: Projection, train: bool,
                    update_stats: bool = True) -> Tensor:
    """Mix block-k codes by each row distribution, then project.

    dists: (n, n_codes) rows on the probability simplex -> (n, dim).
    """
    _check_simplex(dists)
    mixed = dists @ codebook.block(k)
    return projection(mixed, train, update_stats)


def retrieve(dist: Tensor, codebook: ModalityCodebook, k: int,
             projection: Projection, train: bool = False) -> Tensor:
    """Single-frame retrieval; see `retrieve_frames`."""
    if dist.ndim != 1:
        raise ShapeError(f"retrieve: expected 1-d distribution, got {dist.shape}")
    return retrieve_frames(dist.reshape(1, dist.shape[0]), codebook, k, projection, train)[0]


@dataclass
class TameConfig:
    n_blocks: int = 4
    n_codes: int = 32
    dim: int = 32
    tau: float = 1.0
    shared_projection: bool = True
    per_block_norm: bool = False


class TameModule:
    """Audio and video codebooks plus the shared retrieval projection.

    `estimate_video_from_audio` feeds audio-rate frames through the audio
    codebook and retrieves from the video codebook (the inference path);
    `self_recall_video` reconstructs video frames through the video codebook
    alone (a training-time regularizer). Both return the code distributions
    they produced, aligned on the video-frame axis, so the distribution
    matching loss can consume them directly.

    By default one batch norm serves all blocks and both paths share the
    affine map; `per_block_norm` gives each block its own normalization and
    `shared_projection=False` splits the affine between the two paths.
    """

    def __init__(self, config: TameConfig, rng: np.random.Generator):
        c = config
        if c.n_blocks < 1 or c.n_codes < 1 or c.dim < 1:
            raise TameError("TameModule: n_blocks, n_codes, dim must be positive")
        self.config = c
        self.audio_codes = ModalityCodebook.initialize(c.n_blocks, c.n_codes, c.dim, rng, "audio")
        self.video_codes = ModalityCodebook.initialize(c.n_blocks, c.n_codes, c.dim, rng, "video")
        self.projection = Projection(c.dim, rng)
        self.recall_projection = self.projection if c.shared_projection else Projection(c.dim, rng)
        self.block_norms = [BatchNorm(c.dim) for _ in range(c.n_blocks)] if c.per_block_norm else []
        self.tau = c.tau

    @property
    def n_blocks(self) -> int:
        return self.config.n_blocks

    def params(self) -> list[tuple[str, Tensor]]:
        out = [("audio_codes", self.audio_codes.codes), ("video_codes", self.video_codes.codes)]
        out += [(f"projection.{n}", p) for n, p in self.projection.params()]
        if self.recall_projection is not self.projection:
            out += [(f"recall_projection.{n}", p) for n, p in self.recall_projection.params()]
        for k, bn in enumerate(self.block_norms):
            out += [(f"block_norm{k}.{n}", p) for n, p in bn.params()]
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = [(f"projection.norm.{n}", b) for n, b in self.projection.norm.buffers()]
        if self.recall_projection is not self.projection:
            out += [(f"recall_projection.norm.{n}", b) for n, b in self.recall_projection.norm.buffers()]
        for k, bn in enumerate(self.block_norms):
            out += [(f"block_norm{k}.{n}", b) for n, b in bn.buffers()]
        return out

    def _block_distributions(self, frames: Tensor, codebook: ModalityCodebook,
                             strided: bool) -> list[Tensor]:
        """Per-block code distributions; strided input picks frames K*t + k
        for block k, otherwise every frame is related to every block."""
        k_total = self.n_blocks
        dists = []
        for k in range(k_total):
            block_frames = frames[k::k_total] if strided else frames
            rel = relate_frames(block_frames, codebook, k)
            dists.append(code_distribution(rel, self.tau))
        return dists

    def _project_blocks(self, mixed: list[Tensor], projection: Projection,
                        train: bool, update_stats: bool) -> list[Tensor]:
        """Affine + norm per block list; one shared norm pass unless the
        per-block switch is set (projection is frame-local, so normalizing
        before or after interleaving sees the same batch)."""
        if self.block_norms:
            return [
                self.block_norms[k](projection.affine(m), train, update_stats)
                for k, m in enumerate(mixed)
            ]
        sizes = [m.shape[0] for m in mixed]
        out = projection(concat(mixed, axis=0), train, update_stats)
        bounds = np.cumsum([0] + sizes)
        return [out[bounds[k]:bounds[k + 1]] for k in range(len(mixed))]

    def estimate_video_from_audio(self, audio_frames: Tensor, train: bool,
                                  update_stats: bool = True) -> tuple[Tensor, Tensor]:
        """Estimate video features for every audio frame.

        audio_frames: (n, dim) with n divisible by n_blocks. Returns the
        estimated frames (n, dim), interleaved in audio order, and the audio
        code distributions shaped (n / n_blocks, n_blocks, n_codes).
        """
        n, k_total = audio_frames.shape[0], self.n_blocks
        if n % k_total:
            raise TameError(f"estimate: {n} audio frames not divisible by {k_total} blocks")
        dists = self._block_distributions(audio_frames, self.audio_codes, strided=True)
        mixed = [d @ self.video_codes.block(k) for k, d in enumerate(dists)]
        projected = self._project_blocks(mixed, self.projection, train, update_stats)
        estimates = concat(projected, axis=1).reshape(n, self.config.dim)
        q = concat(dists, axis=1).reshape(n // k_total, k_total, self.config.n_codes)
        return estimates, q

    def self_recall_video(self, video_frames: Tensor, train: bool,
                          update_stats: bool = True) -> tuple[Tensor, Tensor]:
        """Recall every video frame through each block of the video codebook.

        video_frames: (t, dim). Returns recalls shaped (n_blocks, t, dim)
        and the video code distributions shaped (t, n_blocks, n_codes).
        """
        t, k_total = video_frames.shape[0], self.n_blocks
        dists = self._block_distributions(video_frames, self.video_codes, strided=False)
        mixed = [d @ self.video_codes.block(k) for k, d in enumerate(dists)]
        projected = self._project_blocks(mixed, self.recall_projection, train, update_stats)
        recalled = concat([r.reshape(1, t, self.config.dim) for r in projected], axis=0)
        p = concat(dists, axis=1).reshape(t, k_total, self.config.n_codes)
        return recalled, p

    def estimate_sequence(self, audio: FeatureSequence, train: bool = False) -> FeatureSequence:
        """FeatureSequence wrapper around `estimate_video_from_audio`."""
        if audio.rate != "audio":
            raise TameError("estimate_sequence: input must be at audio rate")
        est, _ = self.estimate_video_from_audio(audio.frames, train)
        return FeatureSequence(est, "audio")
