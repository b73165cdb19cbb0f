"""Audio-video bottleneck fusion.

Each block runs two pre-norm transformer passes. The first attends over the
video tokens joined with the ``L`` shared bottleneck tokens; the updated
bottleneck tokens are then joined with the audio tokens for the second pass.
Video and audio tokens never attend to each other directly, so cross-modal
information only travels through the bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import Params, TokenSequence, init_block, transformer_block, trunc_normal
from .numerics import ConfigError, ShapeError, Tensor, concat


@dataclass
class BottleneckState:
    tokens: Tensor  # (batch, L, dim)
    per_block_snapshots: list[Tensor] = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.tokens.shape[-2]

    def averaged(self) -> Tensor:
        """Mean of the per-block snapshots (diagnostic readout only)."""
        if not self.per_block_snapshots:
            return self.tokens
        total = self.per_block_snapshots[0]
        for snap in self.per_block_snapshots[1:]:
            total = total + snap
        return total * (1.0 / len(self.per_block_snapshots))


@dataclass
class FusionOutput:
    video: TokenSequence
    audio: TokenSequence
    bottleneck: BottleneckState


def init_bottleneck(L: int, dim: int, seed: int | np.random.Generator = 0, std: float = 0.02) -> Tensor:
    """Learned initial bottleneck tokens, shape (L, dim)."""
    if L < 1:
        raise ConfigError("bottleneck needs at least one token")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Tensor(trunc_normal(rng, (L, dim), std), requires_grad=True)


def init_fusion(rng: np.random.Generator, K: int, L: int, dim: int, mlp_ratio: int = 4, std: float = 0.02) -> Params:
    params: Params = {"fusion.bottleneck": init_bottleneck(L, dim, rng, std)}
    for k in range(K):
        params.update(init_block(rng, f"fusion.block{k}.video", dim, mlp_ratio, std))
        params.update(init_block(rng, f"fusion.block{k}.audio", dim, mlp_ratio, std))
    return params


def _check(video: TokenSequence, audio: TokenSequence, bottleneck: Tensor) -> None:
    if not (video.dim == audio.dim == bottleneck.shape[-1]):
        raise ShapeError(
            f"embedding dims differ: video {video.dim}, audio {audio.dim}, bottleneck {bottleneck.shape[-1]}"
        )
    if video.batch != audio.batch:
        raise ShapeError(f"batch sizes differ: video {video.batch}, audio {audio.batch}")
    L = bottleneck.shape[-2]
    if L >= min(video.count, audio.count):
        raise ConfigError(f"bottleneck size L={L} must be < min(M={audio.count}, N={video.count})")


def video_pass(params: Params, k: int, video: TokenSequence, bottleneck: Tensor, heads: int) -> tuple[TokenSequence, Tensor]:
    """First half of a block: joint attention over ``[video CLS, video tokens, bottleneck]``."""
    n = video.count + 1
    joint = concat([video.data, bottleneck], axis=1) if bottleneck.shape[1] else video.data
    out = transformer_block(params, f"fusion.block{k}.video", joint, heads)
    return TokenSequence(out[:, :n]), out[:, n:]


def audio_pass(params: Params, k: int, audio: TokenSequence, bottleneck: Tensor, heads: int) -> tuple[TokenSequence, Tensor]:
    """Second half of a block: joint attention over ``[bottleneck, audio CLS, audio tokens]``."""
    L = bottleneck.shape[1]
    joint = concat([bottleneck, audio.data], axis=1) if L else audio.data
    out = transformer_block(params, f"fusion.block{k}.audio", joint, heads)
    return TokenSequence(out[:, L:]), out[:, :L]


def fusion_block(
    params: Params,
    k: int,
    video: TokenSequence,
    audio: TokenSequence,
    bottleneck: BottleneckState | Tensor,
    heads: int,
) -> FusionOutput:
    tokens = bottleneck.tokens if isinstance(bottleneck, BottleneckState) else bottleneck
    if tokens.shape[1]:
        _check(video, audio, tokens)
    video, tokens = video_pass(params, k, video, tokens, heads)
    audio, tokens = audio_pass(params, k, audio, tokens, heads)
    snaps = list(bottleneck.per_block_snapshots) if isinstance(bottleneck, BottleneckState) else []
    return FusionOutput(video, audio, BottleneckState(tokens, snaps + [tokens]))


def broadcast_bottleneck(init: Tensor, batch: int) -> Tensor:
    L, dim = init.shape[-2:]
    return init.reshape(1, L, dim) + np.zeros((batch, L, dim))


def fuse(
    params: Params,
    video: TokenSequence,
    audio: TokenSequence,
    K: int,
    heads: int,
    init_bottleneck: Tensor | None = None,
) -> FusionOutput:
    """Stack ``K`` fusion blocks, carrying video, audio and bottleneck tokens forward."""
    if K < 1:
        raise ConfigError("fusion needs K >= 1 blocks")
    init = params["fusion.bottleneck"] if init_bottleneck is None else init_bottleneck
    state = BottleneckState(broadcast_bottleneck(init, video.batch))
    _check(video, audio, state.tokens)
    out = FusionOutput(video, audio, state)
    for k in range(K):
        out = fusion_block(params, k, out.video, out.audio, out.bottleneck, heads)
    return out
