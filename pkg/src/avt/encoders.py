"""Toy modality encoders: patch/tubelet embedding plus pre-norm transformer blocks.

Parameters live in flat ``{name: Tensor}`` dictionaries whose keys are the
checkpoint keys, e.g. ``audio_encoder.block0.attn.wq``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    ConfigError,
    ShapeError,
    Tensor,
    concat,
    gelu,
    layer_norm,
    linear,
    multi_head_self_attention,
)

Params = dict[str, Tensor]

LN_EPS = 1e-5


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples with everything beyond two standard deviations redrawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass
class SpectrogramInput:
    values: np.ndarray  # (time_frames, freq_bins)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"spectrogram must be 2-D (time, freq), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def time_frames(self) -> int:
        return self.values.shape[0]

    @property
    def freq_bins(self) -> int:
        return self.values.shape[1]


@dataclass
class VideoClipInput:
    values: np.ndarray  # (frames, height, width, channels)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise ShapeError(f"video clip must be 4-D (frames, H, W, C), got {self.values.shape}")


@dataclass
class TokenSequence:
    """A batch of token sequences; slot 0 of axis 1 is the CLS token."""

    data: Tensor  # (batch, 1 + count, dim)

    @property
    def cls(self) -> Tensor:
        return self.data[:, 0]

    @property
    def tokens(self) -> Tensor:
        return self.data[:, 1:]

    @property
    def count(self) -> int:
        return self.data.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def batch(self) -> int:
        return self.data.shape[0]


# ---------------------------------------------------------------------------
# transformer block
# ---------------------------------------------------------------------------


def init_block(rng: np.random.Generator, prefix: str, dim: int, mlp_ratio: int = 4, std: float = 0.02) -> Params:
    hidden = dim * mlp_ratio
    p = {
        "ln1.g": np.ones(dim),
        "ln1.b": np.zeros(dim),
        "ln2.g": np.ones(dim),
        "ln2.b": np.zeros(dim),
    }
    for name in ("wq", "wk", "wv", "wo"):
        p[f"attn.{name}"] = trunc_normal(rng, (dim, dim), std)
        p[f"attn.b{name[1]}"] = np.zeros(dim)
    p["mlp.w1"] = trunc_normal(rng, (dim, hidden), std)
    p["mlp.b1"] = np.zeros(hidden)
    p["mlp.w2"] = trunc_normal(rng, (hidden, dim), std)
    p["mlp.b2"] = np.zeros(dim)
    return {f"{prefix}.{k}": _param(v) for k, v in p.items()}


def attention(params: Params, prefix: str, x: Tensor, heads: int) -> Tensor:
    a = f"{prefix}.attn."
    return multi_head_self_attention(
        x,
        params[a + "wq"], params[a + "bq"],
        params[a + "wk"], params[a + "bk"],
        params[a + "wv"], params[a + "bv"],
        params[a + "wo"], params[a + "bo"],
        heads,
    )


def transformer_block(params: Params, prefix: str, x: Tensor, heads: int) -> Tensor:
    """Pre-norm block: ``x + MSA(LN(x))`` then ``+ MLP(LN(.))``."""
    p = lambda k: params[f"{prefix}.{k}"]  # noqa: E731
    x = x + attention(params, prefix, layer_norm(x, p("ln1.g"), p("ln1.b"), LN_EPS), heads)
    h = gelu(linear(layer_norm(x, p("ln2.g"), p("ln2.b"), LN_EPS), p("mlp.w1"), p("mlp.b1")))
    return x + linear(h, p("mlp.w2"), p("mlp.b2"))


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------


def audio_token_count(time_frames: int, freq_bins: int, patch: tuple[int, int]) -> int:
    pt, pf = patch
    if time_frames % pt or freq_bins % pf:
        raise ShapeError(f"spectrogram {time_frames}x{freq_bins} not divisible by patch {pt}x{pf}")
    return (time_frames // pt) * (freq_bins // pf)


def video_token_count(shape: tuple[int, int, int], tubelet: tuple[int, int, int]) -> int:
    if any(s % t for s, t in zip(shape, tubelet)):
        raise ShapeError(f"video {shape} not divisible by tubelet {tubelet}")
    return int(np.prod([s // t for s, t in zip(shape, tubelet)]))


def patchify_audio(x: Tensor, patch: tuple[int, int]) -> Tensor:
    """(B, T, F) -> (B, M, pt*pf), patches ordered time-major."""
    B, T, F = x.shape
    pt, pf = patch
    audio_token_count(T, F, patch)
    x = x.reshape(B, T // pt, pt, F // pf, pf).transpose(0, 1, 3, 2, 4)
    return x.reshape(B, (T // pt) * (F // pf), pt * pf)


def unpatchify_audio(x: Tensor, shape: tuple[int, int], patch: tuple[int, int]) -> Tensor:
    """Inverse of :func:`patchify_audio`."""
    B = x.shape[0]
    T, F = shape
    pt, pf = patch
    x = x.reshape(B, T // pt, F // pf, pt, pf).transpose(0, 1, 3, 2, 4)
    return x.reshape(B, T, F)


def patchify_video(x: Tensor, tubelet: tuple[int, int, int]) -> Tensor:
    """(B, T, H, W, C) -> (B, N, t*h*w*C), tubelets ordered (time, row, col)."""
    B, T, H, W, C = x.shape
    t, h, w = tubelet
    video_token_count((T, H, W), tubelet)
    x = x.reshape(B, T // t, t, H // h, h, W // w, w, C).transpose(0, 1, 3, 5, 2, 4, 6, 7)
    return x.reshape(B, (T // t) * (H // h) * (W // w), t * h * w * C)


def unpatchify_video(x: Tensor, shape: tuple[int, int, int, int], tubelet: tuple[int, int, int]) -> Tensor:
    B = x.shape[0]
    T, H, W, C = shape
    t, h, w = tubelet
    x = x.reshape(B, T // t, H // h, W // w, t, h, w, C).transpose(0, 1, 4, 2, 5, 3, 6, 7)
    return x.reshape(B, T, H, W, C)


def init_embedding(rng: np.random.Generator, prefix: str, patch_size: int, count: int, dim: int, std: float = 0.02) -> Params:
    p = {
        "patch.w": trunc_normal(rng, (patch_size, dim), std),
        "patch.b": np.zeros(dim),
        "pos": trunc_normal(rng, (count, dim), std),
        "cls": trunc_normal(rng, (1, 1, dim), std),
    }
    return {f"{prefix}.{k}": _param(v) for k, v in p.items()}


def _embed(params: Params, prefix: str, patches: Tensor) -> TokenSequence:
    B = patches.shape[0]
    tokens = linear(patches, params[f"{prefix}.patch.w"], params[f"{prefix}.patch.b"]) + params[f"{prefix}.pos"]
    cls = params[f"{prefix}.cls"] + np.zeros((B, 1, tokens.shape[-1]))
    return TokenSequence(concat([cls, tokens], axis=1))


def _batched(x, ndim: int) -> Tensor:
    if isinstance(x, (SpectrogramInput, VideoClipInput)):
        x = x.values
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    if x.ndim == ndim - 1:
        x = x.reshape(1, *x.shape)
    if x.ndim != ndim:
        raise ShapeError(f"expected {ndim - 1}-D sample or {ndim}-D batch, got shape {x.shape}")
    return x


def embed_audio(params: Params, a, patch: tuple[int, int], prefix: str = "audio_encoder") -> TokenSequence:
    """Embed a spectrogram (or batch of them) into ``1 + M`` tokens."""
    return _embed(params, f"{prefix}.embed", patchify_audio(_batched(a, 3), patch))


def embed_video(params: Params, v, tubelet: tuple[int, int, int], prefix: str = "video_encoder") -> TokenSequence:
    """Embed a clip (or batch of clips) into ``1 + N`` tubelet tokens."""
    return _embed(params, f"{prefix}.embed", patchify_video(_batched(v, 5), tubelet))


def encode(params: Params, t: TokenSequence, depth: int, heads: int, prefix: str) -> TokenSequence:
    if depth < 0:
        raise ConfigError("encoder depth must be >= 0")
    x = t.data
    for i in range(depth):
        x = transformer_block(params, f"{prefix}.block{i}", x, heads)
    return TokenSequence(x)


def init_encoder(
    rng: np.random.Generator,
    prefix: str,
    patch_size: int,
    count: int,
    dim: int,
    depth: int,
    mlp_ratio: int = 4,
    std: float = 0.02,
) -> Params:
    params = init_embedding(rng, f"{prefix}.embed", patch_size, count, dim, std)
    for i in range(depth):
        params.update(init_block(rng, f"{prefix}.block{i}", dim, mlp_ratio, std))
    return params
