"""Input masking for the reconstruction objectives and the patch decoder.

Two kinds of mask are supported. ``random_mask`` zeroes a uniformly chosen
fraction of non-CLS tokens after patch embedding. ``segment_mask`` zeroes
whole detected audio activity segments, every frequency bin of every frame,
directly on the spectrogram.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .audioseg import SegmentMap
from .encoders import TokenSequence
from .numerics import ShapeError, Tensor, linear


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class MaskSpec:
    modality: str  # "audio" | "video"
    kind: str      # "random" | "segment"
    indices: list[int]
    ratio: float
    seed: int | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def random_token_indices(count: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    k = round_half_up(ratio * count)
    return np.sort(rng.choice(count, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)


def random_mask(
    tokens: TokenSequence, ratio: float, seed=None, modality: str = "video"
) -> tuple[TokenSequence, list[MaskSpec]]:
    """Zero ``round(ratio * count)`` non-CLS tokens per sample.

    Returns the masked sequence and one :class:`MaskSpec` per sample; token
    indices in each MaskSpec count from 0 at the first non-CLS token.
    """
    rng = _rng(seed)
    B, n1, _ = tokens.data.shape
    keep = np.ones((B, n1, 1))
    specs = []
    for i in range(B):
        idx = random_token_indices(n1 - 1, ratio, rng)
        keep[i, idx + 1] = 0.0
        specs.append(MaskSpec(modality, "random", idx.tolist(), ratio, seed if isinstance(seed, int) else None))
    if ratio == 0:
        return tokens, specs
    return TokenSequence(tokens.data * keep), specs


def token_mask_to_input(specs: list[MaskSpec], count: int, patch_volume: int) -> np.ndarray:
    """Per-token 0/1 mask of shape (batch, count, patch_volume) for the decoder target."""
    out = np.zeros((len(specs), count, patch_volume))
    for i, spec in enumerate(specs):
        out[i, spec.indices] = 1.0
    return out


def segments_to_mask(segmap: SegmentMap, chosen, freq_bins: int) -> np.ndarray:
    mask = np.zeros((segmap.time_frames, freq_bins))
    for s in chosen:
        start, end = segmap.segments[s]
        mask[start:end] = 1.0
    return mask


def segment_mask(spec, segmap: SegmentMap, ratio: float, seed=None) -> tuple[np.ndarray, MaskSpec, np.ndarray]:
    """Zero ``max(1, round(ratio * segments))`` whole segments of one spectrogram.

    Returns ``(masked values, MaskSpec, 0/1 mask)``.
    """
    values = np.asarray(getattr(spec, "values", spec), dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"expected a (time, freq) spectrogram, got {values.shape}")
    if segmap.time_frames != values.shape[0]:
        raise ShapeError(f"segment map covers {segmap.time_frames} frames, spectrogram has {values.shape[0]}")
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    rng = _rng(seed)
    count = len(segmap)
    k = min(count, max(1, round_half_up(ratio * count)))
    chosen = np.sort(rng.choice(count, size=k, replace=False))
    mask = segments_to_mask(segmap, chosen, values.shape[1])
    masked = np.where(mask > 0, 0.0, values)
    return masked, MaskSpec("audio", "segment", chosen.tolist(), ratio, seed if isinstance(seed, int) else None), mask


# ---------------------------------------------------------------------------
# decoder
# ---------------------------------------------------------------------------


def reconstruct(tokens: Tensor, weight: Tensor, bias: Tensor, grid: tuple[int, ...], patch: tuple[int, ...], channels: int = 1) -> Tensor:
    """Transposed convolution with stride equal to its kernel, mapping tokens back to input space.

    ``tokens`` is (batch, prod(grid), dim) in row-major grid order; ``weight``
    is (dim, prod(patch) * channels). Returns (batch, *grid*patch[, channels]).
    Because stride equals kernel size the output windows do not overlap, so
    each token's contribution is its own patch.
    """
    B, n, _ = tokens.shape
    if n != int(np.prod(grid)):
        raise ShapeError(f"{n} tokens do not fill a grid of {grid}")
    if len(grid) != len(patch):
        raise ShapeError(f"grid {grid} and patch {patch} ranks differ")
    pixels = linear(tokens, weight, bias)  # (B, n, prod(patch)*C)
    d = len(grid)
    x = pixels.reshape(B, *grid, *patch, channels)
    # interleave grid and patch axes: (B, g0, p0, g1, p1, ..., C)
    order = [0]
    for i in range(d):
        order += [1 + i, 1 + d + i]
    order.append(1 + 2 * d)
    x = x.transpose(order)
    full = tuple(g * p for g, p in zip(grid, patch))
    out = x.reshape(B, *full, channels)
    return out if channels > 1 or d == 3 else out.reshape(B, *full)
