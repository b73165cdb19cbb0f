"""Training objectives: supervised cross-entropy, audio-video contrastive and
matching losses, masked reconstruction, and their weighted combination."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import ConfigError, ShapeError, Tensor, concat, linear, log_softmax, softmax, softplus


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5   # contrastive
    lambda2: float = 0.1   # matching
    lambda3: float = 0.01  # masked reconstruction
    tau: float = 0.07

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass
class BatchPairing:
    audio_cls: Tensor  # (n, dim)
    video_cls: Tensor  # (n, dim)

    @property
    def y_av(self) -> np.ndarray:
        return np.eye(self.audio_cls.shape[0])


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy_cls(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the one-hot ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.float64)
    if logits.ndim != 2 or labels.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} must both be (n, C)")
    if logits.shape[1] < 2:
        raise ConfigError("need at least two classes")
    if not (np.all((labels == 0) | (labels == 1)) and np.all(labels.sum(axis=1) == 1)):
        raise ValueError("labels must be one-hot rows")
    return -(log_softmax(logits, axis=1) * labels).sum() * (1.0 / logits.shape[0])


def projection(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    return linear(x, w, b)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    return x / ((x * x).sum(axis=-1, keepdims=True) + eps) ** 0.5


def similarity(audio_emb: Tensor, video_emb: Tensor) -> Tensor:
    """``s[i, j] = audio_emb[i] . video_emb[j]``."""
    return audio_emb @ video_emb.transpose()


def avc_from_similarity(sim: Tensor, tau: float, symmetric: bool = True) -> Tensor:
    """In-batch InfoNCE over a similarity matrix with diagonal positives."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    n = sim.shape[0]
    logits = sim * (1.0 / tau)
    diag = np.eye(n)
    a2v = -(log_softmax(logits, axis=1) * diag).sum() * (1.0 / n)
    if not symmetric:
        return a2v
    v2a = -(log_softmax(logits, axis=0) * diag).sum() * (1.0 / n)
    return (a2v + v2a) * 0.5


def avc_loss(
    pairing: BatchPairing,
    g_a: tuple[Tensor, Tensor | None],
    g_v: tuple[Tensor, Tensor | None],
    tau: float = 0.07,
    symmetric: bool = True,
    normalize: bool = False,
) -> Tensor:
    """Audio-video contrastive loss on pre-fusion CLS embeddings.

    ``g_a`` and ``g_v`` are ``(weight, bias)`` pairs of the linear
    projections into the shared contrastive space. With ``normalize`` the
    projections are scaled to unit length, so similarities are cosines.
    """
    za = projection(pairing.audio_cls, *g_a)
    zv = projection(pairing.video_cls, *g_v)
    if normalize:
        za, zv = l2_normalize(za), l2_normalize(zv)
    return avc_from_similarity(similarity(za, zv), tau, symmetric)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """A uniformly random cyclic permutation of ``range(n)``; no fixed points."""
    if n < 2:
        raise ConfigError("a derangement needs at least two elements")
    perm = np.arange(n)
    # Sattolo's algorithm
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def avm_logits(video_cls: Tensor, audio_cls: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Matching logit from ``[video CLS, audio CLS]``; shape (pairs,)."""
    return linear(concat([video_cls, audio_cls], axis=1), w, b).reshape(-1)


def binary_cross_entropy_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    targets = np.asarray(targets, dtype=np.float64)
    # -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
    return (softplus(logits) - logits * targets).mean()


def avm_loss(video_cls: Tensor, audio_cls: Tensor, y_av: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """Binary matching loss over fused pairs labelled 1 (same sample) or 0."""
    y_av = np.asarray(y_av, dtype=np.float64).reshape(-1)
    if not (np.any(y_av == 1) and np.any(y_av == 0)):
        raise ConfigError("matching loss needs at least one positive and one negative pair")
    return binary_cross_entropy_with_logits(avm_logits(video_cls, audio_cls, w, b), y_av)


def masked_mse(original: np.ndarray, recon: Tensor, mask: np.ndarray) -> Tensor:
    """Per-sample MSE over masked elements, averaged over the batch.

    ``mask`` is 1 where the input was hidden. Samples with an empty mask
    contribute zero.
    """
    original = np.asarray(original, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if original.shape != recon.shape or mask.shape != recon.shape:
        raise ShapeError(f"shapes differ: original {original.shape}, recon {recon.shape}, mask {mask.shape}")
    n = recon.shape[0]
    axes = tuple(range(1, recon.ndim))
    counts = mask.sum(axis=axes)
    weights = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    weights = weights.reshape((n,) + (1,) * len(axes))
    diff = recon - original
    return (diff * diff * (mask * weights)).sum() * (1.0 / n)


def masked_reconstruction_loss(
    originals: tuple[np.ndarray, np.ndarray],
    reconstructions: tuple[Tensor, Tensor],
    masks: tuple[np.ndarray, np.ndarray],
) -> Tensor:
    """Video term plus audio term, each a masked MSE against the raw input."""
    (v, a), (v_hat, a_hat), (mv, ma) = originals, reconstructions, masks
    if not (np.any(mv) or np.any(ma)):
        warnings.warn("masked reconstruction loss called with empty masks; returning 0", stacklevel=2)
        return (v_hat * 0.0).sum() + (a_hat * 0.0).sum()
    return masked_mse(v, v_hat, mv) + masked_mse(a, a_hat, ma)


def cls_av_loss(video_cls: Tensor, audio_cls: Tensor, labels: np.ndarray, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Multimodal classification from ``[video CLS, audio CLS]``; returns (loss, probabilities)."""
    logits = linear(concat([video_cls, audio_cls], axis=1), w, b)
    return cross_entropy_cls(logits, labels), softmax(logits, axis=1)


def hybrid_loss(parts: dict[str, Tensor | float], weights: LossWeights) -> Tensor | float:
    """``cls_av + lambda1 * avc + lambda2 * avm + lambda3 * masegmv``; absent parts count as 0."""
    total = parts["cls_av"]
    for key, lam in (("avc", weights.lambda1), ("avm", weights.lambda2), ("masegmv", weights.lambda3)):
        part = parts.get(key)
        if part is None or lam == 0:
            continue
        total = total + part * lam
    return total
