"""Model assembly: encoders, fusion, heads and decoders, plus the forward
pass that produces every loss term for one batch."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..audioseg import SegmentConfig, SegmentMap, detect_segments
from ..encoders import (
    Params,
    TokenSequence,
    embed_audio,
    embed_video,
    encode,
    init_encoder,
    trunc_normal,
    unpatchify_audio,
    unpatchify_video,
)
from ..fusion import fuse, init_fusion
from ..losses import (
    BatchPairing,
    LossWeights,
    avc_loss,
    avm_loss,
    cls_av_loss,
    cross_entropy_cls,
    derangement,
    hybrid_loss,
    masked_reconstruction_loss,
    one_hot,
)
from ..masking import random_mask, reconstruct, segment_mask, token_mask_to_input
from ..numerics import Tensor, concat, linear, no_grad, softmax
from .config import ExperimentConfig, Variant


def _linear_params(rng, prefix: str, fan_in: int, fan_out: int, std: float) -> Params:
    return {
        f"{prefix}.w": Tensor(trunc_normal(rng, (fan_in, fan_out), std), requires_grad=True),
        f"{prefix}.b": Tensor(np.zeros(fan_out), requires_grad=True),
    }


def init_model(cfg: ExperimentConfig, seed: int | None = None) -> Params:
    """Every parameter of the full model, in a fixed creation order."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 0])
    std, d = cfg.init_std, cfg.dim
    pt, pf = cfg.audio_patch
    t, h, w = cfg.video_tubelet
    video_vol = t * h * w * cfg.video_shape[3]
    params: Params = {}
    params.update(init_encoder(rng, "audio_encoder", pt * pf, cfg.audio_tokens, d, cfg.depth, cfg.mlp_ratio, std))
    params.update(init_encoder(rng, "video_encoder", video_vol, cfg.video_tokens, d, cfg.depth, cfg.mlp_ratio, std))
    params.update(init_fusion(rng, cfg.K, cfg.L, d, cfg.mlp_ratio, std))
    params.update(_linear_params(rng, "heads.cls_av", 2 * d, cfg.num_classes, std))
    params.update(_linear_params(rng, "heads.avm", 2 * d, 1, std))
    params.update(_linear_params(rng, "heads.audio", d, cfg.num_classes, std))
    params.update(_linear_params(rng, "heads.video", d, cfg.num_classes, std))
    params.update(_linear_params(rng, "proj.g_a", d, cfg.proj_dim, std))
    params.update(_linear_params(rng, "proj.g_v", d, cfg.proj_dim, std))
    params.update(_linear_params(rng, "decoder.audio", d, pt * pf, std))
    params.update(_linear_params(rng, "decoder.video", d, video_vol, std))
    for name, p in params.items():
        p.name = name
    return params


@dataclass
class Batch:
    video: np.ndarray
    audio: np.ndarray
    labels: np.ndarray
    segments: list[SegmentMap] | None = None

    def __len__(self) -> int:
        return len(self.labels)


def segment_all(audio: np.ndarray, cfg: ExperimentConfig) -> list[SegmentMap]:
    seg_cfg = SegmentConfig(cfg.sg_window, cfg.sg_order, cfg.sg_window)
    return [detect_segments(a, cfg.num_segments, seg_cfg) for a in audio]


@dataclass
class ForwardResult:
    parts: dict[str, Tensor] = field(default_factory=dict)
    total: Tensor | None = None
    probs: Tensor | None = None


def _encode_audio(params, cfg, audio) -> TokenSequence:
    return embed_audio(params, audio, tuple(cfg.audio_patch))


def _encode_video(params, cfg, video) -> TokenSequence:
    return embed_video(params, video, tuple(cfg.video_tubelet))


def unimodal_forward(params: Params, cfg: ExperimentConfig, modality: str, batch: Batch) -> ForwardResult:
    if modality == "audio":
        tokens = encode(params, _encode_audio(params, cfg, batch.audio), cfg.depth, cfg.heads, "audio_encoder")
    else:
        tokens = encode(params, _encode_video(params, cfg, batch.video), cfg.depth, cfg.heads, "video_encoder")
    logits = linear(tokens.cls, params[f"heads.{modality}.w"], params[f"heads.{modality}.b"])
    loss = cross_entropy_cls(logits, one_hot(batch.labels, cfg.num_classes))
    return ForwardResult({"cls_av": loss}, loss, softmax(logits, axis=1))


def _apply_masks(params, cfg, mask_kind: str, batch: Batch, rng):
    """Masked token sequences plus input-space 0/1 masks for the reconstruction targets."""
    B = len(batch)
    video_tokens = _encode_video(params, cfg, batch.video)
    if mask_kind == "none":
        return video_tokens, _encode_audio(params, cfg, batch.audio), None, None

    T, H, W, C = cfg.video_shape
    t, h, w = cfg.video_tubelet
    video_tokens, vspecs = random_mask(video_tokens, cfg.mask_ratio, rng, "video")
    per_token = token_mask_to_input(vspecs, cfg.video_tokens, t * h * w * C)
    mask_v = unpatchify_video(Tensor(per_token), (T, H, W, C), (t, h, w)).data

    pt, pf = cfg.audio_patch
    if mask_kind == "segment":
        segs = batch.segments if batch.segments is not None else segment_all(batch.audio, cfg)
        masked = np.empty_like(batch.audio)
        mask_a = np.empty_like(batch.audio)
        for i in range(B):
            masked[i], _, mask_a[i] = segment_mask(batch.audio[i], segs[i], cfg.mask_ratio, rng)
        audio_tokens = _encode_audio(params, cfg, masked)
    else:
        audio_tokens, aspecs = random_mask(_encode_audio(params, cfg, batch.audio), cfg.mask_ratio, rng, "audio")
        per_token = token_mask_to_input(aspecs, cfg.audio_tokens, pt * pf)
        mask_a = unpatchify_audio(Tensor(per_token), tuple(cfg.audio_shape), (pt, pf)).data
    return video_tokens, audio_tokens, mask_v, mask_a


def decode(params: Params, cfg: ExperimentConfig, video: TokenSequence, audio: TokenSequence) -> tuple[Tensor, Tensor]:
    T, H, W, C = cfg.video_shape
    t, h, w = cfg.video_tubelet
    pt, pf = cfg.audio_patch
    AT, AF = cfg.audio_shape
    v_hat = reconstruct(video.tokens, params["decoder.video.w"], params["decoder.video.b"],
                        (T // t, H // h, W // w), (t, h, w), C)
    a_hat = reconstruct(audio.tokens, params["decoder.audio.w"], params["decoder.audio.b"],
                        (AT // pt, AF // pf), (pt, pf), 1)
    return v_hat, a_hat


def multimodal_forward(params: Params, cfg: ExperimentConfig, variant: Variant, batch: Batch, rng: np.random.Generator) -> ForwardResult:
    B = len(batch)
    weights = LossWeights(cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.tau)
    recon = variant.use_recon and cfg.lambda3 > 0
    vt, at, mask_v, mask_a = _apply_masks(params, cfg, variant.mask_kind if recon else "none", batch, rng)
    ev = encode(params, vt, cfg.depth, cfg.heads, "video_encoder")
    ea = encode(params, at, cfg.depth, cfg.heads, "audio_encoder")
    parts: dict[str, Tensor] = {}

    # a term with zero weight is neither computed nor logged
    if variant.use_avc and cfg.lambda1 > 0:
        parts["avc"] = avc_loss(
            BatchPairing(ea.cls, ev.cls),
            (params["proj.g_a.w"], params["proj.g_a.b"]),
            (params["proj.g_v.w"], params["proj.g_v.b"]),
            cfg.tau,
            cfg.avc_symmetric,
            cfg.avc_normalize,
        )

    fused = fuse(params, ev, ea, cfg.K, cfg.heads)
    parts["cls_av"], probs = cls_av_loss(
        fused.video.cls, fused.audio.cls, one_hot(batch.labels, cfg.num_classes),
        params["heads.cls_av.w"], params["heads.cls_av.b"],
    )

    if variant.use_avm and cfg.lambda2 > 0:
        perm = derangement(B, rng)
        neg = fuse(params, ev, TokenSequence(ea.data[perm]), cfg.K, cfg.heads)
        y = np.concatenate([np.ones(B), np.zeros(B)])
        parts["avm"] = avm_loss(
            concat([fused.video.cls, neg.video.cls], axis=0),
            concat([fused.audio.cls, neg.audio.cls], axis=0),
            y, params["heads.avm.w"], params["heads.avm.b"],
        )

    if recon:
        v_hat, a_hat = decode(params, cfg, fused.video, fused.audio)
        parts["masegmv"] = masked_reconstruction_loss((batch.video, batch.audio), (v_hat, a_hat), (mask_v, mask_a))

    return ForwardResult(parts, hybrid_loss(parts, weights), probs)


def forward(params: Params, cfg: ExperimentConfig, variant: Variant, batch: Batch, rng: np.random.Generator) -> ForwardResult:
    if variant.modalities in ("audio", "video"):
        return unimodal_forward(params, cfg, variant.modalities, batch)
    return multimodal_forward(params, cfg, variant, batch, rng)


def predict(params: Params, cfg: ExperimentConfig, variant: Variant, video: np.ndarray, audio: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Class probabilities without any masking."""
    out = []
    with no_grad():
        for s in range(0, len(video), chunk):
            v = np.asarray(video[s : s + chunk])
            a = np.asarray(audio[s : s + chunk])
            if variant.modalities == "audio":
                tok = encode(params, _encode_audio(params, cfg, a), cfg.depth, cfg.heads, "audio_encoder")
                logits = linear(tok.cls, params["heads.audio.w"], params["heads.audio.b"])
            elif variant.modalities == "video":
                tok = encode(params, _encode_video(params, cfg, v), cfg.depth, cfg.heads, "video_encoder")
                logits = linear(tok.cls, params["heads.video.w"], params["heads.video.b"])
            else:
                ev = encode(params, _encode_video(params, cfg, v), cfg.depth, cfg.heads, "video_encoder")
                ea = encode(params, _encode_audio(params, cfg, a), cfg.depth, cfg.heads, "audio_encoder")
                fused = fuse(params, ev, ea, cfg.K, cfg.heads)
                logits = linear(concat([fused.video.cls, fused.audio.cls], axis=1),
                                params["heads.cls_av.w"], params["heads.cls_av.b"])
            out.append(softmax(logits, axis=1).data)
    return np.concatenate(out, axis=0)


def predict_avg(audio_probs: np.ndarray, video_probs: np.ndarray) -> np.ndarray:
    """Late fusion baseline: elementwise mean of the unimodal probabilities."""
    return 0.5 * (np.asarray(audio_probs) + np.asarray(video_probs))
