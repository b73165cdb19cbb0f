"""Finite-difference audit of every training objective through the full model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import GradCheckReport, grad_check
from .config import ExperimentConfig, Variant
from .data import gen_xor_dataset
from .model import Batch, forward, init_model

# which forward to run and which term to differentiate
AUDIT_LOSSES = {
    "ce": (Variant("video_only", modalities="video"), "cls_av"),
    "cls": (Variant("avbottleneck"), "cls_av"),
    "avc": (Variant("+avc", use_avc=True), "avc"),
    "avm": (Variant("+avm", use_avm=True), "avm"),
    "mav": (Variant("+mav", use_recon=True, mask_kind="random"), "masegmv"),
    "mask": (Variant("+masegmv", use_recon=True, mask_kind="segment"), "masegmv"),
    "hybrid": (Variant("+masegmv", use_avc=True, use_avm=True, use_recon=True, mask_kind="segment"), None),
}


def audit_config(**overrides) -> ExperimentConfig:
    """A model small enough to probe by central differences, with K=2 fusion blocks."""
    base = dict(
        dim=8, heads=2, depth=1, K=2, L=2, proj_dim=8, init_std=0.5,
        audio_shape=[16, 8], audio_patch=[4, 4], video_shape=[2, 8, 8, 1], video_tubelet=[2, 4, 4],
        num_segments=4, mask_ratio=0.3, batch_size=4, n_samples=4,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class AuditResult:
    loss: str
    seed: int
    report: GradCheckReport
    worst_param: str | None

    @property
    def passed(self) -> bool:
        return self.report.passed


def audit_loss(loss: str, seed: int = 0, cfg: ExperimentConfig | None = None, h: float = 1e-5,
               tol: float = 1e-4, max_coords: int = 3) -> AuditResult:
    """Check analytic against numeric gradients of one loss, for every parameter tensor."""
    if loss not in AUDIT_LOSSES:
        raise ValueError(f"unknown loss {loss!r}; choose from {', '.join(AUDIT_LOSSES)}")
    cfg = cfg or audit_config()
    variant, part = AUDIT_LOSSES[loss]
    data = gen_xor_dataset(cfg.batch_size, tuple(cfg.audio_shape), tuple(cfg.video_shape), cfg.noise, seed)
    batch = Batch(data.video, data.audio, data.labels)
    params = init_model(cfg, seed)
    keys = list(params)

    def f(*ts):
        # same mask draw on every evaluation
        res = forward(dict(zip(keys, ts)), cfg, variant, batch, np.random.default_rng([seed, 99]))
        return res.total if part is None else res.parts[part]

    report = grad_check(f, [params[k] for k in keys], h=h, tol=tol, max_coords=max_coords,
                        rng=np.random.default_rng([seed, 98]))
    worst = keys[report.worst[0]] if report.worst is not None else None
    return AuditResult(loss, seed, report, worst)
