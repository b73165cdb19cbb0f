from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

from ..numerics import ConfigError

SEED_ENV = "AVT_SEED"

ABLATIONS = ("audio_only", "video_only", "avg", "avbottleneck", "+avc", "+avm", "+mav", "+masegmv")


@dataclass(frozen=True)
class Variant:
    """What one ablation row trains: which inputs, which loss terms, which masking."""

    name: str
    modalities: str = "both"  # "audio" | "video" | "both"
    use_avc: bool = False
    use_avm: bool = False
    use_recon: bool = False
    mask_kind: str = "none"  # "none" | "random" | "segment"


VARIANTS = {
    "audio_only": Variant("audio_only", modalities="audio"),
    "video_only": Variant("video_only", modalities="video"),
    "avbottleneck": Variant("avbottleneck"),
    "+avc": Variant("+avc", use_avc=True),
    "+avm": Variant("+avm", use_avc=True, use_avm=True),
    "+mav": Variant("+mav", use_avc=True, use_avm=True, use_recon=True, mask_kind="random"),
    "+masegmv": Variant("+masegmv", use_avc=True, use_avm=True, use_recon=True, mask_kind="segment"),
}


@dataclass
class ExperimentConfig:
    # model
    dim: int = 32
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 4
    init_std: float = 0.02
    K: int = 4
    L: int = 4
    proj_dim: int = 256
    # objective
    lambda1: float = 0.5
    lambda2: float = 0.1
    lambda3: float = 0.01
    tau: float = 0.07
    avc_symmetric: bool = True
    avc_normalize: bool = True
    # masking and segmentation
    mask_ratio: float = 0.04
    num_segments: int = 50
    sg_window: int = 5
    sg_order: int = 2
    # optimisation
    batch_size: int = 16
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 300
    eval_every: int = 50
    checkpoint_every: int = 0  # 0: final checkpoint only
    seed: int = 0
    # data
    n_samples: int = 1000
    noise: float = 0.3
    num_classes: int = 2
    audio_shape: list = field(default_factory=lambda: [64, 16])
    audio_patch: list = field(default_factory=lambda: [8, 8])
    video_shape: list = field(default_factory=lambda: [4, 8, 8, 1])
    video_tubelet: list = field(default_factory=lambda: [2, 4, 4])
    val_fraction: float = 0.2
    ablations: list = field(default_factory=lambda: list(ABLATIONS))

    def __post_init__(self):
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (matching loss needs a negative)")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError("mask_ratio must lie in [0, 1]")
        if self.num_segments > self.audio_shape[0]:
            raise ConfigError(f"num_segments {self.num_segments} exceeds {self.audio_shape[0]} time frames")
        for name in self.ablations:
            if name not in ABLATIONS:
                raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            cfg = cls.from_dict(json.load(fh))
        return cfg.with_env_seed()

    def with_env_seed(self) -> "ExperimentConfig":
        seed = os.environ.get(SEED_ENV)
        return replace(self, seed=int(seed)) if seed not in (None, "") else self

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @property
    def audio_tokens(self) -> int:
        (T, F), (pt, pf) = self.audio_shape, self.audio_patch
        return (T // pt) * (F // pf)

    @property
    def video_tokens(self) -> int:
        T, H, W, _ = self.video_shape
        t, h, w = self.video_tubelet
        return (T // t) * (H // h) * (W // w)
