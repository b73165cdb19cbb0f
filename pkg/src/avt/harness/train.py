"""Training loop, evaluation and the experiment runner."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..encoders import Params
from .checkpoint import load_checkpoint, save_checkpoint
from .config import VARIANTS, ExperimentConfig, Variant
from .data import Dataset, gen_xor_dataset, split
from .model import Batch, forward, init_model, predict, predict_avg, segment_all
from .optim import AdamW

log = logging.getLogger(__name__)

LOSS_KEYS = {"cls_av": "L_cls_av", "avc": "L_avc", "avm": "L_avm", "masegmv": "L_masegmv"}


class NonFiniteLoss(FloatingPointError):
    pass


def step_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    """Independent generator per (seed, purpose, step); makes resumed runs replay exactly."""
    return np.random.default_rng([seed, stream, step])


def sample_batch(data: Dataset, segments, cfg: ExperimentConfig, step: int) -> Batch:
    idx = np.sort(step_rng(cfg.seed, 1, step).choice(len(data), size=cfg.batch_size, replace=False))
    segs = [segments[i] for i in idx] if segments is not None else None
    return Batch(data.video[idx], data.audio[idx], data.labels[idx], segs)


def _dump_diagnostics(out_dir, step: int, parts: dict, params: Params) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"nonfinite_step{step}.json"
    doc = {
        "step": step,
        "parts": {k: float(v.item()) if np.isfinite(v.item()) else str(v.item()) for k, v in parts.items()},
        "param_norms": {k: float(np.linalg.norm(p.data)) for k, p in params.items()},
        "nonfinite_params": sorted(k for k, p in params.items() if not np.all(np.isfinite(p.data))),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def train_step(batch: Batch, params: Params, opt: AdamW, cfg: ExperimentConfig, variant: Variant, step: int, out_dir=None) -> dict:
    """One forward/backward/AdamW update; returns the per-term loss record."""
    if len(batch) < 2:
        raise ValueError("train_step needs a batch of at least 2")
    opt.zero_grad()
    res = forward(params, cfg, variant, batch, step_rng(cfg.seed, 2, step))
    total = res.total.item()
    if not np.isfinite(total):
        dump = _dump_diagnostics(out_dir, step, res.parts, params)
        raise NonFiniteLoss(f"non-finite loss {total} at step {step}; diagnostics: {dump}")
    res.total.backward()
    opt.step()
    record = {"step": step}
    for key, name in LOSS_KEYS.items():
        record[name] = res.parts[key].item() if key in res.parts else 0.0
    record["L_total"] = total
    return record


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(probs, axis=1) == labels))


@dataclass
class RunResult:
    params: Params
    history: list[dict]
    train_acc: float
    val_acc: float
    val_probs: np.ndarray


def train_variant(
    cfg: ExperimentConfig,
    variant: Variant,
    train: Dataset,
    val: Dataset,
    out_dir=None,
    resume: bool = True,
) -> RunResult:
    """Train one ablation row; writes ``metrics.jsonl`` and ``checkpoint.json`` under ``out_dir``."""
    params = init_model(cfg)
    opt = AdamW(params, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.adam_eps, cfg.weight_decay)
    segments = segment_all(train.audio, cfg) if variant.mask_kind == "segment" else None
    train_eval = train.subset(np.arange(min(len(train), 512)))

    start = 1
    history: list[dict] = []
    metrics_path = ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path, ckpt_path = out_dir / "metrics.jsonl", out_dir / "checkpoint.json"
        if resume and ckpt_path.exists():
            loaded, meta, opt_state = load_checkpoint(ckpt_path)
            if meta.get("config") == cfg.to_dict() and meta.get("ablation") == variant.name and opt_state is not None:
                for k, p in params.items():
                    p.data = loaded[k].data
                opt.load_state_dict(opt_state)
                start = int(meta["step"]) + 1
                log.info("resuming %s from step %d", variant.name, start - 1)
        if metrics_path.exists() and start > 1:
            kept = [ln for ln in metrics_path.read_text().splitlines() if json.loads(ln)["step"] < start]
            history = [json.loads(ln) for ln in kept]
            metrics_path.write_text("".join(ln + "\n" for ln in kept))
        else:
            metrics_path.write_text("")

    def evaluate() -> tuple[float, float, np.ndarray]:
        tr = accuracy(predict(params, cfg, variant, train_eval.video, train_eval.audio), train_eval.labels)
        vp = predict(params, cfg, variant, val.video, val.audio)
        return tr, accuracy(vp, val.labels), vp

    for step in range(start, cfg.steps + 1):
        record = {"ablation": variant.name}
        record.update(train_step(sample_batch(train, segments, cfg, step), params, opt, cfg, variant, step, out_dir))
        if step % cfg.eval_every == 0 or step == cfg.steps:
            record["train_acc"], record["val_acc"], _ = evaluate()
            log.info("%s step %d loss %.4f val_acc %.3f", variant.name, step, record["L_total"], record["val_acc"])
        history.append(record)
        if metrics_path is not None:
            with open(metrics_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            if step == cfg.steps or (cfg.checkpoint_every and step % cfg.checkpoint_every == 0):
                meta = {"config": cfg.to_dict(), "ablation": variant.name, "step": step}
                save_checkpoint(ckpt_path, params, meta, opt.state_dict())

    tr, va, vp = evaluate()
    return RunResult(params, history, tr, va, vp)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    data = gen_xor_dataset(cfg.n_samples, tuple(cfg.audio_shape), tuple(cfg.video_shape), cfg.noise, cfg.seed)
    return split(data, cfg.val_fraction, cfg.seed)


def run_experiment(cfg: ExperimentConfig | str | os.PathLike, out_dir, resume: bool = True) -> dict:
    """Train every configured ablation and write ``summary.json``.

    Layout under ``out_dir``: ``config.json``, ``summary.json`` and one
    directory per trained ablation holding ``metrics.jsonl`` and
    ``checkpoint.json``. The ``avg`` row trains nothing; it averages the
    probabilities of the ``audio_only`` and ``video_only`` models.
    """
    if not isinstance(cfg, ExperimentConfig):
        cfg = ExperimentConfig.load(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.json")
    train, val = load_data(cfg)

    names = list(cfg.ablations)
    to_train = [n for n in names if n != "avg"]
    if "avg" in names:
        to_train += [n for n in ("audio_only", "video_only") if n not in to_train]

    results: dict[str, RunResult] = {}
    for name in to_train:
        results[name] = train_variant(cfg, VARIANTS[name], train, val, out / _dirname(name), resume)

    summary = {"seed": cfg.seed, "steps": cfg.steps, "val_size": len(val), "accuracy": {}}
    for name in names:
        if name == "avg":
            probs = predict_avg(results["audio_only"].val_probs, results["video_only"].val_probs)
            summary["accuracy"][name] = {"val": accuracy(probs, val.labels)}
        else:
            r = results[name]
            summary["accuracy"][name] = {"train": r.train_acc, "val": r.val_acc}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _dirname(name: str) -> str:
    return name.replace("+", "plus_")
