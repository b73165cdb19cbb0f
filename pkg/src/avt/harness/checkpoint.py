"""Checkpoint container.

A checkpoint is one JSON document::

    {
      "format": "avt-checkpoint",
      "version": 1,
      "meta": {...},                        # config, ablation, step
      "params": {key: {"shape": [...], "data": [...]}, ...},
      "optimizer": {"t": int, "m": {key: {...}}, "v": {key: {...}}}   # optional
    }

Keys are namespaced ``audio_encoder.*``, ``video_encoder.*``,
``fusion.bottleneck``, ``fusion.block{k}.{video|audio}.*``, ``heads.*``,
``proj.*`` and ``decoder.*``. ``data`` is the row-major flattening; floats
are written with ``repr`` precision so a load reproduces every bit.
Keys are sorted, which makes the file a pure function of its contents.
"""

from __future__ import annotations

import json
import os

import numpy as np

from ..encoders import Params
from ..numerics import Tensor

FORMAT = "avt-checkpoint"
VERSION = 1


def _pack(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(a.shape), "data": np.asarray(a, dtype=np.float64).ravel().tolist()} for k, a in arrays.items()}


def _unpack(blob: dict) -> dict[str, np.ndarray]:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


def save_checkpoint(path, params: Params, meta: dict | None = None, optimizer_state: dict | None = None) -> None:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "params": _pack({k: p.data for k, p in params.items()}),
    }
    if optimizer_state is not None:
        doc["optimizer"] = {
            "t": optimizer_state["t"],
            "m": _pack(optimizer_state["m"]),
            "v": _pack(optimizer_state["v"]),
        }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[Params, dict, dict | None]:
    """Returns ``(params, meta, optimizer_state or None)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path} is not an {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    params = {k: Tensor(a, requires_grad=True, name=k) for k, a in _unpack(doc["params"]).items()}
    opt = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        opt = {"t": o["t"], "m": _unpack(o["m"]), "v": _unpack(o["v"])}
    return params, doc["meta"], opt
