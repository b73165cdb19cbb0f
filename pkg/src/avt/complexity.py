"""Attention cost accounting: merged concatenation versus bottleneck fusion.

Costs are counted in attention-score entries (token pairs). One attention
call over ``T`` tokens has ``T**2`` pairs; its multiply-accumulate count is
``2 * T**2 * dim`` (``QK^T`` plus ``weights @ V``), independent of head count.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from typing import Iterable

from .numerics import ConfigError

MACS_PER_PAIR_DIM = 2


@dataclass(frozen=True)
class AttentionCost:
    token_pair_count: int
    mac_count: int


def _cost(lengths: Iterable[int], dim: int) -> AttentionCost:
    pairs = sum(t * t for t in lengths)
    return AttentionCost(pairs, pairs * dim * MACS_PER_PAIR_DIM)


def cost_merged(M: int, N: int, L: int = 0, dim: int = 1, K: int = 1, cls: bool = True) -> AttentionCost:
    """One joint attention over all audio and video tokens per layer, ``K`` layers.

    ``L`` is accepted for signature symmetry; the merged baseline has no
    bottleneck tokens.
    """
    if M < 1 or N < 1:
        raise ConfigError("token counts must be >= 1")
    extra = 2 if cls else 0
    return _cost([M + N + extra] * K, dim)


def cost_bottleneck(M: int, N: int, L: int, dim: int = 1, K: int = 1, cls: bool = True) -> AttentionCost:
    """Per block one video pass over ``N (+1) + L`` tokens and one audio pass over ``M (+1) + L``."""
    if M < 1 or N < 1:
        raise ConfigError("token counts must be >= 1")
    if L < 0 or L >= min(M, N):
        raise ConfigError(f"bottleneck size L={L} must satisfy 0 <= L < min(M, N) = {min(M, N)}")
    c = 1 if cls else 0
    return _cost([N + c + L, M + c + L] * K, dim)


def crossover_bound(M: int, N: int, cls: bool = True) -> int:
    """Largest ``L`` for which one bottleneck block is strictly cheaper than one merged layer.

    With ``a = M (+1)`` and ``b = N (+1)`` the condition
    ``(a+L)^2 + (b+L)^2 < (a+b)^2`` reduces to ``L^2 + (a+b) L < a b``.
    Returns -1 when no ``L >= 0`` qualifies.
    """
    c = 1 if cls else 0
    a, b = M + c, N + c
    # positive root of L^2 + (a+b) L - ab = 0, then step to the strict integer bound
    L = int(((-(a + b)) + math.isqrt((a + b) ** 2 + 4 * a * b)) // 2) + 1
    while L >= 0 and L * L + (a + b) * L >= a * b:
        L -= 1
    return L


def merged_over_bottleneck(M: int, N: int, L: int, K: int = 1, cls: bool = True) -> float:
    return cost_merged(M, N, L, 1, K, cls).token_pair_count / cost_bottleneck(M, N, L, 1, K, cls).token_pair_count


REFERENCE_PRESET = {"M": 100, "N": 100, "L": 4, "K": 4}

FIELDS = [
    "M", "N", "L", "K", "dim", "mode",
    "merged_pairs", "bottleneck_pairs", "merged_macs", "bottleneck_macs",
    "ratio", "crossover_L",
]


def report_rows(configs: Iterable[dict], dim: int = 32) -> list[dict]:
    rows = []
    for cfg in configs:
        M, N, L, K = (int(cfg[k]) for k in ("M", "N", "L", "K"))
        d = int(cfg.get("dim", dim))
        for mode, cls in (("with_cls", True), ("asymptotic", False)):
            merged = cost_merged(M, N, L, d, K, cls)
            bott = cost_bottleneck(M, N, L, d, K, cls)
            rows.append({
                "M": M, "N": N, "L": L, "K": K, "dim": d, "mode": mode,
                "merged_pairs": merged.token_pair_count,
                "bottleneck_pairs": bott.token_pair_count,
                "merged_macs": merged.mac_count,
                "bottleneck_macs": bott.mac_count,
                "ratio": merged.token_pair_count / bott.token_pair_count,
                "crossover_L": crossover_bound(M, N, cls),
            })
    return rows


def report(configs: Iterable[dict], dim: int = 32) -> str:
    """CSV table of pair/MAC counts and merged/bottleneck ratios.

    Counts cover the fusion attention only; backbone FLOPs are not modelled.
    """
    buf = io.StringIO()
    buf.write("# fusion-level attention cost; encoder backbones excluded\n")
    writer = csv.DictWriter(buf, fieldnames=FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in report_rows(configs, dim):
        writer.writerow({**row, "ratio": f"{row['ratio']:.6f}"})
    return buf.getvalue()


def parse_grid(spec: str) -> list[dict]:
    """Expand ``"M=16,100,N=8,L=4,K=1,4"`` into the cartesian product of configs.

    A comma-separated item containing ``=`` starts a new key; bare items add
    further values to the preceding key.
    """
    axes: dict[str, list[int]] = {}
    key = None
    for item in spec.replace(";", ",").replace(" ", ",").split(","):
        if not item:
            continue
        if "=" in item:
            key, _, item = item.partition("=")
            key = key.strip()
            if key not in ("M", "N", "L", "K", "dim"):
                raise ConfigError(f"unknown grid key {key!r}")
            axes[key] = []
        if key is None:
            raise ConfigError(f"grid value {item!r} has no key")
        axes[key].append(int(item))
    for k in ("M", "N", "L", "K"):
        if not axes.get(k):
            raise ConfigError(f"grid is missing {k}")
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(axes[k] for k in keys))]
