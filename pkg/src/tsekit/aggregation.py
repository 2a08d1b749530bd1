"""Learnable layer-wise weighted sums over backbone taps.

One LayerWeights instance per consumer (extractor, speaker encoder, the
enhancer top, the two MHFA streams). Softmax over free logits keeps the
weights positive and summing to one by construction.
"""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from .features import FeatureMap, check_same_grid


class LayerWeights(nn.Module):
    """Softmax-normalized scalar weights over N+1 taps, initialized uniform."""

    def __init__(self, n_taps: int):
        super().__init__()
        if n_taps < 1:
            raise ValueError(f"need at least one tap, got {n_taps}")
        self.n_taps = n_taps
        self.logits = nn.Parameter(torch.zeros(n_taps))

    def normalized(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=0)

    def forward(self) -> torch.Tensor:
        return self.normalized()

    def extra_repr(self) -> str:
        return f"n_taps={self.n_taps}"


def weighted_sum(taps: Sequence[FeatureMap], weights: LayerWeights) -> FeatureMap:
    """Convex combination of taps: out[t, c] = sum_i w_i * taps[i][t, c]."""
    check_same_grid(taps)
    if len(taps) != weights.n_taps:
        raise ValueError(f"got {len(taps)} taps for {weights.n_taps} weights")
    stacked = torch.stack([tap.data for tap in taps], dim=0)  # (L, B, T, C)
    w = weights.normalized().view(-1, 1, 1, 1)
    out = (stacked * w).sum(dim=0)
    return FeatureMap(out, stride=taps[0].stride, sample_rate=taps[0].sample_rate)


def export_weights(weights: LayerWeights, label: str) -> str:
    """One CSV row `label,w_0,...,w_N` of the normalized weights."""
    values = weights.normalized().detach().cpu().tolist()
    return ",".join([label] + [f"{v:.4f}" for v in values])
