"""Speaker encoders producing the conditioning embedding.

* Mhfa - multi-head factorized attentive pooling over SSL Transformer taps:
  two independently weighted layer sums feed the attention (key) and content
  (value) streams; each head pools value frames with its own attention map,
  and the concatenated per-head summaries project to the embedding.
* TcnSpeakerEncoder - the classic time-domain baseline: conv encoder, a few
  TCN residual blocks, temporal mean, linear head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .aggregation import LayerWeights, weighted_sum
from .errors import ConfigError, DataError
from .features import FeatureMap


@dataclass(frozen=True)
class MhfaConfig:
    n_heads: int = 8
    key_dim: int = 128
    value_dim: int = 128
    embed_dim: int = 256

    def __post_init__(self):
        if min(self.n_heads, self.key_dim, self.value_dim, self.embed_dim) < 1:
            raise ConfigError(f"all MHFA dims must be positive: {self}")


class Mhfa(nn.Module):
    """Attentive pooling of layer-weighted taps into a speaker embedding."""

    def __init__(self, n_taps: int, feat_dim: int, cfg: MhfaConfig = MhfaConfig()):
        super().__init__()
        self.cfg = cfg
        self.key_weights = LayerWeights(n_taps)
        self.value_weights = LayerWeights(n_taps)
        self.key_proj = nn.Linear(feat_dim, cfg.key_dim)
        self.value_proj = nn.Linear(feat_dim, cfg.value_dim)
        self.head_vectors = nn.Parameter(torch.empty(cfg.key_dim, cfg.n_heads))
        nn.init.xavier_uniform_(self.head_vectors)
        self.out = nn.Linear(cfg.n_heads * cfg.value_dim, cfg.embed_dim)

    def attention_maps(self, taps: list[FeatureMap] | tuple[FeatureMap, ...]) -> torch.Tensor:
        """Per-head attention over frames, each row summing to one. (B, H, T)"""
        if not taps:
            raise ValueError("no taps supplied")
        if taps[0].frames < 1:
            raise DataError("enrollment produced zero frames")
        keys = weighted_sum(list(taps), self.key_weights).data  # (B, T, D)
        scores = self.key_proj(keys) @ self.head_vectors  # (B, T, H)
        return torch.softmax(scores, dim=1).transpose(1, 2)

    def forward(self, taps: list[FeatureMap] | tuple[FeatureMap, ...]) -> torch.Tensor:
        attn = self.attention_maps(taps)  # (B, H, T)
        values = weighted_sum(list(taps), self.value_weights).data
        values = self.value_proj(values)  # (B, T, V)
        pooled = attn @ values  # (B, H, V)
        return self.out(pooled.flatten(start_dim=1))  # (B, embed_dim)


class TcnResidualBlock(nn.Module):
    """1x1 expand -> PReLU -> depthwise dilated conv -> PReLU -> 1x1 squeeze, residual."""

    def __init__(self, channels: int, hidden: int, kernel: int, dilation: int):
        super().__init__()
        pad = (kernel - 1) * dilation // 2
        self.net = nn.Sequential(
            nn.Conv1d(channels, hidden, 1),
            nn.PReLU(),
            GlobalLayerNorm(hidden),
            nn.Conv1d(hidden, hidden, kernel, padding=pad, dilation=dilation, groups=hidden),
            nn.PReLU(),
            GlobalLayerNorm(hidden),
            nn.Conv1d(hidden, channels, 1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.net(x)


class GlobalLayerNorm(nn.Module):
    """Normalize over channel and time jointly (the Conv-TasNet gLN)."""

    def __init__(self, channels: int, eps: float = 1e-8):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = ((x - mean) ** 2).mean(dim=(1, 2), keepdim=True)
        return self.gamma * (x - mean) / torch.sqrt(var + self.eps) + self.beta


class TcnSpeakerEncoder(nn.Module):
    """Waveform -> conv frames -> TCN blocks -> temporal mean -> embedding."""

    def __init__(
        self,
        filters: int = 256,
        kernel: int = 40,
        stride: int = 20,
        hidden: int = 512,
        n_blocks: int = 3,
        tcn_kernel: int = 3,
        embed_dim: int = 256,
    ):
        super().__init__()
        self.kernel = kernel
        self.encoder = nn.Conv1d(1, filters, kernel, stride=stride, bias=False)
        self.blocks = nn.Sequential(
            *(
                TcnResidualBlock(filters, hidden, tcn_kernel, dilation=2**i)
                for i in range(n_blocks)
            )
        )
        self.out = nn.Linear(filters, embed_dim)

    def forward(self, enrollment: torch.Tensor) -> torch.Tensor:
        """enrollment: (B, samples) -> (B, embed_dim)."""
        if enrollment.ndim == 1:
            enrollment = enrollment.unsqueeze(0)
        if enrollment.shape[-1] < self.kernel:
            raise DataError(
                f"enrollment of {enrollment.shape[-1]} samples is shorter than the "
                f"encoder kernel ({self.kernel} samples)"
            )
        x = torch.relu(self.encoder(enrollment.unsqueeze(1)))
        x = self.blocks(x)
        return self.out(x.mean(dim=-1))
