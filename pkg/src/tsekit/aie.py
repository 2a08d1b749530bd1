"""Adaptive input enhancer: top-down progressive upsampling over the
backbone's CNN taps, optionally seeded from a weighted sum of Transformer
taps, producing a feature stream at the extractor's time resolution.

The recursion starts at the deepest tap and walks down one conv level per
upsample block: the block at level j consumes the CNN tap of layer j together
with the running top-down feature (both at layer j's stride) and emits a map
at layer j-1's stride. It stops at the conv level whose cumulative stride
equals the extractor stride, which guarantees the output frame count matches
the extractor's encoder exactly (same valid-conv recurrence on both sides).

Two fusion variants:

* ``fpm``  - add a 1x1-conv lateral transform of the CNN tap to the top-down
  feature, then transposed-conv upsample.
* ``unet`` - concatenate the raw CNN tap with the top-down feature along
  channels, then transposed-conv upsample.

Deconv kernels are twice their stride; intermediate levels end in GELU, the
final level stays linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .aggregation import LayerWeights, weighted_sum
from .backbone import BackboneConfig
from .errors import ConfigError
from .features import FeatureMap, LayerTaps, crop_frames

FUSIONS = ("fpm", "unet")
SOURCES = ("multi_cnn", "multi_cnn_plus_transformer", "single_cnn", "transformer_only")

CROP_TOLERANCE = 2


@dataclass(frozen=True)
class AieConfig:
    fusion: str = "fpm"
    source: str = "multi_cnn_plus_transformer"
    target_stride: int = 20
    channels: int = 64

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion '{self.fusion}', choose from {FUSIONS}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown source '{self.source}', choose from {SOURCES}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")

    @property
    def uses_transformer(self) -> bool:
        return self.source in ("multi_cnn_plus_transformer", "transformer_only")


def _to_bct(fmap: FeatureMap) -> torch.Tensor:
    return fmap.data.transpose(1, 2)  # (B, C, T)


def _from_bct(data: torch.Tensor, stride: int, sample_rate: int) -> FeatureMap:
    return FeatureMap(data.transpose(1, 2), stride=stride, sample_rate=sample_rate)


class FpmUpsampleBlock(nn.Module):
    """T_out = DeConv(Conv1x1(cnn_tap) + top_down), cropped to the target frames."""

    def __init__(self, cnn_channels: int, channels: int, level_stride: int, activate: bool):
        super().__init__()
        self.lateral = nn.Conv1d(cnn_channels, channels, kernel_size=1)
        self.deconv = nn.ConvTranspose1d(
            channels, channels, kernel_size=2 * level_stride, stride=level_stride
        )
        self.act = nn.GELU() if activate else nn.Identity()
        self.level_stride = level_stride

    def forward(
        self, cnn_tap: torch.Tensor, top_down: torch.Tensor, target_frames: int
    ) -> torch.Tensor:
        lateral = self.lateral(cnn_tap)
        if lateral.shape != top_down.shape:
            raise ValueError(
                f"lateral {tuple(lateral.shape)} and top-down {tuple(top_down.shape)} disagree"
            )
        out = self.deconv(lateral + top_down)
        return self.act(crop_frames(out, target_frames, CROP_TOLERANCE))


class UnetUpsampleBlock(nn.Module):
    """T_out = DeConv(Concat(cnn_tap, top_down)), cropped to the target frames."""

    def __init__(self, cnn_channels: int, channels: int, level_stride: int, activate: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(
            cnn_channels + channels, channels, kernel_size=2 * level_stride, stride=level_stride
        )
        self.act = nn.GELU() if activate else nn.Identity()
        self.level_stride = level_stride

    def forward(
        self, cnn_tap: torch.Tensor, top_down: torch.Tensor, target_frames: int
    ) -> torch.Tensor:
        if cnn_tap.shape[-1] != top_down.shape[-1]:
            raise ValueError(
                f"cnn tap has {cnn_tap.shape[-1]} frames, top-down {top_down.shape[-1]}"
            )
        out = self.deconv(torch.cat([cnn_tap, top_down], dim=1))
        return self.act(crop_frames(out, target_frames, CROP_TOLERANCE))


class DeconvBlock(nn.Module):
    """Plain upsampling step for the transformer-only chain (no lateral input)."""

    def __init__(self, channels: int, level_stride: int, activate: bool):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(
            channels, channels, kernel_size=2 * level_stride, stride=level_stride
        )
        self.act = nn.GELU() if activate else nn.Identity()
        self.level_stride = level_stride

    def forward(self, top_down: torch.Tensor, target_frames: int) -> torch.Tensor:
        return self.act(crop_frames(self.deconv(top_down), target_frames, CROP_TOLERANCE))


class AdaptiveInputEnhancer(nn.Module):
    def __init__(self, cfg: AieConfig, backbone_cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone_cfg = backbone_cfg

        strides = backbone_cfg.cumulative_strides
        if cfg.target_stride not in strides:
            raise ConfigError(
                f"target_stride {cfg.target_stride} matches no CNN level; "
                f"available cumulative strides: {list(strides)}"
            )
        self.target_level = strides.index(cfg.target_stride) + 1  # 1-based conv layer
        n_levels = backbone_cfg.n_conv_layers

        conv_channels = [spec.channels for spec in backbone_cfg.conv_layers]

        if cfg.uses_transformer:
            self.top_weights = LayerWeights(backbone_cfg.n_transformer_blocks + 1)
            self.top_proj = nn.Linear(backbone_cfg.model_dim, cfg.channels)
        if cfg.source == "multi_cnn":
            self.top_lateral = nn.Conv1d(conv_channels[-1], cfg.channels, kernel_size=1)
        if cfg.source == "single_cnn":
            self.single_lateral = nn.Conv1d(
                conv_channels[self.target_level - 1], cfg.channels, kernel_size=1
            )

        # one block per level j = J .. target_level+1; the block consuming
        # layer j emits at layer j-1's resolution
        self.blocks = nn.ModuleDict()
        levels = list(range(n_levels, self.target_level, -1))
        for idx, j in enumerate(levels):
            activate = idx < len(levels) - 1  # final emitted level stays linear
            level_stride = backbone_cfg.conv_layers[j - 1].stride
            if cfg.source == "transformer_only":
                block = DeconvBlock(cfg.channels, level_stride, activate)
            elif cfg.fusion == "fpm":
                block = FpmUpsampleBlock(conv_channels[j - 1], cfg.channels, level_stride, activate)
            else:
                block = UnetUpsampleBlock(conv_channels[j - 1], cfg.channels, level_stride, activate)
            self.blocks[str(j)] = block
        self.levels = levels

    def init_top(self, trf_taps: tuple[FeatureMap, ...] | list[FeatureMap]) -> FeatureMap:
        """Seed the recursion from a weighted sum of Transformer taps."""
        if not self.cfg.uses_transformer:
            raise ConfigError(
                f"init_top is only defined for transformer-fed sources, not '{self.cfg.source}' "
                "(the top is the deepest CNN tap passed through the lateral transform)"
            )
        if not trf_taps:
            raise ValueError("no transformer taps supplied")
        summed = weighted_sum(list(trf_taps), self.top_weights)
        projected = self.top_proj(summed.data)
        return FeatureMap(projected, stride=summed.stride, sample_rate=summed.sample_rate)

    def forward(self, taps: LayerTaps) -> FeatureMap:
        cfg = self.cfg
        sample_rate = taps.cnn[0].sample_rate

        if cfg.source == "single_cnn":
            tap = taps.cnn_tap(self.target_level)
            out = self.single_lateral(_to_bct(tap))
            return _from_bct(out, cfg.target_stride, sample_rate)

        if cfg.uses_transformer:
            if not taps.trf:
                raise ValueError(
                    f"source '{cfg.source}' needs transformer taps, but the forward pass skipped them"
                )
            top = _to_bct(self.init_top(taps.trf))
        else:
            top = self.top_lateral(_to_bct(taps.cnn[-1]))

        for j in self.levels:
            target_frames = taps.cnn_tap(j - 1).frames
            block = self.blocks[str(j)]
            if cfg.source == "transformer_only":
                top = block(top, target_frames)
            else:
                top = block(_to_bct(taps.cnn_tap(j)), top, target_frames)
        return _from_bct(top, cfg.target_stride, sample_rate)
