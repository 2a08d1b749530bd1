"""SSL-style speech backbone: a strided 1-D CNN encoder followed by a
Transformer stack, exposing every intermediate output with stride
bookkeeping.

Two presets share the same conv geometry (kernels 10,3,3,3,3,2,2 / strides
5,2,2,2,2,2,2 -> 20 ms top-level hop, ~50 frames per second at 16 kHz):

* ``tiny``            - 64 conv channels, 4 blocks of width 128; desk scale.
* ``base-compatible`` - 512 conv channels, 12 blocks of width 768; shaped to
  accept externally converted pretrained checkpoints via the name_map import
  contract.

Convolutions are valid (no padding), so frame counts follow
floor((L - kernel)/stride) + 1 per layer; downstream alignment relies on
exactly this recurrence.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, DataError
from .features import FeatureMap, LayerTaps


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel: int
    stride: int
    channels: int

    def __post_init__(self):
        if not self.kernel >= self.stride >= 1:
            raise ConfigError(
                f"conv layer needs kernel >= stride >= 1, got kernel={self.kernel} stride={self.stride}"
            )
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")


# kernels/strides of the wav2vec2/WavLM-Base family feature extractor
BASE_CONV_GEOMETRY = ((10, 5), (3, 2), (3, 2), (3, 2), (3, 2), (2, 2), (2, 2))


def _conv_stack(channels: int) -> tuple[ConvLayerSpec, ...]:
    return tuple(ConvLayerSpec(k, s, channels) for k, s in BASE_CONV_GEOMETRY)


@dataclass(frozen=True)
class BackboneConfig:
    conv_layers: tuple[ConvLayerSpec, ...]
    n_transformer_blocks: int
    model_dim: int
    n_heads: int
    ff_dim: int
    max_frames: int = 4096
    preset: str = "custom"

    def __post_init__(self):
        if len(self.conv_layers) < 2:
            raise ConfigError("backbone needs at least 2 conv layers")
        if self.n_transformer_blocks < 1:
            raise ConfigError("backbone needs at least 1 transformer block")
        strides = self.cumulative_strides
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ConfigError(f"cumulative strides must strictly increase, got {strides}")

    @property
    def cumulative_strides(self) -> tuple[int, ...]:
        out, acc = [], 1
        for layer in self.conv_layers:
            acc *= layer.stride
            out.append(acc)
        return tuple(out)

    @property
    def n_conv_layers(self) -> int:
        return len(self.conv_layers)

    @classmethod
    def tiny(cls) -> "BackboneConfig":
        return cls(
            conv_layers=_conv_stack(64),
            n_transformer_blocks=4,
            model_dim=128,
            n_heads=2,
            ff_dim=256,
            preset="tiny",
        )

    @classmethod
    def base_compatible(cls) -> "BackboneConfig":
        return cls(
            conv_layers=_conv_stack(512),
            n_transformer_blocks=12,
            model_dim=768,
            n_heads=12,
            ff_dim=3072,
            preset="base-compatible",
        )

    @classmethod
    def from_preset(cls, name: str) -> "BackboneConfig":
        presets = {"tiny": cls.tiny, "base-compatible": cls.base_compatible}
        if name not in presets:
            raise ConfigError(f"unknown backbone preset '{name}', choose from {sorted(presets)}")
        return presets[name]()

    def min_input_length(self, upto_layer: int | None = None) -> int:
        """Receptive field of the conv stack up to ``upto_layer`` (1-based)."""
        layers = self.conv_layers[: self._check_layer(upto_layer)]
        rf = 1
        for layer in reversed(layers):
            rf = (rf - 1) * layer.stride + layer.kernel
        return rf

    def frame_count(self, length: int, upto_layer: int | None = None) -> int:
        """Frames the conv stack yields for ``length`` samples at tap ``upto_layer``."""
        upto = self._check_layer(upto_layer)
        if length < self.min_input_length(upto):
            raise DataError(
                f"input of {length} samples is below the receptive field "
                f"({self.min_input_length(upto)} samples) of conv layers 1..{upto}"
            )
        frames = length
        for layer in self.conv_layers[:upto]:
            frames = (frames - layer.kernel) // layer.stride + 1
        return frames

    def _check_layer(self, upto_layer: int | None) -> int:
        if upto_layer is None:
            return len(self.conv_layers)
        if not 1 <= upto_layer <= len(self.conv_layers):
            raise ConfigError(
                f"layer index {upto_layer} out of range 1..{len(self.conv_layers)}"
            )
        return upto_layer


def frame_count(config: BackboneConfig, length: int, upto_layer: int | None = None) -> int:
    return config.frame_count(length, upto_layer)


class TransformerBlock(nn.Module):
    """Post-norm self-attention block (attention -> add & norm -> FF -> add & norm)."""

    def __init__(self, dim: int, n_heads: int, ff_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, n_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim))
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attn_out, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + attn_out)
        x = self.norm2(x + self.ff(x))
        return x


class SslBackbone(nn.Module):
    """CNN encoder + Transformer stack exposing all intermediate taps."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config

        blocks = []
        in_ch = 1
        for j, layer in enumerate(config.conv_layers):
            conv = nn.Conv1d(in_ch, layer.channels, layer.kernel, stride=layer.stride, bias=False)
            if j == 0:
                blocks.append(nn.Sequential(conv, nn.GroupNorm(layer.channels, layer.channels), nn.GELU()))
            else:
                blocks.append(nn.Sequential(conv, nn.GELU()))
            in_ch = layer.channels
        self.conv_blocks = nn.ModuleList(blocks)

        cnn_dim = config.conv_layers[-1].channels
        self.post_cnn_norm = nn.LayerNorm(cnn_dim)
        self.projection = nn.Linear(cnn_dim, config.model_dim)
        self.pos_embedding = nn.Parameter(torch.zeros(config.max_frames, config.model_dim))
        nn.init.normal_(self.pos_embedding, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.model_dim, config.n_heads, config.ff_dim)
            for _ in range(config.n_transformer_blocks)
        )
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def set_frozen(self, frozen: bool) -> None:
        """Freeze/unfreeze all backbone parameters (affects optimizer masking)."""
        self._frozen = frozen
        for p in self.parameters():
            p.requires_grad_(not frozen)

    def forward_features(
        self,
        waveform: torch.Tensor,
        mode: str | None = None,
        with_transformer: bool = True,
        sample_rate: int = 16000,
    ) -> LayerTaps:
        """Run the backbone and return every intermediate output.

        waveform: (batch, samples) or (samples,). mode 'frozen' detaches the
        taps from the graph so no backbone parameter can accumulate gradient;
        default follows set_frozen(). with_transformer=False skips the
        Transformer stack (taps.trf is empty) for consumers that only need
        conv taps.
        """
        if mode is None:
            mode = "frozen" if self._frozen else "trainable"
        if mode not in ("frozen", "trainable"):
            raise ConfigError(f"unknown mode '{mode}', expected 'frozen' or 'trainable'")
        if waveform.ndim == 1:
            waveform = waveform.unsqueeze(0)
        if waveform.ndim != 2:
            raise DataError(f"waveform must be (batch, samples), got {tuple(waveform.shape)}")
        min_len = self.min_input_length()
        if waveform.shape[-1] < min_len:
            raise DataError(
                f"input of {waveform.shape[-1]} samples is shorter than the backbone's "
                f"receptive field; needs at least {min_len} samples"
            )

        if mode == "frozen":
            with torch.no_grad():
                return self._forward(waveform, with_transformer, sample_rate)
        return self._forward(waveform, with_transformer, sample_rate)

    def _forward(self, waveform: torch.Tensor, with_transformer: bool, sample_rate: int) -> LayerTaps:
        strides = self.config.cumulative_strides
        x = waveform.unsqueeze(1)  # (B, 1, L)
        cnn_taps = []
        for block, stride in zip(self.conv_blocks, strides):
            x = block(x)
            cnn_taps.append(FeatureMap(x.transpose(1, 2), stride=stride, sample_rate=sample_rate))

        if not with_transformer:
            return LayerTaps(cnn=tuple(cnn_taps), trf=())

        top_stride = strides[-1]
        h = x.transpose(1, 2)  # (B, T, C)
        h = self.projection(self.post_cnn_norm(h))
        n_frames = h.shape[1]
        if n_frames > self.config.max_frames:
            raise DataError(
                f"{n_frames} frames exceed the positional table ({self.config.max_frames}); "
                "raise BackboneConfig.max_frames for longer inputs"
            )
        h = h + self.pos_embedding[:n_frames]

        trf_taps = [FeatureMap(h, stride=top_stride, sample_rate=sample_rate)]
        for block in self.blocks:
            h = block(h)
            trf_taps.append(FeatureMap(h, stride=top_stride, sample_rate=sample_rate))
        return LayerTaps(cnn=tuple(cnn_taps), trf=tuple(trf_taps))

    # thin forwarding so callers don't need the config object
    def frame_count(self, length: int, upto_layer: int | None = None) -> int:
        return self.config.frame_count(length, upto_layer)

    def min_input_length(self, upto_layer: int | None = None) -> int:
        return self.config.min_input_length(upto_layer)


def build_backbone(preset: str, seed: int | None = None) -> SslBackbone:
    """Construct a backbone from a preset name with reproducible init."""
    if seed is not None:
        torch.manual_seed(seed)
    return SslBackbone(BackboneConfig.from_preset(preset))


def export_checkpoint(backbone: SslBackbone, path) -> None:
    """Write the backbone to a flat archive, embedding its config."""
    from dataclasses import asdict

    from .checkpoint import save_state

    cfg = backbone.config
    save_state(
        backbone,
        path,
        meta={
            "kind": "backbone",
            "backbone_config": {
                "conv_layers": [asdict(layer) for layer in cfg.conv_layers],
                "n_transformer_blocks": cfg.n_transformer_blocks,
                "model_dim": cfg.model_dim,
                "n_heads": cfg.n_heads,
                "ff_dim": cfg.ff_dim,
                "max_frames": cfg.max_frames,
                "preset": cfg.preset,
            },
        },
    )


def import_checkpoint(path, name_map=None, config: BackboneConfig | None = None):
    """Rebuild a backbone from an archive; every parameter assigned once.

    Self-exported archives carry their config; foreign archives need an
    explicit ``config`` plus (usually) a ``name_map`` file renaming their
    tensors onto ours. Returns (backbone, LoadReport); the report lists
    checkpoint tensors that matched nothing.
    """
    from .checkpoint import load_archive, load_state

    tensors, meta = load_archive(path)
    if config is None:
        stored = meta.get("backbone_config")
        if stored is None:
            raise DataError(
                f"{path} does not embed a backbone config; pass one explicitly"
            )
        config = BackboneConfig(
            conv_layers=tuple(ConvLayerSpec(**layer) for layer in stored["conv_layers"]),
            n_transformer_blocks=stored["n_transformer_blocks"],
            model_dim=stored["model_dim"],
            n_heads=stored["n_heads"],
            ff_dim=stored["ff_dim"],
            max_frames=stored.get("max_frames", 4096),
            preset=stored.get("preset", "custom"),
        )
    backbone = SslBackbone(config)
    report = load_state(backbone, tensors, name_map=name_map)
    return backbone, report
