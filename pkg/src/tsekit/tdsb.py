"""Time-domain extraction core: learned conv encoder/decoder, a TCN
extractor with multiplicative speaker conditioning after its first block,
and the optional concatenation of enhancer features with the encoded
mixture.

The encoder stride (default 20 samples = 1.25 ms at 16 kHz) and kernel
(2x stride) are chosen so the encoder's valid-conv frame recurrence composes
exactly with the backbone's first three conv layers; that is what makes the
enhancer output align frame-for-frame with the encoded mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .aie import AdaptiveInputEnhancer
from .backbone import SslBackbone
from .errors import ConfigError, DataError
from .features import FeatureMap
from .spk_encoder import GlobalLayerNorm, Mhfa, TcnResidualBlock, TcnSpeakerEncoder

MASK_TARGETS = ("encoder", "fused")


@dataclass(frozen=True)
class TdsbConfig:
    enc_filters: int = 256
    enc_kernel: int = 40
    enc_stride: int = 20
    bottleneck: int = 256  # B
    hidden: int = 512  # H
    tcn_kernel: int = 3  # P
    blocks_per_repeat: int = 8  # X
    repeats: int = 4  # R
    spk_embed_dim: int = 256
    fuse_ssl: bool = False
    aie_channels: int = 256
    mask_target: str = "encoder"

    def __post_init__(self):
        if self.enc_kernel % self.enc_stride != 0:
            raise ConfigError(
                f"enc_stride ({self.enc_stride}) must divide enc_kernel ({self.enc_kernel})"
            )
        if self.mask_target not in MASK_TARGETS:
            raise ConfigError(f"mask_target must be one of {MASK_TARGETS}")

    @classmethod
    def tiny(cls, **overrides) -> "TdsbConfig":
        base = dict(
            enc_filters=64, bottleneck=64, hidden=128, blocks_per_repeat=4, repeats=2,
            aie_channels=64,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, **overrides) -> "TdsbConfig":
        return cls(**overrides)


class ConvEncoder(nn.Module):
    """Waveform -> nonnegative learned frames (stride bookkeeping attached)."""

    def __init__(self, cfg: TdsbConfig):
        super().__init__()
        self.cfg = cfg
        self.conv = nn.Conv1d(1, cfg.enc_filters, cfg.enc_kernel, stride=cfg.enc_stride, bias=False)

    def frame_count(self, length: int) -> int:
        if length < self.cfg.enc_kernel:
            raise DataError(
                f"input of {length} samples is shorter than the encoder kernel "
                f"({self.cfg.enc_kernel} samples)"
            )
        return (length - self.cfg.enc_kernel) // self.cfg.enc_stride + 1

    def forward(self, waveform: torch.Tensor, sample_rate: int = 16000) -> FeatureMap:
        if waveform.ndim == 1:
            waveform = waveform.unsqueeze(0)
        self.frame_count(waveform.shape[-1])  # raises on short input
        z = torch.relu(self.conv(waveform.unsqueeze(1)))  # (B, N, T)
        return FeatureMap(z.transpose(1, 2), stride=self.cfg.enc_stride, sample_rate=sample_rate)


class ConvDecoder(nn.Module):
    """Masked frames -> waveform via transposed-conv overlap-add (bias-free)."""

    def __init__(self, cfg: TdsbConfig):
        super().__init__()
        self.deconv = nn.ConvTranspose1d(
            cfg.enc_filters, 1, cfg.enc_kernel, stride=cfg.enc_stride, bias=False
        )

    def forward(self, frames: torch.Tensor, length: int) -> torch.Tensor:
        """frames: (B, N, T) -> waveform (B, length), padded/cropped exactly."""
        wav = self.deconv(frames).squeeze(1)
        if wav.shape[-1] >= length:
            return wav[..., :length]
        return nn.functional.pad(wav, (0, length - wav.shape[-1]))


def fuse(z_y: FeatureMap, h: FeatureMap) -> FeatureMap:
    """Concatenate encoded mixture and enhancer features along channels."""
    if z_y.frames != h.frames:
        raise ValueError(f"frame mismatch: encoder {z_y.frames}, enhancer {h.frames}")
    if z_y.stride != h.stride:
        raise ValueError(f"stride mismatch: encoder {z_y.stride}, enhancer {h.stride}")
    return FeatureMap(
        torch.cat([z_y.data, h.data], dim=-1), stride=z_y.stride, sample_rate=z_y.sample_rate
    )


class TcnExtractor(nn.Module):
    """Mask estimator over (optionally fused) encoder features.

    Speaker conditioning is an element-wise product between the linearly
    mapped embedding (broadcast over time) and the output of the first TCN
    block. The sigmoid mask multiplies the encoder features by default;
    mask_target='fused' masks the full fused stream and projects back to
    encoder width.
    """

    def __init__(self, cfg: TdsbConfig):
        super().__init__()
        self.cfg = cfg
        in_width = cfg.enc_filters + (cfg.aie_channels if cfg.fuse_ssl else 0)
        self.input_norm = GlobalLayerNorm(in_width)
        self.input_conv = nn.Conv1d(in_width, cfg.bottleneck, 1)
        self.spk_map = nn.Linear(cfg.spk_embed_dim, cfg.bottleneck)
        blocks = []
        for _ in range(cfg.repeats):
            for x in range(cfg.blocks_per_repeat):
                blocks.append(
                    TcnResidualBlock(cfg.bottleneck, cfg.hidden, cfg.tcn_kernel, dilation=2**x)
                )
        self.blocks = nn.ModuleList(blocks)
        mask_width = in_width if cfg.mask_target == "fused" else cfg.enc_filters
        self.mask_conv = nn.Sequential(nn.PReLU(), nn.Conv1d(cfg.bottleneck, mask_width, 1))
        if cfg.mask_target == "fused":
            self.fused_proj = nn.Conv1d(in_width, cfg.enc_filters, 1)
        self.in_width = in_width

    def mask(self, z_in: FeatureMap, embedding: torch.Tensor) -> torch.Tensor:
        """(B, T, in_width) features + (B, E) embedding -> mask (B, mask_width, T)."""
        if z_in.channels != self.in_width:
            raise ValueError(f"extractor expects width {self.in_width}, got {z_in.channels}")
        if embedding.ndim != 2 or embedding.shape[-1] != self.cfg.spk_embed_dim:
            raise ValueError(
                f"embedding must be (batch, {self.cfg.spk_embed_dim}), got {tuple(embedding.shape)}"
            )
        x = z_in.data.transpose(1, 2)  # (B, C, T)
        x = self.input_conv(self.input_norm(x))
        x = self.blocks[0](x)
        x = x * self.spk_map(embedding).unsqueeze(-1)
        for block in self.blocks[1:]:
            x = block(x)
        return torch.sigmoid(self.mask_conv(x))

    def forward(self, z_in: FeatureMap, embedding: torch.Tensor) -> FeatureMap:
        """Apply the estimated mask; returns masked encoder-width features."""
        mask = self.mask(z_in, embedding)
        feats = z_in.data.transpose(1, 2)
        if self.cfg.mask_target == "fused":
            masked = self.fused_proj(mask * feats)
        else:
            masked = mask * feats[:, : self.cfg.enc_filters]
        return FeatureMap(masked.transpose(1, 2), stride=z_in.stride, sample_rate=z_in.sample_rate)


@dataclass
class TdsbModelSpec:
    """What to assemble around the extraction core."""

    tdsb: TdsbConfig
    spk_encoder_kind: str = "tcn"  # {tcn, mhfa}
    share_backbone: bool = False


class TdSpeakerBeam(nn.Module):
    """Full time-domain extraction system.

    Construction is conditional: without SSL fusion and with the TCN speaker
    encoder, the parameter inventory contains no backbone/enhancer/attentive
    pooling weights at all (the classic baseline is recoverable exactly).
    """

    def __init__(
        self,
        spec: TdsbModelSpec,
        mixture_backbone: SslBackbone | None = None,
        enroll_backbone: SslBackbone | None = None,
        aie: AdaptiveInputEnhancer | None = None,
        mhfa: Mhfa | None = None,
        tcn_spk: TcnSpeakerEncoder | None = None,
    ):
        super().__init__()
        cfg = spec.tdsb
        self.spec = spec
        self.encoder = ConvEncoder(cfg)
        self.decoder = ConvDecoder(cfg)
        self.extractor = TcnExtractor(cfg)

        if cfg.fuse_ssl:
            if mixture_backbone is None or aie is None:
                raise ConfigError("fuse_ssl=true needs a mixture backbone and an enhancer")
            if aie.cfg.target_stride != cfg.enc_stride:
                raise ConfigError(
                    f"enhancer target_stride {aie.cfg.target_stride} != encoder stride {cfg.enc_stride}"
                )
            if aie.cfg.channels != cfg.aie_channels:
                raise ConfigError(
                    f"enhancer channels {aie.cfg.channels} != configured aie_channels {cfg.aie_channels}"
                )
            self.mixture_backbone = mixture_backbone
            self.aie = aie
        else:
            self.mixture_backbone = None
            self.aie = None

        if spec.spk_encoder_kind == "mhfa":
            if mhfa is None:
                raise ConfigError("spk_encoder_kind='mhfa' needs an Mhfa module")
            self.mhfa = mhfa
            self.tcn_spk = None
            if spec.share_backbone:
                if self.mixture_backbone is None:
                    raise ConfigError("share_backbone=true needs a mixture backbone to share")
                self.enroll_backbone = None
            else:
                if enroll_backbone is None:
                    raise ConfigError("spk_encoder_kind='mhfa' needs an enrollment backbone")
                self.enroll_backbone = enroll_backbone
        elif spec.spk_encoder_kind == "tcn":
            if tcn_spk is None:
                raise ConfigError("spk_encoder_kind='tcn' needs a TcnSpeakerEncoder")
            self.mhfa = None
            self.tcn_spk = tcn_spk
            self.enroll_backbone = None
        else:
            raise ConfigError(f"unknown spk_encoder_kind '{spec.spk_encoder_kind}'")

    # -- sub-steps -----------------------------------------------------------

    def encode(self, mixture: torch.Tensor) -> FeatureMap:
        return self.encoder(mixture)

    def speaker_embedding(self, enrollment: torch.Tensor) -> torch.Tensor:
        if self.mhfa is not None:
            backbone = self.enroll_backbone or self.mixture_backbone
            taps = backbone.forward_features(enrollment)
            return self.mhfa(taps.trf)
        return self.tcn_spk(enrollment)

    def enhancer_features(self, mixture: torch.Tensor) -> FeatureMap:
        taps = self.mixture_backbone.forward_features(
            mixture, with_transformer=self.aie.cfg.uses_transformer
        )
        return self.aie(taps)

    # -- full pass ------------------------------------------------------------

    def forward(self, mixture: torch.Tensor, enrollment: torch.Tensor) -> torch.Tensor:
        """(B, L) mixture + (B, Le) enrollment -> (B, L) estimate."""
        if mixture.ndim == 1:
            mixture = mixture.unsqueeze(0)
        if enrollment.ndim == 1:
            enrollment = enrollment.unsqueeze(0)
        length = mixture.shape[-1]
        z_y = self.encode(mixture)
        if self.aie is not None:
            h = self.enhancer_features(mixture)
            z_in = fuse(z_y, h)
        else:
            z_in = z_y
        e = self.speaker_embedding(enrollment)
        z_s = self.extractor(z_in, e)
        return self.decoder(z_s.data.transpose(1, 2), length)

    # -- training plumbing -----------------------------------------------------

    def ssl_backbones(self) -> list[SslBackbone]:
        backbones = []
        if self.mixture_backbone is not None:
            backbones.append(self.mixture_backbone)
        if self.enroll_backbone is not None:
            backbones.append(self.enroll_backbone)
        return backbones

    def set_backbone_frozen(self, frozen: bool) -> None:
        for backbone in self.ssl_backbones():
            backbone.set_frozen(frozen)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        backbone_params = [p for b in self.ssl_backbones() for p in b.parameters()]
        backbone_ids = {id(p) for p in backbone_params}
        main = [p for p in self.parameters() if id(p) not in backbone_ids]
        return {"backbone": backbone_params, "main": main}
