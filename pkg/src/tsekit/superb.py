"""BLSTM downstream extractor over layer-weighted SSL features.

The backbone stays frozen; only the layer weights, the BLSTM mask estimator,
the conditioning projection and the speaker head train. The mask multiplies
the complex STFT of the mixture (magnitude scaling, phase untouched) and the
waveform is resynthesized with the inverse STFT at the input length.

The STFT hop matches the backbone's top-level stride (320 samples = 20 ms)
so SSL frames and STFT frames align 1:1; the residual off-by-<=2 frame
difference from the backbone's valid convolutions is resolved by cropping
both streams to the shorter one and edge-extending the mask over the last
frames of the spectrogram.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .aggregation import LayerWeights, weighted_sum
from .backbone import SslBackbone
from .errors import ConfigError, DataError
from .features import LayerTaps

FRAME_TOLERANCE = 2


@dataclass(frozen=True)
class SuperbConfig:
    blstm_layers: int = 3
    blstm_dim: int = 512
    spk_dim: int = 512
    fft_size: int = 1024
    window: int = 1024
    hop: int = 320

    def __post_init__(self):
        if self.blstm_layers < 2:
            raise ConfigError("need at least 2 BLSTM layers (conditioning sits after the first)")
        if self.window > self.fft_size:
            raise ConfigError(f"window {self.window} exceeds fft_size {self.fft_size}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    @classmethod
    def tiny(cls) -> "SuperbConfig":
        return cls(blstm_dim=128, spk_dim=128)


@dataclass
class Spectrogram:
    data: torch.Tensor  # complex, (batch, frames, bins)
    window: int
    hop: int
    fft_size: int

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def bins(self) -> int:
        return self.data.shape[2]


class StftFrontend(nn.Module):
    """Windowed STFT/iSTFT pair; istft(stft(x), len(x)) reconstructs x."""

    def __init__(self, cfg: SuperbConfig):
        super().__init__()
        self.cfg = cfg
        self.register_buffer("win", torch.hann_window(cfg.window), persistent=False)

    def stft(self, waveform: torch.Tensor) -> Spectrogram:
        if waveform.ndim == 1:
            waveform = waveform.unsqueeze(0)
        spec = torch.stft(
            waveform,
            n_fft=self.cfg.fft_size,
            hop_length=self.cfg.hop,
            win_length=self.cfg.window,
            window=self.win,
            center=True,
            return_complex=True,
        )  # (B, bins, frames)
        return Spectrogram(
            spec.transpose(1, 2), window=self.cfg.window, hop=self.cfg.hop, fft_size=self.cfg.fft_size
        )

    def istft(self, spec: Spectrogram, length: int) -> torch.Tensor:
        return torch.istft(
            spec.data.transpose(1, 2),
            n_fft=spec.fft_size,
            hop_length=spec.hop,
            win_length=spec.window,
            window=self.win,
            center=True,
            length=length,
        )


class SuperbTse(nn.Module):
    """Frozen-backbone TSE downstream: weighted-sum features, 3-layer BLSTM
    mask estimator, and mean-pooled speaker embedding conditioning the first
    recurrent layer multiplicatively."""

    def __init__(self, backbone: SslBackbone, cfg: SuperbConfig = SuperbConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone
        self.backbone.set_frozen(True)  # the downstream never trains the backbone
        self.frontend = StftFrontend(cfg)

        n_taps = backbone.config.n_transformer_blocks + 1
        feat_dim = backbone.config.model_dim
        self.extractor_weights = LayerWeights(n_taps)
        self.spk_weights = LayerWeights(n_taps)
        self.spk_head = nn.Linear(feat_dim, cfg.spk_dim)

        self.blstm1 = nn.LSTM(feat_dim, cfg.blstm_dim, batch_first=True, bidirectional=True)
        self.cond_proj = nn.Linear(2 * cfg.blstm_dim, cfg.spk_dim)
        later = [nn.LSTM(cfg.spk_dim, cfg.blstm_dim, batch_first=True, bidirectional=True)]
        for _ in range(cfg.blstm_layers - 2):
            later.append(
                nn.LSTM(2 * cfg.blstm_dim, cfg.blstm_dim, batch_first=True, bidirectional=True)
            )
        self.later_blstm = nn.ModuleList(later)
        self.mask_head = nn.Linear(2 * cfg.blstm_dim, cfg.bins)

    # -- speaker branch --------------------------------------------------------

    def speaker_embedding_from_taps(self, enroll_taps: LayerTaps) -> torch.Tensor:
        """Average the layer-weighted features over frames, then project."""
        if not enroll_taps.trf:
            raise ValueError("enrollment taps are missing the transformer stack")
        summed = weighted_sum(list(enroll_taps.trf), self.spk_weights)
        if summed.frames < 1:
            raise DataError("enrollment produced zero frames")
        return self.spk_head(summed.data.mean(dim=1))  # (B, spk_dim)

    def speaker_embedding(self, enrollment: torch.Tensor) -> torch.Tensor:
        taps = self.backbone.forward_features(enrollment, mode="frozen")
        return self.speaker_embedding_from_taps(taps)

    # -- mask branch -----------------------------------------------------------

    def estimate_mask(self, mix_taps: LayerTaps, embedding: torch.Tensor) -> torch.Tensor:
        """(taps, (B, spk_dim)) -> mask in [0, 1] of shape (B, frames, bins)."""
        feats = weighted_sum(list(mix_taps.trf), self.extractor_weights).data
        h1, _ = self.blstm1(feats)
        conditioned = self.cond_proj(h1) * embedding.unsqueeze(1)
        h = conditioned
        for lstm in self.later_blstm:
            h, _ = lstm(h)
        return torch.sigmoid(self.mask_head(h))

    # -- end to end -------------------------------------------------------------

    def forward(self, mixture: torch.Tensor, enrollment: torch.Tensor) -> torch.Tensor:
        """(B, L) mixture + (B, Le) enrollment -> (B, L) estimate."""
        if mixture.ndim == 1:
            mixture = mixture.unsqueeze(0)
        if enrollment.ndim == 1:
            enrollment = enrollment.unsqueeze(0)
        length = mixture.shape[-1]
        mix_taps = self.backbone.forward_features(mixture, mode="frozen")
        embedding = self.speaker_embedding(enrollment)
        mask = self.estimate_mask(mix_taps, embedding)
        spec = self.frontend.stft(mixture)
        masked = self.apply_mask(spec, mask)
        return self.frontend.istft(masked, length)

    def apply_mask(self, spec: Spectrogram, mask: torch.Tensor) -> Spectrogram:
        """Crop both streams to the shorter frame count, edge-extend the mask
        over trailing spectrogram frames, and scale the complex coefficients."""
        t_mask, t_spec = mask.shape[1], spec.frames
        if abs(t_mask - t_spec) > FRAME_TOLERANCE:
            raise ValueError(
                f"SSL/STFT frame mismatch beyond tolerance: mask {t_mask}, stft {t_spec}"
            )
        t = min(t_mask, t_spec)
        mask = mask[:, :t]
        if t < t_spec:
            mask = torch.cat([mask, mask[:, -1:].expand(-1, t_spec - t, -1)], dim=1)
        return Spectrogram(
            spec.data * mask, window=spec.window, hop=spec.hop, fft_size=spec.fft_size
        )

    # -- training plumbing --------------------------------------------------------

    def ssl_backbones(self) -> list[SslBackbone]:
        return [self.backbone]

    def set_backbone_frozen(self, frozen: bool) -> None:
        if not frozen:
            raise ConfigError("the BLSTM downstream always keeps its backbone frozen")

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        backbone_ids = {id(p) for p in self.backbone.parameters()}
        main = [p for p in self.parameters() if id(p) not in backbone_ids]
        return {"backbone": list(self.backbone.parameters()), "main": main}
