"""Feature-map and layer-tap containers: the currency between the SSL
backbone, the input enhancer, and the extractors.

Tensors are batched: data has shape (batch, frames, channels). Every map
carries its cumulative stride (waveform samples advanced per frame), which is
what all cross-module alignment logic reasons about.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch


@dataclass
class FeatureMap:
    data: torch.Tensor  # (batch, frames, channels)
    stride: int  # samples per frame
    sample_rate: int = 16000

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(
                f"FeatureMap data must be (batch, frames, channels), got {tuple(self.data.shape)}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.frames < 1:
            raise ValueError("FeatureMap must hold at least one frame")

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.stride


@dataclass
class LayerTaps:
    """Ordered intermediate outputs of an SSL backbone.

    cnn[j-1] is the output of conv block j (j = 1..J, coarser with depth).
    trf[i] is the output of Transformer block i, where trf[0] is the
    Transformer's input (the post-projection CNN encoder output). trf may be
    empty when the forward pass skipped the Transformer stack.
    """

    cnn: tuple[FeatureMap, ...]
    trf: tuple[FeatureMap, ...]

    def cnn_tap(self, j: int) -> FeatureMap:
        """1-based access matching conv block numbering."""
        if not 1 <= j <= len(self.cnn):
            raise ValueError(f"cnn tap index {j} out of range 1..{len(self.cnn)}")
        return self.cnn[j - 1]

    @property
    def n_transformer_taps(self) -> int:
        return len(self.trf)


def check_same_grid(taps: Sequence[FeatureMap]) -> None:
    """Raise unless all maps share frames, channels and stride."""
    if not taps:
        raise ValueError("need at least one feature map")
    first = taps[0]
    for i, tap in enumerate(taps):
        if (
            tap.frames != first.frames
            or tap.channels != first.channels
            or tap.stride != first.stride
        ):
            raise ValueError(
                "feature maps disagree: tap 0 is "
                f"(frames={first.frames}, channels={first.channels}, stride={first.stride}), "
                f"tap {i} is (frames={tap.frames}, channels={tap.channels}, stride={tap.stride})"
            )


def crop_frames(data: torch.Tensor, target: int, tolerance: int = 2) -> torch.Tensor:
    """Crop the last dimension to ``target`` frames.

    Excess frames (valid-convolution edge effects) are removed symmetrically,
    odd leftovers from the trailing end. A mismatch beyond ``tolerance``
    frames, or a deficit, is an error rather than something to absorb silently.
    """
    have = data.shape[-1]
    excess = have - target
    if excess < 0 or excess > tolerance:
        raise ValueError(
            f"frame mismatch beyond crop tolerance: have {have}, want {target} "
            f"(tolerance {tolerance})"
        )
    if excess == 0:
        return data
    front = excess // 2
    return data[..., front : front + target]
