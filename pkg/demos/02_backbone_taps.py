"""Every intermediate output of the speech backbone, with stride bookkeeping.

The conv encoder narrows time resolution layer by layer (valid convolutions,
so frames follow floor((L - kernel)/stride) + 1); the Transformer stack then
runs at the deepest stride. Tap 0 of the Transformer list is the stack's own
input, which downstream consumers weight like any other layer.

Run:  python demos/02_backbone_taps.py
"""

import torch

from tsekit.backbone import BackboneConfig, SslBackbone

torch.manual_seed(0)
config = BackboneConfig.tiny()
backbone = SslBackbone(config)

seconds = 1.0
samples = int(16000 * seconds)
taps = backbone.forward_features(torch.randn(1, samples))

print(f"input: {samples} samples @16 kHz   (receptive field {config.min_input_length()} samples)\n")
print("conv taps:")
for j, tap in enumerate(taps.cnn, start=1):
    fps = 16000 / tap.stride
    print(
        f"  layer {j}: {tap.frames:5d} frames x {tap.channels:3d} ch   "
        f"stride {tap.stride:3d} samples ({fps:7.1f} frames/s)"
    )
print("\ntransformer taps (all at the deepest stride):")
for i, tap in enumerate(taps.trf):
    origin = "stack input (conv output)" if i == 0 else f"block {i} output"
    print(f"  tap {i}: {tap.frames} frames x {tap.channels} ch   <- {origin}")

# the frame arithmetic is a pure function of the config
for length in (16000, 12345, 8000):
    predicted = backbone.frame_count(length)
    actual = backbone.forward_features(torch.zeros(1, length)).trf[0].frames
    print(f"\nframe_count({length}) = {predicted}; actual forward = {actual}")

# frozen mode detaches the taps so no backbone parameter can train
frozen = backbone.forward_features(torch.randn(1, 8000), mode="frozen")
print(f"\nfrozen-mode tap requires_grad: {frozen.trf[-1].data.requires_grad}")
