import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from tsekit.backbone import BASE_CONV_GEOMETRY, BackboneConfig, SslBackbone
from tsekit.errors import ConfigError, DataError


def oracle_frames(length, geometry):
    """Independent per-layer recurrence: floor((L - k)/s) + 1."""
    f = length
    for kernel, stride in geometry:
        f = (f - kernel) // stride + 1
    return f


def test_derived_frame_counts_at_one_second():
    cfg = BackboneConfig.tiny()
    # frozen oracle values for 16000 samples with the base conv geometry
    assert oracle_frames(16000, BASE_CONV_GEOMETRY) == 49
    assert oracle_frames(16000, BASE_CONV_GEOMETRY[:3]) == 799
    assert oracle_frames(16000, BASE_CONV_GEOMETRY[:1]) == 3199
    assert cfg.frame_count(16000) == 49
    assert cfg.frame_count(16000, 3) == 799
    assert cfg.frame_count(16000, 1) == 3199


def test_receptive_field_boundary():
    cfg = BackboneConfig.tiny()
    rf = cfg.min_input_length()
    assert rf == 400
    assert cfg.frame_count(rf) == 1
    with pytest.raises(DataError, match="400"):
        cfg.frame_count(rf - 1)


def test_forward_matches_frame_count(tiny_backbone):
    taps = tiny_backbone.forward_features(torch.randn(1, 16000))
    for j, tap in enumerate(taps.cnn, start=1):
        assert tap.frames == tiny_backbone.frame_count(16000, j)
    assert all(t.frames == 49 for t in taps.trf)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=400, max_value=9000))
def test_frame_count_equals_forward_for_random_lengths(length):
    torch.manual_seed(0)
    backbone = SslBackbone(BackboneConfig.tiny())
    taps = backbone.forward_features(torch.zeros(1, length), with_transformer=False)
    for j, tap in enumerate(taps.cnn, start=1):
        assert tap.frames == backbone.frame_count(length, j)


def test_tap_inventory_and_strides(tiny_backbone):
    cfg = tiny_backbone.config
    taps = tiny_backbone.forward_features(torch.randn(1, 8000))
    assert len(taps.cnn) == cfg.n_conv_layers
    assert len(taps.trf) == cfg.n_transformer_blocks + 1
    # cumulative stride algebra
    acc = 1
    for spec, tap in zip(cfg.conv_layers, taps.cnn):
        acc *= spec.stride
        assert tap.stride == acc
    assert all(t.stride == taps.cnn[-1].stride for t in taps.trf)
    frames = {t.frames for t in taps.trf}
    assert len(frames) == 1


def test_tap_zero_is_transformer_input(tiny_backbone):
    """Hook block 1's input and compare with the reported 0-th tap."""
    captured = {}

    def hook(module, args, kwargs=None):
        captured["input"] = args[0].detach().clone()

    handle = tiny_backbone.blocks[0].register_forward_pre_hook(hook)
    try:
        taps = tiny_backbone.forward_features(torch.randn(1, 16000))
    finally:
        handle.remove()
    torch.testing.assert_close(taps.trf[0].data, captured["input"])


def test_short_input_error_names_minimum(tiny_backbone):
    with pytest.raises(DataError, match="400 samples"):
        tiny_backbone.forward_features(torch.randn(1, 399))


def test_frozen_mode_detaches(tiny_backbone):
    tiny_backbone.set_frozen(False)  # reset from other tests
    taps = tiny_backbone.forward_features(torch.randn(1, 800), mode="frozen")
    assert not taps.trf[-1].data.requires_grad
    taps_t = tiny_backbone.forward_features(torch.randn(1, 800), mode="trainable")
    assert taps_t.trf[-1].data.requires_grad


def test_eval_determinism(tiny_backbone):
    x = torch.randn(1, 4000)
    a = tiny_backbone.forward_features(x, mode="frozen")
    b = tiny_backbone.forward_features(x, mode="frozen")
    assert torch.equal(a.trf[-1].data, b.trf[-1].data)
    assert torch.equal(a.cnn[0].data, b.cnn[0].data)


def test_config_validation():
    with pytest.raises(ConfigError, match="kernel >= stride"):
        BackboneConfig(
            conv_layers=(
                type(BackboneConfig.tiny().conv_layers[0])(kernel=2, stride=5, channels=8),
            )
            * 2,
            n_transformer_blocks=1,
            model_dim=8,
            n_heads=1,
            ff_dim=8,
        )
    with pytest.raises(ConfigError, match="preset"):
        BackboneConfig.from_preset("huge")


def test_positional_table_limit():
    cfg = BackboneConfig(
        conv_layers=BackboneConfig.tiny().conv_layers,
        n_transformer_blocks=1,
        model_dim=16,
        n_heads=2,
        ff_dim=16,
        max_frames=8,
    )
    torch.manual_seed(0)
    backbone = SslBackbone(cfg)
    with pytest.raises(DataError, match="positional table"):
        backbone.forward_features(torch.randn(1, 16000))
