import pytest
import torch

from tsekit.aie import (
    AdaptiveInputEnhancer,
    AieConfig,
    DeconvBlock,
    FpmUpsampleBlock,
    UnetUpsampleBlock,
)
from tsekit.backbone import BackboneConfig, SslBackbone
from tsekit.errors import ConfigError
from tsekit.features import FeatureMap


def make_aie(fusion="fpm", source="multi_cnn_plus_transformer", channels=64, stride=20):
    torch.manual_seed(11)
    cfg = BackboneConfig.tiny()
    return AdaptiveInputEnhancer(
        AieConfig(fusion=fusion, source=source, target_stride=stride, channels=channels), cfg
    )


def test_target_stride_must_match_a_level():
    with pytest.raises(ConfigError, match=r"\[5, 10, 20, 40, 80, 160, 320\]"):
        make_aie(stride=23)


def test_recursion_levels_descend_through_strides():
    aie = make_aie()
    # blocks live at conv levels J..target+1 and each halves-or-better the stride
    assert aie.levels == [7, 6, 5, 4]
    strides = aie.backbone_cfg.cumulative_strides
    for j in aie.levels:
        assert strides[j - 1] // strides[j - 2] == aie.blocks[str(j)].level_stride
        assert strides[j - 2] < strides[j - 1]


# -- init_top --------------------------------------------------------------------


def _trf_taps(values, frames=49, dim=128):
    return tuple(FeatureMap(torch.full((1, frames, dim), float(v)), stride=320) for v in values)


def test_init_top_one_hot_selects_layer():
    aie = make_aie()
    taps = _trf_taps([1.0, 2.0, 3.0, 4.0, 5.0])
    with torch.no_grad():
        aie.top_weights.logits.copy_(torch.tensor([0.0, 0.0, 50.0, 0.0, 0.0]))
    top = aie.init_top(taps)
    expected = aie.top_proj(taps[2].data)
    torch.testing.assert_close(top.data, expected)
    assert top.stride == 320


def test_init_top_weights_sum_to_one():
    aie = make_aie()
    with torch.no_grad():
        aie.top_weights.logits.uniform_(-50, 50)
    assert abs(float(aie.top_weights.normalized().detach().sum()) - 1.0) < 1e-6


def test_init_top_rejected_for_cnn_only_source():
    aie = make_aie(source="multi_cnn")
    with pytest.raises(ConfigError, match="lateral"):
        aie.init_top(_trf_taps([1.0]))


# -- upsample blocks ----------------------------------------------------------------


def test_fpm_zero_topdown_reduces_to_lateral_chain(rng):
    torch.manual_seed(0)
    block = FpmUpsampleBlock(cnn_channels=8, channels=4, level_stride=2, activate=False)
    tap = torch.from_numpy(rng.standard_normal((1, 8, 49)).astype("float32"))
    zeros = torch.zeros(1, 4, 49)
    out = block(tap, zeros, target_frames=99)
    expected = block.deconv(block.lateral(tap))
    # crop rule: (49-1)*2+4 = 100 frames -> symmetric-then-trailing crop to 99
    assert expected.shape[-1] == 100
    torch.testing.assert_close(out, expected[..., :99])


def test_fpm_homogeneity_without_activation(rng):
    torch.manual_seed(0)
    block = FpmUpsampleBlock(cnn_channels=8, channels=4, level_stride=2, activate=False)
    for p in block.parameters():  # strip biases so the map is linear
        if p.ndim == 1:
            with torch.no_grad():
                p.zero_()
    tap = torch.from_numpy(rng.standard_normal((1, 8, 49)).astype("float32"))
    zeros = torch.zeros(1, 4, 49)
    out_scaled = block(3.0 * tap, zeros, target_frames=99)
    torch.testing.assert_close(out_scaled, 3.0 * block(tap, zeros, target_frames=99), atol=1e-5, rtol=1e-5)


def test_unet_concat_width_and_both_halves_matter(rng):
    torch.manual_seed(0)
    block = UnetUpsampleBlock(cnn_channels=8, channels=4, level_stride=2, activate=False)
    assert block.deconv.in_channels == 12  # c1 + c2
    tap = torch.from_numpy(rng.standard_normal((1, 8, 49)).astype("float32"))
    top = torch.from_numpy(rng.standard_normal((1, 4, 49)).astype("float32"))
    with torch.no_grad():
        base = block(tap, torch.zeros_like(top), target_frames=99)
        # concat is not additive fusion: the cnn half still shapes the output...
        assert float((block(2 * tap, torch.zeros_like(top), 99) - base).abs().max()) > 0
        # ...and so does the top-down half
        assert float((block(tap, top, 99) - base).abs().max()) > 0


def test_fpm_and_unet_emit_identical_shapes(rng):
    torch.manual_seed(0)
    fpm = FpmUpsampleBlock(8, 4, 2, activate=True)
    unet = UnetUpsampleBlock(8, 4, 2, activate=True)
    tap = torch.from_numpy(rng.standard_normal((1, 8, 49)).astype("float32"))
    top = torch.from_numpy(rng.standard_normal((1, 4, 49)).astype("float32"))
    assert fpm(tap, top, 99).shape == unet(tap, top, 99).shape


def test_crop_tolerance_enforced():
    block = DeconvBlock(channels=4, level_stride=2, activate=False)
    top = torch.zeros(1, 4, 49)
    with pytest.raises(ValueError, match="crop tolerance"):
        block(top, target_frames=90)  # deconv yields 100 frames; 10 over


# -- full recursion ---------------------------------------------------------------


@pytest.fixture(scope="module")
def backbone():
    torch.manual_seed(5)
    return SslBackbone(BackboneConfig.tiny())


@pytest.mark.parametrize("fusion", ["fpm", "unet"])
@pytest.mark.parametrize("length", [16000, 8000, 12345])
def test_output_matches_encoder_frames(backbone, fusion, length):
    aie = make_aie(fusion=fusion)
    taps = backbone.forward_features(torch.randn(1, length))
    h = aie(taps)
    assert h.stride == 20
    assert h.frames == (length - 40) // 20 + 1
    assert h.channels == 64


def test_single_cnn_is_lateral_only(backbone):
    aie = make_aie(source="single_cnn")
    taps = backbone.forward_features(torch.randn(1, 16000), with_transformer=False)
    h = aie(taps)
    expected = aie.single_lateral(taps.cnn_tap(3).data.transpose(1, 2)).transpose(1, 2)
    torch.testing.assert_close(h.data, expected)
    assert h.frames == taps.cnn_tap(3).frames


def test_transformer_only_chain(backbone):
    aie = make_aie(source="transformer_only")
    taps = backbone.forward_features(torch.randn(1, 16000))
    h = aie(taps)
    assert h.frames == 799
    # no lateral parameters exist in this source mode
    names = [n for n, _ in aie.named_parameters()]
    assert not any("lateral" in n for n in names)


def test_transformer_source_requires_trf_taps(backbone):
    aie = make_aie(source="multi_cnn_plus_transformer")
    taps = backbone.forward_features(torch.randn(1, 16000), with_transformer=False)
    with pytest.raises(ValueError, match="transformer taps"):
        aie(taps)


def test_multi_cnn_ignores_transformer(backbone):
    aie = make_aie(source="multi_cnn")
    taps = backbone.forward_features(torch.randn(1, 16000), with_transformer=False)
    assert aie(taps).frames == 799


def test_swapping_backbone_weights_moves_output(backbone):
    """Same shapes, different values, when the upstream parameters change."""
    aie = make_aie()
    x = torch.randn(1, 16000)
    torch.manual_seed(99)
    other = SslBackbone(BackboneConfig.tiny())
    with torch.no_grad():
        h_a = aie(backbone.forward_features(x))
        h_b = aie(other.forward_features(x))
    assert h_a.data.shape == h_b.data.shape
    assert float((h_a.data - h_b.data).abs().max()) > 0
