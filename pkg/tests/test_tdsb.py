import numpy as np
import pytest
import torch

from tsekit.aie import AdaptiveInputEnhancer, AieConfig
from tsekit.errors import ConfigError
from tsekit.features import FeatureMap
from tsekit.spk_encoder import Mhfa, TcnSpeakerEncoder
from tsekit.tdsb import (
    ConvDecoder,
    ConvEncoder,
    TcnExtractor,
    TdsbConfig,
    TdsbModelSpec,
    TdSpeakerBeam,
    fuse,
)
from tsekit.train_eval import si_sdr


TINY = TdsbConfig.tiny()


def test_config_stride_must_divide_kernel():
    with pytest.raises(ConfigError, match="divide"):
        TdsbConfig(enc_kernel=50, enc_stride=20)


def test_encode_frame_count():
    torch.manual_seed(0)
    enc = ConvEncoder(TINY)
    z = enc(torch.randn(1, 16000))
    assert z.frames == 799
    assert z.stride == 20
    assert z.channels == 64
    assert (z.data >= 0).all()  # ReLU activation


def test_encode_zero_waveform_is_zero_map():
    torch.manual_seed(0)
    enc = ConvEncoder(TINY)
    with torch.no_grad():
        z = enc(torch.zeros(1, 4000))
    assert float(z.data.abs().max()) == 0.0  # bias-free conv


def test_encode_short_input():
    enc = ConvEncoder(TINY)
    from tsekit.errors import DataError

    with pytest.raises(DataError, match="shorter"):
        enc(torch.zeros(1, 39))


def test_encode_frames_match_enhancer(tiny_backbone):
    torch.manual_seed(1)
    enc = ConvEncoder(TINY)
    aie = AdaptiveInputEnhancer(
        AieConfig(fusion="fpm", source="multi_cnn", target_stride=20, channels=64),
        tiny_backbone.config,
    )
    for length in (16000, 9000, 7777):
        x = torch.randn(1, length)
        taps = tiny_backbone.forward_features(x, with_transformer=False)
        assert enc(x).frames == aie(taps).frames


# -- fusion -------------------------------------------------------------------


def test_fuse_concatenates_channels():
    a = FeatureMap(torch.zeros(1, 10, 256), stride=20)
    b = FeatureMap(torch.ones(1, 10, 256), stride=20)
    fused = fuse(a, b)
    assert fused.channels == 512
    assert fused.frames == 10


def test_fuse_rejects_mismatch():
    a = FeatureMap(torch.zeros(1, 10, 4), stride=20)
    with pytest.raises(ValueError, match="frame mismatch"):
        fuse(a, FeatureMap(torch.zeros(1, 11, 4), stride=20))
    with pytest.raises(ValueError, match="stride mismatch"):
        fuse(a, FeatureMap(torch.zeros(1, 10, 4), stride=40))


def test_zero_enhancer_features_still_defined():
    torch.manual_seed(0)
    cfg = TdsbConfig.tiny(fuse_ssl=True)
    extractor = TcnExtractor(cfg)
    z_y = FeatureMap(torch.rand(1, 50, 64), stride=20)
    h = FeatureMap(torch.zeros(1, 50, 64), stride=20)
    with torch.no_grad():
        out = extractor(fuse(z_y, h), torch.randn(1, 256))
    assert torch.isfinite(out.data).all()


# -- extractor -----------------------------------------------------------------


def test_mask_range_and_shape():
    torch.manual_seed(0)
    extractor = TcnExtractor(TINY)
    z = FeatureMap(torch.rand(2, 40, 64), stride=20)
    with torch.no_grad():
        mask = extractor.mask(z, torch.randn(2, 256))
    assert mask.shape == (2, 64, 40)
    assert float(mask.min()) >= 0.0 and float(mask.max()) <= 1.0


def test_conditioning_identity_when_mapped_to_ones():
    torch.manual_seed(0)
    extractor = TcnExtractor(TINY)
    with torch.no_grad():
        extractor.spk_map.weight.zero_()
        extractor.spk_map.bias.fill_(1.0)
    z = FeatureMap(torch.rand(1, 30, 64), stride=20)
    m1 = extractor.mask(z, torch.randn(1, 256))
    m2 = extractor.mask(z, torch.randn(1, 256))
    torch.testing.assert_close(m1, m2)  # embedding can no longer steer the mask


def test_conditioning_steers_by_default():
    torch.manual_seed(0)
    extractor = TcnExtractor(TINY)
    z = FeatureMap(torch.rand(1, 30, 64), stride=20)
    with torch.no_grad():
        m1 = extractor.mask(z, torch.full((1, 256), 0.5))
        m2 = extractor.mask(z, torch.full((1, 256), -0.5))
    assert float((m1 - m2).abs().max()) > 0


def test_all_ones_mask_passes_encoder_features_through():
    torch.manual_seed(0)
    extractor = TcnExtractor(TINY)
    with torch.no_grad():
        extractor.mask_conv[-1].weight.zero_()
        extractor.mask_conv[-1].bias.fill_(50.0)  # sigmoid -> 1.0 in float32
    z = FeatureMap(torch.rand(1, 30, 64), stride=20)
    out = extractor(z, torch.randn(1, 256))
    torch.testing.assert_close(out.data, z.data)


def test_embedding_dim_checked():
    extractor = TcnExtractor(TINY)
    z = FeatureMap(torch.rand(1, 30, 64), stride=20)
    with pytest.raises(ValueError, match="embedding"):
        extractor.mask(z, torch.randn(1, 17))


def test_mask_target_fused_variant():
    torch.manual_seed(0)
    cfg = TdsbConfig.tiny(fuse_ssl=True, mask_target="fused")
    extractor = TcnExtractor(cfg)
    z = FeatureMap(torch.rand(1, 30, 128), stride=20)
    out = extractor(z, torch.randn(1, 256))
    assert out.channels == 64  # projected back to encoder width


# -- decoder ---------------------------------------------------------------------


def test_decode_zeros_to_zeros_and_exact_length():
    torch.manual_seed(0)
    dec = ConvDecoder(TINY)
    with torch.no_grad():
        out = dec(torch.zeros(1, 64, 799), length=16000)
    assert out.shape == (1, 16000)
    assert float(out.abs().max()) == 0.0


@pytest.mark.parametrize("length", [16000, 15990, 7777])
def test_forward_length_contract(length):
    torch.manual_seed(0)
    model = _baseline_model()
    est = model(torch.randn(1, length), torch.randn(1, 8000))
    assert est.shape == (1, length)


def _baseline_model():
    torch.manual_seed(0)
    cfg = TdsbConfig.tiny(fuse_ssl=False)
    return TdSpeakerBeam(
        TdsbModelSpec(tdsb=cfg, spk_encoder_kind="tcn"),
        tcn_spk=TcnSpeakerEncoder(filters=32, hidden=64, n_blocks=2),
    )


def test_baseline_has_no_ssl_parameters():
    model = _baseline_model()
    names = [name for name, _ in model.named_parameters()]
    assert names  # non-empty inventory
    offending = [n for n in names if any(tag in n for tag in ("backbone", "aie", "mhfa"))]
    assert offending == []


def test_autoencoder_overfits_toy_signal():
    """Encoder/decoder pair alone can represent a waveform (> 20 dB SI-SDR)."""
    torch.manual_seed(0)
    cfg = TdsbConfig.tiny()
    enc, dec = ConvEncoder(cfg), ConvDecoder(cfg)
    t = np.arange(4000) / 16000.0
    x = (0.5 * np.sin(2 * np.pi * 220 * t) + 0.3 * np.sin(2 * np.pi * 473 * t)).astype("float32")
    target = torch.from_numpy(x).unsqueeze(0)
    opt = torch.optim.Adam(list(enc.parameters()) + list(dec.parameters()), lr=1e-3)
    for _ in range(400):
        recon = dec(enc(target).data.transpose(1, 2), length=4000)
        loss = torch.mean((recon - target) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        recon = dec(enc(target).data.transpose(1, 2), length=4000)
    assert si_sdr(x, recon.squeeze(0).numpy()) > 20.0


def test_different_enrollments_give_different_outputs(tiny_backbone):
    torch.manual_seed(0)
    cfg = TdsbConfig.tiny(fuse_ssl=False)
    mhfa = Mhfa(n_taps=5, feat_dim=128)
    model = TdSpeakerBeam(
        TdsbModelSpec(tdsb=cfg, spk_encoder_kind="mhfa"),
        enroll_backbone=tiny_backbone,
        mhfa=mhfa,
    )
    mixture = torch.randn(1, 8000)
    with torch.no_grad():
        out_a = model(mixture, torch.randn(1, 8000))
        out_b = model(mixture, torch.randn(1, 8000))
    assert float((out_a - out_b).abs().max()) > 0


def test_construction_contracts():
    cfg = TdsbConfig.tiny(fuse_ssl=True)
    with pytest.raises(ConfigError, match="mixture backbone"):
        TdSpeakerBeam(TdsbModelSpec(tdsb=cfg, spk_encoder_kind="tcn"), tcn_spk=TcnSpeakerEncoder())
    cfg2 = TdsbConfig.tiny(fuse_ssl=False)
    with pytest.raises(ConfigError, match="Mhfa"):
        TdSpeakerBeam(TdsbModelSpec(tdsb=cfg2, spk_encoder_kind="mhfa"))
