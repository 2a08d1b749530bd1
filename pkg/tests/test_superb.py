import numpy as np
import pytest
import torch

from tsekit.errors import ConfigError
from tsekit.features import FeatureMap, LayerTaps
from tsekit.superb import SuperbConfig, SuperbTse, StftFrontend


@pytest.fixture(scope="module")
def model(tiny_backbone):
    torch.manual_seed(4)
    return SuperbTse(tiny_backbone, SuperbConfig.tiny())


def test_spectrogram_geometry():
    cfg = SuperbConfig()
    assert cfg.bins == 513
    frontend = StftFrontend(cfg)
    spec = frontend.stft(torch.randn(1, 16000))
    assert spec.bins == 513
    assert spec.data.is_complex()


@pytest.mark.parametrize("n_hops", [10, 50])
def test_istft_reconstruction(n_hops):
    cfg = SuperbConfig()
    frontend = StftFrontend(cfg)
    length = n_hops * cfg.hop
    x = torch.sin(torch.linspace(0, 300.0, length)).unsqueeze(0)
    recon = frontend.istft(frontend.stft(x), length)
    rel = float((recon - x).norm() / x.norm())
    assert rel < 1e-4


def _const_taps(value, frames, dim=128, n=5):
    maps = tuple(FeatureMap(torch.full((1, frames, dim), float(value) * (i + 1)), stride=320) for i in range(n))
    return LayerTaps(cnn=(), trf=maps)


def test_spk_embedding_length_invariant_for_constant_features(model):
    short = model.speaker_embedding_from_taps(_const_taps(0.3, frames=5))
    long = model.speaker_embedding_from_taps(_const_taps(0.3, frames=50))
    torch.testing.assert_close(short, long, atol=1e-6, rtol=1e-6)
    assert short.shape == (1, model.cfg.spk_dim)


def test_spk_embedding_permutation_invariant(model, rng):
    data = torch.from_numpy(rng.standard_normal((1, 20, 128)).astype("float32"))
    taps = LayerTaps(cnn=(), trf=tuple(FeatureMap(data * (i + 1), stride=320) for i in range(5)))
    perm = torch.randperm(20)
    permuted = LayerTaps(
        cnn=(), trf=tuple(FeatureMap(t.data[:, perm], stride=t.stride) for t in taps.trf)
    )
    torch.testing.assert_close(
        model.speaker_embedding_from_taps(taps),
        model.speaker_embedding_from_taps(permuted),
        atol=1e-5,
        rtol=1e-5,
    )


def test_mask_range_and_shape(model, rng):
    taps = LayerTaps(
        cnn=(),
        trf=tuple(
            FeatureMap(
                torch.from_numpy(rng.standard_normal((1, 49, 128)).astype("float32")), stride=320
            )
            for _ in range(5)
        ),
    )
    with torch.no_grad():
        mask = model.estimate_mask(taps, torch.randn(1, model.cfg.spk_dim))
    assert mask.shape == (1, 49, 513)
    assert float(mask.min()) >= 0.0 and float(mask.max()) <= 1.0


def test_all_ones_embedding_is_identity_on_conditioning(model, rng):
    """Multiplying by an all-ones embedding leaves the conditioned stream as
    the bare projection of the first BLSTM output."""
    data = torch.from_numpy(rng.standard_normal((1, 30, 128)).astype("float32"))
    feats_taps = LayerTaps(cnn=(), trf=tuple(FeatureMap(data, stride=320) for _ in range(5)))
    from tsekit.aggregation import weighted_sum

    feats = weighted_sum(list(feats_taps.trf), model.extractor_weights).data
    h1, _ = model.blstm1(feats)
    projected = model.cond_proj(h1)
    ones = torch.ones(1, model.cfg.spk_dim)
    torch.testing.assert_close(projected * ones.unsqueeze(1), projected)


def test_zero_embedding_annihilates_second_blstm_input(model, rng):
    captured = {}

    def hook(module, args):
        captured["x"] = args[0].detach().clone()

    handle = model.later_blstm[0].register_forward_pre_hook(hook)
    try:
        taps = LayerTaps(
            cnn=(),
            trf=tuple(
                FeatureMap(
                    torch.from_numpy(rng.standard_normal((1, 25, 128)).astype("float32")),
                    stride=320,
                )
                for _ in range(5)
            ),
        )
        with torch.no_grad():
            mask = model.estimate_mask(taps, torch.zeros(1, model.cfg.spk_dim))
    finally:
        handle.remove()
    assert float(captured["x"].abs().max()) == 0.0
    assert float(mask.min()) >= 0.0 and float(mask.max()) <= 1.0


def test_forced_ones_mask_reconstructs_mixture(model):
    with torch.no_grad():
        saved_w = model.mask_head.weight.clone()
        saved_b = model.mask_head.bias.clone()
        model.mask_head.weight.zero_()
        model.mask_head.bias.fill_(50.0)  # sigmoid saturates at 1.0
    try:
        torch.manual_seed(0)
        mixture = 0.5 * torch.sin(torch.linspace(0, 700.0, 16000)).unsqueeze(0)
        with torch.no_grad():
            est = model(mixture, torch.randn(1, 8000))
        rel = float((est - mixture).norm() / mixture.norm())
        assert rel < 1e-4
    finally:
        with torch.no_grad():
            model.mask_head.weight.copy_(saved_w)
            model.mask_head.bias.copy_(saved_b)


def test_forced_zeros_mask_silences(model):
    with torch.no_grad():
        saved_b = model.mask_head.bias.clone()
        saved_w = model.mask_head.weight.clone()
        model.mask_head.weight.zero_()
        model.mask_head.bias.fill_(-50.0)
    try:
        mixture = torch.randn(1, 16000)
        with torch.no_grad():
            est = model(mixture, torch.randn(1, 8000))
        assert float(est.abs().max()) < 1e-6
    finally:
        with torch.no_grad():
            model.mask_head.bias.copy_(saved_b)
            model.mask_head.weight.copy_(saved_w)


@pytest.mark.parametrize("length", [16000, 12345, 8000, 50009])
def test_length_preserved_exactly(model, length):
    with torch.no_grad():
        est = model(torch.randn(1, length), torch.randn(1, 8000))
    assert est.shape == (1, length)


def test_mask_crop_tolerance(model):
    spec = model.frontend.stft(torch.randn(1, 16000))
    bad_mask = torch.rand(1, spec.frames - 5, 513)
    with pytest.raises(ValueError, match="mismatch"):
        model.apply_mask(spec, bad_mask)


def test_backbone_stays_frozen(model):
    assert all(not p.requires_grad for p in model.backbone.parameters())
    with pytest.raises(ConfigError):
        model.set_backbone_frozen(False)


def test_superb_config_validation():
    with pytest.raises(ConfigError, match="window"):
        SuperbConfig(window=2048, fft_size=1024)
    with pytest.raises(ConfigError, match="BLSTM"):
        SuperbConfig(blstm_layers=1)
