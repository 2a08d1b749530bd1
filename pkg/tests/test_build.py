import pytest
import torch

from tsekit.build import build_model
from tsekit.config import from_preset
from tsekit.errors import ConfigError


def test_full_preset_tdsb_builds_and_forwards():
    cfg = from_preset("full", "tdsb")
    model = build_model(cfg)
    assert model.mixture_backbone.config.model_dim == 768
    assert model.aie.cfg.channels == 256
    assert model.extractor.in_width == 512  # encoder 256 + enhancer 256
    model.eval()
    with torch.no_grad():
        est = model(torch.randn(1, 8000), torch.randn(1, 8000))
    assert est.shape == (1, 8000)


def test_full_preset_superb_builds_and_forwards():
    cfg = from_preset("full", "superb")
    model = build_model(cfg)
    assert model.cfg.blstm_dim == 512
    assert model.cfg.spk_dim == 512
    model.eval()
    with torch.no_grad():
        est = model(torch.randn(1, 8000), torch.randn(1, 8000))
    assert est.shape == (1, 8000)


def test_mhfa_without_fusion_builds():
    cfg = from_preset("tiny", "tdsb")
    cfg.tdsb.fuse_ssl = False
    cfg.spk_encoder.kind = "mhfa"
    model = build_model(cfg)
    assert model.aie is None and model.mixture_backbone is None
    assert model.enroll_backbone is not None
    est = model(torch.randn(1, 8000), torch.randn(1, 8000))
    assert est.shape == (1, 8000)


def test_share_backbone_requires_fusion():
    cfg = from_preset("tiny", "tdsb")
    cfg.tdsb.fuse_ssl = False
    cfg.tdsb.share_backbone = True
    with pytest.raises(ConfigError, match="fuse_ssl"):
        build_model(cfg)


def test_seeded_build_is_reproducible():
    cfg = from_preset("tiny", "tdsb")
    a = build_model(cfg)
    b = build_model(cfg)
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name
