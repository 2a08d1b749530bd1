import numpy as np
import pytest
import torch

from tsekit.backbone import BackboneConfig, SslBackbone
from tsekit.datasim import simulate
from tsekit.toydata import make_corpus


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """3 synthetic speakers x 3 one-second utterances."""
    root = tmp_path_factory.mktemp("corpus")
    return make_corpus(root, n_speakers=3, utts_per_speaker=3, duration=1.0, seed=0)


@pytest.fixture(scope="session")
def toy_dataset(toy_corpus, tmp_path_factory):
    """4 simulated 1 s mixtures with manifest, shared across tests."""
    out = tmp_path_factory.mktemp("mixtures")
    manifest = simulate(toy_corpus, out, n_mixtures=4, seed=7, split="train")
    return manifest, out


@pytest.fixture(scope="session")
def tiny_backbone():
    torch.manual_seed(0)
    return SslBackbone(BackboneConfig.tiny())


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
