"""Target speech extraction with SSL backbones.

The package wires a CNN+Transformer speech backbone into two extraction
systems: a BLSTM mask estimator over layer-weighted features (with mean
pooled speaker conditioning), and a time-domain conv/TCN extractor whose
input is enriched by a top-down multi-resolution upsampling pyramid and
conditioned by an attentive multi-head speaker embedding.
"""

from .aggregation import LayerWeights, export_weights, weighted_sum
from .aie import AdaptiveInputEnhancer, AieConfig
from .audio import Waveform, read_wav, write_wav
from .backbone import (
    BackboneConfig,
    ConvLayerSpec,
    SslBackbone,
    build_backbone,
    export_checkpoint,
    frame_count,
    import_checkpoint,
)
from .build import build_model, load_model, save_model
from .config import RunConfig, ablation_grid, apply_overrides, config_hash, from_preset
from .datasim import (
    Manifest,
    MixtureSample,
    Utterance,
    build_manifest,
    mix,
    scan_corpus,
    simulate,
)
from .errors import ConfigError, DataError, NumericError
from .features import FeatureMap, LayerTaps
from .spk_encoder import Mhfa, MhfaConfig, TcnSpeakerEncoder
from .superb import SuperbConfig, SuperbTse
from .tdsb import TdsbConfig, TdsbModelSpec, TdSpeakerBeam, fuse
from .train_eval import (
    EvalReport,
    TrainConfig,
    Trainer,
    evaluate_samples,
    failure_rate,
    neg_si_sdr_loss,
    sdr,
    si_sdr,
    si_sdri,
)

__version__ = "0.1.0"
