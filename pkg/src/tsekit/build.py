"""Assemble models from a RunConfig, and rebuild them from checkpoints."""

from __future__ import annotations

from pathlib import Path

import torch
import torch.nn as nn

from .aie import AdaptiveInputEnhancer, AieConfig
from .backbone import BackboneConfig, SslBackbone
from .checkpoint import load_archive, load_state, save_state
from .config import RunConfig, config_hash, from_dict, to_dict
from .errors import ConfigError, DataError
from .spk_encoder import Mhfa, MhfaConfig, TcnSpeakerEncoder
from .superb import SuperbConfig, SuperbTse
from .tdsb import TdsbConfig, TdsbModelSpec, TdSpeakerBeam


def _make_backbone(cfg: RunConfig) -> SslBackbone:
    backbone = SslBackbone(BackboneConfig.from_preset(cfg.backbone.preset))
    if cfg.backbone.checkpoint:
        load_state(backbone, cfg.backbone.checkpoint, name_map=cfg.backbone.name_map or None)
    return backbone


def build_model(cfg: RunConfig) -> nn.Module:
    """Construct the configured system with seed-reproducible initialization."""
    cfg.validate()
    torch.manual_seed(cfg.train.seed)

    if cfg.setup == "superb":
        backbone = _make_backbone(cfg)
        superb_cfg = SuperbConfig(
            blstm_layers=cfg.superb.blstm_layers,
            blstm_dim=cfg.superb.blstm_dim,
            spk_dim=cfg.superb.spk_dim,
            fft_size=cfg.superb.fft_size,
            window=cfg.superb.window,
            hop=cfg.superb.hop,
        )
        return SuperbTse(backbone, superb_cfg)

    tdsb_cfg = TdsbConfig(
        enc_filters=cfg.tdsb.enc_filters,
        enc_kernel=cfg.tdsb.enc_kernel,
        enc_stride=cfg.tdsb.enc_stride,
        bottleneck=cfg.tdsb.bottleneck,
        hidden=cfg.tdsb.hidden,
        tcn_kernel=cfg.tdsb.tcn_kernel,
        blocks_per_repeat=cfg.tdsb.blocks_per_repeat,
        repeats=cfg.tdsb.repeats,
        spk_embed_dim=cfg.spk_encoder.embed_dim,
        fuse_ssl=cfg.tdsb.fuse_ssl,
        aie_channels=cfg.aie.channels,
        mask_target=cfg.tdsb.mask_target,
    )
    spec = TdsbModelSpec(
        tdsb=tdsb_cfg,
        spk_encoder_kind=cfg.spk_encoder.kind,
        share_backbone=cfg.tdsb.share_backbone,
    )

    mixture_backbone = None
    aie = None
    if tdsb_cfg.fuse_ssl:
        mixture_backbone = _make_backbone(cfg)
        aie = AdaptiveInputEnhancer(
            AieConfig(
                fusion=cfg.aie.fusion,
                source=cfg.aie.source,
                target_stride=cfg.tdsb.enc_stride,
                channels=cfg.aie.channels,
            ),
            mixture_backbone.config,
        )

    mhfa = None
    tcn_spk = None
    enroll_backbone = None
    if cfg.spk_encoder.kind == "mhfa":
        if cfg.tdsb.share_backbone:
            if mixture_backbone is None:
                raise ConfigError("tdsb.share_backbone needs tdsb.fuse_ssl=true")
            spk_backbone_cfg = mixture_backbone.config
        else:
            enroll_backbone = _make_backbone(cfg)
            spk_backbone_cfg = enroll_backbone.config
        mhfa = Mhfa(
            n_taps=spk_backbone_cfg.n_transformer_blocks + 1,
            feat_dim=spk_backbone_cfg.model_dim,
            cfg=MhfaConfig(
                n_heads=cfg.spk_encoder.n_heads,
                key_dim=cfg.spk_encoder.key_dim,
                value_dim=cfg.spk_encoder.value_dim,
                embed_dim=cfg.spk_encoder.embed_dim,
            ),
        )
    elif cfg.spk_encoder.kind == "tcn":
        tcn_spk = TcnSpeakerEncoder(
            filters=cfg.spk_encoder.tcn_filters,
            hidden=cfg.spk_encoder.tcn_hidden,
            n_blocks=cfg.spk_encoder.tcn_blocks,
            embed_dim=cfg.spk_encoder.embed_dim,
        )
    else:
        raise ConfigError(f"unknown spk_encoder.kind '{cfg.spk_encoder.kind}'")

    return TdSpeakerBeam(
        spec,
        mixture_backbone=mixture_backbone,
        enroll_backbone=enroll_backbone,
        aie=aie,
        mhfa=mhfa,
        tcn_spk=tcn_spk,
    )


def checkpoint_meta(cfg: RunConfig) -> dict:
    return {"kind": cfg.setup, "config": to_dict(cfg), "config_hash": config_hash(cfg)}


def save_model(model: nn.Module, cfg: RunConfig, path: str | Path) -> None:
    save_state(model, path, meta=checkpoint_meta(cfg))


def load_model(path: str | Path) -> tuple[nn.Module, RunConfig]:
    """Rebuild the model recorded in a checkpoint and load its weights."""
    tensors, meta = load_archive(path)
    if "config" not in meta:
        raise DataError(f"checkpoint {path} does not embed a run config")
    cfg = from_dict(meta["config"])
    model = build_model(cfg)
    model_tensors = {k: v for k, v in tensors.items() if not k.startswith(("optstate/", "rng/"))}
    load_state(model, model_tensors)
    return model, cfg
