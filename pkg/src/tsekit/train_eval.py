"""Losses, metrics, evaluation reports, and the training loop.

Metrics are plain numpy (float64) and clamped to +-60 dB for reporting; the
training objective is the same scale-invariant ratio as a differentiable
torch loss. SI-SNRi and SI-SDRi name the same scale-invariant quantity here.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.linalg import lstsq, toeplitz
from scipy.signal import fftconvolve

from .audio import ExternalMetric, Waveform, read_wav
from .checkpoint import load_archive, save_archive, state_to_arrays, load_state
from .datasim import Manifest, resolve_path
from .errors import ConfigError, DataError, NumericError

log = logging.getLogger(__name__)

CLAMP_DB = 60.0
FAILURE_THRESHOLD_DB = 1.0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def _as_pair(ref, est) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 1:
        raise ValueError(f"signals must be equal-length 1-D, got {ref.shape} vs {est.shape}")
    return ref, est


def si_sdr(ref, est, clamp_db: float = CLAMP_DB) -> float:
    """Scale-invariant source-to-distortion ratio in dB.

    alpha = <est, ref> / <ref, ref>; 10 log10(||alpha ref||^2 / ||alpha ref - est||^2),
    clamped to +-clamp_db for reporting stability.
    """
    ref, est = _as_pair(ref, est)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal is all zeros")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    num = float(np.dot(target, target))
    err = target - est
    den = float(np.dot(err, err))
    if num == 0.0:
        return -clamp_db
    if den == 0.0:
        return clamp_db
    return float(np.clip(10.0 * math.log10(num / den), -clamp_db, clamp_db))


def si_sdri(ref, est, mixture, clamp_db: float = CLAMP_DB) -> float:
    """Improvement of SI-SDR over the unprocessed mixture."""
    return si_sdr(ref, est, clamp_db) - si_sdr(ref, mixture, clamp_db)


def _projection_gram(ref: np.ndarray, taps: int) -> np.ndarray:
    """Exact Gram matrix of ref delayed by 0..taps-1, windowed to len(ref).

    The stationary (Toeplitz) autocorrelation over-counts terms that slide
    past the window end; subtracting those tail products per (lag, offset)
    makes the normal equations match the finite window exactly, so a purely
    delayed estimate projects with zero residual.
    """
    n = len(ref)
    full = fftconvolve(ref, ref[::-1])
    r = full[n - 1 : n - 1 + taps]
    gram = toeplitz(r)
    for d in range(taps):
        lo = max(n - taps + 1, 0)
        s = np.arange(lo, n - d)
        prod = ref[s] * ref[s + d]
        suffix = np.concatenate(([0.0], np.cumsum(prod[::-1])))
        offsets = np.arange(d + 1, taps)
        corrections = suffix[offsets - d]
        gram[offsets, offsets - d] -= corrections
        if d > 0:  # off-diagonal: mirror the correction; d == 0 IS the diagonal
            gram[offsets - d, offsets] -= corrections
    return gram


def sdr(ref, est, n_filter_taps: int | None = 512, clamp_db: float = CLAMP_DB) -> float:
    """BSS-eval-style SDR: the target is the least-squares projection of the
    estimate onto delayed copies of the reference (an FIR distortion filter
    of ``n_filter_taps`` taps). With ``n_filter_taps=None`` it degrades to
    plain SNR."""
    ref, est = _as_pair(ref, est)
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ValueError("reference signal is all zeros")
    if n_filter_taps:
        taps = int(min(n_filter_taps, len(ref)))
        gram = _projection_gram(ref, taps)
        cross = fftconvolve(est, ref[::-1])
        crosscorr = cross[len(ref) - 1 : len(ref) - 1 + taps]
        fir, *_ = lstsq(gram, crosscorr)  # SVD: tolerant of tonal (singular) refs
        target = fftconvolve(ref, fir)[: len(ref)]
    else:
        target = ref
    err = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(err, err))
    if num == 0.0:
        return -clamp_db
    if den == 0.0:
        return clamp_db
    return float(np.clip(10.0 * math.log10(num / den), -clamp_db, clamp_db))


def failure_rate(si_sdri_values, threshold_db: float = FAILURE_THRESHOLD_DB) -> float:
    """Percentage of samples whose SI-SDRi falls below the threshold."""
    values = list(si_sdri_values)
    if not values:
        raise DataError("failure rate of an empty result list is undefined")
    failures = sum(1 for v in values if v < threshold_db)
    return 100.0 * failures / len(values)


def neg_si_sdr_loss(
    est: torch.Tensor, ref: torch.Tensor, lengths: list[int] | None = None, eps: float = 1e-8
) -> torch.Tensor:
    """Differentiable negative SI-SDR, averaged over the batch.

    ``lengths`` restricts each sample to its true length (for padded batches).
    """
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch: est {tuple(est.shape)}, ref {tuple(ref.shape)}")
    if est.ndim == 1:
        est, ref = est.unsqueeze(0), ref.unsqueeze(0)
    losses = []
    for i in range(est.shape[0]):
        n = lengths[i] if lengths is not None else est.shape[-1]
        e, r = est[i, :n], ref[i, :n]
        alpha = torch.dot(e, r) / (torch.dot(r, r) + eps)
        target = alpha * r
        err = target - e
        ratio = (torch.dot(target, target) + eps) / (torch.dot(err, err) + eps)
        losses.append(-10.0 * torch.log10(ratio))
    return torch.stack(losses).mean()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class SampleEval:
    id: str
    si_sdr_in: float
    si_sdr_out: float
    si_sdri: float
    sdr: float
    extra: dict[str, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    samples: list[SampleEval]

    @property
    def mean_si_sdri(self) -> float:
        return float(np.mean([s.si_sdri for s in self.samples]))

    @property
    def mean_sdr(self) -> float:
        return float(np.mean([s.sdr for s in self.samples]))

    @property
    def fr_percent(self) -> float:
        return failure_rate([s.si_sdri for s in self.samples])

    def aggregates(self) -> dict[str, float]:
        out = {
            "mean_si_sdri": self.mean_si_sdri,
            "mean_sdr": self.mean_sdr,
            "fr_percent": self.fr_percent,
        }
        extras = {k for s in self.samples for k in s.extra}
        for key in sorted(extras):
            values = [s.extra[key] for s in self.samples if key in s.extra]
            out[f"mean_{key}"] = float(np.mean(values))
        return out

    def to_json(self, config_hash: str | None = None) -> str:
        doc = {
            "aggregates": self.aggregates(),
            "n_samples": len(self.samples),
            "samples": [
                {
                    "id": s.id,
                    "si_sdr_in": s.si_sdr_in,
                    "si_sdr_out": s.si_sdr_out,
                    "si_sdri": s.si_sdri,
                    "sdr": s.sdr,
                    **s.extra,
                }
                for s in self.samples
            ],
        }
        if config_hash is not None:
            doc["config_hash"] = config_hash
        return json.dumps(doc, indent=2, sort_keys=True)

    def save(self, out_dir: str | Path, config_hash: str | None = None) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(self.to_json(config_hash) + "\n")
        with open(out_dir / "per_sample.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "si_sdr_in", "si_sdr_out", "si_sdri", "sdr"])
            for s in self.samples:
                writer.writerow(
                    [s.id, f"{s.si_sdr_in:.4f}", f"{s.si_sdr_out:.4f}", f"{s.si_sdri:.4f}", f"{s.sdr:.4f}"]
                )


def export_scatter(baseline: EvalReport, proposed: EvalReport, path: str | Path) -> None:
    """Per-sample CSV pairing two systems' SI-SDRi for scatter plots."""
    proposed_by_id = {s.id: s for s in proposed.samples}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "si_sdri_baseline", "si_sdri_proposed"])
        for s in baseline.samples:
            other = proposed_by_id.get(s.id)
            if other is None:
                raise DataError(f"sample {s.id} missing from the proposed report")
            writer.writerow([s.id, f"{s.si_sdri:.4f}", f"{other.si_sdri:.4f}"])


@dataclass
class EvalSample:
    id: str
    mixture: Waveform
    reference: Waveform
    enrollment: Waveform
    mixture_path: Path
    reference_path: Path


def load_eval_samples(manifest: Manifest, root: str | Path) -> list[EvalSample]:
    samples = []
    for row in manifest.rows:
        mix_path = resolve_path(row.mixture_path, root)
        ref_path = resolve_path(row.source_paths[row.target_index], root)
        enroll_path = resolve_path(row.enrollment_path, root)
        samples.append(
            EvalSample(
                id=Path(row.mixture_path).stem,
                mixture=read_wav(mix_path),
                reference=read_wav(ref_path),
                enrollment=read_wav(enroll_path),
                mixture_path=mix_path,
                reference_path=ref_path,
            )
        )
    if not samples:
        raise DataError("manifest holds no rows")
    return samples


def model_extract_fn(model: torch.nn.Module):
    """Wrap a model as an extraction callable over evaluation samples."""

    def extract(sample: EvalSample) -> np.ndarray:
        model.eval()
        with torch.no_grad():
            est = model(
                torch.from_numpy(sample.mixture.data).unsqueeze(0),
                torch.from_numpy(sample.enrollment.data).unsqueeze(0),
            )
        return est.squeeze(0).cpu().numpy()

    return extract


def oracle_extract_fn(sample: EvalSample) -> np.ndarray:
    """Debug oracle: emits the reference itself (est := ref)."""
    return sample.reference.data


def passthrough_extract_fn(sample: EvalSample) -> np.ndarray:
    """Debug passthrough: emits the mixture unchanged (est := mix)."""
    return sample.mixture.data


def evaluate_samples(
    extract_fn,
    samples: list[EvalSample],
    sdr_taps: int | None = 512,
    external_metrics: list[ExternalMetric] | None = None,
    workdir: str | Path | None = None,
) -> EvalReport:
    """Run extraction over evaluation samples and score every row.

    ``extract_fn(sample: EvalSample) -> np.ndarray``. External metrics (if
    any) receive reference/estimate WAV paths; estimates are materialized
    under ``workdir`` only in that case.
    """
    from .audio import write_wav

    results = []
    for sample in samples:
        est = np.asarray(extract_fn(sample), dtype=np.float64)
        ref = sample.reference.data.astype(np.float64)
        mixd = sample.mixture.data.astype(np.float64)
        if est.shape != ref.shape:
            raise DataError(
                f"estimate for {sample.id} has {est.shape[-1]} samples, reference {ref.shape[-1]}"
            )
        sdr_in = si_sdr(ref, mixd)
        sdr_out = si_sdr(ref, est)
        record = SampleEval(
            id=sample.id,
            si_sdr_in=sdr_in,
            si_sdr_out=sdr_out,
            si_sdri=sdr_out - sdr_in,
            sdr=sdr(ref, est, n_filter_taps=sdr_taps),
        )
        if external_metrics:
            if workdir is None:
                raise ConfigError("external metrics need a workdir for estimate WAVs")
            est_path = Path(workdir) / f"{sample.id}_est.wav"
            write_wav(est_path, Waveform(est.astype(np.float32), sample.mixture.sample_rate))
            for metric in external_metrics:
                record.extra[metric.name] = metric(sample.reference_path, est_path)
        results.append(record)
    return EvalReport(samples=results)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr_main: float = 1e-3
    lr_finetune: float = 2e-5
    freeze_backbone: bool = True
    max_epochs: int = 20
    max_steps: int | None = None
    batch_size: int = 4
    clip_norm: float = 5.0
    seed: int = 0
    stop_train_sisdri: float | None = None

    def __post_init__(self):
        if not self.lr_finetune < self.lr_main:
            raise ConfigError(
                f"lr_finetune ({self.lr_finetune}) must be below lr_main ({self.lr_main})"
            )


@dataclass
class TrainingSample:
    id: str
    mixture: np.ndarray
    reference: np.ndarray
    enrollment: np.ndarray


def load_training_set(manifest: Manifest, root: str | Path) -> list[TrainingSample]:
    samples = []
    for row in manifest.rows:
        samples.append(
            TrainingSample(
                id=Path(row.mixture_path).stem,
                mixture=read_wav(resolve_path(row.mixture_path, root)).data,
                reference=read_wav(resolve_path(row.source_paths[row.target_index], root)).data,
                enrollment=read_wav(resolve_path(row.enrollment_path, root)).data,
            )
        )
    if not samples:
        raise DataError("manifest holds no rows")
    return samples


def _pad_stack(arrays: list[np.ndarray]) -> tuple[torch.Tensor, list[int]]:
    lengths = [len(a) for a in arrays]
    width = max(lengths)
    out = np.zeros((len(arrays), width), dtype=np.float32)
    for i, a in enumerate(arrays):
        out[i, : len(a)] = a
    return torch.from_numpy(out), lengths


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    log_path: Path
    steps: int
    epochs: int
    best_dev_si_sdri: float
    final_train_si_sdri: float
    loss_history: list[float]


class Trainer:
    """Adam training with per-group learning rates, freeze masking, NaN
    diagnostics, best-on-dev checkpointing, and epoch-boundary resume.

    When the backbone is trainable, every parameter group drops to the
    fine-tune learning rate (single-stage fine-tuning after restore-from-best).
    """

    def __init__(
        self,
        model: torch.nn.Module,
        train_samples: list[TrainingSample],
        dev_samples: list[TrainingSample] | None,
        cfg: TrainConfig,
        out_dir: str | Path,
        run_meta: dict | None = None,
    ):
        if not train_samples:
            raise DataError("training set is empty")
        self.model = model
        self.train_samples = train_samples
        self.dev_samples = dev_samples or train_samples
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.run_meta = run_meta or {}

        model.set_backbone_frozen(cfg.freeze_backbone)
        groups = model.parameter_groups()
        if cfg.freeze_backbone or not groups["backbone"]:
            param_groups = [{"params": groups["main"], "lr": cfg.lr_main}]
        else:
            param_groups = [
                {"params": groups["main"], "lr": cfg.lr_finetune},
                {"params": groups["backbone"], "lr": cfg.lr_finetune},
            ]
        self.optimizer = torch.optim.Adam(param_groups)

        self.step = 0
        self.epoch = 0
        self.best_dev = -math.inf
        self.loss_history: list[float] = []
        self._log_rows: list[tuple] = []
        self._baseline_si_sdr = float(
            np.mean([si_sdr(s.reference, s.mixture) for s in train_samples])
        )

    # -- checkpoint plumbing ---------------------------------------------------

    def _save(self, path: Path, with_optimizer: bool) -> None:
        tensors = state_to_arrays(self.model)
        meta = dict(self.run_meta)
        meta["train_state"] = {
            "step": self.step,
            "epoch": self.epoch,
            "best_dev": self.best_dev,
            "freeze_backbone": self.cfg.freeze_backbone,
        }
        if with_optimizer:
            opt_state = self.optimizer.state_dict()
            for idx, state in opt_state["state"].items():
                for key, value in state.items():
                    tensors[f"optstate/{idx}/{key}"] = (
                        value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
                    )
            meta["optimizer_groups"] = [
                {k: v for k, v in g.items() if k != "params"} for g in opt_state["param_groups"]
            ]
            meta["optimizer_group_sizes"] = [len(g["params"]) for g in opt_state["param_groups"]]
            tensors["rng/torch"] = torch.get_rng_state().numpy()
        save_archive(path, tensors, meta)

    def resume(self, path: str | Path) -> None:
        """Restore model, optimizer moments, counters and RNG from last.ckpt."""
        tensors, meta = load_archive(path)
        model_tensors = {
            k: v for k, v in tensors.items() if not k.startswith(("optstate/", "rng/"))
        }
        load_state(self.model, model_tensors)
        state = meta.get("train_state", {})
        self.step = int(state.get("step", 0))
        self.epoch = int(state.get("epoch", 0))
        self.best_dev = float(state.get("best_dev", -math.inf))

        if "optimizer_group_sizes" in meta:
            opt_state: dict = {"state": {}, "param_groups": []}
            for key, value in tensors.items():
                if not key.startswith("optstate/"):
                    continue
                _, idx, name = key.split("/", 2)
                opt_state["state"].setdefault(int(idx), {})[name] = torch.from_numpy(value.copy())
            offset = 0
            for group_meta, size in zip(meta["optimizer_groups"], meta["optimizer_group_sizes"]):
                group = dict(group_meta)
                group["params"] = list(range(offset, offset + size))
                opt_state["param_groups"].append(group)
                offset += size
            self.optimizer.load_state_dict(opt_state)
        if "rng/torch" in tensors:
            torch.set_rng_state(torch.from_numpy(tensors["rng/torch"].copy()))

    # -- steps -----------------------------------------------------------------

    def _batches(self, epoch: int):
        rng = np.random.default_rng([self.cfg.seed, epoch])
        order = rng.permutation(len(self.train_samples))
        for start in range(0, len(order), self.cfg.batch_size):
            yield [self.train_samples[i] for i in order[start : start + self.cfg.batch_size]]

    def _train_step(self, batch: list[TrainingSample]) -> float:
        self.model.train()
        mix, lengths = _pad_stack([s.mixture for s in batch])
        ref, _ = _pad_stack([s.reference for s in batch])
        enroll, _ = _pad_stack([s.enrollment for s in batch])
        est = self.model(mix, enroll)
        loss = neg_si_sdr_loss(est, ref, lengths)
        if not torch.isfinite(loss):
            raise NumericError(self._nan_diagnostics(loss))
        self.optimizer.zero_grad()
        loss.backward()
        if self.cfg.clip_norm:
            torch.nn.utils.clip_grad_norm_(
                (p for g in self.optimizer.param_groups for p in g["params"]), self.cfg.clip_norm
            )
        self.optimizer.step()
        return float(loss.detach())

    def _nan_diagnostics(self, loss) -> str:
        grad_norms = []
        for i, group in enumerate(self.optimizer.param_groups):
            norms = [float(p.grad.norm()) for p in group["params"] if p.grad is not None]
            grad_norms.append(
                f"group{i}(lr={group['lr']:g}, grad_norm={max(norms) if norms else 0.0:.3e})"
            )
        return (
            f"non-finite loss {loss} at step {self.step} (epoch {self.epoch}); " + ", ".join(grad_norms)
        )

    def _dev_si_sdri(self) -> float:
        self.model.eval()
        scores = []
        with torch.no_grad():
            for s in self.dev_samples:
                est = self.model(
                    torch.from_numpy(s.mixture).unsqueeze(0),
                    torch.from_numpy(s.enrollment).unsqueeze(0),
                )
                est = est.squeeze(0).numpy()
                scores.append(si_sdri(s.reference, est, s.mixture))
        return float(np.mean(scores))

    def train_si_sdri(self) -> float:
        """Mean improvement on the training set with the current parameters."""
        self.model.eval()
        scores = []
        with torch.no_grad():
            for s in self.train_samples:
                est = self.model(
                    torch.from_numpy(s.mixture).unsqueeze(0),
                    torch.from_numpy(s.enrollment).unsqueeze(0),
                ).squeeze(0)
                scores.append(si_sdr(s.reference, est.numpy()))
        return float(np.mean(scores)) - self._baseline_si_sdr

    # -- loop -------------------------------------------------------------------

    def run(self) -> TrainResult:
        torch.manual_seed(self.cfg.seed)
        best_path = self.out_dir / "best.ckpt"
        last_path = self.out_dir / "last.ckpt"
        log_path = self.out_dir / "log.csv"
        dev_log_path = self.out_dir / "dev.csv"

        stop = False
        start_epoch = self.epoch
        for epoch in range(start_epoch, self.cfg.max_epochs):
            self.epoch = epoch
            for batch in self._batches(epoch):
                loss = self._train_step(batch)
                self.step += 1
                self.loss_history.append(loss)
                self._log_rows.append((self.step, epoch, loss))
                if self.cfg.max_steps is not None and self.step >= self.cfg.max_steps:
                    stop = True
                if self.cfg.stop_train_sisdri is not None and (
                    self.step % 10 == 0 or stop
                ):
                    if self.train_si_sdri() > self.cfg.stop_train_sisdri:
                        stop = True
                if stop:
                    break

            dev_score = self._dev_si_sdri()
            with open(dev_log_path, "a", newline="") as fh:
                csv.writer(fh).writerow([self.epoch, f"{dev_score:.6f}"])
            if dev_score > self.best_dev:
                self.best_dev = dev_score
                self._save(best_path, with_optimizer=False)
            self.epoch = epoch + 1
            self._save(last_path, with_optimizer=True)
            log.info("epoch %d: step %d, dev SI-SDRi %.3f dB", epoch, self.step, dev_score)
            if stop:
                break

        if not best_path.exists():  # zero epochs requested
            self._save(best_path, with_optimizer=False)
            self._save(last_path, with_optimizer=True)
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "epoch", "loss"])
            for row in self._log_rows:
                writer.writerow([row[0], row[1], f"{row[2]:.6f}"])
        return TrainResult(
            best_path=best_path,
            last_path=last_path,
            log_path=log_path,
            steps=self.step,
            epochs=self.epoch,
            best_dev_si_sdri=self.best_dev,
            final_train_si_sdri=self.train_si_sdri(),
            loss_history=self.loss_history,
        )
