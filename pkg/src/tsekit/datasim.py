"""Desk-scale two-speaker mixture simulation with enrollment utterances.

Corpus layout: ``<corpus>/<speaker_id>/*.wav`` (mono PCM or float WAV).
Outputs: mixture/source WAV files plus a diff-friendly manifest CSV and a
``manifest.json`` sidecar recording seed, split and gain policy.

Mixing is min-length (truncate to the shorter source) so references stay
aligned sample-for-sample with the mixture. Every row's randomness is
derived from (seed, row_index), so rows can be generated in any order, or in
parallel, without changing the result.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav, write_wav
from .errors import DataError

log = logging.getLogger(__name__)

MANIFEST_HEADER = (
    "mixture_path",
    "source1_path",
    "source2_path",
    "speaker1",
    "speaker2",
    "enrollment_path",
    "target_index",
)

CLIP_PEAK = 0.9


@dataclass(frozen=True)
class Utterance:
    path: Path
    speaker_id: str
    duration: float
    sample_rate: int


@dataclass(frozen=True)
class MixtureSample:
    mixture_path: str
    source_paths: tuple[str, str]
    speaker_ids: tuple[str, str]
    enrollment_path: str
    target_index: int

    def __post_init__(self):
        if self.target_index not in (0, 1):
            raise DataError(f"target_index must be 0 or 1, got {self.target_index}")
        if self.speaker_ids[0] == self.speaker_ids[1]:
            raise DataError(f"mixture pairs the same speaker twice: {self.speaker_ids[0]}")
        if self.enrollment_path == self.source_paths[self.target_index]:
            raise DataError("enrollment must differ from the in-mixture target utterance")

    @property
    def target_speaker(self) -> str:
        return self.speaker_ids[self.target_index]


@dataclass
class Manifest:
    rows: list[MixtureSample]
    seed: int
    split: str

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_HEADER)
            for row in self.rows:
                writer.writerow(
                    [
                        row.mixture_path,
                        row.source_paths[0],
                        row.source_paths[1],
                        row.speaker_ids[0],
                        row.speaker_ids[1],
                        row.enrollment_path,
                        row.target_index,
                    ]
                )

    @classmethod
    def load(cls, path: str | Path, seed: int = -1, split: str = "unknown") -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest not found: {path}")
        sidecar = path.parent / "manifest.json"
        if sidecar.exists():
            info = json.loads(sidecar.read_text())
            seed = info.get("seed", seed)
            split = info.get("split", split)
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader, ()))
            if header != MANIFEST_HEADER:
                raise DataError(
                    f"manifest {path} has unexpected header {header}, want {MANIFEST_HEADER}"
                )
            for record in reader:
                if len(record) != len(MANIFEST_HEADER):
                    raise DataError(f"manifest row has {len(record)} fields: {record}")
                rows.append(
                    MixtureSample(
                        mixture_path=record[0],
                        source_paths=(record[1], record[2]),
                        speaker_ids=(record[3], record[4]),
                        enrollment_path=record[5],
                        target_index=int(record[6]),
                    )
                )
        return cls(rows=rows, seed=seed, split=split)


def resolve_path(path_str: str, root: str | Path) -> Path:
    """Manifest paths are stored relative to the manifest directory."""
    p = Path(path_str)
    return p if p.is_absolute() else Path(root) / p


def scan_corpus(corpus_dir: str | Path, min_duration: float = 1.0) -> list[Utterance]:
    """Collect utterances from ``<corpus>/<speaker_id>/*.wav``.

    Unreadable or multichannel files are skipped with a logged warning;
    an empty result is an error.
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise DataError(f"corpus directory does not exist: {corpus_dir}")
    utterances: list[Utterance] = []
    skipped = 0
    for wav_path in sorted(corpus_dir.glob("*/*.wav")):
        speaker_id = wav_path.parent.name
        try:
            wav = read_wav(wav_path)
        except DataError as exc:
            skipped += 1
            log.warning("skipping %s: %s", wav_path, exc)
            continue
        if wav.duration < min_duration:
            continue
        utterances.append(
            Utterance(
                path=wav_path,
                speaker_id=speaker_id,
                duration=wav.duration,
                sample_rate=wav.sample_rate,
            )
        )
    if skipped:
        log.warning("skipped %d unreadable/multichannel files", skipped)
    if not utterances:
        raise DataError(f"no utterances found under {corpus_dir} (min_duration={min_duration}s)")
    return utterances


@dataclass
class MixResult:
    """A mixture plus its gained-and-rescaled references.

    mixture == scale * (gained source a + gained source b); the same scale is
    applied to the stored references so SI-SDR targets stay consistent.
    """

    mixture: Waveform
    sources: tuple[Waveform, Waveform]
    scale: float


def mix(
    a: Waveform,
    b: Waveform,
    gain_db_a: float = 0.0,
    gain_db_b: float = 0.0,
) -> MixResult:
    """Min-length additive mixing with joint peak normalization.

    Signals are truncated to the shorter length, scaled by their gains, and
    summed. If the sum would clip, mixture and references are jointly scaled
    to a peak of CLIP_PEAK (SI-SDR is scale invariant, so this is lossless
    for evaluation).
    """
    if a.sample_rate != b.sample_rate:
        raise DataError(f"sample-rate mismatch: {a.sample_rate} vs {b.sample_rate}")
    n = min(len(a), len(b))
    ga = a.data[:n] * np.float32(10.0 ** (gain_db_a / 20.0))
    gb = b.data[:n] * np.float32(10.0 ** (gain_db_b / 20.0))
    mixture = ga + gb
    peak = float(np.max(np.abs(mixture))) if n else 0.0
    scale = np.float32(CLIP_PEAK / peak) if peak > CLIP_PEAK else np.float32(1.0)
    sr = a.sample_rate
    return MixResult(
        mixture=Waveform(mixture * scale, sr),
        sources=(Waveform(ga * scale, sr), Waveform(gb * scale, sr)),
        scale=float(scale),
    )


@dataclass(frozen=True)
class PlannedRow:
    """A manifest row plus the corpus utterances that realize it."""

    sample: MixtureSample
    source_utts: tuple[Utterance, Utterance]
    gains_db: tuple[float, float]


def _row_rng(seed: int, row_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, row_index])


def plan_rows(
    utterances: list[Utterance],
    seed: int,
    n_mixtures: int,
    split: str = "train",
    gain_jitter_db: float = 0.0,
) -> list[PlannedRow]:
    """Plan ``n_mixtures`` two-speaker rows with disjoint enrollments.

    Deterministic under a fixed seed; target speakers are drawn only from
    speakers owning >= 2 utterances, so an enrollment distinct from the
    in-mixture utterance always exists.
    """
    by_speaker: dict[str, list[Utterance]] = {}
    for utt in sorted(utterances, key=lambda u: str(u.path)):
        by_speaker.setdefault(utt.speaker_id, []).append(utt)
    speakers = sorted(by_speaker)
    if len(speakers) < 2:
        raise DataError(f"need >= 2 speakers to build mixtures, corpus has {len(speakers)}")
    eligible_targets = [s for s in speakers if len(by_speaker[s]) >= 2]
    if not eligible_targets:
        raise DataError("no speaker has >= 2 utterances (one for source, one for enrollment)")

    planned = []
    for i in range(n_mixtures):
        rng = _row_rng(seed, i)
        target_spk = eligible_targets[rng.integers(len(eligible_targets))]
        others = [s for s in speakers if s != target_spk]
        interferer_spk = others[rng.integers(len(others))]
        target_utts = by_speaker[target_spk]
        target_utt = target_utts[rng.integers(len(target_utts))]
        enroll_pool = [u for u in target_utts if u.path != target_utt.path]
        enroll_utt = enroll_pool[rng.integers(len(enroll_pool))]
        interferer_utts = by_speaker[interferer_spk]
        interferer_utt = interferer_utts[rng.integers(len(interferer_utts))]
        target_index = int(rng.integers(2))
        if gain_jitter_db > 0:
            gains = (
                float(rng.uniform(-gain_jitter_db, gain_jitter_db)),
                float(rng.uniform(-gain_jitter_db, gain_jitter_db)),
            )
        else:
            gains = (0.0, 0.0)

        pair: list[Utterance] = [interferer_utt, interferer_utt]
        pair[target_index] = target_utt
        pair[1 - target_index] = interferer_utt
        spk_pair = [interferer_spk, interferer_spk]
        spk_pair[target_index] = target_spk
        spk_pair[1 - target_index] = interferer_spk

        stem = f"{split}_{i:06d}"
        planned.append(
            PlannedRow(
                sample=MixtureSample(
                    mixture_path=f"mix/{stem}.wav",
                    source_paths=(f"s1/{stem}.wav", f"s2/{stem}.wav"),
                    speaker_ids=(spk_pair[0], spk_pair[1]),
                    enrollment_path=str(enroll_utt.path.resolve()),
                    target_index=target_index,
                ),
                source_utts=(pair[0], pair[1]),
                gains_db=gains,
            )
        )
    return planned


def build_manifest(
    utterances: list[Utterance],
    seed: int,
    n_mixtures: int,
    split: str = "train",
) -> Manifest:
    planned = plan_rows(utterances, seed=seed, n_mixtures=n_mixtures, split=split)
    return Manifest(rows=[p.sample for p in planned], seed=seed, split=split)


def simulate(
    corpus_dir: str | Path,
    out_dir: str | Path,
    n_mixtures: int,
    seed: int,
    split: str = "train",
    min_duration: float = 1.0,
    gain_jitter_db: float = 0.0,
) -> Manifest:
    """Scan, plan, and materialize mixtures + manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    utterances = scan_corpus(corpus_dir, min_duration=min_duration)
    sample_rates = {u.sample_rate for u in utterances}
    if len(sample_rates) > 1:
        raise DataError(f"corpus mixes sample rates: {sorted(sample_rates)}")
    planned = plan_rows(
        utterances, seed=seed, n_mixtures=n_mixtures, split=split, gain_jitter_db=gain_jitter_db
    )

    for row in planned:
        result = mix(
            read_wav(row.source_utts[0].path),
            read_wav(row.source_utts[1].path),
            row.gains_db[0],
            row.gains_db[1],
        )
        write_wav(out_dir / row.sample.mixture_path, result.mixture)
        write_wav(out_dir / row.sample.source_paths[0], result.sources[0])
        write_wav(out_dir / row.sample.source_paths[1], result.sources[1])

    manifest = Manifest(rows=[p.sample for p in planned], seed=seed, split=split)
    manifest.save(out_dir / "manifest.csv")
    (out_dir / "manifest.json").write_text(
        json.dumps(
            {
                "seed": seed,
                "split": split,
                "n_mixtures": n_mixtures,
                "gain_policy": {"base_db": 0.0, "jitter_db": gain_jitter_db},
                "clip_peak": CLIP_PEAK,
                "min_duration": min_duration,
                "corpus": str(Path(corpus_dir).resolve()),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return manifest
