"""Synthetic desk-scale corpus: a handful of `speakers` with distinct
harmonic signatures, enough to exercise simulation, training sanity runs,
and the demos without any external data."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav


def synth_utterance(
    speaker_index: int,
    utt_index: int,
    duration: float = 1.0,
    sample_rate: int = 16000,
    seed: int = 0,
) -> Waveform:
    """One utterance: a speaker-specific harmonic stack under slow random
    amplitude modulation, plus a whiff of noise."""
    rng = np.random.default_rng([seed, speaker_index, utt_index])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = 95.0 * (1.0 + 0.4 * speaker_index)
    harmonic_gains = rng.uniform(0.4, 1.0, size=4) * (0.5 ** np.arange(4))
    signal = np.zeros(n)
    for k, gain in enumerate(harmonic_gains, start=1):
        phase = rng.uniform(0, 2 * np.pi)
        signal += gain * np.sin(2 * np.pi * f0 * k * t + phase)
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
    signal = signal * envelope + 0.01 * rng.standard_normal(n)
    signal = 0.5 * signal / np.max(np.abs(signal))
    return Waveform(signal.astype(np.float32), sample_rate)


def make_corpus(
    corpus_dir: str | Path,
    n_speakers: int = 3,
    utts_per_speaker: int = 3,
    duration: float = 1.0,
    sample_rate: int = 16000,
    seed: int = 0,
) -> Path:
    """Write ``<corpus>/<speaker>/utt<k>.wav`` files and return the directory."""
    corpus_dir = Path(corpus_dir)
    for s in range(n_speakers):
        for u in range(utts_per_speaker):
            wav = synth_utterance(s, u, duration=duration, sample_rate=sample_rate, seed=seed)
            write_wav(corpus_dir / f"spk{s}" / f"utt{u}.wav", wav)
    return corpus_dir
