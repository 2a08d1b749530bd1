"""Waveform container and mono WAV file I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .errors import DataError

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """A 1-D audio signal with its sample rate. The unit of all I/O."""

    data: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 1:
            raise DataError(f"waveform must be 1-D, got shape {self.data.shape}")

    def __len__(self) -> int:
        return len(self.data)

    @property
    def duration(self) -> float:
        return len(self.data) / self.sample_rate

    def peak(self) -> float:
        return float(np.max(np.abs(self.data))) if len(self.data) else 0.0


def read_wav(path: str | Path) -> Waveform:
    """Read a mono PCM or float WAV file into a float32 Waveform in [-1, 1]."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        data = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float32)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(data, int(rate))


def write_wav(path: str | Path, wav: Waveform) -> None:
    """Write a Waveform as float32 WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, wav.sample_rate, wav.data.astype(np.float32))


@dataclass
class ExternalMetric:
    """Adapter for an external metric tool (e.g. PESQ, STOI).

    ``command`` is a template with ``{ref}`` and ``{est}`` placeholders; the
    command must print a single float to stdout. When no adapter is
    configured the corresponding report fields are omitted, never fabricated.
    """

    command: str
    name: str = field(default="external")

    def __call__(self, ref_path: str | Path, est_path: str | Path) -> float:
        import shlex
        import subprocess

        argv = [
            part.format(ref=str(ref_path), est=str(est_path))
            for part in shlex.split(self.command)
        ]
        result = subprocess.run(argv, capture_output=True, text=True)
        if result.returncode != 0:
            raise DataError(
                f"external metric '{self.name}' failed ({result.returncode}): {result.stderr.strip()}"
            )
        try:
            return float(result.stdout.strip().split()[-1])
        except (ValueError, IndexError) as exc:
            raise DataError(
                f"external metric '{self.name}' printed no parseable float: {result.stdout!r}"
            ) from exc
