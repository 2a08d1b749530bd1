"""Flat checkpoint archives shared by every model in the package.

Format: a numpy ``.npz`` mapping tensor name -> array, plus a ``__meta__``
entry holding a JSON document (model config, config hash, training
counters). A name map -- a text file of ``source_name -> target_name``
lines -- lets externally converted checkpoints be renamed onto our
parameters at load time.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import DataError

META_KEY = "__meta__"


@dataclass
class LoadReport:
    """What a strict load matched, renamed, and left over."""

    n_loaded: int = 0
    renamed: dict[str, str] = field(default_factory=dict)
    unmatched_checkpoint: list[str] = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"loaded {self.n_loaded} tensors ({len(self.renamed)} renamed)"]
        if self.unmatched_checkpoint:
            lines.append("unmatched checkpoint tensors: " + ", ".join(self.unmatched_checkpoint))
        return "; ".join(lines)


def parse_name_map(source: str | Path) -> dict[str, str]:
    """Parse ``source_name -> target_name`` lines; '#' starts a comment."""
    text = Path(source).read_text()
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise DataError(f"name map line {lineno} is not 'source -> target': {raw!r}")
        src, dst = (part.strip() for part in line.split("->", 1))
        if not src or not dst:
            raise DataError(f"name map line {lineno} has an empty side: {raw!r}")
        mapping[src] = dst
    return mapping


def save_archive(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(tensors)
    if META_KEY in payload:
        raise ValueError(f"tensor name {META_KEY!r} is reserved")
    payload[META_KEY] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    # np.savez writes via a temp buffer; go through bytes for atomic-ish write
    buf = io.BytesIO()
    np.savez(buf, **payload)
    path.write_bytes(buf.getvalue())


def load_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path) as archive:
        tensors = {name: archive[name] for name in archive.files if name != META_KEY}
        meta = {}
        if META_KEY in archive.files:
            meta = json.loads(bytes(archive[META_KEY]).decode("utf-8"))
    return tensors, meta


def state_to_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {name: tensor.detach().cpu().numpy() for name, tensor in module.state_dict().items()}


def save_state(module: nn.Module, path: str | Path, meta: dict | None = None) -> None:
    save_archive(path, state_to_arrays(module), meta)


def load_state(
    module: nn.Module,
    source: str | Path | dict[str, np.ndarray],
    name_map: dict[str, str] | str | Path | None = None,
) -> LoadReport:
    """Strictly load an archive into a module.

    Every module parameter/buffer must be assigned exactly once; shape
    mismatches and missing parameters are errors that name the offending
    tensors. Checkpoint tensors without a destination are reported, and also
    listed in the error when parameters went unfilled (the usual cause).
    """
    if isinstance(source, (str, Path)):
        tensors, _ = load_archive(source)
    else:
        tensors = dict(source)
    if name_map is not None and not isinstance(name_map, dict):
        name_map = parse_name_map(name_map)

    report = LoadReport()
    renamed: dict[str, np.ndarray] = {}
    for name, array in tensors.items():
        target = name_map.get(name, name) if name_map else name
        if target != name:
            report.renamed[name] = target
        if target in renamed:
            raise DataError(f"checkpoint assigns tensor {target!r} more than once")
        renamed[target] = array

    state = module.state_dict()
    missing = [name for name in state if name not in renamed]
    report.unmatched_checkpoint = sorted(name for name in renamed if name not in state)
    if missing:
        raise DataError(
            "checkpoint does not cover these parameters: "
            + ", ".join(sorted(missing))
            + (
                "; unmatched checkpoint tensors: " + ", ".join(report.unmatched_checkpoint)
                if report.unmatched_checkpoint
                else ""
            )
        )
    new_state = {}
    for name, current in state.items():
        array = renamed[name]
        if tuple(array.shape) != tuple(current.shape):
            raise DataError(
                f"shape mismatch for tensor {name!r}: checkpoint {tuple(array.shape)}, "
                f"model {tuple(current.shape)}"
            )
        new_state[name] = torch.from_numpy(np.ascontiguousarray(array)).to(current.dtype)
    module.load_state_dict(new_state)
    report.n_loaded = len(new_state)
    return report
