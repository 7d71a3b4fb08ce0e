"""Model checkpoints.

A checkpoint is a directory holding ``config.json`` and ``params.bin``.
``config.json`` carries the model kind and configuration, class names, window
size, normalization bounds and a ``params_manifest`` listing every tensor of the
state dict in file order (name, shape, original dtype, byte offset).
``params.bin`` is the concatenation of those tensors as little-endian float32.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from telesto.errors import DataError
from telesto.series import NormalizationBounds
from telesto.training import build_model, model_config_dict

FORMAT = "telesto-checkpoint/1"


def save_checkpoint(path: str | Path, model: nn.Module, class_names: Sequence[str],
                    bounds: NormalizationBounds | None = None, extra: Mapping | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest, offset, chunks = [], 0, []
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": str(tensor.dtype).replace("torch.", ""),
                         "offset": offset})
        data = arr.tobytes()
        chunks.append(data)
        offset += len(data)
    config = {
        "format": FORMAT,
        **model_config_dict(model),
        "class_names": list(class_names),
        "bounds": bounds.to_dict() if bounds is not None else None,
        "params_manifest": manifest,
        **dict(extra or {}),
    }
    (path / "params.bin").write_bytes(b"".join(chunks))
    (path / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[nn.Module, dict]:
    """Rebuild the model from ``config.json`` and load ``params.bin``. Returns (model, config)."""
    path = Path(path)
    try:
        config = json.loads((path / "config.json").read_text())
        blob = (path / "params.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"incomplete checkpoint at {path}: {exc.filename}") from exc
    if config.get("format") != FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {config.get('format')!r}")
    model_cfg = {k: v for k, v in config.items() if k in _model_keys(config["kind"])}
    kind = config["kind"]
    overrides = {k: v for k, v in model_cfg.items() if k not in ("num_classes", "window_size", "kind")}
    model = build_model(kind, model_cfg["num_classes"], model_cfg["window_size"], overrides)
    state = {}
    for entry in config["params_manifest"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"]).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy()).to(getattr(torch, entry["dtype"]))
    model.load_state_dict(state)
    model.eval()
    return model, config


def _model_keys(kind: str) -> set:
    from telesto.baselines import BaselineConfig
    from telesto.model import TelestoConfig

    cls = TelestoConfig if kind == "telesto" else BaselineConfig
    return set(cls.__dataclass_fields__)


def checkpoint_bounds(config: Mapping) -> NormalizationBounds | None:
    return NormalizationBounds.from_dict(config["bounds"]) if config.get("bounds") else None
