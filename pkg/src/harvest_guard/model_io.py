"""One-file model persistence.

Models are stored as a single self-describing JSON text file: a format
tag, a kind, the architecture, metadata, and every weight array flattened
alongside its shape. JSON serializes doubles through repr, which
round-trips bit for bit, so save -> load returns numerically identical
weights.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ValidationError
from .grasp import GraspModel
from .lstm import LstmArch, SlipModel

FORMAT_NAME = "harvest-guard-model"
FORMAT_VERSION = 1

KIND_SLIP = "slip-lstm"
KIND_GRASP = "grasp-linear"


def _arrays_payload(arrays: dict[str, np.ndarray]) -> dict[str, Any]:
    return {
        name: {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}
        for name, a in arrays.items()
    }


def _array_from_payload(name: str, payload: Any) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in payload["shape"])
        data = np.array(payload["data"], dtype=np.float64)
        return data.reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"array {name!r} is malformed: {exc}") from exc


def save_model(path: str | Path, model: SlipModel | GraspModel) -> None:
    path = Path(path)
    if isinstance(model, SlipModel):
        kind = KIND_SLIP
        arch: dict[str, Any] | None = {
            "n_layers": model.arch.n_layers,
            "hidden_size": model.arch.hidden_size,
            "input_size": model.arch.input_size,
            "n_classes": model.arch.n_classes,
            "inter_dropout": model.arch.inter_dropout,
            "head_dropout": model.arch.head_dropout,
        }
    elif isinstance(model, GraspModel):
        kind = KIND_GRASP
        arch = None
    else:
        raise ValidationError(f"cannot persist {type(model).__name__}")
    doc: dict[str, Any] = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "metadata": model.metadata,
        "arrays": _arrays_payload(model.named_arrays()),
    }
    if arch is not None:
        doc["arch"] = arch
    path.write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path: str | Path) -> SlipModel | GraspModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ValidationError(f"{path}: missing format tag {FORMAT_NAME!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported version {doc.get('version')!r}")
    kind = doc.get("kind")
    metadata = doc.get("metadata") or {}
    arrays = {name: _array_from_payload(name, p) for name, p in (doc.get("arrays") or {}).items()}

    if kind == KIND_GRASP:
        for need in ("weights", "bias"):
            if need not in arrays:
                raise ValidationError(f"{path}: missing array {need!r}")
        return GraspModel(arrays["weights"], arrays["bias"], metadata)

    if kind == KIND_SLIP:
        try:
            arch = LstmArch(**doc["arch"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: bad architecture block: {exc}") from exc
        w_x, w_h, b = [], [], []
        for layer in range(arch.n_layers):
            for group, name in ((w_x, f"layer{layer}.w_x"), (w_h, f"layer{layer}.w_h"), (b, f"layer{layer}.b")):
                if name not in arrays:
                    raise ValidationError(f"{path}: missing array {name!r}")
                group.append(arrays[name])
        for need in ("head.w", "head.b"):
            if need not in arrays:
                raise ValidationError(f"{path}: missing array {need!r}")
        return SlipModel(arch, w_x, w_h, b, arrays["head.w"], arrays["head.b"], metadata)

    raise ValidationError(f"{path}: unknown model kind {kind!r}")
