"""Deterministic model checkpoint archive.

A checkpoint is a ZIP file with fixed (epoch-zero) entry timestamps and stored
(uncompressed) members, so identical contents produce identical bytes:

- ``manifest.json``: UTF-8 JSON with sorted keys holding ``schema_version``,
  the model configuration, optional caller metadata under ``extra``, and an
  ``arrays`` list of ``{name, shape, dtype, file}`` records sorted by name.
- ``arrays/<index>.bin``: the raw little-endian row-major bytes of each array,
  in manifest order.

Both parameters and persistent buffers (the graph weights) are stored, so a
checkpoint reconstructs a working model on its own.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import SchemaVersionError
from .model import Forecaster, ModelConfig

SCHEMA_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_arrays(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    model_config: dict,
    extra: dict | None = None,
) -> None:
    records = []
    payload = []
    for idx, name in enumerate(sorted(arrays)):
        arr = np.ascontiguousarray(arrays[name])
        file_name = f"arrays/{idx:05d}.bin"
        records.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": str(arr.dtype),
                "file": file_name,
            }
        )
        payload.append((file_name, arr.astype(arr.dtype.newbyteorder("<")).tobytes(order="C")))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "model_config": model_config,
        "extra": extra or {},
        "arrays": records,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_member(
            zf, "manifest.json", json.dumps(manifest, sort_keys=True, indent=1).encode()
        )
        for file_name, data in payload:
            _write_member(zf, file_name, data)


def load_arrays(path: str | Path) -> tuple[dict, dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        version = manifest.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"{path}: checkpoint schema {version!r} unsupported "
                f"(expected {SCHEMA_VERSION}); re-run training to migrate"
            )
        arrays = {}
        for rec in manifest["arrays"]:
            raw = zf.read(rec["file"])
            arr = np.frombuffer(raw, dtype=np.dtype(rec["dtype"]).newbyteorder("<"))
            arrays[rec["name"]] = arr.reshape(rec["shape"]).astype(rec["dtype"])
    return manifest["model_config"], arrays, manifest.get("extra", {})


def save_model(
    path: str | Path, model: Forecaster, extra: dict | None = None
) -> None:
    arrays = {
        name: tensor.detach().cpu().numpy() for name, tensor in model.state_dict().items()
    }
    save_arrays(path, arrays, model.cfg.to_dict(), extra)


def load_model(path: str | Path) -> tuple[Forecaster, dict]:
    """Rebuild a model from a checkpoint; returns (model, extra metadata)."""
    cfg_dict, arrays, extra = load_arrays(path)
    cfg = ModelConfig.from_dict(cfg_dict)
    model = Forecaster(cfg, arrays["graph_weights"])
    state = {name: torch.as_tensor(arr) for name, arr in arrays.items()}
    model.load_state_dict(state)
    return model, extra
