"""Single-file checkpoint container for the trainable parameter set.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"DUOCHKP1"``
    bytes 8..11   format version, uint32 (currently 1)
    bytes 12..19  header length in bytes, uint64
    header        UTF-8 JSON: {"config_fingerprint": str,
                               "backend_fingerprint": str,
                               "arrays": [{"name", "dtype", "shape",
                                           "offset", "nbytes"}, ...]}
    payload       raw array bytes, C-order, little-endian, concatenated in
                  header order; offsets are relative to the payload start

The frozen backbone is never serialized: it is reloaded from its weights
directory or regenerated from the stub seed. Loading verifies both stored
fingerprints against the target model before touching any weights, so a
checkpoint cannot silently pair with a different config or backbone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .model import DualBranchForecaster

MAGIC = b"DUOCHKP1"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _to_le(array: np.ndarray) -> np.ndarray:
    le = array.astype(array.dtype.newbyteorder("<"), copy=False)
    return np.ascontiguousarray(le)


def save_checkpoint(model: DualBranchForecaster, path: str | Path) -> None:
    """Write all trainable arrays plus the model config fingerprint."""
    entries = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        array = _to_le(tensor.detach().cpu().numpy())
        dtype_str = array.dtype.str
        if dtype_str not in _DTYPES:
            raise CheckpointError(f"unsupported parameter dtype {dtype_str} for {name}")
        blob = array.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": dtype_str,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {
            "config_fingerprint": model.config.fingerprint(),
            "backend_fingerprint": model.backend.fingerprint(),
            "arrays": entries,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint file into (header dict, named arrays)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = int.from_bytes(raw[8:12], "little")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header_len = int.from_bytes(raw[12:20], "little")
    header = json.loads(raw[20 : 20 + header_len].decode("utf-8"))
    payload = raw[20 + header_len :]
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"{path}: unknown dtype {entry['dtype']}")
        chunk = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).copy()
    return header, arrays


def load_checkpoint(path: str | Path, model: DualBranchForecaster) -> DualBranchForecaster:
    """Restore trainable arrays bit-exactly into a compatible model."""
    header, arrays = read_checkpoint(path)
    if header["config_fingerprint"] != model.config.fingerprint():
        raise CheckpointError(
            "checkpoint fingerprint does not match the model configuration; "
            "rebuild the model with the config the checkpoint was trained under"
        )
    if header["backend_fingerprint"] != model.backend.fingerprint():
        raise CheckpointError(
            "checkpoint was trained against a different frozen backbone "
            "(weights directory or stub seed mismatch)"
        )
    state = model.state_dict()
    missing = set(state) - set(arrays)
    extra = set(arrays) - set(state)
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
    new_state = {name: torch.from_numpy(arrays[name]) for name in state}
    model.load_state_dict(new_state)
    return model
