"""
Binary checkpoint container.

Layout:
    b"TSBM" | uint64 little-endian header length | JSON header | raw arrays

The JSON header records the model configuration, free-form metadata and one
entry per array (name, dtype, shape, byte offset into the data section).
Arrays are stored little-endian, C-contiguous, so a load is bit-exact.
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from tsbsmamba.core.exceptions import SeparationError
from tsbsmamba.models.config_models import ModelConfig
from tsbsmamba.utils.logger import get_logger

logger = get_logger(__name__)

MAGIC = b"TSBM"
FORMAT_VERSION = 1
_DTYPES = {
    "float32": ("<f4", torch.float32),
    "float64": ("<f8", torch.float64),
    "int64": ("<i8", torch.int64),
}
_OPTIM_PREFIX = "optim."


class CheckpointError(SeparationError):
    """The file is not a readable checkpoint."""


def _encode(tensor: torch.Tensor) -> Tuple[str, bytes]:
    name = str(tensor.dtype).replace("torch.", "")
    if name not in _DTYPES:
        raise CheckpointError(f"unsupported tensor dtype {tensor.dtype}")
    array = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=_DTYPES[name][0])
    return name, array.tobytes()


def save_checkpoint(
    path: Path,
    cfg: ModelConfig,
    tensors: Dict[str, torch.Tensor],
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write named tensors plus configuration to a single file.

    Args:
        path: Destination file
        cfg: Model configuration stored in the header
        tensors: Arrays to store (model state, optimizer moments, ...)
        metadata: JSON-serializable extras (epoch, optimizer scalars, ...)

    Returns:
        The written path
    """
    path = Path(path)
    entries, blobs, offset = [], [], 0
    for name, tensor in tensors.items():
        dtype, blob = _encode(tensor)
        entries.append({"name": name, "dtype": dtype, "shape": list(tensor.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "config": cfg.model_dump(mode="json"),
            "metadata": metadata or {},
            "tensors": entries,
        }
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)
    logger.debug(f"Saved checkpoint {path} ({len(entries)} tensors, {offset} bytes)")
    return path


def load_checkpoint(path: Path) -> Tuple[ModelConfig, Dict[str, torch.Tensor], Dict[str, Any]]:
    """
    Read a checkpoint written by `save_checkpoint`.

    Returns:
        (model config, tensors by name, metadata)

    Raises:
        CheckpointError: On a bad magic number, truncated data or unknown dtype
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC or len(raw) < 12:
        raise CheckpointError(f"{path} is not a tsbsmamba checkpoint")
    (header_len,) = struct.unpack("<Q", raw[4:12])
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")

    data = memoryview(raw)[12 + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        if entry["dtype"] not in _DTYPES:
            raise CheckpointError(f"unknown dtype {entry['dtype']} for {entry['name']}")
        np_dtype, _ = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * np.dtype(np_dtype).itemsize
        if end > len(data):
            raise CheckpointError(f"checkpoint {path} is truncated at {entry['name']}")
        array = np.frombuffer(data, dtype=np_dtype, count=count, offset=entry["offset"])
        tensors[entry["name"]] = torch.from_numpy(array.astype(array.dtype.newbyteorder("="), copy=True)).reshape(
            entry["shape"]
        )
    return ModelConfig.model_validate(header["config"]), tensors, header["metadata"]


def optimizer_tensors(optimizer: torch.optim.Optimizer) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    """Split an optimizer state dict into stored arrays and JSON scalars."""
    state = optimizer.state_dict()
    tensors, scalars = {}, {}
    for index, slot in state["state"].items():
        for key, value in slot.items():
            if torch.is_tensor(value) and value.dim() > 0:
                tensors[f"{_OPTIM_PREFIX}{index}.{key}"] = value
            else:
                scalars[f"{index}.{key}"] = float(value)
    return tensors, {"param_groups": state["param_groups"], "scalars": scalars}


def restore_optimizer(
    optimizer: torch.optim.Optimizer, tensors: Dict[str, torch.Tensor], optim_meta: Dict[str, Any]
) -> None:
    """Inverse of `optimizer_tensors`."""
    state: Dict[int, Dict[str, Any]] = {}
    for name, value in tensors.items():
        if not name.startswith(_OPTIM_PREFIX):
            continue
        index, key = name[len(_OPTIM_PREFIX):].split(".", 1)
        state.setdefault(int(index), {})[key] = value
    for name, value in optim_meta.get("scalars", {}).items():
        index, key = name.split(".", 1)
        state.setdefault(int(index), {})[key] = torch.tensor(value)
    optimizer.load_state_dict({"state": state, "param_groups": optim_meta["param_groups"]})


def save_model(path: Path, model: torch.nn.Module, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Store the parameters of a separator together with its configuration."""
    return save_checkpoint(path, model.cfg, dict(model.state_dict()), metadata)


def load_model(path: Path):
    """Rebuild a separator from a checkpoint; returns (model, metadata)."""
    from tsbsmamba.services.separator import TSBSMamba2

    cfg, tensors, metadata = load_checkpoint(path)
    model = TSBSMamba2(cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith(_OPTIM_PREFIX)}
    sample = next(iter(params.values()), None)
    if sample is not None:
        model = model.to(sample.dtype)
    missing, unexpected = model.load_state_dict(params, strict=False)
    if missing or unexpected:
        raise CheckpointError(f"checkpoint {path} does not match its config: missing={missing}, unexpected={unexpected}")
    return model, metadata
