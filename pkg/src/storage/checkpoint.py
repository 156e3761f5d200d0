"""Single-file checkpoints

Layout::

    magic     4 bytes   b"PRCK"
    version   u32 LE
    header    u64 LE length, then UTF-8 JSON (sorted keys)
    blobs     raw little-endian arrays, in header order

The header holds the step, checkpoint kind, config snapshot, free-form
metadata, optimizer hyperparameters, one ``{name, shape, dtype, offset,
nbytes}`` entry per blob, and the SHA-256 of all blob bytes. Writes go to a
temporary file that is renamed into place.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..autograd.optim import OptimizerState
from ..errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"PRCK"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")
_OPTIM_PREFIX = "__optim__/"


@dataclass
class Checkpoint:
    """Parameters, optimizer state and provenance of one training stage"""
    kind: str
    step: int
    params: Dict[str, np.ndarray]
    optimizer: Optional[OptimizerState] = None
    config: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    content_hash: Optional[str] = None

    def subset(self, prefix: str, strip: bool = True) -> Dict[str, np.ndarray]:
        """Parameters whose name starts with ``prefix`` (prefix removed when ``strip``)"""
        cut = len(prefix) if strip else 0
        return {name[cut:]: value for name, value in self.params.items() if name.startswith(prefix)}

    @property
    def discardable(self) -> list:
        """Name prefixes that are training-only artifacts"""
        return list(self.meta.get("discardable", []))


def _little_endian(array: np.ndarray) -> np.ndarray:
    if not array.flags.c_contiguous:
        array = np.ascontiguousarray(array)
    if array.dtype.byteorder == ">" or (array.dtype.byteorder == "=" and not np.little_endian):
        array = array.astype(array.dtype.newbyteorder("<"))
    return array


def _blobs(ckpt: Checkpoint) -> Dict[str, np.ndarray]:
    blobs = {name: ckpt.params[name] for name in sorted(ckpt.params)}
    if ckpt.optimizer is not None:
        arrays = ckpt.optimizer.arrays()
        blobs.update({_OPTIM_PREFIX + key: arrays[key] for key in sorted(arrays)})
    return blobs


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> str:
    """Write ``ckpt`` atomically

    Returns:
        SHA-256 hex digest of the blob section
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    payload = []
    offset = 0
    digest = hashlib.sha256()
    for name, array in _blobs(ckpt).items():
        array = _little_endian(np.asarray(array))
        raw = array.tobytes()
        entries.append({
            "name": name,
            "shape": list(array.shape),
            "dtype": array.dtype.str,
            "offset": offset,
            "nbytes": len(raw),
        })
        payload.append(raw)
        digest.update(raw)
        offset += len(raw)
    content_hash = digest.hexdigest()

    header = {
        "kind": ckpt.kind,
        "step": int(ckpt.step),
        "config": ckpt.config,
        "meta": ckpt.meta,
        "optimizer": ckpt.optimizer.hyperparameters() if ckpt.optimizer is not None else None,
        "tensors": entries,
        "sha256": content_hash,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    tmp = path.with_name(path.name + f".tmp.{os.getpid()}")
    try:
        with open(tmp, "wb") as f:
            f.write(_PREAMBLE.pack(MAGIC, VERSION, len(header_bytes)))
            f.write(header_bytes)
            for raw in payload:
                f.write(raw)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    ckpt.content_hash = content_hash
    logger.info(f"Saved {ckpt.kind} checkpoint at step {ckpt.step} to {path} ({offset} bytes of tensors)")
    return content_hash


def load_checkpoint(path: Union[str, Path], prefix: Optional[str] = None) -> Checkpoint:
    """Read and verify a checkpoint

    Args:
        path: Checkpoint file
        prefix: Keep only parameters whose name starts with this prefix
            (the hash is still verified over every blob)

    Raises:
        CheckpointError: Missing file, bad magic, unknown version, truncated
            data or hash mismatch
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: truncated checkpoint preamble")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREAMBLE.size + header_len
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[_PREAMBLE.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc

    body = memoryview(raw)[start:]
    if hashlib.sha256(body).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: content hash mismatch (file truncated or modified)")

    params: Dict[str, np.ndarray] = {}
    optim_arrays: Dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        name = entry["name"]
        is_optim = name.startswith(_OPTIM_PREFIX)
        if not is_optim and prefix is not None and not name.startswith(prefix):
            continue
        array = np.frombuffer(body, dtype=np.dtype(entry["dtype"]), count=int(np.prod(entry["shape"], dtype=np.int64)),
                              offset=entry["offset"]).reshape(entry["shape"]).copy()
        if is_optim:
            optim_arrays[name[len(_OPTIM_PREFIX):]] = array
        else:
            params[name] = array

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = OptimizerState.from_hyperparameters(header["optimizer"])
        optimizer.load_arrays(optim_arrays)

    logger.info(f"Loaded {header['kind']} checkpoint (step {header['step']}) from {path}")
    return Checkpoint(
        kind=header["kind"],
        step=int(header["step"]),
        params=params,
        optimizer=optimizer,
        config=header.get("config", {}),
        meta=header.get("meta", {}),
        content_hash=header["sha256"],
    )
