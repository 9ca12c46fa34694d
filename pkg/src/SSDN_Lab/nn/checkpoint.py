# Self-describing parameter container
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from ..errors import FormatError
from .config import ArchConfig
from .registry import ParamRegistry

MAGIC = b"SSDNCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")  # magic, format version, header length


def save_checkpoint(
    path: Union[str, Path],
    registry: ParamRegistry,
    arch: ArchConfig,
    extra: Dict[str, Any] = None,
) -> None:
    """
    Writes a checkpoint container.

    Layout: magic | format version | header length | JSON header | raw scalars.
    The header holds the ArchConfig, caller metadata, and per-parameter
    name, group, dtype, shape and payload offset. Scalars are little-endian.

    :param path: Output file
    :param registry: Parameters to store
    :param arch: Architecture the parameters belong to
    :param extra: Additional JSON-serializable metadata (e.g. bridge config)
    """
    table = []
    chunks = []
    offset = 0
    for name, value in registry.items():
        le = value.astype(value.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        table.append(
            {
                "name": name,
                "group": registry.group_of(name),
                "dtype": le.dtype.str,
                "shape": list(value.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {
            "format_version": FORMAT_VERSION,
            "arch": arch.to_dict(),
            "extra": extra or {},
            "params": table,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        f.write(header)
        for raw in chunks:
            f.write(raw)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ParamRegistry, ArchConfig, Dict[str, Any]]:
    """
    Reads a checkpoint container.

    :param path: Checkpoint file
    :return: Tuple of (registry, arch config, extra metadata)
    """
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: too short for a checkpoint container")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint container (bad magic)")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size + header_len
    if len(data) < start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: header is not valid JSON")

    payload = memoryview(data)[start:]
    registry = ParamRegistry()
    for entry in header["params"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise FormatError(f"{path}: payload truncated at parameter {entry['name']!r}")
        dtype = np.dtype(entry["dtype"])
        value = np.frombuffer(payload[entry["offset"] : end], dtype=dtype)
        if value.size != int(np.prod(entry["shape"], dtype=np.int64)):
            raise FormatError(f"{path}: size of {entry['name']!r} does not match its shape")
        registry.add(entry["name"], value.reshape(entry["shape"]).astype(dtype.newbyteorder("=")), entry["group"])
    return registry, ArchConfig.from_dict(header["arch"]), header["extra"]
