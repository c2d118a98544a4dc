"""
Versioned binary container shared by every persisted artifact.

Layout: 8-byte little-endian header length, UTF-8 JSON header, payload.
The header holds the magic string, format version, artifact kind, an array
table (name, dtype, shape, offset, nbytes) and free-form metadata.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from ..utils.errors import (
    CorruptionError,
    MissingArtifactError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

logger = logging.getLogger(__name__)

MAGIC = "TOKENSTYLE"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<Q")


class ArraySpec(NamedTuple):
    name: str
    dtype: str  # little-endian numpy dtype string, e.g. "<f8"
    array: np.ndarray


class Container(NamedTuple):
    kind: str
    meta: Dict[str, Any]
    arrays: Dict[str, np.ndarray]


def encode_container(
    kind: str, arrays: List[ArraySpec], meta: Optional[Dict[str, Any]] = None
) -> bytes:
    """Serialize arrays (in the given order) and metadata to bytes."""
    table = []
    chunks = []
    offset = 0
    for spec in arrays:
        data = np.ascontiguousarray(spec.array, dtype=np.dtype(spec.dtype)).tobytes()
        table.append(
            {
                "name": spec.name,
                "dtype": spec.dtype,
                "shape": [int(s) for s in np.shape(spec.array)],
                "offset": offset,
                "nbytes": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)

    header = {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "kind": kind,
        "arrays": table,
        "meta": meta or {},
    }
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":"))
    header_bytes = header_json.encode("utf-8")
    return _LENGTH.pack(len(header_bytes)) + header_bytes + b"".join(chunks)


def write_container(
    path: Path,
    kind: str,
    arrays: List[ArraySpec],
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a container file atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_container(kind, arrays, meta)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    logger.debug(f"Wrote {kind} container {path} ({len(data)} bytes)")
    return path


def _parse_header(data: bytes) -> Tuple[Dict[str, Any], int]:
    if len(data) < _LENGTH.size:
        raise TruncatedPayloadError(
            f"file of {len(data)} bytes is too short for a header"
        )
    (length,) = _LENGTH.unpack_from(data)
    end = _LENGTH.size + length
    if len(data) < end:
        raise TruncatedPayloadError(
            f"header declares {length} bytes, file holds {len(data) - _LENGTH.size}"
        )
    try:
        header = json.loads(data[_LENGTH.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptionError(f"unreadable container header: {e}") from e
    if not isinstance(header, dict) or header.get("magic") != MAGIC:
        raise CorruptionError("not a tokenstyle container (bad magic)")
    if header.get("version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"container format version {header.get('version')} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    return header, end


def decode_container(data: bytes, expected_kind: Optional[str] = None) -> Container:
    """
    Parse and validate container bytes.

    Raises:
        TruncatedPayloadError: payload shorter than declared
        VersionMismatchError: unsupported format version
        ShapeMismatchError: array byte count disagrees with dtype and shape
        CorruptionError: anything else malformed, including the wrong kind
    """
    header, start = _parse_header(data)
    kind = header.get("kind", "")
    if expected_kind is not None and kind != expected_kind:
        raise CorruptionError(f"expected a {expected_kind} container, found {kind}")

    payload = memoryview(data)[start:]
    table = header.get("arrays", [])
    declared = sum(int(entry["nbytes"]) for entry in table)
    if len(payload) < declared:
        raise TruncatedPayloadError(
            f"payload holds {len(payload)} bytes, header declares {declared}"
        )
    if len(payload) > declared:
        raise CorruptionError(
            f"{len(payload) - declared} trailing bytes after the payload"
        )

    arrays: Dict[str, np.ndarray] = {}
    for entry in table:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(entry["nbytes"])
        if int(np.prod(shape, dtype=np.int64)) * dtype.itemsize != nbytes:
            raise ShapeMismatchError(
                f"array {entry['name']}: {nbytes} bytes "
                f"do not fit {entry['dtype']}{list(shape)}"
            )
        offset = int(entry["offset"])
        raw = payload[offset:offset + nbytes]
        arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return Container(kind=kind, meta=header.get("meta", {}), arrays=arrays)


def read_container(path: Path, expected_kind: Optional[str] = None) -> Container:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"{path} does not exist")
    container = decode_container(path.read_bytes(), expected_kind)
    logger.debug(f"Read {container.kind} container {path}")
    return container


def expect_shape(
    container: Container, name: str, shape: Tuple[int, ...]
) -> np.ndarray:
    """Fetch an array and check its shape against the one derived from metadata."""
    if name not in container.arrays:
        raise CorruptionError(f"{container.kind} container has no array {name}")
    array = container.arrays[name]
    if array.shape != tuple(shape):
        raise ShapeMismatchError(
            f"{name} has shape {array.shape}, expected {tuple(shape)}"
        )
    return array
