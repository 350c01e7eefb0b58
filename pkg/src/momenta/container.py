"""Append-only record container for named float32 tensors.

Layout::

    file    := MAGIC record*
    record  := b"REC1" u32(header_len) header payload
    header  := UTF-8 JSON {"key", "meta", "tensors": [{"name", "shape"}], "payload_bytes", "sha256"}
    payload := tensors concatenated in header order, little-endian float32, C order

All integers are little-endian. ``sha256`` covers the payload bytes and the header
with the ``sha256`` field removed (keys sorted, compact separators), so a flipped
bit anywhere in a record is detected. A later record with the same key supersedes
earlier ones.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Union

import numpy as np

MAGIC = b"MOMTNSR\x01"
RECORD_TAG = b"REC1"
_DTYPE = np.dtype("<f4")


class ChecksumError(ValueError):
    """A stored record failed its integrity check."""

    def __init__(self, key: str, detail: str = "checksum mismatch") -> None:
        super().__init__(f"corrupt entry {key!r}: {detail}")
        self.key = key


class ContainerFormatError(ValueError):
    pass


@dataclass(frozen=True)
class StoredRecord:
    key: str
    meta: dict
    tensors: dict[str, np.ndarray]


def _digest(header: Mapping, payload: bytes) -> str:
    body = json.dumps({k: v for k, v in header.items() if k != "sha256"}, sort_keys=True, separators=(",", ":"))
    h = hashlib.sha256(body.encode("utf-8"))
    h.update(payload)
    return h.hexdigest()


def encode_record(key: str, tensors: Mapping[str, np.ndarray], meta: Optional[Mapping] = None) -> bytes:
    chunks, specs = [], []
    for name, array in tensors.items():
        arr = np.ascontiguousarray(np.asarray(array, dtype=_DTYPE))
        specs.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    payload = b"".join(chunks)
    header = {"key": key, "meta": dict(meta or {}), "tensors": specs, "payload_bytes": len(payload)}
    header["sha256"] = _digest(header, payload)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return RECORD_TAG + struct.pack("<I", len(raw)) + raw + payload


def _decode(header: dict, payload: bytes) -> StoredRecord:
    key = header.get("key", "?")
    if _digest(header, payload) != header.get("sha256"):
        raise ChecksumError(key)
    tensors, offset = {}, 0
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        tensors[spec["name"]] = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    return StoredRecord(key, header["meta"], tensors)


def _read_header(fh) -> tuple[Optional[dict], int, int]:
    """Returns (header, header_start, payload_start); header None at EOF."""
    start = fh.tell()
    tag = fh.read(4)
    if not tag:
        return None, start, start
    if tag != RECORD_TAG:
        raise ContainerFormatError(f"bad record tag at offset {start}")
    (length,) = struct.unpack("<I", fh.read(4))
    raw = fh.read(length)
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"unreadable record header at offset {start}") from exc
    return header, start, fh.tell()


class RecordFile:
    """Keyed access to a container file; writes are serialised, reads open their own handle."""

    def __init__(self, path: Union[str, Path], mode: str = "r") -> None:
        if mode not in ("r", "a"):
            raise ValueError("mode must be 'r' or 'a'")
        self.path = Path(path)
        self.mode = mode
        self._lock = threading.Lock()
        self._index: dict[str, int] = {}
        if not self.path.exists():
            if mode == "r":
                raise FileNotFoundError(self.path)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "wb") as fh:
                fh.write(MAGIC)
        self._scan()

    def _scan(self) -> None:
        with open(self.path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ContainerFormatError(f"{self.path}: not a tensor container")
            while True:
                header, start, payload_start = _read_header(fh)
                if header is None:
                    break
                self._index[header["key"]] = start
                fh.seek(payload_start + int(header["payload_bytes"]))

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self._index)

    def keys(self) -> list[str]:
        return list(self._index)

    def put(self, key: str, tensors: Mapping[str, np.ndarray], meta: Optional[Mapping] = None) -> bool:
        """Append a record. Returns True if it superseded an existing entry."""
        if self.mode != "a":
            raise PermissionError(f"{self.path} opened read-only")
        blob = encode_record(key, tensors, meta)
        with self._lock:
            with open(self.path, "ab") as fh:
                start = fh.tell()
                fh.write(blob)
            overwrite = key in self._index
            self._index[key] = start
        return overwrite

    def get(self, key: str) -> Optional[StoredRecord]:
        start = self._index.get(key)
        if start is None:
            return None
        with open(self.path, "rb") as fh:
            fh.seek(start)
            try:
                header, _, _ = _read_header(fh)
            except (ContainerFormatError, struct.error) as exc:
                raise ChecksumError(key, str(exc)) from exc
            if header is None:
                raise ChecksumError(key, "record missing")
            size = int(header.get("payload_bytes", -1))
            payload = fh.read(size)
        if len(payload) != size:
            raise ChecksumError(key, "truncated payload")
        if header.get("key") != key:
            raise ChecksumError(key, "header key mismatch")
        return _decode(header, payload)

    def __iter__(self) -> Iterator[StoredRecord]:
        for key in self._index:
            record = self.get(key)
            assert record is not None
            yield record
