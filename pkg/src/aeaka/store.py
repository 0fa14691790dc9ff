"""Line-delimited snapshot files.

One JSON object per line; every record carries a ``kind`` key.  Byte values
are stored as lowercase hex strings.  Writes go through a temp file and
``os.replace`` so a snapshot on disk is always complete.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

from .errors import StoreError


def hx(b: bytes) -> str:
    return b.hex()


def unhx(s: str) -> bytes:
    return bytes.fromhex(s)


def dumps(records: Iterable[dict]) -> bytes:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode()


def loads(data: bytes) -> list[dict]:
    out = []
    for n, line in enumerate(data.decode().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise StoreError(f"line {n}: {e}") from e
        if not isinstance(rec, dict) or "kind" not in rec:
            raise StoreError(f"line {n}: record without 'kind'")
        out.append(rec)
    return out


def write_records(path: str | os.PathLike, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps(records)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_records(path: str | os.PathLike) -> list[dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise StoreError(f"cannot read snapshot {path}: {e}") from e
    return loads(data)


def one(records: list[dict], kind: str) -> dict:
    found = [r for r in records if r["kind"] == kind]
    if len(found) != 1:
        raise StoreError(f"expected exactly one {kind!r} record, found {len(found)}")
    return found[0]
