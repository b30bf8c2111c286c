"""Binary checkpoint files.

Layout (little-endian):
    magic "HELM" | version u32 | header_len u32 | header JSON (utf-8)
    then per-tensor records until EOF:
    name_len u32 | name utf-8 | rank u32 | extents u64 * rank | float64 data

The header carries the config echo, the step counter, and the RNG state.
Writes are atomic (temp file + rename), so an interrupted run never
leaves a torn checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from typing import Dict, Tuple

import numpy as np

MAGIC = b"HELM"
VERSION = 1


def atomic_write_bytes(path, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, config: dict, step: int, rng_state: dict,
                    arrays: Dict[str, np.ndarray]) -> None:
    header = json.dumps({"config": config, "step": step, "rng_state": rng_state},
                        sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION),
              struct.pack("<I", len(header)), header]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            chunks.append(struct.pack("<Q", extent))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header_len = struct.unpack_from("<I", blob, 8)[0]
    offset = 12
    header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    arrays: Dict[str, np.ndarray] = {}
    while offset < len(blob):
        name_len = struct.unpack_from("<I", blob, offset)[0]
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        rank = struct.unpack_from("<I", blob, offset)[0]
        offset += 4
        shape = []
        for _ in range(rank):
            shape.append(struct.unpack_from("<Q", blob, offset)[0])
            offset += 8
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        arrays[name] = data.astype(np.float64).reshape(shape)
    return header, arrays


def is_checkpoint(path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == MAGIC
    except OSError:
        return False
