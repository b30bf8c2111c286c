"""Byte-level tokenizer: ids 0..255 are raw bytes, plus BOS/EOS/PAD."""

from __future__ import annotations

import numpy as np

BOS = 256
EOS = 257
PAD = 258
VOCAB_SIZE = 259


def encode(text, add_bos: bool = False, add_eos: bool = False) -> np.ndarray:
    data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    ids = list(data)
    if add_bos:
        ids = [BOS] + ids
    if add_eos:
        ids = ids + [EOS]
    return np.asarray(ids, dtype=np.int64)


def decode(ids) -> str:
    raw = bytes(int(i) for i in ids if 0 <= int(i) < 256)
    return raw.decode("utf-8", errors="replace")
