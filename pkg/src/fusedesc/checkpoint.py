"""Binary checkpoint format for named parameters (magic "RFT1").

Layout, all little-endian:

    "RFT1" | u8 flag | u32 meta_len | meta JSON (UTF-8) | u32 param_count
    per parameter:
        u16 name_len | name UTF-8 | u8 rank | u32 dims[rank] | f32 value data
        and, when flag == 1 (training checkpoint):
        f32 adam_m data | f32 adam_v data | u32 step_count

flag 0 marks an inference checkpoint (ADAM moments omitted), flag 1 a
training checkpoint. `meta` carries an arbitrary JSON document; the fusion
model stores its config there.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .nn import Parameter

MAGIC = b"RFT1"

__all__ = ["MAGIC", "save_checkpoint", "load_checkpoint"]


def save_checkpoint(
    path: str | Path,
    params: dict[str, Parameter],
    training: bool = False,
    meta: dict | None = None,
) -> None:
    """Write parameters to `path`; insertion order of `params` is preserved."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<BI", 1 if training else 0, len(meta_bytes)), meta_bytes]
    chunks.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        name_b = name.encode("utf-8")
        value = np.ascontiguousarray(p.value, dtype="<f4")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes())
        if training:
            chunks.append(np.ascontiguousarray(p.adam_m, dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(p.adam_v, dtype="<f4").tobytes())
            chunks.append(struct.pack("<I", p.step_count))
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Parameter], dict, bool]:
    """Read a checkpoint; returns (params, meta, is_training_checkpoint)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    flag, meta_len = r.unpack("<BI")
    if flag not in (0, 1):
        raise FormatError(f"bad checkpoint flag {flag}")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8")) if meta_len else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad checkpoint metadata: {exc}") from exc
    (count,) = r.unpack("<I")
    params: dict[str, Parameter] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n_elem = int(np.prod(dims)) if dims else 1
        value = np.frombuffer(r.take(4 * n_elem), dtype="<f4").reshape(dims).copy()
        p = Parameter(value)
        if flag == 1:
            p.adam_m = np.frombuffer(r.take(4 * n_elem), dtype="<f4").reshape(dims).copy()
            p.adam_v = np.frombuffer(r.take(4 * n_elem), dtype="<f4").reshape(dims).copy()
            (p.step_count,) = r.unpack("<I")
        params[name] = p
    return params, meta, flag == 1
