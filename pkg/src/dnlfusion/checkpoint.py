"""Parameter checkpoint files.

Layout::

    DNLCKPT 1
    tensors <count>
    <name> <dim0>x<dim1>x... <byte offset>     (one line per tensor)
    payload <total bytes>
    <raw little-endian float64 payload>

The manifest is ASCII and ends with the ``payload`` line plus a newline.
Offsets are relative to the first payload byte; each tensor is stored
row-major. Scalars use the shape token ``-``. Names must not contain spaces.
"""

from __future__ import annotations

import os

import numpy as np

MAGIC = "DNLCKPT 1"
_DTYPE = np.dtype("<f8")


def _shape_token(shape) -> str:
    return "x".join(str(d) for d in shape) if shape else "-"


def _parse_shape(token: str) -> tuple[int, ...]:
    return () if token == "-" else tuple(int(d) for d in token.split("x"))


def save_checkpoint(path: str | os.PathLike, tensors: dict[str, np.ndarray]) -> None:
    lines = [MAGIC, f"tensors {len(tensors)}"]
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        if not name or any(ch.isspace() for ch in name):
            raise ValueError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr, dtype=_DTYPE, order="C")  # ascontiguousarray would promote 0-d to 1-d
        lines.append(f"{name} {_shape_token(arr.shape)} {offset}")
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    lines.append(f"payload {offset}")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    header_lines = []
    pos = 0
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ValueError(f"{path}: truncated checkpoint manifest")
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        header_lines.append(line)
        if line.startswith("payload "):
            break
    if header_lines[0] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {header_lines[0]!r})")
    count = int(header_lines[1].split()[1])
    entries = header_lines[2:-1]
    if len(entries) != count:
        raise ValueError(f"{path}: manifest lists {len(entries)} tensors, header says {count}")
    total = int(header_lines[-1].split()[1])
    payload = raw[pos:]
    if len(payload) != total:
        raise ValueError(f"{path}: payload is {len(payload)} bytes, manifest says {total}")
    out: dict[str, np.ndarray] = {}
    for entry in entries:
        name, shape_tok, offset = entry.split(" ")
        shape = _parse_shape(shape_tok)
        n = int(np.prod(shape, dtype=np.int64))
        start = int(offset)
        out[name] = np.frombuffer(payload, dtype=_DTYPE, count=n, offset=start).reshape(shape).copy()
    return out
