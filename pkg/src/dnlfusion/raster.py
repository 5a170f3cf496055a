"""Flat band-sequential rasters: a small text header next to a raw payload.

Header (one ``key=value`` per line, any order)::

    width=1905
    height=349
    bands=144
    dtype=f32          # or i16 for label rasters
    layout=bsq
    data=houston_hsi.f32   # payload path, relative to the header's directory

The payload is little-endian, band-sequential, row-major within each band,
so its size is exactly ``width * height * bands * itemsize`` bytes.

Exporting from a geospatial tool: write each band as raw little-endian
float32 in band order (e.g. GDAL ``-of ENVI -co INTERLEAVE=BSQ`` produces a
compatible ``.img`` payload) and hand-write the header above next to it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DTYPES = {"f32": np.dtype("<f4"), "i16": np.dtype("<i2")}
_KEYS = ("width", "height", "bands", "dtype", "layout", "data")


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class RasterHeader:
    width: int
    height: int
    bands: int
    dtype: str
    data: str
    layout: str = "bsq"

    def __post_init__(self):
        for name in ("width", "height", "bands"):
            if getattr(self, name) < 1:
                raise RasterError(f"raster {name} must be positive, got {getattr(self, name)}")
        if self.dtype not in DTYPES:
            raise RasterError(f"unsupported raster dtype {self.dtype!r}; expected one of {sorted(DTYPES)}")
        if self.layout != "bsq":
            raise RasterError(f"unsupported layout {self.layout!r}; only bsq is supported")

    @property
    def payload_bytes(self) -> int:
        return self.width * self.height * self.bands * DTYPES[self.dtype].itemsize

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.bands, self.height, self.width)

    def to_text(self) -> str:
        return (
            f"width={self.width}\nheight={self.height}\nbands={self.bands}\n"
            f"dtype={self.dtype}\nlayout={self.layout}\ndata={self.data}\n"
        )


def read_header(path: str | os.PathLike) -> RasterHeader:
    fields: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RasterError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise RasterError(f"{path}:{lineno}: unknown header key {key!r}")
        fields[key] = value
    missing = [k for k in _KEYS if k not in fields and k != "layout"]
    if missing:
        raise RasterError(f"{path}: header is missing {', '.join(missing)}")
    try:
        dims = {k: int(fields[k]) for k in ("width", "height", "bands")}
    except ValueError as exc:
        raise RasterError(f"{path}: non-integer dimension ({exc})") from None
    return RasterHeader(
        dtype=fields["dtype"], data=fields["data"], layout=fields.get("layout", "bsq"), **dims
    )


def payload_path(header_path: str | os.PathLike, header: RasterHeader) -> Path:
    return Path(header_path).parent / header.data


def load_raster(header_path: str | os.PathLike, mmap: bool = False) -> np.ndarray:
    """Read a raster as a ``(bands, height, width)`` array.

    ``f32`` payloads come back as float64 (exact widening), ``i16`` as int64.
    With ``mmap`` the payload is memory-mapped and returned in its stored
    dtype, which keeps scene-sized cubes out of RAM.
    """
    header = read_header(header_path)
    data_path = payload_path(header_path, header)
    if not data_path.exists():
        raise FileNotFoundError(f"raster payload not found: {data_path}")
    actual = data_path.stat().st_size
    if actual != header.payload_bytes:
        raise RasterError(
            f"{data_path}: payload is {actual} bytes, header implies {header.payload_bytes} "
            f"({header.width}x{header.height}x{header.bands} {header.dtype})"
        )
    dtype = DTYPES[header.dtype]
    if mmap:
        return np.memmap(data_path, dtype=dtype, mode="r", shape=header.shape)
    arr = np.fromfile(data_path, dtype=dtype).reshape(header.shape)
    return arr.astype(np.float64 if header.dtype == "f32" else np.int64)


def save_raster(
    header_path: str | os.PathLike, array: np.ndarray, dtype: str = "f32", data_name: str | None = None
) -> RasterHeader:
    """Write ``array`` (``(bands, h, w)`` or ``(h, w)``) and its header.

    Values are cast to the stored dtype; float64 input is rounded to float32.
    """
    array = np.asarray(array)
    if array.ndim == 2:
        array = array[None]
    if array.ndim != 3:
        raise RasterError(f"raster array must be 2-D or 3-D, got shape {array.shape}")
    if dtype not in DTYPES:
        raise RasterError(f"unsupported raster dtype {dtype!r}")
    header_path = Path(header_path)
    data_name = data_name or header_path.with_suffix("." + dtype).name
    bands, height, width = array.shape
    header = RasterHeader(width=width, height=height, bands=bands, dtype=dtype, data=data_name)
    np.ascontiguousarray(array, dtype=DTYPES[dtype]).tofile(header_path.parent / data_name)
    header_path.write_text(header.to_text())
    return header
