"""Binary PPM (P6) / PGM (P5) reading and writing, maxval 255."""

from __future__ import annotations

import numpy as np

from .errors import DatasetError


def write_pnm(path, arr: np.ndarray) -> None:
    """Write uint8 [H,W] as P5 or [H,W,3] as P6."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"unsupported array shape {arr.shape} for PNM")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def _read_token(f, path) -> bytes:
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise DatasetError(f"unexpected end of header in {path}")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pnm(path) -> np.ndarray:
    """Read P5 into uint8 [H,W] or P6 into uint8 [H,W,3]."""
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic == b"P5":
            channels = 1
        elif magic == b"P6":
            channels = 3
        else:
            raise DatasetError(f"{path}: not a binary PGM/PPM (magic {magic!r})")
        w = int(_read_token(f, path))
        h = int(_read_token(f, path))
        maxval = int(_read_token(f, path))
        if maxval != 255:
            raise DatasetError(f"{path}: unsupported maxval {maxval}")
        n = w * h * channels
        payload = f.read(n)
        if len(payload) != n:
            raise DatasetError(
                f"{path}: truncated pixel data ({len(payload)} of {n} bytes)"
            )
        arr = np.frombuffer(payload, dtype=np.uint8)
        return arr.reshape((h, w) if channels == 1 else (h, w, 3))
