"""Binary PGM (P5) reading and writing.

8-bit when ``maxval < 256``, otherwise 16-bit big-endian, as the format
requires.  Round trips are bit-exact.
"""

from pathlib import Path

import numpy as np


def write_pgm(path, array, maxval=None):
    arr = np.asarray(array)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-d array, got shape {arr.shape}")
    if maxval is None:
        maxval = 255 if arr.max(initial=0) < 256 else 65535
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval {maxval} outside 1..65535")
    if arr.size and (arr.min() < 0 or arr.max() > maxval):
        raise ValueError(f"values outside 0..{maxval}")
    dtype = ">u1" if maxval < 256 else ">u2"
    H, W = arr.shape
    header = f"P5\n{W} {H}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + arr.astype(dtype).tobytes())


def _tokens(data):
    """Yield (token, end offset) for the header, skipping comments."""
    pos = 0
    while True:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        yield data[start:pos], pos


def read_pgm(path):
    """Return ``(array, maxval)``; the array is uint8 or uint16."""
    data = Path(path).read_bytes()
    toks = _tokens(data)
    magic, _ = next(toks)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    W = int(next(toks)[0])
    H = int(next(toks)[0])
    tok, end = next(toks)
    maxval = int(tok)
    offset = end + 1  # single whitespace byte after maxval
    dtype = ">u1" if maxval < 256 else ">u2"
    count = W * H
    need = count * np.dtype(dtype).itemsize
    if len(data) - offset < need:
        raise ValueError(f"{path}: expected {need} bytes of pixel data, found {len(data) - offset}")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(H, W)
    return arr.astype(np.uint8 if maxval < 256 else np.uint16), maxval
