"""Binary PGM (P5) image grids."""
from __future__ import annotations

import numpy as np


def tile_grid(tiles: np.ndarray) -> np.ndarray:
    """(rows, cols, H, W) tiles -> (rows*H, cols*W) image."""
    rows, cols, H, W = tiles.shape
    return tiles.transpose(0, 2, 1, 3).reshape(rows * H, cols * W)


def to_bytes(pixels) -> np.ndarray:
    """[0, 1] intensities -> uint8."""
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray):
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: magic {fields[0]!r}")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    data = blob[pos + 1:pos + 1 + w * h]
    if len(data) != w * h:
        raise ValueError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
