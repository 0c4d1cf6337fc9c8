"""Binary PPM (P6, 8-bit) read/write plus optional PNG export."""
from __future__ import annotations

import numpy as np


def to_uint8(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    return (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def write_ppm(path, image) -> None:
    """``image`` is (3, H, W) in [0, 1]."""
    px = to_uint8(image)
    _, h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(px.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    pixels = np.frombuffer(data[pos + 1: pos + 1 + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_png(path, image, scale: int = 4) -> None:
    from PIL import Image

    px = to_uint8(image).transpose(1, 2, 0)
    Image.fromarray(px, mode="RGB").resize((px.shape[1] * scale, px.shape[0] * scale), Image.NEAREST).save(path)
