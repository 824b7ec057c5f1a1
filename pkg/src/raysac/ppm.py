"""Binary PPM (P6, maxval 255) image I/O.

Linear scaling by 255 with round-half-up on write; no gamma handling.
"""

from __future__ import annotations

import numpy as np


def write_ppm(path, img):
    """img: (H, W, 3) floats in [0,1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("write_ppm expects (H, W, 3)")
    h, w, _ = img.shape
    q = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_ppm(path):
    """Returns (H, W, 3) float32 in [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval separated by whitespace; '#' comments
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ValueError(f"truncated PPM header in {path}")
        c = data[i:i + 1]
        if c == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j:j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if tokens[0] != b"P6":
        raise ValueError(f"not a binary PPM (P6) file: {path}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"unsupported PPM maxval {maxval} (need 255)")
    i += 1  # single whitespace after maxval
    raster = data[i:i + w * h * 3]
    if len(raster) != w * h * 3:
        raise ValueError(f"truncated PPM raster in {path}")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float32) / 255.0
