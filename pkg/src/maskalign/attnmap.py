"""Export the last-layer [CLS] attention over the patch grid as a PGM image."""

import warnings

import numpy as np

from .checkpoint import FrozenTeacher, teacher_forward
from .errors import FormatError


def write_pgm(path, gray):
    """Binary P5 with maxval 255; gray is a [h, w] uint8 array."""
    arr = np.asarray(gray, dtype=np.uint8)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-d array, got shape {arr.shape}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary P5 file")
    try:
        w, h = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise FormatError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    if len(parts[3]) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixel bytes, got {len(parts[3])}")
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def cls_attention_grid(model: FrozenTeacher, image):
    """Mean-over-heads [CLS]->patch attention on the patch grid: [gh, gw]."""
    out = teacher_forward(model, image)
    attn = out.last_attention  # [h, n, n]
    scores = attn[:, 0, 1:].mean(axis=0)
    return scores.reshape(model.config.grid_h, model.config.grid_w)


def export_attention(model: FrozenTeacher, image, out_path):
    """Eval forward on the intact image; write the scaled attention map.

    Linear scaling min->0, max->255. A constant map has no contrast to show;
    it is written as all zeros with a warning.
    """
    grid = cls_attention_grid(model, image)
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo <= 1e-12:
        warnings.warn("attention map is constant; writing an all-zero image")
        scaled = np.zeros_like(grid, dtype=np.uint8)
    else:
        scaled = np.round((grid - lo) / (hi - lo) * 255.0).astype(np.uint8)
    write_pgm(out_path, scaled)
    return grid, scaled
