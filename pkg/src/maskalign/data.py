"""CIFAR-10 binary ingestion, augmentation, and a synthetic stand-in.

Records are 3073 bytes: one label byte then 3072 pixel bytes (32x32 planes
in R, G, B order, row-major). Pixels are scaled to [0,1] and normalized with
mean 0.5, std 0.5 per channel.

The synthetic generator writes the same binary layout with ten procedural
shape classes (random colors, positions, noise), so the full pipeline runs
on machines without the real dataset; point load_cifar10 at a real CIFAR-10
directory and nothing else changes.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError

RECORD = 3073
NUM_CLASSES = 10


@dataclass
class ImageBatch:
    images: np.ndarray  # [B,3,32,32] float32, normalized
    labels: np.ndarray  # [B] int64

    def __len__(self):
        return len(self.images)


def _parse_records(raw, path):
    if len(raw) % RECORD:
        raise DataError(f"{path}: size {len(raw)} not a multiple of {RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD)
    labels = rec[:, 0].astype(np.int64)
    if (labels >= NUM_CLASSES).any():
        raise DataError(f"{path}: label {int(labels.max())} >= {NUM_CLASSES}")
    images = rec[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def normalize(images_u8):
    return ((images_u8.astype(np.float32) / 255.0) - 0.5) / 0.5


def load_cifar10(data_dir, max_train=None, max_test=None):
    """-> (train ImageBatch, test ImageBatch)."""
    if not os.path.isdir(data_dir):
        raise DataError(f"data directory not found: {data_dir}")
    train_files = sorted(f for f in os.listdir(data_dir)
                         if f.startswith("data_batch") and f.endswith(".bin"))
    test_files = [f for f in os.listdir(data_dir) if f == "test_batch.bin"]
    if not train_files or not test_files:
        raise DataError(f"no CIFAR-10 batch files in {data_dir}")

    def read(files, cap):
        ims, labs = [], []
        total = 0
        for f in files:
            p = os.path.join(data_dir, f)
            with open(p, "rb") as fh:
                i, l = _parse_records(fh.read(), p)
            ims.append(i)
            labs.append(l)
            total += len(l)
            if cap is not None and total >= cap:
                break
        ims = np.concatenate(ims)[:cap]
        labs = np.concatenate(labs)[:cap]
        return ImageBatch(images=normalize(ims), labels=labs)

    return read(train_files, max_train), read(test_files, max_test)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def augment(image, rng, pad=4):
    """Pad-reflect, random crop back to size, horizontal flip with p=0.5."""
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    oy, ox = rng.integers(0, 2 * pad + 1, size=2)
    out = padded[:, oy:oy + h, ox:ox + w]
    if rng.random() < 0.5:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out)


def augment_batch(images, rng, pad=4):
    return np.stack([augment(im, rng, pad) for im in images])


# ---------------------------------------------------------------------------
# synthetic stand-in dataset
# ---------------------------------------------------------------------------

def _grid():
    y, x = np.mgrid[0:32, 0:32]
    return y.astype(np.float64), x.astype(np.float64)


def _draw(mask, fg, bg, rng, noise=12.0):
    img = np.empty((3, 32, 32), dtype=np.float64)
    for ch in range(3):
        img[ch] = np.where(mask, fg[ch], bg[ch])
    img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def _colors(rng):
    # keep fg/bg far enough apart that shape stays the signal
    while True:
        fg = rng.integers(0, 256, size=3).astype(np.float64)
        bg = rng.integers(0, 256, size=3).astype(np.float64)
        if np.abs(fg - bg).sum() > 160:
            return fg, bg


def _shape_mask(cls, rng):
    y, x = _grid()
    cy, cx = rng.uniform(10, 22, size=2)
    r = rng.uniform(6, 11)
    if cls == 0:  # filled disc
        return (y - cy) ** 2 + (x - cx) ** 2 <= r ** 2
    if cls == 1:  # hollow square outline
        half, t = r, rng.uniform(1.5, 3.0)
        inside = (np.abs(y - cy) <= half) & (np.abs(x - cx) <= half)
        core = (np.abs(y - cy) <= half - t) & (np.abs(x - cx) <= half - t)
        return inside & ~core
    if cls == 2:  # horizontal stripes
        period = rng.uniform(4, 8)
        return ((y + rng.uniform(0, period)) % period) < period / 2
    if cls == 3:  # vertical stripes
        period = rng.uniform(4, 8)
        return ((x + rng.uniform(0, period)) % period) < period / 2
    if cls == 4:  # diagonal cross
        t = rng.uniform(1.5, 3.0)
        return (np.abs((y - cy) - (x - cx)) <= t) | (np.abs((y - cy) + (x - cx)) <= t)
    if cls == 5:  # filled triangle
        h = r * 1.4
        return (y >= cy - h / 2) & (y <= cy + h / 2) & \
               (np.abs(x - cx) <= (y - (cy - h / 2)) * 0.6)
    if cls == 6:  # checkerboard
        cell = rng.uniform(4, 7)
        return ((np.floor(y / cell) + np.floor(x / cell)) % 2) == 0
    if cls == 7:  # concentric rings
        period = rng.uniform(4, 7)
        d = np.sqrt((y - cy) ** 2 + (x - cx) ** 2)
        return (d % period) < period / 2
    if cls == 8:  # plus sign
        t = rng.uniform(2, 4)
        return (np.abs(y - cy) <= t) | (np.abs(x - cx) <= t)
    # cls 9: three gaussian blobs
    mask = np.zeros((32, 32), dtype=bool)
    for _ in range(3):
        by, bx = rng.uniform(6, 26, size=2)
        br = rng.uniform(3, 5)
        mask |= (y - by) ** 2 + (x - bx) ** 2 <= br ** 2
    return mask


def synthetic_image(cls, rng):
    fg, bg = _colors(rng)
    return _draw(_shape_mask(cls, rng), fg, bg, rng)


def write_synthetic_dataset(data_dir, n_train=5000, n_test=1000, seed=0):
    """Write data_batch_1.bin and test_batch.bin in CIFAR-10 binary layout."""
    os.makedirs(data_dir, exist_ok=True)
    rng = np.random.default_rng(seed)

    def write(path, n):
        labels = rng.integers(0, NUM_CLASSES, size=n)
        with open(path, "wb") as f:
            for lab in labels:
                img = synthetic_image(int(lab), rng)
                f.write(bytes([int(lab)]))
                f.write(img.tobytes())

    write(os.path.join(data_dir, "data_batch_1.bin"), n_train)
    write(os.path.join(data_dir, "test_batch.bin"), n_test)
    return data_dir
