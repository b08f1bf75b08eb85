"""Bit-exact checkpoint serialization and the frozen-teacher wrapper.

File layout (little-endian): magic "MALN", u32 version, u32 tensor count,
then per tensor: u16 name byte length, UTF-8 name, u8 ndim, ndim x u32 dims,
raw float32 data. Model config rides along as reserved "meta." tensors so the
file stays a flat bag of named tensors.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, VersionError
from .tensor import Tensor
from .vit import ViTConfig, encoder_forward, embed, patchify

MAGIC = b"MALN"
VERSION = 1
_META = "meta."


@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 ndarray, insertion-ordered
    version: int = VERSION


def save_checkpoint(path, ckpt: Checkpoint):
    names = list(ckpt.tensors)
    if len(set(names)) != len(names):
        raise FormatError("duplicate tensor names in checkpoint")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", ckpt.version, len(names)))
        for name in names:
            arr = np.asarray(ckpt.tensors[name], dtype="<f4")
            if arr.ndim:  # ascontiguousarray would promote 0-d to 1-d
                arr = np.ascontiguousarray(arr)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CorruptionError(f"{path}: truncated while reading {what}")
        out = data[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise VersionError(f"{path}: unknown format version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2, "name length"))
        name = take(nlen, "name").decode("utf-8")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims")) if ndim else ()
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        raw = take(nbytes, f"tensor {name!r} data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if pos != len(data):
        raise CorruptionError(f"{path}: {len(data) - pos} trailing bytes after last tensor")
    return Checkpoint(tensors=tensors, version=version)


# ---------------------------------------------------------------------------
# model <-> checkpoint
# ---------------------------------------------------------------------------

def _config_meta(cfg: ViTConfig):
    return np.array([cfg.image_h, cfg.image_w, cfg.channels, cfg.patch_size,
                     cfg.embed_dim, cfg.depth, cfg.num_heads, cfg.mlp_ratio,
                     cfg.drop_path_rate], dtype=np.float32)


def _config_from_meta(vec):
    v = [float(x) for x in vec]
    return ViTConfig(image_h=int(v[0]), image_w=int(v[1]), channels=int(v[2]),
                     patch_size=int(v[3]), embed_dim=int(v[4]), depth=int(v[5]),
                     num_heads=int(v[6]), mlp_ratio=v[7], drop_path_rate=v[8])


def model_to_checkpoint(cfg: ViTConfig, params) -> Checkpoint:
    tensors = {_META + "vit_config": _config_meta(cfg)}
    for name, t in params.items():
        tensors[name] = t.data if isinstance(t, Tensor) else np.asarray(t)
    return Checkpoint(tensors=tensors)


def checkpoint_to_model(ckpt: Checkpoint, requires_grad=True):
    """-> (ViTConfig, params dict). Raises FormatError without config meta."""
    key = _META + "vit_config"
    if key not in ckpt.tensors:
        raise FormatError("checkpoint carries no model config")
    cfg = _config_from_meta(ckpt.tensors[key])
    params = {name: Tensor(arr.copy(), requires_grad=requires_grad)
              for name, arr in ckpt.tensors.items() if not name.startswith(_META)}
    return cfg, params


def save_model(path, cfg: ViTConfig, params):
    save_checkpoint(path, model_to_checkpoint(cfg, params))


def load_model(path, requires_grad=True):
    return checkpoint_to_model(load_checkpoint(path), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# frozen teacher
# ---------------------------------------------------------------------------

@dataclass
class FrozenTeacher:
    config: ViTConfig
    params: dict  # every Tensor has requires_grad False


def freeze(cfg: ViTConfig, params) -> FrozenTeacher:
    frozen = {}
    for name, t in params.items():
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        frozen[name] = Tensor(arr.copy(), requires_grad=False)
    return FrozenTeacher(config=cfg, params=frozen)


def load_teacher(path) -> FrozenTeacher:
    cfg, params = load_model(path, requires_grad=False)
    return FrozenTeacher(config=cfg, params=params)


def teacher_forward(teacher: FrozenTeacher, images):
    """Eval-mode forward on intact images; outputs are tape-free.

    images: [C,H,W] or [B,C,H,W]. Patch rows are all of 0..N-1 so the output
    carries N+1 tokens per image.
    """
    cfg = teacher.config
    pat = patchify(np.asarray(images, dtype=np.float32), cfg.patch_size)
    n = cfg.n_patches
    if pat.ndim == 3:
        vis = np.tile(np.arange(n), (pat.shape[0], 1))
    else:
        vis = np.arange(n)
    tokens = embed(teacher.params, cfg, pat, vis)
    return encoder_forward(teacher.params, cfg, tokens, train=False)
