import os
import string

import numpy as np
import pytest

from maskalign import checkpoint as cp
from maskalign import tensor as T
from maskalign import vit
from maskalign.errors import (CheckpointError, CorruptionError, FormatError,
                              VersionError)


# ---------------------------------------------------------------- byte layout

def test_single_tensor_byte_accounting(tmp_path):
    path = tmp_path / "one.maln"
    cp.save_checkpoint(path, cp.Checkpoint({"w": np.zeros((2, 2), np.float32)}))
    # 4 magic + 4 version + 4 count + 2 namelen + 1 name + 1 ndim + 8 dims + 16 data
    assert os.path.getsize(path) == 40


def test_empty_checkpoint_is_header_only(tmp_path):
    path = tmp_path / "empty.maln"
    cp.save_checkpoint(path, cp.Checkpoint({}))
    assert os.path.getsize(path) == 12


def test_magic_and_little_endian_layout(tmp_path):
    path = tmp_path / "probe.maln"
    cp.save_checkpoint(path, cp.Checkpoint({"ab": np.array([1.0], np.float32)}))
    raw = path.read_bytes()
    assert raw[:4] == b"MALN"
    assert raw[4:8] == (1).to_bytes(4, "little")  # version
    assert raw[8:12] == (1).to_bytes(4, "little")  # count
    assert raw[12:14] == (2).to_bytes(2, "little")  # name length
    assert raw[14:16] == b"ab"
    assert raw[16] == 1  # ndim
    assert raw[17:21] == (1).to_bytes(4, "little")
    assert raw[21:] == np.float32(1.0).tobytes()


def test_scalar_tensor_roundtrip(tmp_path):
    path = tmp_path / "scalar.maln"
    cp.save_checkpoint(path, cp.Checkpoint({"s": np.float32(3.5)}))
    back = cp.load_checkpoint(path)
    assert back.tensors["s"].shape == ()
    assert float(back.tensors["s"]) == 3.5


def test_roundtrip_bit_identical(tmp_path, rng):
    tensors = {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "b.nested.name": rng.standard_normal(7).astype(np.float32),
        "c": np.array(2.25, np.float32),
    }
    path = tmp_path / "rt.maln"
    cp.save_checkpoint(path, cp.Checkpoint(dict(tensors)))
    back = cp.load_checkpoint(path)
    assert list(back.tensors) == list(tensors)  # order preserved
    for k in tensors:
        assert back.tensors[k].dtype == np.float32
        np.testing.assert_array_equal(back.tensors[k], tensors[k])


def test_fuzz_roundtrip_100_cases(tmp_path):
    # shapes 0-d..4-d, tricky names, empty dims; saved bytes must reload equal
    rng = np.random.default_rng(99)
    alphabet = string.ascii_letters + string.digits + "._-/"
    for case in range(100):
        n_tensors = int(rng.integers(0, 6))
        tensors = {}
        for t in range(n_tensors):
            name = "".join(rng.choice(list(alphabet), size=int(rng.integers(1, 24))))
            name = f"{case}.{t}.{name}"  # uniqueness
            ndim = int(rng.integers(0, 5))
            shape = tuple(int(rng.integers(0, 5)) for _ in range(ndim))
            tensors[name] = rng.standard_normal(shape).astype(np.float32)
        path = tmp_path / f"fuzz_{case}.maln"
        cp.save_checkpoint(path, cp.Checkpoint(tensors))
        back = cp.load_checkpoint(path)
        assert list(back.tensors) == list(tensors)
        for k, v in tensors.items():
            assert back.tensors[k].shape == v.shape
            np.testing.assert_array_equal(back.tensors[k], v)


def test_save_is_deterministic(tmp_path, rng):
    tensors = {"x": rng.standard_normal((5, 5)).astype(np.float32)}
    p1, p2 = tmp_path / "a.maln", tmp_path / "b.maln"
    cp.save_checkpoint(p1, cp.Checkpoint(dict(tensors)))
    cp.save_checkpoint(p2, cp.Checkpoint(dict(tensors)))
    assert p1.read_bytes() == p2.read_bytes()


# ---------------------------------------------------------------- error taxonomy

def test_bad_magic_is_format_error(tmp_path):
    path = tmp_path / "bad.maln"
    path.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(FormatError):
        cp.load_checkpoint(path)


def test_unknown_version_is_version_error(tmp_path):
    path = tmp_path / "v9.maln"
    path.write_bytes(b"MALN" + (9).to_bytes(4, "little") + (0).to_bytes(4, "little"))
    with pytest.raises(VersionError):
        cp.load_checkpoint(path)


def test_truncation_is_corruption_error(tmp_path, rng):
    path = tmp_path / "trunc.maln"
    cp.save_checkpoint(path, cp.Checkpoint({"w": rng.standard_normal((4, 4)).astype(np.float32)}))
    raw = path.read_bytes()
    for cut in (2, 11, 13, 20, len(raw) - 3):
        path.write_bytes(raw[:cut])
        with pytest.raises(CorruptionError):
            cp.load_checkpoint(path)


def test_trailing_bytes_are_corruption_error(tmp_path):
    path = tmp_path / "trail.maln"
    cp.save_checkpoint(path, cp.Checkpoint({}))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CorruptionError):
        cp.load_checkpoint(path)


def test_duplicate_names_rejected_both_ways(tmp_path):
    import struct
    path = tmp_path / "dup.maln"
    body = b""
    for _ in range(2):
        body += struct.pack("<H", 1) + b"w" + struct.pack("<B", 0)
        body += np.float32(1.0).tobytes()
    path.write_bytes(b"MALN" + struct.pack("<II", 1, 2) + body)
    with pytest.raises(FormatError):
        cp.load_checkpoint(path)


def test_checkpoint_errors_share_base():
    for exc in (FormatError, VersionError, CorruptionError):
        assert issubclass(exc, CheckpointError)


# ---------------------------------------------------------------- model round trip

def test_model_roundtrip(tmp_path, tiny_cfg, rng):
    params = vit.init_vit_params(tiny_cfg, rng)
    path = tmp_path / "model.maln"
    cp.save_model(path, tiny_cfg, params)
    cfg2, params2 = cp.load_model(path)
    assert cfg2 == tiny_cfg
    assert set(params2) == set(params)
    for k in params:
        np.testing.assert_array_equal(params2[k].data, params[k].data)
        assert params2[k].requires_grad


def test_checkpoint_without_config_meta_rejected(tmp_path, rng):
    path = tmp_path / "nometa.maln"
    cp.save_checkpoint(path, cp.Checkpoint({"w": rng.standard_normal(3).astype(np.float32)}))
    with pytest.raises(FormatError):
        cp.load_model(path)


def test_meta_tensors_do_not_become_params(tmp_path, tiny_cfg, rng):
    params = vit.init_vit_params(tiny_cfg, rng)
    path = tmp_path / "meta.maln"
    cp.save_model(path, tiny_cfg, params)
    _, params2 = cp.load_model(path)
    assert not any(k.startswith("meta.") for k in params2)


# ---------------------------------------------------------------- frozen teacher

def test_freeze_detaches_and_copies(tiny_cfg, rng):
    params = vit.init_vit_params(tiny_cfg, rng)
    teacher = cp.freeze(tiny_cfg, params)
    assert all(not p.requires_grad for p in teacher.params.values())
    teacher.params["cls"].data[:] += 1.0
    assert not np.array_equal(teacher.params["cls"].data, params["cls"].data)


def test_teacher_forward_shapes_and_determinism(tiny_cfg, rng):
    teacher = cp.freeze(tiny_cfg, vit.init_vit_params(tiny_cfg, rng))
    imgs = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    out1 = cp.teacher_forward(teacher, imgs)
    out2 = cp.teacher_forward(teacher, imgs)
    assert all(p.data.shape == (2, 17, tiny_cfg.embed_dim) for p in out1.per_block)
    np.testing.assert_array_equal(out1.final.data, out2.final.data)
    for a, b in zip(out1.per_block, out2.per_block):
        np.testing.assert_array_equal(a.data, b.data)


def test_teacher_forward_single_image(tiny_cfg, rng):
    teacher = cp.freeze(tiny_cfg, vit.init_vit_params(tiny_cfg, rng))
    out = cp.teacher_forward(teacher, rng.standard_normal((3, 8, 8)).astype(np.float32))
    assert out.final.data.shape == (17, tiny_cfg.embed_dim)


def test_teacher_forward_is_tape_free(tiny_cfg, rng):
    teacher = cp.freeze(tiny_cfg, vit.init_vit_params(tiny_cfg, rng))
    imgs = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    with T.Tape() as tape:
        out = cp.teacher_forward(teacher, imgs)
        assert tape.records == []  # nothing recorded by the frozen pass
        assert out.final.node is None
    assert all(p.grad is None for p in teacher.params.values())


def test_load_teacher_roundtrip(tmp_path, tiny_cfg, rng):
    params = vit.init_vit_params(tiny_cfg, rng)
    path = tmp_path / "teacher.maln"
    cp.save_model(path, tiny_cfg, params)
    teacher = cp.load_teacher(path)
    assert isinstance(teacher, cp.FrozenTeacher)
    assert all(not p.requires_grad for p in teacher.params.values())
    imgs = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
    live = cp.teacher_forward(cp.freeze(tiny_cfg, params), imgs)
    loaded = cp.teacher_forward(teacher, imgs)
    np.testing.assert_array_equal(live.final.data, loaded.final.data)
