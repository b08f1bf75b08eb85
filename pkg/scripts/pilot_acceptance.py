"""One-off pilot of the desk-scale run used by the acceptance suite.

Times each stage, prints the numbers the acceptance criteria gate on, and
caches stage outputs under /tmp/pilot_out so reruns skip finished stages.
"""

import os
import sys
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from maskalign import data as mdata
from maskalign.alignment import AlignmentConfig
from maskalign.checkpoint import (freeze, load_model, model_to_checkpoint,
                                  save_checkpoint, load_checkpoint)
from maskalign.train import (TrainConfig, epoch_mean_losses, linear_probe,
                             pretrain, pretrain_total_steps, train_teacher,
                             write_trace, read_trace)
from maskalign.tensor import Tensor
from maskalign.vit import ViTConfig, init_vit_params

t_start = time.time()
out_dir = "/tmp/pilot_out"
os.makedirs(out_dir, exist_ok=True)


def log(msg):
    print(f"[{time.time() - t_start:7.1f}s] {msg}", flush=True)


data_dir = "/tmp/pilot_data"
if not os.path.exists(os.path.join(data_dir, "data_batch_1.bin")):
    log("generating synthetic dataset")
    mdata.write_synthetic_dataset(data_dir, n_train=5000, n_test=1000, seed=0)

train_set = mdata.load_cifar10(data_dir, max_train=5000)[0]
test_set = mdata.load_cifar10(data_dir, max_test=1000)[1]
log(f"data: {len(train_set)} train, {len(test_set)} test")

vit_cfg = ViTConfig()


def stage_model(path, builder):
    full = os.path.join(out_dir, path)
    if os.path.exists(full):
        cfg_loaded, params = load_model(full)
        log(f"loaded cached {path}")
        return params
    params = builder()
    save_checkpoint(full, model_to_checkpoint(vit_cfg, params))
    return params


def build_teacher():
    cfg = TrainConfig(base_lr=1e-3, epochs=30, drop_path_rate=0.0, seed=0)
    params, history = train_teacher(vit_cfg, cfg, train_set, test_set, log=log)
    log(f"teacher val acc: {history[-1]['val_acc']:.4f}")
    return params


teacher_params = stage_model("teacher.maln", build_teacher)
teacher = freeze(vit_cfg, {k: v.data for k, v in teacher_params.items()})

pre_cfg = TrainConfig(epochs=20, mask_ratio=0.7, mask_mode="attentive",
                      align=AlignmentConfig(mode="dynamic", top_k=3),
                      drop_path_rate=0.1, seed=0)


def build_student():
    student, head, trace = pretrain(vit_cfg, teacher, pre_cfg, train_set, log=log)
    write_trace(os.path.join(out_dir, "pretrain.csv"), trace)
    return student


student = stage_model("student.maln", build_student)
trace = read_trace(os.path.join(out_dir, "pretrain.csv"))
total, steps_per_epoch = pretrain_total_steps(pre_cfg, len(train_set))
per_epoch = epoch_mean_losses(trace, steps_per_epoch)
log("epoch means: " + " ".join(f"{v:.4f}" for v in per_epoch))
dec = all(per_epoch[i + 1] < per_epoch[i] for i in range(9))
log(f"strictly decreasing first 10: {dec}")

acc_pre = linear_probe(vit_cfg, student, train_set, test_set, log=log)
log(f"probe (pretrained): {acc_pre:.4f}")

rand_params = init_vit_params(vit_cfg, np.random.default_rng(123))
acc_rand = linear_probe(vit_cfg, rand_params, train_set, test_set, log=log)
log(f"probe (random init): {acc_rand:.4f}")
log(f"probe gap: {100 * (acc_pre - acc_rand):.1f} points")

pre02 = TrainConfig(epochs=20, mask_ratio=0.2, mask_mode="attentive",
                    align=AlignmentConfig(mode="dynamic", top_k=3),
                    drop_path_rate=0.1, seed=0, equal_compute=True)


def build_student02():
    student02, _, _ = pretrain(vit_cfg, teacher, pre02, train_set, log=log)
    return student02


student02 = stage_model("student02.maln", build_student02)
acc02 = linear_probe(vit_cfg, student02, train_set, test_set, log=log)
log(f"probe (r=0.2 equal compute): {acc02:.4f}")
log(f"flatness delta: {100 * abs(acc02 - acc_pre):.1f} points")
log("pilot done")
