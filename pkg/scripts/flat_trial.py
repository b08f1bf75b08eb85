"""Trial: does base_lr=4.5e-4 close the equal-compute flatness gap?

Reuses the cached pilot teacher; caches its own students under /tmp/pilot_out2.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from maskalign.alignment import AlignmentConfig
from maskalign.checkpoint import load_model, load_teacher, save_model
from maskalign.data import load_cifar10
from maskalign.train import (TrainConfig, epoch_mean_losses, linear_probe,
                             pretrain, pretrain_total_steps)
from maskalign.vit import init_vit_params

import numpy as np

OUT = "/tmp/pilot_out2"
os.makedirs(OUT, exist_ok=True)
t0 = time.time()


def log(msg):
    print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True)


LR = 4.5e-4
train, test = load_cifar10("/tmp/pilot_data", max_train=5000, max_test=1000)
teacher = load_teacher("/tmp/pilot_out/teacher.maln")
vit_cfg = teacher.config


def run(path, ratio, equal):
    if os.path.exists(path):
        log(f"cached {path}")
        return load_model(path)[1], None
    cfg = TrainConfig(base_lr=LR, epochs=20, mask_ratio=ratio,
                      mask_mode="attentive",
                      align=AlignmentConfig(mode="dynamic", top_k=3),
                      drop_path_rate=0.1, seed=0, equal_compute=equal)
    params, head, trace = pretrain(vit_cfg, teacher, cfg, train, log=log)
    save_model(path, vit_cfg, params)
    _, spe = pretrain_total_steps(cfg, len(train))
    means = epoch_mean_losses(trace, spe)
    log("epoch means: " + " ".join(f"{m:.4f}" for m in means))
    dec = all(means[i + 1] < means[i] for i in range(min(9, len(means) - 1)))
    log(f"strictly decreasing first 10: {dec}")
    return params, means


p7, _ = run(os.path.join(OUT, "student_hi.maln"), 0.7, False)
p2, _ = run(os.path.join(OUT, "student02_hi.maln"), 0.2, True)
rand = init_vit_params(vit_cfg, np.random.default_rng(1))

for pool, plr in (("mean", 0.03), ("cls", 0.01)):
    a7 = linear_probe(vit_cfg, p7, train, test, lr=plr, pool=pool)
    a2 = linear_probe(vit_cfg, p2, train, test, lr=plr, pool=pool)
    ar = linear_probe(vit_cfg, rand, train, test, lr=plr, pool=pool)
    log(f"pool={pool} lr={plr}: r0.7={a7:.3f} r0.2={a2:.3f} rand={ar:.3f} "
        f"gap={100 * (a7 - ar):.1f} flat={100 * abs(a7 - a2):.1f}")
