"""Probe the cached pilot checkpoints under a pooling/lr grid.

Calibration helper only; consumes /tmp/pilot_out produced by
pilot_acceptance.py and prints the criterion deltas per setting.
"""

import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np

from maskalign.checkpoint import load_model
from maskalign.data import load_cifar10, write_synthetic_dataset
from maskalign.train import linear_probe
from maskalign.vit import init_vit_params

DATA = "/tmp/pilot_data"
OUT = "/tmp/pilot_out"

if not os.path.isdir(DATA):
    write_synthetic_dataset(DATA, n_train=5000, n_test=1000, seed=0)
train, test = load_cifar10(DATA, max_train=5000, max_test=1000)

cfg7, p7 = load_model(os.path.join(OUT, "student.maln"))
cfg2, p2 = load_model(os.path.join(OUT, "student02.maln"))
rand = init_vit_params(cfg7, np.random.default_rng(1))

for pool in ("cls", "mean"):
    for lr in (0.01, 0.03, 0.1):
        t0 = time.time()
        a7 = linear_probe(cfg7, p7, train, test, lr=lr, pool=pool)
        a2 = linear_probe(cfg2, p2, train, test, lr=lr, pool=pool)
        ar = linear_probe(cfg7, rand, train, test, lr=lr, pool=pool)
        dt = time.time() - t0
        print(f"pool={pool} lr={lr}: r0.7={a7:.3f} r0.2={a2:.3f} rand={ar:.3f} "
              f"gap={100*(a7-ar):.1f} flat={100*abs(a7-a2):.1f} [{dt:.0f}s]",
              flush=True)
