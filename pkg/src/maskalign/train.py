"""The four training loops: teacher, alignment pretraining, probe, finetune.

Everything is single-threaded and deterministic given TrainConfig.seed; loss
traces are CSV rows of step,lr,loss.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .alignment import (AlignmentConfig, init_alignment_head, maskalign_step)
from .checkpoint import FrozenTeacher, teacher_forward
from .data import ImageBatch, augment_batch
from .errors import ConfigError, TrainingDiverged
from .masking import attentive_mask, random_mask
from .optim import AdamW, cosine_lr, layer_decay_scales, no_decay_param
from .tensor import Tape, Tensor, backward, cross_entropy, linear
from .vit import (ViTConfig, cls_feature, embed, encoder_forward,
                  init_vit_params, mean_patch_feature, patchify, trunc_normal)

_MASK_MODES = ("random", "attentive", "attentive-stochastic")


@dataclass
class TrainConfig:
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.95)
    batch_size: int = 128
    epochs: int = 20
    warmup_fraction: float = 0.1
    mask_ratio: float = 0.7
    mask_mode: str = "attentive"
    align: AlignmentConfig = field(default_factory=AlignmentConfig)
    drop_path_rate: float = 0.1
    seed: int = 0
    layer_decay: float = 1.0  # finetune only
    equal_compute: bool = False  # iterations scaled by (1-r_base)/(1-r)
    equal_compute_baseline: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ConfigError(f"warmup_fraction {self.warmup_fraction} outside [0, 1)")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mask_mode not in _MASK_MODES:
            raise ConfigError(f"mask_mode {self.mask_mode!r} not in {_MASK_MODES}")


def _check_finite(loss_value, step):
    if not math.isfinite(loss_value):
        raise TrainingDiverged(f"non-finite loss {loss_value} at step {step}")


def _epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def forward_classifier(params, cfg: ViTConfig, images, train=False, rng=None,
                       pool="cls"):
    """Intact-image forward to logits via the [CLS] (or mean-patch) head."""
    pat = patchify(images, cfg.patch_size)
    vis = np.tile(np.arange(cfg.n_patches), (pat.shape[0], 1))
    out = encoder_forward(params, cfg, embed(params, cfg, pat, vis),
                          train=train, rng=rng)
    feat = cls_feature(out) if pool == "cls" else mean_patch_feature(out)
    return linear(feat, params["head.w"], params["head.b"])


def evaluate(params, cfg: ViTConfig, data: ImageBatch, batch_size=250, pool="cls"):
    """Top-1 accuracy, eval mode."""
    hits = 0
    for lo in range(0, len(data), batch_size):
        images = data.images[lo:lo + batch_size]
        logits = forward_classifier(params, cfg, images, train=False, pool=pool)
        hits += int((logits.data.argmax(axis=1) == data.labels[lo:lo + batch_size]).sum())
    return hits / len(data)


# ---------------------------------------------------------------------------
# supervised teacher
# ---------------------------------------------------------------------------

def train_teacher(vit_cfg: ViTConfig, cfg: TrainConfig, train: ImageBatch,
                  test: ImageBatch, log=None):
    """Supervised cross-entropy training; returns (params, history).

    history rows: dict(epoch, loss, val_acc).
    """
    rng = np.random.default_rng(cfg.seed)
    params = init_vit_params(vit_cfg, rng, num_classes=10)
    opt = AdamW(params, lr=0.0, weight_decay=cfg.weight_decay, betas=cfg.betas)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _epoch_batches(len(train), cfg.batch_size, rng):
            images = augment_batch(train.images[idx], rng)
            lr = cosine_lr(step, total_steps, cfg.warmup_fraction, cfg.base_lr)
            with Tape():
                logits = forward_classifier(params, vit_cfg, images,
                                            train=True, rng=rng)
                loss = cross_entropy(logits, train.labels[idx])
                backward(loss)
            _check_finite(loss.item(), step)
            opt.step(lr)
            opt.zero_grad()
            losses.append(loss.item())
            step += 1
        val_acc = evaluate(params, vit_cfg, test)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "val_acc": val_acc}
        history.append(row)
        if log:
            log(f"teacher epoch {epoch}: loss {row['loss']:.4f} val_acc {val_acc:.3f}")
    return params, history


# ---------------------------------------------------------------------------
# alignment pretraining
# ---------------------------------------------------------------------------

def _build_plans(n, cfg: TrainConfig, teacher_attn, rng):
    if cfg.mask_mode == "random":
        return [random_mask(n, cfg.mask_ratio, rng) for _ in range(len(teacher_attn))]
    mode = "topk" if cfg.mask_mode == "attentive" else "stochastic"
    return [attentive_mask(n, cfg.mask_ratio, a, mode=mode, rng=rng)
            for a in teacher_attn]


def pretrain_total_steps(cfg: TrainConfig, n_images):
    steps_per_epoch = math.ceil(n_images / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    if cfg.equal_compute:
        scale = (1.0 - cfg.equal_compute_baseline) / (1.0 - cfg.mask_ratio)
        total = max(1, round(total * scale))
    return total, steps_per_epoch


def pretrain(student_cfg: ViTConfig, teacher: FrozenTeacher, cfg: TrainConfig,
             train: ImageBatch, log=None):
    """MaskAlign pretraining; returns (student params, head, trace).

    trace rows: (step, lr, loss). The teacher runs once per batch on the
    intact images; its last-layer attention drives attentive masking and its
    block outputs are the alignment targets.
    """
    rng = np.random.default_rng(cfg.seed)
    params = init_vit_params(student_cfg, rng)
    head = init_alignment_head(cfg.align, student_cfg.depth, student_cfg.embed_dim,
                               teacher.config.embed_dim, teacher.config.depth, rng)
    opt_params = {"student." + k: v for k, v in params.items()}
    opt_params.update({"align." + k: v for k, v in head.params.items()})
    opt = AdamW(opt_params, lr=0.0, weight_decay=cfg.weight_decay, betas=cfg.betas)

    n = student_cfg.n_patches
    total_steps, steps_per_epoch = pretrain_total_steps(cfg, len(train))
    trace = []
    step = 0
    batches = _epoch_batches(len(train), cfg.batch_size, rng)
    while step < total_steps:
        try:
            idx = next(batches)
        except StopIteration:
            batches = _epoch_batches(len(train), cfg.batch_size, rng)
            idx = next(batches)
        images = augment_batch(train.images[idx], rng)
        t_out = teacher_forward(teacher, images)
        plans = _build_plans(n, cfg, t_out.last_attention, rng)
        vis = np.stack([p.visible_idx for p in plans])
        pat = patchify(images, student_cfg.patch_size)
        lr = cosine_lr(step, total_steps, cfg.warmup_fraction, cfg.base_lr)
        with Tape():
            s_out = encoder_forward(params, student_cfg,
                                    embed(params, student_cfg, pat, vis),
                                    train=True, rng=rng)
            # masked positions must never be materialized in the student path
            n_tok = vis.shape[1] + 1
            assert all(t.data.shape[1] == n_tok for t in s_out.per_block)
            assert s_out.last_attention.shape[-1] == n_tok
            loss = maskalign_step(s_out, t_out, plans, head, cfg.align)
            backward(loss)
        _check_finite(loss.item(), step)
        opt.step(lr)
        opt.zero_grad()
        trace.append((step, lr, loss.item()))
        if log and (step + 1) % steps_per_epoch == 0:
            epoch = step // steps_per_epoch
            recent = [l for _, _, l in trace[-steps_per_epoch:]]
            log(f"pretrain epoch {epoch}: loss {float(np.mean(recent)):.5f}")
        step += 1
    return params, head, trace


def epoch_mean_losses(trace, steps_per_epoch):
    """Group a (step, lr, loss) trace into epoch means."""
    losses = [l for _, _, l in trace]
    return [float(np.mean(losses[lo:lo + steps_per_epoch]))
            for lo in range(0, len(losses), steps_per_epoch)]


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

def extract_features(params, cfg: ViTConfig, images, batch_size=250, pool="cls"):
    """Eval-mode final-norm features, no augmentation: [n, D]."""
    feats = []
    for lo in range(0, len(images), batch_size):
        pat = patchify(images[lo:lo + batch_size], cfg.patch_size)
        vis = np.tile(np.arange(cfg.n_patches), (pat.shape[0], 1))
        out = encoder_forward(params, cfg, embed(params, cfg, pat, vis))
        f = cls_feature(out) if pool == "cls" else mean_patch_feature(out)
        feats.append(f.data)
    return np.concatenate(feats)


def linear_probe(vit_cfg: ViTConfig, params, train: ImageBatch, test: ImageBatch,
                 epochs=40, lr=0.01, batch_size=256, seed=0, pool="cls", log=None):
    """Train only a linear classifier on frozen features; returns accuracy."""
    rng = np.random.default_rng(seed)
    ftr = extract_features(params, vit_cfg, train.images, pool=pool)
    fte = extract_features(params, vit_cfg, test.images, pool=pool)
    d = ftr.shape[1]
    w = Tensor(trunc_normal(rng, (d, 10)), requires_grad=True)
    b = Tensor(np.zeros(10, dtype=np.float32), requires_grad=True)
    opt = AdamW({"head.w": w, "head.b": b}, lr=0.0, weight_decay=0.0, betas=(0.9, 0.95))
    steps_per_epoch = math.ceil(len(ftr) / batch_size)
    total = epochs * steps_per_epoch
    step = 0
    for _ in range(epochs):
        for idx in _epoch_batches(len(ftr), batch_size, rng):
            sched = cosine_lr(step, total, 0.05, lr)
            with Tape():
                logits = linear(Tensor(ftr[idx]), w, b)
                loss = cross_entropy(logits, train.labels[idx])
                backward(loss)
            _check_finite(loss.item(), step)
            opt.step(sched)
            opt.zero_grad()
            step += 1
    pred = (fte @ w.data + b.data).argmax(axis=1)
    acc = float((pred == test.labels).mean())
    if log:
        log(f"probe accuracy {acc:.3f}")
    return acc


# ---------------------------------------------------------------------------
# finetune
# ---------------------------------------------------------------------------

def finetune(vit_cfg: ViTConfig, pretrained_params, cfg: TrainConfig,
             train: ImageBatch, test: ImageBatch, log=None):
    """End-to-end classification from a pretrained backbone.

    Applies layer-wise lr decay and the finetune drop path rate; returns
    (params, accuracy, history). history carries the lr_scales actually used.
    """
    rng = np.random.default_rng(cfg.seed)
    run_cfg = replace(vit_cfg, drop_path_rate=cfg.drop_path_rate)
    params = {k: Tensor(v.data.copy(), requires_grad=True)
              for k, v in pretrained_params.items() if not k.startswith("head.")}
    params["head.w"] = Tensor(trunc_normal(rng, (vit_cfg.embed_dim, 10)), requires_grad=True)
    params["head.b"] = Tensor(np.zeros(10, dtype=np.float32), requires_grad=True)
    scales = layer_decay_scales(params, vit_cfg.depth, cfg.layer_decay)
    opt = AdamW(params, lr=0.0, weight_decay=cfg.weight_decay, betas=cfg.betas,
                lr_scales=scales)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    history = {"lr_scales": scales, "epochs": []}
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _epoch_batches(len(train), cfg.batch_size, rng):
            images = augment_batch(train.images[idx], rng)
            lr = cosine_lr(step, total_steps, cfg.warmup_fraction, cfg.base_lr)
            with Tape():
                logits = forward_classifier(params, run_cfg, images,
                                            train=True, rng=rng)
                loss = cross_entropy(logits, train.labels[idx])
                backward(loss)
            _check_finite(loss.item(), step)
            opt.step(lr)
            opt.zero_grad()
            losses.append(loss.item())
            step += 1
        row = {"epoch": epoch, "loss": float(np.mean(losses))}
        history["epochs"].append(row)
        if log:
            log(f"finetune epoch {epoch}: loss {row['loss']:.4f}")
    acc = evaluate(params, vit_cfg, test)
    if log:
        log(f"finetune accuracy {acc:.3f}")
    return params, acc, history


# ---------------------------------------------------------------------------
# loss traces
# ---------------------------------------------------------------------------

def write_trace(path, trace):
    with open(path, "w") as f:
        f.write("step,lr,loss\n")
        for step, lr, loss in trace:
            f.write(f"{step},{lr!r},{loss!r}\n")


def read_trace(path):
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "step,lr,loss":
            raise ConfigError(f"{path}: unexpected trace header {header!r}")
        for line in f:
            s, lr, loss = line.strip().split(",")
            rows.append((int(s), float(lr), float(loss)))
    return rows
