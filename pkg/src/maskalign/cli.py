"""Command-line entry points.

Config files are flat UTF-8 ``key = value`` lines with ``#`` comments.
Unknown keys are rejected; CLI ``--set key=value`` overrides file values;
every run logs the fully resolved config. Usage errors exit 2, config and
runtime errors exit 1.
"""

import argparse
import os
import sys

from .alignment import AlignmentConfig
from .attnmap import export_attention
from .checkpoint import freeze, load_model, load_teacher, save_model
from .costs import ModelDims, bench_cost, report_rows, wall_clock_ratio
from .data import load_cifar10, write_synthetic_dataset
from .errors import ConfigError, MaskAlignError
from .train import (TrainConfig, finetune, linear_probe, pretrain,
                    train_teacher, write_trace)
from .vit import ViTConfig

# key -> (type, default); bool values accept true/false/1/0/yes/no/on/off
CONFIG_KEYS = {
    "image_h": (int, 32), "image_w": (int, 32), "channels": (int, 3),
    "patch_size": (int, 4), "embed_dim": (int, 96), "depth": (int, 6),
    "num_heads": (int, 3), "mlp_ratio": (float, 4.0),
    "base_lr": (float, 1.5e-4), "weight_decay": (float, 0.05),
    "beta1": (float, 0.9), "beta2": (float, 0.95),
    "batch_size": (int, 128), "epochs": (int, 20),
    "warmup_fraction": (float, 0.1), "drop_path_rate": (float, 0.1),
    "seed": (int, 0), "layer_decay": (float, 1.0),
    "mask_ratio": (float, 0.7), "mask_mode": (str, "attentive"),
    "equal_compute": (bool, False), "equal_compute_baseline": (float, 0.7),
    "align_mode": (str, "dynamic"), "top_k": (int, 3),
    "adaptor": (str, "linear"), "include_cls": (bool, False),
    "target_norm": (str, "layernorm"),
    "probe_epochs": (int, 40), "probe_lr": (float, 0.01),
    "probe_pool": (str, "cls"),
    "max_train": (int, 5000), "max_test": (int, 1000),
}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(key, raw):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    typ, _ = CONFIG_KEYS[key]
    raw = raw.strip()
    if typ is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"config key {key!r}: cannot parse bool from {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def parse_config_file(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            out[key.strip()] = _coerce(key.strip(), raw)
    return out


def resolve_config(config_path=None, sets=()):
    cfg = {k: d for k, (_, d) in CONFIG_KEYS.items()}
    if config_path:
        cfg.update(parse_config_file(config_path))
    for item in sets or ():
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg[key.strip()] = _coerce(key.strip(), raw)
    return cfg


def _log_config(cfg, out=None):
    # late-bound so redirected stdout is honored
    out = out if out is not None else sys.stdout
    for key in sorted(cfg):
        print(f"config: {key} = {cfg[key]}", file=out)


def _vit_config(cfg):
    return ViTConfig(image_h=cfg["image_h"], image_w=cfg["image_w"],
                     channels=cfg["channels"], patch_size=cfg["patch_size"],
                     embed_dim=cfg["embed_dim"], depth=cfg["depth"],
                     num_heads=cfg["num_heads"], mlp_ratio=cfg["mlp_ratio"],
                     drop_path_rate=cfg["drop_path_rate"])


def _align_config(cfg):
    return AlignmentConfig(mode=cfg["align_mode"], top_k=cfg["top_k"],
                           adaptor_kind=cfg["adaptor"],
                           include_cls=cfg["include_cls"],
                           normalize=cfg["target_norm"])


def _train_config(cfg):
    return TrainConfig(base_lr=cfg["base_lr"], weight_decay=cfg["weight_decay"],
                       betas=(cfg["beta1"], cfg["beta2"]),
                       batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       warmup_fraction=cfg["warmup_fraction"],
                       mask_ratio=cfg["mask_ratio"], mask_mode=cfg["mask_mode"],
                       align=_align_config(cfg),
                       drop_path_rate=cfg["drop_path_rate"], seed=cfg["seed"],
                       layer_decay=cfg["layer_decay"],
                       equal_compute=cfg["equal_compute"],
                       equal_compute_baseline=cfg["equal_compute_baseline"])


def _load_data(cfg, data_dir):
    return load_cifar10(data_dir, max_train=cfg["max_train"],
                        max_test=cfg["max_test"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    write_synthetic_dataset(args.out_dir, n_train=args.n_train,
                            n_test=args.n_test, seed=args.seed)
    print(f"wrote synthetic dataset to {args.out_dir}")
    return 0


def cmd_train_teacher(args):
    cfg = resolve_config(args.config, args.set)
    _log_config(cfg)
    train, test = _load_data(cfg, args.data_dir)
    params, history = train_teacher(_vit_config(cfg), _train_config(cfg),
                                    train, test, log=print)
    save_model(args.out, _vit_config(cfg), params)
    print(f"teacher saved to {args.out}; val accuracy {history[-1]['val_acc']:.3f}")
    return 0


def cmd_pretrain(args):
    cfg = resolve_config(args.config, args.set)
    _log_config(cfg)
    train, _ = _load_data(cfg, args.data_dir)
    teacher = load_teacher(args.teacher)
    student_cfg = _vit_config(cfg)
    params, head, trace = pretrain(student_cfg, teacher, _train_config(cfg),
                                   train, log=print)
    save_model(args.out, student_cfg, params)
    print(f"student saved to {args.out}")
    if args.head_out:
        from .checkpoint import Checkpoint, save_checkpoint
        save_checkpoint(args.head_out,
                        Checkpoint(tensors={k: t.data for k, t in head.params.items()}))
        print(f"alignment head saved to {args.head_out}")
    if args.trace:
        write_trace(args.trace, trace)
        print(f"loss trace written to {args.trace}")
    return 0


def cmd_probe(args):
    cfg = resolve_config(args.config, args.set)
    _log_config(cfg)
    train, test = _load_data(cfg, args.data_dir)
    vit_cfg, params = load_model(args.model)
    acc = linear_probe(vit_cfg, params, train, test, epochs=cfg["probe_epochs"],
                       lr=cfg["probe_lr"], seed=cfg["seed"],
                       pool=cfg["probe_pool"], log=print)
    print(f"probe accuracy: {acc:.4f}")
    return 0


def cmd_finetune(args):
    cfg = resolve_config(args.config, args.set)
    _log_config(cfg)
    train, test = _load_data(cfg, args.data_dir)
    vit_cfg, params = load_model(args.model)
    new_params, acc, _ = finetune(vit_cfg, params, _train_config(cfg),
                                  train, test, log=print)
    if args.out:
        save_model(args.out, vit_cfg, new_params)
        print(f"finetuned model saved to {args.out}")
    print(f"finetune accuracy: {acc:.4f}")
    return 0


def cmd_export_attn(args):
    cfg = resolve_config(args.config, args.set)
    _log_config(cfg)
    train, test = _load_data(cfg, args.data_dir)
    batch = test if args.split == "test" else train
    if not 0 <= args.index < len(batch):
        raise ConfigError(f"--index {args.index} outside dataset of {len(batch)}")
    vit_cfg, params = load_model(args.model)
    model = freeze(vit_cfg, params)
    export_attention(model, batch.images[args.index], args.out)
    print(f"attention map written to {args.out}")
    return 0


def cmd_bench_cost(args):
    dims = ModelDims(n_patches=args.n_patches, embed_dim=args.embed_dim,
                     depth=args.depth, top_k=args.top_k,
                     decoder_depth=args.decoder_depth)
    report = bench_cost(dims, args.mask_ratio, args.paradigm)
    rows = report_rows(report)
    if args.measure:
        side = int(round(args.n_patches ** 0.5))
        vit_cfg = ViTConfig(image_h=side * 4, image_w=side * 4, patch_size=4,
                            embed_dim=args.embed_dim, depth=args.depth,
                            num_heads=args.num_heads)
        ratio, t_short, t_full = wall_clock_ratio(vit_cfg, args.mask_ratio)
        rows += [("measured_ratio", ratio), ("measured_masked_s", t_short),
                 ("measured_full_s", t_full)]
    lines = [f"{k},{v}" for k, v in rows]
    if args.out:
        with open(args.out, "w") as f:
            f.write("\n".join(lines) + "\n")
        print(f"cost report written to {args.out}")
    else:
        print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="maskalign",
                                description="masked feature alignment pretraining")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a single config key")

    sp = sub.add_parser("gen-data", help="write the synthetic dataset")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--n-train", type=int, default=5000)
    sp.add_argument("--n-test", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-teacher", help="supervised teacher training")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--out", required=True, help="teacher checkpoint path")
    sp.set_defaults(func=cmd_train_teacher)

    sp = sub.add_parser("pretrain", help="masked feature-alignment pretraining")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--teacher", required=True, help="teacher checkpoint")
    sp.add_argument("--out", required=True, help="student checkpoint path")
    sp.add_argument("--head-out", help="alignment head checkpoint path")
    sp.add_argument("--trace", help="loss trace CSV path")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("probe", help="linear probe of a frozen backbone")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--model", required=True)
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("finetune", help="end-to-end finetuning")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", help="finetuned checkpoint path")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("export-attn", help="write the [CLS] attention map as PGM")
    common(sp)
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_attn)

    sp = sub.add_parser("bench-cost", help="paradigm FLOP model and speed probe")
    sp.add_argument("--n-patches", type=int, default=196)
    sp.add_argument("--embed-dim", type=int, default=768)
    sp.add_argument("--depth", type=int, default=12)
    sp.add_argument("--num-heads", type=int, default=12)
    sp.add_argument("--top-k", type=int, default=3)
    sp.add_argument("--decoder-depth", type=int, default=2)
    sp.add_argument("--mask-ratio", type=float, default=0.7)
    sp.add_argument("--paradigm", choices=("inpainting", "decoder", "alignment"),
                    default="alignment")
    sp.add_argument("--measure", action="store_true",
                    help="also time the implemented forward")
    sp.add_argument("--out", help="write the report as CSV")
    sp.set_defaults(func=cmd_bench_cost)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except MaskAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
