"""Training loop, evaluation, and the ablation experiment runners."""

import csv
import os
import time
from dataclasses import replace

import numpy as np

from . import data_synth, figures, saliency
from .checkpoint import load_checkpoint, save_checkpoint
from .config import echo_config
from .errors import ValidationError
from .model import (eval_step_feature, forward_batch, init_model,
                    loss_and_grads, select_patch, sgd_step)
from .patches import crop_resize
from .tensor_core import Rng

METRICS_COLUMNS = ("epoch", "train_loss", "global_acc", "local_acc", "fused_acc")


def build_model(cfg, n_classes, c_in):
    rng = Rng(cfg.seed)
    return init_model(rng, n_classes, c_in=c_in, channels=(8, 16, cfg.hidden),
                      hidden=cfg.hidden, lstm_layers=cfg.lstm_layers,
                      time_steps=cfg.time_steps,
                      attention_shared=cfg.attention_shared)


def _patch_tensor(sample, p, cfg):
    img = sample.image[None, :, :, :]
    return crop_resize(img, p, cfg.patch_size, cfg.patch_size)


def prepare_eval_arrays(samples, cfg):
    """Stack images, index-0 patches (deterministic) and labels."""
    images = np.stack([s.image for s in samples], axis=0)
    pats = []
    for s in samples:
        if not s.patches:
            raise ValidationError(f"sample {s.image_id} has no patches")
        idx = min(cfg.eval_patch_index, len(s.patches) - 1)
        pats.append(_patch_tensor(s, s.patches[idx], cfg)[0])
    patches_arr = np.stack(pats, axis=0)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, patches_arr, labels


def evaluate(model, samples, cfg, local_mode=None, collect_alphas=False, chunk=64):
    """Global / local / fused accuracy on index-0 patches."""
    mode = cfg.local_mode if local_mode is None else local_mode
    images, patches_arr, labels = prepare_eval_arrays(samples, cfg)
    hits = {"global_acc": 0, "local_acc": 0, "fused_acc": 0}
    alphas = []
    sum_k = cfg.sum_k or cfg.time_steps
    for lo in range(0, len(samples), chunk):
        sl = slice(lo, lo + chunk)
        out = forward_batch(model, images[sl], patches_arr[sl], cfg.fusion,
                            local_mode=mode, sum_k=sum_k)
        y = labels[sl]
        hits["global_acc"] += int((out["global_probs"].argmax(axis=1) == y).sum())
        hits["local_acc"] += int((out["local_probs"].argmax(axis=1) == y).sum())
        hits["fused_acc"] += int((out["fused_probs"].argmax(axis=1) == y).sum())
        if collect_alphas and out["alphas"] is not None:
            alphas.append(out["alphas"])
    n = len(samples)
    result = {k: v / n for k, v in hits.items()}
    if collect_alphas:
        result["alphas"] = np.concatenate(alphas, axis=0) if alphas else None
    return result


def run_training(cfg, train_samples, test_samples, local_mode=None):
    """Train a model from scratch; returns (model, metrics_rows, wall_ms_rows).

    Fully deterministic in (cfg, seed): model init, sample order and patch
    selection each draw from independent seeded streams.
    """
    mode = cfg.local_mode if local_mode is None else local_mode
    c_in = train_samples[0].image.shape[0]
    n_classes = max(s.label for s in train_samples) + 1
    model = build_model(cfg, n_classes, c_in)
    shuffle_rng = Rng([cfg.seed, 1])
    patch_rng = Rng([cfg.seed, 2])
    sum_k = cfg.sum_k or cfg.time_steps

    metrics = []
    timings = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(train_samples))
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = [train_samples[i] for i in idx]
            images = np.stack([s.image for s in batch], axis=0)
            pats = []
            for s in batch:
                if cfg.patch_policy == "random":
                    p = select_patch(patch_rng, s.patches)
                else:
                    p = s.patches[0]
                pats.append(_patch_tensor(s, p, cfg)[0])
            patches_arr = np.stack(pats, axis=0)
            labels = [s.label for s in batch]
            loss, grads = loss_and_grads(model, images, patches_arr, labels,
                                         lam=cfg.lam, local_mode=mode, sum_k=sum_k)
            sgd_step(model, grads, cfg.lr)
            losses.append(loss)
        accs = evaluate(model, test_samples, cfg, local_mode=mode)
        metrics.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        **accs})
        timings.append({"epoch": epoch,
                        "wall_ms": (time.perf_counter() - t0) * 1000.0})
    return model, metrics, timings


def write_metrics_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for r in rows:
            writer.writerow([r["epoch"], repr(r["train_loss"]),
                             repr(r["global_acc"]), repr(r["local_acc"]),
                             repr(r["fused_acc"])])


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow(r)


def load_splits(cfg):
    train = data_synth.read_dataset(os.path.join(cfg.data_dir, "train"))
    test = data_synth.read_dataset(os.path.join(cfg.data_dir, "test"))
    return train, test


# ---------------------------------------------------------------------------
# Command implementations (the CLI wraps these).
# ---------------------------------------------------------------------------

def cmd_gen(cfg):
    spec = data_synth.SyntheticSpec(
        classes=cfg.classes, per_class_train=cfg.per_class_train,
        per_class_test=cfg.per_class_test, channels=cfg.channels,
        height=cfg.image_size, width=cfg.image_size,
        motif_size=cfg.motif_size, noise_std=cfg.noise_std, seed=cfg.seed)
    train, test = data_synth.generate(spec)
    data_synth.write_dataset(os.path.join(cfg.data_dir, "train"), train)
    data_synth.write_dataset(os.path.join(cfg.data_dir, "test"), test)
    echo_config(cfg, cfg.out_dir)
    return len(train), len(test)


def cmd_train(cfg):
    train, test = load_splits(cfg)
    model, metrics, timings = run_training(cfg, train, test)
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo_config(cfg, cfg.out_dir)
    write_metrics_csv(os.path.join(cfg.out_dir, "metrics.csv"), metrics)
    _write_csv(os.path.join(cfg.out_dir, "timings.csv"), ("epoch", "wall_ms"),
               [(t["epoch"], f"{t['wall_ms']:.1f}") for t in timings])
    save_checkpoint(os.path.join(cfg.out_dir, "model.ckpt"), model)
    if metrics:
        figures.plot_training_curves(metrics,
                                     os.path.join(cfg.out_dir, "training_curves.png"))
    return model, metrics


def cmd_eval(cfg, checkpoint_path):
    _, test = load_splits(cfg)
    c_in = test[0].image.shape[0]
    n_classes = max(s.label for s in test) + 1
    model = build_model(cfg, n_classes, c_in)
    load_checkpoint(checkpoint_path, model)
    result = evaluate(model, test, cfg, collect_alphas=True)
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo_config(cfg, cfg.out_dir)
    _write_csv(os.path.join(cfg.out_dir, "eval_metrics.csv"),
               ("global_acc", "local_acc", "fused_acc"),
               [(repr(result["global_acc"]), repr(result["local_acc"]),
                 repr(result["fused_acc"]))])
    alphas = result.get("alphas")
    if alphas is not None:
        header = ["image_id"] + [f"alpha_{t}" for t in range(1, alphas.shape[1] + 1)]
        rows = [[s.image_id] + [repr(float(a)) for a in alphas[i]]
                for i, s in enumerate(test)]
        _write_csv(os.path.join(cfg.out_dir, "alphas.csv"), header, rows)
        figures.plot_alphas(alphas, os.path.join(cfg.out_dir, "alphas.png"))
    return result


ABLATION_MODES = ("components", "sum_vs_attn", "step_features", "step_sweep")


def cmd_ablate(cfg, mode):
    if mode not in ABLATION_MODES:
        raise ValidationError(f"unknown ablation mode {mode!r}; "
                              f"expected one of {ABLATION_MODES}")
    train, test = load_splits(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo_config(cfg, cfg.out_dir)

    if mode == "components":
        variants = [
            ("baseline", dict(local_mode="global_only", lam=0.0,
                              fusion_global=1.0, fusion_local=0.0)),
            ("cnn_only", dict(local_mode="cnn_only")),
            ("lstm", dict(local_mode="lstm_last")),
            ("lstm_attention", dict(local_mode="attention")),
        ]
        header = ("variant", "global_acc", "local_acc", "fused_acc")
        rows = []
        for name, over in variants:
            vcfg = replace(cfg, **over)
            _, met, _ = run_training(vcfg, train, test)
            last = met[-1]
            rows.append((name, repr(last["global_acc"]), repr(last["local_acc"]),
                         repr(last["fused_acc"])))
    elif mode == "sum_vs_attn":
        header = ("aggregation", "global_acc", "local_acc", "fused_acc")
        rows = []
        for k in range(1, cfg.time_steps + 1):
            vcfg = replace(cfg, local_mode="sum", sum_k=k)
            _, met, _ = run_training(vcfg, train, test)
            last = met[-1]
            label = "1" if k == 1 else f"1~{k}"
            rows.append((label, repr(last["global_acc"]), repr(last["local_acc"]),
                         repr(last["fused_acc"])))
        vcfg = replace(cfg, local_mode="attention")
        _, met, _ = run_training(vcfg, train, test)
        last = met[-1]
        rows.append(("attention", repr(last["global_acc"]),
                     repr(last["local_acc"]), repr(last["fused_acc"])))
    elif mode == "step_features":
        vcfg = replace(cfg, local_mode="attention")
        model, _, _ = run_training(vcfg, train, test)
        images, patches_arr, labels = prepare_eval_arrays(test, cfg)
        header = ("step", "local_acc", "fused_acc")
        rows = []
        for t in range(1, cfg.time_steps + 1):
            fused = eval_step_feature(model, images, patches_arr, labels, t,
                                      fusion=cfg.fusion)
            out = forward_batch(model, images, patches_arr, cfg.fusion,
                                local_mode="step", step=t)
            local = float((out["local_probs"].argmax(axis=1) == labels).mean())
            rows.append((t, repr(local), repr(fused)))
    else:  # step_sweep
        header = ("time_steps", "global_acc", "local_acc", "fused_acc")
        rows = []
        for steps in cfg.sweep_steps:
            vcfg = replace(cfg, time_steps=steps, local_mode="attention",
                           sum_k=0)
            _, met, _ = run_training(vcfg, train, test)
            last = met[-1]
            rows.append((steps, repr(last["global_acc"]), repr(last["local_acc"]),
                         repr(last["fused_acc"])))

    path = os.path.join(cfg.out_dir, f"ablation_{mode}.csv")
    _write_csv(path, header, rows)
    figures.plot_ablation(header, rows, mode,
                          os.path.join(cfg.out_dir, f"ablation_{mode}.png"))
    return path, rows


def cmd_saliency(cfg, checkpoint_path, image_id, patch_id):
    train, test = load_splits(cfg)
    sample = next((s for s in train + test if s.image_id == image_id), None)
    if sample is None:
        raise ValidationError(f"image_id {image_id!r} not found in dataset")
    try:
        pidx = int(patch_id)
    except ValueError:
        raise ValidationError(f"patch_id must be an integer index, got {patch_id!r}") from None
    if not 0 <= pidx < len(sample.patches):
        raise ValidationError(f"patch_id {pidx} out of range for {image_id}")
    c_in = sample.image.shape[0]
    n_classes = cfg.classes
    model = build_model(cfg, n_classes, c_in)
    load_checkpoint(checkpoint_path, model)
    patch = _patch_tensor(sample, sample.patches[pidx], cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    echo_config(cfg, cfg.out_dir)
    paths = []
    heatmaps = []
    for t in range(1, cfg.time_steps + 1):
        hm = saliency.grad_cam_step(model, patch, t, sample.label,
                                    patch_id=str(pidx))
        name = f"{image_id}_{pidx}_t{t}_c{sample.label}.pgm"
        out_path = os.path.join(cfg.out_dir, name)
        saliency.export_heatmap(hm, out_path)
        paths.append(out_path)
        heatmaps.append(hm)
    figures.plot_heatmap_grid(heatmaps,
                              os.path.join(cfg.out_dir,
                                           f"{image_id}_{pidx}_heatmaps.png"))
    return paths
