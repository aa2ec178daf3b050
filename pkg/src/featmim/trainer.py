"""Optimizer, learning-rate schedule, and the pretraining loop.

AdamW with decoupled weight decay, linear-warmup + cosine-decay schedule
under the linear scaling rule lr = base_lr * batch_size / 256. Teacher
features are extracted once per image and cached (the teacher is frozen).
Everything is deterministic for a fixed seed: masks come from a SplitMix64
stream, the epoch shuffle from another, and gradients apply in a fixed
parameter order.

When the global loss weight is zero and multi-block aggregation is off, the
step dispatches to a reduced implementation that contains neither code path,
so that configuration is exactly the plain feature-regression baseline.
"""

import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tn
from .errors import ConfigError
from .losses import global_loss, patch_loss, total_loss
from .masking import MaskSpec, SplitMix64, generate_mask
from .model import (BoundParams, decode, encode_visible, forward, init_params,
                    patch_embed, save_checkpoint)
from .teacher import align_input, make_teacher
from .tensor import Tape, backward

METRICS_COLUMNS = ("step", "epoch", "lr", "L_patch", "L_global", "L_total")

_MASK_STREAM_TAG = 0x6D61736B  # distinct tags keep the seed streams apart
_SHUFFLE_STREAM_TAG = 0x73687566


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1.5e-4
    batch_size: int = 8
    warmup_epochs: float = 40.0
    total_epochs: float = 100.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.95
    seed: int = 0
    checkpoint_interval: int = 0  # 0 = final checkpoint only

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs < total_epochs, got "
                f"{self.warmup_epochs} / {self.total_epochs}")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optimizer momenta must lie in [0, 1)")
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be non-negative")


def scaled_lr(base_lr, batch_size):
    """Linear scaling rule: lr = base_lr * batch_size / 256."""
    return base_lr * batch_size / 256.0


def lr_at(t, cfg: TrainConfig):
    """Learning rate at fractional epoch t: linear ramp to the scaled peak
    over the warmup, then cosine decay to exactly zero at total_epochs."""
    if not 0 <= t <= cfg.total_epochs:
        raise ConfigError(f"epoch {t} outside [0, {cfg.total_epochs}]")
    peak = scaled_lr(cfg.base_lr, cfg.batch_size)
    if t < cfg.warmup_epochs:
        return peak * t / cfg.warmup_epochs
    frac = (t - cfg.warmup_epochs) / (cfg.total_epochs - cfg.warmup_epochs)
    return max(0.0, peak * 0.5 * (1.0 + math.cos(math.pi * frac)))


class OptimizerState:
    """First/second moments per parameter plus a shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.step = 0


def adamw_step(params, grads, state: OptimizerState, lr, *,
               beta1=0.9, beta2=0.95, weight_decay=0.05, eps=1e-8):
    """One decoupled-weight-decay Adam update, in place, sorted by name."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)


def step_losses_full(bp, batch):
    """Batch-mean losses on the tape: patch + lambda * global, multi-block
    aggregation per config. batch: [(image, mask, feats, loss_cfg)].

    Returns (loss tensor, logged L_patch, L_global, L_total); the logged
    values are float64 means of the per-image scalars so the three CSV
    columns share one reduction.
    """
    lt_sum = None
    lp_vals, lg_vals, lt_vals = [], [], []
    for image, mask, feats, loss_cfg in batch:
        out = forward(image, mask, bp)
        lp = patch_loss(out.z, feats, mask, loss_cfg.beta, loss_cfg.channel_reduce)
        lg = global_loss(out.p_visible, feats, mask, loss_cfg.beta, loss_cfg.channel_reduce)
        lt = total_loss(lp, lg, loss_cfg.lam)
        lt_sum = lt if lt_sum is None else tn.add(lt_sum, lt)
        lp_vals.append(float(lp.data))
        lg_vals.append(float(lg.data))
        lt_vals.append(float(lt.data))
    n = len(batch)
    return (tn.mul(lt_sum, 1.0 / n), math.fsum(lp_vals) / n,
            math.fsum(lg_vals) / n, math.fsum(lt_vals) / n)


def step_losses_baseline(bp, batch):
    """The plain feature-regression step: last encoder block straight into
    the decoder, patch loss only. No global head, no block aggregation."""
    lp_sum = None
    lp_vals = []
    for image, mask, feats, loss_cfg in batch:
        tokens = patch_embed(image, bp)
        out = encode_visible(tokens, mask, bp)
        z = decode(out.layers[-1], mask, bp)
        lp = patch_loss(z, feats, mask, loss_cfg.beta, loss_cfg.channel_reduce)
        lp_sum = lp if lp_sum is None else tn.add(lp_sum, lp)
        lp_vals.append(float(lp.data))
    n = len(batch)
    mean_lp = math.fsum(lp_vals) / n
    return tn.mul(lp_sum, 1.0 / n), mean_lp, 0.0, mean_lp


@dataclass
class TrainResult:
    final_checkpoint: str
    metrics_csv: str
    total_steps: int
    final_l_patch: float
    final_l_global: float
    final_l_total: float


class FeatureCache:
    """Teacher features computed once per image id; the teacher is frozen,
    so cached bytes never change."""

    def __init__(self, teacher, patch_side):
        self.teacher = teacher
        self.patch_side = patch_side
        self._store = {}

    def get(self, image_id, image):
        if image_id not in self._store:
            if self.teacher.downsample_rate is not None:
                image = align_input(image, self.patch_side, self.teacher.downsample_rate)
            self._store[image_id] = self.teacher.features(image, image_id)
        return self._store[image_id]


def _shuffled(ids, stream: SplitMix64):
    order = list(ids)
    for i in range(len(order) - 1, 0, -1):
        j = stream.next_below(i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def _format_row(step, epoch, lr, lp, lg, lt):
    return f"{step},{epoch!r},{lr!r},{lp!r},{lg!r},{lt!r}\n"


def train(cfg, images, out_dir, step_variant=None):
    """Pretrain on a list of (image_id, [C, H, W]) arrays.

    step_variant: None picks automatically ("baseline" when lam == 0 and
    multi_block is off, else "full"); pass explicitly to force one.
    Writes metrics.csv and ckpt_<step>.bin files under out_dir.
    """
    cfg.validate()
    if not images:
        raise ConfigError("training needs at least one image")
    if len({image_id for image_id, _ in images}) != len(images):
        raise ConfigError("image ids must be unique")
    tc = cfg.train
    mask_spec = cfg.mask

    channels = {img.shape[0] for _, img in images}
    if len(channels) != 1:
        raise ConfigError(f"images disagree on channel count: {sorted(channels)}")
    in_channels = channels.pop()
    for image_id, img in images:
        if img.shape[1:] != (mask_spec.image_side, mask_spec.image_side):
            raise ConfigError(
                f"image {image_id!r} is {img.shape[1:]}, mask spec wants "
                f"{mask_spec.image_side}x{mask_spec.image_side}")

    teacher = make_teacher(cfg.teacher, in_channels=in_channels)
    if teacher.target_dim != cfg.model.target_dim:
        raise ConfigError(
            f"teacher target_dim {teacher.target_dim} != model target_dim "
            f"{cfg.model.target_dim}")

    if step_variant is None:
        reduced = cfg.loss.lam == 0.0 and not cfg.model.multi_block
        step_variant = "baseline" if reduced else "full"
    if step_variant not in ("full", "baseline"):
        raise ConfigError(f"unknown step variant {step_variant!r}")
    step_fn = step_losses_baseline if step_variant == "baseline" else step_losses_full

    os.makedirs(out_dir, exist_ok=True)
    params = init_params(cfg.model, mask_spec.image_side, in_channels, tc.seed)
    opt = OptimizerState()
    cache = FeatureCache(teacher, cfg.model.patch_side)

    by_id = dict(images)
    ids = [image_id for image_id, _ in images]
    steps_per_epoch = math.ceil(len(ids) / tc.batch_size)
    total_steps = int(round(tc.total_epochs * steps_per_epoch))
    if total_steps < 1:
        raise ConfigError(
            f"total_epochs {tc.total_epochs} yields zero optimizer steps")
    # per-step masks are resampled from the mask spec's own seed stream, so
    # --mask-seed varies masking without touching init or data order
    mask_stream = SplitMix64(mask_spec.seed ^ _MASK_STREAM_TAG)
    shuffle_stream = SplitMix64(tc.seed ^ _SHUFFLE_STREAM_TAG)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    final_ckpt = os.path.join(out_dir, f"ckpt_{total_steps}.bin")
    lp = lg = lt = float("nan")
    with open(metrics_path, "w") as metrics:
        metrics.write(",".join(METRICS_COLUMNS) + "\n")
        order = []
        for step in range(total_steps):
            if step % steps_per_epoch == 0:
                order = _shuffled(ids, shuffle_stream)
            lo = (step % steps_per_epoch) * tc.batch_size
            batch_ids = order[lo:lo + tc.batch_size]

            batch = []
            for image_id in batch_ids:
                img = by_id[image_id]
                spec = MaskSpec(mask_spec.image_side, mask_spec.patch_side,
                                mask_spec.block_side, mask_spec.mask_ratio,
                                seed=mask_stream.next_u64())
                batch.append((img, generate_mask(spec), cache.get(image_id, img), cfg.loss))

            t_epoch = step / steps_per_epoch
            lr = lr_at(t_epoch, tc)
            tape = Tape()
            bp = BoundParams(params, tape)
            loss, lp, lg, lt = step_fn(bp, batch)
            grads = backward(tape, loss)
            adamw_step(params.weights, grads, opt, lr,
                       beta1=tc.beta1, beta2=tc.beta2, weight_decay=tc.weight_decay)

            metrics.write(_format_row(step, t_epoch, lr, lp, lg, lt))
            if tc.checkpoint_interval and (step + 1) % tc.checkpoint_interval == 0:
                save_checkpoint(os.path.join(out_dir, f"ckpt_{step + 1}.bin"), params)

    save_checkpoint(final_ckpt, params)
    return TrainResult(final_checkpoint=final_ckpt, metrics_csv=metrics_path,
                       total_steps=total_steps, final_l_patch=lp,
                       final_l_global=lg, final_l_total=lt)


def ablate_lambda(cfg, lambdas, images, out_dir):
    """Run the same seeded training once per global-loss weight; write a
    CSV of final losses (out_dir/ablation.csv) for side-by-side reading."""
    if len(lambdas) < 2:
        raise ConfigError("a lambda sweep needs at least two values")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for lam in lambdas:
        sub = replace(cfg, loss=replace(cfg.loss, lam=lam))
        run_dir = os.path.join(out_dir, f"lam_{lam:g}")
        result = train(sub, images, run_dir)
        rows.append((lam, result.final_l_patch, result.final_l_global, result.final_l_total))
    csv_path = os.path.join(out_dir, "ablation.csv")
    with open(csv_path, "w") as f:
        f.write("lambda,final_L_patch,final_L_global,final_L_total\n")
        for lam, flp, flg, flt in rows:
            f.write(f"{lam!r},{flp!r},{flg!r},{flt!r}\n")
    return csv_path
