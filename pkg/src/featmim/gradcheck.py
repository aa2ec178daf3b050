"""End-to-end gradient verification of the full training loss.

Runs the model in float64 on a deterministic synthetic image and compares
the tape's analytic gradients for every parameter against central finite
differences. Relative error uses max(|analytic|, |numeric|, floor) in the
denominator so near-zero gradients do not blow up the ratio.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .losses import global_loss, patch_loss, total_loss
from .masking import generate_mask
from .model import BoundParams, forward, init_params
from .synth import synthetic_image
from .teacher import align_input, make_teacher
from .tensor import Tape, backward


@dataclass(frozen=True)
class GradCheckReport:
    per_param: dict  # name -> max relative error over its elements
    max_rel_err: float
    worst_param: str
    n_parameters: int

    def passed(self, tolerance=1e-4):
        return self.max_rel_err < tolerance


def tiny_run_config():
    """The default gradient-check configuration: small enough that full
    elementwise finite differences finish in seconds."""
    from .config import RunConfig
    from .losses import LossConfig
    from .masking import MaskSpec
    from .model import ModelConfig
    from .teacher import TeacherSpec

    return RunConfig(
        mask=MaskSpec(image_side=16, patch_side=8, block_side=8, mask_ratio=0.5, seed=11),
        model=ModelConfig(patch_side=8, embed_dim=8, enc_depth=2, enc_heads=2,
                          dec_depth=1, dec_width=8, dec_heads=2, target_dim=16,
                          use_cls=True, multi_block=True, aggregate="mean"),
        loss=LossConfig(beta=2.0, lam=0.5),
        teacher=TeacherSpec(kind="procedural-conv", downsample_rate=8,
                            target_dim=16, seed=5),
    )


def grad_check(cfg=None, h=1e-5, floor=1e-6, in_channels=3):
    """Compare analytic and numeric gradients of the total loss, parameter
    by parameter, element by element. Everything runs in float64."""
    if cfg is None:
        cfg = tiny_run_config()
    cfg.validate()
    if cfg.model.embed_dim > 16:
        raise ConfigError("grad_check expects a tiny model (embed_dim <= 16)")

    mask = generate_mask(cfg.mask)
    image = synthetic_image(cfg.mask.image_side, in_channels,
                            seed=cfg.train.seed, dtype=np.float64)
    teacher = make_teacher(cfg.teacher, in_channels=in_channels)
    aligned = align_input(image, cfg.model.patch_side, teacher.downsample_rate)
    feats = teacher.features(aligned, "gradcheck")

    params = init_params(cfg.model, cfg.mask.image_side, in_channels,
                         seed=cfg.train.seed, dtype=np.float64)

    def loss_of(bp):
        out = forward(image, mask, bp)
        lp = patch_loss(out.z, feats, mask, cfg.loss.beta, cfg.loss.channel_reduce)
        lg = global_loss(out.p_visible, feats, mask, cfg.loss.beta, cfg.loss.channel_reduce)
        return total_loss(lp, lg, cfg.loss.lam)

    tape = Tape()
    analytic = backward(tape, loss_of(BoundParams(params, tape)))

    def loss_value():
        return float(loss_of(BoundParams(params)).data)

    per_param = {}
    n_elements = 0
    for name, arr in params.weights.items():
        flat = arr.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_value()
            flat[i] = orig - h
            fm = loss_value()
            flat[i] = orig
            num[i] = (fp - fm) / (2.0 * h)
        ana = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        per_param[name] = float(np.max(np.abs(ana - num) / denom))
        n_elements += flat.size

    worst = max(per_param, key=per_param.get)
    return GradCheckReport(per_param=per_param, max_rel_err=per_param[worst],
                           worst_param=worst, n_parameters=n_elements)
