"""Frozen feature teachers and the teacher/student grid-alignment rule.

A teacher turns a full (unmasked) image into one target token per student
patch. Teachers live entirely outside the gradient tape: their outputs are
constants for the student. Two kinds ship: a procedural stack of stride-2
convolutions (deterministic from a seed, used everywhere in tests) and a
file-backed teacher that replays features dumped by `dump_features`.
"""

import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .tensor import read_tvec, write_tvec


@dataclass(frozen=True)
class TeacherSpec:
    kind: str = "procedural-conv"  # "procedural-conv" | "file"
    downsample_rate: int = 8
    target_dim: int = 16
    seed: int = 0
    l2_normalize: bool = False
    features_dir: Optional[str] = None

    def validate(self):
        if self.kind not in ("procedural-conv", "file"):
            raise ConfigError(f"unknown teacher kind {self.kind!r}")
        if self.kind == "file" and not self.features_dir:
            raise ConfigError("file teacher needs features_dir")
        if self.kind == "procedural-conv":
            if self.downsample_rate < 2 or self.downsample_rate & (self.downsample_rate - 1):
                raise ConfigError("procedural teacher downsample_rate must be a power of two >= 2")
            if self.target_dim < 1:
                raise ConfigError("target_dim must be positive")


@dataclass(frozen=True)
class TeacherFeatures:
    tokens: np.ndarray  # [K, D_t]
    grid_side: int
    source_id: str

    @property
    def n_tokens(self):
        return self.tokens.shape[0]

    @property
    def dim(self):
        return self.tokens.shape[1]


def bilinear_resize(image, out_h, out_w):
    """Separable bilinear resampling, align-corners=false convention.

    Output pixel j samples the input at (j + 0.5) * in/out - 0.5, clamped
    to the valid range.
    """
    c, h, w = image.shape

    def coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, (src - i0).astype(image.dtype)

    r0, r1, wr = coords(h, out_h)
    c0, c1, wc = coords(w, out_w)
    wr = wr[None, :, None]
    wc = wc[None, None, :]
    tl = image[:, r0[:, None], c0[None, :]]
    tr = image[:, r0[:, None], c1[None, :]]
    bl = image[:, r1[:, None], c0[None, :]]
    br = image[:, r1[:, None], c1[None, :]]
    top = tl * (1 - wc) + tr * wc
    bot = bl * (1 - wc) + br * wc
    return top * (1 - wr) + bot * wr


def align_input(image, student_patch_side, teacher_downsample):
    """Resize so the teacher's token grid matches the student's patch grid.

    The scale factor teacher_downsample / student_patch_side must be a
    positive integer; factor 1 returns the image untouched.
    """
    if teacher_downsample % student_patch_side != 0:
        raise ConfigError(
            f"teacher downsample {teacher_downsample} is not divisible by "
            f"student patch side {student_patch_side}: grids cannot align")
    factor = teacher_downsample // student_patch_side
    if factor == 1:
        return image
    _, h, w = image.shape
    return bilinear_resize(image, h * factor, w * factor)


def _conv2d_stride2(x, weight, bias):
    """3x3 convolution, stride 2, padding 1. x: [C, H, W] with even H, W."""
    c, h, w = x.shape
    out_c = weight.shape[0]
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    win = win[:, ::2, ::2]  # [C, H/2, W/2, 3, 3]
    oh, ow = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(oh * ow, c * 9)
    out = cols @ weight.reshape(out_c, c * 9).T + bias
    return out.T.reshape(out_c, oh, ow)


class ProceduralConvTeacher:
    """Stack of stride-2 3x3 convolutions with tanh, fixed random weights.

    log2(downsample_rate) stages halve the resolution each; the last stage
    outputs target_dim channels. Locality is bounded: a token only reacts to
    pixels inside its receptive field.
    """

    kind = "procedural-conv"

    def __init__(self, target_dim, downsample_rate=8, seed=0, l2_normalize=False,
                 in_channels=3):
        n_stages = int(math.log2(downsample_rate))
        if 2**n_stages != downsample_rate or n_stages < 1:
            raise ConfigError("downsample_rate must be a power of two >= 2")
        self.target_dim = target_dim
        self.downsample_rate = downsample_rate
        self.l2_normalize = l2_normalize
        self.in_channels = in_channels
        widths = [8 * 2**i for i in range(n_stages - 1)] + [target_dim]
        rng = np.random.default_rng(seed)
        self._stages = []
        c_in = in_channels
        for c_out in widths:
            w = rng.normal(0.0, 1.0 / np.sqrt(9 * c_in), size=(c_out, c_in, 3, 3))
            b = rng.normal(0.0, 0.1, size=c_out)
            self._stages.append((w, b))
            c_in = c_out

    def features(self, image, source_id=""):
        """Tokens for an aligned image. image: [C, H, W], sides divisible
        by downsample_rate."""
        c, h, w = image.shape
        if c != self.in_channels:
            raise ConfigError(f"teacher built for {self.in_channels} channels, image has {c}")
        if h % self.downsample_rate or w % self.downsample_rate:
            raise ConfigError(
                f"image sides {h}x{w} not divisible by downsample rate {self.downsample_rate}")
        x = np.asarray(image)
        for wgt, bias in self._stages:
            x = np.tanh(_conv2d_stride2(x, wgt.astype(x.dtype), bias.astype(x.dtype)))
        grid = x.shape[1]
        tokens = x.reshape(self.target_dim, grid * grid).T.copy()
        if self.l2_normalize:
            norms = np.linalg.norm(tokens, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise NumericError("cannot L2-normalize a zero-norm token")
            tokens = tokens / norms
        return TeacherFeatures(tokens=tokens, grid_side=grid, source_id=source_id)


class FileTeacher:
    """Replays features previously written by dump_features."""

    kind = "file"
    downsample_rate = None

    def __init__(self, features_dir):
        self.features_dir = features_dir
        manifest_path = os.path.join(features_dir, "manifest.json")
        try:
            with open(manifest_path) as f:
                self._manifest = json.load(f)
        except OSError as e:
            raise DataError(f"cannot read feature manifest: {e}") from None
        self._grid_by_id = {e["id"]: e["grid_side"] for e in self._manifest["entries"]}
        self.target_dim = self._manifest["target_dim"]

    @property
    def ids(self):
        return [e["id"] for e in self._manifest["entries"]]

    def features(self, image, source_id):
        if source_id not in self._grid_by_id:
            raise DataError(f"no dumped features for image id {source_id!r}")
        tokens = read_tvec(os.path.join(self.features_dir, f"{source_id}.tvec"))
        grid = self._grid_by_id[source_id]
        if tokens.ndim != 2 or tokens.shape != (grid * grid, self.target_dim):
            raise DataError(
                f"feature file for {source_id!r} has shape {tokens.shape}, "
                f"expected {(grid * grid, self.target_dim)}")
        if not np.isfinite(tokens).all():
            raise DataError(f"feature file for {source_id!r} contains non-finite values")
        return TeacherFeatures(tokens=tokens, grid_side=grid, source_id=source_id)


def make_teacher(spec: TeacherSpec, in_channels=3):
    spec.validate()
    if spec.kind == "file":
        return FileTeacher(spec.features_dir)
    return ProceduralConvTeacher(
        target_dim=spec.target_dim, downsample_rate=spec.downsample_rate,
        seed=spec.seed, l2_normalize=spec.l2_normalize, in_channels=in_channels)


def dump_features(teacher, images, out_dir, student_patch_side):
    """Extract and write one tvec per image plus a manifest.

    images: [(id, [C, H, W] array)]. Returns the manifest dict. File
    teachers replay as-is; procedural teachers get grid-aligned inputs.
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for image_id, image in images:
        if teacher.downsample_rate is not None:
            image = align_input(image, student_patch_side, teacher.downsample_rate)
        feats = teacher.features(image, image_id)
        write_tvec(os.path.join(out_dir, f"{image_id}.tvec"),
                   feats.tokens.astype(np.float32))
        entries.append({"id": image_id, "grid_side": feats.grid_side})
    manifest = {"source_id": getattr(teacher, "kind", "unknown"),
                "target_dim": teacher.target_dim,
                "entries": entries}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_feature_dir(features_dir):
    """All dumped samples, in manifest order, as TeacherFeatures."""
    teacher = FileTeacher(features_dir)
    return [teacher.features(None, image_id) for image_id in teacher.ids]
