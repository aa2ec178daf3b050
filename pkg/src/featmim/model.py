"""The student network.

Asymmetric design: the encoder runs only on visible patch tokens (plus an
optional CLS token), the decoder rebuilds the full patch grid by inserting a
learnable mask token at masked slots and regresses teacher features. Encoder
block outputs can be aggregated (mean or literal sum) before decoding; a
2-layer MLP head projects last-layer visible tokens to the teacher dimension
for the global loss.

Positional embeddings are fixed 2-D sine-cosine tables, not learned. All
linear weights are Xavier-uniform; CLS and mask tokens draw from N(0, 0.02).
"""

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DataError, DegenerateMaskError, ShapeError
from .tensor import Tensor, tvec_bytes, tvec_from_bytes

CHECKPOINT_MAGIC = b"FMCK"


@dataclass(frozen=True)
class ModelConfig:
    patch_side: int = 8
    embed_dim: int = 32
    enc_depth: int = 2
    enc_heads: int = 2
    dec_depth: int = 1
    dec_width: int = 32
    dec_heads: int = 2
    target_dim: int = 16
    use_cls: bool = True
    multi_block: bool = True
    aggregate: str = "mean"  # "mean" | "sum" over encoder blocks

    def validate(self):
        if self.enc_depth < 1 or self.dec_depth < 1:
            raise ConfigError("encoder and decoder need at least one block")
        if self.embed_dim % self.enc_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by {self.enc_heads} heads")
        if self.dec_width % self.dec_heads:
            raise ConfigError(f"dec_width {self.dec_width} not divisible by {self.dec_heads} heads")
        if self.embed_dim % 4 or self.dec_width % 4:
            raise ConfigError("embed_dim and dec_width must be multiples of 4 "
                              "(2-D sine-cosine position table)")
        if self.aggregate not in ("mean", "sum"):
            raise ConfigError(f"unknown aggregate mode {self.aggregate!r}")
        if self.patch_side < 1 or self.target_dim < 1:
            raise ConfigError("patch_side and target_dim must be positive")


def _sincos_1d(dim, positions):
    omega = 1.0 / 10000.0 ** (np.arange(dim // 2, dtype=np.float64) / (dim // 2))
    angles = np.asarray(positions, dtype=np.float64)[:, None] * omega[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_pos_embed(dim, grid_side):
    """Fixed 2-D sine-cosine position table, [grid_side**2, dim]."""
    rows = np.repeat(np.arange(grid_side), grid_side)
    cols = np.tile(np.arange(grid_side), grid_side)
    return np.concatenate([_sincos_1d(dim // 2, rows), _sincos_1d(dim // 2, cols)], axis=1)


@dataclass
class ModelParams:
    """Trainable weights plus the fixed position tables."""

    config: ModelConfig
    n_patches: int
    in_channels: int
    weights: dict = field(default_factory=dict)
    enc_pos: np.ndarray = None  # [N, embed_dim], constant
    dec_pos: np.ndarray = None  # [N, dec_width], constant

    @property
    def grid_side(self):
        return int(round(np.sqrt(self.n_patches)))


def _xavier(rng, shape, dtype):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_params(config: ModelConfig, image_side, in_channels, seed, dtype=np.float32):
    """Fresh parameters; the draw order is fixed by construction order."""
    config.validate()
    if image_side % config.patch_side:
        raise ConfigError(f"image side {image_side} not divisible by patch {config.patch_side}")
    grid = image_side // config.patch_side
    n = grid * grid
    d, w = config.embed_dim, config.dec_width
    rng = np.random.default_rng(seed)
    wt = {}

    def xav(name, shape):
        wt[name] = _xavier(rng, shape, dtype)

    def zero(name, shape):
        wt[name] = np.zeros(shape, dtype=dtype)

    def one(name, shape):
        wt[name] = np.ones(shape, dtype=dtype)

    def token(name, dim):
        wt[name] = rng.normal(0.0, 0.02, size=dim).astype(dtype)

    if config.use_cls:
        token("cls_token", d)
    xav("patch_proj_w", (in_channels * config.patch_side**2, d))
    zero("patch_proj_b", (d,))

    def block(prefix, dim):
        one(f"{prefix}_ln1_g", (dim,))
        zero(f"{prefix}_ln1_b", (dim,))
        for nm in ("q", "k", "v"):
            xav(f"{prefix}_{nm}_w", (dim, dim))
            zero(f"{prefix}_{nm}_b", (dim,))
        xav(f"{prefix}_attn_out_w", (dim, dim))
        zero(f"{prefix}_attn_out_b", (dim,))
        one(f"{prefix}_ln2_g", (dim,))
        zero(f"{prefix}_ln2_b", (dim,))
        xav(f"{prefix}_mlp_fc1_w", (dim, 4 * dim))
        zero(f"{prefix}_mlp_fc1_b", (4 * dim,))
        xav(f"{prefix}_mlp_fc2_w", (4 * dim, dim))
        zero(f"{prefix}_mlp_fc2_b", (dim,))

    for layer in range(config.enc_depth):
        block(f"enc{layer}", d)
    xav("enc2dec_w", (d, w))
    zero("enc2dec_b", (w,))
    token("mask_token", w)
    for layer in range(config.dec_depth):
        block(f"dec{layer}", w)
    xav("dec_pred_w", (w, config.target_dim))
    zero("dec_pred_b", (config.target_dim,))
    xav("proj_fc1_w", (d, d))
    zero("proj_fc1_b", (d,))
    xav("proj_fc2_w", (d, config.target_dim))
    zero("proj_fc2_b", (config.target_dim,))

    return ModelParams(
        config=config, n_patches=n, in_channels=in_channels, weights=wt,
        enc_pos=sincos_pos_embed(d, grid).astype(dtype),
        dec_pos=sincos_pos_embed(w, grid).astype(dtype))


class BoundParams:
    """ModelParams viewed as tensors: taped for training, constant otherwise."""

    def __init__(self, params: ModelParams, tape=None):
        self.meta = params
        self.config = params.config
        if tape is None:
            self.t = {k: Tensor(v) for k, v in params.weights.items()}
        else:
            self.t = {k: tape.parameter(k, v) for k, v in params.weights.items()}
        self.enc_pos = Tensor(params.enc_pos)
        self.dec_pos = Tensor(params.dec_pos)

    def __getitem__(self, name):
        return self.t[name]


@dataclass
class StudentOutput:
    """Per-layer visible tokens plus everything derived from them."""

    layers: list  # encoder block outputs, visible patch tokens only, each [V, d]
    cls_layers: Optional[list] = None  # per-layer CLS rows, each [1, d]
    h: Optional[Tensor] = None  # aggregated visible tokens [V, d]
    z: Optional[Tensor] = None  # decoder predictions [N, target_dim]
    p_visible: Optional[Tensor] = None  # projected last-layer visible tokens [V, target_dim]

    @property
    def last_visible(self):
        return self.layers[-1]


def patchify(image, patch_side):
    """Row-major non-overlapping patches: [C, H, W] -> [N, C * patch**2]."""
    c, h, w = image.shape
    if h % patch_side or w % patch_side:
        raise ShapeError(f"image {h}x{w} not divisible by patch side {patch_side}")
    gh, gw = h // patch_side, w // patch_side
    x = image.reshape(c, gh, patch_side, gw, patch_side)
    return x.transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * patch_side**2)


def patch_embed(image, bp: BoundParams):
    """Linear projection of flattened patches plus position embeddings."""
    flat = patchify(np.asarray(image), bp.config.patch_side)
    if flat.shape[0] != bp.meta.n_patches:
        raise ConfigError(
            f"image yields {flat.shape[0]} patches, model was built for {bp.meta.n_patches}")
    if flat.shape[1] != bp.meta.in_channels * bp.config.patch_side**2:
        raise ConfigError("image channel count does not match the model")
    tokens = tn.add(tn.matmul(Tensor(flat.astype(bp.meta.weights["patch_proj_w"].dtype)),
                              bp["patch_proj_w"]), bp["patch_proj_b"])
    return tn.add(tokens, bp.enc_pos)


def _attention(x, bp, prefix, heads):
    t, d = x.shape
    dh = d // heads
    q = tn.add(tn.matmul(x, bp[f"{prefix}_q_w"]), bp[f"{prefix}_q_b"])
    k = tn.add(tn.matmul(x, bp[f"{prefix}_k_w"]), bp[f"{prefix}_k_b"])
    v = tn.add(tn.matmul(x, bp[f"{prefix}_v_w"]), bp[f"{prefix}_v_b"])

    def heads_first(a):
        return tn.transpose(tn.reshape(a, (t, heads, dh)), (1, 0, 2))

    q, k, v = heads_first(q), heads_first(k), heads_first(v)
    att = tn.mul(tn.matmul(q, tn.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    att = tn.softmax(att, axis=-1)
    y = tn.matmul(att, v)  # [heads, T, dh]
    y = tn.reshape(tn.transpose(y, (1, 0, 2)), (t, d))
    return tn.add(tn.matmul(y, bp[f"{prefix}_attn_out_w"]), bp[f"{prefix}_attn_out_b"])


def _mlp(x, bp, prefix):
    h = tn.add(tn.matmul(x, bp[f"{prefix}_mlp_fc1_w"]), bp[f"{prefix}_mlp_fc1_b"])
    h = tn.gelu(h)
    return tn.add(tn.matmul(h, bp[f"{prefix}_mlp_fc2_w"]), bp[f"{prefix}_mlp_fc2_b"])


def _transformer_block(x, bp, prefix, heads):
    # pre-norm: x + Attn(LN(x)), then x + MLP(LN(x))
    a = _attention(tn.layer_norm(x, bp[f"{prefix}_ln1_g"], bp[f"{prefix}_ln1_b"]), bp, prefix, heads)
    x = tn.add(x, a)
    m = _mlp(tn.layer_norm(x, bp[f"{prefix}_ln2_g"], bp[f"{prefix}_ln2_b"]), bp, prefix)
    return tn.add(x, m)


def encode_visible(tokens, mask, bp: BoundParams):
    """Run only visible tokens (and CLS) through the encoder blocks,
    keeping every block's output."""
    cfg = bp.config
    n_vis = len(mask.visible_idx)
    if n_vis == 0:
        raise DegenerateMaskError("encoder needs at least one visible token")
    x = tn.gather_rows(tokens, mask.visible_idx)
    if cfg.use_cls:
        x = tn.concat([tn.reshape(bp["cls_token"], (1, cfg.embed_dim)), x], axis=0)
    layers, cls_layers = [], ([] if cfg.use_cls else None)
    patch_rows = np.arange(1, n_vis + 1) if cfg.use_cls else None
    for layer in range(cfg.enc_depth):
        x = _transformer_block(x, bp, f"enc{layer}", cfg.enc_heads)
        if cfg.use_cls:
            layers.append(tn.gather_rows(x, patch_rows))
            cls_layers.append(tn.gather_rows(x, np.array([0])))
        else:
            layers.append(x)
    return StudentOutput(layers=layers, cls_layers=cls_layers)


def aggregate_multi_block(output: StudentOutput, config: ModelConfig):
    """Combine per-block visible tokens: mean (default), literal sum, or
    just the last block when multi-block learning is off."""
    if not config.multi_block:
        return output.layers[-1]
    acc = output.layers[0]
    for layer in output.layers[1:]:
        acc = tn.add(acc, layer)
    if config.aggregate == "mean":
        acc = tn.mul(acc, 1.0 / len(output.layers))
    return acc


def decode(h_visible, mask, bp: BoundParams):
    """Rebuild the full grid with mask tokens and predict teacher features."""
    cfg = bp.config
    n = bp.meta.n_patches
    dtype = bp.meta.weights["mask_token"].dtype
    vis = tn.add(tn.matmul(h_visible, bp["enc2dec_w"]), bp["enc2dec_b"])
    placed = tn.scatter_rows(vis, mask.visible_idx, n)
    if len(mask.masked_idx):
        mask_rows = tn.add(tn.zeros((len(mask.masked_idx), cfg.dec_width), dtype=dtype),
                           bp["mask_token"])
        placed = tn.add(placed, tn.scatter_rows(mask_rows, mask.masked_idx, n))
    x = tn.add(placed, bp.dec_pos)
    for layer in range(cfg.dec_depth):
        x = _transformer_block(x, bp, f"dec{layer}", cfg.dec_heads)
    return tn.add(tn.matmul(x, bp["dec_pred_w"]), bp["dec_pred_b"])


def project_global(h_visible, bp: BoundParams):
    """2-layer MLP head mapping each visible token to the teacher dimension.

    CLS never reaches this head; callers pass patch tokens only.
    """
    h = tn.add(tn.matmul(h_visible, bp["proj_fc1_w"]), bp["proj_fc1_b"])
    h = tn.relu(h)
    return tn.add(tn.matmul(h, bp["proj_fc2_w"]), bp["proj_fc2_b"])


def forward(image, mask, bp: BoundParams):
    """Full student pass: embed, encode visible, aggregate, decode, project.

    The decoder consumes the aggregated tokens; the global head consumes the
    last encoder block's visible tokens.
    """
    tokens = patch_embed(image, bp)
    out = encode_visible(tokens, mask, bp)
    out.h = aggregate_multi_block(out, bp.config)
    out.z = decode(out.h, mask, bp)
    out.p_visible = project_global(out.last_visible, bp)
    return out


# --- checkpoints ---
#
# magic "FMCK" | u32 LE header length | header JSON
# {config, n_patches, in_channels} | per parameter, names sorted
# lexicographically: u32 LE name length | name utf-8 | tvec record.


def save_checkpoint(path, params: ModelParams):
    header = json.dumps({
        "config": asdict(params.config),
        "n_patches": params.n_patches,
        "in_channels": params.in_channels,
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for name in sorted(params.weights):
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(tvec_bytes(params.weights[name]))


def load_checkpoint(path):
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a featmim checkpoint")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + hlen])
        config = ModelConfig(**header["config"])
        n_patches, in_channels = header["n_patches"], header["in_channels"]
    except (ValueError, KeyError, TypeError) as e:
        raise DataError(f"{path}: malformed checkpoint header: {e}") from None
    off = 8 + hlen
    weights = {}
    while off < len(blob):
        (nlen,) = struct.unpack("<I", blob[off:off + 4])
        name = blob[off + 4:off + 4 + nlen].decode()
        arr, off = tvec_from_bytes(blob, label=f"{path}:{name}", offset=off + 4 + nlen)
        weights[name] = arr
    grid = int(round(np.sqrt(n_patches)))
    reference = init_params(config, grid * config.patch_side, in_channels, seed=0)
    if set(weights) != set(reference.weights):
        raise DataError(f"{path}: checkpoint parameter names do not match the config")
    for name, arr in weights.items():
        if arr.shape != reference.weights[name].shape:
            raise DataError(f"{path}: parameter {name} has shape {arr.shape}, "
                            f"expected {reference.weights[name].shape}")
    reference.weights = weights
    return reference
