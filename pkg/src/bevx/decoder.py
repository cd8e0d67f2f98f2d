"""Cross-scale hierarchical decoder.

The BEV map grows from a learned coarse grid ``B_0``. Level ``i`` attends
from ``B_i`` to the camera features of the *opposite* scale (``F_{2-i}``:
coarsest BEV against the finest image features), and the next BEV map is
the sum of two conv + bilinear-resize projections, one of the attention
output ``A_i`` and one of ``B_i`` itself. Segmentation logits come from the
last attention output, upsampled x2.

Tensors carry a leading batch axis; camera images are
``[batch, N_I, H, W, C]`` and BEV maps ``[batch, H, W, C]``.
"""

from dataclasses import dataclass, field

import numpy as np

from bevx import tensor as T
from bevx.attention import AttentionBlock, augment_scores, aggregate, canonical_mode, raw_scores
from bevx.camera import CameraRig
from bevx.embedding import ProjectionHeads, bev_position_grid, embed_bev_queries, embed_camera_keys
from bevx.layers import Conv2d, Module

ENCODER_STRIDES = (16, 8, 4)  # F_0, F_1, F_2


def _pair(s):
    return (int(s), int(s)) if np.isscalar(s) else (int(s[0]), int(s[1]))


@dataclass(frozen=True)
class ScaleSchedule:
    """BEV sizes and channel widths per level; level i reads F_{2-i}."""

    bev_sizes: tuple = ((24, 24), (48, 48), (100, 100))
    channels: tuple = (32, 32, 32)

    def __post_init__(self):
        sizes = tuple(_pair(s) for s in self.bev_sizes)
        chans = tuple(int(c) for c in self.channels)
        if len(sizes) != 3 or len(chans) != 3:
            raise ValueError("a schedule has exactly three levels")
        for a, b in zip(sizes, sizes[1:]):
            if not (b[0] > a[0] and b[1] > a[1]):
                raise ValueError(f"BEV sizes must strictly increase, got {sizes}")
        if min(chans) < 1:
            raise ValueError(f"channel widths must be positive, got {chans}")
        object.__setattr__(self, "bev_sizes", sizes)
        object.__setattr__(self, "channels", chans)

    @property
    def final_size(self):
        h, w = self.bev_sizes[-1]
        return (2 * h, 2 * w)

    @property
    def levels(self):
        """(bev size, stride of the paired feature map, channels) per level."""
        return [(self.bev_sizes[i], ENCODER_STRIDES[2 - i], self.channels[i]) for i in range(3)]


TINY_SCHEDULE = ScaleSchedule(((4, 4), (8, 8), (16, 16)), (32, 32, 32))


@dataclass(frozen=True)
class ModelConfig:
    schedule: ScaleSchedule = field(default_factory=ScaleSchedule)
    image_channels: int = 1
    encoder_channels: tuple = (32, 32, 32)  # widths of F_0, F_1, F_2
    dim: int = 32
    heads: int = 4
    xi: float = 0.05
    mode: str = "all"
    residual: bool = True
    out_channels: int = 1
    extent: float = 50.0  # BEV half-width, meters
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", canonical_mode(self.mode))
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.xi < 0:
            raise ValueError(f"xi must be non-negative, got {self.xi}")
        if self.extent <= 0:
            raise ValueError("extent must be positive")


class ToyEncoder(Module):
    """Four stride-2 3x3 convolutions shared across views.

    Stand-in for a pretrained backbone: returns F_0, F_1, F_2 at strides
    16, 8, 4.
    """

    def __init__(self, in_channels, widths, rng):
        c0, c1, c2 = widths
        self.stem = Conv2d(in_channels, c2, rng, stride=2)
        self.down4 = Conv2d(c2, c2, rng, stride=2)
        self.down8 = Conv2d(c2, c1, rng, stride=2)
        self.down16 = Conv2d(c1, c0, rng, stride=2)

    def __call__(self, x):
        h = T.gelu(self.stem(x))
        f2 = T.gelu(self.down4(h))
        f1 = T.gelu(self.down8(f2))
        f0 = T.gelu(self.down16(f1))
        return f0, f1, f2

    def macs(self, n, h, w):
        total = 0
        for conv in (self.stem, self.down4, self.down8, self.down16):
            total += conv.macs(n, h, w)
            h, w = h // 2, w // 2
        return total


def toy_encode(images, encoder):
    """[batch, N_I, H, W, C] images -> (F_0, F_1, F_2), each [batch, N_I, h, w, c]."""
    x = images if isinstance(images, T.Tensor) else T.constant(images)
    if x.ndim == 4:
        x = T.reshape(x, (1,) + x.shape)
    b, nv, h, w, c = x.shape
    if h % 16 or w % 16:
        raise ValueError(f"image size {h}x{w} is not divisible by 16")
    feats = encoder(T.reshape(x, (b * nv, h, w, c)))
    return tuple(T.reshape(f, (b, nv) + f.shape[1:]) for f in feats)


class Level(Module):
    def __init__(self, cfg, i, rng):
        sched = cfg.schedule
        c = sched.channels[i]
        feat_c = cfg.encoder_channels[2 - i]
        self.heads = ProjectionHeads(c, feat_c, rng)
        self.attn = AttentionBlock(c, cfg.dim, feat_c, rng, heads=cfg.heads, xi=cfg.xi, mode=cfg.mode)
        if i < 2:
            nxt = sched.channels[i + 1]
            self.res_a = Conv2d(c, nxt, rng)
            self.res_b = Conv2d(c, nxt, rng)


class CrossScaleModel(Module):
    """All learned state: B_0, encoder, three levels, segmentation and
    auxiliary heads. ``aux`` heads serve the training objective only."""

    def __init__(self, cfg):
        rng = np.random.default_rng(cfg.seed)
        sched = cfg.schedule
        self._cfg = cfg
        h0, w0 = sched.bev_sizes[0]
        self.bev0 = T.Tensor(rng.normal(0.0, 0.02, size=(h0, w0, sched.channels[0])), requires_grad=True)
        self.encoder = ToyEncoder(cfg.image_channels, cfg.encoder_channels, rng)
        self.levels = [Level(cfg, i, rng) for i in range(3)]
        self.seg = Conv2d(sched.channels[2], cfg.out_channels, rng)
        self.aux = [Conv2d(sched.channels[i], cfg.out_channels, rng) for i in range(3)]
        self._grids = [bev_position_grid(s, cfg.extent) for s in sched.bev_sizes]

    @property
    def config(self):
        return self._cfg

    @property
    def grids(self):
        return self._grids

    def set_augmentation(self, mode=None, xi=None):
        for lvl in self.levels:
            if mode is not None:
                lvl.attn.mode = canonical_mode(mode)
            if xi is not None:
                lvl.attn.xi = float(xi)


@dataclass
class DecodeOutput:
    logits: T.Tensor  # [batch, H_M, W_M, C_M]
    bev: list  # B_0, B_1, B_2
    attended: list  # A_0, A_1, A_2
    weights: list  # normalized scores per level, [batch, heads, NQ, N_I*NK]


def decode_step(bev, feats, rig, model, i, residual=True):
    """One level: attend B_i to F_{2-i}; return (A_i, B_{i+1} or None, weights)."""
    sched = model.config.schedule
    size, stride, _ = sched.levels[i]
    lvl = model.levels[i]
    if tuple(bev.shape[1:3]) != size:
        raise T.ShapeError(f"decode_step: level {i} expects BEV {size}, got {list(bev.shape)}")
    queries = embed_bev_queries(bev, model.grids[i], rig, lvl.heads)
    keys = embed_camera_keys(feats, rig, lvl.heads, stride)
    b, nv, fh, fw, fc = feats.shape
    values = T.reshape(feats, (b, nv, fh * fw, fc))
    scores = augment_scores(raw_scores(queries, keys, lvl.attn), lvl.attn, nv)
    attended, weights = aggregate(scores, values, lvl.attn, size)
    if i == 2:
        return attended, None, weights
    nxt = sched.bev_sizes[i + 1]
    out = T.resize_bilinear(lvl.res_a(attended), nxt)
    if residual:
        out = T.add(out, T.resize_bilinear(lvl.res_b(bev), nxt))
    return attended, out, weights


def forward(images, rig, model, residual=None):
    """Run the full decoder. ``images``: [batch, N_I, H, W, C] (or without
    the batch axis). Logits keep the batch axis."""
    imgs = np.asarray(images.data if isinstance(images, T.Tensor) else images, dtype=np.float64)
    if imgs.ndim == 4:
        imgs = imgs[None]
    rigs = [rig] if isinstance(rig, CameraRig) else list(rig)
    if any(len(r) != imgs.shape[1] for r in rigs):
        raise ValueError(f"{imgs.shape[1]} images per sample but rig has {len(rigs[0])} views")
    if len(rigs) not in (1, imgs.shape[0]):
        raise ValueError(f"{len(rigs)} rigs for a batch of {imgs.shape[0]}")
    if tuple(rigs[0].image_size) != imgs.shape[2:4]:
        raise ValueError(f"images are {imgs.shape[2:4]}, rig expects {rigs[0].image_size}")
    residual = model.config.residual if residual is None else residual
    feats = toy_encode(imgs, model.encoder)
    b = imgs.shape[0]
    bev = T.broadcast_to(model.bev0, (b,) + model.bev0.shape)
    bevs, attended, weights = [], [], []
    for i in range(3):
        bevs.append(bev)
        a, bev, w = decode_step(bev, feats[2 - i], rig, model, i, residual)
        attended.append(a)
        weights.append(w.data)
    logits = T.resize_bilinear(model.seg(attended[2]), model.config.schedule.final_size)
    return DecodeOutput(logits, bevs, attended, weights)


def aux_logits(model, bevs):
    """Project each B_i to the final segmentation size (training only)."""
    final = model.config.schedule.final_size
    return [T.resize_bilinear(head(b), final) for head, b in zip(model.aux, bevs)]


def drop_views(images, rig, keep):
    """Keep a subset of cameras. ``keep`` is a boolean mask or index list."""
    keep = np.asarray(keep)
    if keep.dtype == bool:
        if keep.shape != (len(rig),):
            raise ValueError(f"keep mask has {keep.shape[0]} entries for {len(rig)} views")
        idx = np.flatnonzero(keep)
    else:
        idx = keep.astype(int)
    if idx.size == 0:
        raise ValueError("at least one view must be kept")
    imgs = np.asarray(images)
    return np.take(imgs, idx, axis=imgs.ndim - 4), rig.subset(idx.tolist())
