"""Multi-view cross-attention with correspondence augmentation.

Per head, the scores of one BEV query against every camera token of every
view are concatenated into a single row. Before the softmax each row is
rescaled by ``xi * sigma`` where sigma is the (population) standard
deviation of the row itself, so rows whose ``xi * sigma`` exceeds 1 are
sharpened and the rest flattened. ``mode`` picks the extent sigma is taken
over:

``all``        one sigma per (head, query) over all views and tokens
``per_view``   one sigma per (head, query, view) over that view's tokens
``per_token``  one sigma per (head, query, token index) across views
``off``        no rescaling
"""

from dataclasses import dataclass, field

import numpy as np

from bevx import tensor as T
from bevx.camera import CameraRig
from bevx.layers import MLP, LayerNorm, Linear, Module

MODES = ("all", "per_view", "per_token", "off")
MODE_ALIASES = {
    "all_views_all_tokens": "all", "per-view": "per_view", "per_camera_token": "per_token",
    "per-token": "per_token",
}
DEFAULT_XI = 0.05
SIGMA_EPS = 1e-12


def canonical_mode(mode):
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown augmentation mode {mode!r}; expected one of {MODES}")
    return mode


class AttentionBlock(Module):
    """Cross-attention from ``in_dim``-wide tokens at attention width ``dim``.

    Queries and keys arrive already position-embedded at ``in_dim``; values
    are raw camera features with ``value_channels`` channels. The output
    head maps back to ``in_dim``.
    """

    def __init__(self, in_dim, dim, value_channels, rng, heads=4, xi=DEFAULT_XI, mode="all",
                 mlp_ratio=2):
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        if xi < 0:
            raise ValueError(f"xi must be non-negative, got {xi}")
        self.q = Linear(in_dim, dim, rng)
        self.k = Linear(in_dim, dim, rng)
        self.v = Linear(value_channels, dim, rng)
        self.o = Linear(dim, in_dim, rng)
        self.norm = LayerNorm(in_dim)
        self.mlp = MLP(in_dim, mlp_ratio * in_dim, rng)
        self._in_dim = in_dim
        self._dim = dim
        self._heads = heads
        self.xi = float(xi)
        self.mode = canonical_mode(mode)

    @property
    def in_dim(self):
        return self._in_dim

    @property
    def dim(self):
        return self._dim

    @property
    def heads(self):
        return self._heads

    @property
    def head_dim(self):
        return self._dim // self._heads


def _split_heads(x, heads):
    # [b, V, N, D] -> [b, H, V, N, dh]
    b, v, n, d = x.shape
    return T.transpose(T.reshape(x, (b, v, n, heads, d // heads)), (0, 3, 1, 2, 4))


def raw_scores(queries, keys, block):
    """[b, N_I, NQ, D] x [b, N_I, NK, D] -> [b, heads, NQ, N_I*NK]."""
    squeeze = queries.ndim == 3
    if squeeze:
        queries = T.reshape(queries, (1,) + queries.shape)
        keys = T.reshape(keys, (1,) + keys.shape)
    if queries.shape[-1] != block.in_dim or keys.shape[-1] != block.in_dim:
        raise T.ShapeError(
            f"raw_scores: queries {list(queries.shape)} / keys {list(keys.shape)} "
            f"vs width {block.in_dim}")
    if queries.shape[1] != keys.shape[1]:
        raise T.ShapeError(f"raw_scores: {queries.shape[1]} query views vs {keys.shape[1]} key views")
    h = block.heads
    q = _split_heads(block.q(queries), h)
    k = _split_heads(block.k(keys), h)
    s = T.matmul(q, T.transpose(k, (0, 1, 2, 4, 3)))  # [b, H, N_I, NQ, NK]
    s = T.mul(s, 1.0 / np.sqrt(block.head_dim))
    b, _, nv, nq, nk = s.shape
    out = T.reshape(T.transpose(s, (0, 1, 3, 2, 4)), (b, h, nq, nv * nk))
    return T.reshape(out, out.shape[1:]) if squeeze else out


def augment_scores(scores, block, n_views=1):
    """Rescale each score row by ``xi * sigma`` according to ``block.mode``."""
    mode = block.mode
    if mode == "off":
        return scores
    if mode == "all":
        sigma = T.std_over(scores, -1, SIGMA_EPS)
        return T.mul(T.mul(sigma, block.xi), scores)
    lead = scores.shape[:-1]
    total = scores.shape[-1]
    if total % n_views:
        raise T.ShapeError(f"augment_scores: {total} keys do not split into {n_views} views")
    split = T.reshape(scores, lead + (n_views, total // n_views))
    axis = -1 if mode == "per_view" else -2
    sigma = T.std_over(split, axis, SIGMA_EPS)
    return T.reshape(T.mul(T.mul(sigma, block.xi), split), scores.shape)


def mix_values(weights, values, block):
    """Weighted sum of projected values; [b, H, NQ, N_I*NK] -> [b, NQ, D]."""
    b, nv, nk, _ = values.shape
    v = _split_heads(block.v(values), block.heads)  # [b, H, N_I, NK, dh]
    v = T.reshape(v, (b, block.heads, nv * nk, block.head_dim))
    mixed = T.matmul(weights, v)  # [b, H, NQ, dh]
    nq = mixed.shape[2]
    return T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (b, nq, block.dim))


def output_head(mixed, block):
    y = block.norm(block.o(mixed))
    return T.add(y, block.mlp(y))


def aggregate(scores, values, block, out_hw):
    """Softmax over the concatenated view-token axis, mix values, output head.

    ``values`` are the raw per-view features [b, N_I, NK, C_I]. Returns the
    attended map [b, H, W, D] and the normalized weights.
    """
    squeeze = scores.ndim == 3
    if squeeze:
        scores = T.reshape(scores, (1,) + scores.shape)
        values = T.reshape(values, (1,) + values.shape)
    b, nv, nk, _ = values.shape
    if scores.shape[-1] != nv * nk:
        raise T.ShapeError(f"aggregate: scores {list(scores.shape)} vs {nv} views x {nk} tokens")
    weights = T.softmax_lastaxis(scores)
    out = output_head(mix_values(weights, values, block), block)
    h, w = out_hw
    out = T.reshape(out, (b, h, w, block.in_dim))
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out, weights


def attend(queries, keys, values, block, out_hw):
    """Full block: raw scores, augmentation, aggregation."""
    n_views = queries.shape[-3]
    scores = augment_scores(raw_scores(queries, keys, block), block, n_views)
    return aggregate(scores, values, block, out_hw)


# ---- score distribution analysis -----------------------------------------

DEFAULT_RANGES = ((0.7, 1.0), (0.1, 1.0))


@dataclass
class ScoreHistogram:
    ranges: tuple
    conducive: np.ndarray = field(default=None)
    inconducive: np.ndarray = field(default=None)
    conducive_total: int = 0
    inconducive_total: int = 0

    def __post_init__(self):
        self.ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        for lo, hi in self.ranges:
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"score range [{lo}, {hi}] is not inside [0, 1]")
        n = len(self.ranges)
        if self.conducive is None:
            self.conducive = np.zeros(n, dtype=np.int64)
        if self.inconducive is None:
            self.inconducive = np.zeros(n, dtype=np.int64)

    @property
    def total(self):
        return self.conducive_total + self.inconducive_total

    def merge(self, other):
        if other.ranges != self.ranges:
            raise ValueError("cannot merge histograms over different ranges")
        return ScoreHistogram(self.ranges, self.conducive + other.conducive,
                              self.inconducive + other.inconducive,
                              self.conducive_total + other.conducive_total,
                              self.inconducive_total + other.inconducive_total)

    def rows(self):
        return [(lo, hi, int(c), int(i))
                for (lo, hi), c, i in zip(self.ranges, self.conducive, self.inconducive)]


def conducive_map(grid, rig):
    """[b or 1, NQ, N_I] flags: front half of the BEV with front-facing views,
    back half with back-facing views."""
    rigs = [rig] if isinstance(rig, CameraRig) else list(rig)
    front_q = grid.flat()[:, 0] > 0
    return np.stack([front_q[:, None] == r.front_facing()[None, :] for r in rigs])


def score_histogram(weights, conducive, ranges=DEFAULT_RANGES):
    """Count normalized scores inside each closed range, split by partition.

    ``weights``: [..., NQ, N_I*NK] softmax output (any leading axes, e.g.
    batch and head). ``conducive``: boolean [NQ, N_I], or with leading axes
    broadcastable against the weights' leading axes minus the head axis.
    """
    w = np.asarray(weights.data if isinstance(weights, T.Tensor) else weights)
    cond = np.asarray(conducive, dtype=bool)
    nq, nv = cond.shape[-2:]
    if w.shape[-2] != nq or w.shape[-1] % nv:
        raise T.ShapeError(f"score_histogram: weights {list(w.shape)} vs partition {list(cond.shape)}")
    if cond.ndim == 3 and w.ndim == 4:
        cond = cond[:, None]  # broadcast over heads
    w = w.reshape(w.shape[:-1] + (nv, w.shape[-1] // nv))
    mask = np.broadcast_to(cond[..., None], w.shape)
    hist = ScoreHistogram(ranges)
    for j, (lo, hi) in enumerate(hist.ranges):
        hit = (w >= lo) & (w <= hi)
        hist.conducive[j] = int(np.count_nonzero(hit & mask))
        hist.inconducive[j] = int(np.count_nonzero(hit & ~mask))
    hist.conducive_total = int(np.count_nonzero(mask))
    hist.inconducive_total = int(mask.size - hist.conducive_total)
    return hist
