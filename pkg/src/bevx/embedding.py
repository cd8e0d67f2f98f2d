"""Geometry-aware token construction for BEV queries and camera keys.

BEV tokens get ``B + f_P_bev(cell position) - f_T(camera translation)``;
camera tokens get ``f_F(F) + f_P_cam(R^-1 K^-1 pixel) - f_T(translation)``.
All geometric inputs are constants; only the four heads learn.

Functions accept a leading batch axis. ``rig`` is either one
:class:`~bevx.camera.CameraRig` shared by the batch or a sequence with one
rig per batch element.
"""

from dataclasses import dataclass

import numpy as np

from bevx import tensor as T
from bevx.camera import CameraRig, pixel_grid
from bevx.layers import Linear, Module


@dataclass(frozen=True)
class BevPositionGrid:
    coords: np.ndarray  # [H, W, 2] vehicle-frame (x, y), meters
    extent: tuple  # half-widths (x, y), meters
    resolution: tuple  # meters per cell (x, y)

    @property
    def size(self):
        return self.coords.shape[:2]

    def flat(self):
        return self.coords.reshape(-1, 2)


def bev_position_grid(size, extent, resolution=None):
    """Cell-centre grid; row 0 is the far-forward edge, column 0 the far-left.

    ``extent`` and ``resolution`` may be scalars or (x, y) pairs. When
    ``resolution`` is omitted it is derived from the size and extent.
    """
    h, w = (int(s) for s in size)
    ex, ey = np.broadcast_to(np.asarray(extent, dtype=np.float64), (2,))
    if resolution is None:
        rx, ry = 2 * ex / h, 2 * ey / w
    else:
        rx, ry = np.broadcast_to(np.asarray(resolution, dtype=np.float64), (2,))
    if h < 1 or w < 1 or rx <= 0 or ry <= 0:
        raise ValueError(f"invalid BEV grid: size {(h, w)}, resolution {(rx, ry)}")
    if abs(h * rx - 2 * ex) > 1e-9 * max(1.0, ex) or abs(w * ry - 2 * ey) > 1e-9 * max(1.0, ey):
        raise ValueError(
            f"inconsistent BEV grid: size {(h, w)} x resolution {(rx, ry)} "
            f"does not span extent +/-{(ex, ey)}")
    x = (h / 2.0 - np.arange(h) - 0.5) * rx
    y = (w / 2.0 - np.arange(w) - 0.5) * ry
    xx, yy = np.meshgrid(x, y, indexing="ij")
    return BevPositionGrid(np.stack([xx, yy], axis=-1), (float(ex), float(ey)), (float(rx), float(ry)))


class ProjectionHeads(Module):
    """The four learned maps feeding the position-aware tokens."""

    def __init__(self, dim, feat_channels, rng, zero=False):
        self.f_p_bev = Linear(2, dim, rng, zero=zero)
        self.f_p_cam = Linear(3, dim, rng, zero=zero)
        self.f_t = Linear(3, dim, rng, zero=zero)
        self.f_f = Linear(feat_channels, dim, rng, zero=zero)


def _rigs(rig):
    return [rig] if isinstance(rig, CameraRig) else list(rig)


def rig_translations(rig):
    """[batch or 1, N_I, 3] camera centres."""
    return np.stack([r.translations() for r in _rigs(rig)])


def rig_directions(rig, feat_shape, stride):
    """[batch or 1, N_I, h*w, 3] ray directions of each feature cell."""
    rigs = _rigs(rig)
    h, w = feat_shape
    img_h, img_w = rigs[0].image_size
    if h * stride != img_h or w * stride != img_w:
        raise ValueError(
            f"feature map {h}x{w} at stride {stride} does not tile image {img_h}x{img_w}")
    grid = pixel_grid((h, w), stride).reshape(-1, 2)
    return np.stack([np.stack([v.ray_directions(grid) for v in r.views]) for r in rigs])


def embed_bev_queries(bev, grid, rig, heads):
    """[batch, H, W, C] BEV map -> [batch, N_I, H*W, D] per-view queries."""
    squeeze = bev.ndim == 3
    if squeeze:
        bev = T.reshape(bev, (1,) + bev.shape)
    n, h, w, c = bev.shape
    if (h, w) != tuple(grid.size):
        raise T.ShapeError(f"embed_bev_queries: BEV map {h}x{w} vs grid {tuple(grid.size)}")
    pos = heads.f_p_bev(T.constant(grid.flat()))  # [NQ, D]
    tok = T.add(T.reshape(bev, (n, 1, h * w, c)), pos)
    trans = heads.f_t(T.constant(rig_translations(rig)))  # [b, N_I, D]
    out = T.sub(tok, T.reshape(trans, (trans.shape[0], trans.shape[1], 1, trans.shape[2])))
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out


def embed_camera_keys(feats, rig, heads, stride):
    """[batch, N_I, h, w, C_I] features -> [batch, N_I, h*w, D] keys."""
    squeeze = feats.ndim == 4
    if squeeze:
        feats = T.reshape(feats, (1,) + feats.shape)
    n, n_views, h, w, c = feats.shape
    dirs = rig_directions(rig, (h, w), stride)
    if dirs.shape[1] != n_views:
        raise T.ShapeError(f"embed_camera_keys: {n_views} feature views vs {dirs.shape[1]} cameras")
    feat_tok = heads.f_f(T.reshape(feats, (n, n_views, h * w, c)))
    pos = heads.f_p_cam(T.constant(dirs))
    trans = heads.f_t(T.constant(rig_translations(rig)))
    out = T.sub(T.add(feat_tok, pos),
                T.reshape(trans, (trans.shape[0], trans.shape[1], 1, trans.shape[2])))
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out
