"""Synthetic scenes: oriented boxes on the ground plane, rendered into a
camera rig and rasterized into the BEV ground-truth mask."""

from dataclasses import dataclass

import numpy as np

from bevx.embedding import bev_position_grid

CAR_SIZE = (2.0, 4.5, 1.6)  # width, length, height (m)


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    yaw: float
    width: float
    length: float
    height: float

    def __post_init__(self):
        if min(self.width, self.length, self.height) <= 0:
            raise ValueError(f"box dimensions must be positive: {self}")

    @property
    def center3d(self):
        return np.array([self.cx, self.cy, self.height / 2.0])

    def half_diagonal(self):
        return 0.5 * np.hypot(self.width, self.length)

    def contains_xy(self, pts):
        """Point-in-rotated-rectangle for [..., 2] ground points."""
        pts = np.asarray(pts, dtype=np.float64)
        dx, dy = pts[..., 0] - self.cx, pts[..., 1] - self.cy
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        along = c * dx + s * dy
        across = -s * dx + c * dy
        return (np.abs(along) <= self.length / 2.0) & (np.abs(across) <= self.width / 2.0)

    def rotated(self, angle):
        c, s = np.cos(angle), np.sin(angle)
        return Box(c * self.cx - s * self.cy, s * self.cx + c * self.cy, self.yaw + angle,
                   self.width, self.length, self.height)


@dataclass(frozen=True)
class Scene:
    objects: tuple
    seed: int = 0

    def rotated(self, angle):
        return Scene(tuple(b.rotated(angle) for b in self.objects), self.seed)


def gen_scene(seed, n_objects, extent, min_range=3.0, jitter=0.15, max_tries=1000):
    """Random non-overlapping car-like boxes fully inside ``+/-extent``.

    Centres stay at least ``min_range`` m from the ego origin. Fewer than
    ``n_objects`` boxes are returned only if placement keeps failing.
    """
    if n_objects < 0:
        raise ValueError("n_objects must be non-negative")
    rng = np.random.default_rng(seed)
    w0, l0, h0 = CAR_SIZE
    boxes = []
    tries = 0
    while len(boxes) < n_objects and tries < max_tries:
        tries += 1
        w, l, h = (x * (1.0 + rng.uniform(-jitter, jitter)) for x in (w0, l0, h0))
        r = 0.5 * np.hypot(w, l)
        if extent - r <= 0:
            break
        cx, cy = rng.uniform(-(extent - r), extent - r, size=2)
        if np.hypot(cx, cy) < min_range:
            continue
        box = Box(float(cx), float(cy), float(rng.uniform(-np.pi, np.pi)), float(w), float(l), float(h))
        if all(np.hypot(cx - b.cx, cy - b.cy) > r + b.half_diagonal() for b in boxes):
            boxes.append(box)
    return Scene(tuple(boxes), int(seed))


def rasterize_bev(scene, extent, resolution):
    """Binary [H, W] mask: a cell is 1 iff its centre lies in some footprint."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    n = int(round(2 * extent / resolution))
    grid = bev_position_grid((n, n), extent, resolution)
    mask = np.zeros((n, n), dtype=np.float64)
    for box in scene.objects:
        mask[box.contains_xy(grid.coords)] = 1.0
    return mask


def _ray_box_depth(origin, dirs, box):
    """Camera depth of the first hit of each ray (inf on a miss).

    ``dirs`` are unnormalized with unit camera-frame z, so the ray
    parameter equals the camera depth.
    """
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # vehicle -> box axes
    o = rot @ (origin - np.array([box.cx, box.cy, 0.0]))
    d = dirs @ rot.T
    lo = np.array([-box.length / 2, -box.width / 2, 0.0])
    hi = np.array([box.length / 2, box.width / 2, box.height])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    # rays parallel to a slab: inside -> unconstrained, outside -> miss
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), tmax)
    near = tmin.max(axis=-1)
    far = tmax.min(axis=-1)
    hit = (near <= far) & (far > 0)
    depth = np.where(near > 0, near, far)
    return np.where(hit, depth, np.inf)


def render_views(scene, rig, image_size=None):
    """Grayscale silhouettes, [N_I, H, W, 1], intensity ``1/max(depth, 1)``.

    A box is drawn in a view only when its centre is inside that view's
    frustum; boxes are painted far to near.
    """
    h, w = image_size or rig.image_size
    if (h, w) != tuple(rig.image_size):
        raise ValueError(f"image size {(h, w)} differs from rig {rig.image_size}")
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    pix = np.stack([u, v], axis=-1).reshape(-1, 2)
    images = np.zeros((len(rig), h, w, 1))
    for n, view in enumerate(rig.views):
        visible = [b for b in scene.objects if view.frustum_contains(b.center3d)]
        if not visible:
            continue
        depths = [view.to_camera(b.center3d)[2] for b in visible]
        dirs = view.ray_directions(pix)
        img = np.zeros(h * w)
        for idx in np.argsort(depths)[::-1]:
            t = _ray_box_depth(view.translation, dirs, visible[idx])
            hit = np.isfinite(t)
            img[hit] = 1.0 / np.maximum(t[hit], 1.0)
        images[n, :, :, 0] = img.reshape(h, w)
    return images


# ---- scene file --------------------------------------------------------------

def format_scene(scene):
    lines = ["SCENE v1"]
    for b in scene.objects:
        lines.append("box " + " ".join(repr(float(x)) for x in
                                       (b.cx, b.cy, b.yaw, b.width, b.length, b.height)))
    return "\n".join(lines) + "\n"


def parse_scene(text, seed=0):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "SCENE v1":
        raise ValueError("scene file must start with 'SCENE v1'")
    boxes = []
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if tok[0] != "box" or len(tok) != 7:
            raise ValueError(f"scene line {lineno}: expected 'box cx cy yaw w l h'")
        boxes.append(Box(*(float(x) for x in tok[1:])))
    return Scene(tuple(boxes), seed)


def write_pgm(path, image):
    """Write a single-channel image in [0, 1] as a binary portable graymap."""
    img = np.clip(np.asarray(image, dtype=np.float64).squeeze(), 0.0, 1.0)
    data = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
