"""Pinhole camera calibration and the inverse-projection arithmetic.

Conventions, fixed project-wide:

* Vehicle frame: x forward, y left, z up (meters).
* Camera frame: x right, y down, z along the optical axis.
* ``rotation`` maps vehicle-frame vectors into the camera frame and
  ``translation`` is the camera centre in the vehicle frame, so a vehicle
  point X lands at ``K @ R @ (X - t)`` (homogeneous pixel).
* Pixel (u, v): u is the column, v the row; pixel centres sit on integer
  coordinates.
"""

from dataclasses import dataclass, field

import numpy as np

# camera axes expressed in vehicle axes, for a level camera facing +x
_MOUNT = np.array([[0.0, -1.0, 0.0],
                   [0.0, 0.0, -1.0],
                   [1.0, 0.0, 0.0]])


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class CalibrationError(ValueError):
    pass


def invert_intrinsics(K):
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (3, 3):
        raise CalibrationError(f"intrinsics must be 3x3, got {K.shape}")
    if abs(np.linalg.det(K)) <= 1e-9:
        raise SingularMatrixError("intrinsics matrix is singular")
    return np.linalg.inv(K)


def yaw_matrix(angle):
    """Rotation about the vehicle z (up) axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def mounted_rotation(yaw, pitch=0.0):
    """Rotation for a camera facing ``yaw`` radians (left positive) from
    vehicle forward, tilted down by ``pitch`` radians."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    tilt = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return tilt @ _MOUNT @ yaw_matrix(yaw).T


def intrinsics_from_fov(width, height, hfov):
    f = width / (2.0 * np.tan(hfov / 2.0))
    return np.array([[f, 0.0, (width - 1) / 2.0],
                     [0.0, f, (height - 1) / 2.0],
                     [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraView:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    image_size: tuple  # (H, W)
    _k_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64)
        R = np.array(self.rotation, dtype=np.float64)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise CalibrationError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise CalibrationError("rotation is not a proper orthonormal matrix")
        h, w = (int(s) for s in self.image_size)
        if h < 1 or w < 1:
            raise CalibrationError(f"invalid image size {self.image_size}")
        for arr in (K, R, t):
            arr.flags.writeable = False
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "image_size", (h, w))
        object.__setattr__(self, "_k_inv", invert_intrinsics(K))

    @property
    def k_inv(self):
        return self._k_inv

    @property
    def optical_axis(self):
        """Unit viewing direction in the vehicle frame."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    @property
    def front_facing(self):
        return bool(self.optical_axis[0] > 0)

    def to_camera(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation.T

    def project(self, points):
        """Vehicle points [..., 3] -> (pixels [..., 2], depth [...])."""
        cam = self.to_camera(points)
        depth = cam[..., 2]
        hom = cam @ self.intrinsics.T
        with np.errstate(divide="ignore", invalid="ignore"):
            pix = hom[..., :2] / hom[..., 2:3]
        return pix, depth

    def unproject(self, pixels, depth):
        """Pixels [..., 2] at camera depth [...] -> vehicle points [..., 3]."""
        pix = np.asarray(pixels, dtype=np.float64)
        hom = np.concatenate([pix, np.ones(pix.shape[:-1] + (1,))], axis=-1)
        cam = (hom @ self._k_inv.T) * np.asarray(depth, dtype=np.float64)[..., None]
        return cam @ self.rotation + self.translation

    def ray_directions(self, pixels):
        """Vehicle-frame ray directions R^-1 K^-1 (u, v, 1), unnormalized."""
        pix = np.asarray(pixels, dtype=np.float64)
        hom = np.concatenate([pix, np.ones(pix.shape[:-1] + (1,))], axis=-1)
        return hom @ self._k_inv.T @ self.rotation

    def frustum_contains(self, point):
        pix, depth = self.project(np.asarray(point, dtype=np.float64).reshape(1, 3))
        if not depth[0] > 0:
            return False
        u, v = pix[0]
        h, w = self.image_size
        return bool(-0.5 <= u < w - 0.5 and -0.5 <= v < h - 0.5)


def pixel_grid(shape, stride):
    """(u, v) pixel coordinates of each cell of a feature map [h, w, 2]."""
    h, w = shape
    v, u = np.meshgrid(np.arange(h) * stride, np.arange(w) * stride, indexing="ij")
    return np.stack([u, v], axis=-1).astype(np.float64)


def pixel_direction_grid(view, grid):
    """Lift a pixel grid [..., 2] to vehicle-frame directions [..., 3]."""
    return view.ray_directions(grid)


@dataclass(frozen=True)
class CameraRig:
    views: tuple

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise CalibrationError("a rig needs at least one view")
        sizes = {v.image_size for v in views}
        if len(sizes) != 1:
            raise CalibrationError(f"views disagree on image size: {sorted(sizes)}")
        object.__setattr__(self, "views", views)

    def __len__(self):
        return len(self.views)

    def __getitem__(self, idx):
        return self.views[idx]

    @property
    def image_size(self):
        return self.views[0].image_size

    def subset(self, indices):
        return CameraRig(tuple(self.views[i] for i in indices))

    def translations(self):
        return np.stack([v.translation for v in self.views])

    def front_facing(self):
        return np.array([v.front_facing for v in self.views])

    def rotated(self, yaw):
        """The same rig after yawing the whole vehicle frame by ``yaw``."""
        Rz = yaw_matrix(yaw)
        return CameraRig(tuple(
            CameraView(v.intrinsics, v.rotation @ Rz.T, Rz @ v.translation, v.image_size)
            for v in self.views))


VIEW_NAMES = ("front_left", "front", "front_right", "back_left", "back", "back_right")
_VIEW_YAWS = {"front": 0.0, "front_left": np.pi / 3, "back_left": 2 * np.pi / 3,
              "back": np.pi, "back_right": -2 * np.pi / 3, "front_right": -np.pi / 3}


def default_rig(image_size=(32, 64), names=VIEW_NAMES, hfov=np.deg2rad(75.0),
                height=1.5, offset=0.5, pitch=np.deg2rad(8.0)):
    """Surround rig: cameras at 60 degree spacing, ``offset`` m out from the
    vehicle centre along their facing direction, ``height`` m above ground."""
    h, w = image_size
    K = intrinsics_from_fov(w, h, hfov)
    views = []
    for name in names:
        yaw = _VIEW_YAWS[name]
        t = np.array([offset * np.cos(yaw), offset * np.sin(yaw), height])
        views.append(CameraView(K, mounted_rotation(yaw, pitch), t, (h, w)))
    return CameraRig(tuple(views))


# ---- rig file -------------------------------------------------------------

def format_rig(rig):
    lines = ["RIG v1"]
    for v in rig.views:
        K, R, t = v.intrinsics, v.rotation, v.translation
        nums = [K[0, 0], K[1, 1], K[0, 2], K[1, 2], *R.reshape(-1), *t]
        lines.append("view " + " ".join(repr(float(x)) for x in nums)
                     + f" {v.image_size[1]} {v.image_size[0]}")
    return "\n".join(lines) + "\n"


def parse_rig(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "RIG v1":
        raise CalibrationError("rig file must start with 'RIG v1'")
    views = []
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if tok[0] != "view" or len(tok) != 19:
            raise CalibrationError(f"rig line {lineno}: expected 'view' and 18 numbers")
        try:
            fx, fy, cx, cy = map(float, tok[1:5])
            R = np.array([float(x) for x in tok[5:14]]).reshape(3, 3)
            t = np.array([float(x) for x in tok[14:17]])
            w, h = int(tok[17]), int(tok[18])
        except ValueError as exc:
            raise CalibrationError(f"rig line {lineno}: {exc}") from None
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        views.append(CameraView(K, R, t, (h, w)))
    return CameraRig(tuple(views))


def save_rig(path, rig):
    with open(path, "w") as fh:
        fh.write(format_rig(rig))


def load_rig(path):
    with open(path) as fh:
        return parse_rig(fh.read())
