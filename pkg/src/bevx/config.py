"""Run configuration: an INI-style ``key = value`` file with sections.

Every key, its section and its default are listed in ``FIELDS``; unknown
keys and out-of-range values raise :class:`ConfigError` naming the field.
"""

import configparser
from dataclasses import dataclass, fields, replace

from bevx.attention import MODES, canonical_mode
from bevx.decoder import ModelConfig, ScaleSchedule
from bevx.objective import LossWeights


class ConfigError(ValueError):
    pass


def _ints(text):
    return tuple(int(x) for x in str(text).replace(" ", "").split(",") if x)


def _floats(text):
    return tuple(float(x) for x in str(text).replace(" ", "").split(",") if x)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    # model
    bev_sizes: tuple = (6, 12, 25)
    channels: tuple = (32, 32, 32)
    dim: int = 32
    heads: int = 4
    xi: float = 0.05
    aug_mode: str = "all"
    residual: bool = True
    encoder_channels: tuple = (16, 16, 16)
    out_channels: int = 1
    # loss
    lambdas: tuple = (1.0, 2.0, 2.0, 60.0)
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    # optim
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    # train
    iterations: int = 1000
    batch_size: int = 8
    log_every: int = 50
    seed: int = 0
    # data
    dataset_dir: str = "data"
    rig_file: str = ""
    n_samples: int = 8
    n_objects: int = 3
    extent: float = 12.5
    image_height: int = 32
    image_width: int = 64
    views: tuple = ("front_left", "front", "front_right", "back_left", "back", "back_right")
    holdout: float = 0.25
    # eval
    split: str = "eval"
    threshold: float = 0.5
    drop_views: tuple = ()
    # flops
    flops_bev: tuple = (200, 200)
    flops_image: tuple = (224, 480)
    flops_dim: int = 32

    def __post_init__(self):
        _validate(self)

    # ---- derived objects ------------------------------------------------
    @property
    def final_size(self):
        return (2 * self.bev_sizes[-1], 2 * self.bev_sizes[-1])

    @property
    def resolution(self):
        return 2 * self.extent / self.final_size[0]

    def model_config(self):
        return ModelConfig(
            schedule=ScaleSchedule(self.bev_sizes, self.channels),
            image_channels=1, encoder_channels=self.encoder_channels, dim=self.dim,
            heads=self.heads, xi=self.xi, mode=self.aug_mode, residual=self.residual,
            out_channels=self.out_channels, extent=self.extent, seed=self.seed)

    def loss_weights(self):
        return LossWeights(self.lambdas, self.focal_gamma, self.focal_alpha)

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_text(self):
        cp = configparser.ConfigParser()
        for section, keys in SECTIONS.items():
            cp[section] = {k: _fmt(getattr(self, FIELD_OF[k])) for k in keys}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)


# file key -> (dataclass field, parser)
_PARSERS = {
    "bev_sizes": ("bev_sizes", _ints), "channels": ("channels", _ints), "dim": ("dim", int),
    "heads": ("heads", int), "xi": ("xi", float), "aug_mode": ("aug_mode", str),
    "residual": ("residual", _bool), "encoder_channels": ("encoder_channels", _ints),
    "out_channels": ("out_channels", int),
    "lambda": ("lambdas", _floats), "focal_gamma": ("focal_gamma", float),
    "focal_alpha": ("focal_alpha", float),
    "lr": ("lr", float), "beta1": ("beta1", float), "beta2": ("beta2", float),
    "weight_decay": ("weight_decay", float),
    "iterations": ("iterations", int), "batch_size": ("batch_size", int),
    "log_every": ("log_every", int), "seed": ("seed", int),
    "dataset_dir": ("dataset_dir", str), "rig_file": ("rig_file", str),
    "n_samples": ("n_samples", int), "n_objects": ("n_objects", int), "extent": ("extent", float),
    "image_height": ("image_height", int), "image_width": ("image_width", int),
    "views": ("views", lambda t: tuple(x.strip() for x in t.split(",") if x.strip())),
    "holdout": ("holdout", float),
    "split": ("split", str), "threshold": ("threshold", float),
    "drop_views": ("drop_views", lambda t: tuple(x.strip() for x in t.split(",") if x.strip())),
    "bev_size": ("flops_bev", _ints), "image_size": ("flops_image", _ints), "dim_flops": ("flops_dim", int),
}
SECTIONS = {
    "model": ["bev_sizes", "channels", "dim", "heads", "xi", "aug_mode", "residual",
              "encoder_channels", "out_channels"],
    "loss": ["lambda", "focal_gamma", "focal_alpha"],
    "optim": ["lr", "beta1", "beta2", "weight_decay"],
    "train": ["iterations", "batch_size", "log_every", "seed"],
    "data": ["dataset_dir", "rig_file", "n_samples", "n_objects", "extent", "image_height",
             "image_width", "views", "holdout"],
    "eval": ["split", "threshold", "drop_views"],
    "flops": ["bev_size", "image_size", "dim_flops"],
}
FIELD_OF = {k: v[0] for k, v in _PARSERS.items()}


def _validate(c):
    def check(ok, name, msg):
        if not ok:
            raise ConfigError(f"{name}: {msg}")

    check(len(c.bev_sizes) == 3 and all(s > 0 for s in c.bev_sizes)
          and list(c.bev_sizes) == sorted(set(c.bev_sizes)), "model.bev_sizes",
          f"need three strictly increasing positive sizes, got {c.bev_sizes}")
    check(len(c.channels) == 3 and min(c.channels) > 0, "model.channels",
          f"need three positive widths, got {c.channels}")
    check(c.dim > 0, "model.dim", "must be positive")
    check(c.heads > 0 and c.dim % c.heads == 0, "model.heads", f"must divide dim {c.dim}")
    check(c.xi >= 0, "model.xi", "must be non-negative")
    try:
        object.__setattr__(c, "aug_mode", canonical_mode(c.aug_mode))
    except ValueError:
        raise ConfigError(f"model.aug_mode: must be one of {MODES}, got {c.aug_mode!r}") from None
    check(len(c.encoder_channels) == 3 and min(c.encoder_channels) > 0, "model.encoder_channels",
          "need three positive widths")
    check(c.out_channels > 0, "model.out_channels", "must be positive")
    check(len(c.lambdas) == 4 and min(c.lambdas) >= 0 and max(c.lambdas) > 0, "loss.lambda",
          f"need four non-negative weights, one positive; got {c.lambdas}")
    check(c.focal_gamma >= 0, "loss.focal_gamma", "must be non-negative")
    check(0 <= c.focal_alpha <= 1, "loss.focal_alpha", "must lie in [0, 1]")
    check(c.lr > 0, "optim.lr", "must be positive")
    check(0 <= c.beta1 < 1, "optim.beta1", "must lie in [0, 1)")
    check(0 <= c.beta2 < 1, "optim.beta2", "must lie in [0, 1)")
    check(c.weight_decay >= 0, "optim.weight_decay", "must be non-negative")
    check(c.iterations >= 0, "train.iterations", "must be non-negative")
    check(c.batch_size > 0, "train.batch_size", "must be positive")
    check(c.log_every > 0, "train.log_every", "must be positive")
    check(c.n_samples >= 0, "data.n_samples", "must be non-negative")
    check(c.n_objects >= 0, "data.n_objects", "must be non-negative")
    check(c.extent > 0, "data.extent", "must be positive")
    check(c.image_height > 0 and c.image_height % 16 == 0, "data.image_height",
          "must be a positive multiple of 16")
    check(c.image_width > 0 and c.image_width % 16 == 0, "data.image_width",
          "must be a positive multiple of 16")
    check(len(c.views) > 0, "data.views", "need at least one view")
    check(0 <= c.holdout < 1, "data.holdout", "must lie in [0, 1)")
    check(c.split in ("train", "eval", "all"), "eval.split", "must be train, eval or all")
    check(0 < c.threshold < 1, "eval.threshold", "must lie in (0, 1)")
    check(len(c.flops_bev) == 2 and min(c.flops_bev) > 0, "flops.bev_size", "need H,W")
    check(len(c.flops_image) == 2 and min(c.flops_image) > 0, "flops.image_size", "need H,W")
    check(c.flops_dim > 0, "flops.dim_flops", "must be positive")


def parse_config_text(text, base=None):
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            name, parse = _PARSERS[key]
            try:
                values[name] = parse(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
    try:
        return replace(base or RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config_text(fh.read(), base)


def field_names():
    return [f.name for f in fields(RunConfig)]
