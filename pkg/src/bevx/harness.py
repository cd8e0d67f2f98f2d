"""Datasets, checkpoints, and the train / eval / analysis loops."""

import csv
import io
import itertools
import logging
import os
from dataclasses import dataclass

import numpy as np

from bevx import tensor as T
from bevx import tensorio
from bevx.attention import DEFAULT_RANGES, ScoreHistogram, conducive_map, score_histogram
from bevx.camera import VIEW_NAMES, default_rig, load_rig, save_rig
from bevx.config import RunConfig, parse_config_text
from bevx.decoder import CrossScaleModel, aux_logits, drop_views, forward
from bevx.objective import iou, total_loss
from bevx.optim import AdamW
from bevx.world import format_scene, gen_scene, rasterize_bev, render_views, write_pgm

log = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
RIG_FILE = "rig.txt"


class TrainingError(RuntimeError):
    pass


# ---- data ------------------------------------------------------------------

def build_rig(cfg):
    if cfg.rig_file:
        rig = load_rig(cfg.rig_file)
        if rig.image_size != (cfg.image_height, cfg.image_width):
            raise ValueError(f"rig file image size {rig.image_size} differs from config")
        return rig
    unknown = set(cfg.views) - set(VIEW_NAMES)
    if unknown:
        raise ValueError(f"data.views: unknown view names {sorted(unknown)}")
    return default_rig((cfg.image_height, cfg.image_width), names=cfg.views)


def sample_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def make_sample(cfg, rig, index):
    scene = gen_scene(sample_seed(cfg.seed, index), cfg.n_objects, cfg.extent)
    images = render_views(scene, rig)
    mask = rasterize_bev(scene, cfg.extent, cfg.resolution)[..., None]
    return scene, images, mask


def split_of(index, n, holdout):
    n_eval = int(round(n * holdout))
    return "eval" if index >= n - n_eval else "train"


def gen_data(cfg, out_dir, previews=False):
    """Write ``cfg.n_samples`` rendered samples plus rig and manifest."""
    os.makedirs(out_dir, exist_ok=True)
    rig = build_rig(cfg)
    save_rig(os.path.join(out_dir, RIG_FILE), rig)
    rows = []
    for i in range(cfg.n_samples):
        scene, images, mask = make_sample(cfg, rig, i)
        stem = f"sample_{i:04d}"
        tensorio.save(os.path.join(out_dir, stem + ".bevx"), {"images": images, "mask": mask})
        with open(os.path.join(out_dir, stem + ".scene"), "w") as fh:
            fh.write(format_scene(scene))
        if previews:
            pdir = os.path.join(out_dir, "previews")
            os.makedirs(pdir, exist_ok=True)
            for n in range(images.shape[0]):
                write_pgm(os.path.join(pdir, f"{stem}_view{n}.pgm"), images[n])
            write_pgm(os.path.join(pdir, f"{stem}_bev.pgm"), mask)
        rows.append((i, stem + ".bevx", stem + ".scene", split_of(i, cfg.n_samples, cfg.holdout)))
    with open(os.path.join(out_dir, MANIFEST), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "file", "scene", "split"])
        w.writerows(rows)
    return out_dir


@dataclass
class Dataset:
    rig: object
    images: np.ndarray  # [N, N_I, H, W, 1]
    masks: np.ndarray  # [N, H_M, W_M, 1]
    splits: list

    def select(self, split):
        if split == "all":
            idx = list(range(len(self.splits)))
        else:
            idx = [i for i, s in enumerate(self.splits) if s == split]
        return Dataset(self.rig, self.images[idx], self.masks[idx], [self.splits[i] for i in idx])

    def __len__(self):
        return len(self.splits)


def load_dataset(path):
    manifest = os.path.join(path, MANIFEST)
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no dataset at {path} (missing {MANIFEST})")
    rig = load_rig(os.path.join(path, RIG_FILE))
    imgs, masks, splits = [], [], []
    with open(manifest) as fh:
        for row in csv.DictReader(fh):
            t = tensorio.load(os.path.join(path, row["file"]))
            imgs.append(t["images"].astype(np.float64))
            masks.append(t["mask"].astype(np.float64))
            splits.append(row["split"])
    h, w = rig.image_size
    images = np.stack(imgs) if imgs else np.zeros((0, len(rig), h, w, 1))
    mask_arr = np.stack(masks) if masks else np.zeros((0, 1, 1, 1))
    return Dataset(rig, images, mask_arr, splits)


def dataset_from_config(cfg):
    """In-memory dataset built directly from the config (no files)."""
    rig = build_rig(cfg)
    imgs, masks, splits = [], [], []
    for i in range(cfg.n_samples):
        _, images, mask = make_sample(cfg, rig, i)
        imgs.append(images)
        masks.append(mask)
        splits.append(split_of(i, cfg.n_samples, cfg.holdout))
    return Dataset(rig, np.stack(imgs), np.stack(masks), splits)


# ---- checkpoints -------------------------------------------------------------

def checkpoint_tensors(model, cfg, iteration):
    tensors = {name: p.data for name, p in model.named_parameters()}
    for i, lvl in enumerate(model.levels):
        tensors[f"levels.{i}.attn.xi"] = np.array([lvl.attn.xi])
    tensors["meta.iteration"] = np.array([iteration])
    tensors["meta.config"] = tensorio.text_to_array(cfg.to_text())
    return tensors


def save_checkpoint(path, model, cfg, iteration=0):
    tensorio.save(path, checkpoint_tensors(model, cfg, iteration))


def load_checkpoint(path, cfg=None):
    """Rebuild the model from a checkpoint; returns (model, cfg, iteration).

    When ``cfg`` is given its model shape must match the stored weights.
    """
    tensors = tensorio.load(path)
    stored_cfg = parse_config_text(tensorio.array_to_text(tensors["meta.config"]))
    cfg = cfg or stored_cfg
    model = CrossScaleModel(cfg.model_config())
    params = dict(model.named_parameters())
    missing = [k for k in params if k not in tensors]
    if missing:
        raise ValueError(f"checkpoint lacks parameters: {missing[:5]}")
    for name, p in params.items():
        arr = tensors[name]
        if arr.shape != p.shape:
            raise ValueError(f"config/checkpoint shape mismatch at {name}: "
                             f"{list(arr.shape)} vs {list(p.shape)}")
        p.data = arr.astype(np.float64)
    for i, lvl in enumerate(model.levels):
        key = f"levels.{i}.attn.xi"
        # the f32 dump rounds xi; keep the exact config value when they agree
        if key in tensors and np.float32(lvl.attn.xi) != np.float32(tensors[key][0]):
            lvl.attn.xi = float(tensors[key][0])
    return model, cfg, int(tensors["meta.iteration"][0])


# ---- training --------------------------------------------------------------

LOG_COLUMNS = ["iteration", "total", "branch0", "branch1", "branch2", "final", "heldout_iou"]


@dataclass
class TrainResult:
    model: CrossScaleModel
    history: list  # dict rows with LOG_COLUMNS


def train(cfg, data, model=None, log_file=None, eval_data=None):
    """Optimize the multi-scale objective on ``data`` (a Dataset)."""
    model = model or CrossScaleModel(cfg.model_config())
    opt = AdamW(model.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    weights = cfg.loss_weights()
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    if n == 0 and cfg.iterations:
        raise TrainingError("training split is empty")
    writer = None
    if log_file is not None:
        writer = csv.writer(log_file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    history = []
    for it in range(1, cfg.iterations + 1):
        idx = np.arange(n) if cfg.batch_size >= n else np.sort(rng.choice(n, cfg.batch_size, replace=False))
        try:
            out = forward(data.images[idx], data.rig, model)
            total, parts = total_loss(out, data.masks[idx], aux_logits(model, out.bev), weights)
            total.backward()
        except T.NumericError as exc:
            raise TrainingError(f"iteration {it}: non-finite value during training ({exc})") from exc
        opt.step()
        opt.zero_grad()
        row = {"iteration": it, "total": total.item(),
               **{f"branch{i}": parts[i].item() for i in range(3)}, "final": parts[3].item(),
               "heldout_iou": ""}
        if eval_data is not None and len(eval_data) and (it % cfg.log_every == 0 or it == cfg.iterations):
            row["heldout_iou"] = evaluate(model, eval_data, cfg.threshold)[0]
        history.append(row)
        if writer:
            writer.writerow([_fmt_cell(row[c]) for c in LOG_COLUMNS])
        if it % cfg.log_every == 0:
            log.info("iter %d loss %.5f final %.5f", it, row["total"], row["final"])
    return TrainResult(model, history)


def _fmt_cell(v):
    return f"{v:.8g}" if isinstance(v, float) else str(v)


# ---- evaluation ----------------------------------------------------------------

def predict(model, images, rig, batch_size=8):
    outs = []
    for s in range(0, len(images), batch_size):
        outs.append(forward(images[s:s + batch_size], rig, model).logits.data)
    return np.concatenate(outs) if outs else np.zeros((0,))


def evaluate(model, data, threshold=0.5, keep=None):
    """Pooled IoU per output channel over every sample in ``data``."""
    images, rig = data.images, data.rig
    if keep is not None:
        images, rig = drop_views(images, rig, keep)
    logits = predict(model, images, rig)
    return [iou(logits[..., c], data.masks[..., c], threshold) for c in range(logits.shape[-1])]


def keep_mask_from_names(rig_size, drop, names=VIEW_NAMES):
    """Turn a list of view indices or default-rig names into a keep mask."""
    keep = np.ones(rig_size, dtype=bool)
    for item in drop:
        item = str(item)
        if item.isdigit():
            j = int(item)
        elif item in names:
            j = list(names).index(item)
        else:
            raise ValueError(f"unknown view {item!r} in drop list")
        if j >= rig_size:
            raise ValueError(f"view index {j} out of range for {rig_size} views")
        keep[j] = False
    if not keep.any():
        raise ValueError("drop list removes every view")
    return keep


def drop_sweep(model, data, threshold=0.5):
    """Mean IoU (first channel) over every choice of k dropped views, per k."""
    n = len(data.rig)
    result = {}
    for k in range(n):
        scores = []
        for dropped in itertools.combinations(range(n), k):
            keep = np.ones(n, dtype=bool)
            keep[list(dropped)] = False
            scores.append(evaluate(model, data, threshold, keep)[0])
        result[k] = float(np.mean(scores))
    return result


def analyze_attention(model, data, ranges=DEFAULT_RANGES, keep=None, batch_size=8):
    """Histogram of normalized attention scores over all levels and samples."""
    images, rig = data.images, data.rig
    if keep is not None:
        images, rig = drop_views(images, rig, keep)
    hist = ScoreHistogram(ranges)
    for s in range(0, len(images), batch_size):
        out = forward(images[s:s + batch_size], rig, model)
        for grid, w in zip(model.grids, out.weights):
            hist = hist.merge(score_histogram(w, conducive_map(grid, rig), ranges))
    return hist


def histogram_csv(hist, label=None):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["range_lo", "range_hi", "conducive_count", "inconducive_count"]
    w.writerow((["checkpoint"] if label is not None else []) + head)
    for row in hist.rows():
        w.writerow(([label] if label is not None else []) + list(row))
    return buf.getvalue()


__all__ = [
    "RunConfig", "TrainingError", "gen_data", "load_dataset", "dataset_from_config", "Dataset",
    "save_checkpoint", "load_checkpoint", "train", "evaluate", "drop_sweep", "analyze_attention",
    "histogram_csv", "keep_mask_from_names", "predict",
]
