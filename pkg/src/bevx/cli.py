"""Command-line entry point: ``bevx <command> [flags]``.

Commands
--------
gen-data            render a synthetic dataset (views, rig, BEV masks)
train               fit a model; writes a loss CSV and a checkpoint
eval                per-category IoU CSV for a checkpoint
infer               write predicted BEV maps as PGM images
flops               attention cost of the cross-scale and aligned plans
analyze-attention   histogram of attention scores, conducive vs inconducive

Values are taken from the built-in defaults, then ``--config FILE``, then
the individual flags.
"""

import argparse
import csv
import io
import logging
import os
import sys

import numpy as np

from bevx import harness as H
from bevx import tensorio
from bevx.attention import DEFAULT_RANGES
from bevx.config import ConfigError, RunConfig, load_config
from bevx.flops import ALIGNED_PLAN, CROSS_SCALE_PLAN, plan_flops, saving_ratio
from bevx.world import write_pgm

log = logging.getLogger("bevx")

CATEGORIES = ("vehicle",)


def _csv_list(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _lambdas(text):
    try:
        vals = tuple(float(x) for x in _csv_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--lambda expects four numbers, got {text!r}") from None
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"--lambda expects four numbers, got {text!r}")
    return vals


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--drop-views", type=_csv_list, metavar="LIST",
                        help="comma-separated view names or indices to drop")
    common.add_argument("--aug-mode", choices=["all", "per-view", "per-token", "off"])
    common.add_argument("--residual", type=_on_off, metavar="{on,off}")
    common.add_argument("--lambda", dest="lambdas", type=_lambdas, metavar="a,b,c,d")
    common.add_argument("--xi", type=float)
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bevx", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="render a synthetic dataset")
    g.add_argument("--n-samples", type=int)
    g.add_argument("--previews", action="store_true", help="also write PGM previews")

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data", help="dataset directory (default: data.dataset_dir)")
    t.add_argument("--iterations", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--log", help="loss CSV path (default: <out>.csv)")

    for name, helptext in (("eval", "IoU of a checkpoint"), ("infer", "write predicted maps")):
        e = sub.add_parser(name, parents=[common], help=helptext)
        e.add_argument("--checkpoint", required=True)
        e.add_argument("--data")
        e.add_argument("--split", choices=["train", "eval", "all"])
    sub.choices["infer"].add_argument("--index", type=int, nargs="*", help="sample indices")

    f = sub.add_parser("flops", parents=[common], help="attention cost report")
    f.add_argument("--bev-size", type=int, nargs=2, metavar=("H", "W"))
    f.add_argument("--image-size", type=int, nargs=2, metavar=("H", "W"))

    a = sub.add_parser("analyze-attention", parents=[common], help="attention score histogram")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--compare", help="second checkpoint, reported with a label column")
    a.add_argument("--data")
    a.add_argument("--split", choices=["train", "eval", "all"])
    return p


def resolve_config(args, base=None):
    cfg = base or RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    aug = args.aug_mode.replace("-", "_") if args.aug_mode else None
    return cfg.with_overrides(
        seed=args.seed, drop_views=args.drop_views, aug_mode=aug, residual=args.residual,
        lambdas=args.lambdas, xi=args.xi,
        n_samples=getattr(args, "n_samples", None), iterations=getattr(args, "iterations", None),
        lr=getattr(args, "lr", None), split=getattr(args, "split", None),
        flops_bev=tuple(args.bev_size) if getattr(args, "bev_size", None) else None,
        flops_image=tuple(args.image_size) if getattr(args, "image_size", None) else None)


def _write(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _keep(cfg, rig):
    if not cfg.drop_views:
        return None
    return H.keep_mask_from_names(len(rig), cfg.drop_views, names=cfg.views)


def _load_with_checkpoint(args):
    """Checkpoint config, then file and flags; the model shape must still match."""
    stored = H.load_checkpoint(args.checkpoint)[1]
    cfg = resolve_config(args, stored)
    model, cfg, _ = H.load_checkpoint(args.checkpoint, cfg)
    if args.xi is not None or args.aug_mode:
        model.set_augmentation(xi=cfg.xi, mode=cfg.aug_mode)
    return model, cfg


# ---- commands --------------------------------------------------------------

def cmd_gen_data(args):
    cfg = resolve_config(args)
    out = args.out or cfg.dataset_dir
    H.gen_data(cfg, out, previews=args.previews)
    print(f"wrote {cfg.n_samples} samples to {out}")


def cmd_train(args):
    cfg = resolve_config(args)
    data = H.load_dataset(args.data or cfg.dataset_dir)
    train_set, eval_set = data.select("train"), data.select("eval")
    out = args.out or "checkpoint.bevx"
    log_path = args.log or os.path.splitext(out)[0] + ".csv"
    with open(log_path, "w", newline="") as fh:
        result = H.train(cfg, train_set, log_file=fh, eval_data=eval_set)
    H.save_checkpoint(out, result.model, cfg, cfg.iterations)
    if result.history:
        last = result.history[-1]
        print(f"iteration {last['iteration']}: total {last['total']:.6g} final {last['final']:.6g}")
    print(f"checkpoint {out}, log {log_path}")


def cmd_eval(args):
    model, cfg = _load_with_checkpoint(args)
    data = H.load_dataset(args.data or cfg.dataset_dir).select(cfg.split)
    scores = H.evaluate(model, data, cfg.threshold, _keep(cfg, data.rig))
    rows = [["category", "iou", "samples", "dropped_views"]]
    for c, s in enumerate(scores):
        name = CATEGORIES[c] if c < len(CATEGORIES) else f"class{c}"
        rows.append([name, f"{s:.6f}", len(data), ";".join(cfg.drop_views)])
    _write(_csv_text(rows), args.out)


def cmd_infer(args):
    model, cfg = _load_with_checkpoint(args)
    data = H.load_dataset(args.data or cfg.dataset_dir).select(cfg.split)
    idx = args.index if args.index else list(range(len(data)))
    out = args.out or "predictions"
    os.makedirs(out, exist_ok=True)
    keep = _keep(cfg, data.rig)
    rows = [["index", "iou", "file"]]
    for i in idx:
        sub = H.Dataset(data.rig, data.images[i:i + 1], data.masks[i:i + 1], [data.splits[i]])
        images, rig = sub.images, sub.rig
        if keep is not None:
            images, rig = H.drop_views(images, rig, keep)
        logits = H.predict(model, images, rig)[0]
        prob = 1.0 / (1.0 + np.exp(-logits))
        path = os.path.join(out, f"pred_{i:04d}.pgm")
        write_pgm(path, prob[..., 0])
        tensorio.save(os.path.join(out, f"pred_{i:04d}.bevx"), {"logits": logits})
        score = H.iou(logits[..., 0], data.masks[i, ..., 0], cfg.threshold)
        rows.append([i, f"{score:.6f}", path])
    sys.stdout.write(_csv_text(rows))


def flops_report(cfg):
    """Rows of the cost CSV for the configured BEV and image sizes."""
    (h_m, w_m), (h_i, w_i) = cfg.flops_bev, cfg.flops_image
    rows = [["record", "plan", "group", "n_q", "n_k", "value"]]
    for name, plan in (("cross_scale", CROSS_SCALE_PLAN), ("aligned", ALIGNED_PLAN)):
        plan = type(plan)(plan.groups, cfg.flops_dim)
        cost = plan_flops(plan, h_m, w_m, h_i, w_i)
        for g, (nq, nk, macs) in enumerate(cost.groups):
            rows.append(["group", name, g, nq, nk, macs])
        rows.append(["total", name, "", "", "", cost.total])
        dom = cost.dominant
        rows.append(["dominant", name, "", "", "", dom.numerator if dom.denominator == 1 else float(dom)])
    for mode in ("dominant", "full"):
        plans = [type(p)(p.groups, cfg.flops_dim) for p in (CROSS_SCALE_PLAN, ALIGNED_PLAN)]
        r = saving_ratio(*plans, (h_m, w_m, h_i, w_i), mode)
        rows.append(["saving_percent", "cross_scale_vs_aligned", mode, "", "", f"{100 * float(r):.6f}"])
    return rows


def cmd_flops(args):
    _write(_csv_text(flops_report(resolve_config(args))), args.out)


def cmd_analyze_attention(args):
    runs = [("primary", args.checkpoint)]
    if args.compare:
        runs.append(("compare", args.compare))
    text = ""
    for i, (label, path) in enumerate(runs):
        if not os.path.exists(path):
            raise FileNotFoundError(f"checkpoint not found: {path}")
        args.checkpoint = path
        model, cfg = _load_with_checkpoint(args)
        data = H.load_dataset(args.data or cfg.dataset_dir).select(cfg.split)
        hist = H.analyze_attention(model, data, DEFAULT_RANGES, _keep(cfg, data.rig))
        tag = f"{label}:{cfg.aug_mode}" if args.compare else None
        block = H.histogram_csv(hist, tag)
        text += block if i == 0 else block.split("\n", 1)[1]
    _write(text, args.out)


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "flops": cmd_flops, "analyze-attention": cmd_analyze_attention}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError, OSError, H.TrainingError) as exc:
        print(f"bevx {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
