"""Command-line entry point.

Every subcommand writes into ``--out``: its results, ``run.cfg`` (the fully
resolved configuration, re-usable with ``--config``) and ``version.txt``.
Failures exit non-zero and leave ``error.json`` behind. Settings resolve as
flags > config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from . import datagen as dg
from . import evalviz as ev
from . import trainer as tr
from .charset import DEFAULT_CHARSET
from .ctc import greedy_decode
from .glyphs import MissingGlyphFont

log = logging.getLogger("platerec")


class MissingInput(FileNotFoundError):
    pass


class CheckpointIncompatible(RuntimeError):
    pass


# name -> (default, type, help)
OPTIONS = {
    "gen-data": {
        "n": (100, int, "number of scenes"),
        "seed": (0, int, "global seed"),
        "layout": ("single", str, "single or double"),
        "distortion": (1.0, float, "perspective strength, 0 = frontal"),
        "blur_prob": (0.5, float, "probability of blurring a plate"),
        "blur_max": (1.5, float, "largest blur magnitude (template pixels)"),
        "scene_width": (240, int, "scene width"),
        "scene_height": (150, int, "scene height"),
        "background_dir": ("", str, "directory of background images (default: procedural)"),
        "font": ("", str, "TrueType font used for all glyphs (default: procedural)"),
        "special_fraction": (0.0, float, "fraction of scenes tagged as special plates"),
    },
    "perturb": {
        "manifest": ("", str, "input manifest"),
        "sigma": (4.0, float, "noise std (pixels)"),
        "seed": (0, int, "seed"),
    },
    "train": {
        "manifest": ("", str, "training manifest"),
        "stage": ("all", str, "1, 2, 3 or all"),
        "init_checkpoint": ("", str, "checkpoint to start from"),
        "epochs": ("30,30,20", str, "epochs per stage"),
        "lr": ("0.001 and 0.0005", str, "learning rates"),
        "batch_size": (32, int, "batch size"),
        "loss": ("focal", str, "ctc or focal"),
        "alpha": (0.5, float, "focal alpha"),
        "gamma": (2.0, float, "focal gamma"),
        "p_mode": ("greedy-product", str, "plate probability mode"),
        "beta1": (0.9, float, "Adam beta1"),
        "seed": (0, int, "seed"),
        "sigma": (4.0, float, "localization noise std (pixels)"),
        "use_lpca": (True, bool, "enable per-page attention"),
        "use_ptr": (True, bool, "enable the rectifier"),
        "split": ("train", str, "manifest split to train on ('' = all)"),
    },
    "rectify": {
        "checkpoint": ("", str, "checkpoint"),
        "images": ("", str, "comma-separated crop images"),
        "layout": ("", str, "expected plate layout"),
    },
    "recognize": {
        "checkpoint": ("", str, "checkpoint"),
        "manifest": ("", str, "manifest of scenes"),
        "split": ("test", str, "manifest split ('' = all)"),
    },
    "eval": {
        "predictions": ("", str, "predictions CSV from recognize"),
        "manifest": ("", str, "manifest supplying category tags (optional)"),
    },
    "visualize": {
        "checkpoint": ("", str, "checkpoint"),
        "image": ("", str, "crop image"),
        "pages": ("", str, "comma-separated class IDs to draw (default: all)"),
    },
    "bench": {
        "checkpoint": ("", str, "checkpoint"),
        "manifest": ("", str, "manifest of scenes"),
        "repetitions": (5, int, "timed passes"),
        "warmup": (1, int, "untimed passes"),
        "batch_size": (1, int, "batch size"),
        "limit": (100, int, "max images"),
    },
}


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise tr.ConfigError(f"not a boolean: {v!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="platerec", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, help=f"{cmd} (flags > --config > defaults)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("-v", "--verbose", action="store_true")
        for name, (default, _, help_) in opts.items():
            sp.add_argument("--" + name.replace("_", "-"), dest=name, default=None,
                            help=f"{help_} [default: {default}]")
    return p


def resolve(cmd: str, args: argparse.Namespace) -> dict:
    opts = OPTIONS[cmd]
    merged = {k: v[0] for k, v in opts.items()}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInput(f"config file {path} not found")
        for k, v in tr.parse_config(path.read_text()).items():
            if k in ("command", "version"):
                continue
            if k not in opts:
                raise tr.ConfigError(f"unknown key {k!r} for {cmd}")
            merged[k] = v
    for k in opts:
        if getattr(args, k) is not None:
            merged[k] = getattr(args, k)
    try:
        return {k: (_bool(v) if opts[k][1] is bool else opts[k][1](v)) for k, v in merged.items()}
    except ValueError as exc:
        raise tr.ConfigError(str(exc)) from None


def write_run_config(out: Path, cmd: str, cfg: dict) -> None:
    lines = [f"# platerec {__version__}", f"command = {cmd}"]
    lines += [f"{k} = {v}" for k, v in cfg.items()]
    (out / "run.cfg").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "version.txt").write_text(__version__ + "\n")


# --- helpers ---------------------------------------------------------------------


def _need(path: str, what: str) -> Path:
    if not path:
        raise tr.ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{what} {p} not found")
    return p


def load_image(path, size=None) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != tuple(size):
            im = im.resize(tuple(size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def save_image(arr: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8)).save(path)


def _chw(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)


def read_manifest_images(path: Path, split: str = ""):
    samples = dg.read_manifest(path)
    if split:
        samples = [s for s in samples if s.split == split]
    pairs = []
    for s in samples:
        img = Path(s.image)
        img = img if img.is_absolute() else path.parent / img
        if not img.exists():
            raise MissingInput(f"image {img} referenced by {path} not found")
        pairs.append((load_image(img), s))
    return pairs


def _load_ckpt(path: str, layout: str = "") -> tuple[tr.Checkpoint, tr.PlateModel]:
    p = _need(path, "checkpoint")
    try:
        ckpt = tr.load_checkpoint(p, DEFAULT_CHARSET)
    except tr.CheckpointError as exc:
        raise CheckpointIncompatible(str(exc)) from None
    if layout and ckpt.ptr_cfg["layout"] != layout:
        raise CheckpointIncompatible(f"checkpoint is for {ckpt.ptr_cfg['layout']} plates, not {layout}")
    return ckpt, ckpt.build_model()


# --- subcommands ------------------------------------------------------------------


def cmd_gen_data(cfg: dict, out: Path) -> None:
    scenes = out / "scenes"
    scenes.mkdir(exist_ok=True)
    scfg = dg.SceneConfig(layout=cfg["layout"], scene_size=(cfg["scene_width"], cfg["scene_height"]),
                          distortion=cfg["distortion"], blur_prob=cfg["blur_prob"], blur_max=cfg["blur_max"])
    backgrounds = []
    if cfg["background_dir"]:
        bdir = _need(cfg["background_dir"], "background_dir")
        backgrounds = sorted(p for p in bdir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    font = _need(cfg["font"], "font") if cfg["font"] else None
    samples = []
    for i in range(cfg["n"]):
        seed = dg.sample_seed(cfg["seed"], i)
        bg = None
        if backgrounds:
            bg = load_image(backgrounds[seed % len(backgrounds)], (cfg["scene_width"], cfg["scene_height"]))
        scene, sample = dg.make_scene(scfg, seed, bg, font)
        sample.image = f"scenes/{i:06d}.png"
        if np.random.default_rng(seed).random() < cfg["special_fraction"]:
            sample.category = "special"
        save_image(scene, out / sample.image)
        samples.append(sample)
    dg.write_manifest(samples, out / "manifest.jsonl", split_seed=cfg["seed"])


def cmd_perturb(cfg: dict, out: Path) -> None:
    src = _need(cfg["manifest"], "manifest")
    samples = []
    for i, s in enumerate(dg.read_manifest(src)):
        p = dg.perturb_localization(s, cfg["sigma"], dg.sample_seed(cfg["seed"], i))
        img = Path(p.image)
        p.image = str(img if img.is_absolute() else (src.parent / img).resolve())
        samples.append(p)
    dg.write_manifest(samples, out / "manifest.jsonl")


def cmd_train(cfg: dict, out: Path) -> None:
    path = _need(cfg["manifest"], "manifest")
    pairs = read_manifest_images(path, cfg["split"])
    if not pairs:
        raise tr.ConfigError(f"no samples in split {cfg['split']!r} of {path}")
    data = dg.PlateSet.from_scenes(pairs, sigma=cfg["sigma"], seed=cfg["seed"])
    plan = tr.plan_from_config({k: str(v) for k, v in cfg.items()})
    if cfg["init_checkpoint"]:
        ckpt, model = _load_ckpt(cfg["init_checkpoint"])
        if ckpt.ptr_cfg["layout"] != data.layout:
            # the recognizer is shared across layouts; only the rectifier starts fresh
            from .ptr import PTRConfig

            fresh = tr.PlateModel(PTRConfig(layout=data.layout), model.recognizer.cfg, model.use_ptr)
            fresh.recognizer.load_state_dict(model.recognizer.state_dict())
            model = fresh
    else:
        from .aflnet import AFLNetConfig
        from .ptr import PTRConfig

        model = tr.PlateModel(PTRConfig(layout=data.layout), AFLNetConfig(use_lpca=cfg["use_lpca"]), cfg["use_ptr"])
    stages = (1, 2, 3) if cfg["stage"] == "all" else (int(cfg["stage"]),)
    if any(s not in (1, 2, 3) for s in stages):
        raise tr.ConfigError(f"bad stage {cfg['stage']!r}")
    _, model, _ = tr.train_full(plan, data, model, out, stages)
    acc = tr.sequence_accuracy(model, data, "crops")
    (out / "summary.json").write_text(json.dumps({
        "stages": list(stages), "train_accuracy": acc,
        "recognizer_checksum": tr.group_checksum(model),
        "rectifier_checksum": tr.group_checksum(model, ("rectifier",)),
    }, indent=2))


def cmd_rectify(cfg: dict, out: Path) -> None:
    _, model = _load_ckpt(cfg["checkpoint"], cfg["layout"])
    if not cfg["images"]:
        raise tr.ConfigError("--images is required")
    flags = []
    for name in cfg["images"].split(","):
        src = _need(name.strip(), "image")
        x = _chw(load_image(src))
        with torch.no_grad():
            rect, verts, ok = model.ptr(x[None])
        save_image(rect[0].permute(1, 2, 0).numpy(), out / f"{src.stem}_rectified.png")
        flags.append({"image": str(src), "fallback": not bool(ok[0]), "vertices": verts[0].tolist()})
    (out / "rectified.json").write_text(json.dumps(flags, indent=2))


def _plate_set(pairs) -> dg.PlateSet:
    return dg.PlateSet.from_scenes(pairs, sigma=0.0)


def cmd_recognize(cfg: dict, out: Path) -> None:
    _, model = _load_ckpt(cfg["checkpoint"])
    path = _need(cfg["manifest"], "manifest")
    pairs = read_manifest_images(path, cfg["split"])
    data = _plate_set(pairs)
    preds = tr.predict(model, data, "crops")
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "gt", "pred", "layout", "category"])
        for (_, s), p in zip(pairs, preds):
            w.writerow([s.image, s.plate, p, s.layout, s.category])


def cmd_eval(cfg: dict, out: Path) -> None:
    pred_path = _need(cfg["predictions"], "predictions")
    tags = {}
    if cfg["manifest"]:
        tags = {s.image: s.category for s in dg.read_manifest(_need(cfg["manifest"], "manifest"))}
    with open(pred_path, newline="") as fh:
        records = [ev.EvalRecord(r["gt"], r["pred"], r.get("layout", "single"),
                                 tags.get(r["image"], r.get("category", "standard")))
                   for r in csv.DictReader(fh)]
    report = ev.write_report(records, out / "report.csv")
    (out / "report.json").write_text(json.dumps(report, indent=2))


def cmd_visualize(cfg: dict, out: Path) -> None:
    _, model = _load_ckpt(cfg["checkpoint"])
    x = _chw(load_image(_need(cfg["image"], "image")))[None]
    with torch.no_grad():
        strip = model.rectify(x)
        pages = model.recognizer.pages(strip)[0]
    select = [int(s) for s in cfg["pages"].split(",")] if cfg["pages"] else None
    ev.export_pages(pages, out, DEFAULT_CHARSET, select)
    save_image(strip[0].permute(1, 2, 0).numpy(), out / "strip.png")
    logits = pages.mean(dim=1)
    (out / "decoded.txt").write_text(greedy_decode(logits, DEFAULT_CHARSET) + "\n", encoding="utf-8")


def cmd_bench(cfg: dict, out: Path) -> None:
    _, model = _load_ckpt(cfg["checkpoint"])
    path = _need(cfg["manifest"], "manifest")
    pairs = read_manifest_images(path)[: cfg["limit"]]
    data = _plate_set(pairs)
    stats = ev.bench(model, data.crops, cfg["repetitions"], cfg["warmup"], cfg["batch_size"])
    (out / "bench.json").write_text(json.dumps(stats, indent=2))


COMMANDS = {
    "gen-data": cmd_gen_data, "perturb": cmd_perturb, "train": cmd_train, "rectify": cmd_rectify,
    "recognize": cmd_recognize, "eval": cmd_eval, "visualize": cmd_visualize, "bench": cmd_bench,
}

ERRORS = (tr.ConfigError, MissingInput, CheckpointIncompatible, dg.MalformedRecord, tr.DivergenceGuard,
          MissingGlyphFont)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = resolve(args.command, args)
        write_run_config(out, args.command, cfg)
        COMMANDS[args.command](cfg, out)
    except ERRORS as exc:
        record = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        (out / "error.json").write_text(json.dumps(record, indent=2, ensure_ascii=False))
        print(f"platerec {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
