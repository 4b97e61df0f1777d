"""``deepnormals`` command line: scenegen, codebook, train, predict, eval, ablate."""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import pipeline as pl
from .coding import LayoutCodebook, NormalCodebook
from .config import ConfigError, PipelineConfig, parse_channels
from .fusion import fuse_predict
from .metrics import evaluate, format_table, header
from .networks.estimators import (BaselineRegressionNetwork, BottomUpNetwork, FusionNetwork,
                                  TopDownNetwork)
from .normalmap import NormalMap
from .scenegen import io as sio
from .scenegen.render import SceneError

NETS = ("topdown", "bottomup", "fusion", "baseline")
SPLITS = ("train", "fusion", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="pipeline config file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--tiny", action="store_true", help="tiny networks and small preset sizes")
    common.add_argument("--work-dir", help="root for data, codebooks and weights")
    common.add_argument("--decode", choices=("triangle", "soft"))
    common.add_argument("--channels", help="fusion channels, e.g. +layout,+edge,+vp or none")

    p = _Parser(prog="deepnormals", description="Surface normal estimation pipeline on synthetic rooms.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scenegen", parents=[common], help="render a synthetic dataset")
    s.add_argument("--count", type=int, help="number of scenes (default: config size of the split)")
    s.add_argument("--split", default="train", choices=SPLITS)
    s.add_argument("--out", help="output directory (default: <data_dir>/<split>)")

    sub.add_parser("codebook", parents=[common], help="build normal and layout codebooks")

    t = sub.add_parser("train", parents=[common], help="train one network")
    t.add_argument("--net", required=True, choices=NETS)

    pr = sub.add_parser("predict", parents=[common], help="predict normals for images")
    pr.add_argument("--image", help="input PPM image")
    pr.add_argument("--vps", help="meta file or text file with 9 floats (Manhattan frame rows)")
    pr.add_argument("--data", help="dataset directory to predict instead of one image")
    pr.add_argument("--out", required=True, help="output .nrm file, or directory with --data")
    pr.add_argument("--vis", help="also write a colour-coded PPM visualization (single image)")
    pr.add_argument("--net", default="fusion", choices=("fusion", "topdown", "bottomup", "baseline"))

    e = sub.add_parser("eval", parents=[common], help="evaluate predicted normal maps")
    e.add_argument("--pred", required=True, help="directory of NNNN.nrm predictions")
    e.add_argument("--gt", required=True, help="dataset directory with ground truth")
    e.add_argument("--name", default="Method")
    e.add_argument("--kv", action="store_true", help="machine-readable key=value output")

    a = sub.add_parser("ablate", parents=[common], help="train and compare all variants")
    a.add_argument("--out", help="directory for the report and weights (default: <work_dir>/ablate)")
    return p


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.defaults(args.tiny)
    if args.config:
        if not os.path.exists(args.config):
            raise UsageError(f"config file {args.config} does not exist")
        cfg = PipelineConfig.load(args.config, base=cfg)
        if args.tiny:
            cfg = dataclasses.replace(cfg, study=dataclasses.replace(cfg.study, tiny=True))
    study = cfg.study
    if args.seed is not None:
        study = dataclasses.replace(study, seed=args.seed)
    cfg = dataclasses.replace(cfg, study=study)
    if args.work_dir:
        cfg = dataclasses.replace(cfg, work_dir=args.work_dir)
    if args.decode:
        cfg = dataclasses.replace(cfg, decode=args.decode)
    if args.channels is not None:
        cfg = dataclasses.replace(cfg, channels=parse_channels(args.channels))
    return cfg


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise sio.DataError(f"missing {what}: {path}")
    return path


def load_books(cfg: PipelineConfig) -> pl.Codebooks:
    p = cfg.codebook_paths()
    return pl.Codebooks(NormalCodebook.load(_require(p["coarse"], "coarse normal codebook")),
                        NormalCodebook.load(_require(p["local"], "local normal codebook")),
                        LayoutCodebook.load(_require(p["layout"], "layout codebook")))


def load_net(cfg: PipelineConfig, net: str, books: pl.Codebooks | None = None):
    path = _require(cfg.weight_path(net), f"{net} weights (run `deepnormals train --net {net}`)")
    s = cfg.study
    if net == "topdown":
        model = TopDownNetwork(n_layouts=len(books.layout.medoids_), coarse_classes=books.coarse.n_classes,
                               tiny=s.tiny)
    elif net == "bottomup":
        model = BottomUpNetwork(local_classes=books.local.n_classes, tiny=s.tiny)
    elif net == "fusion":
        model = FusionNetwork(local_classes=books.local.n_classes, tiny=s.tiny)
    else:
        model = BaselineRegressionNetwork(tiny=s.tiny)
    return model.load(path)


def write_manifest(cfg: PipelineConfig, net: str, model, extra=None) -> None:
    lines = [f"kind = {net}", f"tiny = {str(cfg.study.tiny).lower()}", f"seed = {cfg.study.seed}",
             f"weights = {os.path.basename(cfg.weight_path(net))}"]
    if net != "baseline":
        lines += [f"codebook.{k} = {v}" for k, v in sorted(cfg.codebook_paths().items())]
    lines += [f"{k} = {v}" for k, v in (extra or {}).items()]
    lines += [f"initial_loss = {model.initial_loss_!r}"]
    with open(cfg.weight_path(net)[:-4] + ".manifest", "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(cfg.weight_path(net)[:-4] + ".loss", "w") as f:
        f.write("".join(f"{i} {v!r}\n" for i, v in enumerate(model.history_)))


# --- commands ----------------------------------------------------------------

def cmd_scenegen(cfg: PipelineConfig, args, out=None) -> int:
    out = out or sys.stdout
    s = cfg.study
    count = args.count if args.count is not None else {"train": s.n_train, "fusion": s.n_fusion,
                                                           "test": s.n_test}[args.split]
    if count < 0:
        raise UsageError("--count must be >= 0")
    directory = args.out or cfg.split_dir(args.split)
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise sio.DataError(f"cannot create {directory}: {e}") from None
    if not os.access(directory, os.W_OK):
        raise sio.DataError(f"directory {directory} is not writable")
    samples = pl.generate_split(s.scene_config(), s.seed, args.split, count)
    sio.write_dataset(directory, samples, split=args.split, seed=s.seed, height=s.height, width=s.width)
    print(f"wrote {count} scenes to {directory}", file=out)
    return 0


def cmd_codebook(cfg: PipelineConfig, args, out=None) -> int:
    out = out or sys.stdout
    s = cfg.study
    train = sio.read_dataset(_require(cfg.split_dir("train"), "training split"))
    if not train:
        raise sio.DataError("training split is empty")
    books = pl.build_codebooks(train, s.scene_config(), s.k_t, s.k_b, s.k_l, s.seed, s.layout_corpus)
    os.makedirs(cfg.path("codebook_dir"), exist_ok=True)
    paths = cfg.codebook_paths()
    books.coarse.save(paths["coarse"])
    books.local.save(paths["local"])
    books.layout.save(paths["layout"])
    for split in ("train", "test"):
        d = cfg.split_dir(split)
        if not os.path.exists(os.path.join(d, sio.MANIFEST)):
            continue
        ids, _ = sio.read_manifest(d)
        samples = train if split == "train" else [sio.read_sample(d, i) for i in ids]
        for i, k in zip(ids, pl.encode_layouts(samples, books.layout)):
            sio.set_layout_class(d, i, int(k))
    print(f"codebooks written to {cfg.path('codebook_dir')}", file=out)
    return 0


def cmd_train(cfg: PipelineConfig, args, out=None) -> int:
    out = out or sys.stdout
    s = cfg.study
    net = args.net
    train = sio.read_dataset(_require(cfg.split_dir("train"), "training split"))
    if not train:
        raise sio.DataError("training split is empty")
    os.makedirs(cfg.path("weights_dir"), exist_ok=True)
    extra = {}
    if net == "baseline":
        model = pl.train_baseline(train, s)
    else:
        books = load_books(cfg)
        if net == "topdown":
            model = pl.train_topdown(train, books, s)
        elif net == "bottomup":
            model = pl.train_bottomup(train, books, s)
        else:
            td, bu = load_net(cfg, "topdown", books), load_net(cfg, "bottomup", books)
            if s.n_fusion > 0:
                train = sio.read_dataset(_require(cfg.split_dir("fusion"), "fusion split (run `deepnormals "
                                                  "scenegen --split fusion`)"))
                if not train:
                    raise sio.DataError("fusion split is empty")
            preds = [pl.input_predictions(x.image, td, bu) for x in train]
            stacks = [pl.feature_stack(x.image, x.vps, p, books, cfg.channels, s.tau_deg)
                      for x, p in zip(train, preds)]
            model = pl.train_fusion(train, books, s, stacks)
            extra["channels"] = ",".join(cfg.channels) or "none"
    model.save(cfg.weight_path(net))
    write_manifest(cfg, net, model, extra)
    print(f"{net}: loss {model.initial_loss_:.4f} -> {model.history_[-1] if model.history_ else model.initial_loss_:.4f}"
          f" over {len(model.history_)} epochs", file=out)
    return 0


def read_vps(path: str) -> np.ndarray:
    with open(_require(path, "vanishing directions file")) as f:
        text = f.read()
    if text.startswith("layout_class"):
        return sio.parse_meta(text)["vps"]
    vals = text.split()
    if len(vals) != 9:
        raise sio.DataError(f"{path}: expected 9 floats, found {len(vals)}")
    return np.array(vals, float).reshape(3, 3)


def predict_one(cfg: PipelineConfig, image, vps, net: str, models) -> NormalMap:
    books = models["books"]
    if net == "baseline":
        return pl.baseline_map(models["baseline"], image)
    preds = pl.input_predictions(image, models["topdown"], models["bottomup"])
    if net == "topdown":
        return pl.topdown_map(preds, books, *image.shape[:2], cfg.decode)
    if net == "bottomup":
        return pl.bottomup_map(preds, books, cfg.decode)
    channels = cfg.channels
    if vps is None and "vp" in channels:
        print("warning: no vanishing directions given; VP channels are zero-filled", file=sys.stderr)
        channels = tuple(c for c in channels if c != "vp")
        vps = np.eye(3)
    stack = pl.feature_stack(image, vps, preds, books, channels, cfg.study.tau_deg)
    return fuse_predict(models["fusion"], stack, books.local, cfg.decode)


def load_models(cfg: PipelineConfig, net: str) -> dict:
    if net == "baseline":
        return {"books": None, "baseline": load_net(cfg, "baseline")}
    books = load_books(cfg)
    models = {"books": books, "topdown": load_net(cfg, "topdown", books),
              "bottomup": load_net(cfg, "bottomup", books)}
    if net == "fusion":
        models["fusion"] = load_net(cfg, "fusion", books)
    return models


def cmd_predict(cfg: PipelineConfig, args, out=None) -> int:
    out = out or sys.stdout
    if bool(args.image) == bool(args.data):
        raise UsageError("give exactly one of --image or --data")
    models = load_models(cfg, args.net)
    if args.image:
        image = sio.read_ppm(_require(args.image, "input image"))
        vps = read_vps(args.vps) if args.vps else None
        nmap = predict_one(cfg, image, vps, args.net, models)
        nmap.save(args.out)
        if args.vis:
            sio.write_ppm(args.vis, nmap.visualize())
        print(f"wrote {args.out}", file=out)
        return 0
    ids, _ = sio.read_manifest(args.data)
    os.makedirs(args.out, exist_ok=True)
    for i in ids:
        sample = sio.read_sample(args.data, i)
        nmap = predict_one(cfg, sample.image, sample.vps, args.net, models)
        nmap.save(os.path.join(args.out, f"{i:04d}.nrm"))
    sio.write_manifest(args.out, ids, net=args.net)
    print(f"wrote {len(ids)} predictions to {args.out}", file=out)
    return 0


def _nrm_ids(directory: str) -> set[int]:
    if not os.path.isdir(directory):
        raise sio.DataError(f"{directory} is not a directory")
    return {int(f[:-4]) for f in os.listdir(directory) if f.endswith(".nrm") and f[:-4].isdigit()}


def cmd_eval(cfg: PipelineConfig, args, out=None) -> int:
    out = out or sys.stdout
    pred_ids, gt_ids = _nrm_ids(args.pred), _nrm_ids(args.gt)
    missing = sorted(gt_ids ^ pred_ids)
    if missing:
        raise sio.DataError("unpaired ids: " + ", ".join(f"{i:04d}" for i in missing))
    if not gt_ids:
        raise sio.DataError("no normal maps to evaluate")
    ids = sorted(gt_ids)
    preds = [NormalMap.load(os.path.join(args.pred, f"{i:04d}.nrm")) for i in ids]
    gts = [NormalMap.load(os.path.join(args.gt, f"{i:04d}.nrm")) for i in ids]
    summary = evaluate(preds, gts)
    if args.kv:
        print(summary.to_kv(), file=out)
    else:
        print(header(), file=out)
        print(summary.row(args.name), file=out)
    return 0


def cmd_ablate(cfg: PipelineConfig, args, out=None) -> int:
    out = out or sys.stdout
    out_dir = args.out or os.path.join(cfg.work_dir, "ablate")
    os.makedirs(out_dir, exist_ok=True)
    study = pl.Study(cfg.study)
    rows = study.run()
    study.topdown.save(os.path.join(out_dir, "topdown.nfw"))
    study.bottomup.save(os.path.join(out_dir, "bottomup.nfw"))
    for name, model in study.fusion.items():
        model.save(os.path.join(out_dir, f"fusion_{name.lstrip('+').lower()}.nfw"))
    report = format_table(rows)
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(report)
    with open(os.path.join(out_dir, "report.kv"), "w") as f:
        f.write("\n".join(s.to_kv(name) for name, s in rows) + "\n")
    cfg.save(os.path.join(out_dir, "config.ini"))
    out.write(report)
    return 0


COMMANDS = {"scenegen": cmd_scenegen, "codebook": cmd_codebook, "train": cmd_train,
            "predict": cmd_predict, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as e:
        print(f"deepnormals: error: {e}", file=sys.stderr)
        return 1
    except (sio.DataError, SceneError, FileNotFoundError, ValueError, OSError) as e:
        print(f"deepnormals: data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
