"""Batch enhancement driver.

Usage::

    guided-uie --input raw/ --output out/ --predictor gaussian:0,1 --steps 50 --scale 2000
    guided-uie --config run.json --preset guidance-variants
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import PRESETS, RunConfig, ablation_preset
from .degradation import estimate_params
from .fileio import load_image, save_image
from .guidance import EnhanceRequest, enhance
from .image_core import resize_bilinear
from .pseudo_label import FileLabeler, get_labeler

log = logging.getLogger("guided_uie")

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")


def list_inputs(path) -> list[Path]:
    p = Path(path)
    if p.is_file():
        return [p]
    if not p.is_dir():
        raise FileNotFoundError(f"input {p} does not exist")
    return sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)


def _prepare(img, cfg: RunConfig):
    if cfg.resize and img.shape[:2] != (cfg.resize, cfg.resize):
        img = np.clip(resize_bilinear(img, cfg.resize, cfg.resize), 0.0, 1.0)
    return img


def _provenance(cfg: RunConfig) -> list[str]:
    notes = []
    if cfg.lambda2 > 0:
        notes.append("perceptual term uses a fixed seeded random conv extractor, not VGG")
    if (cfg.lambda3 > 0 or cfg.lambda4 > 0) and not cfg.variant.endswith("underwater"):
        notes.append("quality slots use the colorfulness/contrast proxy, not learned quality assessors")
    return notes


def process_image(path: Path, cfg: RunConfig, sched, predictor, labeler, out_dir: Path) -> metrics.MetricRow:
    stem = path.stem
    y = _prepare(load_image(path), cfg)
    gcfg = cfg.guidance()
    req = EnhanceRequest(y=y)
    if gcfg.variant.underwater:
        req.degradation = estimate_params(y)
        if cfg.export_params:
            save_image(np.clip(req.degradation.A, 0, 1), out_dir / f"A_{stem}.png")
            save_image(req.degradation.T, out_dir / f"T_{stem}.png")
    else:
        if isinstance(labeler, FileLabeler):
            req.x_hat = labeler.for_image(path.name, y.shape)
        else:
            req.x_hat = labeler(y)
    x0, trace = enhance(req, gcfg, predictor, sched)
    save_image(x0, out_dir / f"{stem}.png")
    trace.write_csv(out_dir / f"trace_{stem}.csv")
    snaps = trace.snapshots()
    if snaps:
        snap_dir = out_dir / "snapshots" / stem
        snap_dir.mkdir(parents=True, exist_ok=True)
        for step, t, img in snaps:
            save_image(img, snap_dir / f"step{step:04d}_t{t:04d}.png")
    if cfg.figures:
        from .plotting import plot_trace

        plot_trace(trace, out_dir / f"trace_{stem}.png", title=stem)

    # score the 8-bit result that was written, not the float sample
    out = np.round(x0 * 255.0) / 255.0
    row = metrics.MetricRow(
        image=path.name,
        uciqe=metrics.uciqe(out),
        uiqm=metrics.uiqm(out),
        input_uciqe=metrics.uciqe(y),
        input_uiqm=metrics.uiqm(y),
    )
    if cfg.reference:
        ref_path = Path(cfg.reference) / path.name
        if ref_path.exists():
            ref = _prepare(load_image(ref_path), cfg)
            row.psnr = metrics.psnr(out, ref)
            row.ssim = metrics.ssim(out, ref)
    return row


def run(cfg: RunConfig) -> int:
    """Enhance every input image; exit status 0 iff all of them succeed."""
    for p in (cfg.reference, cfg.pseudo_label_dir):
        if p and not Path(p).is_dir():
            log.error("directory %s does not exist", p)
            return 2
    try:
        inputs = list_inputs(cfg.input)
        sched = cfg.schedule()
        predictor = cfg.make_predictor(sched)
        cfg.guidance().validate(sched)
        labeler = FileLabeler(cfg.pseudo_label_dir) if cfg.pseudo_label_dir else get_labeler(cfg.labeler)
    except (ValueError, OSError) as exc:
        log.error("invalid configuration: %s", exc)
        return 2
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.to_json())
    for note in _provenance(cfg):
        print(f"note: {note}", file=sys.stderr)

    def job(path):
        try:
            return process_image(path, cfg, sched, predictor, labeler, out_dir)
        except Exception as exc:  # one bad image must not stop the batch
            log.error("%s failed: %s", path.name, exc)
            return metrics.MetricRow(image=path.name, uciqe=float("nan"), uiqm=float("nan"),
                                     status=f"failed: {exc}".replace(",", ";"))

    workers = cfg.workers or os.cpu_count() or 1
    if workers > 1 and len(inputs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, inputs))
    else:
        rows = [job(p) for p in inputs]

    report = metrics.MetricReport(rows=rows, with_reference=bool(cfg.reference))
    report.write_csv(out_dir / "metrics.csv")
    if cfg.figures:
        from .plotting import plot_metrics

        plot_metrics(report, out_dir / "metrics.png")
    failed = sum(r.status != "ok" for r in rows)
    log.info("%d/%d images enhanced", len(rows) - failed, len(rows))
    return 1 if failed else 0


def run_preset(name: str, base: RunConfig) -> int:
    configs = ablation_preset(name, base)
    root = Path(base.output)
    status = 0
    labels, aggs = [], []
    for cfg in configs:
        cfg = replace(cfg, output=str(root / cfg.label))
        log.info("ablation %s: %s", name, cfg.label)
        status = max(status, run(cfg))
        agg = {}
        mpath = Path(cfg.output) / "metrics.csv"
        if mpath.exists():
            with open(mpath) as fh:
                for row in csv.DictReader(fh):
                    if row["image"] == "mean":
                        agg = {k: float(v) for k, v in row.items() if k not in ("image", "status") and v not in ("", "inf")}
        labels.append(cfg.label)
        aggs.append(agg)
    keys = ["psnr", "ssim", "uciqe", "uiqm"]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config"] + keys)
        for label, agg in zip(labels, aggs):
            w.writerow([label] + [f"{agg[k]:.6f}" if k in agg else "" for k in keys])
    if base.figures:
        from .plotting import plot_ablation

        plot_ablation(labels, aggs, root / "ablation.png", title=name)
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="guided-uie", description="Loss-guided diffusion enhancement of underwater images.")
    p.add_argument("--config", help="JSON run configuration; flags override its fields")
    p.add_argument("--input", help="image file or directory of PNG/PPM images")
    p.add_argument("--output", help="output directory")
    p.add_argument("--reference", help="directory of same-named reference images (enables PSNR/SSIM)")
    p.add_argument("--pseudo-label-dir", help="directory of same-named precomputed pseudo-labels")
    p.add_argument("--labeler", choices=["identity", "grayworld", "dcp"])
    p.add_argument("--variant", choices=["x0-natural", "xt-natural", "x0-underwater", "xt-underwater"])
    p.add_argument("--sampler", choices=["ddpm", "ddim"])
    p.add_argument("--steps", type=int)
    p.add_argument("--scale", type=float, help="gradient scale s (default 12000 with --reference, else 4000)")
    for i in range(1, 5):
        p.add_argument(f"--lambda{i}", type=float)
    p.add_argument("--tlr", type=float, help="transmission learning rate (underwater variants)")
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=int, dest="T", help="diffusion length of the noise schedule")
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    p.add_argument("--predictor", help="gaussian:MEAN,VAR or file:PATH")
    p.add_argument("--resize", type=int, help="square working size; 0 keeps the input size")
    p.add_argument("--snapshot-stride", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--grad-at-mean", action="store_const", const=True)
    p.add_argument("--shift-with-variance", action="store_const", const=True)
    p.add_argument("--export-params", action="store_const", const=True, help="write estimated A and T maps")
    p.add_argument("--no-figures", dest="figures", action="store_const", const=False)
    p.add_argument("--preset", choices=PRESETS, help="run an ablation matrix into OUTPUT/<label>/")
    p.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_json(Path(args.config).read_text())
    skip = {"config", "preset", "dump_config", "verbose"}
    overrides = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.dump_config:
        print(cfg.to_json())
        return 0
    if not cfg.input:
        print("error: --input is required", file=sys.stderr)
        return 2
    if args.preset:
        return run_preset(args.preset, cfg)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
