"""Command-line interface: ``mesa <restore|weights|eval-text|eval-image|eval|damage|ablate>``.

Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import math
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from mesa import __version__
from mesa.backbone import LAYERS, BackboneError, load_backbone
from mesa.damage import DamageSpec, list_images, make_pair_manifest, read_pair_manifest
from mesa.image_core import ImageError, load_image, load_mask, save_image, to_uint8
from mesa.image_metrics import score_images
from mesa.loss import ExemplarPool
from mesa.plotting import plot_layer_weights, plot_loss_trace, plot_metric_bars
from mesa.restore import RestorationConfig, RestorationError, restore
from mesa.text_metrics import DEFAULT_S, score_text
from mesa.weights import (
    SCHEMES,
    WeightingError,
    boxes_from_tesseract_tsv,
    explicit_weighting,
    extract_letter_widths,
    load_weights_file,
    read_box_table,
    weighting_for,
    weights_report,
    uniform_weighting,
)

logger = logging.getLogger("mesa")

AGG_FLAGS = {"min": "min", "avg": "average", "average": "average"}
METRICS = ("psnr", "ssim", "ld", "trs", "lls")


class UsageError(Exception):
    """Invalid flag value; reported with exit code 2."""

    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


# -- helpers ------------------------------------------------------------------


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else None)
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_layers(text: str | None, flag: str = "--layers") -> tuple[str, ...]:
    if not text:
        return LAYERS
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    unknown = [n for n in names if n not in LAYERS]
    if not names or unknown:
        raise UsageError(flag, f"unknown layer(s) {unknown or text!r}; choose from {','.join(LAYERS)}")
    return tuple(sorted(set(names), key=LAYERS.index))


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(flag, f"expected comma-separated integers, got {text!r}") from None


def _require_file(path: str | None, flag: str) -> Path:
    if not path:
        raise UsageError(flag, "is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(flag, f"no such file: {p}")
    return p


def _load_exemplars(directory: str, flag: str = "--exemplars") -> tuple[list[np.ndarray], list[Path]]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(flag, f"not a directory: {d}")
    paths = list_images(d)
    if not paths:
        raise UsageError(flag, f"no PNG/JPEG exemplars in {d}")
    try:
        return [load_image(p) for p in paths], paths
    except ImageError as exc:
        raise UsageError(flag, str(exc)) from exc


def _read_boxes(paths: list[str], tesseract: bool) -> list[dict]:
    rows: list[dict] = []
    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise UsageError("--boxes", f"no such file: {path}")
        try:
            rows.extend(boxes_from_tesseract_tsv(path) if tesseract else read_box_table(path))
        except (OSError, UnicodeDecodeError, WeightingError, KeyError, csv.Error) as exc:
            raise UsageError("--boxes", f"cannot read box table {path}: {exc}") from exc
    return rows


def _weighting_from_args(args, layers):
    """Resolve layer weights: --weights-file, else fitted from --boxes, else uniform."""
    if getattr(args, "weights_file", None):
        path = _require_file(args.weights_file, "--weights-file")
        try:
            w = load_weights_file(path)
        except (WeightingError, ValueError, KeyError) as exc:
            raise UsageError("--weights-file", str(exc)) from exc
        # without --layers the file decides which layers contribute
        if getattr(args, "layers", None) and tuple(w.layers) != tuple(layers):
            if not set(layers) <= set(w.layers):
                raise UsageError("--weights-file", f"weights cover {list(w.layers)}, but --layers asks for {list(layers)}")
            sub = {name: w.as_dict()[name] for name in layers}
            total = sum(sub.values())
            if total <= 0:
                raise UsageError("--weights-file", "selected layers carry zero weight")
            w = explicit_weighting({k: v / total for k, v in sub.items()})
        return w, None, None, {"source": "weights-file", "path": str(path)}
    if getattr(args, "boxes", None):
        rows = _read_boxes(args.boxes, getattr(args, "tesseract", False))
        try:
            sample = extract_letter_widths(rows)
        except WeightingError as exc:
            raise UsageError("--boxes", str(exc)) from exc
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            weighting, dist = weighting_for(sample, layers, args.weights_scheme)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        prov = {"source": "boxes", "paths": list(args.boxes), "scheme": args.weights_scheme, "sample_size": len(sample)}
        return weighting, dist, sample, prov
    print("warning: no --boxes or --weights-file given; using uniform layer weights", file=sys.stderr)
    return uniform_weighting(layers), None, None, {"source": "uniform"}


def _backbone(args):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            bb = load_backbone(getattr(args, "backbone_weights", None))
        except BackboneError as exc:
            raise UsageError("--backbone-weights", str(exc)) from exc
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return bb


# -- restore ------------------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    weighting: dict
    weighting_provenance: dict
    backbone: dict
    inputs: dict
    exemplars: list[dict]
    outputs: dict
    result: dict
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mesa_version": __version__,
            "config": self.config,
            "weighting": self.weighting,
            "weighting_provenance": self.weighting_provenance,
            "backbone": self.backbone,
            "inputs": self.inputs,
            "exemplars": self.exemplars,
            "outputs": self.outputs,
            "result": self.result,
            "metrics": self.metrics,
        }


def _restore_inputs(args):
    input_path = _require_file(args.input, "--input")
    mask_path = _require_file(args.mask, "--mask")
    try:
        damaged = load_image(input_path)
    except ImageError as exc:
        raise UsageError("--input", str(exc)) from exc
    try:
        mask = load_mask(mask_path, reference_shape=damaged.shape)
    except ImageError as exc:
        raise UsageError("--mask", str(exc)) from exc
    exemplars, ex_paths = _load_exemplars(args.exemplars)
    if args.max_iters < 1:
        raise UsageError("--max-iters", "must be at least 1")
    if args.log_every < 1:
        raise UsageError("--log-every", "must be at least 1")
    return input_path, mask_path, damaged, mask, exemplars, ex_paths


def cmd_restore(args) -> int:
    input_path, mask_path, damaged, mask, exemplars, ex_paths = _restore_inputs(args)
    layers = _parse_layers(args.layers)
    weighting, dist, sample, provenance = _weighting_from_args(args, layers)
    layers = tuple(weighting.layers)
    cfg = RestorationConfig(
        max_iterations=args.max_iters,
        init=args.init,
        aggregation=AGG_FLAGS[args.agg],
        layers=layers,
        mask_every_step=not args.mask_init_only,
        noise_seed=args.seed,
        convergence_tol=args.convergence_tol,
        log_every=args.log_every,
    )
    reference = None
    if args.reference:
        ref_path = _require_file(args.reference, "--reference")
        reference = load_image(ref_path)
        if reference.shape != damaged.shape:
            raise UsageError("--reference", f"shape {reference.shape} differs from --input {damaged.shape}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    progress_dir = out / "progress"
    if args.save_progress:
        progress_dir.mkdir(exist_ok=True)

    backbone = _backbone(args)
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    pool = ExemplarPool.build(backbone, exemplars, layers, [p.name for p in ex_paths])
    timings["exemplar_grams_s"] = time.perf_counter() - t0

    def progress(it, loss, report, current):
        print(f"iter {it:5d}  loss {loss:.6e}  argmin {json.dumps(report.argmin, sort_keys=True)}", flush=True)
        if args.save_progress:
            save_image(progress_dir / f"iter_{it:05d}.png", current())

    t1 = time.perf_counter()
    result = restore(damaged, mask, pool, weighting, cfg, backbone=backbone, callback=progress)
    timings["restore_s"] = time.perf_counter() - t1

    save_image(out / "restored.png", result.output)
    with open(out / "loss_trace.jsonl", "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"iteration": 0, "loss": result.initial_loss}) + "\n")
        for i, (loss, am) in enumerate(zip(result.loss_trace, result.argmin_trace), 1):
            fh.write(json.dumps({"iteration": i, "loss": loss, "argmin": am}, sort_keys=True) + "\n")
    if result.final_report is not None:
        _dump_json(out / "loss_report.json", result.final_report.to_dict())
    weights_report(weighting, dist, out / "weights.json", None, sample)
    plot_loss_trace(out / "loss_trace.png", result.loss_trace, result.initial_loss)

    metrics = {}
    if reference is not None:
        score = score_images(reference, result.output)
        metrics = score.to_dict()
    manifest = RunManifest(
        config=cfg.to_dict(),
        weighting=weighting.to_dict(),
        weighting_provenance=provenance,
        backbone={"source": backbone.source, "checksum": backbone.checksum()},
        inputs={
            "input": str(input_path),
            "input_sha256": _sha256(input_path),
            "mask": str(mask_path),
            "mask_sha256": _sha256(mask_path),
            "masked_pixels": int(mask.sum()),
        },
        exemplars=[{"path": str(p), "sha256": _sha256(p)} for p in ex_paths],
        outputs={
            "restored": "restored.png",
            "loss_trace": "loss_trace.jsonl",
            "loss_report": "loss_report.json",
            "weights": "weights.json",
            "loss_plot": "loss_trace.png",
            "timings": "timings.json",
        },
        result={
            "initial_loss": result.initial_loss,
            "final_loss": result.final_loss,
            "iterations_run": result.iterations_run,
            "evaluations": result.evaluations,
            "stop_reason": result.stop_reason,
        },
        metrics=metrics,
    )
    _dump_json(out / "manifest.json", manifest.to_dict())
    _dump_json(out / "timings.json", {k: round(v, 3) for k, v in timings.items()})
    print(
        f"restored {int(mask.sum())} px in {result.iterations_run} iterations ({result.stop_reason}); "
        f"loss {result.initial_loss:.6e} -> {result.final_loss:.6e}; wrote {out}"
    )
    return 0


# -- weights ------------------------------------------------------------------


def cmd_weights(args) -> int:
    layers = _parse_layers(args.layers)
    rows = _read_boxes(args.boxes, args.tesseract)
    try:
        sample = extract_letter_widths(rows)
    except WeightingError as exc:
        raise UsageError("--boxes", str(exc)) from exc
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        weighting, dist = weighting_for(sample, layers, args.weights_scheme)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = weights_report(weighting, dist, out / "weights.json", out / "width_distribution.png", sample)
    plot_layer_weights(out / "layer_weights.png", weighting)
    fam = "none (uniform fallback)" if dist is None else f"{dist.family} mu={dist.mu:.3f} sigma={dist.sigma:.3f}"
    print(f"{len(sample)} letter widths; fit: {fam}")
    for name, w in weighting.as_dict().items():
        print(f"  {name:9s} {w:.6f}")
    return 0


# -- evaluation ---------------------------------------------------------------


def _read_text(path: str, flag: str) -> str:
    p = _require_file(path, flag)
    return p.read_text(encoding="utf-8").rstrip("\n")


def cmd_eval_text(args) -> int:
    if args.s < 1:
        raise UsageError("--s", "must be a positive integer")
    o = _read_text(args.original, "--original")
    r = _read_text(args.recovered, "--recovered")
    print(json.dumps(score_text(o, r, args.s, args.normalize).to_dict(), sort_keys=True))
    return 0


def cmd_eval_image(args) -> int:
    ref = _require_file(args.ref, "--ref")
    test = _require_file(args.test, "--test")
    try:
        a, b = load_image(ref), load_image(test)
    except ImageError as exc:
        raise UsageError("--ref/--test", str(exc)) from exc
    if a.shape != b.shape:
        raise UsageError("--test", f"shape {b.shape} differs from --ref {a.shape}")
    print(json.dumps(score_images(a, b, args.perceptual).to_dict(), sort_keys=True))
    return 0


def _eval_pairs(args) -> list[dict]:
    if args.manifest:
        path = _require_file(args.manifest, "--manifest")
        try:
            entries = read_pair_manifest(path)
        except (KeyError, ValueError) as exc:
            raise UsageError("--manifest", f"malformed manifest: {exc}") from exc
        pairs = []
        for e in entries:
            test = e.get("restored") or e.get("damaged")
            if not e.get("clean") or not test:
                raise UsageError("--manifest", f"entry {e.get('id')} lacks a clean/test image")
            pairs.append(
                {"id": e.get("id", Path(test).stem), "ref": e["clean"], "test": test,
                 "ref_text": e.get("clean_text"), "test_text": e.get("restored_text")}
            )
        return pairs
    if not args.ref or not args.test:
        raise UsageError("--ref/--test", "give --manifest or both --ref and --test lists")
    if len(args.ref) != len(args.test):
        raise UsageError("--test", f"{len(args.test)} test images for {len(args.ref)} references")
    ref_text = args.ref_text or []
    test_text = args.test_text or []
    if len(ref_text) != len(test_text) or (ref_text and len(ref_text) != len(args.ref)):
        raise UsageError("--ref-text/--test-text", "text lists must match the image lists in length")
    pairs = []
    for i, (r, t) in enumerate(zip(args.ref, args.test)):
        pairs.append(
            {"id": Path(t).stem, "ref": Path(r), "test": Path(t),
             "ref_text": Path(ref_text[i]) if ref_text else None,
             "test_text": Path(test_text[i]) if test_text else None}
        )
    return pairs


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def cmd_eval(args) -> int:
    if args.s < 1:
        raise UsageError("--s", "must be a positive integer")
    pairs = _eval_pairs(args)
    rows = []
    for p in pairs:
        for key in ("ref", "test"):
            if not Path(p[key]).is_file():
                raise UsageError("--manifest" if args.manifest else f"--{key}", f"no such file: {p[key]}")
        a, b = load_image(p["ref"]), load_image(p["test"])
        if a.shape != b.shape:
            raise UsageError("--test", f"pair {p['id']}: shapes {a.shape} and {b.shape} differ")
        img = score_images(a, b)
        row = {"id": p["id"], "psnr": img.psnr, "ssim": img.ssim, "ld": None, "trs": None, "lls": None}
        if p["ref_text"] and p["test_text"]:
            ts = score_text(
                Path(p["ref_text"]).read_text(encoding="utf-8").rstrip("\n"),
                Path(p["test_text"]).read_text(encoding="utf-8").rstrip("\n"),
                args.s,
                args.normalize,
            )
            row.update(ld=ts.ld, trs=ts.trs, lls=ts.lls)
        rows.append(row)

    average = {"id": "average"}
    for m in METRICS:
        vals = [r[m] for r in rows if r[m] is not None]
        average[m] = float(np.mean(vals)) if vals else None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(("id",) + METRICS)
        for r in rows + [average]:
            writer.writerow([r["id"]] + [_fmt(r[m]) for m in METRICS])
    doc = {
        "s_cap": args.s,
        "pairs": [{k: _jsonable(v) for k, v in r.items()} for r in rows],
        "average": {k: _jsonable(v) for k, v in average.items()},
    }
    _dump_json(out / "metrics.json", doc)
    labels = [r["id"] for r in rows]
    for m in METRICS:
        vals = [r[m] for r in rows]
        if all(v is not None for v in vals):
            plot_metric_bars(out / f"{m}.png", m, labels, [float(v) for v in vals], average[m])
    print(f"evaluated {len(rows)} pairs; wrote {out / 'metrics.csv'}")
    return 0


# -- damage -------------------------------------------------------------------


def cmd_damage(args) -> int:
    in_dir = Path(getattr(args, "in"))
    if not in_dir.is_dir():
        raise UsageError("--in", f"not a directory: {in_dir}")
    region = None
    if args.region:
        region = tuple(_parse_int_list(args.region, "--region"))
        if len(region) != 4:
            raise UsageError("--region", "expected top,left,height,width")
    try:
        specs = [
            DamageSpec(
                kind=args.kind,
                seed=args.seed + k,
                count=args.count,
                width_range=(args.width_min, args.width_max),
                intensity=args.intensity,
                noise_model=args.noise_model,
                sigma=args.sigma,
                flip_prob=args.flip_prob,
                region=region,
            )
            for k in range(args.variants)
        ]
    except ValueError as exc:
        raise UsageError(f"--{args.kind}", str(exc)) from exc
    try:
        path = make_pair_manifest(in_dir, args.out, specs)
    except FileNotFoundError as exc:
        raise UsageError("--in", str(exc)) from exc
    except ValueError as exc:
        raise UsageError("--width-max", str(exc)) from exc
    print(f"wrote {path}")
    return 0


# -- ablation -----------------------------------------------------------------


def _contact_sheet(images: list[list[np.ndarray]], tile: int) -> Image.Image:
    rows, cols = len(images), len(images[0])
    h, w = images[0][0].shape[:2]
    tile_h = max(1, round(tile * h / w))
    sheet = Image.new("RGB", (cols * tile, rows * tile_h), "white")
    for r, row in enumerate(images):
        for c, img in enumerate(row):
            im = Image.fromarray(to_uint8(img)).resize((tile, tile_h), Image.Resampling.LANCZOS)
            sheet.paste(im, (c * tile, r * tile_h))
    return sheet


def cmd_ablate(args) -> int:
    _, _, damaged, mask, exemplars, ex_paths = _restore_inputs(args)
    aggs = [a.strip() for a in args.aggs.split(",") if a.strip()]
    bad = [a for a in aggs if a not in AGG_FLAGS]
    if not aggs or bad:
        raise UsageError("--aggs", f"expected values from min,avg; got {args.aggs!r}")
    counts = _parse_int_list(args.layer_counts, "--layer-counts")
    if not counts or any(c < 1 or c > len(LAYERS) for c in counts):
        raise UsageError("--layer-counts", f"each count must lie in 1..{len(LAYERS)}")
    inits = [i.strip() for i in args.inits.split(",") if i.strip()]
    if not inits or any(i not in ("input", "noise") for i in inits):
        raise UsageError("--inits", f"expected values from input,noise; got {args.inits!r}")
    cells = list(itertools.product(aggs, inits, counts))
    if len(cells) > args.budget:
        raise UsageError("--budget", f"grid has {len(cells)} cells, budget allows {args.budget}")
    if args.jobs < 1:
        raise UsageError("--jobs", "must be at least 1")
    if args.tile < 8:
        raise UsageError("--tile", "must be at least 8 px")

    subsets = {c: LAYERS[:c] for c in counts}
    weightings = {
        c: _weighting_from_args(argparse.Namespace(**{**vars(args), "layers": ",".join(subsets[c])}), subsets[c])[0]
        for c in counts
    }
    backbone = _backbone(args)
    pool = ExemplarPool.build(backbone, exemplars, LAYERS, [p.name for p in ex_paths])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def run(cell):
        agg, init, count = cell
        cfg = RestorationConfig(
            max_iterations=args.max_iters,
            init=init,
            aggregation=AGG_FLAGS[agg],
            layers=subsets[count],
            noise_seed=args.seed,
            convergence_tol=args.convergence_tol,
            log_every=args.log_every,
        )
        res = restore(damaged, mask, pool, weightings[count], cfg, backbone=backbone)
        save_image(out / f"cell_{agg}_{init}_{count}layers.png", res.output)
        return res

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(run, cells))
    else:
        results = [run(c) for c in cells]

    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(("aggregation", "init", "n_layers", "layers", "initial_loss", "final_loss", "iterations", "stop_reason"))
        for (agg, init, count), res in zip(cells, results):
            writer.writerow(
                (AGG_FLAGS[agg], init, count, "|".join(subsets[count]), repr(res.initial_loss),
                 repr(res.final_loss), res.iterations_run, res.stop_reason)
            )
    by_cell = dict(zip(cells, results))
    grid = [[by_cell[(agg, init, c)].output for c in counts] for agg in aggs for init in inits]
    _contact_sheet(grid, args.tile).save(out / "contact_sheet.png")
    print(f"ran {len(cells)} cells; wrote {out / 'ablation.csv'} and {out / 'contact_sheet.png'}")
    return 0


# -- parser -------------------------------------------------------------------


def _add_restore_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="damaged inscription image (PNG/JPEG)")
    p.add_argument("--mask", required=True, help="mask PNG; bright pixels mark damage")
    p.add_argument("--exemplars", required=True, metavar="DIR", help="directory of clean exemplar images")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--layers", help=f"comma-separated subset of {','.join(LAYERS)}")
    p.add_argument("--agg", choices=("min", "avg"), default="min")
    p.add_argument("--init", choices=("input", "noise"), default="input")
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--convergence-tol", type=float, default=1e-7)
    p.add_argument("--weights-scheme", choices=SCHEMES, default="rf-partition")
    p.add_argument("--weights-file", help="JSON with precomputed layer weights (bypasses fitting)")
    p.add_argument("--boxes", nargs="+", metavar="FILE", help="OCR box tables for letter-width weighting")
    p.add_argument("--tesseract", action="store_true", help="--boxes files are raw tesseract TSV output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--backbone-weights", help="VGG19 state dict (.pth); defaults to $MESA_BACKBONE_WEIGHTS")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mesa", description="Multi-exemplar style-aware restoration of damaged inscription images.")
    parser.add_argument("--version", action="version", version=f"mesa {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("restore", help="restore the masked pixels of one image")
    _add_restore_flags(p)
    p.add_argument("--mask-init-only", action="store_true", help="composite with the mask only at initialization")
    p.add_argument("--save-progress", action="store_true", help="write a checkpoint PNG every --log-every iterations")
    p.add_argument("--reference", help="ground-truth image; PSNR/SSIM are recorded in the run manifest")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("weights", help="fit letter widths and derive layer weights")
    p.add_argument("--boxes", nargs="+", required=True, metavar="FILE")
    p.add_argument("--tesseract", action="store_true")
    p.add_argument("--weights-scheme", "--scheme", dest="weights_scheme", choices=SCHEMES, default="rf-partition")
    p.add_argument("--layers")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("eval-text", help="LD / TRS / LLS between two text files")
    p.add_argument("--original", required=True)
    p.add_argument("--recovered", required=True)
    p.add_argument("--s", type=int, default=DEFAULT_S)
    p.add_argument("--normalize", action="store_true", help="uppercase and collapse whitespace first")
    p.set_defaults(func=cmd_eval_text)

    p = sub.add_parser("eval-image", help="PSNR / SSIM (and optional perceptual score) of one pair")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--perceptual", help="registered scorer name or module:callable")
    p.set_defaults(func=cmd_eval_image)

    p = sub.add_parser("eval", help="metric tables and bar plots over many pairs")
    p.add_argument("--manifest")
    p.add_argument("--ref", nargs="+")
    p.add_argument("--test", nargs="+")
    p.add_argument("--ref-text", nargs="+")
    p.add_argument("--test-text", nargs="+")
    p.add_argument("--s", type=int, default=DEFAULT_S)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("damage", help="synthesize scratched or noisy copies of clean images")
    p.add_argument("--in", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--kind", choices=("scratch", "noise"), required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--variants", type=int, default=1, help="number of specs (seeds seed..seed+variants-1)")
    p.add_argument("--count", type=int, default=3, help="scratches per image")
    p.add_argument("--width-min", type=int, default=2)
    p.add_argument("--width-max", type=int, default=6)
    p.add_argument("--intensity", type=float, default=1.0)
    p.add_argument("--noise-model", choices=("gaussian", "saltpepper"), default="gaussian")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--flip-prob", type=float, default=0.05)
    p.add_argument("--region", help="top,left,height,width of the noise region (default: full frame)")
    p.set_defaults(func=cmd_damage)

    p = sub.add_parser("ablate", help="grid over aggregation x layer count x initialization")
    _add_restore_flags(p)
    p.add_argument("--aggs", default="min,avg")
    p.add_argument("--layer-counts", default="2,3,4,5")
    p.add_argument("--inits", default="input,noise")
    p.add_argument("--budget", type=int, default=16, help="maximum number of grid cells")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--tile", type=int, default=128, help="contact-sheet tile width in px")
    p.set_defaults(func=cmd_ablate, max_iters=300)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mesa {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (RestorationError, BackboneError, ImageError, WeightingError, OSError, ValueError, RuntimeError) as exc:
        print(f"mesa {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
