"""Synthetic damage (scratches, noise) for building clean/damaged/mask triples."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFilter, ImageFont

from mesa.image_core import load_image, luminance, save_image, save_mask, validate_image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class DamageSpec:
    kind: str
    seed: int
    count: int = 3
    width_range: tuple[int, int] = (2, 6)
    intensity: float = 1.0
    noise_model: str = "gaussian"
    sigma: float = 0.1
    flip_prob: float = 0.05
    region: tuple[int, int, int, int] | None = None  # top, left, height, width

    def __post_init__(self) -> None:
        if self.kind not in ("scratch", "noise"):
            raise ValueError(f"kind must be 'scratch' or 'noise', got {self.kind!r}")
        if self.seed is None:
            raise ValueError("a seed is required")
        if self.count < 0:
            raise ValueError("scratch count must be non-negative")
        lo, hi = self.width_range
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid scratch width range {self.width_range}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("scratch intensity must lie in [0, 1]")
        if self.noise_model not in ("gaussian", "saltpepper"):
            raise ValueError(f"noise model must be 'gaussian' or 'saltpepper', got {self.noise_model!r}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip probability must lie in [0, 1]")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["width_range"] = list(self.width_range)
        doc["region"] = None if self.region is None else list(self.region)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "DamageSpec":
        doc = dict(doc)
        doc["width_range"] = tuple(doc.get("width_range", (2, 6)))
        if doc.get("region") is not None:
            doc["region"] = tuple(doc["region"])
        return cls(**doc)


def background_fill(img: np.ndarray) -> np.ndarray:
    """Per-channel median of the pixels brighter than the mean luminance (text assumed dark)."""
    lum = luminance(img)
    light = lum >= lum.mean()
    return np.median(img[light], axis=0)


def _scratch_mask(shape: tuple[int, int], spec: DamageSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    if spec.width_range[1] > min(h, w):
        raise ValueError(f"scratch width {spec.width_range[1]} exceeds image size {h}x{w}")
    canvas = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    diag = math.hypot(h, w)
    for _ in range(spec.count):
        width = int(rng.integers(spec.width_range[0], spec.width_range[1] + 1))
        n_seg = int(rng.integers(1, 4))
        x, y = rng.uniform(0, w), rng.uniform(0, h)
        angle = rng.uniform(0, 2 * math.pi)
        pts = [(x, y)]
        for _ in range(n_seg):
            angle += rng.normal(0, 0.35)
            length = rng.uniform(0.1, 0.35) * diag
            x, y = x + length * math.cos(angle), y + length * math.sin(angle)
            pts.append((x, y))
        draw.line(pts, fill=255, width=width, joint="curve")
    return np.asarray(canvas) > 0


def _region_mask(shape: tuple[int, int], region) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if region is None:
        mask[:] = True
    else:
        top, left, height, width = region
        mask[top : top + height, left : left + width] = True
    return mask


def apply_damage(clean: np.ndarray, spec: DamageSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(damaged, mask)``; every altered pixel has ``mask == True``."""
    clean = validate_image(clean, "clean image")
    rng = np.random.default_rng(spec.seed)
    shape = clean.shape[:2]
    if spec.kind == "scratch":
        mask = _scratch_mask(shape, spec, rng)
        if not mask.any():
            return clean.copy(), mask
        fill = background_fill(clean)
        # slight per-pixel grain so the fill is not perfectly flat
        grain = rng.normal(0.0, 0.02, size=clean.shape)
        stroke = np.clip(fill + grain, 0.0, 1.0)
        blended = (1.0 - spec.intensity) * clean + spec.intensity * stroke
        damaged = np.where(mask[..., None], blended, clean)
        return damaged, mask

    mask = _region_mask(shape, spec.region)
    if spec.noise_model == "gaussian":
        noisy = np.clip(clean + rng.normal(0.0, 1.0, size=clean.shape) * spec.sigma, 0.0, 1.0)
    else:
        u = rng.uniform(size=shape)
        salt = rng.uniform(size=shape) < 0.5
        noisy = clean.copy()
        flip = u < spec.flip_prob
        noisy[flip & salt] = 1.0
        noisy[flip & ~salt] = 0.0
    damaged = np.where(mask[..., None], noisy, clean)
    return damaged, mask


def list_images(directory: str | os.PathLike) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def make_pair_manifest(in_dir, out_dir, specs: Sequence[DamageSpec], manifest_name: str = "manifest.json") -> Path:
    """Damage every clean image with every spec and write a JSON manifest of the triples.

    Paths in the manifest are relative to the manifest's directory.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    images = list_images(in_dir)
    if not images:
        raise FileNotFoundError(f"no PNG/JPEG images in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    clean_dir = out_dir / "clean"
    clean_dir.mkdir(exist_ok=True)
    pairs = []
    for src in images:
        clean = load_image(src)
        clean_path = clean_dir / f"{src.stem}.png"
        save_image(clean_path, clean)
        for k, spec in enumerate(specs):
            stem = f"{src.stem}_{spec.kind}{k}_s{spec.seed}"
            damaged, mask = apply_damage(clean, spec)
            save_image(out_dir / f"{stem}.png", damaged)
            save_mask(out_dir / f"{stem}_mask.png", mask)
            pairs.append(
                {
                    "id": stem,
                    "clean": os.path.relpath(clean_path, out_dir),
                    "damaged": f"{stem}.png",
                    "mask": f"{stem}_mask.png",
                    "spec": spec.to_dict(),
                }
            )
    manifest = {"version": 1, "pairs": pairs}
    path = out_dir / manifest_name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_pair_manifest(path: str | os.PathLike) -> list[dict]:
    """Load a manifest and resolve its paths against the manifest's directory."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    pairs = []
    for entry in doc["pairs"]:
        resolved = dict(entry)
        for key in ("clean", "damaged", "mask", "restored", "clean_text", "restored_text"):
            if entry.get(key):
                resolved[key] = base / entry[key]
        pairs.append(resolved)
    return pairs


def render_inscription(
    size: tuple[int, int] = (128, 128),
    text: str = "DIS MANIBVS SACRVM VIXIT",
    seed: int = 0,
    font_size: int | None = None,
) -> np.ndarray:
    """Draw dark engraved letters on a grainy stone-like background.

    Useful for desk-scale experiments where no real inscription photos are at hand.
    """
    h, w = size
    rng = np.random.default_rng(seed)
    base = rng.normal(0.0, 1.0, size=(h, w))
    stone = Image.fromarray(np.uint8(np.clip(128 + 40 * base, 0, 255))).filter(ImageFilter.GaussianBlur(1.2))
    stone_arr = np.asarray(stone, dtype=np.float64) / 255.0
    stone_arr = 0.62 + 0.35 * (stone_arr - stone_arr.mean())
    tint = np.array([1.0, 0.96, 0.88])
    img = np.clip(stone_arr[..., None] * tint, 0.0, 1.0)

    font = ImageFont.load_default(size=font_size or max(10, h // 5))
    layer = Image.new("L", (w, h), 0)
    draw = ImageDraw.Draw(layer)
    words = text.split()
    line_h = (font_size or max(10, h // 5)) + 4
    y = rng.integers(1, max(2, line_h // 3))
    i = 0
    while y + line_h <= h + line_h // 2:
        line = words[i % len(words)]
        i += 1
        draw.text((int(rng.integers(1, max(2, w // 8))), int(y)), line, fill=255, font=font)
        y += line_h
    ink = np.asarray(layer.filter(ImageFilter.GaussianBlur(0.6)), dtype=np.float64)[..., None] / 255.0
    engraved = img * (1.0 - 0.7 * ink)
    return np.clip(engraved, 0.0, 1.0)
