"""Reference-based image quality: PSNR, SSIM and a pluggable perceptual scorer."""

from __future__ import annotations

import importlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from skimage.metrics import structural_similarity

from mesa.image_core import luminance, validate_image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = validate_image(a, "reference")
    b = validate_image(b, "test")
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for unit-range images; ``math.inf`` when the images are identical."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM of the luminance channels (11x11 Gaussian window, sigma 1.5)."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {a.shape[:2]}")
    return float(
        structural_similarity(
            luminance(a),
            luminance(b),
            data_range=1.0,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=SSIM_K1,
            K2=SSIM_K2,
        )
    )


@dataclass
class PerceptualScorer:
    fn: Callable[[np.ndarray, np.ndarray], float]
    tag: str


_SCORERS: dict[str, PerceptualScorer] = {}


def register_scorer(name: str, fn: Callable[[np.ndarray, np.ndarray], float], tag: str | None = None) -> None:
    _SCORERS[name] = PerceptualScorer(fn, tag or name)


def unregister_scorer(name: str) -> None:
    _SCORERS.pop(name, None)


def resolve_scorer(spec: str) -> PerceptualScorer:
    """Look up a registered scorer, or import one given as ``module:callable``."""
    if spec in _SCORERS:
        return _SCORERS[spec]
    if ":" in spec:
        module, attr = spec.split(":", 1)
        fn = getattr(importlib.import_module(module), attr)
        return PerceptualScorer(fn, getattr(fn, "backbone_tag", spec))
    raise KeyError(f"no perceptual scorer registered as {spec!r}")


def perceptual_distance(a: np.ndarray, b: np.ndarray, scorer: PerceptualScorer | str | None) -> tuple[float | None, str]:
    """Forward to the plug-in; returns ``(value, tag)`` or ``(None, "unavailable")``."""
    if scorer is None:
        return None, "unavailable"
    if isinstance(scorer, str):
        try:
            scorer = resolve_scorer(scorer)
        except (KeyError, ImportError, AttributeError):
            return None, "unavailable"
    a, b = _pair(a, b)
    return float(scorer.fn(a, b)), scorer.tag


@dataclass
class ImagePairScore:
    psnr: float
    ssim: float
    perceptual: float | None = None
    perceptual_tag: str = "unavailable"

    def to_dict(self) -> dict:
        doc = {"psnr": "inf" if math.isinf(self.psnr) else self.psnr, "ssim": self.ssim}
        if self.perceptual is None:
            doc["perceptual_status"] = "unavailable"
        else:
            doc["perceptual"] = self.perceptual
            doc["perceptual_backbone"] = self.perceptual_tag
        return doc


def score_images(a: np.ndarray, b: np.ndarray, scorer: PerceptualScorer | str | None = None) -> ImagePairScore:
    value, tag = perceptual_distance(a, b, scorer)
    return ImagePairScore(psnr(a, b), ssim(a, b), value, tag)
