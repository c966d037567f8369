"""Training-free multi-exemplar restoration of damaged inscription images."""

from mesa.image_core import load_image, load_mask, save_image, save_mask, preprocess, postprocess
from mesa.backbone import LAYERS, Backbone, load_backbone, extract_features, gram
from mesa.loss import ExemplarPool, exemplar_layer_loss, layer_min_loss, total_loss
from mesa.weights import (
    LayerWeighting,
    WidthDistribution,
    derive_weights,
    extract_letter_widths,
    fit_distribution,
    uniform_weighting,
)
from mesa.restore import RestorationConfig, RestorationResult, composite, restore
from mesa.text_metrics import levenshtein, log_lev_similarity, text_recovery_score
from mesa.image_metrics import psnr, ssim

__version__ = "0.1.0"

__all__ = [
    "LAYERS",
    "Backbone",
    "ExemplarPool",
    "LayerWeighting",
    "RestorationConfig",
    "RestorationResult",
    "WidthDistribution",
    "composite",
    "derive_weights",
    "exemplar_layer_loss",
    "extract_features",
    "extract_letter_widths",
    "fit_distribution",
    "gram",
    "layer_min_loss",
    "levenshtein",
    "load_backbone",
    "load_image",
    "load_mask",
    "log_lev_similarity",
    "postprocess",
    "preprocess",
    "psnr",
    "restore",
    "save_image",
    "save_mask",
    "ssim",
    "text_recovery_score",
    "total_loss",
    "uniform_weighting",
]
