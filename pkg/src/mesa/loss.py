"""Multi-exemplar Gram style loss with per-layer minimum (or average) aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
import torch

from mesa.backbone import LAYER_SPECS, Backbone, GramEntry, _check_layers, gram_set
from mesa.image_core import preprocess, validate_image

if TYPE_CHECKING:
    from mesa.weights import LayerWeighting

AGGREGATIONS = ("min", "average")


def exemplar_layer_loss(g_in, k_in: int, g_ex, k_ex: int, n: int | None = None):
    """Style loss between two Gram matrices of one layer.

    Each Gram is divided by its own spatial size before differencing, so
    inputs and exemplars of different resolutions are comparable::

        1 / (4 n^2) * sum_ab (g_in_ab / k_in - g_ex_ab / k_ex)^2

    With ``k_in == k_ex == K`` this is the usual ``1 / (4 n^2 K^2)`` form.
    """
    if tuple(g_in.shape) != tuple(g_ex.shape) or g_in.shape[0] != g_in.shape[1]:
        raise ValueError(f"Gram shapes differ or are not square: {tuple(g_in.shape)} vs {tuple(g_ex.shape)}")
    if n is None:
        n = g_in.shape[0]
    elif n != g_in.shape[0]:
        raise ValueError(f"filter count {n} does not match Gram size {g_in.shape[0]}")
    diff = g_in / k_in - g_ex / k_ex
    return (diff * diff).sum() / (4.0 * n * n)


@dataclass
class ExemplarPool:
    """Exemplar images and their cached per-layer Gram matrices."""

    exemplars: list[np.ndarray]
    grams: list[dict[str, GramEntry]]
    layers: tuple[str, ...]
    names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.exemplars:
            raise ValueError("exemplar pool is empty")
        if len(self.grams) != len(self.exemplars):
            raise ValueError("one Gram set per exemplar is required")
        if not self.names:
            self.names = [f"exemplar{i}" for i in range(len(self.exemplars))]

    @classmethod
    def build(
        cls,
        backbone: Backbone,
        exemplars: Sequence[np.ndarray],
        layers=None,
        names: Sequence[str] | None = None,
    ) -> "ExemplarPool":
        layers = _check_layers(layers if layers is not None else LAYER_SPECS)
        images = [validate_image(e, f"exemplar {i}") for i, e in enumerate(exemplars)]
        if not images:
            raise ValueError("exemplar pool is empty")
        grams = []
        with torch.no_grad():
            for img in images:
                grams.append(gram_set(backbone, preprocess(img, backbone.dtype), layers))
        return cls(images, grams, layers, list(names) if names else [])

    def __len__(self) -> int:
        return len(self.exemplars)

    def subset(self, indices: Sequence[int]) -> "ExemplarPool":
        return ExemplarPool(
            [self.exemplars[i] for i in indices],
            [self.grams[i] for i in indices],
            self.layers,
            [self.names[i] for i in indices],
        )


@dataclass
class LayerLossReport:
    layers: tuple[str, ...]
    exemplar_losses: dict[str, list[float]]
    argmin: dict[str, int | None]
    layer_loss: dict[str, float]
    weights: dict[str, float]
    total: float

    def to_dict(self) -> dict:
        return {
            "layers": list(self.layers),
            "exemplar_losses": {k: list(v) for k, v in self.exemplar_losses.items()},
            "argmin": dict(self.argmin),
            "layer_loss": dict(self.layer_loss),
            "weights": dict(self.weights),
            "total": self.total,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "LayerLossReport":
        return cls(
            tuple(doc["layers"]),
            {k: list(v) for k, v in doc["exemplar_losses"].items()},
            dict(doc["argmin"]),
            dict(doc["layer_loss"]),
            dict(doc["weights"]),
            doc["total"],
        )


def _f(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def _per_exemplar(entry: GramEntry, pool: ExemplarPool, layer: str) -> list:
    n = LAYER_SPECS[layer].filters
    return [
        exemplar_layer_loss(entry.gram, entry.k, g[layer].gram, g[layer].k, n)
        for g in pool.grams
    ]


def _aggregate(losses: list, mode: str):
    if mode == "min":
        values = [_f(v) for v in losses]
        idx = min(range(len(values)), key=values.__getitem__)  # first index on ties
        return losses[idx], idx
    if mode == "average":
        return sum(losses) / len(losses), None
    raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")


def layer_min_loss(input_entry: GramEntry, pool: ExemplarPool, layer: str, mode: str = "min"):
    """Aggregate the per-exemplar losses of one layer.

    Returns ``(value, argmin)``; ``argmin`` is ``None`` for ``mode="average"``.
    """
    if len(pool) == 0:
        raise ValueError("exemplar pool is empty")
    if layer not in pool.layers:
        raise ValueError(f"layer {layer!r} was not cached in the exemplar pool")
    return _aggregate(_per_exemplar(input_entry, pool, layer), mode)


def total_loss(
    backbone: Backbone,
    x: torch.Tensor,
    pool: ExemplarPool,
    weighting: "LayerWeighting",
    mode: str = "min",
):
    """Weighted sum of per-layer aggregated style losses for a preprocessed input.

    Returns ``(loss_tensor, LayerLossReport)``; the tensor keeps its autograd graph.
    """
    layers = tuple(weighting.layers)
    missing = [name for name in layers if name not in pool.layers]
    if missing:
        raise ValueError(f"weighting covers layers {missing} that the exemplar pool lacks")
    entries = gram_set(backbone, x, layers)
    total = x.new_zeros(())
    per_ex: dict[str, list[float]] = {}
    argmin: dict[str, int | None] = {}
    layer_loss: dict[str, float] = {}
    for name, w in zip(layers, weighting.normalized):
        losses = _per_exemplar(entries[name], pool, name)
        value, idx = _aggregate(losses, mode)
        total = total + w * value
        per_ex[name] = [_f(v) for v in losses]
        argmin[name] = idx
        layer_loss[name] = _f(value)
    report = LayerLossReport(
        layers,
        per_ex,
        argmin,
        layer_loss,
        dict(zip(layers, map(float, weighting.normalized))),
        _f(total),
    )
    return total, report
