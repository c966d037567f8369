"""VGG19 feature extractor with average pooling and Gram matrices.

Only the convolutional trunk up to the fourth pooling stage is built.  The
module layout mirrors ``torchvision.models.vgg19().features`` so that a
standard torchvision state dict (keys ``features.<i>.weight`` /
``features.<i>.bias``) loads without renaming.
"""

from __future__ import annotations

import hashlib
import logging
import os
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import torch
from torch import nn

from mesa.image_core import IMAGENET_STD

logger = logging.getLogger(__name__)

WEIGHTS_ENV = "MESA_BACKBONE_WEIGHTS"

# (out_channels | "P") for the first four VGG19 blocks.
_VGG19_TRUNK = [64, 64, "P", 128, 128, "P", 256, 256, 256, 256, "P", 512, 512, 512, 512, "P"]


@dataclass(frozen=True)
class LayerSpec:
    name: str
    filters: int
    receptive_field: int
    index: int  # position in ``Backbone.features`` whose output is tapped
    downsample: int  # total stride relative to the input


LAYER_SPECS: "OrderedDict[str, LayerSpec]" = OrderedDict(
    (s.name, s)
    for s in (
        LayerSpec("layer1", 64, 3, 1, 1),
        LayerSpec("AvgPool1", 64, 6, 4, 2),
        LayerSpec("AvgPool2", 128, 16, 9, 4),
        LayerSpec("AvgPool3", 256, 52, 18, 8),
        LayerSpec("AvgPool4", 512, 124, 27, 16),
    )
)
LAYERS: tuple[str, ...] = tuple(LAYER_SPECS)


class BackboneError(RuntimeError):
    """Raised when backbone weights are missing, corrupt or mismatched."""


class GramEntry(NamedTuple):
    """Gram matrix of one layer together with the spatial size ``K`` it summed over."""

    gram: torch.Tensor
    k: int


def receptive_fields() -> dict[str, int]:
    """Receptive field of every tapped layer, from the 3x3 conv / 2x2 pool recurrence."""
    rf, jump = 1, 1
    out: dict[str, int] = {}
    taps = {s.index: s.name for s in LAYER_SPECS.values()}
    idx = 0
    for v in _VGG19_TRUNK:
        if v == "P":
            rf += (2 - 1) * jump
            jump *= 2
            if idx in taps:
                out[taps[idx]] = rf
            idx += 1
        else:
            rf += (3 - 1) * jump
            idx += 1  # conv
            if idx in taps:
                out[taps[idx]] = rf
            idx += 1  # relu
    return out


def _check_layers(layers) -> tuple[str, ...]:
    layers = tuple(layers)
    if not layers:
        raise ValueError("at least one layer is required")
    unknown = [name for name in layers if name not in LAYER_SPECS]
    if unknown:
        raise ValueError(f"unknown layer(s) {unknown}; choose from {list(LAYERS)}")
    if len(set(layers)) != len(layers):
        raise ValueError(f"duplicate layers in {layers}")
    return tuple(sorted(layers, key=LAYERS.index))


class Backbone(nn.Module):
    """Frozen VGG19 trunk with max pooling replaced by 2x2 average pooling."""

    def __init__(self) -> None:
        super().__init__()
        modules: list[nn.Module] = []
        in_ch = 3
        for v in _VGG19_TRUNK:
            if v == "P":
                modules.append(nn.AvgPool2d(kernel_size=2, stride=2))
            else:
                modules.append(nn.Conv2d(in_ch, v, kernel_size=3, padding=1))
                modules.append(nn.ReLU(inplace=False))
                in_ch = v
        self.features = nn.Sequential(*modules)
        self.source = "uninitialized"

    def freeze(self) -> "Backbone":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self

    @property
    def dtype(self) -> torch.dtype:
        return self.features[0].weight.dtype

    def forward(self, x: torch.Tensor, layers=LAYERS) -> dict[str, torch.Tensor]:
        layers = _check_layers(layers)
        wanted = {LAYER_SPECS[name].index: name for name in layers}
        last = max(wanted)
        out: dict[str, torch.Tensor] = {}
        for i, module in enumerate(self.features):
            x = module(x)
            if i in wanted:
                out[wanted[i]] = x
            if i == last:
                break
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, tensor in self.state_dict().items():
            h.update(name.encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()


def _random_init(backbone: Backbone, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in backbone.features:
        if isinstance(m, nn.Conv2d):
            fan_out = m.out_channels * m.kernel_size[0] * m.kernel_size[1]
            std = (2.0 / fan_out) ** 0.5
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                m.bias.zero_()


def _load_state(backbone: Backbone, path: Path, fold_std: bool) -> None:
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types for bad archives
        raise BackboneError(f"cannot read backbone weights {path}: {exc}") from exc
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if not isinstance(state, dict):
        raise BackboneError(f"{path} does not contain a state dict")
    # accept both torchvision keys (features.0.weight) and bare trunk keys (0.weight)
    if not any(k.startswith("features.") for k in state):
        state = {f"features.{k}": v for k, v in state.items()}

    expected = backbone.state_dict()
    for key, ref in expected.items():
        if key not in state:
            raise BackboneError(f"weights file {path} is missing tensor {key!r}")
        got = state[key]
        if not isinstance(got, torch.Tensor) or tuple(got.shape) != tuple(ref.shape):
            shape = tuple(got.shape) if isinstance(got, torch.Tensor) else type(got).__name__
            raise BackboneError(
                f"tensor {key!r} in {path} has shape {shape}, expected {tuple(ref.shape)}"
            )
    trunk = {k: state[k].to(torch.float32) for k in expected}
    if fold_std:
        # torchvision weights expect (x - mean) / std; absorb 1/std so inputs are only mean-centered
        std = torch.as_tensor(IMAGENET_STD, dtype=torch.float32).view(1, 3, 1, 1)
        trunk["features.0.weight"] = trunk["features.0.weight"] / std
    backbone.load_state_dict(trunk)


def load_backbone(
    weights_path: str | os.PathLike | None = None,
    *,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    fold_std: bool = True,
) -> Backbone:
    """Build the frozen feature extractor.

    The weights path is taken from ``weights_path``, then the
    ``MESA_BACKBONE_WEIGHTS`` environment variable.  When neither is set the
    trunk is initialized with seeded He-normal weights and a warning is
    emitted; Gram statistics of a random VGG are still usable texture
    descriptors but results will differ from pretrained ones.
    """
    backbone = Backbone()
    path = weights_path or os.environ.get(WEIGHTS_ENV)
    if path:
        path = Path(path)
        if not path.is_file():
            raise BackboneError(f"backbone weights file not found: {path}")
        _load_state(backbone, path, fold_std)
        backbone.source = str(path)
    else:
        warnings.warn(
            f"no backbone weights given (set {WEIGHTS_ENV}); using seeded random VGG19 weights",
            stacklevel=2,
        )
        _random_init(backbone, seed)
        backbone.source = f"random-he-normal(seed={seed})"
    return backbone.to(dtype).freeze()


def feature_size(height: int, width: int, layer: str) -> tuple[int, int]:
    d = LAYER_SPECS[layer].downsample
    return height // d, width // d


def extract_features(backbone: Backbone, x: torch.Tensor, layers=LAYERS) -> dict[str, torch.Tensor]:
    """Feature matrices ``F`` of shape ``(N, K)`` at every requested layer.

    ``x`` is a preprocessed ``(1, 3, H, W)`` tensor.
    """
    layers = _check_layers(layers)
    if x.ndim != 4 or x.shape[0] != 1 or x.shape[1] != 3:
        raise ValueError(f"expected a (1, 3, H, W) tensor, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    for name in layers:
        fh, fw = feature_size(h, w, name)
        if fh == 0 or fw == 0:
            raise ValueError(f"input {h}x{w} is too small: {name} would have spatial size {fh}x{fw}")
    maps = backbone(x, layers)
    return {name: t[0].reshape(t.shape[1], -1) for name, t in maps.items()}


def gram(f):
    """``G[a, b] = sum_i F[a, i] * F[b, i]`` for a feature matrix of shape ``(N, K)``.

    Works for torch tensors and numpy arrays alike.
    """
    return f @ f.T


def gram_set(backbone: Backbone, x: torch.Tensor, layers=LAYERS) -> dict[str, GramEntry]:
    feats = extract_features(backbone, x, layers)
    return {name: GramEntry(gram(f), f.shape[1]) for name, f in feats.items()}
