"""Image and mask representations, PNG/JPEG I/O and backbone preprocessing.

Images are ``numpy`` arrays of shape ``(H, W, 3)`` with float values in
``[0, 1]``, channels-last.  Masks are boolean arrays of shape ``(H, W)``
where ``True`` marks a damaged pixel that the optimizer may rewrite.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

# ImageNet channel means in RGB order, the convention of the torchvision VGG weights.
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])

# ITU-R BT.601 luma coefficients.
LUMA = np.array([0.299, 0.587, 0.114])


class ImageError(ValueError):
    """Raised for unreadable, malformed or mismatched image inputs."""


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ImageError(f"{name} has a zero dimension: {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ImageError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImageError(f"{name} values must lie in [0, 1]")
    return img


def validate_mask(mask: np.ndarray, shape: tuple[int, ...] | None = None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ImageError(f"mask must be 2-D, got shape {mask.shape}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise ImageError("mask values must be exactly 0 or 1")
        mask = mask.astype(bool)
    if shape is not None and mask.shape != tuple(shape[:2]):
        raise ImageError(f"mask shape {mask.shape} does not match image shape {tuple(shape[:2])}")
    return mask


def _open(path: str | os.PathLike) -> Image.Image:
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"no such image file: {path}")
    try:
        im = Image.open(path)
        im.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    if im.width == 0 or im.height == 0:
        raise ImageError(f"image {path} has a zero dimension")
    return im


def _to_unit(im: Image.Image) -> np.ndarray:
    if im.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
        raise ImageError(f"unsupported image mode {im.mode!r}; only 8-bit images are accepted")
    if im.mode == "LA":
        im = im.convert("L")
    elif im.mode not in ("L", "RGB"):
        im = im.convert("RGB")
    arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return arr


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit PNG/JPEG as an ``(H, W, 3)`` float array in [0, 1].

    Grayscale inputs are replicated to three channels.
    """
    return _to_unit(_open(path))


def luminance(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ LUMA


def load_mask(
    path: str | os.PathLike,
    threshold: float = 0.5,
    reference_shape: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Load a mask image; a pixel is damaged iff its luminance exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ImageError(f"threshold must lie in (0, 1), got {threshold}")
    arr = _to_unit(_open(path))
    mask = luminance(arr) > threshold
    if reference_shape is not None and mask.shape != tuple(reference_shape[:2]):
        raise ImageError(
            f"mask {path} has shape {mask.shape}, expected {tuple(reference_shape[:2])}"
        )
    return mask


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write an 8-bit RGB PNG; values are clamped to [0, 1] before quantization."""
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    mask = validate_mask(mask)
    Image.fromarray(mask.astype(np.uint8) * 255).save(path, format="PNG")


def preprocess(img: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Mean-center an image and lay it out as a ``(1, 3, H, W)`` tensor.

    Only the channel means are subtracted; the per-channel scale of the
    pretrained weights is folded into the first convolution instead (see
    :func:`mesa.backbone.load_backbone`).
    """
    img = np.asarray(img, dtype=np.float64)
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]
    mean = torch.from_numpy(IMAGENET_MEAN).view(1, 3, 1, 1)
    return (t - mean).to(dtype)


def center(x: torch.Tensor) -> torch.Tensor:
    """Tensor version of :func:`preprocess` for ``(1, 3, H, W)`` inputs in [0, 1]."""
    mean = torch.as_tensor(IMAGENET_MEAN, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
    return x - mean


def postprocess(t: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`preprocess`; no clamping is applied."""
    arr = t.detach().to(torch.float64).cpu().numpy()[0].transpose(1, 2, 0)
    return arr + IMAGENET_MEAN
