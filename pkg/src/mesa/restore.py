"""Mask-constrained L-BFGS restoration.

The optimization variable is a full image tensor.  Every evaluation
composites it with the initial image through the mask, clamps to [0, 1],
runs the backbone and computes the weighted multi-exemplar loss.  Because
the composite selects the initial image wherever the mask is 0, gradients
at those pixels are exactly zero and they never move.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch

from mesa.backbone import LAYERS, Backbone, _check_layers
from mesa.image_core import center, validate_image, validate_mask
from mesa.loss import AGGREGATIONS, ExemplarPool, LayerLossReport, total_loss
from mesa.weights import LayerWeighting

logger = logging.getLogger(__name__)

STOP_REASONS = ("max_iter", "converged", "line_search_failure", "no_op")


class RestorationError(RuntimeError):
    pass


@dataclass
class RestorationConfig:
    max_iterations: int = 5000
    init: str = "input"
    aggregation: str = "min"
    layers: tuple[str, ...] = LAYERS
    mask_every_step: bool = True
    noise_seed: int = 0
    convergence_tol: float = 1e-7
    log_every: int = 50
    history_size: int = 20
    max_line_search: int = 25

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.init not in ("input", "noise"):
            raise ValueError(f"init must be 'input' or 'noise', got {self.init!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        self.layers = _check_layers(self.layers)
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be non-negative")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["layers"] = list(self.layers)
        return doc


@dataclass
class RestorationResult:
    output: np.ndarray
    initial_loss: float
    loss_trace: list[float]
    argmin_trace: list[dict[str, int | None]]
    iterations_run: int
    stop_reason: str
    evaluations: int = 0
    final_report: LayerLossReport | None = None
    no_op: bool = False

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else self.initial_loss


def composite(estimate, init, mask):
    """``mask * estimate + (1 - mask) * init`` clamped to [0, 1].

    Accepts ``(H, W, 3)`` numpy arrays with an ``(H, W)`` mask, or torch
    tensors that broadcast against each other.  Selection is done with
    ``where`` so unmasked pixels are copied bit-for-bit.
    """
    if isinstance(estimate, torch.Tensor):
        if estimate.shape != init.shape or mask.shape[-2:] != estimate.shape[-2:]:
            raise ValueError("estimate, init and mask must share spatial dimensions")
        return torch.where(mask.bool(), estimate, init).clamp(0.0, 1.0)
    estimate = np.asarray(estimate, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    mask = np.asarray(mask)
    if estimate.shape != init.shape or mask.shape != estimate.shape[:2]:
        raise ValueError(f"dimension mismatch: estimate {estimate.shape}, init {init.shape}, mask {mask.shape}")
    return np.clip(np.where(mask.astype(bool)[..., None], estimate, init), 0.0, 1.0)


def initial_estimate(damaged: np.ndarray, mask: np.ndarray, init: str, seed: int) -> np.ndarray:
    if init == "input":
        return damaged.copy()
    if init == "noise":
        rng = np.random.default_rng(seed)
        noise = rng.uniform(0.0, 1.0, size=damaged.shape)
        return np.where(mask[..., None], noise, damaged)
    raise ValueError(f"unknown init {init!r}")


def _to_tensor(img: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None].to(dtype)


def _to_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().to(torch.float64).cpu().numpy()[0].transpose(1, 2, 0)


class _Objective:
    """Loss/gradient closure with a one-entry cache keyed on the variable's value."""

    def __init__(self, backbone, init_t, mask_t, pool, weighting, cfg):
        self.backbone = backbone
        self.init_t = init_t
        self.mask_t = mask_t
        self.pool = pool
        self.weighting = weighting
        self.cfg = cfg
        self.evaluations = 0
        # the optimizer sees loss * scale; raw Gram losses can be ~1e-10, far below
        # the resolution of L-BFGS's first unit-length step
        self.scale = 1.0
        self._key: torch.Tensor | None = None
        self._cached: tuple[torch.Tensor, torch.Tensor, LayerLossReport] | None = None

    def image(self, x: torch.Tensor) -> torch.Tensor:
        if self.cfg.mask_every_step:
            return composite(x, self.init_t, self.mask_t)
        return x.clamp(0.0, 1.0)

    def evaluate(self, x: torch.Tensor):
        if self._key is not None and torch.equal(self._key, x.detach()):
            loss, grad, report = self._cached
            return loss, grad, report
        xv = x.detach().clone().requires_grad_(True)
        loss, report = total_loss(self.backbone, center(self.image(xv)), self.pool, self.weighting, self.cfg.aggregation)
        if not torch.isfinite(loss):
            raise RestorationError(f"non-finite loss {float(loss)} at evaluation {self.evaluations}: {report.layer_loss}")
        (grad,) = torch.autograd.grad(loss, xv)
        if self.cfg.mask_every_step:
            grad = grad.masked_fill(~self.mask_t, 0.0)
        self.evaluations += 1
        self._key = x.detach().clone()
        self._cached = (loss.detach(), grad, report)
        return self._cached

    def closure_for(self, x: torch.Tensor) -> Callable[[], torch.Tensor]:
        def closure():
            loss, grad, _ = self.evaluate(x)
            x.grad = grad * self.scale
            return loss * self.scale

        return closure


def restore(
    damaged: np.ndarray,
    mask: np.ndarray,
    pool: ExemplarPool,
    weighting: LayerWeighting,
    cfg: RestorationConfig | None = None,
    *,
    backbone: Backbone,
    callback: Callable[[int, float, LayerLossReport, Callable[[], np.ndarray]], None] | None = None,
) -> RestorationResult:
    """Rewrite the masked pixels of ``damaged`` to match the exemplars' Gram statistics.

    ``callback(iteration, loss, report, current_image)`` is invoked every
    ``cfg.log_every`` accepted iterations and after the last one;
    ``current_image()`` returns the composited estimate.
    """
    cfg = cfg or RestorationConfig()
    damaged = validate_image(damaged, "damaged image")
    mask = validate_mask(mask, damaged.shape)
    if tuple(weighting.layers) != tuple(cfg.layers):
        raise ValueError(f"weighting layers {weighting.layers} do not match configured layers {cfg.layers}")
    missing = [name for name in cfg.layers if name not in pool.layers]
    if missing:
        raise ValueError(f"exemplar pool has no cached Grams for {missing}")

    if not mask.any():
        logger.info("mask is empty; nothing to restore")
        return RestorationResult(damaged.copy(), 0.0, [], [], 0, "no_op", no_op=True)

    dtype = backbone.dtype
    init_t = _to_tensor(damaged, dtype)
    mask_t = torch.from_numpy(mask)[None, None]
    x = _to_tensor(initial_estimate(damaged, mask, cfg.init, cfg.noise_seed), dtype).requires_grad_(True)

    objective = _Objective(backbone, init_t, mask_t, pool, weighting, cfg)
    optimizer = torch.optim.LBFGS(
        [x],
        lr=1.0,
        max_iter=1,
        max_eval=cfg.max_line_search,
        tolerance_grad=0.0,
        tolerance_change=0.0,
        history_size=cfg.history_size,
        line_search_fn="strong_wolfe",
    )
    closure = objective.closure_for(x)

    def current_image() -> np.ndarray:
        return composite(_to_image(objective.image(x)), damaged, mask)

    loss0, _, report = objective.evaluate(x)
    prev = float(loss0)
    if prev > 0:
        objective.scale = 1.0 / prev
    initial_loss = prev
    loss_trace: list[float] = []
    argmin_trace: list[dict[str, int | None]] = []
    best_x = x.detach().clone()
    stop_reason = "max_iter"

    for it in range(1, cfg.max_iterations + 1):
        optimizer.step(closure)
        loss_t, _, report = objective.evaluate(x)
        cur = float(loss_t)
        if not cur < prev:
            # the line search could not decrease the loss; keep the last accepted point
            with torch.no_grad():
                x.copy_(best_x)
            stop_reason = "line_search_failure" if cur > prev or prev > 0 else "converged"
            break
        best_x = x.detach().clone()
        loss_trace.append(cur)
        argmin_trace.append(dict(report.argmin))
        rel = (prev - cur) / max(abs(prev), 1e-300)
        prev = cur
        if callback is not None and (it % cfg.log_every == 0 or it == cfg.max_iterations):
            callback(it, cur, report, current_image)
        if rel < cfg.convergence_tol:
            stop_reason = "converged"
            break

    with torch.no_grad():
        x.copy_(best_x)
    _, _, final_report = objective.evaluate(x)
    output = current_image()
    iterations = len(loss_trace)
    if callback is not None and iterations and iterations % cfg.log_every != 0 and iterations != cfg.max_iterations:
        callback(iterations, final_report.total, final_report, current_image)
    logger.info("restoration stopped after %d iterations (%s), loss %.6g -> %.6g",
                iterations, stop_reason, initial_loss, final_report.total)
    return RestorationResult(
        output=output,
        initial_loss=initial_loss,
        loss_trace=loss_trace,
        argmin_trace=argmin_trace,
        iterations_run=iterations,
        stop_reason=stop_reason,
        evaluations=objective.evaluations,
        final_report=final_report,
    )
