"""Pixel-space minimization of the texture objectives with Adam."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import featurenet as fn
from . import losses
from .imagecore import (GaussianKernel, default_sigma, identity_kernel, make_gaussian_kernel,
                        upsample_bicubic)
from .losses import LossBreakdown
from .masks import MaskSet

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 1e3
DEFAULT_BETA = 1.0
DEFAULT_LR = 0.02
DEFAULT_ITERATIONS = {"sr_global": 500, "sr_local": 500, "transfer": 500, "synth": 1000}


@dataclass
class ObjectiveConfig:
    mode: str
    weights: fn.NetworkWeights
    style: np.ndarray | None = None
    lr_input: np.ndarray | None = None  # c in the SR modes
    content: np.ndarray | None = None  # c in transfer mode
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    style_layers: dict[str, float] = field(
        default_factory=lambda: {name: 1.0 for name in losses.DEFAULT_STYLE_LAYERS})
    content_layer: str = losses.DEFAULT_CONTENT_LAYER
    factor: int = 1
    sigma: float | None = None  # None: 0.5 * factor; 0: no blur
    masks: MaskSet | None = None
    out_shape: tuple[int, int] | None = None  # synth mode
    init_noise: float = 0.01
    pooling: str = "avg"
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in losses.MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.alpha < 0 or self.beta < 0 or not self.alpha + self.beta > 0:
            raise ValueError("alpha and beta must be non-negative with a positive sum")
        needs = {"transfer": ("style", "content"), "synth": ("style", "out_shape"),
                 "sr_global": ("style", "lr_input"), "sr_local": ("style", "lr_input", "masks")}
        missing = [n for n in needs[self.mode] if getattr(self, n) is None]
        if missing:
            raise ValueError(f"mode {self.mode} requires {', '.join(missing)}")
        if not self.style_layers:
            raise ValueError("at least one style layer is required")
        for name, wl in self.style_layers.items():
            fn.layer_spec(name)
            if not wl > 0:
                raise ValueError(f"style layer weight for {name} must be positive")
        if int(self.factor) != self.factor or self.factor < 1:
            raise ValueError(f"factor must be an integer >= 1, got {self.factor}")

    @property
    def kernel(self) -> GaussianKernel:
        sigma = default_sigma(self.factor) if self.sigma is None else self.sigma
        return identity_kernel() if sigma == 0 else make_gaussian_kernel(sigma)

    @property
    def output_shape(self) -> tuple[int, int]:
        if self.mode in ("sr_global", "sr_local"):
            h, w = self.lr_input.shape
            return h * self.factor, w * self.factor
        if self.mode == "transfer":
            return self.content.shape
        return tuple(self.out_shape)

    @property
    def deepest(self) -> str:
        names = list(self.style_layers)
        if self.mode == "transfer":
            names.append(self.content_layer)
        return max(names, key=fn.LAYER_INDEX.__getitem__)


class Objective:
    """Evaluates an ObjectiveConfig, caching everything that does not depend on x."""

    def __init__(self, cfg: ObjectiveConfig, cache: bool = True):
        self.cfg = cfg
        self.cache = cache
        self.kernel = cfg.kernel
        self.dtype = np.dtype(cfg.dtype)
        need = fn.min_input_size(cfg.deepest)
        for what, shape in (("output", cfg.output_shape), ("style image", cfg.style.shape)):
            if min(shape) < need:
                raise ValueError(
                    f"{what} {shape[0]}x{shape[1]} too small for layer {cfg.deepest}; "
                    f"need at least {need}x{need}")
        if cfg.mode == "sr_local":
            mh, mw = cfg.masks.pairs[0][0].shape
            sh, sw = cfg.masks.pairs[0][1].shape
            if (mh, mw) != cfg.output_shape or (sh, sw) != cfg.style.shape:
                raise ValueError("mask dimensions do not match the output and style images")
        self._cached = {}

    def _forward(self, img: np.ndarray, deepest: str) -> fn.ActivationStack:
        return fn.forward(self.cfg.weights, img, deepest, self.cfg.pooling, self.dtype)

    def _get(self, key, build):
        if not self.cache:
            return build()
        if key not in self._cached:
            self._cached[key] = build()
        return self._cached[key]

    def style_target(self) -> losses.StyleTarget:
        cfg = self.cfg
        return self._get("style", lambda: losses.build_style_target(
            self._forward(cfg.style, max(cfg.style_layers, key=fn.LAYER_INDEX.__getitem__)),
            cfg.style_layers))

    def masked_target(self) -> losses.MaskedStyleTarget:
        cfg = self.cfg
        return self._get("masked", lambda: losses.build_masked_style_target(
            cfg.masks.pairs,
            self._forward(cfg.style, max(cfg.style_layers, key=fn.LAYER_INDEX.__getitem__)),
            cfg.style_layers))

    def content_acts(self) -> fn.ActivationStack:
        cfg = self.cfg
        return self._get("content", lambda: self._forward(cfg.content, cfg.content_layer))

    def evaluate(self, x: np.ndarray) -> tuple[LossBreakdown, np.ndarray]:
        cfg = self.cfg
        x = np.asarray(x, dtype=np.float64)
        if x.shape != tuple(cfg.output_shape):
            raise ValueError(f"latent image {x.shape} does not match expected {cfg.output_shape}")
        acts = self._forward(x, cfg.deepest)

        faith = content = None
        if cfg.mode == "sr_local":
            style, sgrads, per_layer = losses.masked_style_loss(
                cfg.masks.pairs, None, acts, target=self.masked_target())
            k = cfg.masks.k
        else:
            style, sgrads, per_layer = losses.style_loss(self.style_target(), acts)
            k = 1
        style_px = fn.backward(cfg.weights, acts, sgrads)
        beta = cfg.beta / k if cfg.mode == "sr_local" else cfg.beta

        if cfg.mode in ("sr_global", "sr_local"):
            faith, faith_px = losses.faithfulness_loss(x, cfg.lr_input, cfg.factor, self.kernel)
            grad = cfg.alpha * faith_px + beta * style_px
        elif cfg.mode == "transfer":
            content, cgrad = losses.content_loss(self.content_acts(), acts, cfg.content_layer)
            content_px = fn.backward(cfg.weights, acts, {cfg.content_layer: cgrad})
            grad = cfg.alpha * content_px + beta * style_px
        else:
            grad = beta * style_px

        breakdown = losses.assemble_objective_value(
            cfg.alpha, cfg.beta, cfg.mode, faithfulness=faith, style=style, content=content,
            k=k, per_layer=per_layer)
        return breakdown, grad


def evaluate(cfg: ObjectiveConfig, x: np.ndarray) -> tuple[LossBreakdown, np.ndarray]:
    """One-off evaluation without target caching."""
    return Objective(cfg, cache=False).evaluate(x)


def init_latent(cfg: ObjectiveConfig, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if cfg.mode == "transfer":
        return np.array(cfg.content, dtype=np.float64)
    if cfg.mode == "synth":
        return rng.uniform(0.4, 0.6, size=cfg.output_shape)
    x = upsample_bicubic(cfg.lr_input, cfg.factor)
    if cfg.init_noise > 0:
        x = x + cfg.init_noise * rng.standard_normal(x.shape)
    return x


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

@dataclass
class OptimState:
    x: np.ndarray
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    loss_trace: list[LossBreakdown] = field(default_factory=list)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.x)
        if self.v is None:
            self.v = np.zeros_like(self.x)


def adam_step(state: OptimState, grad: np.ndarray, lr: float = DEFAULT_LR, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> OptimState:
    if grad.shape != state.x.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match iterate {state.x.shape}")
    step = state.step + 1
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError(f"non-finite gradient at iteration {step}")
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    x = state.x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return replace(state, x=x, step=step, m=m, v=v, loss_trace=list(state.loss_trace))


def run(cfg: ObjectiveConfig, iterations: int, lr: float = DEFAULT_LR, seed: int = 0,
        objective: Objective | None = None, x0: np.ndarray | None = None, log_every: int = 50):
    """Minimize from ``init_latent`` (or ``x0``); returns (x, trace), x unclamped."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    obj = objective or Objective(cfg)
    state = OptimState(init_latent(cfg, seed) if x0 is None else np.array(x0, dtype=np.float64))
    for _ in range(iterations):
        breakdown, grad = obj.evaluate(state.x)
        state = adam_step(state, grad, lr)
        state.loss_trace.append(breakdown)
        if log_every and (state.step % log_every == 0 or state.step == 1):
            log.info("step %d total %.6g", state.step, breakdown.total)
    return state.x, state.loss_trace


def write_trace(trace, path) -> None:
    def cell(v):
        return "" if v is None else repr(float(v))

    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "total", "faithfulness", "style", "content"])
        for i, b in enumerate(trace):
            w.writerow([i, cell(b.total), cell(b.faithfulness), cell(b.style), cell(b.content)])
