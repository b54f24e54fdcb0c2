"""Energy terms: Gram style loss (global and masked), content loss, faithfulness.

Feature maps are ``(C, H, W)`` arrays. Gram matrices are left unnormalized;
normalization happens inside the loss, by pixel counts on the optimized side.
When the example side covers a different number of pixels, its Gram matrix
is rescaled by ``count_x / count_s`` so both sides are compared as per-pixel
averages. With equal counts the rescale is skipped and the plain formula
applies unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .featurenet import ActivationStack, LAYER_INDEX
from .imagecore import GaussianKernel, downsample, downsample_adjoint

log = logging.getLogger(__name__)

DEFAULT_STYLE_LAYERS = ("conv1_1", "pool1", "pool2", "pool3", "pool4", "pool5")
DEFAULT_CONTENT_LAYER = "conv4_2"

MODES = ("transfer", "synth", "sr_global", "sr_local")


def gram(x: np.ndarray) -> np.ndarray:
    """F @ F.T of the (C, H*W) matricized map, symmetrized exactly."""
    f = x.reshape(x.shape[0], -1)
    g = f @ f.T
    upper = np.triu(g)
    return upper + np.triu(g, 1).T


def _style_term(fx: np.ndarray, target: np.ndarray, count_x: float, count_s: float, weight: float):
    """Value and dE/dfx for one layer; ``fx`` is (N, M) and already masked if masking."""
    n = fx.shape[0]
    gx = gram(fx)
    tgt = target if count_x == count_s else target * (count_x / count_s)
    diff = gx - tgt
    denom = float(n) ** 2 * float(count_x) ** 2
    value = weight / (4.0 * denom) * float(np.sum(diff * diff))
    grad = (weight / denom) * (diff @ fx)
    return value, grad


# --------------------------------------------------------------------------
# global style loss
# --------------------------------------------------------------------------

@dataclass
class StyleLayerTarget:
    gram: np.ndarray
    weight: float
    count: int  # M_l of the example image, recorded when the target was built


@dataclass
class StyleTarget:
    layers: dict[str, StyleLayerTarget]

    @property
    def deepest(self) -> str:
        return max(self.layers, key=LAYER_INDEX.__getitem__)


def build_style_target(s_acts: ActivationStack, layer_weights: dict[str, float]) -> StyleTarget:
    out = {}
    for name, wl in layer_weights.items():
        if not wl > 0:
            raise ValueError(f"layer weight for {name} must be positive, got {wl}")
        s = s_acts[name]
        out[name] = StyleLayerTarget(gram(s), float(wl), s.shape[1] * s.shape[2])
    return StyleTarget(out)


def style_loss(targets: StyleTarget, acts: ActivationStack):
    """Returns (value, {layer: gradient}, {layer: value})."""
    total = 0.0
    grads, per_layer = {}, {}
    for name, t in targets.layers.items():
        if name not in acts:
            raise KeyError(f"style layer {name} missing from activations")
        x = acts[name]
        fx = x.reshape(x.shape[0], -1)
        v, g = _style_term(fx, t.gram, fx.shape[1], t.count, t.weight)
        per_layer[name] = v
        total += v
        grads[name] = g.reshape(x.shape)
    return total, grads, per_layer


def gram_distance(targets: StyleTarget, acts: ActivationStack) -> dict[str, float]:
    """Per-layer weighted Gram distance (the style loss split by layer)."""
    return style_loss(targets, acts)[2]


# --------------------------------------------------------------------------
# content loss
# --------------------------------------------------------------------------

def content_loss(c_acts: ActivationStack, x_acts: ActivationStack, layer: str = DEFAULT_CONTENT_LAYER):
    c, x = c_acts[layer], x_acts[layer]
    if c.shape != x.shape:
        raise ValueError(f"content layer {layer}: shapes {c.shape} and {x.shape} differ")
    d = x - c
    return 0.5 * float(np.sum(d * d)), d


# --------------------------------------------------------------------------
# faithfulness
# --------------------------------------------------------------------------

def faithfulness_loss(x: np.ndarray, c: np.ndarray, f: int, k: GaussianKernel):
    """||downsample(x) - c||^2 (sum of squares) and its pixel gradient."""
    h, w = x.shape
    if h % f or w % f or (h // f, w // f) != c.shape:
        raise ValueError(f"latent {h}x{w} at factor {f} does not match LR input {c.shape}")
    r = downsample(x, f, k) - c
    return float(np.sum(r * r)), 2.0 * downsample_adjoint(r, f, k, h, w)


# --------------------------------------------------------------------------
# masked (local) style loss
# --------------------------------------------------------------------------

def _check_binary(m: np.ndarray, what: str = "mask") -> None:
    if not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{what} is not binary")


def nn_indices(n_in: int, n_out: int) -> np.ndarray:
    """Source index for each output sample of a nearest-neighbour resize."""
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)


def resize_mask_nn(m: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    _check_binary(m)
    h, w = m.shape
    return m[np.ix_(nn_indices(h, target_h), nn_indices(w, target_w))]


@dataclass
class MaskedStyleTarget:
    """Per-pair, per-layer Gram matrices of the masked example image."""
    layer_weights: dict[str, float]
    grams: list[dict[str, np.ndarray | None]]
    counts: list[dict[str, int]]
    skipped: set = field(default_factory=set)


def build_masked_style_target(mask_pairs, s_acts: ActivationStack,
                              layer_weights: dict[str, float]) -> MaskedStyleTarget:
    pairs = list(mask_pairs)
    if not pairs:
        raise ValueError("mask set is empty")
    grams, counts = [], []
    for k, (_, ms) in enumerate(pairs):
        _check_binary(np.asarray(ms), f"style mask {k}")
        gk, ck = {}, {}
        for name in layer_weights:
            s = s_acts[name]
            r = resize_mask_nn(ms, *s.shape[1:]).astype(s.dtype)
            ck[name] = int(r.sum())
            gk[name] = gram(s * r) if ck[name] else None
        grams.append(gk)
        counts.append(ck)
    return MaskedStyleTarget(dict(layer_weights), grams, counts)


def masked_style_loss(mask_pairs, s_acts: ActivationStack | None, x_acts: ActivationStack,
                      layer_weights: dict[str, float] | None = None,
                      target: MaskedStyleTarget | None = None):
    """Sum over mask pairs of the style loss restricted to each pair's regions.

    Returns (value, {layer: gradient}, {layer: value}). Pairs whose resized
    mask is empty at a layer contribute nothing there.
    """
    pairs = list(mask_pairs)
    if not pairs:
        raise ValueError("mask set is empty")
    if target is None:
        target = build_masked_style_target(pairs, s_acts, layer_weights)
    weights = target.layer_weights

    total = 0.0
    grads: dict[str, np.ndarray] = {}
    per_layer = {name: 0.0 for name in weights}
    for k, (mx, _) in enumerate(pairs):
        _check_binary(np.asarray(mx), f"output mask {k}")
        for name, wl in weights.items():
            x = x_acts[name]
            r = resize_mask_nn(mx, *x.shape[1:]).astype(x.dtype)
            cx = int(r.sum())
            cs = target.counts[k][name]
            if cx == 0 or cs == 0:
                if (k, name) not in target.skipped:
                    target.skipped.add((k, name))
                    log.warning("mask pair %d is empty at layer %s; skipped there", k, name)
                continue
            xm = x * r
            fx = xm.reshape(x.shape[0], -1)
            v, g = _style_term(fx, target.grams[k][name], cx, cs, wl)
            g = g.reshape(x.shape) * r
            total += v
            per_layer[name] += v
            grads[name] = g if name not in grads else grads[name] + g
    return total, grads, per_layer


# --------------------------------------------------------------------------
# objective assembly
# --------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    total: float
    faithfulness: float | None = None
    style: float | None = None
    content: float | None = None
    per_layer: dict[str, float] = field(default_factory=dict)


def assemble_objective_value(alpha: float, beta: float, mode: str, *, faithfulness=None,
                             style=None, content=None, k: int = 1, per_layer=None) -> LossBreakdown:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    need = {"transfer": ("content", "style"), "synth": ("style",),
            "sr_global": ("faithfulness", "style"), "sr_local": ("faithfulness", "style")}[mode]
    given = {"faithfulness": faithfulness, "style": style, "content": content}
    missing = [t for t in need if given[t] is None]
    if missing:
        raise ValueError(f"mode {mode} needs term(s): {', '.join(missing)}")
    if mode == "transfer":
        total = alpha * content + beta * style
    elif mode == "synth":
        total = beta * style
    elif mode == "sr_global":
        total = alpha * faithfulness + beta * style
    else:
        if k < 1:
            raise ValueError("sr_local needs at least one mask pair")
        total = alpha * faithfulness + (beta / k) * style
    return LossBreakdown(total, faithfulness, style, content, dict(per_layer or {}))
