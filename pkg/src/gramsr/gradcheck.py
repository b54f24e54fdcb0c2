"""Finite-difference verification of every hand-written gradient.

Errors are reported as ``max|analytic - numeric| / max|numeric|`` over the
checked coordinates or directions. Everything runs in float64 on seeded
random weights and images of 16-24 pixels.

Pixel-space checks step by ``NET_STEP / weights.scale`` so the perturbation
seen by the first conv is the same whatever the input scaling. Larger steps
straddle ReLU kinks and report truncation error rather than gradient bugs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import featurenet as fn
from . import losses
from .imagecore import make_gaussian_kernel
from .masks import MaskSet
from .optimizer import Objective, ObjectiveConfig

TOLERANCE = 1e-3
NET_STEP = 1e-4

_GC_STYLE_LAYERS = {"conv1_1": 1.0, "pool1": 1.0, "pool2": 1.0, "pool3": 1.0}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tolerance)

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<40s} max rel err {self.error:.3e} (tol {self.tolerance:.0e})"


def relative_max_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, np.float64)
    numeric = np.asarray(numeric, np.float64)
    scale = np.max(np.abs(numeric))
    if scale == 0:
        return float(np.max(np.abs(analytic)))
    return float(np.max(np.abs(analytic - numeric)) / scale)


def numeric_gradient(fun, x: np.ndarray, h: float | None = None) -> np.ndarray:
    """Central differences on every coordinate; default step 1e-3 * max(1, |x_i|)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        step = h if h is not None else 1e-3 * max(1.0, abs(flat[i]))
        old = flat[i]
        flat[i] = old + step
        fp = fun(x)
        flat[i] = old - step
        fm = fun(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def directional_errors(fun, x: np.ndarray, grad: np.ndarray, rng, n_dirs: int = 20,
                       h: float = 1e-3) -> float:
    """Compare <grad, d> with central differences along random unit directions."""
    ana, num = [], []
    for _ in range(n_dirs):
        d = rng.standard_normal(x.shape)
        d /= np.linalg.norm(d)
        num.append((fun(x + h * d) - fun(x - h * d)) / (2 * h))
        ana.append(float(np.sum(grad * d)))
    return relative_max_error(ana, num)


# --------------------------------------------------------------------------
# individual checks
# --------------------------------------------------------------------------

def _fake_stack(layers: dict) -> fn.ActivationStack:
    return fn.ActivationStack(np.zeros((3, 1, 1)), dict(layers))


def check_content(rng) -> CheckResult:
    c = rng.standard_normal((8, 6, 6))
    x = rng.standard_normal((8, 6, 6))
    cs = _fake_stack({"conv4_2": c})
    _, g = losses.content_loss(cs, _fake_stack({"conv4_2": x}))
    num = numeric_gradient(lambda z: losses.content_loss(cs, _fake_stack({"conv4_2": z}))[0], x)
    return CheckResult("content loss / feature map", relative_max_error(g, num))


def check_style(rng) -> CheckResult:
    s = {"conv1_1": np.abs(rng.standard_normal((4, 6, 6))), "pool1": np.abs(rng.standard_normal((6, 3, 3)))}
    x = {k: np.abs(rng.standard_normal(v.shape)) for k, v in s.items()}
    tgt = losses.build_style_target(_fake_stack(s), {"conv1_1": 1.0, "pool1": 2.0})
    _, grads, _ = losses.style_loss(tgt, _fake_stack(x))
    err = 0.0
    for name in s:
        def f(z, name=name):
            return losses.style_loss(tgt, _fake_stack({**x, name: z}))[0]
        err = max(err, relative_max_error(grads[name], numeric_gradient(f, x[name])))
    return CheckResult("style loss / feature maps", err)


def _two_overlapping_masks(shape, style_shape):
    h, w = shape
    top = np.zeros(shape)
    top[: 2 * h // 3] = 1
    bottom = np.zeros(shape)
    bottom[h // 3:] = 1
    hs, ws = style_shape
    left = np.zeros(style_shape)
    left[:, : 2 * ws // 3] = 1
    right = np.zeros(style_shape)
    right[:, ws // 3:] = 1
    return MaskSet([(top, left), (bottom, right)], "manual")


def check_masked_style(rng) -> CheckResult:
    s = {"conv1_1": np.abs(rng.standard_normal((4, 6, 6))), "pool1": np.abs(rng.standard_normal((5, 3, 3)))}
    x = {k: np.abs(rng.standard_normal(v.shape)) for k, v in s.items()}
    masks = _two_overlapping_masks((6, 6), (6, 6))
    lw = {"conv1_1": 1.0, "pool1": 1.0}
    sacts = _fake_stack(s)
    _, grads, _ = losses.masked_style_loss(masks, sacts, _fake_stack(x), lw)
    err = 0.0
    for name in s:
        def f(z, name=name):
            return losses.masked_style_loss(masks, sacts, _fake_stack({**x, name: z}), lw)[0]
        err = max(err, relative_max_error(grads[name], numeric_gradient(f, x[name])))
    return CheckResult("masked style loss / feature maps", err)


def check_faithfulness(rng) -> CheckResult:
    k = make_gaussian_kernel(1.5)
    x = rng.random((12, 12))
    c = rng.random((4, 4))
    _, g = losses.faithfulness_loss(x, c, 3, k)
    num = numeric_gradient(lambda z: losses.faithfulness_loss(z, c, 3, k)[0], x)
    return CheckResult("faithfulness / pixels", relative_max_error(g, num))


def check_network(weights, rng) -> CheckResult:
    img = rng.random((16, 16))
    acts = fn.forward(weights, img, "pool3")
    cot = {n: rng.standard_normal(acts[n].shape) for n in ("conv1_1", "conv2_2", "pool2", "pool3")}

    def f(z):
        a = fn.forward(weights, z, "pool3")
        return sum(float(np.sum(cot[n] * a[n])) for n in cot)

    g = fn.backward(weights, acts, cot)
    err = directional_errors(f, img, g, rng, h=NET_STEP / weights.scale)
    return CheckResult("network backward / pixels", err)


def _objective_check(name, cfg: ObjectiveConfig, x, rng) -> CheckResult:
    obj = Objective(cfg)
    _, g = obj.evaluate(x)
    err = directional_errors(lambda z: obj.evaluate(z)[0].total, x, g, rng,
                             h=NET_STEP / cfg.weights.scale)
    return CheckResult(name, err)


def check_objectives(weights, rng) -> list[CheckResult]:
    out = []
    style = rng.random((24, 24))
    content = rng.random((24, 24))
    cfg = ObjectiveConfig("transfer", weights, style=style, content=content, alpha=1.0, beta=1e3,
                          style_layers=dict(_GC_STYLE_LAYERS), dtype="float64")
    out.append(_objective_check("objective transfer / pixels", cfg, content + 0.05 * rng.standard_normal(content.shape), rng))

    lr_in = rng.random((8, 8))
    x0 = np.kron(lr_in, np.ones((3, 3))) + 0.05 * rng.standard_normal((24, 24))
    cfg = ObjectiveConfig("sr_global", weights, style=style, lr_input=lr_in, factor=3, sigma=1.5,
                          style_layers=dict(_GC_STYLE_LAYERS), dtype="float64", alpha=10.0)
    out.append(_objective_check("objective sr_global / pixels", cfg, x0, rng))

    masks = _two_overlapping_masks((24, 24), style.shape)
    cfg = ObjectiveConfig("sr_local", weights, style=style, lr_input=lr_in, factor=3, sigma=1.5,
                          masks=masks, style_layers=dict(_GC_STYLE_LAYERS), dtype="float64", alpha=10.0)
    out.append(_objective_check("objective sr_local / pixels", cfg, x0, rng))

    cfg = ObjectiveConfig("synth", weights, style=style, out_shape=(24, 24),
                          style_layers=dict(_GC_STYLE_LAYERS), dtype="float64")
    out.append(_objective_check("objective synth / pixels", cfg, rng.uniform(0.4, 0.6, (24, 24)), rng))
    return out


def run_all(seed: int = 0, weights: fn.NetworkWeights | None = None) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    weights = weights if weights is not None else fn.init_random_weights(seed)
    results = [check_content(rng), check_style(rng), check_masked_style(rng), check_faithfulness(rng),
               check_network(weights, rng)]
    results.extend(check_objectives(weights, rng))
    return results
