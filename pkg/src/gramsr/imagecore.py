"""Grayscale images, file I/O and the blur-decimate image formation model.

Images are plain 2-D ``float64`` arrays of shape ``(H, W)`` with nominal range
[0, 1]. Values outside that range are allowed everywhere except on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

LUMA_601 = (0.299, 0.587, 0.114)


class ImageFormatError(ValueError):
    pass


def as_image(a) -> np.ndarray:
    img = np.asarray(a, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    return img


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM and return its Rec. 601 luma in [0, 1]."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise ImageFormatError(f"{path}: unsupported bit depth (mode {mode}); need 8-bit")
            if mode == "1":
                im = im.convert("L")
                mode = "L"
            if mode not in ("L", "LA", "RGB", "RGBA"):
                raise ImageFormatError(f"{path}: unsupported pixel mode {mode}")
            arr = np.asarray(im, dtype=np.float64)
    except ImageFormatError:
        raise
    except (OSError, SyntaxError) as e:
        raise ImageFormatError(f"{path}: cannot read image ({e})") from e

    if arr.ndim == 3:
        if arr.shape[2] >= 3:
            arr = LUMA_601[0] * arr[..., 0] + LUMA_601[1] * arr[..., 1] + LUMA_601[2] * arr[..., 2]
        else:  # LA
            arr = arr[..., 0]
    return arr / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit codes."""
    v = np.clip(as_image(img), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    path = Path(path)
    codes = quantize(img)
    fmt = {".png": "PNG", ".pgm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"{path}: unsupported output extension (use .png or .pgm)")
    try:
        PILImage.fromarray(codes, mode="L").save(path, format=fmt)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e


# --------------------------------------------------------------------------
# Gaussian kernel and blur
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    taps: np.ndarray  # (2r+1, 2r+1), sums to 1

    @property
    def size(self) -> int:
        return 2 * self.radius + 1


def make_gaussian_kernel(sigma: float) -> GaussianKernel:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    d = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    taps.setflags(write=False)
    return GaussianKernel(float(sigma), radius, taps)


def identity_kernel() -> GaussianKernel:
    """Single-tap kernel; the limit sigma -> 0."""
    taps = np.ones((1, 1))
    taps.setflags(write=False)
    return GaussianKernel(0.0, 0, taps)


def default_sigma(f: int) -> float:
    return 0.5 * f


def _reflect_index(h: int, w: int, r: int) -> np.ndarray:
    # Flat source index of every pixel of the reflect-padded image. Used for
    # both the padding and its transpose so the two stay exact adjoints.
    return np.pad(np.arange(h * w).reshape(h, w), r, mode="reflect")


def _correlate_valid(padded: np.ndarray, taps: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    out = np.zeros((out_h, out_w))
    kh, kw = taps.shape
    for i in range(kh):
        for j in range(kw):
            out += taps[i, j] * padded[i:i + out_h, j:j + out_w]
    return out


def blur(img: np.ndarray, k: GaussianKernel) -> np.ndarray:
    """Correlate with ``k.taps`` under whole-sample symmetric reflection."""
    img = as_image(img)
    h, w = img.shape
    if k.radius == 0:
        return img * k.taps[0, 0]
    if k.radius >= h or k.radius >= w:
        raise ValueError(f"kernel radius {k.radius} too large for {h}x{w} image")
    padded = img.ravel()[_reflect_index(h, w, k.radius)]
    return _correlate_valid(padded, k.taps, h, w)


def blur_adjoint(img: np.ndarray, k: GaussianKernel) -> np.ndarray:
    img = as_image(img)
    h, w = img.shape
    if k.radius == 0:
        return img * k.taps[0, 0]
    r = k.radius
    # transpose of valid correlation: full correlation with the flipped taps
    z = np.pad(img, 2 * r)
    z = _correlate_valid(z, k.taps[::-1, ::-1], h + 2 * r, w + 2 * r)
    # transpose of the reflect padding: fold mirrored samples back
    idx = _reflect_index(h, w, r)
    return np.bincount(idx.ravel(), weights=z.ravel(), minlength=h * w).reshape(h, w)


# --------------------------------------------------------------------------
# blur + decimate and its adjoint
# --------------------------------------------------------------------------

def _check_factor(f: int) -> int:
    if int(f) != f or f < 1:
        raise ValueError(f"factor must be an integer >= 1, got {f}")
    return int(f)


def downsample(img: np.ndarray, f: int, k: GaussianKernel) -> np.ndarray:
    img = as_image(img)
    f = _check_factor(f)
    h, w = img.shape
    if h % f or w % f:
        raise ValueError(f"image {h}x{w} not divisible by factor {f}; crop first")
    return blur(img, k)[::f, ::f].copy()


def downsample_adjoint(residual: np.ndarray, f: int, k: GaussianKernel, hr_h: int, hr_w: int) -> np.ndarray:
    residual = as_image(residual)
    f = _check_factor(f)
    if hr_h % f or hr_w % f or residual.shape != (hr_h // f, hr_w // f):
        raise ValueError(
            f"residual shape {residual.shape} does not match {hr_h}x{hr_w} at factor {f}")
    up = np.zeros((hr_h, hr_w))
    up[::f, ::f] = residual
    return blur_adjoint(up, k)


def crop_to_multiple(img: np.ndarray, f: int) -> np.ndarray:
    h, w = img.shape
    return img[: h - h % f, : w - w % f]


# --------------------------------------------------------------------------
# bicubic upsampling
# --------------------------------------------------------------------------

def _cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    return np.where(
        t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
        np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0))


def _bicubic_matrix(n: int, f: int) -> np.ndarray:
    out = np.zeros((n * f, n))
    src = (np.arange(n * f) + 0.5) / f - 0.5
    base = np.floor(src).astype(int)
    for off in (-1, 0, 1, 2):
        j = base + off
        wts = _cubic(src - j)
        np.add.at(out, (np.arange(n * f), np.clip(j, 0, n - 1)), wts)
    return out


def upsample_bicubic(img: np.ndarray, f: int) -> np.ndarray:
    """Catmull-Rom upsampling by an integer factor (half-pixel centers, edge clamp)."""
    img = as_image(img)
    f = _check_factor(f)
    if f == 1:
        return img.copy()
    h, w = img.shape
    return _bicubic_matrix(h, f) @ img @ _bicubic_matrix(w, f).T
