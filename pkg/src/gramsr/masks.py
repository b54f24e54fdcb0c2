"""Paired binary masks for local texture transfer.

A pair ``(m_x, m_s)`` selects a region of the output image and the region of
the example image whose statistics it should take on. Pairs may overlap, but
together the output masks must cover every output pixel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .imagecore import load_image
from .losses import nn_indices
from .patchmatch import NNField

log = logging.getLogger(__name__)


class MaskCoverageError(ValueError):
    def __init__(self, uncovered: int, total: int):
        super().__init__(f"output masks leave {uncovered} of {total} pixels uncovered")
        self.uncovered = uncovered


@dataclass
class MaskSet:
    pairs: list[tuple[np.ndarray, np.ndarray]]
    provenance: str  # "manual" or "patchmatch"
    borrowed: list[int] = field(default_factory=list)  # cells that copied a neighbour's m_s

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a mask set needs at least one pair")
        out_shape = self.pairs[0][0].shape
        style_shape = self.pairs[0][1].shape
        for k, (mx, ms) in enumerate(self.pairs):
            if mx.shape != out_shape or ms.shape != style_shape:
                raise ValueError(f"mask pair {k} has inconsistent dimensions")
            for m in (mx, ms):
                if not np.all((m == 0) | (m == 1)):
                    raise ValueError(f"mask pair {k} is not binary")
        covered = np.zeros(out_shape, bool)
        for mx, _ in self.pairs:
            covered |= mx > 0
        if not covered.all():
            raise MaskCoverageError(int((~covered).sum()), covered.size)

    @property
    def k(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


def full_masks(out_shape, style_shape) -> MaskSet:
    """The single all-ones pair; local transfer then equals global transfer."""
    return MaskSet([(np.ones(out_shape), np.ones(style_shape))], "manual")


def binarize(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img) > 0.5).astype(np.float64)


def resize_nn(m: np.ndarray, h: int, w: int) -> np.ndarray:
    if m.shape == (h, w):
        return m.copy()
    return m[np.ix_(nn_indices(m.shape[0], h), nn_indices(m.shape[1], w))]


def dilate(m: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a (2r+1)x(2r+1) square; nothing enters from outside."""
    if radius < 0:
        raise ValueError("dilation radius must be >= 0")
    m = np.asarray(m, dtype=np.float64)
    if radius == 0:
        return m.copy()
    out = m
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        p = np.pad(out, pad)
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for s in range(2 * radius + 1):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(s, s + n)
            np.maximum(acc, p[tuple(sl)], out=acc)
        out = acc
    return out


def load_manual_masks(x_paths, s_paths, out_h: int, out_w: int, style_h: int, style_w: int,
                      dilation_radius: int = 0) -> MaskSet:
    x_paths, s_paths = list(x_paths), list(s_paths)
    if len(x_paths) != len(s_paths):
        raise ValueError(f"{len(x_paths)} output masks but {len(s_paths)} style masks")
    if not x_paths:
        raise ValueError("no masks given")
    pairs = []
    for px, ps in zip(x_paths, s_paths):
        mx = dilate(resize_nn(binarize(load_image(px)), out_h, out_w), dilation_radius)
        ms = dilate(resize_nn(binarize(load_image(ps)), style_h, style_w), dilation_radius)
        pairs.append((mx, ms))
    return MaskSet(pairs, "manual")


def _stamp(m: np.ndarray, cy: int, cx: int, size: int) -> None:
    y0, x0 = cy - size // 2, cx - size // 2
    m[max(y0, 0):max(y0 + size, 0), max(x0, 0):max(x0 + size, 0)] = 1.0


def generate_patchmatch_masks(nnf: NNField, f: int, out_h: int, out_w: int, style_h: int, style_w: int,
                              cell_size: int, stamp_size: int, dilation_radius: int) -> MaskSet:
    """One pair per output cell, built from the low-resolution field.

    Every LR input pixel takes the offset of the patch centred on it (border
    pixels use the nearest valid patch). The pixel is pooled into the cell
    containing its scaled position, and a ``stamp_size`` square is stamped
    into that cell's style mask around the scaled match location.
    """
    if cell_size < 1 or stamp_size < 1:
        raise ValueError("cell_size and stamp_size must be >= 1")
    if out_h % f or out_w % f or style_h % f or style_w % f:
        raise ValueError(f"output {out_h}x{out_w} / style {style_h}x{style_w} not divisible by {f}")
    lr_h, lr_w = out_h // f, out_w // f
    st_h, st_w = style_h // f, style_w // f
    p = nnf.patch_size
    r = p // 2
    if (nnf.height, nnf.width) != (lr_h - p + 1, lr_w - p + 1):
        raise ValueError(
            f"field of {nnf.height}x{nnf.width} origins does not match a {lr_h}x{lr_w} input with patch {p}")
    ty = np.arange(nnf.height)[:, None] + nnf.offsets[..., 0]
    tx = np.arange(nnf.width)[None, :] + nnf.offsets[..., 1]
    if ty.min() < 0 or tx.min() < 0 or ty.max() > st_h - p or tx.max() > st_w - p:
        raise ValueError(f"field offsets leave the {st_h}x{st_w} low-resolution style image")

    rows = -(-out_h // cell_size)
    cols = -(-out_w // cell_size)
    style_masks = [np.zeros((style_h, style_w)) for _ in range(rows * cols)]
    hit = np.zeros(rows * cols, bool)
    for y in range(lr_h):
        oy = min(max(y - r, 0), nnf.height - 1)
        for x in range(lr_w):
            ox = min(max(x - r, 0), nnf.width - 1)
            dy, dx = nnf.offsets[oy, ox]
            sy = min(max(y + dy, 0), st_h - 1)
            sx = min(max(x + dx, 0), st_w - 1)
            k = (y * f // cell_size) * cols + (x * f // cell_size)
            _stamp(style_masks[k], f * sy, f * sx, stamp_size)
            hit[k] = True

    borrowed = []
    centers = np.array([((i + 0.5) * cell_size, (j + 0.5) * cell_size) for i in range(rows) for j in range(cols)])
    donors = np.flatnonzero(hit)
    for k in np.flatnonzero(~hit):
        d = np.sum((centers[donors] - centers[k]) ** 2, axis=1)
        src = donors[int(np.argmin(d))]
        style_masks[k] = style_masks[src].copy()
        borrowed.append(int(k))
    if borrowed:
        log.info("%d cells held no field positions and borrowed a neighbour's style mask", len(borrowed))

    pairs = []
    for i in range(rows):
        for j in range(cols):
            mx = np.zeros((out_h, out_w))
            mx[i * cell_size:(i + 1) * cell_size, j * cell_size:(j + 1) * cell_size] = 1.0
            ms = dilate(style_masks[i * cols + j], dilation_radius)
            pairs.append((mx, ms))
    return MaskSet(pairs, "patchmatch", borrowed)
