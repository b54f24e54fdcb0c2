"""PatchMatch nearest-neighbour fields between two grayscale images.

Positions and offsets refer to patch *origins* (top-left corners). The field
covers every source origin with a full patch inside the source image, and
every stored offset points at a full patch inside the target.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class PatchMatchParams:
    patch_size: int = 7
    iterations: int = 5
    search_radius_decay: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.search_radius_decay < 1:
            raise ValueError("search_radius_decay must lie in (0, 1)")


@dataclass
class NNField:
    offsets: np.ndarray  # (h, w, 2) int: (dy, dx)
    distances: np.ndarray  # (h, w) patch SSD
    patch_size: int

    @property
    def height(self) -> int:
        return self.offsets.shape[0]

    @property
    def width(self) -> int:
        return self.offsets.shape[1]


def patch_distance(a: np.ndarray, ay: int, ax: int, b: np.ndarray, by: int, bx: int,
                   patch_size: int) -> float:
    p = patch_size
    for img, y, x in ((a, ay, ax), (b, by, bx)):
        if y < 0 or x < 0 or y + p > img.shape[0] or x + p > img.shape[1]:
            raise IndexError(f"patch at ({y}, {x}) of size {p} leaves image {img.shape}")
    d = a[ay:ay + p, ax:ax + p] - b[by:by + p, bx:bx + p]
    # sequential row-major accumulation, so the value never depends on how
    # numpy happens to split the reduction
    return float(np.cumsum(d * d)[-1])


def _check_sizes(src, tgt, p):
    for name, img in (("source", src), ("target", tgt)):
        if img.ndim != 2 or min(img.shape) < p:
            raise ValueError(f"{name} image {img.shape} smaller than patch size {p}")


def brute_force_nnf(src: np.ndarray, tgt: np.ndarray, patch_size: int) -> NNField:
    """Exact field; ties go to the smallest dy, then the smallest dx."""
    src = np.asarray(src, np.float64)
    tgt = np.asarray(tgt, np.float64)
    p = patch_size
    _check_sizes(src, tgt, p)
    sp = sliding_window_view(src, (p, p))
    tp = sliding_window_view(tgt, (p, p))
    hs, ws = sp.shape[:2]
    ht, wt = tp.shape[:2]
    tflat = tp.reshape(ht * wt, p * p)
    offsets = np.zeros((hs, ws, 2), np.int64)
    dist = np.zeros((hs, ws))
    for y in range(hs):
        for x in range(ws):
            d = np.sum((tflat - sp[y, x].reshape(1, -1)) ** 2, axis=1)
            best = int(np.argmin(d))  # row-major target scan == (dy, dx) order
            ty, tx = divmod(best, wt)
            offsets[y, x] = (ty - y, tx - x)
            dist[y, x] = patch_distance(src, y, x, tgt, ty, tx, p)
    return NNField(offsets, dist, p)


def compute_nnf(src: np.ndarray, tgt: np.ndarray, params: PatchMatchParams = PatchMatchParams(),
                history: list | None = None) -> NNField:
    """Randomized PatchMatch: random init, alternating scanline propagation, random search.

    If ``history`` is a list, a copy of the distance map is appended after
    initialization and after every iteration.
    """
    src = np.asarray(src, np.float64)
    tgt = np.asarray(tgt, np.float64)
    p = params.patch_size
    _check_sizes(src, tgt, p)
    hs, ws = src.shape[0] - p + 1, src.shape[1] - p + 1
    ht, wt = tgt.shape[0] - p + 1, tgt.shape[1] - p + 1

    seq = np.random.SeedSequence(params.rng_seed)
    init_seq, search_seq = seq.spawn(2)
    row_rngs = [np.random.default_rng(s) for s in init_seq.spawn(hs)]
    rng = np.random.default_rng(search_seq)

    def dist(y, x, ty, tx):
        return patch_distance(src, y, x, tgt, ty, tx, p)

    # absolute target origins
    ty_map = np.zeros((hs, ws), np.int64)
    tx_map = np.zeros((hs, ws), np.int64)
    d_map = np.zeros((hs, ws))
    for y in range(hs):
        ty_map[y] = row_rngs[y].integers(0, ht, ws)
        tx_map[y] = row_rngs[y].integers(0, wt, ws)
        for x in range(ws):
            d_map[y, x] = dist(y, x, ty_map[y, x], tx_map[y, x])
    if history is not None:
        history.append(d_map.copy())

    max_radius = max(tgt.shape)

    for it in range(params.iterations):
        if it % 2 == 0:
            ys, xs, step = range(hs), range(ws), -1
        else:
            ys, xs, step = range(hs - 1, -1, -1), range(ws - 1, -1, -1), 1
        for y in ys:
            for x in xs:
                best_d = d_map[y, x]
                best_y, best_x = ty_map[y, x], tx_map[y, x]
                # propagation from the already-visited horizontal and vertical neighbour
                for ny, nx in ((y, x + step), (y + step, x)):
                    if 0 <= ny < hs and 0 <= nx < ws:
                        cy = ty_map[ny, nx] + (y - ny)
                        cx = tx_map[ny, nx] + (x - nx)
                        if 0 <= cy < ht and 0 <= cx < wt:
                            d = dist(y, x, cy, cx)
                            if d < best_d:
                                best_d, best_y, best_x = d, cy, cx
                # random search around the current best, shrinking radius
                radius = float(max_radius)
                while radius >= 1:
                    r = int(radius)
                    # uniform inside the search window clipped to the target
                    cy = int(rng.integers(max(best_y - r, 0), min(best_y + r, ht - 1) + 1))
                    cx = int(rng.integers(max(best_x - r, 0), min(best_x + r, wt - 1) + 1))
                    d = dist(y, x, cy, cx)
                    if d < best_d:
                        best_d, best_y, best_x = d, cy, cx
                    radius *= params.search_radius_decay
                d_map[y, x] = best_d
                ty_map[y, x], tx_map[y, x] = best_y, best_x
        if history is not None:
            history.append(d_map.copy())

    yy, xx = np.mgrid[0:hs, 0:ws]
    offsets = np.stack([ty_map - yy, tx_map - xx], axis=-1)
    return NNField(offsets, d_map, p)


# --------------------------------------------------------------------------
# NNF1 dump and visualization
# --------------------------------------------------------------------------

_RECORD = np.dtype([("dy", "<i4"), ("dx", "<i4"), ("dist", "<f4")])


def save_nnf(nnf: NNField, path) -> None:
    rec = np.empty(nnf.height * nnf.width, _RECORD)
    rec["dy"] = nnf.offsets[..., 0].ravel()
    rec["dx"] = nnf.offsets[..., 1].ravel()
    rec["dist"] = nnf.distances.ravel()
    header = b"NNF1" + struct.pack("<III", nnf.height, nnf.width, nnf.patch_size)
    Path(path).write_bytes(header + rec.tobytes())


def load_nnf(path) -> NNField:
    buf = Path(path).read_bytes()
    if buf[:4] != b"NNF1":
        raise ValueError(f"{path}: not an NNF1 dump")
    h, w, p = struct.unpack("<III", buf[4:16])
    rec = np.frombuffer(buf[16:], _RECORD)
    if rec.size != h * w:
        raise ValueError(f"{path}: expected {h * w} records, found {rec.size}")
    offsets = np.stack([rec["dy"], rec["dx"]], axis=-1).astype(np.int64).reshape(h, w, 2)
    return NNField(offsets, rec["dist"].astype(np.float64).reshape(h, w), p)


def offset_visualization(nnf: NNField, tgt_shape) -> np.ndarray:
    """Offsets as intensity: 0.5 is no displacement, dy and dx weigh equally."""
    span_y = max(tgt_shape[0] - nnf.patch_size + 1, 1)
    span_x = max(tgt_shape[1] - nnf.patch_size + 1, 1)
    return 0.5 + 0.25 * nnf.offsets[..., 0] / span_y + 0.25 * nnf.offsets[..., 1] / span_x
