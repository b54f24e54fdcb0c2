"""VGG-19 convolutional trunk with hand-written forward and input-gradient passes.

Every ``convX_Y`` layer includes its ReLU, so the activation recorded under a
conv name is the rectified output. Pool layers are 2x2/stride 2, average by
default (``pooling="max"`` restores the original VGG behaviour).
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GMW1"
VERSION = 1

# block widths and conv counts of the VGG-19 trunk
_BLOCKS = ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4))

# mean offsets (image units) and the scale to the network's 0..255 input range
DEFAULT_MEANS = (0.485, 0.456, 0.406)
DEFAULT_SCALE = 255.0


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv3x3" (with ReLU) or "pool2x2"
    in_channels: int
    out_channels: int


def _build_layers() -> tuple[LayerSpec, ...]:
    layers = []
    c_in = 3
    for b, (width, n_conv) in enumerate(_BLOCKS, start=1):
        for i in range(1, n_conv + 1):
            layers.append(LayerSpec(f"conv{b}_{i}", "conv3x3", c_in, width))
            c_in = width
        layers.append(LayerSpec(f"pool{b}", "pool2x2", c_in, c_in))
    return tuple(layers)


LAYERS = _build_layers()
LAYER_INDEX = {spec.name: i for i, spec in enumerate(LAYERS)}
CONV_LAYERS = tuple(s for s in LAYERS if s.kind == "conv3x3")


def layer_spec(name: str) -> LayerSpec:
    try:
        return LAYERS[LAYER_INDEX[name]]
    except KeyError:
        raise KeyError(f"unknown layer {name!r}") from None


def min_input_size(deepest: str) -> int:
    """Smallest input side for which every pool up to ``deepest`` is non-empty."""
    n_pools = sum(1 for s in LAYERS[: LAYER_INDEX[deepest] + 1] if s.kind == "pool2x2")
    return 2 ** n_pools


class WeightFileError(ValueError):
    pass


@dataclass(eq=False)
class NetworkWeights:
    kernels: dict[str, np.ndarray]  # (out, in, 3, 3) float32
    biases: dict[str, np.ndarray]  # (out,) float32
    means: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_MEANS, np.float32))
    scale: float = DEFAULT_SCALE
    _cast: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for spec in CONV_LAYERS:
            if spec.name not in self.kernels or spec.name not in self.biases:
                raise WeightFileError(f"missing weights for {spec.name}")
            want = (spec.out_channels, spec.in_channels, 3, 3)
            if self.kernels[spec.name].shape != want:
                raise WeightFileError(
                    f"{spec.name}: kernel shape {self.kernels[spec.name].shape}, expected {want}")
            if self.biases[spec.name].shape != (spec.out_channels,):
                raise WeightFileError(f"{spec.name}: bias shape {self.biases[spec.name].shape}")
            if not (np.all(np.isfinite(self.kernels[spec.name]))
                    and np.all(np.isfinite(self.biases[spec.name]))):
                raise WeightFileError(f"{spec.name}: non-finite weights")
        self.means = np.asarray(self.means, np.float32).reshape(3)

    def equals(self, other: "NetworkWeights") -> bool:
        """Bit-exact comparison of every tensor and the preprocessing constants."""
        return (
            all(np.array_equal(self.kernels[s.name], other.kernels[s.name])
                and np.array_equal(self.biases[s.name], other.biases[s.name]) for s in CONV_LAYERS)
            and np.array_equal(self.means, other.means)
            and np.float32(self.scale) == np.float32(other.scale))

    def conv_params(self, name: str, dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward matrix, bias, flipped-transposed backward matrix) in ``dtype``."""
        key = (name, np.dtype(dtype).str)
        if key not in self._cast:
            k = self.kernels[name].astype(dtype)
            out_c, in_c = k.shape[:2]
            fwd = np.ascontiguousarray(k.reshape(out_c, in_c * 9))
            # dX = correlation of dY with kernels flipped in space, channels swapped
            bwd = np.ascontiguousarray(k[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(in_c, out_c * 9))
            # kept only for the gradcheck sabotage switch
            raw = np.ascontiguousarray(k.transpose(1, 0, 2, 3).reshape(in_c, out_c * 9))
            self._cast[key] = (fwd, self.biases[name].astype(dtype), bwd, raw)
        return self._cast[key][:3] if not _SABOTAGE["no_flip"] else (
            self._cast[key][0], self._cast[key][1], self._cast[key][3])


_SABOTAGE = {"no_flip": False}


@contextlib.contextmanager
def sabotage_kernel_flip():
    """Debug only: make conv backward skip the spatial kernel flip."""
    _SABOTAGE["no_flip"] = True
    try:
        yield
    finally:
        _SABOTAGE["no_flip"] = False


# --------------------------------------------------------------------------
# weight files
# --------------------------------------------------------------------------

def init_random_weights(seed: int, means=DEFAULT_MEANS, scale: float = DEFAULT_SCALE) -> NetworkWeights:
    rng = np.random.default_rng(seed)
    kernels, biases = {}, {}
    for spec in CONV_LAYERS:
        std = 1.0 / np.sqrt(spec.in_channels * 9)
        shape = (spec.out_channels, spec.in_channels, 3, 3)
        kernels[spec.name] = (rng.standard_normal(shape) * std).astype(np.float32)
        biases[spec.name] = np.zeros(spec.out_channels, np.float32)
    return NetworkWeights(kernels, biases, np.array(means, np.float32), float(scale))


def save_weights(w: NetworkWeights, path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(CONV_LAYERS))]
    for spec in CONV_LAYERS:
        name = spec.name.encode("ascii")
        k = w.kernels[spec.name]
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<IIII", *k.shape))
        parts.append(np.ascontiguousarray(k, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(w.biases[spec.name], dtype="<f4").tobytes())
    parts.append(np.asarray(w.means, dtype="<f4").tobytes())
    parts.append(struct.pack("<f", w.scale))
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> NetworkWeights:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise WeightFileError(f"cannot read weight file {path}: {e}") from e
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise WeightFileError(f"{path}: truncated while reading {what}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise WeightFileError(f"{path}: bad magic, not a GMW1 weight file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightFileError(f"{path}: unsupported version {version}")
    if count != len(CONV_LAYERS):
        raise WeightFileError(f"{path}: {count} conv layers, expected {len(CONV_LAYERS)}")

    kernels, biases = {}, {}
    for spec in CONV_LAYERS:
        (n,) = struct.unpack("<H", take(2, f"{spec.name} name length"))
        name = take(n, f"{spec.name} name").decode("ascii", errors="replace")
        if name != spec.name:
            raise WeightFileError(f"{path}: expected layer {spec.name}, found {name!r}")
        shape = struct.unpack("<IIII", take(16, f"{name} shape"))
        want = (spec.out_channels, spec.in_channels, 3, 3)
        if shape != want:
            raise WeightFileError(f"{path}: {name} declared shape {shape}, expected {want}")
        size = int(np.prod(shape))
        kernels[name] = np.frombuffer(take(4 * size, f"{name} kernel"), "<f4").reshape(shape).astype(np.float32)
        biases[name] = np.frombuffer(take(4 * shape[0], f"{name} bias"), "<f4").astype(np.float32)
    means = np.frombuffer(take(12, "preprocessing means"), "<f4").astype(np.float32)
    (scale,) = struct.unpack("<f", take(4, "preprocessing scale"))
    if pos != len(buf):
        raise WeightFileError(f"{path}: {len(buf) - pos} trailing bytes")
    try:
        return NetworkWeights(kernels, biases, means, scale)
    except WeightFileError as e:
        raise WeightFileError(f"{path}: {e}") from e


def weight_file_size() -> int:
    body = sum(2 + len(s.name) + 16 + 4 * (s.out_channels * s.in_channels * 9 + s.out_channels)
               for s in CONV_LAYERS)
    return 12 + body + 16


# --------------------------------------------------------------------------
# primitive layers, (C, H, W) arrays
# --------------------------------------------------------------------------

def im2col3x3(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) patch matrix for a 3x3 conv with zero padding 1."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, h, w), x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, i, j] = xp[:, i:i + h, j:j + w]
    return cols.reshape(c * 9, h * w)


def conv3x3(x: np.ndarray, kmat: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1 'same' correlation; ``kmat`` is the (out, in*9) reshaped kernel."""
    _, h, w = x.shape
    y = kmat @ im2col3x3(x)
    if bias is not None:
        y += bias[:, None]
    return y.reshape(-1, h, w)


def avg_pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2)
    return v.mean(axis=(2, 4))


def avg_pool2_backward(g: np.ndarray, in_shape) -> np.ndarray:
    c, h, w = in_shape
    out = np.zeros(in_shape, g.dtype)
    h2, w2 = g.shape[1:]
    out[:, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(g * 0.25, 2, axis=1), 2, axis=2)
    return out


def max_pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    v = x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2)
    return v.max(axis=(2, 4))


def max_pool2_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    # gradient goes to the first maximal element of each window (row-major)
    c, h, w = x.shape
    h2, w2 = g.shape[1:]
    win = x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h2, w2, 4)
    arg = win.argmax(axis=-1)
    sel = np.zeros_like(win)
    np.put_along_axis(sel, arg[..., None], g[..., None], axis=-1)
    out = np.zeros(x.shape, g.dtype)
    out[:, : 2 * h2, : 2 * w2] = sel.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)
    return out


# --------------------------------------------------------------------------
# network passes
# --------------------------------------------------------------------------

def prepare_input(w: NetworkWeights, img: np.ndarray, dtype=np.float64) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    means = w.means.astype(np.float64)
    out = (img[None, :, :] - means[:, None, None]) * float(w.scale)
    return out.astype(dtype, copy=False)


@dataclass
class ActivationStack:
    input: np.ndarray  # preprocessed (3, H, W)
    layers: dict[str, np.ndarray]  # insertion order follows LAYERS
    pooling: str = "avg"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.layers[name]

    def __contains__(self, name: str) -> bool:
        return name in self.layers

    @property
    def deepest(self) -> str:
        return next(reversed(self.layers))


def forward(w: NetworkWeights, img: np.ndarray, deepest: str, pooling: str = "avg",
            dtype=np.float64) -> ActivationStack:
    if deepest not in LAYER_INDEX:
        raise KeyError(f"unknown layer {deepest!r}")
    if pooling not in ("avg", "max"):
        raise ValueError(f"pooling must be 'avg' or 'max', got {pooling!r}")
    img = np.asarray(img)
    need = min_input_size(deepest)
    if min(img.shape) < need:
        raise ValueError(
            f"input {img.shape[0]}x{img.shape[1]} too small for layer {deepest}; need at least {need}x{need}")
    x = prepare_input(w, img, dtype)
    acts = ActivationStack(x, {}, pooling)
    for spec in LAYERS[: LAYER_INDEX[deepest] + 1]:
        if spec.kind == "conv3x3":
            kmat, bias, _ = w.conv_params(spec.name, dtype)
            x = conv3x3(x, kmat, bias)
            np.maximum(x, 0, out=x)
        else:
            x = avg_pool2(x) if pooling == "avg" else max_pool2(x)
        acts.layers[spec.name] = x
    return acts


def backward(w: NetworkWeights, acts: ActivationStack, layer_grads) -> np.ndarray:
    """Pixel gradient of ``sum_l <layer_grads[l], acts[l]>``.

    ``layer_grads`` maps layer names (or is an iterable of name/array pairs) to
    cotangents shaped like the stored activations.
    """
    grads = dict(layer_grads)
    for name, g in grads.items():
        if name not in LAYER_INDEX:
            raise KeyError(f"unknown layer {name!r}")
        if name not in acts:
            raise KeyError(f"layer {name} not present in activation stack (deepest {acts.deepest})")
        if g.shape != acts[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, activation is {acts[name].shape}")
    h, wd = acts.input.shape[1:]
    if not grads:
        return np.zeros((h, wd))

    dtype = acts.input.dtype
    start = max(LAYER_INDEX[n] for n in grads)
    g = None
    for i in range(start, -1, -1):
        spec = LAYERS[i]
        if spec.name in grads:
            inj = np.asarray(grads[spec.name], dtype=dtype)
            g = inj.copy() if g is None else g + inj
        below = acts.layers[LAYERS[i - 1].name] if i > 0 else acts.input
        if spec.kind == "conv3x3":
            g = g * (acts.layers[spec.name] > 0)
            _, _, bmat = w.conv_params(spec.name, dtype)
            g = conv3x3(g, bmat)
        elif acts.pooling == "avg":
            g = avg_pool2_backward(g, below.shape)
        else:
            g = max_pool2_backward(g, below)
    # preprocessing: three replicated channels, each scaled
    return g.sum(axis=0, dtype=np.float64) * float(w.scale)
