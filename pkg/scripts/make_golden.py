"""Regenerate tests/data/golden_activations.npz with torch as the reference engine.

The weights come from ``init_random_weights(SEED)``; the forward pass is
computed by torch's conv2d / relu / avg_pool2d in float64, independently of
the numpy im2col path under test.
"""

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from gramsr import featurenet as fn

SEED = 0
IMAGE_SEED = 1234
SIZE = 32
STORED = ("pool1", "conv2_2", "pool2", "conv3_4", "pool3", "conv4_2", "pool4", "pool5")


def torch_forward(w: fn.NetworkWeights, img: np.ndarray) -> dict[str, np.ndarray]:
    x = torch.from_numpy(img).double()
    means = torch.from_numpy(w.means.astype(np.float64))
    x = (x[None, None] - means[None, :, None, None]) * float(np.float32(w.scale))
    out = {}
    for spec in fn.LAYERS:
        if spec.kind == "conv3x3":
            k = torch.from_numpy(w.kernels[spec.name].astype(np.float64))
            b = torch.from_numpy(w.biases[spec.name].astype(np.float64))
            x = F.relu(F.conv2d(x, k, b, padding=1))
        else:
            x = F.avg_pool2d(x, 2)
        out[spec.name] = x[0].numpy().copy()
    return out


def main() -> None:
    w = fn.init_random_weights(SEED)
    img = np.random.default_rng(IMAGE_SEED).random((SIZE, SIZE))
    acts = torch_forward(w, img)
    dest = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_activations.npz"
    np.savez_compressed(dest, image=img, weight_seed=SEED, **{n: acts[n] for n in STORED})
    print(f"wrote {dest}")


if __name__ == "__main__":
    main()
