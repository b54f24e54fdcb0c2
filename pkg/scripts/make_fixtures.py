"""Write the committed texture fixture tests/data/texture.png (96x192).

The left and right 96x96 halves are disjoint crops of one stationary texture:
four random plane waves plus blurred noise, stretched to [0, 1].
"""

from pathlib import Path

import numpy as np

from gramsr.imagecore import blur, make_gaussian_kernel, save_image

SEED = 3
HEIGHT, WIDTH = 96, 192


def texture(seed: int, h: int, w: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    t = np.zeros((h, w))
    for _ in range(4):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(0.15, 0.45)
        phase = rng.uniform(0, 2 * np.pi)
        t += np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    noise = blur(rng.standard_normal((h, w)), make_gaussian_kernel(1.5))
    t = t / 4 + 2.0 * noise
    return (t - t.min()) / (t.max() - t.min())


def main() -> None:
    dest = Path(__file__).resolve().parents[1] / "tests" / "data" / "texture.png"
    save_image(texture(SEED, HEIGHT, WIDTH), dest)
    print(f"wrote {dest}")


if __name__ == "__main__":
    main()
