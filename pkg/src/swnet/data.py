"""Synthetic 10-class digit images for desk-scale convergence experiments.

Glyphs are fixed 8x8 bitmaps rendered at 8x8 or 16x16, randomly shifted,
intensity-jittered per channel, and corrupted with Gaussian noise. Generation
is fully determined by the seed. Images round-trip through a one-line-header
CSV: label first, then the flattened pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_GLYPHS = {
    0: ("..###...",
        ".#...#..",
        ".#...#..",
        ".#...#..",
        ".#...#..",
        ".#...#..",
        "..###...",
        "........"),
    1: ("...#....",
        "..##....",
        "...#....",
        "...#....",
        "...#....",
        "...#....",
        "..###...",
        "........"),
    2: ("..###...",
        ".#...#..",
        ".....#..",
        "....#...",
        "...#....",
        "..#.....",
        ".#####..",
        "........"),
    3: ("..###...",
        ".#...#..",
        ".....#..",
        "...##...",
        ".....#..",
        ".#...#..",
        "..###...",
        "........"),
    4: ("....##..",
        "...#.#..",
        "..#..#..",
        ".#...#..",
        ".######.",
        ".....#..",
        ".....#..",
        "........"),
    5: (".#####..",
        ".#......",
        ".####...",
        ".....#..",
        ".....#..",
        ".#...#..",
        "..###...",
        "........"),
    6: ("..###...",
        ".#......",
        ".#......",
        ".####...",
        ".#...#..",
        ".#...#..",
        "..###...",
        "........"),
    7: (".#####..",
        ".....#..",
        "....#...",
        "....#...",
        "...#....",
        "...#....",
        "...#....",
        "........"),
    8: ("..###...",
        ".#...#..",
        ".#...#..",
        "..###...",
        ".#...#..",
        ".#...#..",
        "..###...",
        "........"),
    9: ("..###...",
        ".#...#..",
        ".#...#..",
        "..####..",
        ".....#..",
        ".....#..",
        "..###...",
        "........"),
}

N_CLASSES = 10


def glyph_array(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit]
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])


def make_images(
    n: int,
    seed: int | tuple[int, ...],
    image_size: int = 16,
    channels: int = 3,
    noise: float = 0.35,
    max_shift: int = 2,
    gain_range: tuple[float, float] = (0.6, 1.4),
    scale_jitter: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """n class-balanced samples: X of shape (n, channels, S, S), labels (n,).

    With scale_jitter, each glyph renders at a random integer scale between 1
    and image_size//8, so classes must be recognized at multiple resolutions.
    Sizes below 8 center-crop the glyph.
    """
    if image_size < 4:
        raise ValueError("image_size must be at least 4")
    max_scale = max(1, image_size // 8)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % N_CLASSES)
    glyphs = {
        d: {s: np.kron(glyph_array(d), np.ones((s, s))) for s in range(1, max_scale + 1)}
        for d in range(N_CLASSES)
    }
    x = np.zeros((n, channels, image_size, image_size))
    lo, hi = gain_range
    pad = max(max_shift, 0)
    for i, label in enumerate(labels):
        scale = int(rng.integers(1, max_scale + 1)) if scale_jitter else max_scale
        glyph = glyphs[int(label)][scale]
        if glyph.shape[0] > image_size:  # center-crop for small canvases
            trim = (glyph.shape[0] - image_size) // 2
            glyph = glyph[trim : trim + image_size, trim : trim + image_size]
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2) if max_shift else (0, 0)
        offset = (image_size - glyph.shape[0]) // 2
        big = np.zeros((image_size + 2 * pad, image_size + 2 * pad))
        y0 = pad + offset + dy
        x0 = pad + offset + dx
        big[y0 : y0 + glyph.shape[0], x0 : x0 + glyph.shape[1]] = glyph
        canvas = big[pad : pad + image_size, pad : pad + image_size]
        gains = rng.uniform(lo, hi, size=channels)
        sample = gains[:, None, None] * canvas[None]
        sample = sample + rng.normal(0.0, noise, size=sample.shape)
        x[i] = sample
    return x, labels.astype(np.int64)


@dataclass(frozen=True)
class Dataset:
    """Disjoint train/test splits of one image distribution."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.x_train.shape[1:])

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]


def make_dataset(n_train: int, n_test: int, seed: int, **kwargs) -> Dataset:
    """Train and test splits drawn from independent streams of one seed."""
    x_train, y_train = make_images(n_train, seed=(seed, 0), **kwargs)
    x_test, y_test = make_images(n_test, seed=(seed, 1), **kwargs)
    return Dataset(x_train, y_train, x_test, y_test)


def save_images_csv(x: np.ndarray, y: np.ndarray, path) -> None:
    """`# channels=<c> height=<h> width=<w>` header, then one image per row:
    label first, pixels flattened channel-major."""
    n, c, h, w = x.shape
    flat = x.reshape(n, -1)
    with open(path, "w") as f:
        f.write(f"# channels={c} height={h} width={w}\n")
        for i in range(n):
            f.write(str(int(y[i])) + "," + ",".join(f"{v:.8g}" for v in flat[i]) + "\n")


def load_images_csv(path, shape: tuple[int, int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of save_images_csv; pass `shape` when the header is absent."""
    labels = []
    rows = []
    with open(path) as f:
        first = f.readline()
        if first.startswith("#"):
            fields = dict(tok.split("=") for tok in first[1:].split())
            shape = (int(fields["channels"]), int(fields["height"]), int(fields["width"]))
        else:
            if shape is None:
                raise ValueError(f"{path}: no shape header; pass shape=(c, h, w)")
            f.seek(0)
        for line in f:
            if not line.strip():
                continue
            parts = line.split(",")
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    x = np.asarray(rows).reshape(len(rows), *shape)
    return x, np.asarray(labels, dtype=np.int64)


def load_dataset(train_path, test_path, shape=None) -> Dataset:
    x_train, y_train = load_images_csv(train_path, shape)
    x_test, y_test = load_images_csv(test_path, shape)
    return Dataset(x_train, y_train, x_test, y_test)
