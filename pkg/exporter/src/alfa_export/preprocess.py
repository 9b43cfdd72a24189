"""Image loading, standardization, bicubic resize, and tiling."""

import math

import numpy as np
from PIL import Image

# channel-wise standardization constants of the pretrained encoder
MEAN = (0.48145466, 0.4578275, 0.40821073)
STD = (0.26862954, 0.26130258, 0.27577711)


class PreprocessError(Exception):
    pass


def load_rgb(path) -> np.ndarray:
    """Read an image as float32 RGB in [0, 1], shape [H, W, 3]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise PreprocessError(f"{path}: unreadable image ({exc})") from exc
    return arr / 255.0


def standardize(arr: np.ndarray) -> np.ndarray:
    mean = np.asarray(MEAN, dtype=np.float32)
    std = np.asarray(STD, dtype=np.float32)
    return (arr - mean) / std


def resize_bicubic(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bicubic resize of a [H, W, C] float array, per channel."""
    if arr.shape[:2] == (out_h, out_w):
        return arr.astype(np.float32)
    channels = []
    for c in range(arr.shape[2]):
        im = Image.fromarray(arr[:, :, c], mode="F")
        channels.append(np.asarray(im.resize((out_w, out_h), Image.BICUBIC)))
    return np.stack(channels, axis=2).astype(np.float32)


def tile_layout(h: int, w: int, size: int) -> list[tuple[int, int]]:
    """(row, col) pixel offsets of square ``size`` tiles after the short side
    has been resized to ``size``: minimal evenly spaced overlap along the
    long side."""
    long = max(h, w)
    n = max(1, math.ceil(long / size))
    if n == 1:
        return [(0, 0)]
    starts = np.round(np.linspace(0, long - size, n)).astype(int)
    if h >= w:
        return [(int(s), 0) for s in starts]
    return [(0, int(s)) for s in starts]


def prepare_tiles(arr: np.ndarray, size: int, tiling: bool) -> list[tuple[int, int, np.ndarray]]:
    """Standardized crops ready for the encoder.

    Square inputs (or tiling off) become a single ``size``x``size`` resize.
    Otherwise the short side is resized to ``size`` and square tiles cover
    the long side; returns (row_offset, col_offset, tile) triples in the
    resized coordinate frame.
    """
    h, w = arr.shape[:2]
    arr = standardize(arr)
    if h == w or not tiling:
        return [(0, 0, resize_bicubic(arr, size, size))]
    if h >= w:
        rh, rw = round(h * size / w), size
    else:
        rh, rw = size, round(w * size / h)
    resized = resize_bicubic(arr, rh, rw)
    return [(r, c, resized[r:r + size, c:c + size])
            for r, c in tile_layout(rh, rw, size)]
