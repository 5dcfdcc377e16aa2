"""8-bit RGB image buffer and shared raster helpers.

``ImageBuf`` is the unit all metrics and agents operate on: pixels are stored
as uint8 and exposed to numeric code as float64 intensities in [0, 1].
Also hosts the BT.601 luma transform and an exactly-adjoint bilinear
resampler used by both the identity embedder and the toy detectors.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateInputError, ShapeError

MIN_SIDE = 8

# BT.601 luma weights for RGB in [0,1].
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


class ImageBuf:
    """Immutable RGB raster, uint8-backed, at least 8x8 pixels."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected HxWx3 array, got shape {arr.shape}")
        if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
            raise DegenerateInputError(
                f"image {arr.shape[1]}x{arr.shape[0]} smaller than {MIN_SIDE}px minimum"
            )
        if arr.dtype != np.uint8:
            raise ShapeError(f"expected uint8 data, got {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 3

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def floats(self) -> np.ndarray:
        """Pixel intensities as float64 in [0, 1], shape (H, W, 3)."""
        return self.data.astype(np.float64) / 255.0

    @classmethod
    def from_floats(cls, arr: np.ndarray) -> "ImageBuf":
        """Quantize a float array in [0, 1] to uint8 (round half to even)."""
        arr = np.asarray(arr, dtype=np.float64)
        q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
        return cls(q)

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuf) and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash(self.data.tobytes())

    def __repr__(self) -> str:
        return f"ImageBuf({self.width}x{self.height})"


def load_png(path: str | Path) -> ImageBuf:
    """Decode a PNG into an ImageBuf.

    Alpha is dropped, grayscale is replicated across channels, and 16-bit
    samples are truncated to their high byte.
    """
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.uint32)
            arr = (arr >> 8).clip(0, 255).astype(np.uint8)
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        else:
            if im.mode not in ("RGB", "RGBA", "L", "LA", "P"):
                im = im.convert("RGB")
            if im.mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            if im.mode in ("RGBA", "LA"):
                im = im.convert("RGBA")
                arr = np.asarray(im, dtype=np.uint8)[:, :, :3]
            elif im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
                arr = np.repeat(arr[:, :, None], 3, axis=2)
            else:
                arr = np.asarray(im, dtype=np.uint8)
    return ImageBuf(arr)


def save_png(img: ImageBuf, path: str | Path) -> None:
    """Write an ImageBuf as an 8-bit RGB PNG (deterministic bytes)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(img.data), mode="RGB").save(path, format="PNG")


def as_float_array(img) -> np.ndarray:
    """Accept ImageBuf, float HxWx3 array, or a PNG path; return float64 pixels."""
    if isinstance(img, ImageBuf):
        return img.floats()
    if isinstance(img, (str, Path)):
        return load_png(img).floats()
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 pixels, got shape {arr.shape}")
    return arr


def luma(img) -> np.ndarray:
    """BT.601 luma of an image, float64 in [0, 1], shape (H, W)."""
    arr = as_float_array(img)
    return arr @ LUMA_WEIGHTS


@lru_cache(maxsize=64)
def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-D bilinear interpolation matrix mapping n_in samples to n_out.

    Sample positions follow the pixel-center convention
    ``src = (i + 0.5) * n_in / n_out - 0.5`` with edge clamping.
    """
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        s = (i + 0.5) * scale - 0.5
        f = int(np.floor(s))
        t = s - f
        lo = min(max(f, 0), n_in - 1)
        hi = min(max(f + 1, 0), n_in - 1)
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    return m


def bilinear_resize(arr: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resample of a 2-D array to (h_out, w_out)."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected 2-D array, got shape {arr.shape}")
    h_out, w_out = out_shape
    rows = _interp_matrix(h_out, arr.shape[0])
    cols = _interp_matrix(w_out, arr.shape[1])
    return rows @ arr @ cols.T


def bilinear_resize_adjoint(cells: np.ndarray, in_shape: tuple[int, int]) -> np.ndarray:
    """Exact adjoint of :func:`bilinear_resize` (transpose of the linear map)."""
    cells = np.asarray(cells, dtype=np.float64)
    h_in, w_in = in_shape
    rows = _interp_matrix(cells.shape[0], h_in)
    cols = _interp_matrix(cells.shape[1], w_in)
    return rows.T @ cells @ cols
