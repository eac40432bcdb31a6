"""Grayscale images split into blocks, with per-block segmentation and orientation.

Everything downstream works on a :class:`GrayImage` split into a
:class:`BlockGrid` of non-overlapping square blocks. Trailing partial blocks
on the right and bottom edges are discarded.

Angles follow the image's pixel axes: x grows along columns, y grows down
the rows, and a ridge angle of 0 is a horizontal ridge. Orientations live
in [0, pi).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import FormatError, UndefinedOrientationError

DEFAULT_DPI = 500
DEFAULT_BLOCK_SIZE = 16
DEFAULT_VARIANCE_THRESHOLD = 100.0
SIGNATURE_WINDOW = 32
SIGNATURE_WIDTH = 5
MIN_SIDE = 32


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale raster; 0 is ridge ink, 255 is background."""

    pixels: np.ndarray
    resolution: int = DEFAULT_DPI

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.floating) and not np.all(np.isfinite(px)):
                raise ValueError("pixels must be finite")
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = np.rint(px).astype(np.uint8)
        if int(self.resolution) <= 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "resolution", int(self.resolution))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def as_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def block_size_for_dpi(dpi: int, base: int = DEFAULT_BLOCK_SIZE) -> int:
    """Block side scaled from the 500 dpi default, never below 8 px."""
    return max(8, int(round(base * dpi / DEFAULT_DPI)))


@dataclass(frozen=True)
class BlockGrid:
    block_size: int
    rows: int
    cols: int

    @classmethod
    def for_image(cls, img: GrayImage, block_size: int | None = None) -> "BlockGrid":
        if block_size is None:
            block_size = block_size_for_dpi(img.resolution)
        if block_size < 1:
            raise ValueError("block_size must be positive")
        return cls(block_size, img.height // block_size, img.width // block_size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-coordinate block centers as (x, y) arrays of shape (rows, cols)."""
        half = (self.block_size - 1) / 2.0
        ys = np.arange(self.rows) * self.block_size + half
        xs = np.arange(self.cols) * self.block_size + half
        return np.meshgrid(xs, ys)

    def blocks(self, arr: np.ndarray) -> np.ndarray:
        """View ``arr`` as (rows, cols, block_size, block_size)."""
        b = self.block_size
        a = arr[: self.rows * b, : self.cols * b]
        return a.reshape(self.rows, b, self.cols, b).swapaxes(1, 2)

    def block_sum(self, arr: np.ndarray) -> np.ndarray:
        return self.blocks(arr).sum(axis=(2, 3))

    def check(self, img: GrayImage):
        if self.rows * self.block_size > img.height or self.cols * self.block_size > img.width:
            raise ValueError("grid does not fit the image")


def require_metric_size(img: GrayImage):
    if img.width < MIN_SIDE or img.height < MIN_SIDE:
        raise ValueError(
            f"image is {img.width}x{img.height}; metrics need at least {MIN_SIDE}x{MIN_SIDE}"
        )


# --------------------------------------------------------------------------- I/O


def _read_pgm_header(data: bytes, path) -> tuple[int, int, int]:
    """Validate a P5 header; return (raster offset, width, height)."""
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: unsupported format (expected binary PGM 'P5' or PNG)")
    fields = []
    i = 2
    n = len(data)
    while len(fields) < 3:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError(f"{path}: truncated PGM header")
        try:
            fields.append(int(data[i:j]))
        except ValueError:
            raise FormatError(f"{path}: malformed PGM header field {data[i:j]!r}") from None
        i = j
    if i >= n:
        raise FormatError(f"{path}: truncated PGM header")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: unsupported bit depth (PGM maxval {maxval}, need 255)")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: invalid PGM dimensions {width}x{height}")
    offset = i + 1
    if len(data) - offset < width * height:
        raise FormatError(
            f"{path}: truncated PGM payload ({len(data) - offset} of {width * height} bytes)"
        )
    return offset, width, height


def load_image(path, dpi: int | None = None) -> GrayImage:
    """Read a binary PGM (P5, maxval 255) or 8-bit grayscale PNG."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: unreadable file ({exc.strerror or exc})") from exc
    resolution = DEFAULT_DPI if dpi is None else dpi
    if data.startswith(b"P"):
        offset, w, h = _read_pgm_header(data, path)
        pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=offset).reshape(h, w)
        return GrayImage(pixels.copy(), resolution)
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        try:
            with Image.open(path) as im:
                depth = data[24]  # IHDR bit depth byte
                if depth != 8:
                    raise FormatError(f"{path}: unsupported bit depth ({depth}-bit PNG)")
                if im.mode != "L":
                    raise FormatError(f"{path}: unsupported color mode {im.mode!r} (need 8-bit grayscale)")
                im.load()
                pixels = np.asarray(im, dtype=np.uint8)
        except FormatError:
            raise
        except (OSError, SyntaxError, ValueError) as exc:
            raise FormatError(f"{path}: corrupt PNG ({exc})") from exc
        return GrayImage(pixels.copy(), resolution)
    raise FormatError(f"{path}: unsupported format (expected binary PGM 'P5' or PNG)")


def save_pgm(img: GrayImage | np.ndarray, path):
    px = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(px, dtype=np.uint8).tobytes())


def save_png(img: GrayImage, path):
    Image.fromarray(np.asarray(img.pixels), mode="L").save(path)


# ------------------------------------------------------------------ segmentation


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """Per-block foreground flags (True = foreground)."""

    foreground: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "foreground", _frozen(np.asarray(self.foreground, dtype=bool)))

    @property
    def shape(self):
        return self.foreground.shape

    @property
    def count(self) -> int:
        return int(self.foreground.sum())

    def __eq__(self, other):
        if not isinstance(other, SegmentationMask):
            return NotImplemented
        return np.array_equal(self.foreground, other.foreground)

    __hash__ = None


def block_variance(img: GrayImage, grid: BlockGrid) -> np.ndarray:
    """Population gray-level variance of every block."""
    return grid.blocks(img.as_float()).var(axis=(2, 3))


_NOISE_KERNEL = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])


def estimate_noise_sigma(img: GrayImage) -> float:
    """Robust white-noise standard deviation of the whole image.

    Median absolute response of a second-difference mask (which cancels
    locally linear structure and axis-aligned ridges), scaled to a Gaussian
    sigma. Flat regions and isolated edges give 0.
    """
    resp = ndimage.correlate(img.as_float(), _NOISE_KERNEL, mode="reflect")[1:-1, 1:-1]
    if resp.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(resp)) / 6.0)


def segment_foreground(img: GrayImage, grid: BlockGrid,
                       variance_threshold: float = DEFAULT_VARIANCE_THRESHOLD) -> SegmentationMask:
    """A block is foreground iff its gray variance exceeds ``variance_threshold``."""
    grid.check(img)
    return SegmentationMask(block_variance(img, grid) > variance_threshold)


# --------------------------------------------------------------- direction field


def gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients (gx along columns, gy along rows) after 3x3 box smoothing.

    Gradients on the outer 2-pixel frame are set to zero.
    """
    smooth = ndimage.uniform_filter(img.as_float(), size=3, mode="nearest")
    diff = np.array([-0.5, 0.0, 0.5])  # out[i] = (a[i+1] - a[i-1]) / 2
    gx = ndimage.correlate1d(smooth, diff, axis=1, mode="nearest")
    gy = ndimage.correlate1d(smooth, diff, axis=0, mode="nearest")
    # the 5x5 stencil leaves the image on a 2-pixel frame; those gradients are biased
    for g in (gx, gy):
        g[:2, :] = g[-2:, :] = 0.0
        g[:, :2] = g[:, -2:] = 0.0
    return gx, gy


@dataclass(frozen=True, eq=False)
class GradientCovariance:
    """Per-block sums of gx^2, gy^2 and gx*gy."""

    sxx: np.ndarray
    syy: np.ndarray
    sxy: np.ndarray

    @property
    def trace(self) -> np.ndarray:
        return self.sxx + self.syy

    @property
    def spread(self) -> np.ndarray:
        """lambda_max - lambda_min."""
        return np.hypot(self.sxx - self.syy, 2.0 * self.sxy)

    def eigenvalues(self) -> tuple[np.ndarray, np.ndarray]:
        tr, sp = self.trace, self.spread
        lmax = 0.5 * (tr + sp)
        lmin = np.maximum(0.5 * (tr - sp), 0.0)
        return lmax, lmin

    def coherence(self) -> np.ndarray:
        tr = self.trace
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(tr > 0, self.spread / np.where(tr > 0, tr, 1.0), 0.0)
        return np.clip(c, 0.0, 1.0)


def gradient_covariance(img: GrayImage, grid: BlockGrid) -> GradientCovariance:
    grid.check(img)
    gx, gy = gradients(img)
    return GradientCovariance(grid.block_sum(gx * gx), grid.block_sum(gy * gy), grid.block_sum(gx * gy))


@dataclass(frozen=True, eq=False)
class DirectionField:
    """Per-block ridge orientation in [0, pi) and its certainty in [0, 1]."""

    angle: np.ndarray
    certainty: np.ndarray

    def __post_init__(self):
        angle = np.mod(np.asarray(self.angle, dtype=np.float64), np.pi)
        angle[angle >= np.pi] = 0.0
        object.__setattr__(self, "angle", _frozen(angle))
        object.__setattr__(self, "certainty", _frozen(np.asarray(self.certainty, dtype=np.float64)))
        if self.angle.shape != self.certainty.shape:
            raise ValueError("angle and certainty shapes differ")

    @property
    def shape(self):
        return self.angle.shape


def direction_field(img: GrayImage, grid: BlockGrid) -> DirectionField:
    """Structure-tensor orientation per block."""
    cov = gradient_covariance(img, grid)
    # gradient orientation + pi/2 = ridge orientation
    angle = 0.5 * np.arctan2(2.0 * cov.sxy, cov.sxx - cov.syy) + np.pi / 2
    return DirectionField(angle, cov.coherence())


def angular_difference(a, b):
    """Acute difference between orientations (mod pi), in [0, pi/2]."""
    d = np.abs(np.mod(np.asarray(a) - np.asarray(b), np.pi))
    return np.minimum(d, np.pi - d)


# -------------------------------------------------------------- ridge signature


@dataclass(frozen=True, eq=False)
class RidgeSignature:
    samples: np.ndarray
    window: int
    width: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen(np.asarray(self.samples, dtype=np.float64)))

    def __len__(self):
        return len(self.samples)


def _signature_samples(img: GrayImage, cx, cy, theta, window, width):
    """Sample oriented signatures for arrays of centers/angles.

    Returns an array (..., window) where samples whose averaging segment
    leaves the image are NaN.
    """
    cx, cy, theta = np.broadcast_arrays(np.asarray(cx, float), np.asarray(cy, float), np.asarray(theta, float))
    t = signature_offsets(window)
    s = np.arange(width) - (width - 1) / 2.0
    # ridge direction d, normal n
    dx, dy = np.cos(theta), np.sin(theta)
    nx, ny = -dy, dx
    ex = (..., None, None)
    xs = cx[ex] + t[:, None] * nx[ex] + s[None, :] * dx[ex]
    ys = cy[ex] + t[:, None] * ny[ex] + s[None, :] * dy[ex]
    eps = 1e-9
    inside = (xs >= -eps) & (xs <= img.width - 1 + eps) & (ys >= -eps) & (ys <= img.height - 1 + eps)
    vals = ndimage.map_coordinates(
        img.as_float(), [ys.ravel(), xs.ravel()], order=1, mode="nearest"
    ).reshape(xs.shape)
    sig = vals.mean(axis=-1)
    sig[~inside.all(axis=-1)] = np.nan
    return sig


def _trim_symmetric(sig: np.ndarray) -> np.ndarray:
    """Drop invalid (NaN) samples, the same count from both ends."""
    valid = ~np.isnan(sig)
    if valid.all():
        return sig
    if not valid.any():
        return sig[:0]
    n = len(sig)
    lead = int(np.argmax(valid))
    trail = int(np.argmax(valid[::-1]))
    k = max(lead, trail)
    if 2 * k >= n:
        return sig[:0]
    return sig[k : n - k]


def signature_offsets(window: int) -> np.ndarray:
    """Positions of signature samples along the normal, relative to the block center."""
    return np.arange(window) - (window - 1) / 2.0


def raw_block_signatures(img: GrayImage, grid: BlockGrid, field: DirectionField,
                         window: int = SIGNATURE_WINDOW, width: int = SIGNATURE_WIDTH) -> np.ndarray:
    """Untrimmed signatures of every block, shape (rows, cols, window); NaN outside the image."""
    cx, cy = grid.centers()
    return _signature_samples(img, cx, cy, field.angle, window, width)


def trim_signature(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrically trimmed samples and their offsets along the normal."""
    sig = _trim_symmetric(raw)
    k = (len(raw) - len(sig)) // 2
    return sig, signature_offsets(len(raw))[k : k + len(sig)]


def extract_ridge_signature(img: GrayImage, block: tuple[int, int], field: DirectionField,
                            window: int = SIGNATURE_WINDOW, *, grid: BlockGrid | None = None,
                            mask: SegmentationMask | None = None, width: int = SIGNATURE_WIDTH,
                            allow_undefined: bool = False) -> RidgeSignature:
    """Gray profile across the ridges of one block.

    Samples lie on the line through the block center perpendicular to the
    block's ridge angle, one pixel apart; each sample averages ``width``
    points along the ridge direction (bilinear interpolation).
    ``allow_undefined`` skips the certainty/foreground check.
    """
    if grid is None:
        grid = BlockGrid.for_image(img)
    r, c = block
    if not (0 <= r < grid.rows and 0 <= c < grid.cols):
        raise IndexError(f"block {block} outside grid {grid.shape}")
    if not allow_undefined:
        if mask is not None and not mask.foreground[r, c]:
            raise UndefinedOrientationError(f"block {block} is background")
        if field.certainty[r, c] <= 0:
            raise UndefinedOrientationError(f"block {block} has zero orientation certainty")
    cx, cy = grid.centers()
    sig = _signature_samples(img, cx[r, c], cy[r, c], field.angle[r, c], window, width)
    return RidgeSignature(_trim_symmetric(sig), window, width)
