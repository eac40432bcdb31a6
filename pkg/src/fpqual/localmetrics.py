"""Block-wise quality measures.

Each measure fills a :class:`BlockQualityMap` (NaN marks blocks without a
value, such as background or blocks with undefined orientation) and reduces
it to a global score in [0, 1] by averaging over the blocks that carry a
value. An empty average is reported as 0 with a warning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ConfigError
from .imagecore import (
    SIGNATURE_WIDTH,
    SIGNATURE_WINDOW,
    BlockGrid,
    DirectionField,
    GrayImage,
    SegmentationMask,
    angular_difference,
    block_variance,
    estimate_noise_sigma,
    gradient_covariance,
    raw_block_signatures,
    segment_foreground,
    trim_signature,
)

GOOD, UNDETERMINED, BAD, BLANK = "good", "undetermined", "bad", "blank"
LABEL_VALUES = {GOOD: 1.0, UNDETERMINED: 0.5, BAD: 0.0}
DEFAULT_BAND = (1 / 25, 1 / 3)
MAX_VARIANCE = 127.5**2


@dataclass(frozen=True, eq=False)
class BlockQualityMap:
    grid: BlockGrid
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValueError(f"map shape {v.shape} does not match grid {self.grid.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def to_csv(self) -> str:
        lines = []
        for row in self.values:
            lines.append(",".join("" if np.isnan(v) else f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"

    def heatmap(self) -> np.ndarray:
        """Block-resolution uint8 image: value*255, no-value blocks 0."""
        return np.rint(np.nan_to_num(np.clip(self.values, 0, 1), nan=0.0) * 255).astype(np.uint8)


@dataclass(frozen=True)
class MetricResult:
    score: float
    map: BlockQualityMap | None = None
    warnings: tuple = ()


def _mean_score(bqm: BlockQualityMap, name: str) -> MetricResult:
    vals = bqm.values[bqm.defined]
    if vals.size == 0:
        return MetricResult(0.0, bqm, (f"{name}: empty foreground, score reported as 0",))
    return MetricResult(float(np.clip(vals.mean(), 0.0, 1.0)), bqm)


def _mask(img, grid, mask):
    return segment_foreground(img, grid) if mask is None else mask


def _masked(grid, values, mask: SegmentationMask):
    return np.where(mask.foreground, values, np.nan)


# -------------------------------------------------------------- orientation


def ocl_map(img: GrayImage, grid: BlockGrid, field: DirectionField | None = None,
            mask: SegmentationMask | None = None) -> MetricResult:
    """Orientation certainty: 1 - lambda_min/lambda_max of the gradient covariance.

    ``field`` is accepted for interface symmetry; the eigenvalues are taken
    from the same gradient covariance the field was estimated from.
    """
    mask = _mask(img, grid, mask)
    lmax, lmin = gradient_covariance(img, grid).eigenvalues()
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(lmax > 0, 1.0 - lmin / np.where(lmax > 0, lmax, 1.0), 0.0)
    return _mean_score(BlockQualityMap(grid, _masked(grid, np.clip(q, 0, 1), mask)), "ocl")


def coherence_map(img: GrayImage, grid: BlockGrid, mask: SegmentationMask | None = None) -> MetricResult:
    """Gradient coherence (lmax - lmin)/(lmax + lmin) averaged over the foreground."""
    mask = _mask(img, grid, mask)
    coh = gradient_covariance(img, grid).coherence()
    return _mean_score(BlockQualityMap(grid, _masked(grid, coh, mask)), "qs")


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _shift(arr, dr, dc, fill):
    rows, cols = arr.shape
    out = np.full_like(arr, fill)
    src = arr[max(dr, 0):rows + min(dr, 0), max(dc, 0):cols + min(dc, 0)]
    out[max(-dr, 0):rows + min(-dr, 0), max(-dc, 0):cols + min(-dc, 0)] = src
    return out


def loq_map(field: DirectionField, mask: SegmentationMask, grid: BlockGrid | None = None) -> MetricResult:
    """Local orientation quality from the mean acute angle to foreground 8-neighbors.

    Block quality is ``1 - d/(pi/2)``; blocks with no foreground neighbor
    get no value and do not enter the global score (GOQS).
    """
    fg = mask.foreground
    if grid is None:
        grid = BlockGrid(1, *fg.shape)
    total = np.zeros(fg.shape)
    count = np.zeros(fg.shape)
    for dr, dc in _NEIGHBORS:
        nb_angle = _shift(field.angle, dr, dc, 0.0)
        nb_fg = _shift(fg, dr, dc, False)
        valid = fg & nb_fg
        total += np.where(valid, angular_difference(field.angle, nb_angle), 0.0)
        count += valid
    with np.errstate(invalid="ignore", divide="ignore"):
        d = total / count
    q = np.where(count > 0, 1.0 - d / (np.pi / 2), np.nan)
    return _mean_score(BlockQualityMap(grid, np.clip(q, 0, 1)), "goqs")


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True, eq=False)
class RidgeGeometry:
    """Per-block ridge frequency (cycles/px), ridge thickness (px) and ridge/valley ratio.

    NaN marks blocks where the geometry is undefined.
    """

    grid: BlockGrid
    frequency: np.ndarray
    thickness: np.ndarray
    ratio: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.ratio)


def _crossings(s: np.ndarray):
    """Sub-sample zero crossings of a mean-removed profile and the sign before the first one."""
    nz = np.flatnonzero(s != 0)
    if nz.size < 2:
        return [], 0
    pos = []
    for a, b in zip(nz[:-1], nz[1:]):
        if (s[a] > 0) != (s[b] > 0):
            if b == a + 1:
                pos.append(a + s[a] / (s[a] - s[b]))
            else:
                pos.append((a + b) / 2.0)
    return pos, 1 if s[nz[0]] > 0 else -1


def dominant_frequency(sig: np.ndarray) -> tuple[float, float]:
    """(frequency in cycles/sample, peak energy fraction) of a mean-removed profile."""
    n = len(sig)
    spec = np.fft.rfft(sig - sig.mean())
    power = np.abs(spec) ** 2
    power[1:(n + 1) // 2] *= 2  # fold negative frequencies; Nyquist bin appears once
    power[0] = 0.0
    total = power.sum()
    if n < 4 or total <= 0:
        return np.nan, 0.0
    k = int(np.argmax(power[1:])) + 1
    return k / n, float(power[k] / total)


def signature_level(sig: np.ndarray) -> float:
    """Ridge/valley threshold: the signature mean over a whole number of periods.

    A truncated edge signature rarely spans whole periods, and its plain
    mean is pulled toward whichever phase is over-represented. The period
    comes from the crossings of the plain mean; the mean is then taken over
    the centered span of whole periods of the linear interpolant.
    """
    level = float(sig.mean())
    pos, _ = _crossings(sig - level)
    if len(pos) < 3:
        return level
    period = 2.0 * (pos[-1] - pos[0]) / (len(pos) - 1)
    n = len(sig)
    span = np.floor((n - 1) / period) * period
    if span <= 0:
        return level
    start = (n - 1 - span) / 2.0
    xs = np.linspace(start, start + span, int(np.ceil(span)) * 32 + 1)
    return float(np.interp(xs, np.arange(n), sig).mean())


def signature_geometry(sig: np.ndarray) -> tuple[float, float, float]:
    """(frequency, ridge thickness, ridge/valley ratio) from one signature; NaN if undefined."""
    if len(sig) < 4:
        return np.nan, np.nan, np.nan
    freq, _ = dominant_frequency(sig)
    s = sig - signature_level(sig)
    pos, first = _crossings(s)
    ridge, valley = [], []
    for j in range(len(pos) - 1):
        sign = first * (-1) ** (j + 1)
        (ridge if sign < 0 else valley).append(pos[j + 1] - pos[j])
    if not ridge or not valley or np.isnan(freq):
        return np.nan, np.nan, np.nan
    t = float(np.mean(ridge))
    return freq, t, t / float(np.mean(valley))


def _block_iter(grid, mask, field):
    ok = mask.foreground & (field.certainty > 0)
    for r in range(grid.rows):
        for c in range(grid.cols):
            if ok[r, c]:
                yield r, c


def ridge_geometry(img: GrayImage, grid: BlockGrid, field: DirectionField,
                   mask: SegmentationMask | None = None, window: int = SIGNATURE_WINDOW,
                   width: int = SIGNATURE_WIDTH) -> RidgeGeometry:
    """Ridge geometry (frequency, thickness, ridge-to-valley ratio) from each block's signature.

    Runs are measured between linearly interpolated mean crossings; only
    complete runs count. One sample is one pixel.
    """
    mask = _mask(img, grid, mask)
    raw = raw_block_signatures(img, grid, field, window, width)
    out = np.full((3,) + grid.shape, np.nan)
    for r, c in _block_iter(grid, mask, field):
        sig, _ = trim_signature(raw[r, c])
        out[:, r, c] = signature_geometry(sig)
    return RidgeGeometry(grid, out[0], out[1], out[2])


@dataclass(frozen=True)
class SLThresholds:
    ocl_min: float = 0.5
    frequency: tuple = DEFAULT_BAND
    thickness: tuple = (1.5, 15.0)
    ratio: tuple = (0.4, 2.5)


def _inside(x, lo_hi):
    lo, hi = lo_hi
    with np.errstate(invalid="ignore"):
        return (x >= lo) & (x <= hi)


def block_classification_sl(ocl: BlockQualityMap, geom: RidgeGeometry,
                            thresholds: SLThresholds = SLThresholds()) -> MetricResult:
    """Label blocks good / undetermined / bad / blank and combine into S_L.

    A foreground block is good when all four features are in range, bad
    when two or more fail, otherwise undetermined. Undefined geometry counts
    as failing. ``S_L = (good + 0.5*undetermined) / (good + undetermined + bad)``.
    """
    if ocl.grid.shape != geom.grid.shape:
        raise ValueError("OCL map and ridge geometry use different grids")
    fg = ocl.defined
    with np.errstate(invalid="ignore"):
        fails = ((~(ocl.values >= thresholds.ocl_min)).astype(int)
                 + (~_inside(geom.frequency, thresholds.frequency))
                 + (~_inside(geom.thickness, thresholds.thickness))
                 + (~_inside(geom.ratio, thresholds.ratio)))
    labels = np.full(fg.shape, BLANK, dtype=object)
    labels[fg & (fails == 0)] = GOOD
    labels[fg & (fails == 1)] = UNDETERMINED
    labels[fg & (fails >= 2)] = BAD
    values = np.full(fg.shape, np.nan)
    for lab, v in LABEL_VALUES.items():
        values[labels == lab] = v
    labels.setflags(write=False)
    return _mean_score(BlockQualityMap(ocl.grid, values, labels), "sl")


def sl_score(labels) -> float:
    """S_L from a label array (0 when no good/undetermined/bad blocks)."""
    labels = np.asarray(labels, dtype=object)
    good = int(np.sum(labels == GOOD))
    und = int(np.sum(labels == UNDETERMINED))
    bad = int(np.sum(labels == BAD))
    denom = good + und + bad
    return 0.0 if denom == 0 else (good + 0.5 * und) / denom


# ---------------------------------------------------------------- Gabor


def gabor_kernels(m: int, frequency: float, sigma: float) -> np.ndarray:
    """Zero-DC complex Gabor kernels, shape (m, n, n) with n = 2*ceil(3*sigma) + 1.

    Kernel k responds to ridges at angle k*pi/m: it oscillates along the
    ridge normal.
    """
    half = int(np.ceil(3 * sigma))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    env = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
    kernels = []
    for k in range(m):
        theta = k * np.pi / m + np.pi / 2
        u = xx * np.cos(theta) + yy * np.sin(theta)
        g = env * np.exp(2j * np.pi * frequency * u)
        g -= env * (g.sum() / env.sum())
        kernels.append(g / env.sum())
    return np.array(kernels)


def gabor_responses(img: GrayImage, grid: BlockGrid, m: int = 8, frequency: float = 0.1,
                    sigma: float = 4.0) -> np.ndarray:
    """Block-averaged Gabor magnitude for m orientations, shape (rows, cols, m)."""
    if sigma <= 0:
        raise ConfigError(f"Gabor sigma must be positive, got {sigma}")
    if m < 4:
        raise ConfigError(f"Gabor direction count must be >= 4, got {m}")
    if frequency <= 0:
        raise ConfigError(f"Gabor frequency must be positive, got {frequency}")
    px = img.as_float()
    out = np.empty(grid.shape + (m,))
    for k, kern in enumerate(gabor_kernels(m, frequency, sigma)):
        mag = np.abs(signal.fftconvolve(px, kern[::-1, ::-1], mode="same"))
        out[..., k] = grid.blocks(mag).mean(axis=(2, 3))
    return out


def gabor_quality(img: GrayImage, grid: BlockGrid, m: int = 8, frequency: float = 0.1,
                  sigma: float = 4.0, threshold: float = 0.25,
                  mask: SegmentationMask | None = None) -> MetricResult:
    """Gabor quality index QI: fraction of foreground blocks with anisotropic responses.

    Per block, s = std/mean of the m response magnitudes (each averaged over
    the block's pixels), mapped to s/(s+1); the block is good when that
    exceeds ``threshold``.
    """
    mask = _mask(img, grid, mask)
    resp = gabor_responses(img, grid, m, frequency, sigma)
    mean = resp.mean(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cv = np.where(mean > 0, resp.std(axis=-1) / np.where(mean > 0, mean, 1.0), 0.0)
    norm = cv / (cv + 1.0)
    values = _masked(grid, norm, mask)
    bqm = BlockQualityMap(grid, values)
    n_fg = mask.count
    if n_fg == 0:
        return MetricResult(0.0, bqm, ("gabor_qi: empty foreground, score reported as 0",))
    good = int(np.sum(mask.foreground & (norm > threshold)))
    return MetricResult(good / n_fg, bqm)


# ------------------------------------------------------------ intensity


def variance_contrast(img: GrayImage, grid: BlockGrid, field: DirectionField,
                      mask: SegmentationMask | None = None, window: int = SIGNATURE_WINDOW,
                      width: int = SIGNATURE_WIDTH) -> tuple[MetricResult, MetricResult]:
    """Normalized gray variance and ridge/valley contrast per block.

    Variance is the block gray variance less the image's estimated white
    noise variance (see :func:`~fpqual.imagecore.estimate_noise_sigma`),
    divided by 127.5**2, so sensor noise does not read as ridge contrast.
    Contrast is the peak-to-peak amplitude of the ridge signature over 255;
    blocks with undefined orientation have no contrast value.
    """
    mask = _mask(img, grid, mask)
    noise_var = estimate_noise_sigma(img) ** 2
    var = np.clip((block_variance(img, grid) - noise_var) / MAX_VARIANCE, 0.0, 1.0)
    var_res = _mean_score(BlockQualityMap(grid, _masked(grid, var, mask)), "variance")
    raw = raw_block_signatures(img, grid, field, window, width)
    con = np.full(grid.shape, np.nan)
    for r, c in _block_iter(grid, mask, field):
        sig, _ = trim_signature(raw[r, c])
        if len(sig):
            con[r, c] = np.clip(np.ptp(sig) / 255.0, 0.0, 1.0)
    return var_res, _mean_score(BlockQualityMap(grid, con), "contrast")


def clarity_overlap(pixels: np.ndarray, proj: np.ndarray, sig: np.ndarray, offsets: np.ndarray,
                    bins: int = 32) -> float:
    """Overlap of ridge and valley gray histograms for one block.

    ``proj`` holds each pixel's offset along the ridge normal. A pixel is
    ridge when the signature interpolated at its offset is below the
    signature level (see :func:`signature_level`). Returns NaN when one
    class is empty.
    """
    inside = (proj >= offsets[0] - 1e-9) & (proj <= offsets[-1] + 1e-9)
    wave = np.interp(proj[inside], offsets, sig) - signature_level(sig)
    # pixels sitting exactly on the threshold belong to neither class
    tol = 1e-9 * max(float(np.ptp(sig)), 1.0)
    keep = np.abs(wave) > tol
    vals = pixels[inside][keep]
    ridge = wave[keep] < 0
    if ridge.all() or not ridge.any():
        return np.nan
    edges = np.linspace(0.0, 256.0, bins + 1)
    hr, _ = np.histogram(vals[ridge], bins=edges)
    hv, _ = np.histogram(vals[~ridge], bins=edges)
    return float(np.minimum(hr / hr.sum(), hv / hv.sum()).sum())


def local_clarity(img: GrayImage, grid: BlockGrid, field: DirectionField,
                  mask: SegmentationMask | None = None, bins: int = 32,
                  window: int = SIGNATURE_WINDOW, width: int = SIGNATURE_WIDTH) -> MetricResult:
    """Local clarity 1 - overlap per block; the global score is GCS.

    Pixels of the block are split into ridge/valley by where they fall on
    the block's ridge signature, not by their own gray value, so the two
    histograms overlap only when pixels disagree with the average wave.
    """
    mask = _mask(img, grid, mask)
    raw = raw_block_signatures(img, grid, field, window, width)
    px = img.as_float()
    b = grid.block_size
    cx, cy = grid.centers()
    yy, xx = np.mgrid[0:b, 0:b].astype(np.float64)
    rel_x, rel_y = xx - (b - 1) / 2.0, yy - (b - 1) / 2.0
    alpha = np.full(grid.shape, np.nan)
    for r, c in _block_iter(grid, mask, field):
        sig, offs = trim_signature(raw[r, c])
        if len(sig) < 2:
            continue
        th = field.angle[r, c]
        proj = rel_x * -np.sin(th) + rel_y * np.cos(th)
        block = px[r * b:(r + 1) * b, c * b:(c + 1) * b]
        alpha[r, c] = clarity_overlap(block.ravel(), proj.ravel(), sig, offs, bins)
    res = _mean_score(BlockQualityMap(grid, 1.0 - alpha), "gcs")
    return MetricResult(res.score, res.map, res.warnings)


def clarity_alpha(result: MetricResult) -> np.ndarray:
    """Per-block overlap values from a :func:`local_clarity` result."""
    return 1.0 - result.map.values


# ------------------------------------------------------------ spectrum


def sinusoid_spectrum_check(img: GrayImage, grid: BlockGrid, field: DirectionField,
                            band: tuple = DEFAULT_BAND, peak_ratio: float = 0.35,
                            mask: SegmentationMask | None = None, window: int = SIGNATURE_WINDOW,
                            width: int = SIGNATURE_WIDTH) -> MetricResult:
    """Pass (1) blocks whose signature has a dominant in-band frequency, else 0.

    The peak bin must carry at least ``peak_ratio`` of the signature's AC
    energy. Blocks whose trimmed signature is shorter than the longest band
    period cannot resolve the band and are left unevaluated. The global score
    is the passing fraction of evaluated foreground blocks.
    """
    if not 0 < band[0] < band[1]:
        raise ConfigError(f"invalid ridge band {band}")
    mask = _mask(img, grid, mask)
    raw = raw_block_signatures(img, grid, field, window, width)
    values = _masked(grid, np.zeros(grid.shape), mask)
    for r, c in _block_iter(grid, mask, field):
        sig, _ = trim_signature(raw[r, c])
        if len(sig) * band[0] < 1:
            values[r, c] = np.nan
            continue
        f, ratio = dominant_frequency(sig)
        if ratio >= peak_ratio and band[0] <= f <= band[1]:
            values[r, c] = 1.0
    return _mean_score(BlockQualityMap(grid, values), "sinusoid_pass")
