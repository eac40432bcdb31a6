"""Whole-image quality measures built on the block fields and the image spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .imagecore import DirectionField, GrayImage, SegmentationMask, angular_difference
from .localmetrics import DEFAULT_BAND, MetricResult, RidgeGeometry

DEFAULT_ABRUPT = np.deg2rad(15.0)
DEFAULT_RINGS = 15
UNIFORMITY_SCALE = 0.5
MIN_GEOMETRY_BLOCKS = 8


def direction_continuity(field: DirectionField, mask: SegmentationMask,
                         abrupt: float = DEFAULT_ABRUPT) -> MetricResult:
    """1 - fraction of 4-adjacent foreground block pairs whose orientations differ by more than ``abrupt``."""
    fg = mask.foreground
    a = field.angle
    horiz = fg[:, :-1] & fg[:, 1:]
    vert = fg[:-1, :] & fg[1:, :]
    d_h = angular_difference(a[:, :-1], a[:, 1:])
    d_v = angular_difference(a[:-1, :], a[1:, :])
    pairs = int(horiz.sum() + vert.sum())
    if pairs == 0:
        return MetricResult(0.0, None, ("continuity: no adjacent foreground blocks, score reported as 0",))
    abrupt_pairs = int(np.sum(horiz & (d_h > abrupt)) + np.sum(vert & (d_v > abrupt)))
    return MetricResult(1.0 - abrupt_pairs / pairs)


def frequency_uniformity(geom: RidgeGeometry, mask: SegmentationMask | None = None,
                         scale: float = UNIFORMITY_SCALE) -> MetricResult:
    """1/(1 + s/scale) where s is the std of the ridge-to-valley ratio over defined blocks."""
    ok = geom.defined
    if mask is not None:
        ok = ok & mask.foreground
    ratios = geom.ratio[ok]
    if ratios.size < MIN_GEOMETRY_BLOCKS:
        return MetricResult(0.0, None, (
            f"freq_uniformity: only {ratios.size} blocks with ridge geometry "
            f"(need {MIN_GEOMETRY_BLOCKS}), score reported as 0",))
    return MetricResult(1.0 / (1.0 + float(ratios.std()) / scale))


@dataclass(frozen=True, eq=False)
class SpectralBands:
    edges: np.ndarray
    energy: np.ndarray
    p: np.ndarray

    @property
    def count(self) -> int:
        return len(self.energy)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def to_csv(self) -> str:
        lines = ["ring,center_frequency,p"]
        for i, (f, p) in enumerate(zip(self.centers, self.p)):
            lines.append(f"{i},{f:.6f},{p:.10f}")
        return "\n".join(lines) + "\n"


def power_spectrum(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Power spectrum of the mean-removed, Hann-windowed image and the radial frequency of each bin."""
    px = img.as_float()
    px = px - px.mean()
    h, w = px.shape
    window = np.outer(np.hanning(h), np.hanning(w))
    power = np.abs(np.fft.fft2(px * window)) ** 2
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return power, np.hypot(fx, fy)


def spectral_energy_concentration(img: GrayImage, rings: int = DEFAULT_RINGS, roi: tuple = DEFAULT_BAND,
                                  mask: SegmentationMask | None = None) -> tuple[MetricResult, SpectralBands]:
    """Q_F = 1 - H/log(T) from the entropy of energies in T equal-width rings of the ROI annulus.

    With a single ring Q_F is 1 whenever the ROI holds energy.
    """
    if rings < 1:
        raise ConfigError(f"ring count must be >= 1, got {rings}")
    fmin, fmax = roi
    if not 0 <= fmin < fmax:
        raise ConfigError(f"invalid spectral ROI {roi}")
    edges = np.linspace(fmin, fmax, rings + 1)
    empty = SpectralBands(edges, np.zeros(rings), np.zeros(rings))
    if mask is not None and mask.count == 0:
        return MetricResult(0.0, None, ("qf: empty foreground, score reported as 0",)), empty
    power, radius = power_spectrum(img)
    idx = np.searchsorted(edges, radius, side="right") - 1
    idx[radius == fmax] = rings - 1
    inside = (idx >= 0) & (idx < rings)
    energy = np.bincount(idx[inside], weights=power[inside], minlength=rings)
    total = energy.sum()
    if total <= 0:
        return MetricResult(0.0, None, ("qf: no spectral energy in the ROI, score reported as 0",)), empty
    p = energy / total
    bands = SpectralBands(edges, energy, p)
    if rings == 1:
        return MetricResult(1.0), bands
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    return MetricResult(float(np.clip(1.0 - entropy / np.log(rings), 0.0, 1.0))), bands
