"""Run every quality metric on one image and collect a :class:`QualityReport`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import globalmetrics as gm
from . import localmetrics as lm
from .config import ToolConfig
from .imagecore import BlockGrid, GrayImage, direction_field, require_metric_size, segment_foreground

METRICS = ("ocl", "sl", "goqs", "qs", "gabor_qi", "variance", "contrast", "gcs",
           "sinusoid_pass", "continuity", "freq_uniformity", "qf")
MAP_METRICS = ("ocl", "sl", "goqs", "qs", "gabor_qi", "variance", "contrast", "gcs", "sinusoid_pass")


@dataclass
class QualityReport:
    image: str
    scores: dict
    warnings: list = field(default_factory=list)
    maps: dict = field(default_factory=dict)
    bands: gm.SpectralBands | None = None

    def csv_rows(self):
        return [f"{m},{self.scores[m]:.6f}" for m in self.scores]


def parse_metrics(spec: str | None) -> tuple:
    if not spec:
        return METRICS
    names = tuple(m.strip() for m in spec.split(",") if m.strip())
    bad = [m for m in names if m not in METRICS]
    if bad:
        raise ValueError(f"unknown metric(s) {', '.join(bad)}; choose from {', '.join(METRICS)}")
    return tuple(m for m in METRICS if m in names)


def assess(img: GrayImage, config: ToolConfig | None = None, metrics=METRICS,
           image_id: str = "") -> QualityReport:
    """Compute the requested global metrics (canonical order) for one image."""
    config = config or ToolConfig()
    cfg = config.at_dpi(img.resolution)
    require_metric_size(img)
    grid = BlockGrid.for_image(img, cfg.effective_block_size)
    mask = segment_foreground(img, grid, cfg.variance_threshold)
    field_ = direction_field(img, grid)
    window, width = cfg.window, int(cfg.signature_width)
    wanted = set(metrics)
    results = {}

    def need(*names):
        return bool(wanted.intersection(names))

    if need("ocl", "sl"):
        results["ocl"] = lm.ocl_map(img, grid, field_, mask)
    geom = None
    if need("sl", "freq_uniformity"):
        geom = lm.ridge_geometry(img, grid, field_, mask, window, width)
    if need("sl"):
        th = lm.SLThresholds(cfg.sl_ocl_min, cfg.band,
                             (cfg.sl_thickness_min * cfg.scale, cfg.sl_thickness_max * cfg.scale),
                             (cfg.sl_ratio_min, cfg.sl_ratio_max))
        results["sl"] = lm.block_classification_sl(results["ocl"].map, geom, th)
    if need("goqs"):
        results["goqs"] = lm.loq_map(field_, mask, grid)
    if need("qs"):
        results["qs"] = lm.coherence_map(img, grid, mask)
    if need("gabor_qi"):
        m, f, s, t = cfg.gabor_params
        results["gabor_qi"] = lm.gabor_quality(img, grid, m, f, s, t, mask)
    if need("variance", "contrast"):
        results["variance"], results["contrast"] = lm.variance_contrast(img, grid, field_, mask, window, width)
    if need("gcs"):
        results["gcs"] = lm.local_clarity(img, grid, field_, mask, int(cfg.clarity_bins), window, width)
    if need("sinusoid_pass"):
        results["sinusoid_pass"] = lm.sinusoid_spectrum_check(img, grid, field_, cfg.band, cfg.peak_ratio,
                                                              mask, window, width)
    if need("continuity"):
        results["continuity"] = gm.direction_continuity(field_, mask, np.deg2rad(cfg.abrupt_deg))
    if need("freq_uniformity"):
        results["freq_uniformity"] = gm.frequency_uniformity(geom, mask)
    bands = None
    if need("qf"):
        results["qf"], bands = gm.spectral_energy_concentration(img, int(cfg.rings), cfg.band, mask)

    report = QualityReport(image_id, {}, bands=bands)
    for name in METRICS:
        if name not in wanted:
            continue
        res = results[name]
        report.scores[name] = float(res.score)
        report.warnings.extend(res.warnings)
        if res.map is not None:
            report.maps[name] = res.map
    return report
