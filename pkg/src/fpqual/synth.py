"""Synthetic images with controlled degradations, plus quality-coupled score sets.

All randomness goes through ``numpy.random.Generator(PCG64(seed))`` so a
seed reproduces a fixture exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from .evaluation import ScoreSet
from .imagecore import DEFAULT_BLOCK_SIZE, DEFAULT_DPI, BlockGrid, DirectionField, GrayImage

RNG_ALGORITHM = "numpy.PCG64"


def rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _check_period(width, height, period):
    if width < 1 or height < 1:
        raise ValueError(f"invalid size {width}x{height}")
    if not 3 <= period <= min(width, height) / 2:
        raise ValueError(
            f"period {period} outside [3, {min(width, height) / 2:g}] for a {width}x{height} image"
        )


def _check_contrast(contrast):
    if not 0.0 <= contrast <= 1.0:
        raise ValueError(f"contrast {contrast} outside [0, 1]")


def _quantize(values) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def generate_grating(width: int, height: int, angle: float, period: float,
                     contrast: float = 1.0, dpi: int = DEFAULT_DPI) -> GrayImage:
    """Sinusoidal grating whose ridges run at ``angle`` radians.

    ``I = 128 + 127*contrast*cos(2*pi/period * (x*cos(a) + y*sin(a)))`` with
    ``a = angle + pi/2``, x along columns and y along rows.
    """
    _check_period(width, height, period)
    _check_contrast(contrast)
    alpha = angle + np.pi / 2
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    phase = 2 * np.pi / period * (x * np.cos(alpha) + y * np.sin(alpha))
    return GrayImage(_quantize(128 + 127 * contrast * np.cos(phase)), dpi)


def generate_whorl(width: int, height: int, period: float, contrast: float = 1.0,
                   block_size: int = DEFAULT_BLOCK_SIZE, dpi: int = DEFAULT_DPI
                   ) -> tuple[GrayImage, DirectionField]:
    """Concentric rings around the image center plus the analytic tangent field.

    The center is ((width-1)/2, (height-1)/2) in pixel coordinates, so for
    sizes of the form 16 + 32k it coincides with a block center.
    """
    _check_period(width, height, period)
    _check_contrast(contrast)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    r = np.hypot(x - cx, y - cy)
    img = GrayImage(_quantize(128 + 127 * contrast * np.cos(2 * np.pi * r / period)), dpi)

    grid = BlockGrid(block_size, height // block_size, width // block_size)
    bx, by = grid.centers()
    dx, dy = bx - cx, by - cy
    at_center = np.hypot(dx, dy) < 1e-9
    truth = DirectionField(np.arctan2(dy, dx) + np.pi / 2, np.where(at_center, 0.0, 1.0))
    return img, truth


# Reference whorl: 25x25 blocks with the center on a block center. A 12 px
# period (about 0.6 mm at 500 dpi) survives a radius-4 box blur, which
# nearly cancels periods of 8 to 10 px.
WHORL_FIXTURE = {"width": 400, "height": 400, "period": 12.0}


def whorl_fixture(contrast: float = 1.0) -> tuple[GrayImage, DirectionField]:
    return generate_whorl(contrast=contrast, **WHORL_FIXTURE)


@dataclass(frozen=True)
class DegradationSpec:
    noise_sigma: float = 0.0
    blur_radius: int = 0
    contrast_scale: float = 1.0
    occlusion_fraction: float = 0.0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.blur_radius < 0 or int(self.blur_radius) != self.blur_radius:
            raise ValueError("blur_radius must be a non-negative integer")
        if not 0.0 <= self.contrast_scale <= 1.0:
            raise ValueError("contrast_scale must lie in [0, 1]")
        if not 0.0 <= self.occlusion_fraction <= 1.0:
            raise ValueError("occlusion_fraction must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return (self.noise_sigma == 0 and self.blur_radius == 0
                and self.contrast_scale == 1.0 and self.occlusion_fraction == 0)


def degrade(img: GrayImage, spec: DegradationSpec, seed: int = 0,
            block_size: int = DEFAULT_BLOCK_SIZE) -> GrayImage:
    """Contrast scaling about 128, box blur, clamped Gaussian noise, then block occlusion.

    Each stage is skipped when it is the identity, so ``DegradationSpec()``
    returns a bit-identical copy. Occlusion tiles the image with
    ``block_size`` squares (partial edge tiles included) and fills the chosen
    tiles with the image mean.
    """
    if spec.is_identity:
        return GrayImage(img.pixels.copy(), img.resolution)
    gen = rng(seed)
    px = img.as_float()
    if spec.contrast_scale != 1.0:
        px = np.rint(128.0 + spec.contrast_scale * (px - 128.0))
    if spec.blur_radius > 0:
        px = np.rint(ndimage.uniform_filter(px, size=2 * int(spec.blur_radius) + 1, mode="reflect"))
    if spec.noise_sigma > 0:
        px = np.rint(px + gen.normal(0.0, spec.noise_sigma, size=px.shape))
    px = np.clip(px, 0, 255)
    if spec.occlusion_fraction > 0:
        h, w = px.shape
        tr, tc = -(-h // block_size), -(-w // block_size)
        n_tiles = tr * tc
        k = int(np.floor(spec.occlusion_fraction * n_tiles + 1e-9))
        fill = np.rint(px.mean())
        for t in gen.permutation(n_tiles)[:k]:
            r, c = divmod(int(t), tc)
            px[r * block_size:(r + 1) * block_size, c * block_size:(c + 1) * block_size] = fill
    return GrayImage(px.astype(np.uint8), img.resolution)


@dataclass(frozen=True)
class SyntheticScoreSpec:
    n_genuine: int = 1000
    n_impostor: int = 1000
    genuine_mean: float = 3.0
    genuine_sd: float = 1.0
    impostor_mean: float = 0.0
    impostor_sd: float = 1.0
    coupling: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_genuine < 1 or self.n_impostor < 1:
            raise ValueError("score counts must be >= 1")
        if self.genuine_sd < 0 or self.impostor_sd < 0:
            raise ValueError("standard deviations must be >= 0")


def generate_score_set(spec: SyntheticScoreSpec) -> ScoreSet:
    """Genuine scores rise with quality (slope ``coupling``); impostor scores ignore it.

    Each record gets one quality ``q ~ U[0, 1]`` used for both enrolment and
    test, so its paired quality is ``q`` itself.
    """
    gen = rng(spec.seed)
    qg = gen.uniform(0.0, 1.0, spec.n_genuine)
    sg = gen.normal(spec.genuine_mean + spec.coupling * (qg - 0.5), spec.genuine_sd)
    qi = gen.uniform(0.0, 1.0, spec.n_impostor)
    si = gen.normal(spec.impostor_mean, spec.impostor_sd, spec.n_impostor)
    genuine = np.concatenate([np.ones(spec.n_genuine, bool), np.zeros(spec.n_impostor, bool)])
    q = np.concatenate([qg, qi])
    meta = {"generator": "synthetic_scores", "rng": RNG_ALGORITHM, **asdict(spec)}
    return ScoreSet(genuine, np.concatenate([sg, si]), q, q.copy(), metadata=meta)


def metadata_text(generator: str, params: dict, seed) -> str:
    """Sidecar key=value lines describing how a fixture was produced."""
    lines = [f"generator={generator}", f"rng={RNG_ALGORITHM}", f"seed={seed}"]
    lines += [f"{k}={v}" for k, v in params.items()]
    return "\n".join(lines) + "\n"
