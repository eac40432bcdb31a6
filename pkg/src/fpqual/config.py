"""Tool configuration as a flat ``key=value`` file.

Lengths and frequencies are stated at 500 dpi and rescaled for other
resolutions by :meth:`ToolConfig.at_dpi`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields

from .errors import ConfigError
from .imagecore import DEFAULT_DPI


@dataclass(frozen=True)
class ToolConfig:
    dpi: int = DEFAULT_DPI
    block_size: int = 0  # 0 = derive from dpi
    variance_threshold: float = 100.0
    gabor_m: int = 8
    gabor_frequency: float = 0.1
    gabor_sigma: float = 4.0
    gabor_threshold: float = 0.25
    band_min: float = 1 / 25
    band_max: float = 1 / 3
    sl_ocl_min: float = 0.5
    sl_thickness_min: float = 1.5
    sl_thickness_max: float = 15.0
    sl_ratio_min: float = 0.4
    sl_ratio_max: float = 2.5
    signature_window: int = 32
    signature_width: int = 5
    clarity_bins: int = 32
    peak_ratio: float = 0.35
    rings: int = 15
    abrupt_deg: float = 15.0
    fixed_far: float = 0.01
    fixed_frr: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for f in fields(self):
            v = getattr(self, f.name)
            need(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
                 f"{f.name} must be a finite number, got {v!r}")
        need(self.dpi > 0, "dpi must be positive")
        need(self.block_size == 0 or self.block_size >= 8, "block_size must be 0 (auto) or >= 8")
        need(self.variance_threshold >= 0, "variance_threshold must be >= 0")
        need(self.gabor_m >= 4, "gabor_m must be >= 4")
        need(self.gabor_frequency > 0, "gabor_frequency must be positive")
        need(self.gabor_sigma > 0, "gabor_sigma must be positive")
        need(0 <= self.gabor_threshold <= 1, "gabor_threshold must lie in [0, 1]")
        need(0 < self.band_min < self.band_max <= 0.5, "ridge band needs 0 < band_min < band_max <= 0.5")
        need(0 <= self.sl_ocl_min <= 1, "sl_ocl_min must lie in [0, 1]")
        need(0 < self.sl_thickness_min < self.sl_thickness_max, "invalid sl thickness range")
        need(0 < self.sl_ratio_min < self.sl_ratio_max, "invalid sl ratio range")
        need(self.signature_window >= 8, "signature_window must be >= 8")
        need(self.signature_width >= 1, "signature_width must be >= 1")
        need(self.clarity_bins >= 2, "clarity_bins must be >= 2")
        need(0 < self.peak_ratio <= 1, "peak_ratio must lie in (0, 1]")
        need(self.rings >= 1, "rings must be >= 1")
        need(0 < self.abrupt_deg < 90, "abrupt_deg must lie in (0, 90)")
        need(0 < self.fixed_far < 1 and 0 < self.fixed_frr < 1, "operating rates must lie in (0, 1)")
        for name in ("gabor_m", "block_size", "signature_window", "signature_width", "clarity_bins", "rings", "dpi"):
            need(float(getattr(self, name)).is_integer(), f"{name} must be an integer")

    def replace(self, **changes) -> "ToolConfig":
        return dataclasses.replace(self, **changes)

    # -- resolution scaling

    @property
    def scale(self) -> float:
        return self.dpi / DEFAULT_DPI

    @property
    def effective_block_size(self) -> int:
        if self.block_size:
            return int(self.block_size)
        return max(8, int(round(16 * self.scale)))

    @property
    def band(self) -> tuple[float, float]:
        return (min(self.band_min / self.scale, 0.5), min(self.band_max / self.scale, 0.5))

    @property
    def window(self) -> int:
        return max(8, int(round(self.signature_window * self.scale)))

    @property
    def gabor_params(self) -> tuple[int, float, float, float]:
        return (int(self.gabor_m), min(self.gabor_frequency / self.scale, 0.5),
                self.gabor_sigma * self.scale, self.gabor_threshold)

    def at_dpi(self, dpi: int | None) -> "ToolConfig":
        return self if dpi is None or dpi == self.dpi else self.replace(dpi=int(dpi))

    # -- text format

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, base: "ToolConfig | None" = None) -> "ToolConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key, raw = (p.strip() for p in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, known[key].type, lineno)
        return dataclasses.replace(base or cls(), **values)

    @classmethod
    def load(cls, path, base: "ToolConfig | None" = None) -> "ToolConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.loads(fh.read(), base)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _parse_value(key, raw, typ, lineno):
    try:
        if typ in (int, "int"):
            f = float(raw)
            if not f.is_integer():
                raise ValueError
            return int(f)
        return float(raw)
    except ValueError:
        raise ConfigError(f"config line {lineno}: {key} needs a number, got {raw!r}") from None
