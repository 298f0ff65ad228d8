"""Accelerator architecture description.

A configuration document is line-oriented ``key = value`` text. ``#`` starts a
comment. Integer sizes accept binary ``K``/``M`` suffixes (``384K`` is
393216).
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    ChannelCountExceedsEdge,
    ConfigError,
    MissingField,
    NonPositiveValue,
    NonPowerOfTwoGrid,
)

_SUFFIX = {"": 1, "K": 1024, "M": 1024 * 1024}
_INT_RE = re.compile(r"^([+-]?\d+)\s*([KkMm]?)$")

# fields allowed to be zero
_NON_NEGATIVE = {
    "hop_latency_cycles",
    "hbm_channels_west",
    "hbm_channels_south",
    "mmad_startup_cycles",
}
_OPTIONAL = {"mmad_startup_cycles": 0}


@dataclass(frozen=True)
class ArchConfig:
    grid_rows: int
    grid_cols: int
    engine_rows: int
    engine_cols: int
    clock_ghz: float
    spm_bytes: int
    spm_bw_bytes_per_cycle: int
    noc_link_bytes_per_cycle: int
    hop_latency_cycles: int
    hbm_channels_west: int
    hbm_channels_south: int
    hbm_channel_bytes_per_cycle: int
    elem_bytes: int
    mmad_startup_cycles: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def num_tiles(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def num_channels(self) -> int:
        return self.hbm_channels_west + self.hbm_channels_south

    def channel_router(self, channel: int) -> tuple[int, int]:
        """Router (row, col) that HBM channel ``channel`` attaches to.

        West channels come first, then south channels.
        """
        if not 0 <= channel < self.num_channels:
            raise ValueError(f"channel {channel} out of range")
        if channel < self.hbm_channels_west:
            return (channel * self.grid_rows // self.hbm_channels_west, 0)
        s = channel - self.hbm_channels_west
        return (self.grid_rows - 1, s * self.grid_cols // self.hbm_channels_south)

    def replace(self, **changes) -> "ArchConfig":
        return dataclasses.replace(self, **changes)


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def validate(cfg: ArchConfig) -> None:
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _NON_NEGATIVE:
            if value < 0:
                raise NonPositiveValue(f.name, f"must be >= 0, got {value}")
        elif not value > 0:
            raise NonPositiveValue(f.name, f"must be > 0, got {value}")
    for key in ("grid_rows", "grid_cols"):
        if not _is_pow2(getattr(cfg, key)):
            raise NonPowerOfTwoGrid(key, f"must be a power of two, got {getattr(cfg, key)}")
    if cfg.hbm_channels_west > cfg.grid_rows:
        raise ChannelCountExceedsEdge(
            "hbm_channels_west", f"{cfg.hbm_channels_west} channels on {cfg.grid_rows} rows"
        )
    if cfg.hbm_channels_south > cfg.grid_cols:
        raise ChannelCountExceedsEdge(
            "hbm_channels_south", f"{cfg.hbm_channels_south} channels on {cfg.grid_cols} cols"
        )


def _parse_int(key: str, text: str) -> int:
    m = _INT_RE.match(text)
    if not m:
        raise ConfigError(key, f"expected an integer, got {text!r}")
    return int(m.group(1)) * _SUFFIX[m.group(2).upper()]


def _parse_float(key: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(key, f"expected a finite number, got {text!r}")
    return value


def parse_key_values(text: str) -> dict[str, str]:
    """Split ``key = value`` lines, dropping comments and blank lines."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        out[key] = value
    return out


def load_config(text: str) -> ArchConfig:
    values = parse_key_values(text)
    kwargs = {}
    for f in dataclasses.fields(ArchConfig):
        if f.name not in values:
            if f.name in _OPTIONAL:
                kwargs[f.name] = _OPTIONAL[f.name]
                continue
            raise MissingField(f.name, "missing from configuration")
        raw = values.pop(f.name)
        kwargs[f.name] = (
            _parse_float(f.name, raw) if f.name == "clock_ghz" else _parse_int(f.name, raw)
        )
    if values:
        key = sorted(values)[0]
        raise ConfigError(key, "unknown configuration key")
    return ArchConfig(**kwargs)


def load_config_file(path) -> ArchConfig:
    return load_config(Path(path).read_text())


def serialize(cfg: ArchConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"


def peak_flops(cfg: ArchConfig) -> float:
    """Peak FLOP/s: one MAC (2 flop) per compute element per cycle on every tile."""
    return (
        cfg.grid_rows * cfg.grid_cols * cfg.engine_rows * cfg.engine_cols * 2
        * cfg.clock_ghz * 1e9
    )


def peak_hbm_bw(cfg: ArchConfig) -> float:
    """Aggregate HBM bandwidth in bytes/s."""
    return cfg.num_channels * cfg.hbm_channel_bytes_per_cycle * cfg.clock_ghz * 1e9


REFERENCE_TEXT = """\
# 32x32 tiles, 64x16 engines at 1.93 TFLOP/s each, 384 KiB SPM at 512 GB/s,
# 4096-bit links, 32 west + 32 south HBM channels sharing 4 TB/s.
grid_rows = 32
grid_cols = 32
engine_rows = 64
engine_cols = 16
clock_ghz = 0.943
spm_bytes = 384K
spm_bw_bytes_per_cycle = 543
noc_link_bytes_per_cycle = 512
hop_latency_cycles = 1
hbm_channels_west = 32
hbm_channels_south = 32
hbm_channel_bytes_per_cycle = 68
elem_bytes = 1
mmad_startup_cycles = 0
"""


def reference_config(grid: int | None = None) -> ArchConfig:
    """The 32x32 reference machine, or the same tile scaled to a ``grid``x``grid`` mesh.

    Scaled variants keep one HBM channel per edge router on the west and south
    edges.
    """
    cfg = load_config(REFERENCE_TEXT)
    if grid is None:
        return cfg
    return cfg.replace(
        grid_rows=grid, grid_cols=grid, hbm_channels_west=grid, hbm_channels_south=grid
    )
