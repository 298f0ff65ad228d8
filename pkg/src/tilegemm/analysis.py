"""Utilization, operational intensity and roofline records derived from SimReports."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

from .arch import ArchConfig, peak_flops, peak_hbm_bw
from .errors import ZeroTraffic

REPORT_HEADER = (
    "label,cycles,achieved_tflops,operational_intensity,compute_util,bw_util,"
    "engine_util,best,channel_bytes"
)


def operational_intensity(report) -> float:
    """Executed flops per off-chip byte."""
    traffic = report.hbm_bytes
    if traffic <= 0:
        raise ZeroTraffic(f"report {report.label!r} moved no HBM bytes")
    return report.flops_executed / traffic


def achieved_flops(report, arch: ArchConfig) -> float:
    if report.total_cycles <= 0:
        return 0.0
    return report.flops_executed * arch.clock_ghz * 1e9 / report.total_cycles


def achieved_bandwidth(report, arch: ArchConfig) -> float:
    if report.total_cycles <= 0:
        return 0.0
    return report.hbm_bytes * arch.clock_ghz * 1e9 / report.total_cycles


def model_engine_efficiency(tm: int, tn: int, tk: int, em: int, en: int) -> float:
    """Fraction of array MAC slots doing useful work for one tm x tn x tk MMAD."""
    steps = math.ceil(tm / em) * math.ceil(tn / en) * tk
    return (tm * tn * tk) / (steps * em * en)


@dataclass(frozen=True)
class RooflinePoint:
    operational_intensity: float
    achieved_flops: float
    label: str = ""

    def bound(self, arch: ArchConfig) -> float:
        return min(peak_flops(arch), self.operational_intensity * peak_hbm_bw(arch))

    def under_roofline(self, arch: ArchConfig, slack: float = 1e-9) -> bool:
        return self.achieved_flops <= self.bound(arch) * (1 + slack)


@dataclass(frozen=True)
class UtilizationReport:
    compute_utilization: float
    hbm_bw_utilization: float
    engine_tile_utilization: float
    model_engine_efficiency: float


def roofline_point(report, arch: ArchConfig) -> RooflinePoint:
    return RooflinePoint(operational_intensity(report), achieved_flops(report, arch), report.label)


def utilization(report, arch: ArchConfig) -> UtilizationReport:
    cycles = report.total_cycles
    busy = report.engine_busy
    engine = sum(b / cycles for b in busy) / len(busy) if cycles and busy else 0.0
    return UtilizationReport(
        compute_utilization=achieved_flops(report, arch) / peak_flops(arch),
        hbm_bw_utilization=achieved_bandwidth(report, arch) / peak_hbm_bw(arch),
        engine_tile_utilization=engine,
        model_engine_efficiency=model_engine_efficiency(
            report.tm, report.tn, report.tk, report.engine_rows, report.engine_cols
        ),
    )


def best_index(reports) -> int:
    """Index of the fewest-cycles report; ties go to the earlier entry."""
    reports = [r for _, r in reports] if reports and isinstance(reports[0], tuple) else list(reports)
    return min(range(len(reports)), key=lambda i: (reports[i].total_cycles, i))


def emit_report(reports, arch: ArchConfig) -> str:
    """Comparison table as comma-separated text, one row per (label, report).

    Rows keep their input order; the fewest-cycles row is marked ``best=1``.
    Per-channel bytes (read plus written) are ``;``-joined ``ch:bytes`` pairs.
    """
    entries = [(label, rep) for label, rep in reports]
    if not entries:
        raise ValueError("emit_report needs at least one report")
    best = best_index(entries)
    out = io.StringIO()
    out.write(REPORT_HEADER + "\n")
    for i, (label, rep) in enumerate(entries):
        util = utilization(rep, arch)
        try:
            oi = operational_intensity(rep)
        except ZeroTraffic:
            oi = math.inf
        per_channel = {}
        for table in (rep.hbm_bytes_read, rep.hbm_bytes_written):
            for ch, nbytes in table.items():
                per_channel[ch] = per_channel.get(ch, 0) + nbytes
        channels = ";".join(f"{ch}:{per_channel[ch]}" for ch in sorted(per_channel))
        out.write(
            f"{label},{rep.total_cycles},{achieved_flops(rep, arch) / 1e12!r},{oi!r},"
            f"{util.compute_utilization!r},{util.hbm_bw_utilization!r},"
            f"{util.engine_tile_utilization!r},{int(i == best)},{channels}\n"
        )
    return out.getvalue()


def emit_roofline(reports, arch: ArchConfig) -> str:
    out = io.StringIO()
    out.write("label,operational_intensity,achieved_flops,bound_flops\n")
    for label, rep in reports:
        pt = roofline_point(rep, arch)
        out.write(f"{label},{pt.operational_intensity!r},{pt.achieved_flops!r},{pt.bound(arch)!r}\n")
    return out.getvalue()
