"""Cycle-level simulation of tiled GEMM dataflows on a mesh accelerator."""

from .analysis import (
    RooflinePoint,
    UtilizationReport,
    achieved_flops,
    emit_report,
    model_engine_efficiency,
    operational_intensity,
    utilization,
)
from .arch import ArchConfig, load_config, load_config_file, peak_flops, peak_hbm_bw, reference_config
from .engine import SimReport, execute, oracle_gemm, verify
from .fabric import GroupSpec, TileCoord, mask_for_set, resolve_group, xy_route
from .layout import HbmImage, LayoutDesc, SplitScheme, read_preload, write_preload
from .pipeline import run_plan
from .schedule import (
    Dataflow,
    GemmShape,
    LayoutChoice,
    Mapping,
    derive_tiling,
    gen_program,
    make_plan,
    spm_budget,
)

__version__ = "0.1.0"
