"""Plan -> program -> execution in one call, shared by the CLI and the estimators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arch import ArchConfig
from .engine import SimReport, execute
from .layout import HbmImage
from .program import BspProgram, check_program
from .schedule import SchedulePlan, gen_program


@dataclass
class RunResult:
    plan: SchedulePlan
    program: BspProgram
    c: np.ndarray
    report: SimReport
    trace: list


def compile_plan(plan: SchedulePlan, arch: ArchConfig) -> BspProgram:
    program = gen_program(plan, arch)
    check_program(program)
    return program


def run_plan(plan: SchedulePlan, arch: ArchConfig, matrices: dict, program: BspProgram | None = None) -> RunResult:
    """Lay ``matrices`` out as the plan asks, then compile (unless given) and execute.

    Only A and B are read from ``matrices``; C starts at zero.
    """
    if program is None:
        program = compile_plan(plan, arch)
    operands = {name: matrices[name] for name in ("A", "B") if name in matrices}
    image = HbmImage.from_matrices(operands, plan.layouts)
    c, report, trace = execute(program, arch, image)
    return RunResult(plan, program, c, report, trace)
