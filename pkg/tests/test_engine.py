import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _cases import plans_for
from tilegemm.arch import reference_config
from tilegemm.engine import SimReport, TRACE_HEADER, execute, oracle_gemm, trace_to_csv, verify
from tilegemm.errors import PreloadMissingMatrix, ShapeMismatch
from tilegemm.layout import HbmImage, base_layout
from tilegemm.pipeline import compile_plan, run_plan
from tilegemm.program import Mmad
from tilegemm.schedule import Dataflow, GemmShape, LayoutChoice, Mapping, make_plan

ARCH4 = reference_config(4)


def _run(plan, a, b, arch=ARCH4):
    return run_plan(plan, arch, {"A": a, "B": b})


def test_single_tile_mmad_latency(int_mats):
    arch = reference_config(1)
    a, b = int_mats(64, 64, 64)
    res = _run(make_plan(GemmShape(64, 64, 64), Mapping(1, 1), 64, "Baseline"), a, b, arch)
    assert res.report.engine_busy == (256,)
    assert verify(res.c, a, b).passed


def test_startup_cycles_add_per_mmad(int_mats):
    a, b = int_mats(64, 64, 128)
    plan = make_plan(GemmShape(64, 64, 128), Mapping(1, 1), 64, "Baseline")
    arch = reference_config(1)
    slow = _run(plan, a, b, arch.replace(mmad_startup_cycles=10)).report
    assert slow.engine_busy == (2 * (256 + 10),)


@pytest.mark.parametrize("plan", plans_for((64, 48, 96), (4, 4), tk=16) + plans_for((64, 48, 96), (1, 16), tk=16),
                         ids=lambda p: p.label)
def test_zero_and_identity(plan):
    m, n, k = 64, 48, 96
    b = np.random.default_rng(3).standard_normal((k, n))
    assert not _run(plan, np.zeros((m, k)), b).c.any()
    eye_plan = make_plan(GemmShape(k, n, k), plan.mapping, 16, plan.dataflow,
                         group_rows=plan.group_rows, group_cols=plan.group_cols,
                         double_buffered=plan.double_buffered)
    assert np.array_equal(_run(eye_plan, np.eye(k), b).c, b)


def test_summa_reads_quarter_of_baseline_a(int_mats):
    a, b = int_mats(256, 256, 256)
    lays = {"A": LayoutChoice(), "B": LayoutChoice(start=4)}
    reads = {}
    for kind in ("Baseline", "Summa"):
        plan = make_plan(GemmShape(256, 256, 256), Mapping(4, 4), 64, kind, layouts=lays)
        reads[kind] = _run(plan, a, b).report.hbm_bytes_read
    assert reads["Baseline"][0] == 4 * reads["Summa"][0]
    assert reads["Baseline"][4] == 4 * reads["Summa"][4]


@pytest.mark.parametrize("plan", plans_for((128, 96, 160), (2, 8)), ids=lambda p: p.label)
def test_report_invariants(plan, int_mats):
    a, b = int_mats(128, 96, 160)
    res = _run(plan, a, b)
    rep = res.report
    assert verify(res.c, a, b).passed
    assert rep.flops_executed == 2 * 128 * 96 * 160
    assert rep.total_bytes_written == 128 * 96 * ARCH4.elem_bytes
    # engine busy equals the latency formula summed over each tile's MMADs
    t = plan.tiling
    per = math.ceil(t.tm / ARCH4.engine_rows) * math.ceil(t.tn / ARCH4.engine_cols) * t.tk
    counts = [0] * 16
    for _, tile, _, op in res.program.iter_ops():
        if isinstance(op, Mmad):
            counts[tile.row * 4 + tile.col] += 1
    assert list(rep.engine_busy) == [c * per for c in counts]
    assert all(busy <= rep.total_cycles for busy in rep.engine_busy)
    # barrier: nothing in superstep s+1 starts before superstep s ends
    ends, starts = {}, {}
    for rec in res.trace:
        ends[rec.superstep] = max(ends.get(rec.superstep, 0), rec.cycle_end)
        starts[rec.superstep] = min(starts.get(rec.superstep, 1 << 62), rec.cycle_start)
    for s in sorted(starts)[1:]:
        assert starts[s] >= max(e for q, e in ends.items() if q < s)
    assert list(rep.superstep_cycles) == sorted(rep.superstep_cycles)


def test_timing_independent_of_values(int_mats):
    plan = plans_for((128, 96, 160), (4, 4))[3]
    a, b = int_mats(128, 96, 160, seed=1)
    first = _run(plan, a, b).report
    second = _run(plan, a * 0.5 + 3, -b).report
    assert first.total_cycles == second.total_cycles
    assert first.engine_busy == second.engine_busy


def test_determinism(int_mats):
    plan = plans_for((64, 528, 512), (1, 16))[-1]
    a, b = int_mats(64, 528, 512)
    runs = [_run(plan, a, b) for _ in range(3)]
    assert len({r.report.to_text() for r in runs}) == 1
    assert len({trace_to_csv(r.trace) for r in runs}) == 1
    assert all(np.array_equal(runs[0].c, r.c) for r in runs)


def test_report_text_round_trip(int_mats):
    plan = plans_for((64, 48, 96), (4, 4), tk=16)[0]
    a, b = int_mats(64, 48, 96)
    rep = _run(plan, a, b).report
    assert SimReport.from_text(rep.to_text()) == rep


def test_trace_csv_format(int_mats):
    plan = plans_for((64, 48, 96), (4, 4), tk=16)[2]
    a, b = int_mats(64, 48, 96)
    text = trace_to_csv(_run(plan, a, b).trace)
    lines = text.splitlines()
    assert lines[0] == TRACE_HEADER
    assert all(len(l.split(",")) == 7 for l in lines)


def test_splitk_float_tolerance():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((64, 256)), rng.standard_normal((256, 128))
    plan = make_plan(GemmShape(64, 128, 256), Mapping(1, 2, 8), 16, "SplitKSumma")
    res = _run(plan, a, b)
    check = verify(res.c, a, b)
    assert check.passed and check.max_abs_error < 1e-10


def test_missing_preload_matrix():
    plan = make_plan(GemmShape(64, 64, 64), Mapping(4, 4), 16, "Summa")
    prog = compile_plan(plan, ARCH4)
    image = HbmImage.from_matrices({"A": np.ones((64, 64))}, {"A": base_layout(64, 64)})
    with pytest.raises(PreloadMissingMatrix):
        execute(prog, ARCH4, image)


def test_oracle():
    a = np.arange(6.0).reshape(2, 3)
    b = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(oracle_gemm(a, b), a @ b)
    with pytest.raises(ShapeMismatch):
        oracle_gemm(a, a)
    with pytest.raises(ShapeMismatch):
        verify(np.zeros((3, 3)), a, b)
    assert not verify(a @ b + 1e-6, a, b).passed


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 80), st.integers(1, 80), st.integers(1, 80),
    st.sampled_from(list(Dataflow)), st.booleans(), st.integers(0, 2**31),
    st.sampled_from([8, 16, 32]),
)
def test_random_shapes_match_oracle(m, n, k, kind, db, seed, tk):
    rng = np.random.default_rng(seed)
    a = rng.integers(-8, 9, (m, k)).astype(float)
    b = rng.integers(-8, 9, (k, n)).astype(float)
    mapping = Mapping(2, 4, 2) if kind == Dataflow.SPLITK_SUMMA else Mapping(4, 4)
    groups = 2 if kind.hierarchical else 1
    plan = make_plan(GemmShape(m, n, k), mapping, tk, kind, group_rows=groups, group_cols=groups,
                     double_buffered=db, layouts={"A": LayoutChoice(), "B": LayoutChoice(start=2, channels=3)})
    res = _run(plan, a, b)
    assert np.array_equal(res.c, oracle_gemm(a, b))
    assert res.report.flops_executed == 2 * m * n * k
