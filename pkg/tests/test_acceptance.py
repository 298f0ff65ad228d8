"""Acceptance suite: one pass/fail line per criterion is printed in the terminal summary.

Run directly with ``python tests/test_acceptance.py`` or as part of ``pytest``.
"""

import itertools
import sys
import time

import numpy as np
import pytest

from _cases import LOGICAL, SHAPES, plans_for
from tilegemm.analysis import model_engine_efficiency, operational_intensity
from tilegemm.arch import peak_flops, peak_hbm_bw, reference_config
from tilegemm.cli import main
from tilegemm.engine import oracle_gemm, trace_to_csv, verify
from tilegemm.errors import SpmOverflow
from tilegemm.fabric import GroupSpec, mask_for_set, resolve_group
from tilegemm.layout import LayoutDesc, SplitScheme, channel_bytes, pack
from tilegemm.pipeline import compile_plan, run_plan
from tilegemm.schedule import (
    ClusterRemap,
    GemmShape,
    LayoutChoice,
    Mapping,
    derive_tiling,
    gen_program,
    make_plan,
    spm_budget,
)

ARCH4 = reference_config(4)
criterion = pytest.mark.criterion

# traces gathered by the other criteria, checked for barrier order at the end
_TRACES: list = []


def _mats(shape, seed, integer):
    m, n, k = shape
    rng = np.random.default_rng(seed)
    if integer:
        return rng.integers(-8, 9, (m, k)).astype(float), rng.integers(-8, 9, (k, n)).astype(float)
    return rng.standard_normal((m, k)), rng.standard_normal((k, n))


@pytest.fixture(scope="module")
def functional_runs():
    start = time.perf_counter()
    outcomes = []
    for shape, logical in itertools.product(SHAPES, LOGICAL):
        ints = _mats(shape, 11, True)
        floats = _mats(shape, 12, False)
        for plan in plans_for(shape, logical):
            program = compile_plan(plan, ARCH4)
            exact = run_plan(plan, ARCH4, {"A": ints[0], "B": ints[1]}, program)
            approx = run_plan(plan, ARCH4, {"A": floats[0], "B": floats[1]}, program)
            outcomes.append((plan, ints, exact, floats, approx))
            _TRACES.append((plan.label, exact.trace))
    return outcomes, time.perf_counter() - start


@criterion(1, "functional oracle equivalence for every dataflow, grid and buffering (< 60 s)")
def test_functional_equivalence(functional_runs):
    outcomes, elapsed = functional_runs
    kinds = {(p.dataflow, p.double_buffered) for p, *_ in outcomes}
    assert len(kinds) == 12  # six kinds, single and double buffered
    for plan, (a, b), exact, (fa, fb), approx in outcomes:
        assert np.array_equal(exact.c, oracle_gemm(a, b)), plan.label
        assert verify(approx.c, fa, fb, rtol=1e-9, atol=1e-12).passed, plan.label
        assert exact.report.flops_executed == 2 * plan.shape.m * plan.shape.n * plan.shape.k
    assert elapsed < 60, f"{elapsed:.1f}s"


@criterion(2, "mask groups match exhaustive enumeration; remap groups round-trip")
def test_mask_oracle():
    rng = np.random.default_rng(2024)
    for n in range(1000):
        size = (4, 8, 32)[n % 3]
        m_row, m_col = (int(x) for x in rng.integers(0, size, 2))
        s_row = int(rng.integers(0, size)) & m_row
        s_col = int(rng.integers(0, size)) & m_col
        spec = GroupSpec(s_row, m_row, s_col, m_col)
        brute = {(i, j) for i in range(size) for j in range(size)
                 if i & m_row == s_row and j & m_col == s_col}
        assert resolve_group(spec, size, size) == brute
    pow2 = [1, 2, 4, 8, 16, 32]
    for pr, pc in itertools.product(pow2, repeat=2):
        total = pr * pc
        for ks, lr in itertools.product(pow2 + [64, 128, 256, 512, 1024], repeat=2):
            if total % (ks * lr):
                continue
            lc = total // (ks * lr)
            remap = ClusterRemap(pr, pc, lr, lc, ks)
            groups = []
            groups += [[(i, j, s) for j in range(lc) for s in range(ks)] for i in range(lr)]
            groups += [[(i, j, 0) for i in range(lr)] for j in range(lc)]
            groups += [[(i, j, s) for s in range(ks)] for i in range(lr) for j in range(min(lc, 2))]
            groups += [[(i, j, s) for i in range(lr) for j in range(lc)] for s in range(ks)]
            for g in groups:
                tiles = {remap.to_physical(*x) for x in g}
                spec = mask_for_set(tiles, pr, pc)
                assert resolve_group(spec, pr, pc) == tiles


@criterion(3, "reference peaks within 0.5% of 1.979e15 FLOP/s and 4.096e12 B/s")
def test_peaks():
    cfg = reference_config()
    assert abs(peak_flops(cfg) / 1.979e15 - 1) <= 5e-3
    assert abs(peak_hbm_bw(cfg) / 4.096e12 - 1) <= 5e-3


@criterion(4, "tiling arithmetic gives TN=66 and TN=528")
def test_tiling_arithmetic():
    shape = GemmShape(4096, 2112, 7168)
    assert derive_tiling(shape, Mapping(32, 32), 64).tn == 66
    assert derive_tiling(shape, Mapping(32, 4, 8), 64).tn == 528


@criterion(5, "Summa cuts A and B reads 8x on 8x8; channel-spread layout lowers cycles")
def test_operand_reuse_and_layout():
    arch = reference_config(8)
    a, b = _mats((256, 256, 256), 5, True)
    shape = GemmShape(256, 256, 256)
    # A alone in channel 0, B alone in channel 8, so reads split per operand
    lays = {"A": LayoutChoice(), "B": LayoutChoice(start=8), "C": LayoutChoice(start=15)}
    runs = {}
    for kind in ("Baseline", "Summa"):
        res = run_plan(make_plan(shape, Mapping(8, 8), 32, kind, layouts=lays), arch, {"A": a, "B": b})
        runs[kind] = res.report
        _TRACES.append((kind, res.trace))
    base, summa = runs["Baseline"].hbm_bytes_read, runs["Summa"].hbm_bytes_read
    assert base[0] == 8 * summa[0] and base[8] == 8 * summa[8]
    assert operational_intensity(runs["Summa"]) > operational_intensity(runs["Baseline"])
    spread = LayoutChoice(split=SplitScheme(8, 8), channels=16)
    cycles = []
    for choice in (LayoutChoice(), spread):
        plan = make_plan(shape, Mapping(8, 8), 32, "Summa", layouts={n: choice for n in "ABC"})
        res = run_plan(plan, arch, {"A": a, "B": b})
        assert np.array_equal(res.c, a @ b)
        cycles.append(res.report.total_cycles)
        _TRACES.append(("summa-layout", res.trace))
    assert cycles[1] < cycles[0]


@criterion(6, "64x528 tiles fully use the 64x16 engine (0.825 for 128x66); split-K beats 2D")
def test_split_k_beats_2d():
    assert model_engine_efficiency(64, 528, 64, 64, 16) == 1.0
    assert model_engine_efficiency(128, 66, 64, 64, 16) == 0.825
    shape = GemmShape(64, 2112, 7168)
    a, b = _mats((64, 2112, 7168), 6, False)

    def lay(r, c, n):
        return LayoutChoice(split=SplitScheme(r, c), channels=n)

    # each plan gets the layout that spreads its own tiles over all channels
    candidates = {
        "2d-4x4": (Mapping(4, 4), "Summa", {"A": lay(4, 1, 4), "B": lay(1, 4, 4), "C": lay(4, 4, 8)}),
        "2d-1x16": (Mapping(1, 16), "Summa", {"A": lay(1, 8, 8), "B": lay(1, 8, 8), "C": lay(1, 8, 8)}),
        "splitk-1x2x8": (Mapping(1, 2, 8), "SplitKSumma", {"A": lay(1, 8, 8), "B": lay(8, 1, 8), "C": lay(1, 2, 2)}),
    }
    cycles = {}
    for name, (mapping, kind, lays) in candidates.items():
        plan = make_plan(shape, mapping, 64, kind, layouts=lays, double_buffered=True)
        res = run_plan(plan, ARCH4, {"A": a, "B": b})
        assert verify(res.c, a, b).passed
        cycles[name] = res.report.total_cycles
        _TRACES.append((name, res.trace))
    assert derive_tiling(shape, Mapping(1, 2, 8), 64).tn == 1056
    assert cycles["splitk-1x2x8"] < min(cycles["2d-4x4"], cycles["2d-1x16"]), cycles


@criterion(7, "per-channel bytes equal when blocks divide evenly, else within one block")
def test_layout_balance():
    rng = np.random.default_rng(7)
    for _ in range(100):
        sr, sc = (int(x) for x in rng.integers(1, 9, 2))
        channels = int(rng.integers(1, 17))
        lay = LayoutDesc(
            int(rng.integers(1, 200)), int(rng.integers(1, 200)), SplitScheme(sr, sc),
            int(rng.integers(1, 17)), int(rng.integers(1, 17)), int(rng.integers(0, 4)), channels,
        )
        sizes = channel_bytes(lay, 1)
        stored = {ch: arr.size for ch, arr in pack(np.ones((lay.matrix_rows, lay.matrix_cols)), lay).items()}
        assert stored == sizes
        values = list(sizes.values())
        if (sr * sc) % channels == 0:
            assert len(set(values)) == 1
        else:
            assert max(values) - min(values) <= lay.block_elems


@criterion(8, "three repeated runs give byte-identical reports, traces and outputs")
def test_determinism():
    shape = (128, 96, 160)
    a, b = _mats(shape, 8, False)
    for plan in plans_for(shape, (2, 8)):
        runs = [run_plan(plan, ARCH4, {"A": a, "B": b}) for _ in range(3)]
        assert len({r.report.to_text() for r in runs}) == 1, plan.label
        assert len({trace_to_csv(r.trace) for r in runs}) == 1, plan.label
        assert len({r.c.tobytes() for r in runs}) == 1, plan.label


OVERSIZED = """\
shape.m = 512
shape.n = 1024
shape.k = 512
mapping.logical_rows = 1
mapping.logical_cols = 1024
tiling.tk = 512
dataflow = Summa
double_buffered = true
layout.A.split = 1x1
layout.A.channels = 1
layout.B.split = 1x1
layout.B.channels = 1
layout.C.split = 1x1
layout.C.channels = 1
"""


@criterion(9, "plans over the 384 KiB scratchpad are rejected before execution (exit 3)")
def test_capacity_guard(tmp_path, monkeypatch):
    from tilegemm.schedule import parse_schedule

    cfg = reference_config()
    plan = parse_schedule(OVERSIZED)
    assert spm_budget(plan, cfg) > 384 * 1024
    with pytest.raises(SpmOverflow):
        gen_program(plan, cfg)
    sched = tmp_path / "oversized.sched"
    sched.write_text(OVERSIZED)
    assert main(["preload", "--schedule", str(sched), "--out", str(tmp_path / "pre")]) == 0

    def never(*args, **kwargs):
        raise AssertionError("execution started")

    monkeypatch.setattr("tilegemm.pipeline.execute", never)
    assert main(["run", "--schedule", str(sched), "--preload", str(tmp_path / "pre")]) == 3


@criterion(10, "no op of superstep s+1 starts before every op of superstep s ends")
def test_barrier_monotonicity(functional_runs):
    assert len(_TRACES) >= len(functional_runs[0])
    for label, trace in _TRACES:
        first, last = {}, {}
        for rec in trace:
            s = rec.superstep
            first[s] = min(first.get(s, rec.cycle_start), rec.cycle_start)
            last[s] = max(last.get(s, rec.cycle_end), rec.cycle_end)
        steps = sorted(first)
        for prev, nxt in zip(steps, steps[1:]):
            assert first[nxt] >= max(last[q] for q in steps if q <= prev), label


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
