import shutil
import subprocess
import sys

import numpy as np
import pytest

from conftest import CONFIGS
from tilegemm.arch import reference_config, serialize
from tilegemm.cli import expand_candidates, main, run_sweep
from tilegemm.engine import SimReport

SCHED = CONFIGS / "schedules"


@pytest.fixture
def workspace(tmp_path):
    arch = tmp_path / "mesh4.arch"
    arch.write_text(serialize(reference_config(4)))
    pre = tmp_path / "pre"
    assert main(["preload", "--schedule", str(SCHED / "summa_4x4.sched"), "--out", str(pre), "--integer"]) == 0
    return tmp_path, arch, pre


def _run(arch, pre, sched, *extra):
    return main(["run", "--arch", str(arch), "--schedule", str(sched), "--preload", str(pre), *extra])


def test_preload_is_seeded(tmp_path):
    for name in ("x", "y"):
        main(["preload", "--schedule", str(SCHED / "baseline_4x4.sched"), "--out", str(tmp_path / name), "--seed", "7"])
    for f in (tmp_path / "x").iterdir():
        assert f.read_bytes() == (tmp_path / "y" / f.name).read_bytes()


def test_preload_from_npy(tmp_path):
    a, b = np.ones((256, 256)), np.eye(256)
    np.save(tmp_path / "a.npy", a)
    np.save(tmp_path / "b.npy", b)
    assert main(["preload", "--schedule", str(SCHED / "summa_4x4.sched"), "--out", str(tmp_path / "p"),
                 "--a", str(tmp_path / "a.npy"), "--b", str(tmp_path / "b.npy")]) == 0
    assert main(["preload", "--schedule", str(SCHED / "summa_4x4.sched"), "--out", str(tmp_path / "q"),
                 "--a", str(tmp_path / "a.npy")]) == 2


def test_preload_missing_layout_key(tmp_path):
    text = (SCHED / "summa_4x4.sched").read_text().replace("layout.B.split = 4x4\n", "")
    bad = tmp_path / "bad.sched"
    bad.write_text(text)
    assert main(["preload", "--schedule", str(bad), "--out", str(tmp_path / "p")]) == 2


def test_run_verify_round_trip(workspace, capsys):
    tmp, arch, pre = workspace
    out = tmp / "c.npy"
    assert _run(arch, pre, SCHED / "summa_4x4.sched", "--verify", "--result", str(out),
                "--trace", str(tmp / "t.csv"), "--out", str(tmp / "r.csv")) == 0
    text = capsys.readouterr().out
    assert "verify=pass" in text
    rep = SimReport.from_text(text)
    assert rep.flops_executed == 2 * 256**3
    assert main(["verify", "--preload", str(pre), "--result", str(out)]) == 0
    assert (tmp / "t.csv").read_text().startswith("cycle_start,")
    header, row = (tmp / "r.csv").read_text().splitlines()
    assert header.startswith("label,cycles,") and row.startswith(f"summa_4x4,{rep.total_cycles},")


def test_verify_failure_exit_4(workspace):
    tmp, _, pre = workspace
    np.save(tmp / "wrong.npy", np.zeros((256, 256)))
    assert main(["verify", "--preload", str(pre), "--result", str(tmp / "wrong.npy")]) == 4


def test_spm_overflow_exit_3(workspace):
    _, arch, pre = workspace
    assert _run(arch, pre, SCHED / "too_big.sched") == 3


def test_corrupt_manifest_exit_2(workspace):
    tmp, arch, pre = workspace
    (pre / "preload.manifest").write_text("garbage\n")
    assert _run(arch, pre, SCHED / "summa_4x4.sched") == 2


def test_bad_arch_exit_2(workspace):
    tmp, arch, pre = workspace
    arch.write_text(arch.read_text().replace("grid_rows = 4", "grid_rows = 3"))
    assert _run(arch, pre, SCHED / "summa_4x4.sched") == 2


def test_roofline(workspace, capsys):
    tmp, arch, pre = workspace
    _run(arch, pre, SCHED / "summa_4x4.sched")
    (tmp / "rep.txt").write_text(capsys.readouterr().out)
    assert main(["roofline", "--arch", str(arch), str(tmp / "rep.txt")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("label,operational_intensity") and len(lines) == 2


def _cands(tmp, *lines):
    path = tmp / "cands.txt"
    for name in ("summa_4x4", "baseline_4x4", "too_big", "splitk_1x8x2", "systolic_over_summa"):
        shutil.copy(SCHED / f"{name}.sched", tmp / f"{name}.sched")
    path.write_text("\n".join(lines) + "\n")
    return path


def test_singleton_sweep_equals_run(workspace, capsys):
    tmp, arch, pre = workspace
    _run(arch, pre, SCHED / "summa_4x4.sched")
    single = SimReport.from_text(capsys.readouterr().out)
    ranked, skipped = run_sweep(reference_config(4), expand_candidates(_cands(tmp, "summa_4x4.sched")), pre)
    assert not skipped
    assert ranked[0][1] == single


def test_sweep_ranks_summa_over_baseline(workspace, capsys):
    tmp, arch, pre = workspace
    path = _cands(tmp, "baseline_4x4.sched", "summa_4x4.sched", "too_big.sched")
    assert main(["sweep", "--arch", str(arch), "--candidates", str(path), "--preload", str(pre), "--jobs", "1"]) == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[1].startswith("summa_4x4,") and lines[-1].startswith("best=summa_4x4")
    assert "skipped too_big" in captured.err


def test_worse_candidate_keeps_winner(workspace):
    tmp, _, pre = workspace
    arch = reference_config(4)
    base = run_sweep(arch, expand_candidates(_cands(tmp, "summa_4x4.sched", "systolic_over_summa.sched")), pre)[0]
    more = run_sweep(arch, expand_candidates(_cands(tmp, "summa_4x4.sched", "systolic_over_summa.sched",
                                                    "baseline_4x4.sched")), pre)[0]
    assert more[0][0] == base[0][0]


def test_sweep_parallel_matches_serial(workspace):
    tmp, _, pre = workspace
    arch = reference_config(4)
    path = _cands(tmp, "summa_4x4.sched", "splitk_1x8x2.sched",
                  "grid dataflow=Summa,Systolic mapping.logical_rows=4 mapping.logical_cols=4 tiling.tk=32,64")
    cands = expand_candidates(path, (256, 256, 256))
    assert len(cands) == 6
    serial = run_sweep(arch, cands, pre, jobs=1)
    parallel = run_sweep(arch, cands, pre, jobs=3)
    assert [(l, r.to_text()) for l, r in serial[0]] == [(l, r.to_text()) for l, r in parallel[0]]


def test_sweep_without_valid_candidates(workspace):
    tmp, arch, pre = workspace
    path = _cands(tmp, "too_big.sched")
    assert main(["sweep", "--arch", str(arch), "--candidates", str(path), "--preload", str(pre)]) == 2


def test_console_script(workspace):
    tmp, arch, pre = workspace
    proc = subprocess.run(
        [sys.executable, "-m", "tilegemm.cli", "run", "--arch", str(arch),
         "--schedule", str(SCHED / "too_big.sched"), "--preload", str(pre)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 3 and "scratchpad" in proc.stderr
