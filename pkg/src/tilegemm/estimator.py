"""scikit-learn style front end: fit a schedule to (A, B), predict products, search candidates."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.model_selection import ParameterGrid
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import utilization
from .arch import ArchConfig, reference_config
from .errors import ScheduleError, ShapeMismatch
from .layout import SplitScheme
from .pipeline import run_plan
from .schedule import GemmShape, LayoutChoice, Mapping, make_plan


def _layout_choice(split, channels, start=0) -> LayoutChoice:
    if isinstance(split, str):
        split = SplitScheme.parse(split)
    elif not isinstance(split, SplitScheme):
        split = SplitScheme(*split)
    return LayoutChoice(split=split, channels=int(channels), start=int(start))


class TileGemm(BaseEstimator):
    """Simulated tiled GEMM on a mesh accelerator.

    ``fit(A, B)`` compiles the schedule for ``A @ B`` and runs it; the product
    lands in ``C_`` and the cycle report in ``report_``. ``predict(A)`` reruns
    the fitted schedule with a new left operand against the stored ``B``.

    Parameters
    ----------
    arch : ArchConfig or None
        Target; None means the reference config scaled to a 4x4 grid.
    split, channels : layout of A, B and C (same for all three).
    """

    def __init__(
        self,
        arch=None,
        dataflow="Summa",
        logical_rows=4,
        logical_cols=4,
        k_split=1,
        tk=32,
        group_rows=1,
        group_cols=1,
        double_buffered=False,
        split="1x1",
        channels=1,
    ):
        self.arch = arch
        self.dataflow = dataflow
        self.logical_rows = logical_rows
        self.logical_cols = logical_cols
        self.k_split = k_split
        self.tk = tk
        self.group_rows = group_rows
        self.group_cols = group_cols
        self.double_buffered = double_buffered
        self.split = split
        self.channels = channels

    def _arch(self) -> ArchConfig:
        return reference_config(4) if self.arch is None else self.arch

    def _plan(self, m, n, k):
        choice = _layout_choice(self.split, self.channels)
        return make_plan(
            GemmShape(m, n, k),
            Mapping(self.logical_rows, self.logical_cols, self.k_split),
            self.tk,
            self.dataflow,
            group_rows=self.group_rows,
            group_cols=self.group_cols,
            double_buffered=self.double_buffered,
            layouts={"A": choice, "B": choice, "C": choice},
            label=f"{self.dataflow}{'-db' if self.double_buffered else ''}",
        )

    def fit(self, X, y):
        a = check_array(X, dtype=np.float64)
        b = check_array(y, dtype=np.float64)
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
        arch = self._arch()
        self.plan_ = self._plan(a.shape[0], b.shape[1], a.shape[1])
        result = run_plan(self.plan_, arch, {"A": a, "B": b})
        self.program_ = result.program
        self.report_ = result.report
        self.trace_ = result.trace
        self.C_ = result.c
        self.B_ = b
        self.n_features_in_ = a.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "C_")
        a = check_array(X, dtype=np.float64)
        if a.shape != (self.plan_.shape.m, self.plan_.shape.k):
            raise ShapeMismatch(f"fitted for A of shape {(self.plan_.shape.m, self.plan_.shape.k)}, got {a.shape}")
        return run_plan(self.plan_, self._arch(), {"A": a, "B": self.B_}).c

    def transform(self, X):
        return self.predict(X)

    def score(self, X=None, y=None):
        """Compute utilization of the fitted run (higher is better)."""
        check_is_fitted(self, "report_")
        return utilization(self.report_, self._arch()).compute_utilization


class ScheduleSearch(BaseEstimator):
    """Exhaustive search over TileGemm parameters; the fewest-cycles candidate wins.

    Candidates the plan validator rejects are recorded in ``skipped_`` with the
    reason instead of aborting the search.
    """

    def __init__(self, estimator=None, param_grid=None):
        self.estimator = estimator
        self.param_grid = param_grid

    def fit(self, X, y):
        base = TileGemm() if self.estimator is None else self.estimator
        grid = ParameterGrid(self.param_grid or {})
        self.results_ = []
        self.skipped_ = []
        best = None
        for params in grid:
            est = clone(base).set_params(**params)
            try:
                est.fit(X, y)
            except ScheduleError as exc:
                self.skipped_.append((params, str(exc)))
                continue
            cycles = est.report_.total_cycles
            self.results_.append({"params": params, "cycles": cycles, "score": est.score()})
            if best is None or cycles < best[0]:
                best = (cycles, params, est)
        if best is None:
            raise ScheduleError("no valid candidate in the parameter grid")
        self.best_cycles_, self.best_params_, self.best_estimator_ = best
        return self

    def predict(self, X):
        check_is_fitted(self, "best_estimator_")
        return self.best_estimator_.predict(X)
