"""Deployment schedules and their compilation into BSP programs.

A schedule fixes the GEMM shape, a logical view of the tile grid (optionally
with a split-K dimension), the reduction tile size, the dataflow pattern,
buffering, and how each matrix is laid out over HBM channels.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

from .arch import ArchConfig, parse_key_values
from .errors import ConfigError, IncompatibleDims, InvalidPlan, SpmOverflow
from .fabric import GroupSpec, TileCoord, mask_for_set
from .layout import LayoutDesc, SplitScheme
from .program import (
    BspProgram,
    CollectiveReduce,
    HbmLoad,
    HbmStore,
    Mmad,
    MulticastSend,
    NeighborSend,
    Receive,
)


class Dataflow(str, enum.Enum):
    BASELINE = "Baseline"
    SUMMA = "Summa"
    SYSTOLIC = "Systolic"
    SYSTOLIC_OVER_SUMMA = "SystolicOverSumma"
    SUMMA_OVER_SYSTOLIC = "SummaOverSystolic"
    SPLITK_SUMMA = "SplitKSumma"

    @classmethod
    def parse(cls, text: str) -> "Dataflow":
        for kind in cls:
            if kind.value.lower() == text.strip().lower():
                return kind
        raise InvalidPlan(f"unknown dataflow {text!r}")

    @property
    def hierarchical(self) -> bool:
        return self in (Dataflow.SYSTOLIC_OVER_SUMMA, Dataflow.SUMMA_OVER_SYSTOLIC)


class ReductionPolicy(str, enum.Enum):
    LOWEST_SLICE_COMMITS = "lowest_slice_commits"
    ROTATE_COMMITS = "rotate_commits"


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


@dataclass(frozen=True)
class GemmShape:
    m: int
    n: int
    k: int

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise InvalidPlan(f"GEMM dims must be positive, got {self}")

    @property
    def flops(self) -> int:
        return 2 * self.m * self.n * self.k


@dataclass(frozen=True)
class Mapping:
    logical_rows: int
    logical_cols: int
    k_split: int = 1
    reduction_policy: ReductionPolicy = ReductionPolicy.LOWEST_SLICE_COMMITS

    def __post_init__(self):
        object.__setattr__(self, "reduction_policy", ReductionPolicy(self.reduction_policy))
        for name in ("logical_rows", "logical_cols", "k_split"):
            if not _is_pow2(getattr(self, name)):
                raise InvalidPlan(f"mapping.{name} must be a power of two, got {getattr(self, name)}")

    @property
    def num_tiles(self) -> int:
        return self.logical_rows * self.logical_cols * self.k_split


@dataclass(frozen=True)
class Tiling:
    tm: int
    tn: int
    tk: int


class ClusterRemap:
    """Bit-slicing bijection between physical tiles and logical (row, col, slice) indices.

    The physical index ``row * cols + col`` is re-read as
    ``(logical_row * logical_cols + logical_col) * k_split + slice``, so every
    logical row, column, or slice group fixes some bit fields of the physical
    index and is therefore addressable by one mask-based group.
    """

    def __init__(self, phys_rows, phys_cols, logical_rows, logical_cols, k_split=1):
        dims = (phys_rows, phys_cols, logical_rows, logical_cols, k_split)
        if not all(_is_pow2(d) for d in dims):
            raise IncompatibleDims(f"all dimensions must be powers of two, got {dims}")
        if phys_rows * phys_cols != logical_rows * logical_cols * k_split:
            raise IncompatibleDims(
                f"{phys_rows}x{phys_cols} physical tiles cannot be viewed as "
                f"{logical_rows}x{logical_cols}x{k_split}"
            )
        self.phys_rows, self.phys_cols = phys_rows, phys_cols
        self.logical_rows, self.logical_cols, self.k_split = logical_rows, logical_cols, k_split

    def to_physical(self, lrow: int, lcol: int, kslice: int = 0) -> TileCoord:
        p = (lrow * self.logical_cols + lcol) * self.k_split + kslice
        return TileCoord(p // self.phys_cols, p % self.phys_cols)

    def to_logical(self, tile) -> tuple[int, int, int]:
        p = tile[0] * self.phys_cols + tile[1]
        q, kslice = divmod(p, self.k_split)
        return q // self.logical_cols, q % self.logical_cols, kslice

    def group(self, tiles) -> GroupSpec:
        return mask_for_set(
            [self.to_physical(*t) for t in tiles], self.phys_rows, self.phys_cols
        )


def remap_indices(physical, logical) -> ClusterRemap:
    """``physical`` is (rows, cols); ``logical`` is (rows, cols) or (rows, cols, k_split)."""
    return ClusterRemap(*physical, *logical)


def derive_tiling(shape: GemmShape, mapping: Mapping, tk: int) -> Tiling:
    if tk < 1:
        raise InvalidPlan(f"tiling.tk must be positive, got {tk}")
    return Tiling(
        tm=math.ceil(shape.m / mapping.logical_rows),
        tn=math.ceil(shape.n / mapping.logical_cols),
        tk=tk,
    )


@dataclass(frozen=True)
class LayoutChoice:
    """Schedule-level layout knobs; tile sizes come from the tiling."""

    split: SplitScheme = SplitScheme(1, 1)
    channels: int = 1
    start: int = 0
    placement: str = "tiled"  # or "rowmajor": each block row-major


@dataclass(frozen=True)
class SchedulePlan:
    shape: GemmShape
    mapping: Mapping
    tiling: Tiling
    dataflow: Dataflow
    group_rows: int = 1
    group_cols: int = 1
    layouts: dict = field(default_factory=dict, hash=False)
    double_buffered: bool = False
    label: str = ""

    @property
    def k_tiles(self) -> int:
        """Reduction tiles per K slice."""
        return math.ceil(self.shape.k / (self.tiling.tk * self.mapping.k_split))

    @property
    def padded_k(self) -> int:
        return self.k_tiles * self.tiling.tk * self.mapping.k_split


def operand_tiles(tiling: Tiling) -> dict[str, tuple[int, int]]:
    return {"A": (tiling.tm, tiling.tk), "B": (tiling.tk, tiling.tn), "C": (tiling.tm, tiling.tn)}


def make_layout(rows, cols, tile, choice: LayoutChoice) -> LayoutDesc:
    tile_rows, tile_cols = tile
    if choice.placement == "rowmajor":
        tile_rows = math.ceil(rows / choice.split.split_rows)
        tile_cols = math.ceil(cols / choice.split.split_cols)
    elif choice.placement != "tiled":
        raise InvalidPlan(f"unknown placement {choice.placement!r}")
    return LayoutDesc(rows, cols, choice.split, tile_rows, tile_cols, choice.start, choice.channels)


def make_plan(
    shape: GemmShape,
    mapping: Mapping,
    tk: int,
    dataflow,
    *,
    group_rows: int = 1,
    group_cols: int = 1,
    double_buffered: bool = False,
    layouts: dict | None = None,
    label: str = "",
) -> SchedulePlan:
    """Build a plan, deriving the tiling and per-matrix LayoutDescs.

    ``layouts`` maps "A"/"B"/"C" to LayoutChoice; missing entries use the
    single-channel default.
    """
    tiling = derive_tiling(shape, mapping, tk)
    layouts = dict(layouts or {})
    dims = {"A": (shape.m, shape.k), "B": (shape.k, shape.n), "C": (shape.m, shape.n)}
    tiles = operand_tiles(tiling)
    descs = {}
    for name in ("A", "B", "C"):
        choice = layouts.get(name, LayoutChoice())
        if isinstance(choice, LayoutDesc):
            descs[name] = choice
        else:
            descs[name] = make_layout(*dims[name], tiles[name], choice)
    return SchedulePlan(
        shape=shape,
        mapping=mapping,
        tiling=tiling,
        dataflow=Dataflow(dataflow),
        group_rows=group_rows,
        group_cols=group_cols,
        layouts=descs,
        double_buffered=bool(double_buffered),
        label=label,
    )


def validate_plan(plan: SchedulePlan, arch: ArchConfig) -> None:
    mp = plan.mapping
    if mp.num_tiles != arch.num_tiles:
        raise InvalidPlan(
            f"logical {mp.logical_rows}x{mp.logical_cols}x{mp.k_split} does not cover "
            f"{arch.grid_rows}x{arch.grid_cols} tiles"
        )
    kind = plan.dataflow
    if kind == Dataflow.SPLITK_SUMMA:
        if mp.k_split < 2:
            raise InvalidPlan("SplitKSumma needs k_split > 1")
    elif mp.k_split != 1:
        raise InvalidPlan(f"{kind.value} needs k_split = 1")
    if kind.hierarchical:
        gr, gc = plan.group_rows, plan.group_cols
        if gr < 2 or gc < 2 or not (_is_pow2(gr) and _is_pow2(gc)):
            raise InvalidPlan(f"{kind.value} needs power-of-two group dims > 1, got {gr}x{gc}")
        if mp.logical_rows % gr or mp.logical_cols % gc:
            raise InvalidPlan(f"group {gr}x{gc} does not divide logical {mp.logical_rows}x{mp.logical_cols}")
    elif (plan.group_rows, plan.group_cols) != (1, 1):
        raise InvalidPlan(f"{kind.value} takes no group dims")
    dims = {"A": (plan.shape.m, plan.shape.k), "B": (plan.shape.k, plan.shape.n), "C": (plan.shape.m, plan.shape.n)}
    for name in ("A", "B", "C"):
        layout = plan.layouts.get(name)
        if layout is None:
            raise InvalidPlan(f"missing layout for {name}")
        if (layout.matrix_rows, layout.matrix_cols) != dims[name]:
            raise InvalidPlan(f"layout {name} has dims {layout.matrix_rows}x{layout.matrix_cols}")
        if layout.channel_start + min(layout.channel_count, layout.num_blocks) > arch.num_channels:
            raise InvalidPlan(
                f"layout {name} uses channels {layout.channel_start}.."
                f"{layout.channel_start + layout.channel_count - 1}, arch has {arch.num_channels}"
            )


def spm_budget(plan: SchedulePlan, arch: ArchConfig) -> int:
    t = plan.tiling
    operands = t.tm * t.tk + t.tk * t.tn
    factor = 2 if plan.double_buffered else 1
    return (operands * factor + t.tm * t.tn) * arch.elem_bytes


class _Builder:
    def __init__(self, plan: SchedulePlan, arch: ArchConfig):
        self.plan = plan
        self.arch = arch
        mp = plan.mapping
        self.r, self.c, self.ks = mp.logical_rows, mp.logical_cols, mp.k_split
        self.T = plan.k_tiles
        self.db = plan.double_buffered
        self.remap = ClusterRemap(arch.grid_rows, arch.grid_cols, self.r, self.c, self.ks)
        self.steps: dict = defaultdict(lambda: defaultdict(list))
        self._groups: dict = {}

    def at(self, lr, lc, ks=0) -> TileCoord:
        return self.remap.to_physical(lr, lc, ks)

    def group(self, key, logical_tiles) -> GroupSpec:
        if key not in self._groups:
            self._groups[key] = self.remap.group(logical_tiles)
        return self._groups[key]

    def row_group(self, i, ks=0, cols=None):
        cols = tuple(range(self.c)) if cols is None else tuple(cols)
        return self.group(("row", i, ks, cols), [(i, j, ks) for j in cols])

    def col_group(self, j, ks=0, rows=None):
        rows = tuple(range(self.r)) if rows is None else tuple(rows)
        return self.group(("col", j, ks, rows), [(i, j, ks) for i in rows])

    def slot(self, base, t):
        return f"{base}{t % 2}" if self.db else base

    def emit(self, s, tile, op):
        if s < 0:
            raise AssertionError(f"negative superstep for {op}")
        self.steps[s][tile].append(op)

    def program(self) -> BspProgram:
        plan = self.plan
        tiles = operand_tiles(plan.tiling)
        slots = {"C": tiles["C"]}
        for base in ("A", "B"):
            for name in ((base + "0", base + "1") if self.db else (base,)):
                slots[name] = tiles[base]
        last = max(self.steps) if self.steps else -1
        supersteps = [
            {tile: list(ops) for tile, ops in self.steps[s].items()} for s in range(last + 1)
        ]
        return BspProgram(
            grid_rows=self.arch.grid_rows,
            grid_cols=self.arch.grid_cols,
            shape=plan.shape,
            tiling=plan.tiling,
            slots=slots,
            layouts=dict(plan.layouts),
            supersteps=supersteps,
            double_buffered=self.db,
            label=plan.label or plan.dataflow.value,
        )

    def store_all(self, s_of):
        for i in range(self.r):
            for j in range(self.c):
                self.emit(s_of(i, j), self.at(i, j), HbmStore("C", i, j, "C"))


def _gen_baseline(b: _Builder):
    for t in range(b.T):
        acq, comp = (t, t + 1) if b.db else (t, t)
        sa, sb = b.slot("A", t), b.slot("B", t)
        for i in range(b.r):
            for j in range(b.c):
                tile = b.at(i, j)
                b.emit(acq, tile, HbmLoad("A", i, t, sa))
                b.emit(acq, tile, HbmLoad("B", t, j, sb))
                b.emit(comp, tile, Mmad(sa, sb, "C", i, j, t))
    last = b.T if b.db else b.T - 1
    b.store_all(lambda i, j: last + 1)


def _gen_summa(b: _Builder):
    for ks in range(b.ks):
        for t in range(b.T):
            kt = ks * b.T + t
            acq, comp = (t, t + 1) if b.db else (t, t)
            sa, sb = b.slot("A", t), b.slot("B", t)
            a_owner_col, b_owner_row = t % b.c, t % b.r
            for i in range(b.r):
                owner = b.at(i, a_owner_col, ks)
                b.emit(acq, owner, HbmLoad("A", i, kt, sa))
                b.emit(acq, owner, MulticastSend(sa, b.row_group(i, ks), sa))
            for j in range(b.c):
                owner = b.at(b_owner_row, j, ks)
                b.emit(acq, owner, HbmLoad("B", kt, j, sb))
                b.emit(acq, owner, MulticastSend(sb, b.col_group(j, ks), sb))
            for i in range(b.r):
                for j in range(b.c):
                    tile = b.at(i, j, ks)
                    if j != a_owner_col:
                        b.emit(acq, tile, Receive(sa, b.at(i, a_owner_col, ks)))
                    if i != b_owner_row:
                        b.emit(acq, tile, Receive(sb, b.at(b_owner_row, j, ks)))
                    b.emit(comp, tile, Mmad(sa, sb, "C", i, j, kt))
    last = b.T if b.db else b.T - 1
    if b.ks == 1:
        b.store_all(lambda i, j: last + 1)
        return
    policy = b.plan.mapping.reduction_policy
    for i in range(b.r):
        for j in range(b.c):
            if policy == ReductionPolicy.ROTATE_COMMITS:
                committer = (i * b.c + j) % b.ks
            else:
                committer = 0
            dst = b.at(i, j, committer)
            group = b.group(("k", i, j), [(i, j, s) for s in range(b.ks)])
            b.emit(last + 1, dst, CollectiveReduce("C", group, "C"))
            b.emit(last + 1, dst, HbmStore("C", i, j, "C"))


def _gen_systolic(b: _Builder):
    """Operands enter at the west/north edges and shift one tile per superstep."""
    r, c, T, db = b.r, b.c, b.T, b.db
    horizon = (r - 1) + (c - 1) + T + 2
    for s in range(horizon):
        for i in range(r):
            for j in range(c):
                tile = b.at(i, j)
                # k-step computed in this superstep; the next one is acquired
                cidx = s - i - j - (1 if db else 0)
                nxt = cidx + 1
                if not db and s == 0:
                    if j == 0:
                        b.emit(s, tile, HbmLoad("A", i, 0, b.slot("A", 0)))
                    if i == 0:
                        b.emit(s, tile, HbmLoad("B", 0, j, b.slot("B", 0)))
                if 0 <= cidx < T:
                    sa, sb = b.slot("A", cidx), b.slot("B", cidx)
                    b.emit(s, tile, Mmad(sa, sb, "C", i, j, cidx))
                    if j < c - 1:
                        b.emit(s, tile, NeighborSend(sa, b.at(i, j + 1), sa))
                    if i < r - 1:
                        b.emit(s, tile, NeighborSend(sb, b.at(i + 1, j), sb))
                if 0 <= nxt < T:
                    sa, sb = b.slot("A", nxt), b.slot("B", nxt)
                    if j > 0:
                        b.emit(s, tile, Receive(sa, b.at(i, j - 1)))
                    elif db or nxt >= 1:
                        b.emit(s, tile, HbmLoad("A", i, nxt, sa))
                    if i > 0:
                        b.emit(s, tile, Receive(sb, b.at(i - 1, j)))
                    elif db or nxt >= 1:
                        b.emit(s, tile, HbmLoad("B", nxt, j, sb))
                if cidx == T:
                    b.emit(s, tile, HbmStore("C", i, j, "C"))


def _gen_systolic_over_summa(b: _Builder):
    """Groups form a systolic wavefront; inside a group operands are multicast SUMMA-style.

    A panels enter each group at its first column and leave from its last
    column; B panels likewise through the first and last rows.
    """
    gr, gc = b.plan.group_rows, b.plan.group_cols
    Ro, Co = b.r // gr, b.c // gc
    T, db = b.T, b.db
    horizon = (Ro - 1) + (Co - 1) + T + 2
    for s in range(horizon):
        for i in range(b.r):
            for j in range(b.c):
                I, J, ii, jj = i // gr, j // gc, i % gr, j % gc
                tile = b.at(i, j)
                head_col, head_row = b.at(i, J * gc), b.at(I * gr, j)
                row_grp = b.row_group(i, 0, range(J * gc, J * gc + gc))
                col_grp = b.col_group(j, 0, range(I * gr, I * gr + gr))
                cidx = s - I - J - (1 if db else 0)
                nxt = cidx + 1

                def acquire(t, sa, sb):
                    # fill slots for k-step t: heads fetch/receive, then multicast in-group
                    if jj == 0:
                        if J == 0:
                            b.emit(s, tile, HbmLoad("A", i, t, sa))
                        else:
                            b.emit(s, tile, Receive(sa, b.at(i, j - 1)))
                    if ii == 0:
                        if I == 0:
                            b.emit(s, tile, HbmLoad("B", t, j, sb))
                        else:
                            b.emit(s, tile, Receive(sb, b.at(i - 1, j)))

                def spread(sa, sb):
                    if jj == 0:
                        b.emit(s, tile, MulticastSend(sa, row_grp, sa))
                    else:
                        b.emit(s, tile, Receive(sa, head_col))
                    if ii == 0:
                        b.emit(s, tile, MulticastSend(sb, col_grp, sb))
                    else:
                        b.emit(s, tile, Receive(sb, head_row))

                if not db and s == 0:
                    sa, sb = b.slot("A", 0), b.slot("B", 0)
                    if jj == 0 and J == 0:
                        b.emit(s, tile, HbmLoad("A", i, 0, sa))
                    if ii == 0 and I == 0:
                        b.emit(s, tile, HbmLoad("B", 0, j, sb))
                if 0 <= cidx < T:
                    sa, sb = b.slot("A", cidx), b.slot("B", cidx)
                    if not db:
                        spread(sa, sb)
                    b.emit(s, tile, Mmad(sa, sb, "C", i, j, cidx))
                    if jj == gc - 1 and J < Co - 1:
                        b.emit(s, tile, NeighborSend(sa, b.at(i, j + 1), sa))
                    if ii == gr - 1 and I < Ro - 1:
                        b.emit(s, tile, NeighborSend(sb, b.at(i + 1, j), sb))
                if 0 <= nxt < T:
                    sa, sb = b.slot("A", nxt), b.slot("B", nxt)
                    if db:
                        acquire(nxt, sa, sb)
                        spread(sa, sb)
                    else:
                        # t = 0 at the west/north edge came from the superstep-0 prefetch
                        if jj == 0 and not (J == 0 and nxt == 0):
                            if J == 0:
                                b.emit(s, tile, HbmLoad("A", i, nxt, sa))
                            else:
                                b.emit(s, tile, Receive(sa, b.at(i, j - 1)))
                        if ii == 0 and not (I == 0 and nxt == 0):
                            if I == 0:
                                b.emit(s, tile, HbmLoad("B", nxt, j, sb))
                            else:
                                b.emit(s, tile, Receive(sb, b.at(i - 1, j)))
                if cidx == T:
                    b.emit(s, tile, HbmStore("C", i, j, "C"))


def _gen_summa_over_systolic(b: _Builder):
    """Groups exchange panels SUMMA-style; inside a group operands shift systolically.

    At k-step t the owner group column ``t % Co`` loads each A tile and
    multicasts it to the first column of every group in that row; tiles then
    pass it east inside their group. B is symmetric.
    """
    gr, gc = b.plan.group_rows, b.plan.group_cols
    Ro, Co = b.r // gr, b.c // gc
    T, db = b.T, b.db
    horizon = (gr - 1) + (gc - 1) + T + 2
    for s in range(horizon):
        for i in range(b.r):
            for j in range(b.c):
                I, J, ii, jj = i // gr, j // gc, i % gr, j % gc
                tile = b.at(i, j)
                entry_row = b.row_group(i, 0, range(0, b.c, gc))
                entry_col = b.col_group(j, 0, range(0, b.r, gr))
                cidx = s - ii - jj - (1 if db else 0)
                nxt = cidx + 1

                def fetch_a(t, sa):
                    owner = b.at(i, (t % Co) * gc)
                    if tile == owner:
                        b.emit(s, tile, HbmLoad("A", i, t, sa))
                        b.emit(s, tile, MulticastSend(sa, entry_row, sa))
                    else:
                        b.emit(s, tile, Receive(sa, owner))

                def fetch_b(t, sb):
                    owner = b.at((t % Ro) * gr, j)
                    if tile == owner:
                        b.emit(s, tile, HbmLoad("B", t, j, sb))
                        b.emit(s, tile, MulticastSend(sb, entry_col, sb))
                    else:
                        b.emit(s, tile, Receive(sb, owner))

                if not db and s == 0:
                    if jj == 0:
                        fetch_a(0, b.slot("A", 0))
                    if ii == 0:
                        fetch_b(0, b.slot("B", 0))
                if 0 <= cidx < T:
                    sa, sb = b.slot("A", cidx), b.slot("B", cidx)
                    b.emit(s, tile, Mmad(sa, sb, "C", i, j, cidx))
                    if jj < gc - 1:
                        b.emit(s, tile, NeighborSend(sa, b.at(i, j + 1), sa))
                    if ii < gr - 1:
                        b.emit(s, tile, NeighborSend(sb, b.at(i + 1, j), sb))
                if 0 <= nxt < T:
                    sa, sb = b.slot("A", nxt), b.slot("B", nxt)
                    if jj > 0:
                        b.emit(s, tile, Receive(sa, b.at(i, j - 1)))
                    elif db or nxt >= 1:
                        fetch_a(nxt, sa)
                    if ii > 0:
                        b.emit(s, tile, Receive(sb, b.at(i - 1, j)))
                    elif db or nxt >= 1:
                        fetch_b(nxt, sb)
                if cidx == T:
                    b.emit(s, tile, HbmStore("C", i, j, "C"))


_GENERATORS = {
    Dataflow.BASELINE: _gen_baseline,
    Dataflow.SUMMA: _gen_summa,
    Dataflow.SPLITK_SUMMA: _gen_summa,
    Dataflow.SYSTOLIC: _gen_systolic,
    Dataflow.SYSTOLIC_OVER_SUMMA: _gen_systolic_over_summa,
    Dataflow.SUMMA_OVER_SYSTOLIC: _gen_summa_over_systolic,
}


def gen_program(plan: SchedulePlan, arch: ArchConfig) -> BspProgram:
    validate_plan(plan, arch)
    need = spm_budget(plan, arch)
    if need > arch.spm_bytes:
        raise SpmOverflow(need, arch.spm_bytes)
    builder = _Builder(plan, arch)
    _GENERATORS[plan.dataflow](builder)
    return builder.program()


# -- schedule files -----------------------------------------------------------

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _int(values, key, default=None):
    if key not in values:
        if default is None:
            raise ConfigError(key, "missing from schedule")
        return default
    try:
        return int(values.pop(key))
    except ValueError:
        raise ConfigError(key, "expected an integer") from None


def parse_schedule(text: str, label: str = "") -> SchedulePlan:
    values = parse_key_values(text)
    shape = GemmShape(_int(values, "shape.m"), _int(values, "shape.n"), _int(values, "shape.k"))
    mapping = Mapping(
        logical_rows=_int(values, "mapping.logical_rows"),
        logical_cols=_int(values, "mapping.logical_cols"),
        k_split=_int(values, "mapping.k_split", 1),
        reduction_policy=values.pop("mapping.reduction_policy", ReductionPolicy.LOWEST_SLICE_COMMITS.value),
    )
    tk = _int(values, "tiling.tk")
    if "dataflow" not in values:
        raise ConfigError("dataflow", "missing from schedule")
    dataflow = Dataflow.parse(values.pop("dataflow"))
    group_rows = _int(values, "group_rows", 1)
    group_cols = _int(values, "group_cols", 1)
    db_text = values.pop("double_buffered", "false").lower()
    if db_text not in _BOOL:
        raise ConfigError("double_buffered", f"expected a boolean, got {db_text!r}")
    label = values.pop("label", label)
    layouts = {}
    for name in ("A", "B", "C"):
        prefix = f"layout.{name}."
        for key in ("split", "channels"):
            if prefix + key not in values:
                raise ConfigError(prefix + key, "missing from schedule")
        layouts[name] = LayoutChoice(
            split=SplitScheme.parse(values.pop(prefix + "split")),
            channels=_int(values, prefix + "channels"),
            start=_int(values, prefix + "start", 0),
            placement=values.pop(prefix + "placement", "tiled"),
        )
    if values:
        raise ConfigError(sorted(values)[0], "unknown schedule key")
    return make_plan(
        shape, mapping, tk, dataflow,
        group_rows=group_rows, group_cols=group_cols,
        double_buffered=_BOOL[db_text], layouts=layouts, label=label,
    )


def load_schedule_file(path) -> SchedulePlan:
    path = Path(path)
    return parse_schedule(path.read_text(), label=path.stem)


def plan_to_text(plan: SchedulePlan) -> str:
    mp = plan.mapping
    lines = [
        f"label = {plan.label}" if plan.label else None,
        f"shape.m = {plan.shape.m}",
        f"shape.n = {plan.shape.n}",
        f"shape.k = {plan.shape.k}",
        f"mapping.logical_rows = {mp.logical_rows}",
        f"mapping.logical_cols = {mp.logical_cols}",
        f"mapping.k_split = {mp.k_split}",
        f"mapping.reduction_policy = {mp.reduction_policy.value}",
        f"tiling.tk = {plan.tiling.tk}",
        f"dataflow = {plan.dataflow.value}",
        f"group_rows = {plan.group_rows}",
        f"group_cols = {plan.group_cols}",
        f"double_buffered = {str(plan.double_buffered).lower()}",
    ]
    tiles = operand_tiles(plan.tiling)
    for name in ("A", "B", "C"):
        lay = plan.layouts[name]
        rowmajor = (lay.tile_rows, lay.tile_cols) != tiles[name]
        lines += [
            f"layout.{name}.split = {lay.split}",
            f"layout.{name}.channels = {lay.channel_count}",
            f"layout.{name}.start = {lay.channel_start}",
            f"layout.{name}.placement = {'rowmajor' if rowmajor else 'tiled'}",
        ]
    return "\n".join(line for line in lines if line is not None) + "\n"


def with_layouts(plan: SchedulePlan, **choices) -> SchedulePlan:
    """Copy of ``plan`` with some matrices re-laid out (LayoutChoice per name)."""
    tiles = operand_tiles(plan.tiling)
    dims = {"A": (plan.shape.m, plan.shape.k), "B": (plan.shape.k, plan.shape.n), "C": (plan.shape.m, plan.shape.n)}
    layouts = dict(plan.layouts)
    for name, choice in choices.items():
        layouts[name] = make_layout(*dims[name], tiles[name], choice)
    return replace(plan, layouts=layouts)
