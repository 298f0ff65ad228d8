"""BSP superstep programs: per-tile operation lists separated by global barriers."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .errors import InvalidPlan, UnmatchedReceive
from .fabric import GroupSpec, TileCoord, resolve_group


@dataclass(frozen=True)
class HbmLoad:
    """Fetch operand tile (tile_row, tile_col) of ``matrix`` into ``slot``."""

    matrix: str
    tile_row: int
    tile_col: int
    slot: str

    def reads(self):
        return ()

    def writes(self):
        return (self.slot,)


@dataclass(frozen=True)
class HbmStore:
    matrix: str
    tile_row: int
    tile_col: int
    slot: str

    def reads(self):
        return (self.slot,)

    def writes(self):
        return ()


@dataclass(frozen=True)
class MulticastSend:
    slot: str
    group: GroupSpec
    dst_slot: str

    def reads(self):
        return (self.slot,)

    def writes(self):
        return ()


@dataclass(frozen=True)
class NeighborSend:
    slot: str
    dst: TileCoord
    dst_slot: str

    def reads(self):
        return (self.slot,)

    def writes(self):
        return ()


@dataclass(frozen=True)
class Receive:
    slot: str
    src: TileCoord

    def reads(self):
        return ()

    def writes(self):
        return (self.slot,)


@dataclass(frozen=True)
class CollectiveReduce:
    """Issued by the destination tile: sums ``slot`` over the group into ``dst_slot``.

    Members' contributions are read after every write to ``slot`` that member
    issues in the same superstep.
    """

    slot: str
    group: GroupSpec
    dst_slot: str

    def reads(self):
        return (self.slot,)

    def writes(self):
        return (self.dst_slot,)


@dataclass(frozen=True)
class Mmad:
    """``c_slot += a_slot @ b_slot`` for output tile (out_row, out_col), reduction tile k_tile."""

    a_slot: str
    b_slot: str
    c_slot: str
    out_row: int
    out_col: int
    k_tile: int

    def reads(self):
        return (self.a_slot, self.b_slot, self.c_slot)

    def writes(self):
        return (self.c_slot,)


SEND_OPS = (MulticastSend, NeighborSend)
COMM_OPS = (HbmLoad, HbmStore, MulticastSend, NeighborSend, Receive, CollectiveReduce)


def op_kind(op) -> str:
    return type(op).__name__


@dataclass
class BspProgram:
    grid_rows: int
    grid_cols: int
    shape: object  # GemmShape
    tiling: object  # Tiling
    slots: dict  # slot name -> (rows, cols)
    layouts: dict  # matrix name -> LayoutDesc (at least "C")
    supersteps: list = field(default_factory=list)  # list[dict[TileCoord, list[op]]]
    double_buffered: bool = False
    label: str = ""

    def tile_id(self, tile: TileCoord) -> int:
        return tile.row * self.grid_cols + tile.col

    def iter_ops(self):
        """(superstep, tile, index, op) in deterministic tile-id order."""
        for s, step in enumerate(self.supersteps):
            for tile in sorted(step, key=self.tile_id):
                for idx, op in enumerate(step[tile]):
                    yield s, tile, idx, op

    def ops_of(self, kind):
        return [op for _, _, _, op in self.iter_ops() if isinstance(op, kind)]

    def slot_bytes(self, slot: str, elem_bytes: int) -> int:
        rows, cols = self.slots[slot]
        return rows * cols * elem_bytes

    def to_text(self) -> str:
        lines = [f"# program {self.label} grid={self.grid_rows}x{self.grid_cols}"]
        for s, tile, idx, op in self.iter_ops():
            lines.append(f"{s} {tile} {idx} {op}")
        return "\n".join(lines) + "\n"


def match_transfers(step: dict, grid_rows: int, grid_cols: int):
    """Pair every send in one superstep with the Receive ops it fills.

    Returns ``[(sender, send_index, [(receiver, receive_index), ...]), ...]``.
    Self-delivery to a multicast source needs no Receive.
    """
    pending = defaultdict(list)  # (receiver, src, slot) -> [indices]
    for tile, ops in step.items():
        for idx, op in enumerate(ops):
            if isinstance(op, Receive):
                pending[(tile, op.src, op.slot)].append(idx)
    for key in pending:
        pending[key].reverse()
    order = sorted(step, key=lambda t: (t.row, t.col))
    transfers = []
    for tile in order:
        for idx, op in enumerate(step[tile]):
            if isinstance(op, MulticastSend):
                dests = sorted(resolve_group(op.group, grid_rows, grid_cols))
            elif isinstance(op, NeighborSend):
                dests = [op.dst]
            else:
                continue
            matched = []
            for d in dests:
                if d == tile:
                    continue
                queue = pending.get((d, tile, op.dst_slot))
                if not queue:
                    raise UnmatchedReceive(f"{op} from {tile} has no Receive at {d}")
                matched.append((d, queue.pop()))
            transfers.append((tile, idx, matched))
    leftover = [(k, v) for k, v in pending.items() if v]
    if leftover:
        (tile, src, slot), _ = leftover[0]
        raise UnmatchedReceive(f"Receive({slot}) at {tile} from {src} has no matching send")
    return transfers


def check_program(program: BspProgram) -> None:
    """Static well-formedness checks.

    Every Receive is matched within its superstep, every slot is declared and
    written before it is read (accumulator slots start at zero), every output
    tile is stored exactly once, and in double-buffered programs no slot read by
    an Mmad is written by communication in the same superstep.
    """
    written: set = set()
    stored = defaultdict(int)
    accumulators = {op.c_slot for op in program.ops_of(Mmad)}
    for s, step in enumerate(program.supersteps):
        match_transfers(step, program.grid_rows, program.grid_cols)
        for tile, ops in step.items():
            for op in ops:
                for slot in tuple(op.reads()) + tuple(op.writes()):
                    if slot not in program.slots:
                        raise InvalidPlan(f"undeclared slot {slot!r} in {op}")
                for slot in op.reads():
                    if slot not in accumulators and (tile, slot) not in written:
                        raise InvalidPlan(f"superstep {s} {tile}: {op} reads {slot!r} before any write")
                for slot in op.writes():
                    written.add((tile, slot))
                if isinstance(op, HbmStore):
                    stored[(op.matrix, op.tile_row, op.tile_col)] += 1
        if program.double_buffered:
            for tile, ops in step.items():
                computed = {sl for op in ops if isinstance(op, Mmad) for sl in (op.a_slot, op.b_slot)}
                filled = {op.slot for op in ops if isinstance(op, (Receive, HbmLoad))}
                if computed & filled:
                    raise InvalidPlan(
                        f"superstep {s} {tile}: slots {sorted(computed & filled)} both computed and filled"
                    )
    twice = [k for k, n in stored.items() if n != 1]
    if twice:
        raise InvalidPlan(f"output tile {twice[0]} stored {stored[twice[0]]} times")
