"""Deterministic event-driven execution of BSP programs.

Within a superstep, each tile's operations keep their program order wherever
they touch the same buffer slot (read-after-write, write-after-read,
write-after-write); everything else may overlap. A transfer starts once the
sender's slot is ready and every receiver's slot is free. Resources (tile
engines, DMAs, HBM channels, directed NoC links) are FIFO servers granted in
``(ready cycle, tile id, op index)`` order. A global barrier closes each
superstep.
"""

from __future__ import annotations

import heapq
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .arch import ArchConfig
from .errors import (
    ExecutionError,
    PreloadMissingMatrix,
    ShapeMismatch,
    SpmOverflowAtRuntime,
)
from .fabric import (
    ChannelPort,
    CollectiveTree,
    TileCoord,
    build_multicast_tree,
    build_reduce_tree,
    resolve_group,
    xy_route,
)
from .layout import HbmImage
from .program import (
    BspProgram,
    CollectiveReduce,
    HbmLoad,
    HbmStore,
    Mmad,
    MulticastSend,
    NeighborSend,
    Receive,
    match_transfers,
    op_kind,
)

ORDERING_TAG = "fifo(ready,tile,op)"
TRACE_HEADER = "cycle_start,cycle_end,tile,superstep,op_kind,bytes,resource_list"


def _node_str(node) -> str:
    if isinstance(node, ChannelPort):
        return f"ch{node.channel}"
    return f"{node.row}.{node.col}"


def _link_str(link) -> str:
    return f"link@{_node_str(link[0])}>{_node_str(link[1])}"


def _fmt_map(d: dict) -> str:
    return ";".join(f"{k}:{v}" for k, v in d.items())


def _parse_map(text: str, keytype=str) -> dict:
    out = {}
    for item in filter(None, text.split(";")):
        k, _, v = item.rpartition(":")
        out[keytype(k)] = int(v)
    return out


@dataclass
class SimReport:
    label: str
    total_cycles: int
    flops_executed: int
    engine_busy: tuple  # per tile, tile-id order
    hbm_bytes_read: dict  # channel -> bytes
    hbm_bytes_written: dict
    noc_bytes: dict  # link name -> bytes
    superstep_cycles: tuple  # barrier cycle closing each superstep
    m: int
    n: int
    k: int
    tm: int
    tn: int
    tk: int
    grid_rows: int
    grid_cols: int
    engine_rows: int
    engine_cols: int
    elem_bytes: int
    clock_ghz: float
    ordering: str = ORDERING_TAG

    @property
    def total_bytes_read(self) -> int:
        return sum(self.hbm_bytes_read.values())

    @property
    def total_bytes_written(self) -> int:
        return sum(self.hbm_bytes_written.values())

    @property
    def hbm_bytes(self) -> int:
        return self.total_bytes_read + self.total_bytes_written

    _INTS = ("total_cycles", "flops_executed", "m", "n", "k", "tm", "tn", "tk",
             "grid_rows", "grid_cols", "engine_rows", "engine_cols", "elem_bytes")

    def to_text(self) -> str:
        lines = [f"label={self.label}"]
        lines += [f"{name}={getattr(self, name)}" for name in self._INTS]
        lines += [
            f"clock_ghz={self.clock_ghz!r}",
            f"ordering={self.ordering}",
            f"engine_busy={','.join(map(str, self.engine_busy))}",
            f"superstep_cycles={','.join(map(str, self.superstep_cycles))}",
            f"hbm_bytes_read={_fmt_map(self.hbm_bytes_read)}",
            f"hbm_bytes_written={_fmt_map(self.hbm_bytes_written)}",
            f"noc_bytes={_fmt_map(self.noc_bytes)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SimReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        ints = {name: int(kv[name]) for name in cls._INTS}

        def seq(key):
            return tuple(int(x) for x in kv[key].split(",") if x)

        return cls(
            label=kv["label"],
            engine_busy=seq("engine_busy"),
            superstep_cycles=seq("superstep_cycles"),
            hbm_bytes_read=_parse_map(kv["hbm_bytes_read"], int),
            hbm_bytes_written=_parse_map(kv["hbm_bytes_written"], int),
            noc_bytes=_parse_map(kv["noc_bytes"]),
            clock_ghz=float(kv["clock_ghz"]),
            ordering=kv["ordering"],
            **ints,
        )


@dataclass
class TraceRecord:
    cycle_start: int
    cycle_end: int
    tile: TileCoord
    superstep: int
    op_kind: str
    nbytes: int
    resources: tuple

    def to_csv(self) -> str:
        return (
            f"{self.cycle_start},{self.cycle_end},{_node_str(self.tile)},{self.superstep},"
            f"{self.op_kind},{self.nbytes},{';'.join(self.resources)}"
        )


def trace_to_csv(records) -> str:
    out = io.StringIO()
    out.write(TRACE_HEADER + "\n")
    for rec in records:
        out.write(rec.to_csv() + "\n")
    return out.getvalue()


@dataclass
class _Node:
    tile: TileCoord
    tid: int
    idx: int
    op: object
    reads: frozenset
    writes: frozenset
    start: int = 0
    end: int = 0
    nbytes: int = 0
    resources: tuple = ()
    task: int = -1


@dataclass
class _Task:
    nodes: list  # primary node first
    waiting: int = 0
    ready: int = 0
    dependents: list = field(default_factory=list)  # task indices, one entry per dependency edge


class Simulator:
    def __init__(self, program: BspProgram, arch: ArchConfig, hbm: HbmImage):
        if (program.grid_rows, program.grid_cols) != (arch.grid_rows, arch.grid_cols):
            raise ExecutionError("program grid does not match the architecture")
        self.program = program
        self.arch = arch
        self.hbm = hbm.copy()
        shape = program.shape
        for name, dims in (("A", (shape.m, shape.k)), ("B", (shape.k, shape.n))):
            if name not in self.hbm:
                raise PreloadMissingMatrix(f"preload has no matrix {name!r}")
            layout = self.hbm.layouts[name]
            if (layout.matrix_rows, layout.matrix_cols) != dims:
                raise PreloadMissingMatrix(
                    f"preloaded {name} is {layout.matrix_rows}x{layout.matrix_cols}, program needs {dims[0]}x{dims[1]}"
                )
        self.hbm.allocate("C", program.layouts["C"])
        self.free: dict = defaultdict(int)
        self.busy: dict = defaultdict(int)
        self.spm: dict = defaultdict(dict)
        self.live_bytes: dict = defaultdict(int)
        self.hbm_read: dict = defaultdict(int)
        self.hbm_written: dict = defaultdict(int)
        self.noc: dict = defaultdict(int)
        self.flops = 0
        self.trace: list = []
        self._trees: dict = {}
        self._routes: dict = {}

    # -- helpers --------------------------------------------------------------

    def _tid(self, tile) -> int:
        return tile.row * self.arch.grid_cols + tile.col

    def _route(self, src, dst):
        key = (src, dst)
        if key not in self._routes:
            self._routes[key] = xy_route(src, dst, self.arch)
        return self._routes[key]

    def _tree(self, key, build):
        if key not in self._trees:
            self._trees[key] = build()
        return self._trees[key]

    def _slot(self, tile, slot) -> np.ndarray:
        slots = self.spm[tile]
        if slot not in slots:
            rows, cols = self.program.slots[slot]
            nbytes = rows * cols * self.arch.elem_bytes
            if self.live_bytes[tile] + nbytes > self.arch.spm_bytes:
                raise SpmOverflowAtRuntime(
                    f"tile {tile}: slot {slot!r} needs {nbytes} bytes, "
                    f"{self.arch.spm_bytes - self.live_bytes[tile]} free"
                )
            self.live_bytes[tile] += nbytes
            slots[slot] = np.zeros((rows, cols))
        return slots[slot]

    def _put(self, tile, slot, values):
        self._slot(tile, slot)[...] = values

    def _occupy(self, t, path):
        """Walk a wormhole path of (resource, serialization, is_link); returns (start, end)."""
        hop = self.arch.hop_latency_cycles
        first = None
        end = t
        for res, ser, is_link in path:
            start = max(t, self.free[res])
            self.free[res] = start + ser
            self.busy[res] += ser
            end = max(end, start + ser)
            if first is None:
                first = start
            t = start + (hop if is_link else 0)
        return (t if first is None else first), end

    def _ser(self, nbytes, width):
        return math.ceil(nbytes / width)

    # -- operations -------------------------------------------------------------

    def _mmad(self, node, t0):
        op, tile, a = node.op, node.tile, self.arch
        tl = self.program.tiling
        dur = a.mmad_startup_cycles + math.ceil(tl.tm / a.engine_rows) * math.ceil(tl.tn / a.engine_cols) * tl.tk
        res = f"engine@{_node_str(tile)}"
        start = max(t0, self.free[res])
        self.free[res] = start + dur
        self.busy[res] += dur
        c = self._slot(tile, op.c_slot)
        c += self._slot(tile, op.a_slot) @ self._slot(tile, op.b_slot)
        shape = self.program.shape
        vm = max(0, min(tl.tm, shape.m - op.out_row * tl.tm))
        vn = max(0, min(tl.tn, shape.n - op.out_col * tl.tn))
        vk = max(0, min(tl.tk, shape.k - op.k_tile * tl.tk))
        self.flops += 2 * vm * vn * vk
        node.start, node.end, node.resources = start, start + dur, (res,)

    def _hbm_paths(self, tile, counts, load):
        a = self.arch
        dma = f"hbmdma@{_node_str(tile)}"
        for ch in sorted(counts):
            nbytes = counts[ch] * a.elem_bytes
            port = ChannelPort(ch)
            route = self._route(port, tile) if load else self._route(tile, port)
            chan = (f"ch{ch}", self._ser(nbytes, a.hbm_channel_bytes_per_cycle), False)
            links = [(_link_str(l), self._ser(nbytes, a.noc_link_bytes_per_cycle), True) for l in route]
            head = [(dma, self._ser(nbytes, a.spm_bw_bytes_per_cycle), False)]
            yield ch, nbytes, route, head + ([chan] + links if load else links + [chan])

    def _hbm(self, node, t0):
        op, tile = node.op, node.tile
        rows, cols = self.program.slots[op.slot]
        r0, c0 = op.tile_row * rows, op.tile_col * cols
        if isinstance(op, HbmLoad):
            if op.matrix not in self.hbm:
                raise PreloadMissingMatrix(f"no preloaded matrix {op.matrix!r}")
            data, counts = self.hbm.read(op.matrix, r0, r0 + rows, c0, c0 + cols)
            self._put(tile, op.slot, data)
        else:
            counts = self.hbm.write(op.matrix, r0, c0, self._slot(tile, op.slot))
        starts, ends, resources, total = [], [t0], [], 0
        for ch, nbytes, route, path in self._hbm_paths(tile, counts, isinstance(op, HbmLoad)):
            s, e = self._occupy(t0, path)
            starts.append(s)
            ends.append(e)
            resources += [p[0] for p in path]
            total += nbytes
            (self.hbm_read if isinstance(op, HbmLoad) else self.hbm_written)[ch] += nbytes
            for link in route:
                self.noc[_link_str(link)] += nbytes
        node.start = min(starts) if starts else t0
        node.end = max(ends)
        node.nbytes, node.resources = total, tuple(dict.fromkeys(resources))

    def _send(self, task, t0):
        sender, receivers = task.nodes[0], task.nodes[1:]
        op, src = sender.op, sender.tile
        payload = self._slot(src, op.slot).copy()
        nbytes = payload.size * self.arch.elem_bytes
        if isinstance(op, MulticastSend):
            tree = self._tree(("mc", src, op.group), lambda: build_multicast_tree(src, op.group, self.arch))
        else:
            tree = self._tree(
                ("nb", src, op.dst),
                lambda: CollectiveTree(root=src, edges=frozenset(self._route(src, op.dst)), leaves=frozenset([op.dst])),
            )
        a = self.arch
        dma = f"nocdma@{_node_str(src)}"
        ser_link = self._ser(nbytes, a.noc_link_bytes_per_cycle)
        start, dma_end = self._occupy(t0, [(dma, self._ser(nbytes, a.spm_bw_bytes_per_cycle), False)])
        head, done = {src: start}, {src: start}
        resources = [dma]
        for node in tree.preorder():
            for child in tree.children(node):
                link = _link_str((node, child))
                ls = max(head[node], self.free[link])
                self.free[link] = ls + ser_link
                self.busy[link] += ser_link
                self.noc[link] += nbytes
                head[child] = ls + a.hop_latency_cycles
                done[child] = max(done[node], ls + ser_link)
                resources.append(link)
        if src in tree.leaves and op.dst_slot != op.slot:
            self._put(src, op.dst_slot, payload)
        for rnode in receivers:
            self._put(rnode.tile, rnode.op.slot, payload)
            rnode.start, rnode.end, rnode.nbytes = start, done[rnode.tile], nbytes
            rnode.resources = (dma,)
        sender.start = start
        sender.end = max([dma_end] + [done[m] for m in tree.leaves if m in done])
        sender.nbytes, sender.resources = nbytes, tuple(resources)

    def _reduce(self, node, t0):
        op, dst, a = node.op, node.tile, self.arch
        tree = self._tree(("red", dst, op.group), lambda: build_reduce_tree(op.group, dst, a))
        rows, cols = self.program.slots[op.slot]
        nbytes = rows * cols * a.elem_bytes
        ser_link = self._ser(nbytes, a.noc_link_bytes_per_cycle)
        dma = f"nocdma@{_node_str(dst)}"
        dma_start, dma_end = self._occupy(t0, [(dma, self._ser(nbytes, a.spm_bw_bytes_per_cycle), False)])
        head, done, value = {}, {}, {}
        resources = [dma]
        for v in tree.postorder():
            kids = tree.children(v)
            head.setdefault(v, t0)
            done.setdefault(v, t0)
            total = self._slot(v, op.slot).copy() if v in tree.leaves else np.zeros((rows, cols))
            for child in kids:
                total += value.pop(child)
            value[v] = total
            if v == dst:
                continue
            parent = tree.edge_to(v)[1]
            link = _link_str((v, parent))
            ls = max(head[v], self.free[link])
            self.free[link] = ls + ser_link
            self.busy[link] += ser_link
            self.noc[link] += nbytes
            head[parent] = max(head.get(parent, t0), ls + a.hop_latency_cycles)
            done[parent] = max(done.get(parent, t0), done[v], ls + ser_link)
            resources.append(link)
        self._put(dst, op.dst_slot, value[dst])
        node.start = dma_start
        node.end = max(dma_end, done[dst])
        node.nbytes, node.resources = nbytes, tuple(resources)

    # -- superstep scheduling -----------------------------------------------------

    def _build(self, s, step):
        nodes = {}
        per_tile = {}
        for tile in sorted(step, key=self._tid):
            lst = []
            for idx, op in enumerate(step[tile]):
                n = _Node(tile, self._tid(tile), idx, op, frozenset(op.reads()), frozenset(op.writes()))
                nodes[(tile, idx)] = n
                lst.append(n)
            per_tile[tile] = lst
        tasks = []
        receivers_of = {}
        for sender, sidx, matched in match_transfers(step, self.arch.grid_rows, self.arch.grid_cols):
            receivers_of[(sender, sidx)] = [nodes[(t, i)] for t, i in matched]
        for tile, lst in per_tile.items():
            for n in lst:
                if isinstance(n.op, Receive):
                    continue
                members = [n] + receivers_of.get((tile, n.idx), [])
                for m in members:
                    m.task = len(tasks)
                tasks.append(_Task(nodes=members))
        deps = defaultdict(set)  # task -> {(dep_task, dep_node_key)}
        for tile, lst in per_tile.items():
            for k, n in enumerate(lst):
                for prev in lst[:k]:
                    if (n.writes & (prev.reads | prev.writes)) or (n.reads & prev.writes):
                        if prev.task != n.task:
                            deps[n.task].add((prev.task, (prev.tile, prev.idx)))
                if isinstance(n.op, CollectiveReduce):
                    members = resolve_group(n.op.group, self.arch.grid_rows, self.arch.grid_cols)
                    for t2 in sorted(members - {tile}, key=self._tid):
                        for m in per_tile.get(t2, ()):
                            if n.op.slot in m.writes and m.task != n.task:
                                deps[n.task].add((m.task, (m.tile, m.idx)))
        for ti, edges in deps.items():
            tasks[ti].waiting = len(edges)
            for dep_task, key in edges:
                tasks[dep_task].dependents.append((ti, key))
        return nodes, tasks

    def _run_task(self, task, t0):
        head = task.nodes[0]
        if isinstance(head.op, Mmad):
            self._mmad(head, t0)
        elif isinstance(head.op, (HbmLoad, HbmStore)):
            self._hbm(head, t0)
        elif isinstance(head.op, (MulticastSend, NeighborSend)):
            self._send(task, t0)
        elif isinstance(head.op, CollectiveReduce):
            self._reduce(head, t0)
        else:
            raise ExecutionError(f"cannot execute {head.op!r}")

    def _superstep(self, s, step, t_start) -> int:
        nodes, tasks = self._build(s, step)
        heap = []
        for ti, task in enumerate(tasks):
            task.ready = t_start
            if task.waiting == 0:
                head = task.nodes[0]
                heapq.heappush(heap, (t_start, head.tid, head.idx, ti))
        done = 0
        while heap:
            ready, _, _, ti = heapq.heappop(heap)
            task = tasks[ti]
            self._run_task(task, ready)
            done += 1
            for dep_ti, key in task.dependents:
                dep = tasks[dep_ti]
                dep.ready = max(dep.ready, nodes[key].end)
                dep.waiting -= 1
                if dep.waiting == 0:
                    head = dep.nodes[0]
                    heapq.heappush(heap, (dep.ready, head.tid, head.idx, dep_ti))
        if done != len(tasks):
            raise ExecutionError(f"superstep {s}: circular slot dependencies, {len(tasks) - done} ops never ran")
        end = t_start
        for n in sorted(nodes.values(), key=lambda n: (n.tid, n.idx)):
            end = max(end, n.end)
            self.trace.append(TraceRecord(n.start, n.end, n.tile, s, op_kind(n.op), n.nbytes, n.resources))
        return end

    def run(self):
        t = 0
        boundaries = []
        for s, step in enumerate(self.program.supersteps):
            t = self._superstep(s, step, t)
            boundaries.append(t)
        a, p = self.arch, self.program
        busy = tuple(
            self.busy[f"engine@{r}.{c}"] for r in range(a.grid_rows) for c in range(a.grid_cols)
        )
        report = SimReport(
            label=p.label,
            total_cycles=t,
            flops_executed=self.flops,
            engine_busy=busy,
            hbm_bytes_read=dict(sorted(self.hbm_read.items())),
            hbm_bytes_written=dict(sorted(self.hbm_written.items())),
            noc_bytes=dict(sorted(self.noc.items())),
            superstep_cycles=tuple(boundaries),
            m=p.shape.m, n=p.shape.n, k=p.shape.k,
            tm=p.tiling.tm, tn=p.tiling.tn, tk=p.tiling.tk,
            grid_rows=a.grid_rows, grid_cols=a.grid_cols,
            engine_rows=a.engine_rows, engine_cols=a.engine_cols,
            elem_bytes=a.elem_bytes, clock_ghz=a.clock_ghz,
        )
        c = self.hbm.matrix("C")
        return c, report, self.trace


def execute(program: BspProgram, arch: ArchConfig, hbm: HbmImage):
    """Run ``program`` on a copy of ``hbm``; returns ``(C, SimReport, trace records)``."""
    return Simulator(program, arch, hbm).run()


def oracle_gemm(a, b) -> np.ndarray:
    """Reference product with each dot product accumulated over k in ascending order.

    Vectorised over (i, j) only, so every output element sees exactly the
    summation order of the textbook triple loop.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    c = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        c += np.multiply.outer(a[:, k], b[k, :])
    return c


@dataclass(frozen=True)
class Verification:
    passed: bool
    max_abs_error: float


def verify(c, a, b, rtol: float = 1e-9, atol: float = 1e-12) -> Verification:
    ref = oracle_gemm(a, b)
    c = np.asarray(c, dtype=np.float64)
    if c.shape != ref.shape:
        raise ShapeMismatch(f"result is {c.shape}, expected {ref.shape}")
    err = np.abs(c - ref)
    passed = bool(np.all(err <= atol + rtol * np.abs(ref)))
    return Verification(passed, float(err.max()) if err.size else 0.0)
