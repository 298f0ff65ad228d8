"""Mesh coordinates, mask-addressed tile groups, XY routes and collective trees."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Union

from .errors import NotMaskExpressible, SelectorOutsideMask


class TileCoord(NamedTuple):
    row: int
    col: int

    def __str__(self):
        return f"({self.row},{self.col})"


class ChannelPort(NamedTuple):
    """The NoC endpoint of an HBM channel's memory controller."""

    channel: int

    def __str__(self):
        return f"(ch{self.channel})"


Node = Union[TileCoord, ChannelPort]
Link = tuple  # (Node, Node), directed
Route = tuple  # tuple[Link, ...]


def node_key(node: Node) -> tuple:
    if isinstance(node, ChannelPort):
        return (1, node.channel, 0)
    return (0, node.row, node.col)


def link_name(link: Link) -> str:
    return f"{link[0]}->{link[1]}"


_GROUP_RE = re.compile(r"^\s*(\d+)/(\d+):(\d+)/(\d+)\s*$")


@dataclass(frozen=True, order=True)
class GroupSpec:
    """Tile (i, j) is a member iff ``i & m_row == s_row`` and ``j & m_col == s_col``."""

    s_row: int
    m_row: int
    s_col: int
    m_col: int

    def __post_init__(self):
        if min(self.s_row, self.m_row, self.s_col, self.m_col) < 0:
            raise SelectorOutsideMask(f"negative field in {self}")
        if self.s_row & ~self.m_row or self.s_col & ~self.m_col:
            raise SelectorOutsideMask(f"selector has bits outside the mask in {self}")

    def __str__(self):
        return f"{self.s_row}/{self.m_row}:{self.s_col}/{self.m_col}"

    @classmethod
    def parse(cls, text: str) -> "GroupSpec":
        m = _GROUP_RE.match(text)
        if not m:
            raise ValueError(f"bad group spec {text!r}, expected S_row/M_row:S_col/M_col")
        s_row, m_row, s_col, m_col = map(int, m.groups())
        return cls(s_row=s_row, m_row=m_row, s_col=s_col, m_col=m_col)

    def contains(self, tile: TileCoord) -> bool:
        return (tile.row & self.m_row) == self.s_row and (tile.col & self.m_col) == self.s_col


def _matching(n: int, selector: int, mask: int) -> list[int]:
    return [i for i in range(n) if i & mask == selector]


def resolve_group(spec: GroupSpec, rows: int, cols: int) -> frozenset[TileCoord]:
    return frozenset(
        TileCoord(i, j)
        for i in _matching(rows, spec.s_row, spec.m_row)
        for j in _matching(cols, spec.s_col, spec.m_col)
    )


def _axis_mask(values: set[int], n: int) -> tuple[int, int] | None:
    """(selector, mask) over log2(n) bits matching exactly ``values``, or None."""
    full = n - 1
    first = min(values)
    varying = 0
    for v in values:
        varying |= v ^ first
    mask = full & ~varying
    selector = first & mask
    if len(values) != 1 << bin(varying).count("1"):
        return None
    return selector, mask


def mask_for_set(tiles, rows: int, cols: int) -> GroupSpec:
    """Canonical GroupSpec addressing exactly ``tiles``; masks use only in-grid bits."""
    tiles = {TileCoord(*t) for t in tiles}
    if not tiles:
        raise NotMaskExpressible("empty tile set")
    row_set = {t.row for t in tiles}
    col_set = {t.col for t in tiles}
    if len(tiles) != len(row_set) * len(col_set):
        raise NotMaskExpressible("tile set is not a row-set x col-set product")
    row_part = _axis_mask(row_set, rows)
    col_part = _axis_mask(col_set, cols)
    if row_part is None or col_part is None:
        raise NotMaskExpressible("coordinates do not form a mask-selectable set")
    return GroupSpec(s_row=row_part[0], m_row=row_part[1], s_col=col_part[0], m_col=col_part[1])


def _router_path(a: TileCoord, b: TileCoord) -> list[Link]:
    links = []
    r, c = a
    step = 1 if b.col > c else -1
    while c != b.col:
        links.append((TileCoord(r, c), TileCoord(r, c + step)))
        c += step
    step = 1 if b.row > r else -1
    while r != b.row:
        links.append((TileCoord(r, c), TileCoord(r + step, c)))
        r += step
    return links


def xy_route(src: Node, dst: Node, arch) -> Route:
    """Column-first (X) then row (Y) dimension-order route.

    A channel port adds one link to or from the router it attaches to.
    """
    links: list[Link] = []
    if isinstance(src, ChannelPort):
        start = TileCoord(*arch.channel_router(src.channel))
        links.append((src, start))
    else:
        start = src
    if isinstance(dst, ChannelPort):
        end = TileCoord(*arch.channel_router(dst.channel))
    else:
        end = dst
    if src == dst:
        return ()
    links.extend(_router_path(start, end))
    if isinstance(dst, ChannelPort):
        links.append((end, dst))
    return tuple(links)


@dataclass(frozen=True)
class CollectiveTree:
    """Edges point away from ``root`` for multicast and towards it for reduction."""

    root: Node
    edges: frozenset
    leaves: frozenset
    reduce: bool = False
    _children: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        children: dict = {}
        for u, v in self.edges:
            parent, child = (v, u) if self.reduce else (u, v)
            children.setdefault(parent, []).append(child)
        for kids in children.values():
            kids.sort(key=node_key)
        object.__setattr__(self, "_children", children)

    def children(self, node: Node) -> list:
        return self._children.get(node, [])

    def edge_to(self, child: Node) -> Link:
        # the tree edge joining child to its parent, in the tree's direction
        for u, v in self.edges:
            if (u if self.reduce else v) == child:
                return (u, v)
        raise KeyError(child)

    def preorder(self) -> list:
        out, queue = [], deque([self.root])
        while queue:
            node = queue.popleft()
            out.append(node)
            queue.extend(self.children(node))
        return out

    def postorder(self) -> list:
        out: list = []

        def visit(node):
            for child in self.children(node):
                visit(child)
            out.append(node)

        visit(self.root)
        return out


def build_multicast_tree(src: Node, group: GroupSpec, arch) -> CollectiveTree:
    members = resolve_group(group, arch.grid_rows, arch.grid_cols)
    edges = set()
    for m in members:
        edges.update(xy_route(src, m, arch))
    return CollectiveTree(root=src, edges=frozenset(edges), leaves=members)


def build_reduce_tree(group: GroupSpec, dst: TileCoord, arch) -> CollectiveTree:
    tree = build_multicast_tree(dst, group, arch)
    edges = frozenset((v, u) for u, v in tree.edges)
    return CollectiveTree(root=dst, edges=edges, leaves=tree.leaves, reduce=True)
