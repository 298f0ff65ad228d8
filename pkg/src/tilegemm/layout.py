"""Distribution of matrices over HBM channels, and preload files.

A matrix is zero-padded, cut into ``split_rows x split_cols`` blocks, and the
blocks are dealt round-robin (row-major block order) over ``channel_count``
channels starting at ``channel_start``. Inside a channel, blocks are stored in
block-index order; inside a block, ``tile_rows x tile_cols`` tiles are stored
row-major, each tile contiguous and row-major.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IoFailure, LayoutError, SizeMismatch, UnknownEncoding

FUNCTIONAL_BYTES = 8  # binaries always hold little-endian float64
ENCODING = "f64le"
MANIFEST_NAME = "preload.manifest"


@dataclass(frozen=True)
class SplitScheme:
    split_rows: int = 1
    split_cols: int = 1

    def __post_init__(self):
        if self.split_rows < 1 or self.split_cols < 1:
            raise LayoutError(f"split must be positive, got {self}")

    def __str__(self):
        return f"{self.split_rows}x{self.split_cols}"

    @classmethod
    def parse(cls, text: str) -> "SplitScheme":
        m = re.fullmatch(r"\s*(\d+)\s*[xX,]\s*(\d+)\s*", text)
        if not m:
            raise LayoutError(f"bad split {text!r}, expected RxC")
        return cls(int(m.group(1)), int(m.group(2)))


@dataclass(frozen=True)
class LayoutDesc:
    matrix_rows: int
    matrix_cols: int
    split: SplitScheme
    tile_rows: int
    tile_cols: int
    channel_start: int = 0
    channel_count: int = 1

    def __post_init__(self):
        for name in ("matrix_rows", "matrix_cols", "tile_rows", "tile_cols", "channel_count"):
            if getattr(self, name) < 1:
                raise LayoutError(f"{name} must be positive, got {getattr(self, name)}")
        if self.channel_start < 0:
            raise LayoutError(f"channel_start must be >= 0, got {self.channel_start}")

    @property
    def padded_rows(self) -> int:
        unit = self.split.split_rows * self.tile_rows
        return math.ceil(self.matrix_rows / unit) * unit

    @property
    def padded_cols(self) -> int:
        unit = self.split.split_cols * self.tile_cols
        return math.ceil(self.matrix_cols / unit) * unit

    @property
    def block_rows(self) -> int:
        return self.padded_rows // self.split.split_rows

    @property
    def block_cols(self) -> int:
        return self.padded_cols // self.split.split_cols

    @property
    def num_blocks(self) -> int:
        return self.split.split_rows * self.split.split_cols

    @property
    def block_elems(self) -> int:
        return self.block_rows * self.block_cols

    def channels(self) -> list[int]:
        """Channels that hold at least one block, ascending."""
        return [self.channel_start + i for i in range(min(self.channel_count, self.num_blocks))]

    def blocks_in_channel(self, channel: int) -> int:
        i = channel - self.channel_start
        if not 0 <= i < self.channel_count:
            return 0
        return len(range(i, self.num_blocks, self.channel_count))

    def with_matrix(self, rows: int, cols: int) -> "LayoutDesc":
        from dataclasses import replace

        return replace(self, matrix_rows=rows, matrix_cols=cols)


def base_layout(rows: int, cols: int) -> LayoutDesc:
    """Whole matrix row-major in channel 0, no distribution."""
    return LayoutDesc(rows, cols, SplitScheme(1, 1), rows, cols, 0, 1)


def channel_of_block(block_row: int, block_col: int, layout: LayoutDesc) -> int:
    idx = block_row * layout.split.split_cols + block_col
    return layout.channel_start + idx % layout.channel_count


def _locate(rows, cols, layout: LayoutDesc):
    """Vectorised (channel, element offset) for row/col index arrays (outer product)."""
    rows = np.asarray(rows, dtype=np.int64)[:, None]
    cols = np.asarray(cols, dtype=np.int64)[None, :]
    bm, bn = layout.block_rows, layout.block_cols
    tm, tn = layout.tile_rows, layout.tile_cols
    tiles_across = bn // tn
    idx = (rows // bm) * layout.split.split_cols + cols // bn
    channel = layout.channel_start + idx % layout.channel_count
    position = idx // layout.channel_count
    lr, lc = rows % bm, cols % bn
    tile_index = (lr // tm) * tiles_across + lc // tn
    offset = position * (bm * bn) + tile_index * (tm * tn) + (lr % tm) * tn + lc % tn
    return channel, offset


def address_of(row: int, col: int, layout: LayoutDesc, elem_bytes: int = FUNCTIONAL_BYTES):
    """(channel, byte offset) of element (row, col) within its channel's address space."""
    if not (0 <= row < layout.padded_rows and 0 <= col < layout.padded_cols):
        raise IndexError(f"element ({row},{col}) outside padded matrix")
    channel, offset = _locate([row], [col], layout)
    return int(channel[0, 0]), int(offset[0, 0]) * elem_bytes


def channel_bytes(layout: LayoutDesc, elem_bytes: int = FUNCTIONAL_BYTES) -> dict[int, int]:
    return {
        ch: layout.blocks_in_channel(ch) * layout.block_elems * elem_bytes
        for ch in layout.channels()
    }


def pack(matrix, layout: LayoutDesc) -> dict[int, np.ndarray]:
    """Flat per-channel float64 arrays holding ``matrix`` under ``layout``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (layout.matrix_rows, layout.matrix_cols):
        raise LayoutError(f"matrix shape {matrix.shape} does not match layout")
    sr, sc = layout.split.split_rows, layout.split.split_cols
    bm, bn = layout.block_rows, layout.block_cols
    tm, tn = layout.tile_rows, layout.tile_cols
    padded = np.zeros((layout.padded_rows, layout.padded_cols))
    padded[: matrix.shape[0], : matrix.shape[1]] = matrix
    blocks = (
        padded.reshape(sr, bm // tm, tm, sc, bn // tn, tn)
        .transpose(0, 3, 1, 4, 2, 5)
        .reshape(sr * sc, bm * bn)
    )
    out = {}
    for i, ch in enumerate(layout.channels()):
        out[ch] = np.ascontiguousarray(blocks[i :: layout.channel_count].reshape(-1))
    return out


def unpack(channels: dict[int, np.ndarray], layout: LayoutDesc) -> np.ndarray:
    rows = np.arange(layout.matrix_rows)
    cols = np.arange(layout.matrix_cols)
    return _gather(channels, layout, rows, cols)


def _gather(channels, layout, rows, cols) -> np.ndarray:
    ch, off = _locate(rows, cols, layout)
    out = np.empty(ch.shape)
    for c in np.unique(ch):
        sel = ch == c
        out[sel] = channels[int(c)][off[sel]]
    return out


@dataclass
class ManifestEntry:
    name: str
    layout: LayoutDesc
    files: dict  # channel -> (relative path, byte count)
    encoding: str = ENCODING

    def to_line(self) -> str:
        lay = self.layout
        parts = [
            f"matrix={self.name}",
            f"rows={lay.matrix_rows}",
            f"cols={lay.matrix_cols}",
            f"split={lay.split}",
            f"tm={lay.tile_rows}",
            f"tn={lay.tile_cols}",
            f"channels={lay.channel_count}",
            f"start={lay.channel_start}",
            f"encoding={self.encoding}",
        ]
        for ch in sorted(self.files):
            path, nbytes = self.files[ch]
            parts.append(f"file.{ch}={path}:{nbytes}")
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "ManifestEntry":
        fields, files = {}, {}
        for token in line.split():
            if "=" not in token:
                raise SizeMismatch(f"malformed manifest token {token!r}")
            key, value = token.split("=", 1)
            if key.startswith("file."):
                path, _, nbytes = value.rpartition(":")
                try:
                    files[int(key[5:])] = (path, int(nbytes))
                except ValueError:
                    raise SizeMismatch(f"malformed file entry {token!r}") from None
            else:
                fields[key] = value
        try:
            layout = LayoutDesc(
                matrix_rows=int(fields["rows"]),
                matrix_cols=int(fields["cols"]),
                split=SplitScheme.parse(fields["split"]),
                tile_rows=int(fields["tm"]),
                tile_cols=int(fields["tn"]),
                channel_start=int(fields.get("start", 0)),
                channel_count=int(fields["channels"]),
            )
            name = fields["matrix"]
        except (KeyError, ValueError) as exc:
            raise SizeMismatch(f"malformed manifest stanza: {exc}") from None
        return cls(name, layout, files, fields.get("encoding", ENCODING))


@dataclass
class PreloadManifest:
    entries: list = field(default_factory=list)
    root: Path | None = None

    def __getitem__(self, name: str) -> ManifestEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def to_text(self) -> str:
        return "".join(e.to_line() + "\n" for e in self.entries)

    @classmethod
    def from_text(cls, text: str, root=None) -> "PreloadManifest":
        entries = [
            ManifestEntry.from_line(line)
            for line in (raw.split("#", 1)[0].strip() for raw in text.splitlines())
            if line
        ]
        return cls(entries, Path(root) if root is not None else None)


def write_preload(matrices: dict, layouts: dict, directory) -> PreloadManifest:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        manifest = PreloadManifest(root=directory)
        for name in sorted(matrices):
            layout = layouts[name]
            files = {}
            for ch, data in pack(matrices[name], layout).items():
                rel = f"{name}.ch{ch}.bin"
                raw = data.astype("<f8").tobytes()
                (directory / rel).write_bytes(raw)
                files[ch] = (rel, len(raw))
            manifest.entries.append(ManifestEntry(name, layout, files))
        (directory / MANIFEST_NAME).write_text(manifest.to_text())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return manifest


def _manifest_path(path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_channels(path) -> tuple[PreloadManifest, dict]:
    """Parse a manifest and load its channel binaries as ``{name: {channel: array}}``."""
    mpath = _manifest_path(path)
    try:
        text = mpath.read_text()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    manifest = PreloadManifest.from_text(text, root=mpath.parent)
    data = {}
    for entry in manifest.entries:
        if entry.encoding != ENCODING:
            raise UnknownEncoding(f"{entry.name}: unknown encoding {entry.encoding!r}")
        expected = channel_bytes(entry.layout)
        if set(entry.files) != set(expected):
            raise SizeMismatch(
                f"{entry.name}: manifest channels {sorted(entry.files)} != layout channels {sorted(expected)}"
            )
        channels = {}
        for ch, (rel, nbytes) in sorted(entry.files.items()):
            if nbytes != expected[ch]:
                raise SizeMismatch(f"{entry.name} channel {ch}: {nbytes} bytes, layout needs {expected[ch]}")
            fpath = manifest.root / rel
            if not fpath.is_file():
                raise SizeMismatch(f"{entry.name} channel {ch}: missing binary {rel}")
            raw = fpath.read_bytes()
            if len(raw) != nbytes:
                raise SizeMismatch(f"{entry.name} channel {ch}: file has {len(raw)} bytes, expected {nbytes}")
            channels[ch] = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        data[entry.name] = channels
    return manifest, data


def read_preload(path) -> tuple[dict, dict]:
    """Inverse of write_preload: ``(matrices, layouts)`` keyed by matrix name."""
    manifest, data = load_channels(path)
    matrices, layouts = {}, {}
    for entry in manifest.entries:
        matrices[entry.name] = unpack(data[entry.name], entry.layout)
        layouts[entry.name] = entry.layout
    return matrices, layouts


class HbmImage:
    """Mutable HBM contents: per matrix, per channel flat float64 storage."""

    def __init__(self):
        self.layouts: dict[str, LayoutDesc] = {}
        self.data: dict[str, dict[int, np.ndarray]] = {}

    @classmethod
    def from_matrices(cls, matrices: dict, layouts: dict) -> "HbmImage":
        image = cls()
        for name, m in matrices.items():
            image.add(name, layouts[name], pack(m, layouts[name]))
        return image

    @classmethod
    def from_preload(cls, path) -> "HbmImage":
        manifest, data = load_channels(path)
        image = cls()
        for entry in manifest.entries:
            image.add(entry.name, entry.layout, {ch: a.copy() for ch, a in data[entry.name].items()})
        return image

    def add(self, name: str, layout: LayoutDesc, channels: dict) -> None:
        self.layouts[name] = layout
        self.data[name] = channels

    def allocate(self, name: str, layout: LayoutDesc) -> None:
        self.add(name, layout, {ch: np.zeros(n // FUNCTIONAL_BYTES) for ch, n in channel_bytes(layout).items()})

    def copy(self) -> "HbmImage":
        other = HbmImage()
        for name, layout in self.layouts.items():
            other.add(name, layout, {ch: a.copy() for ch, a in self.data[name].items()})
        return other

    def __contains__(self, name):
        return name in self.data

    def read(self, name, r0, r1, c0, c1):
        """Region contents (zeros outside the padded matrix) and element counts per channel."""
        layout = self.layouts[name]
        out = np.zeros((r1 - r0, c1 - c0))
        rows = np.arange(r0, min(r1, layout.padded_rows))
        cols = np.arange(c0, min(c1, layout.padded_cols))
        if len(rows) and len(cols):
            out[: len(rows), : len(cols)] = _gather(self.data[name], layout, rows, cols)
        return out, self.channel_counts(name, rows, cols)

    def write(self, name, r0, c0, values):
        """Store ``values`` at (r0, c0), clipped to the unpadded matrix."""
        layout = self.layouts[name]
        rows = np.arange(r0, min(r0 + values.shape[0], layout.matrix_rows))
        cols = np.arange(c0, min(c0 + values.shape[1], layout.matrix_cols))
        if not (len(rows) and len(cols)):
            return {}
        ch, off = _locate(rows, cols, layout)
        clipped = values[: len(rows), : len(cols)]
        for c in np.unique(ch):
            sel = ch == c
            self.data[name][int(c)][off[sel]] = clipped[sel]
        return self.channel_counts(name, rows, cols)

    def channel_counts(self, name, rows, cols) -> dict[int, int]:
        if not (len(rows) and len(cols)):
            return {}
        ch, _ = _locate(rows, cols, self.layouts[name])
        values, counts = np.unique(ch, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    def matrix(self, name) -> np.ndarray:
        return unpack(self.data[name], self.layouts[name])
