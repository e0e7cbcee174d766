"""Disk-backed state interval history with logarithmic stab queries.

Intervals are (quark, start, end, value) with half-open time semantics
([start, end); zero-length records are allowed as instantaneous markers).
They must be inserted in non-decreasing order of end time, and per quark
the solid intervals must not overlap (the state system emits a tiling per
attribute; stab-query uniqueness rests on it). The store packs intervals
into fixed-size node blocks arranged as a tree over time ranges:

* every node owns a time range contained in its parent's range,
* the children of a node tile the parent's range contiguously,
* only the rightmost branch is open; once a node is full it is sealed at
  the current insertion frontier and never rewritten.

A stab query therefore touches one root-to-leaf path. Long-lived intervals
that span many sealed subtrees live in interior nodes, which carry interval
payloads exactly like leaves.

The on-disk layout (fixed header, attribute path table, node blocks) is
documented in docs/sht-format.md and is fully self-describing: fanout and
block size are header fields, not constants.
"""

from __future__ import annotations

import os
import shutil
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Union

StateValue = Union[None, int, float, str]

MAGIC = b"SHT1"
VERSION = 1
DEFAULT_FANOUT = 50
DEFAULT_BLOCK_SIZE = 64 * 1024
MIN_BLOCK_SIZE = 1024
MAX_STR_BYTES = 4096

_KIND_CORE = 1
_KIND_LEAF = 2

# magic, version, fanout, block_size, root_id, tree_start, tree_end,
# node_count, node_region_offset, quark_count, path_count, reserved
_HEADER = struct.Struct("<4sIIIQqqQQQQQ")
HEADER_SIZE = _HEADER.size  # 80

_NODE_HEADER = struct.Struct("<B3xIQqqqII")  # kind, child_count, id, parent, start, end, n_intervals, n_strings
_CHILD = struct.Struct("<Qq")  # child id, child start
_IVAL_HEAD = struct.Struct("<IqqB")  # quark, start, end, value tag
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")

_TAG_NULL = 0
_TAG_INT = 1
_TAG_FLOAT = 2
_TAG_STR = 3

_NODE_FIXED_COST = _NODE_HEADER.size


class ShtError(Exception):
    """Interval store failure."""


class OutOfOrderEnd(ShtError):
    """Insert violated the non-decreasing end-time discipline."""


class TimeOutOfRange(ShtError):
    """Query timestamp outside the history's time range."""


class UnknownQuark(ShtError):
    """Query referenced a quark outside the attribute universe."""


@dataclass(slots=True, frozen=True)
class StateInterval:
    quark: int
    start: int
    end: int
    value: StateValue


def _value_tag(value: StateValue) -> int:
    if value is None:
        return _TAG_NULL
    if type(value) is int:
        return _TAG_INT
    if type(value) is float:
        return _TAG_FLOAT
    if isinstance(value, str):
        return _TAG_STR
    raise ShtError(f"unsupported state value type: {type(value).__name__}")


class _Node:
    __slots__ = (
        "kind",
        "id",
        "parent",
        "start",
        "end",
        "children",
        "intervals",
        "strings",
        "strmap",
        "used",
    )

    def __init__(self, kind: int, node_id: int, parent: int, start: int, fanout: int):
        self.kind = kind
        self.id = node_id
        self.parent = parent
        self.start = start
        self.end: int | None = None
        self.children: list[tuple[int, int]] = []  # (id, start)
        self.intervals: list[tuple[int, int, int, StateValue]] = []
        self.strings: list[str] = []
        self.strmap: dict[str, int] = {}
        # interior nodes reserve the full child table up front so that
        # interval space accounting never has to move records later
        self.used = _NODE_FIXED_COST + (fanout * _CHILD.size if kind == _KIND_CORE else 0)

    def record_cost(self, value: StateValue) -> int:
        tag = _value_tag(value)
        cost = _IVAL_HEAD.size
        if tag == _TAG_INT:
            cost += _I64.size
        elif tag == _TAG_FLOAT:
            cost += _F64.size
        elif tag == _TAG_STR:
            cost += _U16.size
            if value not in self.strmap:
                cost += _U16.size + len(value.encode("utf-8"))
        return cost

    def add(self, quark: int, start: int, end: int, value: StateValue, cost: int) -> None:
        if isinstance(value, str) and value not in self.strmap:
            self.strmap[value] = len(self.strings)
            self.strings.append(value)
        self.intervals.append((quark, start, end, value))
        self.used += cost

    def to_block(self, block_size: int) -> bytes:
        assert self.end is not None, "only sealed nodes are serialized"
        out = bytearray()
        out += _NODE_HEADER.pack(
            self.kind,
            len(self.children),
            self.id,
            self.parent,
            self.start,
            self.end,
            len(self.intervals),
            len(self.strings),
        )
        for cid, cstart in self.children:
            out += _CHILD.pack(cid, cstart)
        for s in self.strings:
            raw = s.encode("utf-8")
            out += _U16.pack(len(raw))
            out += raw
        for quark, start, end, value in self.intervals:
            tag = _value_tag(value)
            out += _IVAL_HEAD.pack(quark, start, end, tag)
            if tag == _TAG_INT:
                out += _I64.pack(value)
            elif tag == _TAG_FLOAT:
                out += _F64.pack(value)
            elif tag == _TAG_STR:
                out += _U16.pack(self.strmap[value])
        if len(out) > block_size:
            raise ShtError(
                f"node {self.id} overflowed its block ({len(out)} > {block_size}); "
                "space accounting bug"
            )
        out += b"\x00" * (block_size - len(out))
        return bytes(out)


@dataclass(slots=True)
class _DecodedNode:
    kind: int
    id: int
    parent: int
    start: int
    end: int
    children: list[tuple[int, int]]
    intervals: list[tuple[int, int, int, StateValue]]


def _decode_node(block: bytes) -> _DecodedNode:
    kind, n_children, node_id, parent, start, end, n_ivals, n_strs = _NODE_HEADER.unpack_from(block, 0)
    off = _NODE_HEADER.size
    children = []
    for _ in range(n_children):
        cid, cstart = _CHILD.unpack_from(block, off)
        children.append((cid, cstart))
        off += _CHILD.size
    strings = []
    for _ in range(n_strs):
        (slen,) = _U16.unpack_from(block, off)
        off += _U16.size
        strings.append(block[off : off + slen].decode("utf-8"))
        off += slen
    intervals: list[tuple[int, int, int, StateValue]] = []
    for _ in range(n_ivals):
        quark, istart, iend, tag = _IVAL_HEAD.unpack_from(block, off)
        off += _IVAL_HEAD.size
        value: StateValue
        if tag == _TAG_NULL:
            value = None
        elif tag == _TAG_INT:
            (value,) = _I64.unpack_from(block, off)
            off += _I64.size
        elif tag == _TAG_FLOAT:
            (value,) = _F64.unpack_from(block, off)
            off += _F64.size
        elif tag == _TAG_STR:
            (idx,) = _U16.unpack_from(block, off)
            off += _U16.size
            value = strings[idx]
        else:
            raise ShtError(f"corrupt value tag {tag}")
        intervals.append((quark, istart, iend, value))
    return _DecodedNode(kind, node_id, parent, start, end, children, intervals)


class _QueryMixin:
    """Tree traversal shared by the writer (pre-close) and the reader.

    Subclasses provide _node(node_id), _root_id(), tree_start, a current
    end bound, and the quark universe size.
    """

    last_visits = 0

    def _node(self, node_id: int) -> _DecodedNode:
        raise NotImplementedError

    def _root_id(self) -> int:
        raise NotImplementedError

    def _end_bound(self) -> int:
        raise NotImplementedError

    def _quark_count(self) -> int:
        raise NotImplementedError

    def _check_time(self, t: int) -> None:
        if not (self.tree_start <= t <= self._end_bound()):
            raise TimeOutOfRange(
                f"t={t} outside [{self.tree_start}, {self._end_bound()}]"
            )

    def _check_quark(self, quark: int) -> None:
        n = self._quark_count()
        if quark < 0 or quark >= n:
            raise UnknownQuark(f"quark {quark} outside universe of {n}")

    def _stab_path(self, t: int) -> Iterator[_DecodedNode]:
        visits = 0
        node = self._node(self._root_id())
        while True:
            visits += 1
            yield node
            if not node.children:
                break
            # children tile the node's range; take the last child starting <= t
            nxt = None
            for cid, cstart in node.children:
                if cstart <= t:
                    nxt = cid
                else:
                    break
            if nxt is None:
                break
            node = self._node(nxt)
        self.last_visits = visits

    def query_full(self, t: int) -> dict[int, StateValue]:
        """State of every known quark at time t (None where no state)."""
        self._check_time(t)
        result: dict[int, StateValue] = {q: None for q in range(self._quark_count())}
        for node in self._stab_path(t):
            for quark, start, end, value in node.intervals:
                if start <= t < end:
                    result[quark] = value
        return result

    def query_single(self, quark: int, t: int) -> StateValue:
        self._check_quark(quark)
        self._check_time(t)
        for node in self._stab_path(t):
            for q, start, end, value in node.intervals:
                if q == quark and start <= t < end:
                    return value
        return None

    def query_range(self, quark: int, t0: int, t1: int) -> list[StateInterval]:
        """All intervals of `quark` intersecting [t0, t1], ordered by start."""
        self._check_quark(quark)
        if t0 > t1:
            raise ValueError(f"t0={t0} > t1={t1}")
        bound = self._end_bound()
        if t1 < self.tree_start or t0 > bound:
            raise TimeOutOfRange(
                f"[{t0}, {t1}] outside [{self.tree_start}, {bound}]"
            )
        out: list[StateInterval] = []
        visits = 0
        stack = [self._root_id()]
        while stack:
            node = self._node(stack.pop())
            visits += 1
            for q, start, end, value in node.intervals:
                if q != quark:
                    continue
                if (start <= t1 and end > t0) or (start == end and t0 <= start <= t1):
                    out.append(StateInterval(q, start, end, value))
            n = len(node.children)
            for i, (cid, cstart) in enumerate(node.children):
                cend = node.children[i + 1][1] if i + 1 < n else node.end
                if cstart <= t1 and (cend is None or cend >= t0):
                    stack.append(cid)
        self.last_visits = visits
        out.sort(key=lambda iv: (iv.start, iv.end))
        return out

    def query_many(
        self, quarks: Iterable[int], t0: int, t1: int
    ) -> dict[int, list[StateInterval]]:
        """query_range for several quarks in one tree walk."""
        wanted = set(quarks)
        for q in wanted:
            self._check_quark(q)
        if t0 > t1:
            raise ValueError(f"t0={t0} > t1={t1}")
        out: dict[int, list[StateInterval]] = {q: [] for q in wanted}
        stack = [self._root_id()]
        while stack:
            node = self._node(stack.pop())
            for q, start, end, value in node.intervals:
                if q not in wanted:
                    continue
                if (start <= t1 and end > t0) or (start == end and t0 <= start <= t1):
                    out[q].append(StateInterval(q, start, end, value))
            n = len(node.children)
            for i, (cid, cstart) in enumerate(node.children):
                cend = node.children[i + 1][1] if i + 1 < n else node.end
                if cstart <= t1 and (cend is None or cend >= t0):
                    stack.append(cid)
        for lst in out.values():
            lst.sort(key=lambda iv: (iv.start, iv.end))
        return out


class HistoryWriter(_QueryMixin):
    """Single-writer builder; seals node blocks to disk as they fill."""

    def __init__(
        self,
        path,
        tree_start: int,
        fanout: int = DEFAULT_FANOUT,
        block_size: int = DEFAULT_BLOCK_SIZE,
    ):
        if fanout < 2:
            raise ValueError("fanout must be >= 2")
        if block_size < MIN_BLOCK_SIZE:
            raise ValueError(f"block_size must be >= {MIN_BLOCK_SIZE}")
        self.path = Path(path)
        self.tree_start = tree_start
        self.fanout = fanout
        self.block_size = block_size
        self.tree_end: int | None = None
        self._spill_path = self.path.with_name(self.path.name + ".building")
        self._spill = open(self._spill_path, "w+b")
        self._frontier = tree_start
        self._node_count = 0
        self._max_quark = -1
        self._paths = []
        self._path_count = 0
        self._closed = False
        self._branch: list[_Node] = [self._new_node(_KIND_LEAF, -1, tree_start)]
        self._reader: HistoryReader | None = None

    # -- construction ---------------------------------------------------

    def _new_node(self, kind: int, parent: int, start: int) -> _Node:
        node = _Node(kind, self._node_count, parent, start, self.fanout)
        self._node_count += 1
        return node

    def _seal(self, node: _Node, end: int) -> None:
        node.end = end
        block = node.to_block(self.block_size)
        self._spill.seek(node.id * self.block_size)
        self._spill.write(block)

    def insert(self, quark: int, start: int, end: int, value: StateValue) -> None:
        if self._closed:
            raise ShtError("history is closed")
        if quark < 0:
            raise ShtError("quark must be non-negative")
        if start < self.tree_start:
            raise TimeOutOfRange(f"interval start {start} before tree start {self.tree_start}")
        if end < start:
            raise ShtError(f"interval end {end} before start {start}")
        if end < self._frontier:
            raise OutOfOrderEnd(
                f"interval end {end} before current frontier {self._frontier}"
            )
        if isinstance(value, str) and len(value.encode("utf-8")) > MAX_STR_BYTES:
            raise ShtError(f"string value exceeds {MAX_STR_BYTES} bytes")

        while True:
            # deepest open node whose range can contain the interval
            idx = len(self._branch) - 1
            while self._branch[idx].start > start:
                idx -= 1
            node = self._branch[idx]
            cost = node.record_cost(value)
            if node.used + cost <= self.block_size:
                node.add(quark, start, end, value, cost)
                break
            if _NODE_FIXED_COST + (self.fanout * _CHILD.size) + cost > self.block_size:
                raise ShtError("record larger than an empty node; increase block_size")
            self._add_sibling(idx)

        self._frontier = max(self._frontier, end)
        if quark > self._max_quark:
            self._max_quark = quark

    def _add_sibling(self, idx: int) -> None:
        if idx == 0:
            self._grow_root()
            return
        parent = self._branch[idx - 1]
        if len(parent.children) >= self.fanout:
            self._add_sibling(idx - 1)
            return
        split = self._frontier
        for i in range(len(self._branch) - 1, idx - 1, -1):
            self._seal(self._branch[i], split)
        depth = len(self._branch)
        for i in range(idx, depth):
            kind = _KIND_LEAF if i == depth - 1 else _KIND_CORE
            node = self._new_node(kind, self._branch[i - 1].id, split)
            self._branch[i - 1].children.append((node.id, split))
            self._branch[i] = node

    def _grow_root(self) -> None:
        split = self._frontier
        old_root = self._branch[0]
        new_root = self._new_node(_KIND_CORE, -1, self.tree_start)
        old_root.parent = new_root.id
        for i in range(len(self._branch) - 1, -1, -1):
            self._seal(self._branch[i], split)
        new_root.children.append((old_root.id, old_root.start))
        depth = len(self._branch) + 1
        branch = [new_root]
        for i in range(1, depth):
            kind = _KIND_LEAF if i == depth - 1 else _KIND_CORE
            node = self._new_node(kind, branch[i - 1].id, split)
            branch[i - 1].children.append((node.id, split))
            branch.append(node)
        self._branch = branch

    def set_path_table(self, paths, count: int | None = None) -> None:
        """Attribute path per quark, serialized into the file for readers.

        Accepts any iterable; large trees stream their table without ever
        materializing it. `count` must be given when `paths` has no len().
        """
        if self._closed:
            raise ShtError("history is closed")
        if count is None:
            paths = list(paths)
            count = len(paths)
        self._paths = paths
        self._path_count = count

    def close(self, t_end: int) -> None:
        """Seal open states of the tree, write the final file. Idempotent."""
        if self._closed:
            return
        if t_end < self._frontier:
            raise ShtError(f"t_end {t_end} before last interval end {self._frontier}")
        self.tree_end = t_end
        for i in range(len(self._branch) - 1, -1, -1):
            self._seal(self._branch[i], t_end)
        self._spill.flush()

        quark_count = max(self._max_quark + 1, self._path_count)
        with open(self.path, "wb") as out:
            # path table first (streamed), header last once offsets are known
            out.seek(HEADER_SIZE)
            written = 0
            path_bytes = 0
            for p in self._paths:
                raw = p.encode("utf-8")
                out.write(_U32.pack(len(raw)))
                out.write(raw)
                path_bytes += _U32.size + len(raw)
                written += 1
            if written != self._path_count:
                raise ShtError(
                    f"path table produced {written} entries, expected {self._path_count}"
                )
            region = HEADER_SIZE + path_bytes
            node_region_offset = ((region + 4095) // 4096) * 4096
            out.write(b"\x00" * (node_region_offset - region))
            self._spill.seek(0)
            shutil.copyfileobj(self._spill, out, 1024 * 1024)
            out.seek(0)
            out.write(
                _HEADER.pack(
                    MAGIC,
                    VERSION,
                    self.fanout,
                    self.block_size,
                    self._branch[0].id,
                    self.tree_start,
                    t_end,
                    self._node_count,
                    node_region_offset,
                    quark_count,
                    self._path_count,
                    0,
                )
            )
            out.flush()
            os.fsync(out.fileno())
        self._spill.close()
        self._spill_path.unlink(missing_ok=True)
        self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    @property
    def frontier(self) -> int:
        return self._frontier

    # -- queries (valid during build at t <= frontier, or after close) ---

    def _delegate(self) -> "HistoryReader":
        if self._reader is None:
            self._reader = HistoryReader(self.path)
        return self._reader

    def _node_by_id(self, node_id: int) -> _DecodedNode | None:
        for node in self._branch:
            if node.id == node_id:
                return _DecodedNode(
                    node.kind,
                    node.id,
                    node.parent,
                    node.start,
                    node.end if node.end is not None else self._frontier,
                    list(node.children),
                    list(node.intervals),
                )
        return None

    def _node(self, node_id: int) -> _DecodedNode:
        live = self._node_by_id(node_id)
        if live is not None:
            return live
        self._spill.seek(node_id * self.block_size)
        return _decode_node(self._spill.read(self.block_size))

    def _root_id(self) -> int:
        return self._branch[0].id

    def _end_bound(self) -> int:
        return self._frontier

    def _quark_count(self) -> int:
        return max(self._max_quark + 1, self._path_count)

    def query_full(self, t: int) -> dict[int, StateValue]:
        if self._closed:
            return self._delegate().query_full(t)
        return super().query_full(t)

    def query_single(self, quark: int, t: int) -> StateValue:
        if self._closed:
            return self._delegate().query_single(quark, t)
        return super().query_single(quark, t)

    def query_range(self, quark: int, t0: int, t1: int) -> list[StateInterval]:
        if self._closed:
            return self._delegate().query_range(quark, t0, t1)
        return super().query_range(quark, t0, t1)


class HistoryReader(_QueryMixin):
    """Read-only view over a closed history file; safe to share across threads."""

    _CACHE_NODES = 512

    def __init__(self, path):
        self.path = Path(path)
        self._fd = os.open(self.path, os.O_RDONLY)
        header = os.pread(self._fd, HEADER_SIZE, 0)
        if len(header) < HEADER_SIZE:
            raise ShtError(f"{self.path}: truncated header")
        (
            magic,
            version,
            self.fanout,
            self.block_size,
            self.root_id,
            self.tree_start,
            self.tree_end,
            self.node_count,
            self._node_region,
            self.quark_count,
            path_count,
            _reserved,
        ) = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ShtError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            raise ShtError(f"{self.path}: unsupported version {version}")
        blob = os.pread(self._fd, self._node_region - HEADER_SIZE, HEADER_SIZE)
        self.paths: list[str] = []
        off = 0
        for _ in range(path_count):
            (plen,) = _U32.unpack_from(blob, off)
            off += _U32.size
            self.paths.append(blob[off : off + plen].decode("utf-8"))
            off += plen
        self._path_index = {p: q for q, p in enumerate(self.paths)}
        self._cache: OrderedDict[int, _DecodedNode] = OrderedDict()

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def quark(self, path: str) -> int:
        try:
            return self._path_index[path]
        except KeyError:
            raise UnknownQuark(f"no attribute path {path!r}") from None

    def path_of(self, quark: int) -> str:
        self._check_quark(quark)
        return self.paths[quark] if quark < len(self.paths) else str(quark)

    def _node(self, node_id: int) -> _DecodedNode:
        cached = self._cache.get(node_id)
        if cached is not None:
            self._cache.move_to_end(node_id)
            return cached
        offset = self._node_region + node_id * self.block_size
        block = os.pread(self._fd, self.block_size, offset)
        node = _decode_node(block)
        self._cache[node_id] = node
        if len(self._cache) > self._CACHE_NODES:
            self._cache.popitem(last=False)
        return node

    def _root_id(self) -> int:
        return self.root_id

    def _end_bound(self) -> int:
        return self.tree_end

    def _quark_count(self) -> int:
        return self.quark_count

    def depth(self) -> int:
        """Number of levels root..leaf (uniform by construction)."""
        d = 1
        node = self._node(self.root_id)
        while node.children:
            d += 1
            node = self._node(node.children[-1][0])
        return d

    def leaf_count(self) -> int:
        count = 0
        for node_id in range(self.node_count):
            offset = self._node_region + node_id * self.block_size
            kind = os.pread(self._fd, 1, offset)[0]
            if kind == _KIND_LEAF:
                count += 1
        return count
