"""Attribute tree and state system feeding the interval history.

The model is a fixed five-branch tree: Connections, Requests, Bus, Threads,
EventLoop. Entities (one connection, one request, one thread, one host's
event loop) hang under their branch and carry a fixed set of leaf
attributes. Every attribute path maps to a dense, stable integer quark.

State modifications must arrive in non-decreasing time order across the
whole tree; that is what lets the history receive its intervals sorted by
end time. A modification closes the attribute's open state into an interval
[prev_t, t) and opens a new one; writing the same value twice is a no-op,
and a second write at the same timestamp turns the earlier value into a
zero-length marker so merged same-timestamp streams stay deterministic.
"""

from __future__ import annotations

from array import array

from .sht import HistoryWriter, StateValue

ROOT_BRANCHES = ("Connections", "Requests", "Bus", "Threads", "EventLoop")

ENTITY_LEAVES: dict[str, tuple[str, ...]] = {
    "Connections": ("Memory", "Type", "DataStructure", "Objects"),
    "Requests": ("DataStructure", "Type", "Connection"),
    "Threads": ("Request", "Operation"),
    "EventLoop": ("Phase", "QueueLength"),
}

# The bus is a single shared entity: cumulative outbound/inbound byte
# counters plus the current communication type.
BUS_LEAVES = ("Volume", "VolumeIn", "Type")


class UnknownPath(KeyError):
    """Path lookup with create_if_missing=False found nothing."""


class SchemaViolation(ValueError):
    """Path falls outside the model schema while enforcement is on."""


class TimeRegression(ValueError):
    """Modification timestamp earlier than the current build time."""


class AttributeTree:
    """Bidirectional path <-> quark map.

    With schema enforcement on (the default), entity nodes under
    Connections/Requests/Threads/EventLoop pre-allocate their fixed leaf
    quarks contiguously, which keeps per-entity bookkeeping at one lookup
    entry regardless of leaf count.
    """

    def __init__(self, schema: bool = True):
        self.schema = schema
        self._segments: list[str] = []
        self._parents = array("q")  # compact: trees reach hundreds of thousands of quarks
        self._lookup: dict[tuple[int, str], int] = {}
        if schema:
            for branch in ROOT_BRANCHES:
                self._add(-1, branch)
            bus = self._lookup[(-1, "Bus")]
            for leaf in BUS_LEAVES:
                self._add(bus, leaf)

    def __len__(self) -> int:
        return len(self._segments)

    def _add(self, parent: int, segment: str) -> int:
        quark = len(self._segments)
        self._segments.append(segment)
        self._parents.append(parent)
        self._lookup[(parent, segment)] = quark
        return quark

    def _add_entity(self, branch_quark: int, segment: str, leaves: tuple[str, ...]) -> int:
        entity = self._add(branch_quark, segment)
        for leaf in leaves:
            # leaves resolve arithmetically from the entity quark; no
            # lookup entries needed
            self._segments.append(leaf)
            self._parents.append(entity)
        return entity

    @staticmethod
    def _split(path: str) -> list[str]:
        if not path:
            raise ValueError("empty attribute path")
        parts = path.split("/")
        if any(not p for p in parts):
            raise ValueError(f"empty segment in path {path!r}")
        return parts

    def get_quark(self, path: str, create_if_missing: bool = True) -> int:
        parts = self._split(path)
        if self.schema:
            return self._get_schema(parts, create_if_missing)
        cur = -1
        for seg in parts:
            nxt = self._lookup.get((cur, seg))
            if nxt is None:
                if not create_if_missing:
                    raise UnknownPath(path)
                nxt = self._add(cur, seg)
            cur = nxt
        return cur

    def _get_schema(self, parts: list[str], create: bool) -> int:
        branch = parts[0]
        if branch not in ROOT_BRANCHES:
            raise SchemaViolation(f"unknown root branch {branch!r}")
        branch_q = self._lookup[(-1, branch)]
        if len(parts) == 1:
            return branch_q
        if branch == "Bus":
            if len(parts) != 2 or parts[1] not in BUS_LEAVES:
                raise SchemaViolation(f"invalid Bus attribute {'/'.join(parts)!r}")
            return self._lookup[(branch_q, parts[1])]
        leaves = ENTITY_LEAVES[branch]
        if len(parts) > 3:
            raise SchemaViolation(f"path too deep: {'/'.join(parts)!r}")
        entity = self._lookup.get((branch_q, parts[1]))
        if entity is None:
            if not create:
                raise UnknownPath("/".join(parts))
            entity = self._add_entity(branch_q, parts[1], leaves)
        if len(parts) == 2:
            return entity
        try:
            offset = leaves.index(parts[2])
        except ValueError:
            raise SchemaViolation(
                f"{parts[2]!r} is not an attribute of {branch} entities"
            ) from None
        return entity + 1 + offset

    def path_of(self, quark: int) -> str:
        if quark < 0 or quark >= len(self._segments):
            raise UnknownPath(str(quark))
        parts = []
        q = quark
        while q >= 0:
            parts.append(self._segments[q])
            q = self._parents[q]
        return "/".join(reversed(parts))

    def paths(self) -> list[str]:
        """All paths in quark order (parents precede children)."""
        return list(self.iter_paths())

    def iter_paths(self):
        """Stream paths in quark order without materializing the table;
        trees reach hundreds of thousands of entries."""
        for quark in range(len(self._segments)):
            yield self.path_of(quark)


def _same(a: StateValue, b: StateValue) -> bool:
    return type(a) is type(b) and a == b


class StateSystem:
    """Time-ordered modification front-end over the interval history.

    `history` may be None to run the automaton without persisting anything
    (used when downstream consumers only need the in-flight bookkeeping).
    """

    def __init__(
        self,
        history: HistoryWriter | None,
        tree: AttributeTree | None = None,
        tree_start: int = 0,
    ):
        self.tree = tree if tree is not None else AttributeTree()
        self.history = history
        self._open: dict[int, tuple[int, StateValue]] = {}
        self._now = history.tree_start if history is not None else tree_start
        self._closed = False

    @property
    def now(self) -> int:
        return self._now

    def quark(self, path: str, create_if_missing: bool = True) -> int:
        return self.tree.get_quark(path, create_if_missing)

    def current(self, quark: int) -> StateValue:
        state = self._open.get(quark)
        return state[1] if state is not None else None

    def _emit(self, quark: int, start: int, end: int, value: StateValue) -> None:
        if self.history is not None:
            self.history.insert(quark, start, end, value)

    def modify(self, t: int, quark: int, value: StateValue) -> None:
        if self._closed:
            raise TimeRegression("state system already closed")
        if t < self._now:
            raise TimeRegression(f"t={t} before current build time {self._now}")
        cur = self._open.get(quark)
        if cur is not None and _same(value, cur[1]):
            return
        self._now = t
        if cur is None:
            if value is not None:
                self._open[quark] = (t, value)
            return
        since, old = cur
        # same-timestamp rewrite: earlier value survives as a zero-length marker
        self._emit(quark, since, since if t == since else t, old)
        if value is None:
            del self._open[quark]
        else:
            self._open[quark] = (t, value)

    def close_all(self, t_end: int) -> None:
        """Materialize open states as intervals ending at t_end. Idempotent."""
        if self._closed:
            return
        if t_end < self._now:
            raise TimeRegression(f"t_end={t_end} before current build time {self._now}")
        for quark in sorted(self._open):
            since, value = self._open[quark]
            self._emit(quark, since, t_end, value)
        self._open.clear()
        if self.history is not None:
            self.history.set_path_table(self.tree.iter_paths(), count=len(self.tree))
            self.history.close(t_end)
        self._closed = True
