"""Linearizability ghost state: upsert histories, per-thread status registries,
validity, ghost multiplication, and the upward-closure membership test."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable

from .errors import ContractViolation, InconclusiveError, InputError, InternalInvariantError
from .flowgraph import StarFailure

TOMBSTONE = None

History = tuple[tuple[Any, Any], ...]
ThreadId = Any

OBL = "OBL"
FUL = "FUL"
SLT = "SLT"


def m_of(h: History, key: Any) -> Any:
    """Newest upserted value for key; tombstone when none (events newest first)."""
    for k, v in h:
        if k == key:
            return v
    return TOMBSTONE


def latest(h: History, key: Any, value: Any) -> int:
    """Timestamp of the newest matching event, counted from the oldest end;
    0 stands for the tombstone baseline and -1 for no match at all."""
    for i, event in enumerate(h):
        if event == (key, value):
            return len(h) - i
    return 0 if value == TOMBSTONE else -1


def is_suffix(older: History, h: History) -> bool:
    return len(older) <= len(h) and h[len(h) - len(older):] == older


@dataclass(frozen=True)
class Status:
    """One thread's registry entry: tag plus the (snapshot, key, value) payload."""

    tag: str
    snapshot: History
    key: Any
    value: Any

    def __post_init__(self) -> None:
        if self.tag not in (OBL, FUL, SLT):
            raise InputError(f"bad status tag: {self.tag!r}")

    def payload(self) -> tuple[History, Any, Any]:
        return (self.snapshot, self.key, self.value)


def valid_status(h: History, s: Status) -> bool:
    """Settled entries are always valid; others need a snapshot suffix and the
    obligation tag to track whether the matching event is still missing."""
    if s.tag == SLT:
        return True
    if not is_suffix(s.snapshot, h):
        return False
    return (s.tag == OBL) == (latest(h, s.key, s.value) < len(s.snapshot))


@dataclass(frozen=True)
class RegistryState:
    """A shared history with a finite thread registry; entries sorted by id."""

    history: History
    entries: tuple[tuple[ThreadId, Status], ...]

    def __post_init__(self) -> None:
        ids = [str(t) for t, _ in self.entries]
        if ids != sorted(set(ids)):
            raise InputError("registry entries must be sorted and distinct")

    @classmethod
    def of(cls, history: Iterable, registry: dict[ThreadId, Status] | None = None) -> "RegistryState":
        registry = registry or {}
        return cls(
            tuple(tuple(e) for e in history),
            tuple(sorted(registry.items(), key=lambda kv: str(kv[0]))),
        )

    @cached_property
    def registry(self) -> dict[ThreadId, Status]:
        return dict(self.entries)

    def is_valid(self) -> bool:
        return all(valid_status(self.history, s) for _, s in self.entries)


def _flip(entries: Iterable[tuple[ThreadId, Status]], key: Any, value: Any):
    """Reestablish validity after the event (key, value): matching obligations settle."""
    out = []
    for tid, s in entries:
        if s.tag == OBL and s.key == key and s.value == value:
            s = Status(FUL, s.snapshot, s.key, s.value)
        out.append((tid, s))
    return tuple(out)


def star(a: RegistryState, b: RegistryState) -> RegistryState | StarFailure:
    """Composition: equal histories, registries merged with settled entries as
    per-payload units."""
    if a.history != b.history:
        return StarFailure("history-mismatch")
    merged = dict(a.entries)
    for tid, s in b.entries:
        if tid not in merged:
            merged[tid] = s
            continue
        other = merged[tid]
        if s.tag == SLT and s.payload() == other.payload():
            continue
        if other.tag == SLT and s.payload() == other.payload():
            merged[tid] = s
            continue
        return StarFailure("registry-overlap", tid)
    return RegistryState.of(a.history, merged)


def star_defined(a: RegistryState, b: RegistryState) -> bool:
    return isinstance(star(a, b), RegistryState)


def ghost_mult(a: RegistryState, b: RegistryState) -> RegistryState | None:
    """Merge across at most one event of history extension; the shorter side's
    matching obligations flip to fulfilled. None when undefined."""
    if a.history == b.history:
        long_side, short_entries = a, b.entries
    elif len(a.history) == len(b.history) + 1 and is_suffix(b.history, a.history):
        k, v = a.history[0]
        long_side, short_entries = a, _flip(b.entries, k, v)
    elif len(b.history) == len(a.history) + 1 and is_suffix(a.history, b.history):
        k, v = b.history[0]
        long_side, short_entries = b, _flip(a.entries, k, v)
    else:
        return None
    merged = dict(long_side.entries)
    for tid, s in short_entries:
        if tid in merged:
            return None
        merged[tid] = s
    return RegistryState.of(long_side.history, merged)


def transported(s: RegistryState, history: History) -> RegistryState | None:
    """The curried ghost transformer: s carried to a history at most one event
    ahead, with the induced flips; None when out of reach."""
    if s.history == history:
        return s
    if len(history) == len(s.history) + 1 and is_suffix(s.history, history):
        k, v = history[0]
        return RegistryState.of(history, dict(_flip(s.entries, k, v)))
    return None


def unique_decompose(
    c: RegistryState, dom1: Iterable[ThreadId], dom2: Iterable[ThreadId]
) -> tuple[RegistryState, RegistryState]:
    """Split the registry along a thread-id partition; the parts star back to c."""
    d1, d2 = set(dom1), set(dom2)
    if d1 & d2 or d1 | d2 != set(c.registry):
        raise ContractViolation("thread ids must partition the registry")
    r1 = {t: s for t, s in c.entries if t in d1}
    r2 = {t: s for t, s in c.entries if t in d2}
    return RegistryState.of(c.history, r1), RegistryState.of(c.history, r2)


def core_update_upsert(a: RegistryState, key: Any, value: Any) -> RegistryState:
    """The core update of an upsert: prepend the event to a registry-free state."""
    if a.entries:
        raise ContractViolation("core update needs an empty registry")
    return RegistryState.of(((key, value),) + a.history)


def apply_upsert(s: RegistryState, key: Any, value: Any) -> RegistryState:
    """Full upsert semantics: extend the history and settle matching obligations."""
    return RegistryState.of(
        ((key, value),) + s.history, dict(_flip(s.entries, key, value))
    )


def witness_suffix(h: History, key: Any, value: Any) -> History | None:
    """Suffix of h headed by the newest matching event; empty for the tombstone
    baseline; None when the value was never current."""
    n = latest(h, key, value)
    if n < 0:
        return None
    return h[len(h) - n:]


def spawn_search(s: RegistryState, tid: ThreadId, key: Any, value: Any) -> RegistryState:
    """Register a fresh search thread: fulfilled when the value is current,
    an obligation otherwise."""
    if tid in s.registry:
        raise ContractViolation(f"thread id {tid!r} already registered")
    if m_of(s.history, key) == value:
        snapshot = witness_suffix(s.history, key, value)
        entry = Status(FUL, snapshot, key, value)
    else:
        entry = Status(OBL, s.history, key, value)
    if not valid_status(s.history, entry):
        raise InternalInvariantError("spawned entry is not valid")
    registry = dict(s.entries)
    registry[tid] = entry
    return RegistryState.of(s.history, registry)


# ---------------------------------------------------------------- upward closure


@dataclass(frozen=True)
class RegistryClosure:
    """States reachable from a base by search spawns and upsert ghost updates.

    Membership is decided directly against that shape: the candidate's history
    must extend the base's, carried entries must flip exactly as the extension
    dictates, and every fresh entry must be spawnable at some point along it.
    """

    base: RegistryState

    def contains(self, s: RegistryState) -> bool:
        base = self.base
        if not is_suffix(base.history, s.history):
            return False
        ext = s.history[: len(s.history) - len(base.history)]
        candidate = s.registry
        for tid, st in base.entries:
            if tid not in candidate:
                return False
            expected = st
            if st.tag == OBL and any(e == (st.key, st.value) for e in ext):
                expected = Status(FUL, st.snapshot, st.key, st.value)
            if candidate[tid] != expected:
                return False
        for tid, st in s.entries:
            if tid in base.registry:
                continue
            if not self._spawnable(st, ext):
                return False
        return True

    def _spawnable(self, st: Status, ext: History) -> bool:
        if st.tag == SLT:
            return False
        for applied in range(len(ext) + 1):
            h = ext[len(ext) - applied:] + self.base.history
            remaining = ext[: len(ext) - applied]
            if m_of(h, st.key) == st.value:
                if st.tag == FUL and st.snapshot == witness_suffix(h, st.key, st.value):
                    return True
            else:
                flips = any(e == (st.key, st.value) for e in remaining)
                tag = FUL if flips else OBL
                if st.tag == tag and st.snapshot == h:
                    return True
        return False

    def explore(
        self,
        events: Iterable[tuple[Any, Any]],
        tids: Iterable[ThreadId],
        depth: int,
        cap: int = 4096,
    ) -> list[RegistryState]:
        """Enumerate members reachable within a ghost-update budget."""
        events = sorted(events, key=repr)
        tids = sorted(tids, key=str)
        seen = {self.base}
        frontier = [self.base]
        order = [self.base]
        for _ in range(depth):
            nxt = []
            for state in frontier:
                steps = [apply_upsert(state, k, v) for k, v in events]
                for tid in tids:
                    if tid in state.registry:
                        continue
                    steps.extend(spawn_search(state, tid, k, v) for k, v in events)
                for out in steps:
                    if out not in seen:
                        seen.add(out)
                        order.append(out)
                        nxt.append(out)
                if len(seen) > cap:
                    raise InconclusiveError(
                        f"closure enumeration exceeded {cap} states"
                    )
            frontier = nxt
        return order


def closure_pred(state: RegistryState) -> RegistryClosure:
    """The upward closure of a state under search registration and upserts."""
    return RegistryClosure(state)


# ---------------------------------------------------------------- JSON


def _event_from_json(raw: Any) -> tuple[Any, Any]:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise InputError(f"bad history event: {raw!r}")
    return (raw[0], raw[1])


def state_from_json(raw: Any) -> RegistryState:
    """Decode {"history": [[k,v],...] newest first, "registry": {tid: entry}}."""
    if not isinstance(raw, dict) or "history" not in raw:
        raise InputError("registry state needs a history")
    history = tuple(_event_from_json(e) for e in raw["history"])
    registry: dict[ThreadId, Status] = {}
    for tid, entry in (raw.get("registry") or {}).items():
        if not isinstance(entry, dict) or "tag" not in entry:
            raise InputError(f"bad registry entry for {tid!r}")
        registry[tid] = Status(
            tag=entry["tag"],
            snapshot=tuple(_event_from_json(e) for e in entry.get("snapshot", [])),
            key=entry.get("key"),
            value=entry.get("value"),
        )
    return RegistryState.of(history, registry)


def state_to_json(s: RegistryState) -> dict[str, Any]:
    return {
        "history": [list(e) for e in s.history],
        "registry": {
            str(tid): {
                "tag": st.tag,
                "snapshot": [list(e) for e in st.snapshot],
                "key": st.key,
                "value": st.value,
            }
            for tid, st in s.entries
        },
    }
