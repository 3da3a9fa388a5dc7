"""Inset flow monoid: Bot/Top sentinels and exact key sets over a finite atom grid."""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Iterator

from .errors import ConfigError, ContractViolation, InputError

NEG_INF = float("-inf")
POS_INF = float("inf")

# A key is a finite int or one of the two infinity sentinels.
Key = Any


def is_key(value: Any) -> bool:
    """Return True if value is a finite int key or an infinity sentinel."""
    if isinstance(value, bool):
        return False
    if isinstance(value, int):
        return True
    return value == NEG_INF or value == POS_INF


def parse_key(raw: Any) -> Key:
    """Decode a JSON key: an integer, "-inf", or "inf"."""
    if raw == "-inf":
        return NEG_INF
    if raw == "inf":
        return POS_INF
    if isinstance(raw, bool) or not isinstance(raw, int):
        raise InputError(f"not a key: {raw!r}")
    return raw


def key_to_json(key: Key) -> Any:
    """Encode a key as a JSON value."""
    if key == NEG_INF:
        return "-inf"
    if key == POS_INF:
        return "inf"
    return key


def format_key(key: Key) -> str:
    """Render a key for terminal output."""
    if key == NEG_INF:
        return "-inf"
    if key == POS_INF:
        return "inf"
    return str(key)


@dataclass(frozen=True)
class AtomUniverse:
    """Partition of (-inf, inf] into point atoms at grid keys and open gaps between them.

    For f finite endpoints there are 2f+1 atoms: gap, point, gap, ..., point,
    final gap. The final gap is closed at inf so that inf lies in an atom;
    -inf lies in no atom.
    """

    finite_endpoints: tuple[int, ...]

    def __post_init__(self) -> None:
        eps = self.finite_endpoints
        if any(isinstance(e, bool) or not isinstance(e, int) for e in eps):
            raise InputError(f"grid endpoints must be finite ints: {eps!r}")
        if any(a >= b for a, b in zip(eps, eps[1:])):
            raise InputError(f"grid endpoints must strictly increase: {eps!r}")

    @classmethod
    def from_endpoints(cls, endpoints: Any) -> "AtomUniverse":
        """Build a universe from any iterable of keys; infinities are implicit."""
        finite = sorted({parse_key(e) for e in endpoints} - {NEG_INF, POS_INF})
        return cls(tuple(finite))

    @property
    def atom_count(self) -> int:
        return 2 * len(self.finite_endpoints) + 1

    @property
    def full_bits(self) -> int:
        return (1 << self.atom_count) - 1

    def atom_bounds(self, i: int) -> tuple[Key, Key, bool, bool]:
        """Bounds (lo, hi, lo_open, hi_open) of atom i; points are [e, e]."""
        eps = self.finite_endpoints
        f = len(eps)
        if not 0 <= i < self.atom_count:
            raise ContractViolation(f"atom index {i} out of range")
        if i % 2 == 1:
            e = eps[i // 2]
            return (e, e, False, False)
        j = i // 2
        lo = eps[j - 1] if j >= 1 else NEG_INF
        if j < f:
            return (lo, eps[j], True, True)
        return (lo, POS_INF, True, False)

    def atom_of_key(self, key: Key) -> int | None:
        """Atom index containing key; None for -inf, which lies in no atom."""
        if key == NEG_INF:
            return None
        if key == POS_INF:
            return self.atom_count - 1
        eps = self.finite_endpoints
        idx = bisect_left(eps, key)
        if idx < len(eps) and eps[idx] == key:
            return 2 * idx + 1
        return 2 * idx

    def format_bits(self, bits: int) -> str:
        """Render an atom bitset as interval notation."""
        pieces = []
        for lo, hi, lo_open, hi_open in bits_to_intervals(self, bits):
            if lo == hi:
                pieces.append("{%s}" % format_key(lo))
            else:
                lb = "(" if lo_open else "["
                rb = ")" if hi_open else "]"
                pieces.append(f"{lb}{format_key(lo)},{format_key(hi)}{rb}")
        return ", ".join(pieces) if pieces else "{}"


@dataclass(frozen=True)
class FlowValue:
    """Flow monoid element: the Bot unit, the Top absorber, or an exact atom set."""

    universe: AtomUniverse
    tag: str
    bits: int = 0

    def __post_init__(self) -> None:
        if self.tag not in ("bot", "top", "set"):
            raise InputError(f"bad flow value tag: {self.tag!r}")
        if self.tag != "set" and self.bits != 0:
            raise InputError("sentinel flow values carry no bits")
        if not 0 <= self.bits <= self.universe.full_bits:
            raise InputError("atom bits out of range for the universe")

    @classmethod
    def bot(cls, universe: AtomUniverse) -> "FlowValue":
        return _sentinel(universe, "bot")

    @classmethod
    def top(cls, universe: AtomUniverse) -> "FlowValue":
        return _sentinel(universe, "top")

    @classmethod
    def from_bits(cls, universe: AtomUniverse, bits: int) -> "FlowValue":
        return cls(universe, "set", bits)

    @property
    def is_bot(self) -> bool:
        return self.tag == "bot"

    @property
    def is_top(self) -> bool:
        return self.tag == "top"

    @property
    def is_set(self) -> bool:
        return self.tag == "set"

    def contains_key(self, key: Key) -> bool:
        """True if the value admits key; -inf only lives in the full set."""
        if self.is_top:
            return True
        if self.is_bot:
            return False
        if key == NEG_INF:
            return self.bits == self.universe.full_bits
        atom = self.universe.atom_of_key(key)
        return bool(self.bits >> atom & 1)

    def __str__(self) -> str:
        if self.is_bot:
            return "bot"
        if self.is_top:
            return "top"
        return self.universe.format_bits(self.bits)


@lru_cache(maxsize=512)
def _sentinel(universe: AtomUniverse, tag: str) -> FlowValue:
    # Bot and Top are interned; they appear on almost every hot path
    return FlowValue(universe, tag)


def _check_same_universe(m: FlowValue, n: FlowValue) -> None:
    if m.universe != n.universe:
        raise ConfigError("flow values from different atom universes")


def oplus(m: FlowValue, n: FlowValue) -> FlowValue:
    """Monoid sum: Bot is the unit; any other combination collapses to Top."""
    _check_same_universe(m, n)
    if n.is_bot:
        return m
    if m.is_bot:
        return n
    return FlowValue.top(m.universe)


def natural_leq(m: FlowValue, n: FlowValue) -> bool:
    """Natural order of the monoid: m <= n iff some o gives m + o = n."""
    _check_same_universe(m, n)
    # closed form: the only ascents are Bot <= anything and anything <= Top
    return m.is_bot or m == n or n.is_top


def meet_interval(m: FlowValue, interval_bits: int) -> FlowValue:
    """Intersect with an atom bitset; Bot and Top pass through unchanged."""
    if m.is_bot or m.is_top:
        return m
    return FlowValue.from_bits(m.universe, m.bits & interval_bits)


def chain_sup(values: list[FlowValue]) -> FlowValue:
    """Join of an ascending chain, which on this lattice is its last element."""
    if not values:
        raise ContractViolation("chain_sup needs a nonempty chain")
    for i, (a, b) in enumerate(zip(values, values[1:])):
        if not natural_leq(a, b):
            raise ContractViolation(f"chain not ascending at positions {i},{i + 1}: {a} !<= {b}")
    return values[-1]


def all_values(universe: AtomUniverse) -> Iterator[FlowValue]:
    """Every element of the finite lattice: Bot, Top, and all atom sets."""
    yield FlowValue.bot(universe)
    yield FlowValue.top(universe)
    for bits in range(universe.full_bits + 1):
        yield FlowValue.from_bits(universe, bits)


def _lower_covers(outer: tuple[Key, bool], inner: tuple[Key, bool]) -> bool:
    # outer lower bound admits everything the inner lower bound admits
    ov, oo = outer
    iv, io = inner
    return ov < iv or (ov == iv and (not oo or io))


def _upper_covers(outer: tuple[Key, bool], inner: tuple[Key, bool]) -> bool:
    ov, oo = outer
    iv, io = inner
    return ov > iv or (ov == iv and (not oo or io))


def _upper_below_lower(upper: tuple[Key, bool], lower: tuple[Key, bool]) -> bool:
    # ranges ending at `upper` and starting at `lower` share no point
    uv, uo = upper
    lv, lo = lower
    return uv < lv or (uv == lv and (uo or lo))


def interval_bits(
    universe: AtomUniverse, lo: Key, hi: Key, lo_open: bool, hi_open: bool
) -> int:
    """Atom bitset of one interval; endpoints must align with the grid.

    Openness at the infinities is not meaningful on this partition and is
    normalized away, so [-inf, 4) and (-inf, 4) denote the same bitset.
    """
    if not (is_key(lo) and is_key(hi)):
        raise InputError(f"interval bounds must be keys: {lo!r}, {hi!r}")
    if lo == NEG_INF:
        lo_open = True
    if hi == POS_INF:
        hi_open = False
    if lo > hi:
        raise InputError(f"empty-ordered interval: {format_key(lo)} > {format_key(hi)}")
    bits = 0
    for i in range(universe.atom_count):
        a_lo, a_hi, a_lo_open, a_hi_open = universe.atom_bounds(i)
        if _lower_covers((lo, lo_open), (a_lo, a_lo_open)) and _upper_covers(
            (hi, hi_open), (a_hi, a_hi_open)
        ):
            bits |= 1 << i
            continue
        disjoint = _upper_below_lower((hi, hi_open), (a_lo, a_lo_open)) or _upper_below_lower(
            (a_hi, a_hi_open), (lo, lo_open)
        )
        if not disjoint:
            raise InputError(
                f"interval endpoint off the grid: "
                f"{format_key(lo)}..{format_key(hi)} cuts atom {universe.format_bits(1 << i)}"
            )
    return bits


def bits_to_intervals(
    universe: AtomUniverse, bits: int
) -> list[tuple[Key, Key, bool, bool]]:
    """Decompose a bitset into maximal intervals of consecutive atoms."""
    runs: list[tuple[int, int]] = []
    i = 0
    n = universe.atom_count
    while i < n:
        if bits >> i & 1:
            j = i
            while j + 1 < n and bits >> (j + 1) & 1:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    out = []
    for i, j in runs:
        lo, _, lo_open, _ = universe.atom_bounds(i)
        _, hi, _, hi_open = universe.atom_bounds(j)
        out.append((lo, hi, lo_open, hi_open))
    return out


def parse_interval(universe: AtomUniverse, raw: Any) -> int:
    """Decode one JSON interval [lo, hi, loOpen, hiOpen] to an atom bitset."""
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise InputError(f"interval must be [lo, hi, loOpen, hiOpen]: {raw!r}")
    lo, hi = parse_key(raw[0]), parse_key(raw[1])
    if not (isinstance(raw[2], bool) and isinstance(raw[3], bool)):
        raise InputError(f"interval openness flags must be booleans: {raw!r}")
    return interval_bits(universe, lo, hi, raw[2], raw[3])


def parse_interval_set(universe: AtomUniverse, raw: Any) -> int:
    """Decode a JSON list of intervals to the union bitset."""
    if not isinstance(raw, list):
        raise InputError(f"interval set must be a list: {raw!r}")
    bits = 0
    for item in raw:
        bits |= parse_interval(universe, item)
    return bits


def value_from_json(universe: AtomUniverse, raw: Any) -> FlowValue:
    """Decode a JSON flow value: "bot", "top", or {"intervals": [...]}."""
    if raw == "bot":
        return FlowValue.bot(universe)
    if raw == "top":
        return FlowValue.top(universe)
    if isinstance(raw, dict) and set(raw) == {"intervals"}:
        return FlowValue.from_bits(universe, parse_interval_set(universe, raw["intervals"]))
    raise InputError(f"bad flow value: {raw!r}")


def value_to_json(m: FlowValue) -> Any:
    """Encode a flow value in the JSON interval form."""
    if m.is_bot:
        return "bot"
    if m.is_top:
        return "top"
    ivs = [
        [key_to_json(lo), key_to_json(hi), lo_open, hi_open]
        for lo, hi, lo_open, hi_open in bits_to_intervals(m.universe, m.bits)
    ]
    return {"intervals": ivs}
