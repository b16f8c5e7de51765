"""Per-router content store with two-partition LFRU replacement.

New items land in a small unprivileged partition (20% of the slots by
default) that evicts the least-frequently-used entry, oldest first on ties.
An item hit while unprivileged is promoted to the privileged partition,
which is plain LRU; its victim is demoted back to the unprivileged side.

Plain segments and coded symbols share the slots, one slot each.  A coded
symbol is kept only if it is innovative against the coded symbols of the
same content already in the store.
"""

from __future__ import annotations

import heapq
import itertools
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Hashable, Iterable

from .coding import CodedSymbol, Decoder
from .gf import GF

__all__ = ["StoredItem", "LookupResult", "ContentStore", "cs_lookup", "cs_insert",
           "cs_contains_encoded"]


@dataclass(eq=False)
class StoredItem:
    content: Hashable
    segment: int | None = None            # plain segment id
    symbol: CodedSymbol | None = None     # coded payload
    hit_count: int = 0
    last_access: int = 0
    key: tuple = ()
    _token: int = field(default=-1, repr=False)

    @property
    def kind(self) -> str:
        return "coded" if self.symbol is not None else "plain"

    @classmethod
    def plain(cls, content, segment: int, now: int = 0, hit_count: int = 0) -> "StoredItem":
        return cls(content, segment=segment, hit_count=hit_count, last_access=now)

    @classmethod
    def coded(cls, symbol: CodedSymbol, now: int = 0, hit_count: int = 0) -> "StoredItem":
        return cls(symbol.content, symbol=symbol, hit_count=hit_count, last_access=now)


@dataclass(frozen=True)
class LookupResult:
    plain: frozenset[int]
    coded: tuple[CodedSymbol, ...]
    missing: frozenset[int]


class ContentStore:
    def __init__(self, capacity_segments: int, unprivileged_fraction: float = 0.2,
                 field: GF | None = None):
        if capacity_segments < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity_segments)
        self.unpriv_capacity = min(self.capacity, int(round(unprivileged_fraction * self.capacity)))
        self.priv_capacity = self.capacity - self.unpriv_capacity
        self.field = field
        self._unpriv: dict[tuple, StoredItem] = {}
        self._heap: list[tuple] = []
        self._priv: OrderedDict[tuple, StoredItem] = OrderedDict()
        self._coded: dict[Hashable, list[tuple]] = {}
        self._bases: dict[Hashable, Decoder] = {}
        self._seq = itertools.count()
        self._tokens = itertools.count()
        self.evictions = 0

    @classmethod
    def from_bytes(cls, cache_bytes: float, segment_bytes: float, **kw) -> "ContentStore":
        return cls(int(cache_bytes // segment_bytes), **kw)

    # -- inspection ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._unpriv) + len(self._priv)

    def __contains__(self, key) -> bool:
        return key in self._unpriv or key in self._priv

    def _get(self, key) -> StoredItem | None:
        return self._unpriv.get(key) or self._priv.get(key)

    def has_plain(self, content, segment: int) -> bool:
        return (content, "p", segment) in self

    def plain_segments(self, content, K: int) -> set[int]:
        return {s for s in range(K) if (content, "p", s) in self}

    def coded_symbols(self, content) -> list[CodedSymbol]:
        return [self._get(k).symbol for k in self._coded.get(content, ())]

    def contains_encoded(self, content) -> bool:
        return bool(self._coded.get(content))

    def partition_of(self, key) -> str | None:
        if key in self._unpriv:
            return "unprivileged"
        if key in self._priv:
            return "privileged"
        return None

    def snapshot(self) -> tuple:
        """Hashable view of the full state, for determinism checks."""
        def view(it: StoredItem):
            sym = it.symbol.vector if it.symbol is not None else None
            return (it.key, it.hit_count, it.last_access, sym)
        return (tuple(sorted(view(i) for i in self._unpriv.values())),
                tuple(view(i) for i in self._priv.values()))

    # -- internals -----------------------------------------------------------

    def _push_unpriv(self, item: StoredItem) -> None:
        item._token = next(self._tokens)
        self._unpriv[item.key] = item
        heapq.heappush(self._heap, (item.hit_count, item.last_access, item._token, item.key))

    def _pop_lfu(self) -> StoredItem:
        while True:
            _, _, token, key = heapq.heappop(self._heap)
            it = self._unpriv.get(key)
            if it is not None and it._token == token:
                del self._unpriv[key]
                return it

    def _forget(self, item: StoredItem) -> None:
        if item.symbol is not None:
            keys = self._coded[item.content]
            keys.remove(item.key)
            if not keys:
                del self._coded[item.content]
            self._bases.pop(item.content, None)

    def _basis(self, content, K: int) -> Decoder:
        dec = self._bases.get(content)
        if dec is None:
            dec = Decoder(K, self.field)
            for s in self.coded_symbols(content):
                dec.add(s)
            self._bases[content] = dec
        return dec

    def _promote(self, item: StoredItem) -> None:
        del self._unpriv[item.key]
        if len(self._priv) >= self.priv_capacity:
            _, victim = self._priv.popitem(last=False)
            self._push_unpriv(victim)
        self._priv[item.key] = item

    def _touch(self, item: StoredItem, now: int) -> None:
        item.hit_count += 1
        item.last_access = max(item.last_access, now)
        if item.key in self._priv:
            self._priv.move_to_end(item.key)
        elif self.priv_capacity > 0:
            self._promote(item)
        else:
            # no privileged side: just refresh the LFU ordering
            self._push_unpriv(item)

    # -- operations ----------------------------------------------------------

    def insert(self, item: StoredItem, now: int | None = None) -> list[StoredItem]:
        """Store ``item`` and return whatever got evicted to make room."""
        if now is not None:
            item.last_access = max(item.last_access, now)
        if self.capacity == 0:
            return []
        if item.symbol is not None:
            dec = self._basis(item.content, item.symbol.K)
            if not dec.add(item.symbol):
                return []
            item.key = (item.content, "c", next(self._seq))
            self._coded.setdefault(item.content, []).append(item.key)
        else:
            item.key = (item.content, "p", item.segment)
            if item.key in self:
                return []      # already held; a copy passing through is not a hit
        evicted = []
        if self.unpriv_capacity == 0:
            if len(self._priv) >= self.priv_capacity:
                _, victim = self._priv.popitem(last=False)
                evicted.append(victim)
            self._priv[item.key] = item
        else:
            if len(self._unpriv) >= self.unpriv_capacity:
                evicted.append(self._pop_lfu())
            self._push_unpriv(item)
        for v in evicted:
            self._forget(v)
        self.evictions += len(evicted)
        if len(self._heap) > 4 * max(len(self._unpriv), 16):
            self._heap = [(i.hit_count, i.last_access, i._token, i.key) for i in self._unpriv.values()]
            heapq.heapify(self._heap)
        return evicted

    def lookup(self, content, wanted: Iterable[int] | int | None, K: int,
               now: int = 0) -> LookupResult:
        """Plain hits, coded symbols whose support lies inside the wanted
        set, and what is still missing.  Returned items count as hits."""
        if wanted is None:
            want = frozenset(range(K))
        elif isinstance(wanted, int):
            want = frozenset((wanted,))
        else:
            want = frozenset(wanted)
        plain = []
        for s in sorted(want):
            it = self._get((content, "p", s))
            if it is not None:
                plain.append(it)
        coded = []
        for key in list(self._coded.get(content, ())):
            it = self._get(key)
            if it.symbol.support <= want:
                coded.append(it)
        for it in plain + coded:
            self._touch(it, now)
        hits = frozenset(it.segment for it in plain)
        return LookupResult(hits, tuple(it.symbol for it in coded), want - hits)

    def check(self) -> None:
        """Assert the structural invariants; used by tests."""
        assert len(self._unpriv) <= self.unpriv_capacity or self.priv_capacity == 0
        assert len(self._priv) <= max(self.priv_capacity, 0)
        assert len(self) <= self.capacity
        assert not (set(self._unpriv) & set(self._priv))
        for content, keys in self._coded.items():
            syms = [self._get(k).symbol for k in keys]
            dec = Decoder(syms[0].K, self.field)
            assert all(dec.add(s) for s in syms)


def cs_lookup(store: ContentStore, content, wanted, K: int, now: int = 0) -> LookupResult:
    return store.lookup(content, wanted, K, now)


def cs_insert(store: ContentStore, item: StoredItem, now: int | None = None) -> list[StoredItem]:
    return store.insert(item, now)


def cs_contains_encoded(store: ContentStore, content) -> bool:
    return store.contains_encoded(content)
