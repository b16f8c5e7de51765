"""Interest/data handling for IP, CCN and coded CCN routers.

Segment ids on the wire (``i_type = x``, ``i_info``, ``d_info``) are
1-based so that ``i_type = 0`` can mean "the whole object"; everything
inside the node (cache keys, coding-vector positions, wanted sets) is
0-based.  A node never sends anything itself: every handler returns an
:class:`Actions` record that the event loop turns into transmissions.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .cache import ContentStore, StoredItem
from .coding import CodedSymbol, Decoder, MixedGeneration, encode_node
from .gf import GF, default_field

__all__ = [
    "APP_FACE", "MODES", "InterestPacket", "DataPacket", "PitEntry", "Pit", "Actions", "Node",
    "NothingLeft", "modify_interest", "serialize", "handle_interest", "coding_decision",
    "gateway_process", "pit_aggregate",
]

APP_FACE = -1          # the consumer side of a gateway
MODES = ("IP", "CCN", "CCCN")
_MASK64 = (1 << 64) - 1


class NothingLeft(ValueError):
    """Every wanted segment is already satisfied; nothing to forward."""


# --------------------------------------------------------------------------
# packets

@dataclass(frozen=True)
class InterestPacket:
    name: str
    i_type: int                       # 0 whole object, -1 segment set, x segment x (1-based)
    i_info: tuple[int, ...] = ()      # 1-based ids when i_type == -1
    hop_limit: int = 32
    nonce: int = 0

    def __post_init__(self):
        if self.i_type == -1 and not self.i_info:
            raise ValueError("i_type -1 needs a non-empty i_info")
        if self.i_type < -1:
            raise ValueError(f"bad i_type {self.i_type}")

    def wanted(self, K: int) -> frozenset[int]:
        if self.i_type == 0:
            return frozenset(range(K))
        if self.i_type == -1:
            return frozenset(s - 1 for s in self.i_info)
        return frozenset((self.i_type - 1,))

    @classmethod
    def for_segments(cls, name: str, wanted: Iterable[int], K: int, hop_limit: int = 32,
                     nonce: int = 0) -> "InterestPacket":
        w = sorted(set(wanted))
        if not w:
            raise NothingLeft(name)
        if len(w) == K:
            return cls(name, 0, (), hop_limit, nonce)
        if len(w) == 1:
            return cls(name, w[0] + 1, (), hop_limit, nonce)
        return cls(name, -1, tuple(s + 1 for s in w), hop_limit, nonce)

    def with_(self, **kw) -> "InterestPacket":
        d = dict(name=self.name, i_type=self.i_type, i_info=self.i_info,
                 hop_limit=self.hop_limit, nonce=self.nonce)
        d.update(kw)
        return InterestPacket(**d)


@dataclass(frozen=True, eq=False)
class DataPacket:
    name: str
    symbol: CodedSymbol
    accounting_size: int = 0
    tag: int | None = None           # answering nonce, used only by the IP baseline

    @property
    def d_type(self) -> int:
        return 0 if self.symbol.plain_segment is not None else -1

    @property
    def d_info(self) -> tuple[int, ...]:
        return tuple(sorted(s + 1 for s in self.symbol.support))

    @property
    def segment(self) -> int | None:
        return self.symbol.plain_segment


def modify_interest(pkt: InterestPacket, satisfied: Iterable[int], K: int) -> InterestPacket:
    """Drop the satisfied (0-based) segments from the wanted set."""
    want = pkt.wanted(K)
    rest = want - frozenset(satisfied)
    if not rest:
        raise NothingLeft(pkt.name)
    if rest == want:
        return pkt
    return InterestPacket.for_segments(pkt.name, rest, K, pkt.hop_limit, pkt.nonce)


def serialize(pkt) -> str:
    """One-line rendering in header order: version, packet length, hop
    limit, flags, header length, message type/length, name, then the
    optional type/info fields."""
    if isinstance(pkt, InterestPacket):
        tlv = f"I_Type={pkt.i_type}"
        if pkt.i_type == -1:
            tlv += " I_Info=" + ",".join(map(str, pkt.i_info))
        tlv += f" Nonce={pkt.nonce:#x}"
        mtype, hop, plen = "INTEREST", pkt.hop_limit, 0
    else:
        tlv = f"D_Type={pkt.d_type}"
        if pkt.d_type == -1:
            tlv += " D_Info=" + ",".join(map(str, pkt.d_info))
            tlv += " Vec=" + ",".join(f"{c:x}" for c in pkt.symbol.vector)
        mtype, hop, plen = "DATA", 0, pkt.accounting_size
    body = f"Name={pkt.name} {tlv}"
    return (f"ver=1 len={plen + 8 + len(body)} hop={hop} flags=0 hlen=8 "
            f"type={mtype} mlen={len(body)} {body}")


# --------------------------------------------------------------------------
# tables

@dataclass(eq=False)
class PitEntry:
    name: str
    wanted: frozenset[int]
    K: int
    created: int
    expiry: int
    faces: dict[int, set[int]] = field(default_factory=dict)
    got_plain: set[int] = field(default_factory=set)
    decoder: Decoder | None = None
    received: list = field(default_factory=list)
    key: tuple = ()

    @property
    def rank(self) -> int:
        return self.decoder.rank if self.decoder is not None else len(self.got_plain)

    def complete(self) -> bool:
        return self.rank >= len(self.wanted)

    def accepts(self, sym: CodedSymbol) -> bool:
        """Support inside the wanted set and innovative for this entry."""
        if not sym.support <= self.wanted:
            return False
        seg = sym.plain_segment
        if self.decoder is None:
            return seg is None or seg not in self.got_plain
        return self.decoder.is_innovative(sym.vector)

    def absorb(self, pkt: DataPacket, field_: GF) -> None:
        sym = pkt.symbol
        seg = sym.plain_segment
        if self.decoder is None and seg is None:
            self.decoder = Decoder(self.K, field_)
            for s in sorted(self.got_plain):
                self.decoder.add(CodedSymbol.plain(sym.content, self.K, s))
        if self.decoder is not None:
            self.decoder.add(CodedSymbol(sym.content, sym.vector))
        else:
            self.got_plain.add(seg)
        self.received.append(pkt)


class Pit:
    def __init__(self):
        self.entries: dict[tuple, PitEntry] = {}
        self.by_name: dict[str, list[PitEntry]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, key) -> PitEntry | None:
        return self.entries.get(key)

    def add(self, entry: PitEntry) -> None:
        self.entries[entry.key] = entry
        self.by_name.setdefault(entry.name, []).append(entry)

    def remove(self, entry: PitEntry) -> None:
        if self.entries.get(entry.key) is entry:
            del self.entries[entry.key]
        lst = self.by_name.get(entry.name)
        if lst is not None:
            lst.remove(entry)
            if not lst:
                del self.by_name[entry.name]

    def live(self, name: str, now: int) -> list[PitEntry]:
        """Entries for ``name`` in creation order; expired ones are purged."""
        lst = self.by_name.get(name)
        if not lst:
            return []
        for e in [e for e in lst if e.expiry < now]:
            self.remove(e)
        return list(self.by_name.get(name, ()))


@dataclass
class Actions:
    """Side effects of one handler call.

    ``data`` items are ``(face, packet, coded_here)``; ``coded_here``
    marks packets produced by a coding operation at this node, which pay
    the coding overhead on processing time.
    """
    data: list = field(default_factory=list)
    interests: list = field(default_factory=list)
    delivered: list = field(default_factory=list)     # (request key, segment, payload)
    completed: list = field(default_factory=list)     # (request id, request key)
    drops: Counter = field(default_factory=Counter)
    coded_ops: int = 0
    cache_hits: Counter = field(default_factory=Counter)
    pit: str | None = None

    def extend(self, other: "Actions") -> "Actions":
        self.data += other.data
        self.interests += other.interests
        self.delivered += other.delivered
        self.completed += other.completed
        self.drops.update(other.drops)
        self.coded_ops += other.coded_ops
        self.cache_hits.update(other.cache_hits)
        return self


@dataclass(eq=False)
class GatewayRequest:
    key: Hashable
    name: str
    K: int
    started: int
    decoder: Decoder
    req_ids: list = field(default_factory=list)
    delivered: set = field(default_factory=set)
    last_progress: int = 0
    last_check: int = 0
    retransmissions: int = 0
    nonces: list = field(default_factory=list)
    abandoned: bool = False


# --------------------------------------------------------------------------
# the router

class Node:
    """One cache router (optionally a publisher and/or gateway).

    ``fib`` maps a content name to its ordered list of next-hop faces.
    ``origin`` says whether this node publishes a name; ``payload(name,
    seg)`` returns the publisher's segment payload (or None when payloads
    are not modelled).
    """

    def __init__(self, node_id: int, mode: str, K: int, fib: Callable[[str], Sequence[int]],
                 cs: ContentStore | None = None, origin: Callable[[str], bool] = lambda n: False,
                 payload: Callable[[str, int], np.ndarray | None] = lambda n, s: None,
                 field_: GF | None = None, rng: np.random.Generator | None = None,
                 max_paths: int = 1, hop_limit: int = 32, pit_lifetime: int = 10**9,
                 segment_size: int = 0):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        self.id = node_id
        self.mode = mode
        self.K = K
        self.fib = fib
        self.cs = None if mode == "IP" else cs
        self.origin = origin
        self.payload = payload
        self.field = field_ or default_field()
        self.rng = rng if rng is not None else np.random.default_rng(node_id)
        self.max_paths = max_paths if mode == "CCCN" else 1
        self.hop_limit = hop_limit
        self.pit_lifetime = pit_lifetime
        self.segment_size = segment_size
        self.pit = Pit()
        self.seen_nonces: set[int] = set()
        self.requests: dict[Hashable, GatewayRequest] = {}
        self._by_nonce: dict[int, Hashable] = {}      # IP: interest nonce -> request
        self._nonce = itertools.count(1)
        self.srtt: float | None = None

    # -- helpers -------------------------------------------------------------

    def new_nonce(self) -> int:
        return ((self.id + 1) << 40 | next(self._nonce)) & _MASK64

    def _data(self, name: str, sym: CodedSymbol, tag=None) -> DataPacket:
        return DataPacket(name, sym, self.segment_size, tag)

    def _origin_symbol(self, name: str, seg: int) -> CodedSymbol:
        return CodedSymbol.plain(name, self.K, seg, self.payload(name, seg))

    def _reply(self, acts: Actions, face: int, pkt: DataPacket, now: int, coded_here=False):
        if face == APP_FACE:
            acts.extend(self.gateway_process(pkt, now))
        else:
            acts.data.append((face, pkt, coded_here))

    # -- interests -----------------------------------------------------------

    def handle_interest(self, pkt: InterestPacket, face: int, now: int) -> Actions:
        acts = Actions()
        if pkt.hop_limit <= 0:
            acts.drops["hop_limit"] += 1
            return acts
        if pkt.nonce in self.seen_nonces:
            acts.drops["duplicate_nonce"] += 1
            return acts
        self.seen_nonces.add(pkt.nonce)
        K = self.K
        want = pkt.wanted(K)
        tag = pkt.nonce if self.mode == "IP" else None

        if self.origin(pkt.name):
            for s in sorted(want):
                self._reply(acts, face, self._data(pkt.name, self._origin_symbol(pkt.name, s), tag), now)
            acts.cache_hits["origin"] += len(want)
            return acts

        missing = want
        if self.cs is not None:
            hit = self.cs.lookup(pkt.name, want, K, now)
            for s in sorted(hit.plain):
                sym = CodedSymbol.plain(pkt.name, K, s, self.payload(pkt.name, s))
                self._reply(acts, face, self._data(pkt.name, sym), now)
            missing = want - hit.plain
            useful = [c for c in hit.coded if c.support <= missing]
            for c in useful:
                self._reply(acts, face, self._data(pkt.name, c), now)
            acts.cache_hits["plain"] += len(hit.plain)
            acts.cache_hits["coded"] += len(useful)
            if not missing:
                return acts
            # with only coded hits the interest travels on unmodified
        fwd = modify_interest(pkt, want - missing, K)
        self._forward(fwd, face, now, acts)
        return acts

    def _forward(self, pkt: InterestPacket, face: int, now: int, acts: Actions) -> None:
        K = self.K
        want = pkt.wanted(K)
        key = (pkt.name, pkt.nonce) if self.mode == "IP" else (pkt.name, want)
        entry = self.pit.get(key)
        if entry is not None and entry.expiry < now:
            self.pit.remove(entry)
            entry = None
        if entry is not None:
            known = entry.faces.get(face)
            if known is None:
                entry.faces[face] = {pkt.nonce}
                acts.pit = "Aggregated"
                # a late joiner still needs what already went past
                for d in entry.received:
                    self._reply(acts, face, d, now)
                return
            known.add(pkt.nonce)
            acts.pit = "Retransmission"
            for d in entry.received:
                self._reply(acts, face, d, now)
            entry.expiry = now + self.pit_lifetime
        else:
            entry = PitEntry(pkt.name, want, K, now, now + self.pit_lifetime,
                             {face: {pkt.nonce}}, key=key)
            self.pit.add(entry)
            acts.pit = "NewEntry"
        hops = list(self.fib(pkt.name))[: self.max_paths]
        if not hops:
            acts.drops["no_route"] += 1
            return
        out = pkt.with_(hop_limit=pkt.hop_limit - 1)
        if len(hops) == 1 or len(want) == 1:
            acts.interests.append((hops[0], out))
            return
        parts = [sorted(want)[i::len(hops)] for i in range(len(hops))]
        for i, (hop, part) in enumerate(zip(hops, parts)):
            if part:
                sub_nonce = (pkt.nonce * 1_000_003 + i + 1) & _MASK64
                acts.interests.append((hop, InterestPacket.for_segments(
                    pkt.name, part, K, pkt.hop_limit - 1, sub_nonce)))

    # -- data ----------------------------------------------------------------

    def coding_decision(self, arrived: Sequence[tuple[int, DataPacket]], now: int) -> Actions:
        """Handle every data packet that reached this node in one tick."""
        acts = Actions()
        groups: dict[str, list[tuple[int, DataPacket]]] = {}
        for face, pkt in arrived:
            groups.setdefault(pkt.name, []).append((face, pkt))
        for name in sorted(groups):
            self._data_group(name, groups[name], now, acts)
        return acts

    def _store(self, pkt: DataPacket, now: int) -> None:
        if self.cs is None:
            return
        seg = pkt.segment
        if seg is not None:
            self.cs.insert(StoredItem.plain(pkt.name, seg), now)
        elif self.mode == "CCCN":
            self.cs.insert(StoredItem.coded(pkt.symbol), now)

    def _data_group(self, name: str, group, now: int, acts: Actions) -> None:
        for _, pkt in group:
            self._store(pkt, now)
        if self.mode == "IP":
            for face, pkt in group:
                entry = self.pit.get((name, pkt.tag))
                if entry is None or entry.expiry < now or not entry.accepts(pkt.symbol):
                    acts.drops["unsolicited"] += 1
                    continue
                entry.absorb(pkt, self.field)
                for f in sorted(entry.faces):
                    self._reply(acts, f, pkt, now)
                if entry.complete():
                    self.pit.remove(entry)
            return

        entries = self.pit.live(name, now)
        used = [False] * len(group)
        sent_app: set[int] = set()
        for entry in entries:
            cand = [(i, f, p) for i, (f, p) in enumerate(group) if entry.accepts(p.symbol)]
            if not cand:
                continue
            outputs: list[tuple[DataPacket, bool]]
            faces_in = {f for _, f, _ in cand}
            if self.mode == "CCCN" and len(faces_in) >= 2:
                outputs = [(p, True) for p in self._combine([p for _, _, p in cand], entry, now)]
                acts.coded_ops += 1
            else:
                outputs = [(p, False) for _, _, p in cand]
            for i, _, _ in cand:
                used[i] = True
            for pkt, coded in outputs:
                if not entry.accepts(pkt.symbol):
                    continue
                entry.absorb(pkt, self.field)
                for f in sorted(entry.faces):
                    if f == APP_FACE:
                        if id(pkt) in sent_app:
                            continue
                        sent_app.add(id(pkt))
                    self._reply(acts, f, pkt, now, coded)
            if entry.complete():
                self.pit.remove(entry)
        for u in used:
            if not u:
                acts.drops["unsolicited"] += 1

    def _combine(self, inputs: list[DataPacket], entry: PitEntry, now: int) -> list[DataPacket]:
        """Random linear recombination of packets that met here.

        Emits as many combinations as the inputs' rank; a custodian also
        mixes in the wanted segments it holds (the ``b`` terms).
        """
        names = {p.name for p in inputs}
        if len(names) > 1:
            raise MixedGeneration(f"cannot combine {sorted(names)}")
        syms = [p.symbol for p in inputs]
        dec = Decoder(self.K, self.field)
        rank = sum(dec.add(CodedSymbol(s.content, s.vector)) for s in syms)
        local = []
        if self.cs is not None:
            union = frozenset().union(*(s.support for s in syms))
            for s in sorted(entry.wanted - union):
                if self.cs.has_plain(entry.name, s):
                    local.append((s, self.payload(entry.name, s)))
        want = rank + len(local)
        outs: list[DataPacket] = []
        span = Decoder(self.K, self.field)
        for _ in range(8 * want):
            if len(outs) == want:
                break
            sym = encode_node(syms, local, field=self.field, rng=self.rng)
            # unlucky draws can cancel; keep only combinations that add rank
            if span.add(CodedSymbol(sym.content, sym.vector)):
                outs.append(self._data(entry.name, sym))
        return outs

    # -- gateway side --------------------------------------------------------

    def request(self, name: str, req_id, now: int) -> Actions:
        """A consumer asks this gateway for a whole object."""
        key = (name, req_id) if self.mode == "IP" else name
        req = self.requests.get(key)
        if req is not None:
            req.req_ids.append(req_id)
            acts = Actions()
            acts.pit = "Aggregated"
            return acts
        req = GatewayRequest(key, name, self.K, now, Decoder(self.K, self.field, name),
                             [req_id], last_progress=now, last_check=now)
        self.requests[key] = req
        pkt = InterestPacket(name, 0, (), self.hop_limit, self.new_nonce())
        if self.mode == "IP":
            self._by_nonce[pkt.nonce] = key
            req.nonces.append(pkt.nonce)
        return self.handle_interest(pkt, APP_FACE, now)

    def gateway_process(self, pkt: DataPacket, now: int) -> Actions:
        acts = Actions()
        key = self._by_nonce.get(pkt.tag) if self.mode == "IP" else pkt.name
        req = self.requests.get(key) if key is not None else None
        if req is None:
            acts.drops["no_request"] += 1
            return acts
        sym = pkt.symbol
        seg = sym.plain_segment
        if seg is not None and seg in req.delivered:
            acts.drops["duplicate"] += 1
            return acts
        if not req.decoder.add(sym):
            acts.drops["not_innovative"] += 1
            return acts
        # a plain arrival can also unlock segments mixed into earlier symbols
        fresh = sorted(req.decoder.known_segments() - req.delivered)
        for s in fresh:
            req.delivered.add(s)
            acts.delivered.append((key, s, sym.payload if s == seg else req.decoder.segment(s)))
            if self.cs is not None and s != seg:
                self.cs.insert(StoredItem.plain(req.name, s), now)
        if fresh:
            req.last_progress = now
        if len(req.delivered) == req.K:
            for rid in req.req_ids:
                acts.completed.append((rid, key))
            del self.requests[key]
            for n in req.nonces:
                self._by_nonce.pop(n, None)
            sample = now - req.started
            if req.retransmissions == 0:
                self.srtt = sample if self.srtt is None else 0.875 * self.srtt + 0.125 * sample
        return acts

    def missing(self, key) -> frozenset[int]:
        req = self.requests.get(key)
        if req is None:
            return frozenset()
        return frozenset(range(req.K)) - req.decoder.known_segments() - req.delivered

    def retransmit(self, key, now: int) -> Actions | None:
        """Reissue the interest for whatever ``key`` still lacks, unless
        something arrived since the previous check."""
        req = self.requests.get(key)
        if req is None:
            return None
        if req.last_progress > req.last_check:
            req.last_check = now
            return Actions()
        req.last_check = now
        want = self.missing(key)
        if not want:
            return Actions()
        req.retransmissions += 1
        pkt = InterestPacket.for_segments(req.name, want, self.K, self.hop_limit, self.new_nonce())
        if self.mode == "IP":
            self._by_nonce[pkt.nonce] = key
            req.nonces.append(pkt.nonce)
        return self.handle_interest(pkt, APP_FACE, now)

    def abandon(self, key) -> list:
        """Give up on ``key``; returns the request ids left unserved."""
        req = self.requests.pop(key, None)
        if req is None:
            return []
        req.abandoned = True
        for n in req.nonces:
            self._by_nonce.pop(n, None)
        return list(req.req_ids)


# functional aliases mirroring the operation names -------------------------

def handle_interest(node: Node, pkt: InterestPacket, face: int, now: int = 0) -> Actions:
    return node.handle_interest(pkt, face, now)


def coding_decision(node: Node, arrived, now: int = 0) -> Actions:
    return node.coding_decision(arrived, now)


def gateway_process(node: Node, pkt: DataPacket, now: int = 0) -> Actions:
    return node.gateway_process(pkt, now)


def pit_aggregate(node: Node, pkt: InterestPacket, face: int, now: int = 0) -> str:
    """Register ``pkt`` in the PIT (forwarding it if new) and report
    whether it was aggregated."""
    acts = Actions()
    node._forward(pkt, face, now, acts)
    return acts.pit
