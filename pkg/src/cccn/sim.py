"""Discrete-event simulation of IP, CCN and coded-CCN content delivery.

Time runs in integer ticks (``tick_s`` seconds each) so repeated runs are
bit-identical.  Links are full-duplex FIFO pipes: a data packet occupies
the sending direction for ``accounting size / rate`` and then propagates;
interests are tiny and only pay propagation.  Data packets that reach a
node in the same tick are handed to it as one batch, which is what lets
a coding router see packets "arriving together" on different faces.
"""

from __future__ import annotations

import dataclasses
import heapq
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cache import ContentStore
from .gf import GF
from .netgraph import assign_roles, bfs_distances, generate_ba
from .protocol import APP_FACE, MODES, Actions, Node, serialize

__all__ = ["ExperimentConfig", "ConfigError", "ZeroWindow", "MetricsReport", "RunLog", "Engine",
           "gen_workload", "run_experiment", "compute_metrics", "run_sweep", "CSV_HEADER",
           "csv_row", "size_value", "FULL_PROFILE"]

CSV_HEADER = ("mode,axis_name,axis_value,seed,avg_download_delay_s,avg_link_usage,"
              "avg_interest_load,completions,requests")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ZeroWindow(ValueError):
    """The measurement window holds no requests."""


_SIZE = re.compile(r"^\s*([0-9.eE+-]+)\s*([kKmMgGtT]?)[bB]?\s*$")
_SCALE = {"": 1, "k": 1e3, "m": 1e6, "g": 1e9, "t": 1e12}


def size_value(text: str) -> float:
    """``200MB`` -> 2e8, ``1e9`` -> 1e9 (decimal units). ValueError otherwise."""
    m = _SIZE.match(text)
    if not m:
        raise ValueError(text)
    return float(m.group(1)) * _SCALE[m.group(2).lower()]


@dataclass(frozen=True)
class ExperimentConfig:
    # topology and roles
    n_nodes: int = 100
    m_attach: int = 2
    n_publishers: int = 5
    n_gateways: int = 15
    # catalogue and objects
    objects_per_publisher: int = 200
    zipf_alpha: float = 0.7
    segments: int = 10
    segment_bytes: float = 10e6
    # links and nodes
    link_gbps: float = 1.0
    prop_delay_s: float = 0.001
    proc_delay_s: float = 0.001
    coding_overhead: float = 1.05
    cache_bytes: float = 1e9
    unprivileged_fraction: float = 0.2
    loss_rate: float = 0.005
    # workload
    rate: float = 100.0                 # per-gateway direct request rate, req/s
    load_scale: float = 0.002           # multiplies rate; see README "desk profile"
    n_requests: int = 10_000
    duration_s: float = 0.0             # 0: derived from n_requests
    warmup_fraction: float = 0.2
    # protocol
    mode: str = "CCCN"
    field_m: int = 8
    symbol_len: int = 64
    max_paths: int = 2
    hop_limit: int = 32
    pit_lifetime_s: float = 30.0
    min_rto_s: float = 1.0
    max_retransmissions: int = 8
    # engine
    seed: int = 1
    tick_s: float = 1e-5
    max_events: int = 20_000_000

    def validate(self) -> "ExperimentConfig":
        pos_int = ["n_nodes", "m_attach", "n_gateways", "objects_per_publisher", "segments",
                   "hop_limit", "max_paths", "max_events", "max_retransmissions"]
        for f in pos_int:
            v = getattr(self, f)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f, f"must be a positive integer, got {v!r}")
        if not isinstance(self.n_publishers, int) or self.n_publishers < 1:
            raise ConfigError("n_publishers", "must be a positive integer")
        if self.n_publishers + self.n_gateways > self.n_nodes:
            raise ConfigError("n_gateways", "publishers + gateways exceed node count")
        if self.n_nodes <= self.m_attach:
            raise ConfigError("n_nodes", "must exceed m_attach")
        pos = ["segment_bytes", "link_gbps", "rate", "load_scale", "tick_s", "coding_overhead",
               "pit_lifetime_s", "min_rto_s"]
        for f in pos:
            if not getattr(self, f) > 0:
                raise ConfigError(f, f"must be positive, got {getattr(self, f)!r}")
        for f in ["prop_delay_s", "proc_delay_s", "cache_bytes", "zipf_alpha", "duration_s"]:
            if getattr(self, f) < 0:
                raise ConfigError(f, "must be non-negative")
        for f in ["loss_rate", "warmup_fraction", "unprivileged_fraction"]:
            if not 0 <= getattr(self, f) < 1:
                raise ConfigError(f, "must lie in [0, 1)")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
        if self.field_m not in (4, 8, 16):
            raise ConfigError("field_m", "must be 4, 8 or 16")
        if self.symbol_len < 0:
            raise ConfigError("symbol_len", "must be non-negative")
        if self.n_requests < 0:
            raise ConfigError("n_requests", "must be non-negative")
        return self

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    # -- key=value text --------------------------------------------------------

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in dataclasses.fields(cls)}

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ExperimentConfig":
        types = cls.field_types()
        out = {}
        for k, raw in kv.items():
            if k not in types:
                raise ConfigError(k, "unknown key")
            t = types[k]
            try:
                if t is int:
                    try:
                        val = int(raw)
                    except ValueError:
                        f = float(raw)          # allow 1e4
                        if not f.is_integer():
                            raise
                        val = int(f)
                elif t is float:
                    val = size_value(raw) if k.endswith("_bytes") else float(raw)
                else:
                    val = str(raw).strip()
            except ValueError:
                raise ConfigError(k, f"cannot parse {raw!r} as {t.__name__}") from None
            out[k] = val
        return cls(**out).validate()

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        kv = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected key=value, got {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            kv[k] = v
        return cls.from_mapping(kv)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n".replace("'", "")
                       for f in dataclasses.fields(self))

    # -- derived quantities --------------------------------------------------------

    @property
    def catalog_size(self) -> int:
        return self.n_publishers * self.objects_per_publisher

    @property
    def effective_rate(self) -> float:
        return self.rate * self.load_scale

    @property
    def arrival_period_s(self) -> float:
        if self.duration_s > 0:
            return self.duration_s
        return self.n_requests / (self.n_gateways * self.effective_rate)

    def ticks(self, seconds: float) -> int:
        return int(round(seconds / self.tick_s))


FULL_PROFILE = ExperimentConfig(objects_per_publisher=10_000, load_scale=1.0)


@dataclass
class MetricsReport:
    mode: str
    avg_download_delay_s: float = 0.0
    download_ratio_literal: float = 0.0     # requests per second of total fetch time
    avg_link_usage: float = 0.0
    avg_interest_load: float = 0.0
    requests: int = 0
    completions: int = 0
    incomplete: int = 0
    losses: int = 0
    coding_ops: int = 0
    cache_hits_plain: int = 0
    cache_hits_coded: int = 0
    origin_hits: int = 0
    retransmissions: int = 0
    abandoned: int = 0
    data_sent: int = 0
    data_arrived: int = 0
    data_in_flight: int = 0
    payload_errors: int = 0
    links_involved: int = 0
    window_s: float = 0.0
    events: int = 0
    conservation_ok: bool = True

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def csv_row(rep: MetricsReport, axis_name: str, axis_value, seed: int) -> str:
    return (f"{rep.mode},{axis_name},{axis_value},{seed},{rep.avg_download_delay_s:.9g},"
            f"{rep.avg_link_usage:.9g},{rep.avg_interest_load:.9g},{rep.completions},"
            f"{rep.requests}")


# --------------------------------------------------------------------------
# workload

def _zipf_cdf(n: int, alpha: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -alpha
    c = np.cumsum(w)
    return c / c[-1]


def gen_workload(cfg: ExperimentConfig, gateway: int) -> list[tuple[float, int]]:
    """Poisson arrivals with Zipf-distributed content ids (id 0 is rank 1)."""
    rate = cfg.effective_rate
    horizon = cfg.arrival_period_s
    rng = np.random.default_rng([cfg.seed, gateway, 0xA11])
    expect = rate * horizon
    times = np.empty(0)
    t0 = 0.0
    while True:
        n = int(expect + 6 * math.sqrt(expect) + 16)
        gaps = rng.exponential(1.0 / rate, n)
        ts = t0 + np.cumsum(gaps)
        times = np.concatenate([times, ts[ts <= horizon]])
        if ts[-1] > horizon:
            break
        t0 = ts[-1]
    cdf = _zipf_cdf(cfg.catalog_size, cfg.zipf_alpha)
    ids = np.searchsorted(cdf, rng.random(len(times)), side="right")
    ids = np.minimum(ids, cfg.catalog_size - 1)
    return [(float(t), int(c)) for t, c in zip(times, ids)]


# --------------------------------------------------------------------------
# engine

@dataclass
class RunLog:
    """Raw observations of one run; ``compute_metrics`` turns it into a report."""
    mode: str
    arrival_end_s: float
    warmup_s: float
    tick_s: float
    link_bps: float
    requests: list = field(default_factory=list)      # [rid, gw, cid, t_arrive, t_done|None]
    tx: list = field(default_factory=list)            # (link, start_tick, end_tick)
    interest_ticks: list = field(default_factory=list)
    counters: Counter = field(default_factory=Counter)
    lines: list | None = None


_REQ, _INT, _DATA, _TIMER = 0, 1, 2, 3


class Engine:
    """One simulation run.  Build it, optionally poke at ``nodes`` (to warm
    a cache, say), then call ``run``."""

    def __init__(self, cfg: ExperimentConfig, log_events: bool = False):
        self.cfg = cfg
        seed = cfg.seed
        self.topo = generate_ba(cfg.n_nodes, cfg.m_attach, seed=seed)
        self.roles = assign_roles(self.topo, cfg.n_publishers, cfg.n_gateways)
        self.adj = self.topo.adjacency()
        self.K = cfg.segments
        self.field = GF(cfg.field_m)
        pubs = self.roles.publishers
        self.names = [f"/p{c % len(pubs)}/o{c}" for c in range(cfg.catalog_size)]
        self.cid = {n: c for c, n in enumerate(self.names)}
        self.pub_of = {n: pubs[c % len(pubs)] for c, n in enumerate(self.names)}
        # static FIB: equal-cost next hops toward each publisher, lowest id first
        self.next_hops: dict[int, list[list[int]]] = {}
        for p in pubs:
            dist = bfs_distances(self.adj, [p])
            self.next_hops[p] = [sorted(u for u in self.adj[v] if dist[u] == dist[v] - 1)
                                 for v in range(cfg.n_nodes)]
        self.tx_ticks = max(1, cfg.ticks(cfg.segment_bytes * 8 / (cfg.link_gbps * 1e9)))
        self.prop = cfg.ticks(cfg.prop_delay_s)
        self.proc = cfg.ticks(cfg.proc_delay_s)
        self.proc_coded = int(round(self.proc * cfg.coding_overhead))
        self._payloads: dict[tuple[int, int], np.ndarray] = {}
        cap = int(cfg.cache_bytes // cfg.segment_bytes)
        self.nodes: list[Node] = []
        for v in range(cfg.n_nodes):
            cs = None
            if cfg.mode != "IP":
                cs = ContentStore(cap, cfg.unprivileged_fraction, self.field)
            self.nodes.append(Node(
                v, cfg.mode, self.K, fib=self._fib_for(v), cs=cs,
                origin=self._origin_for(v), payload=self._payload, field_=self.field,
                rng=np.random.default_rng([seed, v, 0xC0DE]), max_paths=cfg.max_paths,
                hop_limit=cfg.hop_limit, pit_lifetime=cfg.ticks(cfg.pit_lifetime_s),
                segment_size=int(cfg.segment_bytes)))
        self.loss_rng = random.Random(f"{seed}:loss")
        self.busy: dict[tuple[int, int], int] = {}
        self.heap: list = []
        self.seq = 0
        self.batches: dict[tuple[int, int], list] = {}
        self.log = RunLog(cfg.mode, cfg.arrival_period_s, cfg.warmup_fraction * cfg.arrival_period_s,
                          cfg.tick_s, cfg.link_gbps * 1e9, lines=[] if log_events else None)
        self.req_of_key: dict[tuple[int, object], list[int]] = {}
        self.delivered_count: Counter = Counter()
        self.link_index: dict[tuple[int, int], int] = {}
        self.rto_init = max(cfg.ticks(cfg.min_rto_s),
                            4 * (self.K * self.tx_ticks + 20 * self.prop + 10 * self.proc))

    # -- node callbacks ----------------------------------------------------------

    def _fib_for(self, v: int):
        nh = self.next_hops
        pub_of = self.pub_of

        def fib(name: str):
            return nh[pub_of[name]][v]
        return fib

    def _origin_for(self, v: int):
        pub_of = self.pub_of
        return lambda name: pub_of[name] == v

    def _payload(self, name: str, seg: int):
        L = self.cfg.symbol_len
        if L == 0:
            return None
        c = self.cid[name]
        key = (c, seg)
        p = self._payloads.get(key)
        if p is None:
            rng = np.random.default_rng([self.cfg.seed, c, seg, 0xDA7A])
            p = rng.integers(0, 1 << self.field.m, L).astype(self.field.dtype)
            self._payloads[key] = p
        return p

    # -- scheduling ---------------------------------------------------------------

    def push(self, t: int, kind: int, a, b=None, c=None) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, a, b, c))

    def trace(self, t: int, node: int, kind: str, text: str) -> None:
        if self.log.lines is not None:
            self.log.lines.append(f"{t * self.cfg.tick_s:.5f} {node} {kind} {text}")

    def send_data(self, u: int, v: int, pkt, at: int) -> None:
        link = (u, v)
        li = self.link_index.get(link)
        if li is None:
            li = self.link_index[link] = len(self.link_index)
        start = max(at, self.busy.get(link, 0))
        end = start + self.tx_ticks
        self.busy[link] = end
        self.log.tx.append((li, start, end))
        cnt = self.log.counters
        cnt["data_sent"] += 1
        if self.loss_rng.random() < self.cfg.loss_rate:
            cnt["losses"] += 1
            if self.log.lines is not None:
                self.trace(start, u, "LOST", f"->{v} " + serialize(pkt))
            return
        arrive = end + self.prop
        key = (v, arrive)
        batch = self.batches.get(key)
        if batch is None:
            self.batches[key] = batch = []
            self.push(arrive, _DATA, v)
        batch.append((u, pkt))

    def apply(self, v: int, acts: Actions, now: int) -> None:
        cnt = self.log.counters
        for face, pkt in acts.interests:
            self.log.interest_ticks.append(now)
            self.push(now + self.prop, _INT, face, v, pkt)
            if self.log.lines is not None:
                self.trace(now, v, "TX_INTEREST", f"->{face} " + serialize(pkt))
        for face, pkt, coded in acts.data:
            self.send_data(v, face, pkt, now + (self.proc_coded if coded else self.proc))
        done_at = now + self.proc
        for key, seg, payload in acts.delivered:
            self.delivered_count[(v, key)] += 1
            if payload is not None and self.cfg.symbol_len:
                name = key[0] if isinstance(key, tuple) else key
                if not np.array_equal(payload, self._payload(name, seg)):
                    cnt["payload_errors"] += 1
        for rid, key in acts.completed:
            rec = self.log.requests[rid]
            rec[4] = done_at
            if self.delivered_count[(v, key)] != self.K:
                cnt["conservation_violations"] += 1
            self.trace(done_at, v, "COMPLETE", f"req={rid} {key}")
        for _, key in acts.completed:
            self.delivered_count.pop((v, key), None)
        for k, c in acts.drops.items():
            cnt["drop_" + k] += c
        cnt["coding_ops"] += acts.coded_ops
        for k, c in acts.cache_hits.items():
            cnt["hits_" + k] += c

    def rto(self, gw: int) -> int:
        srtt = self.nodes[gw].srtt
        if srtt is None:
            return self.rto_init
        return max(self.cfg.ticks(self.cfg.min_rto_s), int(4 * srtt))

    # -- main loop --------------------------------------------------------------

    def run(self, arrivals: Sequence[tuple[int, int, int]] | None = None) -> RunLog:
        """Drive the workload to completion.  ``arrivals`` overrides the
        generated one with explicit (tick, gateway, content id) triples."""
        cfg = self.cfg
        if arrivals is None:
            arrivals = []
            for gw in self.roles.gateways:
                for t, c in gen_workload(cfg, gw):
                    arrivals.append((cfg.ticks(t), gw, c))
        arrivals = sorted(arrivals)
        for rid, (t, gw, c) in enumerate(arrivals):
            self.log.requests.append([rid, gw, c, t, None])
            self.push(t, _REQ, rid)
        cnt = self.log.counters
        nodes = self.nodes
        heap = self.heap
        events = 0
        while heap:
            if events >= cfg.max_events:
                cnt["event_cap_hit"] = 1
                break
            t, kind, _, a, b, c = heapq.heappop(heap)
            events += 1
            if kind == _DATA:
                batch = self.batches.pop((a, t))
                cnt["data_arrived"] += len(batch)
                if self.log.lines is not None:
                    for u, pkt in batch:
                        self.trace(t, a, "RX_DATA", f"<-{u} " + serialize(pkt))
                self.apply(a, nodes[a].coding_decision(batch, t), t)
            elif kind == _INT:
                if self.log.lines is not None:
                    self.trace(t, a, "RX_INTEREST", f"<-{b} " + serialize(c))
                self.apply(a, nodes[a].handle_interest(c, b, t), t)
            elif kind == _REQ:
                rid, gw, cid = self.log.requests[a][:3]
                name = self.names[cid]
                self.trace(t, gw, "REQUEST", f"req={rid} {name}")
                node = nodes[gw]
                acts = node.request(name, rid, t)
                self.apply(gw, acts, t)
                if acts.pit != "Aggregated":
                    key = (name, rid) if cfg.mode == "IP" else name
                    if key in node.requests:
                        self.push(t + self.rto(gw), _TIMER, gw, key, node.requests[key])
            else:   # timer
                node = nodes[a]
                if node.requests.get(b) is not c:
                    continue          # that request finished; a newer one may own the key
                if c.retransmissions >= cfg.max_retransmissions and c.last_progress <= c.last_check:
                    cnt["abandoned"] += len(node.abandon(b))
                    self.trace(t, a, "ABANDON", str(b))
                    continue
                acts = node.retransmit(b, t)
                if acts is None:
                    continue
                if acts.interests:
                    cnt["retransmissions"] += 1
                    self.trace(t, a, "RETX", str(b))
                self.apply(a, acts, t)
                if node.requests.get(b) is c:
                    self.push(t + self.rto(a), _TIMER, a, b, c)
        cnt["events"] = events
        cnt["data_in_flight"] = sum(len(x) for x in self.batches.values())
        return self.log


def compute_metrics(log: RunLog, cfg: ExperimentConfig) -> MetricsReport:
    """The three headline metrics over the post-warmup window."""
    tick = log.tick_s
    w0 = int(round(log.warmup_s / tick))
    w1 = int(round(log.arrival_end_s / tick))
    reqs = [r for r in log.requests if w0 <= r[3] <= w1]
    if w1 <= w0 or not reqs:
        raise ZeroWindow(f"no requests in [{w0 * tick}, {w1 * tick}] s")
    window_s = (w1 - w0) * tick
    done = [r for r in reqs if r[4] is not None]
    cnt = log.counters
    rep = MetricsReport(log.mode, requests=len(reqs), completions=len(done),
                        incomplete=len(reqs) - len(done), window_s=window_s)
    if done:
        rep.avg_download_delay_s = sum(r[4] - r[3] for r in done) / len(done) * tick
        span = (max(r[4] for r in done) - min(r[3] for r in reqs)) * tick
        rep.download_ratio_literal = len(reqs) / span if span > 0 else 0.0
    busy: Counter = Counter()
    for li, s, e in log.tx:
        ov = min(e, w1) - max(s, w0)
        if ov > 0:
            busy[li] += ov
    if busy:
        rep.links_involved = len(busy)
        rep.avg_link_usage = sum(busy.values()) / (len(busy) * (w1 - w0))
    # interests sent while draining the tail still serve window requests
    core_interests = sum(1 for t in log.interest_ticks if t >= w0)
    rep.avg_interest_load = core_interests / len(done) if done else 0.0
    rep.losses = cnt["losses"]
    rep.coding_ops = cnt["coding_ops"]
    rep.cache_hits_plain = cnt["hits_plain"]
    rep.cache_hits_coded = cnt["hits_coded"]
    rep.origin_hits = cnt["hits_origin"]
    rep.retransmissions = cnt["retransmissions"]
    rep.abandoned = cnt["abandoned"]
    rep.data_sent = cnt["data_sent"]
    rep.data_arrived = cnt["data_arrived"]
    rep.data_in_flight = cnt["data_in_flight"]
    rep.payload_errors = cnt["payload_errors"]
    rep.events = cnt["events"]
    rep.conservation_ok = (cnt["conservation_violations"] == 0
                           and rep.data_sent == rep.data_arrived + rep.losses + rep.data_in_flight
                           and rep.payload_errors == 0)
    return rep


def run_experiment(cfg: ExperimentConfig, log_events: bool = False,
                   return_log: bool = False):
    cfg.validate()
    log = Engine(cfg, log_events).run()
    try:
        rep = compute_metrics(log, cfg)
    except ZeroWindow:
        rep = MetricsReport(cfg.mode, events=log.counters["events"])
    return (rep, log) if return_log else rep


def run_sweep(template: ExperimentConfig, axis: str, values: Sequence, modes: Iterable[str] = MODES,
              seeds: Iterable[int] | None = None) -> list[tuple[str, object, str, int, MetricsReport]]:
    """One run per (value, mode, seed).  ``axis`` is ``cache`` (bytes) or
    ``rate`` (req/s per gateway)."""
    if not values:
        raise ValueError("sweep needs at least one value")
    attr = {"cache": "cache_bytes", "rate": "rate"}.get(axis)
    if attr is None:
        raise ValueError(f"unknown axis {axis!r}")
    seeds = list(seeds) if seeds is not None else [template.seed]
    out = []
    for val in values:
        for mode in modes:
            for seed in seeds:
                cfg = template.replace(**{attr: type(getattr(template, attr))(val)},
                                       mode=mode, seed=seed)
                out.append((axis, val, mode, seed, run_experiment(cfg)))
    return out
