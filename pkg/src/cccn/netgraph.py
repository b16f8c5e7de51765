"""Topologies and graph analysis for cache-router networks.

Covers Barabasi-Albert generation, expansion of links into parallel
unit-capacity edges, max-flow/min-cut toward a gateway, betweenness-based
role placement, shortest-path delivery DAGs and line graphs.  Every
routine breaks ties by the lowest node id.
"""

from __future__ import annotations

import random
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import networkx as nx

__all__ = [
    "Link", "Topology", "UnitGraph", "LineGraph", "RoleAssignment",
    "InvalidParameters", "CyclicDeliveryGraph",
    "generate_ba", "expand_units", "max_flow_min_cut", "betweenness_centrality",
    "assign_roles", "build_line_graph", "topological_order", "bfs_distances",
    "shortest_path_dag", "coding_points", "read_edge_list", "parse_edge_list",
    "write_edge_list",
]


class InvalidParameters(ValueError):
    pass


class CyclicDeliveryGraph(ValueError):
    """The directed graph handed to a coding routine contains a cycle."""


class Link(NamedTuple):
    u: int
    v: int
    capacity: int = 1
    prop_delay: int = 1


@dataclass(frozen=True)
class Topology:
    node_count: int
    edges: tuple[Link, ...]
    directed: bool = False
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        for e in self.edges:
            if e.u == e.v:
                raise InvalidParameters(f"self-loop on node {e.u}")
            if not (0 <= e.u < self.node_count and 0 <= e.v < self.node_count):
                raise InvalidParameters(f"edge {e.u}-{e.v} outside [0, {self.node_count})")
            if e.capacity < 1:
                raise InvalidParameters(f"edge {e.u}-{e.v} has capacity {e.capacity}")

    def adjacency(self) -> list[list[int]]:
        """Sorted neighbour lists (out-neighbours when directed)."""
        adj: list[set[int]] = [set() for _ in range(self.node_count)]
        for e in self.edges:
            adj[e.u].add(e.v)
            if not self.directed:
                adj[e.v].add(e.u)
        return [sorted(s) for s in adj]

    def arcs(self) -> list[tuple[int, int]]:
        """Directed (u, v) pairs, both orientations for undirected links."""
        out = [(e.u, e.v) for e in self.edges]
        if not self.directed:
            out += [(e.v, e.u) for e in self.edges]
        return out

    def name(self, v: int) -> str:
        return self.names[v] if self.names else str(v)

    def to_networkx(self):
        g = nx.DiGraph() if self.directed else nx.Graph()
        g.add_nodes_from(range(self.node_count))
        g.add_edges_from((e.u, e.v) for e in self.edges)
        return g


@dataclass(frozen=True)
class UnitGraph:
    """Directed multigraph of unit-capacity edges."""
    node_count: int
    multiplicity: Mapping[tuple[int, int], int]

    def edges(self) -> list[tuple[int, int]]:
        out = []
        for (u, v), k in sorted(self.multiplicity.items()):
            out.extend([(u, v)] * k)
        return out

    @classmethod
    def from_arcs(cls, node_count: int, arcs: Iterable[tuple[int, int]]) -> "UnitGraph":
        return cls(node_count, dict(Counter(arcs)))


@dataclass(frozen=True)
class LineGraph:
    vertices: tuple[tuple[int, int], ...]    # one per edge, (tail, head)
    arcs: tuple[tuple[int, int], ...]        # (i, j): head(vertices[i]) == tail(vertices[j])

    def in_edges(self, node: int) -> list[int]:
        return [i for i, (_, h) in enumerate(self.vertices) if h == node]

    def out_edges(self, node: int) -> list[int]:
        return [i for i, (t, _) in enumerate(self.vertices) if t == node]

    def longest_path(self) -> int:
        """Number of arcs on the longest chain of the line graph."""
        succ: dict[int, list[int]] = {}
        indeg = [0] * len(self.vertices)
        for i, j in self.arcs:
            succ.setdefault(i, []).append(j)
            indeg[j] += 1
        depth = [0] * len(self.vertices)
        queue = deque(i for i, d in enumerate(indeg) if d == 0)
        seen = 0
        while queue:
            i = queue.popleft()
            seen += 1
            for j in succ.get(i, ()):
                depth[j] = max(depth[j], depth[i] + 1)
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue.append(j)
        if seen != len(self.vertices):
            raise CyclicDeliveryGraph("line graph contains a cycle")
        return max(depth, default=0)


@dataclass(frozen=True)
class RoleAssignment:
    publishers: tuple[int, ...]
    gateways: tuple[int, ...]
    centrality: Mapping[int, float]
    custodians: frozenset = field(default_factory=frozenset)


# --------------------------------------------------------------------------
# generation and I/O

def generate_ba(n: int, m_attach: int, seed: int, capacity: int = 1,
                prop_delay: int = 1) -> Topology:
    """Barabasi-Albert graph grown from a complete seed graph on
    ``m_attach + 1`` nodes (a triangle for ``m_attach=2``).

    Targets are drawn proportionally to degree; a draw that repeats an
    already chosen target is rejected and redrawn.
    """
    if m_attach < 1 or n <= m_attach:
        raise InvalidParameters(f"need n > m_attach >= 1, got n={n}, m_attach={m_attach}")
    rng = random.Random(seed)
    seed_nodes = m_attach + 1
    edges = [(u, v) for u in range(seed_nodes) for v in range(u + 1, seed_nodes)
             if u < n and v < n]
    # each node appears once per incident edge end
    ends = [x for e in edges for x in e]
    for new in range(seed_nodes, n):
        chosen: list[int] = []
        while len(chosen) < m_attach:
            t = ends[rng.randrange(len(ends))]
            if t not in chosen:
                chosen.append(t)
        for t in chosen:
            edges.append((t, new))
            ends.extend((t, new))
    return Topology(n, tuple(Link(u, v, capacity, prop_delay) for u, v in edges))


def read_edge_list(path) -> Topology:
    return parse_edge_list(Path(path).read_text())


def parse_edge_list(text: str) -> Topology:
    """Parse ``u v capacity prop_delay`` lines.

    ``#`` starts a comment.  Two directives may appear in comments:
    ``# directed`` and ``# names: A B C ...`` (labels by node id).  Node
    ids are non-negative integers; the node count is max id + 1 unless a
    names directive lists more.
    """
    links = []
    directed = False
    names = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line, _, comment = raw.partition("#")
        comment = comment.strip()
        if comment == "directed":
            directed = True
        elif comment.startswith("names:"):
            names = tuple(comment[len("names:"):].split())
        parts = line.split()
        if not parts:
            continue
        if len(parts) not in (2, 3, 4):
            raise InvalidParameters(f"line {lineno}: expected 'u v [capacity [prop_delay]]'")
        try:
            nums = [int(p) for p in parts]
        except ValueError:
            raise InvalidParameters(f"line {lineno}: non-integer field in {line.strip()!r}") from None
        links.append(Link(*nums))
    n = max((max(l.u, l.v) for l in links), default=-1) + 1
    if names is not None:
        if len(names) < n:
            raise InvalidParameters(f"names directive lists {len(names)} labels for {n} nodes")
        n = len(names)
    return Topology(n, tuple(links), directed, names)


def write_edge_list(t: Topology, path=None) -> str:
    lines = ["# u v capacity prop_delay"]
    if t.directed:
        lines.append("# directed")
    if t.names:
        lines.append("# names: " + " ".join(t.names))
    lines += [f"{e.u} {e.v} {e.capacity} {e.prop_delay}" for e in t.edges]
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


# --------------------------------------------------------------------------
# flows

def expand_units(t: Topology, units_per_gbps: int = 1) -> UnitGraph:
    """Each link of capacity ``c`` becomes ``c * units_per_gbps`` parallel
    unit edges, in both directions for undirected topologies."""
    mult: Counter = Counter()
    for e in t.edges:
        k = e.capacity * units_per_gbps
        mult[(e.u, e.v)] += k
        if not t.directed:
            mult[(e.v, e.u)] += k
    return UnitGraph(t.node_count, dict(mult))


def max_flow_min_cut(g: UnitGraph, sources: Iterable[int], sink: int) -> int:
    """Edmonds-Karp from a virtual super-source feeding every source with
    unbounded capacity.  On unit edges the value is also the number of
    edge-disjoint source-to-sink paths."""
    sources = set(sources)
    if not sources:
        raise InvalidParameters("no sources")
    if sink in sources:
        raise InvalidParameters(f"sink {sink} is also a source")
    n = g.node_count
    s = n  # super-source
    cap: list[dict[int, int]] = [dict() for _ in range(n + 1)]
    for (u, v), k in g.multiplicity.items():
        cap[u][v] = cap[u].get(v, 0) + k
        cap[v].setdefault(u, 0)
    big = sum(g.multiplicity.values()) + 1
    for x in sources:
        cap[s][x] = big
        cap[x].setdefault(s, 0)
    flow = 0
    while True:
        parent = {s: s}
        queue = deque([s])
        while queue and sink not in parent:
            u = queue.popleft()
            for v in sorted(cap[u]):
                if cap[u][v] > 0 and v not in parent:
                    parent[v] = u
                    queue.append(v)
        if sink not in parent:
            return flow
        bottleneck = big
        v = sink
        while v != s:
            u = parent[v]
            bottleneck = min(bottleneck, cap[u][v])
            v = u
        v = sink
        while v != s:
            u = parent[v]
            cap[u][v] -= bottleneck
            cap[v][u] += bottleneck
            v = u
        flow += bottleneck


# --------------------------------------------------------------------------
# centrality and roles

def betweenness_centrality(t: Topology) -> dict[int, float]:
    """Normalised shortest-path betweenness (Brandes, via networkx)."""
    return nx.betweenness_centrality(t.to_networkx(), normalized=True)


def assign_roles(t: Topology, n_publishers: int, n_gateways: int,
                 centrality: Mapping[int, float] | None = None) -> RoleAssignment:
    if n_publishers < 0 or n_gateways < 0 or n_publishers + n_gateways > t.node_count:
        raise InvalidParameters(
            f"{n_publishers} publishers + {n_gateways} gateways on {t.node_count} nodes")
    score = dict(centrality) if centrality is not None else betweenness_centrality(t)
    by_high = sorted(range(t.node_count), key=lambda v: (-score[v], v))
    publishers = tuple(by_high[:n_publishers])
    taken = set(publishers)
    by_low = sorted((v for v in range(t.node_count) if v not in taken),
                    key=lambda v: (score[v], v))
    gateways = tuple(by_low[:n_gateways])
    return RoleAssignment(publishers, gateways, score)


# --------------------------------------------------------------------------
# DAGs and line graphs

def topological_order(node_count: int, arcs: Iterable[tuple[int, int]]) -> list[int]:
    """Kahn's algorithm taking the lowest ready id first."""
    import heapq
    succ: list[list[int]] = [[] for _ in range(node_count)]
    indeg = [0] * node_count
    for u, v in arcs:
        succ[u].append(v)
        indeg[v] += 1
    ready = [v for v in range(node_count) if indeg[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        u = heapq.heappop(ready)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    if len(order) != node_count:
        raise CyclicDeliveryGraph("delivery graph contains a directed cycle")
    return order


def build_line_graph(edges: Sequence[tuple[int, int]], node_count: int | None = None) -> LineGraph:
    """Line graph of a directed acyclic (multi)graph given as an edge list.

    Vertex ``i`` is ``edges[i]``; there is an arc ``i -> j`` whenever edge
    ``i`` ends where edge ``j`` starts.
    """
    edges = [tuple(e) for e in edges]
    if node_count is None:
        node_count = max((max(e) for e in edges), default=-1) + 1
    topological_order(node_count, edges)
    by_tail: dict[int, list[int]] = {}
    for j, (t, _) in enumerate(edges):
        by_tail.setdefault(t, []).append(j)
    arcs = [(i, j) for i, (_, h) in enumerate(edges) for j in by_tail.get(h, ())]
    return LineGraph(tuple(edges), tuple(arcs))


def bfs_distances(adj: Sequence[Sequence[int]], sources: Iterable[int]) -> list[int]:
    """Hop distances from the nearest source; -1 where unreachable."""
    dist = [-1] * len(adj)
    queue = deque()
    for s in sources:
        dist[s] = 0
        queue.append(s)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path_dag(t: Topology, sources: Iterable[int], sinks: Iterable[int] | None = None
                      ) -> list[tuple[int, int]]:
    """Orient ``t`` away from ``sources`` along shortest paths.

    Keeps the link ``u -> v`` when ``dist(v) = dist(u) + 1``.  When
    ``sinks`` is given, only links lying on some shortest path to a sink
    survive.
    """
    adj = t.adjacency()
    dist = bfs_distances(adj, sources)
    arcs = sorted({(u, v) for u, v in t.arcs() if dist[u] >= 0 and dist[v] == dist[u] + 1})
    if sinks is None:
        return arcs
    pred: dict[int, list[int]] = {}
    for u, v in arcs:
        pred.setdefault(v, []).append(u)
    keep: set[int] = set()
    stack = list(sinks)
    while stack:
        v = stack.pop()
        if v in keep:
            continue
        keep.add(v)
        stack.extend(pred.get(v, ()))
    return [(u, v) for u, v in arcs if u in keep and v in keep]


def coding_points(arcs: Iterable[tuple[int, int]], receivers: Iterable[int]) -> list[int]:
    """Non-receiver nodes where two or more incoming paths meet."""
    receivers = set(receivers)
    indeg = Counter(v for _, v in arcs)
    return sorted(v for v, d in indeg.items() if d >= 2 and v not in receivers)
