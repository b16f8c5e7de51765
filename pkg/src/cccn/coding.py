"""Linear network coding over delivery DAGs.

A delivery DAG is an edge list ``[(tail, head), ...]``.  Sources are the
nodes injecting segments (publisher or custodians) and are given as a
mapping ``node -> segment indices``; gateways are the decoding sinks.

Matrix conventions (column vectors, one entry per DAG edge)::

    C_{k+1} = B Seg_k + T C_k        B: E x K,  T: E x E,  T[j, i] = tau(i -> j)
    W       = H_j C                  H_j: in(R_j) x E

so the gateway transfer matrix is ``H_j (I - T)^{-1} B`` with
``(I - T)^{-1} = I + T + ... + T^L`` because ``T`` is nilpotent on a DAG.
"""

from __future__ import annotations

import bisect
import functools
import itertools
from dataclasses import dataclass, field as dc_field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .gf import GF, FieldMatrix, default_field, mat_rank
from .netgraph import CyclicDeliveryGraph, LineGraph, topological_order

__all__ = [
    "CodingAssignment", "SystemMatrices", "TransferMatrix", "CodedSymbol", "Decoder", "Poly",
    "InconsistentStructure", "MixedGeneration", "NothingToEncode", "InsufficientRank",
    "normalize_sources", "draw_coefficients", "build_system_matrices",
    "compute_transfer_matrix", "verify_full_rank", "feasibility_bound", "encode_node",
    "decode_gateway", "is_innovative", "symbolic_transfer_matrices", "symbolic_degree",
]


class InconsistentStructure(ValueError):
    pass


class MixedGeneration(ValueError):
    """Symbols from different content objects were handed to one combine."""


class NothingToEncode(ValueError):
    pass


class InsufficientRank(ArithmeticError):
    def __init__(self, rank: int, needed: int):
        super().__init__(f"rank {rank} < {needed}")
        self.rank = rank
        self.needed = needed


def normalize_sources(sources) -> dict[int, tuple[int, ...]]:
    """``[a, b]`` means node a injects segment 0 and node b segment 1."""
    if isinstance(sources, Mapping):
        return {int(n): tuple(sorted(int(s) for s in segs)) for n, segs in sources.items()}
    return {int(n): (i,) for i, n in enumerate(sources)}


def _generation_size(sources: Mapping[int, Sequence[int]]) -> int:
    segs = {s for ss in sources.values() for s in ss}
    return max(segs) + 1 if segs else 0


def _node_order(lg: LineGraph) -> list[int]:
    n = max((max(e) for e in lg.vertices), default=-1) + 1
    return topological_order(n, lg.vertices)


def _in_edges_sorted(lg: LineGraph, v: int) -> list[int]:
    return sorted(lg.in_edges(v), key=lambda i: (lg.vertices[i][0], i))


# --------------------------------------------------------------------------
# coefficients and system matrices

@dataclass(frozen=True)
class CodingAssignment:
    """Coefficients of one realised code.

    ``tau`` maps line-graph arcs ``(i, j)``, ``b`` maps ``(segment, edge)``
    and ``h`` maps ``(edge, slot)`` where ``slot`` is the position of the
    edge among its gateway's incoming edges.  ``tau_labels`` numbers the
    arcs at coding points 1, 2, ... in topological order.
    """
    field: GF
    tau: Mapping[tuple[int, int], int]
    b: Mapping[tuple[int, int], int]
    h: Mapping[tuple[int, int], int]
    tau_labels: Mapping[tuple[int, int], int] = dc_field(default_factory=dict)
    seed: int | None = None


def coding_arcs(lg: LineGraph, gateways: Iterable[int]) -> list[tuple[int, int]]:
    """Line-graph arcs passing through a coding point, in labelling order.

    A coding point is a non-gateway node with two or more incoming edges.
    Ordered by node (topological, lowest id first), then incoming edge
    (by tail id), then outgoing edge.
    """
    gateways = set(gateways)
    out = []
    arcset = set(lg.arcs)
    for v in _node_order(lg):
        ins = _in_edges_sorted(lg, v)
        if v in gateways or len(ins) < 2:
            continue
        outs = sorted(lg.out_edges(v), key=lambda j: (lg.vertices[j][1], j))
        for j in outs:
            for i in ins:
                if (i, j) in arcset:
                    out.append((i, j))
    return out


def draw_coefficients(lg: LineGraph, sources, gateways: Sequence[int], field: GF | None = None,
                      seed: int | None = None, unit_io: bool = False,
                      coding_points_only: bool = True) -> CodingAssignment:
    """Draw every coefficient independently and uniformly (zero allowed).

    With ``coding_points_only`` the arcs through single-input relays carry
    the coefficient 1 (plain forwarding); ``unit_io`` fixes all injection
    and observation coefficients to 1.
    """
    field = field or default_field()
    sources = normalize_sources(sources)
    rng = np.random.default_rng(seed)
    labelled = coding_arcs(lg, gateways)
    tau_labels = {a: k + 1 for k, a in enumerate(labelled)}
    tau: dict[tuple[int, int], int] = {}
    for a in labelled:
        tau[a] = int(field.random(rng))
    for a in sorted(lg.arcs):
        if a not in tau:
            tau[a] = 1 if coding_points_only else int(field.random(rng))
    b: dict[tuple[int, int], int] = {}
    for node in sorted(sources):
        for e in lg.out_edges(node):
            for s in sources[node]:
                b[(s, e)] = 1 if unit_io else int(field.random(rng))
    h: dict[tuple[int, int], int] = {}
    for g in gateways:
        for slot, e in enumerate(_in_edges_sorted(lg, g)):
            h[(e, slot)] = 1 if unit_io else int(field.random(rng))
    return CodingAssignment(field, tau, b, h, tau_labels, seed)


@dataclass(frozen=True)
class SystemMatrices:
    B: FieldMatrix                       # E x K
    T: FieldMatrix                       # E x E
    H: Mapping[int, FieldMatrix]         # gateway -> in(R) x E
    K: int

    @property
    def field(self) -> GF:
        return self.T.field

    @property
    def E(self) -> int:
        return self.T.rows

    def H_stacked(self) -> FieldMatrix:
        blocks = [self.H[g].data for g in sorted(self.H)]
        data = np.concatenate(blocks) if blocks else np.zeros((0, self.E), dtype=np.int64)
        return FieldMatrix(self.field, data)


def build_system_matrices(lg: LineGraph, ca: CodingAssignment, sources,
                          gateways: Sequence[int]) -> SystemMatrices:
    sources = normalize_sources(sources)
    K = _generation_size(sources)
    E = len(lg.vertices)
    nodes = {x for e in lg.vertices for x in e}
    for v in list(sources) + list(gateways):
        if v not in nodes:
            raise InconsistentStructure(f"node {v} does not appear in the delivery graph")
    f = ca.field
    B = np.zeros((E, K), dtype=np.int64)
    for (s, e), coeff in ca.b.items():
        if not (0 <= s < K and 0 <= e < E):
            raise InconsistentStructure(f"injection ({s}, {e}) outside {E}x{K}")
        tail = lg.vertices[e][0]
        if s not in sources.get(tail, ()):
            raise InconsistentStructure(f"edge {e} does not leave a holder of segment {s}")
        B[e, s] = coeff
    arcset = set(lg.arcs)
    T = np.zeros((E, E), dtype=np.int64)
    for (i, j), coeff in ca.tau.items():
        if (i, j) not in arcset:
            raise InconsistentStructure(f"coefficient on ({i}, {j}) which is not a line-graph arc")
        T[j, i] = coeff
    H = {}
    for g in gateways:
        ins = _in_edges_sorted(lg, g)
        Hg = np.zeros((len(ins), E), dtype=np.int64)
        for slot, e in enumerate(ins):
            if (e, slot) not in ca.h:
                raise InconsistentStructure(f"no observation coefficient for edge {e} at gateway {g}")
            Hg[slot, e] = ca.h[(e, slot)]
        H[g] = FieldMatrix(f, Hg)
    return SystemMatrices(FieldMatrix(f, B), FieldMatrix(f, T), H, K)


@dataclass(frozen=True)
class TransferMatrix:
    gateway: int
    matrix: FieldMatrix      # in(R) x K

    @property
    def K(self) -> int:
        return self.matrix.cols


def _power_series(T: FieldMatrix) -> FieldMatrix:
    """I + T + T^2 + ... ; raises if T is not nilpotent."""
    E = T.rows
    acc = FieldMatrix.identity(T.field, E)
    P = acc
    for _ in range(E + 1):
        P = P @ T
        if P.is_zero():
            return acc
        acc = acc + P
    raise CyclicDeliveryGraph("T is not nilpotent; the delivery graph has a cycle")


def compute_transfer_matrix(sm: SystemMatrices, gateway: int) -> TransferMatrix:
    if gateway not in sm.H:
        raise InconsistentStructure(f"{gateway} is not a gateway of this system")
    S = _power_series(sm.T)
    return TransferMatrix(gateway, sm.H[gateway] @ S @ sm.B)


def verify_full_rank(tm: TransferMatrix) -> bool:
    return mat_rank(tm.matrix) == tm.K


def feasibility_bound(d: int, m: int) -> float:
    """Schwartz-Zippel: P[prod det T_j = 0] <= d / 2^m."""
    if d < 0 or m < 1:
        raise ValueError("need d >= 0 and m >= 1")
    return min(1.0, d / 2 ** m)


# --------------------------------------------------------------------------
# symbolic bookkeeping

class Poly:
    """Sparse multivariate polynomial with GF(2^m) coefficients.

    Monomials are sorted tuples of ``(variable, exponent)``.
    """

    __slots__ = ("field", "terms")

    def __init__(self, field: GF, terms: Mapping[tuple, int] | None = None):
        self.field = field
        self.terms = {k: c for k, c in (terms or {}).items() if c}

    @classmethod
    def const(cls, field: GF, c: int) -> "Poly":
        return cls(field, {(): c})

    @classmethod
    def var(cls, field: GF, v) -> "Poly":
        return cls(field, {((v, 1),): 1})

    def __add__(self, other: "Poly") -> "Poly":
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0) ^ c
        return Poly(self.field, out)

    __sub__ = __add__

    def __mul__(self, other: "Poly") -> "Poly":
        f = self.field
        out: dict[tuple, int] = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                exps = dict(k1)
                for v, e in k2:
                    exps[v] = exps.get(v, 0) + e
                k = tuple(sorted(exps.items()))
                out[k] = out.get(k, 0) ^ f.mul(c1, c2)
        return Poly(f, out)

    def __eq__(self, other) -> bool:
        return isinstance(other, Poly) and self.terms == other.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(e for _, e in k) for k in self.terms), default=-1)

    def evaluate(self, values: Mapping) -> int:
        f = self.field
        acc = 0
        for k, c in self.terms.items():
            t = c
            for v, e in k:
                t = f.mul(t, f.pow(values[v], e))
            acc ^= t
        return acc

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for k, c in sorted(self.terms.items()):
            mono = "*".join(f"t{v}" + (f"^{e}" if e > 1 else "") for v, e in k)
            parts.append(mono if c == 1 and mono else f"{c}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)


def symbolic_transfer_matrices(lg: LineGraph, sources, gateways: Sequence[int],
                               field: GF | None = None,
                               coding_points_only: bool = True) -> dict[int, list[list[Poly]]]:
    """Transfer matrices with every coding coefficient left as a variable.

    Injection and observation coefficients are 1.  Variable ``k`` is the
    arc labelled ``k`` by :func:`coding_arcs`; other arcs are 1 when
    ``coding_points_only`` else fresh variables numbered after them.
    """
    field = field or default_field()
    sources = normalize_sources(sources)
    K = _generation_size(sources)
    labelled = coding_arcs(lg, gateways)
    var_of = {a: k + 1 for k, a in enumerate(labelled)}
    nxt = len(labelled) + 1
    for a in sorted(lg.arcs):
        if a not in var_of and not coding_points_only:
            var_of[a] = nxt
            nxt += 1
    one, zero = Poly.const(field, 1), Poly(field)
    preds: dict[int, list[int]] = {}
    for i, j in lg.arcs:
        preds.setdefault(j, []).append(i)
    edge_order = topological_order(len(lg.vertices), lg.arcs)
    signal: dict[int, list[Poly]] = {}
    for e in edge_order:
        tail = lg.vertices[e][0]
        sig = [zero] * K
        for s in sources.get(tail, ()):
            sig[s] = sig[s] + one
        for i in preds.get(e, ()):
            coeff = Poly.var(field, var_of[(i, e)]) if (i, e) in var_of else one
            sig = [x + coeff * y for x, y in zip(sig, signal[i])]
        signal[e] = sig
    return {g: [list(signal[e]) for e in _in_edges_sorted(lg, g)] for g in gateways}


def _det(rows: list[list[Poly]], field: GF, max_terms: int) -> Poly | None:
    """Laplace expansion along rows, memoised on the set of used columns."""
    n = len(rows)
    memo: dict[tuple, Poly] = {}

    def minor(r: int, cols: tuple) -> Poly | None:
        if r == n:
            return Poly.const(field, 1)
        if cols in memo:
            return memo[cols]
        acc = Poly(field)
        for c in cols:
            if rows[r][c].is_zero():
                continue
            sub = minor(r + 1, tuple(x for x in cols if x != c))
            if sub is None:
                return None
            acc = acc + rows[r][c] * sub   # characteristic 2: signs vanish
            if len(acc.terms) > max_terms:
                return None
        memo[cols] = acc
        return acc

    return minor(0, tuple(range(n)))


def symbolic_degree(matrices: Mapping[int, list[list[Poly]]], K: int,
                    max_terms: int = 20000) -> tuple[int | None, bool]:
    """Degree of ``prod_j det(T_j)`` over the gateways' square transfer
    matrices.

    Returns ``(d, exact)``.  Gateways whose matrix is not ``K x K`` cannot
    be full rank and make ``d`` undefined (``None``).  If a determinant
    outgrows ``max_terms`` the sum of per-row maximum degrees is returned
    as an upper bound with ``exact=False``; Schwartz-Zippel still holds
    with an upper bound.
    """
    d = 0
    exact = True
    for g in sorted(matrices):
        rows = matrices[g]
        if len(rows) != K or any(len(r) != K for r in rows):
            return None, True
        field = next((p.field for r in rows for p in r), default_field())
        det = _det(rows, field, max_terms)
        if det is None:
            d += sum(max(p.degree() for p in r) for r in rows)
            exact = False
        elif det.is_zero():
            return None, True
        else:
            d += det.degree()
    return d, exact


# --------------------------------------------------------------------------
# symbols, encoding, decoding

@dataclass(frozen=True, eq=False)
class CodedSymbol:
    """A linear combination of the segments of one content object.

    ``vector`` holds the K coefficients; ``payload`` (optional) is the same
    combination applied to the segment payloads.
    """
    content: Hashable
    vector: tuple[int, ...]
    payload: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.vector)

    @classmethod
    def plain(cls, content, K: int, seg: int, payload=None) -> "CodedSymbol":
        vec = [0] * K
        vec[seg] = 1
        return cls(content, tuple(vec), payload)

    # cached_property writes to the instance dict, so it works on a frozen class
    @functools.cached_property
    def support(self) -> frozenset[int]:
        return frozenset(i for i, c in enumerate(self.vector) if c)

    @functools.cached_property
    def plain_segment(self) -> int | None:
        """Segment index if this is a bare segment (unit vector)."""
        sup = self.support
        if len(sup) == 1:
            (i,) = sup
            if self.vector[i] == 1:
                return i
        return None


def encode_node(incoming: Sequence[CodedSymbol], local_segments: Sequence[tuple[int, np.ndarray | None]] = (),
                tau: Sequence[int] | None = None, b: Sequence[int] | None = None,
                field: GF | None = None, rng: np.random.Generator | None = None,
                K: int | None = None, content=None) -> CodedSymbol:
    """``sum(tau_k * incoming_k) + sum(b_i * seg_i)`` on vectors and payloads.

    Missing ``tau``/``b`` are drawn uniformly from ``rng``.  ``K`` and
    ``content`` are only needed when there are no incoming symbols.
    """
    field = field or default_field()
    if not incoming and not local_segments:
        raise NothingToEncode("no incoming symbols and no local segments")
    if incoming:
        content = incoming[0].content
        K = incoming[0].K
        for s in incoming[1:]:
            if s.content != content or s.K != K:
                raise MixedGeneration(f"cannot combine {s.content!r} with {content!r}")
    if K is None:
        raise ValueError("K is required when encoding only local segments")
    if tau is None:
        tau = [int(x) for x in field.random(rng, len(incoming))] if incoming else []
    if b is None:
        b = [int(x) for x in field.random(rng, len(local_segments))] if local_segments else []
    if len(tau) != len(incoming) or len(b) != len(local_segments):
        raise ValueError("coefficient count does not match inputs")
    vec = [0] * K
    for t, sym in zip(tau, incoming):
        if t:
            for i, c in enumerate(sym.vector):
                if c:
                    vec[i] ^= field.mul(t, c)
    for coeff, (seg, _) in zip(b, local_segments):
        vec[seg] ^= coeff
    payloads = [s.payload for s in incoming] + [p for _, p in local_segments]
    payload = None
    if payloads and all(p is not None for p in payloads):
        payload = field.dot(list(tau) + list(b), payloads)
    return CodedSymbol(content, tuple(vec), payload)


class Decoder:
    """Incremental Gauss-Jordan decoder for one generation.

    Keeps the received coding vectors in reduced row-echelon form with the
    payloads carried along, so innovation checks and partial decoding are
    cheap.
    """

    def __init__(self, K: int, field: GF | None = None, content=None):
        self.K = K
        self.field = field or default_field()
        self.content = content
        self._rows: list[np.ndarray] = []
        self._payloads: list[np.ndarray | None] = []
        self._pivots: list[int] = []

    @property
    def rank(self) -> int:
        return len(self._rows)

    def is_complete(self) -> bool:
        return self.rank == self.K

    def _reduce(self, vec: np.ndarray, payload):
        f = self.field
        for row, pl, c in zip(self._rows, self._payloads, self._pivots):
            coeff = int(vec[c])
            if coeff == 1:
                vec ^= row
                if payload is not None and pl is not None:
                    payload ^= pl
            elif coeff:
                vec ^= f.scale(coeff, row)
                if payload is not None and pl is not None:
                    payload ^= f.scale(coeff, pl)
        return vec, payload

    def is_innovative(self, vector: Sequence[int]) -> bool:
        vec, _ = self._reduce(np.array(vector, dtype=np.int64), None)
        return bool(vec.any())

    def add(self, sym: CodedSymbol) -> bool:
        """Absorb ``sym``; returns False (and changes nothing) when it is
        not innovative."""
        if self.content is not None and sym.content != self.content:
            raise MixedGeneration(f"decoder for {self.content!r} got {sym.content!r}")
        if sym.K != self.K:
            raise MixedGeneration(f"generation size {sym.K} != {self.K}")
        f = self.field
        payload = None if sym.payload is None else sym.payload.astype(f.dtype).copy()
        vec, payload = self._reduce(np.array(sym.vector, dtype=np.int64), payload)
        nz = np.flatnonzero(vec)
        if nz.size == 0:
            return False
        c = int(nz[0])
        inv = f.inv(int(vec[c]))
        vec = f.scale(inv, vec)
        if payload is not None:
            payload = f.scale(inv, payload)
        for k, row in enumerate(self._rows):
            coeff = int(row[c])
            if coeff:
                self._rows[k] = row ^ f.scale(coeff, vec)
                if self._payloads[k] is not None and payload is not None:
                    self._payloads[k] = self._payloads[k] ^ f.scale(coeff, payload)
                elif payload is None:
                    self._payloads[k] = None
        pos = bisect.bisect_left(self._pivots, c)
        self._rows.insert(pos, vec)
        self._payloads.insert(pos, payload)
        self._pivots.insert(pos, c)
        return True

    def known_segments(self) -> set[int]:
        """Segments already recoverable (their unit vector is in the span)."""
        return {c for c, row in zip(self._pivots, self._rows) if np.count_nonzero(row) == 1}

    def segment(self, i: int):
        for c, row, pl in zip(self._pivots, self._rows, self._payloads):
            if c == i and np.count_nonzero(row) == 1:
                return pl
        raise KeyError(i)

    def segments(self) -> list[tuple[int, np.ndarray | None]]:
        if not self.is_complete():
            raise InsufficientRank(self.rank, self.K)
        return list(zip(self._pivots, self._payloads))


def decode_gateway(symbols: Sequence[CodedSymbol], field: GF | None = None
                   ) -> list[tuple[int, np.ndarray | None]]:
    """Recover all K segments of one generation from the received symbols."""
    if not symbols:
        raise InsufficientRank(0, 0)
    dec = Decoder(symbols[0].K, field, symbols[0].content)
    for s in symbols:
        dec.add(s)
    return dec.segments()


def is_innovative(sym: CodedSymbol, basis: Sequence[CodedSymbol], field: GF | None = None) -> bool:
    dec = Decoder(sym.K, field)
    for s in basis:
        dec.add(s)
    return dec.is_innovative(sym.vector)
