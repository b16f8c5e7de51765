"""Arithmetic over GF(2^m) and dense matrix algebra on top of it.

Field elements are plain Python ints in ``[0, 2**m)``; bit ``i`` is the
coefficient of ``x**i``.  Addition is XOR.  Multiplication goes through
log/antilog tables built once per field from a carry-less multiply, and
vectors of elements (payloads, matrix rows) are numpy integer arrays so
row operations run vectorised.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GF",
    "FieldMatrix",
    "InversionOfZero",
    "SingularMatrix",
    "DEFAULT_POLYS",
    "default_field",
    "ff_add",
    "ff_mul",
    "ff_inv",
    "mat_rank",
    "mat_invert",
    "solve_system",
]

# x^4+x+1, x^8+x^4+x^3+x+1, x^16+x^5+x^3+x+1
DEFAULT_POLYS = {4: 0x13, 8: 0x11B, 16: 0x1002B}


class InversionOfZero(ZeroDivisionError):
    """Raised when asking for the multiplicative inverse of 0."""


class SingularMatrix(ArithmeticError):
    """Raised when a matrix that must be invertible is not."""


def _degree(p: int) -> int:
    return p.bit_length() - 1


def _poly_mod(a: int, p: int) -> int:
    dp = _degree(p)
    while a and _degree(a) >= dp:
        a ^= p << (_degree(a) - dp)
    return a


def is_irreducible(poly: int) -> bool:
    """Brute-force factor test over GF(2): no divisor of degree 1..deg/2."""
    m = _degree(poly)
    if m < 1:
        return False
    for d in range(1, m // 2 + 1):
        for q in range(1 << d, 1 << (d + 1)):
            if _poly_mod(poly, q) == 0:
                return False
    return True


class GF:
    """The field GF(2^m) defined by an irreducible ``reduction_poly``.

    Parameters
    ----------
    m : int
        Bit width of an element.
    reduction_poly : int, optional
        Bitmask including the leading ``x**m`` term.  Defaults to the
        entry of ``DEFAULT_POLYS`` (0x11B for m=8).
    """

    def __init__(self, m: int = 8, reduction_poly: int | None = None):
        if m < 1:
            raise ValueError(f"m must be positive, got {m}")
        if reduction_poly is None:
            if m not in DEFAULT_POLYS:
                raise ValueError(f"no default reduction polynomial for m={m}")
            reduction_poly = DEFAULT_POLYS[m]
        if _degree(reduction_poly) != m:
            raise ValueError(
                f"reduction polynomial {reduction_poly:#x} has degree "
                f"{_degree(reduction_poly)}, expected {m}")
        if m <= 16 and not is_irreducible(reduction_poly):
            raise ValueError(f"reduction polynomial {reduction_poly:#x} is reducible")
        self.m = m
        self.reduction_poly = reduction_poly
        self.order = 1 << m
        self.dtype = np.uint8 if m <= 8 else np.uint16 if m <= 16 else np.uint32

        n = self.order - 1
        self.generator = self._find_generator()
        exp = [0] * (2 * n)
        log = [0] * self.order
        x = 1
        for i in range(n):
            exp[i] = x
            log[x] = i
            x = self.clmul(x, self.generator)
        for i in range(n, 2 * n):
            exp[i] = exp[i - n]
        self._exp = exp
        self._log = log
        self._exp_np = np.array(exp, dtype=np.int64)
        self._log_np = np.array(log, dtype=np.int64)
        self._table = None
        if m <= 8:
            a = np.arange(self.order)
            la = self._log_np[a][:, None] + self._log_np[a][None, :]
            table = self._exp_np[la]
            table[0, :] = 0
            table[:, 0] = 0
            self._table = table.astype(self.dtype)

    def __repr__(self) -> str:
        return f"GF(2^{self.m}, poly={self.reduction_poly:#x})"

    def __eq__(self, other) -> bool:
        return (isinstance(other, GF) and self.m == other.m
                and self.reduction_poly == other.reduction_poly)

    def __hash__(self) -> int:
        return hash((self.m, self.reduction_poly))

    def clmul(self, a: int, b: int) -> int:
        """Shift-and-add multiply, reducing as it goes."""
        p = 0
        top = self.order
        while b:
            if b & 1:
                p ^= a
            b >>= 1
            a <<= 1
            if a & top:
                a ^= self.reduction_poly
        return p

    def _find_generator(self) -> int:
        n = self.order - 1
        if n == 1:
            return 1
        for g in range(2, self.order):
            x, k = g, 1
            while x != 1:
                x = self.clmul(x, g)
                k += 1
            if k == n:
                return g
        raise AssertionError("multiplicative group has no generator")

    # scalar ops ------------------------------------------------------

    def check(self, a: int) -> int:
        if not 0 <= a < self.order:
            raise ValueError(f"{a} is not an element of GF(2^{self.m})")
        return a

    @staticmethod
    def add(a: int, b: int) -> int:
        return a ^ b

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return self._exp[self._log[a] + self._log[b]]

    def inv(self, a: int) -> int:
        if a == 0:
            raise InversionOfZero("0 has no multiplicative inverse")
        return self._exp[(self.order - 1) - self._log[a]]

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    def pow(self, a: int, e: int) -> int:
        if e == 0:
            return 1
        if a == 0:
            return 0
        return self._exp[(self._log[a] * e) % (self.order - 1)]

    # vector ops ------------------------------------------------------

    def scale(self, c: int, vec: np.ndarray) -> np.ndarray:
        """``c * vec`` element-wise."""
        if c == 0:
            return np.zeros_like(vec)
        if c == 1:
            return vec.copy()
        if self._table is not None:
            return self._table[c][vec]
        lv = self._log_np[vec] + self._log[c]
        out = self._exp_np[lv].astype(vec.dtype)
        out[vec == 0] = 0
        return out

    def dot(self, coeffs: Sequence[int], vecs: Sequence[np.ndarray]) -> np.ndarray:
        """Linear combination ``sum(c_i * v_i)``; ``vecs`` must be non-empty."""
        out = np.zeros_like(vecs[0])
        for c, v in zip(coeffs, vecs):
            if c:
                out ^= self.scale(c, v)
        return out

    def random(self, rng: np.random.Generator, size=None):
        """Uniform elements (zero included)."""
        return rng.integers(0, self.order, size=size)


@lru_cache(maxsize=None)
def default_field(m: int = 8) -> GF:
    return GF(m)


def ff_add(a: int, b: int) -> int:
    return a ^ b


def ff_mul(a: int, b: int, field: GF | None = None) -> int:
    return (field or default_field()).mul(a, b)


def ff_inv(a: int, field: GF | None = None) -> int:
    return (field or default_field()).inv(a)


class FieldMatrix:
    """Dense ``rows x cols`` matrix over a :class:`GF`.

    Stored as a 2-D ``int64`` numpy array; treat instances as immutable.
    """

    __slots__ = ("field", "data")

    def __init__(self, field: GF, data):
        arr = np.array(data, dtype=np.int64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
        if arr.ndim != 2:
            raise ValueError("FieldMatrix data must be 2-D")
        if arr.size and (arr.min() < 0 or arr.max() >= field.order):
            raise ValueError(f"entries out of range for {field}")
        self.field = field
        self.data = arr

    @classmethod
    def zeros(cls, field: GF, rows: int, cols: int) -> "FieldMatrix":
        return cls(field, np.zeros((rows, cols), dtype=np.int64))

    @classmethod
    def identity(cls, field: GF, n: int) -> "FieldMatrix":
        return cls(field, np.eye(n, dtype=np.int64))

    @classmethod
    def column(cls, field: GF, values: Iterable[int]) -> "FieldMatrix":
        return cls(field, np.array(list(values), dtype=np.int64).reshape(-1, 1))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> "FieldMatrix":
        return FieldMatrix(self.field, self.data.T.copy())

    def __getitem__(self, idx):
        return int(self.data[idx])

    def tolist(self) -> list[list[int]]:
        return self.data.tolist()

    def is_zero(self) -> bool:
        return not self.data.any()

    def __eq__(self, other) -> bool:
        if not isinstance(other, FieldMatrix):
            return NotImplemented
        return self.field == other.field and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"FieldMatrix({self.rows}x{self.cols}, {self.tolist()})"

    def __add__(self, other: "FieldMatrix") -> "FieldMatrix":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")
        return FieldMatrix(self.field, self.data ^ other.data)

    __sub__ = __add__

    def __matmul__(self, other: "FieldMatrix") -> "FieldMatrix":
        if self.cols != other.rows:
            raise ValueError(f"cannot multiply {self.shape} by {other.shape}")
        f = self.field
        out = np.zeros((self.rows, other.cols), dtype=np.int64)
        for k in range(self.cols):
            col = self.data[:, k]
            brow = other.data[k]
            if not brow.any():
                continue
            for i in np.flatnonzero(col):
                out[i] ^= f.scale(int(col[i]), brow)
        return FieldMatrix(f, out)


def _eliminate(field: GF, a: np.ndarray, ncols: int | None = None):
    """Reduce ``a`` in place to reduced row-echelon form.

    Only the first ``ncols`` columns are used for pivots; trailing columns
    (an augmented block) ride along.  Pivot choice: first nonzero entry at
    or below the current row.  Returns the pivot column list.
    """
    rows = a.shape[0]
    ncols = a.shape[1] if ncols is None else ncols
    pivots = []
    r = 0
    for c in range(ncols):
        if r == rows:
            break
        nz = np.flatnonzero(a[r:, c])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            a[[r, p]] = a[[p, r]]
        inv = field.inv(int(a[r, c]))
        if inv != 1:
            a[r] = field.scale(inv, a[r])
        for i in np.flatnonzero(a[:, c]):
            if i != r:
                a[i] ^= field.scale(int(a[i, c]), a[r])
        pivots.append(c)
        r += 1
    return pivots


def mat_rank(A: FieldMatrix) -> int:
    if A.rows == 0 or A.cols == 0:
        return 0
    return len(_eliminate(A.field, A.data.copy()))


def mat_invert(A: FieldMatrix) -> FieldMatrix:
    if A.rows != A.cols:
        raise ValueError(f"cannot invert non-square {A.shape} matrix")
    n = A.rows
    aug = np.concatenate([A.data, np.eye(n, dtype=np.int64)], axis=1)
    if len(_eliminate(A.field, aug, n)) < n:
        raise SingularMatrix(f"{n}x{n} matrix is singular")
    return FieldMatrix(A.field, aug[:, n:].copy())


def solve_system(A: FieldMatrix, w: FieldMatrix) -> FieldMatrix:
    """Solve ``A c = w`` for square nonsingular ``A`` (``w`` may have
    several columns)."""
    if A.rows != A.cols:
        raise ValueError(f"coefficient matrix must be square, got {A.shape}")
    if w.rows != A.rows:
        raise ValueError(f"right-hand side has {w.rows} rows, expected {A.rows}")
    n = A.rows
    aug = np.concatenate([A.data, w.data], axis=1)
    if len(_eliminate(A.field, aug, n)) < n:
        raise SingularMatrix(f"{n}x{n} system is singular")
    return FieldMatrix(A.field, aug[:, n:].copy())
