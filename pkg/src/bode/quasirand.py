"""Sobol low-discrepancy sequence generator.

Builds per-dimension direction numbers from the bundled Joe-Kuo table
(primitive polynomial degree ``s``, coefficient word ``a`` and initial odd
integers ``m_1..m_s`` per dimension), extends them with the standard XOR
recurrence, and emits points of the base-2 digital net either in Gray-code
order (O(1) per point, the default) or by direct binary expansion of the
point index.  Both orderings enumerate the same point set over any block
``[0, 2^k)`` and start at the all-zeros point for index 0.
"""

from __future__ import annotations

import importlib.resources

import numpy as np

MAX_BITS = 30
_SCALE = float(2**MAX_BITS)


class UnsupportedDimensionError(ValueError):
    """Requested dimension exceeds the bundled direction-number table."""


def _load_table() -> list[tuple[int, int, list[int]]]:
    """Parse the bundled table into (degree, coefficients, m-values) rows.

    Row ``i`` of the result describes dimension ``i + 2``; dimension 1 is the
    van der Corput sequence (all m_j = 1) and carries no table row.
    """
    text = (
        importlib.resources.files("bode.data")
        .joinpath("joe_kuo_directions.txt")
        .read_text()
    )
    rows = []
    for line in text.splitlines()[1:]:
        parts = line.split()
        if not parts:
            continue
        d, s, a = int(parts[0]), int(parts[1]), int(parts[2])
        m = [int(x) for x in parts[3:]]
        if len(m) != s:
            raise ValueError(f"malformed direction-number row for dimension {d}")
        rows.append((s, a, m))
    return rows


_TABLE = _load_table()


def max_supported_dimension() -> int:
    return len(_TABLE) + 1


def _direction_numbers(dimension: int) -> np.ndarray:
    """Scaled direction numbers V[d, j] = v_{d,j+1} * 2^MAX_BITS, shape (dimension, MAX_BITS)."""
    v = np.zeros((dimension, MAX_BITS), dtype=np.int64)
    # dimension index 0: van der Corput, m_j = 1 for every j
    for j in range(MAX_BITS):
        v[0, j] = 1 << (MAX_BITS - (j + 1))
    for d in range(1, dimension):
        s, a, m = _TABLE[d - 1]
        col = [0] * MAX_BITS
        for j in range(min(s, MAX_BITS)):
            col[j] = m[j] << (MAX_BITS - (j + 1))
        for j in range(s, MAX_BITS):
            acc = col[j - s] ^ (col[j - s] >> s)
            for k in range(1, s):
                if (a >> (s - 1 - k)) & 1:
                    acc ^= col[j - k]
            col[j] = acc
        v[d] = col
    return v


class SobolGenerator:
    """Stateful Sobol point stream over the unit hypercube.

    Parameters
    ----------
    dimension : int
        Number of coordinates per point, between 1 and
        ``max_supported_dimension()``.
    seed_skip : int
        Number of leading points of the sequence to discard.  The sequence
        itself always begins with the all-zeros point at index 0.
    gray_code : bool
        Use Gray-code ordering (default).  When False, points are produced by
        direct binary expansion of the running index; the two orderings
        enumerate identical blocks of size any power of two.

    A generator instance is single-consumer: `next_point` mutates the
    counter.  Independent instances never share state.
    """

    def __init__(self, dimension: int, seed_skip: int = 0, gray_code: bool = True):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if dimension > max_supported_dimension():
            raise UnsupportedDimensionError(
                f"dimension {dimension} exceeds the bundled direction-number "
                f"table (max {max_supported_dimension()})"
            )
        if seed_skip < 0:
            raise ValueError("seed_skip must be >= 0")
        self.dimension = dimension
        self.max_bits = MAX_BITS
        self.gray_code = gray_code
        self.direction_numbers = _direction_numbers(dimension)
        self.counter = 0
        self._state = np.zeros(dimension, dtype=np.int64)
        for _ in range(seed_skip):
            self._advance()

    def _advance(self) -> None:
        if self.counter >= (1 << MAX_BITS) - 1:
            raise RuntimeError("Sobol stream exhausted (2^30 points)")
        if self.gray_code:
            # index of the lowest zero bit of the old counter drives the
            # Gray-code transition X_{n+1} = X_n ^ V_c
            n, c = self.counter, 0
            while n & 1:
                n >>= 1
                c += 1
            self._state ^= self.direction_numbers[:, c]
        self.counter += 1

    def _point_binary(self, n: int) -> np.ndarray:
        x = np.zeros(self.dimension, dtype=np.int64)
        m = 0
        while n:
            if n & 1:
                x ^= self.direction_numbers[:, m]
            n >>= 1
            m += 1
        return x

    def next_point(self) -> np.ndarray:
        """Emit the point at the current counter and advance."""
        if self.gray_code:
            x = self._state / _SCALE
        else:
            x = self._point_binary(self.counter) / _SCALE
        self._advance()
        return x

    def take(self, n: int) -> np.ndarray:
        """Emit the next ``n`` points as an (n, dimension) array."""
        return np.array([self.next_point() for _ in range(n)])


def init_sobol(dimension: int, seed_skip: int = 0, gray_code: bool = True) -> SobolGenerator:
    """Construct a generator; see `SobolGenerator`."""
    return SobolGenerator(dimension, seed_skip=seed_skip, gray_code=gray_code)
