"""Small dense matrix kernel: vec, vech, Kronecker, commutation and duplication matrices.

Matrices are plain 2-D ``numpy`` arrays. ``vech`` uses the lower-triangular,
column-major ordering: elements ``(i, j)`` with ``i >= j``, column ``j``
ascending and row ``i`` ascending within each column. Every helper here
(and every moment formula built on top of them) assumes that ordering.
"""

from __future__ import annotations

import math

import numpy as np

SYMMETRY_RTOL = 1e-9


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _require_square(a: np.ndarray) -> None:
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")


def kron(a, b) -> np.ndarray:
    """Kronecker product; block ``(i, j)`` of the result is ``a[i, j] * b``."""
    return np.kron(_as_matrix(a), _as_matrix(b))


def vec(c) -> np.ndarray:
    """Stack the columns of ``c`` into one vector."""
    return _as_matrix(c).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape((rows, cols), order="F")


def vech_length(g: int) -> int:
    return g * (g + 1) // 2


def vech_side(k: int) -> int:
    """Return ``g`` such that ``g(g+1)/2 == k``; raise if no such ``g`` exists."""
    g = (math.isqrt(8 * k + 1) - 1) // 2
    if k < 1 or vech_length(g) != k:
        raise ValueError(f"length {k} is not of the form g(g+1)/2")
    return g


def vech_indices(g: int) -> list[tuple[int, int]]:
    """Matrix positions ``(i, j)`` in vech order."""
    return [(i, j) for j in range(g) for i in range(j, g)]


def vech_position(i: int, j: int, g: int) -> int:
    """Index of matrix element ``(i, j)`` (either triangle) inside ``vech``."""
    if i < j:
        i, j = j, i
    # columns 0..j-1 contribute g, g-1, ..., g-j+1 entries
    return j * g - j * (j - 1) // 2 + (i - j)


def diagonal_positions(g: int) -> np.ndarray:
    """Indices of the diagonal elements ``(j, j)`` inside ``vech``."""
    return np.array([vech_position(j, j, g) for j in range(g)], dtype=int)


def vech(b) -> np.ndarray:
    b = _as_matrix(b)
    _require_square(b)
    return b.T[np.triu_indices(b.shape[0])]


def vech_inverse(v) -> np.ndarray:
    """Rebuild the symmetric matrix whose ``vech`` is ``v``."""
    v = np.asarray(v, dtype=float).ravel()
    g = vech_side(v.size)
    out = np.zeros((g, g))
    out.T[np.triu_indices(g)] = v
    lower = np.tril(out, -1)
    return out + lower.T


def commutation_matrix(m: int, n: int) -> np.ndarray:
    """The ``mn x mn`` permutation ``K`` with ``K @ vec(C) == vec(C.T)`` for ``m x n`` C."""
    k = np.zeros((m * n, m * n))
    for i in range(m):
        for j in range(n):
            k[i * n + j, j * m + i] = 1.0
    return k


def duplication_matrix(n: int) -> np.ndarray:
    """The ``n^2 x n(n+1)/2`` matrix ``D`` with ``D @ vech(B) == vec(B)`` for symmetric B."""
    d = np.zeros((n * n, vech_length(n)))
    for j in range(n):
        for i in range(n):
            d[j * n + i, vech_position(i, j, n)] = 1.0
    return d


def duplication_pinv(n: int) -> np.ndarray:
    """Moore-Penrose inverse of the duplication matrix, ``(D'D)^{-1} D'``.

    ``D`` has full column rank, so the closed form applies; ``D'D`` is diagonal
    (1 for diagonal positions, 2 for off-diagonal ones).
    """
    d = duplication_matrix(n)
    dtd = d.T @ d
    return np.linalg.solve(dtd, d.T)


def symmetry_gap(a) -> float:
    """Largest ``|a_ij - a_ji|``."""
    a = _as_matrix(a)
    _require_square(a)
    return float(np.max(np.abs(a - a.T))) if a.size else 0.0


def is_symmetric(a, rtol: float = SYMMETRY_RTOL) -> bool:
    a = _as_matrix(a)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return symmetry_gap(a) <= rtol * scale


def _det_cofactor(a: np.ndarray) -> float:
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    if n == 2:
        return float(a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0])
    total = 0.0
    for j in range(n):
        if a[0, j] == 0.0:
            continue
        minor = np.delete(a[1:], j, axis=1)
        total += (-1) ** j * a[0, j] * _det_cofactor(minor)
    return total


def det(a) -> float:
    """Determinant: cofactor expansion up to 4x4, LU (partial pivoting) above."""
    a = _as_matrix(a)
    _require_square(a)
    if a.shape[0] == 0:
        return 1.0
    if a.shape[0] <= 4:
        return _det_cofactor(a)
    return float(np.linalg.det(a))


def trace(a) -> float:
    a = _as_matrix(a)
    _require_square(a)
    return float(np.trace(a))


def is_positive_definite(a, rtol: float = SYMMETRY_RTOL) -> bool:
    """Sylvester's criterion: every leading principal minor is positive."""
    a = _as_matrix(a)
    _require_square(a)
    if not is_symmetric(a, rtol):
        raise ValueError("positive-definiteness test needs a symmetric matrix")
    return all(det(a[:k, :k]) > 0.0 for k in range(1, a.shape[0] + 1))


def is_positive_semidefinite(a, atol: float = 1e-10) -> bool:
    a = _as_matrix(a)
    _require_square(a)
    if a.size == 0:
        return True
    sym = 0.5 * (a + a.T)
    scale = max(1.0, float(np.max(np.abs(sym))))
    return bool(np.min(np.linalg.eigvalsh(sym)) >= -atol * scale)
