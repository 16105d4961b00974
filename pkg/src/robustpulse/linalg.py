"""Dense complex linear algebra used by every layer of the package.

Everything here works on plain ``numpy.ndarray`` with dtype complex128.
The matrix exponential is a fixed Pade(13) scaling-and-squaring
implementation; it is the accuracy reference for the propagation
backends, so it deliberately avoids shortcuts.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "kron",
    "kron_all",
    "vec",
    "unvec",
    "dagger",
    "frobenius_norm",
    "trace_inner",
    "expm",
    "is_hermitian",
]


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the row-major convention of numpy."""
    return np.kron(np.asarray(a), np.asarray(b))


def kron_all(mats) -> np.ndarray:
    """Kronecker product of a sequence of matrices, left to right."""
    mats = list(mats)
    if not mats:
        raise ValueError("kron_all needs at least one matrix")
    out = np.asarray(mats[0])
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorisation: columns of ``a`` stacked top to bottom.

    With this convention vec(A X B) = (B^T kron A) vec(X).
    """
    return np.asarray(a).reshape(a.shape[0] * a.shape[1], order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    """Inverse of :func:`vec` for a square matrix."""
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"vector of size {v.size} is not a vectorised square matrix")
    return v.reshape(d, d, order="F")


def dagger(a: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.conj(np.asarray(a)).T


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a)))


def trace_inner(a: np.ndarray, b: np.ndarray) -> complex:
    """Hilbert-Schmidt inner product tr(a^dag b)."""
    return complex(np.sum(np.conj(a) * b))


def is_hermitian(a: np.ndarray, tol: float = 1e-12) -> bool:
    """Entrywise check |a - a^dag| <= tol."""
    a = np.asarray(a)
    if a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a - dagger(a))) <= tol)


# Pade(13) numerator coefficients (Higham, "Functions of Matrices", alg 10.20).
_PADE13 = np.array(
    [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ]
)

# 1-norm threshold below which the unscaled Pade(13) approximant is
# accurate to double precision.
_THETA13 = 5.371920351148152


def expm(a: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring with a Pade(13) core.

    Parameters
    ----------
    a : ndarray
        Square complex matrix.

    Returns
    -------
    ndarray
        exp(a), complex128.
    """
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError("expm expects a square matrix")
    norm = np.linalg.norm(a, 1)
    if not np.isfinite(norm):
        raise ValueError("expm input contains non-finite entries")

    s = 0
    if norm > _THETA13:
        s = int(np.ceil(np.log2(norm / _THETA13)))
        a = a / (2.0**s)

    b = _PADE13
    ident = np.eye(n, dtype=np.complex128)
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (
        a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
        + b[7] * a6
        + b[5] * a4
        + b[3] * a2
        + b[1] * ident
    )
    v = (
        a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
        + b[6] * a6
        + b[4] * a4
        + b[2] * a2
        + b[0] * ident
    )
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r
