"""Small dense linear algebra helpers.

Matrices are plain ``float64`` numpy arrays in C (row-major) order. The
compact SVD is computed from a Jacobi eigendecomposition of the r x r Gram
matrix, which is all we need for thin adapter factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-8
ORACLE_SIZE_CAP = 4096


class ShapeError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


class SizeCapError(ValueError):
    pass


def as_matrix(x) -> np.ndarray:
    """Coerce to a finite 2-D float64 C-ordered array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ValueError("matrix product overflowed")
    return out


def kron(a, b, cap: int = ORACLE_SIZE_CAP) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    rows = a.shape[0] * b.shape[0]
    cols = a.shape[1] * b.shape[1]
    if rows > cap or cols > cap:
        raise SizeCapError(f"Kronecker product {rows}x{cols} exceeds the {cap}x{cap} cap")
    return np.kron(a, b)


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray  # m x r, orthonormal columns
    d: np.ndarray  # r, positive, non-increasing
    v: np.ndarray  # r x r, orthogonal

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.d) @ self.v.T


def jacobi_eigh(s: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns,
    unsorted.
    """
    a = np.array(s, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                sn = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - sn * aq
                a[:, q] = sn * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - sn * aq
                a[q, :] = sn * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - sn * vq
                v[:, q] = sn * vp + c * vq
    return np.diag(a).copy(), v


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    # largest-magnitude entry of each V column made positive; argmax picks the lowest index on ties
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] *= -1.0
            u[:, j] *= -1.0


def compact_svd(b, rank_tol: float = RANK_TOL) -> SvdResult:
    """Compact SVD ``B = U diag(d) V^T`` of a thin, full-column-rank matrix."""
    b = as_matrix(b)
    m, r = b.shape
    if m < r:
        raise ShapeError(f"compact_svd needs m >= r, got {m}x{r}")
    if r == 0:
        raise ShapeError("compact_svd needs at least one column")
    evals, v = jacobi_eigh(b.T @ b)
    order = np.argsort(-evals, kind="stable")
    evals, v = evals[order], np.ascontiguousarray(v[:, order])
    d = np.sqrt(np.clip(evals, 0.0, None))
    if d[0] == 0.0 or d[-1] <= rank_tol * d[0]:
        raise RankDeficiencyError(
            f"B is rank deficient (smallest singular value {d[-1]:.3e}, largest {d[0]:.3e}); "
            "Bayesianization assumes B has full column rank r"
        )
    u = (b @ v) / d
    _fix_signs(u, v)
    return SvdResult(u=u, d=d, v=v)


def orthonormal_complement(u: np.ndarray) -> np.ndarray:
    """Complete the orthonormal columns of ``u`` (m x r) to an m x m orthogonal matrix."""
    m, r = u.shape
    q, _ = np.linalg.qr(np.hstack([u, np.eye(m)]))
    q = q[:, :m]
    # QR may flip signs of the leading columns; restore u exactly
    q[:, :r] = u
    return q
