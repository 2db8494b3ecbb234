"""Dense small-matrix primitives: products, norms, Haar-orthogonal sampling, SVD.

A "matrix" throughout this package is a 2-D C-contiguous float64 numpy array.
Everything here is sized for the tiny matrices the agents use (up to a few
hundred rows/columns); there is no sparse or blocked path.

``matmul`` is intentionally *not* BLAS-backed: it accumulates each output
entry left-to-right over the inner dimension, so repeated calls with the same
inputs are bit-identical and the result matches a plain triple loop exactly.
That pinned accumulation order is what the reproducibility guarantees of the
training stack rest on.
"""

from __future__ import annotations

import numpy as np
from numba import njit


class LinalgError(RuntimeError):
    """Raised when an iterative factorization fails to converge."""


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D C-contiguous float64 array without copying if possible."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def validate_finite(a: np.ndarray, what: str = "matrix") -> None:
    """Hard-fail on NaN/inf entries; called at trust boundaries, not per op."""
    if not np.isfinite(a).all():
        raise ValueError(f"{what} contains non-finite entries")


@njit(cache=True)
def _matmul_kernel(a, b, out):
    n, kk = a.shape
    m = b.shape[1]
    for i in range(n):
        for k in range(kk):
            aik = a[i, k]
            for j in range(m):
                out[i, j] += aik * b[k, j]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a fixed left-to-right accumulation order.

    Each entry out[i, j] is the sum over k of a[i, k] * b[k, j], added in
    increasing k with no fused multiply-add, so the result is bitwise equal
    to the naive triple loop and identical across repeated calls.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul dimension mismatch: {a.shape[0]}x{a.shape[1]} @ "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    out = np.zeros((a.shape[0], b.shape[1]))
    _matmul_kernel(a, b, out)
    return out


def transpose(a: np.ndarray) -> np.ndarray:
    """Explicit transposed copy (matrices are small enough not to care)."""
    return np.ascontiguousarray(as_matrix(a).T)


def frobenius_norm_sq(a: np.ndarray) -> float:
    """Sum of squared entries."""
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


def _householder_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR of a tall matrix (rows >= cols) via Householder reflectors.

    Returns (Q, R) with Q of shape (m, n) having orthonormal columns.
    """
    m, n = a.shape
    r = a.copy()
    # Store reflectors to build the thin Q afterwards.
    vs = []
    for k in range(n):
        x = r[k:, k].copy()
        alpha = np.sqrt(np.sum(x * x))
        if alpha == 0.0:
            vs.append(None)
            continue
        if x[0] >= 0.0:
            alpha = -alpha
        v = x.copy()
        v[0] -= alpha
        vnorm = np.sqrt(np.sum(v * v))
        if vnorm == 0.0:
            vs.append(None)
            continue
        v /= vnorm
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        vs.append(v)
    # Accumulate Q by applying the reflectors to the first n columns of I.
    q = np.zeros((m, n))
    for j in range(n):
        q[j, j] = 1.0
    for k in range(n - 1, -1, -1):
        v = vs[k]
        if v is None:
            continue
        q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    return q, r[:n, :]


def qr_haar(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a rows x cols matrix whose min-dimension vectors are orthonormal.

    QR of a standard-Gaussian matrix with the columns of Q sign-corrected by
    sign(diag(R)), which makes the draw Haar-uniform over the orthogonal
    group. Wide requests are generated in the tall orientation and transposed
    back, so for rows <= cols the rows are orthonormal and for rows >= cols
    the columns are.
    """
    if rows < 1 or cols < 1:
        raise ValueError(f"qr_haar needs positive dimensions, got ({rows}, {cols})")
    tall = rows >= cols
    m, n = (rows, cols) if tall else (cols, rows)
    g = rng.standard_normal((m, n))
    q, r = _householder_qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    q = q * signs[np.newaxis, :]
    return np.ascontiguousarray(q if tall else q.T)


@njit(cache=True)
def _jacobi_sweeps(u, max_sweeps, tol):
    """One-sided Jacobi on the columns of the tall matrix u, in place.

    Rotates column pairs until every pair is numerically orthogonal. Returns
    (sweeps_used, residual) where residual is the largest normalized
    off-diagonal Gram entry remaining; residual <= tol means converged.
    """
    m, n = u.shape
    resid = 0.0
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = 0.0
                aqq = 0.0
                apq = 0.0
                for i in range(m):
                    app += u[i, p] * u[i, p]
                    aqq += u[i, q] * u[i, q]
                    apq += u[i, p] * u[i, q]
                if app == 0.0 or aqq == 0.0:
                    continue
                scale = np.sqrt(app * aqq)
                rel = abs(apq) / scale
                if rel > off:
                    off = rel
                if rel <= tol:
                    continue
                # Classic two-by-two symmetric rotation annihilating apq.
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for i in range(m):
                    uip = u[i, p]
                    uiq = u[i, q]
                    u[i, p] = c * uip - s * uiq
                    u[i, q] = s * uip + c * uiq
        resid = off
        if off <= tol:
            return sweep + 1, resid
    return max_sweeps, resid


_JACOBI_TOL = 1e-14
_JACOBI_MAX_SWEEPS = 100


def svd_values(a: np.ndarray) -> np.ndarray:
    """Singular values in descending order via one-sided Jacobi iteration.

    Works on the tall orientation so the rotation count scales with the
    smaller dimension. Absolute accuracy is ~1e-10 * sigma_max for the matrix
    sizes this package uses (<= 512 per side).
    """
    a = as_matrix(a)
    validate_finite(a, "svd input")
    if a.shape[0] < a.shape[1]:
        u = transpose(a)
    else:
        u = a.copy()
    if u.shape[1] == 0 or u.shape[0] == 0:
        return np.zeros(0)
    sweeps, resid = _jacobi_sweeps(u, _JACOBI_MAX_SWEEPS, _JACOBI_TOL)
    if resid > _JACOBI_TOL:
        raise LinalgError(
            f"Jacobi SVD did not converge in {_JACOBI_MAX_SWEEPS} sweeps; "
            f"residual off-diagonal mass {resid:.3e}"
        )
    sv = np.sqrt(np.sum(u * u, axis=0))
    sv.sort()
    return sv[::-1].copy()
