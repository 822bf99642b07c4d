"""Power method for non-negative matrices, accelerated by repeated squaring.

The iterate after ``k`` squarings is ``B**(2**k) @ x`` with ``B = A + c I`` a
shifted copy of the rescaled input ``A``. The shift leaves the eigenvectors
unchanged and makes the Perron root strictly dominant in modulus even for
periodic matrices, so the method converges on every irreducible input.

The shift must be comparable to the Perron root: ``c`` far above it makes
``B`` numerically the identity. When the column sums of ``A`` spread over more
than a factor of four, ``c`` starts from the growth rate ``|A^N|^(1/N)``
(again by squaring). Once the eigenvalue estimate settles to 1e-6 the
iteration restarts once with ``c`` equal to that estimate. After
``MAX_SQUARINGS`` squarings plain power steps with ``B`` polish the result.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

__all__ = ["ConvergenceError", "PerronResult", "perron", "perron_log"]

MAX_SQUARINGS = 64
GROWTH_SQUARINGS = 24


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its iteration budget."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class PerronResult(NamedTuple):
    value: float
    right: np.ndarray
    left: np.ndarray
    iterations: int
    residual: float


def _relative_residual(mat: np.ndarray, vec: np.ndarray, value: float) -> float:
    return float(np.max(np.abs(mat @ vec - value * vec)) / (value * np.max(vec)))


def _growth_rate(a: np.ndarray) -> float:
    """``log |A^N|^(1/N)`` for ``N = 2**GROWTH_SQUARINGS``; tends to ``log lambda``."""
    g = a.copy()
    log_norm = 0.0
    for _ in range(GROWTH_SQUARINGS):
        m = g.max()
        log_norm = 2.0 * (log_norm + np.log(m))
        g = g / m
        g = g @ g
    return (log_norm + np.log(g.max())) / 2.0**GROWTH_SQUARINGS


def _log_growth_rate(la: np.ndarray) -> float:
    g = la.copy()
    log_norm = 0.0
    for _ in range(GROWTH_SQUARINGS):
        m = g.max()
        log_norm = 2.0 * (log_norm + m)
        g = g - m
        g = logsumexp(g[:, :, None] + g[None, :, :], axis=1)
    return (log_norm + g.max()) / 2.0**GROWTH_SQUARINGS


def perron(
    matrix: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    need_left: bool = True,
    need_right: bool = True,
) -> PerronResult:
    """Dominant eigenvalue with right and left eigenvectors of a non-negative matrix.

    Both eigenvectors are returned L1-normalized. Convergence requires the
    relative residual ``|M x - lam x|_inf / (lam |x|_inf)`` of every requested
    vector and the relative change of ``lam`` between sweeps to be ``<= tol``.
    """
    mat = np.asarray(matrix, dtype=np.float64)
    n = mat.shape[0]
    if mat.ndim != 2 or mat.shape[1] != n:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if np.any(mat < 0) or not np.all(np.isfinite(mat)):
        raise ValueError("matrix must be finite and non-negative")
    if n == 1:
        one = np.ones(1)
        if mat[0, 0] <= 0:
            raise ValueError("1x1 matrix must be positive")
        return PerronResult(float(mat[0, 0]), one, one.copy(), 0, 0.0)

    col = mat.sum(axis=0)
    scale = col.max()
    if scale <= 0:
        raise ValueError("matrix is identically zero")
    a = mat / scale
    shift = 1.0 if 4.0 * col.min() >= scale else float(np.exp(_growth_rate(a)))
    b = a + shift * np.eye(n)
    q = b.copy()
    x = np.full(n, 1.0 / n)
    y = np.full(n, 1.0 / n)
    lam_prev = np.nan
    restarted = False
    squarings = 0
    residual = np.inf
    for it in range(1, max_iter + 1):
        if need_right:
            x = q @ x
            x /= x.sum()
        if need_left:
            y = q.T @ y
            y /= y.sum()
        ax = a @ x
        if need_left and need_right:
            lam = float(y @ ax / (y @ x))
        elif need_right:
            lam = float(ax.sum())
        else:
            lam = float((a.T @ y).sum())
        if lam <= 0 or not np.isfinite(lam):
            raise ConvergenceError("non-positive dominant eigenvalue estimate", it, np.inf)
        residual = 0.0
        if need_right:
            residual = max(residual, _relative_residual(a, x, lam))
        if need_left:
            residual = max(residual, _relative_residual(a.T, y, lam))
        if residual <= tol and abs(lam - lam_prev) <= tol * lam:
            return PerronResult(lam * scale, x, y, it, residual)
        if not restarted and abs(lam - lam_prev) <= 1e-6 * lam:
            restarted = True
            b = a + lam * np.eye(n)
            q = b.copy()
            squarings = 0
        elif squarings < MAX_SQUARINGS:
            q = q @ q
            q /= q.max()
            squarings += 1
        else:
            q = b
        lam_prev = lam
    raise ConvergenceError("power iteration did not converge", max_iter, residual)


def _log_matvec(log_mat: np.ndarray, log_vec: np.ndarray) -> np.ndarray:
    return logsumexp(log_mat + log_vec[None, :], axis=1)


def _log_shifted(la: np.ndarray, log_shift: float) -> np.ndarray:
    diag = np.full(la.shape, -np.inf)
    np.fill_diagonal(diag, log_shift)
    return np.logaddexp(la, diag)


def perron_log(
    log_matrix: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> PerronResult:
    """Log-domain twin of :func:`perron` for matrices whose entries under/overflow.

    ``log_matrix`` holds ``log M`` (``-inf`` for structural zeros). The returned
    ``value`` is ``log lam`` and both vectors are log-vectors normalized so that
    ``logsumexp(vec) == 0``.
    """
    lm = np.asarray(log_matrix, dtype=np.float64)
    n = lm.shape[0]
    if lm.ndim != 2 or lm.shape[1] != n:
        raise ValueError(f"expected a square matrix, got shape {lm.shape}")
    if np.any(np.isnan(lm)) or np.any(lm == np.inf):
        raise ValueError("log-matrix entries must be finite or -inf")
    if n == 1:
        zero = np.zeros(1)
        return PerronResult(float(lm[0, 0]), zero, zero.copy(), 0, 0.0)

    log_col = logsumexp(lm, axis=0)
    log_scale = float(log_col.max())
    la = lm - log_scale
    log_shift = 0.0 if log_col.min() + np.log(4.0) >= log_scale else _log_growth_rate(la)
    lb = _log_shifted(la, log_shift)
    lq = lb.copy()
    lx = np.full(n, -np.log(n))
    ly = lx.copy()
    lam_prev = np.nan
    restarted = False
    squarings = 0
    residual = np.inf
    for it in range(1, max_iter + 1):
        lx = _log_matvec(lq, lx)
        lx -= logsumexp(lx)
        ly = _log_matvec(lq.T, ly)
        ly -= logsumexp(ly)
        lax = _log_matvec(la, lx)
        lat_y = _log_matvec(la.T, ly)
        log_lam = float(logsumexp(ly + lax) - logsumexp(ly + lx))
        # entrywise relative residual: log space must resolve tiny entries too
        residual = float(max(
            np.max(np.abs(np.expm1(np.minimum(lax - log_lam - lx, 700.0)))),
            np.max(np.abs(np.expm1(np.minimum(lat_y - log_lam - ly, 700.0)))),
        ))
        if residual <= tol and abs(log_lam - lam_prev) <= tol:
            return PerronResult(log_lam + log_scale, lx, ly, it, residual)
        if not restarted and abs(log_lam - lam_prev) <= 1e-6:
            restarted = True
            lb = _log_shifted(la, log_lam)
            lq = lb.copy()
            squarings = 0
        elif squarings < MAX_SQUARINGS:
            lq = logsumexp(lq[:, :, None] + lq[None, :, :], axis=1)
            lq -= lq.max()
            squarings += 1
        else:
            lq = lb
        lam_prev = log_lam
    raise ConvergenceError("log-domain power iteration did not converge", max_iter, residual)
