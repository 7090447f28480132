"""SVD-based filtered solutions and (weighted) GCV parameter choice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nls import golden_parabolic_min


@dataclass(frozen=True)
class SvdTriple:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def shape(self):
        return self.U.shape[0], self.V.shape[0]


@dataclass(frozen=True)
class FilterSpectrum:
    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if np.any(phi < 0) or np.any(phi > 1):
            raise ValueError("filter factors must lie in [0, 1]")
        object.__setattr__(self, "phi", phi)


def svd(A):
    """Thin SVD ``A = U diag(sigma) V^T`` with ``p = min(m, n)`` columns."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return SvdTriple(U, s, Vt.T)


def tikhonov_filter(sigma, lam):
    """``phi_i = sigma_i^2 / (sigma_i^2 + lam^2)``; zero where ``sigma_i = 0``.

    ``lam`` may also be an array broadcasting against ``sigma`` (one value per pair).
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    s2 = np.asarray(sigma, dtype=float) ** 2
    denom = s2 + lam * lam
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(denom > 0, s2 / denom, 0.0)
    return FilterSpectrum(phi)


def tsvd_filter(sigma, k):
    p = len(sigma)
    if not 0 <= k <= p:
        raise ValueError(f"truncation index {k} outside 0..{p}")
    phi = np.zeros(p)
    phi[:k] = 1.0
    return FilterSpectrum(phi)


def filtered_solve(s, b, phi):
    """``x = sum_i phi_i (u_i^T b / sigma_i) v_i``, skipping ``sigma_i = 0``."""
    b = np.asarray(b, dtype=float)
    if b.shape != (s.U.shape[0],):
        raise ValueError(f"b has shape {b.shape}, expected ({s.U.shape[0]},)")
    phi = phi.phi if isinstance(phi, FilterSpectrum) else np.asarray(phi, dtype=float)
    if phi.shape != s.sigma.shape:
        raise ValueError("filter spectrum length does not match the singular values")
    bhat = s.U.T @ b
    nz = s.sigma > 0
    coef = np.zeros_like(s.sigma)
    coef[nz] = phi[nz] * bhat[nz] / s.sigma[nz]
    return s.V @ coef


def gcv_value(s, b, lam, w=1.0, scale=None):
    """Weighted GCV function of the Tikhonov-filtered solution.

    ``G = n * (||(1 - phi) * bhat||^2 + ||b_perp||^2) / ((m - p) + sum(1 - w*phi))^2``
    with ``bhat = U^T b`` and ``b_perp`` the part of ``b`` outside range(U).
    ``scale`` replaces the leading ``n`` (columns of A) when given. Returns
    ``inf`` when the denominator vanishes; for ``w > 1`` it may be negative.
    """
    if w <= 0:
        raise ValueError("weight w must be positive")
    b = np.asarray(b, dtype=float)
    m, n = s.shape
    p = s.sigma.size
    phi = tikhonov_filter(s.sigma, lam).phi
    bhat = s.U.T @ b
    perp2 = float(np.sum((b - s.U @ bhat) ** 2)) if m > p else 0.0
    num = float(np.sum(((1.0 - phi) * bhat) ** 2)) + perp2
    den = (m - p) + float(np.sum(1.0 - w * phi))
    if den * den == 0:
        return math.inf
    return (n if scale is None else scale) * num / (den * den)


def gcv_bracket(sigma):
    sigma = np.asarray(sigma, dtype=float)
    pos = sigma[sigma > 0]
    if pos.size == 0:
        raise ValueError("all singular values are zero")
    return pos.min() * 1e-6, pos.max()


def minimize_gcv(s, b, w=1.0, bracket=None, tol=1e-6, n_scan=40, scale=None):
    """Regularization parameter minimizing the weighted GCV function.

    A coarse log-spaced scan picks the most promising sub-interval, which is
    then refined by bounded Brent minimization in ``log(lambda)`` to relative
    tolerance ``tol``.
    """
    lo, hi = gcv_bracket(s.sigma) if bracket is None else bracket
    if not 0 < lo < hi:
        raise ValueError("invalid lambda bracket")
    t_lo, t_hi = math.log(lo), math.log(hi)

    def g(t):
        return gcv_value(s, b, math.exp(float(np.ravel(t)[0])), w, scale)

    grid = np.linspace(t_lo, t_hi, n_scan)
    vals = np.array([g(t) for t in grid])
    if not np.any(np.isfinite(vals)):
        raise ValueError("GCV denominator degenerate over the whole bracket")
    j = int(np.argmin(vals))
    a = grid[max(j - 1, 0)]
    c = grid[min(j + 1, n_scan - 1)]
    res = golden_parabolic_min(g, a, c, tol=tol, budget=200)
    t_star = float(res.argmin[0])
    if res.fmin > vals[j]:
        t_star = float(grid[j])
    return math.exp(t_star)
