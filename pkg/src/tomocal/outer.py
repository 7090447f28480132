"""Alternating minimization over image and geometry, with acceleration.

All schemes share one problem description (``Problem``) and one set of
solver options (``OuterOptions``), and emit a ``SolveTrace`` whose row 0
holds the errors of the initial guesses.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import krylov, nls
from .geometry import AngleBlockPartition, GeometryBounds, GeometryParams, relative_error
from .projector import DetectorSpec, apply, assemble, project_block


@dataclass
class Problem:
    b: np.ndarray
    partition: AngleBlockPartition
    det: DetectorSpec
    side: int
    bounds: GeometryBounds = field(default_factory=GeometryBounds)
    x_true: np.ndarray | None = None
    r_true: GeometryParams | None = None

    def block_rows(self, i):
        views = self.partition.views(i)
        return slice(views.start * self.det.n_det, views.stop * self.det.n_det)

    def block_data(self, i):
        return self.b[self.block_rows(i)]


@dataclass
class OuterOptions:
    hybrid: krylov.HybridOptions = field(default_factory=krylov.HybridOptions)
    budget: int = 100
    nls_solver: str = "stencil"
    golden_tol: float = 1e-4
    max_outer: int = 20
    tol: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if self.nls_solver not in ("stencil", "golden"):
            raise ValueError("nls_solver must be 'stencil' or 'golden'")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


@dataclass
class TraceRow:
    iter: int
    rel_err_d: float | None
    rel_err_dtheta: float | None
    rel_err_x: float | None
    secs_geometry: float
    secs_image: float
    objective: float


@dataclass
class SolveTrace:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], dtype=float)


@dataclass
class SolveResult:
    x: np.ndarray
    r: GeometryParams
    trace: SolveTrace


def _errors(problem, x, r):
    err_d = err_t = err_x = None
    if problem.r_true is not None:
        if r.active in ("d", "both"):
            err_d = relative_error(r.d, problem.r_true.d)
        if r.active in ("dtheta", "both") and np.linalg.norm(problem.r_true.dtheta) > 0:
            err_t = relative_error(r.dtheta, problem.r_true.dtheta)
    if problem.x_true is not None and np.linalg.norm(problem.x_true) > 0:
        err_x = relative_error(x, problem.x_true)
    return err_d, err_t, err_x


def _row(problem, k, x, r, A, secs_geom, secs_img):
    err_d, err_t, err_x = _errors(problem, x, r)
    obj = float(np.linalg.norm(apply(A, x) - problem.b))
    return TraceRow(k, err_d, err_t, err_x, secs_geom, secs_img, obj)


# -- image and geometry sub-steps --------------------------------------------

def _image_solve(problem, r, opts):
    A = assemble(problem.partition, r, problem.det, problem.side)
    if not np.any(problem.b):
        return np.zeros(A.n_cols), A
    res = krylov.hybrid_lsqr(A, problem.b, opts.hybrid)
    return res.x, A


def image_step(problem, r, opts):
    """Regularized image for fixed geometry ``r`` (hybrid LSQR)."""
    if not r.within(problem.bounds):
        raise ValueError("geometry parameters violate their bounds")
    return _image_solve(problem, r, opts)[0]


def block_objective(problem, i, x, r):
    """``f(v) = ||A_i(r with block i set to v) x - b_i||^2``."""
    b_i = problem.block_data(i)

    def f(vec):
        pred = project_block(problem.partition, i, r.block_pair(i, vec), problem.det, problem.side, x)
        res = pred - b_i
        return float(res @ res)

    return f


def global_objective(problem, x, r):
    """``f(vec) = ||A(r from vec) x - b||^2`` over all blocks' unknowns."""
    k = 2 if r.active == "both" else 1

    def f(vec):
        total = 0.0
        for i in range(problem.partition.n_blocks):
            pair = r.block_pair(i, vec[k * i:k * (i + 1)])
            pred = project_block(problem.partition, i, pair, problem.det, problem.side, x)
            res = pred - problem.block_data(i)
            total += float(res @ res)
        return total

    return f


def _solve_block(problem, i, x, r, opts):
    f = block_objective(problem, i, x, r)
    box = problem.bounds.block_box(r.active)
    if opts.nls_solver == "golden":
        if box.dim != 1:
            raise ValueError("the golden-section solver handles one unknown per block only")
        return nls.golden_parabolic_min(f, box.lo[0], box.hi[0], opts.golden_tol, opts.budget)
    return nls.stencil_search_min(f, box, opts.budget, start=r.block_vector(i))


def geometry_step_separable(problem, x, r, opts):
    """Independent per-block searches, merged in block order."""
    x = np.asarray(x, dtype=float)
    blocks = range(problem.partition.n_blocks)
    if opts.workers and opts.workers > 1:
        with ThreadPoolExecutor(opts.workers) as pool:
            results = list(pool.map(lambda i: _solve_block(problem, i, x, r, opts), blocks))
    else:
        results = [_solve_block(problem, i, x, r, opts) for i in blocks]
    return r.join([res.argmin for res in results])


def geometry_step_joint(problem, x, r, opts):
    """One stencil search over every block's unknowns at once."""
    x = np.asarray(x, dtype=float)
    box = problem.bounds.full_box(problem.partition.n_blocks, r.active)
    res = nls.stencil_search_min(global_objective(problem, x, r), box, opts.budget, start=r.to_vector())
    return r.from_vector(res.argmin)


def _geometry(problem, x, r, opts, separable=True):
    if separable:
        return geometry_step_separable(problem, x, r, opts)
    return geometry_step_joint(problem, x, r, opts)


def _changed(x_new, x_old, tol):
    if tol <= 0:
        return True
    ref = np.linalg.norm(x_old)
    if ref == 0:
        return True
    return np.linalg.norm(x_new - x_old) / ref >= tol


# -- schemes --------------------------------------------------------------------

def _initial(problem, r0, opts):
    if not r0.within(problem.bounds):
        raise ValueError("initial geometry violates its bounds")
    t = time.perf_counter()
    x0, A = _image_solve(problem, r0, opts)
    row = _row(problem, 0, x0, r0, A, 0.0, time.perf_counter() - t)
    return x0, SolveTrace([row])


def bcd(problem, r0, opts=None, separable=True, x0=None):
    """Block coordinate descent: geometry step, then image step, repeated."""
    opts = opts or OuterOptions()
    if x0 is None:
        x, trace = _initial(problem, r0, opts)
    else:
        x, trace = np.asarray(x0, dtype=float), SolveTrace()
    r = r0
    for k in range(1, opts.max_outer + 1):
        t0 = time.perf_counter()
        r = _geometry(problem, x, r, opts, separable)
        t1 = time.perf_counter()
        x_new, A = _image_solve(problem, r, opts)
        t2 = time.perf_counter()
        trace.rows.append(_row(problem, k, x_new, r, A, t1 - t0, t2 - t1))
        moved = _changed(x_new, x, opts.tol)
        x = x_new
        if not moved:
            break
    return SolveResult(x, r, trace)


def momentum_sequence(n, t0=1.0):
    """``t_0 .. t_n`` with ``t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2``."""
    t = [t0]
    for _ in range(n):
        t.append(0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t[-1] ** 2)))
    return t


def extrapolate(w_tilde, w_tilde_prev, t_prev, t, coeff_mode="standard"):
    """Momentum step on a pair of iterates.

    ``standard``: ``w~_k + ((t_{k-1} - 1) / t_k) (w~_k - w~_{k-1})``.
    ``paper-literal``: ``w~_{k-1} + (t_{k-1} / t_k) (w~_k - w~_{k-1})``.
    """
    diff = w_tilde - w_tilde_prev
    if coeff_mode == "standard":
        return w_tilde + ((t_prev - 1.0) / t) * diff
    if coeff_mode == "paper-literal":
        return w_tilde_prev + (t_prev / t) * diff
    raise ValueError(f"unknown coeff_mode {coeff_mode!r}")


def abcd(problem, r0, opts=None, mode="x-only", coeff_mode="standard", separable=True):
    """Accelerated block coordinate descent.

    ``mode='x-only'`` extrapolates the image and keeps the freshly solved
    geometry; ``mode='both'`` extrapolates both and clips geometry to bounds.
    """
    if mode not in ("x-only", "both"):
        raise ValueError("mode must be 'x-only' or 'both'")
    opts = opts or OuterOptions()
    x, trace = _initial(problem, r0, opts)
    r = r0
    x_tilde_prev, r_tilde_prev = x, r0.to_vector()
    t_prev = 1.0
    for k in range(1, opts.max_outer + 1):
        t0 = time.perf_counter()
        r_tilde = _geometry(problem, x, r, opts, separable)
        t1 = time.perf_counter()
        x_tilde, A = _image_solve(problem, r_tilde, opts)
        t2 = time.perf_counter()

        t = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev ** 2))
        x_new = extrapolate(x_tilde, x_tilde_prev, t_prev, t, coeff_mode)
        if mode == "both":
            rv = extrapolate(r_tilde.to_vector(), r_tilde_prev, t_prev, t, coeff_mode)
            r_new = r_tilde.from_vector(rv).clipped(problem.bounds)
            A = assemble(problem.partition, r_new, problem.det, problem.side)
        else:
            r_new = r_tilde
        trace.rows.append(_row(problem, k, x_new, r_new, A, t1 - t0, t2 - t1))

        x_tilde_prev, r_tilde_prev = x_tilde, r_tilde.to_vector()
        t_prev = t
        moved = _changed(x_new, x, opts.tol)
        x, r = x_new, r_new
        if not moved:
            break
    return SolveResult(x, r, trace)


def fixed_point_g(problem, x, r, opts):
    """One BCDS sweep seen as a map on the image: returns ``(g(x), r_new)``."""
    r_new = geometry_step_separable(problem, x, r, opts)
    return image_step(problem, r_new, opts), r_new


# -- Anderson acceleration --------------------------------------------------------

class RankDeficientColumn(ValueError):
    """A column appended to the QR factors lies numerically in their span."""


@dataclass
class QRFactors:
    Q: np.ndarray
    R: np.ndarray

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 0)), np.zeros((0, 0)))

    @property
    def n_cols(self):
        return self.R.shape[0]


def qr_append_column(qr, col):
    """Add ``col`` on the right by modified Gram-Schmidt (with one re-pass)."""
    col = np.asarray(col, dtype=float)
    k = qr.n_cols
    v = col.copy()
    r = np.zeros(k + 1)
    for _ in range(2):
        for j in range(k):
            c = qr.Q[:, j] @ v
            r[j] += c
            v -= c * qr.Q[:, j]
    nrm = float(np.linalg.norm(v))
    scale = float(np.linalg.norm(col))
    if nrm <= 1e-14 * max(scale, np.finfo(float).tiny):
        raise RankDeficientColumn("new column lies in the span of the current factors")
    r[k] = nrm
    Q = np.column_stack([qr.Q, v / nrm])
    R = np.zeros((k + 1, k + 1))
    R[:k, :k] = qr.R
    R[:, k] = r
    return QRFactors(Q, R)


def qr_drop_first_column(qr):
    """Remove the leftmost column; Givens rotations restore triangularity."""
    k = qr.n_cols
    if k < 1:
        raise ValueError("no column to drop")
    Q = qr.Q.copy()
    H = qr.R[:, 1:].copy()
    for j in range(k - 1):
        a, b = H[j, j], H[j + 1, j]
        rho = math.hypot(a, b)
        if rho == 0:
            continue
        c, s = a / rho, b / rho
        G = np.array([[c, s], [-s, c]])
        H[j:j + 2, j:] = G @ H[j:j + 2, j:]
        H[j + 1, j] = 0.0
        Q[:, j:j + 2] = Q[:, j:j + 2] @ G.T
    return QRFactors(Q[:, :k - 1], H[:k - 1, :])


def alpha_from_gamma(gamma):
    """Convert unconstrained coefficients to the affine weights ``alpha``."""
    gamma = np.asarray(gamma, dtype=float)
    mk = gamma.size
    alpha = np.empty(mk + 1)
    if mk == 0:
        alpha[0] = 1.0
        return alpha
    alpha[0] = gamma[0]
    alpha[1:mk] = gamma[1:] - gamma[:-1]
    alpha[mk] = 1.0 - gamma[-1]
    return alpha


class AndersonWindow:
    """Sliding window of residual differences with maintained QR factors."""

    def __init__(self, m, n, cond_max=1e12):
        if m < 1:
            raise ValueError("memory size m must be >= 1")
        self.m = m
        self.cond_max = cond_max
        self.qr = QRFactors.empty(n)
        self.dG = []
        self.f_prev = None
        self.g_prev = None

    @property
    def size(self):
        return self.qr.n_cols

    def _drop_oldest(self):
        self.qr = qr_drop_first_column(self.qr)
        self.dG.pop(0)

    def update(self, f, g):
        """Record ``f_k = g(x_k) - x_k`` and ``g(x_k)``; return the next iterate."""
        if self.f_prev is not None:
            df = f - self.f_prev
            dg = g - self.g_prev
            if self.size == self.m:
                self._drop_oldest()
            appended = False
            while not appended:
                try:
                    self.qr = qr_append_column(self.qr, df)
                    self.dG.append(dg)
                    appended = True
                except RankDeficientColumn:
                    if self.size == 0:
                        break
                    self._drop_oldest()
            while self.size > 1 and np.linalg.cond(self.qr.R) > self.cond_max:
                self._drop_oldest()
        self.f_prev, self.g_prev = f, g
        if self.size == 0:
            return g.copy(), np.zeros(0)
        gamma = solve_upper(self.qr.R, self.qr.Q.T @ f)
        return g - np.column_stack(self.dG) @ gamma, gamma


def solve_upper(R, y):
    return solve_triangular(R, y, lower=False)


def anderson(problem, r0, opts=None, m=5, x0=None):
    """Anderson-accelerated fixed-point iteration of the BCDS image map."""
    opts = opts or OuterOptions()
    if x0 is None:
        x, trace = _initial(problem, r0, opts)
    else:
        x, trace = np.asarray(x0, dtype=float), SolveTrace()
    window = AndersonWindow(m, x.size)
    r = r0
    for k in range(1, opts.max_outer + 1):
        t0 = time.perf_counter()
        r = geometry_step_separable(problem, x, r, opts)
        t1 = time.perf_counter()
        g, A = _image_solve(problem, r, opts)
        t2 = time.perf_counter()
        x_new, _ = window.update(g - x, g)
        trace.rows.append(_row(problem, k, x_new, r, A, t1 - t0, t2 - t1))
        moved = _changed(x_new, x, opts.tol)
        x = x_new
        if not moved:
            break
    return SolveResult(x, r, trace)
