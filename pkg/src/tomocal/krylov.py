"""Golub-Kahan bidiagonalization and hybrid LSQR with (weighted) GCV."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from . import direct_reg

BREAKDOWN_TOL = 1e-14


@dataclass
class BidiagFactor:
    """State after ``k`` Golub-Kahan steps.

    ``A V[:, :k] = U[:, :k+1] B`` with ``B`` lower bidiagonal of size
    ``(k+1) x k``. ``alphas`` and ``betas`` hold the diagonal and
    ``beta_1 ... beta_{k+1}`` respectively.
    """

    beta1: float
    U: list
    V: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    breakdown: bool = False

    @property
    def k(self):
        return len(self.alphas)

    @property
    def B(self):
        k = self.k
        B = np.zeros((k + 1, k))
        for j in range(k):
            B[j, j] = self.alphas[j]
            B[j + 1, j] = self.betas[j + 1]
        return B

    def U_matrix(self):
        return np.column_stack(self.U)

    def V_matrix(self):
        return np.column_stack(self.V) if self.V else np.zeros((0, 0))


def _as_operator(A):
    return aslinearoperator(A)


def start_bidiag(b):
    b = np.asarray(b, dtype=float)
    beta1 = float(np.linalg.norm(b))
    if beta1 == 0:
        raise ValueError("right-hand side is zero")
    return BidiagFactor(beta1, [b / beta1], betas=[beta1])


def golub_kahan_step(A, state, reorthogonalize=True):
    """Append ``alpha_{k+1}, v_{k+1}, beta_{k+2}, u_{k+2}`` to ``state``.

    A step whose ``alpha`` or ``beta`` falls below 1e-14 marks the factor as
    broken down; the caller should stop iterating.
    """
    if state.breakdown:
        return state
    op = _as_operator(A)
    u = state.U[-1]
    v = op.rmatvec(u)
    if state.V:
        v = v - state.betas[-1] * state.V[-1]
        if reorthogonalize:
            Vm = np.column_stack(state.V)
            v = v - Vm @ (Vm.T @ v)
            v = v - Vm @ (Vm.T @ v)
    alpha = float(np.linalg.norm(v))
    if alpha < BREAKDOWN_TOL:
        state.breakdown = True
        return state
    v = v / alpha
    u_new = op.matvec(v) - alpha * u
    if reorthogonalize:
        Um = np.column_stack(state.U)
        u_new = u_new - Um @ (Um.T @ u_new)
        u_new = u_new - Um @ (Um.T @ u_new)
    beta = float(np.linalg.norm(u_new))
    state.alphas.append(alpha)
    state.V.append(v)
    if beta < BREAKDOWN_TOL:
        state.betas.append(0.0)
        state.U.append(np.zeros_like(u))
        state.breakdown = True
    else:
        state.betas.append(beta)
        state.U.append(u_new / beta)
    return state


def projected_tikhonov(B, beta1, lam):
    """Solve ``min ||B y - beta1 e1||^2 + lam^2 ||y||^2`` by a stacked dense lstsq."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    kp1, k = B.shape
    rhs = np.zeros(kp1 + k)
    rhs[0] = beta1
    M = np.vstack([B, lam * np.eye(k)])
    y, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return y


@dataclass
class HybridOptions:
    max_k: int = 50
    w: float = 0.8
    regularize: str = "wgcv"
    stop_tol: float = 1e-4
    reorthogonalize: bool = True

    def __post_init__(self):
        if self.max_k < 1:
            raise ValueError("max_k must be >= 1")
        if self.stop_tol <= 0:
            raise ValueError("stop_tol must be positive")
        if self.regularize not in ("none", "gcv", "wgcv"):
            raise ValueError("regularize must be none, gcv or wgcv")


@dataclass
class HybridStep:
    k: int
    lam: float
    gcv: float
    residual: float


@dataclass
class HybridResult:
    x: np.ndarray
    trace: list
    stop_reason: str
    factor: BidiagFactor


def hybrid_lsqr(A, b, opts=None, callback=None):
    """LSQR with Tikhonov regularization of the projected problem.

    At step ``k`` the bidiagonal ``B_k`` gets a regularization parameter from
    (weighted) GCV over ``[1e-6 sigma_max(B_k), sigma_max(B_k)]``; with
    ``regularize='none'`` every ``lambda_k = 0`` and this is plain LSQR.
    ``callback(k, x_k)`` is invoked after every step.
    """
    opts = opts or HybridOptions()
    b = np.asarray(b, dtype=float)
    op = _as_operator(A)
    state = start_bidiag(b)
    w = {"none": 1.0, "gcv": 1.0, "wgcv": opts.w}[opts.regularize]

    trace = []
    x = np.zeros(op.shape[1])
    reason = "max_k"
    flat = 0
    for k in range(1, opts.max_k + 1):
        golub_kahan_step(op, state, opts.reorthogonalize)
        if state.k < k:
            reason = "breakdown"
            break
        B = state.B
        lam, gval = 0.0, math.nan
        if opts.regularize != "none":
            s = direct_reg.svd(B)
            rhs = np.zeros(k + 1)
            rhs[0] = state.beta1
            smax = float(s.sigma[0])
            if smax > 0:
                lam = direct_reg.minimize_gcv(s, rhs, w, bracket=(1e-6 * smax, smax))
                gval = direct_reg.gcv_value(s, rhs, lam, w)
        y = projected_tikhonov(B, state.beta1, lam)
        x = state.V_matrix() @ y
        res = float(np.linalg.norm(op.matvec(x) - b))
        trace.append(HybridStep(k, lam, gval, res))
        if callback is not None:
            callback(k, x)
        if state.breakdown:
            reason = "breakdown"
            break
        if opts.regularize != "none" and k > 1:
            g1 = trace[0].gcv
            if abs(gval - trace[-2].gcv) <= opts.stop_tol * g1:
                flat += 1
            else:
                flat = 0
            if flat >= 3:
                reason = "gcv_flat"
                break
    return HybridResult(x, trace, reason, state)
