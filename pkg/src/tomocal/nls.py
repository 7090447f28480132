"""Derivative-free bound-constrained minimizers with hard evaluation budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoundBox


class BudgetExhausted(Exception):
    pass


class BudgetCounter:
    """Wraps an objective and refuses to evaluate past ``budget`` calls."""

    def __init__(self, f, budget):
        if budget < 1:
            raise ValueError("budget must be >= 1")
        self.f = f
        self.budget = int(budget)
        self.used = 0

    @property
    def remaining(self):
        return self.budget - self.used

    def __call__(self, p):
        if self.used >= self.budget:
            raise BudgetExhausted
        self.used += 1
        return float(self.f(p))


@dataclass
class SearchResult:
    argmin: np.ndarray
    fmin: float
    evals: int
    converged: bool


def stencil_search_min(f, box, budget, start=None, min_scale=1e-6):
    """Coordinate stencil search on a box, implicit-filtering style.

    At scale ``h = 2**-j * (hi - lo)`` (starting at ``j = 1``) the ``2N``
    points ``p +/- h e_i`` are evaluated, clipped to the box; the center moves
    to the best strict improvement, otherwise the scale is halved. The search
    ends when the budget is spent (``converged=False``) or ``h`` drops below
    ``min_scale * (hi - lo)``.
    """
    if not isinstance(box, BoundBox):
        box = BoundBox(*box)
    if box.dim == 0:
        raise ValueError("empty bound box")
    width = box.width
    counter = BudgetCounter(f, budget)
    p = box.center if start is None else box.clip(start)
    fp = counter(p)
    if not math.isfinite(fp):
        raise ValueError("objective is not finite at the starting point")

    scale = 0.5
    converged = False
    try:
        while True:
            if scale < min_scale:
                converged = True
                break
            best_p, best_f = None, fp
            for i in range(box.dim):
                if width[i] == 0:
                    continue
                for sign in (1.0, -1.0):
                    q = p.copy()
                    q[i] = min(max(p[i] + sign * scale * width[i], box.lo[i]), box.hi[i])
                    if q[i] == p[i]:
                        continue
                    fq = counter(q)
                    if fq < best_f:
                        best_p, best_f = q, fq
            if best_p is None:
                scale *= 0.5
            else:
                p, fp = best_p, best_f
    except BudgetExhausted:
        if best_p is not None:
            p, fp = best_p, best_f
    return SearchResult(p, fp, counter.used, converged)


_GOLD = 0.5 * (3.0 - math.sqrt(5.0))


def golden_parabolic_min(f, lo, hi, tol=1e-6, budget=500):
    """Brent's bounded scalar minimization (golden section + parabolic steps).

    Works like MATLAB's ``fminbnd``: the returned point is within ``tol`` of a
    local minimizer unless the budget runs out first.
    """
    lo = float(lo)
    hi = float(hi)
    if not lo < hi:
        raise ValueError("need lo < hi")
    if tol <= 0:
        raise ValueError("tol must be positive")
    counter = BudgetCounter(lambda t: f(np.array([t])), budget)

    a, b = lo, hi
    x = w = v = a + _GOLD * (b - a)
    e = 0.0
    d = 0.0
    try:
        fx = counter(x)
    except BudgetExhausted:  # pragma: no cover - budget >= 1
        raise
    best_x, best_f = x, fx
    fw = fv = fx
    eps = math.sqrt(np.finfo(float).eps)
    converged = False
    try:
        while True:
            xm = 0.5 * (a + b)
            tol1 = eps * abs(x) + tol / 3.0
            tol2 = 2.0 * tol1
            if abs(x - xm) <= tol2 - 0.5 * (b - a):
                converged = True
                break
            golden = True
            if abs(e) > tol1:
                r = (x - w) * (fx - fv)
                q = (x - v) * (fx - fw)
                p = (x - v) * q - (x - w) * r
                q = 2.0 * (q - r)
                if q > 0.0:
                    p = -p
                q = abs(q)
                r, e = e, d
                if abs(p) < abs(0.5 * q * r) and p > q * (a - x) and p < q * (b - x):
                    d = p / q
                    u = x + d
                    if u - a < tol2 or b - u < tol2:
                        d = tol1 if xm >= x else -tol1
                    golden = False
            if golden:
                e = (b - x) if x < xm else (a - x)
                d = _GOLD * e
            u = x + (d if abs(d) >= tol1 else (tol1 if d > 0 else -tol1))
            fu = counter(u)
            if fu < best_f:
                best_x, best_f = u, fu
            if fu <= fx:
                if u < x:
                    b = x
                else:
                    a = x
                v, fv = w, fw
                w, fw = x, fx
                x, fx = u, fu
            else:
                if u < x:
                    a = u
                else:
                    b = u
                if fu <= fw or w == x:
                    v, fv = w, fw
                    w, fw = u, fu
                elif fu <= fv or v == x or v == w:
                    v, fv = u, fu
    except BudgetExhausted:
        pass
    return SearchResult(np.array([best_x]), best_f, counter.used, converged)
