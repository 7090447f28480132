"""Geometry parameters for blocked fan-beam acquisitions.

Each projection view belongs to one angle block; every block carries its own
source-to-object distance ``d`` (in units of the image half-width) and angle
offset ``dtheta`` (degrees).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVE_CHOICES = ("d", "dtheta", "both")


@dataclass(frozen=True)
class AngleBlockPartition:
    n_views: int
    n_blocks: int
    view_angles: tuple
    block_of_view: tuple

    def views(self, block):
        """Indices of the views held by ``block`` (a contiguous range)."""
        if not 0 <= block < self.n_blocks:
            raise IndexError(f"block {block} out of range 0..{self.n_blocks - 1}")
        start = (block * self.n_views) // self.n_blocks
        stop = ((block + 1) * self.n_views) // self.n_blocks
        return range(start, stop)

    def block_sizes(self):
        return [len(self.views(i)) for i in range(self.n_blocks)]

    def angles(self, block):
        return np.asarray([self.view_angles[v] for v in self.views(block)], dtype=float)


def make_partition(n_views, n_blocks, view_angles=None):
    """Split ``n_views`` views into ``n_blocks`` contiguous blocks.

    Block ``i`` holds views ``floor(i*n_views/n_blocks)`` up to
    ``floor((i+1)*n_views/n_blocks) - 1``. View angles default to
    ``0, 1, ..., n_views-1`` degrees.
    """
    n_views = int(n_views)
    n_blocks = int(n_blocks)
    if n_views < 1 or n_blocks < 1:
        raise ValueError("n_views and n_blocks must be positive")
    if n_blocks > n_views:
        raise ValueError(f"n_blocks={n_blocks} exceeds n_views={n_views}")
    if view_angles is None:
        view_angles = tuple(float(v) for v in range(n_views))
    else:
        view_angles = tuple(float(a) for a in view_angles)
        if len(view_angles) != n_views:
            raise ValueError("view_angles must have n_views entries")
    block_of_view = [0] * n_views
    for i in range(n_blocks):
        start = (i * n_views) // n_blocks
        stop = ((i + 1) * n_views) // n_blocks
        for v in range(start, stop):
            block_of_view[v] = i
    return AngleBlockPartition(n_views, n_blocks, view_angles, tuple(block_of_view))


@dataclass(frozen=True)
class BoundBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same shape")
        if np.any(lo > hi):
            raise ValueError("BoundBox requires lo <= hi componentwise")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def clip(self, p):
        return np.clip(np.asarray(p, dtype=float), self.lo, self.hi)

    def contains(self, p, tol=0.0):
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo - tol) and np.all(p <= self.hi + tol))


@dataclass(frozen=True)
class GeometryBounds:
    """Per-family bounds shared by every block."""

    d: tuple = (1.5, 2.5)
    dtheta: tuple = (-0.5, 0.5)

    def block_box(self, active):
        lo, hi = [], []
        if active in ("d", "both"):
            lo.append(self.d[0])
            hi.append(self.d[1])
        if active in ("dtheta", "both"):
            lo.append(self.dtheta[0])
            hi.append(self.dtheta[1])
        return BoundBox(lo, hi)

    def full_box(self, n_blocks, active):
        box = self.block_box(active)
        return BoundBox(np.tile(box.lo, n_blocks), np.tile(box.hi, n_blocks))


@dataclass(frozen=True)
class GeometryParams:
    d: tuple
    dtheta: tuple
    active: str = "d"

    def __post_init__(self):
        d = tuple(float(v) for v in np.atleast_1d(self.d))
        dtheta = tuple(float(v) for v in np.atleast_1d(self.dtheta))
        if len(d) != len(dtheta):
            raise ValueError("d and dtheta must both have one entry per block")
        if self.active not in ACTIVE_CHOICES:
            raise ValueError(f"active must be one of {ACTIVE_CHOICES}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "dtheta", dtheta)

    @classmethod
    def constant(cls, n_blocks, d=2.0, dtheta=0.0, active="d"):
        return cls((d,) * n_blocks, (dtheta,) * n_blocks, active)

    @property
    def n_blocks(self):
        return len(self.d)

    def block(self, i):
        return self.d[i], self.dtheta[i]

    def block_vector(self, i):
        """The unknowns of block ``i`` as a 1- or 2-vector."""
        if self.active == "d":
            return np.array([self.d[i]])
        if self.active == "dtheta":
            return np.array([self.dtheta[i]])
        return np.array([self.d[i], self.dtheta[i]])

    def with_block_vector(self, i, vec):
        d = list(self.d)
        dtheta = list(self.dtheta)
        d[i], dtheta[i] = _unpack(self.active, vec, d[i], dtheta[i])
        return GeometryParams(tuple(d), tuple(dtheta), self.active)

    def block_pair(self, i, vec):
        """(d_i, dtheta_i) with block ``i``'s unknowns replaced by ``vec``."""
        return _unpack(self.active, vec, self.d[i], self.dtheta[i])

    def split(self):
        return [self.block_vector(i) for i in range(self.n_blocks)]

    def join(self, parts):
        if len(parts) != self.n_blocks:
            raise ValueError("need one sub-vector per block")
        d = list(self.d)
        dtheta = list(self.dtheta)
        for i, vec in enumerate(parts):
            d[i], dtheta[i] = _unpack(self.active, vec, d[i], dtheta[i])
        return GeometryParams(tuple(d), tuple(dtheta), self.active)

    def to_vector(self):
        return np.concatenate(self.split()) if self.n_blocks else np.zeros(0)

    def from_vector(self, vec):
        vec = np.asarray(vec, dtype=float)
        k = 2 if self.active == "both" else 1
        if vec.size != k * self.n_blocks:
            raise ValueError("vector length does not match the active unknowns")
        return self.join([vec[k * i:k * (i + 1)] for i in range(self.n_blocks)])

    def clipped(self, bounds):
        d = np.clip(self.d, *bounds.d)
        dtheta = np.clip(self.dtheta, *bounds.dtheta)
        return GeometryParams(tuple(d), tuple(dtheta), self.active)

    def within(self, bounds, tol=1e-12):
        d = np.asarray(self.d)
        t = np.asarray(self.dtheta)
        return bool(
            np.all(d >= bounds.d[0] - tol) and np.all(d <= bounds.d[1] + tol)
            and np.all(t >= bounds.dtheta[0] - tol) and np.all(t <= bounds.dtheta[1] + tol)
        )


def _unpack(active, vec, d, dtheta):
    vec = np.atleast_1d(np.asarray(vec, dtype=float))
    if active == "d":
        return float(vec[0]), dtheta
    if active == "dtheta":
        return d, float(vec[0])
    return float(vec[0]), float(vec[1])


def relative_error(p, p_true):
    """``||p - p_true||_2 / ||p_true||_2``."""
    p = np.asarray(p, dtype=float).ravel()
    p_true = np.asarray(p_true, dtype=float).ravel()
    if p.shape != p_true.shape:
        raise ValueError(f"length mismatch: {p.size} vs {p_true.size}")
    ref = np.linalg.norm(p_true)
    if ref == 0:
        raise ValueError("relative error undefined for a zero reference vector")
    return float(np.linalg.norm(p - p_true) / ref)
