"""Fan-beam forward operator with exact ray/pixel intersection lengths.

The image occupies [-1, 1]^2 on a ``side x side`` grid, row-major with row 0
at the top. For a view at angle ``theta`` (degrees) with block geometry
``(d, dtheta)`` the source sits at polar position ``(d, theta + dtheta)`` and
a flat detector of ``n_det`` equispaced cells lies orthogonal to the central
ray at distance ``sdd`` from the source.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np
import scipy.sparse as sp

MAX_CHORD = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class DetectorSpec:
    n_det: int
    det_width: float = 8.0
    sdd: float = 4.0

    def __post_init__(self):
        if self.n_det < 1:
            raise ValueError("n_det must be >= 1")
        if self.det_width <= 0:
            raise ValueError("det_width must be positive")
        if self.sdd <= 0:
            raise ValueError("sdd must be positive")

    @classmethod
    def default(cls, side, det_width=8.0, sdd=4.0):
        return cls(int(math.ceil(math.sqrt(2.0) * side)), det_width, sdd)

    def cell_offsets(self):
        """Signed offsets of cell centers from the detector center."""
        pitch = self.det_width / self.n_det
        return (np.arange(self.n_det) + 0.5) * pitch - 0.5 * self.det_width


def ray_endpoints(angles_deg, d, dtheta, det):
    """Source and detector-cell endpoints for every (view, cell) ray.

    Returns two ``(n_views * n_det, 2)`` arrays ordered view-major.
    """
    if d <= math.sqrt(2.0):
        raise ValueError(f"source at d={d} lies inside the image square (need d > sqrt(2))")
    if d >= det.sdd:
        raise ValueError(f"d={d} must be smaller than the source-to-detector distance {det.sdd}")
    phi = np.deg2rad(np.asarray(angles_deg, dtype=float) + dtheta)
    c, s = np.cos(phi), np.sin(phi)
    src = np.column_stack([d * c, d * s])
    # detector center on the far side of the origin, cells along the tangent
    ctr = np.column_stack([(d - det.sdd) * c, (d - det.sdd) * s])
    tang = np.column_stack([-s, c])
    off = det.cell_offsets()
    dst = ctr[:, None, :] + off[None, :, None] * tang[:, None, :]
    src = np.repeat(src, det.n_det, axis=0)
    return src, dst.reshape(-1, 2)


def trace_rays(src, dst, side):
    """Siddon traversal of segments ``src -> dst`` through the pixel grid.

    Returns ``(ray, pixel, length)`` triplets for every nonzero intersection.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n_rays = src.shape[0]
    h = 2.0 / side
    planes = -1.0 + h * np.arange(side + 1)
    delta = dst - src
    length = np.hypot(delta[:, 0], delta[:, 1])

    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (planes[None, :] - src[:, :1]) / delta[:, :1]
        ay = (planes[None, :] - src[:, 1:]) / delta[:, 1:]
    # parallel to a plane family: no crossings from it, slab test on position
    ax_lo = np.where(delta[:, 0] != 0, np.minimum(ax[:, 0], ax[:, -1]), -np.inf)
    ax_hi = np.where(delta[:, 0] != 0, np.maximum(ax[:, 0], ax[:, -1]), np.inf)
    ay_lo = np.where(delta[:, 1] != 0, np.minimum(ay[:, 0], ay[:, -1]), -np.inf)
    ay_hi = np.where(delta[:, 1] != 0, np.maximum(ay[:, 0], ay[:, -1]), np.inf)
    a_min = np.maximum.reduce([ax_lo, ay_lo, np.zeros(n_rays)])
    a_max = np.minimum.reduce([ax_hi, ay_hi, np.ones(n_rays)])
    inside_x = (delta[:, 0] != 0) | ((src[:, 0] > -1.0) & (src[:, 0] < 1.0))
    inside_y = (delta[:, 1] != 0) | ((src[:, 1] > -1.0) & (src[:, 1] < 1.0))
    a_max = np.where(inside_x & inside_y, a_max, a_min)
    a_max = np.maximum(a_max, a_min)

    ax = np.where(np.isfinite(ax), ax, a_min[:, None])
    ay = np.where(np.isfinite(ay), ay, a_min[:, None])
    alphas = np.concatenate([a_min[:, None], ax, ay, a_max[:, None]], axis=1)
    alphas = np.clip(alphas, a_min[:, None], a_max[:, None])
    alphas.sort(axis=1)

    seg = np.diff(alphas, axis=1)
    mid = 0.5 * (alphas[:, 1:] + alphas[:, :-1])
    keep = seg > 1e-14
    rows, k = np.nonzero(keep)
    amid = mid[rows, k]
    px = src[rows, 0] + amid * delta[rows, 0]
    py = src[rows, 1] + amid * delta[rows, 1]
    col = np.clip(np.floor((px + 1.0) / h).astype(np.int64), 0, side - 1)
    row = np.clip(np.floor((1.0 - py) / h).astype(np.int64), 0, side - 1)
    return rows, row * side + col, seg[rows, k] * length[rows]


def _block_triplets(partition, block_index, r_i, det, side):
    d, dtheta = r_i
    src, dst = ray_endpoints(partition.angles(block_index), d, dtheta, det)
    return trace_rays(src, dst, side), src.shape[0]


def build_block(partition, block_index, r_i, det, side):
    """Sparse CSR row block ``A_i(r_i)`` for the views of ``block_index``."""
    if side < 2:
        raise ValueError("side must be >= 2")
    (rows, cols, vals), n_rows = _block_triplets(partition, block_index, r_i, det, side)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, side * side))
    A.sum_duplicates()
    return A


def project_block(partition, block_index, r_i, det, side, x):
    """``A_i(r_i) @ x`` without materializing the sparse block."""
    d, dtheta = r_i
    src, dst = ray_endpoints(partition.angles(block_index), d, dtheta, det)
    x = np.ascontiguousarray(x, dtype=float)
    if x.shape != (side * side,):
        raise ValueError(f"image vector has shape {x.shape}, expected ({side * side},)")
    out = np.empty(src.shape[0])
    _project_rays(src, dst, side, x, out)
    return out


@numba.njit(cache=True)
def _project_rays(src, dst, side, x, out):
    # same segment/midpoint rule as trace_rays, merging the two sorted
    # plane-crossing sequences instead of sorting
    h = 2.0 / side
    n = side + 1
    ax = np.empty(n)
    ay = np.empty(n)
    for r in range(src.shape[0]):
        sx, sy = src[r, 0], src[r, 1]
        dx, dy = dst[r, 0] - sx, dst[r, 1] - sy
        length = math.sqrt(dx * dx + dy * dy)
        a_min, a_max = 0.0, 1.0
        if dx != 0.0:
            a0 = (-1.0 - sx) / dx
            a1 = (1.0 - sx) / dx
            a_min = max(a_min, min(a0, a1))
            a_max = min(a_max, max(a0, a1))
        elif not (-1.0 < sx < 1.0):
            a_max = a_min
        if dy != 0.0:
            a0 = (-1.0 - sy) / dy
            a1 = (1.0 - sy) / dy
            a_min = max(a_min, min(a0, a1))
            a_max = min(a_max, max(a0, a1))
        elif not (-1.0 < sy < 1.0):
            a_max = a_min
        acc = 0.0
        if a_max > a_min:
            for i in range(n):
                if dx != 0.0:
                    v = ((-1.0 + h * i) - sx) / dx
                    ax[i] = min(max(v, a_min), a_max)
                else:
                    ax[i] = a_min
                if dy != 0.0:
                    v = ((-1.0 + h * i) - sy) / dy
                    ay[i] = min(max(v, a_min), a_max)
                else:
                    ay[i] = a_min
            if dx < 0.0:
                ax[:] = ax[::-1].copy()
            if dy < 0.0:
                ay[:] = ay[::-1].copy()
            i = 0
            j = 0
            prev = a_min
            while i < n or j < n:
                if j >= n or (i < n and ax[i] <= ay[j]):
                    cur = ax[i]
                    i += 1
                else:
                    cur = ay[j]
                    j += 1
                seg = cur - prev
                if seg > 1e-14:
                    amid = 0.5 * (cur + prev)
                    px = sx + amid * dx
                    py = sy + amid * dy
                    col = min(max(int(math.floor((px + 1.0) / h)), 0), side - 1)
                    row = min(max(int(math.floor((1.0 - py) / h)), 0), side - 1)
                    acc += seg * length * x[row * side + col]
                prev = cur
            seg = a_max - prev
            if seg > 1e-14:
                amid = 0.5 * (a_max + prev)
                px = sx + amid * dx
                py = sy + amid * dy
                col = min(max(int(math.floor((px + 1.0) / h)), 0), side - 1)
                row = min(max(int(math.floor((1.0 - py) / h)), 0), side - 1)
                acc += seg * length * x[row * side + col]
        out[r] = acc


@dataclass(frozen=True)
class SparseBlockOperator:
    blocks: tuple
    n_cols: int
    rows_per_view: int

    @cached_property
    def matrix(self):
        return sp.vstack(self.blocks, format="csr")

    @property
    def shape(self):
        return (sum(b.shape[0] for b in self.blocks), self.n_cols)

    @property
    def dtype(self):
        return np.dtype(float)

    def block_rows(self, i):
        start = sum(b.shape[0] for b in self.blocks[:i])
        return slice(start, start + self.blocks[i].shape[0])

    def frobenius_norm(self):
        return float(sp.linalg.norm(self.matrix))

    def matvec(self, x):
        return apply(self, x)

    def rmatvec(self, y):
        return apply_adjoint(self, y)


def assemble(partition, r, det, side, workers=None):
    """Stack the row blocks of ``A(r)`` in block order."""
    if r.n_blocks != partition.n_blocks:
        raise ValueError("geometry has a different number of blocks than the partition")

    def one(i):
        return build_block(partition, i, r.block(i), det, side)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(one, range(partition.n_blocks)))
    else:
        blocks = [one(i) for i in range(partition.n_blocks)]
    return SparseBlockOperator(tuple(blocks), side * side, det.n_det)


def apply(A, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n_cols,):
        raise ValueError(f"image vector has shape {x.shape}, expected ({A.n_cols},)")
    return A.matrix @ x


def apply_adjoint(A, y):
    y = np.asarray(y, dtype=float)
    m = A.shape[0]
    if y.shape != (m,):
        raise ValueError(f"sinogram vector has shape {y.shape}, expected ({m},)")
    return A.matrix.T @ y
