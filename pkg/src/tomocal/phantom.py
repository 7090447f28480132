"""Shepp-Logan head phantom sampled at pixel centers of [-1, 1]^2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# columns: intensity, semi-axis a, semi-axis b, center x, center y, rotation (degrees)
_GEOMETRY = np.array([
    [0.6900, 0.9200, 0.0000, 0.0000, 0.0],
    [0.6624, 0.8740, 0.0000, -0.0184, 0.0],
    [0.1100, 0.3100, 0.2200, 0.0000, -18.0],
    [0.1600, 0.4100, -0.2200, 0.0000, 18.0],
    [0.2100, 0.2500, 0.0000, 0.3500, 0.0],
    [0.0460, 0.0460, 0.0000, 0.1000, 0.0],
    [0.0460, 0.0460, 0.0000, -0.1000, 0.0],
    [0.0460, 0.0230, -0.0800, -0.6050, 0.0],
    [0.0230, 0.0230, 0.0000, -0.6060, 0.0],
    [0.0230, 0.0460, 0.0600, -0.6050, 0.0],
])
STANDARD_INTENSITIES = np.array([2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01])
MODIFIED_INTENSITIES = np.array([1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])


def ellipse_table(modified=True):
    """10x6 table ``[A, a, b, x0, y0, phi_deg]`` of the phantom ellipses."""
    intensities = MODIFIED_INTENSITIES if modified else STANDARD_INTENSITIES
    return np.column_stack([intensities, _GEOMETRY])


@dataclass(frozen=True)
class ImageGrid:
    side: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size != self.side * self.side:
            raise ValueError("values must hold side**2 entries")
        object.__setattr__(self, "values", values)

    def as_array(self):
        return self.values.reshape(self.side, self.side)


def pixel_centers(side):
    """Coordinates of pixel centers; row 0 is the top (y = +1) edge."""
    h = 2.0 / side
    xs = -1.0 + (np.arange(side) + 0.5) * h
    ys = 1.0 - (np.arange(side) + 0.5) * h
    return np.meshgrid(xs, ys)


def evaluate(x, y, modified=True):
    """Phantom intensity at physical points ``(x, y)``, negatives clamped to 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    for A, a, b, x0, y0, phi in ellipse_table(modified):
        c, s = np.cos(np.deg2rad(phi)), np.sin(np.deg2rad(phi))
        dx, dy = x - x0, y - y0
        u = dx * c + dy * s
        v = -dx * s + dy * c
        out += np.where((u / a) ** 2 + (v / b) ** 2 <= 1.0, A, 0.0)
    return np.maximum(out, 0.0)


def shepp_logan(side, modified=True):
    if int(side) != side or side < 2:
        raise ValueError("side must be an integer >= 2")
    side = int(side)
    X, Y = pixel_centers(side)
    return ImageGrid(side, evaluate(X, Y, modified).ravel())
