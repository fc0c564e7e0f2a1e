"""Tensor-product stretched grids on a truncated quadrant, plus the
nonuniform finite-difference and quadrature helpers shared by every solver.

Conventions used across the package:
  * 2D fields are arrays of shape (nx, ny); axis 0 is x, axis 1 is y.
  * y grids may cluster geometrically toward the wall y = 0, where the
    boundary-layer degeneracy lives.
  * x grids may ramp the first steps (small dx near x = 0) for implicit
    marching of data with only approximate wall compatibility.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError

__all__ = [
    "Grid2D",
    "make_grid",
    "integrate_y",
    "similarity_z",
    "trapezoid_weights",
    "cumtrapz",
    "diff1",
    "diff2",
    "d1_matrix",
    "d2_matrix",
    "graded_nodes",
]


@dataclass(frozen=True)
class Grid2D:
    """Stretched tensor grid on [0, X_max] x [0, Y_max] with y quadrature weights."""

    x_nodes: np.ndarray
    y_nodes: np.ndarray
    y_weights: np.ndarray
    wall_ratio: float = 1.0
    x_ramp: float = 1.0

    def __post_init__(self):
        x, y = np.asarray(self.x_nodes, float), np.asarray(self.y_nodes, float)
        if x[0] != 0.0 or y[0] != 0.0:
            raise ConfigurationError("grids must start at 0")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ConfigurationError("grid nodes must be strictly increasing")
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "y_nodes", y)
        object.__setattr__(self, "y_weights", np.asarray(self.y_weights, float))

    @property
    def nx(self) -> int:
        return self.x_nodes.size

    @property
    def ny(self) -> int:
        return self.y_nodes.size

    @property
    def x_max(self) -> float:
        return float(self.x_nodes[-1])

    @property
    def y_max(self) -> float:
        return float(self.y_nodes[-1])


def _solve_grading(n: int, length: float, ratio: float) -> np.ndarray:
    """Nodes of an exponential map on [0, length] whose first spacing is
    (length / n) / ratio.  ratio = 1 gives the uniform grid."""
    s = np.linspace(0.0, 1.0, n)
    if ratio <= 1.0 + 1e-12:
        return length * s
    target = (length / n) / ratio

    def first_spacing(beta):
        return length * np.expm1(beta / (n - 1)) / np.expm1(beta)

    lo, hi = 1e-8, 10.0
    while first_spacing(hi) > target:
        hi *= 2.0
        if hi > 1e4:
            raise ConfigurationError("grading ratio unattainable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if first_spacing(mid) > target:
            lo = mid
        else:
            hi = mid
    beta = hi  # hi side guarantees first spacing <= target
    return length * np.expm1(beta * s) / np.expm1(beta)


def graded_nodes(n: int, length: float, ratio: float) -> np.ndarray:
    """Public wrapper: n nodes on [0, length], clustered at 0 by `ratio`."""
    if n < 2:
        raise ConfigurationError("need at least 2 nodes")
    return _solve_grading(n, length, ratio)


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for arbitrary strictly increasing nodes."""
    nodes = np.asarray(nodes, float)
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def make_grid(nx: int, ny: int, X_max: float, Y_max: float,
              wall_ratio: float = 1.0, x_ramp: float = 1.0) -> Grid2D:
    """Build a stretched grid: geometric wall clustering in y, optional
    initial-step ramp in x.

    The first y spacing is at most (Y_max/ny)/wall_ratio for wall_ratio > 1;
    wall_ratio = 1 gives the uniform grid with spacing Y_max/(ny-1).
    """
    for name, v in (("nx", nx), ("ny", ny)):
        if not isinstance(v, (int, np.integer)) or v < 8:
            raise ConfigurationError(f"{name} must be an integer >= 8, got {v!r}")
    for name, v in (("X_max", X_max), ("Y_max", Y_max)):
        if not np.isfinite(v) or v <= 0:
            raise ConfigurationError(f"{name} must be finite and positive, got {v!r}")
    if not np.isfinite(wall_ratio) or wall_ratio < 1.0:
        raise ConfigurationError("wall_ratio must be >= 1")
    if not np.isfinite(x_ramp) or x_ramp < 1.0:
        raise ConfigurationError("x_ramp must be >= 1")
    x = _solve_grading(nx, X_max, x_ramp)
    y = _solve_grading(ny, Y_max, wall_ratio)
    return Grid2D(x, y, trapezoid_weights(y), wall_ratio=float(wall_ratio),
                  x_ramp=float(x_ramp))


def integrate_y(values: np.ndarray, grid: Grid2D) -> float:
    """Trapezoid rule over the (possibly nonuniform) y grid."""
    values = np.asarray(values, float)
    if values.shape != (grid.ny,):
        raise ShapeError(f"expected {grid.ny} samples, got shape {values.shape}")
    return float(np.dot(grid.y_weights, values))


def similarity_z(x, y):
    """Self-similar coordinate z = y / sqrt(x + 1)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x < 0) or np.any(y < 0):
        raise DomainError("similarity_z requires x >= 0 and y >= 0")
    out = y / np.sqrt(x + 1.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Nonuniform finite differences (2nd order on smooth gradings)
# ---------------------------------------------------------------------------

def _d1_rows(t: np.ndarray):
    """Per-node (offsets, coefficients) for the first derivative."""
    n = t.size
    rows = []
    for j in range(n):
        if j == 0:
            h1, h2 = t[1] - t[0], t[2] - t[1]
            rows.append(((0, 1, 2),
                         (-(2 * h1 + h2) / (h1 * (h1 + h2)),
                          (h1 + h2) / (h1 * h2),
                          -h1 / (h2 * (h1 + h2)))))
        elif j == n - 1:
            h1, h2 = t[-1] - t[-2], t[-2] - t[-3]
            rows.append(((n - 3, n - 2, n - 1),
                         (h1 / (h2 * (h1 + h2)),
                          -(h1 + h2) / (h1 * h2),
                          (2 * h1 + h2) / (h1 * (h1 + h2)))))
        else:
            hm, hp = t[j] - t[j - 1], t[j + 1] - t[j]
            rows.append(((j - 1, j, j + 1),
                         (-hp / (hm * (hm + hp)),
                          (hp - hm) / (hm * hp),
                          hm / (hp * (hm + hp)))))
    return rows


def _d2_rows(t: np.ndarray):
    """Per-node (offsets, coefficients) for the second derivative."""
    n = t.size
    rows = []
    for j in range(n):
        k = min(max(j, 1), n - 2)  # clamp ends onto adjacent interior stencil
        hm, hp = t[k] - t[k - 1], t[k + 1] - t[k]
        rows.append(((k - 1, k, k + 1),
                     (2.0 / (hm * (hm + hp)),
                      -2.0 / (hm * hp),
                      2.0 / (hp * (hm + hp)))))
    return rows


def _apply_rows(rows, values: np.ndarray, axis: int) -> np.ndarray:
    values = np.asarray(values, float)
    values = np.moveaxis(values, axis, 0)
    out = np.zeros_like(values)
    for j, (idx, coef) in enumerate(rows):
        for i, c in zip(idx, coef):
            out[j] += c * values[i]
    return np.moveaxis(out, 0, axis)


def diff1(values: np.ndarray, coords: np.ndarray, axis: int = 0) -> np.ndarray:
    """First derivative along `axis` (centered interior, one-sided ends)."""
    return _apply_rows(_d1_rows(np.asarray(coords, float)), values, axis)


def diff2(values: np.ndarray, coords: np.ndarray, axis: int = 0) -> np.ndarray:
    """Second derivative along `axis`."""
    return _apply_rows(_d2_rows(np.asarray(coords, float)), values, axis)


def _rows_to_matrix(rows, n):
    from scipy import sparse

    data, ri, ci = [], [], []
    for j, (idx, coef) in enumerate(rows):
        for i, c in zip(idx, coef):
            ri.append(j)
            ci.append(i)
            data.append(c)
    return sparse.csr_matrix((data, (ri, ci)), shape=(n, n))


def d1_matrix(coords: np.ndarray):
    """Sparse first-derivative matrix on the given nodes."""
    coords = np.asarray(coords, float)
    return _rows_to_matrix(_d1_rows(coords), coords.size)


def d2_matrix(coords: np.ndarray):
    """Sparse second-derivative matrix on the given nodes."""
    coords = np.asarray(coords, float)
    return _rows_to_matrix(_d2_rows(coords), coords.size)


def cumtrapz(values: np.ndarray, coords: np.ndarray, axis: int = -1) -> np.ndarray:
    """Cumulative trapezoid integral with a zero first entry."""
    values = np.asarray(values, float)
    values = np.moveaxis(values, axis, -1)
    h = np.diff(np.asarray(coords, float))
    inc = 0.5 * (values[..., 1:] + values[..., :-1]) * h
    out = np.zeros_like(values)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)
