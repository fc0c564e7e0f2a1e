"""Good unknowns, low-order weighted energy norms, cutoffs, and the two
Hardy-type quadrature checks.

The stability variables are defined at the velocity level,

    q = psi / ubar,      U = (u - ubar_y q) / ubar,   V = (v + ubar_x q) / ubar,

which makes the reconstruction u = ubar U + ubar_y q, v = ubar V - ubar_x q
exact by algebra on the discrete grid (U = dq/dy and V = -dq/dx hold to
discretization order and are reported as a consistency diagnostic, not
asserted).  Wall rows use one-sided limit ratios since both psi and ubar
vanish at y = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, DomainError, PreconditionError
from .grid import Grid2D, cumtrapz, diff1, diff2, trapezoid_weights

__all__ = [
    "Background",
    "GoodVariables",
    "NormReport",
    "good_variables",
    "weight_g",
    "cutoff_phi",
    "norm_X0",
    "norm_half",
    "hardy_precise_check",
    "hardy_weighted_check",
]


@dataclass
class Background:
    """Positive layer profile and the derivatives the norms weight with."""

    grid: Grid2D
    eps: float
    u: np.ndarray
    u_x: np.ndarray
    u_y: np.ndarray
    u_yy: np.ndarray

    @classmethod
    def from_blasius(cls, family, grid: Grid2D, eps: float) -> "Background":
        x = grid.x_nodes[:, None]
        y = grid.y_nodes[None, :]
        return cls(grid, float(eps), family.u(x, y), family.u_x(x, y),
                   family.u_y(x, y), family.u_yy(x, y))

    @classmethod
    def from_fields(cls, grid: Grid2D, eps: float, u: np.ndarray) -> "Background":
        ux = diff1(u, grid.x_nodes, axis=0)
        uy = diff1(u, grid.y_nodes, axis=1)
        uyy = diff2(u, grid.y_nodes, axis=1)
        return cls(grid, float(eps), np.asarray(u, float), ux, uy, uyy)


@dataclass
class GoodVariables:
    psi: np.ndarray
    q: np.ndarray
    U: np.ndarray
    V: np.ndarray
    background: Background
    dq_consistency: float = 0.0  # sup |U - dq/dy| away from the wall rows


def good_variables(u: np.ndarray, v: np.ndarray, background: Background
                   ) -> GoodVariables:
    """Build (psi, q, U, V) from a remainder velocity pair."""
    grid = background.grid
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    if u.shape != (grid.nx, grid.ny) or v.shape != (grid.nx, grid.ny):
        raise PreconditionError("fields must live on the background grid")
    if np.max(np.abs(u[:, 0])) > 1e-12:
        raise PreconditionError("remainder u must vanish at the wall")
    ub = background.u
    if np.any(ub[:, 1:] <= 0.0):
        raise DomainError("background must be positive for y > 0")
    if np.any(background.u_y[:, 0] <= 0.0):
        raise DomainError("background wall slope must be positive")

    y = grid.y_nodes
    psi = cumtrapz(u, y, axis=1)
    q = np.empty_like(psi)
    q[:, 1:] = psi[:, 1:] / ub[:, 1:]
    q[:, 0] = 0.0
    U = np.empty_like(q)
    U[:, 1:] = (u[:, 1:] - background.u_y[:, 1:] * q[:, 1:]) / ub[:, 1:]
    # wall limit by one-sided ratios: U(x,0) = u_y(x,0) / (2 ubar_y(x,0))
    uy0 = diff1(u, y, axis=1)[:, 0]
    U[:, 0] = uy0 / (2.0 * background.u_y[:, 0])
    V = np.empty_like(q)
    V[:, 1:] = (v[:, 1:] + background.u_x[:, 1:] * q[:, 1:]) / ub[:, 1:]
    V[:, 0] = 0.0

    dqdy = diff1(q, y, axis=1)
    cons = float(np.max(np.abs(U[:, 2:] - dqdy[:, 2:])))
    return GoodVariables(psi, q, U, V, background, cons)


def weight_g(x):
    """g(x) with g^2 = 1 + (1+x)^(-1/100); g(0)^2 = 2 and g -> 1 at infinity."""
    x = np.asarray(x, float)
    out = np.sqrt(1.0 + (1.0 + x) ** (-0.01))
    return float(out) if out.ndim == 0 else out


def cutoff_phi(n: int, x):
    """Increasing C^1 cutoff: 0 for x <= 200 + 10n, 1 for x >= 205 + 10n,
    cubic smoothstep on the transition band.  Valid for n = 1, ..., 12."""
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= 12:
        raise DomainError(f"cutoff index must be an integer in [1, 12], got {n!r}")
    x = np.asarray(x, float)
    t = np.clip((x - (200.0 + 10.0 * n)) / 5.0, 0.0, 1.0)
    out = t * t * (3.0 - 2.0 * t)
    return float(out) if out.ndim == 0 else out


@dataclass
class NormReport:
    """X0 value with its squared-term breakdown and the weight parameters."""

    terms: dict
    total: float
    clipped_measure: float
    eps: float
    grid_shape: tuple
    params: dict = field(default_factory=dict)

    def term(self, name: str) -> float:
        return self.terms[name]


def _quad2(grid: Grid2D, integrand: np.ndarray) -> float:
    wx = trapezoid_weights(grid.x_nodes)
    return float(wx @ integrand @ grid.y_weights)


def norm_X0(gv: GoodVariables, background: Background | None = None,
            grid: Grid2D | None = None) -> NormReport:
    """Basic energy value: square root of the eight-term sum

        |sqrt(ub) U_y g|^2 + eps |sqrt(ub) U_x g|^2 + eps^2 |sqrt(ub) V_x g|^2
        + |sqrt(-ub_yy) U g|^2 + eps |sqrt(-ub_yy) V g|^2
        + |sqrt(ub_y) U g|^2_{y=0}
        + |ub U <x>^(-1/2-1/200)|^2 + eps |ub V <x>^(-1-1/200)|^2.

    Negative-curvature factors use max(-ub_yy, 0); the weighted measure of the
    clipped region {ub_yy > 0} is reported alongside.
    """
    bg = background or gv.background
    grid = grid or bg.grid
    x = grid.x_nodes[:, None]
    g2 = weight_g(grid.x_nodes)[:, None] ** 2
    eps = bg.eps
    Uy = diff1(gv.U, grid.y_nodes, axis=1)
    Ux = diff1(gv.U, grid.x_nodes, axis=0)
    Vx = diff1(gv.V, grid.x_nodes, axis=0)
    neg_curv = np.maximum(-bg.u_yy, 0.0)
    clipped = _quad2(grid, (bg.u_yy > 0.0).astype(float))

    terms = {
        "sqrt_ub_Uy_g": _quad2(grid, bg.u * Uy**2 * g2),
        "eps_sqrt_ub_Ux_g": eps * _quad2(grid, bg.u * Ux**2 * g2),
        "eps2_sqrt_ub_Vx_g": eps**2 * _quad2(grid, bg.u * Vx**2 * g2),
        "neg_curv_U_g": _quad2(grid, neg_curv * gv.U**2 * g2),
        "eps_neg_curv_V_g": eps * _quad2(grid, neg_curv * gv.V**2 * g2),
        "wall_trace_U_g": float(trapezoid_weights(grid.x_nodes)
                                @ (bg.u_y[:, 0] * gv.U[:, 0]**2
                                   * weight_g(grid.x_nodes)**2)),
        "ck_ub_U": _quad2(grid, (bg.u * gv.U)**2 * (1.0 + x)**(-1.0 - 0.01)),
        "eps_ck_ub_V": eps * _quad2(grid, (bg.u * gv.V)**2 * (1.0 + x)**(-2.0 - 0.01)),
    }
    total = float(np.sqrt(sum(terms.values())))
    return NormReport(terms, total, clipped, eps, (grid.nx, grid.ny),
                      params={"g": "sqrt(1 + <x>^-1/100)",
                              "ck_exponents": (-0.5 - 1.0 / 200, -1.0 - 1.0 / 200)})


def _l2(grid: Grid2D, integrand_sq: np.ndarray) -> float:
    return float(np.sqrt(max(_quad2(grid, integrand_sq), 0.0)))


def norm_half(n: int, gv: GoodVariables, background: Background | None = None,
              grid: Grid2D | None = None) -> dict:
    """Half-level values for n in {0, 1}:

        X_{n+1/2} = |ub U^(n)_x x^{n+1/2} phi_{n+1}| + sqrt(eps) |ub V^(n)_x ...|
        Y_{n+1/2} = |sqrt(ub) U^(n)_yy ...| + |sqrt(ub eps) U^(n)_xy ...|
                    + |sqrt(ub) eps U^(n)_xx ...| + wall trace of U^(n)_y.

    Returns the two values plus a differencing-noise floor estimate for the
    highest x-derivative taken.
    """
    if n not in (0, 1):
        raise DomainError("only the n = 0 and n = 1 half-level values are computed")
    bg = background or gv.background
    grid = grid or bg.grid
    xs, ys = grid.x_nodes, grid.y_nodes
    eps = bg.eps
    Un = gv.U if n == 0 else diff1(gv.U, xs, axis=0)
    Vn = gv.V if n == 0 else diff1(gv.V, xs, axis=0)
    w = (xs[:, None] ** (n + 0.5)) * cutoff_phi(n + 1, xs)[:, None]
    Unx = diff1(Un, xs, axis=0)
    Vnx = diff1(Vn, xs, axis=0)
    Unyy = diff2(Un, ys, axis=1)
    Unxy = diff1(diff1(Un, xs, axis=0), ys, axis=1)
    Unxx = diff2(Un, xs, axis=0)
    x_half = _l2(grid, (bg.u * Unx * w)**2) + np.sqrt(eps) * _l2(grid, (bg.u * Vnx * w)**2)
    Uny = diff1(Un, ys, axis=1)
    wx = trapezoid_weights(xs)
    wall = float(np.sqrt(max(np.sum(wx * bg.u_y[:, 0] * Uny[:, 0]**2 * w[:, 0]**2), 0.0)))
    y_half = (_l2(grid, bg.u * Unyy**2 * w**2)
              + np.sqrt(eps) * _l2(grid, bg.u * Unxy**2 * w**2)
              + eps * _l2(grid, bg.u * Unxx**2 * w**2)
              + wall)
    dx_min = float(np.min(np.diff(xs)))
    amp = float(np.max(np.abs(gv.U))) if gv.U.size else 0.0
    floor = np.finfo(float).eps * amp / dx_min ** (n + 2) * _l2(grid, (bg.u * w)**2)
    return {"X_half": float(x_half), "Y_half": float(y_half),
            "noise_floor": float(floor), "n": n}


def _taper(x: np.ndarray, frac: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Smooth tail cutoff going to 0 at x[-1], with its derivative."""
    x0 = x[-1] * (1.0 - frac)
    t = np.clip((x - x0) / (x[-1] - x0), 0.0, 1.0)
    w = 1.0 - t * t * (3.0 - 2.0 * t)
    dw = np.where((t > 0) & (t < 1), -6.0 * t * (1.0 - t) / (x[-1] - x0), 0.0)
    return w, dw


def hardy_precise_check(f: np.ndarray, ubar: np.ndarray, ubar_x: np.ndarray,
                        x_nodes: np.ndarray, fx: np.ndarray | None = None) -> float:
    """Margin RHS - LHS of the sharp-constant inequality

        int <x>^-3.01 ub^2 f^2 <= (1/1.01) int <x>^-1.01 ub^2 f_x^2
                                 + (2/1.01) int <x>^-2.01 ub ub_x f^2,

    for f with f(0) = 0 and decay at the far end (a smooth tail cutoff is
    applied).  The margin must be >= -quadrature tolerance.
    """
    x = np.asarray(x_nodes, float)
    f = np.asarray(f, float)
    if f[0] != 0.0:
        raise PreconditionError("test function must vanish at x = 0")
    if fx is None:
        fx = diff1(f, x)
    w, dw = _taper(x)
    ft = f * w
    ftx = fx * w + f * dw
    xw = 1.0 + x
    wq = trapezoid_weights(x)
    lhs = np.sum(wq * xw**-3.01 * ubar**2 * ft**2)
    rhs = (np.sum(wq * xw**-1.01 * ubar**2 * ftx**2) / 1.01
           + 2.0 / 1.01 * np.sum(wq * xw**-2.01 * ubar * ubar_x * ft**2))
    return float(rhs - lhs)


@dataclass
class HardyRatioReport:
    max_ratio: float
    ratios: np.ndarray
    lambdas: np.ndarray
    gamma: float


def hardy_weighted_check(f: Callable, gamma: float, background: Background,
                         x_values=None, lambdas=None) -> HardyRatioReport:
    """Empirical constant for the slice inequality

        |f|^2_{L2_y} <= C [ gamma |sqrt(ub) f_y <x>^1/2|^2 + gamma^-2 |ub f|^2 ],

    probed over a dilation family f(y/lambda).  The implicit constant is not
    pinned, so the report carries the max ratio; stability of that ratio under
    refinement is the assertable property.
    """
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    grid = background.grid
    y = grid.y_nodes
    if x_values is None:
        x_values = grid.x_nodes[1::max(1, grid.nx // 8)]
    if lambdas is None:
        lambdas = np.geomspace(0.25, 4.0, 7)
    lambdas = np.asarray(lambdas, float)
    wy = grid.y_weights
    ratios = np.zeros((len(np.atleast_1d(x_values)), lambdas.size))
    for i, xv in enumerate(np.atleast_1d(x_values)):
        ix = int(np.argmin(np.abs(grid.x_nodes - xv)))
        ub = background.u[ix]
        for j, lam in enumerate(lambdas):
            fy_vals = f(y / lam)
            dfy = diff1(fy_vals, y)
            lhs = np.sum(wy * fy_vals**2)
            rhs = (gamma * (1.0 + grid.x_nodes[ix]) * np.sum(wy * ub * dfy**2)
                   + np.sum(wy * (ub * fy_vals)**2) / gamma**2)
            ratios[i, j] = lhs / rhs if rhs > 0 else 0.0
    return HardyRatioReport(float(ratios.max()), ratios, lambdas, float(gamma))
