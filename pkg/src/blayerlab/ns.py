"""Steady rescaled Navier-Stokes at small viscosity on a truncated quadrant.

Unknowns live on a MAC staggering of the node grid: the node coordinates are
taken as face lines, u sits on vertical faces, v on horizontal faces, p in
cells.  Diffusion is centered; convection is hybrid (upwind weight engages
only where the cell Peclet number exceeds 2, so smooth resolved flows see the
pure centered scheme).  The nonlinear solve is a few Picard sweeps followed by
Newton with backtracking, continued in viscosity from an easy start.

Boundary conditions (physical mode): Dirichlet inflow, no-slip wall, outer
matching u = 1 with stress-free v on top, homogeneous Neumann outflow with the
pressure pinned at the outflow-top cell (that one Neumann row is traded for
the pin so every cell keeps its continuity row).  A Dirichlet mode imposing
given traces on all sides serves manufactured-solution verification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import (ConfigurationError, PreconditionError, ShapeError,
                     SolverError)
from .grid import Grid2D

__all__ = [
    "NSConfig",
    "NSField",
    "solve_steady_ns",
    "ns_residual",
    "manufactured_test",
    "extract_remainder",
    "RemainderReport",
]


@dataclass
class NSConfig:
    eps: float
    schedule: tuple | None = None
    picard_iters: int = 4
    newton_tol: float = 1e-10
    max_newton: int = 40
    outflow: str = "neumann"
    start_eps: float = 3e-2

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ConfigurationError("eps must be positive")
        if self.schedule is None:
            sched = [self.start_eps]
            while sched[-1] > self.eps * 1.001:
                sched.append(max(sched[-1] / 2.5, self.eps))
            if self.eps >= self.start_eps:
                sched = [self.eps]
            self.schedule = tuple(sched)
        else:
            s = tuple(float(t) for t in self.schedule)
            if any(t <= 0 for t in s):
                raise ConfigurationError("schedule entries must be positive")
            if any(b >= a for a, b in zip(s, s[1:])):
                raise ConfigurationError("schedule must be strictly decreasing")
            if abs(s[-1] - self.eps) > 1e-15:
                raise ConfigurationError("schedule must end at the target eps")
            self.schedule = s


@dataclass
class NSField:
    grid: Grid2D
    eps: float
    u: np.ndarray          # (nx, ny-1) on vertical faces
    v: np.ndarray          # (nx-1, ny) on horizontal faces
    p: np.ndarray          # (nx-1, ny-1) in cells
    history: list          # iterations per continuation stage
    final_residual: float

    bc_top_u: np.ndarray | None = None
    bc_inflow_v: np.ndarray | None = None

    def u_nodal(self) -> np.ndarray:
        """Interpolate u to the node grid; wall and top rows carry the
        boundary values the solve imposed."""
        g = self.grid
        yc = 0.5 * (g.y_nodes[1:] + g.y_nodes[:-1])
        out = np.empty((g.nx, g.ny))
        for j in range(1, g.ny - 1):
            jl = j - 1
            w = (g.y_nodes[j] - yc[jl]) / (yc[jl + 1] - yc[jl])
            out[:, j] = (1 - w) * self.u[:, jl] + w * self.u[:, jl + 1]
        out[:, 0] = 0.0
        if self.bc_top_u is not None:
            out[:, -1] = self.bc_top_u
        else:
            out[:, -1] = 1.5 * self.u[:, -1] - 0.5 * self.u[:, -2]
        return out

    def v_nodal(self) -> np.ndarray:
        g = self.grid
        xc = 0.5 * (g.x_nodes[1:] + g.x_nodes[:-1])
        out = np.empty((g.nx, g.ny))
        for i in range(1, g.nx - 1):
            il = i - 1
            w = (g.x_nodes[i] - xc[il]) / (xc[il + 1] - xc[il])
            out[i] = (1 - w) * self.v[il] + w * self.v[il + 1]
        if self.bc_inflow_v is not None:
            out[0] = self.bc_inflow_v
        else:
            out[0] = 1.5 * self.v[0] - 0.5 * self.v[1]
        out[-1] = self.v[-1]
        return out

    def wall_shear(self) -> np.ndarray:
        """du/dy at the wall per x face (one-sided, through the no-slip value)."""
        g = self.grid
        yc = 0.5 * (g.y_nodes[1:] + g.y_nodes[:-1])
        h1, h2 = yc[0], yc[1]
        c1 = h2 / (h1 * (h2 - h1))
        c2 = -h1 / (h2 * (h2 - h1))
        return c1 * self.u[:, 0] + c2 * self.u[:, 1]


def _one_sided_back(tm2, tm1, t0):
    """Second-order backward weights for d/dt at t0 from (tm2, tm1, t0)."""
    h1 = t0 - tm1
    h2 = tm1 - tm2
    return (h1 / (h2 * (h1 + h2)),
            -(h1 + h2) / (h1 * h2),
            (2 * h1 + h2) / (h1 * (h1 + h2)))


def _one_sided_fwd(t0, tp1, tp2):
    """Second-order forward weights for d/dt at t0 from (t0, tp1, tp2)."""
    h1 = tp1 - t0
    h2 = tp2 - tp1
    return (-(2 * h1 + h2) / (h1 * (h1 + h2)),
            (h1 + h2) / (h1 * h2),
            -h1 / (h2 * (h1 + h2)))


class _Staggered:
    """Geometry, index maps, and the affine operator blocks of the scheme."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        self.xf = grid.x_nodes
        self.yf = grid.y_nodes
        self.xc = 0.5 * (self.xf[1:] + self.xf[:-1])
        self.yc = 0.5 * (self.yf[1:] + self.yf[:-1])
        self.nxf = self.xf.size
        self.nyf = self.yf.size
        self.ncx = self.xc.size
        self.ncy = self.yc.size
        self.n_u = self.nxf * self.ncy
        self.n_v = self.ncx * self.nyf
        self.n_p = self.ncx * self.ncy

    def iu(self, i, j):
        return i * self.ncy + j

    def iv(self, i, j):
        return self.n_u + i * self.nyf + j

    def ip(self, i, j):
        return self.n_u + self.n_v + i * self.ncy + j

    # -- generic nonuniform 3-point weights -------------------------------
    @staticmethod
    def _w1(tm, t0, tp):
        hm, hp = t0 - tm, tp - t0
        return (-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp),
                hm / (hp * (hm + hp)))

    @staticmethod
    def _w2(tm, t0, tp):
        hm, hp = t0 - tm, tp - t0
        return (2 / (hm * (hm + hp)), -2 / (hm * hp), 2 / (hp * (hm + hp)))


def _interior_masks(st: _Staggered):
    u_int = np.zeros((st.nxf, st.ncy), bool)
    u_int[1:-1, :] = True
    v_int = np.zeros((st.ncx, st.nyf), bool)
    v_int[:, 1:-1] = True
    return u_int, v_int


@dataclass
class _BC:
    """Boundary data for one solve (physical or all-Dirichlet)."""

    mode: str
    inflow_u: np.ndarray          # u(x=0) at yc
    inflow_v: np.ndarray          # v(x=0) at yf
    top_u: np.ndarray             # u at Y_max per x face
    wall_u: np.ndarray            # u at the wall per x face (0 in physical mode)
    wall_v: np.ndarray            # v at the wall per cell center
    top_v: np.ndarray | None      # Dirichlet top v (None -> stress-free)
    outflow_u: np.ndarray | None  # Dirichlet outflow u (None -> Neumann)
    outflow_v: np.ndarray | None
    fu: np.ndarray
    fv: np.ndarray
    p_pin: float = 0.0


def _build_bc(st: _Staggered, inflow, bundle=None, forcing=None, mode="physical",
              dirichlet=None, top_u_value=1.0):
    ny_c, nx_f = st.ncy, st.nxf
    if mode == "physical":
        u_in, v_in = inflow
        u_in = np.asarray(u_in, float)
        v_in = np.asarray(v_in, float)
        if u_in.shape == (st.nyf,):
            u_in = np.interp(st.yc, st.yf, u_in)
        if u_in.shape != (st.ncy,):
            raise ShapeError("inflow u must be sampled on the node or cell grid")
        if v_in.shape != (st.nyf,):
            raise ShapeError("inflow v must be sampled on the y nodes")
        fu = np.zeros((st.nxf, st.ncy))
        fv = np.zeros((st.ncx, st.nyf))
        return _BC("physical", u_in, v_in,
                   np.full(st.nxf, float(top_u_value)), np.zeros(st.nxf),
                   np.zeros(st.ncx), None, None, None, fu, fv)
    if mode == "dirichlet":
        ue, ve, pe, fu_f, fv_f = (dirichlet[k] for k in
                                  ("u", "v", "p", "fu", "fv"))
        XU, YU = np.meshgrid(st.xf, st.yc, indexing="ij")
        XV, YV = np.meshgrid(st.xc, st.yf, indexing="ij")
        fu = fu_f(XU, YU)
        fv = fv_f(XV, YV)
        return _BC("dirichlet",
                   ue(np.full(st.ncy, st.xf[0]), st.yc),
                   ve(np.full(st.nyf, st.xf[0]), st.yf),
                   ue(st.xf, np.full(st.nxf, st.yf[-1])),
                   ue(st.xf, np.full(st.nxf, st.yf[0])),
                   ve(st.xc, np.full(st.ncx, st.yf[0])),
                   ve(st.xc, np.full(st.ncx, st.yf[-1])),
                   ue(np.full(st.ncy, st.xf[-1]), st.yc),
                   ve(np.full(st.nyf, st.xf[-1]), st.yf),
                   fu, fv, p_pin=float(pe(st.xc[0], st.yc[0])))
    raise ConfigurationError(f"unknown bc mode {mode!r}")


class _Ops:
    """Affine sparse operators (M, b) for every linear piece of the residual.

    Boundary values enter stencils directly (no ghost rows): the wall/top u
    stencils pass through the Dirichlet values, the inflow v stencils through
    the inflow trace, so every operator is exact 3-point on the stretched grid.
    """

    def __init__(self, st: _Staggered, bc: _BC):
        self.st = st
        self.bc = bc
        n = st.n_u + st.n_v + st.n_p
        self.n = n
        self._build_u_ops()
        self._build_v_ops()
        self._build_div()
        self._build_avg()

    def _coo(self, rows, cols, vals, bvec):
        M = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return M, bvec

    def _build_u_ops(self):
        st, bc = self.st, self.bc
        n = self.n
        rows_c, cols_c, vals_c = [], [], []
        rows_m, cols_m, vals_m = [], [], []
        rows_p, cols_p, vals_p = [], [], []
        rows_y, cols_y, vals_y = [], [], []
        b_y = np.zeros(n)
        rows_yy, cols_yy, vals_yy = [], [], []
        b_yy = np.zeros(n)
        rows_xx, cols_xx, vals_xx = [], [], []
        rows_g, cols_g, vals_g = [], [], []
        xf, yc, yf = st.xf, st.yc, st.yf
        for i in range(1, st.nxf - 1):
            for j in range(st.ncy):
                k = st.iu(i, j)
                # x derivatives on faces: centered plus second-order one-sided
                # variants (first-order fallback at the first interior column)
                wm, w0, wp = st._w1(xf[i - 1], xf[i], xf[i + 1])
                rows_c += [k, k, k]
                cols_c += [st.iu(i - 1, j), k, st.iu(i + 1, j)]
                vals_c += [wm, w0, wp]
                if i >= 2:
                    cm2, cm1, c0 = _one_sided_back(xf[i - 2], xf[i - 1], xf[i])
                    rows_m += [k, k, k]
                    cols_m += [st.iu(i - 2, j), st.iu(i - 1, j), k]
                    vals_m += [cm2, cm1, c0]
                else:
                    hm = xf[i] - xf[i - 1]
                    rows_m += [k, k]
                    cols_m += [st.iu(i - 1, j), k]
                    vals_m += [-1.0 / hm, 1.0 / hm]
                if i <= st.nxf - 3:
                    c0, cp1, cp2 = _one_sided_fwd(xf[i], xf[i + 1], xf[i + 2])
                    rows_p += [k, k, k]
                    cols_p += [k, st.iu(i + 1, j), st.iu(i + 2, j)]
                    vals_p += [c0, cp1, cp2]
                else:
                    hp = xf[i + 1] - xf[i]
                    rows_p += [k, k]
                    cols_p += [k, st.iu(i + 1, j)]
                    vals_p += [-1.0 / hp, 1.0 / hp]
                cm, c0, cp = st._w2(xf[i - 1], xf[i], xf[i + 1])
                rows_xx += [k, k, k]
                cols_xx += [st.iu(i - 1, j), k, st.iu(i + 1, j)]
                vals_xx += [cm, c0, cp]
                # y derivatives through boundary values where needed
                if j == 0:
                    pm, p0, pp = yf[0], yc[0], yc[1]
                    w = st._w1(pm, p0, pp)
                    d = st._w2(pm, p0, pp)
                    b_y[k] += w[0] * bc.wall_u[i]
                    b_yy[k] += d[0] * bc.wall_u[i]
                    rows_y += [k, k]
                    cols_y += [k, st.iu(i, 1)]
                    vals_y += [w[1], w[2]]
                    rows_yy += [k, k]
                    cols_yy += [k, st.iu(i, 1)]
                    vals_yy += [d[1], d[2]]
                elif j == st.ncy - 1:
                    pm, p0, pp = yc[j - 1], yc[j], yf[-1]
                    w = st._w1(pm, p0, pp)
                    d = st._w2(pm, p0, pp)
                    b_y[k] += w[2] * bc.top_u[i]
                    b_yy[k] += d[2] * bc.top_u[i]
                    rows_y += [k, k]
                    cols_y += [st.iu(i, j - 1), k]
                    vals_y += [w[0], w[1]]
                    rows_yy += [k, k]
                    cols_yy += [st.iu(i, j - 1), k]
                    vals_yy += [d[0], d[1]]
                else:
                    w = st._w1(yc[j - 1], yc[j], yc[j + 1])
                    d = st._w2(yc[j - 1], yc[j], yc[j + 1])
                    rows_y += [k, k, k]
                    cols_y += [st.iu(i, j - 1), k, st.iu(i, j + 1)]
                    vals_y += list(w)
                    rows_yy += [k, k, k]
                    cols_yy += [st.iu(i, j - 1), k, st.iu(i, j + 1)]
                    vals_yy += list(d)
                # pressure gradient
                dxc = st.xc[i] - st.xc[i - 1]
                rows_g += [k, k]
                cols_g += [st.ip(i - 1, j), st.ip(i, j)]
                vals_g += [-1.0 / dxc, 1.0 / dxc]
        z = np.zeros(self.n)
        self.u_dxc = self._coo(rows_c, cols_c, vals_c, z)
        self.u_dxm = self._coo(rows_m, cols_m, vals_m, z)
        self.u_dxp = self._coo(rows_p, cols_p, vals_p, z)
        self.u_dy = self._coo(rows_y, cols_y, vals_y, b_y)
        self.u_dyy = self._coo(rows_yy, cols_yy, vals_yy, b_yy)
        self.u_dxx = self._coo(rows_xx, cols_xx, vals_xx, z)
        self.u_gpx = self._coo(rows_g, cols_g, vals_g, z)

    def _build_v_ops(self):
        st, bc = self.st, self.bc
        n = self.n
        rows_c, cols_c, vals_c = [], [], []
        b_c = np.zeros(n)
        rows_m, cols_m, vals_m = [], [], []
        b_m = np.zeros(n)
        rows_p, cols_p, vals_p = [], [], []
        rows_y, cols_y, vals_y = [], [], []
        rows_yy, cols_yy, vals_yy = [], [], []
        rows_xx, cols_xx, vals_xx = [], [], []
        b_xx = np.zeros(n)
        rows_g, cols_g, vals_g = [], [], []
        xc, xf, yf = st.xc, st.xf, st.yf
        for i in range(st.ncx):
            for j in range(1, st.nyf - 1):
                k = st.iv(i, j)
                # y derivatives on faces (interior rows only)
                w = st._w1(yf[j - 1], yf[j], yf[j + 1])
                d = st._w2(yf[j - 1], yf[j], yf[j + 1])
                rows_y += [k, k, k]
                cols_y += [st.iv(i, j - 1), k, st.iv(i, j + 1)]
                vals_y += list(w)
                rows_yy += [k, k, k]
                cols_yy += [st.iv(i, j - 1), k, st.iv(i, j + 1)]
                vals_yy += list(d)
                # x derivatives: stencils pass through the inflow trace; the
                # last column falls back to one-sided differences
                if i == 0:
                    pm, p0, pp = xf[0], xc[0], xc[1]
                    wx = st._w1(pm, p0, pp)
                    dx2 = st._w2(pm, p0, pp)
                    b_c[k] += wx[0] * bc.inflow_v[j]
                    rows_c += [k, k]
                    cols_c += [k, st.iv(1, j)]
                    vals_c += [wx[1], wx[2]]
                    b_m[k] += -bc.inflow_v[j] / (xc[0] - xf[0])
                    rows_m += [k]
                    cols_m += [k]
                    vals_m += [1.0 / (xc[0] - xf[0])]
                    b_xx[k] += dx2[0] * bc.inflow_v[j]
                    rows_xx += [k, k]
                    cols_xx += [k, st.iv(1, j)]
                    vals_xx += [dx2[1], dx2[2]]
                elif i == st.ncx - 1:
                    if bc.outflow_v is not None:
                        pm, p0, pp = xc[i - 1], xc[i], xf[-1]
                        wx = st._w1(pm, p0, pp)
                        dx2 = st._w2(pm, p0, pp)
                        b_c[k] += wx[2] * bc.outflow_v[j]
                        rows_c += [k, k]
                        cols_c += [st.iv(i - 1, j), k]
                        vals_c += [wx[0], wx[1]]
                        b_xx[k] += dx2[2] * bc.outflow_v[j]
                        rows_xx += [k, k]
                        cols_xx += [st.iv(i - 1, j), k]
                        vals_xx += [dx2[0], dx2[1]]
                    else:
                        h = xc[i] - xc[i - 1]
                        rows_c += [k, k]
                        cols_c += [st.iv(i - 1, j), k]
                        vals_c += [-1.0 / h, 1.0 / h]
                    cm2, cm1, c0 = _one_sided_back(xc[i - 2], xc[i - 1], xc[i])
                    rows_m += [k, k, k]
                    cols_m += [st.iv(i - 2, j), st.iv(i - 1, j), k]
                    vals_m += [cm2, cm1, c0]
                else:
                    wx = st._w1(xc[i - 1], xc[i], xc[i + 1])
                    dx2 = st._w2(xc[i - 1], xc[i], xc[i + 1])
                    rows_c += [k, k, k]
                    cols_c += [st.iv(i - 1, j), k, st.iv(i + 1, j)]
                    vals_c += list(wx)
                    rows_xx += [k, k, k]
                    cols_xx += [st.iv(i - 1, j), k, st.iv(i + 1, j)]
                    vals_xx += list(dx2)
                    if i >= 2:
                        cm2, cm1, c0 = _one_sided_back(xc[i - 2], xc[i - 1], xc[i])
                        rows_m += [k, k, k]
                        cols_m += [st.iv(i - 2, j), st.iv(i - 1, j), k]
                        vals_m += [cm2, cm1, c0]
                    else:
                        cm2, cm1, c0 = _one_sided_back(xf[0], xc[0], xc[1])
                        b_m[k] += cm2 * bc.inflow_v[j]
                        rows_m += [k, k]
                        cols_m += [st.iv(0, j), k]
                        vals_m += [cm1, c0]
                    hp = xc[i + 1] - xc[i]
                    rows_p += [k, k]
                    cols_p += [k, st.iv(i + 1, j)]
                    vals_p += [-1.0 / hp, 1.0 / hp]
                # pressure gradient in y
                dyc = st.yc[j] - st.yc[j - 1]
                rows_g += [k, k]
                cols_g += [st.ip(i, j - 1), st.ip(i, j)]
                vals_g += [-1.0 / dyc, 1.0 / dyc]
        z = np.zeros(self.n)
        self.v_dxc = self._coo(rows_c, cols_c, vals_c, b_c)
        self.v_dxm = self._coo(rows_m, cols_m, vals_m, b_m)
        self.v_dxp = self._coo(rows_p, cols_p, vals_p, z)
        self.v_dy = self._coo(rows_y, cols_y, vals_y, z)
        self.v_dyy = self._coo(rows_yy, cols_yy, vals_yy, z)
        self.v_dxx = self._coo(rows_xx, cols_xx, vals_xx, b_xx)
        self.v_gpy = self._coo(rows_g, cols_g, vals_g, z)

    def _build_div(self):
        st = self.st
        rows, cols, vals = [], [], []
        for i in range(st.ncx):
            dx = st.xf[i + 1] - st.xf[i]
            for j in range(st.ncy):
                dy = st.yf[j + 1] - st.yf[j]
                k = st.ip(i, j)
                rows += [k, k, k, k]
                cols += [st.iu(i + 1, j), st.iu(i, j), st.iv(i, j + 1), st.iv(i, j)]
                vals += [1.0 / dx, -1.0 / dx, 1.0 / dy, -1.0 / dy]
        self.div = self._coo(rows, cols, vals, np.zeros(self.n))

    def _build_avg(self):
        st, bc = self.st, self.bc
        # v averaged to interior u points
        rows, cols, vals = [], [], []
        for i in range(1, st.nxf - 1):
            wl = (st.xc[i] - st.xf[i]) / (st.xc[i] - st.xc[i - 1])
            for j in range(st.ncy):
                k = st.iu(i, j)
                for (iv_i, wx) in ((i - 1, wl), (i, 1 - wl)):
                    rows += [k, k]
                    cols += [st.iv(iv_i, j), st.iv(iv_i, j + 1)]
                    vals += [0.5 * wx, 0.5 * wx]
        self.v_at_u = self._coo(rows, cols, vals, np.zeros(self.n))
        # u averaged to interior v points
        rows, cols, vals = [], [], []
        for i in range(st.ncx):
            for j in range(1, st.nyf - 1):
                k = st.iv(i, j)
                wb = (st.yc[j] - st.yf[j]) / (st.yc[j] - st.yc[j - 1])
                for (ju, wy) in ((j - 1, wb), (j, 1 - wb)):
                    rows += [k, k]
                    cols += [st.iu(i, ju), st.iu(i + 1, ju)]
                    vals += [0.5 * wy, 0.5 * wy]
        self.u_at_v = self._coo(rows, cols, vals, np.zeros(self.n))


def _apply(op, w):
    M, b = op
    return M @ w + b


class _NSSystem:
    """Residual and Jacobian of the discrete steady system."""

    def __init__(self, grid: Grid2D, bc: _BC):
        self.st = _Staggered(grid)
        self.bc = bc
        self.ops = _Ops(self.st, bc)
        st = self.st
        self.n = st.n_u + st.n_v + st.n_p
        u_int, v_int = _interior_masks(st)
        self.mask = np.zeros(self.n)
        self.mask[:st.n_u][u_int.ravel()] = 1.0
        self.mask[st.n_u:st.n_u + st.n_v][v_int.ravel()] = 1.0
        self.mask[st.n_u + st.n_v:] = 1.0
        self._bc_rows = self._build_bc_rows()
        # local spacings for the hybrid blend
        dxl = np.zeros((st.nxf, st.ncy))
        dxl[1:-1, :] = (0.5 * (st.xf[2:] - st.xf[:-2]))[:, None]
        self.dx_at_u = dxl.ravel()
        dxv = np.zeros((st.ncx, st.nyf))
        dxv[0, :] = st.xc[1] - st.xc[0]
        dxv[-1, :] = st.xc[-1] - st.xc[-2]
        if st.ncx > 2:
            dxv[1:-1, :] = (0.5 * (st.xc[2:] - st.xc[:-2]))[:, None]
        self.dx_at_v_loc = dxv.ravel()

    def _build_bc_rows(self):
        st, bc = self.st, self.bc
        rows, cols, vals = [], [], []
        rhs = np.zeros(self.n)
        # inflow u
        for j in range(st.ncy):
            k = st.iu(0, j)
            rows.append(k); cols.append(k); vals.append(1.0)
            rhs[k] = bc.inflow_u[j]
        # outflow u: Dirichlet or Neumann; one row trades for the pressure pin
        pin_cell = st.ip(st.ncx - 1, st.ncy - 1)
        for j in range(st.ncy):
            k = st.iu(st.nxf - 1, j)
            if bc.outflow_u is not None:
                rows.append(k); cols.append(k); vals.append(1.0)
                rhs[k] = bc.outflow_u[j]
            elif j == st.ncy - 1:
                rows.append(k); cols.append(pin_cell); vals.append(1.0)
                rhs[k] = bc.p_pin
            else:
                rows += [k, k]
                cols += [k, st.iu(st.nxf - 2, j)]
                vals += [1.0, -1.0]
                rhs[k] = 0.0
        # wall and top v
        for i in range(st.ncx):
            k = st.iv(i, 0)
            rows.append(k); cols.append(k); vals.append(1.0)
            rhs[k] = bc.wall_v[i]
            k = st.iv(i, st.nyf - 1)
            if bc.top_v is not None:
                rows.append(k); cols.append(k); vals.append(1.0)
                rhs[k] = bc.top_v[i]
            else:
                rows += [k, k]
                cols += [k, st.iv(i, st.nyf - 2)]
                vals += [1.0, -1.0]
                rhs[k] = 0.0
        if self.bc.mode == "dirichlet":
            # pin one continuity row instead (all velocities are Dirichlet)
            k = st.ip(0, 0)
            rows.append(k); cols.append(k); vals.append(1.0)
            rhs[k] = bc.p_pin
            self.pin_continuity = k
        else:
            self.pin_continuity = None
        M = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return M, rhs

    def _blend(self, w):
        """Per-point hybrid weights in x from the current iterate (centered
        below cell Peclet 2, second-order one-sided above); the wall-normal
        cell Peclet stays below 2 in the resolved regime, so y convection is
        always centered."""
        st = self.st
        eps = self.eps
        u = w[:st.n_u]
        pe_x = np.abs(u) * self.dx_at_u / max(eps, 1e-300)
        th_x = np.clip(1.0 - 2.0 / np.maximum(pe_x, 1e-300), 0.0, 1.0)
        ubar = _apply(self.ops.u_at_v, w)[st.n_u:st.n_u + st.n_v]
        pe_v = np.abs(ubar) * self.dx_at_v_loc / max(eps, 1e-300)
        th_v = np.clip(1.0 - 2.0 / np.maximum(pe_v, 1e-300), 0.0, 1.0)
        return th_x, th_v, ubar

    @staticmethod
    def _blend_ops(th, sign_field, ops_c, ops_m, ops_p, lo, n_tot):
        """Compose centered/backward/forward operators with per-point weights
        living in the slot [lo, lo + len(th))."""
        up = (sign_field >= 0).astype(float)
        wc = np.zeros(n_tot)
        wm = np.zeros(n_tot)
        wp = np.zeros(n_tot)
        wc[lo:lo + th.size] = 1.0 - th
        wm[lo:lo + th.size] = th * up
        wp[lo:lo + th.size] = th * (1.0 - up)
        Wc, Wm, Wp = (sparse.diags(a) for a in (wc, wm, wp))
        M = Wc @ ops_c[0] + Wm @ ops_m[0] + Wp @ ops_p[0]
        b = Wc @ ops_c[1] + Wm @ ops_m[1] + Wp @ ops_p[1]
        return M, b

    def _u_dx_op(self, w, th_x):
        """Blended streamwise derivative acting on u (affine)."""
        st = self.st
        u = w[:st.n_u]
        return self._blend_ops(th_x, u, self.ops.u_dxc, self.ops.u_dxm,
                               self.ops.u_dxp, 0, self.n)

    def _v_dx_op(self, w, th_v, ubar):
        st = self.st
        return self._blend_ops(th_v, ubar, self.ops.v_dxc, self.ops.v_dxm,
                               self.ops.v_dxp, st.n_u, self.n)

    def residual(self, w, eps, want_jac=False):
        st, ops, bc = self.st, self.ops, self.bc
        self.eps = eps
        n_u, n_v = st.n_u, st.n_v
        th_x, th_v, ubar_slot = self._blend(w)
        Dux, bux = self._u_dx_op(w, th_x)
        ux = Dux @ w + bux
        Dvx, bvx = self._v_dx_op(w, th_v, ubar_slot)
        vx = Dvx @ w + bvx
        uy = _apply(ops.u_dy, w)
        uyy = _apply(ops.u_dyy, w)
        uxx = _apply(ops.u_dxx, w)
        gpx = _apply(ops.u_gpx, w)
        vbar = _apply(ops.v_at_u, w)
        vy = _apply(ops.v_dy, w)
        vyy = _apply(ops.v_dyy, w)
        vxx = _apply(ops.v_dxx, w)
        gpy = _apply(ops.v_gpy, w)
        ubar = _apply(ops.u_at_v, w)
        div = _apply(ops.div, w)

        uvec = np.zeros(self.n)
        uvec[:n_u] = w[:n_u]
        vvec = np.zeros(self.n)
        vvec[n_u:n_u + n_v] = w[n_u:n_u + n_v]
        fu = np.zeros(self.n)
        fu[:n_u] = bc.fu.ravel()
        fv = np.zeros(self.n)
        fv[n_u:n_u + n_v] = bc.fv.ravel()

        R = np.zeros(self.n)
        R += uvec * ux + vbar * uy + gpx - (uyy + eps * uxx) - fu
        R += eps * (ubar * vx + vvec * vy) + gpy \
            - eps * (vyy + eps * vxx) - eps * fv
        R += div
        R *= self.mask
        Mbc, rbc = self._bc_rows
        R += Mbc @ w - rbc
        if self.pin_continuity is not None:
            pass  # the pin row replaced that continuity row via mask below
        if not want_jac:
            return R
        D = sparse.diags
        J = (D(uvec) @ Dux + D(ux) @ _sel(self.n, 0, n_u)
             + D(vbar) @ ops.u_dy[0] + D(uy) @ ops.v_at_u[0]
             + ops.u_gpx[0] - ops.u_dyy[0] - eps * ops.u_dxx[0])
        J = J + eps * (D(ubar) @ Dvx + D(vx) @ ops.u_at_v[0]
                       + D(vvec) @ ops.v_dy[0]
                       + D(vy) @ _sel(self.n, n_u, n_u + n_v)) \
            + ops.v_gpy[0] - eps * ops.v_dyy[0] - eps * eps * ops.v_dxx[0]
        J = J + ops.div[0]
        J = D(self.mask) @ J + Mbc
        return R, J.tocsc()

    def picard_matrix(self, w, eps):
        """Oseen linearization: convecting fields frozen at the iterate."""
        st, ops = self.st, self.ops
        self.eps = eps
        n_u, n_v = st.n_u, st.n_v
        th_x, th_v, ubar_slot = self._blend(w)
        Dux, bux = self._u_dx_op(w, th_x)
        Dvx, bvx = self._v_dx_op(w, th_v, ubar_slot)
        vbar = _apply(ops.v_at_u, w)
        ubar = _apply(ops.u_at_v, w)
        uvec = np.zeros(self.n)
        uvec[:n_u] = w[:n_u]
        vvec = np.zeros(self.n)
        vvec[n_u:n_u + n_v] = w[n_u:n_u + n_v]
        D = sparse.diags
        A = (D(uvec) @ Dux + D(vbar) @ ops.u_dy[0]
             + ops.u_gpx[0] - ops.u_dyy[0] - eps * ops.u_dxx[0])
        A = A + eps * (D(ubar) @ Dvx + D(vvec) @ ops.v_dy[0]) \
            + ops.v_gpy[0] - eps * ops.v_dyy[0] - eps * eps * ops.v_dxx[0]
        A = A + ops.div[0]
        Mbc, rbc = self._bc_rows
        A = D(self.mask) @ A + Mbc
        bc = self.bc
        fu = np.zeros(self.n)
        fu[:n_u] = bc.fu.ravel()
        fv = np.zeros(self.n)
        fv[n_u:n_u + n_v] = bc.fv.ravel()
        # affine operator parts move to the right-hand side
        b_aff = (uvec * bux + vbar * ops.u_dy[1] - ops.u_dyy[1]
                 - eps * ops.u_dxx[1]
                 + eps * (ubar * bvx + vvec * ops.v_dy[1])
                 - eps * ops.v_dyy[1] - eps * eps * ops.v_dxx[1]
                 + ops.div[1])
        b = self.mask * (fu + eps * fv - b_aff) + rbc
        return A.tocsc(), b


def _sel(n, lo, hi):
    d = np.zeros(n)
    d[lo:hi] = 1.0
    return sparse.diags(d)


def solve_steady_ns(inflow, config: NSConfig, grid: Grid2D,
                    inflow_bundle=None, warm_start: NSField | None = None,
                    top_u_value: float = 1.0, dirichlet=None) -> NSField:
    """Continuation solve of the rescaled steady system down to config.eps.

    inflow is the (u, v) trace at x = 0 sampled on the y nodes (u may also be
    given on cell centers).  The layer must be resolved: at least 6 cells
    below the similarity height z = 1 at the outflow.
    """
    mode = "physical" if dirichlet is None else "dirichlet"
    st = _Staggered(grid)
    if mode == "physical":
        u_in = np.asarray(inflow[0], float)
        v_in = np.asarray(inflow[1], float)
        y_layer = math.sqrt(2.0 * (grid.x_max + 1.0))
        if np.count_nonzero(0.5 * (grid.y_nodes[1:] + grid.y_nodes[:-1])
                            < y_layer) < 6:
            raise PreconditionError("grid does not resolve the layer: need "
                                    ">= 6 cells below z = 1 at the outflow")
        bc = _build_bc(st, (u_in, v_in), mode="physical",
                       top_u_value=top_u_value)
    else:
        bc = _build_bc(st, None, mode="dirichlet", dirichlet=dirichlet)
    sysm = _NSSystem(grid, bc)

    if warm_start is not None:
        w = np.concatenate([warm_start.u.ravel(), warm_start.v.ravel(),
                            warm_start.p.ravel()])
    else:
        u0 = np.tile(bc.inflow_u, (st.nxf, 1))
        v0 = np.tile(bc.inflow_v, (st.ncx, 1))
        p0 = np.zeros((st.ncx, st.ncy))
        w = np.concatenate([u0.ravel(), v0.ravel(), p0.ravel()])

    history = []
    res = np.inf
    for stage, eps in enumerate(config.schedule):
        iters = 0
        # a few Oseen sweeps to get into Newton's basin
        n_picard = config.picard_iters if (stage == 0 and warm_start is None) else 1
        for _ in range(n_picard):
            A, b = sysm.picard_matrix(w, eps)
            w = splu(A).solve(b)
            iters += 1
        for it in range(config.max_newton):
            R, J = sysm.residual(w, eps, want_jac=True)
            res = float(np.max(np.abs(R)))
            if not np.isfinite(res):
                raise SolverError(f"non-finite residual at eps={eps:g}")
            if res <= config.newton_tol:
                break
            try:
                dw = splu(J).solve(R)
            except RuntimeError as exc:
                raise SolverError(f"linear solve failed at eps={eps:g}") from exc
            step = 1.0
            for _ in range(6):
                w_new = w - step * dw
                r_new = float(np.max(np.abs(sysm.residual(w_new, eps))))
                if r_new < res or step < 0.05:
                    break
                step *= 0.5
            w = w_new
            iters += 1
        else:
            raise SolverError(
                f"continuation stalled: eps={eps:g} residual={res:.3e}; "
                f"last converged stage {history[-1] if history else None}")
        history.append({"eps": eps, "iterations": iters, "residual": res})
    u = w[:st.n_u].reshape(st.nxf, st.ncy)
    v = w[st.n_u:st.n_u + st.n_v].reshape(st.ncx, st.nyf)
    p = w[st.n_u + st.n_v:].reshape(st.ncx, st.ncy)
    return NSField(grid, float(config.eps), u, v, p, history, res,
                   bc_top_u=bc.top_u.copy(), bc_inflow_v=bc.inflow_v.copy())


def ns_residual(fld: NSField, inflow=None, dirichlet=None,
                top_u_value: float = 1.0) -> dict:
    """Independent re-evaluation of the discrete residuals of a field: sup and
    L2 norms of the interior momentum rows and of cell continuity."""
    grid = fld.grid
    st = _Staggered(grid)
    if dirichlet is not None:
        bc = _build_bc(st, None, mode="dirichlet", dirichlet=dirichlet)
    else:
        if inflow is None:
            inflow = (fld.u[0], np.concatenate([[0.0], fld.v[0, 1:]]))
        bc = _build_bc(st, inflow, mode="physical", top_u_value=top_u_value)
    sysm = _NSSystem(grid, bc)
    w = np.concatenate([fld.u.ravel(), fld.v.ravel(), fld.p.ravel()])
    R = sysm.residual(w, fld.eps)
    n_u, n_v = st.n_u, st.n_v
    u_int, v_int = _interior_masks(st)
    Ru = R[:n_u][u_int.ravel()]
    Rv = R[n_u:n_u + n_v][v_int.ravel()]
    Rc = R[n_u + n_v:]
    out = {}
    for name, r in (("momentum_x", Ru), ("momentum_y", Rv), ("continuity", Rc)):
        out[name] = {"sup": float(np.max(np.abs(r))) if r.size else 0.0,
                     "l2": float(np.sqrt(np.mean(r**2))) if r.size else 0.0}
    return out


def manufactured_test(grids, eps: float) -> dict:
    """Order verification against a smooth divergence-free pair with no-slip
    at the wall; the forcing is closed-form.  Needs >= 3 nested grids."""
    grids = list(grids)
    if len(grids) < 3:
        raise ConfigurationError("need at least 3 nested grids")
    for ga, gb in zip(grids, grids[1:]):
        if (gb.nx - 1) != 2 * (ga.nx - 1) or (gb.ny - 1) != 2 * (ga.ny - 1):
            raise ConfigurationError("grids must be nested (factor-2 refinement)")
        if abs(ga.x_max - gb.x_max) > 1e-12 or abs(ga.y_max - gb.y_max) > 1e-12:
            raise ConfigurationError("grids must share the domain")

    A, B = 0.5, 0.1
    s = lambda x: np.pi * x + 0.3

    def ue(x, y):
        return A * np.sin(s(x)) * (2 * y - 6 * y**2 + 4 * y**3)

    def ve(x, y):
        return -A * np.pi * np.cos(s(x)) * (y**2 * (1 - y)**2)

    def pe(x, y):
        return B * np.cos(np.pi * x) * np.cos(np.pi * y)

    def fu(x, y):
        sn, cs = np.sin(s(x)), np.cos(s(x))
        gp = 2 * y - 6 * y**2 + 4 * y**3
        g = y**2 * (1 - y)**2
        gpp = 2 - 12 * y + 12 * y**2
        gppp = -12 + 24 * y
        u = A * sn * gp
        ux = A * np.pi * cs * gp
        uy = A * sn * gpp
        uyy = A * sn * gppp
        uxx = -A * np.pi**2 * sn * gp
        v = -A * np.pi * cs * g
        px = -B * np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
        return u * ux + v * uy + px - (uyy + eps * uxx)

    def fv(x, y):
        sn, cs = np.sin(s(x)), np.cos(s(x))
        g = y**2 * (1 - y)**2
        gp = 2 * y - 6 * y**2 + 4 * y**3
        gpp = 2 - 12 * y + 12 * y**2
        u = A * sn * gp
        v = -A * np.pi * cs * g
        vx = A * np.pi**2 * sn * g
        vy = -A * np.pi * cs * gp
        vyy = -A * np.pi * cs * gpp
        vxx = A * np.pi**3 * cs * g
        py = -B * np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
        return u * vx + v * vy + py / eps - (vyy + eps * vxx)

    dirichlet = {"u": ue, "v": ve, "p": pe, "fu": fu, "fv": fv}
    errs = []
    for g in grids:
        cfg = NSConfig(eps=eps, schedule=(eps,))
        fld = solve_steady_ns(None, cfg, g, dirichlet=dirichlet)
        st = _Staggered(g)
        XU, YU = np.meshgrid(st.xf, st.yc, indexing="ij")
        du = fld.u - ue(XU, YU)
        errs.append(float(np.sqrt(np.mean(du**2))))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    return {"errors": errs, "orders": orders, "observed_order": orders[-1]}


@dataclass
class RemainderReport:
    du: np.ndarray
    dv: np.ndarray
    sup_du: np.ndarray
    sup_dv: np.ndarray


def extract_remainder(fld: NSField, bundle) -> RemainderReport:
    """Nodal difference between the solved field and a truncated approximation
    sharing its grid and viscosity."""
    if fld.grid is not bundle.grid and (
            fld.grid.nx != bundle.grid.nx or fld.grid.ny != bundle.grid.ny
            or abs(fld.grid.x_max - bundle.grid.x_max) > 1e-12):
        raise ShapeError("field and bundle must share one grid")
    if abs(fld.eps - bundle.eps) > 1e-15:
        raise ShapeError("field and bundle must share eps")
    du = fld.u_nodal() - bundle.ubar.f
    dv = fld.v_nodal() - bundle.vbar.f
    return RemainderReport(du, dv, np.max(np.abs(du), axis=1),
                           np.max(np.abs(dv), axis=1))
