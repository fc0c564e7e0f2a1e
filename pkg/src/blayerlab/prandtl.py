"""Global-in-x marching of the nonlinear degenerate-parabolic layer system,
with x as the time-like variable, plus the stream-function ("von Mises")
twisted-difference comparison and its damping-identity audit.

The marching scheme is fully implicit (variable-step BDF2 by default, backward
Euler optionally) with Newton iteration on each step; the transverse velocity
is recovered from the same discrete x-derivative the step uses, so the pair
(u, v) is divergence-consistent at every accepted station.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .blasius import BlasiusFamily
from .errors import (ConfigurationError, DomainError, IntegrityError,
                     InversionError, PreconditionError, SolverError)
from .grid import Grid2D, cumtrapz, diff1, diff2, trapezoid_weights

__all__ = [
    "PrandtlState",
    "PrandtlRun",
    "MarchConfig",
    "march_prandtl",
    "v_from_u",
    "blasius_states",
    "momentum_integral_drift",
    "detect_separation",
    "TwistedDifference",
    "solve_twisted_difference",
    "damping_audit",
    "DampingReport",
]


@dataclass
class PrandtlState:
    """One marched station: profiles plus wall diagnostics."""

    x: float
    u: np.ndarray
    v: np.ndarray
    wall_shear: float
    displacement: float
    momentum: float


@dataclass
class PrandtlRun:
    """A marched (or analytically sampled) trajectory on one y grid."""

    y_nodes: np.ndarray
    states: list

    @property
    def x_nodes(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    def u_matrix(self) -> np.ndarray:
        return np.array([s.u for s in self.states])

    def v_matrix(self) -> np.ndarray:
        return np.array([s.v for s in self.states])


@dataclass
class MarchConfig:
    """Controls for the implicit march.

    dx_schedule, when given, overrides the grid's x nodes: the march then
    visits cumsum(dx_schedule) starting from x = 0.  dPdx is the imposed outer
    pressure gradient (0 in the favorable default); the outer edge speed
    follows from it by the Bernoulli relation.
    """

    dx_schedule: np.ndarray | None = None
    tol: float = 1e-10
    max_iters: int = 30
    check_monotone: bool = True
    dPdx: float | Callable = 0.0
    scheme: str = "bdf2"
    max_halvings: int = 10
    stop_at_separation: bool = True
    edge_floor: float = 0.05

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigurationError("tolerance must be positive")
        if self.dx_schedule is not None:
            dx = np.asarray(self.dx_schedule, float)
            if dx.ndim != 1 or np.any(dx <= 0) or not np.all(np.isfinite(dx)):
                raise ConfigurationError("dx schedule must be positive and finite")
            self.dx_schedule = dx
        if self.scheme not in ("bdf2", "be"):
            raise ConfigurationError("scheme must be 'bdf2' or 'be'")

    def px_at(self, x: float) -> float:
        return float(self.dPdx(x)) if callable(self.dPdx) else float(self.dPdx)


def _cumulative_matrix(y: np.ndarray) -> np.ndarray:
    """Lower-triangular T with (T f)_j = trapezoid integral of f on [0, y_j]."""
    ny = y.size
    h = np.diff(y)
    T = np.zeros((ny, ny))
    for j in range(1, ny):
        T[j] = T[j - 1]
        T[j, j - 1] += 0.5 * h[j - 1]
        T[j, j] += 0.5 * h[j - 1]
    return T


def _wall_shear(u: np.ndarray, y: np.ndarray) -> float:
    h1, h2 = y[1] - y[0], y[2] - y[1]
    c0 = -(2 * h1 + h2) / (h1 * (h1 + h2))
    c1 = (h1 + h2) / (h1 * h2)
    c2 = -h1 / (h2 * (h1 + h2))
    return float(c0 * u[0] + c1 * u[1] + c2 * u[2])


def _make_state(x, u, v, y, w, u_edge) -> PrandtlState:
    one_minus = np.clip(u_edge, 1e-12, None)
    disp = float(np.dot(w, 1.0 - u / one_minus))
    mom = float(np.dot(w, u * (1.0 - u / one_minus)))
    return PrandtlState(float(x), u.copy(), v.copy(), _wall_shear(u, y), disp, mom)


def _edge_speed(config: MarchConfig, x: float) -> float:
    """Outer speed from the Bernoulli relation u_e u_e' = -dP/dx, u_e(0) = 1."""
    if not callable(config.dPdx) and config.dPdx == 0.0:
        return 1.0
    from scipy.integrate import quad

    if callable(config.dPdx):
        val, _ = quad(lambda t: config.px_at(t), 0.0, x, limit=200)
    else:
        val = config.dPdx * x
    return math.sqrt(max(1.0 - 2.0 * val, config.edge_floor**2))


class _ImplicitStepper:
    """One nonlinear implicit step of the layer momentum equation."""

    def __init__(self, y: np.ndarray, config: MarchConfig):
        self.y = y
        self.config = config
        self.ny = y.size
        self.T = _cumulative_matrix(y)
        from .grid import d1_matrix, d2_matrix

        self.D1 = d1_matrix(y).toarray()
        self.D2 = d2_matrix(y).toarray()

    def step(self, levels: list, coeffs: tuple, x_new: float) -> np.ndarray:
        """Solve for u at x_new.  levels = [u_n, u_nm1 or None]; coeffs are the
        discrete x-derivative weights (a, b, c) for (new, n, n-1)."""
        cfg = self.config
        a, b, c = coeffs
        u_n, u_nm1 = levels
        rhs_hist = b * u_n + (c * u_nm1 if u_nm1 is not None else 0.0)
        u = u_n.copy()
        u_edge = _edge_speed(cfg, x_new)
        px = cfg.px_at(x_new)
        u[0] = 0.0
        u[-1] = u_edge
        I = np.eye(self.ny)
        for it in range(cfg.max_iters):
            ux = a * u + rhs_hist
            v = -self.T @ ux
            uy = self.D1 @ u
            uyy = self.D2 @ u
            F = u * ux + v * uy - uyy + px
            # residual on interior rows only
            res = np.max(np.abs(F[1:-1]))
            if not np.isfinite(res):
                raise SolverError("non-finite residual in implicit step")
            if res <= cfg.tol:
                return u
            J = (np.diag(ux + a * u) + v[:, None] * self.D1
                 - a * uy[:, None] * self.T - self.D2)
            J[0] = I[0]
            J[-1] = I[-1]
            F = F.copy()
            F[0] = u[0] - 0.0
            F[-1] = u[-1] - u_edge
            try:
                delta = np.linalg.solve(J, F)
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"singular Newton system: {exc}") from exc
            u = u - delta
        raise SolverError(
            f"Newton stalled at x = {x_new:.6g} (residual {res:.3e})")


def march_prandtl(datum: np.ndarray, grid: Grid2D, config: MarchConfig | None = None
                  ) -> list:
    """March the nonlinear layer system from the inflow profile `datum`.

    Returns one PrandtlState per x station.  Newton failures trigger step
    halving; wall shear crossing zero in the favorable regime is an integrity
    violation, while under an adverse imposed gradient the march records the
    crossing and stops (the separation detector interpolates it).
    """
    config = config or MarchConfig()
    y = grid.y_nodes
    w = grid.y_weights
    datum = np.asarray(datum, float)
    if datum.shape != y.shape:
        raise PreconditionError("datum must be sampled on the grid's y nodes")
    if datum[0] != 0.0:
        raise PreconditionError("datum must vanish at the wall")
    u_edge0 = _edge_speed(config, 0.0)
    if abs(datum[-1] - u_edge0) > 1e-6:
        raise PreconditionError("datum must match the outer speed at Y_max")
    if config.check_monotone and np.any(np.diff(datum) < -1e-10):
        raise PreconditionError("datum must be monotone nondecreasing "
                                "(disable check_monotone to override)")
    ddatum = diff2(datum, y)
    if abs(ddatum[0] - config.px_at(0.0)) > 0.5:
        warnings.warn("datum is far from wall compatibility; expect a transient",
                      stacklevel=2)

    if config.dx_schedule is not None:
        x_nodes = np.concatenate([[0.0], np.cumsum(config.dx_schedule)])
    else:
        x_nodes = grid.x_nodes
    stepper = _ImplicitStepper(y, config)
    favorable = (not callable(config.dPdx)) and config.px_at(0.0) <= 0.0

    states = [_make_state(x_nodes[0], datum,
                          np.zeros_like(datum), y, w, u_edge0)]
    u_prev, u_prevprev = datum.copy(), None
    h_prev = None
    x = x_nodes[0]

    def advance(u_n, u_nm1, h_nm1, x_from, h, depth):
        """One step of size h from x_from, halving on Newton failure."""
        use_bdf2 = (config.scheme == "bdf2" and u_nm1 is not None)
        if use_bdf2:
            r = h / h_nm1
            a = (1 + 2 * r) / (h * (1 + r))
            b = -(1 + r) / h
            c = r * r / (h * (1 + r))
        else:
            a, b, c = 1.0 / h, -1.0 / h, 0.0
        try:
            u_new = stepper.step([u_n, u_nm1 if use_bdf2 else None],
                                 (a, b, c), x_from + h)
            return u_new, h
        except SolverError:
            if depth >= config.max_halvings:
                raise
            u_mid, h_mid = advance(u_n, u_nm1, h_nm1, x_from, h / 2, depth + 1)
            return advance(u_mid, u_n, h_mid, x_from + h / 2, h / 2, depth + 1)

    for x_target in x_nodes[1:]:
        h = x_target - x
        u_new, h_eff = advance(u_prev, u_prevprev, h_prev, x, h, 0)
        # scheme-consistent transverse velocity at the accepted station
        if config.scheme == "bdf2" and u_prevprev is not None and h_eff == h:
            r = h / h_prev
            a = (1 + 2 * r) / (h * (1 + r))
            b = -(1 + r) / h
            c = r * r / (h * (1 + r))
            ux = a * u_new + b * u_prev + c * u_prevprev
        else:
            ux = (u_new - u_prev) / h
        v_new = -stepper.T @ ux
        state = _make_state(x_target, u_new, v_new, y, w,
                            _edge_speed(config, x_target))
        states.append(state)
        if state.wall_shear <= 0.0:
            if favorable:
                raise IntegrityError(
                    f"wall shear {state.wall_shear:.3e} <= 0 at x = {x_target:.4g} "
                    "in the favorable regime")
            if config.stop_at_separation:
                break
        u_prevprev, u_prev = u_prev, u_new
        h_prev = h
        x = x_target
    return states


def v_from_u(u_pair: Sequence[np.ndarray], dx: float, grid: Grid2D) -> np.ndarray:
    """Transverse velocity from two consecutive u profiles:
    v(y) = -int_0^y du/dx dy', du/dx by the finite difference over dx."""
    if dx == 0.0:
        raise DomainError("dx must be nonzero")
    u0, u1 = (np.asarray(a, float) for a in u_pair)
    if u0.shape != (grid.ny,) or u1.shape != (grid.ny,):
        raise PreconditionError("profiles must live on the grid's y nodes")
    return -cumtrapz((u1 - u0) / dx, grid.y_nodes)


def blasius_states(family: BlasiusFamily, x_nodes: np.ndarray,
                   y_nodes: np.ndarray) -> PrandtlRun:
    """Sample the exact self-similar family as a run (conservation oracle)."""
    w = trapezoid_weights(y_nodes)
    states = []
    for x in np.asarray(x_nodes, float):
        u = family.u(x, y_nodes)
        v = family.v(x, y_nodes)
        states.append(PrandtlState(float(x), u, v,
                                   float(family.wall_shear(x)),
                                   float(np.dot(w, 1.0 - u)),
                                   float(np.dot(w, u * (1.0 - u)))))
    return PrandtlRun(np.asarray(y_nodes, float), states)


def momentum_integral_drift(run: PrandtlRun) -> float:
    """Conservation audit under zero imposed gradient:
    max over x of | d/dx int u (1 - u) dy  -  du/dy(x, 0) |."""
    states = run.states
    if len(states) < 3:
        return 0.0
    x = run.x_nodes
    w = trapezoid_weights(run.y_nodes)
    I = np.array([np.dot(w, s.u * (1.0 - s.u)) for s in states])
    dIdx = diff1(I, x)
    shear = np.array([_wall_shear(s.u, run.y_nodes) for s in states])
    return float(np.max(np.abs(dIdx[1:-1] - shear[1:-1])))


def detect_separation(states: Sequence[PrandtlState]):
    """Smallest x with nonpositive wall shear, by linear interpolation."""
    states = list(states)
    if not states:
        return None
    for prev, cur in zip(states, states[1:]):
        if prev.wall_shear > 0.0 and cur.wall_shear <= 0.0:
            ds = prev.wall_shear - cur.wall_shear
            frac = prev.wall_shear / ds if ds != 0 else 0.0
            return prev.x + frac * (cur.x - prev.x)
    if states[0].wall_shear <= 0.0:
        return states[0].x
    return None


# ---------------------------------------------------------------------------
# Twisted differences in stream-function coordinates
# ---------------------------------------------------------------------------


@dataclass
class TwistedDifference:
    """phi(x, psi) compared two ways: direct twisted subtraction of the runs,
    and an independent march of the damped heat equation it satisfies."""

    x_nodes: np.ndarray
    psi_nodes: np.ndarray
    phi: np.ndarray          # marched solution, shape (nx, n_psi)
    phi_direct: np.ndarray   # twisted subtraction of the two runs
    coeff_u: np.ndarray      # transporting profile on the psi grid
    A: np.ndarray            # zeroth-order damping coefficient
    discrepancy: float       # sup |phi - phi_direct|


def _slices_on_psi(run: PrandtlRun, psi: np.ndarray):
    """Per-station inversion psi -> y for one run; returns u and u_yy on psi."""
    y = run.y_nodes
    u_all, uyy_all, w_all = [], [], []
    for s in run.states:
        u = s.u
        if np.any(u[1:] <= 0.0):
            raise InversionError(
                f"profile at x = {s.x:.4g} is not positive; cannot invert")
        psi_of_y = cumtrapz(u, y)
        if np.any(np.diff(psi_of_y) <= 0.0):
            raise InversionError(
                f"stream function at x = {s.x:.4g} is not strictly increasing")
        if psi[-1] > psi_of_y[-1] * (1 + 1e-9):
            raise InversionError("psi grid exceeds the run's stream-function range")
        y_of_psi = np.interp(psi, psi_of_y, y)
        u_psi = np.interp(y_of_psi, y, u)
        uyy = diff2(u, y)
        uyy_psi = np.interp(y_of_psi, y, uyy)
        u_all.append(u_psi)
        uyy_all.append(uyy_psi)
        w_all.append(u_psi**2)
    return np.array(u_all), np.array(uyy_all), np.array(w_all)


def solve_twisted_difference(base: PrandtlRun, other: PrandtlRun,
                             n_psi: int = 400, psi_max: float | None = None
                             ) -> TwistedDifference:
    """Compare two runs at equal stream-function value.

    phi(x, psi) = u_other(x, y_other(psi))^2 - u_base(x, y_base(psi))^2 is
    built by monotone inversion of each run's stream function; independently,
    the damped degenerate heat equation

        d(phi)/dx = u_other d2(phi)/dpsi2 - A phi,
        A = -2 u_base_yy / (u_base u_other)  (evaluated at matched psi),

    is marched from the shared inflow slice, and the sup discrepancy between
    the two constructions is reported.
    """
    xb, xo = base.x_nodes, other.x_nodes
    if xb.size != xo.size or np.max(np.abs(xb - xo)) > 1e-12 * (1 + xb[-1]):
        raise PreconditionError("runs must share x nodes")
    # psi grid clustered like sqrt at the wall (y ~ sqrt(psi) there)
    w_y = trapezoid_weights(base.y_nodes)
    psi_cap_base = min(float(np.dot(w_y, s.u)) for s in base.states)
    w_yo = trapezoid_weights(other.y_nodes)
    psi_cap_other = min(float(np.dot(w_yo, s.u)) for s in other.states)
    cap = 0.98 * min(psi_cap_base, psi_cap_other)
    if psi_max is None:
        psi_max = cap
    elif psi_max > cap:
        raise ConfigurationError("psi_max exceeds the representable range")
    s = np.linspace(0.0, 1.0, n_psi)
    psi = psi_max * s**2

    u_b, uyy_b, w_b = _slices_on_psi(base, psi)
    u_o, _, w_o = _slices_on_psi(other, psi)
    phi_direct = w_o - w_b
    with np.errstate(divide="ignore", invalid="ignore"):
        A = -2.0 * uyy_b / (u_b * u_o)
    A[:, 0] = A[:, 1]  # wall column: finite limit, excluded from the march anyway

    # independent trapezoidal march of the damped equation on the same grid
    from scipy.linalg import solve_banded

    hm = np.diff(psi)
    lo = np.zeros(n_psi)
    di = np.zeros(n_psi)
    up = np.zeros(n_psi)
    lo[1:-1] = 2.0 / (hm[:-1] * (hm[:-1] + hm[1:]))
    di[1:-1] = -2.0 / (hm[:-1] * hm[1:])
    up[1:-1] = 2.0 / (hm[1:] * (hm[:-1] + hm[1:]))
    nx = xb.size
    phi = np.empty_like(phi_direct)
    phi[0] = phi_direct[0]
    theta = 0.5
    for n in range(1, nx):
        dx = xb[n] - xb[n - 1]
        uh = 0.5 * (u_o[n] + u_o[n - 1])
        Ah = 0.5 * (A[n] + A[n - 1])
        # row coefficients of L phi = uh d2(phi) - Ah phi; BC rows stay empty
        b_lo, b_di, b_up = uh * lo, uh * di - Ah, uh * up
        b_di[0] = b_di[-1] = 0.0
        prev = phi[n - 1]
        rhs = prev / dx + (1 - theta) * (
            b_di * prev
            + np.concatenate([b_up[:-1] * prev[1:], [0.0]])
            + np.concatenate([[0.0], b_lo[1:] * prev[:-1]]))
        ab = np.zeros((3, n_psi))
        ab[0, 1:] = -theta * b_up[:-1]
        ab[1] = 1.0 / dx - theta * b_di
        ab[2, :-1] = -theta * b_lo[1:]
        ab[1, 0] = 1.0
        rhs[0] = 0.0
        ab[1, -1] = 1.0
        rhs[-1] = phi_direct[n, -1]
        phi[n] = solve_banded((1, 1), ab, rhs)
    disc = float(np.max(np.abs(phi - phi_direct)))
    return TwistedDifference(xb.copy(), psi, phi, phi_direct, u_o, A, disc)


@dataclass
class DampingReport:
    x_mid: np.ndarray
    relative_residual: np.ndarray
    transport_term: np.ndarray
    curvature_damping: np.ndarray
    zeroth_damping: np.ndarray
    l2_norms: np.ndarray
    negative_damping_flagged: bool
    monotone_violations: int

    @property
    def max_relative_residual(self) -> float:
        return float(np.max(self.relative_residual))


def damping_audit(td: TwistedDifference) -> DampingReport:
    """Per-step residual of the energy identity

        d/dx (1/2) int phi^2 + int u |d(phi)/dpsi|^2
            - (1/2) int d2(u)/dpsi2 phi^2 + int A phi^2 = 0,

    relative to the transport term, plus sign flags for the two damping
    coefficients and the count of L2 monotonicity violations."""
    psi = td.psi_nodes
    wq = trapezoid_weights(psi)
    phi = td.phi
    nx = td.x_nodes.size
    E = 0.5 * (wq[None, :] * phi**2).sum(axis=1)
    l2 = np.sqrt(2.0 * E)
    upp = diff2(td.coeff_u, psi, axis=1)
    res, tr, cd, zd = [], [], [], []
    for n in range(1, nx):
        dx = td.x_nodes[n] - td.x_nodes[n - 1]
        # terms are evaluated at the half level, matching the trapezoidal march
        ph = 0.5 * (phi[n] + phi[n - 1])
        uh = 0.5 * (td.coeff_u[n] + td.coeff_u[n - 1])
        upph = 0.5 * (upp[n] + upp[n - 1])
        Ah = 0.5 * (td.A[n] + td.A[n - 1])
        dph = diff1(ph, psi)
        t1 = (E[n] - E[n - 1]) / dx
        t2 = float(np.dot(wq, uh * dph**2))
        t3 = -0.5 * float(np.dot(wq, upph * ph**2))
        t4 = float(np.dot(wq, Ah * ph**2))
        res.append(abs(t1 + t2 + t3 + t4) / max(t2, 1e-300))
        tr.append(t2)
        cd.append(t3)
        zd.append(t4)
    neg = (np.array(cd) < -1e-12 * max(tr)).any() or \
          (td.A[:, 1:].min() < -1e-12)
    viol = int(np.sum(l2[1:] > l2[:-1] * (1.0 + 1e-13)))
    xm = 0.5 * (td.x_nodes[1:] + td.x_nodes[:-1])
    return DampingReport(xm, np.array(res), np.array(tr), np.array(cd),
                         np.array(zd), l2, bool(neg), viol)
