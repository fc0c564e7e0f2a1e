"""Self-similar flat-plate profile: shooting solve of ff'' + f''' = 0 and the
velocity family it generates.

The profile function f is normalized by f(0) = f'(0) = 0, f'(inf) = 1, with
shooting parameter s = f''(0) (near 0.4696).  With this normalization the
velocity pair

    u(x, y) = f'(zb),   v(x, y) = (zb f'(zb) - f(zb)) / sqrt(2 (x + x0)),
    zb = y / sqrt(2 (x + x0)),

solves u u_x + v u_y = u_yy exactly, which is what the marching regression
and the conservation audits rely on.  The sqrt(2) inside the similarity
argument is forced by the chosen ODE normalization; the wall shear is
u_y(x, 0) = s / sqrt(2 (x + x0)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (ConfigurationError, ExtrapolationError, PreconditionError,
                     ResolutionError, SolverError)

__all__ = [
    "BlasiusProfile",
    "solve_blasius",
    "blasius_ode_residual",
    "blasius_field",
    "blasius_properties_check",
    "BlasiusFamily",
    "export_profile_csv",
]


@dataclass
class BlasiusProfile:
    """Converged profile samples on a uniform z grid plus the shooting value."""

    z_nodes: np.ndarray
    f: np.ndarray
    fp: np.ndarray
    fpp: np.ndarray
    s: float
    x0: float = 1.0
    _splines: dict = field(default_factory=dict, repr=False)

    @property
    def z_max(self) -> float:
        return float(self.z_nodes[-1])

    @property
    def displacement(self) -> float:
        """beta = lim (z - f(z)), the far-field offset of f."""
        return float(self.z_nodes[-1] - self.f[-1])

    def _spline(self, name):
        if name not in self._splines:
            from scipy.interpolate import CubicSpline

            data = {"f": self.f, "fp": self.fp, "fpp": self.fpp}[name]
            self._splines[name] = CubicSpline(self.z_nodes, data)
        return self._splines[name]

    def eval_f(self, z):
        """f(z), continued as z - beta beyond the computed range."""
        z = np.asarray(z, float)
        inside = np.clip(z, 0.0, self.z_max)
        out = self._spline("f")(inside)
        return np.where(z > self.z_max, z - self.displacement, out)

    def eval_fp(self, z):
        z = np.asarray(z, float)
        out = self._spline("fp")(np.clip(z, 0.0, self.z_max))
        return np.where(z > self.z_max, 1.0, out)

    def eval_fpp(self, z):
        z = np.asarray(z, float)
        out = self._spline("fpp")(np.clip(z, 0.0, self.z_max))
        return np.where(z > self.z_max, 0.0, np.maximum(out, 0.0))

    def eval_fppp(self, z):
        """f''' = -f f'' from the ODE itself."""
        return -self.eval_f(z) * self.eval_fpp(z)


def _integrate_profile(s: float, z_max: float, nz: int):
    """Classical 4th-order one-step integration of (f, f', f'') from the wall."""
    h = z_max / (nz - 1)
    f = np.empty(nz)
    fp = np.empty(nz)
    fpp = np.empty(nz)
    a, b, c = 0.0, 0.0, float(s)
    f[0], fp[0], fpp[0] = a, b, c
    for i in range(1, nz):
        k1 = (b, c, -a * c)
        a2, b2, c2 = a + 0.5 * h * k1[0], b + 0.5 * h * k1[1], c + 0.5 * h * k1[2]
        k2 = (b2, c2, -a2 * c2)
        a3, b3, c3 = a + 0.5 * h * k2[0], b + 0.5 * h * k2[1], c + 0.5 * h * k2[2]
        k3 = (b3, c3, -a3 * c3)
        a4, b4, c4 = a + h * k3[0], b + h * k3[1], c + h * k3[2]
        k4 = (b4, c4, -a4 * c4)
        a += h * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) / 6.0
        b += h * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) / 6.0
        c += h * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]) / 6.0
        f[i], fp[i], fpp[i] = a, b, c
    return f, fp, fpp


def solve_blasius(Z_max: float = 20.0, nz: int = 4000, tol: float = 1e-10,
                  x0: float = 1.0) -> BlasiusProfile:
    """Shooting solve of ff'' + f''' = 0, f(0) = f'(0) = 0, f'(Z_max) = 1.

    Bisection on the wall curvature over the bracket [0.1, 1.0], followed by
    secant refinement.  Raises on a failed bracket or an unreachable tol.
    """
    if not (np.isfinite(Z_max) and Z_max >= 15.0):
        raise ConfigurationError("Z_max must be >= 15")
    if nz < 100:
        raise ConfigurationError("nz must be >= 100")
    if not (np.isfinite(tol) and tol > 0):
        raise ConfigurationError("tol must be positive")

    def overshoot(s):
        _, fp, _ = _integrate_profile(s, Z_max, nz)
        return fp[-1] - 1.0

    lo, hi = 0.1, 1.0
    g_lo, g_hi = overshoot(lo), overshoot(hi)
    if g_lo * g_hi > 0:
        raise SolverError("shooting bracket [0.1, 1.0] does not straddle f'(Z_max) = 1")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        g_mid = overshoot(mid)
        if g_lo * g_mid <= 0:
            hi, g_hi = mid, g_mid
        else:
            lo, g_lo = mid, g_mid
        if hi - lo < 1e-13:
            break
    # secant refinement from the bisection endpoints
    s0, s1, g0, g1 = lo, hi, g_lo, g_hi
    for _ in range(8):
        if g1 == g0:
            break
        s2 = s1 - g1 * (s1 - s0) / (g1 - g0)
        g2 = overshoot(s2)
        s0, g0, s1, g1 = s1, g1, s2, g2
        if abs(g1) <= 0.1 * tol:
            break
    if abs(g1) > tol:
        raise ResolutionError(
            f"|f'(Z_max) - 1| = {abs(g1):.3e} > tol = {tol:.1e} at nz = {nz}")
    f, fp, fpp = _integrate_profile(s1, Z_max, nz)
    np.maximum(fpp, 0.0, out=fpp)  # curvature underflows through 0 at the tail
    return BlasiusProfile(np.linspace(0.0, Z_max, nz), f, fp, fpp, s=float(s1),
                          x0=float(x0))


def blasius_ode_residual(profile: BlasiusProfile) -> float:
    """sup over interior nodes of |f f'' + f'''|, f''' by finite differences
    of the stored curvature (4th-order centered stencil)."""
    z, f, fpp = profile.z_nodes, profile.f, profile.fpp
    if not (len(z) == len(f) == len(profile.fp) == len(fpp)):
        raise ConfigurationError("profile arrays must share one grid")
    h = z[1] - z[0]
    fppp = (-fpp[4:] + 8 * fpp[3:-1] - 8 * fpp[1:-3] + fpp[:-4]) / (12 * h)
    res = f[2:-2] * fpp[2:-2] + fppp
    return float(np.max(np.abs(res)))


def _zb(x, y, x0):
    return np.asarray(y, float) / np.sqrt(2.0 * (np.asarray(x, float) + x0))


def blasius_field(profile: BlasiusProfile, x, y):
    """Velocity pair (u, v) of the self-similar family at (x, y).

    Cubic interpolation in the similarity variable; beyond the computed range
    the profile is continued by its exact linear tail.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x < 0) or np.any(y < 0):
        raise PreconditionError("blasius_field requires x >= 0, y >= 0")
    root = np.sqrt(2.0 * (x + profile.x0))
    z = y / root
    if np.any(z > profile.z_max * (1.0 + 1e-12)):
        raise ExtrapolationError(
            "y beyond the representable similarity range z <= Z_max")
    f = profile.eval_f(z)
    fp = profile.eval_fp(z)
    u = fp
    v = (z * fp - f) / root
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


@dataclass
class PropertiesReport:
    concavity_ok: bool
    wall_shear_ok: bool
    max_curvature: float
    max_shear_error: float
    flagged: bool

    @property
    def all_ok(self) -> bool:
        return self.concavity_ok and self.wall_shear_ok and not self.flagged


def blasius_properties_check(profile: BlasiusProfile, x_samples: Sequence[float],
                             tol: float = 1e-10) -> PropertiesReport:
    """Check (a) u_yy <= tol everywhere and (b) the wall-shear law
    u_y(x, 0) * sqrt(2 (x + x0)) = s at every sampled x."""
    fam = BlasiusFamily(profile)
    max_curv = -np.inf
    max_shear_err = 0.0
    for x in x_samples:
        y = profile.z_nodes * math.sqrt(2.0 * (x + profile.x0))
        uyy = fam.u_yy(x, y)
        max_curv = max(max_curv, float(np.max(uyy)))
        shear = fam.u_y(x, 0.0) * math.sqrt(2.0 * (x + profile.x0))
        max_shear_err = max(max_shear_err, abs(shear - profile.s))
    concavity_ok = max_curv <= tol
    wall_shear_ok = max_shear_err <= 1e-8 * max(1.0, abs(profile.s))
    return PropertiesReport(concavity_ok, wall_shear_ok, max_curv, max_shear_err,
                            flagged=not (concavity_ok and wall_shear_ok))


class BlasiusFamily:
    """Closed-form evaluation of the profile family and its derivatives.

    Every method broadcasts over x and y.  These analytic fields feed the
    marching datum, the twisted-difference construction, norm backgrounds and
    the conservation oracles, so they must stay exactly divergence-free and
    exactly solve the layer momentum equation (up to profile accuracy).
    """

    def __init__(self, profile: BlasiusProfile, x0: float | None = None):
        self.profile = profile
        self.x0 = profile.x0 if x0 is None else float(x0)
        self.s = profile.s

    def _parts(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        root = np.sqrt(2.0 * (x + self.x0))
        z = y / root
        return x, y, root, z

    def u(self, x, y):
        _, _, _, z = self._parts(x, y)
        return self.profile.eval_fp(z)

    def v(self, x, y):
        _, _, root, z = self._parts(x, y)
        f = self.profile.eval_f(z)
        fp = self.profile.eval_fp(z)
        return (z * fp - f) / root

    def psi(self, x, y):
        """Stream function: psi = sqrt(2 (x + x0)) f(z), d(psi)/dy = u."""
        _, _, root, z = self._parts(x, y)
        return root * self.profile.eval_f(z)

    def u_y(self, x, y):
        _, _, root, z = self._parts(x, y)
        return self.profile.eval_fpp(z) / root

    def u_yy(self, x, y):
        _, _, root, z = self._parts(x, y)
        return self.profile.eval_fppp(z) / root**2

    def u_x(self, x, y):
        x, _, root, z = self._parts(x, y)
        return -self.profile.eval_fpp(z) * z / (2.0 * (x + self.x0))

    def u_xx(self, x, y):
        x, _, root, z = self._parts(x, y)
        fpp = self.profile.eval_fpp(z)
        fppp = self.profile.eval_fppp(z)
        denom = 2.0 * (x + self.x0)
        return (z * z * fppp + 3.0 * z * fpp) / denom**2

    def u_xy(self, x, y):
        x, _, root, z = self._parts(x, y)
        fpp = self.profile.eval_fpp(z)
        fppp = self.profile.eval_fppp(z)
        return -(fpp + z * fppp) / (2.0 * (x + self.x0) * root)

    def v_x(self, x, y):
        x, _, root, z = self._parts(x, y)
        f = self.profile.eval_f(z)
        fp = self.profile.eval_fp(z)
        fpp = self.profile.eval_fpp(z)
        return (-(z * fp - f) / (2.0 * (x + self.x0)) - z * z * fpp / (2.0 * (x + self.x0))) / root

    def v_y(self, x, y):
        x, _, root, z = self._parts(x, y)
        return self.profile.eval_fpp(z) * z / (2.0 * (x + self.x0))

    def v_yy(self, x, y):
        x, _, root, z = self._parts(x, y)
        fpp = self.profile.eval_fpp(z)
        fppp = self.profile.eval_fppp(z)
        return (fpp + z * fppp) / (2.0 * (x + self.x0) * root)

    def v_xx(self, x, y):
        x, _, root, z = self._parts(x, y)
        f = self.profile.eval_f(z)
        fp = self.profile.eval_fp(z)
        fpp = self.profile.eval_fpp(z)
        fppp = self.profile.eval_fppp(z)
        denom = 2.0 * (x + self.x0)
        return (z**3 * fppp + 6.0 * z * z * fpp + 3.0 * (z * fp - f)) / (denom**2 * root)

    def v_far(self, x):
        """Transverse velocity above the layer: beta / sqrt(2 (x + x0))."""
        x = np.asarray(x, float)
        return self.profile.displacement / np.sqrt(2.0 * (x + self.x0))

    def wall_shear(self, x):
        x = np.asarray(x, float)
        return self.s / np.sqrt(2.0 * (x + self.x0))


def export_profile_csv(profile: BlasiusProfile, path) -> None:
    """CSV columns z, f, fp, fpp at 16 significant digits."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("z,f,fp,fpp\n")
        for z, f, fp, fpp in zip(profile.z_nodes, profile.f, profile.fp, profile.fpp):
            fh.write(f"{z:.16g},{f:.16g},{fp:.16g},{fpp:.16g}\n")
