"""Conformal metric g = (E - U)/U0, its log-gradients and curvature.

All tensors live in local coordinates x where the metric is ``g(x) dx.dx``.
For the three-body problem there is no global map x -> rho; the local
coordinates are tied to rho only through a frame, ``d rho = M(rho) dx``
(see :mod:`geoflow3b.transform`). Derivatives "along x^k" are therefore
directional derivatives along the frame vector ``e_k = M[:, k]``. A
:class:`Chart` hides that distinction so the same curvature code runs on a
genuine coordinate chart (for oracles) and on the three-body frame.
"""
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryError, SingularCoefficientError

__all__ = ["conformal_factor", "log_gradient", "a_coefficients", "lambda_sq", "christoffel",
           "christoffel_generic", "b_coefficients", "gdot_components", "christoffel_dot",
           "christoffel_dot_regular", "riemann", "CurvatureBundle", "curvature_bundle",
           "Chart", "CoordinateChart", "FrameChart", "directional_derivative"]


def conformal_factor(rho, system):
    """``(E - U(rho)) / U0``.

    Raises
    ------
    BoundaryError
        On the turning surface E = U or inside the forbidden region.
    """
    return float(system.kinetic_budget(rho) / system.U0)


def log_gradient(rho, system):
    """``pi = -1/2 d(ln g)/d rho = 1/2 dU/d rho / (E - U)``."""
    t = system.kinetic_budget(rho)
    return 0.5 * system.potential_gradient(rho) / t


def a_coefficients(rho, frame, system, max_residual=1e-10):
    """Log-gradient coefficients in local coordinates, ``a_j = sum_i pi_i M_ij``."""
    if frame.residual > max_residual:
        raise ValueError(f"frame residual {frame.residual:.3g} exceeds {max_residual:.1g}")
    return frame.matrix.T @ log_gradient(rho, system)


def lambda_sq(g, J):
    """Rotational term ``(J/g)^2``; ``J`` may be a scalar or a 3-vector."""
    if not g > 0:
        raise BoundaryError("g must be positive", value=g)
    Jn = float(np.linalg.norm(np.atleast_1d(J)))
    return (Jn / g) ** 2


_I3 = np.eye(3)


def christoffel(a):
    """Closed form ``G[i, j, l] = -d_il a_j - d_ij a_l + d_jl a_i``."""
    a = np.asarray(a, dtype=float)
    return (-np.einsum("il,j->ijl", _I3, a) - np.einsum("ij,l->ijl", _I3, a)
            + np.einsum("jl,i->ijl", _I3, a))


def christoffel_dot(a, b, xdot):
    """s-derivative of the Christoffel symbols along the flow.

    Uses ``da_j/ds = 2 (a.xdot)(a_j - b_j)``, so that
    ``dG/ds = -2 (a.xdot) [d_il c_j + d_ij c_l - d_jl c_i]`` with ``c = a - b``.
    """
    a = np.asarray(a, dtype=float)
    return christoffel(2.0 * float(a @ xdot) * (a - np.asarray(b, dtype=float)))


def christoffel_dot_regular(a, xdot, gdot_j, g):
    """Same as :func:`christoffel_dot` written without b (finite where ``dg/ds = 0``).

    ``da_j/ds = 2 (a.xdot) a_j - gdot_j / (2 g)`` with ``gdot_j = d(e_j g)/ds``.
    """
    a = np.asarray(a, dtype=float)
    adot = 2.0 * float(a @ xdot) * a - np.asarray(gdot_j) / (2.0 * g)
    return christoffel(adot)


def b_coefficients(gdot_j, gdot, g=None, tol=1e-14):
    """Auxiliary ``b_j = -1/2 gdot_j / gdot`` (``gdot = dg/ds``).

    Raises
    ------
    SingularCoefficientError
        When ``|gdot|`` is below ``tol`` times the size of ``gdot_j``.
    """
    gdot_j = np.asarray(gdot_j, dtype=float)
    if abs(gdot) <= tol * max(np.max(np.abs(gdot_j)), 1e-300):
        raise SingularCoefficientError("dg/ds vanishes: b_k is singular here")
    return -0.5 * gdot_j / gdot


# ----------------------------------------------------------------------------
# charts
# ----------------------------------------------------------------------------

class Chart:
    """Interface used by the finite-difference curvature routines."""

    def metric(self, p):
        raise NotImplementedError

    def a(self, p):
        raise NotImplementedError

    def frame_matrix(self, p):
        return _I3

    def shift(self, p, base, dx):
        """Point reached from ``p`` by the displacement ``dx`` in the frame at ``base``."""
        return p + self.frame_matrix(base) @ dx

    def scale(self, p):
        return 1.0

    def metric_gradient(self, p):
        """``(e_1 g, e_2 g, e_3 g)`` at ``p``."""
        return -2.0 * self.metric(p) * self.a(p)


class CoordinateChart(Chart):
    """A conformal metric given directly as a function of coordinates x.

    Parameters
    ----------
    g : callable
        ``g(x) -> float``.
    grad_ln_g : callable, optional
        Analytic gradient of ``ln g``; central differences are used otherwise.
    """

    def __init__(self, g, grad_ln_g=None, scale=1.0):
        self._g = g
        self._grad = grad_ln_g
        self._scale = scale

    def metric(self, p):
        v = float(self._g(np.asarray(p, dtype=float)))
        if not v > 0:
            raise BoundaryError("metric not positive", value=v)
        return v

    def a(self, p):
        p = np.asarray(p, dtype=float)
        if self._grad is not None:
            return -0.5 * np.asarray(self._grad(p), dtype=float)
        h = 1e-6 * self._scale
        out = np.empty(3)
        for k in range(3):
            e = _I3[k] * h
            out[k] = (np.log(self.metric(p + e)) - np.log(self.metric(p - e))) / (2 * h)
        return -0.5 * out

    def shift(self, p, base, dx):
        return p + dx

    def scale(self, p):
        return self._scale


class FrameChart(Chart):
    """The three-body chart: points are internal rho, frames from the gauge.

    Parameters
    ----------
    system : SystemSpec
    gauge : ndarray (3, 3), optional
        Orthogonal gauge matrix; identity by default.
    """

    def __init__(self, system, gauge=None):
        self.system = system
        self.gauge = _I3 if gauge is None else np.asarray(gauge, dtype=float)

    def frame(self, p):
        from .transform import solve_internal_frame
        return solve_internal_frame(p, self.system, self.gauge)

    def metric(self, p):
        return conformal_factor(p, self.system)

    def a(self, p):
        fr = self.frame(p)
        return fr.matrix.T @ log_gradient(p, self.system)

    def frame_matrix(self, p):
        return self.frame(p).matrix

    def scale(self, p):
        """x-length of a step that moves rho by about ``min(rho1, rho2, R0)``."""
        p = np.asarray(p)
        return min(p[0], p[1], self.system.R0) / np.sqrt(self.metric(p))


def directional_derivative(fun, chart, p, k=None, h=None, direction=None):
    """Central difference of ``fun`` along frame vector ``e_k`` (or ``M @ direction``).

    Falls back to a second-order one-sided stencil when one side of the
    central stencil leaves the admissible region.
    """
    if h is None:
        h = 1e-4 * chart.scale(p)
    d = _I3[k] if direction is None else np.asarray(direction, dtype=float)
    try:
        fp = fun(chart.shift(p, p, h * d))
        fm = fun(chart.shift(p, p, -h * d))
        return (np.asarray(fp) - np.asarray(fm)) / (2.0 * h)
    except BoundaryError:
        pass
    f0 = np.asarray(fun(p))
    for sgn in (1.0, -1.0):
        try:
            f1 = np.asarray(fun(chart.shift(p, p, sgn * h * d)))
            f2 = np.asarray(fun(chart.shift(p, p, sgn * 2 * h * d)))
        except BoundaryError:
            continue
        return sgn * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
    raise BoundaryError("finite-difference stencil leaves the admissible region")


def christoffel_generic(chart, p, h=None):
    """Christoffel symbols from the general metric formula by finite differences.

    ``G^i_jl = 1/2 g^ip (d_j g_pl + d_l g_pj - d_p g_jl)`` with
    ``g_ij = g delta_ij``; used as an oracle for :func:`christoffel`.
    """
    metric = lambda q: chart.metric(q) * _I3
    dG = np.array([directional_derivative(metric, chart, p, k, h) for k in range(3)])  # [k, i, j]
    ginv = np.linalg.inv(metric(p))
    lower = 0.5 * (np.einsum("jpl->pjl", dG) + np.einsum("lpj->pjl", dG) - np.einsum("pjl->pjl", dG))
    return np.einsum("ip,pjl->ijl", ginv, lower)


def gdot_components(chart, p, xi, h=None):
    """``d(e_j g)/ds`` along the flow direction ``xi`` (frame fields re-evaluated)."""
    return directional_derivative(chart.metric_gradient, chart, p, h=h, direction=xi)


def riemann(chart, p, h=None):
    """Riemann tensor ``R[i, j, k, l]`` from finite differences of Christoffel symbols.

    ``R^i_jkl = d_k G^i_lj - d_l G^i_kj + G^i_km G^m_lj - G^i_lm G^m_kj``,
    assembled as ``T - T.swap(k, l)`` so that antisymmetry in (k, l) is exact.
    """
    gam = lambda q: christoffel(chart.a(q))
    G = gam(p)
    dG = np.array([directional_derivative(gam, chart, p, k, h) for k in range(3)])  # [k, i, l, j]
    T = np.einsum("kilj->ijkl", dG) + np.einsum("ikm,mlj->ijkl", G, G)
    return T - np.swapaxes(T, 2, 3)


@dataclass
class CurvatureBundle:
    """Curvature data at one base point with velocity ``xi``."""

    a: np.ndarray
    lam2: float
    gamma: np.ndarray
    gamma_dot: np.ndarray
    riemann: np.ndarray
    b: np.ndarray = None
    b_singular: bool = False
    g: float = None


def curvature_bundle(chart, p, xi, J=0.0, h=None):
    """Assemble a, Lambda^2, Gamma, dGamma/ds, Riemann and b at ``p``."""
    xi = np.asarray(xi, dtype=float)
    g = chart.metric(p)
    a = chart.a(p)
    gdot = float(-2.0 * g * (a @ xi))
    gdot_j = gdot_components(chart, p, xi, h)
    try:
        b = b_coefficients(gdot_j, gdot)
        gamma_dot = christoffel_dot(a, b, xi)
        singular = False
    except SingularCoefficientError:
        b = None
        gamma_dot = christoffel_dot_regular(a, xi, gdot_j, g)
        singular = True
    return CurvatureBundle(a=a, lam2=lambda_sq(g, J), gamma=christoffel(a), gamma_dot=gamma_dot,
                           riemann=riemann(chart, p, h), b=b, b_singular=singular, g=g)
