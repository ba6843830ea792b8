"""Linear deviation of neighbouring geodesics.

The deviation ``zeta = dx/d eta`` of a one-parameter family of geodesics
obeys

    zeta'' + 2 G xi zeta' + (Gdot xi + G xddot + G G xi xi) zeta = -R(xi, zeta, xi)

with ``G[i, j, l]`` the Christoffel symbols, ``Gdot`` their derivative along
the flow and ``xddot = -G xi xi`` the base acceleration. In a holonomic
chart this is the exact linearisation of the geodesic equation, which is
what the two-trajectory finite-difference oracle checks.

The equation is linear, so it is integrated once for the 6x6 fundamental
matrix; individual deviations are then ``Phi(s) @ (zeta0, zeta0')``. The
coefficients are sampled from the dense base trajectory and interpolated
with cubic splines.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.stats import linregress

from .errors import NumericalError
from .geodesic import (SLICE_RHO, SLICE_X, SLICE_XI, GeodesicTrajectory, InternalState,
                       acceleration, integrate_geodesic)
from .manifold import FrameChart, curvature_bundle

__all__ = ["DeviationState", "DeviationTrajectory", "ChartTrajectory", "GrowthFit",
           "deviation_rhs", "deviation_lhs", "coefficient_matrix", "integrate_deviation",
           "integrate_chart_geodesic", "finite_difference_deviation", "growth_exponent"]


@dataclass
class DeviationState:
    """Deviation vector ``zeta``, its s-derivative and the family label ``eta``."""

    zeta: np.ndarray
    zeta_dot: np.ndarray
    s: float = 0.0
    eta: float = 0.0
    base: object = field(default=None, repr=False)

    def __post_init__(self):
        self.zeta = np.array(self.zeta, dtype=float).reshape(3)
        self.zeta_dot = np.array(self.zeta_dot, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.zeta)) and np.all(np.isfinite(self.zeta_dot))):
            raise ValueError("deviation state must be finite")

    @property
    def vector(self):
        return np.concatenate([self.zeta, self.zeta_dot])


def _base_acceleration(curv, xi):
    return -np.einsum("ijl,j,l->i", curv.gamma, xi, xi)


def deviation_lhs(curv, xi, zeta, zeta_dot, zeta_ddot, xddot=None):
    """Left side ``zeta'' + 2 G xi zeta' + (Gdot xi + G xddot + G G xi xi) zeta``.

    This is the expanded second covariant derivative of ``zeta`` along the
    base curve.
    """
    G, Gd = curv.gamma, curv.gamma_dot
    xi = np.asarray(xi, dtype=float)
    xddot = _base_acceleration(curv, xi) if xddot is None else np.asarray(xddot, dtype=float)
    out = np.asarray(zeta_ddot, dtype=float) + 2.0 * np.einsum("ijl,j,l->i", G, xi, zeta_dot)
    out = out + np.einsum("ijl,j,l->i", Gd, xi, zeta)
    out = out + np.einsum("ijl,j,l->i", G, xddot, zeta)
    out = out + np.einsum("ijn,nkp,j,k,p->i", G, G, xi, xi, zeta)
    return out


def coefficient_matrix(curv, xi, xddot=None):
    """``(C, B)`` with ``zeta'' = C zeta + B zeta'`` at one base point."""
    G, Gd, Rm = curv.gamma, curv.gamma_dot, curv.riemann
    xi = np.asarray(xi, dtype=float)
    xddot = _base_acceleration(curv, xi) if xddot is None else np.asarray(xddot, dtype=float)
    B = -2.0 * np.einsum("ijl,j->il", G, xi)
    C = -(np.einsum("ijl,j->il", Gd, xi) + np.einsum("ijl,j->il", G, xddot)
          + np.einsum("ijn,nkl,j,k->il", G, G, xi, xi))
    C = C - np.einsum("ijkl,j,l->ik", Rm, xi, xi)
    return C, B


def deviation_rhs(dev, curv, xi, xddot=None):
    """``d^2 zeta / ds^2`` at a base point with velocity ``xi``.

    Raises
    ------
    SingularCoefficientError
        Never from here: the bundle already switched to the regular form of
        ``Gdot`` when ``dg/ds`` vanished (``curv.b_singular``).
    """
    C, B = coefficient_matrix(curv, xi, xddot)
    return C @ dev.zeta + B @ dev.zeta_dot


# ----------------------------------------------------------------------------
# base trajectories
# ----------------------------------------------------------------------------

@dataclass
class ChartTrajectory:
    """Geodesic of a :class:`~geoflow3b.manifold.Chart` (points ``x``, velocities ``xi``)."""

    s: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    chart: object = field(repr=False)
    interpolant: object = field(repr=False, default=None)

    def at(self, s):
        return np.moveaxis(self.interpolant(np.asarray(s, dtype=float)), 0, -1)


def integrate_chart_geodesic(chart, x0, xi0, s_end, rtol=1e-12, atol=1e-12, max_step=np.inf):
    """Geodesic ``x'' = -G(x) x' x'`` of a coordinate chart (no rotation term)."""
    def rhs(s, y):
        return np.concatenate([y[3:], acceleration(chart.a(y[:3]), y[3:], 0.0)])

    y0 = np.concatenate([np.asarray(x0, dtype=float), np.asarray(xi0, dtype=float)])
    sol = solve_ivp(rhs, (0.0, s_end), y0, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=True, max_step=max_step)
    if sol.status < 0:
        raise NumericalError(sol.message)
    return ChartTrajectory(sol.t, sol.y[:3].T, sol.y[3:].T, chart, sol.sol)


def _base_view(base, gauge):
    """``(chart, nodes, point(s), velocity(s))`` for either kind of base."""
    if isinstance(base, GeodesicTrajectory):
        if base.order != 6:
            raise ValueError("deviation needs a sixth-order (full velocity) base trajectory")
        if base.system.J_norm > 0:
            raise ValueError("the deviation equation has no rotational term; needs J = 0")
        chart = FrameChart(base.system, gauge)
        return chart, base.s, (lambda s: base.at(s)[SLICE_RHO]), (lambda s: base.at(s)[SLICE_XI])
    if isinstance(base, ChartTrajectory):
        return base.chart, base.s, (lambda s: base.at(s)[:3]), (lambda s: base.at(s)[3:])
    raise TypeError("base must be a GeodesicTrajectory or ChartTrajectory")


# ----------------------------------------------------------------------------
# integration
# ----------------------------------------------------------------------------

@dataclass
class DeviationTrajectory:
    """Deviation samples ``zeta(s)`` with the fundamental matrix ``Phi(s)``."""

    s: np.ndarray
    zeta: np.ndarray
    zeta_dot: np.ndarray
    fundamental: np.ndarray = field(repr=False)
    dev0: DeviationState = None
    metric: np.ndarray = field(default=None, repr=False)

    @property
    def norm(self):
        return np.linalg.norm(self.zeta, axis=1)

    @property
    def log_norm(self):
        return np.log(self.norm)

    def propagate(self, dev0):
        """Deviation for another initial condition on the same base."""
        Y = self.fundamental @ dev0.vector
        return DeviationTrajectory(self.s, Y[:, :3], Y[:, 3:], self.fundamental, dev0, self.metric)

    def rows(self):
        """CSV rows ``(s, zeta1, zeta2, zeta3, |zeta|, ln|zeta|)``."""
        n = self.norm
        with np.errstate(divide="ignore"):
            ln = np.log(n)
        return np.column_stack([self.s, self.zeta, n, ln])


def integrate_deviation(base, dev0, rtol=1e-12, atol=1e-14, n_sub=4, s_out=None, gauge=None,
                        h=None):
    """Integrate the deviation equation along ``base``.

    Parameters
    ----------
    base : GeodesicTrajectory or ChartTrajectory
    dev0 : DeviationState
        Initial ``(zeta, zeta')`` at the start of the base.
    n_sub : int
        Coefficient samples per base step (cubic-spline interpolated).
    s_out : array_like, optional
        Output parameters; the base nodes by default.
    gauge : ndarray, optional
        Fixed gauge of a three-body base (identity by default).
    h : float, optional
        Finite-difference step for the curvature.
    """
    chart, nodes, point, velocity = _base_view(base, gauge)
    nodes = np.asarray(nodes, dtype=float)
    frac = np.arange(n_sub) / n_sub
    grid = np.concatenate([(nodes[:-1, None] + frac * np.diff(nodes)[:, None]).ravel(), nodes[-1:]])
    A = np.empty((grid.size, 6, 6))
    for k, s in enumerate(grid):
        p, xi = point(s), velocity(s)
        curv = curvature_bundle(chart, p, xi, 0.0, h)
        C, B = coefficient_matrix(curv, xi)
        A[k] = np.block([[np.zeros((3, 3)), np.eye(3)], [C, B]])
    spline = CubicSpline(grid, A, axis=0)

    def rhs(s, y):
        return (spline(s) @ y.reshape(6, 6)).ravel()

    s_out = nodes if s_out is None else np.asarray(s_out, dtype=float)
    sol = solve_ivp(rhs, (grid[0], grid[-1]), np.eye(6).ravel(), method="DOP853", rtol=rtol,
                    atol=atol, t_eval=s_out)
    if sol.status < 0:
        raise NumericalError(sol.message)
    Phi = sol.y.T.reshape(-1, 6, 6)
    Y = Phi @ dev0.vector
    g = np.array([chart.metric(point(s)) for s in sol.t])
    return DeviationTrajectory(sol.t, Y[:, :3], Y[:, 3:], Phi, dev0, g)


def finite_difference_deviation(base, dev0, eta=1e-6, s_out=None, gauge=None, rtol=1e-13,
                                atol=1e-15):
    """Two-trajectory oracle ``(x_eta(s) - x(s)) / eta``.

    The neighbour starts at ``x0 + eta zeta0`` with velocity
    ``xi0 + eta zeta0'``; for a three-body base the point shift is pushed
    through the frame, ``rho0 + eta M zeta0``. Base and neighbour are
    integrated as one joint system so that both share the step sequence and
    their truncation errors largely cancel in the difference.
    """
    if isinstance(base, ChartTrajectory):
        chart = base.chart

        def single(s, y):
            return np.concatenate([y[3:], acceleration(chart.a(y[:3]), y[3:], 0.0)])
        y0 = np.concatenate([base.x[0], base.xi[0]])
        y1 = y0 + eta * dev0.vector
        pick = slice(0, 3)
    elif isinstance(base, GeodesicTrajectory):
        from .geodesic import FixedGauge, _make_rhs
        single = _make_rhs(base.system, FixedGauge(gauge), "rotation")
        st = base.state(0)
        M = FrameChart(base.system, gauge).frame_matrix(st.rho)
        y0 = st.vector
        y1 = y0.copy()
        y1[SLICE_X] += eta * dev0.zeta
        y1[SLICE_XI] += eta * dev0.zeta_dot
        y1[SLICE_RHO] += eta * (M @ dev0.zeta)
        pick = SLICE_X
    else:
        raise TypeError("base must be a GeodesicTrajectory or ChartTrajectory")
    n = y0.size

    def joint(s, y):
        return np.concatenate([single(s, y[:n]), single(s, y[n:])])

    s_out = base.s if s_out is None else np.asarray(s_out, dtype=float)
    sol = solve_ivp(joint, (base.s[0], base.s[-1]), np.concatenate([y0, y1]), method="DOP853",
                    rtol=rtol, atol=atol, t_eval=s_out)
    if sol.status < 0:
        raise NumericalError(sol.message)
    Y = sol.y.T
    return (Y[:, n:][:, pick] - Y[:, :n][:, pick]) / eta


# ----------------------------------------------------------------------------
# growth exponent
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthFit:
    """Least-squares fit of ``ln|zeta|`` against ``s`` over a window."""

    exponent: float
    intercept: float
    r_squared: float
    window: tuple
    n_points: int

    def to_dict(self):
        return {"exponent": self.exponent, "intercept": self.intercept,
                "r_squared": self.r_squared, "window": list(self.window),
                "n_points": self.n_points}


def growth_exponent(traj, window=None, metric=False):
    """Slope of ``ln|zeta|`` versus ``s``.

    Parameters
    ----------
    window : (s_lo, s_hi), optional
        Must span at least two decades, ``s_hi >= 100 s_lo`` with
        ``s_lo > 0``. Defaults to ``(s_max / 100, s_max)``.
    metric : bool
        Fit the metric length ``sqrt(g) |zeta|`` instead of ``|zeta|``.

    Raises
    ------
    ValueError
        For a degenerate window (too short, or fewer than 3 samples).
    """
    s = np.asarray(traj.s)
    if window is None:
        window = (s[-1] / 100.0, s[-1])
    lo, hi = map(float, window)
    if not (lo > 0 and hi >= 100.0 * lo):
        raise ValueError("window must span at least two decades of s (s_hi >= 100 s_lo > 0)")
    mask = (s >= lo) & (s <= hi)
    n = traj.norm * np.sqrt(traj.metric) if metric else traj.norm
    n = n[mask]
    if mask.sum() < 3 or np.any(n <= 0):
        raise ValueError("degenerate window: fewer than 3 usable samples")
    fit = linregress(s[mask], np.log(n))
    return GrowthFit(float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2), (lo, hi),
                     int(mask.sum()))
