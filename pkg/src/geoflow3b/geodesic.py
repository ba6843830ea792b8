"""Reduced geodesic flow with co-evolved hyperspherical point.

State vector layout (19 entries)::

    x(3)  xi(3)  rho(3)  rho_ext(3)  x_ext(3)  v_ext(3)  t(1)

``x`` and ``xi`` are the local coordinates and velocities, ``rho`` the
internal hyperspherical point advanced by the frame map ``d rho = M xi ds``,
``rho_ext`` the scaled Euler angles advanced through the external frame.
``v_ext`` integrates the dynamical equation for the external velocities
(``dv/ds = 2 v (a.xi)``) and serves as an audit of the exact integrals
``g v = J``; the internal equations use ``Lambda^2 = (|J|/g)^2`` directly.
``t`` is the Newtonian time, ``dt/ds = sqrt(mu0 H / (E - U))``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.optimize import brentq

from ._ode import guarded_integrate
from .errors import BoundaryError, DegenerateFrameError, NumericalError
from .kinematics import HypersphericalState, hyperspherical_rates
from .manifold import conformal_factor, lambda_sq, log_gradient
from .newtonian import phase_to_jacobi
from .transform import (check_gauge, random_gauge, solve_external_frame, solve_internal_frame,
                        sphere_form)

__all__ = ["InternalState", "ConservedSet", "FixedGauge", "RandomStepGauge", "acceleration",
           "drift_matrix", "geodesic_rhs", "external_rates", "reduced_hamiltonian",
           "time_rate", "initial_state_from_phase", "integrate_geodesic", "GeodesicTrajectory",
           "reparameterize_time", "equivalence_check", "EquivalenceReport"]

SLICE_X = slice(0, 3)
SLICE_XI = slice(3, 6)
SLICE_RHO = slice(6, 9)
SLICE_EXT = slice(9, 12)
SLICE_XEXT = slice(12, 15)
SLICE_VEXT = slice(15, 18)
IDX_T = 18
STATE_SIZE = 19


@dataclass
class InternalState:
    """Geodesic-side state; see module docstring for the meaning of fields."""

    x: np.ndarray
    xi: np.ndarray
    rho: np.ndarray
    rho_ext: np.ndarray = field(default_factory=lambda: np.zeros(3))
    s: float = 0.0
    t: float = 0.0
    x_ext: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v_ext: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("x", "xi", "rho", "rho_ext", "x_ext", "v_ext"):
            setattr(self, name, np.array(getattr(self, name), dtype=float).reshape(3))

    @property
    def vector(self):
        return np.concatenate([self.x, self.xi, self.rho, self.rho_ext, self.x_ext, self.v_ext,
                               [self.t]])

    @classmethod
    def from_vector(cls, y, s=0.0):
        y = np.asarray(y, dtype=float)
        return cls(y[SLICE_X], y[SLICE_XI], y[SLICE_RHO], y[SLICE_EXT], s, float(y[IDX_T]),
                   y[SLICE_XEXT], y[SLICE_VEXT])


@dataclass(frozen=True)
class ConservedSet:
    J: np.ndarray
    E: float
    level: float


# ----------------------------------------------------------------------------
# gauge policies
# ----------------------------------------------------------------------------

class FixedGauge:
    """Constant orthogonal gauge along the whole trajectory."""

    name = "fixed"

    def __init__(self, O=None):
        self.O = check_gauge(O)

    def current(self):
        return self.O

    def advance(self):
        pass


class RandomStepGauge:
    """A fresh Haar-random gauge after every accepted step (controlled experiment).

    The velocity components are not transported to the new frame, so the
    physical direction jumps; deviations that follow are a gauge artefact.
    """

    name = "random-step"

    def __init__(self, seed):
        self.rng = np.random.Generator(np.random.Philox(key=[int(seed) & (2 ** 64 - 1), 0xA11]))
        self.O = random_gauge(self.rng)

    def current(self):
        return self.O

    def advance(self):
        self.O = random_gauge(self.rng)
        return True


def _policy(gauge):
    if gauge is None:
        return FixedGauge()
    if isinstance(gauge, (FixedGauge, RandomStepGauge)):
        return gauge
    return FixedGauge(gauge)


# ----------------------------------------------------------------------------
# right-hand side
# ----------------------------------------------------------------------------

def drift_matrix(xi, lam2):
    """``B = 2 xi xi^T - (|xi|^2 + Lambda^2) I``; the acceleration is ``B a``.

    Diagonal ``B^ii = (xi^i)^2 - sum_{j != i} (xi^j)^2 - Lambda^2``,
    off-diagonal ``B^ij = 2 xi^i xi^j``.
    """
    xi = np.asarray(xi, dtype=float)
    return 2.0 * np.multiply.outer(xi, xi) - (xi @ xi + lam2) * np.eye(3)


def acceleration(a, xi, lam2):
    """Geodesic acceleration ``A^i = 2 xi^i (a.xi) - a_i (|xi|^2 + Lambda^2)``.

    Written out, ``A^1 = a1 (xi1^2 - xi2^2 - xi3^2 - Lambda^2) + 2 xi1 (a2 xi2 + a3 xi3)``
    and cyclically. Works on stacked arrays with the component on the last axis.
    """
    a = np.asarray(a, dtype=float)
    xi = np.asarray(xi, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    if lam2.ndim:
        lam2 = lam2[..., None]
    ax = np.sum(a * xi, axis=-1, keepdims=True)
    xx = np.sum(xi * xi, axis=-1, keepdims=True)
    return 2.0 * xi * ax - a * (xx + lam2)


def external_rates(g, J):
    """``dx^mu/ds = J_mu / g`` for the three external coordinates."""
    if not g > 0:
        raise BoundaryError("g must be positive", value=g)
    return np.asarray(J, dtype=float) / g


def reduced_hamiltonian(g, xi, J):
    """``g/2 (|xi|^2 + (|J|/g)^2)``."""
    xi = np.asarray(xi, dtype=float)
    return 0.5 * g * (xi @ xi + lambda_sq(g, J))


def time_rate(rho, system):
    """``dt/ds = sqrt(mu0 H / (E - U))`` on the shell ``H = system.level``."""
    return np.sqrt(system.masses.mu0 * system.level / system.kinetic_budget(rho))


def local_terms(rho, system, O):
    """Frame, conformal factor, a-coefficients and Lambda^2 at ``rho``."""
    g = conformal_factor(rho, system)
    frame = solve_internal_frame(rho, system, O, g=g)
    a = frame.matrix.T @ log_gradient(rho, system)
    return frame, g, a, lambda_sq(g, system.J)


def geodesic_rhs(state, system, gauge=None):
    """``(d xi/ds, dx/ds)`` at an :class:`InternalState`."""
    O = check_gauge(gauge.current() if hasattr(gauge, "current") else gauge)
    _, _, a, lam2 = local_terms(state.rho, system, O)
    return acceleration(a, state.xi, lam2), state.xi.copy()


def _make_rhs(system, policy, convention):
    Jn = system.J_norm
    R0 = system.R0

    def rhs(s, y):
        rho = y[SLICE_RHO]
        xi = y[SLICE_XI]
        O = policy.current()
        frame, g, a, lam2 = local_terms(rho, system, O)
        dy = np.zeros(STATE_SIZE)
        dy[SLICE_X] = xi
        dy[SLICE_XI] = acceleration(a, xi, lam2)
        dy[SLICE_RHO] = frame.matrix @ xi
        if Jn > 0:
            h = HypersphericalState(np.concatenate([rho, y[SLICE_EXT]]), R0)
            ext = solve_external_frame(h, gauge=O, g=g, convention=convention)
            xdot = external_rates(g, system.J)
            dy[SLICE_EXT] = ext.matrix @ xdot
            dy[SLICE_XEXT] = xdot
        dy[SLICE_VEXT] = 2.0 * y[SLICE_VEXT] * float(a @ xi)
        dy[IDX_T] = np.sqrt(system.masses.mu0 * system.level / (g * system.U0))
        return dy
    return rhs


# ----------------------------------------------------------------------------
# initial conditions
# ----------------------------------------------------------------------------

def initial_state_from_phase(phase, system, gauge=None):
    """Geodesic initial state matching a Newtonian phase point.

    The hyperspherical point and rates are taken from the phase point; the
    velocity ``xi`` is the pull-back of the internal rates through the frame,
    rescaled so that the reduced Hamiltonian equals ``system.level``.

    Returns
    -------
    state : InternalState
    hyper : HypersphericalState
    """
    O = check_gauge(gauge.current() if hasattr(gauge, "current") else gauge)
    j = phase_to_jacobi(phase, system.masses)
    hyper, rates = hyperspherical_rates(j, system.R0, system.masses)
    rho = hyper.internal
    g = conformal_factor(rho, system)
    frame = solve_internal_frame(rho, system, O, g=g)
    direction = np.linalg.solve(frame.matrix, rates[:3])
    lam2 = lambda_sq(g, system.J)
    speed2 = 2.0 * system.level / g - lam2
    if speed2 <= 0:
        raise NumericalError("energy shell leaves no internal speed (2H/g <= Lambda^2)")
    nrm = np.linalg.norm(direction)
    if nrm == 0:
        raise NumericalError("initial internal velocity vanishes; direction undefined")
    xi = np.sqrt(speed2) * direction / nrm
    state = InternalState(x=np.zeros(3), xi=xi, rho=rho, rho_ext=hyper.rho[3:], s=0.0, t=phase.t,
                          x_ext=np.zeros(3), v_ext=external_rates(g, system.J))
    return state, hyper


# ----------------------------------------------------------------------------
# trajectory
# ----------------------------------------------------------------------------

@dataclass
class GeodesicTrajectory:
    """Accepted nodes of a geodesic run with audits and a dense interpolant."""

    s: np.ndarray
    y: np.ndarray
    system: object = field(repr=False)
    gauge_policy: str = "fixed"
    audits: dict = field(default_factory=dict)
    branch_events: list = field(default_factory=list)
    interpolant: object = field(repr=False, default=None)
    rejected_steps: int = 0
    order: int = 6
    frame_trace: list = field(default_factory=list, repr=False)

    @property
    def t(self):
        return self.y[:, IDX_T]

    @property
    def rho(self):
        return self.y[:, SLICE_RHO]

    @property
    def xi(self):
        return self.y[:, SLICE_XI]

    @property
    def x(self):
        return self.y[:, SLICE_X]

    def state(self, k):
        return InternalState.from_vector(self.y[k], self.s[k])

    def at(self, s):
        """Interpolated state vectors at ``s`` (shape (..., 19))."""
        return np.moveaxis(self.interpolant(np.asarray(s, dtype=float)), 0, -1)

    def observables(self, y=None):
        """Physical ``(r, R, theta)`` at every node (or for given state rows)."""
        y = self.y if y is None else np.atleast_2d(y)
        m = self.system.masses
        rho = y[:, SLICE_RHO]
        return np.column_stack([rho[:, 0] / m.weight_r, rho[:, 1] / m.weight_R,
                                rho[:, 2] / self.system.R0])

    def max_audit(self, name):
        return float(np.max(self.audits[name])) if len(self.audits.get(name, [])) else 0.0


def integrate_geodesic(state0, system, s_end=None, t_end=None, rtol=1e-12, atol=1e-12,
                       gauge=None, order=6, max_step=np.inf, g_guard=0.05, trace=False,
                       convention="rotation"):
    """Integrate the co-evolved geodesic system.

    Parameters
    ----------
    state0 : InternalState
    s_end : float, optional
        Arc-length horizon. With ``t_end`` the run stops when the Newtonian
        time reaches ``t_end`` (the last node is placed exactly there).
    gauge : ndarray, FixedGauge or RandomStepGauge, optional
    order : {6, 5}
        6 integrates all three velocity components; 5 eliminates the speed
        through the energy shell and integrates two direction angles.
    g_guard : float
        Maximum relative change of g per accepted step.
    trace : bool
        Record frame coefficients at each accepted step.

    Raises
    ------
    BoundaryError, StepUnderflowError, DegenerateFrameError
    """
    if s_end is None and t_end is None:
        raise ValueError("need s_end or t_end")
    policy = _policy(gauge)
    if order == 5:
        return _integrate_fifth(state0, system, s_end, t_end, rtol, atol, policy, max_step,
                                g_guard, convention)
    if order != 6:
        raise ValueError("order must be 5 or 6")
    rhs = _make_rhs(system, policy, convention)
    y0 = state0.vector
    horizon = s_end if s_end is not None else np.inf
    audits = _Auditor(system, policy, convention, trace)
    audits.record(state0.s, y0)

    def guard(y_old, y_new):
        try:
            g0 = conformal_factor(y_old[SLICE_RHO], system)
            g1 = conformal_factor(y_new[SLICE_RHO], system)
        except BoundaryError:
            return False
        return abs(g1 / g0 - 1.0) <= g_guard

    def on_accept(s, y):
        audits.record(s, y)
        return policy.advance()

    stop = None if t_end is None else (lambda s, y: y[IDX_T] >= t_end)
    run = guarded_integrate(rhs, state0.s, y0, horizon, rtol=rtol, atol=atol, max_step=max_step,
                            guard=guard, on_accept=on_accept, stop=stop)
    s, Y = run.t, run.y
    if t_end is not None and Y[-1, IDX_T] > t_end:
        s_hit = brentq(lambda u: run(u)[IDX_T] - t_end, s[-2], s[-1], xtol=1e-15, rtol=1e-15)
        s = np.append(s[:-1], s_hit)
        Y = np.vstack([Y[:-1], run(s_hit)])
        audits.replace_last(s_hit, Y[-1])
    traj = GeodesicTrajectory(s=s, y=Y, system=system, gauge_policy=policy.name,
                              audits=audits.arrays(), branch_events=audits.branch_events,
                              interpolant=run.sol, rejected_steps=run.rejected, order=6,
                              frame_trace=audits.trace)
    return traj


class _Auditor:
    """Per-step conservation and frame audits."""

    def __init__(self, system, policy, convention, trace):
        self.system = system
        self.policy = policy
        self.convention = convention
        self.trace = [] if trace else None
        self.rows = []
        self.branch_events = []
        self._last_det = None

    def _row(self, s, y):
        sysm = self.system
        rho = y[SLICE_RHO]
        xi = y[SLICE_XI]
        O = self.policy.current()
        g = conformal_factor(rho, sysm)
        frame = solve_internal_frame(rho, sysm, O, g=g)
        H = reduced_hamiltonian(g, xi, sysm.J)
        Jn = sysm.J_norm
        gv = g * y[SLICE_VEXT]
        j_res = float(np.max(np.abs(gv - sysm.J)) / Jn) if Jn > 0 else float(np.max(np.abs(gv)))
        d_rho = frame.matrix @ xi
        lhs = d_rho[0] ** 2 + d_rho[1] ** 2 + frame.gamma33 * d_rho[2] ** 2
        line = abs(lhs - g * (xi @ xi)) / max(g * (xi @ xi), 1e-300)
        try:
            sph = sphere_form(frame).norm_residual
        except DegenerateFrameError:
            sph = np.nan
        ext_res = 0.0
        if Jn > 0:
            h = HypersphericalState(np.concatenate([rho, y[SLICE_EXT]]), sysm.R0)
            ext_res = solve_external_frame(h, gauge=O, g=g, convention=self.convention).residual
        det = frame.determinant
        if self._last_det is not None and np.sign(det) != np.sign(self._last_det):
            self.branch_events.append(float(s))
        self._last_det = det
        if self.trace is not None:
            self.trace.append([s, *frame.alpha, *frame.beta, *frame.gamma, frame.residual])
        return [s, abs(H - sysm.level) / sysm.level, j_res, frame.residual, line, sph, ext_res, g, H]

    def record(self, s, y):
        self.rows.append(self._row(s, y))

    def replace_last(self, s, y):
        self.rows[-1] = self._row(s, y)
        if self.trace:
            self.trace.pop(-2)

    def arrays(self):
        A = np.array(self.rows)
        names = ["s", "hamiltonian", "J", "frame", "line_element", "sphere", "external_frame", "g", "H"]
        return {n: A[:, k] for k, n in enumerate(names)}


# ----------------------------------------------------------------------------
# fifth-order path
# ----------------------------------------------------------------------------

def _integrate_fifth(state0, system, s_end, t_end, rtol, atol, policy, max_step, g_guard,
                     convention):
    """Energy-shell reduction: ``xi = sqrt(2H/g - Lambda^2) n(phi, psi)``.

    The direction is parametrised in a rotated frame ``Q`` that puts the
    initial direction on the equator, away from the coordinate poles.
    """
    n0 = state0.xi / np.linalg.norm(state0.xi)
    helper = np.eye(3)[np.argmin(np.abs(n0))]
    e2 = np.cross(n0, helper)
    e2 /= np.linalg.norm(e2)
    Q = np.column_stack([n0, e2, np.cross(n0, e2)])  # local x axis = n0, pole = local z
    J = system.J
    Jn = system.J_norm

    def direction(phi, psi):
        return Q @ np.array([np.sin(psi) * np.cos(phi), np.sin(psi) * np.sin(phi), np.cos(psi)])

    def speed(g):
        v2 = 2.0 * system.level / g - lambda_sq(g, J)
        if v2 <= 0:
            raise BoundaryError("energy shell leaves no internal speed", value=v2)
        return np.sqrt(v2)

    # layout: x(3) phi psi rho(3) rho_ext(3) x_ext(3) v_ext(3) t
    def unpack(y):
        return y[0:3], y[3], y[4], y[5:8], y[8:11], y[11:14], y[14:17], y[17]

    def rhs(s, y):
        x, phi, psi, rho, rext, xext, vext, t = unpack(y)
        O = policy.current()
        frame, g, a, lam2 = local_terms(rho, system, O)
        n = direction(phi, psi)
        v = speed(g)
        xi = v * n
        acc = acceleration(a, xi, lam2)
        n_dot = (acc - (acc @ n) * n) / v
        local = Q.T @ n_dot
        sps, cps, sph, cph = np.sin(psi), np.cos(psi), np.sin(phi), np.cos(phi)
        if abs(sps) < 1e-6:
            raise NumericalError("direction reached the coordinate pole of the 5th-order chart")
        psi_dot = cps * cph * local[0] + cps * sph * local[1] - sps * local[2]
        phi_dot = (-sph * local[0] + cph * local[1]) / sps
        dy = np.zeros(18)
        dy[0:3] = xi
        dy[3] = phi_dot
        dy[4] = psi_dot
        dy[5:8] = frame.matrix @ xi
        if Jn > 0:
            h = HypersphericalState(np.concatenate([rho, rext]), system.R0)
            ext = solve_external_frame(h, gauge=O, g=g, convention=convention)
            dy[8:11] = ext.matrix @ external_rates(g, J)
            dy[11:14] = external_rates(g, J)
        dy[14:17] = 2.0 * vext * float(a @ xi)
        dy[17] = np.sqrt(system.masses.mu0 * system.level / (g * system.U0))
        return dy

    y0 = np.concatenate([state0.x, [0.0, np.pi / 2], state0.rho, state0.rho_ext, state0.x_ext,
                         state0.v_ext, [state0.t]])

    def guard(y_old, y_new):
        try:
            g0 = conformal_factor(y_old[5:8], system)
            g1 = conformal_factor(y_new[5:8], system)
        except BoundaryError:
            return False
        return abs(g1 / g0 - 1.0) <= g_guard

    stop = None if t_end is None else (lambda s, y: y[17] >= t_end)
    run = guarded_integrate(rhs, state0.s, y0, s_end if s_end is not None else np.inf,
                            rtol=rtol, atol=atol, max_step=max_step, guard=guard,
                            on_accept=lambda s, y: policy.advance(), stop=stop)
    s, Y5 = run.t, run.y
    if t_end is not None and Y5[-1, 17] > t_end:
        s_hit = brentq(lambda u: run(u)[17] - t_end, s[-2], s[-1], xtol=1e-15, rtol=1e-15)
        s = np.append(s[:-1], s_hit)
        Y5 = np.vstack([Y5[:-1], run(s_hit)])

    def expand(y5):
        x, phi, psi, rho, rext, xext, vext, t = unpack(y5)
        g = conformal_factor(rho, system)
        xi = speed(g) * direction(phi, psi)
        return np.concatenate([x, xi, rho, rext, xext, vext, [t]])

    Y = np.array([expand(r) for r in Y5])
    auditor = _Auditor(system, FixedGauge(policy.current()), convention, False)
    for sk, yk in zip(s, Y):
        auditor.record(sk, yk)

    def interp(u):
        u = np.asarray(u, dtype=float)
        raw = run(u)
        if raw.ndim == 1:
            return expand(raw)
        return np.column_stack([expand(raw[:, k]) for k in range(raw.shape[1])])

    return GeodesicTrajectory(s=s, y=Y, system=system, gauge_policy=policy.name,
                              audits=auditor.arrays(), branch_events=auditor.branch_events,
                              interpolant=interp, rejected_steps=run.rejected, order=5)


# ----------------------------------------------------------------------------
# time and comparison
# ----------------------------------------------------------------------------

def reparameterize_time(traj, system, samples_per_step=8):
    """Newtonian time at the trajectory nodes by quadrature of ``dt/ds``.

    Independent of the in-flight ``t`` component; the two agree to the
    quadrature error.
    """
    s = traj.s
    fine = np.concatenate([np.linspace(s[k], s[k + 1], samples_per_step, endpoint=False)
                           for k in range(len(s) - 1)] + [s[-1:]])
    Y = traj.at(fine)
    rate = np.array([time_rate(y[SLICE_RHO], system) for y in np.atleast_2d(Y)])
    if np.any(rate <= 0):
        raise BoundaryError("non-positive time rate")
    t_fine = traj.t[0] + cumulative_simpson(rate, x=fine, initial=0.0)
    idx = np.searchsorted(fine, s)
    return t_fine[idx]


@dataclass
class EquivalenceReport:
    """Deviation of internal observables between the two representations."""

    max_relative: float
    rms_relative: float
    per_observable_max: np.ndarray
    tolerance: float
    passed: bool
    n_samples: int
    t_range: tuple
    gauge_policy: str
    gauge_artifact: bool
    scales: np.ndarray

    def to_dict(self):
        return {"max_relative": self.max_relative, "rms_relative": self.rms_relative,
                "per_observable_max": {"r": float(self.per_observable_max[0]),
                                       "R": float(self.per_observable_max[1]),
                                       "theta": float(self.per_observable_max[2])},
                "tolerance": self.tolerance, "passed": self.passed, "n_samples": self.n_samples,
                "t_range": [float(v) for v in self.t_range], "gauge_policy": self.gauge_policy,
                "gauge_artifact": self.gauge_artifact, "scales": self.scales.tolist()}


def equivalence_check(newton_traj, geo_traj, system, tol=1e-5, midpoints=True):
    """Compare (r, R, theta)(t) of the two representations.

    Relative deviation uses the run maximum of |r| and |R| as scales and pi
    for theta. Samples are the geodesic nodes, plus interval midpoints when
    ``midpoints`` is set.

    Raises
    ------
    ValueError
        When the geodesic time range is not covered by the Newtonian run.
    """
    s = geo_traj.s
    if midpoints and len(s) > 1:
        s = np.sort(np.concatenate([s, 0.5 * (s[1:] + s[:-1])]))
    Y = np.atleast_2d(geo_traj.at(s)) if midpoints else geo_traj.y
    t = Y[:, IDX_T]
    t0, t1 = newton_traj.t[0], newton_traj.t[-1]
    span = max(abs(t1 - t0), 1e-300)
    if t.min() < t0 - 1e-12 * span or t.max() > t1 + 1e-9 * span:
        raise ValueError(f"incomparable time ranges: geodesic [{t.min()}, {t.max()}] vs "
                         f"newton [{t0}, {t1}]")
    t = np.clip(t, t0, t1)
    obs_g = geo_traj.observables(Y)
    obs_n = newton_traj.observables_at(t, system.masses)
    scales = np.array([np.max(np.abs(obs_n[:, 0])), np.max(np.abs(obs_n[:, 1])), np.pi])
    rel = np.abs(obs_g - obs_n) / scales
    per = rel.max(axis=0)
    mx = float(per.max())
    rms = float(np.sqrt(np.mean(rel ** 2)))
    passed = bool(mx <= tol)
    artifact = (not passed) and geo_traj.gauge_policy != "fixed"
    return EquivalenceReport(mx, rms, per, tol, passed, len(t), (float(t[0]), float(t[-1])),
                             geo_traj.gauge_policy, artifact, scales)
