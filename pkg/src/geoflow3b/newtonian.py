"""Hamiltonian dynamics of the reduced 12D system (the Newtonian oracle)."""
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import DegenerateConfigurationError, StepUnderflowError
from .kinematics import JacobiState, lab_to_jacobi

__all__ = ["PhaseState12", "NewtonTrajectory", "phase_from_lab", "phase_from_jacobi",
           "phase_to_jacobi", "hamiltonian", "force", "angular_momentum", "poisson_bracket",
           "integrate_newton", "internal_observables"]


@dataclass(frozen=True)
class PhaseState12:
    """Mass-weighted positions ``q = (r_w, R_w)`` and momenta ``p = (P3~, P2~)``."""

    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(6)
        p = np.array(self.p, dtype=float).reshape(6)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def vector(self):
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, y, t=0.0):
        return cls(y[:6], y[6:], t)


def phase_from_jacobi(j, masses, t=0.0):
    q, p = j.weighted(masses)
    return PhaseState12(q, p, t)


def phase_from_lab(lab, masses, t=0.0):
    return phase_from_jacobi(lab_to_jacobi(lab, masses), masses, t)


def phase_to_jacobi(state, masses):
    """Jacobi state at rest centre of mass at the origin."""
    return JacobiState(r=state.q[:3] / masses.weight_r, R=state.q[3:] / masses.weight_R,
                       P3=state.p[:3], P2=state.p[3:])


def _physical(q, masses):
    q = np.asarray(q)
    return q[..., :3] / masses.weight_r, q[..., 3:] / masses.weight_R


def potential_energy(q, system):
    r, R = _physical(q, system.masses)
    return system.potential.cartesian_value(r, R, system.masses)


def hamiltonian(state, system):
    """``|p|^2 / (2 mu0) + U``."""
    p = state.p
    return p @ p / (2.0 * system.masses.mu0) + float(potential_energy(state.q, system))


def force(q, system):
    """``-dU/dq`` in the weighted coordinates."""
    m = system.masses
    r, R = _physical(q, m)
    fr, fR = system.potential.cartesian_force(r, R, m)
    return np.concatenate([fr / m.weight_r, fR / m.weight_R], axis=-1)


def angular_momentum(state):
    """Total angular momentum ``q_r x p_r + q_R x p_R``."""
    q, p = state.q, state.p
    return np.cross(q[:3], p[:3]) + np.cross(q[3:], p[3:])


def internal_observables(q, masses):
    """Physical ``(r, R, theta)`` for one or many weighted positions."""
    r, R = _physical(q, masses)
    rn = np.linalg.norm(r, axis=-1)
    Rn = np.linalg.norm(R, axis=-1)
    th = np.arctan2(np.linalg.norm(np.cross(r, R), axis=-1), np.sum(r * R, axis=-1))
    return np.stack([rn, Rn, th], axis=-1)


def poisson_bracket(F, G, at):
    """``{F, G} = sum_a dF/dq_a dG/dp_a - dF/dp_a dG/dq_a`` by central differences.

    ``F`` and ``G`` take a :class:`PhaseState12`. The step is
    ``max(1e-6, 1e-8 |state|)``.
    """
    y0 = at.vector
    h = max(1e-6, 1e-8 * np.linalg.norm(y0))

    def grad(f):
        g = np.empty(12)
        for k in range(12):
            e = np.zeros(12)
            e[k] = h
            g[k] = (f(PhaseState12.from_vector(y0 + e, at.t))
                    - f(PhaseState12.from_vector(y0 - e, at.t))) / (2.0 * h)
        return g

    gF, gG = grad(F), grad(G)
    return float(gF[:6] @ gG[6:] - gF[6:] @ gG[:6])


@dataclass
class NewtonTrajectory:
    """Samples of the Newtonian flow with a dense interpolant."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    angular_momentum: np.ndarray
    method: str
    interpolant: object = field(repr=False, default=None)
    nfev: int = 0

    def state_at(self, t):
        """Interpolated ``(q, p)`` at times ``t`` (array of shape (..., 12))."""
        y = self.interpolant(np.asarray(t, dtype=float))
        return np.moveaxis(y, 0, -1)

    def observables_at(self, t, masses):
        return internal_observables(self.state_at(t)[..., :6], masses)

    def energy_drift(self):
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), np.finfo(float).tiny))

    def angular_momentum_drift(self):
        L = self.angular_momentum
        scale = max(np.linalg.norm(L[0]), 1e-300)
        return float(np.max(np.linalg.norm(L - L[0], axis=1)) / scale)

    def final_state(self):
        return PhaseState12(self.q[-1], self.p[-1], self.t[-1])


def _rhs_factory(system):
    mu0 = system.masses.mu0

    def rhs(t, y):
        return np.concatenate([y[6:] / mu0, force(y[:6], system)])
    return rhs


def integrate_newton(s0, system, t_end, rtol=1e-12, atol=1e-12, method="DOP853",
                     dt=None, t_eval=None, max_step=np.inf):
    """Integrate Hamilton's equations from ``s0`` over ``[s0.t, t_end]``.

    Parameters
    ----------
    method : {"DOP853", "verlet"}
        Adaptive 8th-order Runge-Kutta with dense output, or fixed-step
        Stormer-Verlet (requires ``dt``).
    t_eval : array_like, optional
        Output times (adaptive method only); defaults to the accepted steps.

    Raises
    ------
    StepUnderflowError
        When the adaptive step collapses (typically a near collision).
    """
    if not (rtol > 0 and atol > 0):
        raise ValueError("tolerances must be positive")
    t0 = s0.t
    if method == "verlet":
        if dt is None or dt <= 0:
            raise ValueError("verlet needs a positive dt")
        return _verlet(s0, system, t_end, dt)
    rhs = _rhs_factory(system)
    try:
        sol = solve_ivp(rhs, (t0, t_end), s0.vector, method=method, rtol=rtol, atol=atol,
                        dense_output=True, t_eval=t_eval, max_step=max_step)
    except DegenerateConfigurationError as exc:
        raise StepUnderflowError(f"collision during integration: {exc}") from exc
    if sol.status < 0:
        raise StepUnderflowError(sol.message)
    Y = sol.y.T
    return _finish(sol.t, Y, system, method, sol.sol, sol.nfev)


def _finish(t, Y, system, method, interp, nfev):
    states = [PhaseState12.from_vector(y) for y in Y]
    energy = np.array([hamiltonian(s, system) for s in states])
    L = np.array([angular_momentum(s) for s in states])
    return NewtonTrajectory(t=np.asarray(t), q=Y[:, :6].copy(), p=Y[:, 6:].copy(), energy=energy,
                            angular_momentum=L, method=method, interpolant=interp, nfev=nfev)


def _verlet(s0, system, t_end, dt):
    mu0 = system.masses.mu0
    n = int(np.ceil((t_end - s0.t) / dt - 1e-12))
    h = (t_end - s0.t) / n
    q, p = s0.q.copy(), s0.p.copy()
    f = force(q, system)
    Y = np.empty((n + 1, 12))
    F = np.empty((n + 1, 6))
    Y[0] = np.concatenate([q, p])
    F[0] = f
    for k in range(n):
        p = p + 0.5 * h * f
        q = q + h * p / mu0
        f = force(q, system)
        p = p + 0.5 * h * f
        Y[k + 1] = np.concatenate([q, p])
        F[k + 1] = f
    t = s0.t + h * np.arange(n + 1)
    dY = np.concatenate([Y[:, 6:] / mu0, F], axis=1)
    spline = CubicHermiteSpline(t, Y, dY, axis=0)

    def interp(tt):
        return np.moveaxis(spline(tt), -1, 0)
    return _finish(t, Y, system, "verlet", interp, n)
