"""Adaptive DOP853 stepping with a user guard on accepted steps.

scipy's ``solve_ivp`` has no hook for rejecting a step on grounds other than
the embedded error estimate. Here the ``OdeSolver`` step API is driven
directly: the solver is copied before each step and restored with half the
step size when the guard rejects the result or the right-hand side leaves
the admissible region.
"""
import copy

import numpy as np
from scipy.integrate import DOP853, OdeSolution

from .errors import BoundaryError, StepUnderflowError

__all__ = ["GuardedRun", "guarded_integrate"]


class GuardedRun:
    """Accepted nodes, states and the piecewise dense interpolant."""

    def __init__(self, ts, ys, interpolants, rejected, status):
        self.t = np.asarray(ts)
        self.y = np.asarray(ys)
        self._interps = interpolants
        self.rejected = rejected
        self.status = status
        self.sol = OdeSolution(self.t, interpolants) if interpolants else None

    def __call__(self, s):
        return self.sol(s)


def _snapshot(solver):
    """Deep copy that keeps ``K`` a view into ``K_extended``.

    ``copy.deepcopy`` turns the view into an independent array, after which
    the RK stages and the dense-output stages would silently diverge.
    """
    twin = copy.deepcopy(solver)
    twin.K = twin.K_extended[:twin.n_stages + 1]
    return twin


def guarded_integrate(fun, s0, y0, s_end, rtol=1e-12, atol=1e-12, max_step=np.inf,
                      guard=None, on_accept=None, stop=None, first_step=None, max_steps=10 ** 6):
    """Integrate ``y' = fun(s, y)`` from ``s0`` to ``s_end``.

    Parameters
    ----------
    guard : callable(y_old, y_new) -> bool, optional
        Return False to reject an otherwise accepted step.
    on_accept : callable(s, y), optional
        Called after every accepted step. A truthy return value means the
        right-hand side has changed and the first stage is re-evaluated.
    stop : callable(s, y) -> bool, optional
        Terminate after the current step when it returns True.

    Raises
    ------
    BoundaryError
        If the step size collapses while the right-hand side keeps leaving
        the admissible region.
    StepUnderflowError
        If the embedded error control cannot proceed.
    """
    solver = DOP853(fun, s0, np.asarray(y0, dtype=float), s_end, rtol=rtol, atol=atol,
                    max_step=max_step, first_step=first_step)
    ts, ys, interps = [s0], [np.array(y0, dtype=float)], []
    rejected = 0
    status = "finished"
    for _ in range(max_steps):
        if solver.status != "running":
            break
        backup = _snapshot(solver)
        boundary = None
        try:
            solver.step()
            ok = solver.status != "failed"
            if ok and guard is not None and solver.t != backup.t:
                ok = guard(backup.y, solver.y)
        except BoundaryError as exc:
            ok = False
            boundary = exc
        if not ok:
            if solver.status == "failed" and boundary is None:
                raise StepUnderflowError(f"step size underflow at s={backup.t:.17g}")
            rejected += 1
            solver = backup
            h = 0.5 * solver.h_abs
            if h < 1e-13 * max(1.0, abs(solver.t)):
                if boundary is not None:
                    raise BoundaryError(f"boundary contact at s={solver.t:.17g}: {boundary}",
                                        value=getattr(boundary, "value", None))
                raise StepUnderflowError(f"guard cannot be satisfied at s={solver.t:.17g}")
            solver.h_abs = h
            continue
        interps.append(solver.dense_output())
        ts.append(solver.t)
        ys.append(solver.y.copy())
        if on_accept is not None and on_accept(solver.t, solver.y):
            # the right-hand side changed (e.g. a new gauge): the stored stage is stale
            solver.f = solver.fun(solver.t, solver.y)
        if stop is not None and stop(solver.t, solver.y):
            status = "stopped"
            break
    else:
        status = "max_steps"
    return GuardedRun(ts, ys, interps, rejected, status)
