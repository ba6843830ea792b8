"""Local frames linking the geodesic coordinates x to hyperspherical rho.

The internal frame solves ``v_mu . v_nu = g delta_mu_nu`` for the triads
``v_mu = (alpha_mu, beta_mu, sqrt(gamma33) gamma_mu)``. The system is
underdetermined (solutions form a 3-parameter orthogonal family); it is
solved constructively, ``v_mu = sqrt(g) O[:, mu]`` for an orthogonal gauge
``O``. In matrix form ``d rho = M dx`` with ``M = sqrt(g) D^-1 O`` and
``D = diag(1, 1, sqrt(gamma33))``.

The external frame does the same for the Euler-angle block by a Cholesky
factorisation ``gamma_ext = L L^T``: ``N = sqrt(g) L^-T O``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFrameError
from .kinematics import HypersphericalState, gamma_metric
from .manifold import conformal_factor

__all__ = ["FrameSolution", "ExternalFrameSolution", "InverseFrameSolution", "SphereForm",
           "check_gauge", "random_gauge", "frame_from_metric", "solve_internal_frame",
           "solve_external_frame", "solve_inverse_frame", "differential_map",
           "line_element_residual", "composition_residual", "sphere_form", "frame_rank"]

_I3 = np.eye(3)


def check_gauge(O, tol=1e-10):
    """Return ``O`` as an array after checking orthogonality."""
    O = _I3 if O is None else np.asarray(O, dtype=float)
    if O.shape != (3, 3) or np.max(np.abs(O.T @ O - _I3)) > tol:
        raise ValueError("gauge must be an orthogonal 3x3 matrix")
    return O


def random_gauge(rng):
    """Haar-random orthogonal matrix with det +1."""
    Q, R = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


@dataclass(frozen=True)
class FrameSolution:
    """Direct internal frame: ``d rho_1 = alpha.dx``, ``d rho_2 = beta.dx``, ``d rho_3 = gamma.dx``."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    gauge: np.ndarray
    g: float
    gamma33: float
    residual: float

    @property
    def matrix(self):
        return np.vstack([self.alpha, self.beta, self.gamma])

    @property
    def triads(self):
        """Columns ``v_mu``."""
        return np.vstack([self.alpha, self.beta, np.sqrt(self.gamma33) * self.gamma])

    @property
    def determinant(self):
        return float(np.linalg.det(self.matrix))

    def internal_residuals(self):
        """The six left-minus-right sides of the orthogonality system."""
        V = self.triads
        G = V.T @ V - self.g * _I3
        return G[np.triu_indices(3)]


def frame_from_metric(g, gamma33, gauge=None):
    """Frame from the conformal factor and ``gamma33 = (rho1/R0)^2``.

    Raises
    ------
    DegenerateFrameError
        If ``gamma33 <= 0`` (the r = 0 degeneracy) or ``g <= 0``.
    """
    O = check_gauge(gauge)
    if not gamma33 > 0:
        raise DegenerateFrameError("gamma33 = 0: r = 0 degeneracy")
    if not g > 0:
        raise DegenerateFrameError("conformal factor must be positive")
    V = np.sqrt(g) * O
    alpha, beta = V[0].copy(), V[1].copy()
    gamma = V[2] / np.sqrt(gamma33)
    V2 = np.vstack([alpha, beta, np.sqrt(gamma33) * gamma])
    res = float(np.max(np.abs(V2.T @ V2 - g * _I3)))
    return FrameSolution(alpha, beta, gamma, O, float(g), float(gamma33), res)


def solve_internal_frame(rho, system, gauge=None, g=None):
    """Internal frame at the internal point ``rho`` (first three hyperspherical coordinates)."""
    rho = np.asarray(rho, dtype=float)
    if g is None:
        g = conformal_factor(rho[:3], system)
    return frame_from_metric(g, (rho[0] / system.R0) ** 2, gauge)


@dataclass(frozen=True)
class ExternalFrameSolution:
    """External frame: ``d rho_4 = u.dx_ext``, ``d rho_5 = v.dx_ext``, ``d rho_6 = w.dx_ext``."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    gauge: np.ndarray
    g: float
    residual: float
    combinations: np.ndarray

    @property
    def matrix(self):
        return np.vstack([self.u, self.v, self.w])


def solve_external_frame(h, system=None, gauge=None, g=None, convention="rotation"):
    """External frame from the Euler block of gamma at the full point ``h``.

    Parameters
    ----------
    h : HypersphericalState
    g : float, optional
        Conformal factor; evaluated from ``system`` when omitted.

    Raises
    ------
    DegenerateFrameError
        When the external block is not positive definite (e.g. sin(theta)=0).
    """
    O = check_gauge(gauge)
    if g is None:
        g = conformal_factor(h.internal, system)
    Gext = gamma_metric(h, convention).external
    try:
        L = np.linalg.cholesky(Gext)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFrameError("external metric block is not positive definite") from exc
    if np.min(np.linalg.eigvalsh(Gext)) <= 1e-14 * np.max(np.abs(Gext)):
        raise DegenerateFrameError("external metric block is numerically singular")
    N = np.sqrt(g) * np.linalg.solve(L.T, O)
    Q = N.T @ Gext @ N
    res = float(np.max(np.abs(Q - g * _I3)))
    # the three cross conditions: n4.G n5, n5.G n6, n6.G n4
    comb = np.array([Q[0, 1], Q[1, 2], Q[2, 0]])
    return ExternalFrameSolution(N[0].copy(), N[1].copy(), N[2].copy(), O, float(g), res, comb)


@dataclass(frozen=True)
class InverseFrameSolution:
    """Inverse frame ``dx = K d rho`` (internal) and ``K_ext`` (external, optional).

    Rows of ``K`` are the triads (alpha_bar, beta_bar, gamma_bar); column mu
    has squared norm ``gamma^{mu mu}/g``.
    """

    K: np.ndarray
    K_ext: np.ndarray
    g: float
    residual: float

    @property
    def alpha_bar(self):
        return self.K[0]

    @property
    def beta_bar(self):
        return self.K[1]

    @property
    def gamma_bar(self):
        return self.K[2]


def solve_inverse_frame(frame, external=None, gamma=None):
    """Inverse frame consistent with ``frame`` (and ``external``).

    ``K = g^-1/2 O^T D`` so that ``K^T K = gamma_int / g`` and ``M K = I``.
    The external block uses ``K_ext = g^-1/2 O^T L^T``.
    """
    g = frame.g
    D = np.diag([1.0, 1.0, np.sqrt(frame.gamma33)])
    K = frame.gauge.T @ D / np.sqrt(g)
    target = np.diag([1.0, 1.0, frame.gamma33]) / g
    res = float(np.max(np.abs(K.T @ K - target)))
    K_ext = None
    if external is not None:
        if gamma is None:
            raise ValueError("external inverse needs the gamma metric")
        Gext = gamma.external
        L = np.linalg.cholesky(Gext)
        K_ext = external.gauge.T @ L.T / np.sqrt(g)
        res = max(res, float(np.max(np.abs(K_ext.T @ K_ext - Gext / g))))
    return InverseFrameSolution(K, K_ext, float(g), res)


def composition_residual(frame, inverse, external=None):
    """``max |M K - I|`` (and the external block when provided)."""
    r = float(np.max(np.abs(frame.matrix @ inverse.K - _I3)))
    if external is not None and inverse.K_ext is not None:
        r = max(r, float(np.max(np.abs(external.matrix @ inverse.K_ext - _I3))))
    return r


def differential_map(frame, dx):
    """``d rho = M dx`` for the internal block."""
    return frame.matrix @ np.asarray(dx, dtype=float)


def line_element_residual(frame, dx):
    """Relative violation of ``gamma d rho d rho = g |dx|^2``."""
    dx = np.asarray(dx, dtype=float)
    d_rho = differential_map(frame, dx)
    lhs = d_rho[0] ** 2 + d_rho[1] ** 2 + frame.gamma33 * d_rho[2] ** 2
    rhs = frame.g * (dx @ dx)
    if rhs == 0:
        return float(abs(lhs))
    return float(abs(lhs - rhs) / rhs)


@dataclass(frozen=True)
class SphereForm:
    """Normalised quadruples of the unit-sphere form of the frame system.

    ``quads[i]`` is ``(alpha~_i, beta~_i, gamma~_i, gamma~_(i+1)(i))``;
    ``norm_residual`` is ``max | |quad| ^ 2 - 1 |``.
    """

    sigma: np.ndarray
    quads: np.ndarray
    norm_residual: float
    auxiliary: np.ndarray


def sphere_form(frame):
    """Unit-sphere normal form of the internal frame.

    Raises
    ------
    DegenerateFrameError
        If any ``sigma_i = 2 (g - gamma33 gamma_i gamma_(i+1)) <= 0``.
    """
    al, be, ga = frame.alpha, frame.beta, frame.gamma
    g, c = frame.g, frame.gamma33
    pairs = ((0, 1), (1, 2), (2, 0))
    sigma = np.array([2.0 * (g - c * ga[i] * ga[j]) for i, j in pairs])
    if np.any(sigma <= 0):
        raise DegenerateFrameError(f"sphere form undefined: sigma = {sigma.tolist()}")
    sq = np.sqrt(sigma)
    quads = np.array([[(al[i] + al[j]) / sq[k], (be[i] + be[j]) / sq[k],
                       np.sqrt(c) * ga[i] / sq[k], np.sqrt(c) * ga[j] / sq[k]]
                      for k, (i, j) in enumerate(pairs)])
    norms = np.sum(quads ** 2, axis=1)
    # secondary relations listed next to the unit-norm identities; reported only
    rho2 = np.sum(quads[:, :3] ** 2, axis=1)
    cross = lambda i, j: 2.0 * np.sqrt(sigma[i] * sigma[j]) * (quads[i, :3] @ quads[j, :3])
    s1, s2, s3 = sigma * rho2
    aux = np.array([s1 - s2 - s3 + cross(1, 2), s1 + s2 - s3 - cross(0, 1), s1 - s2 + s3 - cross(0, 2)])
    return SphereForm(sigma, quads, float(np.max(np.abs(norms - 1.0))), aux)


def frame_rank(rho, system, n_samples=32, rng=None, eps=1e-6):
    """Dimension of the frame-solution family at ``rho`` by perturbation rank.

    Gauges ``O exp(eps S)`` for random skew ``S`` are mapped to flattened
    frame matrices; the rank of the finite-difference tangent set is the
    local dimension of the solution manifold (expected 3).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    base = solve_internal_frame(rho, system).matrix.ravel()
    tangents = []
    for _ in range(n_samples):
        w = rng.standard_normal(3)
        S = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
        O = _expm_skew(eps * S)
        fr = solve_internal_frame(rho, system, O)
        if fr.residual > 1e-12:
            raise DegenerateFrameError("perturbed gauge produced an invalid frame")
        tangents.append((fr.matrix.ravel() - base) / eps)
    s = np.linalg.svd(np.array(tangents), compute_uv=False)
    return int(np.sum(s > 1e-4 * s[0]))


def _expm_skew(S):
    """Rodrigues formula for the exponential of a 3x3 skew matrix."""
    w = np.array([S[2, 1], S[0, 2], S[1, 0]])
    th = np.linalg.norm(w)
    if th == 0:
        return _I3.copy()
    K = S / th
    return _I3 + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)


def full_point(rho_int, rho_ext, R0):
    return HypersphericalState(np.concatenate([rho_int, rho_ext]), R0)
