"""Masses, pair potentials, Jacobi and hyperspherical coordinates, metric tensor.

Conventions
-----------
Jacobi vectors: ``R = r2 - r3`` and ``r = r1 - r0``, where ``r0`` is the centre
of mass of the pair (2, 3). The reduced 6D configuration is mass-weighted,

    r_w = sqrt(mu3/mu0) r,   R_w = sqrt(mu2/mu0) R,

so the kinetic energy is ``mu0/2 (|dr_w/dt|^2 + |dR_w/dt|^2)`` and the
conjugate momenta are the tilde-normalised ``P3~ = sqrt(mu0 mu3) dr/dt`` and
``P2~ = sqrt(mu0 mu2) dR/dt``. Hyperspherical lengths ``rho1, rho2`` are the
weighted lengths |r_w|, |R_w|; angles are scaled by ``R0``.

Orientation uses z-x-z Euler angles: the body frame has z along R and r in
the x-z half plane, ``r_hat = (sin th, 0, cos th)``, and the body-to-lab
rotation is ``Rz(Phi) Rx(Theta) Rz(Psi)``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DegenerateConfigurationError

__all__ = [
    "MassTriple", "derive_masses",
    "GravityPair", "MorsePair", "TabulatedPair", "FreePair", "PotentialSpec",
    "compute_u0",
    "LabState", "JacobiState", "HypersphericalState", "GammaMetric",
    "lab_to_jacobi", "jacobi_to_lab", "jacobi_to_hyperspherical",
    "hyperspherical_to_jacobi", "euler_matrix", "euler_angles",
    "angular_velocity", "gamma_metric", "kinetic_energy", "kinetic_energy_body",
    "kinetic_energy_cartesian", "coriolis_term", "hyperspherical_rates",
]


# ----------------------------------------------------------------------------
# masses
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class MassTriple:
    """Three body masses and the derived reduced masses.

    Attributes
    ----------
    m1, m2, m3 : float
        Positive masses.
    mu1 : float
        Total mass.
    mu2 : float
        Reduced mass of the pair (2, 3).
    mu3 : float
        Reduced mass of body 1 against the pair.
    mu0 : float
        Effective one-particle mass, ``mu0**2 = m1 m2 m3 / mu1``.
    lam_minus, lam_plus : float
        ``mu2/m2`` and ``mu2/m3``.
    """

    m1: float
    m2: float
    m3: float
    mu1: float = field(init=False)
    mu2: float = field(init=False)
    mu3: float = field(init=False)
    mu0: float = field(init=False)
    lam_minus: float = field(init=False)
    lam_plus: float = field(init=False)

    def __post_init__(self):
        masses = (self.m1, self.m2, self.m3)
        if not all(np.isfinite(m) and m > 0 for m in masses):
            raise ValueError(f"masses must be positive and finite, got {masses}")
        m1, m2, m3 = (float(m) for m in masses)
        mu1 = m1 + m2 + m3
        mu2 = m2 * m3 / (m2 + m3)
        set_ = object.__setattr__
        set_(self, "m1", m1)
        set_(self, "m2", m2)
        set_(self, "m3", m3)
        set_(self, "mu1", mu1)
        set_(self, "mu2", mu2)
        set_(self, "mu3", m1 * (m2 + m3) / mu1)
        set_(self, "mu0", np.sqrt(m1 * m2 * m3 / mu1))
        set_(self, "lam_minus", mu2 / m2)
        set_(self, "lam_plus", mu2 / m3)

    @property
    def masses(self):
        return np.array([self.m1, self.m2, self.m3])

    @property
    def weight_r(self):
        """Scale from physical |r| to the mass-weighted length rho1."""
        return np.sqrt(self.mu3 / self.mu0)

    @property
    def weight_R(self):
        """Scale from physical |R| to the mass-weighted length rho2."""
        return np.sqrt(self.mu2 / self.mu0)

    def pair_reduced_mass(self, i, j):
        m = self.masses
        return m[i] * m[j] / (m[i] + m[j])


def derive_masses(m1, m2, m3):
    """Build a :class:`MassTriple`; raises ``ValueError`` for non-positive masses."""
    return MassTriple(m1, m2, m3)


# ----------------------------------------------------------------------------
# pair potentials
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GravityPair:
    """Softened attraction ``-k / sqrt(d^2 + eps^2)`` with ``k = G m_i m_j``."""

    coupling: float
    softening: float = 0.0
    kind = "gravity"

    def value(self, d):
        return -self.coupling / np.sqrt(d * d + self.softening ** 2)

    def derivative(self, d):
        return self.coupling * d / (d * d + self.softening ** 2) ** 1.5

    def to_dict(self):
        return {"coupling": self.coupling, "softening": self.softening}


@dataclass(frozen=True)
class MorsePair:
    """Morse well ``D (exp(-2a(d-d0)) - 2 exp(-a(d-d0)))``, minimum ``-D`` at ``d0``."""

    depth: float
    width: float
    d0: float
    kind = "morse"

    def value(self, d):
        e = np.exp(-self.width * (d - self.d0))
        return self.depth * (e * e - 2.0 * e)

    def derivative(self, d):
        e = np.exp(-self.width * (d - self.d0))
        return 2.0 * self.depth * self.width * (e - e * e)

    def to_dict(self):
        return {"depth": self.depth, "width": self.width, "d0": self.d0}


class TabulatedPair:
    """Pair potential from samples, interpolated by a natural cubic spline.

    Outside the table the spline is extrapolated; keep the table wide enough
    to cover the simulated separations.
    """

    kind = "tabulated"

    def __init__(self, distances, values):
        d = np.asarray(distances, dtype=float)
        v = np.asarray(values, dtype=float)
        if d.ndim != 1 or d.shape != v.shape or d.size < 4:
            raise ValueError("tabulated potential needs >= 4 matching samples")
        if np.any(np.diff(d) <= 0):
            raise ValueError("tabulated distances must be strictly increasing")
        self.distances = d
        self.values = v
        self._spline = CubicSpline(d, v, bc_type="natural")
        self._dspline = self._spline.derivative()

    def value(self, d):
        return self._spline(d)

    def derivative(self, d):
        return self._dspline(d)

    def to_dict(self):
        return {"distances": self.distances.tolist(), "values": self.values.tolist()}


@dataclass(frozen=True)
class FreePair:
    """No interaction."""

    kind = "free"

    def value(self, d):
        return np.zeros_like(np.asarray(d, dtype=float))

    def derivative(self, d):
        return np.zeros_like(np.asarray(d, dtype=float))

    def to_dict(self):
        return {}


PAIR_LABELS = ("12", "13", "23")


class PotentialSpec:
    """Sum of three pair potentials for pairs (1,2), (1,3), (2,3).

    Parameters
    ----------
    pairs : sequence of 3 pair potentials
        In the order (12, 13, 23).
    kind : str
        Label used in configs and manifests.
    """

    def __init__(self, pairs, kind="custom"):
        pairs = tuple(pairs)
        if len(pairs) != 3:
            raise ValueError("need exactly three pair potentials (12, 13, 23)")
        self.pairs = pairs
        self.kind = kind

    # constructors -----------------------------------------------------------
    @classmethod
    def gravity(cls, masses, G=1.0, softening=0.0):
        m = masses.masses
        pairs = [GravityPair(G * m[i] * m[j], softening) for i, j in ((0, 1), (0, 2), (1, 2))]
        return cls(pairs, kind="gravity")

    @classmethod
    def morse(cls, depth=1.0, width=1.0, d0=1.0):
        """Morse wells; each argument may be a scalar or a 3-sequence (12, 13, 23)."""
        D, a, e = (np.broadcast_to(np.asarray(v, dtype=float), (3,)) for v in (depth, width, d0))
        return cls([MorsePair(float(D[k]), float(a[k]), float(e[k])) for k in range(3)], kind="morse")

    @classmethod
    def tabulated(cls, distances, values):
        """Same tabulated curve for all pairs, or per-pair lists of length 3."""
        d = np.asarray(distances, dtype=float)
        v = np.asarray(values, dtype=float)
        if d.ndim == 1:
            d = np.broadcast_to(d, (3, d.size))
            v = np.broadcast_to(v, (3, v.shape[-1]))
        return cls([TabulatedPair(d[k], v[k]) for k in range(3)], kind="tabulated")

    @classmethod
    def free(cls):
        return cls([FreePair()] * 3, kind="free")

    # evaluation -------------------------------------------------------------
    def pair_form(self, d12, d13, d23):
        """Total potential from the three pair distances."""
        p12, p13, p23 = self.pairs
        return p12.value(d12) + p13.value(d13) + p23.value(d23)

    @staticmethod
    def pair_distances(r, R, theta, masses):
        """Pair distances from physical Jacobi lengths by the law of cosines."""
        lm, lp = masses.lam_minus, masses.lam_plus
        c = np.cos(theta)
        d12 = np.sqrt(np.maximum(r * r + lm * lm * R * R - 2.0 * lm * r * R * c, 0.0))
        d13 = np.sqrt(np.maximum(r * r + lp * lp * R * R + 2.0 * lp * r * R * c, 0.0))
        return d12, d13, np.abs(R)

    def internal(self, r, R, theta, masses):
        """Potential as a function of physical (r, R, theta)."""
        return self.pair_form(*self.pair_distances(r, R, theta, masses))

    def internal_gradient(self, r, R, theta, masses):
        """Analytic gradient of :meth:`internal` with respect to (r, R, theta).

        Returns an array with the three partial derivatives stacked on the
        first axis.
        """
        lm, lp = masses.lam_minus, masses.lam_plus
        c, s = np.cos(theta), np.sin(theta)
        d12, d13, d23 = self.pair_distances(r, R, theta, masses)
        if np.any(d12 == 0) or np.any(d13 == 0) or np.any(d23 == 0):
            raise DegenerateConfigurationError("coincident bodies")
        p12, p13, p23 = self.pairs
        g12 = p12.derivative(d12) / d12
        g13 = p13.derivative(d13) / d13
        d_r = g12 * (r - lm * R * c) + g13 * (r + lp * R * c)
        d_R = g12 * (lm * lm * R - lm * r * c) + g13 * (lp * lp * R + lp * r * c) + p23.derivative(d23) * np.sign(R)
        d_th = (g12 * lm - g13 * lp) * r * R * s
        return np.stack(np.broadcast_arrays(d_r, d_R, d_th))

    def cartesian_force(self, r_vec, R_vec, masses):
        """Minus the gradient with respect to the physical Jacobi vectors.

        Parameters
        ----------
        r_vec, R_vec : ndarray, shape (..., 3)

        Returns
        -------
        f_r, f_R : ndarray, shape (..., 3)
        """
        lm, lp = masses.lam_minus, masses.lam_plus
        a = r_vec - lm * R_vec
        b = r_vec + lp * R_vec
        d12 = np.linalg.norm(a, axis=-1)[..., None]
        d13 = np.linalg.norm(b, axis=-1)[..., None]
        d23 = np.linalg.norm(R_vec, axis=-1)[..., None]
        if np.any(d12 == 0) or np.any(d13 == 0) or np.any(d23 == 0):
            raise DegenerateConfigurationError("coincident bodies")
        p12, p13, p23 = self.pairs
        u12 = p12.derivative(d12) * a / d12
        u13 = p13.derivative(d13) * b / d13
        u23 = p23.derivative(d23) * R_vec / d23
        return -(u12 + u13), -(-lm * u12 + lp * u13 + u23)

    def cartesian_value(self, r_vec, R_vec, masses):
        lm, lp = masses.lam_minus, masses.lam_plus
        d12 = np.linalg.norm(r_vec - lm * R_vec, axis=-1)
        d13 = np.linalg.norm(r_vec + lp * R_vec, axis=-1)
        d23 = np.linalg.norm(R_vec, axis=-1)
        return self.pair_form(d12, d13, d23)

    def to_dict(self):
        return {"kind": self.kind,
                "pairs": {lab: {"kind": p.kind, **p.to_dict()} for lab, p in zip(PAIR_LABELS, self.pairs)}}


def compute_u0(potential, masses, box, n=64):
    """Normalisation ``U0 = max |U|`` sampled on an ``n**3`` grid.

    Parameters
    ----------
    box : dict
        ``{"r": (lo, hi), "R": (lo, hi), "theta": (lo, hi)}`` in physical
        Jacobi lengths; ``theta`` defaults to ``(0, pi)``.

    Returns
    -------
    float
        Positive normalisation. If the potential vanishes on the whole box,
        1.0 is returned so that g = E stays well defined.
    """
    r = np.linspace(*box["r"], n)
    R = np.linspace(*box["R"], n)
    th = np.linspace(*box.get("theta", (0.0, np.pi)), n)
    rr, RR, tt = np.meshgrid(r, R, th, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        u = potential.internal(rr, RR, tt, masses)
    if not np.all(np.isfinite(u)):
        raise ValueError("potential is singular inside the U0 box; shrink the box")
    u0 = float(np.max(np.abs(u)))
    return u0 if u0 > 0 else 1.0


# ----------------------------------------------------------------------------
# states
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class LabState:
    """Laboratory positions and momenta, one row per body."""

    positions: np.ndarray
    momenta: np.ndarray

    def __post_init__(self):
        q = np.array(self.positions, dtype=float).reshape(3, 3)
        p = np.array(self.momenta, dtype=float).reshape(3, 3)
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "momenta", p)

    def pair_distances(self):
        q = self.positions
        return (np.linalg.norm(q[0] - q[1]), np.linalg.norm(q[0] - q[2]),
                np.linalg.norm(q[1] - q[2]))


@dataclass(frozen=True)
class JacobiState:
    """Jacobi vectors and tilde-normalised conjugate momenta.

    Attributes
    ----------
    r, R : ndarray (3,)
        Physical Jacobi vectors.
    P3, P2 : ndarray (3,)
        Tilde momenta ``sqrt(mu0 mu3) dr/dt`` and ``sqrt(mu0 mu2) dR/dt``.
    P1 : ndarray (3,)
        Total momentum, kept so the lab state can be restored.
    center : ndarray (3,)
        Centre of mass.
    """

    r: np.ndarray
    R: np.ndarray
    P3: np.ndarray
    P2: np.ndarray
    P1: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("r", "R", "P3", "P2", "P1", "center"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(3))

    def weighted(self, masses):
        """6D mass-weighted position and momentum ``(q, p)``."""
        q = np.concatenate([masses.weight_r * self.r, masses.weight_R * self.R])
        return q, np.concatenate([self.P3, self.P2])


def lab_to_jacobi(state, masses):
    """Remove the centre of mass and express the state in Jacobi form."""
    q, p = state.positions, state.momenta
    d = state.pair_distances()
    if min(d) == 0:
        raise DegenerateConfigurationError("coincident bodies")
    m = masses.masses
    v = p / m[:, None]
    m23 = m[1] + m[2]
    r0 = (m[1] * q[1] + m[2] * q[2]) / m23
    v0 = (m[1] * v[1] + m[2] * v[2]) / m23
    R = q[1] - q[2]
    r = q[0] - r0
    P1 = p.sum(axis=0)
    center = (m[:, None] * q).sum(axis=0) / masses.mu1
    P2 = np.sqrt(masses.mu0 * masses.mu2) * (v[1] - v[2])
    P3 = np.sqrt(masses.mu0 * masses.mu3) * (v[0] - v0)
    return JacobiState(r=r, R=R, P3=P3, P2=P2, P1=P1, center=center)


def jacobi_to_lab(j, masses):
    """Inverse of :func:`lab_to_jacobi` (exact, using the stored P1 and centre)."""
    m = masses.masses
    r_dot = j.P3 / np.sqrt(masses.mu0 * masses.mu3)
    R_dot = j.P2 / np.sqrt(masses.mu0 * masses.mu2)
    v_cm = j.P1 / masses.mu1
    lm, lp = masses.lam_minus, masses.lam_plus
    r0 = j.center - m[0] * j.r / masses.mu1
    v0 = v_cm - m[0] * r_dot / masses.mu1
    q = np.array([r0 + j.r, r0 + lm * j.R, r0 - lp * j.R])
    v = np.array([v0 + r_dot, v0 + lm * R_dot, v0 - lp * R_dot])
    return LabState(q, m[:, None] * v)


# ----------------------------------------------------------------------------
# hyperspherical coordinates
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class HypersphericalState:
    """Point ``rho = (rho1, rho2, R0 th, R0 Theta, R0 Phi, R0 Psi)``.

    ``rho1`` and ``rho2`` are mass-weighted lengths (see module docstring).
    """

    rho: np.ndarray
    R0: float

    def __post_init__(self):
        object.__setattr__(self, "rho", np.array(self.rho, dtype=float).reshape(6))
        if not self.R0 > 0:
            raise ValueError("R0 must be positive")

    @classmethod
    def from_angles(cls, rho1, rho2, theta, Theta, Phi, Psi, R0):
        return cls(np.array([rho1, rho2, R0 * theta, R0 * Theta, R0 * Phi, R0 * Psi]), R0)

    @property
    def r(self):
        return self.rho[0]

    @property
    def R(self):
        return self.rho[1]

    @property
    def theta(self):
        return self.rho[2] / self.R0

    @property
    def Theta(self):
        return self.rho[3] / self.R0

    @property
    def Phi(self):
        return self.rho[4] / self.R0

    @property
    def Psi(self):
        return self.rho[5] / self.R0

    @property
    def internal(self):
        return self.rho[:3].copy()


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.array([[c, -s, z], [s, c, z], [z, z, o]])


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.array([[o, z, z], [z, c, -s], [z, s, c]])


def euler_matrix(Phi, Theta, Psi):
    """Body-to-lab rotation ``Rz(Phi) Rx(Theta) Rz(Psi)`` (complex-step safe)."""
    return _rz(Phi) @ _rx(Theta) @ _rz(Psi)


def _wrap(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.pi if w == -np.pi else w


def euler_angles(A, tol=1e-12):
    """Invert :func:`euler_matrix` choosing ``Psi`` in [0, pi).

    Returns
    -------
    (Phi, Theta, Psi) : tuple of float
    """
    cth = np.clip(A[2, 2], -1.0, 1.0)
    sth = np.hypot(A[2, 0], A[2, 1])
    if sth < tol:
        Psi = 0.0
        Theta = 0.0 if cth > 0 else np.pi
        # A = Rz(Phi) Rx(Theta) with Rx(pi) flipping y and z
        Phi = np.arctan2(A[1, 0], A[0, 0])
        return _wrap(Phi), Theta, Psi
    Theta = np.arctan2(sth, cth)
    Phi = np.arctan2(A[0, 2], -A[1, 2])
    Psi = np.arctan2(A[2, 0], A[2, 1])
    if not (0.0 <= Psi < np.pi):
        Theta, Phi, Psi = -Theta, Phi + np.pi, Psi + np.pi
        Psi = np.mod(Psi, 2.0 * np.pi)
    return _wrap(Phi), _wrap(Theta), float(Psi)


def _body_axes(r_vec, R_vec):
    Rn = np.linalg.norm(R_vec)
    z = R_vec / Rn
    perp = r_vec - (r_vec @ z) * z
    pn = np.linalg.norm(perp)
    if pn <= 1e-14 * max(np.linalg.norm(r_vec), 1e-300):
        # r parallel to R: any axis perpendicular to R works; pick the lab
        # axis least aligned with R for determinism
        e = np.eye(3)[np.argmin(np.abs(z))]
        perp = e - (e @ z) * z
        pn = np.linalg.norm(perp)
    x = perp / pn
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def jacobi_to_hyperspherical(j, R0, masses):
    """Hyperspherical point of a Jacobi configuration.

    Raises
    ------
    DegenerateConfigurationError
        If ``|R| = 0`` or ``|r| = 0``.
    """
    Rn = np.linalg.norm(j.R)
    rn = np.linalg.norm(j.r)
    if Rn == 0 or rn == 0:
        raise DegenerateConfigurationError("Jacobi vector of zero length")
    cos_t = np.clip(j.r @ j.R / (rn * Rn), -1.0, 1.0)
    theta = np.arctan2(np.linalg.norm(np.cross(j.r, j.R)), j.r @ j.R)
    if abs(cos_t) == 1.0:
        theta = 0.0 if cos_t > 0 else np.pi
    Phi, Theta, Psi = euler_angles(_body_axes(j.r, j.R))
    return HypersphericalState.from_angles(masses.weight_r * rn, masses.weight_R * Rn,
                                           theta, Theta, Phi, Psi, R0)


def _weighted_vectors(rho, R0):
    """Mass-weighted (r_w, R_w) from a rho 6-vector (complex-step safe)."""
    th = rho[2] / R0
    A = euler_matrix(rho[4] / R0, rho[3] / R0, rho[5] / R0)
    rb = rho[0] * np.array([np.sin(th), 0.0 * th, np.cos(th)])
    Rb = rho[1] * np.array([0.0 * th, 0.0 * th, 1.0 + 0.0 * th])
    return A @ rb, A @ Rb


def hyperspherical_to_jacobi(h, masses, rates=None):
    """Jacobi vectors (and optionally momenta) from a hyperspherical point.

    Parameters
    ----------
    rates : array_like (6,), optional
        d(rho)/dt. When given, the tilde momenta are filled in.
    """
    rw, Rw = _weighted_vectors(h.rho, h.R0)
    P3 = np.zeros(3)
    P2 = np.zeros(3)
    if rates is not None:
        rdot_w, Rdot_w = weighted_velocities(h, rates)
        P3, P2 = masses.mu0 * rdot_w, masses.mu0 * Rdot_w
    return JacobiState(r=rw / masses.weight_r, R=Rw / masses.weight_R, P3=P3, P2=P2)


def weighted_velocities(h, rates, step=1e-20):
    """Time derivative of the reconstructed weighted vectors, by complex step.

    The complex-step derivative ``Im f(rho + i h rates) / h`` is exact to
    rounding, which makes it an independent oracle for the kinetic-energy
    algebra.
    """
    z = h.rho + 1j * step * np.asarray(rates, dtype=float)
    rw, Rw = _weighted_vectors(z, h.R0)
    return rw.imag / step, Rw.imag / step


def hyperspherical_rates(j, R0, masses, h=None):
    """d(rho)/dt for the motion encoded in a Jacobi state.

    Lengths use exact projections; the three Euler angles and theta use a
    central difference along the straight-line motion, step ``h`` in time
    (default scaled to the configuration).
    """
    base = jacobi_to_hyperspherical(j, R0, masses)
    r_dot = j.P3 / np.sqrt(masses.mu0 * masses.mu3)
    R_dot = j.P2 / np.sqrt(masses.mu0 * masses.mu2)
    rn, Rn = np.linalg.norm(j.r), np.linalg.norm(j.R)
    rates = np.zeros(6)
    rates[0] = masses.weight_r * (j.r @ r_dot) / rn
    rates[1] = masses.weight_R * (j.R @ R_dot) / Rn
    speed = max(np.linalg.norm(r_dot) / rn, np.linalg.norm(R_dot) / Rn, 1e-300)
    if h is None:
        h = 1e-5 / speed
    # theta from the in-plane geometry: avoids the arccos kink at 0 and pi
    c = np.cross(j.r, j.R)
    c_dot = np.cross(r_dot, j.R) + np.cross(j.r, R_dot)
    d = j.r @ j.R
    d_dot = r_dot @ j.R + j.r @ R_dot
    cn = np.linalg.norm(c)
    cn_dot = (c @ c_dot) / cn if cn > 0 else 0.0
    rates[2] = R0 * (d * cn_dot - cn * d_dot) / (cn * cn + d * d)
    if np.linalg.norm(c_dot) == 0 and cn == 0:
        # collinear motion: orientation is fixed up to the free roll about R
        return base, rates
    fwd = jacobi_to_hyperspherical(JacobiState(j.r + h * r_dot, j.R + h * R_dot, j.P3, j.P2), R0, masses)
    bwd = jacobi_to_hyperspherical(JacobiState(j.r - h * r_dot, j.R - h * R_dot, j.P3, j.P2), R0, masses)
    diff = fwd.rho[3:] - bwd.rho[3:]
    diff = (diff / R0 + np.pi) % (2 * np.pi) - np.pi
    rates[3:] = R0 * diff / (2.0 * h)
    return base, rates


# ----------------------------------------------------------------------------
# metric tensor and kinetic energy
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaMetric:
    """6x6 metric on hyperspherical rates, with named component access.

    Indices follow ``rho``: 1-3 internal (r, R, theta), 4-6 the Euler angles
    (Theta, Phi, Psi).
    """

    matrix: np.ndarray
    convention: str = "rotation"

    def component(self, i, j):
        """1-based component ``gamma^{ij}``."""
        return self.matrix[i - 1, j - 1]

    @property
    def internal(self):
        return self.matrix[:3, :3]

    @property
    def external(self):
        return self.matrix[3:, 3:]


def angular_velocity(h, rates, convention="rotation"):
    """Body-frame angular velocity from Euler-angle rates.

    ``convention="rotation"`` is the angular velocity of the rotation
    ``Rz(Phi) Rx(Theta) Rz(Psi)``. ``"printed"`` flips the sign of the
    ``dPsi/dt`` contribution to the z component, which reproduces the
    textbook-style table this library was checked against but is not the
    angular velocity of any z-x-z parametrisation.
    """
    Th, Ps = h.Theta, h.Psi
    dTh, dPh, dPs = np.asarray(rates, dtype=float)[3:] / h.R0
    sgn = 1.0 if convention == "rotation" else -1.0
    wx = dPh * np.sin(Th) * np.sin(Ps) + dTh * np.cos(Ps)
    wy = dPh * np.sin(Th) * np.cos(Ps) - dTh * np.sin(Ps)
    wz = dPh * np.cos(Th) + sgn * dPs
    return np.array([wx, wy, wz])


def gamma_metric(h, convention="rotation"):
    """Metric tensor of the kinetic energy in hyperspherical coordinates.

    The external block is the Hessian of ``A R^2 + B r^2`` in the scaled
    Euler rates; the internal block is ``diag(1, 1, (r/R0)^2)``.
    """
    if convention not in ("rotation", "printed"):
        raise ValueError(f"unknown convention {convention!r}")
    R0 = h.R0
    x = (h.r / R0) ** 2
    X = (h.R / R0) ** 2
    th, Th, Ps = h.theta, h.Theta, h.Psi
    st, ct = np.sin(th), np.cos(th)
    sT, cT = np.sin(Th), np.cos(Th)
    sP, cP = np.sin(Ps), np.cos(Ps)
    s2t = np.sin(2 * th)
    sgn = 1.0 if convention == "rotation" else -1.0
    g = np.zeros((6, 6))
    g[0, 0] = 1.0
    g[1, 1] = 1.0
    g[2, 2] = x
    g[3, 3] = X + x * (1.0 - st ** 2 * cP ** 2)
    g[4, 4] = X * sT ** 2 + x * (sT ** 2 * cP ** 2 + ct ** 2 * sT ** 2 * sP ** 2
                                 + st ** 2 * cT ** 2 - 0.5 * s2t * np.sin(2 * Th) * sP)
    g[5, 5] = x * st ** 2
    g[3, 4] = g[4, 3] = -0.5 * x * (st ** 2 * sT * np.sin(2 * Ps) + s2t * cT * cP)
    g[3, 5] = g[5, 3] = -sgn * 0.5 * x * s2t * cP
    g[4, 5] = g[5, 4] = -sgn * 0.5 * x * (s2t * sT * sP - 2.0 * st ** 2 * cT)
    return GammaMetric(g, convention)


def kinetic_energy(h, rates, mu0, convention="rotation"):
    """Tensor form ``mu0/2 gamma^{ab} drho_a drho_b``."""
    v = np.asarray(rates, dtype=float)
    return 0.5 * mu0 * v @ gamma_metric(h, convention).matrix @ v


def kinetic_energy_body(h, rates, mu0, convention="rotation"):
    """Rigid-frame form ``mu0/2 (R'^2 + r'^2 + r^2 th'^2 + R^2 A + r^2 B)``.

    ``A = wx^2 + wy^2`` and ``B = wy^2 + (wx cos th - wz sin th)^2`` with the
    body angular velocity ``w``. The Coriolis cross term is not included; see
    :func:`coriolis_term`.
    """
    v = np.asarray(rates, dtype=float)
    wx, wy, wz = angular_velocity(h, v, convention)
    th = h.theta
    A = wx ** 2 + wy ** 2
    B = wy ** 2 + (wx * np.cos(th) - wz * np.sin(th)) ** 2
    th_dot = v[2] / h.R0
    return 0.5 * mu0 * (v[0] ** 2 + v[1] ** 2 + h.r ** 2 * th_dot ** 2 + h.R ** 2 * A + h.r ** 2 * B)


def coriolis_term(h, rates, mu0):
    """Cross term ``mu0 r^2 th' w_y`` between in-plane bending and rotation.

    This is ``mu0 * dr/dt . (w x r)`` in the body frame; adding it to
    :func:`kinetic_energy_body` (rotation convention) gives the exact
    kinetic energy.
    """
    w = angular_velocity(h, rates, "rotation")
    return mu0 * h.r ** 2 * (np.asarray(rates)[2] / h.R0) * w[1]


def kinetic_energy_cartesian(h, rates, mu0):
    """``mu0/2 (|d r_w/dt|^2 + |d R_w/dt|^2)`` from reconstructed vectors."""
    rv, Rv = weighted_velocities(h, rates)
    return 0.5 * mu0 * (rv @ rv + Rv @ Rv)
