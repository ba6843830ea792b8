"""Immutable problem statement shared by every module."""
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryError
from .kinematics import MassTriple, PotentialSpec, compute_u0

__all__ = ["SystemSpec", "hamiltonian_level"]


@dataclass(frozen=True)
class SystemSpec:
    """Masses, potential, energy shell, angle scale and angular momentum.

    Parameters
    ----------
    masses : MassTriple
    potential : PotentialSpec
    energy : float
        Total energy E of the reduced system.
    R0 : float
        Length scale of the angle coordinates.
    J : array_like (3,)
        Angular-momentum integrals. ``|J|`` enters the internal equations.
    U0 : float, optional
        Normalisation of the conformal factor. Computed from ``u0_box`` when
        omitted.
    u0_box : dict, optional
        Box used by :func:`~geoflow3b.kinematics.compute_u0`.
    level : float, optional
        Value of the reduced Hamiltonian on the geodesic side. Defaults to
        ``E`` for E > 0, ``|E|`` for E < 0 and 1 for E = 0; it only rescales
        the arc length.
    """

    masses: MassTriple
    potential: PotentialSpec
    energy: float
    R0: float = 1.0
    J: np.ndarray = field(default_factory=lambda: np.zeros(3))
    U0: float = None
    u0_box: dict = None
    level: float = None

    def __post_init__(self):
        object.__setattr__(self, "J", np.array(self.J, dtype=float).reshape(3))
        if not self.R0 > 0:
            raise ValueError("R0 must be positive")
        if self.U0 is None:
            box = self.u0_box or {"r": (0.5 * self.R0, 3.0 * self.R0),
                                  "R": (0.5 * self.R0, 3.0 * self.R0)}
            object.__setattr__(self, "U0", compute_u0(self.potential, self.masses, box))
        if not self.U0 > 0:
            raise ValueError("U0 must be positive")
        if self.level is None:
            object.__setattr__(self, "level", hamiltonian_level(self.energy))
        if not self.level > 0:
            raise ValueError("Hamiltonian level must be positive")

    @property
    def J_norm(self):
        return float(np.linalg.norm(self.J))

    def physical_lengths(self, rho):
        """Physical (r, R, theta) from internal rho (weighted lengths, scaled angle)."""
        rho = np.asarray(rho)
        return (rho[0] / self.masses.weight_r, rho[1] / self.masses.weight_R,
                rho[2] / self.R0)

    def potential_at(self, rho):
        """Potential at the internal point rho."""
        r, R, th = self.physical_lengths(rho)
        return self.potential.internal(r, R, th, self.masses)

    def potential_gradient(self, rho):
        """Gradient of the potential with respect to internal rho."""
        r, R, th = self.physical_lengths(rho)
        d = self.potential.internal_gradient(r, R, th, self.masses)
        scale = np.array([1.0 / self.masses.weight_r, 1.0 / self.masses.weight_R, 1.0 / self.R0])
        return d * scale.reshape((3,) + (1,) * (d.ndim - 1))

    def kinetic_budget(self, rho):
        """E - U at rho; raises :class:`BoundaryError` when not positive."""
        t = self.energy - self.potential_at(rho)
        if np.any(t <= 0):
            kind = "turning surface E = U" if np.any(t == 0) else "forbidden region E < U"
            raise BoundaryError(f"{kind} at rho={np.asarray(rho).tolist()}", value=t)
        return t

    def with_energy(self, energy):
        return SystemSpec(self.masses, self.potential, energy, self.R0, self.J, self.U0,
                          self.u0_box, None)

    def to_dict(self):
        m = self.masses
        return {"masses": [m.m1, m.m2, m.m3], "potential": self.potential.to_dict(),
                "energy": self.energy, "R0": self.R0, "J": self.J.tolist(),
                "U0": self.U0, "level": self.level}


def hamiltonian_level(energy):
    if energy > 0:
        return float(energy)
    if energy < 0:
        return float(-energy)
    return 1.0
