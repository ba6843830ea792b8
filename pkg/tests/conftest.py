import numpy as np
import pytest

from geoflow3b.kinematics import JacobiState, PotentialSpec, derive_masses
from geoflow3b.newtonian import hamiltonian, phase_from_jacobi
from geoflow3b.system import SystemSpec

EZ = np.array([0.0, 0.0, 1.0])
EX = np.array([1.0, 0.0, 0.0])

ACCEPTANCE_LINES = {}


def jacobi_phase(masses, r, R, vr, vR, t=0.0):
    """Phase point from physical Jacobi vectors and their velocities."""
    j = JacobiState(r=r, R=R, P3=np.sqrt(masses.mu0 * masses.mu3) * np.asarray(vr, float),
                    P2=np.sqrt(masses.mu0 * masses.mu2) * np.asarray(vR, float))
    return phase_from_jacobi(j, masses, t)


def shell_system(masses, potential, phase, R0=1.0, J=np.zeros(3), U0=None):
    """System whose energy is that of ``phase``."""
    probe = SystemSpec(masses, potential, 0.0, R0, U0=U0)
    E = hamiltonian(phase, probe)
    return SystemSpec(masses, potential, E, R0, J, U0=probe.U0)


@pytest.fixture
def unit_masses():
    return derive_masses(1.0, 1.0, 1.0)


@pytest.fixture
def morse():
    return PotentialSpec.morse(1.0, 1.5, 1.0)


@pytest.fixture
def collinear_case(unit_masses, morse):
    ph = jacobi_phase(unit_masses, 1.6 * EZ, 1.0 * EZ, 0.3 * EZ, -0.2 * EZ)
    return ph, shell_system(unit_masses, morse, ph)


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
