import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoflow3b.errors import DegenerateConfigurationError
from geoflow3b.kinematics import (HypersphericalState, JacobiState, LabState, PotentialSpec,
                                  angular_velocity, compute_u0, coriolis_term, derive_masses,
                                  euler_angles, euler_matrix, gamma_metric, hyperspherical_rates,
                                  hyperspherical_to_jacobi, jacobi_to_hyperspherical,
                                  jacobi_to_lab, kinetic_energy, kinetic_energy_body,
                                  kinetic_energy_cartesian, lab_to_jacobi)

finite = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
positive = st.floats(0.05, 20.0)


def test_unit_masses_hand_values():
    m = derive_masses(1, 1, 1)
    assert m.mu1 == 3.0
    assert m.mu2 == 0.5
    assert m.mu3 == pytest.approx(2.0 / 3.0, rel=1e-15)
    assert m.mu0 == pytest.approx(0.5773502691896258, rel=1e-15)


def test_equal_pair_masses_give_equal_lambdas():
    m = derive_masses(2.0, 0.7, 0.7)
    assert m.lam_minus == m.lam_plus == 0.5


def test_light_pair_identity():
    m = derive_masses(1.0, 1e-3, 1e-3)
    assert m.mu2 == pytest.approx(5e-4, rel=1e-14)
    assert m.mu3 == pytest.approx(2e-3 / 1.002, rel=1e-14)
    assert m.mu0 ** 2 * m.mu1 == pytest.approx(1e-6, rel=1e-14)


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, np.inf)])
def test_invalid_masses_rejected(bad):
    with pytest.raises(ValueError):
        derive_masses(*bad)


def test_zero_total_momentum_gives_zero_p1():
    m = derive_masses(1.0, 2.0, 3.0)
    q = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    p = np.array([[1.0, -2.0, 0.5], [-0.5, 1.0, 0.0], [-0.5, 1.0, -0.5]])
    assert np.all(lab_to_jacobi(LabState(q, p), m).P1 == 0.0)


def test_symmetric_pair_centre():
    m = derive_masses(1.0, 1.0, 1.0)
    q = np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    j = lab_to_jacobi(LabState(q, np.zeros((3, 3))), m)
    assert np.allclose(q[0] - j.r, [0.5, 0.0, 0.0], atol=0)


def test_coincident_bodies_rejected():
    m = derive_masses(1, 1, 1)
    q = np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]])
    with pytest.raises(DegenerateConfigurationError):
        lab_to_jacobi(LabState(q, np.zeros((3, 3))), m)


@settings(max_examples=60, deadline=None)
@given(st.tuples(positive, positive, positive), st.lists(vec3, min_size=6, max_size=6))
def test_lab_jacobi_round_trip(ms, vecs):
    m = derive_masses(*ms)
    q = np.array(vecs[:3])
    p = np.array(vecs[3:])
    d = LabState(q, p).pair_distances()
    if min(d) < 1e-3:
        return
    back = jacobi_to_lab(lab_to_jacobi(LabState(q, p), m), m)
    scale = max(1.0, np.max(np.abs(q)), np.max(np.abs(p)))
    assert np.max(np.abs(back.positions - q)) <= 1e-12 * scale
    assert np.max(np.abs(back.momenta - p)) <= 1e-12 * scale


def test_theta_of_parallel_and_orthogonal_vectors():
    m = derive_masses(1, 1, 1)
    z = np.array([0.0, 0.0, 1.0])
    par = jacobi_to_hyperspherical(JacobiState(2 * z, z, np.zeros(3), np.zeros(3)), 1.0, m)
    ort = jacobi_to_hyperspherical(JacobiState(np.array([1.0, 0, 0]), z, np.zeros(3), np.zeros(3)), 1.0, m)
    assert par.theta == 0.0
    assert ort.theta == pytest.approx(np.pi / 2, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(vec3, vec3, st.floats(0.2, 5.0))
def test_hyperspherical_round_trip_and_dot_product_angle(r, R, R0):
    if np.linalg.norm(r) < 1e-2 or np.linalg.norm(R) < 1e-2:
        return
    m = derive_masses(1.0, 2.0, 0.5)
    j = JacobiState(r, R, np.zeros(3), np.zeros(3))
    h = jacobi_to_hyperspherical(j, R0, m)
    cos_t = r @ R / (np.linalg.norm(r) * np.linalg.norm(R))
    assert np.cos(h.theta) == pytest.approx(cos_t, abs=1e-12)
    back = hyperspherical_to_jacobi(h, m)
    assert np.allclose(back.r, r, atol=1e-12 * max(1, np.abs(r).max()))
    assert np.allclose(back.R, R, atol=1e-12 * max(1, np.abs(R).max()))


def test_euler_round_trip_and_gimbal_lock():
    for angles in [(0.3, 1.1, 0.4), (-2.0, 2.5, 3.0), (1.0, -0.7, 0.2)]:
        A = euler_matrix(*angles)
        assert np.allclose(euler_matrix(*euler_angles(A)), A, atol=1e-13)
        assert 0.0 <= euler_angles(A)[2] < np.pi
    Phi, Theta, Psi = euler_angles(euler_matrix(0.8, 0.0, 0.0))
    assert (Theta, Psi) == (0.0, 0.0) and Phi == pytest.approx(0.8)


def test_gamma_substitution_values():
    h = HypersphericalState.from_angles(1.0, 1.0, np.pi / 2, 0.4, 0.2, 0.0, 1.0)
    G = gamma_metric(h)
    assert G.component(3, 3) == 1.0
    assert G.component(6, 6) == pytest.approx(1.0, abs=1e-15)
    assert G.component(4, 4) == pytest.approx(1.0, abs=1e-15)
    h2 = HypersphericalState.from_angles(1.0, 1.3, np.pi / 2, 0.4, 0.2, np.pi / 2, 1.0)
    assert gamma_metric(h2).component(4, 5) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 3.0), min_size=6, max_size=6))
def test_gamma_symmetric_with_decoupled_blocks(x):
    h = HypersphericalState.from_angles(*x[:3], *x[3:], 1.0)
    G = gamma_metric(h).matrix
    assert np.array_equal(G, G.T)
    assert np.all(G[:3, 3:] == 0.0)


def test_kinetic_energy_without_rotation_and_at_rest():
    h = HypersphericalState.from_angles(1.2, 0.8, 0.9, 0.3, 0.5, 0.7, 1.0)
    v = np.array([0.3, -0.2, 0.5, 0.0, 0.0, 0.0])
    mu0 = 0.7
    expected = 0.5 * mu0 * (0.3 ** 2 + 0.2 ** 2 + 1.2 ** 2 * 0.5 ** 2)
    assert kinetic_energy_body(h, v, mu0) == pytest.approx(expected, rel=1e-14)
    assert kinetic_energy(h, v, mu0) == pytest.approx(expected, rel=1e-14)
    assert kinetic_energy_body(h, np.zeros(6), mu0) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.2, 2.8), min_size=6, max_size=6),
       st.lists(st.floats(-2.0, 2.0), min_size=6, max_size=6))
def test_tensor_form_equals_rigid_frame_form(x, v):
    h = HypersphericalState.from_angles(*x[:3], *x[3:], 1.0)
    assert kinetic_energy(h, v, 1.0) == pytest.approx(kinetic_energy_body(h, v, 1.0), rel=1e-11, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.2, 2.8), min_size=6, max_size=6),
       st.lists(st.floats(-2.0, 2.0), min_size=6, max_size=6))
def test_rigid_form_plus_coriolis_equals_cartesian(x, v):
    h = HypersphericalState.from_angles(*x[:3], *x[3:], 1.0)
    exact = kinetic_energy_cartesian(h, v, 1.0)
    assert kinetic_energy_body(h, v, 1.0) + coriolis_term(h, v, 1.0) == pytest.approx(exact, rel=1e-11, abs=1e-13)


def test_printed_convention_flips_only_psi_rate():
    h = HypersphericalState.from_angles(1.0, 1.0, 0.7, 0.4, 0.2, 0.3, 1.0)
    v = np.array([0, 0, 0, 0.1, 0.2, 0.3])
    w_rot, w_pr = angular_velocity(h, v), angular_velocity(h, v, "printed")
    assert np.allclose(w_rot[:2], w_pr[:2])
    assert w_rot[2] - w_pr[2] == pytest.approx(2 * 0.3)
    with pytest.raises(ValueError):
        gamma_metric(h, "other")


def test_rates_reproduce_velocities():
    m = derive_masses(1.0, 1.5, 0.8)
    j = JacobiState(np.array([0.3, 0.9, 1.1]), np.array([1.0, -0.2, 0.4]),
                    np.array([0.2, 0.1, -0.3]), np.array([-0.1, 0.4, 0.2]))
    h, rates = hyperspherical_rates(j, 1.0, m)
    back = hyperspherical_to_jacobi(h, m, rates)
    assert np.allclose(back.P3, j.P3, atol=1e-8)
    assert np.allclose(back.P2, j.P2, atol=1e-8)


def test_morse_pair_hand_substitution():
    m = derive_masses(1, 1, 1)
    pot = PotentialSpec.morse(2.0, 1.5, 1.0)
    r, R, th = 1.3, 0.9, 0.6
    d12 = np.sqrt(r * r + 0.25 * R * R - r * R * np.cos(th))
    d13 = np.sqrt(r * r + 0.25 * R * R + r * R * np.cos(th))
    morse = lambda d: 2.0 * (np.exp(-3.0 * (d - 1)) - 2 * np.exp(-1.5 * (d - 1)))
    assert pot.internal(r, R, th, m) == pytest.approx(morse(d12) + morse(d13) + morse(R), rel=1e-14)


def test_internal_gradient_matches_finite_differences():
    m = derive_masses(1.0, 2.0, 3.0)
    for pot in (PotentialSpec.morse(1.0, 1.2, 1.0), PotentialSpec.gravity(m, softening=0.1)):
        x = np.array([1.3, 0.9, 0.6])
        grad = pot.internal_gradient(*x, m)
        h = 1e-6
        fd = [(pot.internal(*(x + h * e), m) - pot.internal(*(x - h * e), m)) / (2 * h) for e in np.eye(3)]
        assert np.allclose(grad, fd, rtol=1e-7, atol=1e-9)


def test_tabulated_potential_validates_and_interpolates():
    d = np.linspace(0.5, 3.0, 40)
    pot = PotentialSpec.tabulated(d, np.exp(-d))
    assert pot.pairs[0].value(1.0) == pytest.approx(np.exp(-1.0), rel=1e-4)
    with pytest.raises(ValueError):
        PotentialSpec.tabulated([1.0, 0.5, 2.0, 3.0], [0, 0, 0, 0])


def test_u0_box_sampling():
    m = derive_masses(1, 1, 1)
    assert compute_u0(PotentialSpec.free(), m, {"r": (0.5, 2), "R": (0.5, 2)}) == 1.0
    u0 = compute_u0(PotentialSpec.morse(1.0, 1.5, 1.0), m, {"r": (0.5, 3), "R": (0.5, 3)}, n=16)
    assert u0 > 0
    with pytest.raises(ValueError):
        compute_u0(PotentialSpec.gravity(m), m, {"r": (0.0, 1.0), "R": (0.0, 1.0)}, n=8)
