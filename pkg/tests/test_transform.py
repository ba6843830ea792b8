from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoflow3b.errors import DegenerateFrameError
from geoflow3b.kinematics import HypersphericalState, gamma_metric
from geoflow3b.transform import (check_gauge, composition_residual, differential_map,
                                 frame_from_metric, frame_rank, line_element_residual,
                                 random_gauge, solve_external_frame, solve_inverse_frame,
                                 sphere_form)

seeds = st.integers(0, 2 ** 32 - 1)


def test_identity_gauge_substitution():
    fr = frame_from_metric(4.0, 0.25)
    assert np.array_equal(fr.alpha, [2.0, 0.0, 0.0])
    assert np.array_equal(fr.beta, [0.0, 2.0, 0.0])
    assert np.array_equal(fr.gamma, [0.0, 0.0, 4.0])
    assert 0.25 * fr.gamma[2] ** 2 == fr.g
    assert fr.residual == 0.0


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 50.0), st.floats(0.01, 10.0))
def test_any_gauge_satisfies_frame_system(seed, g, c):
    fr = frame_from_metric(g, c, random_gauge(np.random.default_rng(seed)))
    assert np.max(np.abs(fr.internal_residuals())) <= 1e-12 * max(1.0, g)
    assert fr.residual <= 1e-12 * max(1.0, g)


def test_solution_family_is_three_dimensional():
    from test_manifold import _bound_system
    assert frame_rank(np.array([1.1, 0.9, 0.8]), _bound_system()) == 3


def test_gauge_validation():
    with pytest.raises(ValueError):
        check_gauge(np.diag([1.0, 1.0, 2.0]))
    O = random_gauge(np.random.default_rng(1))
    assert np.linalg.det(O) == pytest.approx(1.0)


def test_degenerate_frames():
    with pytest.raises(DegenerateFrameError):
        frame_from_metric(1.0, 0.0)
    with pytest.raises(DegenerateFrameError):
        frame_from_metric(0.0, 1.0)


def test_external_frame_identity_gauge_is_cholesky():
    h = HypersphericalState.from_angles(1.0, 1.0, np.pi / 2, 0.6, 0.3, 0.0, 1.0)
    G = gamma_metric(h).external
    ext = solve_external_frame(h, g=2.0)
    assert ext.residual <= 1e-10
    L = np.linalg.cholesky(G)
    assert np.allclose(L.T @ ext.matrix, np.sqrt(2.0) * np.eye(3), atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(seeds, st.lists(st.floats(0.3, 2.8), min_size=6, max_size=6))
def test_external_residuals(seed, x):
    h = HypersphericalState.from_angles(*x[:3], *x[3:], 1.0)
    ext = solve_external_frame(h, gauge=random_gauge(np.random.default_rng(seed)), g=1.7)
    assert ext.residual <= 1e-10
    assert np.max(np.abs(ext.combinations)) <= 1e-10


def test_collinear_point_is_degenerate_externally():
    h = HypersphericalState.from_angles(1.0, 1.0, 0.0, 0.5, 0.5, 0.5, 1.0)
    with pytest.raises(DegenerateFrameError):
        solve_external_frame(h, g=1.0)


def test_inverse_frame_norms_and_identity():
    fr = frame_from_metric(4.0, 0.25)
    inv = solve_inverse_frame(fr)
    assert composition_residual(fr, inv) == 0.0
    assert np.array_equal(inv.alpha_bar, [0.5, 0.0, 0.0])
    col_norms = np.sum(inv.K ** 2, axis=0)
    assert np.allclose(col_norms, np.array([1.0, 1.0, 0.25]) / 4.0)


@settings(max_examples=40, deadline=None)
@given(seeds, st.lists(st.floats(0.3, 2.8), min_size=6, max_size=6), st.floats(0.05, 20.0))
def test_direct_inverse_composition(seed, x, g):
    h = HypersphericalState.from_angles(*x[:3], *x[3:], 1.0)
    O = random_gauge(np.random.default_rng(seed))
    fr = frame_from_metric(g, (h.r / h.R0) ** 2, O)
    ext = solve_external_frame(h, gauge=O, g=g)
    inv = solve_inverse_frame(fr, ext, gamma_metric(h))
    assert composition_residual(fr, inv, ext) <= 1e-8
    assert inv.residual <= 1e-10 * max(1.0, 1 / g)


def test_differential_map_identity_gauge():
    fr = frame_from_metric(9.0, 4.0)
    dx = np.array([0.1, -0.2, 0.3])
    assert np.allclose(differential_map(fr, dx), [0.3, -0.6, 3.0 * 0.3 / 2.0])
    assert np.all(differential_map(fr, np.zeros(3)) == 0.0)


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.01, 50.0), st.floats(0.01, 10.0),
       st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=3))
def test_line_element(seed, g, c, dx):
    fr = frame_from_metric(g, c, random_gauge(np.random.default_rng(seed)))
    assert line_element_residual(fr, dx) <= 1e-12


def test_sphere_form_identity_gauge():
    sf = sphere_form(frame_from_metric(4.0, 0.25))
    assert sf.sigma[0] == 8.0
    assert np.allclose(sf.quads[0], [1 / np.sqrt(2), 1 / np.sqrt(2), 0.0, 0.0])
    assert sf.norm_residual <= 1e-15


@settings(max_examples=50, deadline=None)
@given(seeds, st.floats(0.05, 20.0), st.floats(0.05, 5.0))
def test_sphere_form_unit_norms(seed, g, c):
    fr = frame_from_metric(g, c, random_gauge(np.random.default_rng(seed)))
    try:
        sf = sphere_form(fr)
    except DegenerateFrameError:
        return
    assert sf.norm_residual <= 1e-12


def test_sphere_form_sigma_is_bounded_below_by_g():
    # sigma_i = 2 g (1 - O_3i O_3j) and |O_3i O_3j| <= 1/2 for a unit row
    for seed in range(20):
        fr = frame_from_metric(1.3, 0.4, random_gauge(np.random.default_rng(seed)))
        assert np.all(sphere_form(fr).sigma >= 1.3 - 1e-12)


def test_sphere_form_rejects_nonpositive_sigma():
    fr = frame_from_metric(1.0, 1.0)
    bad = replace(fr, gamma=np.array([2.0, 1.0, 0.0]))
    with pytest.raises(DegenerateFrameError):
        sphere_form(bad)
