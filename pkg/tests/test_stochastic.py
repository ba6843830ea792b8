import numpy as np
import pytest

from geoflow3b.errors import CFLError
from geoflow3b.geodesic import FixedGauge, _make_rhs, initial_state_from_phase
from geoflow3b.stochastic import (FrozenPhaseModel, MetricModel, NoiseSpec, PhaseModel, ReducedSDE,
                                  diffusion_matrix, fp_solve, frozen_momentum_reduction,
                                  frozen_phase_reduction, gaussian_initial, histogram, path_rng,
                                  run_ensemble, sde_metric_step, sde_phase_step, white_noise)

A_REF = np.array([-0.3, 0.2, 0.1])
LAM2 = 0.2


def _strong_order(step, x0, eps, T=0.5, n_paths=2000, fine=11, levels=(4, 5, 6, 7)):
    """Slope of mean path error against step size, reference on the finest grid."""
    rng = np.random.default_rng(0)
    nf = 2 ** fine
    dW = rng.standard_normal((nf, n_paths, x0.size)) * np.sqrt(2 * eps * T / nf)

    def run(k):
        m, r = 2 ** k, nf // 2 ** k
        X = np.tile(x0, (n_paths, 1))
        for j in range(m):
            X = step(X, dW[j * r:(j + 1) * r].sum(0), T / m)
        return X
    ref = run(fine)
    errs = [np.mean(np.linalg.norm(run(k) - ref, axis=1)) for k in levels]
    return np.polyfit(np.log([T / 2 ** k for k in levels]), np.log(errs), 1)[0]


def test_zero_power_gives_zero_increments():
    assert np.all(white_noise(NoiseSpec(0.0, seed=3), 100, 6) == 0.0)


def test_increment_statistics():
    spec = NoiseSpec(0.05, seed=42, ds=0.01)
    z = white_noise(spec, 10 ** 6)[:, 0]
    var = 2 * 0.05 * 0.01
    assert abs(z.mean()) <= 5 * np.sqrt(var / z.size)
    assert z.var() == pytest.approx(var, rel=0.01)


def test_matrix_power_covariance():
    eps = np.array([[0.02, 0.01, 0.0], [0.01, 0.03, 0.0], [0.0, 0.0, 0.0]])
    spec = NoiseSpec(eps, seed=5, ds=0.5)
    z = white_noise(spec, 200000, 3)
    assert np.allclose(np.cov(z.T), 2 * 0.5 * eps, atol=3e-4)
    assert np.all(z[:, 2] == 0.0)


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        NoiseSpec(0.1, ds=0.0)
    with pytest.raises(ValueError):
        white_noise(NoiseSpec(0.1), 0)


def test_streams_are_keyed_by_seed_and_path():
    spec = NoiseSpec(0.1, seed=9)
    assert np.array_equal(white_noise(spec, 50, 3, path=4), white_noise(spec, 50, 3, path=4))
    assert not np.array_equal(white_noise(spec, 50, 3, path=4), white_noise(spec, 50, 3, path=5))
    assert path_rng(9, 0).random() == path_rng(9, 0).random()


def test_ensemble_independent_of_blocks_and_threads():
    model = FrozenPhaseModel(A_REF, LAM2)
    init = gaussian_initial([0.5, 0.2, 0.1, 0, 0, 0], 0.01)
    spec = NoiseSpec(0.01, seed=77, ds=0.01)
    runs = [run_ensemble(model, init, 100, 0.5, spec, block=b, threads=t, bins=8)
            for b, t in ((100, 1), (7, 1), (16, 4))]
    for r in runs[1:]:
        assert np.array_equal(r.final, runs[0].final)
        assert np.array_equal(r.densities[0].counts, runs[0].densities[0].counts)


def test_diffusion_matrix_hand_values():
    assert np.array_equal(diffusion_matrix(np.array([1.0, 0, 0]), 0.0), np.diag([1.0, -1.0, -1.0]))
    assert np.array_equal(diffusion_matrix(np.zeros(3), 2.0), -2.0 * np.eye(3))


def test_noise_free_phase_step_is_euler_step(collinear_case):
    ph, sysm = collinear_case
    st0, _ = initial_state_from_phase(ph, sysm)
    y19 = st0.vector
    ds = 1e-3
    dy = _make_rhs(sysm, FixedGauge(), "rotation")(0.0, y19)
    y = np.concatenate([st0.xi, st0.x, st0.rho])
    out = PhaseModel(sysm).step_one(y, np.zeros(6), ds)
    assert np.allclose(out[:3], st0.xi + ds * dy[3:6], rtol=1e-14, atol=1e-16)
    assert np.allclose(out[3:6], st0.x + ds * dy[0:3], rtol=1e-14, atol=1e-16)
    assert np.allclose(out[6:], st0.rho + ds * dy[6:9], rtol=1e-14, atol=1e-16)


def test_zero_noise_ensemble_paths_coincide():
    model = MetricModel((A_REF, LAM2))
    init = gaussian_initial([0.5, 0.2, 0.1], 0.0)
    res = run_ensemble(model, init, 8, 0.1, NoiseSpec(0.0, seed=1, ds=0.01), bins=4)
    assert np.all(res.final == res.final[0]) and res.n_censored == 0


def test_strong_order_additive_phase_noise():
    step = lambda X, dW, ds: sde_phase_step(X, A_REF, LAM2, dW, ds)
    assert _strong_order(step, np.array([0.5, 0.2, 0.1, 0, 0, 0]), 0.01) == pytest.approx(1.0, abs=0.15)


def test_strong_order_multiplicative_metric_noise():
    step = lambda X, dW, ds: sde_metric_step(X, A_REF, LAM2, dW, ds)
    assert _strong_order(step, np.array([0.5, 0.2, 0.1]), 0.01) == pytest.approx(0.5, abs=0.15)


def test_heun_step_with_zero_noise_is_second_order_drift():
    xi = np.array([0.5, 0.2, 0.1])
    h = sde_metric_step(xi, A_REF, LAM2, np.zeros(3), 0.01, "stratonovich")
    e = sde_metric_step(xi, A_REF, LAM2, np.zeros(3), 0.01, "ito")
    assert not np.array_equal(h, e) and np.allclose(h, e, atol=1e-4)
    with pytest.raises(ValueError):
        sde_metric_step(xi, A_REF, LAM2, np.zeros(3), 0.01, "other")
    with pytest.raises(ValueError):
        sde_phase_step(np.zeros(6), A_REF, LAM2, np.zeros(6), 0.01, "position")


def test_histogram_mass_and_overflow():
    X = np.random.default_rng(0).standard_normal((5000, 2))
    h = histogram(X, bins=16, ranges=[(-1, 1), (-1, 1)])
    assert h.mass == pytest.approx(1.0, abs=1e-14)
    inside = np.all(np.abs(X) <= 1, axis=1).sum()
    assert h.n_inside == inside and h.overflow == len(X) - inside
    assert np.sum(h.density * h.volumes) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        histogram(np.empty((0, 2)))


def _grid(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def test_heat_kernel_variance_growth():
    eps, s_end, v0 = 0.05, 1.0, 0.04
    gr = fp_solve(lambda X: np.zeros_like(X), [_grid(-3, 3, 240)],
                  lambda X: np.exp(-X[..., 0] ** 2 / (2 * v0)), s_end, eps)
    mean, cov = gr.moments()
    assert gr.mass == pytest.approx(1.0, abs=1e-12)
    assert abs(mean[0]) <= 1e-12
    assert cov[0, 0] == pytest.approx(v0 + 2 * eps * s_end, rel=5e-3)


def test_constant_drift_translates_the_mean():
    drift = lambda X: np.broadcast_to(np.array([0.5, -0.25]), X.shape)
    gr = fp_solve(drift, [_grid(-2, 3, 100), _grid(-3, 2, 100)],
                  lambda X: np.exp(-np.sum(X ** 2, axis=-1) / (2 * 0.05)), 1.0, 0.01)
    mean, _ = gr.moments()
    assert np.allclose(mean, [0.5, -0.25], atol=2e-3)
    assert gr.density.min() >= -1e-10 * gr.density.max()


def test_cfl_violation_raises():
    with pytest.raises(CFLError):
        fp_solve(lambda X: np.zeros_like(X), [_grid(-1, 1, 100)], lambda X: np.ones(X.shape[:-1]),
                 0.1, 1.0, dt=0.01)


def test_frozen_noise_ornstein_uhlenbeck_variance():
    # dX = -k X ds + b d eta: Var(s) = (eps b^2 / k)(1 - e^{-2ks}) + v0 e^{-2ks}
    k, b, eps, v0, s_end = 1.5, 0.8, 0.05, 0.01, 1.0
    law = eps * b * b / k * (1 - np.exp(-2 * k * s_end)) + v0 * np.exp(-2 * k * s_end)
    sde = ReducedSDE(lambda X: -k * X, lambda X: np.broadcast_to([[b]], X.shape + (1,))).bind(1)
    res = run_ensemble(sde, gaussian_initial([0.0], np.sqrt(v0)), 40000, s_end,
                       NoiseSpec(eps, seed=3, ds=1e-3), keep_samples=True, bins=32)
    X = res.samples[s_end][:, 0]
    assert X.var() == pytest.approx(law, rel=0.03)
    gr = fp_solve(sde.drift, [_grid(-1.5, 1.5, 400)], lambda X: np.exp(-X[..., 0] ** 2 / (2 * v0)),
                  s_end, eps, bmat=sde.bmat)
    assert gr.moments()[1][0, 0] == pytest.approx(law, rel=5e-3)


def test_reductions_expose_the_requested_axes():
    red = frozen_phase_reduction(A_REF, LAM2, axes=(0, 3))
    assert red.dim == 2 and red.labels == ("xi1", "x1")
    mom = frozen_momentum_reduction(A_REF, LAM2, axes=(0, 1), calculus="stratonovich")
    assert mom.labels == ("xi1", "xi2") and mom.bmat(np.array([[1.0, 0.0]])).shape == (1, 2, 2)


def test_ensemble_argument_validation():
    model = FrozenPhaseModel(A_REF, LAM2)
    init = gaussian_initial(np.zeros(6), 0.0)
    spec = NoiseSpec(0.01, ds=0.01)
    with pytest.raises(ValueError):
        run_ensemble(model, init, 0, 0.1, spec)
    with pytest.raises(ValueError):
        run_ensemble(model, init, 4, 0.105, spec)
    with pytest.raises(ValueError):
        run_ensemble(model, init, 4, 0.1, spec, stamps=[0.2])
