"""Langevin extensions of the geodesic flow, ensembles and Fokker-Planck grids.

Two noise models are provided.

* Phase space: ``d chi = A(chi) ds + d eta`` with ``chi = (xi, x)`` and
  additive white noise, ``<eta eta> = 2 eps delta``.
* Metric fluctuations: the log-gradients ``a`` along a reference path are
  perturbed, ``d xi = A ds + B(xi) d eta`` with ``B = 2 xi xi^T - (|xi|^2 +
  Lambda^2) I`` and ``<eta_i eta_j> = 2 eps_ij delta``.

Increments over a step ``ds`` are Gaussian with covariance ``2 eps ds``.
Random streams come from Philox keyed by ``(seed, path)``, so a path's noise
does not depend on how paths are grouped into blocks or threads.

The Fokker-Planck solvers are explicit finite-volume schemes on 1D/2D
reductions with frozen coefficients (minmod-limited upwind drift, central
diffusion, zero-flux walls), meant for cross-checking Monte Carlo ensembles.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryError, CFLError, NumericalError
from .geodesic import acceleration, local_terms
from .transform import check_gauge

__all__ = ["NoiseSpec", "white_noise", "path_rng", "phase_drift", "diffusion_matrix",
           "sde_phase_step", "sde_metric_step", "PhaseModel", "FrozenPhaseModel", "MetricModel",
           "ReducedSDE", "frozen_phase_reduction", "frozen_momentum_reduction", "EnsembleResult",
           "EnsembleDensity", "histogram", "run_ensemble", "FPGrid", "fp_solve", "fp_solve_phase",
           "fp_solve_momentum", "gaussian_initial", "default_threads"]


# ----------------------------------------------------------------------------
# noise
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Noise power (scalar or symmetric PSD 3x3 matrix), seed and step.

    Parameters
    ----------
    eps : float or array_like (d, d)
    seed : int
        64-bit run seed.
    ds : float
        Step of the internal time.
    """

    eps: object
    seed: int = 0
    ds: float = 1e-3

    def __post_init__(self):
        e = np.asarray(self.eps, dtype=float)
        if e.ndim == 0:
            if not (np.isfinite(e) and e >= 0):
                raise ValueError("noise power must be >= 0")
        else:
            if e.ndim != 2 or e.shape[0] != e.shape[1] or not np.allclose(e, e.T, atol=1e-14):
                raise ValueError("noise power matrix must be square and symmetric")
            if np.min(np.linalg.eigvalsh(e)) < -1e-14 * max(1.0, np.max(np.abs(e))):
                raise ValueError("noise power matrix must be positive semidefinite")
        if not self.ds > 0:
            raise ValueError("ds must be positive")
        object.__setattr__(self, "seed", int(self.seed) & (2 ** 64 - 1))

    @property
    def is_matrix(self):
        return np.ndim(self.eps) == 2

    def covariance(self, dim):
        """Covariance ``2 eps ds`` of one increment in ``dim`` components."""
        e = np.asarray(self.eps, dtype=float)
        C = 2.0 * self.ds * (e * np.eye(dim) if e.ndim == 0 else e)
        if C.shape != (dim, dim):
            raise ValueError(f"noise power matrix must be {dim}x{dim}")
        return C

    def factor(self, dim):
        """``L`` with ``L L^T = 2 eps ds`` (symmetric square root; PSD-safe)."""
        C = self.covariance(dim)
        if np.ndim(self.eps) == 0:
            return np.sqrt(C[0, 0]) * np.eye(dim)
        w, V = np.linalg.eigh(C)
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T

    def to_dict(self):
        e = np.asarray(self.eps, dtype=float)
        return {"eps": e.tolist() if e.ndim else float(e), "seed": self.seed, "ds": self.ds}


def path_rng(seed, path):
    """Counter-based generator for one path, keyed by ``(seed, path)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2 ** 64 - 1), int(path)]))


def white_noise(spec, n, dim=1, path=0):
    """``n`` increments of shape ``(n, dim)`` with covariance ``2 eps ds``.

    Raises
    ------
    ValueError
        For ``n < 1``.
    """
    if n < 1:
        raise ValueError("need at least one increment")
    if np.all(np.asarray(spec.eps) == 0):
        return np.zeros((n, dim))
    z = path_rng(spec.seed, path).standard_normal((n, dim))
    return z @ spec.factor(dim).T


# ----------------------------------------------------------------------------
# coefficients and steppers
# ----------------------------------------------------------------------------

def phase_drift(chi, a, lam2):
    """``A(chi)``: the geodesic acceleration for ``xi`` and ``xi`` itself for ``x``."""
    chi = np.asarray(chi, dtype=float)
    xi = chi[..., :3]
    return np.concatenate([acceleration(a, xi, lam2), xi], axis=-1)


def diffusion_matrix(xi, lam2):
    """``B(xi) = 2 xi xi^T - (|xi|^2 + Lambda^2) I`` (stacked over leading axes)."""
    xi = np.asarray(xi, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    xx = np.sum(xi * xi, axis=-1) + lam2
    return 2.0 * xi[..., :, None] * xi[..., None, :] - xx[..., None, None] * np.eye(xi.shape[-1])


def sde_phase_step(chi, a, lam2, increment, ds, noise_on="all"):
    """One Euler-Maruyama step ``chi + A(chi) ds + d eta``.

    Parameters
    ----------
    chi : array_like (..., 6)
        ``(xi, x)``.
    increment : array_like (..., 6) or (..., 3)
        Noise increment; with ``noise_on="momentum"`` only ``xi`` is kicked.
    """
    chi = np.asarray(chi, dtype=float)
    inc = np.asarray(increment, dtype=float)
    kick = np.zeros_like(chi)
    if noise_on == "all":
        kick[...] = inc
    elif noise_on == "momentum":
        kick[..., :3] = inc[..., :3]
    else:
        raise ValueError("noise_on must be 'all' or 'momentum'")
    return chi + phase_drift(chi, a, lam2) * ds + kick


def sde_metric_step(xi, a, lam2, increment, ds, calculus="ito"):
    """One step of ``d xi = A ds + B(xi) d eta`` along a reference path.

    ``a`` and ``lam2`` are the reference-path values at the current ``s``.
    ``calculus="ito"`` is Euler-Maruyama; ``"stratonovich"`` is the stochastic
    Heun predictor-corrector.
    """
    xi = np.asarray(xi, dtype=float)
    dW = np.asarray(increment, dtype=float)
    A0 = acceleration(a, xi, lam2)
    B0 = diffusion_matrix(xi, lam2)
    eul = xi + A0 * ds + np.einsum("...ij,...j->...i", B0, dW)
    if calculus == "ito":
        return eul
    if calculus != "stratonovich":
        raise ValueError("calculus must be 'ito' or 'stratonovich'")
    A1 = acceleration(a, eul, lam2)
    B1 = diffusion_matrix(eul, lam2)
    return xi + 0.5 * (A0 + A1) * ds + 0.5 * np.einsum("...ij,...j->...i", B0 + B1, dW)


# ----------------------------------------------------------------------------
# models (vectorised over a block of paths)
# ----------------------------------------------------------------------------

class FrozenPhaseModel:
    """Phase-space SDE with constant ``a`` and ``Lambda^2``; state ``(xi, x)``."""

    labels = ("xi1", "xi2", "xi3", "x1", "x2", "x3")

    def __init__(self, a, lam2=0.0, noise_on="all"):
        self.a = np.asarray(a, dtype=float)
        self.lam2 = float(lam2)
        self.noise_on = noise_on
        self.dim = 6
        self.noise_dim = 6

    def step(self, states, dW, s, ds):
        return sde_phase_step(states, self.a, self.lam2, dW, ds, self.noise_on)

    def admissible(self, states):
        return np.all(np.isfinite(states), axis=1)


class PhaseModel:
    """Phase-space SDE on the three-body manifold; state ``(xi, x, rho)``.

    The internal point is co-evolved through the frame, ``d rho = M dx``.
    The noise-free step equals an explicit Euler step of the geodesic system.
    """

    labels = ("xi1", "xi2", "xi3", "x1", "x2", "x3", "rho1", "rho2", "rho3")

    def __init__(self, system, gauge=None, noise_on="all"):
        self.system = system
        self.O = check_gauge(gauge)
        self.noise_on = noise_on
        self.dim = 9
        self.noise_dim = 6

    def step_one(self, y, dW, ds):
        frame, _, a, lam2 = local_terms(y[6:9], self.system, self.O)
        chi = sde_phase_step(y[:6], a, lam2, dW, ds, self.noise_on)
        rho = y[6:9] + frame.matrix @ (chi[3:] - y[3:6])
        return np.concatenate([chi, rho])

    def step(self, states, dW, s, ds):
        out = np.empty_like(states)
        for k, y in enumerate(states):
            if not np.all(np.isfinite(y)):
                out[k] = np.nan
                continue
            try:
                out[k] = self.step_one(y, dW[k], ds)
            except (BoundaryError, NumericalError):
                out[k] = np.nan
        return out

    def admissible(self, states):
        ok = np.all(np.isfinite(states), axis=1)
        ok &= np.where(ok, states[:, 6] > 0, False) & np.where(ok, states[:, 7] > 0, False)
        return ok


class MetricModel:
    """Metric-fluctuation SDE for ``xi`` along a reference path.

    Parameters
    ----------
    coefficients : callable(s) -> (a, lam2)
        Reference-path values; a constant tuple gives frozen coefficients.
    """

    labels = ("xi1", "xi2", "xi3")

    def __init__(self, coefficients, calculus="ito"):
        if callable(coefficients):
            self._coef = coefficients
        else:
            a, lam2 = coefficients
            a = np.asarray(a, dtype=float)
            self._coef = lambda s: (a, float(lam2))
        self.calculus = calculus
        self.dim = 3
        self.noise_dim = 3

    def step(self, states, dW, s, ds):
        a, lam2 = self._coef(s)
        return sde_metric_step(states, a, lam2, dW, ds, self.calculus)

    def admissible(self, states):
        return np.all(np.isfinite(states), axis=1)


class ReducedSDE:
    """Low-dimensional SDE ``dX = drift(X) ds + Bmat(X) d eta`` (vectorised).

    Parameters
    ----------
    drift : callable(X (n, d)) -> (n, d)
    bmat : callable(X) -> (n, d, d), optional
        Noise matrix; additive unit noise when omitted.
    calculus : {"ito", "stratonovich"}
    """

    def __init__(self, drift, bmat=None, calculus="ito", labels=None):
        self.drift = drift
        self.bmat = bmat
        self.calculus = calculus
        self._labels = labels

    def bind(self, dim):
        self.dim = dim
        self.noise_dim = dim
        self.labels = self._labels or tuple(f"X{k + 1}" for k in range(dim))
        return self

    def _kick(self, X, dW):
        if self.bmat is None:
            return dW
        return np.einsum("nij,nj->ni", self.bmat(X), dW)

    def step(self, states, dW, s, ds):
        A0 = self.drift(states)
        if self.bmat is None or self.calculus == "ito":
            return states + A0 * ds + self._kick(states, dW)
        pred = states + A0 * ds + self._kick(states, dW)
        B = self.bmat(states) + self.bmat(pred)
        return states + 0.5 * (A0 + self.drift(pred)) * ds + 0.5 * np.einsum("nij,nj->ni", B, dW)

    def admissible(self, states):
        return np.all(np.isfinite(states), axis=1)


def _restrict(axes, fixed, full_dim):
    axes = tuple(int(k) for k in axes)
    fixed = np.zeros(full_dim) if fixed is None else np.asarray(fixed, dtype=float)

    def embed(X):
        Y = np.broadcast_to(fixed, X.shape[:-1] + (full_dim,)).copy()
        Y[..., axes] = X
        return Y
    return axes, embed


def frozen_phase_reduction(a, lam2, axes=(0, 3), fixed=None):
    """Phase-space drift restricted to ``axes`` with the other components frozen.

    Returns a :class:`ReducedSDE` with additive unit noise, matching the
    reduced phase-space Fokker-Planck equation.
    """
    axes, embed = _restrict(axes, fixed, 6)
    a = np.asarray(a, dtype=float)

    def drift(X):
        return phase_drift(embed(X), a, lam2)[..., axes]
    return ReducedSDE(drift, None, "ito", tuple(FrozenPhaseModel.labels[k] for k in axes)).bind(len(axes))


def frozen_momentum_reduction(a, lam2, axes=(0, 1), fixed=None, calculus="ito", frozen_b=None):
    """Metric-fluctuation SDE restricted to ``axes`` of ``xi``.

    ``frozen_b`` replaces ``B(xi)`` by a constant matrix (the xi-independent
    case); otherwise ``B`` is the sub-block of ``B(xi)`` on ``axes``.
    """
    axes, embed = _restrict(axes, fixed, 3)
    a = np.asarray(a, dtype=float)
    ix = np.ix_(axes, axes)

    def drift(X):
        return acceleration(a, embed(X), lam2)[..., axes]

    if frozen_b is not None:
        Bc = np.asarray(frozen_b, dtype=float)

        def bmat(X):
            return np.broadcast_to(Bc, X.shape[:-1] + Bc.shape)
    else:
        def bmat(X):
            return diffusion_matrix(embed(X), lam2)[(Ellipsis,) + ix]
    return ReducedSDE(drift, bmat, calculus, tuple(f"xi{k + 1}" for k in axes)).bind(len(axes))


# ----------------------------------------------------------------------------
# densities
# ----------------------------------------------------------------------------

@dataclass
class EnsembleDensity:
    """Histogram of an ensemble at one ``s``-stamp.

    ``probabilities`` sum to one over the in-range bins; samples outside
    the bin ranges are counted in ``overflow``.
    """

    edges: list
    counts: np.ndarray
    labels: tuple
    s: float
    overflow: int = 0

    @property
    def n_inside(self):
        return int(self.counts.sum())

    @property
    def probabilities(self):
        n = self.n_inside
        return self.counts / n if n else np.zeros_like(self.counts, dtype=float)

    @property
    def volumes(self):
        widths = [np.diff(e) for e in self.edges]
        V = widths[0]
        for w in widths[1:]:
            V = np.multiply.outer(V, w)
        return V

    @property
    def density(self):
        return self.probabilities / self.volumes

    @property
    def mass(self):
        return float(np.sum(self.probabilities))

    @property
    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    def occupied(self):
        return int(np.count_nonzero(self.counts))

    def to_dict(self):
        return {"s": self.s, "labels": list(self.labels), "edges": [e.tolist() for e in self.edges],
                "counts": self.counts.tolist(), "overflow": self.overflow}


def _auto_ranges(X):
    lo, hi = np.min(X, axis=0), np.max(X, axis=0)
    pad = np.where(hi > lo, 1e-9 * (hi - lo), 0.5)
    pad = np.maximum(pad, 1e-12 * np.maximum(np.abs(lo), np.abs(hi)))
    return [(float(a - p), float(b + p)) for a, b, p in zip(lo, hi, pad)]


def histogram(samples, bins=64, ranges=None, labels=None, s=0.0):
    """Fixed-width histogram of ``samples`` (n, d) as an :class:`EnsembleDensity`."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("no samples")
    d = X.shape[1]
    ranges = _auto_ranges(X) if ranges is None else [tuple(map(float, r)) for r in ranges]
    nb = [bins] * d if np.ndim(bins) == 0 else list(bins)
    edges = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(ranges, nb)]
    counts, _ = np.histogramdd(X, bins=edges)
    inside = np.ones(len(X), bool)
    for k, (lo, hi) in enumerate(ranges):
        inside &= (X[:, k] >= lo) & (X[:, k] <= hi)
    labels = tuple(labels) if labels is not None else tuple(f"X{k + 1}" for k in range(d))
    return EnsembleDensity(edges, counts.astype(np.int64), labels, float(s), int((~inside).sum()))


# ----------------------------------------------------------------------------
# ensembles
# ----------------------------------------------------------------------------

def default_threads():
    """Worker count from ``GEOFLOW3B_THREADS`` (default 1)."""
    v = os.environ.get("GEOFLOW3B_THREADS", "1")
    try:
        n = int(v)
    except ValueError as exc:
        raise ValueError(f"GEOFLOW3B_THREADS must be an integer, got {v!r}") from exc
    return max(1, n)


def gaussian_initial(mean, std):
    """Initial sampler: independent normals around ``mean`` (``std=0`` gives a point)."""
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)

    def sample(rng, n):
        return mean + std * rng.standard_normal((n, mean.size))
    return sample


@dataclass
class EnsembleResult:
    """Densities at the stamps plus per-path final states, flags and labels."""

    stamps: np.ndarray
    densities: list
    final: np.ndarray
    censored: np.ndarray
    censored_at: np.ndarray
    labels: list = None
    samples: dict = field(default_factory=dict, repr=False)
    n_paths: int = 0
    noise: NoiseSpec = None

    @property
    def n_censored(self):
        return int(self.censored.sum())

    def manifest(self):
        return {"n_paths": self.n_paths, "noise": self.noise.to_dict() if self.noise else None,
                "stamps": self.stamps.tolist(), "censored": self.n_censored,
                "bins": [len(e) - 1 for e in self.densities[0].edges] if self.densities else []}


def _run_block(model, initial, noise, paths, n_steps, stamp_steps, s0):
    B = len(paths)
    dim_w = model.noise_dim
    X = np.empty((B, model.dim))
    for k, p in enumerate(paths):
        # initial condition uses its own stream so the noise stream starts at step 0
        X[k] = initial(path_rng(noise.seed ^ 0x5EED, p), 1)[0]
    L = noise.factor(dim_w)
    zero = bool(np.all(np.asarray(noise.eps) == 0))
    rngs = [path_rng(noise.seed, p) for p in paths]
    alive = model.admissible(X)
    dead_at = np.where(alive, -1, 0)
    snaps = {}
    chunk = 256
    done = 0
    if 0 in stamp_steps:
        snaps[0] = X.copy()
    while done < n_steps:
        m = min(chunk, n_steps - done)
        if zero:
            Z = np.zeros((m, B, dim_w))
        else:
            Z = np.stack([r.standard_normal((m, dim_w)) for r in rngs], axis=1) @ L.T
        for j in range(m):
            step = done + j
            s = s0 + step * noise.ds
            with np.errstate(all="ignore"):
                Xn = model.step(X, Z[j], s, noise.ds)
            ok = model.admissible(Xn) & alive
            newly = alive & ~ok
            dead_at[newly] = step + 1
            alive = ok
            X = np.where(alive[:, None], Xn, X)
            if step + 1 in stamp_steps:
                snaps[step + 1] = np.where(alive[:, None], X, np.nan)
        done += m
    return X, alive, dead_at, snaps


def run_ensemble(model, initial, n_paths, s_end, noise, stamps=None, axes=None, bins=64,
                 ranges=None, block=1024, threads=None, labeler=None, keep_samples=False, s0=0.0):
    """Simulate ``n_paths`` independent seeded paths and histogram them.

    Parameters
    ----------
    model : object
        ``step(states, dW, s, ds)``, ``admissible(states)``, ``dim``,
        ``noise_dim`` and ``labels`` (see :class:`FrozenPhaseModel`).
    initial : callable(rng, n) -> (n, dim)
    noise : NoiseSpec
    stamps : array_like, optional
        ``s`` values (multiples of ``noise.ds``) at which densities are taken;
        defaults to ``[s_end]``.
    axes : sequence of int, optional
        State components to histogram (all by default).
    threads : int, optional
        Worker threads; ``GEOFLOW3B_THREADS`` by default. Results do not
        depend on it.
    labeler : callable(final_states (n, dim)) -> list, optional
        Per-path labels (e.g. reaction channels) stored on the result.

    Paths that leave the admissible region are censored from the step they
    fail and counted in ``EnsembleResult.censored``.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")
    threads = default_threads() if threads is None else max(1, int(threads))
    n_steps = int(round((s_end - s0) / noise.ds))
    if n_steps < 1 or abs(s0 + n_steps * noise.ds - s_end) > 1e-9 * max(1.0, abs(s_end)):
        raise ValueError("s_end - s0 must be a positive multiple of noise.ds")
    stamps = np.array([s_end] if stamps is None else stamps, dtype=float)
    stamp_steps = [int(round((s - s0) / noise.ds)) for s in stamps]
    if any(k < 0 or k > n_steps or abs(s0 + k * noise.ds - st) > 1e-9 * max(1.0, abs(st))
           for k, st in zip(stamp_steps, stamps)):
        raise ValueError("stamps must be multiples of ds within [s0, s_end]")
    blocks = [np.arange(b, min(b + block, n_paths)) for b in range(0, n_paths, block)]
    work = lambda idx: _run_block(model, initial, noise, idx, n_steps, set(stamp_steps), s0)
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    final = np.concatenate([p[0] for p in parts])
    alive = np.concatenate([p[1] for p in parts])
    dead_at = np.concatenate([p[2] for p in parts])
    axes = list(range(model.dim)) if axes is None else list(axes)
    labels = tuple(model.labels[k] for k in axes)
    densities, samples = [], {}
    for st, k in zip(stamps, stamp_steps):
        X = np.concatenate([p[3][k] for p in parts])[:, axes]
        X = X[np.all(np.isfinite(X), axis=1)]
        if keep_samples:
            samples[float(st)] = X
        if len(X) == 0:
            raise NumericalError(f"every path was censored before s={st}")
        densities.append(histogram(X, bins, ranges, labels, st))
    lab = labeler(np.where(alive[:, None], final, np.nan)) if labeler is not None else None
    return EnsembleResult(stamps, densities, final, ~alive, dead_at, lab, samples, n_paths, noise)


# ----------------------------------------------------------------------------
# Fokker-Planck grids
# ----------------------------------------------------------------------------

@dataclass
class FPGrid:
    """Cell-centred uniform grid with the density (integrates to one)."""

    edges: list
    density: np.ndarray
    s: float
    steps: int
    dt: float

    @property
    def centers(self):
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    @property
    def h(self):
        return np.array([e[1] - e[0] for e in self.edges])

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def mass(self):
        return float(self.density.sum() * self.cell_volume)

    def probabilities(self):
        return self.density * self.cell_volume

    def moments(self):
        """Mean vector and covariance matrix of the grid density."""
        P = self.probabilities()
        P = P / P.sum()
        mesh = np.meshgrid(*self.centers, indexing="ij")
        mean = np.array([np.sum(P * m) for m in mesh])
        cov = np.array([[np.sum(P * (mi - mean[i]) * (mj - mean[j])) for j, mj in enumerate(mesh)]
                        for i, mi in enumerate(mesh)])
        return mean, cov

    def coarsen(self, factor):
        """Merge ``factor`` cells per axis (for comparison with coarser histograms)."""
        P = self.probabilities()
        shape = []
        for n in P.shape:
            if n % factor:
                raise ValueError("grid size must be divisible by the coarsening factor")
            shape += [n // factor, factor]
        P = P.reshape(shape).sum(axis=tuple(range(1, 2 * P.ndim, 2)))
        edges = [e[::factor] for e in self.edges]
        vol = float(np.prod([e[1] - e[0] for e in edges]))
        return FPGrid(edges, P / vol, self.s, self.steps, self.dt)


def _shift(P, k, direction):
    """Neighbour values along axis ``k`` with zero padding (``direction`` = +1 or -1)."""
    out = np.zeros_like(P)
    src = [slice(None)] * P.ndim
    dst = [slice(None)] * P.ndim
    if direction > 0:
        src[k], dst[k] = slice(1, None), slice(None, -1)
    else:
        src[k], dst[k] = slice(None, -1), slice(1, None)
    out[tuple(dst)] = P[tuple(src)]
    return out


def _face_mean(F, k):
    """Average of ``F`` onto the interior faces ``i+1/2`` along axis ``k``."""
    lo = [slice(None)] * F.ndim
    hi = [slice(None)] * F.ndim
    lo[k], hi[k] = slice(None, -1), slice(1, None)
    return 0.5 * (F[tuple(lo)] + F[tuple(hi)])


def _face_diff(F, k, h):
    lo = [slice(None)] * F.ndim
    hi = [slice(None)] * F.ndim
    lo[k], hi[k] = slice(None, -1), slice(1, None)
    return (F[tuple(hi)] - F[tuple(lo)]) / h


def _central(F, k, h):
    """Central derivative along ``k`` (one-sided at the walls)."""
    return np.gradient(F, h, axis=k, edge_order=1)


def _divergence(fluxes, h, shape):
    """Divergence of interior-face fluxes with zero flux at the walls."""
    div = np.zeros(shape)
    for k, Fk in enumerate(fluxes):
        pad = [(0, 0)] * len(shape)
        pad[k] = (1, 1)
        Fp = np.pad(Fk, pad)
        hi = [slice(None)] * len(shape)
        lo = [slice(None)] * len(shape)
        hi[k], lo[k] = slice(1, None), slice(None, -1)
        div += (Fp[tuple(hi)] - Fp[tuple(lo)]) / h[k]
    return div


def fp_solve(drift, edges, p0, s_end, eps, bmat=None, calculus="ito", dt=None, cfl=0.25,
             s0=0.0):
    """Explicit finite-volume solution of a 1D/2D Fokker-Planck equation.

    Solves ``dP/ds = -div(A P) + diffusion`` with

    * ``bmat=None``: ``eps * Laplacian(P)`` (additive noise, any calculus);
    * ``"ito"``: ``d_l d_k (D_lk P)``, ``D = B eps B^T``;
    * ``"stratonovich"``: ``d_l [B_li eps_ij d_k (B_kj P)]``.

    Parameters
    ----------
    drift : callable(X (..., d)) -> (..., d)
        Frozen drift.
    edges : list of 1D arrays
        Uniform cell edges per axis.
    p0 : callable(X) -> density, or ndarray
        Initial density (renormalised to unit mass).
    eps : float or (d, d) array
    bmat : callable(X) -> (..., d, d), optional
    dt : float, optional
        Time step; chosen from the CFL bound when omitted.

    Raises
    ------
    CFLError
        If ``dt`` exceeds the explicit stability bound.
    """
    edges = [np.asarray(e, dtype=float) for e in edges]
    d = len(edges)
    if d not in (1, 2):
        raise ValueError("grid solver supports 1D and 2D reductions only")
    h = np.array([e[1] - e[0] for e in edges])
    for e, hk in zip(edges, h):
        if not np.allclose(np.diff(e), hk, rtol=1e-9):
            raise ValueError("edges must be uniform")
    centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
    X = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)
    E = np.asarray(eps, dtype=float)
    E = E * np.eye(d) if E.ndim == 0 else E
    P = np.asarray(p0(X) if callable(p0) else p0, dtype=float).copy()
    P /= P.sum() * np.prod(h)
    A = np.asarray(drift(X), dtype=float)
    # drift at faces; frozen coefficients are evaluated once
    face_A = [_face_mean(A[..., k], k) for k in range(d)]
    if bmat is None:
        Bf = None
        D = np.broadcast_to(E, X.shape[:-1] + (d, d))
    else:
        Bf = np.asarray(bmat(X), dtype=float)
        D = np.einsum("...li,ij,...kj->...lk", Bf, E, Bf)
    amax = max(float(np.max(np.abs(fa))) if fa.size else 0.0 for fa in face_A)
    dmax = float(np.max(np.abs(D))) if D.size else 0.0
    bound = np.inf
    if amax > 0:
        bound = min(bound, np.min(h) / (amax * d))
    if dmax > 0:
        bound = min(bound, np.min(h) ** 2 / (2.0 * d * d * dmax))
    if dt is None:
        dt = cfl * bound if np.isfinite(bound) else (s_end - s0)
    elif dt > bound:
        raise CFLError(f"dt={dt:.3g} exceeds the explicit stability bound {bound:.3g}")
    n = max(1, int(np.ceil((s_end - s0) / dt - 1e-12)))
    dt = (s_end - s0) / n
    for _ in range(n):
        fluxes = []
        if Bf is None:
            Q = [E[l, kk] * P for l in range(d) for kk in range(d)]
        elif calculus == "ito":
            DP = D * P[..., None, None]
        elif calculus == "stratonovich":
            BP = Bf * P[..., None, None]  # B_kj P
        else:
            raise ValueError("calculus must be 'ito' or 'stratonovich'")
        for l in range(d):
            Fa = face_A[l]
            left, right = _muscl(P, l)
            adv = np.where(Fa > 0, Fa * left, Fa * right)
            diff = np.zeros_like(adv)
            for kk in range(d):
                if Bf is None:
                    G = Q[l * d + kk]
                    der = _face_diff(G, l, h[l]) if kk == l else _face_mean(_central(G, kk, h[kk]), l)
                elif calculus == "ito":
                    G = DP[..., l, kk]
                    der = _face_diff(G, l, h[l]) if kk == l else _face_mean(_central(G, kk, h[kk]), l)
                else:
                    # B_li eps_ij d_k(B_kj P), summed over i, j at this k
                    inner = np.zeros_like(P)
                    for i in range(d):
                        for j in range(d):
                            if E[i, j] == 0:
                                continue
                            G = BP[..., kk, j]
                            dG = _central(G, kk, h[kk])
                            inner = inner + Bf[..., l, i] * E[i, j] * dG
                    der = _face_mean(inner, l)
                diff = diff + der
            fluxes.append(adv - diff)
        P = P - dt * _divergence(fluxes, h, P.shape)
    return FPGrid(edges, P, float(s_end), n, dt)


def _muscl(P, k):
    """Minmod-limited left/right states at the interior faces along axis ``k``."""
    fwd = np.diff(P, axis=k)
    pad = [(0, 0)] * P.ndim
    pad[k] = (1, 1)
    d = np.pad(fwd, pad)
    lo = [slice(None)] * P.ndim
    hi = [slice(None)] * P.ndim
    lo[k], hi[k] = slice(None, -1), slice(1, None)
    a, b = d[tuple(lo)], d[tuple(hi)]
    slope = np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)
    left = (P + 0.5 * slope)[tuple(lo)]
    right = (P - 0.5 * slope)[tuple(hi)]
    return left, right


def fp_solve_phase(reduction, edges, p0, s_end, eps, dt=None, cfl=0.4):
    """Reduced phase-space Fokker-Planck equation (additive noise)."""
    return fp_solve(reduction.drift, edges, p0, s_end, eps, None, "ito", dt, cfl)


def fp_solve_momentum(reduction, edges, p0, s_end, eps, calculus=None, dt=None, cfl=0.4):
    """Reduced metric-fluctuation Fokker-Planck equation.

    ``calculus`` defaults to the reduction's own (Ito unless requested).
    """
    calculus = reduction.calculus if calculus is None else calculus
    return fp_solve(reduction.drift, edges, p0, s_end, eps, reduction.bmat, calculus, dt, cfl)
