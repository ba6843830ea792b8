"""Post-processing: KL tube deviation, chaos slope, reaction channels,
transition probabilities and the zero-acceleration / level-surface explorer.
"""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.stats import linregress, norm

from .errors import EmptyLevelSetError
from .geodesic import acceleration, drift_matrix
from .kinematics import HypersphericalState, hyperspherical_to_jacobi, jacobi_to_lab
from .manifold import conformal_factor, lambda_sq

__all__ = ["KLReport", "kl_deviation", "gaussian_kl", "ChaosFit", "chaos_slope", "CHANNELS",
           "ChannelThresholds", "ChannelLabel", "classify_channel", "channel_fractions",
           "internal_lab_state",
           "TransitionEstimate", "transition_probability", "wilson_interval",
           "zero_accel_residual", "ZeroAccelResult", "zero_accel_solve", "local_dimension",
           "LevelSurface", "level_surface_sample"]


# ----------------------------------------------------------------------------
# KL tube deviation
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class KLReport:
    """``d(s_a, s_b)`` with the bin geometry and a delta-method variance."""

    s_a: float
    s_b: float
    d: float
    shape: tuple
    variance: float
    alpha: float
    weighted: bool

    def to_dict(self):
        return {"s_a": self.s_a, "s_b": self.s_b, "d": self.d, "shape": list(self.shape),
                "variance": self.variance, "alpha": self.alpha, "weighted": self.weighted}


def _probabilities(P, alpha):
    """``(probabilities, sample size or None, edges or None, s)`` for any supported input."""
    if hasattr(P, "counts"):
        c = np.asarray(P.counts, dtype=float)
        n = c.sum()
        return (c + alpha) / (n + alpha * c.size), n, P.edges, getattr(P, "s", 0.0)
    if hasattr(P, "probabilities") and callable(P.probabilities):
        p = np.asarray(P.probabilities(), dtype=float)
        return p / p.sum(), None, P.edges, getattr(P, "s", 0.0)
    p = np.asarray(P, dtype=float)
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    return p / p.sum(), None, None, 0.0


def kl_deviation(P_a, P_b, sqrt_g=None, alpha=1.0, floor=1e-300):
    """Discretised tube deviation ``sum_k p_a ln|p_a / p_b| sqrt(g)_k``.

    Parameters
    ----------
    P_a, P_b : EnsembleDensity, FPGrid or array of bin probabilities
        Histogram inputs are Laplace-smoothed with ``alpha`` pseudo-counts;
        grid inputs get an additive ``floor`` (relative to their maximum).
    sqrt_g : array_like or callable, optional
        Bin weights ``sqrt(g)``; a callable is evaluated on the bin centres.

    Raises
    ------
    ValueError
        If the bin geometries differ, or ``P_b`` vanishes where ``P_a`` does not.
    """
    pa, na, ea, sa = _probabilities(P_a, alpha)
    pb, nb, eb, sb = _probabilities(P_b, alpha)
    if pa.shape != pb.shape:
        raise ValueError("densities must share the bin geometry")
    if ea is not None and eb is not None:
        if len(ea) != len(eb) or any(not np.array_equal(x, y) for x, y in zip(ea, eb)):
            raise ValueError("densities must share the bin geometry")
    if na is None:
        pa = pa + floor * pa.max()
        pa /= pa.sum()
    if nb is None:
        pb = pb + floor * pb.max()
        pb /= pb.sum()
    if np.any((pb <= 0) & (pa > 0)):
        raise ValueError("supports are disjoint after smoothing")
    if sqrt_g is None:
        w = np.ones_like(pa)
    elif callable(sqrt_g):
        edges = ea if ea is not None else eb
        if edges is None:
            raise ValueError("a callable weight needs bin edges")
        centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
        mesh = np.stack(np.meshgrid(*centers, indexing="ij"), axis=-1)
        w = np.asarray(sqrt_g(mesh), dtype=float).reshape(pa.shape)
    else:
        w = np.broadcast_to(np.asarray(sqrt_g, dtype=float), pa.shape)
    lr = np.log(np.abs(pa / pb))
    d = float(np.sum(pa * lr * w))
    var = 0.0
    if na:
        t = w * lr
        var += (np.sum(pa * t ** 2) - np.sum(pa * t) ** 2) / na
    if nb:
        u = w * pa / pb
        var += (np.sum(pb * u ** 2) - np.sum(pb * u) ** 2) / nb
    return KLReport(float(sa), float(sb), d, tuple(pa.shape), float(var), float(alpha),
                    sqrt_g is not None)


def gaussian_kl(mean_a, cov_a, mean_b, cov_b):
    """Closed-form ``KL(N_a || N_b)``."""
    ma, mb = np.atleast_1d(mean_a).astype(float), np.atleast_1d(mean_b).astype(float)
    Ca, Cb = np.atleast_2d(cov_a).astype(float), np.atleast_2d(cov_b).astype(float)
    k = ma.size
    Cbi = np.linalg.inv(Cb)
    dm = mb - ma
    _, lda = np.linalg.slogdet(Ca)
    _, ldb = np.linalg.slogdet(Cb)
    return 0.5 * float(np.trace(Cbi @ Ca) + dm @ Cbi @ dm - k + ldb - lda)


# ----------------------------------------------------------------------------
# chaos slope
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ChaosFit:
    k: float
    intercept: float
    r_squared: float
    chaotic: bool
    n: int

    def to_dict(self):
        return {"k": self.k, "intercept": self.intercept, "r_squared": self.r_squared,
                "chaotic": self.chaotic, "n": self.n}


def chaos_slope(separations, d, r2_threshold=0.9):
    """Least-squares fit ``d ~ k |s_a - s_b| + c``.

    The chaotic flag needs ``k > 0`` and ``R^2 >= r2_threshold``.

    Raises
    ------
    ValueError
        With fewer than 5 separations.
    """
    x = np.abs(np.asarray(separations, dtype=float))
    y = np.asarray(d, dtype=float)
    if x.size < 5 or x.size != y.size:
        raise ValueError("need at least 5 (separation, d) pairs")
    if np.ptp(y) == 0:
        return ChaosFit(0.0, float(y[0]), 0.0, False, int(x.size))
    fit = linregress(x, y)
    r2 = float(fit.rvalue ** 2)
    k = float(fit.slope)
    return ChaosFit(k, float(fit.intercept), r2, bool(k > 0 and r2 >= r2_threshold), int(x.size))


# ----------------------------------------------------------------------------
# reaction channels
# ----------------------------------------------------------------------------

CHANNELS = ("1+(23)", "(12)+3", "(13)+2", "1+2+3", "bound(123)", "undecided")
_PAIR_LABEL = {(1, 2): "1+(23)", (0, 1): "(12)+3", (0, 2): "(13)+2"}
_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class ChannelThresholds:
    """Decision thresholds; ``None`` picks the defaults from ``E`` and ``R0``."""

    eps_E: float = None
    R_cut: float = None
    R_far: float = None

    def resolve(self, E, R0):
        return (1e-6 * abs(E) if self.eps_E is None else self.eps_E,
                10.0 * R0 if self.R_cut is None else self.R_cut,
                50.0 * R0 if self.R_far is None else self.R_far)


@dataclass(frozen=True)
class ChannelLabel:
    label: str
    pair_energies: tuple
    separations: tuple
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {"label": self.label, "pair_energies": list(self.pair_energies),
                "separations": list(self.separations), **self.diagnostics}


def _pair_energy(x, v, masses, potential, i, j):
    mi, mj = masses[i], masses[j]
    mu = mi * mj / (mi + mj)
    d = np.linalg.norm(x[i] - x[j])
    pair = potential.pairs[_PAIRS.index((i, j))]
    return 0.5 * mu * float(np.sum((v[i] - v[j]) ** 2)) + float(pair.value(d)), d


def classify_channel(window, masses, potential, E, R0=1.0, thresholds=None):
    """Label a path from its terminal window of lab states.

    Parameters
    ----------
    window : sequence of (positions (3, 3), velocities (3, 3))
        Late-time samples, oldest first; the last one decides the bound pairs,
        the whole window is the dwell / re-check interval.
    masses : sequence of 3 floats
    potential : PotentialSpec
        Pair order (12), (13), (23).
    """
    eps_E, R_cut, R_far = (thresholds or ChannelThresholds()).resolve(E, R0)
    m = np.asarray(masses, dtype=float)
    x, v = (np.asarray(a, dtype=float) for a in window[-1])
    pe, sep = [], []
    for i, j in _PAIRS:
        e, d = _pair_energy(x, v, m, potential, i, j)
        pe.append(e)
        sep.append(d)
    bound = [p for p, e, d in zip(_PAIRS, pe, sep) if e < -eps_E and d < R_cut]

    def receding(k, pair):
        """Third body ``k`` outside ``R_far`` and moving away from ``pair`` over the window."""
        for xs, vs in window:
            xs, vs = np.asarray(xs), np.asarray(vs)
            mp = m[list(pair)]
            c = (mp[0] * xs[pair[0]] + mp[1] * xs[pair[1]]) / mp.sum()
            vc = (mp[0] * vs[pair[0]] + mp[1] * vs[pair[1]]) / mp.sum()
            rel = xs[k] - c
            if np.linalg.norm(rel) <= R_far or rel @ (vs[k] - vc) <= 0:
                return False
        return True

    diag = {"eps_E": eps_E, "R_cut": R_cut, "R_far": R_far}
    label = "undecided"
    if len(bound) == 1:
        i, j = bound[0]
        k = 3 - i - j
        if receding(k, (i, j)):
            label = _PAIR_LABEL[(i, j)]
    elif not bound and all(e >= 0 for e in pe):
        def pair_receding(i, j):
            for xs, vs in window:
                dx = np.asarray(xs[i]) - np.asarray(xs[j])
                if np.linalg.norm(dx) <= R_far or dx @ (np.asarray(vs[i]) - np.asarray(vs[j])) <= 0:
                    return False
            return True
        if all(pair_receding(i, j) for i, j in _PAIRS):
            label = "1+2+3"
    if label == "undecided":
        seps = [max(np.linalg.norm(np.asarray(xs[i]) - np.asarray(xs[j])) for i, j in _PAIRS)
                for xs, _ in window]
        diag["max_separation"] = float(max(seps))
        if E < min(pe) and max(seps) < R_cut:
            label = "bound(123)"
    return ChannelLabel(label, tuple(map(float, pe)), tuple(map(float, sep)), diag)


def internal_lab_state(rho, rho_rate, system, orientation=(0.0, 0.0, 0.0)):
    """Lab ``(positions, velocities)`` of an internal point and its time rates.

    Parameters
    ----------
    rho : array_like (3,)
        Internal hyperspherical point.
    rho_rate : array_like (3,)
        ``d rho / dt``; the orientation is held fixed (no rotation rates).
    orientation : (Theta, Phi, Psi)
        Euler angles of the body frame. Channel labels do not depend on it.
    """
    R0 = system.R0
    full = np.concatenate([np.asarray(rho, dtype=float), R0 * np.asarray(orientation, dtype=float)])
    rates = np.concatenate([np.asarray(rho_rate, dtype=float), np.zeros(3)])
    j = hyperspherical_to_jacobi(HypersphericalState(full, R0), system.masses, rates)
    lab = jacobi_to_lab(j, system.masses)
    return lab.positions, lab.momenta / system.masses.masses[:, None]


def channel_fractions(labels):
    """Exact fractions of every channel (including ``undecided``); they sum to 1."""
    n = len(labels)
    if n == 0:
        raise ValueError("no labels")
    names = [getattr(l, "label", l) for l in labels]
    return {c: Fraction(names.count(c), n) for c in CHANNELS}


# ----------------------------------------------------------------------------
# transition probabilities
# ----------------------------------------------------------------------------

def wilson_interval(k, n, z=1.959963984540054):
    """Wilson score interval for ``k`` successes out of ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    p = k / n
    den = 1.0 + z * z / n
    c = (p + z * z / (2 * n)) / den
    hw = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, c - hw), min(1.0, c + hw)


@dataclass(frozen=True)
class TransitionEstimate:
    """Fraction of paths ending in ``final`` with its Wilson interval and running mean."""

    final: str
    p: float
    ci: tuple
    n: int
    running: np.ndarray = field(repr=False)

    @property
    def ci_width(self):
        return self.ci[1] - self.ci[0]

    def to_dict(self):
        return {"final": self.final, "p": self.p, "ci": list(self.ci), "n": self.n,
                "ci_width": self.ci_width}


def transition_probability(labels, final, entrance=None, entrances=None, confidence=0.95):
    """Estimate ``P_if`` as the fraction of paths labelled ``final``.

    ``entrances`` (per-path entrance channel) with ``entrance`` restricts the
    ensemble to paths started in that channel. ``running`` is the mean over
    the first n Cauchy solutions, the finite-N version of the total
    probability estimator.
    """
    names = np.array([getattr(l, "label", l) for l in labels], dtype=object)
    if entrance is not None:
        if entrances is None:
            raise ValueError("entrance filtering needs per-path entrance labels")
        names = names[np.asarray(entrances, dtype=object) == entrance]
    n = len(names)
    if n < 1:
        raise ValueError("need at least one labelled path")
    hits = names == final
    k = int(hits.sum())
    z = float(norm.ppf(0.5 + confidence / 2))
    running = np.cumsum(hits) / np.arange(1, n + 1)
    return TransitionEstimate(final, k / n, wilson_interval(k, n, z), n, running)


# ----------------------------------------------------------------------------
# zero acceleration
# ----------------------------------------------------------------------------

def zero_accel_residual(z, g, lam2, level):
    """Residuals of ``A(xi, a) = 0`` (three) and ``g/2 (|xi|^2 + Lambda^2) = level``."""
    xi, a = z[:3], z[3:]
    return np.concatenate([acceleration(a, xi, lam2), [0.5 * g * (xi @ xi + lam2) - level]])


def _zero_accel_jacobian(z, g, lam2):
    xi, a = z[:3], z[3:]
    J = np.zeros((4, 6))
    # dA/dxi = 2 xi a^T + 2 (a.xi) I - 2 a xi^T ; dA/da = B(xi)
    J[:3, :3] = 2.0 * np.outer(xi, a) + 2.0 * float(a @ xi) * np.eye(3) - 2.0 * np.outer(a, xi)
    J[:3, 3:] = drift_matrix(xi, lam2)
    J[3, :3] = g * xi
    return J


def local_dimension(z, g, lam2, tol=1e-8):
    """``6 - rank`` of the constraint Jacobian at a solution (local solution-set dimension)."""
    s = np.linalg.svd(_zero_accel_jacobian(z, g, lam2), compute_uv=False)
    return 6 - int(np.sum(s > tol * max(1.0, s[0])))


@dataclass
class ZeroAccelResult:
    solutions: np.ndarray
    residuals: np.ndarray
    dimensions: np.ndarray
    g: float
    lam2: float
    level: float
    attempts: int

    @property
    def found(self):
        return len(self.solutions) > 0

    def to_dict(self):
        return {"n_solutions": int(len(self.solutions)), "g": self.g, "lam2": self.lam2,
                "level": self.level, "max_residual": float(np.max(self.residuals)) if self.found else None,
                "dimensions": sorted(set(int(d) for d in self.dimensions))}


def _fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    th = np.pi * (1 + 5 ** 0.5) * k
    return np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])


def zero_accel_solve(rho=None, system=None, g=None, lam2=None, level=None, n_seeds=64,
                     a_scale=1.0, seed=0, tol=1e-12, max_iter=60):
    """Solutions ``(xi, a)`` of the zero-acceleration system on the energy shell.

    Either a point ``rho`` with its ``system`` or explicit ``(g, lam2, level)``
    is given. Seeds combine Fibonacci-sphere velocity directions on the shell
    with random ``a`` of size ``a_scale`` (the local ``|a|`` when a point is
    given); each is refined by minimum-norm Gauss-Newton. Solutions with
    residual above ``1e-8`` are discarded; the rest carry the local dimension
    of the solution set.
    """
    if rho is not None:
        g = conformal_factor(rho, system)
        lam2 = lambda_sq(g, system.J)
        level = system.level
        from .manifold import log_gradient
        a_scale = float(np.sqrt(g) * np.linalg.norm(log_gradient(rho, system))) or 1.0
    if g is None or lam2 is None or level is None:
        raise ValueError("need a point and system, or g, lam2 and level")
    speed2 = 2.0 * level / g - lam2
    if speed2 < 0:
        return ZeroAccelResult(np.empty((0, 6)), np.empty(0), np.empty(0, int), g, lam2, level, 0)
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0x2E0]))
    dirs = _fibonacci_sphere(n_seeds)
    sols, res = [], []
    for d in dirs:
        z = np.concatenate([np.sqrt(speed2) * d, a_scale * rng.standard_normal(3)])
        for _ in range(max_iter):
            F = zero_accel_residual(z, g, lam2, level)
            if np.max(np.abs(F)) <= tol:
                break
            z = z - np.linalg.lstsq(_zero_accel_jacobian(z, g, lam2), F, rcond=None)[0]
        r = float(np.max(np.abs(zero_accel_residual(z, g, lam2, level))))
        if r <= 1e-8:
            sols.append(z)
            res.append(r)
    sols = np.array(sols).reshape(-1, 6)
    dims = np.array([local_dimension(z, g, lam2) for z in sols], dtype=int)
    return ZeroAccelResult(sols, np.array(res), dims, float(g), float(lam2), float(level), n_seeds)


# ----------------------------------------------------------------------------
# level surfaces of the conformal factor
# ----------------------------------------------------------------------------

@dataclass
class LevelSurface:
    h: float
    points: np.ndarray
    residuals: np.ndarray
    components: np.ndarray
    n_components: int
    whole_box: bool = False
    ray_hits: list = field(default_factory=list, repr=False)

    def rows(self):
        return np.column_stack([self.points, self.residuals, self.components])


def _gbreve(system):
    def f(rho):
        return (system.energy - float(system.potential_at(rho))) / system.U0
    return f


def level_surface_sample(h, system, box, n_rays=200, n_steps=200, center=None, link=None,
                         tol=1e-8):
    """Points with ``g(rho) = h`` found by bisection along rays from ``center``.

    Parameters
    ----------
    box : ((lo1, hi1), (lo2, hi2), (lo3, hi3))
        Internal hyperspherical box ``(rho1, rho2, rho3)``.
    link : float, optional
        Linking distance for connectivity (relative to the box diagonal);
        default ``2.5 / sqrt(n_rays)``.

    Raises
    ------
    ValueError
        For ``h <= 0``.
    EmptyLevelSetError
        When no ray crosses the level.
    """
    if not h > 0:
        raise ValueError("level value must be positive")
    box = np.asarray(box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    center = 0.5 * (lo + hi) if center is None else np.asarray(center, dtype=float)
    f = _gbreve(system)
    probe = np.array([f(p) for p in lo + (hi - lo) * _fibonacci_sphere(27) * 0.5 + 0.5 * (hi - lo)])
    if np.ptp(probe) == 0 and np.all(np.isfinite(probe)):
        if abs(probe[0] - h) <= tol:
            axes = [np.linspace(a, b, 6) for a, b in zip(lo, hi)]
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
            return LevelSurface(h, pts, np.zeros(len(pts)), np.zeros(len(pts), int), 1, True)
        raise EmptyLevelSetError(f"constant field {probe[0]:.6g} never reaches h={h:.6g}")
    pts, resid, hits = [], [], []
    for k, d in enumerate(_fibonacci_sphere(n_rays)):
        # longest t keeping center + t d inside the box
        with np.errstate(divide="ignore", invalid="ignore"):
            tmax = np.min(np.where(d > 0, (hi - center) / d, np.where(d < 0, (lo - center) / d, np.inf)))
        ts = np.linspace(0.0, tmax, n_steps + 1)
        vals = np.array([f(center + t * d) - h for t in ts])
        ok = np.isfinite(vals)
        ray = []
        for j in range(n_steps):
            if not (ok[j] and ok[j + 1]) or vals[j] * vals[j + 1] > 0 or vals[j] == vals[j + 1]:
                continue
            t = brentq(lambda u: f(center + u * d) - h, ts[j], ts[j + 1], xtol=1e-15, rtol=1e-15,
                       maxiter=200)
            p = center + t * d
            r = abs(f(p) - h)
            if r <= tol and (not ray or t > ray[-1] + 1e-12):
                pts.append(p)
                resid.append(r)
                ray.append(t)
        hits.append(ray)
    if not pts:
        raise EmptyLevelSetError(f"no point with g = {h:.6g} in the box")
    P = np.array(pts)
    scale = hi - lo
    link = 2.5 / np.sqrt(n_rays) if link is None else link
    tree = cKDTree(P / scale)
    pairs = tree.query_pairs(link * np.sqrt(3), output_type="ndarray")
    from scipy.sparse import coo_matrix
    A = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(P), len(P))) \
        if len(pairs) else coo_matrix((len(P), len(P)))
    nc, comp = connected_components(A, directed=False)
    return LevelSurface(h, P, np.array(resid), comp, int(nc), False, hits)
