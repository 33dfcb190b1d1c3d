"""Analytic dense-signature limit: Gaussian-expectation quadrature, the
replica-symmetric free entropy and its stationary points, the effective-SNR
recursion, the spinodal load, asymptotic GEXIT curves, dense-limit BER and the
entropy sandwich bounds.

All entropies are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.special import erfc

FIXED_POINT_TOL = 1e-12
FIXED_POINT_TMAX = 10_000

# Composite Gauss-Legendre rule against the standard normal density on
# [-14, 14] (56 panels x 10 nodes). Plain Gauss-Hermite converges too slowly
# here: the tanh-family integrands have poles at distance pi/(2 sqrt(lam))
# from the real axis, and this rule holds ~1e-14 absolute error across the
# whole lam range of interest.
_EZ_PANELS = 56
_EZ_DEGREE = 10
_EZ_ZMAX = 14.0


@lru_cache(maxsize=2)
def _gh_nodes(_key: int = 0) -> tuple[np.ndarray, np.ndarray]:
    xg, wg = np.polynomial.legendre.leggauss(_EZ_DEGREE)
    edges = np.linspace(-_EZ_ZMAX, _EZ_ZMAX, _EZ_PANELS + 1)
    z = np.concatenate(
        [0.5 * (b - a) * xg + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])]
    )
    w = np.concatenate([0.5 * (b - a) * wg for a, b in zip(edges[:-1], edges[1:])])
    w = w * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z, w


def gauss_expect(f, lam: float) -> float:
    """E_z f(lam + sqrt(lam) z) for standard normal z."""
    z, w = _gh_nodes()
    vals = f(lam + math.sqrt(lam) * z)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand produced non-finite values")
    return float(np.dot(w, vals))


def log2cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax))


def q_of_lambda(lam) -> np.ndarray | float:
    """E_z tanh^2(lam + sqrt(lam) z), vectorized over lam >= 0."""
    lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
    z, w = _gh_nodes()
    arg = lam_arr[:, None] + np.sqrt(lam_arr)[:, None] * z[None, :]
    out = np.tanh(arg) ** 2 @ w
    return float(out[0]) if np.isscalar(lam) or np.ndim(lam) == 0 else out


def effective_snr(q: float, sigma2: float, alpha: float) -> float:
    """lambda(q) = 1 / (sigma^2 + alpha (1 - q))."""
    return 1.0 / (sigma2 + alpha * (1.0 - q))


@dataclass(frozen=True)
class RsState:
    """Candidate replica-symmetric solution at overlap q."""

    q: float
    lam: float
    h: float  # free entropy value in nats
    residual: float  # |q - E_z tanh^2(lam + sqrt(lam) z)|
    sigma2: float
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if abs(self.lam - effective_snr(self.q, self.sigma2, self.alpha)) > 1e-12 * max(
            1.0, self.lam
        ):
            raise ValueError("lam inconsistent with q")
        if not math.isfinite(self.h):
            raise ValueError("free entropy not finite")


def h_rs(q: float, sigma2: float, alpha: float) -> RsState:
    """Replica-symmetric per-user conditional entropy at overlap q (nats)."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if sigma2 <= 0 or alpha <= 0:
        raise ValueError("sigma2 and alpha must be > 0")
    lam = effective_snr(q, sigma2, alpha)
    log_arg = 1.0 + alpha * (1.0 - q) / sigma2
    assert log_arg > 0
    h = (
        gauss_expect(log2cosh, lam)
        - 0.5 * lam * (1.0 + q)
        - math.log(log_arg) / (2.0 * alpha)
    )
    residual = abs(q - q_of_lambda(lam))
    return RsState(q=q, lam=lam, h=h, residual=residual, sigma2=sigma2, alpha=alpha)


@dataclass(frozen=True)
class LambdaTrajectory:
    values: np.ndarray  # lambda_0 .. lambda_T
    qs: np.ndarray  # q_t = E_z tanh^2(lambda_t + sqrt(lambda_t) z)
    converged: bool
    limit: float

    def __post_init__(self):
        if self.values[0] != 0.0:
            raise ValueError("trajectory must start at lambda_0 = 0")


def lambda_recursion(
    sigma2: float,
    alpha: float,
    t_max: int = FIXED_POINT_TMAX,
    tol: float = FIXED_POINT_TOL,
) -> LambdaTrajectory:
    """Iterate lambda_{t+1} = 1/(sigma^2 + alpha (1 - q(lambda_t))) from 0.

    The trajectory is strictly increasing for t >= 1 and bounded by 1/sigma^2;
    its limit is the smallest positive stationary point.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    lams = [0.0]
    qs = [0.0]
    converged = False
    for _ in range(t_max):
        q = float(q_of_lambda(lams[-1]))
        qs[-1] = q
        nxt = effective_snr(q, sigma2, alpha)
        lams.append(nxt)
        qs.append(float(q_of_lambda(nxt)))
        if abs(lams[-1] - lams[-2]) < tol:
            converged = True
            break
    return LambdaTrajectory(
        values=np.array(lams), qs=np.array(qs), converged=converged, limit=lams[-1]
    )


def _stationarity_gap(q_grid: np.ndarray, sigma2: float, alpha: float) -> np.ndarray:
    """F(q) = q - E_z tanh^2(lambda(q) + sqrt(lambda(q)) z), vectorized."""
    lam = 1.0 / (sigma2 + alpha * (1.0 - q_grid))
    z, w = _gh_nodes()
    arg = lam[:, None] + np.sqrt(lam)[:, None] * z[None, :]
    return q_grid - np.tanh(arg) ** 2 @ w


def solve_stationary_all(
    sigma2: float, alpha: float, grid_size: int = 10_001, root_tol: float = 1e-10
) -> list[RsState]:
    """All solutions of the stationarity condition in q, by sign-change scan
    plus bisection refinement, sorted by q."""
    if sigma2 <= 0 or alpha <= 0:
        raise ValueError("sigma2 and alpha must be > 0")
    qs = np.linspace(0.0, 1.0, grid_size)
    F = _stationarity_gap(qs, sigma2, alpha)

    def f_scalar(q):
        return float(_stationarity_gap(np.array([q]), sigma2, alpha)[0])

    roots = []
    sign_change = np.flatnonzero(np.sign(F[:-1]) * np.sign(F[1:]) < 0)
    for j in sign_change:
        roots.append(brentq(f_scalar, qs[j], qs[j + 1], xtol=root_tol))
    for j in np.flatnonzero(F == 0.0):
        roots.append(float(qs[j]))
    roots = sorted(roots)
    dedup = []
    for r in roots:
        if not dedup or r - dedup[-1] > 1e-8:
            dedup.append(r)
    return [h_rs(r, sigma2, alpha) for r in dedup]


def count_stationary(sigma2: float, alpha: float, grid_size: int = 2001) -> int:
    """Number of sign changes of the stationarity gap on a q grid (fast path
    for the spinodal predicate)."""
    qs = np.linspace(0.0, 1.0, grid_size)
    F = _stationarity_gap(qs, sigma2, alpha)
    return int(np.sum(np.sign(F[:-1]) * np.sign(F[1:]) < 0))


# Noise grid used by the uniqueness predicate. The multi-solution window lives
# at moderate noise; very small and very large sigma^2 are always unique.
_SPINODAL_SIGMA2_GRID = np.concatenate(
    [
        np.linspace(0.01, 1.0, 400),
        np.linspace(1.0, 4.0, 60),
    ]
)


def unique_solution_everywhere(alpha: float, grid_size: int = 2001) -> bool:
    for s2 in _SPINODAL_SIGMA2_GRID:
        if count_stationary(float(s2), alpha, grid_size) > 1:
            return False
    return True


def spinodal_alpha(tol: float = 2e-3) -> float:
    """Largest load below which the stationarity condition has a unique
    solution for every noise level, by bisection on the uniqueness predicate."""
    if tol <= 0:
        raise ValueError("tol must be > 0")
    lo, hi = 1.2, 1.9
    if not unique_solution_everywhere(lo) or unique_solution_everywhere(hi):
        raise RuntimeError("spinodal bracket assumption violated")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if unique_solution_everywhere(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def gexit_dense(q: float, sigma2: float, alpha: float) -> float:
    """Dense-limit BP GEXIT value (1/2 sigma^2) (1-q)/(sigma^2 + alpha(1-q))."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if q == 1.0:  # perfect overlap: avoids 0/0 when sigma2^2 also underflows
        return 0.0
    return (1.0 - q) / (2.0 * sigma2 * (sigma2 + alpha * (1.0 - q)))


def ber_dense(lam: float) -> float:
    """Dense-limit BER Q(sqrt(lam)): a message ~ N(lam, lam) is negative with
    this probability; lam = 0 gives the guessing rate 1/2."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    return 0.5 * erfc(math.sqrt(lam / 2.0))


def _q_after_t(sigma2: float, alpha: float, t: int) -> float:
    """q_t after exactly t recursion steps (no early convergence exit)."""
    lam = 0.0
    q = 0.0
    for _ in range(t):
        q = float(q_of_lambda(lam))
        lam = effective_snr(q, sigma2, alpha)
    return float(q_of_lambda(lam))


def entropy_sandwich(
    sigma2: float, alpha: float, t: int, epsabs: float = 1e-8
) -> tuple[float, float]:
    """Entropy bounds from integrating the iteration-t dense GEXIT curve.

    lower = log 2 - int_{sigma^2}^inf g_t,  upper = int_0^{sigma^2} g_t,
    both in nats per user. The improper upper integral runs in log-noise
    coordinates (at finite t the integrand behaves like const/u near u = 0,
    which the substitution u = e^s flattens); the tail integral uses quad's
    infinite-limit transformation (the integrand decays like sigma'^-4).
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    cache: dict[float, float] = {}

    def g_t(u: float) -> float:
        if u not in cache:
            q = _q_after_t(u, alpha, t)
            cache[u] = gexit_dense(q, u, alpha)
        return cache[u]

    def upper_integrand(s: float) -> float:
        u = math.exp(s)
        if u < 1e-300:
            return 0.0
        return g_t(u) * u

    # If t iterations are not enough for q_t to saturate as the noise vanishes,
    # g_t behaves like 1/(2 alpha u) near u = 0 and the upper integral is
    # genuinely infinite (the bound holds but is vacuous).
    if g_t(1e-250) * 1e-250 > 1e-12:
        upper, err_up = math.inf, 0.0
    else:
        upper, err_up = integrate.quad(
            upper_integrand,
            -np.inf,
            math.log(sigma2),
            epsabs=epsabs,
            epsrel=1e-10,
            limit=400,
        )
    tail, err_lo = integrate.quad(g_t, sigma2, np.inf, epsabs=epsabs, limit=400)
    if max(err_up, err_lo) > 1e-6:
        raise RuntimeError("entropy sandwich integration failed to reach 1e-6")
    lower = math.log(2.0) - tail
    return lower, upper
