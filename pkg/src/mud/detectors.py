"""Detection on one instance: belief propagation, the exact symbol-MAP
brute-force oracle, and the matched-filter baseline.

Messages are half-log-likelihood ratios: u = (1/2) log(P(+)/P(-)); the
posterior mean of a symbol is tanh of the summed incoming messages. All chip
computations run in the log domain. The chip update is evaluated by an exact
convolution over the discrete interference sum (O(k^2) per message), which
equals the 2^k-term enumeration but stays tractable at large chip degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .ensemble import (
    MC_BLOCK,
    DegreeDistribution,
    SparseSignatureMatrix,
    TransmissionInstance,
    generate_signatures,
    transmit,
)

# Cap for the O(2^k) enumeration cross-check; the convolution path has no such
# blow-up and only carries a sanity cap.
K_ENUM_MAX = 25
MAX_CHIP_DEGREE = 4096

# |message| beyond this is numerically indistinguishable from certainty.
MSG_CLAMP = 30.0


class InvariantViolation(RuntimeError):
    """A hard numerical invariant (finite messages, valid marginals) failed."""


def clamp(v):
    return np.clip(v, -MSG_CLAMP, MSG_CLAMP)


def log_interference_coeffs(a: np.ndarray) -> np.ndarray:
    """log of c(T) = sum over xi in {+/-1}^k with sum(xi) = T of prod exp(a_i xi_i).

    Returns an array of length k+1; entry j corresponds to T = 2j - k.
    Computed by sequential convolution in the log domain.
    """
    a = np.asarray(a, dtype=float)
    k = a.size
    logc = np.zeros(1)
    for i in range(k):
        nxt = np.full(logc.size + 1, -np.inf)
        nxt[1:] = logc + a[i]
        nxt[:-1] = np.logaddexp(nxt[:-1], logc - a[i])
        logc = nxt
    return logc


def log_interference_coeffs_batch(a: np.ndarray) -> np.ndarray:
    """Row-wise version of log_interference_coeffs for a (m, k) array.

    Runs the convolution in the linear domain with per-row rescaling each step,
    which keeps everything vectorized.
    """
    a = np.asarray(a, dtype=float)
    m, k = a.shape
    C = np.zeros((m, k + 1))
    C[:, 0] = 1.0
    logscale = np.zeros(m)
    ea = np.exp(a)
    eia = np.exp(-a)
    width = 1
    for i in range(k):
        nxt = np.zeros((m, width + 1))
        nxt[:, 1:] = C[:, :width] * ea[:, i : i + 1]
        nxt[:, :-1] += C[:, :width] * eia[:, i : i + 1]
        C[:, : width + 1] = nxt
        width += 1
        mx = C[:, :width].max(axis=1)
        C[:, :width] /= mx[:, None]
        logscale += np.log(mx)
    with np.errstate(divide="ignore"):
        return np.log(C) + logscale[:, None]


def chip_message(
    v_list,
    s_list,
    s0: int,
    y: float,
    sigma2: float,
    lbar: float,
    max_degree: int = MAX_CHIP_DEGREE,
) -> float:
    """Outgoing chip message (1/2) log(W+/W-).

    W_{xi0} sums exp{-(y - sum_i s_i xi_i / sqrt(lbar))^2 / 2 sigma2} *
    prod exp(v_i xi_i) over the 2^k interference configurations; the sum is
    collapsed over the integer statistic T = sum s_i xi_i.
    """
    v = np.asarray(v_list, dtype=float)
    s = np.asarray(s_list, dtype=float)
    if v.size != s.size:
        raise ValueError("v_list and s_list lengths differ")
    k = v.size
    if k > max_degree:
        raise ValueError(f"chip degree {k} exceeds cap {max_degree}")
    logc = log_interference_coeffs(v * s)
    T = 2.0 * np.arange(k + 1) - k
    inv = 1.0 / math.sqrt(lbar)
    lw_p = logsumexp(logc - (y - (s0 + T) * inv) ** 2 / (2.0 * sigma2))
    lw_m = logsumexp(logc - (y - (-s0 + T) * inv) ** 2 / (2.0 * sigma2))
    return float(clamp(0.5 * (lw_p - lw_m)))


def chip_messages_batch(
    a: np.ndarray, s0: np.ndarray, y: np.ndarray, sigma2: float, lbar: float
) -> np.ndarray:
    """Batched chip messages for m samples sharing degree k.

    a is the (m, k) array of gauge-fixed weights v_i * s_i; s0 and y are
    per-sample. Returns the m half-LLR outputs, clamped.
    """
    m, k = a.shape
    logc = log_interference_coeffs_batch(a)
    T = 2.0 * np.arange(k + 1) - k
    inv = 1.0 / math.sqrt(lbar)
    arg_p = logc - (y[:, None] - (s0[:, None] + T[None, :]) * inv) ** 2 / (2.0 * sigma2)
    arg_m = logc - (y[:, None] - (-s0[:, None] + T[None, :]) * inv) ** 2 / (2.0 * sigma2)
    return clamp(0.5 * (logsumexp(arg_p, axis=1) - logsumexp(arg_m, axis=1)))


@dataclass(frozen=True)
class MessageSet:
    """BP messages after some number of flooding rounds; keys are graph edges."""

    v: dict  # (user, chip) -> half-LLR
    u: dict  # (chip, user) -> half-LLR
    iteration: int


@dataclass(frozen=True)
class DetectionResult:
    marginals: np.ndarray  # posterior means in [-1, 1]
    decisions: np.ndarray  # +/-1, sign(0) := +1
    method: str
    iteration: int | None = None
    log_z: float | None = None
    log_p_input: float | None = None

    def __post_init__(self):
        if np.any(np.abs(self.marginals) > 1 + 1e-12) or not np.all(
            np.isfinite(self.marginals)
        ):
            raise InvariantViolation("marginals outside [-1, 1] or non-finite")

    def csv_rows(self):
        t = self.iteration if self.iteration is not None else ""
        for i, (m, d) in enumerate(zip(self.marginals, self.decisions)):
            yield (self.method, t, i, float(m), int(d))


def decide(marginals: np.ndarray) -> np.ndarray:
    """Hard decisions with the deterministic tie rule sign(0) := +1."""
    return np.where(marginals < 0, -1, 1)


def bp_detect(
    instance: TransmissionInstance, t_max: int
) -> tuple[DetectionResult, MessageSet]:
    """Flooding-schedule BP from the all-zero initialization.

    Each round updates every v from the previous u, then every u from the new
    v. Marginals are tanh of the full incoming sum at each user.
    """
    results = bp_detect_multi(instance, [t_max])
    return results[t_max]


def bp_detect_multi(
    instance: TransmissionInstance, t_list
) -> dict[int, tuple[DetectionResult, MessageSet]]:
    """Run BP once up to max(t_list) rounds, snapshotting results at each
    requested round (for paired overhead studies)."""
    sig = instance.signatures
    sigma2 = instance.sigma2
    lbar = 1.0 / sig.scale**2
    wanted = sorted(set(int(t) for t in t_list))
    if wanted[0] < 0:
        raise ValueError("t_max must be >= 0")

    v = {
        (i, int(a)): 0.0
        for i in range(sig.n_users)
        for a in sig.user_neighbors[i]
    }
    u = {(a, i): 0.0 for (i, a) in v}

    out: dict[int, tuple[DetectionResult, MessageSet]] = {}

    def snapshot(t):
        marg = np.empty(sig.n_users)
        for i in range(sig.n_users):
            tot = sum(u[(int(a), i)] for a in sig.user_neighbors[i])
            marg[i] = math.tanh(tot)
        if not np.all(np.isfinite(marg)):
            raise InvariantViolation("non-finite BP marginal")
        res = DetectionResult(
            marginals=marg, decisions=decide(marg), method=f"bp", iteration=t
        )
        msgs = MessageSet(v=dict(v), u=dict(u), iteration=t)
        out[t] = (res, msgs)

    if 0 in wanted:
        snapshot(0)
    for t in range(1, wanted[-1] + 1):
        for i in range(sig.n_users):
            nbrs = sig.user_neighbors[i]
            tot = sum(u[(int(a), i)] for a in nbrs)
            for a in nbrs:
                a = int(a)
                v[(i, a)] = clamp(tot - u[(a, i)])
        for a in range(sig.n_chips):
            members = sig.chip_neighbors[a]
            y_a = instance.y[a]
            for idx, (i, s0) in enumerate(members):
                vs = [v[(j, a)] for n, (j, _) in enumerate(members) if n != idx]
                ss = [s for n, (_, s) in enumerate(members) if n != idx]
                u[(a, i)] = chip_message(vs, ss, s0, y_a, sigma2, lbar)
        if t in wanted:
            snapshot(t)
    return out


def log_posterior_batch(
    S: np.ndarray, y: np.ndarray, sigma2: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact posterior over +/-1 inputs for a batch of small dense systems.

    S has shape (B, N, K) (scaled signature values), y shape (B, N). Returns
    (marginals (B, K), log_z (B,), log_p_plus (B,)) where log_p_plus is the
    normalized log-probability of the all-(+1) input.
    """
    B, N, K = S.shape
    if K > 20:
        raise ValueError("exact posterior enumeration requires K <= 20")
    M = 1 << K
    idx = np.arange(M)
    X = ((idx[None, :] >> np.arange(K)[:, None]) & 1) * 2 - 1  # (K, M)
    resid = y[:, :, None] - S @ X  # (B, N, M)
    logpost = -(resid**2).sum(axis=1) / (2.0 * sigma2)  # (B, M)
    log_z = logsumexp(logpost, axis=1)
    wts = np.exp(logpost - log_z[:, None])
    marginals = wts @ X.T  # (B, K)
    log_p_plus = logpost[:, M - 1] - log_z
    return np.clip(marginals, -1.0, 1.0), log_z, log_p_plus


def map_exact(instance: TransmissionInstance) -> DetectionResult:
    """Brute-force symbol-MAP: enumerate all 2^K inputs, return exact posterior
    means and MAP decisions; exposes log Z and log P(x_input | y, S)."""
    sig = instance.signatures
    if sig.n_users > 20:
        raise ValueError("map_exact requires K <= 20")
    S = sig.to_dense()[None, :, :]
    marginals, log_z, _ = log_posterior_batch(S, instance.y[None, :], instance.sigma2)
    # log-probability of the actually transmitted input
    resid = instance.y - (S[0] @ instance.x)
    lp_input = float(-(resid**2).sum() / (2.0 * instance.sigma2) - log_z[0])
    if not np.isfinite(log_z[0]):
        raise InvariantViolation("non-finite log Z")
    m = marginals[0]
    return DetectionResult(
        marginals=m,
        decisions=decide(m),
        method="map_exact",
        log_z=float(log_z[0]),
        log_p_input=lp_input,
    )


def matched_filter(instance: TransmissionInstance) -> DetectionResult:
    """Single-user correlation detector: statistic s_i^T y, decisions by sign.

    The marginal column reports tanh of the raw correlation so the result type
    stays in [-1, 1]; decisions are scale-invariant.
    """
    sig = instance.signatures
    stats = np.zeros(sig.n_users)
    for i, (nbrs, ss) in enumerate(zip(sig.user_neighbors, sig.signs)):
        stats[i] = float(np.dot(ss, instance.y[nbrs]))
    marg = np.tanh(stats)
    return DetectionResult(marginals=marg, decisions=decide(marg), method="matched_filter")


def _bit_errors(result: DetectionResult, degrees: np.ndarray) -> float:
    """Fraction of wrong decisions under all-(+1) input; degree-0 users count
    1/2 (posterior is uniform, information-theoretic guess rate)."""
    err = (result.decisions != 1).astype(float)
    err[degrees == 0] = 0.5
    return float(err.mean())


def ber_monte_carlo(
    method: str,
    n_chips: int,
    n_users: int,
    dist: DegreeDistribution,
    sigma2: float,
    t_max: int,
    trials: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo BER under all-(+1) transmission over fresh (S, w) draws.

    method is one of 'bp', 'map', 'mf'. Returns (ber, standard error).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if method not in ("bp", "map", "mf"):
        raise ValueError(f"unknown detector method {method!r}")
    per_trial = np.empty(trials)
    for trial in range(trials):
        block, offset = divmod(trial, MC_BLOCK)
        rng = np.random.default_rng([int(seed), block, offset])
        sig = generate_signatures(n_chips, n_users, dist, seed=int(rng.integers(2**62)))
        inst = transmit(sig, sigma2, noise=rng.normal(0, math.sqrt(sigma2), n_chips))
        if method == "bp":
            res, _ = bp_detect(inst, t_max)
        elif method == "map":
            res = map_exact(inst)
        else:
            res = matched_filter(inst)
        per_trial[trial] = _bit_errors(res, sig.user_degrees)
    ber = float(per_trial.mean())
    se = float(per_trial.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
    return ber, se
