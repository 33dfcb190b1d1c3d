"""Sparse signature ensembles: degree laws, random matrices, AWGN transmission.

Users spread unit power over a finite number of chips: user i picks a degree l
from the node law, a uniform size-l chip subset, and i.i.d. +/-1 signs; the
whole signature is scaled by 1/sqrt(lbar) so that the ensemble-average power
per user is 1.

Reproducibility: every Monte Carlo entry point takes an integer seed and
derives independent substreams as ``np.random.default_rng([seed, stream])``.
Trials are grouped in fixed-size blocks (one substream per block), so results
do not depend on how blocks are distributed over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

PROB_TOL = 1e-12

# Trials per RNG substream in blocked Monte Carlo loops.
MC_BLOCK = 4096


@dataclass(frozen=True)
class DegreeDistribution:
    """Node-perspective degree law with the derived edge-perspective law.

    probs[l] is the probability that a user has degree l; edge_probs[l] is the
    probability that a uniformly random edge is attached to a degree-l user,
    i.e. l * probs[l] / mean.
    """

    probs: dict[int, float]
    mean: float
    edge_probs: dict[int, float]

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"degree probabilities sum to {total!r}, not 1")
        edge_total = sum(self.edge_probs.values())
        if abs(edge_total - 1.0) > PROB_TOL:
            raise ValueError("edge-perspective probabilities do not sum to 1")
        if self.edge_probs.get(0, 0.0) != 0.0:
            raise ValueError("edge-perspective weight on degree 0 must vanish")

    @classmethod
    def from_probs(cls, probs: dict[int, float]) -> "DegreeDistribution":
        clean: dict[int, float] = {}
        for l, p in probs.items():
            l = int(l)
            p = float(p)
            if l < 0:
                raise ValueError(f"negative degree {l}")
            if p < 0:
                raise ValueError(f"negative probability for degree {l}")
            if p > 0:
                clean[l] = p
        total = sum(clean.values())
        if total <= 0:
            raise ValueError("degree map has no mass")
        clean = {l: p / total for l, p in sorted(clean.items())}
        mean = sum(l * p for l, p in clean.items())
        if mean <= 0:
            raise ValueError("degree distribution has zero mean")
        edge = {l: l * p / mean for l, p in clean.items() if l > 0}
        return cls(probs=clean, mean=mean, edge_probs=edge)

    @classmethod
    def regular(cls, l: int) -> "DegreeDistribution":
        if l < 1:
            raise ValueError("regular degree must be >= 1")
        return cls.from_probs({int(l): 1.0})

    @classmethod
    def poisson(cls, lbar: float, tail_mass: float = 1e-12) -> "DegreeDistribution":
        """Poisson(lbar) truncated at the smallest L with tail mass < tail_mass,
        then renormalized. Keeps the support bounded while matching the Poisson
        moments to high accuracy."""
        if lbar <= 0:
            raise ValueError("poisson mean must be > 0")
        max_l = int(stats.poisson.isf(tail_mass, lbar)) + 1
        ls = np.arange(max_l + 1)
        pmf = stats.poisson.pmf(ls, lbar)
        return cls.from_probs({int(l): float(p) for l, p in zip(ls, pmf)})

    @property
    def max_degree(self) -> int:
        return max(self.probs)

    def _arrays(self, edge: bool) -> tuple[np.ndarray, np.ndarray]:
        src = self.edge_probs if edge else self.probs
        ls = np.array(sorted(src), dtype=np.int64)
        ps = np.array([src[int(l)] for l in ls])
        return ls, ps / ps.sum()

    def sample_nodes(self, rng: np.random.Generator, size) -> np.ndarray:
        ls, ps = self._arrays(edge=False)
        return rng.choice(ls, size=size, p=ps)

    def sample_edges(self, rng: np.random.Generator, size) -> np.ndarray:
        ls, ps = self._arrays(edge=True)
        return rng.choice(ls, size=size, p=ps)


def make_degree_distribution(kind: str, *args) -> DegreeDistribution:
    """Factory: make_degree_distribution('regular', 4) / ('poisson', 3.5) /
    ('explicit', {2: 0.5, 4: 0.5})."""
    if kind == "regular":
        return DegreeDistribution.regular(*args)
    if kind == "poisson":
        return DegreeDistribution.poisson(*args)
    if kind == "explicit":
        return DegreeDistribution.from_probs(*args)
    raise ValueError(f"unknown degree distribution kind {kind!r}")


@dataclass(frozen=True)
class SparseSignatureMatrix:
    """Random sparse signature instance, adjacency-list form (both orientations).

    user_neighbors[i] holds the chips of user i (0-based, sorted), signs[i]
    the matching +/-1 entries. The actual signature value on an edge is
    sign * scale with scale = 1/sqrt(lbar).
    """

    n_chips: int
    n_users: int
    user_neighbors: tuple[np.ndarray, ...]
    signs: tuple[np.ndarray, ...]
    scale: float
    chip_neighbors: tuple[list[tuple[int, int]], ...] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.user_neighbors) != self.n_users or len(self.signs) != self.n_users:
            raise ValueError("adjacency lists do not match n_users")
        chips: list[list[tuple[int, int]]] = [[] for _ in range(self.n_chips)]
        for i, (nbrs, ss) in enumerate(zip(self.user_neighbors, self.signs)):
            if len(nbrs) != len(ss):
                raise ValueError(f"user {i}: neighbor/sign length mismatch")
            if len(np.unique(nbrs)) != len(nbrs):
                raise ValueError(f"user {i}: duplicate chips in neighborhood")
            for a, s in zip(nbrs, ss):
                if not 0 <= a < self.n_chips:
                    raise ValueError(f"user {i}: chip index {a} out of range")
                if s not in (-1, 1):
                    raise ValueError(f"user {i}: sign {s} not in {{+1,-1}}")
                chips[int(a)].append((i, int(s)))
        object.__setattr__(self, "chip_neighbors", tuple(chips))

    @property
    def user_degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.user_neighbors])

    @property
    def chip_degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.chip_neighbors])

    def to_dense(self, signed_only: bool = False) -> np.ndarray:
        """Dense (n_chips, n_users) matrix; signed_only skips the 1/sqrt(lbar)
        scale (raw +/-1/0 entries)."""
        S = np.zeros((self.n_chips, self.n_users))
        for i, (nbrs, ss) in enumerate(zip(self.user_neighbors, self.signs)):
            S[nbrs, i] = ss
        return S if signed_only else S * self.scale

    def save_text(self, path) -> None:
        """Plain-text sparse triplet format: header 'N K lbar', then one line
        'i a s' per edge with 1-based indices."""
        lbar = 1.0 / self.scale**2
        with open(path, "w") as fh:
            fh.write(f"{self.n_chips} {self.n_users} {lbar!r}\n")
            for i, (nbrs, ss) in enumerate(zip(self.user_neighbors, self.signs)):
                for a, s in zip(nbrs, ss):
                    fh.write(f"{i + 1} {a + 1} {int(s):+d}\n")

    @classmethod
    def load_text(cls, path) -> "SparseSignatureMatrix":
        with open(path) as fh:
            header = fh.readline().split()
            n_chips, n_users, lbar = int(header[0]), int(header[1]), float(header[2])
            nbrs: list[list[int]] = [[] for _ in range(n_users)]
            ss: list[list[int]] = [[] for _ in range(n_users)]
            for line in fh:
                if not line.strip():
                    continue
                i, a, s = line.split()
                nbrs[int(i) - 1].append(int(a) - 1)
                ss[int(i) - 1].append(int(s))
        return cls(
            n_chips=n_chips,
            n_users=n_users,
            user_neighbors=tuple(np.array(n, dtype=np.int64) for n in nbrs),
            signs=tuple(np.array(s, dtype=np.int64) for s in ss),
            scale=1.0 / math.sqrt(lbar),
        )


def generate_signatures(
    n_chips: int, n_users: int, dist: DegreeDistribution, seed: int
) -> SparseSignatureMatrix:
    """Draw a random instance: degrees i.i.d. from the node law, chip subsets
    uniform without replacement, signs uniform +/-1. Deterministic given seed."""
    if n_chips < dist.max_degree:
        raise ValueError(
            f"n_chips={n_chips} smaller than max support {dist.max_degree} of the degree law"
        )
    if n_users < 1:
        raise ValueError("need at least one user")
    rng = np.random.default_rng([int(seed)])
    degrees = dist.sample_nodes(rng, n_users)
    nbrs = []
    signs = []
    for l in degrees:
        l = int(l)
        chips = np.sort(rng.choice(n_chips, size=l, replace=False))
        nbrs.append(chips.astype(np.int64))
        signs.append((rng.integers(0, 2, size=l) * 2 - 1).astype(np.int64))
    return SparseSignatureMatrix(
        n_chips=n_chips,
        n_users=n_users,
        user_neighbors=tuple(nbrs),
        signs=tuple(signs),
        scale=1.0 / math.sqrt(dist.mean),
    )


@dataclass(frozen=True)
class TransmissionInstance:
    """One channel use: y = S x + w with w ~ N(0, sigma2 I)."""

    signatures: SparseSignatureMatrix
    x: np.ndarray
    y: np.ndarray
    sigma2: float

    def __post_init__(self):
        if len(self.x) != self.signatures.n_users:
            raise ValueError("input length does not match n_users")
        if len(self.y) != self.signatures.n_chips:
            raise ValueError("received length does not match n_chips")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be > 0")
        if not np.all(np.abs(self.x) == 1):
            raise ValueError("input symbols must be +/-1")


def transmit(
    sig: SparseSignatureMatrix,
    sigma2: float,
    seed: int | None = None,
    x: np.ndarray | None = None,
    noise: np.ndarray | None = None,
) -> TransmissionInstance:
    """Transmit x (default: all +1) through the AWGN channel.

    An explicit noise vector may be injected (zero-noise tests, common random
    numbers); otherwise w is drawn from default_rng([seed]).
    """
    if x is None:
        x = np.ones(sig.n_users)
    x = np.asarray(x, dtype=float)
    if len(x) != sig.n_users:
        raise ValueError("input length does not match n_users")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    y = np.zeros(sig.n_chips)
    for i, (nbrs, ss) in enumerate(zip(sig.user_neighbors, sig.signs)):
        y[nbrs] += x[i] * ss
    y *= sig.scale
    if noise is None:
        if seed is None:
            raise ValueError("either a seed or an explicit noise vector is required")
        noise = np.random.default_rng([int(seed)]).normal(0.0, math.sqrt(sigma2), sig.n_chips)
    noise = np.asarray(noise, dtype=float)
    if len(noise) != sig.n_chips:
        raise ValueError("noise length does not match n_chips")
    return TransmissionInstance(signatures=sig, x=x, y=y + noise, sigma2=sigma2)


def sample_dense_batch(
    n_chips: int,
    n_users: int,
    dist: DegreeDistribution,
    rng: np.random.Generator,
    batch: int,
) -> np.ndarray:
    """Batch of signed adjacency matrices, shape (batch, n_chips, n_users) with
    entries in {-1, 0, +1} (unscaled). Intended for small systems where the
    brute-force posterior is enumerated."""
    if n_chips < dist.max_degree:
        raise ValueError("n_chips smaller than max support of the degree law")
    degrees = dist.sample_nodes(rng, (batch, n_users))
    # rank of each chip within a user's uniform draws = uniform subset choice
    u = rng.random((batch, n_users, n_chips))
    ranks = u.argsort(axis=-1).argsort(axis=-1)
    mask = ranks < degrees[..., None]
    signs = rng.integers(0, 2, size=(batch, n_users, n_chips)) * 2 - 1
    return np.where(mask, signs, 0).transpose(0, 2, 1).astype(float)


def conditional_entropy_mc(
    n_chips: int,
    n_users: int,
    dist: DegreeDistribution,
    sigma2: float,
    trials: int,
    seed: int,
) -> tuple[float, float]:
    """Monte Carlo estimate of the conditional input entropy per user (nats).

    Averages -log P(X = all-plus | y, S) over fresh (S, w) draws under
    all-(+1) transmission, using the exact enumerated posterior. Returns
    (estimate, standard error). Requires n_users <= 20.
    """
    if n_users > 20:
        raise ValueError("exact posterior enumeration requires n_users <= 20")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    from .detectors import log_posterior_batch

    vals = np.empty(trials)
    done = 0
    block_idx = 0
    while done < trials:
        b = min(MC_BLOCK, trials - done)
        rng = np.random.default_rng([int(seed), block_idx])
        S_signed = sample_dense_batch(n_chips, n_users, dist, rng, b)
        scale = 1.0 / math.sqrt(dist.mean)
        y = scale * S_signed.sum(axis=2) + rng.normal(
            0.0, math.sqrt(sigma2), (b, n_chips)
        )
        _, _, log_p_plus = log_posterior_batch(S_signed * scale, y, sigma2)
        vals[done : done + b] = -log_p_plus
        done += b
        block_idx += 1
    est = float(vals.mean() / n_users)
    se = float(vals.std(ddof=1) / math.sqrt(trials) / n_users)
    return est, se
