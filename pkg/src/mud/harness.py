"""Experiment orchestration: configuration, dispatch, CSV persistence, and the
figure-reproduction sweeps.

CSV artifacts are self-describing: header comment lines echo the full config,
the seed and a content hash of the canonical config text. Under deterministic
mode the timestamp line is suppressed so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import dense_limit as dl
from . import density_evolution as de
from . import detectors, ensemble

EXPERIMENTS = (
    "ber_sweep",
    "de_curve",
    "tanaka_curve",
    "gexit_curve",
    "map_vs_bp",
    "spinodal",
    "entropy_check",
    "fig2",
    "fig3",
)


class ConfigError(ValueError):
    """Invalid experiment configuration; CLI exit code 1."""


def parse_dist_spec(spec: str) -> ensemble.DegreeDistribution:
    """'regular:4' | 'poisson:3.5' | 'explicit:2=0.5,4=0.5'."""
    try:
        kind, _, rest = spec.partition(":")
        if kind == "regular":
            return ensemble.DegreeDistribution.regular(int(rest))
        if kind == "poisson":
            return ensemble.DegreeDistribution.poisson(float(rest))
        if kind == "explicit":
            probs = {}
            for item in rest.split(","):
                l, _, p = item.partition("=")
                probs[int(l)] = float(p)
            return ensemble.DegreeDistribution.from_probs(probs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad dist spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown dist spec {spec!r}")


def parse_sigma_grid(text: str) -> list[float]:
    """'a:b:step' range (inclusive) or comma-separated list, in sigma units."""
    try:
        if ":" in text:
            a, b, step = (float(p) for p in text.split(":"))
            n = int(round((b - a) / step)) + 1
            grid = [a + i * step for i in range(n) if a + i * step <= b + 1e-12]
        else:
            grid = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad sigma grid {text!r}: {exc}") from exc
    if not grid or any(s <= 0 for s in grid) or any(
        y <= x for x, y in zip(grid, grid[1:])
    ):
        raise ConfigError(f"sigma grid must be strictly increasing and positive: {grid}")
    return grid


@dataclass
class ExperimentConfig:
    experiment: str
    alpha: float = 1.3
    sigma_grid: list[float] = field(default_factory=lambda: [round(0.30 + 0.05 * i, 2) for i in range(19)])
    dist_spec: str = "regular:4"
    n_chips: int = 0
    n_users: int = 0
    t_max: int = 50
    trials: int = 1000
    pop_size: int = 100_000
    seed: int = 1
    workers: int = 1
    deterministic: bool = False
    output_path: str = "out.csv"

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.sigma_grid or any(s <= 0 for s in self.sigma_grid):
            raise ConfigError(f"sigma grid must be positive: {self.sigma_grid}")
        if any(y <= x for x, y in zip(self.sigma_grid, self.sigma_grid[1:])):
            raise ConfigError(f"sigma grid must be strictly increasing: {self.sigma_grid}")
        for name in ("t_max", "trials", "pop_size", "workers"):
            if getattr(self, name) < (0 if name == "t_max" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_chips and self.n_users:
            if abs(self.n_users / self.n_chips - self.alpha) >= 1.0 / self.n_chips:
                raise ConfigError(
                    f"K/N = {self.n_users}/{self.n_chips} inconsistent with alpha = {self.alpha}"
                )
        parse_dist_spec(self.dist_spec)

    def canonical_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "sigma_grid":
                v = ",".join(repr(s) for s in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines)


def load_config_file(path: str) -> dict:
    """Flat 'key = value' file with '#' comments."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def _write_csv(config: ExperimentConfig, header: list[str], rows: list[tuple]) -> None:
    text = config.canonical_text()
    digest = hashlib.sha1(text.encode()).hexdigest()
    with open(config.output_path, "w", newline="") as fh:
        for line in text.splitlines():
            fh.write(f"# {line}\n")
        fh.write(f"# config_sha1 = {digest}\n")
        if not config.deterministic:
            fh.write(f"# written = {time.strftime('%Y-%m-%dT%H:%M:%S')}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# individual experiments
# ---------------------------------------------------------------------------


def de_trace(
    dist: ensemble.DegreeDistribution,
    alpha: float,
    sigma2: float,
    t_max: int,
    pop_size: int,
    seed: int,
    gexit_samples: int = 0,
) -> list[dict]:
    """Run one DE trajectory, returning one record per iteration."""
    params = de.DeParams(dist=dist, alpha=alpha, sigma2=sigma2, pop_size=pop_size, seed=seed)
    pop_v = de.initial_population(params)
    records = []
    for _ in range(t_max):
        if gexit_samples:
            g, g_se = de.gexit_bp_mc(pop_v, params, gexit_samples, seed=seed)
        else:
            g, g_se = float("nan"), float("nan")
        pop_u, pop_v = de.de_step(pop_v, params)
        records.append(
            {
                "t": pop_v.iteration,
                "pop_mean": float(pop_v.samples.mean()),
                "pop_var": float(pop_v.samples.var(ddof=1)),
                "ber": de.de_ber(pop_u, dist, len(pop_u.samples), seed=seed),
                "gexit": g,
                "gexit_stderr": g_se,
                "pop_u": pop_u,
                "pop_v": pop_v,
            }
        )
    return records


def _run_de_curve(config: ExperimentConfig):
    dist = parse_dist_spec(config.dist_spec)
    rows = []
    for sigma in config.sigma_grid:
        recs = de_trace(
            dist, config.alpha, sigma**2, config.t_max, config.pop_size, config.seed
        )
        for r in recs:
            rows.append(
                (
                    r["t"],
                    config.dist_spec,
                    config.alpha,
                    sigma**2,
                    r["pop_mean"],
                    r["pop_var"],
                    r["ber"],
                    r["gexit"],
                    r["gexit_stderr"],
                )
            )
    header = ["t", "dist", "alpha", "sigma2", "pop_mean", "pop_var", "ber", "gexit", "gexit_stderr"]
    final = [row for row in rows if row[0] == config.t_max]
    summary = "de_curve final BER by sigma: " + ", ".join(
        f"{math.sqrt(row[3]):.3f}->{row[6]:.4g}" for row in final
    )
    return header, rows, summary


def _run_gexit_curve(config: ExperimentConfig):
    dist = parse_dist_spec(config.dist_spec)
    rows = []
    for sigma in config.sigma_grid:
        sigma2 = sigma**2
        params = de.DeParams(
            dist=dist, alpha=config.alpha, sigma2=sigma2,
            pop_size=config.pop_size, seed=config.seed,
        )
        pop_v = de.initial_population(params)
        for _ in range(config.t_max):
            _, pop_v = de.de_step(pop_v, params)
        g, g_se = de.gexit_bp_mc(pop_v, params, config.pop_size, seed=config.seed)
        q_t = dl.q_of_lambda(dl.lambda_recursion(sigma2, config.alpha, t_max=config.t_max, tol=0.0).values[-1])
        rows.append(
            (config.alpha, sigma2, config.t_max, g, g_se,
             dl.gexit_dense(float(q_t), sigma2, config.alpha))
        )
    header = ["alpha", "sigma2", "t", "gexit", "gexit_stderr", "gexit_dense"]
    return header, rows, f"gexit_curve over {len(rows)} noise points"


_BRANCH_NAMES = {1: ["unique"], 2: ["low_q", "high_q"], 3: ["low_q", "mid_q", "high_q"]}


def _run_tanaka_curve(config: ExperimentConfig):
    rows = []
    multi = 0
    for sigma in config.sigma_grid:
        sigma2 = sigma**2
        states = dl.solve_stationary_all(sigma2, config.alpha)
        names = _BRANCH_NAMES.get(len(states), [f"branch{i}" for i in range(len(states))])
        multi += len(states) > 1
        for st, name in zip(states, names):
            rows.append(
                (
                    config.alpha,
                    sigma2,
                    name,
                    st.q,
                    st.lam,
                    st.h,
                    st.h / math.log(2.0),
                    dl.gexit_dense(st.q, sigma2, config.alpha),
                    dl.ber_dense(st.lam),
                )
            )
    header = ["alpha", "sigma2", "branch", "q", "lambda", "h_nats", "h_bits", "gexit", "ber_dense"]
    return header, rows, f"tanaka_curve: {multi} noise points with multiple branches"


def _run_ber_sweep(config: ExperimentConfig):
    if not (config.n_chips and config.n_users):
        raise ConfigError("ber_sweep requires n_chips and n_users")
    dist = parse_dist_spec(config.dist_spec)
    rows = []
    for sigma in config.sigma_grid:
        for method, t in (("bp", config.t_max), ("mf", 0)):
            ber, se = detectors.ber_monte_carlo(
                method, config.n_chips, config.n_users, dist, sigma**2,
                t, config.trials, config.seed,
            )
            rows.append(
                (method, config.n_chips, config.n_users, config.dist_spec,
                 sigma**2, t, config.trials, ber, se)
            )
    header = ["method", "N", "K", "dist", "sigma2", "t", "trials", "ber", "stderr"]
    return header, rows, f"ber_sweep over {len(config.sigma_grid)} noise points"


def _run_spinodal(config: ExperimentConfig):
    value = dl.spinodal_alpha()
    return ["alpha_s"], [(value,)], f"spinodal load alpha_s = {value:.4f}"


def map_vs_bp_overhead(
    n_chips: int,
    n_users: int,
    dists: list[ensemble.DegreeDistribution],
    sigma2: float,
    t_list: list[int],
    trials: int,
    seed: int,
) -> list[dict]:
    """Paired BP-vs-MAP bit error overhead on identical instances.

    Returns one record per (lbar, t) with the overhead estimate, its paired
    standard error, and per-trial BER arrays for downstream contrasts.
    """
    if n_users > 20:
        raise ConfigError("map_vs_bp requires K <= 20 for the exact oracle")
    out = []
    for dist in dists:
        ber_map = np.empty(trials)
        ber_bp = {t: np.empty(trials) for t in t_list}
        for trial in range(trials):
            block, offset = divmod(trial, ensemble.MC_BLOCK)
            rng = np.random.default_rng([int(seed), int(round(dist.mean * 1000)), block, offset])
            sig = ensemble.generate_signatures(
                n_chips, n_users, dist, seed=int(rng.integers(2**62))
            )
            inst = ensemble.transmit(
                sig, sigma2, noise=rng.normal(0, math.sqrt(sigma2), n_chips)
            )
            degrees = sig.user_degrees
            ber_map[trial] = detectors._bit_errors(detectors.map_exact(inst), degrees)
            bp = detectors.bp_detect_multi(inst, t_list)
            for t in t_list:
                ber_bp[t][trial] = detectors._bit_errors(bp[t][0], degrees)
        for t in t_list:
            diff = ber_bp[t] - ber_map
            out.append(
                {
                    "lbar": dist.mean,
                    "t": t,
                    "delta": float(diff.mean()),
                    "stderr": float(diff.std(ddof=1) / math.sqrt(trials)),
                    "ber_bp": float(ber_bp[t].mean()),
                    "ber_map": float(ber_map.mean()),
                    "per_trial_bp": ber_bp[t],
                    "per_trial_map": ber_map,
                }
            )
    return out


def _run_map_vs_bp(config: ExperimentConfig):
    if not (config.n_chips and config.n_users):
        raise ConfigError("map_vs_bp requires n_chips and n_users")
    dist = parse_dist_spec(config.dist_spec)
    sigma2 = config.sigma_grid[len(config.sigma_grid) // 2] ** 2
    t_list = sorted({0, 1, 2, 4, min(8, config.t_max)} | {config.t_max})
    recs = map_vs_bp_overhead(
        config.n_chips, config.n_users, [dist], sigma2, t_list, config.trials, config.seed
    )
    rows = [
        (r["lbar"], sigma2, r["t"], r["delta"], r["stderr"], r["ber_bp"], r["ber_map"])
        for r in recs
    ]
    header = ["lbar", "sigma2", "t", "delta", "stderr", "ber_bp", "ber_map"]
    return header, rows, f"map_vs_bp overhead at sigma2={sigma2:.3f}"


def entropy_derivative_check(
    n_chips: int,
    n_users: int,
    dist: ensemble.DegreeDistribution,
    sigma2: float,
    trials: int,
    seed: int,
    rel_delta: float = 0.05,
) -> dict:
    """Two independent estimates of d E H(X|Y) / d sigma^2 per user.

    Left side: central finite differences of the Monte Carlo conditional
    entropy with common random numbers across the stencil. Right side: the
    conditional-variance form, Monte Carlo with exact posteriors.
    """
    if n_users > 20:
        raise ConfigError("entropy_check requires K <= 20")
    delta = rel_delta * sigma2
    scale = 1.0 / math.sqrt(dist.mean)
    lbar = dist.mean
    fd_vals = np.empty(trials)
    rhs_vals = np.empty(trials)
    done = 0
    block_idx = 0
    while done < trials:
        b = min(ensemble.MC_BLOCK, trials - done)
        rng = np.random.default_rng([int(seed), block_idx])
        S_signed = ensemble.sample_dense_batch(n_chips, n_users, dist, rng, b)
        S = S_signed * scale
        signal = S.sum(axis=2)
        w_std = rng.normal(0.0, 1.0, (b, n_chips))

        # finite-difference side, common random numbers across the stencil
        lp = {}
        for s2 in (sigma2 - delta, sigma2 + delta):
            y = signal + math.sqrt(s2) * w_std
            _, _, lp[s2] = detectors.log_posterior_batch(S, y, s2)
        fd_vals[done : done + b] = (
            -(lp[sigma2 + delta] - lp[sigma2 - delta]) / (2.0 * delta) / n_users
        )

        # conditional-variance side at the center point
        y = signal + math.sqrt(sigma2) * w_std
        marginals, _, _ = detectors.log_posterior_batch(S, y, sigma2)
        corr = np.einsum("bnk,bk->bn", S_signed, marginals)
        chip_deg = np.abs(S_signed).sum(axis=2)
        # per-user: (1/2 sigma^4) (1/(N lbar alpha)) sum_a (|da| - corr_a^2)
        # and N alpha = K
        rhs_vals[done : done + b] = (chip_deg - corr**2).sum(axis=1) / (
            2.0 * sigma2**2 * lbar * n_users
        )
        done += b
        block_idx += 1
    return {
        "sigma2": sigma2,
        "delta": delta,
        "lhs": float(fd_vals.mean()),
        "lhs_stderr": float(fd_vals.std(ddof=1) / math.sqrt(trials)),
        "rhs": float(rhs_vals.mean()),
        "rhs_stderr": float(rhs_vals.std(ddof=1) / math.sqrt(trials)),
    }


def _run_entropy_check(config: ExperimentConfig):
    if not (config.n_chips and config.n_users):
        raise ConfigError("entropy_check requires n_chips and n_users")
    dist = parse_dist_spec(config.dist_spec)
    rows = []
    for sigma in config.sigma_grid:
        r = entropy_derivative_check(
            config.n_chips, config.n_users, dist, sigma**2, config.trials, config.seed
        )
        rows.append(
            (r["sigma2"], r["lhs"], r["lhs_stderr"], r["rhs"], r["rhs_stderr"])
        )
    header = ["sigma2", "lhs", "lhs_stderr", "rhs", "rhs_stderr"]
    return header, rows, f"entropy_check over {len(rows)} noise points"


def _fig_sweep(config: ExperimentConfig, regular_ls: list[int]):
    """DE BER curves for regular degree laws plus the dense-limit MAP and
    matched-filter curves on a common sigma grid."""
    rows = []
    for sigma in config.sigma_grid:
        sigma2 = sigma**2
        lam_bp = dl.lambda_recursion(sigma2, config.alpha).limit
        rows.append((sigma, "dense_map", "", dl.ber_dense(lam_bp), 0.0))
        # matched filter in the dense limit: single-user SNR 1/(sigma^2+alpha)
        rows.append((sigma, "mf", "", dl.ber_dense(1.0 / (sigma2 + config.alpha)), 0.0))
        for l in regular_ls:
            dist = ensemble.DegreeDistribution.regular(l)
            recs = de_trace(dist, config.alpha, sigma2, config.t_max, config.pop_size, config.seed)
            ber = recs[-1]["ber"]
            se = math.sqrt(max(ber * (1 - ber), 1e-12) / config.pop_size)
            rows.append((sigma, f"de_regular", l, ber, se))
    header = ["sigma", "curve", "l", "ber", "stderr"]
    return header, rows, f"figure sweep at alpha={config.alpha}"


def fig2_sweep(config: ExperimentConfig):
    cfg = replace(config, alpha=1.3)
    return _fig_sweep(cfg, [3, 4, 5])


def fig3_sweep(config: ExperimentConfig):
    cfg = replace(config, alpha=1.9)
    return _fig_sweep(cfg, [3, 4, 5, 6])


def run_experiment(config: ExperimentConfig) -> str:
    """Dispatch, write the CSV artifact, return a human-readable summary."""
    config.validate()
    started = time.perf_counter()
    runner = {
        "ber_sweep": _run_ber_sweep,
        "de_curve": _run_de_curve,
        "tanaka_curve": _run_tanaka_curve,
        "gexit_curve": _run_gexit_curve,
        "map_vs_bp": _run_map_vs_bp,
        "spinodal": _run_spinodal,
        "entropy_check": _run_entropy_check,
        "fig2": fig2_sweep,
        "fig3": fig3_sweep,
    }[config.experiment]
    header, rows, summary = runner(config)
    _write_csv(config, header, rows)
    elapsed = time.perf_counter() - started
    return f"{summary}\nwrote {len(rows)} rows to {config.output_path} in {elapsed:.1f}s"
