"""Adaptive random-walk Metropolis-within-Gibbs for the probit model.

Each sweep updates every team strength singly, then the cut-off, home
effect, regression slope (non-ZERO systems only) and log strength SD.
Step sizes follow a Robbins-Monro recursion toward ``target_accept`` during
burn-in and are frozen afterwards.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .domain import MatchRecord, RatingSystem, StandardizedRatings
from .errors import DegenerateError, InitializationError, InsufficientDrawsError, ValidationError
from .model import (
    GaussianPrior,
    MatchDesign,
    ParamState,
    PriorSet,
    gaussian_logpdf,
    match_design,
    weighted_log_term,
)

log = logging.getLogger(__name__)

SCALARS = ("delta", "h", "beta", "gamma")
_ADAPT_DECAY = 0.6


@dataclass(frozen=True)
class SamplerConfig:
    seed: int
    n_chains: int = 4
    n_iter: int = 20000
    n_burnin: int = 10000
    thin: int = 1
    target_accept: float = 0.35

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.n_chains < 1 or self.thin < 1 or self.n_iter < 1 or self.n_burnin < 0:
            raise ValidationError("chain, iteration, burn-in and thin counts must be positive")
        if self.n_burnin >= self.n_iter:
            raise ValidationError(f"n_burnin ({self.n_burnin}) must be below n_iter ({self.n_iter})")
        if not 0 < self.target_accept < 1:
            raise ValidationError(f"target_accept must lie in (0, 1), got {self.target_accept}")

    @property
    def n_keep(self) -> int:
        return len(range(self.n_burnin, self.n_iter, self.thin))


@dataclass
class PosteriorDraws:
    """Retained draws, shape (chains, draws, n_teams + 4).

    Column layout is the strengths in ``teams`` order followed by delta, h,
    beta and gamma. Beta is stored as 0 for the ZERO system.
    """

    values: np.ndarray
    teams: tuple
    system: RatingSystem
    config: SamplerConfig
    acceptance: np.ndarray  # (chains, blocks), post burn-in
    step_sizes: np.ndarray  # (chains, blocks), frozen values

    @property
    def n_teams(self) -> int:
        return len(self.teams)

    @property
    def has_beta(self) -> bool:
        return self.system is not RatingSystem.ZERO

    def param_names(self) -> list[str]:
        names = [f"s_{i + 1}" for i in range(self.n_teams)] + ["delta", "h"]
        if self.has_beta:
            names.append("beta")
        return names + ["gamma"]

    def column(self, name: str) -> int:
        if name.startswith("s_"):
            return int(name[2:]) - 1
        if name == "beta" and not self.has_beta:
            raise KeyError("beta is not a parameter of the ZERO system")
        return self.n_teams + SCALARS.index(name)

    def param(self, name: str) -> np.ndarray:
        """(chains, draws) array for one scalar parameter."""
        return self.values[:, :, self.column(name)]

    def strength(self, abbrev: str) -> np.ndarray:
        return self.values[:, :, self.teams.index(abbrev)]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    def mean_state(self) -> ParamState:
        return ParamState.from_vector(self.flat().mean(axis=0), self.has_beta)


# ---------------------------------------------------------------- kernel


@njit(cache=True, nogil=True)
def _run_chain(
    theta, x, has_beta, pmean, pvar,
    home, away, hw, coef, team_ptr, team_rows,
    normals, log_u, n_burnin, thin, target, step0,
):
    n = x.shape[0]
    nb = n + 4
    n_iter = normals.shape[0]
    n_rows = home.shape[0]
    n_keep = 0
    for t in range(n_burnin, n_iter, thin):
        n_keep += 1
    out = np.empty((n_keep, nb))
    accepted = np.zeros(nb)
    log_step = np.log(step0)
    s = theta[:n].copy()
    delta = theta[n]
    h = theta[n + 1]
    beta = theta[n + 2] if has_beta else 0.0
    gamma = theta[n + 3]

    row_ll = np.empty(n_rows)
    for r in range(n_rows):
        row_ll[r] = weighted_log_term(s[home[r]] - s[away[r]] + h * hw[r], delta, coef[r, 0], coef[r, 1], coef[r, 2])
    max_deg = 0
    for i in range(n):
        deg = team_ptr[i + 1] - team_ptr[i]
        if deg > max_deg:
            max_deg = deg
    buf = np.empty(max_deg)
    buf_all = np.empty(n_rows)

    k = 0
    for t in range(n_iter):
        adapting = t < n_burnin
        rate = (t + 1.0) ** -0.6
        var_s = math.exp(2.0 * gamma)

        # strengths, one at a time
        for i in range(n):
            old = s[i]
            new = old + math.exp(log_step[i]) * normals[t, i]
            la = 0.0
            for q in range(team_ptr[i], team_ptr[i + 1]):
                r = team_rows[q]
                s[i] = new
                v = weighted_log_term(s[home[r]] - s[away[r]] + h * hw[r], delta, coef[r, 0], coef[r, 1], coef[r, 2])
                buf[q - team_ptr[i]] = v
                la += v - row_ll[r]
            s[i] = old
            eta = beta * x[i]
            la += ((old - eta) ** 2 - (new - eta) ** 2) / (2.0 * var_s)
            alpha = 0.0 if la != la else (1.0 if la >= 0.0 else math.exp(la))
            if log_u[t, i] < la:
                s[i] = new
                for q in range(team_ptr[i], team_ptr[i + 1]):
                    row_ll[team_rows[q]] = buf[q - team_ptr[i]]
                if not adapting:
                    accepted[i] += 1.0
            if adapting:
                log_step[i] += rate * (alpha - target)

        # cut-off and home effect touch every row
        for b in range(2):
            j = n + b
            cur = delta if b == 0 else h
            new = cur + math.exp(log_step[j]) * normals[t, j]
            la = -np.inf
            if b == 1 or new > 0.0:
                nd = new if b == 0 else delta
                nh = new if b == 1 else h
                la = gaussian_logpdf(new, pmean[b], pvar[b]) - gaussian_logpdf(cur, pmean[b], pvar[b])
                for r in range(n_rows):
                    v = weighted_log_term(s[home[r]] - s[away[r]] + nh * hw[r], nd, coef[r, 0], coef[r, 1], coef[r, 2])
                    buf_all[r] = v
                    la += v - row_ll[r]
            alpha = 0.0 if la != la else (1.0 if la >= 0.0 else math.exp(la))
            if log_u[t, j] < la:
                if b == 0:
                    delta = new
                else:
                    h = new
                for r in range(n_rows):
                    row_ll[r] = buf_all[r]
                if not adapting:
                    accepted[j] += 1.0
            if adapting:
                log_step[j] += rate * (alpha - target)

        # regression slope: prior terms only
        j = n + 2
        if has_beta:
            new = beta + math.exp(log_step[j]) * normals[t, j]
            la = gaussian_logpdf(new, pmean[2], pvar[2]) - gaussian_logpdf(beta, pmean[2], pvar[2])
            for i in range(n):
                la += ((s[i] - beta * x[i]) ** 2 - (s[i] - new * x[i]) ** 2) / (2.0 * var_s)
            alpha = 0.0 if la != la else (1.0 if la >= 0.0 else math.exp(la))
            if log_u[t, j] < la:
                beta = new
                if not adapting:
                    accepted[j] += 1.0
            if adapting:
                log_step[j] += rate * (alpha - target)

        # log strength SD
        j = n + 3
        new = gamma + math.exp(log_step[j]) * normals[t, j]
        ss = 0.0
        for i in range(n):
            ss += (s[i] - beta * x[i]) ** 2
        la = gaussian_logpdf(new, pmean[3], pvar[3]) - gaussian_logpdf(gamma, pmean[3], pvar[3])
        la += -n * (new - gamma) - 0.5 * ss * (math.exp(-2.0 * new) - math.exp(-2.0 * gamma))
        alpha = 0.0 if la != la else (1.0 if la >= 0.0 else math.exp(la))
        if log_u[t, j] < la:
            gamma = new
            if not adapting:
                accepted[j] += 1.0
        if adapting:
            log_step[j] += rate * (alpha - target)

        if t >= n_burnin and (t - n_burnin) % thin == 0:
            out[k, :n] = s
            out[k, n] = delta
            out[k, n + 1] = h
            out[k, n + 2] = beta
            out[k, n + 3] = gamma
            k += 1

    n_post = n_iter - n_burnin
    return out, accepted / n_post, np.exp(log_step)


# ---------------------------------------------------------------- driver


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by (seed, chain index)."""
    key = np.random.SeedSequence([seed, chain]).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _thread_cap() -> int:
    env = os.environ.get("UCLF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer UCLF_THREADS=%r", env)
    return os.cpu_count() or 1


def initial_state(priors: PriorSet, std: StandardizedRatings) -> np.ndarray:
    x = std.as_array()
    beta0 = priors.beta.mean if priors.beta is not None else 0.0
    return np.concatenate([beta0 * x, [priors.delta.mean, priors.h.mean, beta0, priors.gamma.mean]])


def log_posterior_vector(theta: np.ndarray, design: MatchDesign, priors: PriorSet, std: StandardizedRatings) -> float:
    from .model import design_log_likelihood, log_prior

    state = ParamState.from_vector(theta, priors.system is not RatingSystem.ZERO)
    return log_prior(state, priors, std) + design_log_likelihood(state, design)


def sample_design(
    design: MatchDesign,
    priors: PriorSet,
    std: StandardizedRatings,
    config: SamplerConfig,
    parallel: bool | None = None,
) -> PosteriorDraws:
    """Sample the posterior defined by prior + arbitrary weighted log-terms."""
    if std.system is not priors.system:
        raise ValidationError(
            f"standardized ratings are {std.system.value} but priors are {priors.system.value}"
        )
    n = len(std.order)
    if n == 0:
        raise ValidationError("cannot sample with an empty team set")
    x = std.as_array()
    has_beta = priors.system is not RatingSystem.ZERO
    theta0 = initial_state(priors, std)
    lp0 = log_posterior_vector(theta0, design, priors, std)
    if not math.isfinite(lp0):
        raise InitializationError(f"log posterior at the initial state is {lp0}")

    beta_p = priors.beta or GaussianPrior(0.0, 1.0)
    pmean = np.array([priors.delta.mean, priors.h.mean, beta_p.mean, priors.gamma.mean])
    pvar = np.array([priors.delta.var, priors.h.var, beta_p.var, priors.gamma.var])
    step0 = np.concatenate([np.full(n, math.exp(priors.gamma.mean)), np.sqrt(pvar)])
    nb = n + 4

    def one_chain(c: int):
        rng = chain_rng(config.seed, c)
        normals = rng.standard_normal((config.n_iter, nb))
        log_u = np.log(rng.random((config.n_iter, nb)))
        return _run_chain(
            theta0, x, has_beta, pmean, pvar,
            design.home, design.away, design.home_weight, design.coef,
            design.team_ptr, design.team_rows,
            normals, log_u, config.n_burnin, config.thin, config.target_accept, step0,
        )

    workers = min(config.n_chains, _thread_cap())
    if parallel is None:
        parallel = workers > 1
    if parallel and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=max(workers, 2)) as pool:
            results = list(pool.map(one_chain, range(config.n_chains)))
    else:
        results = [one_chain(c) for c in range(config.n_chains)]

    values = np.stack([r[0] for r in results])
    return PosteriorDraws(
        values=values,
        teams=tuple(std.order),
        system=priors.system,
        config=config,
        acceptance=np.stack([r[1] for r in results]),
        step_sizes=np.stack([r[2] for r in results]),
    )


def run_mcmc(
    matches: Sequence[MatchRecord],
    priors: PriorSet,
    std: StandardizedRatings,
    config: SamplerConfig,
    parallel: bool | None = None,
) -> PosteriorDraws:
    """Posterior draws of all parameters given observed matches."""
    index = {a: i for i, a in enumerate(std.order)}
    for m in matches:
        for abbrev in (m.home, m.away):
            if abbrev not in index:
                raise ValidationError(f"match {m.match_id}: team {abbrev} has no rating entry")
    return sample_design(match_design(matches, index), priors, std, config, parallel)


# ---------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class Diagnostic:
    r_hat: float
    ess: float
    insufficient_variation: bool = False


def _split(chains: np.ndarray) -> np.ndarray:
    m, n = chains.shape
    half = n // 2
    # odd lengths drop the first draw
    return np.concatenate([chains[:, n - 2 * half : n - half], chains[:, n - half :]], axis=0)


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction for a (chains, draws) array."""
    sc = _split(np.asarray(chains, float))
    m, n = sc.shape
    w = sc.var(axis=1, ddof=1).mean()
    b = n * sc.mean(axis=1).var(ddof=1)
    if w == 0:
        return math.inf if b > 0 else math.nan
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=-1)
    return np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n] / n


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial positive sequence truncation."""
    sc = _split(np.asarray(chains, float))
    m, n = sc.shape
    acov = _autocov(sc)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    var_plus = (n - 1) / n * w + sc.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return math.nan
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    return float(m * n / max(tau, 1.0 / math.log10(m * n)))


def diagnose_array(chains: np.ndarray) -> Diagnostic:
    chains = np.asarray(chains, float)
    if chains.ndim == 1:
        chains = chains[None, :]
    if chains.size < 10 or chains.shape[1] < 4:
        raise InsufficientDrawsError(f"need at least 10 retained draws, got {chains.size}")
    if np.all(chains.var(axis=1) == 0):
        if np.ptp(chains) == 0:
            return Diagnostic(math.nan, math.nan, insufficient_variation=True)
        return Diagnostic(math.inf, math.nan, insufficient_variation=True)
    return Diagnostic(split_rhat(chains), effective_sample_size(chains))


def diagnostics(draws: PosteriorDraws) -> dict[str, Diagnostic]:
    return {name: diagnose_array(draws.param(name)) for name in draws.param_names()}


# ---------------------------------------------------------------- summaries


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float
    r_hat: float = math.nan
    ess: float = math.nan


@dataclass
class PosteriorSummary:
    params: dict  # name -> ParamSummary
    teams: tuple
    system: RatingSystem

    def __getitem__(self, name: str) -> ParamSummary:
        return self.params[name]

    def strength(self, abbrev: str) -> ParamSummary:
        return self.params[f"s_{self.teams.index(abbrev) + 1}"]

    def to_dict(self) -> dict:
        return {name: _finite_dict(asdict(p)) for name, p in self.params.items()}


def _finite_dict(d: dict) -> dict:
    return {k: (v if math.isfinite(v) else None) for k, v in d.items()}


def summarize(draws: PosteriorDraws, with_diagnostics: bool = True) -> PosteriorSummary:
    """Pooled posterior moments and quantiles per scalar parameter."""
    if draws.values.size == 0:
        raise InsufficientDrawsError("no draws to summarize")
    diag = {}
    if with_diagnostics:
        try:
            diag = diagnostics(draws)
        except InsufficientDrawsError:
            diag = {}
    params = {}
    for name in draws.param_names():
        v = draws.param(name).ravel()
        sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
        if np.ptp(v) == 0:
            sd = 0.0
        q = np.quantile(v, [0.025, 0.5, 0.975])
        d = diag.get(name)
        params[name] = ParamSummary(
            float(v.mean()), sd, float(q[0]), float(q[1]), float(q[2]),
            d.r_hat if d else math.nan, d.ess if d else math.nan,
        )
    return PosteriorSummary(params, draws.teams, draws.system)


def chain_priors(summary: PosteriorSummary, system: RatingSystem) -> PriorSet:
    """Next-season priors: Gaussian at each scalar's posterior mean and variance.

    Team strengths are not carried over; the next season re-anchors them on
    fresh external ratings.
    """
    names = ["delta", "h", "gamma"] + ([] if system is RatingSystem.ZERO else ["beta"])
    out = {}
    for name in names:
        if name not in summary.params:
            raise ValidationError(f"posterior summary has no {name}")
        p = summary.params[name]
        if not p.sd > 0:
            raise DegenerateError(f"posterior SD of {name} is {p.sd}; cannot form a prior")
        out[name] = GaussianPrior(p.mean, p.sd**2)
    return PriorSet(system=system, **out)


# ---------------------------------------------------------------- files


def draws_header(n_teams: int) -> list[str]:
    return ["chain", "iter"] + [f"s_{i + 1}" for i in range(n_teams)] + list(SCALARS)


def write_draws_csv(draws: PosteriorDraws, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(draws_header(draws.n_teams))
        n_keep = draws.values.shape[1]
        iters = range(draws.config.n_burnin, draws.config.n_iter, draws.config.thin)
        for c in range(draws.values.shape[0]):
            for k, it in zip(range(n_keep), iters):
                row = draws.values[c, k]
                vals = [repr(float(v)) for v in row]
                if not draws.has_beta:
                    vals[draws.n_teams + 2] = ""
                w.writerow([c, it] + vals)


def read_draws_csv(path: str | Path) -> tuple[np.ndarray, bool]:
    """Load draws.csv into a (chains, draws, params) array; second item is has_beta."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_teams = len(header) - 2 - len(SCALARS)
        if header != draws_header(n_teams):
            raise ValidationError(f"{path}: unexpected draws header")
        per_chain: dict[int, list] = {}
        has_beta = True
        for row in reader:
            beta_col = 2 + n_teams + 2
            if row[beta_col] == "":
                has_beta = False
                row[beta_col] = "0"
            per_chain.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
    values = np.array([per_chain[c] for c in sorted(per_chain)])
    return values, has_beta


def config_dict(config: SamplerConfig) -> dict:
    return asdict(config)
