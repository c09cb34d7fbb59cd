"""Cumulative probit (Glenn-David) outcome model and hierarchical prior.

Match outcomes are coded from the home team's perspective: 1 = home win,
2 = draw, 3 = home loss. A latent Gaussian with mean ``s_home - s_away + h``
and unit variance is cut at ``-delta`` and ``+delta``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .domain import MatchRecord, RatingSystem, StandardizedRatings
from .errors import InvalidParameterError, ValidationError

SQRT_HALF = 0.7071067811865476
INV_SQRT_PI = 0.5641895835477563
LOG_2PI = 1.8378770664093453

# |z| below this uses the Maclaurin series of erf; above it the Laplace
# continued fraction of erfc converges quickly.
_SERIES_LIMIT = 2.0


@njit(cache=True)
def _erf_series(z):
    z2 = z * z
    term = z
    total = z
    n = 0
    while True:
        n += 1
        term *= -z2 / n
        inc = term / (2 * n + 1)
        total += inc
        if abs(inc) < 1e-17 * abs(total) or n > 200:
            break
    return 2.0 * INV_SQRT_PI * total


@njit(cache=True)
def _erfc_cf(z):
    # erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
    # evaluated with the modified Lentz algorithm; z > 0.
    tiny = 1e-300
    f = z
    c = z
    d = 0.0
    for n in range(1, 500):
        a = 0.5 * n
        d = z + a * d
        if d == 0.0:
            d = tiny
        c = z + a / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-z * z) * INV_SQRT_PI / f


@njit(cache=True)
def normal_cdf(x):
    """Standard normal CDF with absolute error below 1e-15 on |x| <= 8.

    Saturates to exactly 0 or 1 far in the tails. NaN propagates.
    """
    if x != x:
        return x
    z = x * SQRT_HALF
    if abs(z) <= _SERIES_LIMIT:
        return 0.5 + 0.5 * _erf_series(z)
    if z > 38.0:
        return 1.0
    if z < -38.0:
        return 0.0
    if z < 0.0:
        return 0.5 * _erfc_cf(-z)
    return 1.0 - 0.5 * _erfc_cf(z)


@njit(cache=True)
def normal_cdf_array(x):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = normal_cdf(x[i])
    return out


@njit(cache=True)
def probs_from_mean(mu, delta):
    """Win/draw/loss probabilities for latent mean ``mu`` and cut-off ``delta``."""
    p_win = normal_cdf(mu - delta)
    p_loss = normal_cdf(-delta - mu)
    return p_win, 1.0 - p_win - p_loss, p_loss


@njit(cache=True)
def weighted_log_term(mu, delta, a1, a2, a3):
    """Sum_k a_k log pi_k, skipping zero coefficients.

    An observed result is the one-hot coefficient vector; expert opinions
    contribute arbitrary real coefficients.
    """
    p1, p2, p3 = probs_from_mean(mu, delta)
    total = 0.0
    if a1 != 0.0:
        if p1 <= 0.0:
            return -np.inf
        total += a1 * math.log(p1)
    if a2 != 0.0:
        if p2 <= 0.0:
            return -np.inf
        total += a2 * math.log(p2)
    if a3 != 0.0:
        if p3 <= 0.0:
            return -np.inf
        total += a3 * math.log(p3)
    return total


@njit(cache=True)
def gaussian_logpdf(x, mean, var):
    d = x - mean
    return -0.5 * (LOG_2PI + math.log(var) + d * d / var)


@dataclass(frozen=True)
class OutcomeProbs:
    """Home-perspective (win, draw, loss) probabilities."""

    p_win: float
    p_draw: float
    p_loss: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_win, self.p_draw, self.p_loss])

    def __getitem__(self, outcome: int) -> float:
        """Probability of outcome 1, 2 or 3."""
        return (self.p_win, self.p_draw, self.p_loss)[outcome - 1]

    @classmethod
    def from_array(cls, arr) -> "OutcomeProbs":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass
class ParamState:
    """One point in parameter space.

    ``beta`` is None for the Zero adjustment, where strengths are centred
    on zero and there is no regression on an external rating.
    """

    s: np.ndarray
    delta: float
    h: float
    beta: float | None
    gamma_s: float

    @property
    def sigma_s(self) -> float:
        return math.exp(self.gamma_s)

    def to_vector(self) -> np.ndarray:
        beta = 0.0 if self.beta is None else self.beta
        return np.concatenate([np.asarray(self.s, float), [self.delta, self.h, beta, self.gamma_s]])

    @classmethod
    def from_vector(cls, vec: np.ndarray, has_beta: bool = True) -> "ParamState":
        n = len(vec) - 4
        return cls(
            s=np.array(vec[:n], dtype=float),
            delta=float(vec[n]),
            h=float(vec[n + 1]),
            beta=float(vec[n + 2]) if has_beta else None,
            gamma_s=float(vec[n + 3]),
        )


@dataclass(frozen=True)
class GaussianPrior:
    mean: float
    var: float

    def __post_init__(self):
        if not (self.var > 0 and math.isfinite(self.var)):
            raise ValidationError(f"prior variance must be positive and finite, got {self.var}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)


@dataclass(frozen=True)
class PriorSet:
    """Gaussian priors on the scalar parameters for one adjustment system."""

    system: RatingSystem
    delta: GaussianPrior
    h: GaussianPrior
    gamma: GaussianPrior
    beta: GaussianPrior | None = None

    def __post_init__(self):
        if (self.beta is None) != (self.system is RatingSystem.ZERO):
            raise ValidationError(
                f"beta prior must be given exactly when the system is not ZERO (system={self.system.value})"
            )

    def to_dict(self) -> dict:
        out = {"system": self.system.value}
        for name in ("delta", "h", "beta", "gamma"):
            p = getattr(self, name)
            if p is not None:
                out[name] = {"mean": p.mean, "var": p.var}
        return out

    @classmethod
    def from_dict(cls, data: dict, system: RatingSystem | None = None) -> "PriorSet":
        """Build from the priors.json mapping.

        When ``system`` is given it overrides the file's own system; a
        ``beta`` entry is then dropped for ZERO.
        """
        sys_ = system or RatingSystem.parse(data["system"])

        def g(name):
            entry = data[name]
            return GaussianPrior(float(entry["mean"]), float(entry["var"]))

        try:
            beta = None
            if sys_ is not RatingSystem.ZERO:
                if "beta" not in data:
                    raise ValidationError(f"priors for {sys_.value} require a beta entry")
                beta = g("beta")
            return cls(system=sys_, delta=g("delta"), h=g("h"), gamma=g("gamma"), beta=beta)
        except KeyError as exc:
            raise ValidationError(f"priors missing entry {exc.args[0]!r}") from None

    @classmethod
    def load(cls, path: str | Path, system: RatingSystem | None = None) -> "PriorSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), system)


# Calibrated priors for the 2013-14 season (posteriors of 2012-13).
SEASON_PRIORS = {
    RatingSystem.ZERO: PriorSet(
        RatingSystem.ZERO,
        delta=GaussianPrior(0.335, 1 / 300),
        h=GaussianPrior(0.225, 1 / 100),
        gamma=GaussianPrior(-1.00, 1 / 5.79),
    ),
    RatingSystem.UEFACR: PriorSet(
        RatingSystem.UEFACR,
        delta=GaussianPrior(0.335, 1 / 300),
        h=GaussianPrior(0.225, 1 / 100),
        gamma=GaussianPrior(-1.13, 1 / 5.00),
        beta=GaussianPrior(0.250, 1 / 100),
    ),
    RatingSystem.FCWR: PriorSet(
        RatingSystem.FCWR,
        delta=GaussianPrior(0.335, 1 / 300),
        h=GaussianPrior(0.225, 1 / 100),
        gamma=GaussianPrior(-2.00, 1 / 2.30),
        beta=GaussianPrior(0.430, 1 / 120),
    ),
}


def outcome_probs(theta: ParamState, home: int, away: int, neutral: bool = False) -> OutcomeProbs:
    """Outcome probabilities for team index ``home`` hosting ``away``.

    ``neutral`` drops the home effect; it is an extension and off by default.
    """
    if home == away:
        raise ValidationError("home and away team must differ")
    if not theta.delta > 0:
        raise InvalidParameterError(f"cut-off delta must be positive, got {theta.delta}")
    mu = theta.s[home] - theta.s[away] + (0.0 if neutral else theta.h)
    return OutcomeProbs(*probs_from_mean(mu, theta.delta))


@dataclass
class MatchDesign:
    """Matches compiled to index arrays plus per-row log-term coefficients."""

    home: np.ndarray
    away: np.ndarray
    home_weight: np.ndarray  # 1.0, or 0.0 on neutral ground
    coef: np.ndarray  # (rows, 3)
    team_ptr: np.ndarray = field(repr=False)
    team_rows: np.ndarray = field(repr=False)

    @property
    def n_rows(self) -> int:
        return len(self.home)


def build_design(
    n_teams: int,
    home: Sequence[int],
    away: Sequence[int],
    coef: np.ndarray,
    neutral: Sequence[bool] | None = None,
) -> MatchDesign:
    home = np.asarray(home, dtype=np.int64)
    away = np.asarray(away, dtype=np.int64)
    coef = np.asarray(coef, dtype=float).reshape(-1, 3)
    if neutral is None:
        hw = np.ones(len(home))
    else:
        hw = np.where(np.asarray(neutral, dtype=bool), 0.0, 1.0)
    # CSR incidence list: rows touching each team
    buckets: list[list[int]] = [[] for _ in range(n_teams)]
    for r, (i, j) in enumerate(zip(home, away)):
        buckets[i].append(r)
        buckets[j].append(r)
    ptr = np.zeros(n_teams + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(b) for b in buckets])
    rows = np.array([r for b in buckets for r in b], dtype=np.int64)
    return MatchDesign(home, away, hw, coef, ptr, rows)


def match_design(matches: Sequence[MatchRecord], index: dict[str, int]) -> MatchDesign:
    """Observed matches as one-hot log-likelihood rows."""
    coef = np.zeros((len(matches), 3))
    for r, m in enumerate(matches):
        coef[r, m.outcome - 1] = 1.0
    return build_design(
        len(index),
        [index[m.home] for m in matches],
        [index[m.away] for m in matches],
        coef,
        [m.neutral for m in matches],
    )


@njit(cache=True)
def _design_loglik(s, delta, h, home, away, hw, coef):
    total = 0.0
    for r in range(home.shape[0]):
        mu = s[home[r]] - s[away[r]] + h * hw[r]
        total += weighted_log_term(mu, delta, coef[r, 0], coef[r, 1], coef[r, 2])
    return total


def design_log_likelihood(theta: ParamState, design: MatchDesign) -> float:
    if design.n_rows == 0:
        return 0.0
    if not theta.delta > 0:
        return -math.inf
    return float(
        _design_loglik(
            np.asarray(theta.s, float), theta.delta, theta.h,
            design.home, design.away, design.home_weight, design.coef,
        )
    )


def log_likelihood(theta: ParamState, matches: Sequence[MatchRecord], index: dict[str, int]) -> float:
    """Categorical log-likelihood of observed outcomes; -inf on underflow."""
    return design_log_likelihood(theta, match_design(matches, index))


def log_prior(theta: ParamState, priors: PriorSet, std: StandardizedRatings) -> float:
    """Hierarchical prior log-density, normalizing constants included.

    Strengths are N(beta * x_i, exp(2 gamma_s)) with x_i the standardized
    external rating; for ZERO the mean is 0. Returns -inf when delta <= 0.
    """
    if std.system is not priors.system:
        raise ValidationError(
            f"standardized ratings are {std.system.value} but priors are {priors.system.value}"
        )
    if not theta.delta > 0:
        return -math.inf
    x = std.as_array()
    s = np.asarray(theta.s, float)
    if len(x) != len(s):
        raise ValidationError(f"{len(s)} strengths but {len(x)} standardized ratings")
    var_s = math.exp(2.0 * theta.gamma_s)
    total = 0.0
    if priors.system is RatingSystem.ZERO:
        eta = np.zeros_like(s)
    else:
        if theta.beta is None:
            raise ValidationError("beta required for a non-ZERO system")
        eta = theta.beta * x
        total += gaussian_logpdf(theta.beta, priors.beta.mean, priors.beta.var)
    d = s - eta
    total += float(np.sum(-0.5 * (LOG_2PI + math.log(var_s) + d * d / var_s)))
    total += gaussian_logpdf(theta.delta, priors.delta.mean, priors.delta.var)
    total += gaussian_logpdf(theta.h, priors.h.mean, priors.h.var)
    total += gaussian_logpdf(theta.gamma_s, priors.gamma.mean, priors.gamma.var)
    return float(total)
