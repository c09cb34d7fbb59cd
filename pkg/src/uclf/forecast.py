"""Posterior-predictive forecasts, Brier/accuracy scoring, season evaluation, ranking."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import MatchRecord, Phase, RatingSystem, StandardizedRatings, Team, standardize_ratings
from .errors import ValidationError
from .inference import PosteriorDraws, SamplerConfig, run_mcmc, summarize
from .model import SEASON_PRIORS, OutcomeProbs, PriorSet, normal_cdf_array, probs_from_mean

log = logging.getLogger(__name__)

PHASE_GROUPS = ("GROUP", "R16", "QF+SF+FINAL", "ALL")


def phase_group(phase: Phase) -> str:
    if phase is Phase.GROUP:
        return "GROUP"
    if phase is Phase.R16:
        return "R16"
    return "QF+SF+FINAL"


@dataclass(frozen=True)
class Forecast:
    match_id: str
    home: str
    away: str
    predictive: OutcomeProbs
    plug_in: OutcomeProbs
    n_draws_used: int


def draw_probs(draws: PosteriorDraws, home: str, away: str, neutral: bool = False) -> np.ndarray:
    """(n_draws, 3) outcome probabilities, one row per retained draw."""
    for abbrev in (home, away):
        if abbrev not in draws.teams:
            raise ValidationError(f"unknown team {abbrev!r}")
    if home == away:
        raise ValidationError("home and away team must differ")
    flat = draws.flat()
    n = draws.n_teams
    mu = flat[:, draws.teams.index(home)] - flat[:, draws.teams.index(away)]
    if not neutral:
        mu = mu + flat[:, n + 1]
    delta = flat[:, n]
    p_win = normal_cdf_array(np.ascontiguousarray(mu - delta))
    p_loss = normal_cdf_array(np.ascontiguousarray(-delta - mu))
    return np.column_stack([p_win, 1.0 - p_win - p_loss, p_loss])


def forecast_match(
    draws: PosteriorDraws, home: str, away: str, match_id: str = "", neutral: bool = False
) -> Forecast:
    """Average outcome probabilities over draws, plus the plug-in at the posterior mean."""
    per_draw = draw_probs(draws, home, away, neutral)
    if per_draw.shape[0] == 0:
        raise ValidationError("no posterior draws")
    theta_bar = draws.flat().mean(axis=0)
    n = draws.n_teams
    mu_bar = theta_bar[draws.teams.index(home)] - theta_bar[draws.teams.index(away)]
    if not neutral:
        mu_bar += theta_bar[n + 1]
    plug = probs_from_mean(mu_bar, theta_bar[n])
    return Forecast(
        match_id, home, away,
        OutcomeProbs.from_array(per_draw.mean(axis=0)),
        OutcomeProbs(*plug),
        per_draw.shape[0],
    )


def brier_score(probs, observed: int) -> float:
    """Sum of squared differences between a probability triple and the one-hot outcome."""
    p = np.asarray(probs.as_array() if isinstance(probs, OutcomeProbs) else probs, float)
    o = np.zeros(3)
    o[observed - 1] = 1.0
    return float(((p - o) ** 2).sum())


def brier(
    forecast: Forecast,
    observed: int,
    draws: PosteriorDraws | None = None,
    plug_in_source: str = "predictive",
    neutral: bool = False,
) -> tuple[float, float]:
    """(posterior-expected, plug-in) Brier scores.

    By default the plug-in scores the predictive-mean probabilities;
    ``plug_in_source="theta_bar"`` scores probabilities at the posterior
    mean parameters instead. Without draws the posterior-expected score
    falls back to the predictive-mean score.
    """
    if observed not in (1, 2, 3):
        raise ValidationError(f"observed outcome must be 1, 2 or 3, got {observed}")
    if plug_in_source == "predictive":
        plug = brier_score(forecast.predictive, observed)
    elif plug_in_source == "theta_bar":
        plug = brier_score(forecast.plug_in, observed)
    else:
        raise ValueError(f"unknown plug_in_source {plug_in_source!r}")
    if draws is None:
        return brier_score(forecast.predictive, observed), plug
    per_draw = draw_probs(draws, forecast.home, forecast.away, neutral)
    o = np.zeros(3)
    o[observed - 1] = 1.0
    expected = float(((per_draw - o) ** 2).sum(axis=1).mean())
    return expected, plug


def accuracy(forecast: Forecast, observed: int) -> float:
    """Predictive probability assigned to the observed outcome."""
    if observed not in (1, 2, 3):
        raise ValidationError(f"observed outcome must be 1, 2 or 3, got {observed}")
    return forecast.predictive[observed]


@dataclass(frozen=True)
class ScoredForecast:
    forecast: Forecast
    observed: int
    phase: Phase
    brier_posterior_expected: float
    brier_plug_in: float
    accuracy: float
    modal_correct: bool  # supplementary 0-1 accuracy, not the probability form


def score(forecast: Forecast, match: MatchRecord, draws: PosteriorDraws) -> ScoredForecast:
    expected, plug = brier(forecast, match.outcome, draws, neutral=match.neutral)
    p = forecast.predictive.as_array()
    return ScoredForecast(
        forecast, match.outcome, match.phase, expected, plug,
        accuracy(forecast, match.outcome), bool(int(np.argmax(p)) + 1 == match.outcome),
    )


@dataclass(frozen=True)
class PhaseRow:
    n: int
    brier: float
    accuracy: float
    brier_plug_in: float
    modal_accuracy: float


@dataclass
class EvaluationReport:
    system: RatingSystem
    rows: dict  # phase-group label -> PhaseRow
    scored: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            label: {
                "n_matches": r.n,
                "brier": r.brier,
                "accuracy": r.accuracy,
                "brier_plug_in": r.brier_plug_in,
                "modal_accuracy_supplementary": r.modal_accuracy,
            }
            for label, r in self.rows.items()
        }


def aggregate(scored: Sequence[ScoredForecast]) -> dict:
    buckets: dict[str, list[ScoredForecast]] = {label: [] for label in PHASE_GROUPS}
    for sf in scored:
        buckets[phase_group(sf.phase)].append(sf)
        buckets["ALL"].append(sf)
    rows = {}
    for label, items in buckets.items():
        if not items:
            continue
        rows[label] = PhaseRow(
            len(items),
            float(np.mean([s.brier_posterior_expected for s in items])),
            float(np.mean([s.accuracy for s in items])),
            float(np.mean([s.brier_plug_in for s in items])),
            float(np.mean([s.modal_correct for s in items])),
        )
    return rows


def cutoff_stages(matches: Sequence[MatchRecord], policy: str = "phase") -> list[list[MatchRecord]]:
    """Split a season into forecasting stages, in cutoff order.

    ``phase``: the whole group stage, then each knockout leg. ``matchday``:
    one stage per calendar date. Each stage is forecast from all matches of
    the earlier stages.
    """
    if policy == "phase":
        keyed: dict = {}
        for m in matches:
            keyed.setdefault(m.stage, []).append(m)
        stages = [keyed[k] for k in sorted(keyed)]
        for earlier, later in zip(stages, stages[1:]):
            last = max((m.date for m in earlier if m.date), default=None)
            first = min((m.date for m in later if m.date), default=None)
            if last and first and last > first:
                raise ValidationError(
                    f"match dated {last} in stage {earlier[0].phase.value} leg {earlier[0].leg} "
                    f"is after {first} in stage {later[0].phase.value} leg {later[0].leg}"
                )
        return stages
    if policy == "matchday":
        if any(m.date is None for m in matches):
            raise ValidationError("matchday cutoffs need a date on every match")
        keyed = {}
        for m in matches:
            keyed.setdefault(m.date, []).append(m)
        return [keyed[d] for d in sorted(keyed)]
    raise ValidationError(f"unknown cutoff policy {policy!r}")


def available_before(matches: Sequence[MatchRecord], target: MatchRecord, policy: str = "phase") -> list[MatchRecord]:
    """Matches a forecaster of ``target`` may condition on."""
    if policy == "phase":
        return [m for m in matches if m.stage < target.stage]
    if policy == "matchday":
        return [m for m in matches if m.date < target.date]
    raise ValidationError(f"unknown cutoff policy {policy!r}")


def evaluate_season(
    matches: Sequence[MatchRecord],
    priors: PriorSet,
    std: StandardizedRatings,
    config: SamplerConfig,
    cutoff_policy: str = "phase",
    on_fit=None,
) -> EvaluationReport:
    """Forecast every match from the information available before it and score."""
    stages = cutoff_stages(matches, cutoff_policy)
    scored: list[ScoredForecast] = []
    history: list[MatchRecord] = []
    fits = []
    for stage in stages:
        draws = run_mcmc(history, priors, std, config)
        if on_fit is not None:
            on_fit(stage, draws)
        fits.append({"stage": f"{stage[0].phase.value}/{stage[0].leg}", "n_conditioned": len(history)})
        for m in stage:
            fc = forecast_match(draws, m.home, m.away, m.match_id, m.neutral)
            scored.append(score(fc, m, draws))
        history.extend(stage)
    meta = {
        "cutoff_policy": cutoff_policy,
        "group_stage_information": "prior and external ratings only" if cutoff_policy == "phase" else "matchday",
        "fits": fits,
    }
    return EvaluationReport(priors.system, aggregate(scored), scored, meta)


@dataclass(frozen=True)
class RatingEntry:
    rank: int
    team: str
    rating: float
    sep: float
    sep_raw: float
    n_matches: int
    low_information: bool


def rank_teams(
    matches: Sequence[MatchRecord],
    teams: Sequence[Team],
    config: SamplerConfig,
    priors: PriorSet | None = None,
) -> list[RatingEntry]:
    """Zero-adjustment rating list from all season matches.

    Ratings are posterior-mean strengths standardized across teams (mean 0,
    SD 1 with the n-1 divisor); ``sep`` is the posterior SD on that same
    scale and ``sep_raw`` on the latent scale.
    """
    priors = priors or SEASON_PRIORS[RatingSystem.ZERO]
    if priors.system is not RatingSystem.ZERO:
        raise ValidationError("ranking uses the ZERO adjustment")
    std = standardize_ratings(teams, RatingSystem.ZERO)
    draws = run_mcmc(matches, priors, std, config)
    summary = summarize(draws, with_diagnostics=False)
    means = np.array([summary.strength(a).mean for a in draws.teams])
    sds = np.array([summary.strength(a).sd for a in draws.teams])
    spread = means.std(ddof=1) if len(means) > 1 else 0.0
    if not spread > 0:
        spread = 1.0
    z = (means - means.mean()) / spread
    played = {a: 0 for a in draws.teams}
    for m in matches:
        played[m.home] += 1
        played[m.away] += 1
    order = sorted(range(len(z)), key=lambda i: (-z[i], draws.teams[i]))
    return [
        RatingEntry(rank, draws.teams[i], float(z[i]), float(sds[i] / spread), float(sds[i]),
                    played[draws.teams[i]], played[draws.teams[i]] == 0)
        for rank, i in enumerate(order, start=1)
    ]
