"""Fusing subjective outcome probabilities through implicit Dirichlet-style data.

An opinion (pi_ex, w) on a forthcoming match adds sum_k a_k log pi_k to the
log posterior, with a_k = w * pi_ex_k - 1 and pi_k the model probability.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import MatchRecord, StandardizedRatings
from .errors import ParseError, ValidationError
from .forecast import Forecast, forecast_match
from .inference import SamplerConfig, sample_design
from .model import OutcomeProbs, PriorSet, build_design

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExpertOpinion:
    match_id: str
    probs: OutcomeProbs
    weight: float

    def __post_init__(self):
        p = self.probs.as_array()
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValidationError(f"expert probabilities for {self.match_id} are not on the simplex: {p}")
        if not self.weight > 0:
            raise ValidationError(f"expert weight must be positive, got {self.weight}")


def coefficients(opinion: ExpertOpinion) -> np.ndarray:
    a = opinion.weight * opinion.probs.as_array() - 1.0
    # w * (1/3) - 1 is not exactly 0 in floating point for w = 3
    return np.where(np.isclose(a, 0.0, rtol=0.0, atol=1e-12), 0.0, a)


def expert_log_term(opinion: ExpertOpinion, match_probs: OutcomeProbs) -> float:
    """sum_k a_k log pi_k; -inf if some pi_k <= 0 carries a nonzero a_k."""
    if not opinion.weight > 0:
        raise ValidationError(f"expert weight must be positive, got {opinion.weight}")
    total = 0.0
    for a, p in zip(coefficients(opinion), match_probs.as_array()):
        if a == 0.0:
            continue
        if p <= 0.0:
            return -math.inf
        total += a * math.log(p)
    return float(total)


def load_opinions(path: str | Path) -> list[ExpertOpinion]:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from None
    if not isinstance(raw, list):
        raise ValidationError(f"{path}: expected a JSON list of opinions")
    out = []
    for i, entry in enumerate(raw):
        try:
            out.append(
                ExpertOpinion(
                    str(entry["match_id"]),
                    OutcomeProbs(float(entry["p_win"]), float(entry["p_draw"]), float(entry["p_loss"])),
                    float(entry["weight"]),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: opinion #{i}: {exc}") from None
    return out


def fuse_forecast(
    matches: Sequence[MatchRecord],
    priors: PriorSet,
    std: StandardizedRatings,
    opinions: Sequence[ExpertOpinion],
    target: MatchRecord,
    config: SamplerConfig,
) -> Forecast:
    """Posterior-predictive forecast of ``target`` with expert terms in the target density.

    ``matches`` is the conditioning set; the target's own result is never
    used. Several opinions on the target add independent terms. Opinions
    about other matches are ignored.
    """
    index = {a: i for i, a in enumerate(std.order)}
    for m in list(matches) + [target]:
        for abbrev in (m.home, m.away):
            if abbrev not in index:
                raise ValidationError(f"match {m.match_id}: team {abbrev} has no rating entry")
    observed_ids = {m.match_id for m in matches}
    if target.match_id in observed_ids:
        raise ValidationError(f"target {target.match_id} is among the conditioning matches")

    home, away, coef, neutral = [], [], [], []
    for m in matches:
        one_hot = np.zeros(3)
        one_hot[m.outcome - 1] = 1.0
        home.append(index[m.home])
        away.append(index[m.away])
        coef.append(one_hot)
        neutral.append(m.neutral)
    used = 0
    for op in opinions:
        if op.match_id != target.match_id:
            if op.match_id in observed_ids:
                log.warning("ignoring expert opinion on already observed match %s", op.match_id)
            else:
                log.warning("ignoring expert opinion on %s (not the target)", op.match_id)
            continue
        a = coefficients(op)
        home.append(index[target.home])
        away.append(index[target.away])
        coef.append(a)
        neutral.append(target.neutral)
        used += 1
    design = build_design(len(index), home, away, np.array(coef).reshape(-1, 3), neutral)
    draws = sample_design(design, priors, std, config)
    if used:
        log.info("fused %d expert opinion(s) on %s", used, target.match_id)
    return forecast_match(draws, target.home, target.away, target.match_id, target.neutral)
