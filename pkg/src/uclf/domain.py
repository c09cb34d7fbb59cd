"""Teams, ratings and match results: ingestion, validation, descriptive stats."""

from __future__ import annotations

import csv
import datetime as dt
import enum
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateError, ParseError, ValidationError

log = logging.getLogger(__name__)

GROUPS = "ABCDEFGH"
TEAMS_HEADER = ["team_id", "name", "abbrev", "country", "pot", "group", "uefacr", "fcwr"]
MATCHES_HEADER = ["match_id", "phase", "leg", "date", "home", "away", "home_goals", "away_goals", "outcome"]


class RatingSystem(enum.Enum):
    ZERO = "ZERO"
    UEFACR = "UEFACR"
    FCWR = "FCWR"

    @classmethod
    def parse(cls, text: str) -> "RatingSystem":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ValidationError(f"unknown rating system {text!r}; expected zero, uefacr or fcwr") from None


class Phase(enum.Enum):
    GROUP = "GROUP"
    R16 = "R16"
    QF = "QF"
    SF = "SF"
    FINAL = "FINAL"

    @property
    def order(self) -> int:
        return list(Phase).index(self)


@dataclass(frozen=True)
class Team:
    team_id: int
    name: str
    abbrev: str
    country: str
    pot: int
    group: str
    ratings: dict = field(default_factory=dict, hash=False, compare=False)

    def rating(self, system: RatingSystem) -> float:
        return self.ratings[system]


@dataclass(frozen=True)
class MatchRecord:
    match_id: str
    phase: Phase
    leg: int
    date: dt.date | None
    home: str
    away: str
    outcome: int
    home_goals: int | None = None
    away_goals: int | None = None
    neutral: bool = False

    @property
    def stage(self) -> tuple[int, int]:
        """Information-cutoff stage: all group matches share one stage."""
        if self.phase is Phase.GROUP:
            return (0, 0)
        return (self.phase.order, self.leg)


def outcome_from_goals(home_goals: int, away_goals: int) -> int:
    if home_goals > away_goals:
        return 1
    if home_goals == away_goals:
        return 2
    return 3


def _read_rows(path: Path, header: list[str], required: Iterable[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            return None
        cols = [c.strip() for c in first]
        missing = [c for c in required if c not in cols]
        if missing:
            raise ParseError(path, 1, f"header missing column(s) {', '.join(missing)}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) > len(cols):
                raise ParseError(path, lineno, f"expected {len(cols)} fields, got {len(raw)}")
            raw = raw + [""] * (len(cols) - len(raw))
            rows.append((lineno, {c: v.strip() for c, v in zip(cols, raw)}))
        return rows


def load_teams(path: str | Path) -> list[Team]:
    """Read and validate a teams.csv file.

    A partial team set (not 32 teams in an 8x4 layout) is accepted with a
    warning so small fixtures can be used.
    """
    path = Path(path)
    rows = _read_rows(path, TEAMS_HEADER, TEAMS_HEADER)
    if rows is None:
        log.warning("%s is empty; no teams loaded", path)
        return []
    teams: list[Team] = []
    seen: dict[str, int] = {}
    for lineno, row in rows:
        try:
            team_id = int(row["team_id"])
            pot = int(row["pot"])
            ratings = {}
            for key, system in (("uefacr", RatingSystem.UEFACR), ("fcwr", RatingSystem.FCWR)):
                if row[key] != "":
                    ratings[system] = float(row[key])
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        abbrev, group, country = row["abbrev"], row["group"].upper(), row["country"].upper()
        if not re.fullmatch(r"[A-Z0-9]{3}", abbrev):
            raise ParseError(path, lineno, f"abbrev must be a 3-letter code, got {abbrev!r}")
        if pot not in (1, 2, 3, 4):
            raise ParseError(path, lineno, f"pot must be 1-4, got {pot}")
        if group not in GROUPS or len(group) != 1:
            raise ParseError(path, lineno, f"group must be a letter A-H, got {group!r}")
        if not re.fullmatch(r"[A-Z]{3}", country):
            raise ParseError(path, lineno, f"country must be a 3-letter code, got {country!r}")
        for system, value in ratings.items():
            if not (value >= 0 and math.isfinite(value)):
                raise ParseError(path, lineno, f"{system.value} rating must be non-negative, got {value}")
        if abbrev in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate abbrev {abbrev} (first on line {seen[abbrev]})")
        seen[abbrev] = lineno
        teams.append(Team(team_id, row["name"], abbrev, country, pot, group, ratings))

    if len(teams) != 32:
        log.warning("%s holds %d teams; a complete season has 32", path, len(teams))
    else:
        by_group = _count(t.group for t in teams)
        by_pot = _count(t.pot for t in teams)
        if any(by_group.get(g, 0) != 4 for g in GROUPS) or any(by_pot.get(p, 0) != 8 for p in (1, 2, 3, 4)):
            log.warning("%s: groups or pots are not 4-per-group / 8-per-pot", path)
    return teams


def _count(values: Iterable) -> dict:
    out: dict = {}
    for v in values:
        out[v] = out.get(v, 0) + 1
    return out


def load_matches(path: str | Path, teams: Sequence[Team]) -> list[MatchRecord]:
    """Read matches.csv, resolving abbrevs and deriving outcomes from goals.

    Returned records are sorted by (date, stage, match_id).
    """
    path = Path(path)
    rows = _read_rows(path, MATCHES_HEADER, [c for c in MATCHES_HEADER if c != "outcome"])
    if rows is None:
        return []
    known = {t.abbrev for t in teams}
    team_group = {t.abbrev: t.group for t in teams}
    matches: list[MatchRecord] = []
    seen_ids: set[str] = set()
    seen_pairs: set[tuple[str, str]] = set()
    for lineno, row in rows:
        try:
            phase = Phase(row["phase"].upper())
        except ValueError:
            raise ParseError(path, lineno, f"unknown phase {row['phase']!r}") from None
        try:
            leg = int(row["leg"])
            date = dt.date.fromisoformat(row["date"]) if row["date"] else None
            hg = int(row["home_goals"]) if row["home_goals"] != "" else None
            ag = int(row["away_goals"]) if row["away_goals"] != "" else None
            outcome = int(row["outcome"]) if row.get("outcome", "") != "" else None
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
        neutral = row.get("neutral", "").lower() in ("1", "true", "yes")
        mid, home, away = row["match_id"], row["home"], row["away"]
        if not mid:
            raise ParseError(path, lineno, "empty match_id")
        if mid in seen_ids:
            raise ValidationError(f"{path}:{lineno}: duplicate match_id {mid}")
        seen_ids.add(mid)
        if leg not in (1, 2) or (phase is Phase.FINAL and leg != 1):
            raise ValidationError(f"{path}:{lineno}: invalid leg {leg} for phase {phase.value}")
        for abbrev in (home, away):
            if abbrev not in known:
                raise ValidationError(f"{path}:{lineno}: unknown team abbrev {abbrev!r}")
        if home == away:
            raise ValidationError(f"{path}:{lineno}: home and away are both {home}")
        if (hg is None) != (ag is None):
            raise ValidationError(f"{path}:{lineno}: give both goal counts or neither")
        if hg is not None and (hg < 0 or ag < 0):
            raise ValidationError(f"{path}:{lineno}: goal counts must be non-negative")
        if hg is not None:
            derived = outcome_from_goals(hg, ag)
            if outcome is not None and outcome != derived:
                raise ValidationError(
                    f"{path}:{lineno}: outcome {outcome} contradicts score {hg}-{ag}"
                )
            outcome = derived
        if outcome not in (1, 2, 3):
            raise ValidationError(f"{path}:{lineno}: outcome must be 1, 2 or 3 (or goals given)")
        if phase is Phase.GROUP:
            if team_group.get(home) != team_group.get(away):
                raise ValidationError(f"{path}:{lineno}: group match between different groups")
            if (home, away) in seen_pairs:
                raise ValidationError(f"{path}:{lineno}: {home} hosts {away} twice in the group stage")
            seen_pairs.add((home, away))
        matches.append(MatchRecord(mid, phase, leg, date, home, away, outcome, hg, ag, neutral))
    matches.sort(key=lambda m: (m.date or dt.date.min, m.stage, m.match_id))
    return matches


@dataclass(frozen=True)
class StandardizedRatings:
    system: RatingSystem
    values: dict  # abbrev -> x~
    mean_used: float
    sd_used: float
    order: tuple = ()

    def as_array(self, order: Sequence[str] | None = None) -> np.ndarray:
        keys = order if order is not None else self.order
        return np.array([self.values[k] for k in keys], dtype=float)


def standardize_ratings(teams: Sequence[Team], system: RatingSystem) -> StandardizedRatings:
    """Centre and scale one external rating (sample SD, n-1) over the team set."""
    order = tuple(t.abbrev for t in teams)
    if system is RatingSystem.ZERO:
        return StandardizedRatings(system, {a: 0.0 for a in order}, 0.0, 1.0, order)
    try:
        raw = np.array([t.rating(system) for t in teams], dtype=float)
    except KeyError:
        missing = [t.abbrev for t in teams if system not in t.ratings]
        raise ValidationError(f"no {system.value} rating for {', '.join(missing)}") from None
    if len(raw) < 2:
        raise DegenerateError("need at least two teams to standardize ratings")
    mean = float(raw.mean())
    sd = float(raw.std(ddof=1))
    if not sd > 0:
        raise DegenerateError(f"{system.value} ratings have zero spread")
    x = (raw - mean) / sd
    return StandardizedRatings(system, dict(zip(order, x.tolist())), mean, sd, order)


@dataclass(frozen=True)
class AnovaResult:
    F: float
    group_means: dict
    se_group_mean: float
    ss_between: float
    ss_within: float
    ss_total: float
    df_between: int
    df_within: int


def group_balance_anova(std: StandardizedRatings, teams: Sequence[Team]) -> AnovaResult:
    """One-way ANOVA of standardized ratings on group (complete 8x4 draw only)."""
    members: dict[str, list[float]] = {}
    for t in teams:
        members.setdefault(t.group, []).append(std.values[t.abbrev])
    if sorted(members) != list(GROUPS) or any(len(v) != 4 for v in members.values()):
        sizes = {g: len(members.get(g, [])) for g in GROUPS}
        raise ValidationError(f"ANOVA needs 8 groups of 4 teams, got {sizes}")
    allx = np.concatenate([members[g] for g in GROUPS])
    grand = allx.mean()
    means = {g: float(np.mean(members[g])) for g in GROUPS}
    ss_between = float(sum(4 * (means[g] - grand) ** 2 for g in GROUPS))
    ss_within = float(sum(((np.array(members[g]) - means[g]) ** 2).sum() for g in GROUPS))
    ss_total = float(((allx - grand) ** 2).sum())
    k, n = len(GROUPS), len(allx)
    ms_within = ss_within / (n - k)
    if ss_between == 0:
        F = 0.0
    elif ms_within == 0:
        F = math.inf
    else:
        F = (ss_between / (k - 1)) / ms_within
    return AnovaResult(F, means, math.sqrt(ms_within / 4), ss_between, ss_within, ss_total, k - 1, n - k)


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    ci95: tuple[float, float]
    n: int


def rating_correlation(teams: Sequence[Team]) -> CorrelationResult:
    """Pearson r between raw UEFACR and FCWR, with a Fisher-z 95% interval."""
    pairs = [
        (t.ratings[RatingSystem.UEFACR], t.ratings[RatingSystem.FCWR])
        for t in teams
        if RatingSystem.UEFACR in t.ratings and RatingSystem.FCWR in t.ratings
    ]
    if len(pairs) < 3:
        raise ValidationError(f"need at least 3 teams rated in both systems, got {len(pairs)}")
    x, y = np.array(pairs).T
    if x.std() == 0 or y.std() == 0:
        raise DegenerateError("correlation undefined: a rating system has zero variance")
    xc, yc = x - x.mean(), y - y.mean()
    r = float(np.clip((xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc)), -1.0, 1.0))
    n = len(pairs)
    if abs(r) == 1.0 or n <= 3:
        return CorrelationResult(r, (r, r) if abs(r) == 1.0 else (-1.0, 1.0), n)
    z = math.atanh(r)
    half = stats.norm.ppf(0.975) / math.sqrt(n - 3)
    return CorrelationResult(r, (math.tanh(z - half), math.tanh(z + half)), n)


@dataclass(frozen=True)
class StandingRow:
    team: str
    points: int
    wins: int
    draws: int
    losses: int

    @property
    def played(self) -> int:
        return self.wins + self.draws + self.losses


def group_standings(matches: Sequence[MatchRecord], group: str, teams: Sequence[Team]) -> list[StandingRow]:
    """Points table (3/1/0) for one group; ties broken alphabetically by abbrev."""
    members = [t.abbrev for t in teams if t.group == group]
    tally = {a: [0, 0, 0] for a in members}
    for m in matches:
        if m.phase is not Phase.GROUP or m.home not in tally or m.away not in tally:
            continue
        h, a = tally[m.home], tally[m.away]
        if m.outcome == 1:
            h[0] += 1
            a[2] += 1
        elif m.outcome == 2:
            h[1] += 1
            a[1] += 1
        else:
            h[2] += 1
            a[0] += 1
    rows = [StandingRow(t, 3 * w + d, w, d, l) for t, (w, d, l) in tally.items()]
    rows.sort(key=lambda r: (-r.points, r.team))
    return rows


def team_index(teams: Sequence[Team]) -> dict[str, int]:
    return {t.abbrev: i for i, t in enumerate(teams)}
