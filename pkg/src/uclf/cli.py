"""Command-line entry point: ``uclf <command> [options]``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
validation failure. Progress goes to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import sys
import time
from importlib.resources import files
from pathlib import Path

from . import __version__
from .domain import (
    RatingSystem,
    group_balance_anova,
    load_matches,
    load_teams,
    rating_correlation,
    standardize_ratings,
)
from .errors import UCLFError, ValidationError
from .expert import fuse_forecast, load_opinions
from .forecast import available_before, evaluate_season, forecast_match, rank_teams
from .inference import (
    SamplerConfig,
    config_dict,
    diagnostics,
    read_draws_csv,
    PosteriorDraws,
    run_mcmc,
    summarize,
    write_draws_csv,
)
from .model import PriorSet

log = logging.getLogger("uclf")

DATA_DIR = files("uclf") / "data"
FORECAST_HEADER = ["match_id", "home", "away", "p_win", "p_draw", "p_loss", "plug_p_win", "plug_p_draw", "plug_p_loss"]
RATINGS_HEADER = ["rank", "abbrev", "rating", "sep"]
RHAT_WARN = 1.05
ESS_WARN = 400


class Manifest:
    def __init__(self, command: str):
        self.command = command
        self.inputs: dict[str, str] = {}
        self.config: dict = {}
        self.started = time.time()
        self.started_at = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")

    def add_input(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(path)
        self.inputs[str(path)] = hashlib.sha256(path.read_bytes()).hexdigest()
        return path

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "tool_version": __version__,
            "inputs": {k: f"sha256:{v}" for k, v in sorted(self.inputs.items())},
            "config": self.config,
            # excluded from the determinism contract
            "timing": {
                "started_at": self.started_at,
                "wall_clock_seconds": round(time.time() - self.started, 3),
            },
        }

    def write_sidecar(self, out: Path) -> None:
        _write_json(out.with_name(out.name + ".manifest.json"), self.to_dict())


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(data), fh, indent=2)
        fh.write("\n")


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        seed=args.seed,
        n_chains=args.chains,
        n_iter=args.iters,
        n_burnin=args.burnin if args.burnin is not None else args.iters // 2,
        thin=args.thin,
        target_accept=args.target_accept,
    )


def _load_season(args, man: Manifest):
    teams_path = man.add_input(args.teams or DATA_DIR / "teams.csv")
    matches_path = man.add_input(args.matches or DATA_DIR / "matches.csv")
    teams = load_teams(teams_path)
    return teams, load_matches(matches_path, teams)


def _load_priors(args, system: RatingSystem, man: Manifest) -> PriorSet:
    path = args.priors or DATA_DIR / f"priors_{system.value.lower()}.json"
    path = man.add_input(path)
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if "system" in raw and RatingSystem.parse(raw["system"]) is not system:
        log.warning("priors file %s is for %s; using it for %s", path, raw["system"], system.value)
    if system is RatingSystem.ZERO and "beta" in raw:
        log.warning("beta prior in %s is ignored for the ZERO adjustment", path)
    return PriorSet.from_dict(raw, system)


def _warn_convergence(diag: dict, label: str) -> None:
    bad = [
        name for name, d in diag.items()
        if not d.insufficient_variation and (d.r_hat > RHAT_WARN or d.ess < ESS_WARN)
    ]
    if bad:
        log.warning("%s: convergence warning (R-hat > %.2f or ESS < %d) for %s",
                    label, RHAT_WARN, ESS_WARN, ", ".join(bad))


def _posterior_dict(draws: PosteriorDraws, priors: PriorSet, man: Manifest, draws_file: str | None) -> dict:
    summary = summarize(draws)
    diag = diagnostics(draws)
    _warn_convergence(diag, "fit")
    return {
        "system": draws.system.value,
        "seed": draws.config.seed,
        "config": config_dict(draws.config),
        "teams": list(draws.teams),
        "priors": priors.to_dict(),
        "summary": summary.to_dict(),
        "diagnostics": {
            k: {"r_hat": d.r_hat, "ess": d.ess, "insufficient_variation": d.insufficient_variation}
            for k, d in diag.items()
        },
        "acceptance": draws.acceptance.mean(axis=0).round(6).tolist(),
        "draws_file": draws_file,
        "manifest": man.to_dict(),
    }


def cmd_fit(args) -> int:
    man = Manifest("fit")
    system = RatingSystem.parse(args.adjust)
    teams, matches = _load_season(args, man)
    priors = _load_priors(args, system, man)
    if args.cutoff_date:
        cutoff = dt.date.fromisoformat(args.cutoff_date)
        matches = [m for m in matches if m.date is not None and m.date <= cutoff]
    config = _sampler_config(args)
    man.config = {"adjust": system.value, "cutoff_date": args.cutoff_date, **config_dict(config)}
    std = standardize_ratings(teams, system)
    log.info("fitting %s on %d matches", system.value, len(matches))
    draws = run_mcmc(matches, priors, std, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    draws_file = None
    if args.draws:
        draws_file = "draws.csv"
        write_draws_csv(draws, out / draws_file)
    _write_json(out / "posterior.json", _posterior_dict(draws, priors, man, draws_file))
    log.info("wrote %s", out / "posterior.json")
    return 0


def _read_fixtures(path: Path, teams: list[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = {"match_id", "home", "away"} - set(reader.fieldnames)
        if missing:
            raise ValidationError(f"{path}:1: fixtures header missing {', '.join(sorted(missing))}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            for key in ("home", "away"):
                if row[key] not in teams:
                    raise ValidationError(f"{path}:{lineno}: unknown team {row[key]!r}")
            row["neutral"] = (row.get("neutral") or "").lower() in ("1", "true", "yes")
            rows.append(row)
        return rows


def _write_forecasts(path: Path, forecasts) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for f in forecasts:
            p, q = f.predictive, f.plug_in
            w.writerow([f.match_id, f.home, f.away,
                        f"{p.p_win:.6f}", f"{p.p_draw:.6f}", f"{p.p_loss:.6f}",
                        f"{q.p_win:.6f}", f"{q.p_draw:.6f}", f"{q.p_loss:.6f}"])


def cmd_forecast(args) -> int:
    man = Manifest("forecast")
    post_path = man.add_input(args.posterior)
    with open(post_path, encoding="utf-8") as fh:
        post = json.load(fh)
    draws_path = args.draws or (post_path.parent / post["draws_file"] if post.get("draws_file") else None)
    if draws_path is None:
        raise ValidationError(f"{post_path} has no draws; refit with --draws or pass --draws")
    draws_path = man.add_input(draws_path)
    values, has_beta = read_draws_csv(draws_path)
    system = RatingSystem(post["system"])
    draws = PosteriorDraws(values, tuple(post["teams"]), system, SamplerConfig(**post["config"]), None, None)
    fixtures = _read_fixtures(man.add_input(args.fixtures), post["teams"])
    man.config = {"adjust": system.value, "seed": post["seed"]}
    forecasts = [forecast_match(draws, r["home"], r["away"], r["match_id"], r["neutral"]) for r in fixtures]
    out = Path(args.out)
    _write_forecasts(out, forecasts)
    man.write_sidecar(out)
    log.info("wrote %d forecasts to %s", len(forecasts), out)
    return 0


def _systems(text: str) -> list[RatingSystem]:
    if text.lower() == "all":
        return list(RatingSystem)
    return [RatingSystem.parse(t) for t in text.split(",")]


def cmd_evaluate(args) -> int:
    man = Manifest("evaluate")
    teams, matches = _load_season(args, man)
    systems = _systems(args.adjust)
    if args.priors and len(systems) > 1:
        raise ValidationError("--priors applies to a single --adjust system")
    config = _sampler_config(args)
    man.config = {"adjust": [s.value for s in systems], "cutoff": args.cutoff, **config_dict(config)}
    report, metadata, forecasts = {}, {}, []
    for system in systems:
        priors = _load_priors(args, system, man)
        std = standardize_ratings(teams, system)

        def on_fit(stage, draws, system=system):
            log.info("%s: forecasting %s leg %d from %d draws", system.value,
                     stage[0].phase.value, stage[0].leg, draws.values.shape[0] * draws.values.shape[1])
            _warn_convergence(diagnostics(draws), f"{system.value} {stage[0].phase.value}/{stage[0].leg}")

        rep = evaluate_season(matches, priors, std, config, args.cutoff, on_fit=on_fit)
        report[system.value] = rep.to_dict()
        metadata[system.value] = rep.metadata
        forecasts.extend((system, s) for s in rep.scored)
    out = Path(args.out)
    _write_json(out, {"report": report, "metadata": metadata, "manifest": man.to_dict()})
    if args.forecasts_out:
        fo = Path(args.forecasts_out)
        with open(fo, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["system", "match_id", "phase", "home", "away", "observed", "p_win", "p_draw", "p_loss",
                        "brier_posterior_expected", "brier_plug_in", "accuracy"])
            for system, s in forecasts:
                p = s.forecast.predictive
                w.writerow([system.value, s.forecast.match_id, s.phase.value, s.forecast.home, s.forecast.away,
                            s.observed, f"{p.p_win:.6f}", f"{p.p_draw:.6f}", f"{p.p_loss:.6f}",
                            f"{s.brier_posterior_expected:.6f}", f"{s.brier_plug_in:.6f}", f"{s.accuracy:.6f}"])
        man.write_sidecar(fo)
    for system, rows in report.items():
        if args.quiet:
            break
        for label, r in rows.items():
            print(f"{system:7s} {label:12s} n={r['n_matches']:3d} brier={r['brier']:.3f} "
                  f"accuracy={r['accuracy']:.3f}", file=sys.stderr)
    return 0


def cmd_rank(args) -> int:
    man = Manifest("rank")
    teams, matches = _load_season(args, man)
    priors = _load_priors(args, RatingSystem.ZERO, man)
    config = _sampler_config(args)
    man.config = {"adjust": "ZERO", **config_dict(config)}
    entries = rank_teams(matches, teams, config, priors)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATINGS_HEADER)
        for e in entries:
            w.writerow([e.rank, e.team, f"{e.rating:.3f}", f"{e.sep:.3f}"])
    man.write_sidecar(out)
    for e in entries:
        if e.low_information:
            log.warning("%s played no matches; its rating is prior-driven", e.team)
    return 0


def cmd_fuse(args) -> int:
    man = Manifest("fuse")
    system = RatingSystem.parse(args.adjust)
    teams, matches = _load_season(args, man)
    priors = _load_priors(args, system, man)
    opinions = load_opinions(man.add_input(args.expert))
    config = _sampler_config(args)
    man.config = {"adjust": system.value, "target": args.target, **config_dict(config)}
    by_id = {m.match_id: m for m in matches}
    if args.target not in by_id:
        raise ValidationError(f"target match {args.target!r} not found in matches")
    target = by_id[args.target]
    history = available_before(matches, target, args.cutoff)
    std = standardize_ratings(teams, system)
    fc = fuse_forecast(history, priors, std, opinions, target, config)
    out = Path(args.out)
    _write_forecasts(out, [fc])
    man.write_sidecar(out)
    return 0


def cmd_balance(args) -> int:
    man = Manifest("balance")
    teams = load_teams(man.add_input(args.teams or DATA_DIR / "teams.csv"))
    report = {}
    for system in (RatingSystem.UEFACR, RatingSystem.FCWR):
        std = standardize_ratings(teams, system)
        res = group_balance_anova(std, teams)
        report[system.value] = {
            "F": res.F,
            "df": [res.df_between, res.df_within],
            "group_means": res.group_means,
            "se_group_mean": res.se_group_mean,
        }
    corr = rating_correlation(teams)
    report["correlation"] = {"r": corr.r, "ci95": list(corr.ci95), "n": corr.n, "ci_method": "fisher-z"}
    if not args.quiet:
        for system in ("UEFACR", "FCWR"):
            print(f"F_{system} = {report[system]['F']:.3f}  SE = {report[system]['se_group_mean']:.3f}",
                  file=sys.stderr)
        print(f"r = {corr.r:.3f}  95% CI [{corr.ci95[0]:.3f}; {corr.ci95[1]:.3f}]", file=sys.stderr)
    if args.out:
        report["manifest"] = man.to_dict()
        _write_json(Path(args.out), report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uclf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"uclf {__version__}")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)

    def data_opts(sp, priors=True):
        sp.add_argument("--teams", help="teams.csv (default: bundled 2013-14 season)")
        sp.add_argument("--matches", help="matches.csv (default: bundled 2013-14 season)")
        if priors:
            sp.add_argument("--priors", help="priors.json (default: bundled priors for --adjust)")

    def sampler_opts(sp):
        sp.add_argument("--seed", type=int, required=True)
        sp.add_argument("--chains", type=int, default=4)
        sp.add_argument("--iters", type=int, default=20000)
        sp.add_argument("--burnin", type=int, default=None, help="default: half of --iters")
        sp.add_argument("--thin", type=int, default=1)
        sp.add_argument("--target-accept", type=float, default=0.35)

    sp = sub.add_parser("fit", help="sample the posterior and write posterior.json")
    data_opts(sp)
    sp.add_argument("--adjust", default="fcwr", help="zero, uefacr or fcwr")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--draws", action="store_true", help="also write draws.csv")
    sp.add_argument("--cutoff-date", help="only condition on matches dated on or before this ISO date")
    sampler_opts(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("forecast", help="posterior-predictive forecasts for fixtures")
    sp.add_argument("--posterior", required=True)
    sp.add_argument("--draws", help="draws.csv (default: the file named in posterior.json)")
    sp.add_argument("--fixtures", required=True, help="CSV with match_id,home,away[,neutral]")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="season forecast evaluation by phase")
    data_opts(sp)
    sp.add_argument("--adjust", default="all", help="zero, uefacr, fcwr, a comma list, or all")
    sp.add_argument("--cutoff", choices=["phase", "matchday"], default="phase")
    sp.add_argument("--out", required=True)
    sp.add_argument("--forecasts-out", help="optional per-match CSV")
    sampler_opts(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("rank", help="zero-adjustment rating and ranking list")
    data_opts(sp)
    sp.add_argument("--out", required=True)
    sampler_opts(sp)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("fuse", help="forecast a match with expert opinion fused in")
    data_opts(sp)
    sp.add_argument("--adjust", default="fcwr")
    sp.add_argument("--expert", required=True)
    sp.add_argument("--target", required=True, help="match_id of the forthcoming match")
    sp.add_argument("--cutoff", choices=["phase", "matchday"], default="phase")
    sp.add_argument("--out", required=True)
    sampler_opts(sp)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("balance", help="group-balance ANOVA and rating correlation")
    sp.add_argument("--teams")
    sp.add_argument("--out", help="optional JSON report")
    sp.set_defaults(func=cmd_balance)
    return p


def _configure_logging(quiet: bool) -> None:
    # own handler on the package logger only, replaced on repeated in-process calls
    pkg = logging.getLogger("uclf")
    for h in [h for h in pkg.handlers if getattr(h, "_uclf_cli", False)]:
        pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._uclf_cli = True
    pkg.addHandler(handler)
    pkg.setLevel(logging.WARNING if quiet else logging.INFO)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc.args[0]}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (UCLFError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
