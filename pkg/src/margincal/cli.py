"""Pipeline orchestrator.

Five steps communicate through persisted artifacts in the output directory:

    fit           -> model.json
    conservative  -> conservative.json
    optimize      -> tradeoff.csv
    uq            -> uq_report.json + uq_outcomes.csv
    report        -> report_*.csv + report_summary.json

`run-all` chains them. Reruns with identical config and seed reproduce all
artifacts byte for byte. Exit codes: 0 success, 1 numerical failure,
2 configuration error.
"""

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import ConfigError, InputError, MargincalError
from .cycle import MarginVector, initial_design
from .gp import FitConfig, fit_error_model
from .margins import MarginOptProblem, tradeoff_sweep
from .problems import DesignProblem, build_beam_doe, problem_from_config, toy_error_model
from .rbdo import conservative_values
from .uq import full_uq
from . import io as artio

_STEPS = ("fit", "conservative", "optimize", "uq", "report")


@dataclass
class RunConfig:
    """Parsed run configuration (file values plus command-line overrides)."""

    path: Path
    problem: DesignProblem
    raw: dict
    seed: int
    out: Path
    jobs: int
    m_optimize: int
    m_uq: int
    caps: list[float]
    k: Optional[MarginVector]
    uq_cap: Optional[float]
    doe_n_sigma: float
    fit_config: FitConfig
    include_error_mean: bool
    max_generations: int

    @property
    def meta(self) -> artio.Meta:
        return artio.Meta(artio.config_hash(self.path), self.seed)


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    overrides = overrides or {}

    problem = problem_from_config(raw)

    def pick(key, default):
        if overrides.get(key) is not None:
            return overrides[key]
        return raw.get(key, default)

    out = pick("out", "runs/" + str(raw.get("problem", "run")))
    env_out = os.environ.get("MARGINCAL_OUT")
    if overrides.get("out") is None and env_out:
        out = env_out

    fit_raw = raw.get("fit", {}) or {}
    mode = fit_raw.get("mode", "mle")
    try:
        fit_config = FitConfig(
            n_starts=int(fit_raw.get("n_starts", 8)),
            nugget=float(fit_raw.get("nugget", 1e-10)),
            seed=int(fit_raw.get("seed", 0)),
            mode=mode,
            lengthscales=(
                tuple(float(v) for v in fit_raw["lengthscales"])
                if "lengthscales" in fit_raw
                else None
            ),
        )
    except (InputError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad fit block: {exc}") from exc

    mean_model = raw.get("mean_model", "lofi_plus_error_mean")
    if mean_model not in ("lofi_raw", "lofi_plus_error_mean"):
        raise ConfigError(f"mean_model must be lofi_raw or lofi_plus_error_mean, got {mean_model!r}")

    k_raw = pick("k", None)
    k = None
    if k_raw is not None:
        vals = [float(v) for v in (k_raw.split(",") if isinstance(k_raw, str) else k_raw)]
        try:
            k = MarginVector.from_array(vals)
        except InputError as exc:
            raise ConfigError(str(exc)) from exc

    try:
        cfg = RunConfig(
            path=path,
            problem=problem,
            raw=raw,
            seed=int(pick("seed", 0)),
            out=Path(out),
            jobs=int(pick("jobs", 1)),
            m_optimize=int(pick("m_optimize", 100)),
            m_uq=int(pick("m", raw.get("m_uq", 2500)) if overrides.get("m") else raw.get("m_uq", 2500)),
            caps=[float(c) for c in pick("caps", [0.05, 0.1, 0.2, 0.3])],
            k=k,
            uq_cap=(float(raw["uq_cap"]) if "uq_cap" in raw else None),
            doe_n_sigma=float(raw.get("doe_n_sigma", 3.0)),
            fit_config=fit_config,
            include_error_mean=(mean_model == "lofi_plus_error_mean"),
            max_generations=int(raw.get("max_generations", 200)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if not cfg.caps:
        raise ConfigError("caps list must be nonempty")
    return cfg


# -- step implementations ------------------------------------------------------


def cmd_fit(cfg: RunConfig):
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.problem.name == "toy" and cfg.raw.get("synthetic_model", False):
        model = toy_error_model(**(cfg.raw.get("synthetic_model_params") or {}))
    else:
        points, disc = build_beam_doe(cfg.problem, n_sigma=cfg.doe_n_sigma)
        model = fit_error_model(points, disc, cfg.fit_config)
    artio.write_model(cfg.out / "model.json", model, cfg.meta)
    return model


def cmd_conservative(cfg: RunConfig):
    model = artio.read_model(cfg.out / "model.json")
    cv = conservative_values(cfg.problem, model, include_error_mean=cfg.include_error_mean)
    artio.write_conservative(cfg.out / "conservative.json", cv, cfg.meta)
    return cv


def cmd_optimize(cfg: RunConfig):
    model = artio.read_model(cfg.out / "model.json")
    cv = artio.read_conservative(cfg.out / "conservative.json")
    mop = MarginOptProblem(
        problem=cfg.problem,
        model=model,
        u_cons=cv,
        p_f_star=cfg.problem.p_f_star,
        alpha=cfg.problem.alpha,
        p_re_star=cfg.caps[0],
        m=cfg.m_optimize,
        master_seed=cfg.seed,
    )
    points = tradeoff_sweep(mop, cfg.caps, max_gens=cfg.max_generations, jobs=cfg.jobs)
    artio.write_tradeoff(cfg.out / "tradeoff.csv", points, cfg.meta)
    return points


def _select_k(cfg: RunConfig) -> MarginVector:
    if cfg.k is not None:
        return cfg.k
    table = cfg.out / "tradeoff.csv"
    if not table.exists():
        raise ConfigError("no margin vector: pass --k or run the optimize step first")
    points = [p for p in artio.read_tradeoff(table) if p.feasible]
    if not points:
        raise MargincalError("tradeoff table has no feasible points")
    if cfg.uq_cap is not None:
        points.sort(key=lambda p: abs(p.p_re_star - cfg.uq_cap))
    else:
        points.sort(key=lambda p: -p.p_re_star)
    return points[0].k_opt


def cmd_uq(cfg: RunConfig):
    model = artio.read_model(cfg.out / "model.json")
    cv = artio.read_conservative(cfg.out / "conservative.json")
    k = _select_k(cfg)
    report = full_uq(
        model, cfg.problem, cv.u_cons, k, cfg.m_uq,
        master_seed=cfg.seed, jobs=cfg.jobs,
    )
    artio.write_uq_report(cfg.out / "uq_report.json", cfg.out / "uq_outcomes.csv", report, cfg.meta)
    return report


def cmd_report(cfg: RunConfig):
    json_path = cfg.out / "uq_report.json"
    if not json_path.exists():
        raise ConfigError("uq artifacts missing: run the uq step first")
    # rebuild records from the outcome stream so report generation never
    # depends on in-memory state
    from .uq import FutureRecord, UqReport

    summary = artio.read_uq_summary(json_path)
    header, rows = artio._read_csv(cfg.out / "uq_outcomes.csv")
    idx = {name: i for i, name in enumerate(header)}
    xcols = [h for h in header if h.startswith("x_final_")]
    records = []
    for r in rows:
        records.append(
            FutureRecord(
                seed=int(r[idx["seed"]]),
                z_ini=float(r[idx["z_ini"]]),
                test_value=float(r[idx["test_value"]]),
                q=int(r[idx["q"]]),
                kind=r[idx["kind"]],
                x_final=np.array([float(r[idx[c]]) for c in xcols]),
                f_final=float(r[idx["f_final"]]),
                margin_final=float(r[idx["margin_final"]]),
                pf_ini=float(r[idx["pf_ini"]]),
                beta_ini=float(r[idx["beta_ini"]]),
                pf_re=None,
                beta_re=None,
                pf_final=float(r[idx["pf_final"]]),
                beta_final=float(r[idx["beta_final"]]),
                mpp_uhat_ini=np.array([]),
                form_fallback=bool(int(r[idx["form_fallback"]])),
            )
        )
    report = UqReport(
        k=MarginVector.from_array(summary["k"]),
        m=summary["m"],
        p_f_star=summary["p_f_star"],
        alpha=summary["alpha"],
        x_ini=np.array(summary["x_ini"]),
        outcomes=records,
        exceedance_estimate=summary["exceedance_estimate"],
        exceedance_ci=tuple(summary["exceedance_ci"]),
        margin_beta_correlation=summary["margin_beta_correlation"],
        margin_beta_correlation_final=summary["margin_beta_correlation_final"],
        correlation_note=summary["correlation_note"],
        summary_stats=summary["summary_stats"],
        approximation_gap=summary["approximation_gap"],
        analytic_exceedance=summary["analytic_exceedance"],
        n_fallback=summary["n_fallback"],
        n_aborted=summary["n_aborted"],
        mpp_mean_uhat=None,
        degenerate=summary["degenerate"],
        degenerate_reason=summary["degenerate_reason"],
    )
    tradeoff = None
    if (cfg.out / "tradeoff.csv").exists():
        tradeoff = artio.read_tradeoff(cfg.out / "tradeoff.csv")
    return artio.write_report_files(cfg.out, report, cfg.meta, tradeoff=tradeoff)


_COMMANDS = {
    "fit": cmd_fit,
    "conservative": cmd_conservative,
    "optimize": cmd_optimize,
    "uq": cmd_uq,
    "report": cmd_report,
}


def run_all(cfg: RunConfig):
    for step in _STEPS:
        _COMMANDS[step](cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="margincal",
        description="Safety-margin calibration pipeline: fit, conservative, optimize, uq, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_STEPS) + ["run-all"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML problem/run configuration")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory (or MARGINCAL_OUT)")
        p.add_argument("--jobs", type=int, default=None, help="worker processes")
        p.add_argument("--m", type=int, default=None, help="futures for the uq step")
        p.add_argument("--caps", default=None, help="comma-separated redesign-probability caps")
        p.add_argument("--k", default=None, help="margin vector a,b,c,d for the uq step")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "jobs": args.jobs,
        "m": args.m,
        "caps": [float(c) for c in args.caps.split(",")] if args.caps else None,
        "k": args.k,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "run-all":
            run_all(cfg)
        else:
            _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MargincalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
