"""Artifact persistence: models, conservative values, tradeoff tables, reports.

Every artifact embeds the config hash, master seed and package version, and
contains nothing run-dependent beyond that (no timestamps, no hostnames), so
a rerun with identical config and seed reproduces every file byte for byte.
Tabular artifacts are comma-separated with '#'-prefixed metadata lines before
the header row; structured artifacts are JSON.
"""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .cycle import MarginVector
from .gp import ErrorModel
from .margins import TradeoffPoint
from .rbdo import ConservativeValues
from .uq import UqReport, histogram_counts

__all__ = [
    "config_hash",
    "Meta",
    "write_model",
    "read_model",
    "write_conservative",
    "read_conservative",
    "write_tradeoff",
    "read_tradeoff",
    "write_uq_report",
    "read_uq_summary",
    "write_report_files",
]


def config_hash(config_path) -> str:
    return hashlib.sha256(Path(config_path).read_bytes()).hexdigest()[:16]


class Meta:
    """Provenance stamp shared by all artifacts of one run."""

    def __init__(self, cfg_hash: str, seed: int):
        self.cfg_hash = cfg_hash
        self.seed = seed

    def as_dict(self) -> dict:
        return {
            "config_sha256": self.cfg_hash,
            "master_seed": self.seed,
            "version": __version__,
        }

    def comment_lines(self) -> list[str]:
        return [
            f"# margincal {__version__}",
            f"# config_sha256: {self.cfg_hash}",
            f"# master_seed: {self.seed}",
        ]


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_csv(path, meta: Meta, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in meta.comment_lines():
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _read_csv(path) -> tuple[list[str], list[list[str]]]:
    header, rows = None, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                rows.append(cells)
    return header or [], rows


# -- model -------------------------------------------------------------------


def write_model(path, model: ErrorModel, meta: Meta) -> None:
    _write_json(path, {"meta": meta.as_dict(), "model": model.to_dict()})


def read_model(path) -> ErrorModel:
    return ErrorModel.from_dict(_read_json(path)["model"])


# -- conservative values -------------------------------------------------------


def write_conservative(path, cv: ConservativeValues, meta: Meta) -> None:
    _write_json(path, {"meta": meta.as_dict(), "conservative": cv.to_dict()})


def read_conservative(path) -> ConservativeValues:
    return ConservativeValues.from_dict(_read_json(path)["conservative"])


# -- tradeoff table ------------------------------------------------------------

_TRADEOFF_HEADER = [
    "p_re_star", "k_ini", "k_lb", "k_ub", "k_re",
    "expected_f", "p_re", "neg_margin_prob", "cov_expected_f",
    "penalty_lambda", "n_evals", "feasible", "error",
]


def write_tradeoff(path, points: list[TradeoffPoint], meta: Meta) -> None:
    rows = []
    for p in points:
        ka = p.k_opt.as_array()
        rows.append([
            p.p_re_star, float(ka[0]), float(ka[1]), float(ka[2]), float(ka[3]),
            p.expected_f, p.p_re, p.neg_margin_prob, p.cov_expected_f,
            p.penalty_lambda, p.n_evals, int(p.feasible), p.error or "",
        ])
    _write_csv(path, meta, _TRADEOFF_HEADER, rows)


def read_tradeoff(path) -> list[TradeoffPoint]:
    header, rows = _read_csv(path)
    idx = {name: i for i, name in enumerate(header)}
    points = []
    for r in rows:
        points.append(
            TradeoffPoint(
                p_re_star=float(r[idx["p_re_star"]]),
                k_opt=MarginVector(
                    float(r[idx["k_ini"]]), float(r[idx["k_lb"]]),
                    float(r[idx["k_ub"]]), float(r[idx["k_re"]]),
                ),
                expected_f=float(r[idx["expected_f"]]),
                p_re=float(r[idx["p_re"]]),
                neg_margin_prob=float(r[idx["neg_margin_prob"]]),
                cov_expected_f=float(r[idx["cov_expected_f"]]),
                penalty_lambda=float(r[idx["penalty_lambda"]]),
                n_evals=int(r[idx["n_evals"]]),
                feasible=bool(int(r[idx["feasible"]])),
                error=r[idx["error"]] or None,
            )
        )
    return points


# -- two-level UQ ---------------------------------------------------------------

_OUTCOME_HEADER_FIXED = [
    "seed", "z_ini", "test_value", "q", "kind", "f_final", "margin_final",
    "pf_ini", "beta_ini", "pf_final", "beta_final", "form_fallback",
]


def write_uq_report(json_path, csv_path, report: UqReport, meta: Meta) -> None:
    summary = {
        "k": report.k.as_array().tolist(),
        "m": report.m,
        "p_f_star": report.p_f_star,
        "alpha": report.alpha,
        "x_ini": np.asarray(report.x_ini).tolist(),
        "exceedance_estimate": report.exceedance_estimate,
        "exceedance_ci": list(report.exceedance_ci),
        "margin_beta_correlation": report.margin_beta_correlation,
        "margin_beta_correlation_final": report.margin_beta_correlation_final,
        "correlation_note": report.correlation_note,
        "summary_stats": report.summary_stats,
        "approximation_gap": report.approximation_gap,
        "analytic_exceedance": report.analytic_exceedance,
        "n_fallback": report.n_fallback,
        "n_aborted": report.n_aborted,
        "mpp_mean_uhat": None if report.mpp_mean_uhat is None else np.asarray(report.mpp_mean_uhat).tolist(),
        "degenerate": report.degenerate,
        "degenerate_reason": report.degenerate_reason,
    }
    _write_json(json_path, {"meta": meta.as_dict(), "uq": summary})

    n_design = len(np.asarray(report.x_ini))
    header = _OUTCOME_HEADER_FIXED + [f"x_final_{i}" for i in range(n_design)]
    rows = []
    for r in report.outcomes:
        rows.append(
            [
                r.seed, r.z_ini, r.test_value, r.q, r.kind, r.f_final, r.margin_final,
                r.pf_ini, r.beta_ini, r.pf_final, r.beta_final, int(r.form_fallback),
            ]
            + [float(v) for v in np.asarray(r.x_final)]
        )
    _write_csv(csv_path, meta, header, rows)


def read_uq_summary(path) -> dict:
    return _read_json(path)["uq"]


# -- post-processing report ------------------------------------------------------


def _hist_rows(values, bins=40):
    h = histogram_counts(values, bins=bins)
    edges, counts = h["edges"], h["counts"]
    return [[edges[i], edges[i + 1], counts[i]] for i in range(len(counts))]


def write_report_files(outdir, report: UqReport, meta: Meta, tradeoff=None) -> list[str]:
    """Emit the post-processing data files (histograms, splits, curve points).

    Returns the list of files written. Plot rendering is downstream tooling.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    recs = report.outcomes
    f_ini = None
    if recs:
        margins = [r.test_value for r in recs]
        margins_final = [r.margin_final for r in recs]
        betas_ini = [r.beta_ini for r in recs]
        betas_final = [r.beta_final for r in recs]
        pf_final = [r.pf_final for r in recs]
        fs = [r.f_final for r in recs]

        p = outdir / "report_margin_hist.csv"
        rows = [["initial", *row] for row in _hist_rows(margins)]
        rows += [["final", *row] for row in _hist_rows(margins_final)]
        _write_csv(p, meta, ["which", "bin_left", "bin_right", "count"], rows)
        written.append(str(p))

        p = outdir / "report_beta_hist.csv"
        rows = [["initial", *row] for row in _hist_rows(betas_ini)]
        rows += [["final", *row] for row in _hist_rows(betas_final)]
        _write_csv(p, meta, ["which", "bin_left", "bin_right", "count"], rows)
        written.append(str(p))

        p = outdir / "report_pf_hist.csv"
        _write_csv(p, meta, ["bin_left", "bin_right", "count"], _hist_rows(pf_final))
        written.append(str(p))

        p = outdir / "report_design_hist.csv"
        rows = []
        xs = np.stack([np.asarray(r.x_final) for r in recs])
        for j in range(xs.shape[1]):
            rows += [[f"x{j}", *row] for row in _hist_rows(xs[:, j])]
        _write_csv(p, meta, ["variable", "bin_left", "bin_right", "count"], rows)
        written.append(str(p))

        p = outdir / "report_objective_by_kind.csv"
        rows = []
        for kind in ("none", "safety", "performance"):
            vals = [r.f_final for r in recs if r.kind == kind]
            rows += [[kind, *row] for row in _hist_rows(vals)] if vals else []
        _write_csv(p, meta, ["kind", "bin_left", "bin_right", "count"], rows)
        written.append(str(p))

    if tradeoff:
        p = outdir / "report_tradeoff.csv"
        rows = [
            [t.p_re_star, t.expected_f, t.p_re, t.neg_margin_prob, int(t.feasible)]
            for t in tradeoff
        ]
        _write_csv(p, meta, ["p_re_star", "expected_f", "p_re", "neg_margin_prob", "feasible"], rows)
        written.append(str(p))

    summary = {
        "m": report.m,
        "exceedance_estimate": report.exceedance_estimate,
        "exceedance_ci": list(report.exceedance_ci),
        "analytic_exceedance": report.analytic_exceedance,
        "margin_beta_correlation": report.margin_beta_correlation,
        "summary_stats": report.summary_stats,
        "empty": not recs,
    }
    p = outdir / "report_summary.json"
    _write_json(p, {"meta": meta.as_dict(), "report": summary})
    written.append(str(p))
    return written
