"""Serialization of study outputs: sample files and CSV tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .errors import ConfigError
from .hostcap import DistributionSummary, HcEstimate, HcSampleSet, SummaryRow
from .study import ValidationReport

SUMMARY_COLUMNS = ("n_gen", "n_pen", "stat_name", "phi_total_kw", "phi_per_gen_kw")
VALIDATE_COLUMNS = (
    "level", "p_per_gen_pu", "p_per_gen_kw", "v_max_linear", "v_max_nonlinear", "max_abs_error", "v_max_nonload",
)


def _num(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def samples_document(
    *,
    feeder: str,
    method: str,
    seed: int,
    n_mc: int,
    n_gen: int,
    n_lds: int,
    v_plus: float,
    base_power_kva: float,
    samples: HcSampleSet | None = None,
    estimates: list[HcEstimate] = (),
) -> dict:
    """Plain-data record of one estimate run.

    Contains no timing, so reruns with the same seed match byte for byte.
    Unbounded samples are written as ``null``.
    """
    doc = {
        "feeder": feeder,
        "method": method,
        "seed": seed,
        "n_mc": n_mc,
        "n_gen": n_gen,
        "n_lds": n_lds,
        "v_plus_pu": v_plus,
        "base_power_kva": base_power_kva,
        "estimates": [_estimate_record(e) for e in estimates],
    }
    if samples is not None:
        doc["p_gen_max_pu"] = [_num(x) for x in samples.p_gen_max]
    return doc


def _estimate_record(est: HcEstimate) -> dict:
    rec = {
        "epsilon": est.epsilon,
        "method": est.method,
        "phi_eps_total_pu": est.phi_eps_total,
        "phi_eps_per_gen_pu": est.phi_eps_per_gen,
        "phi_eps_total_kw": est.phi_eps_total_kw,
        "converged": est.converged,
    }
    if est.trace:
        rec["iterations"] = est.iterations
        rec["trace"] = [[p, e] for p, e in est.trace]
    return rec


def write_json(doc: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n")
    return path


def write_summary_csv(summary: DistributionSummary, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in summary.rows:
            w.writerow([r.n_gen, repr(r.n_pen), r.stat_name, repr(r.phi_total_kw), repr(r.phi_per_gen_kw)])
    return path


def read_summary_csv(path: str | Path) -> DistributionSummary:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}", path=str(path))
        rows = tuple(
            SummaryRow(
                n_gen=int(r["n_gen"]),
                n_pen=float(r["n_pen"]),
                stat_name=r["stat_name"],
                phi_total_kw=float(r["phi_total_kw"]),
                phi_per_gen_kw=float(r["phi_per_gen_kw"]),
            )
            for r in reader
        )
    return DistributionSummary(rows=rows)


def write_validate_csv(report: ValidationReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VALIDATE_COLUMNS)
        for r in report.rows:
            w.writerow([
                repr(r.level), repr(r.p_per_gen), repr(r.p_per_gen * report.base_power_kva),
                repr(r.v_max_linear), repr(r.v_max_nonlinear), repr(r.max_abs_error), repr(r.v_max_nonload),
            ])
    return path
