"""CSV ingestion and the fixed-column CSV emitters.

Input schema: ``day_id,time_hours,flow_rate`` with a header row; all days
must align to one common grid.  Days missing grid cells are rejected and
reported rather than imputed.  Output CSVs use shortest round-trip float
formatting, so identical numerical results produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import IngestionError
from .evaluate import MethodTable, window_label
from .grids import SampledCurve, TimeGrid

CURVE_HEADER = ["day_id", "time_hours", "flow_rate"]


@dataclass
class IngestReport:
    """Curves loaded from a CSV plus the days that were rejected."""

    curves: list[SampledCurve]
    rejected: dict = field(default_factory=dict)

    @property
    def n_loaded(self) -> int:
        return len(self.curves)


def _fmt(x) -> str:
    return repr(float(x))


def read_curves_csv(path) -> IngestReport:
    """Load one curve per day from a long-format CSV.

    The common grid is the most frequent per-day time vector; days whose
    time vector differs (missing or extra cells) are rejected and listed
    in the report.  Non-numeric cells, duplicate (day, time) pairs and a
    bad header raise :class:`~flowmix.errors.IngestionError` with row
    numbers.
    """
    rows_by_day: dict = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            warnings.warn(f"{path}: empty file, no curves loaded")
            return IngestReport([], {})
        if [h.strip() for h in header] != CURVE_HEADER:
            raise IngestionError(
                f"{path}: expected header {','.join(CURVE_HEADER)}, "
                f"got {','.join(header)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3:
                raise IngestionError(f"{path}:{line_no}: expected 3 columns")
            day = row[0].strip()
            try:
                t = float(row[1])
                y = float(row[2])
            except ValueError:
                raise IngestionError(
                    f"{path}:{line_no}: non-numeric time or flow value"
                ) from None
            if not (np.isfinite(t) and np.isfinite(y)):
                raise IngestionError(f"{path}:{line_no}: non-finite value")
            day_rows = rows_by_day.setdefault(day, {})
            if t in day_rows:
                raise IngestionError(
                    f"{path}:{line_no}: duplicate (day, time) pair ({day}, {t})"
                )
            day_rows[t] = y
    if not rows_by_day:
        warnings.warn(f"{path}: no data rows, no curves loaded")
        return IngestReport([], {})

    signatures = Counter()
    for day, day_rows in rows_by_day.items():
        signatures[tuple(sorted(day_rows))] += 1
    # the common grid is the modal per-day time vector (ties: first seen)
    common = max(signatures, key=lambda sig: signatures[sig])
    grid = TimeGrid(np.array(common), domain_end=max(24.0, common[-1]))

    curves = []
    rejected = {}
    for day in sorted(rows_by_day):
        day_rows = rows_by_day[day]
        sig = tuple(sorted(day_rows))
        if sig != common:
            missing = len(set(common) - set(sig))
            extra = len(set(sig) - set(common))
            rejected[day] = f"{missing} missing / {extra} extra grid cells"
            continue
        curves.append(SampledCurve(grid, np.array([day_rows[t] for t in common]),
                                   id=day))
    if rejected:
        listed = ", ".join(sorted(rejected))
        warnings.warn(f"{path}: rejected days with incomplete grids: {listed}")
    return IngestReport(curves, rejected)


def write_curves_csv(path, curves: list[SampledCurve]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CURVE_HEADER)
        for curve in curves:
            for t, y in zip(curve.grid.points, curve.values):
                writer.writerow([curve.id, _fmt(t), _fmt(y)])


def prediction_csv(prediction) -> str:
    """Prediction as CSV text: t, mixture, per-cluster columns, bands."""
    out = io.StringIO()
    writer = csv.writer(out)
    k = len(prediction.per_cluster)
    header = ["t", "mixture"] + [f"cluster_{c + 1}" for c in range(k)]
    if prediction.lower is not None:
        header += ["lower", "upper"]
    writer.writerow(header)
    for i, t in enumerate(prediction.grid.points):
        row = [_fmt(t), _fmt(prediction.mixture_curve[i])]
        row += [_fmt(vals[i]) for vals in prediction.per_cluster]
        if prediction.lower is not None:
            row += [_fmt(prediction.lower[i]), _fmt(prediction.upper[i])]
        writer.writerow(row)
    return out.getvalue()


def posterior_trace_csv(taus, posteriors) -> str:
    """Classification trace as CSV text: tau, p_1..p_K per row."""
    out = io.StringIO()
    writer = csv.writer(out)
    k = len(posteriors[0])
    writer.writerow(["tau"] + [f"p_{c + 1}" for c in range(k)])
    for tau, post in zip(taus, posteriors):
        writer.writerow([_fmt(tau)] + [_fmt(p) for p in post])
    return out.getvalue()


def method_table_csv(table: MethodTable) -> str:
    """Method table as CSV text: one row per (method, kappa), one column
    per omega, with parallel standard-error columns when present."""
    out = io.StringIO()
    writer = csv.writer(out)
    omega_labels = [window_label(o, "omega*") for o in table.omegas]
    has_se = bool(table.std_errors)
    header = ["method", "kappa"] + [f"tmipe:{o}" for o in omega_labels]
    if has_se:
        header += [f"se:{o}" for o in omega_labels]
    writer.writerow(header)
    for method in table.methods:
        for kappa in table.kappas:
            row = [method, window_label(kappa, "kappa*")]
            row += [_fmt(table.get(method, kappa, o)) for o in table.omegas]
            if has_se:
                row += [_fmt(table.se(method, kappa, o) or 0.0)
                        for o in table.omegas]
            writer.writerow(row)
    return out.getvalue()


def cluster_count_csv(records) -> str:
    """Cluster-count test results: K, pair, H01_rate, H02_rate."""
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["K", "pair", "H01_rate", "H02_rate"])
    for record in records:
        for pair in record.pair_results:
            writer.writerow([
                record.k, f"{pair.pair[0]} vs. {pair.pair[1]}",
                _fmt(pair.p_mean), _fmt(pair.p_subspace),
            ])
    return out.getvalue()


def classification_error_csv(tau_eval, means, ses) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["tau", "error_mean", "error_se"])
    for tau, m, s in zip(tau_eval, means, ses):
        writer.writerow([_fmt(tau), _fmt(m), _fmt(s)])
    return out.getvalue()
