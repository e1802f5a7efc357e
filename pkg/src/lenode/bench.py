"""Absolute-error metrics, histograms and method rankings."""

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_BINS = 20


@dataclass(frozen=True)
class ErrorSample:
    method_tag: str
    scenario: str
    errors: np.ndarray

    def __post_init__(self):
        errors = np.asarray(self.errors, dtype=float).ravel()
        if np.any(~np.isfinite(errors)) or np.any(errors < 0):
            raise ValueError("errors must be finite and non-negative")
        object.__setattr__(self, "errors", errors)

    def __len__(self):
        return self.errors.size


@dataclass(frozen=True)
class MethodReport:
    mae: float
    iqr: tuple
    histogram: tuple
    count: int

    @property
    def iqr_width(self):
        return self.iqr[1] - self.iqr[0]

    def to_dict(self):
        edges, counts = self.histogram
        return {"mae": self.mae, "iqr": list(self.iqr),
                "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
                "count": self.count}


def abs_errors(truth, forecast_mean, method_tag="", scenario=""):
    truth = np.asarray(truth, dtype=float)
    forecast_mean = np.asarray(forecast_mean, dtype=float)
    if truth.shape != forecast_mean.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {forecast_mean.shape}")
    return ErrorSample(method_tag, scenario, np.abs(truth - forecast_mean).ravel())


def _nonempty(sample):
    if len(sample) == 0:
        raise ValueError("empty error sample")
    return sample.errors


def mae(sample):
    return float(np.mean(_nonempty(sample)))


def iqr(sample):
    """25th and 75th percentiles, linear interpolation between order statistics."""
    lo, hi = np.percentile(_nonempty(sample), [25, 75], method="linear")
    return float(lo), float(hi)


def histogram(sample, bins=DEFAULT_BINS):
    """Uniform bins over [0, max error]; the last bin is closed."""
    if int(bins) < 1:
        raise ValueError("bins must be >= 1")
    errors = _nonempty(sample)
    top = float(errors.max())
    counts, edges = np.histogram(errors, bins=int(bins), range=(0.0, top if top > 0 else 1.0))
    return edges, counts


def report(sample, bins=DEFAULT_BINS):
    return MethodReport(mae(sample), iqr(sample), histogram(sample, bins), len(sample))


def build_report(samples, bins=DEFAULT_BINS):
    """{scenario: {method: MethodReport}} from an iterable of ErrorSample."""
    out = defaultdict(dict)
    for s in samples:
        out[s.scenario][s.method_tag] = report(s, bins)
    return dict(out)


def compare_methods(reports):
    """Rank methods per scenario by MAE, breaking ties with the narrower IQR.

    Returns rows (scenario, rank, method, mae, iqr_lo, iqr_hi).
    """
    if not reports:
        raise ValueError("no reports to compare")
    rows = []
    for scenario in sorted(reports):
        methods = reports[scenario]
        if len(methods) < 2:
            raise ValueError(f"scenario {scenario!r} needs at least two methods")
        ranked = sorted(methods.items(), key=lambda kv: (kv[1].mae, kv[1].iqr_width, kv[0]))
        for rank, (tag, r) in enumerate(ranked, start=1):
            rows.append((scenario, rank, tag, r.mae, r.iqr[0], r.iqr[1]))
    return rows


def samples_from_results(results):
    """Pool errors over a p-sweep of ScenarioResult objects.

    Returns pooled samples per (scenario, method) and per-p breakdowns keyed
    by ``"<scenario>/p=<p>"``.
    """
    pooled = defaultdict(list)
    per_p = []
    for res in results:
        sid = res.config.scenario_id
        for tag, fs in res.forecasts.items():
            s = abs_errors(res.truth, fs.mean_forecast, tag, f"{sid}/p={res.config.p}")
            per_p.append(s)
            pooled[sid, tag].append(s.errors)
    merged = [ErrorSample(tag, sid, np.concatenate(errs)) for (sid, tag), errs in pooled.items()]
    return merged, per_p


def load_runs(runs_dir):
    """Read run directories written by ScenarioResult.write.

    Returns pooled samples per (scenario, method) and per-p breakdowns.
    """
    pooled = defaultdict(list)
    per_p = defaultdict(list)
    summaries = sorted(Path(runs_dir).rglob("summary.json"))
    if not summaries:
        raise FileNotFoundError(f"no summary.json under {runs_dir}")
    for summary_path in summaries:
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        sid, p = summary["scenario_id"], summary["p"]
        cells = defaultdict(list)
        with open(summary_path.parent / "forecasts.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                cells[row["method"]].append(abs(float(row["truth"]) - float(row["forecast"])))
        for tag, errs in cells.items():
            pooled[sid, tag].extend(errs)
            per_p[f"{sid}/p={p}", tag].extend(errs)
    merged = [ErrorSample(tag, sid, np.array(e)) for (sid, tag), e in sorted(pooled.items())]
    split = [ErrorSample(tag, key, np.array(e)) for (key, tag), e in sorted(per_p.items())]
    return merged, split


def report_to_dict(reports):
    return {sc: {tag: r.to_dict() for tag, r in methods.items()} for sc, methods in reports.items()}


def write_report(path, pooled, per_p=(), bins=DEFAULT_BINS):
    """Write the report JSON and its companions next to it.

    ``path`` gets {scenario: {method: {mae, iqr, histogram}}}; the per-p
    breakdown goes to ``<stem>_per_p.json``, the ranking to
    ``<stem>_ranking.csv`` and one histogram CSV per (scenario, method) to
    ``<stem>_histograms/``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reports = build_report(pooled, bins)
    payload = report_to_dict(reports)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    if per_p:
        with open(path.with_name(path.stem + "_per_p.json"), "w", encoding="utf-8") as fh:
            json.dump(report_to_dict(build_report(per_p, bins)), fh, indent=2)
    with open(path.with_name(path.stem + "_ranking.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "rank", "method", "mae", "iqr_lo", "iqr_hi"])
        w.writerows(compare_methods(reports))
    hist_dir = path.with_name(path.stem + "_histograms")
    hist_dir.mkdir(exist_ok=True)
    for sc, methods in reports.items():
        for tag, r in methods.items():
            edges, counts = r.histogram
            name = f"{sc}_{tag}.csv".replace("/", "_")
            with open(hist_dir / name, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bin_lo", "bin_hi", "count"])
                for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                    w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return payload
