"""Euler-Maruyama ensembles of the fitted 24-dimensional Langevin equation."""

import csv
import datetime as dt
import json
from dataclasses import dataclass

import numpy as np

from . import km_estimation as km
from ._rng import stream
from .market_data import HOURS

PERCENTILES = (10, 25, 75, 90)
MODEL_SCHEMA = 1


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LangevinModel:
    drift_fields: tuple
    diffusion: km.DiffusionMatrix
    provenance: dict = None

    def __post_init__(self):
        fields = tuple(sorted(self.drift_fields, key=lambda f: f.hour))
        if [f.hour for f in fields] != list(range(1, HOURS + 1)):
            raise ValueError("model needs exactly one drift field per hour 1..24")
        if self.diffusion.sigma.shape != (HOURS, HOURS):
            raise ValueError("sigma must be 24x24")
        object.__setattr__(self, "drift_fields", fields)

    @property
    def sigma(self):
        return self.diffusion.sigma

    def drift(self, x):
        """Per-hour drift for states ``x`` of shape (..., 24)."""
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for h, f in enumerate(self.drift_fields):
            out[..., h] = km.drift_at(f, x[..., h])
        return out

    @classmethod
    def ornstein_uhlenbeck(cls, theta, m, sigma, half_width=500.0):
        """Diagonal-drift model with drift theta*(m - x) and constant sigma."""
        theta = np.broadcast_to(np.asarray(theta, float), (HOURS,))
        m = np.broadcast_to(np.asarray(m, float), (HOURS,))
        fields = [km.DriftField.from_function(h + 1, lambda g, t=theta[h], c=m[h]: t * (c - g),
                                              m[h] - half_width, m[h] + half_width)
                  for h in range(HOURS)]
        sigma = np.asarray(sigma, float)
        if sigma.ndim == 0:
            sigma = float(sigma) * np.eye(HOURS)
        diffusion = km.DiffusionMatrix(0.5 * sigma @ sigma.T, sigma, 0)
        return cls(tuple(fields), diffusion, {"source": "analytic"})


@dataclass(frozen=True)
class LangevinEnsemble:
    """``paths`` has shape (n, p + 1, 24); row 0 of every path is x0."""

    paths: np.ndarray
    t0: object
    seed: int

    @property
    def n(self):
        return self.paths.shape[0]

    @property
    def horizon(self):
        return self.paths.shape[1] - 1


@dataclass(frozen=True)
class EnsembleStats:
    mean: np.ndarray
    percentiles: dict

    def to_dict(self):
        return {"mean": self.mean.tolist(),
                "percentiles": {str(k): v.tolist() for k, v in self.percentiles.items()}}


def fit_model(matrix, grid_size=1000, standardize=True, drift_corrected=True):
    """Estimate all 24 drift fields and the diffusion matrix from ``matrix``.

    ``drift_corrected`` removes the fitted drift from the increments before
    forming the diffusion products; pass ``False`` for the raw half-product mean.
    """
    fields = tuple(km.estimate_drift(km.build_drift_dataset(matrix, h), grid_size, standardize)
                   for h in range(1, HOURS + 1))
    diffusion = km.estimate_diffusion_matrix(
        matrix, drift_fields=fields if drift_corrected else None, standardize=standardize)
    days = getattr(matrix, "days", None)
    provenance = {
        "num_days": int(matrix.values.shape[0]),
        "data_range": [float(matrix.values.min()), float(matrix.values.max())],
        "drift_bandwidth": km.scott_bandwidth(matrix.values.shape[0] - 1, 2).h,
        "diffusion_bandwidth": km.scott_bandwidth(matrix.values.shape[0] - 1, 3).h,
        "grid_size": int(grid_size),
        "standardize": bool(standardize),
        "drift_corrected_diffusion": bool(drift_corrected),
    }
    if days:
        provenance["dates"] = [days[0].isoformat(), days[-1].isoformat()]
    return LangevinModel(fields, diffusion, provenance)


def model_to_dict(model):
    return {
        "schema_version": MODEL_SCHEMA,
        "drift": {str(f.hour): f.to_dict() for f in model.drift_fields},
        "diffusion": model.diffusion.to_dict(),
        "provenance": model.provenance or {},
    }


def model_from_dict(data):
    if data.get("schema_version") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {data.get('schema_version')!r}")
    fields = tuple(km.DriftField.from_dict(h, d) for h, d in data["drift"].items())
    return LangevinModel(fields, km.DiffusionMatrix.from_dict(data["diffusion"]),
                         data.get("provenance") or {})


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


def path_noise(seed, n, p):
    """Standard normals of shape (n, p, 24); path k uses its own stream."""
    out = np.empty((n, p, HOURS))
    for k in range(n):
        out[k] = stream(seed, "langevin", k).standard_normal((p, HOURS))
    return out


def simulate(model, x0, p, n, seed, t0=None):
    """Euler-Maruyama with unit daily step.

    X[t+1] = X[t] + drift(X[t]) + sigma @ xi[t]. Paths are advanced together
    but each draws its noise from a private stream, so path k is the same
    whatever ``n`` is, and the first days do not depend on ``p``.
    """
    if int(p) < 1 or int(n) < 1:
        raise ValueError("p and n must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (HOURS,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite 24-vector")
    p, n = int(p), int(n)
    noise = path_noise(seed, n, p)
    sigma = model.sigma
    paths = np.empty((n, p + 1, HOURS))
    paths[:, 0] = x0
    for t in range(p):
        x = paths[:, t]
        shock = np.einsum("nj,hj->nh", noise[:, t], sigma)
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = x + model.drift(x) + shock
        bad = ~np.isfinite(nxt)
        if bad.any():
            k = int(np.flatnonzero(bad.any(axis=1))[0])
            raise SimulationError(f"non-finite state on path {k} at step {t + 1}")
        paths[:, t + 1] = nxt
    return LangevinEnsemble(paths, t0, int(seed))


def ensemble_mean(ens):
    if ens.paths.shape[0] == 0:
        raise ValueError("empty ensemble")
    return ens.paths.mean(axis=0)


def ensemble_stats(ens, percentiles=PERCENTILES):
    """Mean and linear-interpolation percentiles across paths per (day, hour)."""
    if ens.paths.shape[0] == 0:
        raise ValueError("empty ensemble")
    qs = np.percentile(ens.paths, percentiles, axis=0, method="linear")
    return EnsembleStats(ensemble_mean(ens), {int(q): v for q, v in zip(percentiles, qs)})


def write_ensemble_csv(ens, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "day", "hour", "value"])
        n, steps, _ = ens.paths.shape
        for k in range(n):
            for d in range(steps):
                for h in range(HOURS):
                    w.writerow([k, d, h + 1, repr(float(ens.paths[k, d, h]))])


def read_ensemble_csv(path, t0=None, seed=0):
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    rows = np.atleast_2d(rows)
    n, steps = int(rows[:, 0].max()) + 1, int(rows[:, 1].max()) + 1
    paths = np.empty((n, steps, HOURS))
    paths[rows[:, 0].astype(int), rows[:, 1].astype(int), rows[:, 2].astype(int) - 1] = rows[:, 3]
    return LangevinEnsemble(paths, t0, seed)


def write_stats_json(stats, path, t0=None):
    data = stats.to_dict()
    if isinstance(t0, dt.date):
        data["t0"] = t0.isoformat()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
