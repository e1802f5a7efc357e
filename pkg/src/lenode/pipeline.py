"""Residual datasets, combined forecasts and naive baselines.

Observed prices S are decomposed as S = X + Y: X is the Langevin ensemble and
Y a deterministic correction shared by every path. Each method below differs
only in how it produces Y for the days after the training window.
"""

import csv
import datetime as dt
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import langevin, node
from .market_data import HOURS, DataError, _as_date

METHODS = ("le_only", "le_node", "naive_1day", "naive_init")


@dataclass(frozen=True)
class ResidualDataset:
    residuals: np.ndarray
    t0: dt.date
    p: int

    def __post_init__(self):
        if self.residuals.ndim != 3 or self.residuals.shape[1:] != (self.p + 1, HOURS):
            raise ValueError("residuals must have shape (n, p + 1, 24)")
        if np.any(self.residuals[:, 0] != 0.0):
            raise ValueError("residual day 0 must be exactly zero")

    @property
    def n(self):
        return self.residuals.shape[0]


@dataclass(frozen=True)
class ForecastSet:
    """Per-path forecasts X + Y for days p+1..p+q after t0.

    ``stationary`` is the ensemble slice X (n, q, 24) and ``correction`` the
    shared Y (q, 24).
    """

    method_tag: str
    stationary: np.ndarray
    correction: np.ndarray
    forecasts: np.ndarray = None
    mean_forecast: np.ndarray = None

    def __post_init__(self):
        if self.method_tag not in METHODS:
            raise ValueError(f"unknown method {self.method_tag!r}")
        if self.forecasts is None:
            object.__setattr__(self, "forecasts", self.stationary + self.correction[None])
        if self.mean_forecast is None:
            object.__setattr__(self, "mean_forecast", self.forecasts.mean(axis=0))
        check_decomposition(self)


def check_decomposition(fs):
    """Assert forecast == X + Y cell by cell and mean == path-axis mean."""
    if not np.array_equal(fs.forecasts, fs.stationary + fs.correction[None]):
        raise AssertionError(f"{fs.method_tag}: forecasts differ from X + Y")
    if not np.array_equal(fs.mean_forecast, fs.forecasts.mean(axis=0)):
        raise AssertionError(f"{fs.method_tag}: mean_forecast is not the path mean")


@dataclass(frozen=True)
class ScenarioConfig:
    initial_date: dt.date
    p: int = 8
    q: int = 1
    n: int = 1000
    seed: int = 0
    train: node.TrainConfig = field(default_factory=node.TrainConfig)
    scenario_id: str = None
    model_path: str = None
    data_path: str = None

    def __post_init__(self):
        object.__setattr__(self, "initial_date", _as_date(self.initial_date))
        if self.p < 1 or self.q < 1 or self.n < 1:
            raise ValueError("p, q and n must be >= 1")
        if self.scenario_id is None:
            object.__setattr__(self, "scenario_id", self.initial_date.isoformat())

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "train" in data and isinstance(data["train"], dict):
            data["train"] = node.TrainConfig(**data["train"])
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "initial_date": self.initial_date.isoformat(), "p": self.p, "q": self.q,
            "n": self.n, "seed": self.seed, "scenario_id": self.scenario_id,
            "train": self.train.__dict__.copy(),
            "model_path": self.model_path, "data_path": self.data_path,
        }

    def offsets(self, S):
        """Row index of t0 in S, after checking t0 + p + q is inside S."""
        t0 = S.index_of(self.initial_date)
        if t0 + self.p + self.q >= S.num_days:
            raise DataError(f"scenario {self.scenario_id}: day t0+p+q beyond data "
                            f"ending {S.days[-1].isoformat()}")
        return t0


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    truth: np.ndarray
    forecasts: dict
    dates: list
    ensemble: langevin.LangevinEnsemble = None
    training: node.TrainResult = None

    def write(self, out_dir):
        """forecasts.csv (method, day, hour, forecast, truth) plus summary.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "forecasts.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["method", "day", "hour", "forecast", "truth"])
            for tag, fs in self.forecasts.items():
                for k, day in enumerate(self.dates):
                    for h in range(HOURS):
                        w.writerow([tag, day.isoformat(), h + 1,
                                    repr(float(fs.mean_forecast[k, h])),
                                    repr(float(self.truth[k, h]))])
        summary = {
            "config": self.config.to_dict(),
            "scenario_id": self.config.scenario_id,
            "p": self.config.p,
            "forecast_dates": [d.isoformat() for d in self.dates],
            "mae": {tag: float(np.mean(np.abs(fs.mean_forecast - self.truth)))
                    for tag, fs in self.forecasts.items()},
        }
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
        if self.training is not None:
            node.save_params(self.training.params, out / "node_params.json")
            self.training.write_loss_csv(out / "loss_curve.csv")


def _window(S, t0, length):
    if t0 < 0 or t0 + length > S.num_days:
        raise DataError("requested horizon exceeds the data")
    return S.values[t0:t0 + length]


def _t0_row(S, ens):
    t0 = S.index_of(ens.t0)
    if not np.array_equal(ens.paths[:, 0], np.broadcast_to(S.values[t0], ens.paths[:, 0].shape)):
        raise DataError("ensemble initial condition differs from observed prices at t0")
    return t0


def build_residuals(S, ens, p=None):
    """S - X for days 0..p of every path (p defaults to the ensemble horizon)."""
    p = ens.horizon if p is None else int(p)
    if p > ens.horizon:
        raise DataError("p exceeds the ensemble horizon")
    t0 = _t0_row(S, ens)
    observed = _window(S, t0, p + 1)
    residuals = observed[None] - ens.paths[:, :p + 1]
    residuals[:, 0] = 0.0
    return ResidualDataset(residuals, S.days[t0], p)


def simulate_scenario(S, model, cfg, horizon=None):
    """Ensemble from the observed prices at t0 through ``horizon`` (default p+q)."""
    t0 = cfg.offsets(S)
    horizon = cfg.p + cfg.q if horizon is None else horizon
    return langevin.simulate(model, S.values[t0], horizon, cfg.n, cfg.seed, t0=S.days[t0])


def _stationary(ens, cfg):
    if ens.horizon < cfg.p + cfg.q:
        raise DataError("ensemble horizon shorter than p + q")
    return ens.paths[:, cfg.p + 1:cfg.p + cfg.q + 1]


def forecast_le_only(S, ens, cfg):
    x = _stationary(ens, cfg)
    return ForecastSet("le_only", x, np.zeros((cfg.q, HOURS)))


def forecast_le_node(S, model, params, cfg, ensemble=None):
    """Ensemble paths X plus the NODE prediction Y at days p+1..p+q."""
    ens = simulate_scenario(S, model, cfg) if ensemble is None else ensemble
    x = _stationary(ens, cfg)
    spd = cfg.train.solver_steps_per_day
    traj = node.ode_solve(params, np.zeros(HOURS), 0, cfg.p + cfg.q, spd)
    y = traj.values[cfg.p + 1:]
    return ForecastSet("le_node", x, y)


def _naive(S, ens, cfg, tag, ref_offset):
    if cfg.q != 1:
        raise ValueError("naive corrections are defined for q = 1 only")
    t0 = _t0_row(S, ens)
    last = t0 + cfg.p
    ref = last - 1 if ref_offset == "previous" else t0
    if ref < 0 or last >= S.num_days:
        raise DataError("insufficient history for naive correction")
    y = (S.values[last] - S.values[ref])[None]
    return ForecastSet(tag, _stationary(ens, cfg), y)


def naive_one_day(S, ens, cfg):
    """Y = S[t0+p] - S[t0+p-1]."""
    return _naive(S, ens, cfg, "naive_1day", "previous")


def naive_initial_condition(S, ens, cfg):
    """Y = S[t0+p] - S[t0]."""
    return _naive(S, ens, cfg, "naive_init", "initial")


def run_scenario(cfg, S, model, ensemble=None, methods=METHODS):
    """Simulate, train on days 0..p, forecast p+1..p+q with every method.

    A supplied ``ensemble`` must start at t0 and reach at least p + q days;
    its first p + 1 days feed the residual dataset.
    """
    t0 = cfg.offsets(S)
    ens = simulate_scenario(S, model, cfg) if ensemble is None else ensemble
    truth = S.values[t0 + cfg.p + 1:t0 + cfg.p + cfg.q + 1]
    dates = list(S.days[t0 + cfg.p + 1:t0 + cfg.p + cfg.q + 1])
    out, training = {}, None
    for tag in methods:
        if tag == "le_only":
            out[tag] = forecast_le_only(S, ens, cfg)
        elif tag == "le_node":
            training = node.train(build_residuals(S, ens, cfg.p), cfg.train)
            out[tag] = forecast_le_node(S, model, training.params, cfg, ensemble=ens)
        elif tag == "naive_1day":
            out[tag] = naive_one_day(S, ens, cfg)
        elif tag == "naive_init":
            out[tag] = naive_initial_condition(S, ens, cfg)
        else:
            raise ValueError(f"unknown method {tag!r}")
    return ScenarioResult(cfg, truth, out, dates, ens, training)


def run_sweep(cfg, S, model, ps=range(1, 9), methods=METHODS):
    """run_scenario for each p with q fixed; one ensemble serves every p."""
    ps = list(ps)
    base = replace(cfg, p=max(ps))
    ens = simulate_scenario(S, model, base)
    return [run_scenario(replace(cfg, p=p), S, model, ensemble=ens, methods=methods) for p in ps]
