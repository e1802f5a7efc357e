"""Neural-ODE residual model.

The vector field is a 24-96-24 tanh perceptron integrated with fixed-step RK4.
Gradients come from reverse-mode differentiation of the unrolled RK4 steps,
so they are exact for the discrete loss. Training uses RMSprop on the MAE of
whole trajectories that all start from Y = 0.
"""

import csv
import json
from dataclasses import dataclass, field

import numba
import numpy as np

from ._rng import stream

DIM = 24
HIDDEN = 96
PARAMS_SCHEMA = 1
_SHAPES = {"w1": (HIDDEN, DIM), "b1": (HIDDEN,), "w2": (DIM, HIDDEN), "b2": (DIM,)}


class NodeError(RuntimeError):
    pass


@dataclass(frozen=True)
class NodeParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name, shape in _SHAPES.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls):
        return cls(**{k: np.zeros(s) for k, s in _SHAPES.items()})

    @classmethod
    def initial(cls, seed):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
        rng = stream(seed, "node-init")
        w1 = rng.uniform(-1.0, 1.0, _SHAPES["w1"]) / np.sqrt(DIM)
        w2 = rng.uniform(-1.0, 1.0, _SHAPES["w2"]) / np.sqrt(HIDDEN)
        return cls(w1, np.zeros(HIDDEN), w2, np.zeros(DIM))

    def flat(self):
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, theta):
        theta = np.asarray(theta, dtype=float)
        parts, i = {}, 0
        for name, shape in _SHAPES.items():
            size = int(np.prod(shape))
            parts[name] = theta[i:i + size].reshape(shape)
            i += size
        if i != theta.size:
            raise ValueError(f"expected {i} parameters, got {theta.size}")
        return cls(**parts)

    def to_dict(self):
        return {"schema_version": PARAMS_SCHEMA,
                **{k: getattr(self, k).tolist() for k in _SHAPES}}

    @classmethod
    def from_dict(cls, data):
        if data.get("schema_version") != PARAMS_SCHEMA:
            raise ValueError(f"unsupported params schema {data.get('schema_version')!r}")
        return cls(**{k: np.array(data[k], dtype=float) for k in _SHAPES})


NUM_PARAMS = sum(int(np.prod(s)) for s in _SHAPES.values())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    rms_decay: float = 0.99
    rms_epsilon: float = 1e-8
    solver_steps_per_day: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.solver_steps_per_day < 1:
            raise ValueError("epochs, batch_size and solver_steps_per_day must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.rms_decay < 1:
            raise ValueError("rms_decay must lie in (0, 1)")
        if not self.rms_epsilon > 0:
            raise ValueError("rms_epsilon must be positive")


@dataclass(frozen=True)
class Trajectory:
    t_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != t.size:
            raise ValueError("values must have one row per grid point")
        if t.size > 1 and not np.all(np.diff(t) == 1.0):
            raise ValueError("t_grid must have unit spacing")
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "values", v)


@dataclass
class TrainResult:
    params: NodeParams
    loss_curve: np.ndarray = field(default_factory=lambda: np.empty(0))

    def write_loss_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(self.loss_curve, start=1):
                w.writerow([i, repr(float(v))])


# -- compiled kernels ---------------------------------------------------------

@numba.njit(cache=True)
def _field(w1, b1, w2, b2, u, a, f):
    hidden, dim = w1.shape
    for i in range(hidden):
        s = b1[i]
        for j in range(dim):
            s += w1[i, j] * u[j]
        a[i] = np.tanh(s)
    for k in range(dim):
        s = b2[k]
        for i in range(hidden):
            s += w2[k, i] * a[i]
        f[k] = s


@numba.njit(cache=True)
def _forward(w1, b1, w2, b2, y0, h, nsteps, U, A, K, Y):
    """RK4 from y0; records stage inputs U, activations A, slopes K, states Y."""
    dim = y0.shape[0]
    for j in range(dim):
        Y[0, j] = y0[j]
    for n in range(nsteps):
        for s in range(4):
            c = 0.0 if s == 0 else (h if s == 3 else 0.5 * h)
            for j in range(dim):
                U[n, s, j] = Y[n, j] + (c * K[n, s - 1, j] if s > 0 else 0.0)
            _field(w1, b1, w2, b2, U[n, s], A[n, s], K[n, s])
        for j in range(dim):
            Y[n + 1, j] = Y[n, j] + h / 6.0 * (K[n, 0, j] + 2.0 * K[n, 1, j]
                                               + 2.0 * K[n, 2, j] + K[n, 3, j])


@numba.njit(cache=True)
def _field_vjp(w1, w2, u, a, v, gw1, gb1, gw2, gb2, ubar, zbar):
    """Accumulate parameter cotangents of f(u) against v; write du into ubar."""
    hidden, dim = w1.shape
    for k in range(dim):
        gb2[k] += v[k]
        for i in range(hidden):
            gw2[k, i] += v[k] * a[i]
    for i in range(hidden):
        s = 0.0
        for k in range(dim):
            s += w2[k, i] * v[k]
        zbar[i] = s * (1.0 - a[i] * a[i])
        gb1[i] += zbar[i]
    for j in range(dim):
        ubar[j] = 0.0
    for i in range(hidden):
        z = zbar[i]
        for j in range(dim):
            gw1[i, j] += z * u[j]
            ubar[j] += w1[i, j] * z


@numba.njit(cache=True)
def _backward(w1, w2, h, nsteps, U, A, ybar_in, gw1, gb1, gw2, gb2, y0bar):
    """Reverse sweep through the RK4 steps; ybar_in holds dL/dY per state."""
    dim = U.shape[2]
    hidden = A.shape[2]
    ybar = ybar_in[nsteps].copy()
    kb = np.empty((4, dim))
    ubar = np.empty(dim)
    zbar = np.empty(hidden)
    for n in range(nsteps - 1, -1, -1):
        for j in range(dim):
            kb[0, j] = h / 6.0 * ybar[j]
            kb[1, j] = h / 3.0 * ybar[j]
            kb[2, j] = h / 3.0 * ybar[j]
            kb[3, j] = h / 6.0 * ybar[j]
        for s in range(3, -1, -1):
            _field_vjp(w1, w2, U[n, s], A[n, s], kb[s], gw1, gb1, gw2, gb2, ubar, zbar)
            c = h if s == 3 else 0.5 * h
            for j in range(dim):
                ybar[j] += ubar[j]
                if s > 0:
                    kb[s - 1, j] += c * ubar[j]
        for j in range(dim):
            ybar[j] += ybar_in[n, j]
    for j in range(dim):
        y0bar[j] = ybar[j]


@numba.njit(cache=True)
def _batch_loss_grad(w1, b1, w2, b2, y0, spd, targets, rows,
                     gw1, gb1, gw2, gb2, U, A, K, Y, ybar, y0bar):
    """MAE over days 1..p of the shared prediction against targets[rows]."""
    nb = rows.shape[0]
    p = targets.shape[1] - 1
    dim = targets.shape[2]
    nsteps = p * spd
    h = 1.0 / spd
    _forward(w1, b1, w2, b2, y0, h, nsteps, U, A, K, Y)
    gw1[:] = 0.0
    gb1[:] = 0.0
    gw2[:] = 0.0
    gb2[:] = 0.0
    ybar[:] = 0.0
    norm = 1.0 / (nb * p * dim)
    loss = 0.0
    for d in range(1, p + 1):
        for j in range(dim):
            pred = Y[d * spd, j]
            acc = 0.0
            for r in range(nb):
                diff = pred - targets[rows[r], d, j]
                loss += abs(diff)
                if diff > 0.0:
                    acc += 1.0
                elif diff < 0.0:
                    acc -= 1.0
            ybar[d * spd, j] = acc * norm
    _backward(w1, w2, h, nsteps, U, A, ybar, gw1, gb1, gw2, gb2, y0bar)
    return loss * norm


@numba.njit(cache=True)
def _train_epoch(theta, v, order, batch_size, lr, rho, eps, spd, targets, y0):
    hidden, dim = 96, targets.shape[2]
    nw1, nw2 = hidden * dim, dim * hidden
    p = targets.shape[1] - 1
    nsteps = p * spd
    g = np.zeros_like(theta)
    U = np.empty((nsteps, 4, dim))
    A = np.empty((nsteps, 4, hidden))
    K = np.empty((nsteps, 4, dim))
    Y = np.empty((nsteps + 1, dim))
    ybar = np.empty((nsteps + 1, dim))
    y0bar = np.empty(dim)
    n = order.shape[0]
    total = 0.0
    count = 0
    for start in range(0, n, batch_size):
        rows = order[start:min(start + batch_size, n)]
        w1 = theta[:nw1].reshape((hidden, dim))
        b1 = theta[nw1:nw1 + hidden]
        w2 = theta[nw1 + hidden:nw1 + hidden + nw2].reshape((dim, hidden))
        b2 = theta[nw1 + hidden + nw2:]
        gw1 = g[:nw1].reshape((hidden, dim))
        gb1 = g[nw1:nw1 + hidden]
        gw2 = g[nw1 + hidden:nw1 + hidden + nw2].reshape((dim, hidden))
        gb2 = g[nw1 + hidden + nw2:]
        loss = _batch_loss_grad(w1, b1, w2, b2, y0, spd, targets, rows,
                                gw1, gb1, gw2, gb2, U, A, K, Y, ybar, y0bar)
        if not np.isfinite(loss):
            return np.nan
        total += loss
        count += 1
        for i in range(theta.shape[0]):
            v[i] = rho * v[i] + (1.0 - rho) * g[i] * g[i]
            theta[i] -= lr * g[i] / np.sqrt(v[i] + eps)
    return total / count


# -- public API ---------------------------------------------------------------

def vector_field(params, y):
    """w2 @ tanh(w1 @ y + b1) + b2."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NodeError("non-finite input to vector field")
    return params.w2 @ np.tanh(params.w1 @ y + params.b1) + params.b2


def _check_days(t0, t1):
    if float(t0) != int(t0) or float(t1) != int(t1):
        raise ValueError("t0 and t1 must lie on the integer day grid")
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    return int(t0), int(t1)


def _solve(params, y0, days, steps_per_day):
    nsteps = days * steps_per_day
    U = np.empty((nsteps, 4, DIM))
    A = np.empty((nsteps, 4, HIDDEN))
    K = np.empty((nsteps, 4, DIM))
    Y = np.empty((nsteps + 1, DIM))
    _forward(params.w1, params.b1, params.w2, params.b2, y0, 1.0 / steps_per_day,
             nsteps, U, A, K, Y)
    if not np.all(np.isfinite(Y)):
        raise NodeError("non-finite state during ODE solve")
    return U, A, Y


def ode_solve(params, y0, t0, t1, steps_per_day=10):
    """Fixed-step RK4 from day t0 to t1, sampled at whole days."""
    t0, t1 = _check_days(t0, t1)
    y0 = np.ascontiguousarray(y0, dtype=float)
    if y0.shape != (DIM,) or not np.all(np.isfinite(y0)):
        raise NodeError("y0 must be a finite 24-vector")
    _, _, Y = _solve(params, y0, t1 - t0, int(steps_per_day))
    return Trajectory(np.arange(t0, t1 + 1, dtype=float), Y[::int(steps_per_day)].copy())


def mae_loss(pred, target):
    """Mean |pred - target| over every cell after the initial day."""
    if pred.values.shape != target.values.shape or not np.array_equal(pred.t_grid, target.t_grid):
        raise ValueError("trajectory grids do not match")
    return float(np.mean(np.abs(pred.values[1:] - target.values[1:])))


def loss_and_grad(params, y0, targets, steps_per_day=10, rows=None):
    """Batch MAE and its exact gradient for trajectories sharing ``y0``.

    ``targets`` has shape (B, p + 1, 24); every target is compared against
    the same predicted trajectory, so one forward and one reverse sweep serve
    the whole batch.
    """
    targets = np.ascontiguousarray(targets, dtype=float)
    if targets.ndim == 2:
        targets = targets[None]
    if targets.ndim != 3 or targets.shape[2] != DIM or targets.shape[1] < 2:
        raise ValueError("targets must have shape (B, p + 1, 24) with p >= 1")
    y0 = np.ascontiguousarray(y0, dtype=float)
    rows = np.arange(targets.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    spd = int(steps_per_day)
    nsteps = (targets.shape[1] - 1) * spd
    g = {k: np.zeros(s) for k, s in _SHAPES.items()}
    U = np.empty((nsteps, 4, DIM))
    A = np.empty((nsteps, 4, HIDDEN))
    K = np.empty((nsteps, 4, DIM))
    Y = np.empty((nsteps + 1, DIM))
    loss = _batch_loss_grad(params.w1, params.b1, params.w2, params.b2, y0, spd, targets, rows,
                            g["w1"], g["b1"], g["w2"], g["b2"], U, A, K, Y,
                            np.empty((nsteps + 1, DIM)), np.empty(DIM))
    if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in g.values()):
        raise NodeError("non-finite value in loss or gradient")
    return loss, NodeParams(**g)


def grad(params, y0, target, steps_per_day=10):
    """Gradient of mae_loss(ode_solve(...), target) with respect to params."""
    values = target.values if isinstance(target, Trajectory) else target
    return loss_and_grad(params, y0, values, steps_per_day)[1]


def train(dataset, config=TrainConfig(), init=None):
    """Fit the vector field to residual trajectories starting at Y = 0.

    ``dataset`` is an array of shape (n, p + 1, 24) or any object carrying
    one as ``.residuals``. Each epoch shuffles the trajectories with a seeded
    stream, walks them in batches, and applies one RMSprop step per batch.
    """
    residuals = np.ascontiguousarray(getattr(dataset, "residuals", dataset), dtype=float)
    if residuals.ndim != 3 or residuals.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (n, p + 1, 24) array")
    if residuals.shape[2] != DIM or residuals.shape[1] < 2:
        raise ValueError("trajectories must be 24-dimensional with p >= 1")
    params = NodeParams.initial(config.seed) if init is None else init
    theta = params.flat()
    v = np.zeros_like(theta)
    rng = stream(config.seed, "node-shuffle")
    y0 = np.zeros(DIM)
    n = residuals.shape[0]
    curve = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = rng.permutation(n).astype(np.int64)
        loss = _train_epoch(theta, v, order, config.batch_size, config.learning_rate,
                            config.rms_decay, config.rms_epsilon,
                            config.solver_steps_per_day, residuals, y0)
        if not np.isfinite(loss) or not np.all(np.isfinite(theta)):
            raise NodeError(f"training diverged at epoch {epoch + 1}")
        curve[epoch] = loss
    return TrainResult(NodeParams.from_flat(theta), curve)


def predict(params, p, q, steps_per_day=10):
    """Y at day p + q when integrating from Y = 0 at day 0."""
    if int(q) < 1:
        raise ValueError("q must be >= 1")
    traj = ode_solve(params, np.zeros(DIM), 0, int(p) + int(q), steps_per_day)
    return traj.values[-1]


def save_params(params, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params.to_dict(), fh)


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        return NodeParams.from_dict(json.load(fh))
