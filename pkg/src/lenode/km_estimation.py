"""Drift and diffusion estimation from daily increments.

Drift for hour h is the conditional mean of the one-day increment given the
price at hour h, read off a 2-D Gaussian KDE sampled on a regular mesh.
Diffusion is state independent: half the mean cross product of increments.
"""

from dataclasses import dataclass, field

import numpy as np

from .market_data import HOURS

DENSITY_FLOOR = 1e-4
MESH_PAD = 3.0
_CHUNK = 128


class EstimationError(ValueError):
    """Raised when a dataset cannot support the requested estimate."""


class DegenerateKDEError(EstimationError):
    pass


@dataclass(frozen=True)
class DriftPairs:
    hour: int
    x: np.ndarray
    dx: np.ndarray

    def __len__(self):
        return self.x.size

    @property
    def pairs(self):
        return list(zip(self.x.tolist(), self.dx.tolist()))


@dataclass(frozen=True)
class DiffusionTriples:
    hour_i: int
    hour_j: int
    x_i: np.ndarray
    x_j: np.ndarray
    half_product: np.ndarray

    def __len__(self):
        return self.half_product.size


@dataclass(frozen=True)
class Bandwidth:
    h: float
    d: int
    n: int

    @property
    def matrix(self):
        return self.h * np.eye(self.d)


@dataclass(frozen=True)
class DriftField:
    hour: int
    grid: np.ndarray
    values: np.ndarray
    valid_mask: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.grid.shape != self.values.shape or self.grid.shape != self.valid_mask.shape:
            raise EstimationError("grid, values and valid_mask must share one shape")
        if np.any(np.diff(self.grid) <= 0):
            raise EstimationError("drift grid must be strictly increasing")
        if not np.all(np.isfinite(self.values[self.valid_mask])):
            raise EstimationError("drift values must be finite on valid points")

    @classmethod
    def from_function(cls, hour, func, lo, hi, size=1000):
        """Tabulate an analytic drift, e.g. for a known OU model."""
        grid = np.linspace(lo, hi, size)
        values = np.asarray(func(grid), dtype=float) * np.ones_like(grid)
        return cls(hour, grid, values, np.ones(size, dtype=bool), {"source": "analytic"})

    def to_dict(self):
        return {
            "grid": self.grid.tolist(),
            "values": [float(v) if np.isfinite(v) else None for v in self.values],
            "mask": self.valid_mask.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, hour, data):
        values = np.array([np.nan if v is None else v for v in data["values"]], dtype=float)
        return cls(int(hour), np.array(data["grid"], dtype=float), values,
                   np.array(data["mask"], dtype=bool), dict(data.get("provenance", {})))


@dataclass(frozen=True)
class DiffusionMatrix:
    d2: np.ndarray
    sigma: np.ndarray
    clamped_eigenvalues: int

    def to_dict(self):
        return {"d2": self.d2.tolist(), "sigma": self.sigma.tolist(),
                "clamped_eigenvalues": int(self.clamped_eigenvalues)}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["d2"], dtype=float), np.array(data["sigma"], dtype=float),
                   int(data["clamped_eigenvalues"]))


def _hour_column(matrix, hour):
    if not 1 <= int(hour) <= HOURS:
        raise EstimationError(f"hour {hour} outside 1..24")
    values = matrix.values if hasattr(matrix, "values") else np.asarray(matrix, float)
    if values.shape[0] < 2:
        raise EstimationError("need at least 2 days to form increments")
    return values[:, int(hour) - 1]


def build_drift_dataset(matrix, hour):
    """Pairs (x_k, x_{k+1} - x_k) for one hour, k = 0..N-2, at a one-day lag."""
    col = _hour_column(matrix, hour)
    return DriftPairs(int(hour), col[:-1].copy(), np.diff(col))


def build_diffusion_dataset(matrix, hi, hj, drift=None):
    """Triples (x_i, x_j, dx_i * dx_j / 2) for an hour pair.

    ``drift`` optionally gives a pair of :class:`DriftField` for hours
    ``hi`` and ``hj``; their conditional mean is removed from each increment
    before forming the product. At a one-day lag the raw product also picks up
    the squared drift, which inflates the noise level of mean-reverting series.
    """
    ci, cj = _hour_column(matrix, hi), _hour_column(matrix, hj)
    di, dj = np.diff(ci), np.diff(cj)
    if drift is not None:
        fi, fj = drift
        di = di - drift_at(fi, ci[:-1])
        dj = dj - drift_at(fj, cj[:-1])
    return DiffusionTriples(int(hi), int(hj), ci[:-1].copy(), cj[:-1].copy(), 0.5 * di * dj)


def scott_bandwidth(n, d):
    """Scott factor n^(-1/(d+4)) for a d-dimensional kernel."""
    if int(n) < 1:
        raise EstimationError("sample count must be >= 1")
    if int(d) < 1:
        raise EstimationError("dimension must be >= 1")
    n, d = int(n), int(d)
    return Bandwidth(float(n ** (-1.0 / (d + 4))), d, n)


def _kernel(grid, data, width):
    z = (grid[:, None] - data[None, :]) / width
    return np.exp(-0.5 * z * z)


def _axis(data, scale, h, size):
    pad = MESH_PAD * h * scale
    return np.linspace(data.min() - pad, data.max() + pad, size)


def _scales(columns, standardize):
    if not standardize:
        return [1.0] * len(columns)
    out = []
    for c in columns:
        s = float(np.std(c))
        out.append(s if s > 0 else 1.0)
    return out


def _row_weights(kernel_rows, weights):
    # fixed-order reduction per grid row; identical for any chunking of the grid
    return np.einsum("gk,k->g", kernel_rows, weights)


def estimate_drift(pairs, grid_size=1000, standardize=True):
    """Conditional mean of the increment on a ``grid_size`` price grid.

    The joint KDE uses a Gaussian kernel with Scott's factor; with
    ``standardize`` each axis is measured in units of its sample standard
    deviation. The mesh covers the data range padded by three bandwidths on
    both axes, and E[dx | x] is the ratio of Riemann sums over the increment
    axis. Points whose marginal density falls below ``DENSITY_FLOOR`` of the
    peak are flagged invalid.
    """
    x, dx = np.asarray(pairs.x, float), np.asarray(pairs.dx, float)
    n = x.size
    if n < 10:
        raise EstimationError(f"need at least 10 pairs, got {n}")
    if np.ptp(x) == 0:
        raise DegenerateKDEError("degenerate KDE: all prices identical")
    bw = scott_bandwidth(n, 2)
    sx, sy = _scales([x, dx], standardize)
    grid = _axis(x, sx, bw.h, grid_size)
    ygrid = _axis(dx, sy, bw.h, grid_size)

    # the mesh density factorizes per sample: integrate the increment axis first
    ky = _kernel(ygrid, dx, bw.h * sy)
    mass = ky.sum(axis=0)
    moment = np.einsum("jk,j->k", ky, ygrid)

    num = np.empty(grid_size)
    den = np.empty(grid_size)
    for lo in range(0, grid_size, _CHUNK):
        kx = _kernel(grid[lo:lo + _CHUNK], x, bw.h * sx)
        num[lo:lo + _CHUNK] = _row_weights(kx, moment)
        den[lo:lo + _CHUNK] = _row_weights(kx, mass)

    dy = ygrid[1] - ygrid[0]
    marginal = den * dy / (n * 2.0 * np.pi * bw.h ** 2 * sx * sy)
    valid = marginal > DENSITY_FLOOR * marginal.max()
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(den > 0, num / den, np.nan)
    valid &= np.isfinite(values)
    provenance = {
        "n": n, "bandwidth": bw.h, "standardize": bool(standardize),
        "scales": [sx, sy], "data_range": [float(x.min()), float(x.max())],
    }
    return DriftField(pairs.hour, grid, values, valid, provenance)


def drift_at(field, x):
    """Piecewise-linear drift through the valid grid points, clamped at the ends."""
    mask = field.valid_mask
    if not mask.any():
        raise EstimationError(f"drift field for hour {field.hour} has no valid points")
    return np.interp(x, field.grid[mask], field.values[mask])


def estimate_diffusion(triples, verify=False, standardize=True):
    """Unconditional mean of the half-product column.

    With ``verify`` the value is recomputed from a 100 x 100 x 500 KDE mesh
    and an :class:`EstimationError` is raised if the two disagree by more
    than 2% of the mean absolute half-product.
    """
    n = len(triples)
    if n < 2:
        raise EstimationError(f"need at least 2 triples, got {n}")
    value = float(np.mean(triples.half_product))
    if verify:
        mesh = diffusion_mesh_estimate(triples, standardize=standardize)
        scale = max(abs(value), float(np.mean(np.abs(triples.half_product))))
        if abs(mesh - value) > 0.02 * scale:
            raise EstimationError(
                f"mesh estimate {mesh:.6g} disagrees with sample mean {value:.6g} "
                f"for hours ({triples.hour_i}, {triples.hour_j})")
    return value


def diffusion_mesh_estimate(triples, shape=(100, 100, 500), standardize=True):
    """E[half_product] from a 3-D Gaussian KDE sampled on a regular mesh."""
    cols = [np.asarray(triples.x_i, float), np.asarray(triples.x_j, float),
            np.asarray(triples.half_product, float)]
    n = cols[0].size
    bw = scott_bandwidth(n, 3)
    scales = _scales(cols, standardize)
    axes = [_axis(c, s, bw.h, size) for c, s, size in zip(cols, scales, shape)]
    kernels = [_kernel(a, c, bw.h * s) for a, c, s in zip(axes, cols, scales)]
    wx = kernels[0].sum(axis=0)
    wy = kernels[1].sum(axis=0)
    wz = kernels[2].sum(axis=0)
    mz = np.einsum("jk,j->k", kernels[2], axes[2])
    return float(np.sum(wx * wy * mz) / np.sum(wx * wy * wz))


def assemble_diffusion_matrix(d2, asym_tol=1e-6):
    """Symmetric PSD square root of 2*d2, clamping negative eigenvalues."""
    d2 = np.asarray(d2, dtype=float)
    if d2.ndim != 2 or d2.shape[0] != d2.shape[1]:
        raise EstimationError("d2 must be a square matrix")
    norm = np.linalg.norm(d2)
    if np.linalg.norm(d2 - d2.T) > asym_tol * max(norm, np.finfo(float).tiny):
        raise EstimationError("d2 is not symmetric")
    d2 = 0.5 * (d2 + d2.T)
    lam, vecs = np.linalg.eigh(2.0 * d2)
    clamped = int(np.sum(lam < 0))
    lam = np.clip(lam, 0.0, None)
    sigma = (vecs * np.sqrt(lam)) @ vecs.T
    sigma = 0.5 * (sigma + sigma.T)
    return DiffusionMatrix(d2, sigma, clamped)


def estimate_diffusion_matrix(matrix, drift_fields=None, verify=False, standardize=True):
    """Fill the 24x24 D2 matrix entry by entry and assemble sigma."""
    d2 = np.empty((HOURS, HOURS))
    for i in range(1, HOURS + 1):
        for j in range(i, HOURS + 1):
            drift = None if drift_fields is None else (drift_fields[i - 1], drift_fields[j - 1])
            triples = build_diffusion_dataset(matrix, i, j, drift=drift)
            d2[i - 1, j - 1] = d2[j - 1, i - 1] = estimate_diffusion(
                triples, verify=verify, standardize=standardize)
    return assemble_diffusion_matrix(d2)
