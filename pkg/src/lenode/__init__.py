"""Day-ahead price forecasting with a 24-dimensional Langevin model plus a
neural ODE correction for the non-stationary residual."""

from . import bench, km_estimation, langevin, market_data, node, pipeline

__all__ = ["bench", "km_estimation", "langevin", "market_data", "node", "pipeline"]
__version__ = "0.1.0"
