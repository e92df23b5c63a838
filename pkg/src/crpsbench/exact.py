"""Closed-form CRPS for Gaussian predictive distributions.

These functions are the analytical references that every sample-based
estimator in the package is checked against.  All of them broadcast over
numpy arrays, so a whole forecast horizon can be scored in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

SQRT_PI = np.sqrt(np.pi)
SQRT_2 = np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class CrpsTermValues:
    """Three-term split of the CRPS: ``total = error + mean - 2 * cdf``.

    Fields may be scalars or arrays of matching shape.
    """

    error_term: np.ndarray | float
    mean_term: np.ndarray | float
    cdf_term: np.ndarray | float

    @property
    def total(self):
        return self.error_term + self.mean_term - 2.0 * self.cdf_term


def norm_cdf(z):
    """Standard normal CDF via ``erfc``; absolute error below 1e-15."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / SQRT_2)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _check(mean, std, y):
    mean, std, y = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(std, dtype=float), np.asarray(y, dtype=float)
    )
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(np.isfinite(y))):
        raise ValueError("mean, std and y must be finite")
    if np.any(std <= 0):
        raise ValueError("std must be strictly positive")
    return mean, std, y


def _scalar_if_0d(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def crps_gaussian(mean, std, y):
    """CRPS of ``N(mean, std**2)`` against the observation ``y``.

    Parameters
    ----------
    mean, std, y : array_like
        Broadcastable predictive means, standard deviations (> 0) and
        observations.

    Returns
    -------
    float or ndarray
        ``std * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))`` with
        ``z = (y - mean) / std``.
    """
    mean, std, y = _check(mean, std, y)
    z = (y - mean) / std
    out = std * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - 1.0 / SQRT_PI)
    return _scalar_if_0d(out)


def crps_gaussian_terms(mean, std, y) -> CrpsTermValues:
    """Error, mean and CDF terms of the Gaussian CRPS in closed form.

    ``error_term = E|Y - y|``, ``mean_term = E[Y]`` and
    ``cdf_term = E[Y F(Y)] = (mean + std / sqrt(pi)) / 2``.
    """
    mean, std, y = _check(mean, std, y)
    z = (y - mean) / std
    error = std * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z))
    cdf = 0.5 * (mean + std / SQRT_PI)
    return CrpsTermValues(_scalar_if_0d(error), _scalar_if_0d(mean.copy()), _scalar_if_0d(cdf))


def dkw_epsilon(M: int, alpha: float) -> float:
    """Half-width of the Dvoretzky-Kiefer-Wolfowitz band for ``M`` samples.

    With probability at least ``1 - alpha`` the empirical CDF of ``M``
    i.i.d. draws stays within this distance of the true CDF everywhere.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    return float(np.sqrt(np.log(2.0 / alpha) / (2.0 * M)))


def predicted_plugin_bias(mean, std, M: int):
    """Expected bias ``E[C(F_hat)] - C(F)`` of the plug-in CDF term.

    The empirical-CDF estimate of ``E[Y F(Y)]`` keeps the ``M`` self-pairs
    ``y_i * 1{y_i <= y_i} = y_i``, which shifts its expectation by
    ``(mean - C(F)) / M``.  The induced bias of the full plug-in CRPS is
    ``-2`` times this value.
    """
    if M < 1:
        raise ValueError(f"M must be a positive integer, got {M}")
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    out = (mean - 0.5 * (mean + std / SQRT_PI)) / M
    return _scalar_if_0d(out)
