"""Synthetic ground truth, a fixed-hyperparameter exact GP, and sample panels.

Random draws use numpy's counter-based Philox bit generator seeded through
``SeedSequence``, so a panel is bit-reproducible across platforms for a
given seed.  A seed may be an int or a tuple of ints (the harness derives
per-cell streams as ``(master_seed, replicate, ...)``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exact import crps_gaussian

Seed = Union[int, Sequence[int]]

# jitter escalation for the training Gram matrix
JITTER_BASE = 1e-10
JITTER_STEPS = 5


class NumericalError(RuntimeError):
    """A linear-algebra step failed even after regularisation."""


def make_rng(seed: Seed) -> np.random.Generator:
    """Philox generator keyed by ``seed`` (int or sequence of ints)."""
    if isinstance(seed, (int, np.integer)):
        entropy = int(seed)
    else:
        entropy = [int(s) for s in seed]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Scalar series on strictly increasing timestamps with a train/test mask.

    Ackley experiments draw a random training subset, so the split is a
    boolean mask rather than a single cut point; multi-sinusoid data use
    the first ``L`` steps for training.
    """

    t: np.ndarray
    y: np.ndarray
    train: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        y = np.asarray(self.y, dtype=float)
        train = np.asarray(self.train, dtype=bool)
        if not (t.ndim == y.ndim == train.ndim == 1 and t.size == y.size == train.size):
            raise ValueError("t, y and train must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValueError("timestamps and observations must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if train.all() or not train.any():
            raise ValueError("dataset needs at least one training and one test point")
        for name, arr in (("t", t), ("y", y), ("train", train)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def L(self) -> int:
        return int(self.train.sum())

    @property
    def T(self) -> int:
        return int((~self.train).sum())

    @property
    def t_train(self):
        return self.t[self.train]

    @property
    def y_train(self):
        return self.y[self.train]

    @property
    def t_test(self):
        return self.t[~self.train]

    @property
    def y_test(self):
        return self.y[~self.train]


@dataclass(frozen=True)
class GaussianPredictive:
    """Per-timestep Gaussian predictive marginals ``N(mean_l, std_l**2)``."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValueError("predictive mean and std must be finite")
        if np.any(std <= 0):
            raise ValueError("predictive std must be strictly positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def __len__(self):
        return self.mean.size

    def __getitem__(self, idx) -> "GaussianPredictive":
        return GaussianPredictive(self.mean[idx], self.std[idx])

    def crps(self, y):
        return crps_gaussian(self.mean, self.std, y)


@dataclass(frozen=True)
class SamplePanel:
    """``T x M`` matrix of forecast draws plus the ``T`` observations."""

    draws: np.ndarray
    observations: np.ndarray
    seed: object = None
    t: np.ndarray = None

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        obs = np.asarray(self.observations, dtype=float)
        if draws.ndim != 2 or obs.shape != (draws.shape[0],):
            raise ValueError("draws must be T x M and observations length T")
        if draws.shape[1] < 2:
            raise ValueError("a sample panel needs M >= 2 draws per row")
        if not (np.all(np.isfinite(draws)) and np.all(np.isfinite(obs))):
            raise ValueError("panel entries must be finite")
        t = np.arange(draws.shape[0], dtype=float) if self.t is None else np.asarray(self.t, float)
        for name, arr in (("draws", draws), ("observations", obs), ("t", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.draws.shape[0]

    @property
    def M(self) -> int:
        return self.draws.shape[1]


def ackley_1d(x, a: float = 20.0, b: float = 0.2, c: float = 2.0 * np.pi):
    """One-dimensional Ackley function; global minimum 0 at the origin."""
    x = np.asarray(x, dtype=float)
    return -a * np.exp(-b * np.abs(x)) - np.exp(np.cos(c * x)) + a + np.e


def gen_ackley(
    n_points: int = 209,
    domain_lo: float = -5.0,
    domain_hi: float = 5.0,
    seed: Seed = 0,
    n_train: int = 9,
) -> TimeSeriesDataset:
    """Ackley function on an equispaced grid with a random training subset.

    ``n_train`` grid points are chosen uniformly without replacement for
    training; the remaining ``n_points - n_train`` are the test set.
    """
    if not domain_lo < domain_hi:
        raise ValueError(f"need domain_lo < domain_hi, got [{domain_lo}, {domain_hi}]")
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    if not 1 <= n_train < n_points:
        raise ValueError("n_train must lie in [1, n_points - 1]")
    t = np.linspace(domain_lo, domain_hi, n_points)
    if domain_lo == -domain_hi:
        # a symmetric grid can land 1 ulp off zero; pin exact symmetry
        t = 0.5 * (t - t[::-1])
    train = np.zeros(n_points, dtype=bool)
    train[make_rng(seed).choice(n_points, size=n_train, replace=False)] = True
    return TimeSeriesDataset(t, ackley_1d(t), train)


def gen_multisin(
    freqs: Sequence[float],
    weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
    L: int = 800,
    T: int = 100,
    noise_std: float = 0.0,
    seed: Seed = 0,
    duration: float = 1.0,
) -> TimeSeriesDataset:
    """Sum of four weighted sines ``sum_k w_k sin(2 pi f_k t)`` plus noise.

    ``L + T`` steps span ``[0, duration]``; the first ``L`` are training data.
    """
    freqs = np.asarray(freqs, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if freqs.shape != (4,) or weights.shape != (4,):
        raise ValueError("freqs and weights must each have exactly 4 entries")
    if L < 1 or T < 1:
        raise ValueError("L and T must be positive")
    if noise_std < 0:
        raise ValueError(f"noise_std must be nonnegative, got {noise_std}")
    t = np.linspace(0.0, duration, L + T)
    y = np.sin(2.0 * np.pi * np.outer(t, freqs)) @ weights
    if noise_std > 0:
        y = y + noise_std * make_rng(seed).standard_normal(L + T)
    train = np.arange(L + T) < L
    return TimeSeriesDataset(t, y, train)


def se_kernel(a, b, lengthscale: float, signal_var: float) -> np.ndarray:
    d = np.subtract.outer(np.asarray(a, float), np.asarray(b, float))
    return signal_var * np.exp(-0.5 * (d / lengthscale) ** 2)


def _cholesky_with_jitter(K: np.ndarray):
    try:
        return cho_factor(K, lower=True)
    except LinAlgError:
        pass
    jitter = JITTER_BASE * np.trace(K) / K.shape[0]
    for _ in range(JITTER_STEPS + 1):
        try:
            return cho_factor(K + jitter * np.eye(K.shape[0]), lower=True)
        except LinAlgError:
            jitter *= 10.0
    raise NumericalError("training Gram matrix is not positive definite after jitter escalation")


def fit_gp(
    dataset: TimeSeriesDataset,
    lengthscale: float = 0.5,
    signal_var: float = 1.0,
    noise_var: float = 1e-4,
) -> GaussianPredictive:
    """Exact zero-mean GP regression with a squared-exponential kernel.

    Hyperparameters are fixed, not learned.  The predictive variance at each
    test point includes ``noise_var``.
    """
    if lengthscale <= 0 or signal_var <= 0 or noise_var <= 0:
        raise ValueError("GP hyperparameters must be strictly positive")
    X, y, Xs = dataset.t_train, dataset.y_train, dataset.t_test
    K = se_kernel(X, X, lengthscale, signal_var) + noise_var * np.eye(X.size)
    factor = _cholesky_with_jitter(K)
    Ks = se_kernel(X, Xs, lengthscale, signal_var)
    mean = Ks.T @ cho_solve(factor, y)
    explained = np.einsum("ij,ij->j", Ks, cho_solve(factor, Ks))
    var = signal_var - explained
    # cancellation can push the latent variance a hair below zero
    var = np.clip(var, 0.0, signal_var) + noise_var
    return GaussianPredictive(mean, np.sqrt(var))


def draw_samples(predictive: GaussianPredictive, M: int, seed: Seed, observations=None, t=None) -> SamplePanel:
    """Draw ``M`` i.i.d. values from each predictive marginal.

    Row ``l`` is ``mean_l + std_l * Z_l`` with ``Z`` a ``T x M`` standard
    normal block from :func:`make_rng`; rows are independent.  When no
    ``observations`` are given the predictive means stand in for them.
    """
    if M < 2:
        raise ValueError(f"M must be at least 2, got {M}")
    z = make_rng(seed).standard_normal((len(predictive), M))
    draws = predictive.mean[:, None] + predictive.std[:, None] * z
    if observations is None:
        observations = predictive.mean
    return SamplePanel(draws, observations, seed=seed, t=t)
