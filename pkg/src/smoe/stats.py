"""Scalar statistics over activation columns.

Each function condenses the channel values observed at one spatial
location into a number (or small parameter set) that says how busy and
how spread out that location is.  All math runs in float64; columns
carry their own epsilon shift, applied before any logarithm.

These scalar forms are the reference route.  The vectorized map
implementations must agree with them to within 1e-9 per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import digamma, ndtr, polygamma

from .errors import UsageError
from .tensor_io import ActivationColumn, Stage

#: Finite stand-in for an entropy of -inf (degenerate, zero-spread fits).
#: Kept at the float32 minimum so float64 arithmetic downstream (map
#: moments, CDF normalization) cannot overflow on it.
DEGENERATE_ENTROPY = float(np.finfo(np.float32).min)

#: Spread below which a fitted normal is treated as a point mass.
SIGMA_FLOOR = 1e-12

#: Truncation depth (in parent standard deviations) beyond which the
#: truncated-normal formulas switch to their asymptotic tail form.
DEEP_TAIL_ALPHA = 37.0

_LN2 = float(np.log(2.0))
_INV_SQRT_2PI = 1.0 / float(np.sqrt(2.0 * np.pi))


class StatisticKind(str, Enum):
    """Selectable per-column statistics."""

    SMOE_SCALE = "smoe_scale"
    NORMAL_MEAN = "normal_mean"
    NORMAL_STD = "normal_std"
    SHANNON_ENTROPY = "shannon_entropy"
    LOGNORMAL_MEAN = "lognormal_mean"
    LOGNORMAL_ENTROPY = "lognormal_entropy"
    TRUNCNORMAL_MEAN = "truncnormal_mean"
    TRUNCNORMAL_STD = "truncnormal_std"
    TRUNCNORMAL_ENTROPY = "truncnormal_entropy"

    @property
    def required_stage(self) -> Stage:
        # Truncated-normal fits need the signed values the rectifier saw;
        # everything else works on rectified output.
        if self in (
            StatisticKind.TRUNCNORMAL_MEAN,
            StatisticKind.TRUNCNORMAL_STD,
            StatisticKind.TRUNCNORMAL_ENTROPY,
        ):
            return Stage.PRE
        return Stage.POST


def _shifted(column: ActivationColumn) -> np.ndarray:
    xs = np.asarray(column.values, dtype=np.float64) + column.epsilon
    if np.any(xs <= 0.0):
        raise UsageError("log-based statistics need non-negative activations")
    return xs


def smoe_scale(column: ActivationColumn) -> float:
    """Scale parameter proxy for a gamma fit of the column.

    Computed as ``mu * (log2(mu) - mean(log2(x_k)))`` on the shifted
    values, i.e. the mean of ``mu * log2(mu / x_k)``.  Zero exactly when
    all entries are equal, strictly positive otherwise, and it scales
    linearly when the whole column is scaled.
    """
    xs = _shifted(column)
    if np.all(xs == xs[0]):
        return 0.0
    mu = float(xs.mean())
    return mu * (np.log2(mu) - float(np.mean(np.log2(xs))))


def normal_stats(column: ActivationColumn) -> tuple[float, float]:
    """Sample mean and population standard deviation of the raw values."""
    xs = np.asarray(column.values, dtype=np.float64)
    return float(xs.mean()), float(xs.std())


def shannon_entropy(column: ActivationColumn) -> float:
    """Entropy in bits of the column normalized to a distribution.

    Shifted values are divided by their sum, so the result lies in
    ``[0, log2(r)]`` with the maximum at a perfectly uniform column.
    """
    xs = _shifted(column)
    p = xs / xs.sum()
    return float(-(p * np.log2(p)).sum())


def lognormal_stats(column: ActivationColumn) -> tuple[float, float]:
    """Mean and entropy (bits) of a log-normal fit in base 2.

    The fit takes the mean ``m`` and population spread ``s`` of
    ``log2(x_k + eps)``.  A constant column has zero spread; its mean is
    the shifted constant and its entropy degenerates to
    :data:`DEGENERATE_ENTROPY`.
    """
    xs = _shifted(column)
    if np.all(xs == xs[0]):
        return float(xs[0]), DEGENERATE_ENTROPY
    logs = np.log2(xs)
    m = float(logs.mean())
    s = float(logs.std())
    mean = float(2.0 ** (m + s * s * _LN2 / 2.0))
    if s == 0.0:
        return mean, DEGENERATE_ENTROPY
    entropy = m + 0.5 * float(np.log2(2.0 * np.pi * np.e * s * s * _LN2 * _LN2))
    return mean, entropy


@dataclass(frozen=True)
class TruncatedNormalParams:
    """Normal fit of pre-activation values truncated below zero.

    ``mu`` and ``sigma`` describe the parent normal; the ``trunc_*``
    fields describe the distribution after cutting away mass below 0.
    """

    mu: float
    sigma: float
    trunc_mean: float
    trunc_std: float
    trunc_entropy: float


def truncnormal_stats(column: ActivationColumn) -> TruncatedNormalParams:
    """Fit a normal to the raw column and truncate it at zero.

    With ``alpha = -mu/sigma``, ``Z = 1 - Phi(alpha)`` and
    ``lambda = phi(alpha)/Z``:

    * mean:    ``mu + sigma * lambda``
    * var:     ``sigma^2 * (1 + alpha*lambda - lambda^2)``
    * entropy: ``ln(sqrt(2*pi*e) * sigma * Z) + alpha*lambda/2``  (nats)

    A spread under :data:`SIGMA_FLOOR` collapses the fit to a point
    mass: mean ``max(mu, 0)``, zero spread, degenerate entropy.  Past
    ``alpha >= DEEP_TAIL_ALPHA`` the asymptotic tail form of the same
    expressions takes over.
    """
    xs = np.asarray(column.values, dtype=np.float64)
    mu = float(xs.mean())
    sigma = float(xs.std())
    if sigma < SIGMA_FLOOR:
        return TruncatedNormalParams(mu, sigma, max(mu, 0.0), 0.0, DEGENERATE_ENTROPY)
    alpha = -mu / sigma
    if alpha >= DEEP_TAIL_ALPHA:
        # Phi and the density both go subnormal past alpha ~ 38 and their
        # ratio loses all precision.  Continue with the tail limits of the
        # same formulas instead: the surviving mass is nearly exponential
        # with scale sigma/alpha.
        return TruncatedNormalParams(
            mu, sigma, sigma / alpha, sigma / alpha, 1.0 + float(np.log(sigma / alpha))
        )
    z = float(ndtr(-alpha))
    lam = _INV_SQRT_2PI * float(np.exp(-0.5 * alpha * alpha)) / z
    trunc_mean = mu + sigma * lam
    trunc_var = sigma * sigma * (1.0 + alpha * lam - lam * lam)
    trunc_std = float(np.sqrt(max(trunc_var, 0.0)))
    trunc_entropy = float(np.log(np.sqrt(2.0 * np.pi * np.e) * sigma * z)) + alpha * lam / 2.0
    return TruncatedNormalParams(mu, sigma, trunc_mean, trunc_std, trunc_entropy)


def gamma_scale_oracle(column: ActivationColumn) -> float:
    """Maximum-likelihood gamma scale via Newton iteration.

    Solves ``ln(k) - psi(k) = s`` for the shape ``k`` starting from the
    standard closed-form approximation, then returns ``theta = mu / k``.
    This is the slow, exact fit the fast statistic stands in for; it is
    used for cross-checks, not in the map pipeline.
    """
    xs = _shifted(column)
    if np.all(xs == xs[0]):
        return 0.0
    mu = float(xs.mean())
    s = float(np.log(mu) - np.mean(np.log(xs)))
    if s <= 0.0:
        return 0.0
    k = (3.0 - s + np.sqrt((s - 3.0) ** 2 + 24.0 * s)) / (12.0 * s)
    for _ in range(100):
        step = (np.log(k) - digamma(k) - s) / (1.0 / k - polygamma(1, k))
        k -= step
        if abs(step) < 1e-10:
            break
    return mu / float(k)


def column_statistic(kind: StatisticKind | str, column: ActivationColumn) -> float:
    """Evaluate one selectable statistic on a single column."""
    kind = StatisticKind(kind)
    if kind is StatisticKind.SMOE_SCALE:
        return smoe_scale(column)
    if kind is StatisticKind.NORMAL_MEAN:
        return normal_stats(column)[0]
    if kind is StatisticKind.NORMAL_STD:
        return normal_stats(column)[1]
    if kind is StatisticKind.SHANNON_ENTROPY:
        return shannon_entropy(column)
    if kind is StatisticKind.LOGNORMAL_MEAN:
        return lognormal_stats(column)[0]
    if kind is StatisticKind.LOGNORMAL_ENTROPY:
        return lognormal_stats(column)[1]
    params = truncnormal_stats(column)
    if kind is StatisticKind.TRUNCNORMAL_MEAN:
        return params.trunc_mean
    if kind is StatisticKind.TRUNCNORMAL_STD:
        return params.trunc_std
    return params.trunc_entropy
