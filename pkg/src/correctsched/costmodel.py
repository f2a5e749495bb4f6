"""Transcriber-specific supervision-time model.

Exact Gaussian-process regression on log supervision time with an explicit
prior mean function. The model is rebuilt from a sliding window of the most
recent observations each time new times arrive; fitted models are immutable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

LN5 = math.log(5.0)
N_FEATURES = 3
_PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class SegmentFeatures:
    n_words: int
    audio_duration_s: float
    mean_confidence: float

    def __post_init__(self) -> None:
        if self.n_words < 1:
            raise ValueError(f"n_words must be >= 1, got {self.n_words}")
        if self.audio_duration_s < 0:
            raise ValueError(f"audio_duration_s must be >= 0, got {self.audio_duration_s}")
        if not 0.0 <= self.mean_confidence <= 1.0:
            raise ValueError(f"mean_confidence must lie in [0, 1], got {self.mean_confidence}")

    def as_array(self) -> np.ndarray:
        return np.array([self.n_words, self.audio_duration_s, self.mean_confidence], dtype=float)


@dataclass(frozen=True)
class CostObservation:
    features: SegmentFeatures
    observed_time_s: float

    def __post_init__(self) -> None:
        if not (self.observed_time_s > 0 and math.isfinite(self.observed_time_s)):
            raise ValueError(f"observed_time_s must be positive and finite, got {self.observed_time_s}")


@dataclass(frozen=True)
class LinearLogPrior:
    """Prior mean ``intercept + coef . x`` in log-seconds."""

    intercept: float
    coef: tuple[float, float, float]

    @classmethod
    def fit(cls, X: np.ndarray, times: np.ndarray) -> LinearLogPrior:
        A = np.column_stack([np.ones(len(X)), X])
        sol, *_ = np.linalg.lstsq(A, np.log(times), rcond=None)
        return cls(float(sol[0]), tuple(float(c) for c in sol[1:]))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(X, dtype=float) @ np.asarray(self.coef)


def prior_mean(X: np.ndarray | SegmentFeatures, prior: str | LinearLogPrior = "overhead") -> np.ndarray | float:
    """Prior log supervision time.

    ``overhead`` is ``ln(2 + n)`` and ``naive`` is ``ln(n)`` for a segment
    of ``n`` words.
    """
    if isinstance(X, SegmentFeatures):
        return float(prior_mean(X.as_array()[None, :], prior)[0])
    X = np.asarray(X, dtype=float)
    if isinstance(prior, LinearLogPrior):
        return prior(X)
    n = X[:, 0]
    if prior == "overhead":
        return np.log(2.0 + n)
    if prior == "naive":
        return np.log(n)
    raise ValueError(f"unknown cost prior {prior!r}")


def prior_time(X: np.ndarray, prior: str | LinearLogPrior = "overhead") -> np.ndarray:
    """The prior in seconds, exact for the named priors (no log round trip)."""
    X = np.asarray(X, dtype=float)
    if prior == "overhead":
        return 2.0 + X[:, 0]
    if prior == "naive":
        return X[:, 0].copy()
    return np.exp(prior_mean(X, prior))


@dataclass(frozen=True)
class CostConfig:
    prior: str | LinearLogPrior = "overhead"
    window: int = 1000
    signal_var: float = LN5
    noise_var: float = LN5
    lengthscale: float = 1.0

    def __post_init__(self) -> None:
        if isinstance(self.prior, str) and self.prior not in ("overhead", "naive"):
            raise ValueError(f"unknown cost prior {self.prior!r}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.signal_var <= 0 or self.noise_var <= 0 or self.lengthscale <= 0:
            raise ValueError("kernel variances and lengthscale must be positive")


class TimeModel(Protocol):
    """Anything the scheduler can ask for supervision-time predictions."""

    def predict_time(self, X: np.ndarray) -> np.ndarray: ...

    def update(self, new_observations: Sequence[CostObservation]) -> TimeModel: ...


@dataclass(frozen=True, eq=False)
class CostModel:
    config: CostConfig = field(default_factory=CostConfig)
    observations: tuple[CostObservation, ...] = ()
    # training state; empty when there are no observations
    _center: np.ndarray = field(default=None, repr=False)
    _scale: np.ndarray = field(default=None, repr=False)
    _Xs: np.ndarray = field(default=None, repr=False)
    _chol: tuple = field(default=None, repr=False)
    _alpha: np.ndarray = field(default=None, repr=False)

    @classmethod
    def fit(cls, observations: Iterable[CostObservation] = (), config: CostConfig | None = None) -> CostModel:
        config = config or CostConfig()
        obs = tuple(observations)
        for o in obs:
            if not isinstance(o, CostObservation):
                raise TypeError(f"expected CostObservation, got {type(o).__name__}")
        obs = obs[-config.window :]
        if not obs:
            return cls(config, ())
        X = np.array([o.features.as_array() for o in obs])
        y = np.log([o.observed_time_s for o in obs]) - prior_mean(X, config.prior)
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        scale = scale * config.lengthscale
        Xs = (X - center) / scale
        K = _se_kernel(Xs, Xs, config.signal_var)
        K[np.diag_indices_from(K)] += config.noise_var
        chol = cho_factor(K, lower=True, check_finite=False)
        alpha = cho_solve(chol, y, check_finite=False)
        return cls(config, obs, center, scale, Xs, chol, alpha)

    def update(self, new_observations: Sequence[CostObservation]) -> CostModel:
        if not new_observations:
            return self
        return CostModel.fit(self.observations + tuple(new_observations), self.config)

    def __len__(self) -> int:
        return len(self.observations)

    def predict_log(self, X: np.ndarray, return_var: bool = False):
        """Posterior mean (and latent variance) of log time at rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        mean = prior_mean(X, self.config.prior)
        var = np.full(len(X), self.config.signal_var) if return_var else None
        if not self.observations:
            return (mean, var) if return_var else mean
        weights = self.config.signal_var * self._alpha
        for lo in range(0, len(X), _PREDICT_CHUNK):
            Zs = (X[lo : lo + _PREDICT_CHUNK] - self._center) / self._scale
            Kx = _se_kernel(Zs, self._Xs, 1.0)
            mean[lo : lo + len(Zs)] += Kx @ weights
            if return_var:
                V = solve_triangular(self._chol[0], self.config.signal_var * Kx.T, lower=True, check_finite=False)
                var[lo : lo + len(Zs)] -= np.einsum("ij,ij->j", V, V)
        if return_var:
            return mean, np.maximum(var, 0.0)
        return mean

    def predict_time(self, X: np.ndarray) -> np.ndarray:
        """Predicted supervision time in seconds (log-normal median)."""
        if not self.observations:
            return prior_time(np.atleast_2d(X), self.config.prior)
        return np.exp(self.predict_log(X))

    def predict(self, features: SegmentFeatures) -> tuple[float, float]:
        """Time in seconds and latent log-time variance at one point."""
        X = features.as_array()[None, :]
        _, var = self.predict_log(X, return_var=True)
        return float(self.predict_time(X)[0]), float(var[0])

    def with_config(self, **changes) -> CostModel:
        return CostModel.fit(self.observations, replace(self.config, **changes))


def _se_kernel(A: np.ndarray, B: np.ndarray, signal_var: float) -> np.ndarray:
    # one matmul yields -0.5 * squared distance; exp is applied in place
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    left = np.column_stack([A, -0.5 * aa, np.ones(len(A))])
    right = np.column_stack([B, np.ones(len(B)), -0.5 * bb])
    G = left @ right.T
    np.minimum(G, 0.0, out=G)
    np.exp(G, out=G)
    if signal_var != 1.0:
        G *= signal_var
    return G


def cm_metrics(predictions: Sequence[float], observations: Sequence[float]) -> tuple[float, float]:
    """Mean absolute error and bias (mean of prediction minus truth), seconds."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(observations, dtype=float)
    if p.shape != y.shape:
        raise ValueError("predictions and observations differ in length")
    if p.size == 0:
        raise ValueError("metrics need at least one prediction")
    return float(np.mean(np.abs(p - y))), float(np.mean(p - y))


def segment_features(transcript, start: int, stop: int) -> SegmentFeatures:
    """Features of the transcript words ``[start, stop)``."""
    if not 0 <= start < stop <= len(transcript):
        raise ValueError(f"invalid span [{start}, {stop})")
    conf = transcript.confidences[start:stop]
    duration = float(transcript.ends[stop - 1] - transcript.starts[start])
    return SegmentFeatures(stop - start, max(duration, 0.0), float(np.clip(conf.mean(), 0.0, 1.0)))
