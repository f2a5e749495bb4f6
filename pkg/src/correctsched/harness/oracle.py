"""Simulated transcribers with a known ground-truth time model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..corpus import Alignment, Transcript
from ..costmodel import CostConfig, CostModel, CostObservation, LinearLogPrior, SegmentFeatures, segment_features


def gamma_parameters(noise_var: float) -> tuple[float, float]:
    """Shape and scale of a gamma distribution with mean 1 and the given variance."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    return 1.0 / noise_var, noise_var


def gamma_multiplier(noise_var: float, rng: np.random.Generator, size=None):
    if noise_var == 0:
        return 1.0 if size is None else np.ones(size)
    shape, scale = gamma_parameters(noise_var)
    return rng.gamma(shape, scale, size)


@dataclass(frozen=True)
class LogLinearTime:
    """Ground-truth time ``exp(a + b*n + c*duration + d*(1 - confidence))``.

    The defaults are slower than the ``2 + n`` overhead prior everywhere a
    realistic segment can land (at least ~1.15x), with a larger fixed cost per
    segment, superlinear growth in length and a penalty for doubtful words.
    """

    intercept: float = math.log(6.0)
    per_word: float = 0.07
    per_second: float = 0.08
    per_doubt: float = 0.8

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.exp(
            self.intercept + self.per_word * X[:, 0] + self.per_second * X[:, 1] + self.per_doubt * (1.0 - X[:, 2])
        )

    # the oracle-CM policy plans with the noise-free truth and never adapts
    def predict_time(self, X: np.ndarray) -> np.ndarray:
        return self(X)

    def update(self, new_observations) -> LogLinearTime:
        return self


@dataclass(frozen=True, eq=False)
class GPTime:
    """Ground truth given by a GP fitted to simulated enrollment times."""

    model: CostModel

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict_time(np.atleast_2d(X))

    def predict_time(self, X: np.ndarray) -> np.ndarray:
        return self(X)

    def update(self, new_observations) -> GPTime:
        return self


def fit_gp_oracle(
    transcript: Transcript,
    rng: np.random.Generator,
    base: LogLinearTime | None = None,
    n_segments: int = 200,
    enrollment_noise_var: float = 0.05,
    max_len: int = 20,
) -> GPTime:
    """GP ground truth trained on stratified enrollment segments.

    Enrollment times come from ``base`` with gamma noise. The GP's prior mean
    is a least-squares linear fit (in log time) to the same data so that it
    differs from the schedulers' priors.
    """
    from ..session import enrollment_spans

    base = base or LogLinearTime()
    spans = enrollment_spans(transcript, rng, max_len)
    feats = [segment_features(transcript, *next(spans)) for _ in range(n_segments)]
    X = np.array([f.as_array() for f in feats])
    times = base(X) * gamma_multiplier(enrollment_noise_var, rng, len(X))
    prior = LinearLogPrior.fit(X, times)
    obs = [CostObservation(f, float(t)) for f, t in zip(feats, times)]
    return GPTime(CostModel.fit(obs, CostConfig(prior=prior)))


@dataclass
class OracleTranscriber:
    """Takes ``truth(features) * Gamma(1/v, v)`` seconds and fixes segments perfectly.

    Corrections copy the reference words aligned to the segment. Every
    supervision is logged for bookkeeping checks.
    """

    truth: LogLinearTime | GPTime
    noise_var: float = 0.01
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    alignment: Alignment | None = None
    log: list[tuple[int, int, float]] = field(default_factory=list)

    def time_for(self, features: SegmentFeatures) -> float:
        return oracle_time(features, self.truth, self.noise_var, self.rng)

    def supervise(self, transcript: Transcript, start: int, stop: int) -> tuple[float, Sequence[str]]:
        taken = self.time_for(segment_features(transcript, start, stop))
        alignment = self.alignment if self.alignment is not None else transcript.alignment
        fixed = list(transcript.reference[alignment.ref_slice(start, stop)])
        self.log.append((start, stop, taken))
        return taken, fixed


def oracle_time(features: SegmentFeatures, truth, noise_var: float, rng: np.random.Generator) -> float:
    """Noisy ground-truth supervision time in seconds."""
    base = float(truth(features.as_array()[None, :])[0])
    return base * float(gamma_multiplier(noise_var, rng))
