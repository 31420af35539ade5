"""Doubly robust scores and influence-function-based building blocks.

Scores are evaluated over all n pooled observations (identically zero
outside the score's trial), which fixes the n in SE = sqrt(V / n) and in
the specification test without ambiguity. Summation uses numpy's pairwise
reduction, so results are bit-stable regardless of scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Dataset, EstimationError, TreatmentId


class EmptyCellError(EstimationError):
    """No observations carry the requested (trial, arm) combination."""


@dataclass(frozen=True)
class EstimateWithIF:
    """A scalar estimate paired with its per-observation influence values.

    `if_values` are centered at the realized score mean, so they average to
    zero exactly; `value` is the estimate itself (equal to that mean for
    plug-in estimators, and within the targeting residual of it for
    targeted ones).
    """

    value: float
    if_values: np.ndarray

    @property
    def n(self) -> int:
        return self.if_values.shape[0]


def score_vector(dataset: Dataset, nuisance, arm: TreatmentId, k: int) -> np.ndarray:
    """Per-observation doubly robust score for the marginal mean of (arm, k).

    For rows in trial k: (1/pi_k) * [1[A=arm]/e_k * (Y - mu) + mu]; zero
    elsewhere. Overlap clipping inside the evaluators keeps the inverse
    weights bounded.
    """
    out = np.zeros(dataset.n)
    rows = dataset.s == k
    if not rows.any():
        return out
    pi = nuisance.pi_vec(k)[rows]
    e = nuisance.e_vec(k, arm)[rows]
    mu = nuisance.mu_vec(arm, k)[rows]
    treated = (dataset.a[rows] == arm).astype(float)
    out[rows] = (treated / e * (dataset.y[rows] - mu) + mu) / pi
    return out


def dr_score_mean(dataset: Dataset, nuisance, arm: TreatmentId, k: int,
                  i: int) -> float:
    """The doubly robust score of observation i for the (arm, k) mean."""
    if dataset.s[i] != k:
        return 0.0
    pi = nuisance.pi_vec(k)[i]
    e = nuisance.e_vec(k, arm)[i]
    mu = nuisance.mu_vec(arm, k)[i]
    treated = 1.0 if dataset.a[i] == arm else 0.0
    return float((treated / e * (dataset.y[i] - mu) + mu) / pi)


def estimate_marginal_mean(dataset: Dataset, nuisance, arm: TreatmentId,
                           k: int) -> EstimateWithIF:
    """Doubly robust estimate of E[Y | A=arm, S=k] with its influence values."""
    if not dataset.cell_mask(k, arm).any():
        raise EmptyCellError(f"no observations in trial {k} with arm {arm}")
    scores = score_vector(dataset, nuisance, arm, k)
    value = float(scores.mean())
    return EstimateWithIF(value, scores - value)


def estimate_ate(dataset: Dataset, nuisance, k: int) -> EstimateWithIF:
    """Within-trial average treatment effect, arm_a minus arm_b."""
    spec = dataset.trials[k]
    top = estimate_marginal_mean(dataset, nuisance, spec.arm_a, k)
    bot = estimate_marginal_mean(dataset, nuisance, spec.arm_b, k)
    return EstimateWithIF(top.value - bot.value, top.if_values - bot.if_values)


def if_variance(est: EstimateWithIF) -> tuple[float, float]:
    """(asymptotic variance estimate, standard error) from influence values."""
    if est.n < 2:
        raise EstimationError("influence-function variance needs n >= 2")
    variance = float(np.mean(est.if_values ** 2))
    return variance, float(np.sqrt(variance / est.n))
