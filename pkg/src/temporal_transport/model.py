"""Domain model: trials, pooled observations, and transport queries.

Treatment codes are opaque non-negative integers, stable across trials
(0 is control by convention). Times are discrete integer periods. All
types are immutable after construction and safe to share across workers.

Trials are assumed to draw disjoint samples from one population; unit
identity is not tracked, so membership in several trials cannot be
detected and is not enforced.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

TreatmentId = int


class EstimationError(RuntimeError):
    """Raised when an estimate is requested that the data cannot support."""


class ConfigurationError(ValueError):
    """Raised for invalid configuration (fold counts, unknown options, ...)."""


@dataclass(frozen=True)
class TrialSpec:
    """One two-arm randomized trial: arms, timing, and design assignment probability.

    `t0` is the administration period, `t1 >= t0` the measurement period,
    and `p_arm_a` the probability a unit is assigned to `arm_a`.
    """

    trial_id: int
    arm_a: TreatmentId
    arm_b: TreatmentId
    t0: int
    t1: int
    p_arm_a: float = 0.5

    @property
    def arms(self) -> tuple[TreatmentId, TreatmentId]:
        return (self.arm_a, self.arm_b)


@dataclass(frozen=True)
class Observation:
    """One experimental record: outcome, assigned arm, trial, covariates."""

    y: float
    a: TreatmentId
    s: int
    x: tuple[float, ...]


class Dataset:
    """Pooled observations over a registry of trials, stored columnwise.

    Arrays are locked read-only after construction; `observations()` yields
    record views for code that prefers rows.
    """

    def __init__(self, trials: Mapping[int, TrialSpec], y: np.ndarray,
                 a: np.ndarray, s: np.ndarray, x: np.ndarray):
        self.trials: dict[int, TrialSpec] = dict(trials)
        self.y = np.asarray(y, dtype=float)
        self.a = np.asarray(a, dtype=int)
        self.s = np.asarray(s, dtype=int)
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError("covariate rows do not match outcome rows")
        for arr in (self.y, self.a, self.s, self.x):
            arr.setflags(write=False)

    @classmethod
    def from_observations(cls, trials: Mapping[int, TrialSpec],
                          observations: Sequence[Observation]) -> "Dataset":
        y = np.array([o.y for o in observations], dtype=float)
        a = np.array([o.a for o in observations], dtype=int)
        s = np.array([o.s for o in observations], dtype=int)
        d = len(observations[0].x) if observations else 0
        x = np.array([o.x for o in observations], dtype=float).reshape(len(observations), d)
        return cls(trials, y, a, s, x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(float(self.y[i]), int(self.a[i]), int(self.s[i]),
                              tuple(self.x[i]))

    def cell_mask(self, k: int, arm: TreatmentId) -> np.ndarray:
        return (self.s == k) & (self.a == arm)

    def replace_outcomes(self, y: np.ndarray) -> "Dataset":
        return Dataset(self.trials, y, self.a, self.s, self.x)


@dataclass(frozen=True)
class ReplicatedQuery:
    """Transport via a pair of trials replicating one arm comparison.

    `anchor_j` is the replicate run at the shifted timing
    (t0 + delta0, t1 + delta1); `anchor_jprime` the replicate at the
    target trial's own timing.
    """

    target_trial: int
    delta0: int
    delta1: int
    anchor_j: int
    anchor_jprime: int


@dataclass(frozen=True)
class CommonArmAnchor:
    """A treatment arm observed at both the source and shifted measurement times."""

    arm: TreatmentId
    trial_at_target: int
    trial_at_source: int


@dataclass(frozen=True)
class CommonArmQuery:
    """Transport via one or more common-arm anchors (measurement-time scaling)."""

    target_trial: int
    delta0: int
    delta1: int
    anchors: tuple[CommonArmAnchor, ...]


TransportQuery = Union[ReplicatedQuery, CommonArmQuery]


def validate_dataset(dataset: Dataset) -> list[str]:
    """Check structural invariants; returns one description per violation.

    An empty list means every downstream operation on the dataset is defined.
    Validation is pure: identical input yields identical output.
    """
    violations: list[str] = []
    for k, t in sorted(dataset.trials.items()):
        if t.trial_id != k:
            violations.append(f"trial {k}: registry key does not match trial_id {t.trial_id}")
        if t.arm_a == t.arm_b:
            violations.append(f"trial {k}: arm_a equals arm_b ({t.arm_a})")
        if t.arm_a < 0 or t.arm_b < 0:
            violations.append(f"trial {k}: negative treatment code")
        if t.t1 < t.t0:
            violations.append(f"trial {k}: measurement time {t.t1} precedes administration {t.t0}")
        if not 0.0 < t.p_arm_a < 1.0:
            violations.append(f"trial {k}: assignment probability {t.p_arm_a} outside (0, 1)")

    if not np.all(np.isfinite(dataset.y)):
        for i in np.flatnonzero(~np.isfinite(dataset.y)):
            violations.append(f"observation {i}: non-finite outcome")
    if dataset.d and not np.all(np.isfinite(dataset.x)):
        for i in np.unique(np.flatnonzero(~np.isfinite(dataset.x)) // max(dataset.d, 1)):
            violations.append(f"observation {i}: non-finite covariate")

    known = set(dataset.trials)
    unknown = np.unique(dataset.s[~np.isin(dataset.s, list(known))])
    for k in unknown:
        violations.append(f"unknown trial {k} referenced by observations")

    for k in sorted(known):
        spec = dataset.trials[k]
        in_trial = dataset.s == k
        if not in_trial.any():
            continue
        bad_arm = in_trial & ~np.isin(dataset.a, spec.arms)
        for i in np.flatnonzero(bad_arm):
            violations.append(
                f"observation {i}: arm {dataset.a[i]} is not an arm of trial {k}")
        for arm in spec.arms:
            if not (in_trial & (dataset.a == arm)).any():
                violations.append(f"trial {k}: arm {arm} has no observations")
    return violations


def _check_anchor(dataset: Dataset, target: TrialSpec, anchor: CommonArmAnchor,
                  delta1: int) -> list[str]:
    out = []
    for role, kid in (("target-time", anchor.trial_at_target),
                      ("source-time", anchor.trial_at_source)):
        if kid not in dataset.trials:
            out.append(f"anchor arm {anchor.arm}: unknown {role} trial {kid}")
            continue
        spec = dataset.trials[kid]
        if anchor.arm not in spec.arms:
            out.append(f"anchor arm {anchor.arm} is not an arm of trial {kid}")
    if out:
        return out
    t_tgt = dataset.trials[anchor.trial_at_target].t1
    t_src = dataset.trials[anchor.trial_at_source].t1
    if t_src != target.t1:
        out.append(f"anchor arm {anchor.arm}: timing mismatch, source trial "
                   f"{anchor.trial_at_source} measures at {t_src}, target trial at {target.t1}")
    if t_tgt != target.t1 + delta1:
        out.append(f"anchor arm {anchor.arm}: timing mismatch, target-time trial "
                   f"{anchor.trial_at_target} measures at {t_tgt}, requested {target.t1 + delta1}")
    return out


def validate_query(dataset: Dataset, query: TransportQuery) -> list[str]:
    """Check that a query's anchors satisfy the arm and timing coverage rules."""
    violations: list[str] = []
    if query.target_trial not in dataset.trials:
        return [f"unknown target trial {query.target_trial}"]
    target = dataset.trials[query.target_trial]

    if isinstance(query, ReplicatedQuery):
        for kid in (query.anchor_j, query.anchor_jprime):
            if kid not in dataset.trials:
                violations.append(f"unknown anchor trial {kid}")
        if violations:
            return violations
        j = dataset.trials[query.anchor_j]
        jp = dataset.trials[query.anchor_jprime]
        if set(j.arms) != set(jp.arms):
            violations.append(
                f"arm mismatch: anchor trials {query.anchor_j} and {query.anchor_jprime} "
                f"compare {j.arms} vs {jp.arms}")
        if (jp.t0, jp.t1) != (target.t0, target.t1):
            violations.append(
                f"timing mismatch: anchor trial {query.anchor_jprime} runs at "
                f"{(jp.t0, jp.t1)}, target at {(target.t0, target.t1)}")
        if (j.t0, j.t1) != (target.t0 + query.delta0, target.t1 + query.delta1):
            violations.append(
                f"timing mismatch: anchor trial {query.anchor_j} runs at "
                f"{(j.t0, j.t1)}, shifted target is "
                f"{(target.t0 + query.delta0, target.t1 + query.delta1)}")
    else:
        if not query.anchors:
            violations.append("common-arm query has no anchors")
        for anchor in query.anchors:
            violations.extend(_check_anchor(dataset, target, anchor, query.delta1))
    return violations
