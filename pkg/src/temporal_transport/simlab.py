"""Synthetic multi-trial data generator, oracle references, and the Monte
Carlo driver that measures bias, RMSE, SE calibration, and coverage.

The default six-trial layout targets trial 1's comparison shifted by half a
seasonal cycle; trials 2-3 replicate the target comparison at the shifted
and original timings, and trials 4-5 carry a second treatment whose arms
serve as common-arm anchors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .model import (CommonArmAnchor, CommonArmQuery, ConfigurationError,
                    Dataset, EstimationError, ReplicatedQuery, TransportQuery,
                    TrialSpec, TreatmentId)
from .nuisance import NuisanceConfig, fit_cross_fitted
from .scores import EstimateWithIF, estimate_ate, if_variance
from .tmle import estimate_tate_tmle
from .transport import (TateResult, anchor_ratios, assemble_wald_ci,
                        estimate_tate_multi_anchor, estimate_tate_strategy1,
                        estimate_tate_strategy2, specification_test)

DEFAULT_GAMMA = 0.3
DEFAULT_THETA: dict[TreatmentId, tuple[float, float, float]] = {
    0: (2.0, 0.5, 0.3),
    1: (3.0, 0.9, 0.5),
    2: (2.5, 0.7, 0.4),
}


def default_trial_table() -> tuple[TrialSpec, ...]:
    """Six equal trials: target, its two replicates, and two anchor-arm trials."""
    return (
        TrialSpec(1, 1, 0, 1, 3),
        TrialSpec(2, 1, 0, 7, 9),
        TrialSpec(3, 1, 0, 1, 3),
        TrialSpec(4, 2, 0, 1, 3),
        TrialSpec(5, 2, 0, 7, 9),
        TrialSpec(6, 1, 0, 4, 6),
    )


def power_trial_table() -> tuple[TrialSpec, ...]:
    """Variant whose anchor arms sit at distinct administration-measurement
    gaps, so a gap-dependent temporal factor becomes detectable."""
    table = list(default_trial_table())
    table[5] = TrialSpec(6, 2, 0, 3, 9)
    return tuple(table)


@dataclass(frozen=True)
class DgpConfig:
    """Data-generating process: seasonal modifier, arm responses, trial layout.

    `violation_kappa` tilts the temporal modifier by kappa * (t1 - t0 - 2),
    a controlled departure from pure measurement-time scaling; zero
    reproduces the measurement-time process exactly. With `noise_sd` zero
    the draw also balances in-sample covariate moments per trial, so
    closed-form targets hold to float precision.
    """

    n_total: int = 1200
    gamma: float = DEFAULT_GAMMA
    noise_sd: float = 1.0
    theta: Mapping[TreatmentId, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_THETA))
    trial_table: tuple[TrialSpec, ...] = field(default_factory=default_trial_table)
    seed: int = 0
    violation_kappa: float = 0.0

    def validate(self) -> None:
        if not -1.0 < self.gamma < 1.0:
            raise ConfigurationError("gamma must lie in (-1, 1) to keep the modifier positive")
        if self.noise_sd < 0.0:
            raise ConfigurationError("noise_sd must be nonnegative")
        if self.n_total < 2 * len(self.trial_table):
            raise ConfigurationError("n_total too small for the trial table")


def lambda_modifier(t: float, gamma: float = DEFAULT_GAMMA) -> float:
    """Seasonal multiplier 1 + gamma * sin(2 pi t / 12), a 12-period cycle."""
    return 1.0 + gamma * math.sin(2.0 * math.pi * t / 12.0)


def theta_response(arm: TreatmentId, x: Sequence[float],
                   theta: Mapping[TreatmentId, tuple[float, float, float]] | None = None
                   ) -> float:
    """Unit response for one arm at covariates (x1, x2)."""
    table = DEFAULT_THETA if theta is None else theta
    if arm not in table:
        raise ConfigurationError(f"unknown arm {arm}")
    c0, c1, c2 = table[arm]
    return c0 + c1 * x[0] + c2 * x[1]


def _effective_modifier(config: DgpConfig, t0: int, t1: int) -> float:
    return lambda_modifier(t1, config.gamma) + config.violation_kappa * (t1 - t0 - 2)


def _trial_sizes(n_total: int, n_trials: int) -> list[int]:
    base = n_total // n_trials
    rem = n_total % n_trials
    return [base + (1 if i < rem else 0) for i in range(n_trials)]


def draw_dataset(config: DgpConfig) -> Dataset:
    """Simulate the pooled dataset; deterministic given the config seed.

    Covariates are x1 ~ N(0,1) and x2 ~ Bernoulli(1/2); trial sizes are
    fixed by design (equal up to remainder). In noiseless mode x1 is
    centered and x2 exactly balanced within each trial.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xD47A]))
    sizes = _trial_sizes(config.n_total, len(config.trial_table))
    ys, arms, trials, xs = [], [], [], []
    exact = config.noise_sd == 0.0
    for spec, nk in zip(config.trial_table, sizes):
        x1 = rng.standard_normal(nk)
        if exact:
            x1 = x1 - x1.mean()
            ones = nk // 2
            x2 = rng.permutation(np.r_[np.zeros(nk - ones), np.ones(ones)])
        else:
            x2 = rng.integers(0, 2, size=nk).astype(float)
        arm = np.where(rng.random(nk) < spec.p_arm_a, spec.arm_a, spec.arm_b)
        lam = _effective_modifier(config, spec.t0, spec.t1)
        theta_a = np.array([config.theta[a][0] for a in arm])
        theta_b1 = np.array([config.theta[a][1] for a in arm])
        theta_b2 = np.array([config.theta[a][2] for a in arm])
        y = (theta_a + theta_b1 * x1 + theta_b2 * x2) * lam
        if not exact:
            y = y + config.noise_sd * rng.standard_normal(nk)
        ys.append(y)
        arms.append(arm)
        trials.append(np.full(nk, spec.trial_id))
        xs.append(np.column_stack([x1, x2]))
    registry = {spec.trial_id: spec for spec in config.trial_table}
    return Dataset(registry, np.concatenate(ys), np.concatenate(arms),
                   np.concatenate(trials), np.vstack(xs))


def _mean_response(config: DgpConfig, arm: TreatmentId) -> float:
    c0, c1, c2 = config.theta[arm]
    return c0 + c1 * 0.0 + c2 * 0.5


def _true_tate_general(config: DgpConfig, k_star: int, delta0: int,
                       delta1: int) -> float:
    """Population transported effect under the (possibly tilted) process."""
    spec = {t.trial_id: t for t in config.trial_table}[k_star]
    effect = _mean_response(config, spec.arm_a) - _mean_response(config, spec.arm_b)
    return effect * _effective_modifier(config, spec.t0 + delta0, spec.t1 + delta1)


def true_tate(config: DgpConfig, k_star: int, delta0: int, delta1: int) -> float:
    """Analytic transported effect; population moments, no Monte Carlo error.

    Defined only for the untilted process (violation_kappa == 0).
    """
    if config.violation_kappa != 0.0:
        raise ConfigurationError("analytic truth is defined only for violation_kappa == 0")
    return _true_tate_general(config, k_star, delta0, delta1)


def true_ratio(config: DgpConfig, k_star: int, delta0: int, delta1: int) -> float:
    spec = {t.trial_id: t for t in config.trial_table}[k_star]
    return (_effective_modifier(config, spec.t0 + delta0, spec.t1 + delta1)
            / _effective_modifier(config, spec.t0, spec.t1))


class OracleNuisance:
    """True nuisance values from the generating process, for diagnostics.

    Trial shares are the design allocation fractions; propensities the
    design assignment probabilities; outcome regressions the exact response
    surface.
    """

    def __init__(self, config: DgpConfig, dataset: Dataset):
        self._config = config
        self._dataset = dataset
        n = dataset.n
        counts = {k: int(np.count_nonzero(dataset.s == k)) for k in dataset.trials}
        self._pi = {k: np.full(n, counts[k] / n) for k in dataset.trials}
        self.fold_of = None

    def pi_vec(self, k: int) -> np.ndarray:
        return self._pi[k]

    def e_vec(self, k: int, arm: TreatmentId) -> np.ndarray:
        spec = self._dataset.trials[k]
        p = spec.p_arm_a if arm == spec.arm_a else 1.0 - spec.p_arm_a
        return np.full(self._dataset.n, p)

    def mu_vec(self, arm: TreatmentId, k: int) -> np.ndarray:
        spec = self._dataset.trials[k]
        lam = _effective_modifier(self._config, spec.t0, spec.t1)
        c0, c1, c2 = self._config.theta[arm]
        return (c0 + c1 * self._dataset.x[:, 0] + c2 * self._dataset.x[:, 1]) * lam

    def with_mu(self, mu):
        from .tmle import _wrap_with_mu
        return _wrap_with_mu(self, mu)


def oracle_estimator(dataset: Dataset, nuisance, k_star: int, ratio: float,
                     alpha: float = 0.05) -> TateResult:
    """Transport with a known temporal ratio: the variance floor reference."""
    if not math.isfinite(ratio):
        raise EstimationError("oracle ratio must be finite")
    tau_t = estimate_ate(dataset, nuisance, k_star)
    psi = tau_t.value * ratio
    if_values = ratio * tau_t.if_values
    est = EstimateWithIF(psi, if_values)
    _, se = if_variance(est)
    lo, hi = assemble_wald_ci(psi, se, alpha)
    return TateResult(psi, se, lo, hi, ratio, {"tau_target": tau_t}, if_values, alpha)


# --- estimator roster for the default layout -------------------------------

TARGET_TRIAL = 1
DELTA = (6, 6)


def standard_queries() -> dict[str, TransportQuery]:
    """Named transport queries for the default six-trial layout.

    The replicated-trials route uses trials 2 (shifted timing) and 3
    (original timing). The control-arm route scales by the control arm
    observed in trial 2 against the target trial's own control arm; the
    treatment-2 route uses trials 5 and 4. The combined route pools both
    common-arm anchors with inverse-variance weights.
    """
    d0, d1 = DELTA
    return {
        "s1": ReplicatedQuery(TARGET_TRIAL, d0, d1, anchor_j=2, anchor_jprime=3),
        "s2-c": CommonArmQuery(TARGET_TRIAL, d0, d1,
                               (CommonArmAnchor(0, 2, 1),)),
        "s2-t": CommonArmQuery(TARGET_TRIAL, d0, d1,
                               (CommonArmAnchor(2, 5, 4),)),
        "s2-m": CommonArmQuery(TARGET_TRIAL, d0, d1,
                               (CommonArmAnchor(0, 2, 1), CommonArmAnchor(2, 5, 4))),
    }


def shared_time_anchors() -> CommonArmQuery:
    """Both anchor arms read off the same trial pair; the natural input for
    the ratio-equality test."""
    d0, d1 = DELTA
    return CommonArmQuery(TARGET_TRIAL, d0, d1,
                          (CommonArmAnchor(0, 5, 4), CommonArmAnchor(2, 5, 4)))


def distinct_gap_anchors() -> CommonArmQuery:
    """Anchor pair for the power layout: gaps of 2 and 6 periods between
    administration and measurement."""
    d0, d1 = DELTA
    return CommonArmQuery(TARGET_TRIAL, d0, d1,
                          (CommonArmAnchor(0, 5, 4), CommonArmAnchor(2, 6, 4)))


ESTIMATOR_NAMES = ("oracle", "s1", "s2-c", "s2-t", "s2-m",
                   "s1-tmle", "s1-tmle-joint", "s2-m-tmle")

Estimator = Callable[[Dataset, object], TateResult]


def make_estimator(name: str, config: DgpConfig, alpha: float = 0.05) -> Estimator:
    """Build a named estimator bound to the default layout's queries."""
    queries = standard_queries()
    if name == "oracle":
        ratio = true_ratio(config, TARGET_TRIAL, *DELTA)
        return lambda data, nu: oracle_estimator(data, nu, TARGET_TRIAL, ratio, alpha)
    if name == "s1":
        return lambda data, nu: estimate_tate_strategy1(data, nu, queries["s1"], alpha)
    if name in ("s2-c", "s2-t"):
        q = queries[name]
        return lambda data, nu: estimate_tate_strategy2(data, nu, q, alpha)
    if name == "s2-m":
        return lambda data, nu: estimate_tate_multi_anchor(data, nu, queries["s2-m"], alpha)
    if name == "s1-tmle":
        return lambda data, nu: estimate_tate_tmle(data, nu, queries["s1"],
                                                   "factorized", "linear", alpha)[0]
    if name == "s1-tmle-joint":
        return lambda data, nu: estimate_tate_tmle(data, nu, queries["s1"],
                                                   "joint", "linear", alpha)[0]
    if name == "s2-m-tmle":
        return lambda data, nu: estimate_tate_tmle(data, nu, queries["s2-m"],
                                                   "factorized", "linear", alpha)[0]
    raise ConfigurationError(f"unknown estimator {name!r}")


@dataclass(frozen=True)
class McMetrics:
    """One estimator's Monte Carlo summary across replications."""

    estimator: str
    n: int
    bias: float
    rmse: float
    se_ratio: float
    coverage: float
    replications: int
    n_failed: int = 0


def rep_seeds(master_seed: int, rep: int) -> tuple[int, int]:
    """Substream seeds for one replication: mixed words of (master, rep)."""
    words = np.random.SeedSequence([master_seed, rep]).generate_state(2)
    return int(words[0]), int(words[1])


def run_monte_carlo(config: DgpConfig, n_reps: int, estimators: Sequence[str],
                    master_seed: int, nuisance_config: NuisanceConfig | None = None,
                    alpha: float = 0.05) -> list[McMetrics]:
    """Replicate draw -> cross-fit -> estimate, then summarize per estimator.

    Replication r draws with substream seeds derived from (master_seed, r).
    Estimator failures (degenerate ratios, empty cells) are excluded from
    the summary with their count reported. Aggregation order is fixed, so
    results do not depend on scheduling.
    """
    if n_reps < 2:
        raise ConfigurationError("need at least two replications")
    base_nuis = nuisance_config or NuisanceConfig()
    truth = _true_tate_general(config, TARGET_TRIAL, *DELTA)
    fitted = {name: make_estimator(name, config, alpha) for name in estimators}
    psis: dict[str, list[float]] = {name: [] for name in estimators}
    ses: dict[str, list[float]] = {name: [] for name in estimators}
    covered: dict[str, list[bool]] = {name: [] for name in estimators}
    failed: dict[str, int] = {name: 0 for name in estimators}
    for rep in range(n_reps):
        dgp_seed, fold_seed = rep_seeds(master_seed, rep)
        data = draw_dataset(replace(config, seed=dgp_seed))
        nuisance = fit_cross_fitted(data, replace(base_nuis, seed=fold_seed))
        for name in estimators:
            try:
                result = fitted[name](data, nuisance)
            except EstimationError:
                failed[name] += 1
                continue
            psis[name].append(result.psi)
            ses[name].append(result.std_error)
            covered[name].append(result.ci_low <= truth <= result.ci_high)
    out = []
    for name in estimators:
        p = np.array(psis[name])
        se = np.array(ses[name])
        if p.size < 2:
            raise EstimationError(f"estimator {name!r} failed in almost every replication")
        bias = float(p.mean() - truth)
        rmse = float(np.sqrt(np.mean((p - truth) ** 2)))
        sd = float(p.std(ddof=1))
        out.append(McMetrics(name, config.n_total, bias, rmse,
                             float(se.mean() / sd) if sd > 0 else float("inf"),
                             float(np.mean(covered[name])), int(p.size),
                             failed[name]))
    return out


@dataclass(frozen=True)
class SpecTestStudy:
    """Monte Carlo summary for the ratio-equality test."""

    kappa: float
    n: int
    replications: int
    alpha: float
    rejection_rate: float
    mean_q: float
    n_failed: int = 0


def run_spec_test_study(config: DgpConfig, n_reps: int, query: CommonArmQuery,
                        master_seed: int, alpha: float = 0.05,
                        nuisance_config: NuisanceConfig | None = None) -> SpecTestStudy:
    """Rejection rate of the ratio-equality test across simulated datasets."""
    base_nuis = nuisance_config or NuisanceConfig()
    rejections = 0
    qs = []
    failures = 0
    for rep in range(n_reps):
        dgp_seed, fold_seed = rep_seeds(master_seed, rep)
        data = draw_dataset(replace(config, seed=dgp_seed))
        nuisance = fit_cross_fitted(data, replace(base_nuis, seed=fold_seed))
        try:
            ratio_set = anchor_ratios(data, nuisance, query)
            test = specification_test(ratio_set, data.n)
        except EstimationError:
            failures += 1
            continue
        qs.append(test.q)
        rejections += test.p_value < alpha
    done = n_reps - failures
    return SpecTestStudy(config.violation_kappa, config.n_total, done, alpha,
                         rejections / done if done else float("nan"),
                         float(np.mean(qs)) if qs else float("nan"), failures)
