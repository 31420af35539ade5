"""Nuisance estimation with K-fold cross-fitting.

Three nuisances feed the doubly robust scores: the trial-membership
probabilities pi_k(x), the within-trial treatment propensities e_k(a, x),
and the outcome regressions mu_{a,k}(x). Outcome models are always fit
per (arm, trial, fold) cell on the fold's complement, so evaluation at
any observation only ever uses models that never saw its fold.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .model import ConfigurationError, Dataset, TreatmentId

OUTCOME_LINEAR = "linear"
OUTCOME_LOGISTIC = "logistic"
OUTCOME_BOOSTED = "boosted"
PI_EMPIRICAL = "empirical"
PI_MULTINOMIAL = "multinomial"
PROPENSITY_KNOWN = "known-design"
PROPENSITY_EMPIRICAL = "empirical"

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class NuisanceConfig:
    """Which model backs each nuisance, plus folding and clipping controls.

    The default suite (linear outcome model, empirical trial shares, design
    propensities) is exactly correct for linear data generating processes;
    boosted stumps are available for nonparametric outcome surfaces and
    misspecification experiments.
    """

    outcome_model: str = OUTCOME_LINEAR
    trial_membership: str = PI_EMPIRICAL
    treatment_propensity: str = PROPENSITY_KNOWN
    n_folds: int = 5
    seed: int = 0
    clip: float = 0.01
    n_trees: int = 200
    learning_rate: float = 0.1

    def validate(self) -> None:
        if self.outcome_model not in (OUTCOME_LINEAR, OUTCOME_LOGISTIC, OUTCOME_BOOSTED):
            raise ConfigurationError(f"unknown outcome model {self.outcome_model!r}")
        if self.trial_membership not in (PI_EMPIRICAL, PI_MULTINOMIAL):
            raise ConfigurationError(f"unknown trial membership model {self.trial_membership!r}")
        if self.treatment_propensity not in (PROPENSITY_KNOWN, PROPENSITY_EMPIRICAL):
            raise ConfigurationError(f"unknown propensity model {self.treatment_propensity!r}")
        if self.n_folds < 2:
            raise ConfigurationError("n_folds must be at least 2")
        if not 0.0 < self.clip < 0.5:
            raise ConfigurationError("clip bound must lie in (0, 0.5)")
        if self.n_trees < 1 or not 0.0 < self.learning_rate <= 1.0:
            raise ConfigurationError("boosting needs n_trees >= 1 and learning_rate in (0, 1]")


def assign_folds(dataset: Dataset, n_folds: int, seed: int) -> np.ndarray:
    """Deterministic fold ids, stratified by (trial, arm) cell.

    Every cell of size m contributes floor(m/K) or ceil(m/K) members to each
    fold. A cell smaller than the fold count is a configuration error.
    """
    if n_folds < 2:
        raise ConfigurationError("n_folds must be at least 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0F01D5]))
    folds = np.full(dataset.n, -1, dtype=int)
    for k in sorted(dataset.trials):
        for arm in dataset.trials[k].arms:
            idx = np.flatnonzero(dataset.cell_mask(k, arm))
            if idx.size == 0:
                continue
            if idx.size < n_folds:
                raise ConfigurationError(
                    f"cell (trial {k}, arm {arm}) has {idx.size} observations, "
                    f"fewer than {n_folds} folds")
            idx = rng.permutation(idx)
            offset = int(rng.integers(n_folds))
            folds[idx] = (np.arange(idx.size) + offset) % n_folds
    return folds


def fit_linear_ls(features: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Ordinary least squares via normal equations with a ridge fallback.

    When the Gram matrix condition number exceeds 1e12 a ridge term
    lambda = 1e-8 * trace / p is added, so singular designs never fail.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    gram = X.T @ X
    rhs = X.T @ y
    p = gram.shape[0]
    if np.linalg.cond(gram) > _COND_LIMIT:
        gram = gram + np.eye(p) * (1e-8 * np.trace(gram) / p)
    try:
        beta = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        beta = np.full(p, np.nan)
    if not np.all(np.isfinite(beta)):
        beta = np.zeros(p)
        beta[0] = float(np.mean(y))
    return beta


class LogisticFit(NamedTuple):
    coef: np.ndarray
    converged: bool
    iterations: int


def fit_logistic(features: np.ndarray, targets: np.ndarray,
                 offset: np.ndarray | None = None,
                 max_iter: int = 50, tol: float = 1e-10) -> LogisticFit:
    """Binary logistic regression by Newton-Raphson, optionally with an offset.

    Stops when the gradient norm falls below `tol`; perfect separation is
    reported through `converged=False` after the iteration cap.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    off = np.zeros(X.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(X.shape[1])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = np.clip(off + X @ beta, -35.0, 35.0)
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p)
        if np.linalg.norm(grad) < tol:
            # a gradient that vanished only because fitted logits ran off to
            # saturation is separation, not convergence
            converged = bool(np.max(np.abs(X @ beta)) < 20.0)
            if converged:
                break
        w = np.maximum(p * (1.0 - p), 1e-12)
        hess = X.T @ (X * w[:, None])
        if np.linalg.cond(hess) > _COND_LIMIT:
            hess = hess + np.eye(X.shape[1]) * (1e-8 * np.trace(hess) / X.shape[1])
        beta = beta + np.linalg.solve(hess, grad)
    return LogisticFit(beta, converged, it)


class StumpEnsemble:
    """Squared-error gradient boosting over depth-1 regression trees."""

    def __init__(self, base: float, stumps: list[tuple[int, float, float, float]],
                 learning_rate: float):
        self.base = base
        self.stumps = stumps
        self.learning_rate = learning_rate

    def predict(self, features: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        out = np.full(X.shape[0], self.base)
        for j, thresh, left, right in self.stumps:
            out += self.learning_rate * np.where(X[:, j] <= thresh, left, right)
        return out


def _best_stump(X: np.ndarray, resid: np.ndarray) -> tuple[int, float, float, float]:
    n, d = X.shape
    best = (0, np.inf, float(resid.mean()), float(resid.mean()))
    best_gain = -np.inf
    total = resid.sum()
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        rs = resid[order]
        csum = np.cumsum(rs)
        counts = np.arange(1, n + 1)
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        left_sum = csum[:-1][valid]
        left_n = counts[:-1][valid]
        right_sum = total - left_sum
        right_n = n - left_n
        gain = left_sum**2 / left_n + right_sum**2 / right_n
        pick = int(np.argmax(gain))
        if gain[pick] > best_gain + 1e-12:
            best_gain = gain[pick]
            cut_idx = np.flatnonzero(valid)[pick]
            thresh = 0.5 * (xs[cut_idx] + xs[cut_idx + 1])
            best = (j, float(thresh),
                    float(left_sum[pick] / left_n[pick]),
                    float(right_sum[pick] / right_n[pick]))
    if not np.isfinite(best[1]):
        return (0, np.inf, float(resid.mean()), float(resid.mean()))
    return best


def fit_boosted_stumps(features: np.ndarray, targets: np.ndarray,
                       n_trees: int, learning_rate: float) -> StumpEnsemble:
    """Gradient boosting for a continuous target; training loss never increases."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    base = float(y.mean())
    pred = np.full(y.shape, base)
    stumps: list[tuple[int, float, float, float]] = []
    for _ in range(n_trees):
        j, thresh, left, right = _best_stump(X, y - pred)
        stumps.append((j, thresh, left, right))
        pred += learning_rate * np.where(X[:, j] <= thresh, left, right)
    return StumpEnsemble(base, stumps, learning_rate)


def fit_multinomial(features: np.ndarray, labels: np.ndarray, n_classes: int,
                    max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Softmax regression by Newton on the pooled likelihood.

    Returns a (n_classes, p) coefficient matrix with the last class pinned
    at zero; predicted probabilities sum to one by construction.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    n, p = X.shape
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), labels] = 1.0
    beta = np.zeros((n_classes - 1, p))
    for _ in range(max_iter):
        eta = X @ beta.T
        eta = np.column_stack([eta, np.zeros(n)])
        eta -= eta.max(axis=1, keepdims=True)
        prob = np.exp(eta)
        prob /= prob.sum(axis=1, keepdims=True)
        grad = ((Y - prob)[:, :-1].T @ X).ravel()
        if np.linalg.norm(grad) < tol:
            break
        m = n_classes - 1
        H = np.zeros((m * p, m * p))
        for c in range(m):
            for cc in range(m):
                w = prob[:, c] * ((c == cc) - prob[:, cc])
                H[c*p:(c+1)*p, cc*p:(cc+1)*p] = X.T @ (X * w[:, None])
        H += np.eye(m * p) * (1e-10 * np.trace(H) / (m * p))
        beta = beta + np.linalg.solve(H, grad).reshape(m, p)
    return np.vstack([beta, np.zeros(p)])


def _softmax_probs(X: np.ndarray, beta: np.ndarray) -> np.ndarray:
    eta = X @ beta.T
    eta -= eta.max(axis=1, keepdims=True)
    prob = np.exp(eta)
    return prob / prob.sum(axis=1, keepdims=True)


class CrossFittedNuisance:
    """Fitted nuisance evaluators aligned with a dataset's rows.

    `pi_vec`, `e_vec`, `mu_vec` return per-observation values where entry i
    was produced by models that excluded fold_of[i] from training.
    Probability outputs are clipped into [clip, 1 - clip]; clip events are
    counted on `clip_count`.
    """

    def __init__(self, config: NuisanceConfig, fold_of: np.ndarray,
                 pi: dict[int, np.ndarray],
                 e: dict[tuple[int, TreatmentId], np.ndarray],
                 mu: dict[tuple[TreatmentId, int], np.ndarray],
                 mu_models: dict[tuple[TreatmentId, int, int], Callable[[np.ndarray], np.ndarray]],
                 clip_count: int, warnings: list[str]):
        self.config = config
        self.fold_of = fold_of
        self._pi = pi
        self._e = e
        self._mu = mu
        self._mu_models = mu_models
        self.clip_count = clip_count
        self.warnings = list(warnings)

    def pi_vec(self, k: int) -> np.ndarray:
        return self._pi[k]

    def e_vec(self, k: int, arm: TreatmentId) -> np.ndarray:
        return self._e[(k, arm)]

    def mu_vec(self, arm: TreatmentId, k: int) -> np.ndarray:
        return self._mu[(arm, k)]

    def predict_mu(self, arm: TreatmentId, k: int, features: np.ndarray,
                   fold: int = 0) -> np.ndarray:
        """Evaluate the fold-complement outcome model at new covariate points."""
        return self._mu_models[(arm, k, fold)](np.atleast_2d(np.asarray(features, float)))

    def with_mu(self, mu: dict[tuple[TreatmentId, int], np.ndarray]) -> "CrossFittedNuisance":
        """Copy with some outcome-regression vectors replaced (used by targeting)."""
        merged = dict(self._mu)
        merged.update({key: np.asarray(v, dtype=float) for key, v in mu.items()})
        return CrossFittedNuisance(self.config, self.fold_of, self._pi, self._e,
                                   merged, self._mu_models, self.clip_count,
                                   self.warnings)


class OverrideNuisance:
    """Wrap any evaluator, overriding selected nuisances.

    Overrides are dicts keyed like the base accessors; values may be arrays
    or scalars. Useful for misspecification experiments and perturbation
    checks.
    """

    def __init__(self, base, pi=None, e=None, mu=None):
        self._base = base
        self._pi = pi or {}
        self._e = e or {}
        self._mu = mu or {}
        self.fold_of = getattr(base, "fold_of", None)

    def _expand(self, value, like):
        arr = np.asarray(value, dtype=float)
        return np.full(like.shape, float(arr)) if arr.ndim == 0 else arr

    def pi_vec(self, k):
        base = self._base.pi_vec(k)
        return self._expand(self._pi[k], base) if k in self._pi else base

    def e_vec(self, k, arm):
        base = self._base.e_vec(k, arm)
        return self._expand(self._e[(k, arm)], base) if (k, arm) in self._e else base

    def mu_vec(self, arm, k):
        base = self._base.mu_vec(arm, k)
        return self._expand(self._mu[(arm, k)], base) if (arm, k) in self._mu else base


def zero_outcome_nuisance(base) -> OverrideNuisance:
    """The grossly misspecified outcome model mu == 0, for robustness checks."""

    class _ZeroMu:
        def __init__(self, inner):
            self._inner = inner
            self.fold_of = getattr(inner, "fold_of", None)

        def pi_vec(self, k):
            return self._inner.pi_vec(k)

        def e_vec(self, k, arm):
            return self._inner.e_vec(k, arm)

        def mu_vec(self, arm, k):
            return np.zeros_like(self._inner.pi_vec(k))

    return _ZeroMu(base)


def _design(dataset: Dataset) -> np.ndarray:
    return np.column_stack([np.ones(dataset.n), dataset.x])


def fit_cross_fitted(dataset: Dataset, config: NuisanceConfig) -> CrossFittedNuisance:
    """Fit all nuisances with out-of-fold evaluation discipline.

    Empirical trial shares are the whole-sample proportions n_k / n (trial
    membership is constant in x under random sampling); design propensities
    come straight from each trial's assignment probability. Outcome models
    are cross-fitted per (arm, trial) cell.
    """
    config.validate()
    fold_of = assign_folds(dataset, config.n_folds, config.seed)
    n = dataset.n
    trial_ids = sorted(dataset.trials)
    warnings: list[str] = []
    clip_count = 0
    lo, hi = config.clip, 1.0 - config.clip

    def clip(values: np.ndarray) -> np.ndarray:
        nonlocal clip_count
        clipped = np.clip(values, lo, hi)
        clip_count += int(np.count_nonzero(clipped != values))
        return clipped

    pi: dict[int, np.ndarray] = {}
    if config.trial_membership == PI_EMPIRICAL:
        raw = {k: np.full(n, float(np.count_nonzero(dataset.s == k)) / n)
               for k in trial_ids}
    else:
        raw = {k: np.empty(n) for k in trial_ids}
        X = _design(dataset)
        labels = np.searchsorted(trial_ids, dataset.s)
        for f in range(config.n_folds):
            train = fold_of != f
            beta = fit_multinomial(X[train], labels[train], len(trial_ids))
            probs = _softmax_probs(X[fold_of == f], beta)
            for idx, k in enumerate(trial_ids):
                raw[k][fold_of == f] = probs[:, idx]
    total = np.sum([raw[k] for k in trial_ids], axis=0)
    if np.max(np.abs(total - 1.0)) > 1e-10:
        warnings.append("trial-membership probabilities do not sum to one")
    pi = {k: clip(raw[k]) for k in trial_ids}

    e: dict[tuple[int, TreatmentId], np.ndarray] = {}
    for k in trial_ids:
        spec = dataset.trials[k]
        if config.treatment_propensity == PROPENSITY_KNOWN:
            e[(k, spec.arm_a)] = clip(np.full(n, spec.p_arm_a))
            e[(k, spec.arm_b)] = clip(np.full(n, 1.0 - spec.p_arm_a))
        else:
            share_a = np.empty(n)
            in_k = dataset.s == k
            for f in range(config.n_folds):
                train = in_k & (fold_of != f)
                n_k = int(np.count_nonzero(train))
                n_a = int(np.count_nonzero(train & (dataset.a == spec.arm_a)))
                share_a[fold_of == f] = n_a / n_k if n_k else 0.5
            e[(k, spec.arm_a)] = clip(share_a)
            e[(k, spec.arm_b)] = clip(1.0 - share_a)

    mu: dict[tuple[TreatmentId, int], np.ndarray] = {}
    mu_models: dict[tuple[TreatmentId, int, int], Callable] = {}
    X = _design(dataset)
    for k in trial_ids:
        spec = dataset.trials[k]
        in_k = dataset.s == k
        for arm in spec.arms:
            cell = in_k & (dataset.a == arm)
            out = np.zeros(n)
            for f in range(config.n_folds):
                train = cell & (fold_of != f)
                if not train.any():
                    warnings.append(f"cell (trial {k}, arm {arm}) empty off fold {f}")
                    mu_models[(arm, k, f)] = (lambda feats: np.zeros(feats.shape[0]))
                    continue
                predict = _fit_cell(X[train], dataset.y[train], config, warnings,
                                    k, arm)
                mu_models[(arm, k, f)] = predict
                rows = in_k & (fold_of == f)
                out[rows] = predict(X[rows])
            mu[(arm, k)] = out
    return CrossFittedNuisance(config, fold_of, pi, e, mu, mu_models,
                               clip_count, warnings)


def _fit_cell(X: np.ndarray, y: np.ndarray, config: NuisanceConfig,
              warnings: list[str], k: int, arm: TreatmentId) -> Callable:
    if config.outcome_model == OUTCOME_LINEAR:
        gram = X.T @ X
        if np.linalg.cond(gram) > _COND_LIMIT:
            warnings.append(f"ill-conditioned regression in cell (trial {k}, arm {arm}); "
                            "ridge fallback applied")
        beta = fit_linear_ls(X, y)
        return lambda feats, b=beta: feats @ b
    if config.outcome_model == OUTCOME_BOOSTED:
        model = fit_boosted_stumps(X[:, 1:], y, config.n_trees, config.learning_rate)
        return lambda feats, m=model: m.predict(feats[:, 1:])
    fit = fit_logistic(X, y)
    if not fit.converged:
        warnings.append(f"logistic outcome model did not converge in cell "
                        f"(trial {k}, arm {arm})")
    def predict(feats, b=fit.coef):
        eta = np.clip(feats @ b, -35.0, 35.0)
        return 1.0 / (1.0 + np.exp(-eta))
    return predict
