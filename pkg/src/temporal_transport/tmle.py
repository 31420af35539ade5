"""Targeted minimum-loss estimation of the transported effect.

Two variants. The factorized form targets each building-block outcome
regression separately along its clever covariate, then plugs the targeted
blocks into the transport formula; afterwards every block solves its own
score equation. The joint form fluctuates all blocks with a single shared
epsilon whose per-cell direction is the clever covariate times a
parameter-dependent weight, iterating until the assembled score equation
for the transported effect itself is solved.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (Dataset, EstimationError, ReplicatedQuery,
                    TransportQuery, TreatmentId)
from .nuisance import fit_logistic
from .scores import EmptyCellError
from .transport import (TateResult, anchor_ratios, estimate_tate_multi_anchor,
                        estimate_tate_strategy1, estimate_tate_strategy2,
                        optimal_weights)

Cell = tuple[TreatmentId, int]

_LOGIT_CLIP = 0.005
_EPS_TOL = 1e-8
_MAX_ITER = 100


@dataclass(frozen=True)
class Fluctuation:
    """One applied fluctuation: its coefficient, link, and targeted cells."""

    epsilon: float
    link: str
    target_cells: tuple[Cell, ...]


@dataclass
class TmleReport:
    """Targeting diagnostics: coefficients, residual score equations, convergence."""

    fluctuations: list[Fluctuation] = field(default_factory=list)
    epsilons: dict[Cell, float] = field(default_factory=dict)
    iterations: int = 0
    residuals: dict[Cell, float] = field(default_factory=dict)
    psi_residual: float | None = None
    converged: bool = True


def clever_covariate(dataset: Dataset, nuisance, arm: TreatmentId, k: int,
                     i: int) -> float:
    """H_{a,k} at observation i: 1[S=k] 1[A=a] / (pi_k e_k)."""
    if dataset.s[i] != k or dataset.a[i] != arm:
        return 0.0
    return float(1.0 / (nuisance.pi_vec(k)[i] * nuisance.e_vec(k, arm)[i]))


def clever_covariate_vector(dataset: Dataset, nuisance, arm: TreatmentId,
                            k: int) -> np.ndarray:
    out = np.zeros(dataset.n)
    rows = dataset.cell_mask(k, arm)
    out[rows] = 1.0 / (nuisance.pi_vec(k)[rows] * nuisance.e_vec(k, arm)[rows])
    return out


def _covariate_direction(dataset: Dataset, nuisance, arm: TreatmentId,
                         k: int) -> np.ndarray:
    """The clever covariate as a function of x, evaluated at every row."""
    return 1.0 / (nuisance.pi_vec(k) * nuisance.e_vec(k, arm))


def plug_in_mean(dataset: Dataset, nuisance, arm: TreatmentId, k: int) -> float:
    """g-formula mean P_n[1[S=k]/pi_k * mu_{a,k}(X)] over the pooled sample."""
    rows = dataset.s == k
    vals = nuisance.mu_vec(arm, k)[rows] / nuisance.pi_vec(k)[rows]
    return float(vals.sum() / dataset.n)


def _cell_residual(dataset: Dataset, nuisance, cell: Cell) -> float:
    arm, k = cell
    h = clever_covariate_vector(dataset, nuisance, arm, k)
    return float(np.sum(h * (dataset.y - nuisance.mu_vec(arm, k))))


def factorized_tmle_linear(dataset: Dataset, nuisance, cells: list[Cell]
                           ) -> tuple[object, TmleReport]:
    """Additive targeting for continuous outcomes.

    Per cell the closed-form epsilon = sum H (Y - mu) / sum H shifts the
    regression so the H-weighted residual vanishes exactly.
    """
    report = TmleReport()
    updates = {}
    for cell in cells:
        arm, k = cell
        h = clever_covariate_vector(dataset, nuisance, arm, k)
        h_total = h.sum()
        if h_total == 0.0:
            raise EmptyCellError(f"no observations carry clever covariate for "
                                 f"(arm {arm}, trial {k})")
        mu0 = nuisance.mu_vec(arm, k)
        eps = float(np.sum(h * (dataset.y - mu0)) / h_total)
        updates[cell] = mu0 + eps
        report.epsilons[cell] = eps
        report.fluctuations.append(Fluctuation(eps, "linear", (cell,)))
    targeted = nuisance.with_mu(updates) if hasattr(nuisance, "with_mu") \
        else _wrap_with_mu(nuisance, updates)
    for cell in cells:
        report.residuals[cell] = _cell_residual(dataset, targeted, cell)
    report.converged = all(abs(r) < 1e-8 for r in report.residuals.values())
    return targeted, report


def factorized_tmle_logistic(dataset: Dataset, nuisance, cells: list[Cell]
                             ) -> tuple[object, TmleReport]:
    """Logistic targeting for outcomes in [0, 1]; keeps predictions in (0, 1).

    Initial fits are clipped into [0.005, 0.995] before the logit transform.
    """
    if dataset.y.min() < 0.0 or dataset.y.max() > 1.0:
        raise EstimationError("logistic targeting requires outcomes in [0, 1]")
    report = TmleReport()
    updates = {}
    for cell in cells:
        arm, k = cell
        h = clever_covariate_vector(dataset, nuisance, arm, k)
        rows = h > 0
        if not rows.any():
            raise EmptyCellError(f"no observations carry clever covariate for "
                                 f"(arm {arm}, trial {k})")
        mu0 = np.clip(nuisance.mu_vec(arm, k), _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
        offset = np.log(mu0 / (1.0 - mu0))
        fit = fit_logistic(h[rows, None], dataset.y[rows], offset=offset[rows])
        if not fit.converged:
            report.converged = False
        eps = float(fit.coef[0])
        direction = _covariate_direction(dataset, nuisance, arm, k)
        eta = np.clip(offset + eps * direction, -35.0, 35.0)
        updates[cell] = 1.0 / (1.0 + np.exp(-eta))
        report.epsilons[cell] = eps
        report.fluctuations.append(Fluctuation(eps, "logistic", (cell,)))
    targeted = nuisance.with_mu(updates) if hasattr(nuisance, "with_mu") \
        else _wrap_with_mu(nuisance, updates)
    for cell in cells:
        report.residuals[cell] = _cell_residual(dataset, targeted, cell)
    report.converged = report.converged and \
        all(abs(r) < 1e-8 for r in report.residuals.values())
    return targeted, report


class _MuOverlay:
    """Evaluator view with replaced outcome-regression vectors."""

    def __init__(self, base, mu):
        self._base = base
        self._mu = dict(mu)
        self.fold_of = getattr(base, "fold_of", None)

    def pi_vec(self, k):
        return self._base.pi_vec(k)

    def e_vec(self, k, arm):
        return self._base.e_vec(k, arm)

    def mu_vec(self, arm, k):
        if (arm, k) in self._mu:
            return self._mu[(arm, k)]
        return self._base.mu_vec(arm, k)

    def with_mu(self, mu):
        merged = dict(self._mu)
        merged.update(mu)
        return _MuOverlay(self._base, merged)


def _wrap_with_mu(nuisance, updates):
    return _MuOverlay(nuisance, updates)


def query_cells(dataset: Dataset, query: TransportQuery) -> list[Cell]:
    """The (arm, trial) outcome cells a query's building blocks read."""
    target = dataset.trials[query.target_trial]
    cells: list[Cell] = [(target.arm_a, query.target_trial),
                         (target.arm_b, query.target_trial)]
    if isinstance(query, ReplicatedQuery):
        for kid in (query.anchor_j, query.anchor_jprime):
            spec = dataset.trials[kid]
            cells.extend([(spec.arm_a, kid), (spec.arm_b, kid)])
    else:
        for anchor in query.anchors:
            cells.append((anchor.arm, anchor.trial_at_target))
            cells.append((anchor.arm, anchor.trial_at_source))
    seen: list[Cell] = []
    for cell in cells:
        if cell not in seen:
            seen.append(cell)
    return seen


def _plug_in_estimator(dataset: Dataset, nuisance, query: TransportQuery,
                       alpha: float) -> TateResult:
    if isinstance(query, ReplicatedQuery):
        return estimate_tate_strategy1(dataset, nuisance, query, alpha)
    if len(query.anchors) == 1:
        return estimate_tate_strategy2(dataset, nuisance, query, alpha)
    return estimate_tate_multi_anchor(dataset, nuisance, query, alpha)


def _joint_weights(dataset: Dataset, nuisance, query: TransportQuery
                   ) -> tuple[dict[Cell, float], float]:
    """Per-cell clever-covariate weights from the current parameter values.

    Expanding the transported effect's influence function over its marginal
    mean blocks gives one signed coefficient per (arm, trial) cell;
    overlapping blocks accumulate.
    """
    omega: dict[Cell, float] = {}

    def add(cell: Cell, value: float) -> None:
        omega[cell] = omega.get(cell, 0.0) + value

    target = dataset.trials[query.target_trial]
    tau_t = (plug_in_mean(dataset, nuisance, target.arm_a, query.target_trial)
             - plug_in_mean(dataset, nuisance, target.arm_b, query.target_trial))
    if isinstance(query, ReplicatedQuery):
        j, jp = dataset.trials[query.anchor_j], dataset.trials[query.anchor_jprime]
        tau_j = (plug_in_mean(dataset, nuisance, j.arm_a, query.anchor_j)
                 - plug_in_mean(dataset, nuisance, j.arm_b, query.anchor_j))
        tau_jp = (plug_in_mean(dataset, nuisance, jp.arm_a, query.anchor_jprime)
                  - plug_in_mean(dataset, nuisance, jp.arm_b, query.anchor_jprime))
        if tau_jp == 0.0:
            raise EstimationError("targeting hit a zero anchor-effect denominator")
        ratio = tau_j / tau_jp
        psi = tau_t * ratio
        add((target.arm_a, query.target_trial), ratio)
        add((target.arm_b, query.target_trial), -ratio)
        add((j.arm_a, query.anchor_j), psi / tau_j if tau_j else 0.0)
        add((j.arm_b, query.anchor_j), -psi / tau_j if tau_j else 0.0)
        add((jp.arm_a, query.anchor_jprime), -psi / tau_jp)
        add((jp.arm_b, query.anchor_jprime), psi / tau_jp)
        return omega, psi

    ratios = []
    for anchor in query.anchors:
        num = plug_in_mean(dataset, nuisance, anchor.arm, anchor.trial_at_target)
        den = plug_in_mean(dataset, nuisance, anchor.arm, anchor.trial_at_source)
        if den == 0.0:
            raise EstimationError("targeting hit a zero anchor-mean denominator")
        ratios.append((num / den, den))
    if len(query.anchors) == 1:
        weights = np.ones(1)
    else:
        weights = optimal_weights(anchor_ratios(dataset, nuisance, query).cov)
    combined = float(sum(w * r for w, (r, _) in zip(weights, ratios)))
    psi = tau_t * combined
    add((target.arm_a, query.target_trial), combined)
    add((target.arm_b, query.target_trial), -combined)
    for w, anchor, (r, den) in zip(weights, query.anchors, ratios):
        add((anchor.arm, anchor.trial_at_target), tau_t * w / den)
        add((anchor.arm, anchor.trial_at_source), -tau_t * w * r / den)
    return omega, psi


def _joint_tmle(dataset: Dataset, nuisance, query: TransportQuery,
                link: str) -> tuple[object, TmleReport]:
    report = TmleReport()
    current = nuisance
    cells = query_cells(dataset, query)
    h_cell = {cell: clever_covariate_vector(dataset, nuisance, *cell)
              for cell in cells}
    direction = {cell: _covariate_direction(dataset, nuisance, *cell)
                 for cell in cells}
    converged = False
    for it in range(1, _MAX_ITER + 1):
        omega, _ = _joint_weights(dataset, current, query)
        h = np.zeros(dataset.n)
        resid = np.zeros(dataset.n)
        for cell in cells:
            w = omega.get(cell, 0.0)
            if w == 0.0:
                continue
            mask = h_cell[cell] > 0
            h[mask] = w * h_cell[cell][mask]
            resid[mask] = dataset.y[mask] - current.mu_vec(*cell)[mask]
        denom = float(np.sum(h * h))
        if denom == 0.0:
            raise EmptyCellError("joint targeting found no usable observations")
        if link == "linear":
            eps = float(np.sum(h * resid) / denom)
            updates = {}
            for cell in cells:
                w = omega.get(cell, 0.0)
                updates[cell] = current.mu_vec(*cell) + eps * w * direction[cell]
        else:
            rows = h != 0.0
            mu_cells = np.zeros(dataset.n)
            for cell in cells:
                mask = h_cell[cell] > 0
                mu_cells[mask] = current.mu_vec(*cell)[mask]
            mu0 = np.clip(mu_cells, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
            offset = np.log(mu0 / (1.0 - mu0))
            fit = fit_logistic(h[rows, None], dataset.y[rows], offset=offset[rows])
            eps = float(fit.coef[0])
            updates = {}
            for cell in cells:
                w = omega.get(cell, 0.0)
                mu_c = np.clip(current.mu_vec(*cell), _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
                eta = np.clip(np.log(mu_c / (1.0 - mu_c)) + eps * w * direction[cell],
                              -35.0, 35.0)
                updates[cell] = 1.0 / (1.0 + np.exp(-eta))
        current = current.with_mu(updates) if hasattr(current, "with_mu") \
            else _wrap_with_mu(current, updates)
        report.iterations = it
        report.fluctuations.append(Fluctuation(eps, link, tuple(cells)))
        if abs(eps) < _EPS_TOL:
            converged = True
            break
    omega, _ = _joint_weights(dataset, current, query)
    psi_resid = 0.0
    for cell in cells:
        report.residuals[cell] = _cell_residual(dataset, current, cell)
        psi_resid += omega.get(cell, 0.0) * report.residuals[cell]
    report.psi_residual = abs(psi_resid) / dataset.n
    report.converged = converged
    return current, report


def estimate_tate_tmle(dataset: Dataset, nuisance, query: TransportQuery,
                       variant: str = "factorized", link: str = "linear",
                       alpha: float = 0.05) -> tuple[TateResult, TmleReport]:
    """Targeted estimate of the transported effect.

    `variant` selects factorized (default, recommended) or joint targeting;
    `link` must be "linear" for unbounded outcomes or "logistic" for
    outcomes in [0, 1]. Joint non-convergence is reported, not raised, so
    callers can fall back to the factorized answer.
    """
    if variant not in ("factorized", "joint"):
        raise ValueError(f"unknown TMLE variant {variant!r}")
    if link not in ("linear", "logistic"):
        raise ValueError(f"unknown TMLE link {link!r}")
    cells = query_cells(dataset, query)
    if variant == "factorized":
        if link == "linear":
            targeted, report = factorized_tmle_linear(dataset, nuisance, cells)
        else:
            targeted, report = factorized_tmle_logistic(dataset, nuisance, cells)
    else:
        targeted, report = _joint_tmle(dataset, nuisance, query, link)
    result = _plug_in_estimator(dataset, targeted, query, alpha)
    if not report.converged:
        result.warnings.append("targeting did not converge; consider the factorized variant")
    return result, report
