"""Estimation of transported treatment effects across time from
collections of randomized trials: doubly robust and targeted estimators,
influence-function inference, anchor combination, a ratio-equality
specification test, a Monte Carlo lab, and constrained cluster assignment
for tracking treatment arms across experiments.
"""
from .model import (CommonArmAnchor, CommonArmQuery, ConfigurationError,
                    Dataset, EstimationError, Observation, ReplicatedQuery,
                    TransportQuery, TreatmentId, TrialSpec, validate_dataset,
                    validate_query)
from .nuisance import (CrossFittedNuisance, NuisanceConfig, OverrideNuisance,
                       assign_folds, fit_boosted_stumps, fit_cross_fitted,
                       fit_linear_ls, fit_logistic, zero_outcome_nuisance)
from .scores import (EmptyCellError, EstimateWithIF, dr_score_mean,
                     estimate_ate, estimate_marginal_mean, if_variance,
                     score_vector)
from .transport import (AnchorRatioSet, DegenerateRatioError, SpecTestResult,
                        TateResult, anchor_ratios, assemble_wald_ci,
                        estimate_tate_multi_anchor, estimate_tate_strategy1,
                        estimate_tate_strategy2, optimal_weights,
                        specification_test, variance_diagnostic)
from .tmle import (Fluctuation, TmleReport, clever_covariate,
                   estimate_tate_tmle, factorized_tmle_linear,
                   factorized_tmle_logistic)
from .simlab import (DgpConfig, McMetrics, OracleNuisance, draw_dataset,
                     lambda_modifier, oracle_estimator, run_monte_carlo,
                     run_spec_test_study, theta_response, true_tate)
from .clustering import (ClusterAssignment, EmbeddingCorpus, cluster_corpus,
                         constrained_assign, hungarian, kmeans)

__version__ = "0.1.0"
