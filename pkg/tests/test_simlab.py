import numpy as np
import pytest

from temporal_transport.model import ConfigurationError
from temporal_transport.nuisance import NuisanceConfig
from temporal_transport.simlab import (DgpConfig, draw_dataset,
                                       lambda_modifier, make_estimator,
                                       oracle_estimator, power_trial_table,
                                       rep_seeds, run_monte_carlo,
                                       run_spec_test_study, theta_response,
                                       true_ratio, true_tate,
                                       distinct_gap_anchors)
from temporal_transport.scores import estimate_ate


class TestLambdaModifier:
    def test_at_zero(self):
        assert lambda_modifier(0) == pytest.approx(1.0)

    def test_quarter_cycle(self):
        assert lambda_modifier(3, 0.3) == pytest.approx(1.3)

    def test_three_quarter_cycle(self):
        assert lambda_modifier(9, 0.3) == pytest.approx(0.7)

    def test_periodicity(self):
        for t in range(-24, 25):
            assert lambda_modifier(t + 12, 0.3) == pytest.approx(
                lambda_modifier(t, 0.3), abs=1e-12)


class TestThetaResponse:
    def test_control_at_origin(self):
        assert theta_response(0, (0.0, 0.0)) == pytest.approx(2.0)

    def test_treatment_one_at_origin(self):
        assert theta_response(1, (0.0, 0.0)) == pytest.approx(3.0)

    def test_treatment_two_at_ones(self):
        assert theta_response(2, (1.0, 1.0)) == pytest.approx(3.6)

    def test_unknown_arm(self):
        with pytest.raises(ConfigurationError):
            theta_response(9, (0.0, 0.0))


class TestDrawDataset:
    def test_trial_sizes_exact(self):
        data = draw_dataset(DgpConfig(n_total=1200, seed=1))
        sizes = [int(np.count_nonzero(data.s == k)) for k in sorted(data.trials)]
        assert sizes == [200] * 6

    def test_remainder_spread(self):
        data = draw_dataset(DgpConfig(n_total=1202, seed=1))
        sizes = [int(np.count_nonzero(data.s == k)) for k in sorted(data.trials)]
        assert sorted(sizes, reverse=True) == [201, 201, 200, 200, 200, 200]

    def test_deterministic(self):
        a = draw_dataset(DgpConfig(n_total=600, seed=9))
        b = draw_dataset(DgpConfig(n_total=600, seed=9))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.a, b.a)

    def test_noiseless_outcomes_deterministic_in_x(self):
        config = DgpConfig(n_total=600, seed=4, noise_sd=0.0)
        data = draw_dataset(config)
        for k, spec in data.trials.items():
            rows = data.s == k
            lam = lambda_modifier(spec.t1)
            expected = np.array([theta_response(a, x) for a, x in
                                 zip(data.a[rows], data.x[rows])]) * lam
            assert data.y[rows] == pytest.approx(expected, abs=1e-12)

    def test_noiseless_moments_balanced(self):
        data = draw_dataset(DgpConfig(n_total=1200, seed=4, noise_sd=0.0))
        for k in data.trials:
            rows = data.s == k
            assert data.x[rows, 0].mean() == pytest.approx(0.0, abs=1e-12)
            assert data.x[rows, 1].mean() == pytest.approx(0.5, abs=1e-12)

    def test_violation_tilts_long_gap_trials(self):
        config = DgpConfig(n_total=600, seed=4, noise_sd=0.0, violation_kappa=0.3,
                           trial_table=power_trial_table())
        data = draw_dataset(config)
        rows = (data.s == 6) & (data.a == 2)
        # trial 6 runs at (3, 9): modifier 0.7 + 0.3 * (9 - 3 - 2) = 1.9
        expected = np.array([theta_response(2, x) for x in data.x[rows]]) * 1.9
        assert data.y[rows] == pytest.approx(expected, abs=1e-12)


class TestTruth:
    def test_half_cycle_shift(self):
        assert true_tate(DgpConfig(), 1, 6, 6) == pytest.approx(0.77)

    def test_no_shift(self):
        assert true_tate(DgpConfig(), 1, 0, 0) == pytest.approx(1.43)

    def test_full_cycle_equals_no_shift(self):
        cfg = DgpConfig()
        assert true_tate(cfg, 1, 12, 12) == pytest.approx(true_tate(cfg, 1, 0, 0),
                                                          abs=1e-12)

    def test_requires_untilted_process(self):
        with pytest.raises(ConfigurationError):
            true_tate(DgpConfig(violation_kappa=0.1), 1, 6, 6)


class TestOracleEstimator:
    def test_unit_ratio_reduces_to_ate(self, noisy_data, noisy_nuisance):
        result = oracle_estimator(noisy_data, noisy_nuisance, 1, 1.0)
        tau = estimate_ate(noisy_data, noisy_nuisance, 1)
        assert result.psi == pytest.approx(tau.value, abs=1e-12)

    def test_noiseless_exact(self, noiseless_config, noiseless_data,
                             noiseless_nuisance):
        ratio = true_ratio(noiseless_config, 1, 6, 6)
        result = oracle_estimator(noiseless_data, noiseless_nuisance, 1, ratio)
        assert result.psi == pytest.approx(0.77, abs=1e-9)


class TestMonteCarlo:
    def test_constant_estimator_metrics(self, monkeypatch):
        # an estimator that always returns the truth scores perfectly
        import temporal_transport.simlab as simlab
        truth = true_tate(DgpConfig(), 1, 6, 6)

        def fake(name, config, alpha=0.05):
            from temporal_transport.transport import TateResult
            return lambda data, nu: TateResult(truth, 0.01, truth - 0.02,
                                               truth + 0.02, 1.0, {},
                                               np.zeros(data.n))

        monkeypatch.setattr(simlab, "make_estimator", fake)
        metrics = simlab.run_monte_carlo(DgpConfig(n_total=120), 5, ["s1"], 3,
                                         NuisanceConfig(n_folds=2))
        m = metrics[0]
        assert m.bias == pytest.approx(0.0, abs=1e-12)
        assert m.rmse == pytest.approx(0.0, abs=1e-12)
        assert m.coverage == 1.0

    def test_substream_mixing_deterministic(self):
        assert rep_seeds(7, 3) == rep_seeds(7, 3)
        assert rep_seeds(7, 3) != rep_seeds(7, 4)
        assert rep_seeds(8, 3) != rep_seeds(7, 3)

    def test_rmse_dominates_bias(self):
        metrics = run_monte_carlo(DgpConfig(n_total=600), 30,
                                  ["oracle", "s1"], 5)
        for m in metrics:
            assert m.rmse ** 2 >= m.bias ** 2 - 1e-12

    def test_unknown_estimator(self):
        with pytest.raises(ConfigurationError):
            make_estimator("bogus", DgpConfig())


@pytest.mark.slow
class TestSweeps:
    def test_consistency_and_efficiency_ordering(self):
        names = ["oracle", "s1", "s2-c", "s2-t", "s2-m"]
        by_n = {}
        for n in (600, 1200, 2400):
            metrics = run_monte_carlo(DgpConfig(n_total=n), 500, names, 1)
            by_n[n] = {m.estimator: m for m in metrics}
        for name in names:
            assert by_n[2400][name].rmse < by_n[600][name].rmse
        for n in (600, 1200, 2400):
            assert by_n[n]["s2-m"].rmse < by_n[n]["s1"].rmse

    def test_spec_test_power_monotone_in_kappa(self):
        rates = []
        for kappa in (0.0, 0.15, 0.3):
            config = DgpConfig(n_total=1200, violation_kappa=kappa,
                               trial_table=power_trial_table())
            study = run_spec_test_study(config, 200, distinct_gap_anchors(), 17)
            rates.append(study.rejection_rate)
        assert rates[0] <= rates[1] + 1e-12
        assert rates[1] <= rates[2] + 1e-12
