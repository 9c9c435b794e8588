import math

import numpy as np
import pytest

from conftest import make_obs
from cumgain.env import Scenario
from cumgain.errors import IntegrityError, UsageError
from cumgain.harness import (
    FIGURE_PANELS,
    compute_metrics,
    derive_seeds,
    detect_simpsons,
    figure_csv,
    figure_tables,
    read_trace,
    run_experiment,
    splitmix64,
    sweep,
    trace_from_observations,
    trace_metadata_json,
    trace_to_csv,
    two_sample_z_test,
    verify_trace,
    write_trace,
)
from cumgain.policies import SuccessiveElimination
from cumgain.scenarios import builtin_scenario

SECG = {"name": "secg", "tau": 2, "delta": 0.1, "rho": 1.0}


class TestSeeds:
    def test_reference_outputs(self):
        # first three outputs of the reference SplitMix64 generator seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert derive_seeds(0, 3) == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]

    def test_prefix_stable(self):
        assert derive_seeds(42, 10)[:4] == derive_seeds(42, 4)

    def test_bad_inputs(self):
        with pytest.raises(UsageError):
            derive_seeds(-1, 3)
        with pytest.raises(UsageError):
            derive_seeds(0, 0)


class TestRunExperiment:
    def test_extreme_gap_stops_early(self):
        scenario = builtin_scenario("easy_2arm")
        traces = [run_experiment(scenario, SECG, seed) for seed in derive_seeds(1, 200)]
        assert all(t.winner == 0 for t in traces)
        assert sum(t.stopping_day <= 5 for t in traces) >= 190

    def test_settling_gate_at_horizon_one(self):
        scenario = Scenario.stationary([0.9, 0.1], traffic=10_000, horizon=1)
        trace = run_experiment(scenario, SECG, 0)
        assert trace.status == "inconclusive"
        assert trace.winner is None and trace.final_active == [0, 1]
        assert trace.stopping_day == 1

    def test_deterministic(self):
        scenario = builtin_scenario("case_study")
        for policy in (SECG, {"name": "thompson", "mc_draws": 2000}, {"name": "uniform"}):
            a = run_experiment(scenario, policy, 7)
            b = run_experiment(scenario, policy, 7)
            assert trace_to_csv(a) == trace_to_csv(b)
            assert trace_metadata_json(a) == trace_metadata_json(b)

    def test_accepts_estimator(self):
        scenario = builtin_scenario("stationary_2arm")
        a = run_experiment(scenario, SuccessiveElimination(tau=2), 3)
        b = run_experiment(scenario, SECG, 3)
        assert trace_to_csv(a) == trace_to_csv(b)

    def test_trace_invariants(self):
        scenario = builtin_scenario("stationary_3arm")
        for seed in range(5):
            trace = run_experiment(scenario, SECG, seed)
            verify_trace(trace)
            assert np.array_equal(trace.probs > 0, trace.active)
            assert np.all(trace.traffic == scenario.traffic[: trace.stopping_day])

    def test_invalid_config_fails_before_running(self):
        with pytest.raises(ValueError):
            run_experiment(builtin_scenario("stationary_2arm"), {"name": "secg", "delta": 2.0}, 0)


def scripted_trace(scenario, impressions, successes, probs, policy=None):
    obs = [make_obs(t + 1, n, r, p) for t, (n, r, p) in enumerate(zip(impressions, successes, probs))]
    return trace_from_observations(obs, scenario=scenario, policy=policy)


class TestComputeMetrics:
    def test_uniform_regret(self, two_arm):
        trace = run_experiment(two_arm, {"name": "uniform"}, 5)
        m = compute_metrics(trace, two_arm)
        assert m.true_gains == [6000.0, 4000.0]
        assert m.counterfactual_best == 0
        expected = float(np.sum(trace.impressions * two_arm.means))
        assert m.regret == pytest.approx(6000.0 - expected)
        even = scripted_trace(two_arm, [[500, 500]] * 10, [[300, 200]] * 10, [[0.5, 0.5]] * 10)
        assert compute_metrics(even, two_arm).regret == pytest.approx(1000.0, abs=1e-9)

    def test_all_traffic_on_best(self, two_arm):
        trace = scripted_trace(two_arm, [[1000, 0]] * 10, [[600, 0]] * 10, [[1.0, 0.0]] * 10)
        m = compute_metrics(trace, two_arm)
        assert m.regret == 0.0
        assert m.gaps == [0.0, 0.2]

    def test_counterfactual_best_under_time_variation(self):
        scenario = builtin_scenario("reversal")
        assert scenario.cumulative_gains().tolist() == [6000.0, 10000.0]
        for policy in (SECG, {"name": "uniform"}, {"name": "thompson", "mc_draws": 1000}):
            for seed in range(3):
                m = compute_metrics(run_experiment(scenario, policy, seed), scenario)
                assert m.counterfactual_best == 1

    def test_regret_nonnegative(self):
        for name in ("case_study", "reversal", "stationary_3arm"):
            scenario = builtin_scenario(name)
            for policy in (SECG, {"name": "uniform"}):
                m = compute_metrics(run_experiment(scenario, policy, 11), scenario)
                assert m.regret >= -1e-9
                assert min(m.gaps) == 0.0 and m.gaps[m.counterfactual_best] == 0.0

    def test_hash_mismatch(self, two_arm):
        trace = run_experiment(two_arm, SECG, 0)
        other = Scenario.stationary([0.6, 0.41], traffic=1000, horizon=10)
        with pytest.raises(IntegrityError):
            compute_metrics(trace, other)


class TestDetectSimpsons:
    def test_agreement(self, two_arm):
        trace = scripted_trace(two_arm, [[10, 10]] * 3, [[6, 4]] * 3, [[0.5, 0.5]] * 3)
        report = detect_simpsons(trace)[(0, 1)]
        assert report.paradox_days == [] and report.fraction == 0.0
        assert report.evaluated_days == 3

    def test_smallest_instance_flags_day_two(self, two_arm):
        # A: 1/1 then 1/3; B: 3/4 then 0/1 (the brute-force minimum from the estimation tests)
        trace = scripted_trace(two_arm, [[1, 4], [3, 1]], [[1, 3], [1, 0]], [[0.5, 0.5]] * 2)
        report = detect_simpsons(trace)[(0, 1)]
        assert report.paradox_days == [2]
        assert report.fraction == 0.5

    def test_zero_impression_days_skipped(self, two_arm):
        trace = scripted_trace(two_arm, [[10, 10], [10, 0]], [[6, 4], [2, 0]], [[0.5, 0.5], [1.0, 0.0]])
        report = detect_simpsons(trace)[(0, 1)]
        assert report.skipped_days == [2] and report.evaluated_days == 1

    def test_pairs_for_three_arms(self):
        scenario = builtin_scenario("stationary_3arm")
        reports = detect_simpsons(run_experiment(scenario, {"name": "uniform"}, 0))
        assert sorted(reports) == [(0, 1), (0, 2), (1, 2)]

    def test_case_study_under_thompson(self):
        scenario = builtin_scenario("case_study")
        flagged = [
            detect_simpsons(run_experiment(scenario, {"name": "thompson"}, seed))[(0, 1)].fraction
            for seed in derive_seeds(3, 20)
        ]
        assert np.mean(flagged) > 0


class TestZTest:
    def test_identical(self):
        assert two_sample_z_test(50, 100, 50, 100) == 1.0

    def test_large_difference(self):
        z = 0.2 / math.sqrt(0.25 * 2 / 1000)
        assert z == pytest.approx(8.944, abs=1e-3)
        assert two_sample_z_test(600, 1000, 400, 1000) < 1e-15

    def test_moderate_difference(self):
        assert two_sample_z_test(55, 100, 45, 100) == pytest.approx(0.157, abs=5e-4)

    def test_degenerate_pooled_variance(self):
        assert two_sample_z_test(0, 10, 0, 20) == 1.0

    def test_zero_trials(self):
        with pytest.raises(UsageError):
            two_sample_z_test(0, 0, 1, 2)


class TestSweep:
    def test_single_seed_matches_run(self):
        scenario = builtin_scenario("stationary_2arm")
        summary = sweep(scenario, SECG, [17])
        m = compute_metrics(run_experiment(scenario, SECG, 17), scenario)
        assert summary.runs == [m]
        assert summary.mean_stopping_day == summary.median_stopping_day == m.stopping_day
        assert summary.mean_regret == m.regret
        assert summary.identification_rate == float(m.correct)

    def test_disjoint_seed_lists_agree(self):
        scenario = Scenario.stationary([0.5, 0.48], traffic=1000, horizon=10)
        seeds = derive_seeds(99, 300)
        a = sweep(scenario, SECG, seeds[:150])
        b = sweep(scenario, SECG, seeds[150:])
        p = (a.winner_rate + b.winner_rate) / 2
        assert 0.05 < p < 0.95
        assert abs(a.winner_rate - b.winner_rate) <= 3 * math.sqrt(p * (1 - p) * (2 / 150))

    def test_keep_traces_and_order(self):
        scenario = builtin_scenario("stationary_2arm")
        summary, traces = sweep(scenario, SECG, [3, 1, 2], keep_traces=True)
        assert summary.seeds == [3, 1, 2] == [t.seed for t in traces]

    def test_empty(self):
        with pytest.raises(UsageError):
            sweep(builtin_scenario("stationary_2arm"), SECG, [])


class TestSerialization:
    @pytest.mark.parametrize("policy", [SECG, {"name": "thompson", "mc_draws": 1000}])
    def test_round_trip(self, tmp_path, policy):
        scenario = builtin_scenario("case_study")
        trace = run_experiment(scenario, policy, 4)
        csv_path, _ = write_trace(trace, tmp_path, "t")
        loaded = read_trace(csv_path)
        for name in ("probs", "impressions", "successes", "gains", "active"):
            assert np.array_equal(getattr(loaded, name), getattr(trace, name))
        assert loaded.metadata() == trace.metadata()
        assert compute_metrics(loaded, scenario) == compute_metrics(trace, scenario)
        assert detect_simpsons(loaded)[(0, 1)] == detect_simpsons(trace)[(0, 1)]
        assert trace_to_csv(loaded) == csv_path.read_text()

    def test_csv_layout(self, two_arm):
        trace = scripted_trace(two_arm, [[1, 2]], [[1, 0]], [[1 / 3, 2 / 3]])
        header, row = trace_to_csv(trace).splitlines()
        assert header == "day,traffic,p_0,p_1,n_0,n_1,r_0,r_1,G_0,G_1,active_0,active_1"
        assert row == "1,3,0.3333333333333333,0.6666666666666666,1,2,1,0,3.0,0.0,1,1"
        assert "\r" not in trace_to_csv(trace)

    def test_malformed_row_names_line(self, tmp_path, two_arm):
        trace = run_experiment(two_arm, {"name": "uniform"}, 0)
        csv_path, _ = write_trace(trace, tmp_path, "t")
        lines = csv_path.read_text().splitlines()
        lines[3] = lines[3].rsplit(",", 1)[0]
        csv_path.write_text("\n".join(lines) + "\n")
        with pytest.raises(IntegrityError, match=r"t\.csv:4"):
            read_trace(csv_path)

    def test_tampered_gain_detected(self, tmp_path, two_arm):
        trace = run_experiment(two_arm, {"name": "uniform"}, 0)
        trace.gains[2, 0] += 1.0
        csv_path, _ = write_trace(trace, tmp_path, "t")
        with pytest.raises(IntegrityError, match="gains"):
            read_trace(csv_path)

    def test_missing_sidecar(self, tmp_path, two_arm):
        csv_path, meta_path = write_trace(run_experiment(two_arm, SECG, 0), tmp_path, "t")
        meta_path.unlink()
        with pytest.raises(IntegrityError):
            read_trace(csv_path)


class TestFigureTables:
    def test_panels_and_shape(self):
        scenario = builtin_scenario("case_study")
        trace = run_experiment(scenario, {"name": "thompson", "mc_draws": 1000}, 0)
        tables = figure_tables(trace)
        assert tuple(tables) == FIGURE_PANELS
        for rows in tables.values():
            assert len(rows) == scenario.horizon and all(len(r) == 2 for r in rows)

    def test_undefined_mean_is_blank(self, two_arm):
        trace = scripted_trace(two_arm, [[10, 0]], [[4, 0]], [[1.0, 0.0]])
        text = figure_csv(figure_tables(trace)["daily_mean"], 2)
        assert text == "day,arm_0,arm_1\n1,0.4,\n"
