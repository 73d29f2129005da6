import numpy as np
import pytest
from dataclasses import replace

from bemsim.config import default_config, fingerprint
from bemsim.features import BUILDING, SERVER
from bemsim.scenarios import (DependencyError, SCENARIO_IDS, run_all,
                              run_scenario, scenario_spec, synthesize_dataset,
                              _frames)

SMOKE_STEPS = 96  # two days keeps the unit suite fast


@pytest.fixture(scope="module")
def smoke_world():
    return replace(default_config(), year_steps=SMOKE_STEPS)


@pytest.fixture(scope="module")
def s0_smoke(smoke_world):
    return run_scenario("S0", smoke_world)


class TestSpecs:
    def test_all_ids_resolve(self):
        for sid in SCENARIO_IDS:
            spec = scenario_spec(sid)
            assert spec.id == sid

    def test_s_definitions(self):
        assert scenario_spec("S0").estimator == "none"
        assert scenario_spec("S1").retrain == "monthly"
        assert not scenario_spec("S1").use_prior
        assert scenario_spec("S2").use_prior
        assert scenario_spec("S3").window_months == 12
        assert scenario_spec("S4").retrain == "none"
        assert scenario_spec("S5").estimator == "oracle-s0"

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            scenario_spec("S9")


class TestRunScenario:
    def test_s0_log_shape_and_zero_estimates(self, s0_smoke):
        res = s0_smoke
        assert res.n_steps == SMOKE_STEPS
        assert len(res.steps) == SMOKE_STEPS
        assert np.all(res.eps_hat == 0.0)
        assert res.metrics["wmare_K"] > 0

    def test_target_equals_true_exogenous(self, s0_smoke):
        assert np.max(np.abs(s0_smoke.eps_target - s0_smoke.eps_true)) < 1e-9

    def test_determinism_byte_identical(self, smoke_world, s0_smoke, tmp_path):
        from bemsim.outputs import write_scenario_csv
        again = run_scenario("S0", smoke_world)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_scenario_csv(s0_smoke, smoke_world.clock, a)
        write_scenario_csv(again, smoke_world.clock, b)
        assert a.read_bytes() == b.read_bytes()

    def test_s1_short_run_never_estimates(self, smoke_world):
        # no month boundary inside the smoke span: estimate stays zero
        res = run_scenario("S1", smoke_world)
        assert np.all(res.eps_hat == 0.0)

    def test_s2_uses_prior_from_first_step(self, smoke_world, s0_smoke):
        res = run_scenario("S2", smoke_world)
        assert np.any(res.eps_hat[2:] != 0.0)
        assert np.all(res.eps_hat[:2] == 0.0)  # lag bootstrap
        assert res.metrics["wmare_K"] < 0.8 * s0_smoke.metrics["wmare_K"]

    def test_s5_beats_s0(self, smoke_world, s0_smoke):
        res = run_scenario("S5", smoke_world, s0_result=s0_smoke)
        assert res.metrics["wmare_K"] < 0.5 * s0_smoke.metrics["wmare_K"]

    def test_fingerprint_tracks_config(self, smoke_world, s0_smoke):
        assert s0_smoke.config_fingerprint == fingerprint(smoke_world)
        other = replace(smoke_world, seed=smoke_world.seed + 1)
        assert fingerprint(other) != s0_smoke.config_fingerprint


class TestSynthesizedPrior:
    def test_matches_closed_loop_targets(self, smoke_world):
        """Prior pairs synthesized from the frame equal what a closed-loop
        pre-run would have logged (the exact-twin property)."""
        world = replace(smoke_world, year_steps=SMOKE_STEPS)
        prior_frame, _ = _frames(world)
        synth = synthesize_dataset(world, prior_frame, world.seed_exo_prior,
                                   SMOKE_STEPS)
        from bemsim.scenarios import _run_loop, result_datasets
        loop = _run_loop(scenario_spec("S0"), world, prior_frame, start=0,
                         n_steps=SMOKE_STEPS, exo_seed=world.seed_exo_prior,
                         prior_datasets=None, estimators0=None)
        looped = result_datasets(loop, prior_frame)
        for g in (BUILDING, SERVER):
            a = synth[g]
            b = looped[g]
            n = len(b)
            assert np.array_equal(a.steps[:n], b.steps)
            assert np.array_equal(a.x[:n], b.x)
            assert np.max(np.abs(a.y[:n] - b.y)) < 1e-9


class TestParameterMismatch:
    def test_optional_plant_mismatch_breaks_exactness(self, smoke_world):
        world = replace(smoke_world, mismatch_rel=0.05, year_steps=48)
        res = run_scenario("S0", world)
        gap = np.max(np.abs(res.eps_target - res.eps_true))
        assert gap > 1e-6  # targets now include the model mismatch
        again = run_scenario("S0", world)
        assert np.array_equal(res.eps_target, again.eps_target)


class TestRunAll:
    def test_shares_s0_with_s5(self, smoke_world):
        results = run_all(smoke_world, ("S0", "S5"))
        assert set(results) == {"S0", "S5"}
        assert results["S5"].metrics["wmare_K"] < results["S0"].metrics["wmare_K"]

    def test_external_data_blocks_prior_scenarios(self, smoke_world):
        _, study = _frames(smoke_world)
        with pytest.raises(DependencyError):
            run_all(smoke_world, ("S2",), data_frame=study)
