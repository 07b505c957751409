import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalode.errors import ConfigError, DomainError, SchemaError
from causalode.pkpd import (
    CohortConfig,
    ParamPriors,
    RegionParams,
    SimulatedCohort,
    assign_treatments,
    assignment_probability,
    build_region_graph,
    counterfactual_outcomes,
    decay_chemo,
    diameter_from_volume,
    scale_edge_range,
    simulate_cohort,
    step_volume,
    volume_from_diameter,
)
from helpers import scalar_tumor_replay


def single_region_params(
    growth_rate=0.1, chemo_sensitivity=0.0, radio_alpha=0.0, capacity_diameter=30.0
) -> RegionParams:
    return RegionParams(
        carrying_capacity=np.array([volume_from_diameter(capacity_diameter)]),
        growth_rate=np.array([growth_rate]),
        chemo_sensitivity=np.array([chemo_sensitivity]),
        radio_alpha=np.array([radio_alpha]),
        radio_beta=np.array([radio_alpha / 10.0]),
        subgroup=2,
    )


class TestGeometry:
    def test_sphere_round_trip(self):
        d = np.array([1.0, 5.0, 13.0])
        assert np.allclose(diameter_from_volume(volume_from_diameter(d)), d)

    def test_unit_diameter_volume(self):
        assert volume_from_diameter(1.0) == pytest.approx(math.pi / 6.0)


class TestRegionGraph:
    def test_forced_single_edge(self):
        adj = build_region_graph(2, (1, 1), seed=0)
        assert np.array_equal(adj, np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_count_in_range_symmetric_hollow(self):
        adj = build_region_graph(15, (22, 45), seed=123)
        edges = int(adj.sum() / 2)
        assert 22 <= edges <= 45
        assert np.array_equal(adj, adj.T)
        assert np.all(np.diag(adj) == 0)
        assert set(np.unique(adj)) <= {0.0, 1.0}

    def test_deterministic(self):
        assert np.array_equal(
            build_region_graph(8, (5, 12), seed=7), build_region_graph(8, (5, 12), seed=7)
        )

    def test_infeasible_range(self):
        with pytest.raises(ConfigError):
            build_region_graph(3, (4, 10), seed=0)


class TestScaleEdgeRange:
    def test_matches_base_at_base_size(self):
        base = CohortConfig(n_patients=1)
        assert scale_edge_range(base, base.n_regions) == base.edge_count_range

    def test_shrinks_to_feasible_budget(self):
        assert scale_edge_range(CohortConfig(n_patients=1), 4) == (1, 3)
        assert scale_edge_range(CohortConfig.long_range(1), 4) == (4, 6)

    def test_single_region_gets_empty_graph(self):
        assert scale_edge_range(CohortConfig(n_patients=1), 1) == (0, 0)

    @given(st.integers(min_value=1, max_value=40))
    @settings(max_examples=40, deadline=None)
    def test_always_feasible(self, n_regions):
        lo, hi = scale_edge_range(CohortConfig(n_patients=1), n_regions)
        CohortConfig(n_patients=1, n_regions=n_regions, edge_count_range=(lo, hi))


class TestDecayChemo:
    def test_half_life(self):
        assert decay_chemo(1.0, 0.0) == 0.5

    def test_zero_state(self):
        assert decay_chemo(0.0, 0.0) == 0.0

    def test_decay_plus_dose(self):
        assert decay_chemo(0.5, 1.0) == 1.25

    def test_negative_rejected(self):
        with pytest.raises(DomainError):
            decay_chemo(-0.1, 0.0)
        with pytest.raises(DomainError):
            decay_chemo(0.0, -1.0)


class TestStepVolume:
    def test_at_capacity_stays_put(self):
        params = single_region_params()
        v = params.carrying_capacity.copy()
        out = step_volume(
            v, params, np.zeros(1), np.zeros(1), np.zeros((1, 1)), np.zeros(1), 0.01, 0.01, 0.001
        )
        assert out[0] == pytest.approx(v[0], rel=1e-15)

    def test_untreated_log_growth(self):
        params = single_region_params(growth_rate=0.05)
        v = np.array([10.0])
        out = step_volume(
            v, params, np.zeros(1), np.zeros(1), np.zeros((1, 1)), np.zeros(1), 0.01, 0.01, 0.001
        )
        expected = (1.0 + 0.05 * math.log(float(params.carrying_capacity[0]) / 10.0)) * 10.0
        assert out[0] == pytest.approx(expected, rel=1e-15)
        assert out[0] > 10.0

    def test_neighbor_chemo_leak(self):
        # Two connected regions; region 1 carries concentration 1, so region 0
        # gains exactly iota_c * 1 on top of its own growth term.
        params = RegionParams(
            carrying_capacity=np.full(2, volume_from_diameter(30.0)),
            growth_rate=np.zeros(2),
            chemo_sensitivity=np.zeros(2),
            radio_alpha=np.zeros(2),
            radio_beta=np.zeros(2),
            subgroup=1,
        )
        adj = np.array([[0.0, 1.0], [1.0, 0.0]])
        conc = np.array([0.0, 1.0])
        out = step_volume(
            np.array([2.0, 3.0]), params, conc, np.zeros(2), adj, np.zeros(2),
            chemo_interference=0.01, radio_interference=0.0, neighbor_coupling=0.0,
        )
        assert out[0] == pytest.approx(2.0 + 0.01, rel=1e-15)

    def test_isolated_region_no_neighbor_terms(self):
        params = single_region_params(growth_rate=0.0)
        out = step_volume(
            np.array([4.0]), params, np.array([0.0]), np.array([0.0]),
            np.zeros((1, 1)), np.zeros(1), 0.5, 0.5, 0.5,
        )
        assert out[0] == 4.0

    def test_floor_applied(self):
        params = single_region_params(growth_rate=0.0, chemo_sensitivity=1.0)
        out = step_volume(
            np.array([1.0]), params, np.array([10.0]), np.array([0.0]),
            np.zeros((1, 1)), np.zeros(1), 0.0, 0.0, 0.0, volume_floor=1e-6,
        )
        assert out[0] == 1e-6

    def test_nonpositive_volume_rejected(self):
        params = single_region_params()
        with pytest.raises(DomainError):
            step_volume(
                np.array([0.0]), params, np.zeros(1), np.zeros(1),
                np.zeros((1, 1)), np.zeros(1), 0.0, 0.0, 0.0,
            )


class TestAssignment:
    def test_flat_sigmoid_at_zero_gamma(self):
        config = CohortConfig(n_patients=1, n_regions=2, edge_count_range=(1, 1), assign_gamma=0.0)
        probs = assignment_probability(np.array([0.5, 7.0, 12.0]), config)
        assert np.allclose(probs, 0.5)

    def test_midpoint_probability(self):
        config = CohortConfig(n_patients=1, n_regions=2, edge_count_range=(1, 1))
        assert assignment_probability(np.array([config.offset]), config)[0] == pytest.approx(0.5)

    def test_draws_binary_and_deterministic(self):
        config = CohortConfig(n_patients=1, n_regions=3, edge_count_range=(1, 3))
        chemo1, radio1 = assign_treatments(np.array([2.0, 6.5, 12.0]), config, np.random.default_rng(5))
        chemo2, radio2 = assign_treatments(np.array([2.0, 6.5, 12.0]), config, np.random.default_rng(5))
        assert set(np.unique(np.concatenate([chemo1, radio1]))) <= {0.0, 1.0}
        assert np.array_equal(chemo1, chemo2) and np.array_equal(radio1, radio2)

    @given(
        lo=st.floats(0.1, 12.9),
        delta=st.floats(0.0, 5.0),
        gamma=st.floats(0.0, 10.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_diameter(self, lo, delta, gamma):
        config = CohortConfig(
            n_patients=1, n_regions=2, edge_count_range=(1, 1), assign_gamma=gamma
        )
        p_lo = assignment_probability(np.array([lo]), config)[0]
        p_hi = assignment_probability(np.array([min(lo + delta, 13.0)]), config)[0]
        assert p_hi >= p_lo


class TestSimulateCohort:
    def test_panel_shapes_default_geometry(self):
        cohort = simulate_cohort(CohortConfig(n_patients=2, horizon=60, seed=1))
        assert len(cohort.panels) == 2
        panel = cohort.panels[0]
        assert panel.covariates.shape == (15, 60, 4)
        assert panel.treatments.shape == (60, 15, 2)
        assert panel.outcomes.shape == (15, 60, 1)
        assert panel.adjacency.shape == (60, 15, 15)
        # Covariates are [volume, subgroup, chemo, radio].
        assert np.array_equal(panel.covariates[:, :, 0], panel.outcomes[:, :, 0])
        assert np.array_equal(panel.covariates[:, :, 2], panel.treatments[:, :, 0].T)
        assert float(panel.covariates[0, 0, 1]) in (1.0, 2.0, 3.0)

    def test_long_range_variant(self):
        config = CohortConfig.long_range(1, seed=2)
        cohort = simulate_cohort(config)
        assert cohort.panels[0].covariates.shape == (5, 120, 4)
        edges = int(cohort.traces[0].adjacency.sum() / 2)
        assert 6 <= edges <= 10

    def test_deterministic_given_seed(self):
        config = CohortConfig(
            n_patients=2, n_regions=4, edge_count_range=(2, 5), horizon=12, seed=9
        )
        a, b = simulate_cohort(config), simulate_cohort(config)
        for pa, pb in zip(a.panels, b.panels):
            assert np.array_equal(pa.covariates, pb.covariates)
            assert np.array_equal(pa.treatments, pb.treatments)

    def test_noise_free_untreated_deterministic(self):
        config = CohortConfig(
            n_patients=1, n_regions=3, edge_count_range=(1, 3), horizon=10,
            seed=4, noise_std=0.0, enable_treatments=False,
        )
        a, b = simulate_cohort(config), simulate_cohort(config)
        assert np.array_equal(a.panels[0].outcomes, b.panels[0].outcomes)
        assert np.all(a.panels[0].treatments == 0.0)
        assert np.array_equal(a.traces[0].noise, np.zeros((9, 3)))

    def test_volumes_positive(self):
        cohort = simulate_cohort(
            CohortConfig(n_patients=3, n_regions=5, edge_count_range=(4, 8), horizon=40, seed=6)
        )
        for panel in cohort.panels:
            assert np.all(panel.outcomes > 0.0)

    def test_matches_scalar_oracle(self):
        # Independent plain-float reimplementation of the volume recurrence.
        config = CohortConfig(
            n_patients=3, n_regions=5, edge_count_range=(3, 8), horizon=10, seed=11
        )
        cohort = simulate_cohort(config)
        for panel, trace in zip(cohort.panels, cohort.traces):
            expected = np.array(scalar_tumor_replay(trace, panel.treatments))
            assert np.max(np.abs(expected - trace.volumes)) < 1e-10
            assert np.max(np.abs(expected.T - panel.outcomes[:, :, 0])) < 1e-10

    def test_oracle_covers_isolated_regions(self):
        config = CohortConfig(
            n_patients=2, n_regions=4, edge_count_range=(0, 1), horizon=8, seed=13
        )
        cohort = simulate_cohort(config)
        for panel, trace in zip(cohort.panels, cohort.traces):
            expected = np.array(scalar_tumor_replay(trace, panel.treatments))
            assert np.max(np.abs(expected - trace.volumes)) < 1e-10


class TestCohortStorage:
    def test_save_load_round_trip(self, tmp_path, tiny_cohort):
        tiny_cohort.save(tmp_path / "cohort")
        loaded = SimulatedCohort.load(tmp_path / "cohort")
        assert loaded.config == tiny_cohort.config
        assert len(loaded.panels) == len(tiny_cohort.panels)
        for pa, pb in zip(loaded.panels, tiny_cohort.panels):
            assert np.array_equal(pa.covariates, pb.covariates)
        for ta, tb in zip(loaded.traces, tiny_cohort.traces):
            assert np.array_equal(ta.volumes, tb.volumes)
            assert np.array_equal(ta.noise, tb.noise)
            assert np.array_equal(ta.params.growth_rate, tb.params.growth_rate)

    def test_wrong_manifest_kind(self, tmp_path):
        from causalode.panel import save_cohort

        save_cohort([], tmp_path / "other", manifest={"kind": "something-else"})
        with pytest.raises(SchemaError):
            SimulatedCohort.load(tmp_path / "other")


class TestCounterfactualReplay:
    def test_unedited_schedule_bit_exact(self, tiny_cohort):
        panel, trace = tiny_cohort.panels[0], tiny_cohort.traces[0]
        for start, n_steps in ((0, panel.n_steps), (7, 10), (12, 5)):
            replay = counterfactual_outcomes(trace, panel.treatments, start, n_steps)
            assert np.array_equal(
                replay[:, :, 0].T, trace.volumes[start : start + n_steps]
            )

    def test_edited_schedule_matches_scalar_oracle(self, tiny_cohort):
        panel, trace = tiny_cohort.panels[1], tiny_cohort.traces[1]
        edited = np.array(panel.treatments)
        edited[10:, :, 0] = 1.0 - edited[10:, :, 0]
        replay = counterfactual_outcomes(trace, edited, 0, panel.n_steps)
        expected = np.array(scalar_tumor_replay(trace, edited))
        assert np.max(np.abs(replay[:, :, 0].T - expected)) < 1e-10

    def test_mid_trajectory_branch_keeps_chemo_chain(self, tiny_cohort):
        # Branching at start > 0 must carry the factual concentration into
        # the first replayed decay step.
        panel, trace = tiny_cohort.panels[2], tiny_cohort.traces[2]
        start = 9
        replay = counterfactual_outcomes(trace, panel.treatments, start, 8)
        assert np.array_equal(replay[:, :, 0].T, trace.volumes[start : start + 8])

    def test_window_validation(self, tiny_cohort):
        trace = tiny_cohort.traces[0]
        schedule = tiny_cohort.panels[0].treatments
        with pytest.raises(DomainError):
            counterfactual_outcomes(trace, schedule, 28, 10)
        with pytest.raises(SchemaError):
            counterfactual_outcomes(trace, schedule[:, :, :1], 0, 5)


class TestConfigValidation:
    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigError):
            CohortConfig(n_patients=0)
        with pytest.raises(ConfigError):
            CohortConfig(n_patients=1, horizon=1)
        with pytest.raises(ConfigError):
            CohortConfig(n_patients=1, n_regions=3, edge_count_range=(2, 9))
        with pytest.raises(ConfigError):
            CohortConfig(n_patients=1, noise_std=-0.1)

    def test_offset_defaults_to_half_max(self):
        config = CohortConfig(n_patients=1)
        assert config.offset == config.diameter_max / 2
        assert CohortConfig(n_patients=1, assign_offset=3.0).offset == 3.0

    def test_region_params_validation(self):
        with pytest.raises(DomainError):
            RegionParams(
                carrying_capacity=np.array([1.0]),
                growth_rate=np.array([-0.1]),
                chemo_sensitivity=np.array([0.0]),
                radio_alpha=np.array([0.0]),
                radio_beta=np.array([0.0]),
                subgroup=1,
            )

    def test_priors_defaults(self):
        priors = ParamPriors()
        assert priors.carrying_capacity_diameter == 30.0
        assert priors.subgroup_scales == (0.9, 1.0, 1.1)
