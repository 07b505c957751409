import json

import numpy as np
import pytest

from causalode.errors import DomainError, ScriptError
from causalode.scenario import (
    RemoveEdit,
    ReorderEdit,
    SetEdit,
    ShiftEdit,
    apply_intervention,
    emit_plot_data,
    load_script,
    parse_script,
    run_scenario,
    serialize_script,
)

TREATMENTS = ("chemo", "radio")
AGENTS = ("north", "south")


def blank_schedule(t_total=25, n_agents=2, n_treatments=2):
    return np.zeros((t_total, n_agents, n_treatments), dtype=np.float64)


class TestParseScript:
    def test_round_trip_all_ops(self):
        edits = [
            RemoveEdit(treatment="chemo", agents="all", window=(2, 5)),
            RemoveEdit(treatment=1, agents=["north"], window=None),
            ShiftEdit(treatment="radio", delta_days=-15, agents=[0]),
            ReorderEdit(first="chemo", second="radio", gap_days=3, agents="all"),
            SetEdit(treatment=0, window=(4, 9), value=1, agents=["south", 0]),
        ]
        assert parse_script(serialize_script(edits)) == edits

    def test_parse_json_shapes(self):
        edits = parse_script(
            [
                {"op": "shift", "treatment": "radio", "delta_days": -15},
                {"op": "remove", "treatment": "chemo"},
            ]
        )
        assert edits[0] == ShiftEdit(treatment="radio", delta_days=-15, agents="all")
        assert edits[1] == RemoveEdit(treatment="chemo", agents="all", window=None)

    def test_script_must_be_list(self):
        with pytest.raises(ScriptError) as err:
            parse_script({"op": "remove"})
        assert err.value.location == "script"

    def test_entry_must_be_object(self):
        with pytest.raises(ScriptError) as err:
            parse_script(["remove"])
        assert err.value.location == "script[0]"

    def test_missing_op(self):
        with pytest.raises(ScriptError) as err:
            parse_script([{"treatment": "chemo"}])
        assert err.value.location == "script[0].op"

    def test_unknown_op(self):
        with pytest.raises(ScriptError) as err:
            parse_script([{"op": "boost", "treatment": "chemo"}])
        assert err.value.location == "script[0].op"

    def test_unexpected_keys(self):
        with pytest.raises(ScriptError, match="unexpected keys.*delta_days"):
            parse_script([{"op": "remove", "treatment": 0, "delta_days": 3}])

    def test_window_validation(self):
        bad = [
            [1.5, 3],
            [3],
            [True, 4],
            "1..4",
        ]
        for window in bad:
            with pytest.raises(ScriptError) as err:
                parse_script([{"op": "set", "treatment": 0, "window": window, "value": 1}])
            assert err.value.location == "script[0].window"
        with pytest.raises(ScriptError, match="precedes"):
            parse_script([{"op": "set", "treatment": 0, "window": [5, 2], "value": 1}])

    def test_shift_delta_must_be_integer(self):
        for delta in ("soon", 1.5, True):
            with pytest.raises(ScriptError) as err:
                parse_script([{"op": "shift", "treatment": 0, "delta_days": delta}])
            assert err.value.location == "script[0].delta_days"

    def test_reorder_needs_pair_and_gap(self):
        with pytest.raises(ScriptError) as err:
            parse_script([{"op": "reorder", "treatment": "chemo", "gap": 2}])
        assert err.value.location == "script[0].treatment"
        with pytest.raises(ScriptError) as err:
            parse_script([{"op": "reorder", "treatment": ["a", "b"], "gap": -1}])
        assert err.value.location == "script[0].gap"

    def test_set_value_binary(self):
        for value in (2, True, "on"):
            with pytest.raises(ScriptError) as err:
                parse_script([{"op": "set", "treatment": 0, "window": [0, 2], "value": value}])
            assert err.value.location == "script[0].value"

    def test_error_location_indexes_later_edits(self):
        with pytest.raises(ScriptError) as err:
            parse_script(
                [
                    {"op": "remove", "treatment": 0},
                    {"op": "shift", "treatment": 0},
                ]
            )
        assert err.value.location == "script[1].delta_days"

    def test_load_script_file(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps([{"op": "remove", "treatment": "chemo"}]))
        assert load_script(path) == [RemoveEdit(treatment="chemo")]
        path.write_text("{nope")
        with pytest.raises(ScriptError, match="not valid JSON"):
            load_script(path)


class TestApplyIntervention:
    def test_remove_whole_timeline(self):
        schedule = blank_schedule()
        schedule[:, :, 0] = 1.0
        schedule[:, :, 1] = 1.0
        out = apply_intervention(schedule, [RemoveEdit(treatment="chemo")], TREATMENTS, AGENTS)
        assert not out[:, :, 0].any()
        assert out[:, :, 1].all()
        assert schedule[:, :, 0].all()  # input untouched

    def test_remove_window_clipped(self):
        schedule = blank_schedule()
        schedule[:, 0, 0] = 1.0
        out = apply_intervention(
            schedule, [RemoveEdit(treatment=0, window=(-5, 3))], TREATMENTS, AGENTS
        )
        assert not out[:3, 0, 0].any()
        assert out[3:, 0, 0].all()

    def test_remove_twice_idempotent(self):
        schedule = blank_schedule()
        schedule[4:9, :, 1] = 1.0
        edit = RemoveEdit(treatment="radio", window=(5, 7))
        once = apply_intervention(schedule, [edit], TREATMENTS, AGENTS)
        twice = apply_intervention(once, [edit], TREATMENTS, AGENTS)
        assert np.array_equal(once, twice)

    def test_shift_back_fifteen_days(self):
        schedule = blank_schedule()
        schedule[10:20, 0, 0] = 1.0
        out = apply_intervention(
            schedule, [ShiftEdit(treatment="chemo", delta_days=-15)], TREATMENTS, AGENTS
        )
        expected = np.zeros(25)
        expected[0:5] = 1.0
        assert np.array_equal(out[:, 0, 0], expected)

    def test_shift_zero_is_identity(self):
        rng = np.random.default_rng(0)
        schedule = (rng.random((25, 2, 2)) < 0.4).astype(np.float64)
        out = apply_intervention(
            schedule,
            [ShiftEdit(treatment=0, delta_days=0), ShiftEdit(treatment=1, delta_days=0)],
            TREATMENTS,
            AGENTS,
        )
        assert np.array_equal(out, schedule)

    def test_shift_off_the_end_clears(self):
        schedule = blank_schedule()
        schedule[20:25, 1, 1] = 1.0
        out = apply_intervention(
            schedule, [ShiftEdit(treatment="radio", delta_days=10)], TREATMENTS, AGENTS
        )
        assert not out[:, 1, 1].any()

    def test_shift_preserves_separate_runs(self):
        schedule = blank_schedule()
        schedule[2:4, 0, 0] = 1.0
        schedule[8:11, 0, 0] = 1.0
        out = apply_intervention(
            schedule, [ShiftEdit(treatment=0, delta_days=2)], TREATMENTS, AGENTS
        )
        expected = np.zeros(25)
        expected[4:6] = 1.0
        expected[10:13] = 1.0
        assert np.array_equal(out[:, 0, 0], expected)

    def test_reorder_aligns_to_earliest_start_plus_gap(self):
        schedule = blank_schedule()
        schedule[5:8, 0, 0] = 1.0   # chemo starts day 5
        schedule[2:4, 0, 1] = 1.0   # radio starts day 2
        out = apply_intervention(
            schedule,
            [ReorderEdit(first="chemo", second="radio", gap_days=3)],
            TREATMENTS,
            AGENTS,
        )
        chemo, radio = np.zeros(25), np.zeros(25)
        chemo[2:5] = 1.0       # moved to the earliest start, day 2
        radio[5:7] = 1.0       # follows after the 3 day gap
        assert np.array_equal(out[:, 0, 0], chemo)
        assert np.array_equal(out[:, 0, 1], radio)

    def test_reorder_skips_agents_missing_either_treatment(self):
        schedule = blank_schedule()
        schedule[5:8, 0, 0] = 1.0
        out = apply_intervention(
            schedule, [ReorderEdit(first=0, second=1, gap_days=1)], TREATMENTS, AGENTS
        )
        assert np.array_equal(out, schedule)

    def test_set_window(self):
        schedule = blank_schedule()
        out = apply_intervention(
            schedule, [SetEdit(treatment="radio", window=(3, 30), value=1)], TREATMENTS, AGENTS
        )
        assert out[3:, :, 1].all()
        assert not out[:3, :, 1].any()
        assert not out[:, :, 0].any()

    def test_agent_subset_by_name_and_index(self):
        schedule = blank_schedule()
        schedule[:, :, 0] = 1.0
        out = apply_intervention(
            schedule, [RemoveEdit(treatment="chemo", agents=["south"])], TREATMENTS, AGENTS
        )
        assert out[:, 0, 0].all()
        assert not out[:, 1, 0].any()
        out = apply_intervention(
            schedule, [RemoveEdit(treatment="chemo", agents=0)], TREATMENTS, AGENTS
        )
        assert not out[:, 0, 0].any()
        assert out[:, 1, 0].all()

    def test_unknown_names_rejected_with_location(self):
        schedule = blank_schedule()
        with pytest.raises(ScriptError) as err:
            apply_intervention(schedule, [RemoveEdit(treatment="laser")], TREATMENTS, AGENTS)
        assert err.value.location == "script[0].treatment"
        with pytest.raises(ScriptError) as err:
            apply_intervention(
                schedule, [RemoveEdit(treatment=0, agents=["east"])], TREATMENTS, AGENTS
            )
        assert err.value.location == "script[0].agents[0]"
        with pytest.raises(ScriptError) as err:
            apply_intervention(schedule, [RemoveEdit(treatment=7)], TREATMENTS, AGENTS)
        assert err.value.location == "script[0].treatment"

    def test_edits_apply_in_order(self):
        schedule = blank_schedule()
        edits = [
            SetEdit(treatment=0, window=(0, 10), value=1),
            RemoveEdit(treatment=0, window=(0, 5)),
        ]
        out = apply_intervention(schedule, edits, TREATMENTS, AGENTS)
        assert not out[:5, :, 0].any()
        assert out[5:10, :, 0].all()


class TestRunScenario:
    def test_empty_script_reproduces_factual(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[0]
        result = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, tiny_config.obs_len, panel, [], 6
        )
        assert result.factual.shape == (panel.n_agents, 6, 1)
        assert np.array_equal(result.factual, result.counterfactual)
        assert not result.delta.any()
        assert result.mean_delta == 0.0

    def test_deterministic(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[1]
        edits = [ShiftEdit(treatment="chemo", delta_days=-3)]
        a = run_scenario(tiny_fit.model, tiny_fit.checkpoint.stats, tiny_config.obs_len, panel, edits, 8)
        b = run_scenario(tiny_fit.model, tiny_fit.checkpoint.stats, tiny_config.obs_len, panel, edits, 8)
        assert np.array_equal(a.factual, b.factual)
        assert np.array_equal(a.counterfactual, b.counterfactual)

    def test_horizon_bounds(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[0]
        max_horizon = panel.n_steps - tiny_config.obs_len
        for horizon in (0, max_horizon + 1):
            with pytest.raises(DomainError):
                run_scenario(
                    tiny_fit.model, tiny_fit.checkpoint.stats, tiny_config.obs_len,
                    panel, [], horizon,
                )

    def test_edited_schedule_matches_manual_application(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[0]
        obs_len, horizon = tiny_config.obs_len, 6
        edits = [SetEdit(treatment="radio", window=(obs_len, obs_len + horizon), value=1)]
        result = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, obs_len, panel, edits, horizon
        )
        manual = apply_intervention(
            panel.treatments, edits, panel.treatment_names, panel.agent_names
        )
        assert np.array_equal(result.edited_schedule, manual[obs_len : obs_len + horizon])
        assert result.edited_schedule[:, :, 1].all()

    def test_observation_window_edits_ignored_by_default(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[2]
        obs_len = tiny_config.obs_len
        edits = [SetEdit(treatment="chemo", window=(0, obs_len), value=1)]
        kept_factual = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, obs_len, panel, edits, 6
        )
        assert np.array_equal(kept_factual.factual, kept_factual.counterfactual)
        rewritten = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, obs_len, panel, edits, 6,
            apply_to_observation=True,
        )
        assert not np.array_equal(rewritten.factual, rewritten.counterfactual)

    def test_prediction_window_edit_changes_outcome(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[0]
        obs_len = tiny_config.obs_len
        edits = [SetEdit(treatment="chemo", window=(obs_len, panel.n_steps), value=1)]
        result = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, obs_len, panel, edits, 6
        )
        assert not np.array_equal(result.factual, result.counterfactual)
        assert np.array_equal(result.delta, result.counterfactual - result.factual)

    def test_per_agent_delta(self, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[0]
        edits = [RemoveEdit(treatment="chemo")]
        result = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, tiny_config.obs_len, panel, edits, 6
        )
        assert result.per_agent_delta.shape == (panel.n_agents,)
        assert result.per_agent_delta[0] == pytest.approx(result.delta[0].mean())
        assert result.mean_delta == pytest.approx(result.delta.mean())


class TestEmitPlotData:
    def test_csv_layout(self, tmp_path, tiny_fit, tiny_cohort, tiny_config):
        panel = tiny_cohort.panels[0]
        edits = [RemoveEdit(treatment="radio")]
        result = run_scenario(
            tiny_fit.model, tiny_fit.checkpoint.stats, tiny_config.obs_len, panel, edits, 6
        )
        path = tmp_path / "plot.csv"
        emit_plot_data(result, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "day,mean_delta," + ",".join(panel.agent_names)
        assert len(lines) - 1 == 6
        first = lines[1].split(",")
        assert first[0] == "0"
        per_day = result.delta.mean(axis=2)
        assert float(first[1]) == pytest.approx(per_day[:, 0].mean())
        assert float(first[2]) == pytest.approx(per_day[0, 0])
