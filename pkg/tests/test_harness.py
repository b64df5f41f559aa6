import numpy as np
import pytest

from rtimplant import harness as h
from rtimplant import imagecore as ic
from rtimplant import synthtrain
from rtimplant.errors import ParameterError, ScenarioError

SPECS = synthtrain.scene_specs(synthtrain.make_manifest(2, base_seed=3))


@pytest.fixture(scope="module")
def small_report(quick_model):
    cfg = h.RunConfig(iterations=3, repeats=2, seed=4)
    return cfg, h.run_protection_eval(cfg, quick_model, SPECS)


# --- scenarios -------------------------------------------------------------

def test_trigger_scenario_is_the_trigger(trigger):
    m = h.realize_scenario("Trigger", trigger).mask
    assert np.array_equal(m, trigger)


@pytest.mark.parametrize("seed", range(20))
def test_scenario_invariants(trigger, seed):
    t = trigger.astype(bool)
    inc = h.realize_scenario("Incomplete", trigger, 7, seed).mask.astype(bool)
    assert (inc & t).any() and (inc & ~t).any()
    assert np.all(inc <= ic.expand_mask(trigger, 7).astype(bool))
    ring = h.realize_scenario("Without", trigger, 7, seed).mask
    assert not np.any(ring * trigger) and ring.any()


def test_scenario_errors(trigger):
    with pytest.raises(ScenarioError):
        h.realize_scenario("Trigger", np.zeros((64, 64)))
    with pytest.raises(ScenarioError):
        h.realize_scenario("Without", np.ones((8, 8)), 3)
    with pytest.raises(ScenarioError):
        h.realize_scenario("Incomplete", trigger, 7, 0, fraction=0.0)
    with pytest.raises(ParameterError):
        h.realize_scenario("Sideways", trigger)


# --- protocol --------------------------------------------------------------

def test_record_grid_shape(small_report):
    cfg, rep = small_report
    assert len(rep.records) == len(SPECS) * len(h.SCENARIOS) * len(h.KINDS) * cfg.repeats
    for r in rep.records:
        assert set(r.values) == set(h.METRIC_KEYS)
    assert rep.meta["images"] == 2


def test_benign_rows_compare_equal_to_themselves(small_report):
    _, rep = small_report
    for r in rep.records:
        if r.kind == "Ben":
            assert r.values[("ssim_vs_ben", "mask")] == 1.0
            assert r.values[("psnr_vs_ben", "mask")] == 100.0


def test_zero_iterations_gives_zero_differences(quick_model):
    cfg = h.RunConfig(iterations=0, repeats=1)
    rep = h.run_protection_eval(cfg, quick_model, SPECS[:1])
    for scenario in h.SCENARIOS:
        for metric, region in h.METRIC_KEYS:
            assert abs(rep.diff("full", scenario, metric, region)) <= 1e-9


def test_records_regenerate_from_seeds(small_report, quick_model):
    cfg, rep = small_report
    for r in rep.records[::7]:
        again = h.regenerate_record(quick_model, cfg, r, SPECS[0].size)
        assert again.values == r.values


def test_run_is_bit_reproducible(small_report, quick_model):
    cfg, rep = small_report
    again = h.run_protection_eval(cfg, quick_model, SPECS)
    assert h.report_to_csv(again) == h.report_to_csv(rep)


def test_missing_inputs_raise():
    with pytest.raises(ParameterError):
        h.run_protection_eval(h.RunConfig())
    with pytest.raises(ParameterError):
        h.RunConfig(repeats=0)


def test_error_names_failing_image(quick_model):
    cfg = h.RunConfig(iterations=1, repeats=1, trigger_side=64)  # whole frame: Without ring is empty
    with pytest.raises(ScenarioError, match="image 0"):
        h.run_protection_eval(cfg, quick_model, SPECS[:1])


def test_loss_ablation_runs(quick_model):
    rep = h.ablate_losses(h.RunConfig(iterations=2, repeats=1), quick_model, SPECS[:1])
    assert rep.runs() == ["implant", "implant+incomplete", "full"]


def test_bound_ablation_meta(quick_model):
    rep = h.ablate_bounds(h.RunConfig(iterations=2, repeats=1), [2 / 255, 6 / 255],
                          quick_model, SPECS[:1])
    assert rep.runs() == ["eps=2/255", "eps=6/255"]
    assert set(rep.meta["trigger_ssim_drop"]) == {"eps=2/255", "eps=6/255"}
    assert isinstance(rep.meta["plateau"], bool)
    with pytest.raises(ParameterError):
        h.ablate_bounds(h.RunConfig(), [2.0], quick_model, SPECS[:1])


def test_bound_labels():
    assert h.bound_label(6 / 255) == "eps=6/255"
    assert h.bound_label(0.01) == "eps=0.01"


# --- report files ----------------------------------------------------------

def test_csv_roundtrip_is_byte_identical(small_report, tmp_path):
    _, rep = small_report
    text = h.report_to_csv(rep)
    assert text.splitlines()[0] == ",".join(h.CSV_HEADER)
    back = h.report_from_csv(text)
    assert h.report_to_csv(back) == text
    path = h.emit_report(rep, "csv", tmp_path / "r" / "p.csv")
    assert path.read_text() == text


def test_json_roundtrip(small_report):
    _, rep = small_report
    text = h.report_to_json(rep)
    back = h.report_from_json(text)
    assert h.report_to_json(back) == text
    import json
    doc = json.loads(text)
    assert doc["schema_version"] == 1 and doc["summary"]


def test_report_readers_reject_bad_input(small_report):
    with pytest.raises(ParameterError):
        h.report_from_csv("a,b\n1,2\n")
    with pytest.raises(ParameterError):
        h.report_from_json('{"schema_version": 2, "records": []}')
    with pytest.raises(ParameterError):
        h.emit_report(small_report[1], "xml", "/tmp/never")
    with pytest.raises(ParameterError):
        h.emit_report(h.Report([]), "csv", "/tmp/never")


def test_summary_and_table(small_report):
    _, rep = small_report
    rows = rep.summary()
    assert len(rows) == len(h.SCENARIOS) * len(h.METRIC_KEYS)
    for row in rows:
        assert row["diff"] == pytest.approx(row["imp"] - row["ben"])
    table = h.format_table(rep)
    assert "Trigger" in table and "Diff" in table
    assert rep.drop("full", "Trigger") == -rep.diff("full", "Trigger", "ssim")
