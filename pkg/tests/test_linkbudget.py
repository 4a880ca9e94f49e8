import io
import csv
from dataclasses import replace

import numpy as np
import pytest

from qfclink.core import FiberLink
from qfclink.linkbudget import (CSV_COLUMNS, DEFAULT_PROJECTION, format_table, improved_link, predict, project,
                                sweep, write_csv)
from qfclink.presets import get_preset
from qfclink.scenario import DetectorModel, set_parameter
from qfclink.simulator import expected_rates


@pytest.mark.parametrize("name,g2", [("direct-866", 0.0012), ("qfc-1530", 0.663), ("qfc-1530-10km", 0.634)])
def test_preset_predictions(name, g2):
    assert predict(get_preset(name)).g2_zero == pytest.approx(g2, abs=0.002)


def test_predicted_sbr_values():
    assert predict(get_preset("qfc-1530")).sbr == pytest.approx(26.3 / 19.0, rel=1e-9)
    assert predict(get_preset("qfc-1530-10km")).sbr == pytest.approx(13.0 / 8.5, rel=1e-9)


@pytest.mark.parametrize("name", ["direct-866", "qfc-1530", "qfc-1530-10km"])
def test_predict_agrees_with_simulator_rates(name):
    sc = get_preset(name)
    rep, r = predict(sc), expected_rates(sc)
    assert rep.signal_rate == r.signal_total
    assert rep.background_rate == pytest.approx(r.background_total, rel=1e-12)


def test_zero_length_fiber_is_no_fiber():
    sc = get_preset("qfc-1530")
    a = predict(sc)
    b = predict(replace(sc, fiber=FiberLink(length=0.0)))
    assert (a.signal_rate, a.background_rate, a.g2_zero) == (b.signal_rate, b.background_rate, b.g2_zero)


def test_common_scaling_leaves_g2_unchanged():
    sc = get_preset("qfc-1530")
    base = predict(sc).g2_zero
    k = 0.37
    scaled = replace(
        sc,
        source=replace(sc.source, detection_probability_per_cycle=sc.source.detection_probability_per_cycle * k),
        stage=replace(sc.stage, noise_rate=sc.stage.noise_rate * k),
        detectors=tuple(replace(d, dark_rate=d.dark_rate * k) for d in sc.detectors),
    )
    assert predict(scaled).g2_zero == pytest.approx(base, rel=1e-12)


def test_g2_grows_with_distance_under_dark_floor():
    reps = sweep(get_preset("qfc-1530"), "fiber.length", np.linspace(0, 300, 31))
    g = np.array([r.g2_zero for r in reps])
    assert np.all(np.diff(g) > 0)
    assert g[-1] == pytest.approx(1.0, abs=1e-3)
    assert reps[3].parameter == "fiber.length" and reps[3].value == pytest.approx(30.0)


def test_g2_constant_with_distance_without_dark_counts():
    sc = replace(get_preset("qfc-1530"), detectors=(DetectorModel(),) * 2)
    g = [r.g2_zero for r in sweep(sc, "fiber.length", [0, 10, 50, 100])]
    np.testing.assert_allclose(g, g[0], rtol=1e-12)


def test_ideal_source_limit_flag():
    sc = replace(get_preset("direct-866"), detectors=(DetectorModel(),) * 2)
    rep = predict(sc)
    assert rep.g2_zero == 0.0 and "ideal-source-limit" in rep.flags


def test_override_flag_and_value():
    rep = predict(get_preset("qfc-1530-10km"))
    assert "background-override" in rep.flags
    assert rep.background_rate == pytest.approx(8.5)


def test_sweep_unknown_path():
    with pytest.raises(KeyError):
        sweep(get_preset("direct-866"), "fiber.colour", [1])
    # optional blocks are created on demand
    assert sweep(get_preset("direct-866"), "fiber.length", [5])[0].transmissions["fiber"] < 1


def test_csv_and_table():
    reps = sweep(get_preset("qfc-1530"), "detectors.dark_rate", [0.5, 1.0])
    buf = io.StringIO()
    write_csv(reps, buf)
    buf.seek(0)
    rows = list(csv.DictReader(buf))
    assert list(rows[0]) == CSV_COLUMNS and len(rows) == 2
    assert float(rows[1]["dark_rate"]) == 2.0
    text = format_table(reps)
    assert "detectors.dark_rate" in text and len(text.splitlines()) == 4


def test_projection_brackets_target():
    proj = project(100.0)
    assert len(proj.reports) == 16
    lo, hi = proj.bracket()
    assert lo <= 0.70 <= hi
    assert proj.chosen_assumptions == DEFAULT_PROJECTION
    chosen = proj.chosen_report
    assert "chosen" in chosen.flags and DEFAULT_PROJECTION.label() in chosen.flags
    assert abs(chosen.g2_zero - 0.70) <= 0.05
    assert sum("chosen" in r.flags for r in proj.reports) == 1


def test_improved_link_is_better_than_plain_extension():
    plain = predict(set_parameter(replace(get_preset("qfc-1530-10km"), background_override=None),
                                  "fiber.length", 100.0))
    better = predict(improved_link(100.0))
    assert better.g2_zero < plain.g2_zero
