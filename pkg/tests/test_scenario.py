import numpy as np
import pytest
from scipy import stats

from qfclink.core import ConversionStage, FiberLink
from qfclink.presets import MEASURED, PRESETS, get_preset
from qfclink.scenario import (GaussianShape, LinkScenario, PulseSequence, TabulatedShape, get_parameter,
                              rate_breakdown, scenario_from_dict, scenario_to_dict, set_parameter,
                              shape_from_dict)


def test_pulse_sequence_timing():
    seq = PulseSequence()
    assert seq.cycle_period_ps == 10_040_161
    assert seq.drive_start == pytest.approx(6.7e-6)
    assert seq.drive_end == pytest.approx(9.0e-6)


def test_default_gate_is_whole_number_of_shape_bins():
    sc = LinkScenario()
    g0, g1 = sc.gate_ps
    assert (g0, g1) == (6_450_000, 9_250_000)
    assert (g1 - g0) % 80_000 == 0


def test_gaussian_shape_cdf_and_mean():
    g = GaussianShape()
    assert g.cdf(0.0) == 0.0 and g.cdf(g.duration) == pytest.approx(1.0)
    # symmetric truncation around the window centre
    assert g.mean() == pytest.approx(g.duration / 2, rel=1e-12)
    masses = g.bin_masses(np.linspace(0, g.duration, 11))
    assert masses.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(masses, masses[::-1], rtol=1e-9)


def test_gaussian_sampling_matches_cdf():
    g = GaussianShape(center=0.8e-6, fwhm=0.6e-6)
    x = g.sample(np.random.default_rng(0), 50_000)
    assert x.min() >= 0 and x.max() <= g.duration
    assert stats.kstest(x, g.cdf).pvalue > 1e-3


def test_tabulated_shape_normalizes():
    t = TabulatedShape(edges=(0.0, 1e-6, 2e-6), density=(1.0, 3.0))
    assert t.masses.tolist() == pytest.approx([0.25, 0.75])
    assert t.mean() == pytest.approx(0.25 * 0.5e-6 + 0.75 * 1.5e-6)
    with pytest.raises(ValueError):
        TabulatedShape(edges=(0.0, 1e-6), density=(0.0,))
    with pytest.raises(ValueError):
        TabulatedShape(edges=(1e-6, 0.0), density=(1.0,))


def test_shape_dict_round_trip():
    for shape in (GaussianShape(1e-6, 0.5e-6, 2e-6), TabulatedShape((0.0, 1e-6, 2e-6), (1.0, 2.0))):
        assert shape_from_dict(shape.to_dict()) == shape
    with pytest.raises(ValueError):
        shape_from_dict({"kind": "lorentzian"})


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_scenario_dict_round_trip(name):
    sc = get_preset(name)
    assert scenario_from_dict(scenario_to_dict(sc)) == sc


def test_scenario_from_dict_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown"):
        scenario_from_dict({"colour": "blue"})
    with pytest.raises(ValueError, match="unknown"):
        scenario_from_dict({"fiber": {"length": 1, "lenght": 2}})


def test_scenario_validation():
    with pytest.raises(ValueError):
        LinkScenario(splitter_ratio=1.5)
    with pytest.raises(ValueError):
        LinkScenario(source=LinkScenario().source.__class__(0.1, GaussianShape(duration=5e-6)))


def test_set_parameter_paths():
    sc = get_preset("direct-866")
    both = set_parameter(sc, "detectors.dark_rate", 3.0)
    assert [d.dark_rate for d in both.detectors] == [3.0, 3.0]
    one = set_parameter(sc, "detectors.1.dark_rate", 3.0)
    assert [d.dark_rate for d in one.detectors] == [0.5, 3.0]
    fib = set_parameter(sc, "fiber.length", 5.0)
    assert fib.fiber == FiberLink(length=5.0)
    assert get_parameter(fib, "fiber.length") == 5.0
    st = set_parameter(sc, "stage.pump_power", 0.1)
    assert st.stage == ConversionStage(pump_power=0.1)
    assert sc.fiber is None and sc.stage is None
    for bad in ("fiber.lenght", "detectors.7.dark_rate", "nope"):
        with pytest.raises(KeyError):
            set_parameter(sc, bad, 1.0)


def test_presets_hit_measured_rates():
    for name, m in MEASURED.items():
        r = rate_breakdown(get_preset(name))
        noise_dark = r.background_total
        assert noise_dark == pytest.approx(m["background"], rel=1e-9)
        if name != "direct-866":
            assert r.signal_total == pytest.approx(m["total"] - m["background"], rel=1e-9)
        else:
            assert r.signal_total == pytest.approx(0.0163 * 99.6e3, rel=1e-4)


def test_unknown_preset():
    with pytest.raises(KeyError):
        get_preset("qfc-9999")


def test_get_parameter_broadcast():
    sc = get_preset("qfc-1530")
    assert get_parameter(sc, "detectors.dark_rate") == (0.5, 0.5)
    assert get_parameter(sc, "detectors.0.jitter_sigma") == 50.0
    with pytest.raises(KeyError):
        get_parameter(sc, "detectors.2.dark_rate")
