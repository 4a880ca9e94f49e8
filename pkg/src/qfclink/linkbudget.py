"""Analytic rate, SBR and g2(0) predictions for link scenarios, plus sweeps."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence

from .core import ConversionStage, FiberLink, SbrStats, predicted_g2_zero
from .presets import get_preset
from .scenario import LinkScenario, get_parameter, rate_breakdown, set_parameter

CSV_COLUMNS = [
    "scenario", "parameter", "value", "t_coupling", "t_stage", "t_fiber",
    "signal_rate", "stage_noise_rate", "dark_rate", "background_rate",
    "sbr", "rho", "g2_zero", "flags",
]


@dataclass
class BudgetReport:
    scenario: str
    transmissions: dict
    signal_rate: float
    stage_noise_rate: float
    dark_rate: float
    sbr: float
    rho: float
    g2_zero: float
    flags: List[str] = field(default_factory=list)
    parameter: Optional[str] = None
    value: object = None

    @property
    def background_rate(self) -> float:
        return self.stage_noise_rate + self.dark_rate

    def row(self) -> dict:
        return {
            "scenario": self.scenario,
            "parameter": self.parameter or "",
            "value": "" if self.value is None else self.value,
            "t_coupling": self.transmissions["coupling"],
            "t_stage": self.transmissions["stage"],
            "t_fiber": self.transmissions["fiber"],
            "signal_rate": self.signal_rate,
            "stage_noise_rate": self.stage_noise_rate,
            "dark_rate": self.dark_rate,
            "background_rate": self.background_rate,
            "sbr": self.sbr,
            "rho": self.rho,
            "g2_zero": self.g2_zero,
            "flags": ";".join(self.flags),
        }


def predict(scenario: LinkScenario) -> BudgetReport:
    """Budget for ``scenario`` from the same rate formulas the simulator samples."""
    r = rate_breakdown(scenario)
    flags = ["stage-noise-attenuated" if scenario.stage_noise_attenuated else "stage-noise-fixed"]
    if scenario.background_override is not None:
        flags.append("background-override")
    signal, noise, dark = r.signal_total, sum(r.stage_noise), sum(r.dark)
    bg = noise + dark
    if bg > 0:
        stats = SbrStats(signal, bg)
        sbr, rho, g2 = stats.sbr, stats.rho, predicted_g2_zero(stats)
    else:
        flags.append("ideal-source-limit")
        sbr, rho, g2 = math.inf, 1.0, 0.0
    return BudgetReport(scenario.name, r.transmissions, signal, noise, dark, sbr, rho, g2, flags)


def sweep(scenario: LinkScenario, parameter: str, values: Iterable) -> List[BudgetReport]:
    """One report per value of the dotted ``parameter`` (see ``set_parameter``)."""
    # a missing stage/fibre is created on demand, so check the path against a full scenario
    get_parameter(replace(scenario, stage=scenario.stage or ConversionStage(),
                          fiber=scenario.fiber or FiberLink()), parameter)
    reports = []
    for v in values:
        rep = predict(set_parameter(scenario, parameter, v))
        rep.parameter, rep.value = parameter, v
        reports.append(rep)
    return reports


def write_csv(reports: Sequence[BudgetReport], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in rep.row().items()})


def format_table(reports: Sequence[BudgetReport]) -> str:
    head = f"{'scenario':<16}{'param':>22}{'value':>10}{'signal':>11}{'noise':>10}{'dark':>8}{'SBR':>9}{'g2(0)':>9}  flags"
    lines = [head, "-" * len(head)]
    for r in reports:
        val = "" if r.value is None else f"{r.value:g}" if isinstance(r.value, (int, float)) else str(r.value)
        lines.append(
            f"{r.scenario:<16}{(r.parameter or ''):>22}{val:>10}{r.signal_rate:>11.4g}"
            f"{r.stage_noise_rate:>10.4g}{r.dark_rate:>8.3g}{r.sbr:>9.4g}{r.g2_zero:>9.4f}  {','.join(r.flags)}"
        )
    return "\n".join(lines)


# -- long-distance projection ----------------------------------------------------------

FILTER_GAIN = 0.90 / 0.20
POLARIZATION_GAIN = 2.0
PROJECTION_TARGET = 0.70


@dataclass(frozen=True)
class ProjectionAssumptions:
    """One reading of the improved-link projection.

    polarization_gain: emit a single polarisation matched to the converter (x2)
    noise_gains_filter: converter noise also benefits from the better filter
    dark_per_detector: the 1 count/s dark floor is per detector (else total)
    calibrated_span: keep the connector loss measured on the 10 km span
    """

    polarization_gain: bool = True
    noise_gains_filter: bool = True
    dark_per_detector: bool = False
    calibrated_span: bool = True

    def label(self) -> str:
        return ",".join([
            "pol-x2" if self.polarization_gain else "pol-x1",
            "noise-x4.5" if self.noise_gains_filter else "noise-x1",
            "dark-1cps-per-detector" if self.dark_per_detector else "dark-1cps-total",
            "span-with-connector-loss" if self.calibrated_span else "span-ideal",
        ])


DEFAULT_PROJECTION = ProjectionAssumptions()


def improved_link(length_km: float = 100.0, assumptions: ProjectionAssumptions = DEFAULT_PROJECTION,
                  dark_rate: float = 1.0) -> LinkScenario:
    """The 10 km converted link with the proposed upgrades, stretched to ``length_km``."""
    base = get_preset("qfc-1530-10km")
    stage = replace(base.stage, filter_transmittance=base.stage.filter_transmittance * FILTER_GAIN)
    if assumptions.noise_gains_filter:
        stage = replace(stage, noise_rate=stage.noise_rate * FILTER_GAIN)
    coupling = base.coupling_transmission
    if assumptions.polarization_gain:
        coupling = min(1.0, coupling * POLARIZATION_GAIN)
    excess = base.fiber.excess_loss_db if assumptions.calibrated_span else 0.0
    per_det = dark_rate if assumptions.dark_per_detector else 0.5 * dark_rate
    dets = tuple(replace(d, dark_rate=per_det) for d in base.detectors)
    return replace(
        base,
        name=f"improved-{length_km:g}km",
        stage=stage,
        coupling_transmission=coupling,
        fiber=FiberLink(length=length_km, attenuation=base.fiber.attenuation, excess_loss_db=excess),
        detectors=dets,
        background_override=None,
        stage_noise_attenuated=True,
    )


@dataclass
class Projection:
    reports: List[BudgetReport]
    assumptions: List[ProjectionAssumptions]
    chosen: int
    target: float = PROJECTION_TARGET

    @property
    def chosen_report(self) -> BudgetReport:
        return self.reports[self.chosen]

    @property
    def chosen_assumptions(self) -> ProjectionAssumptions:
        return self.assumptions[self.chosen]

    def bracket(self):
        g = [r.g2_zero for r in self.reports]
        return min(g), max(g)


def project(length_km: float = 100.0, target: float = PROJECTION_TARGET,
            dark_rate: float = 1.0) -> Projection:
    """Evaluate every assumption combination at ``length_km``.

    The chosen set is ``DEFAULT_PROJECTION`` (the reading with the fewest extra
    assumptions); each report's flags name the set it was computed under and
    the chosen one is additionally flagged ``chosen``.
    """
    combos = [ProjectionAssumptions(*bits) for bits in itertools.product((True, False), repeat=4)]
    reports = []
    for a in combos:
        rep = predict(improved_link(length_km, a, dark_rate))
        rep.flags.append(a.label())
        rep.parameter, rep.value = "fiber.length", length_km
        reports.append(rep)
    chosen = combos.index(DEFAULT_PROJECTION)
    reports[chosen].flags.append("chosen")
    return Projection(reports, combos, chosen, target)
