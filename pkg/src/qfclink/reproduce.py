"""Regenerate the data behind each figure and check it against the measured values."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core import (ConversionStage, EfficiencyCurveParams, chain_efficiency, fit_efficiency_curve,
                   internal_conversion_efficiency)
from .correlation import analyze_g2, pulse_shape, shape_distance
from .linkbudget import predict
from .presets import MEASURED, get_preset
from .simulator import simulate

FIGURES = ("fig3", "fig4a", "fig4b", "fig4c", "fig5")

MEASURED_FIT = EfficiencyCurveParams(0.56, 9.3)
FIT_POWERS = np.linspace(0.02, 0.5, 20)
FIT_NOISE = 0.02
# |A - 0.56| <= 0.03 and |B - 9.3| <= 0.5: the worst of 1000 seeds at 2 % noise
# on FIT_POWERS was 0.009 and 0.24
FIT_BAND_A = 0.03
FIT_BAND_B = 0.5

FIG4_DURATION_SCALE = 0.1
FIG5_DURATIONS = {"direct-866": 90.0, "qfc-1530": 2000.0, "qfc-1530-10km": 2000.0}
FIG5_MIN_SIGNAL_TAGS = 20_000
FIG5_TV_LIMIT = 0.05


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class Reproduction:
    figure: str
    checks: List[Check] = field(default_factory=list)
    files: List[Path] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        return "\n".join(c.line() for c in self.checks)


def _write(out: Optional[Path], name: str, writer, rep: Reproduction) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="") as fh:
        writer(fh)
    rep.files.append(path)


# -- fig3 ------------------------------------------------------------------------------

def fig3(out: Optional[Path] = None, seed: int = 1) -> Reproduction:
    rep = Reproduction("fig3")
    eta = internal_conversion_efficiency(FIT_POWERS, MEASURED_FIT)
    clean = fit_efficiency_curve(zip(FIT_POWERS, eta))
    rng = np.random.default_rng(seed)
    noisy_eta = eta * (1.0 + FIT_NOISE * rng.standard_normal(len(eta)))
    noisy = fit_efficiency_curve(zip(FIT_POWERS, noisy_eta))

    ra = abs(clean.params.amplitude_A / MEASURED_FIT.amplitude_A - 1)
    rb = abs(clean.params.rate_B / MEASURED_FIT.rate_B - 1)
    rep.checks.append(Check("fit-noiseless", max(ra, rb) < 1e-6,
                            f"A={clean.params.amplitude_A:.9f} B={clean.params.rate_B:.9f}/W rel.err max={max(ra, rb):.2e}"))
    da = abs(noisy.params.amplitude_A - MEASURED_FIT.amplitude_A)
    db = abs(noisy.params.rate_B - MEASURED_FIT.rate_B)
    rep.checks.append(Check("fit-2pct-noise", da <= FIT_BAND_A and db <= FIT_BAND_B,
                            f"A={noisy.params.amplitude_A:.4f} (|dA|={da:.4f}<= {FIT_BAND_A}) "
                            f"B={noisy.params.rate_B:.3f}/W (|dB|={db:.3f}<= {FIT_BAND_B})"))
    e170 = internal_conversion_efficiency(0.17, MEASURED_FIT)
    rep.checks.append(Check("eta(170 mW)", 0.48 <= e170 <= 0.53, f"{e170:.4f} in [0.48, 0.53]"))
    total = chain_efficiency(ConversionStage())
    rep.checks.append(Check("chain-efficiency", 0.030 <= total <= 0.037, f"{total:.4f} in [0.030, 0.037]"))
    rep.values.update(clean=clean.params, noisy=noisy.params, eta_170mW=e170, chain=total)

    def points(fh):
        fh.write("pump_power_W,eta_noiseless,eta_noisy\n")
        for p, a, b in zip(FIT_POWERS.tolist(), eta.tolist(), noisy_eta.tolist()):
            fh.write(f"{p!r},{a!r},{b!r}\n")

    def curve(fh):
        fh.write("pump_power_W,eta_model,eta_fit_noisy\n")
        for p in np.linspace(0.0, 0.6, 121).tolist():
            fh.write(f"{p!r},{internal_conversion_efficiency(p, MEASURED_FIT)!r},"
                     f"{internal_conversion_efficiency(p, noisy.params)!r}\n")

    _write(out, "fig3_points.csv", points, rep)
    _write(out, "fig3_curve.csv", curve, rep)
    return rep


# -- fig4 ------------------------------------------------------------------------------

@dataclass
class G2Run:
    seed: int
    counts: int
    g2_zero: float
    n_coinc_zero: int
    norm: float          # N_trig / (N1 N2)
    side_mean: float


def g2_runs(preset: str, duration: float, seeds, workers: int = 1, keep_last=False):
    sc = get_preset(preset)
    runs, last = [], None
    for s in seeds:
        stream = simulate(sc, duration, s, workers=workers)
        _, _, g = analyze_g2(stream)
        runs.append(G2Run(s, len(stream), g.g2_zero, int(g.n_coinc[g.n == 0][0]),
                          g.N_trig / (g.N1 * g.N2), float(g.side_peaks().mean())))
        last = g
    return (runs, last) if keep_last else runs


def pooled(runs: List[G2Run]):
    """Mean g2(0) over runs and its Poisson error from the summed zero-peak counts."""
    mean = float(np.mean([r.g2_zero for r in runs]))
    nc = sum(r.n_coinc_zero for r in runs)
    if nc == 0:
        return mean, math.nan, nc
    return mean, mean / math.sqrt(nc), nc


def fig4a(out: Optional[Path] = None, seed: int = 1, n_seeds: int = 10, workers: int = 1) -> Reproduction:
    rep = Reproduction("fig4a")
    duration = 180.0
    runs, last = g2_runs("direct-866", duration, range(seed, seed + n_seeds), workers, keep_last=True)
    g, sig_meas, nc = pooled(runs)
    expected = 0.0012
    rep.checks.append(Check("g2(0) <= 0.01", g <= 0.01, f"mean g2(0)={g:.5f} over {n_seeds} seeds"))
    # pooled over seeds: expected zero-peak counts sum to expected * sum(1 / norm)
    sig = expected / math.sqrt(expected * sum(1.0 / r.norm for r in runs))
    rep.checks.append(Check("g2(0) ~ 0.0012", abs(g - expected) <= 3 * sig,
                            f"|{g:.5f} - {expected}| = {abs(g - expected):.5f} <= 3 sigma = {3 * sig:.5f} "
                            f"(sum Nc0={nc}, own-count sigma {sig_meas:.5f})"))
    target = 1623 * duration
    mean_counts = float(np.mean([r.counts for r in runs]))
    tol = 3 * math.sqrt(target)
    rep.checks.append(Check("total counts", abs(mean_counts - target) <= tol,
                            f"mean {mean_counts:.0f} vs 1623*180={target:.0f} +- {tol:.0f}"))
    rep.values.update(g2=g, sigma=sig, sigma_measured=sig_meas, runs=runs, mean_counts=mean_counts)
    _write(out, "fig4a_g2.csv", lambda fh: last.to_csv(fh, get_preset("direct-866").sequence.cycle_period_ps), rep)
    _write(out, "fig4a_runs.csv", lambda fh: _runs_csv(fh, runs), rep)
    return rep


def _runs_csv(fh, runs):
    fh.write("seed,counts,n_coinc_zero,g2_zero,side_mean\n")
    for r in runs:
        fh.write(f"{r.seed},{r.counts},{r.n_coinc_zero},{r.g2_zero!r},{r.side_mean!r}\n")


def null_sigma(g2_expected: float, norm: float) -> float:
    """Poisson sigma of g2(0) if the expectation holds: g / sqrt(expected Nc0).

    At the few-count level of these runs, g / sqrt(measured Nc0) shrinks with
    downward fluctuations and a 3 sigma test built on it rejects a correct
    model several times more often than nominal.
    """
    return g2_expected / math.sqrt(g2_expected / norm)


def _fig4_converted(name: str, preset: str, out, seed, full, workers) -> Reproduction:
    rep = Reproduction(name)
    m = MEASURED[preset]
    hours = m["hours"] * (1.0 if full else FIG4_DURATION_SCALE)
    predicted = predict(get_preset(preset)).g2_zero
    (run,), g = g2_runs(preset, hours * 3600, [seed], workers, keep_last=True)
    sig = null_sigma(predicted, run.norm)
    lo, hi = run.g2_zero - 3 * sig, run.g2_zero + 3 * sig
    rep.checks.append(Check(f"g2(0) vs predicted {predicted:.3f}", abs(run.g2_zero - predicted) <= 3 * sig,
                            f"measured {run.g2_zero:.3f} (+- {g.sigma_zero:.3f} from its own counts), "
                            f"|diff| <= 3 sigma = {3 * sig:.3f} ({hours:.2f} h, Nc0={run.n_coinc_zero})"))
    plo, phi = m["g2"] - m["g2_err"], m["g2"] + m["g2_err"]
    rep.checks.append(Check("overlaps measured band", lo <= phi and plo <= hi,
                            f"[{lo:.3f}, {hi:.3f}] vs [{plo:.2f}, {phi:.2f}]"))
    rep.values.update(g2=run.g2_zero, sigma=sig, sigma_measured=g.sigma_zero, predicted=predicted,
                      hours=hours, run=run)
    _write(out, f"{name}_g2.csv", lambda fh: g.to_csv(fh, get_preset(preset).sequence.cycle_period_ps), rep)
    return rep


def fig4b(out=None, seed: int = 1, full: bool = False, workers: int = 1) -> Reproduction:
    return _fig4_converted("fig4b", "qfc-1530", out, seed, full, workers)


def fig4c(out=None, seed: int = 1, full: bool = False, workers: int = 1) -> Reproduction:
    return _fig4_converted("fig4c", "qfc-1530-10km", out, seed, full, workers)


# -- fig5 ------------------------------------------------------------------------------

def preset_shape(preset: str, duration: float, seed: int, workers: int = 1):
    sc = get_preset(preset)
    stream = simulate(sc, duration, seed, workers=workers)
    bg = predict(sc).background_rate
    return pulse_shape(stream, background_rate=bg, window=sc.gate_ps)


def fig5(out: Optional[Path] = None, seed: int = 1, workers: int = 1) -> Reproduction:
    rep = Reproduction("fig5")
    shapes = {p: preset_shape(p, d, seed, workers) for p, d in FIG5_DURATIONS.items()}
    ref, far = shapes["direct-866"], shapes["qfc-1530-10km"]
    tv = shape_distance(ref, far)
    tv_conv = shape_distance(ref, shapes["qfc-1530"])
    net = far.net_counts
    rep.checks.append(Check("signal tags (10 km)", net >= FIG5_MIN_SIGNAL_TAGS,
                            f"{net:.0f} net folded tags >= {FIG5_MIN_SIGNAL_TAGS}"))
    rep.checks.append(Check("shape preserved 866 vs 10 km", tv < FIG5_TV_LIMIT, f"TV = {tv:.4f} < {FIG5_TV_LIMIT}"))

    sc = get_preset("qfc-1530")
    noise_only = replace(sc, name="noise-only", source=replace(sc.source, detection_probability_per_cycle=0.0))
    noise = pulse_shape(simulate(noise_only, 1000.0, seed), background_rate=predict(noise_only).background_rate,
                        window=sc.gate_ps)
    rep.checks.append(Check("pure noise flagged", noise.flagged and noise.density is None,
                            noise.reason or "not flagged"))
    rep.values.update(tv_10km=tv, tv_converted=tv_conv, shapes=shapes, noise=noise)

    def table(fh):
        names = list(shapes)
        fh.write("t_start_ps,t_stop_ps," + ",".join(f"density_{n}" for n in names) + "\n")
        e = ref.edges
        for i in range(len(e) - 1):
            fh.write(f"{int(e[i])},{int(e[i + 1])}," + ",".join(repr(float(shapes[n].density[i])) for n in names) + "\n")

    _write(out, "fig5_shapes.csv", table, rep)
    return rep


def reproduce(figure: str, out: Optional[Path] = None, seed: int = 1, full: bool = False,
              workers: int = 1) -> Reproduction:
    if figure == "fig3":
        return fig3(out, seed)
    if figure == "fig4a":
        return fig4a(out, seed, workers=workers)
    if figure == "fig4b":
        return fig4b(out, seed, full, workers)
    if figure == "fig4c":
        return fig4c(out, seed, full, workers)
    if figure == "fig5":
        return fig5(out, seed, workers)
    raise KeyError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
