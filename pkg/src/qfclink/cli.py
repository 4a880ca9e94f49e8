"""Command-line front end: simulate, analyze, predict, fit, reproduce.

Exit codes: 0 success, 2 configuration error, 3 I/O or malformed input,
4 input that cannot be analysed (e.g. an empty stream), 70 internal error.
See FORMATS.md for file layouts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from . import __version__
from .core import fit_efficiency_curve, internal_conversion_efficiency
from .correlation import (DEFAULT_BIN_WIDTH_PS, ChannelError, DEFAULT_DELAY_RANGE_PS, SHAPE_BIN_WIDTH_PS,
                          analyze_g2, pulse_shape)
from .linkbudget import format_table, predict, project, sweep, write_csv
from .presets import PRESETS, get_preset
from .reproduce import FIGURES, reproduce
from .scenario import LinkScenario, scenario_from_dict, scenario_to_dict
from .simulator import RNG_ALGORITHM, simulate
from .timetag import StreamFormatError, load_stream, save_stream

log = logging.getLogger("qfclink")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_INTERNAL = 70

SCENARIO_HELP = """\
scenario file (YAML or JSON) fields, all optional, SI units unless noted:
  name: str
  sequence: {cooling, state_prep, pre_delay, drive_window, post_delay: s; repetition_rate: Hz}
  source: {detection_probability_per_cycle: 0..1,
           shape: {kind: gaussian, center: s, fwhm: s, duration: s}
                | {kind: table, edges: [s, ...], density: [...]}}
  stage: {input_coupling, output_coupling, filter_transmittance: 0..1; pump_power: W;
          noise_rate: counts/s (gated); efficiency_params: {amplitude_A, rate_B: 1/W}}
  fiber: {length: km, attenuation: dB/km, excess_loss_db: dB}
  splitter_ratio: 0..1
  detectors: [{quantum_efficiency, dark_rate: counts/s (gated), jitter_sigma: ps, dead_time: ps}, x2]
  gate_guard: s (total, split evenly around the drive window)
  coupling_transmission: 0..1
  stage_noise_attenuated: bool
  background_override: counts/s or null
presets: """ + ", ".join(sorted(PRESETS))


class ConfigError(Exception):
    pass


class _Loader(yaml.SafeLoader):
    pass


# PyYAML follows YAML 1.1, which reads "5e-7" (no dot) as a string
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?(?:[0-9][0-9_]*)(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"),
)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_scenario(preset: Optional[str], config: Optional[str]) -> LinkScenario:
    if preset and config:
        raise ConfigError("give either --preset or --config, not both")
    if config:
        path = Path(config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read scenario file {path}: {exc.strerror}") from exc
        try:
            data = json.loads(text) if path.suffix.lower() == ".json" else yaml.load(text, Loader=_Loader)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc
        try:
            return scenario_from_dict(data or {})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not preset:
        raise ConfigError("a scenario is required: --preset NAME or --config FILE")
    try:
        return get_preset(preset)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from exc


def _dump_scenario(sc: LinkScenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def _open_out(path: Optional[str]):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline=""), True


# -- subcommands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.from_manifest:
        try:
            man = json.loads(Path(args.from_manifest).read_text())
        except OSError as exc:
            raise OSError(f"cannot read manifest: {exc.strerror}") from exc
        except ValueError as exc:
            raise ConfigError(f"manifest is not JSON: {exc}") from exc
        try:
            sc = scenario_from_dict(man["scenario"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"manifest scenario invalid: {exc}") from exc
        seed, duration = man["seed"], man["duration_s"]
    else:
        sc = load_scenario(args.preset, args.config)
        seed, duration = args.seed, args.duration
    if args.dump_scenario:
        sys.stdout.write(_dump_scenario(sc))
        return EXIT_OK
    if duration is None or not duration > 0:
        raise ConfigError("--duration must be a positive number of seconds")
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("--seed must be a 64-bit unsigned integer")
    if not args.out:
        raise ConfigError("--out is required")

    stream = simulate(sc, duration, seed, workers=args.workers)
    out = Path(args.out)
    save_stream(out, stream)
    manifest = {
        "toolkit_version": __version__,
        "command": "simulate",
        "scenario_name": sc.name,
        "scenario": scenario_to_dict(sc),
        "seed": seed,
        "duration_s": duration,
        "rng": RNG_ALGORITHM,
        "outputs": {out.name: _sha256(out)},
        "n_tags": len(stream),
    }
    man_path = Path(args.manifest) if args.manifest else out.with_name(out.name + ".manifest.json")
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    counts = stream.counts_per_channel()
    print(f"{sc.name}: {len(stream)} tags in {duration:g} s (ch0 {counts[0]}, ch1 {counts[1]}) -> {out}")
    print(f"manifest -> {man_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        stream = load_stream(args.stream)
    except FileNotFoundError as exc:
        raise OSError(f"no such stream file: {args.stream}") from exc
    if len(stream) == 0:
        print(f"error: {args.stream} holds no tags", file=sys.stderr)
        return EXIT_DATA
    fh, close = _open_out(args.out)
    try:
        if args.mode == "g2":
            bw = int(round(args.bin_width_ns * 1e3)) if args.bin_width_ns else DEFAULT_BIN_WIDTH_PS
            rng = int(round(args.range_us * 1e6)) if args.range_us else DEFAULT_DELAY_RANGE_PS
            window = int(round(args.window_ns * 1e3)) if args.window_ns else None
            try:
                hist, peaks, g = analyze_g2(stream, args.channels[0], args.channels[1], bw, rng, window)
            except ChannelError as exc:
                raise ConfigError(exc.args[0]) from exc
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_DATA
            g.to_csv(fh, stream.header.cycle_period_ps)
            if args.hist_out:
                with open(args.hist_out, "w", newline="") as hf:
                    hist.to_csv(hf)
            side = g.side_peaks()
            zero = (f"g2(0) = {g.g2_zero:.4f} +- {g.sigma_zero:.4f}" if g.n_coinc[g.n == 0][0] > 0
                    else f"g2(0) = 0 (upper limit {g.upper_limit[g.n == 0][0]:.2g}, {g.cl:.1%} CL)")
            print(f"{zero}  [Nc0={int(g.n_coinc[g.n == 0][0])}, N1={g.N1}, N2={g.N2}, "
                  f"N_trig={g.N_trig}; mean g2(n!=0) = {side.mean():.4f} over {len(side)} peaks]",
                  file=sys.stderr if fh is sys.stdout else sys.stdout)
        else:
            bw = int(round(args.bin_width_ns * 1e3)) if args.bin_width_ns else SHAPE_BIN_WIDTH_PS
            window = None
            bg = args.background_rate
            if args.preset or args.config:
                sc = load_scenario(args.preset, args.config)
                window = sc.gate_ps
                if bg is None:
                    bg = predict(sc).background_rate
            if args.window_ns:
                window = tuple(int(round(x * 1e3)) for x in args.window_ns)
            try:
                shp = pulse_shape(stream, bin_width=bw, background_rate=bg or 0.0, window=window,
                                  trigger_channel=args.trigger_channel)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            shp.to_csv(fh)
            msg = (f"shape FLAGGED: {shp.reason}" if shp.flagged
                   else f"shape: {len(shp.counts)} bins of {bw / 1e3:g} ns, net {shp.net_counts:.0f} tags")
            print(msg, file=sys.stderr if fh is sys.stdout else sys.stdout)
            if shp.flagged:
                return EXIT_DATA
    finally:
        if close:
            fh.close()
    return EXIT_OK


def _parse_values(text: str) -> List[float]:
    if ":" in text:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n)).tolist()
    return [float(v) for v in text.split(",") if v]


def cmd_predict(args) -> int:
    if args.project:
        proj = project(length_km=args.project)
        reports = proj.reports
        a = proj.chosen_assumptions
        lo, hi = proj.bracket()
        footer = (f"projection at {args.project:g} km: g2(0) spans [{lo:.3f}, {hi:.3f}] over "
                  f"{len(reports)} assumption sets; chosen [{a.label()}] -> {proj.chosen_report.g2_zero:.3f} "
                  f"(target {proj.target})")
    else:
        sc = load_scenario(args.preset, args.config)
        if args.sweep:
            if not args.values:
                raise ConfigError("--sweep needs --values (v1,v2,... or lo:hi:n)")
            try:
                reports = sweep(sc, args.sweep, _parse_values(args.values))
            except KeyError as exc:
                raise ConfigError(str(exc.args[0])) from exc
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"sweep value rejected: {exc}") from exc
        else:
            reports = [predict(sc)]
        footer = None
    print(format_table(reports))
    if footer:
        print(footer)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(reports, fh)
    return EXIT_OK


def _read_points(path: str):
    pts = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if pts:
                    raise ConfigError(f"{path}: bad row {row!r}")
                # header line
    return pts


def cmd_fit(args) -> int:
    try:
        pts = _read_points(args.points)
    except FileNotFoundError as exc:
        raise OSError(f"no such file: {args.points}") from exc
    try:
        res = fit_efficiency_curve(pts)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    A, B = res.params.amplitude_A, res.params.rate_B
    print(f"A = {A:.10g}")
    print(f"B = {B:.10g} /W")
    print(f"residual norm = {res.residual_norm:.6g} over {res.n_points} points")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write("pump_power_W,eta,eta_fit,residual\n")
            for p, e in pts:
                f = internal_conversion_efficiency(p, res.params)
                fh.write(f"{p!r},{e!r},{f!r},{e - f!r}\n")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = Path(args.out) if args.out else Path("repro") / args.figure
    rep = reproduce(args.figure, out, seed=args.seed, full=args.full, workers=args.workers)
    print(rep.summary())
    print(f"{'PASS' if rep.passed else 'FAIL'} {args.figure} ({len(rep.files)} files in {out})")
    return EXIT_OK if rep.passed else 1


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qfclink", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"qfclink {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_flags(sp):
        sp.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
        sp.add_argument("--config", help="scenario file (.yaml/.yml/.json)")

    s = sub.add_parser("simulate", help="simulate a tag stream", epilog=SCENARIO_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    scenario_flags(s)
    s.add_argument("--duration", type=float, help="acquisition time, s")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", help="stream file; .csv/.txt selects the text form, otherwise binary")
    s.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    s.add_argument("--from-manifest", help="re-run the scenario, seed and duration of a manifest")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--dump-scenario", action="store_true", help="print the resolved scenario as YAML and exit")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="g2(n) or photon shape from a stream",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="g2 CSV columns: n,delay_ps,n_coinc,g2,sigma,upper_limit\n"
                              "histogram CSV columns: bin,delay_ps,counts\n"
                              "shape CSV columns: bin,t_start_ps,t_stop_ps,counts,background,density")
    a.add_argument("stream")
    a.add_argument("--mode", choices=("g2", "shape"), default="g2")
    a.add_argument("--out", help="CSV output (default stdout)")
    a.add_argument("--hist-out", help="g2 mode: also write the coincidence histogram")
    a.add_argument("--channels", type=int, nargs=2, default=(0, 1))
    a.add_argument("--bin-width-ns", type=float, help="default 200 (g2) or 80 (shape)")
    a.add_argument("--range-us", type=float, help="delay range, default 1000")
    a.add_argument("--window-ns", type=float, nargs="*",
                   help="g2: peak window width; shape: START STOP within the cycle")
    a.add_argument("--background-rate", type=float, help="shape: gated background, counts/s")
    a.add_argument("--trigger-channel", type=int, help="shape: fold on a trigger channel")
    scenario_flags(a)
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("predict", help="analytic link budget", epilog=SCENARIO_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    scenario_flags(r)
    r.add_argument("--sweep", help="dotted parameter path, e.g. fiber.length, detectors.dark_rate")
    r.add_argument("--values", help="comma list or lo:hi:n")
    r.add_argument("--project", type=float, metavar="KM", help="improved-link projection at KM")
    r.add_argument("--out", help="CSV output")
    r.set_defaults(func=cmd_predict)

    f = sub.add_parser("fit", help="fit A sin^2(sqrt(B P)) to (P, eta) CSV points")
    f.add_argument("points")
    f.add_argument("--out", help="CSV of points, fitted values and residuals")
    f.set_defaults(func=cmd_fit)

    x = sub.add_parser("reproduce", help="regenerate a figure's data and compare")
    x.add_argument("figure", choices=FIGURES)
    x.add_argument("--out", help="output directory (default repro/<figure>)")
    x.add_argument("--seed", type=int, default=1)
    x.add_argument("--full", action="store_true", help="measured-length acquisitions for fig4b/fig4c")
    x.add_argument("--workers", type=int, default=1)
    x.set_defaults(func=cmd_reproduce)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "window_ns", None) is not None and args.command == "analyze":
        n = len(args.window_ns)
        if (args.mode == "g2" and n != 1) or (args.mode == "shape" and n != 2):
            print("error: --window-ns takes one value in g2 mode and two in shape mode", file=sys.stderr)
            return EXIT_CONFIG
        if args.mode == "g2":
            args.window_ns = args.window_ns[0]
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, StreamFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
