"""Link scenario description: pulse sequence, photon shape, source, detectors.

All times in this module are in seconds unless a field name says otherwise
(detector jitter and dead time are in picoseconds). Noise and dark rates are
*gated* rates: counts per second of acquisition that fall inside the gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any, Optional, Tuple

import numpy as np
from scipy.special import ndtr, ndtri

from .core import ConversionStage, EfficiencyCurveParams, FiberLink, chain_efficiency, fiber_transmission

PS = 1e-12
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def to_ps(seconds: float) -> int:
    return int(round(seconds / PS))


@dataclass(frozen=True)
class PulseSequence:
    """One cycle of the emission sequence: cool, prepare, delay, drive, delay."""

    cooling: float = 5.5e-6
    state_prep: float = 1.0e-6
    pre_delay: float = 0.2e-6
    drive_window: float = 2.3e-6
    post_delay: float = 0.2e-6
    repetition_rate: float = 99.6e3

    def __post_init__(self):
        phases = (self.cooling, self.state_prep, self.pre_delay, self.drive_window, self.post_delay)
        if any(p < 0 for p in phases):
            raise ValueError("pulse sequence phases must be non-negative")
        if not self.repetition_rate > 0:
            raise ValueError("repetition_rate must be positive")
        if sum(phases) > 1.0 / self.repetition_rate * (1 + 1e-12):
            raise ValueError(
                f"phases sum to {sum(phases) * 1e6:.4f} us, longer than the "
                f"{1e6 / self.repetition_rate:.4f} us cycle"
            )

    @property
    def cycle_period_ps(self) -> int:
        return to_ps(1.0 / self.repetition_rate)

    @property
    def cycle_period(self) -> float:
        """Cycle period in seconds, as quantized to whole picoseconds."""
        return self.cycle_period_ps * PS

    @property
    def drive_start(self) -> float:
        return self.cooling + self.state_prep + self.pre_delay

    @property
    def drive_end(self) -> float:
        return self.drive_start + self.drive_window


class PhotonShape:
    """Normalized arrival-time density on ``[0, duration]`` of the drive window."""

    duration: float

    def cdf(self, t):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def bin_masses(self, edges) -> np.ndarray:
        """Probability in each interval between consecutive ``edges`` (seconds)."""
        c = self.cdf(np.asarray(edges, dtype=float))
        return np.diff(c)

    def mean(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianShape(PhotonShape):
    """Gaussian truncated to the drive window; ``center`` is relative to window start."""

    center: float = 1.15e-6
    fwhm: float = 1.0e-6
    duration: float = 2.3e-6

    def __post_init__(self):
        if not self.fwhm > 0 or not self.duration > 0:
            raise ValueError("fwhm and duration must be positive")

    @property
    def sigma(self) -> float:
        return self.fwhm / FWHM_PER_SIGMA

    def _limits(self):
        return ndtr(-self.center / self.sigma), ndtr((self.duration - self.center) / self.sigma)

    def cdf(self, t):
        lo, hi = self._limits()
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return (ndtr((t - self.center) / self.sigma) - lo) / (hi - lo)

    def sample(self, rng, size):
        lo, hi = self._limits()
        u = lo + rng.random(size) * (hi - lo)
        return np.clip(self.center + self.sigma * ndtri(u), 0.0, self.duration)

    def mean(self) -> float:
        a = -self.center / self.sigma
        b = (self.duration - self.center) / self.sigma
        phi = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
        Z = ndtr(b) - ndtr(a)
        return self.center + self.sigma * (phi(a) - phi(b)) / Z

    def to_dict(self):
        return {"kind": "gaussian", "center": self.center, "fwhm": self.fwhm, "duration": self.duration}


@dataclass(frozen=True, eq=False)
class TabulatedShape(PhotonShape):
    """Piecewise-constant density over bins given by ``edges`` (seconds from window start)."""

    edges: Tuple[float, ...]
    density: Tuple[float, ...]

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if e.ndim != 1 or len(e) != len(d) + 1 or len(d) == 0:
            raise ValueError("need len(edges) == len(density) + 1 >= 2")
        if e[0] < 0 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must start at >= 0 and be strictly increasing")
        if np.any(d < 0) or not np.any(d > 0):
            raise ValueError("density must be non-negative and not all zero")
        mass = d * np.diff(e)
        object.__setattr__(self, "edges", tuple(e.tolist()))
        object.__setattr__(self, "density", tuple((d / mass.sum()).tolist()))
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(mass / mass.sum())]))

    def __eq__(self, other):
        return isinstance(other, TabulatedShape) and self.edges == other.edges and self.density == other.density

    __hash__ = None

    @property
    def duration(self) -> float:
        return self.edges[-1]

    @property
    def masses(self) -> np.ndarray:
        return np.diff(self._cum)

    def cdf(self, t):
        return np.interp(np.asarray(t, dtype=float), self.edges, self._cum)

    def sample(self, rng, size):
        u = rng.random(size)
        return np.interp(u, self._cum, self.edges)

    def mean(self) -> float:
        e = np.asarray(self.edges)
        return float(np.sum(self.masses * 0.5 * (e[1:] + e[:-1])))

    def to_dict(self):
        return {"kind": "table", "edges": list(self.edges), "density": list(self.density)}


def shape_from_dict(d: dict) -> PhotonShape:
    d = dict(d)
    kind = d.pop("kind", "gaussian")
    if kind == "gaussian":
        return GaussianShape(**d)
    if kind == "table":
        return TabulatedShape(edges=tuple(d["edges"]), density=tuple(d["density"]))
    raise ValueError(f"unknown photon shape kind {kind!r}")


@dataclass(frozen=True)
class SourceModel:
    """Per-cycle probability of a photon click, referenced to the direct-emission detectors."""

    detection_probability_per_cycle: float = 0.0163
    shape: PhotonShape = field(default_factory=GaussianShape)

    def __post_init__(self):
        if not 0.0 <= self.detection_probability_per_cycle <= 1.0:
            raise ValueError("detection_probability_per_cycle must lie in [0, 1]")


@dataclass(frozen=True)
class DetectorModel:
    quantum_efficiency: float = 1.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.quantum_efficiency <= 1.0:
            raise ValueError("quantum_efficiency must lie in [0, 1]")
        if min(self.dark_rate, self.jitter_sigma, self.dead_time) < 0:
            raise ValueError("dark_rate, jitter_sigma and dead_time must be >= 0")


@dataclass(frozen=True)
class LinkScenario:
    """Source -> (coupling) -> optional conversion stage -> optional fibre -> 50/50 HBT.

    coupling_transmission lumps every loss between the source reference point
    and the analyser that the modelled stages do not cover (for the converter
    this is dominated by the polarisation projection onto the pump axis).
    stage_noise_attenuated selects whether stage noise is attenuated by the
    fibre together with the signal. background_override, when set, replaces
    the propagated total background at the detectors by a measured value.
    """

    name: str = "custom"
    sequence: PulseSequence = field(default_factory=PulseSequence)
    source: SourceModel = field(default_factory=SourceModel)
    stage: Optional[ConversionStage] = None
    fiber: Optional[FiberLink] = None
    splitter_ratio: float = 0.5
    detectors: Tuple[DetectorModel, DetectorModel] = (DetectorModel(), DetectorModel())
    gate_guard: float = 0.5e-6
    coupling_transmission: float = 1.0
    stage_noise_attenuated: bool = True
    background_override: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.splitter_ratio <= 1.0:
            raise ValueError("splitter_ratio must lie in [0, 1]")
        if not 0.0 <= self.coupling_transmission <= 1.0:
            raise ValueError("coupling_transmission must lie in [0, 1]")
        if len(self.detectors) != 2:
            raise ValueError("an HBT scenario needs exactly two detectors")
        object.__setattr__(self, "detectors", tuple(self.detectors))
        if self.gate_guard < 0:
            raise ValueError("gate_guard must be >= 0")
        if self.background_override is not None and self.background_override < 0:
            raise ValueError("background_override must be >= 0")
        if self.source.shape.duration > self.sequence.drive_window * (1 + 1e-9):
            raise ValueError("photon shape extends beyond the drive window")
        g0, g1 = self.gate
        if g0 < 0 or g1 > self.sequence.cycle_period:
            raise ValueError("gate window does not fit inside one cycle")

    @property
    def gate(self) -> Tuple[float, float]:
        """Per-cycle window (s from cycle start) in which events are recorded."""
        half = 0.5 * self.gate_guard
        return self.sequence.drive_start - half, self.sequence.drive_end + half

    @property
    def gate_ps(self) -> Tuple[int, int]:
        g0, g1 = self.gate
        return to_ps(g0), to_ps(g1)

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


@dataclass(frozen=True)
class RateBreakdown:
    """Expected detector rates; per-channel tuples are (ch0, ch1), in counts/s."""

    transmissions: dict
    signal_probability: Tuple[float, float]
    signal: Tuple[float, float]
    stage_noise: Tuple[float, float]
    dark: Tuple[float, float]

    @property
    def background(self) -> Tuple[float, float]:
        return tuple(n + d for n, d in zip(self.stage_noise, self.dark))

    @property
    def signal_total(self) -> float:
        return sum(self.signal)

    @property
    def background_total(self) -> float:
        return sum(self.background)

    @property
    def total(self) -> float:
        return self.signal_total + self.background_total


def rate_breakdown(sc: LinkScenario) -> RateBreakdown:
    """Expected signal and background rates per detector for ``sc``.

    This is the single source of the rate formulas; the simulator draws from
    exactly these rates and the link-budget report quotes them.
    """
    period = sc.sequence.cycle_period
    t_stage = chain_efficiency(sc.stage) if sc.stage is not None else 1.0
    t_fiber = fiber_transmission(sc.fiber) if sc.fiber is not None else 1.0
    p_link = sc.source.detection_probability_per_cycle * sc.coupling_transmission * t_stage * t_fiber
    noise = sc.stage.noise_rate if sc.stage is not None else 0.0
    if sc.stage_noise_attenuated:
        noise *= t_fiber

    arms = (sc.splitter_ratio, 1.0 - sc.splitter_ratio)
    qe = tuple(d.quantum_efficiency for d in sc.detectors)
    p_ch = tuple(p_link * a * q for a, q in zip(arms, qe))
    signal = tuple(p / period for p in p_ch)
    stage_noise = tuple(noise * a * q for a, q in zip(arms, qe))
    dark = tuple(d.dark_rate for d in sc.detectors)

    if sc.background_override is not None:
        computed = [n + d for n, d in zip(stage_noise, dark)]
        tot = sum(computed)
        if tot > 0:
            scale = sc.background_override / tot
            stage_noise = tuple(n * scale for n in stage_noise)
            dark = tuple(d * scale for d in dark)
        else:
            stage_noise = (0.5 * sc.background_override,) * 2
            dark = (0.0, 0.0)

    transmissions = {
        "coupling": sc.coupling_transmission,
        "stage": t_stage,
        "fiber": t_fiber,
        "splitter": arms,
        "detectors": qe,
    }
    return RateBreakdown(transmissions, p_ch, signal, stage_noise, dark)


# -- (de)serialization ------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, PhotonShape):
        return obj.to_dict()
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(x) for x in obj]
    return obj


def scenario_to_dict(sc: LinkScenario) -> dict:
    return _plain(sc)


def _build(cls, data: Optional[dict], what: str):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ValueError(f"{what}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{what}: unknown field(s) {sorted(unknown)}; expected {sorted(known)}")
    return cls(**data)


def scenario_from_dict(data: dict) -> LinkScenario:
    data = dict(data)
    known = {f.name for f in fields(LinkScenario)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"scenario: unknown field(s) {sorted(unknown)}")
    kw: dict[str, Any] = {}
    for key in ("name", "splitter_ratio", "gate_guard", "coupling_transmission",
                "stage_noise_attenuated", "background_override"):
        if key in data:
            kw[key] = data[key]
    if "sequence" in data:
        kw["sequence"] = _build(PulseSequence, data["sequence"], "sequence")
    if "source" in data:
        src = dict(data["source"])
        if "shape" in src:
            src["shape"] = shape_from_dict(src["shape"])
        kw["source"] = _build(SourceModel, src, "source")
    if data.get("stage") is not None:
        st = dict(data["stage"])
        if "efficiency_params" in st:
            st["efficiency_params"] = _build(EfficiencyCurveParams, st["efficiency_params"], "stage.efficiency_params")
        kw["stage"] = _build(ConversionStage, st, "stage")
    if data.get("fiber") is not None:
        kw["fiber"] = _build(FiberLink, data["fiber"], "fiber")
    if "detectors" in data:
        dets = data["detectors"]
        if isinstance(dets, dict):
            dets = [dets, dets]
        kw["detectors"] = tuple(_build(DetectorModel, d, "detectors[]") for d in dets)
    return LinkScenario(**kw)


def set_parameter(sc: LinkScenario, path: str, value) -> LinkScenario:
    """Return a copy of ``sc`` with the dotted ``path`` replaced by ``value``.

    ``detectors.dark_rate`` sets both detectors; ``detectors.1.dark_rate`` one.
    A missing optional block (``stage``/``fiber``) is created with defaults.
    """
    parts = path.split(".")

    def _set(obj, keys):
        key, rest = keys[0], keys[1:]
        if isinstance(obj, tuple):
            if key.isdigit():
                idx = int(key)
                if idx >= len(obj):
                    raise KeyError(path)
                items = list(obj)
                items[idx] = _set(items[idx], rest) if rest else value
                return tuple(items)
            return tuple(_set(item, keys) for item in obj)
        if not is_dataclass(obj) or key not in {f.name for f in fields(obj)}:
            raise KeyError(f"unknown parameter path {path!r}")
        if not rest:
            return replace(obj, **{key: value})
        child = getattr(obj, key)
        if child is None:
            child = {"stage": ConversionStage, "fiber": FiberLink}.get(key, lambda: None)()
            if child is None:
                raise KeyError(f"unknown parameter path {path!r}")
        return replace(obj, **{key: _set(child, rest)})

    return _set(sc, parts)


def get_parameter(sc: LinkScenario, path: str):
    """Value at the dotted ``path``; a broadcast path such as ``detectors.dark_rate`` yields a tuple."""

    def _get(obj, keys):
        if not keys:
            return obj
        key, rest = keys[0], keys[1:]
        if isinstance(obj, tuple):
            if key.isdigit():
                if int(key) >= len(obj):
                    raise KeyError(f"unknown parameter path {path!r}")
                return _get(obj[int(key)], rest)
            return tuple(_get(item, keys) for item in obj)
        if is_dataclass(obj) and key in {f.name for f in fields(obj)}:
            return _get(getattr(obj, key), rest)
        raise KeyError(f"unknown parameter path {path!r}")

    return _get(sc, path.split("."))
