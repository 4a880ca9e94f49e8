"""Closed-form link physics: conversion efficiency, loss chain, fibre loss, g2 vs SBR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "EfficiencyCurveParams",
    "ConversionStage",
    "FiberLink",
    "SbrStats",
    "ZeroBackgroundError",
    "FitResult",
    "internal_conversion_efficiency",
    "fit_efficiency_curve",
    "chain_efficiency",
    "predicted_g2_zero",
    "corrected_g2",
    "fiber_transmission",
]


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


class ZeroBackgroundError(ValueError):
    """Raised when SBR is requested for a link with no background at all.

    This is the ideal-source limit: callers that want a number should use
    g2(0) = 0 there.
    """


@dataclass(frozen=True)
class EfficiencyCurveParams:
    """Parameters of the pump-power response ``A * sin^2(sqrt(B * P))``.

    ``amplitude_A`` is the peak internal efficiency, ``rate_B`` is in 1/W.
    """

    amplitude_A: float = 0.56
    rate_B: float = 9.3

    def __post_init__(self):
        _check_fraction("amplitude_A", self.amplitude_A)
        if not self.rate_B > 0:
            raise ValueError(f"rate_B must be > 0, got {self.rate_B!r}")

    @property
    def optimal_pump_power(self) -> float:
        """Pump power (W) at the first efficiency maximum."""
        return (math.pi / 2) ** 2 / self.rate_B


@dataclass(frozen=True)
class ConversionStage:
    """Frequency-conversion stage as a product of transmissions plus added noise.

    noise_rate is the gated background (counts/s) the stage adds, referenced
    to the detectors.
    """

    input_coupling: float = 0.80
    efficiency_params: EfficiencyCurveParams = EfficiencyCurveParams()
    pump_power: float = 0.17
    output_coupling: float = 0.60
    filter_transmittance: float = 0.14
    noise_rate: float = 0.0

    def __post_init__(self):
        _check_fraction("input_coupling", self.input_coupling)
        _check_fraction("output_coupling", self.output_coupling)
        _check_fraction("filter_transmittance", self.filter_transmittance)
        if self.pump_power < 0:
            raise ValueError(f"pump_power must be >= 0, got {self.pump_power!r}")
        if self.noise_rate < 0:
            raise ValueError(f"noise_rate must be >= 0, got {self.noise_rate!r}")


@dataclass(frozen=True)
class FiberLink:
    """Fibre span. ``excess_loss_db`` lumps connector and splice losses."""

    length: float = 0.0
    attenuation: float = 0.2
    excess_loss_db: float = 0.0

    def __post_init__(self):
        if self.length < 0:
            raise ValueError(f"length must be >= 0 km, got {self.length!r}")
        if self.attenuation < 0:
            raise ValueError(f"attenuation must be >= 0 dB/km, got {self.attenuation!r}")
        if self.excess_loss_db < 0:
            raise ValueError(f"excess_loss_db must be >= 0, got {self.excess_loss_db!r}")

    @property
    def loss_db(self) -> float:
        return self.length * self.attenuation + self.excess_loss_db


@dataclass(frozen=True)
class SbrStats:
    """Signal and background count rates (counts/s) at the detectors."""

    signal_rate: float
    background_rate: float

    def __post_init__(self):
        if self.signal_rate < 0 or self.background_rate < 0:
            raise ValueError("rates must be non-negative")

    @classmethod
    def from_total(cls, total_rate: float, background_rate: float) -> "SbrStats":
        """Build from a measured total rate, taking signal = total - background."""
        return cls(signal_rate=total_rate - background_rate, background_rate=background_rate)

    @property
    def sbr(self) -> float:
        if self.background_rate == 0:
            raise ZeroBackgroundError("SBR undefined with zero background (ideal-source limit)")
        return self.signal_rate / self.background_rate

    @property
    def rho(self) -> float:
        """Signal fraction SBR / (1 + SBR)."""
        if self.background_rate == 0:
            raise ZeroBackgroundError("rho undefined with zero background (ideal-source limit)")
        # signal/(signal+background) is the same quantity without the SBR overflow at huge ratios
        return self.signal_rate / (self.signal_rate + self.background_rate)


def internal_conversion_efficiency(P: float, params: EfficiencyCurveParams) -> float:
    """Internal conversion efficiency at pump power ``P`` (W)."""
    arr = np.asarray(P, dtype=float)
    if np.any(arr < 0):
        raise ValueError("pump power must be non-negative")
    eta = params.amplitude_A * np.sin(np.sqrt(params.rate_B * arr)) ** 2
    return float(eta) if eta.ndim == 0 else eta


@dataclass(frozen=True)
class FitResult:
    params: EfficiencyCurveParams
    residual_norm: float
    n_points: int


def _model(theta, P):
    return theta[0] * np.sin(np.sqrt(theta[1] * P)) ** 2


def fit_efficiency_curve(
    samples: Iterable[Sequence[float]],
    starts_B: Sequence[float] = (1.0, 5.0, 10.0, 20.0),
) -> FitResult:
    """Least-squares fit of ``A sin^2(sqrt(B P))`` to ``(P, eta)`` samples.

    The objective has local minima in B, so every value in ``starts_B`` seeds
    a separate trust-region run (A is set by the exact linear solve for that B)
    and the lowest residual wins.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.size == 0:
        raise ValueError("need at least 3 samples to fit two parameters, got 0")
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("samples must be (P, eta) pairs")
    if len(data) < 3:
        raise ValueError(f"need at least 3 samples to fit two parameters, got {len(data)}")
    P, eta = data[:, 0], data[:, 1]
    if np.any(P < 0):
        raise ValueError("pump powers must be non-negative")
    if np.ptp(P) == 0:
        raise ValueError("pump powers have zero spread; B is unidentifiable")

    def resid(theta):
        return _model(theta, P) - eta

    best = None
    for B0 in starts_B:
        s = np.sin(np.sqrt(B0 * P)) ** 2
        denom = float(s @ s)
        A0 = float(s @ eta) / denom if denom > 0 else 0.5
        A0 = min(max(A0, 1e-6), 1.0)
        sol = least_squares(
            resid,
            x0=[A0, B0],
            bounds=([0.0, 1e-12], [1.0, np.inf]),
            method="trf",
            x_scale="jac",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=10_000,
        )
        cost = float(np.linalg.norm(sol.fun))
        if best is None or cost < best[1]:
            best = (sol.x, cost)

    (A, B), norm = best
    return FitResult(EfficiencyCurveParams(float(A), float(B)), norm, len(data))


def chain_efficiency(stage: ConversionStage) -> float:
    """End-to-end transmission of the conversion stage."""
    eta = internal_conversion_efficiency(stage.pump_power, stage.efficiency_params)
    return stage.input_coupling * eta * stage.output_coupling * stage.filter_transmittance


def predicted_g2_zero(stats: SbrStats) -> float:
    """g2(0) expected for a perfect single-photon source diluted by Poissonian background."""
    rho = stats.rho
    return 1.0 - rho * rho


def corrected_g2(n_value: int, g2_signal: float, stats: SbrStats) -> float:
    """Measured g2(n) implied by an intrinsic signal value and the SBR.

    ``n_value`` is the peak index; the correction is the same for every peak
    and it is accepted only so call sites read naturally.
    """
    if g2_signal < 0:
        raise ValueError("g2_signal must be non-negative")
    rho = stats.rho
    return 1.0 + rho * rho * (g2_signal - 1.0)


def fiber_transmission(link: FiberLink) -> float:
    return 10.0 ** (-link.loss_db / 10.0)
