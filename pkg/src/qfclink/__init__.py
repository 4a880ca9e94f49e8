"""Simulation and analysis of a frequency-converted single-photon link."""

__version__ = "0.1.0"

from .core import (ConversionStage, EfficiencyCurveParams, FiberLink, SbrStats, chain_efficiency,
                   corrected_g2, fiber_transmission, fit_efficiency_curve, internal_conversion_efficiency,
                   predicted_g2_zero)
from .correlation import (analyze_g2, coincidence_histogram, g2_estimate, integrate_peaks, pulse_shape,
                          shape_distance)
from .linkbudget import predict, project, sweep
from .presets import get_preset
from .scenario import DetectorModel, GaussianShape, LinkScenario, PulseSequence, SourceModel, TabulatedShape
from .simulator import expected_rates, simulate
from .timetag import TagStream, load_stream, merge_streams, read_stream, save_stream, write_stream
