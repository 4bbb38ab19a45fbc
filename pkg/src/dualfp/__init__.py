"""Simulator for dual-channel Fabry-Perot interferometry of energy-time entangled pairs."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Channel,
    DetectionOutcome,
    InterferometerConfig,
    JointAmplitude,
    MirrorCoefficients,
    channel_amplitude,
    channel_distribution,
    on_resonance,
    resonance_linewidth,
    transmission_coincidence_rate,
)
from .phase import phase_from_geometry  # noqa: E402

__all__ = [
    "Channel",
    "DetectionOutcome",
    "InterferometerConfig",
    "JointAmplitude",
    "MirrorCoefficients",
    "channel_amplitude",
    "channel_distribution",
    "on_resonance",
    "phase_from_geometry",
    "resonance_linewidth",
    "transmission_coincidence_rate",
]
