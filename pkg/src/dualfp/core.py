"""Closed-form joint-detection amplitudes for the dual-channel Fabry-Perot.

Two photons of an energy-time entangled pair each cross their own
planar Fabry-Perot cavity (both cavities built from identical mirrors with
field coefficients T and R).  A joint detection is labelled by the detector
pair that fired and by the integer click offset ``m`` in units of one
cavity round trip: positive ``m`` means the left-arm click comes first.

Conventions used throughout:

* every formula takes the dimensionless joint round-trip phase
  ``theta = 2 k_L d_L + 2 k_R d_R``; raw geometry enters only via
  :func:`dualfp.phase.phase_from_geometry`;
* mirror transmission contributes ``+T``, an internal reflection ``+R`` and
  the prompt external reflection ``-R``;
* stored amplitudes drop the plane-wave carrier and the ``exp(-i w_L dt)``
  factor of the offset channels.  Both are pure phases on mutually
  orthogonal click patterns, so no rate depends on them;
* amplitudes are normalised so the no-cavity coincidence amplitude is 1.

With ``z = exp(i theta)`` and ``D = 1 - R^4 z``::

    TT, any m      T^4 R^(2|m|) / D
    RR, m = 0      R^2 (1 - (R^2 - T^2) z) / D
    RR, m != 0     T^2 R^(2|m|) (-1 + R^2 z) / D
    RT, m >= 0     T^2 R^(2m+1) (-1 + R^2 z) / D
    RT, m < 0      T^4 R^(2|m|-1) / D
    TR, m          RT at -m (arms swapped)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .phase import SPEED_OF_LIGHT, TWO_PI, phase_from_geometry, wrapped_distance_to_zero

_UNITARITY_TOL = 1e-12

#: Hard cap on the click offset kept by :func:`channel_distribution`.
MAX_OFFSET_CAP = 10**6


class Channel(str, Enum):
    """Detector pair of a joint detection, written as (left port, right port)."""

    TT = "TT"  # L1 & R1, both transmitted
    RR = "RR"  # L2 & R2, both reflected
    RT = "RT"  # L2 & R1
    TR = "TR"  # L1 & R2

    @property
    def detectors(self) -> tuple[str, str]:
        return _DETECTORS[self]

    @property
    def pair_label(self) -> str:
        return "".join(self.detectors)

    @classmethod
    def from_pair_label(cls, label: str) -> "Channel":
        for ch, dets in _DETECTORS.items():
            if "".join(dets) == label:
                return ch
        raise ValueError(f"unknown detector pair {label!r}")


_DETECTORS = {
    Channel.TT: ("L1", "R1"),
    Channel.RR: ("L2", "R2"),
    Channel.RT: ("L2", "R1"),
    Channel.TR: ("L1", "R2"),
}


@dataclass(frozen=True, order=True)
class DetectionOutcome:
    """A post-selection channel: detector pair plus click offset in round trips."""

    channel: Channel
    offset_m: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        if int(self.offset_m) != self.offset_m:
            raise ValueError(f"offset_m must be an integer, got {self.offset_m!r}")
        object.__setattr__(self, "offset_m", int(self.offset_m))

    def __str__(self) -> str:
        return f"{self.channel.value}[m={self.offset_m:+d}]"


@dataclass(frozen=True)
class MirrorCoefficients:
    """Field transmission/reflection of the (identical, lossless) mirrors."""

    t_field: float
    r_field: float

    def __post_init__(self):
        t, r = float(self.t_field), float(self.r_field)
        if not (0.0 <= t <= 1.0 and 0.0 <= r <= 1.0):
            raise ValueError(f"mirror coefficients must lie in [0, 1], got T={t!r}, R={r!r}")
        if abs(t * t + r * r - 1.0) > _UNITARITY_TOL:
            raise ValueError(f"T^2 + R^2 must equal 1, got {t * t + r * r!r}")
        object.__setattr__(self, "t_field", t)
        object.__setattr__(self, "r_field", r)

    @classmethod
    def from_transmission(cls, t_field: float) -> "MirrorCoefficients":
        if not 0.0 <= t_field <= 1.0:
            raise ValueError(f"T must lie in [0, 1], got {t_field!r}")
        return cls(t_field, math.sqrt((1.0 - t_field) * (1.0 + t_field)))

    @classmethod
    def from_reflection(cls, r_field: float) -> "MirrorCoefficients":
        if not 0.0 <= r_field <= 1.0:
            raise ValueError(f"R must lie in [0, 1], got {r_field!r}")
        return cls(math.sqrt((1.0 - r_field) * (1.0 + r_field)), r_field)

    @property
    def t2(self) -> float:
        return self.t_field * self.t_field

    @property
    def r2(self) -> float:
        return self.r_field * self.r_field

    @property
    def one_minus_r4(self) -> float:
        """``1 - R^4`` without cancellation for R close to 1."""
        return self.t2 * (1.0 + self.r2)

    @property
    def finesse(self) -> float:
        """Single-cavity finesse ``pi R / (1 - R^2)`` (inf for a perfect mirror)."""
        if self.t_field == 0.0:
            return math.inf
        return math.pi * self.r_field / self.t2


@dataclass(frozen=True)
class InterferometerConfig:
    """Geometry of the two arms.  Lengths in metres, frequencies in rad/s.

    ``pulse_length`` is c times the single-photon coherence time.  The round-trip
    phase ``theta`` is derived on construction.
    """

    d_left: float
    d_right: float
    omega_left: float
    omega_right: float
    pulse_length: float
    mirrors: MirrorCoefficients
    theta: float = field(init=False)

    #: "small compared to the pulse length" is taken as below this fraction.
    mismatch_fraction = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.pulse_length) and self.pulse_length > 0):
            raise ValueError(f"pulse_length must be positive, got {self.pulse_length!r}")
        theta = phase_from_geometry(self.omega_left, self.omega_right, self.d_left, self.d_right)
        object.__setattr__(self, "theta", theta)

    @property
    def self_interference_free(self) -> bool:
        # coherence length must stay below the round trip of both cavities
        return self.pulse_length < 2.0 * min(self.d_left, self.d_right)

    @property
    def length_mismatch_ok(self) -> bool:
        mismatch = abs(self.d_left - self.d_right)
        if mismatch == 0.0:
            return True
        return self.mirrors.finesse * mismatch < self.mismatch_fraction * self.pulse_length

    @property
    def geometry_valid(self) -> bool:
        return self.self_interference_free and self.length_mismatch_ok


@dataclass(frozen=True)
class JointAmplitude:
    """Complex joint-detection amplitude of one outcome.

    ``limit`` marks values obtained as the analytic limit of a 0/0 formula
    (perfectly reflecting mirrors).
    """

    value: complex
    outcome: DetectionOutcome
    limit: bool = False

    @property
    def rate(self) -> float:
        return abs(self.value) ** 2


class UnresolvedResonanceError(ValueError):
    """The coincidence resonance never drops to half maximum."""


class TruncationError(RuntimeError):
    """Requested tail tolerance needs more offsets than the hard cap allows."""


def _check_theta(theta: float) -> None:
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta!r}")


def _denominator(mirrors: MirrorCoefficients, theta: float) -> complex:
    # 1 - R^4 z = (1 - R^4) + R^4 (1 - z), with 1 - z = -2i sin(theta/2) e^{i theta/2}
    r4 = mirrors.r2 * mirrors.r2
    half = 0.5 * theta
    one_minus_z = -2j * math.sin(half) * complex(math.cos(half), math.sin(half))
    return mirrors.one_minus_r4 + r4 * one_minus_z


def _denominator_abs2(mirrors: MirrorCoefficients, theta: float) -> float:
    r4 = mirrors.r2 * mirrors.r2
    s = math.sin(0.5 * theta)
    return mirrors.one_minus_r4**2 + 4.0 * r4 * s * s


def transmission_coincidence_rate(mirrors: MirrorCoefficients, theta: float) -> float:
    """Normalised transmission coincidence rate ``T^8 / (1 + R^8 - 2 R^4 cos theta)``."""
    _check_theta(theta)
    if mirrors.t_field == 0.0:
        return 0.0
    t4 = mirrors.t2 * mirrors.t2
    return t4 * t4 / _denominator_abs2(mirrors, theta)


def _raw_amplitudes(
    mirrors: MirrorCoefficients, theta: float, channel: Channel, m: np.ndarray
) -> np.ndarray:
    """Vectorised closed forms; assumes T > 0."""
    t2, r2, r = mirrors.t2, mirrors.r2, mirrors.r_field
    z = complex(math.cos(theta), math.sin(theta))
    inv_d = 1.0 / _denominator(mirrors, theta)
    mixed = (-1.0 + r2 * z) * inv_d
    m = np.asarray(m, dtype=np.int64)
    a = np.abs(m).astype(float)
    if channel is Channel.TR:
        channel, m = Channel.RT, -m
    if channel is Channel.TT:
        return (t2 * t2 * inv_d) * r ** (2.0 * a)
    if channel is Channel.RR:
        out = (t2 * mixed) * r ** (2.0 * a)
        out = np.asarray(out, dtype=complex)
        out[m == 0] = r2 * (1.0 - (r2 - t2) * z) * inv_d
        return out
    # RT
    out = np.empty(m.shape, dtype=complex)
    pos = m >= 0
    out[pos] = (t2 * mixed) * r ** (2.0 * m[pos] + 1.0)
    neg = ~pos
    out[neg] = (t2 * t2 * inv_d) * r ** (2.0 * np.abs(m[neg]) - 1.0)
    return out


def channel_amplitude(
    mirrors: MirrorCoefficients, theta: float, outcome: DetectionOutcome
) -> JointAmplitude:
    """Joint amplitude of one detection outcome (global phases stripped)."""
    _check_theta(theta)
    if mirrors.t_field == 0.0:
        # R = 1: both photons bounce off the entrance mirrors and nothing else happens
        hit = outcome.channel is Channel.RR and outcome.offset_m == 0
        return JointAmplitude(1.0 + 0j if hit else 0j, outcome, limit=True)
    value = _raw_amplitudes(mirrors, theta, outcome.channel, np.array([outcome.offset_m]))[0]
    return JointAmplitude(complex(value), outcome)


def tail_probability(mirrors: MirrorCoefficients, theta: float, m_max: int) -> float:
    """Exact total probability of all outcomes with ``|m| > m_max``.

    Every channel decays geometrically with ratio R^4 per unit offset, so
    the discarded mass sums in closed form to
    ``2 T^4 (1+R^2) (T^4 + R^2 |R^2 z - 1|^2) R^(4 m_max + 2) / ((1-R^4) |D|^2)``.
    """
    if mirrors.t_field == 0.0 or mirrors.r_field == 0.0:
        return 0.0
    return _tail_prefactor(mirrors, theta) * mirrors.r_field ** (4.0 * m_max + 2.0)


def _tail_prefactor(mirrors: MirrorCoefficients, theta: float) -> float:
    t2, r2 = mirrors.t2, mirrors.r2
    t4 = t2 * t2
    c2 = abs(-1.0 + r2 * complex(math.cos(theta), math.sin(theta))) ** 2
    return (
        2.0 * t4 * (1.0 + r2) * (t4 + r2 * c2)
        / (mirrors.one_minus_r4 * _denominator_abs2(mirrors, theta))
    )


@dataclass(frozen=True)
class ChannelDistribution:
    """Probabilities of every outcome with ``|m| <= m_max``.

    ``tail_bound`` is the probability carried by the discarded offsets.
    """

    probabilities: dict[DetectionOutcome, float]
    tail_bound: float
    m_max: int

    def total(self) -> float:
        return math.fsum(self.probabilities.values())

    def channel_total(self, channel: Channel) -> float:
        return math.fsum(p for o, p in self.probabilities.items() if o.channel is channel)

    def outcomes(self) -> list[DetectionOutcome]:
        return sorted(self.probabilities)


def offset_cutoff(
    mirrors: MirrorCoefficients,
    theta: float,
    tail_tolerance: float,
    cap: int = MAX_OFFSET_CAP,
) -> int:
    """Smallest ``m_max`` whose discarded tail is below ``tail_tolerance``."""
    if not tail_tolerance > 0:
        raise ValueError(f"tail_tolerance must be positive, got {tail_tolerance!r}")
    if mirrors.t_field == 0.0 or mirrors.r_field == 0.0:
        return 0
    k = _tail_prefactor(mirrors, theta)
    log_r = math.log(mirrors.r_field)
    if log_r == 0.0:
        raise TruncationError("R rounds to 1; the offset distribution does not decay")
    need = (math.log(tail_tolerance / k) / log_r - 2.0) / 4.0
    m_max = max(0, math.ceil(need))
    if m_max > cap:
        raise TruncationError(
            f"tail tolerance {tail_tolerance:g} needs |m| up to {m_max}, above the cap {cap}"
        )
    while m_max > 0 and tail_probability(mirrors, theta, m_max - 1) < tail_tolerance:
        m_max -= 1
    while tail_probability(mirrors, theta, m_max) >= tail_tolerance:
        m_max += 1
        if m_max > cap:
            raise TruncationError(f"tail tolerance {tail_tolerance:g} not reachable below cap {cap}")
    return m_max


def channel_distribution(
    mirrors: MirrorCoefficients,
    theta: float,
    tail_tolerance: float = 1e-12,
    cap: int = MAX_OFFSET_CAP,
) -> ChannelDistribution:
    """Probability of every (channel, offset) with the geometric tail cut adaptively."""
    _check_theta(theta)
    if mirrors.t_field == 0.0:
        return ChannelDistribution({DetectionOutcome(Channel.RR, 0): 1.0}, 0.0, 0)
    if mirrors.r_field == 0.0:
        return ChannelDistribution({DetectionOutcome(Channel.TT, 0): 1.0}, 0.0, 0)
    m_max = offset_cutoff(mirrors, theta, tail_tolerance, cap)
    ms = np.arange(-m_max, m_max + 1)
    probs: dict[DetectionOutcome, float] = {}
    for ch in Channel:
        p = np.abs(_raw_amplitudes(mirrors, theta, ch, ms)) ** 2
        for m, v in zip(ms.tolist(), p.tolist()):
            probs[DetectionOutcome(ch, m)] = v
    return ChannelDistribution(probs, tail_probability(mirrors, theta, m_max), m_max)


def on_resonance(config: InterferometerConfig, tolerance: float) -> bool:
    """True when ``k_L d_L + k_R d_R`` is within ``tolerance`` of a multiple of pi."""
    return 0.5 * wrapped_distance_to_zero(config.theta) < tolerance


def resonance_linewidth(mirrors: MirrorCoefficients) -> float:
    """Full width at half maximum (in theta) of the coincidence resonance."""
    r2 = mirrors.r2
    if not 0.0 < mirrors.r_field < 1.0:
        raise ValueError(f"linewidth needs 0 < R < 1, got R={mirrors.r_field!r}")
    arg = mirrors.one_minus_r4 / (2.0 * r2)
    if arg > 1.0:
        raise UnresolvedResonanceError(
            f"resonance unresolved for T={mirrors.t_field:g}: "
            f"(1-R^4)/(2R^2) = {arg:.4g} > 1, half maximum is never reached"
        )
    return 4.0 * math.asin(arg)


def free_spectral_range(d: float) -> float:
    """Sum-frequency spacing ``pi c / d`` (rad/s) between joint resonances."""
    return math.pi * SPEED_OF_LIGHT / d


def all_outcomes(m_max: int) -> Iterable[DetectionOutcome]:
    for ch in Channel:
        for m in range(-m_max, m_max + 1):
            yield DetectionOutcome(ch, m)


__all__ = [
    "Channel",
    "ChannelDistribution",
    "DetectionOutcome",
    "InterferometerConfig",
    "JointAmplitude",
    "MirrorCoefficients",
    "TWO_PI",
    "TruncationError",
    "UnresolvedResonanceError",
    "all_outcomes",
    "channel_amplitude",
    "channel_distribution",
    "free_spectral_range",
    "offset_cutoff",
    "on_resonance",
    "resonance_linewidth",
    "tail_probability",
    "transmission_coincidence_rate",
]
