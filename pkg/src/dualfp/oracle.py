"""Brute-force path enumeration, kept independent of the closed forms.

Each photon leaves its cavity either through the far mirror (transmit) or
back through the entrance mirror (reflect) after ``l`` round trips:

    transmit, l        T * R^(2l) * T
    reflect,  l = 0    -R                      (prompt external reflection)
    reflect,  l >= 1   T * R^(2l-1) * T

A joint outcome collects every pair of paths ``(l_L, l_R)`` with the right
ports and ``l_R - l_L = m``.  Because the pair's emission time is
undetermined, pairs that differ only by a common shift of both ``l``
leave identical final states and add coherently.  Relative to the pair
with the fewest common round trips, the pair carries ``exp(i theta l)``
with ``l = min(l_L, l_R)``.  Nothing here reads :mod:`dualfp.core` except
the plain data types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

import numpy as np

from .core import Channel, DetectionOutcome, MirrorCoefficients, channel_amplitude


class Port(str, Enum):
    TRANSMIT = "transmit"
    REFLECT = "reflect"


_CHANNEL_PORTS = {
    Channel.TT: (Port.TRANSMIT, Port.TRANSMIT),
    Channel.RR: (Port.REFLECT, Port.REFLECT),
    Channel.RT: (Port.REFLECT, Port.TRANSMIT),
    Channel.TR: (Port.TRANSMIT, Port.REFLECT),
}


@dataclass(frozen=True)
class PathAmplitude:
    port: Port
    round_trips: int
    amplitude: complex
    phase_per_trip: float = 0.0


def _path_moduli(mirrors: MirrorCoefficients, port: Port, l_max: int) -> np.ndarray:
    t, r = mirrors.t_field, mirrors.r_field
    l = np.arange(l_max + 1, dtype=float)
    if port is Port.TRANSMIT:
        return t * t * r ** (2.0 * l)
    with np.errstate(divide="ignore"):
        amps = t * t * r ** (2.0 * l - 1.0)
    amps[0] = -r
    return amps


def enumerate_single_photon_paths(
    mirrors: MirrorCoefficients, l_max: int, phase_per_trip: float = 0.0
) -> list[PathAmplitude]:
    """All exit paths with at most ``l_max`` round trips (``2*l_max + 2`` of them)."""
    if l_max < 0:
        raise ValueError(f"l_max must be non-negative, got {l_max}")
    paths = []
    for port in (Port.TRANSMIT, Port.REFLECT):
        for l, a in enumerate(_path_moduli(mirrors, port, l_max).tolist()):
            amp = complex(a) * complex(math.cos(phase_per_trip * l), math.sin(phase_per_trip * l))
            paths.append(PathAmplitude(port, l, amp, phase_per_trip))
    return paths


def single_photon_tail(mirrors: MirrorCoefficients, l_max: int) -> float:
    """Probability carried by paths with more than ``l_max`` round trips.

    ``T^4 R^(4 l_max + 2) (1 + R^2) / (1 - R^4)``; zero for T in {0, 1}.
    """
    t, r = mirrors.t_field, mirrors.r_field
    if t == 0.0 or r == 0.0:
        return 0.0
    return t**4 * r ** (4.0 * l_max + 2.0) * (1.0 + r * r) / mirrors.one_minus_r4


def biphoton_amplitude_bruteforce(
    mirrors: MirrorCoefficients,
    theta: float,
    outcome: DetectionOutcome,
    l_max: int,
) -> complex:
    """Coherent sum over path pairs compatible with ``outcome`` (each ``l <= l_max``)."""
    port_l, port_r = _CHANNEL_PORTS[outcome.channel]
    a_left = _path_moduli(mirrors, port_l, l_max)
    a_right = _path_moduli(mirrors, port_r, l_max)
    m = outcome.offset_m
    l_left = np.arange(max(0, -m), l_max + 1 - max(0, m))
    if l_left.size == 0:
        return 0j
    l_right = l_left + m
    common = np.minimum(l_left, l_right)
    terms = a_left[l_left] * a_right[l_right] * np.exp(1j * theta * common)
    # smallest terms first to keep the long geometric tail from rounding away
    return complex(np.sum(terms[::-1]))


def pair_tail_bound(mirrors: MirrorCoefficients, outcome: DetectionOutcome, l_max: int) -> float:
    """Upper bound on ``|exact - truncated|`` for one outcome.

    The first missing pair has ``min(l_L, l_R) = l_max - |m| + 1``; later ones
    shrink by ``R^4`` each, so the omitted absolute sum is at most the first
    omitted modulus divided by ``1 - R^4``.
    """
    t, r = mirrors.t_field, mirrors.r_field
    if t == 0.0 or r == 0.0:
        return 0.0
    m = outcome.offset_m
    port_l, port_r = _CHANNEL_PORTS[outcome.channel]
    first = l_max - abs(m) + 1
    first = max(first, 0)
    l_left, l_right = (first, first + m) if m >= 0 else (first - m, first)

    def modulus(port: Port, l: int) -> float:
        if port is Port.TRANSMIT:
            return t * t * r ** (2.0 * l)
        return r if l == 0 else t * t * r ** (2.0 * l - 1.0)

    lead = modulus(port_l, l_left) * modulus(port_r, l_right)
    return lead / mirrors.one_minus_r4


def oracle_l_max(mirrors: MirrorCoefficients, m_max: int, tolerance: float, cap: int = 200_000) -> int:
    """Smallest ``l_max`` whose pair tail bound is below ``tolerance`` for all ``|m| <= m_max``."""
    if mirrors.t_field in (0.0, 1.0):
        return max(m_max, 0)
    r4 = mirrors.r2 * mirrors.r2
    # every bound is at most R^(4(l_max - m_max + 1) - 2) / (1 - R^4)
    need = (math.log(tolerance * mirrors.one_minus_r4) + 2.0 * math.log(mirrors.r_field)) / math.log(r4)
    l_max = max(m_max, math.ceil(need) + m_max)
    probes = [DetectionOutcome(ch, m) for ch in Channel for m in (-m_max, 0, m_max)]
    while max(pair_tail_bound(mirrors, o, l_max) for o in probes) >= tolerance:
        l_max += 1
        if l_max > cap:
            raise ValueError(f"no l_max below {cap} reaches tolerance {tolerance:g}")
    return l_max


@dataclass(frozen=True)
class SeparableBaseline:
    """Unentangled pair: incoherent products of single-photon path probabilities.

    ``per_offset_rates[m]`` is the TT rate with click offset ``m``;
    ``coincidence_rate`` is the probability that both photons are
    transmitted at all (summed over offsets), i.e. the product of the two
    single-photon transmission probabilities.
    """

    coincidence_rate: float
    per_offset_rates: dict[int, float] = field(default_factory=dict)

    def rate_at(self, theta: float) -> float:
        # theta deliberately unused
        return self.per_offset_rates.get(0, 0.0)


def separable_coincidence_baseline(mirrors: MirrorCoefficients, l_max: int) -> SeparableBaseline:
    p = _path_moduli(mirrors, Port.TRANSMIT, l_max) ** 2
    joint = np.outer(p, p)  # [l_left, l_right]
    per_offset = {}
    for m in range(-l_max, l_max + 1):
        # l_right - l_left = m  <->  diagonal offset m of joint[l_left, l_right]
        per_offset[m] = math.fsum(np.diagonal(joint, offset=m).tolist())
    single = math.fsum(p.tolist())
    return SeparableBaseline(single * single, per_offset)


def entanglement_contrast(mirrors: MirrorCoefficients, theta: float, l_max: int) -> float:
    """Entangled TT m=0 probability over the separable TT m=0 rate."""
    ent = abs(biphoton_amplitude_bruteforce(mirrors, theta, DetectionOutcome(Channel.TT, 0), l_max)) ** 2
    base = separable_coincidence_baseline(mirrors, l_max).per_offset_rates[0]
    return ent / base


@dataclass
class OracleReport:
    t_field: float
    theta: float
    l_max: int
    tolerance: float
    deviations: dict[DetectionOutcome, float]
    tail_bounds: dict[DetectionOutcome, float]

    @property
    def failures(self) -> list[DetectionOutcome]:
        return sorted(o for o, d in self.deviations.items() if not d <= self.tolerance)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "t_field": self.t_field,
            "theta": self.theta,
            "l_max": self.l_max,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "outcomes": [
                {
                    "channel": o.channel.value,
                    "m": o.offset_m,
                    "deviation": self.deviations[o],
                    "tail_bound": self.tail_bounds[o],
                }
                for o in sorted(self.deviations)
            ],
        }


class VerificationFailure(AssertionError):
    def __init__(self, report: OracleReport):
        self.report = report
        lines = [
            f"  {o}: deviation {report.deviations[o]:.3e} > tol {report.tolerance:.1e} "
            f"(tail bound {report.tail_bounds[o]:.3e})"
            for o in report.failures
        ]
        super().__init__(
            f"oracle disagrees with closed form at T={report.t_field:g}, "
            f"theta={report.theta:g}, l_max={report.l_max}:\n" + "\n".join(lines)
        )


def compare_with_closed_form(
    mirrors: MirrorCoefficients,
    theta: float,
    outcomes: Iterable[DetectionOutcome],
    l_max: int,
    tolerance: float,
    raise_on_failure: bool = True,
) -> OracleReport:
    """Max ``|oracle - closed form|`` per outcome; raises VerificationFailure on any excess."""
    devs, bounds = {}, {}
    for o in outcomes:
        brute = biphoton_amplitude_bruteforce(mirrors, theta, o, l_max)
        closed = channel_amplitude(mirrors, theta, o).value
        devs[o] = abs(brute - closed)
        bounds[o] = pair_tail_bound(mirrors, o, l_max)
    report = OracleReport(mirrors.t_field, theta, l_max, tolerance, devs, bounds)
    if raise_on_failure and not report.passed:
        raise VerificationFailure(report)
    return report
