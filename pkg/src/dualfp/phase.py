"""Round-trip phase bookkeeping with double-double modular reduction.

Optical round-trip phases are huge (a centimetre cavity at optical
frequency accumulates ~1e6 rad per pass, and lab-frame bookkeeping can
reach 1e9 rad or more).  Reducing such a number modulo 2*pi in plain
float64 throws away everything below ~1e-7 rad, which is far coarser than
the width of a high-finesse resonance.  Here the products omega*d are
formed exactly with Dekker's error-free transformations, carried as an
unevaluated sum of two doubles, and reduced against a three-piece split
of 2*pi.
"""

from __future__ import annotations

import math

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact by definition

# 2*pi = _TWO_PI_HI + _TWO_PI_MID + _TWO_PI_LO to ~1e-49 absolute.
_TWO_PI_HI = 6.283185307179586
_TWO_PI_MID = 2.4492935982947064e-16
_TWO_PI_LO = -5.989539619436679e-33

TWO_PI = _TWO_PI_HI

#: Largest unreduced phase (rad) accepted.  The quotient by 2*pi must stay an
#: exact integer in float64 and the double-double input must keep ~1e-12 rad
#: absolute accuracy; 2**50 leaves margin on both counts.
MAX_SAFE_PHASE = float(2**50)

_SPLITTER = 134217729.0  # 2**27 + 1


class PrecisionLossError(ArithmeticError):
    """Raised when a phase is too large to reduce to the promised accuracy."""


def _two_sum(a: float, b: float) -> tuple[float, float]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _fast_two_sum(a: float, b: float) -> tuple[float, float]:
    # requires |a| >= |b|
    s = a + b
    return s, b - (s - a)


def _split(a: float) -> tuple[float, float]:
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a: float, b: float) -> tuple[float, float]:
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    err = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, err


def _dd_add(a: tuple[float, float], b: tuple[float, float]) -> tuple[float, float]:
    s, e = _two_sum(a[0], b[0])
    t, f = _two_sum(a[1], b[1])
    e += t
    s, e = _fast_two_sum(s, e)
    e += f
    return _fast_two_sum(s, e)


def _dd_neg(a: tuple[float, float]) -> tuple[float, float]:
    return -a[0], -a[1]


def _dd_div_scalar(a: tuple[float, float], b: float) -> tuple[float, float]:
    q1 = a[0] / b
    p, e = _two_prod(q1, b)
    rem = _dd_add(a, (-p, -e))
    q2 = (rem[0] + rem[1]) / b
    return _fast_two_sum(q1, q2)


def reduce_mod_2pi(hi: float, lo: float = 0.0) -> float:
    """Reduce the double-double ``hi + lo`` into ``[0, 2*pi)``.

    Raises PrecisionLossError beyond ``MAX_SAFE_PHASE`` and ValueError for
    non-finite input.
    """
    if not (math.isfinite(hi) and math.isfinite(lo)):
        raise ValueError(f"phase must be finite, got {hi!r} + {lo!r}")
    if abs(hi) > MAX_SAFE_PHASE:
        raise PrecisionLossError(
            f"unreduced phase {hi:.6g} rad exceeds the safe reduction range "
            f"{MAX_SAFE_PHASE:.6g} rad"
        )
    x = (hi, lo)
    n = float(round(hi / _TWO_PI_HI))
    if n:
        x = _dd_add(x, _dd_neg(_two_prod(n, _TWO_PI_HI)))
        x = _dd_add(x, _dd_neg(_two_prod(n, _TWO_PI_MID)))
        x = _dd_add(x, (-n * _TWO_PI_LO, 0.0))
    if x[0] < 0.0:
        x = _dd_add(x, (_TWO_PI_HI, _TWO_PI_MID))
    elif x[0] >= _TWO_PI_HI:
        x = _dd_add(x, (-_TWO_PI_HI, -_TWO_PI_MID))
    r = x[0] + x[1]
    if r >= TWO_PI or r < 0.0:
        # only reachable when the exact value sits within an ulp of 0 or 2*pi
        r = 0.0
    return r


def phase_from_geometry(
    omega_left: float, omega_right: float, d_left: float, d_right: float
) -> float:
    """Joint round-trip phase ``2*(w_L*d_L + w_R*d_R)/c`` reduced to [0, 2*pi).

    The inputs are taken as exact binary64 values; the result is accurate to
    well below 1e-9 rad throughout the safe range.
    """
    for name, v in (
        ("omega_left", omega_left),
        ("omega_right", omega_right),
        ("d_left", d_left),
        ("d_right", d_right),
    ):
        if not math.isfinite(v) or v <= 0.0:
            raise ValueError(f"{name} must be positive and finite, got {v!r}")
    total = _dd_add(_two_prod(omega_left, d_left), _two_prod(omega_right, d_right))
    total = (2.0 * total[0], 2.0 * total[1])
    theta = _dd_div_scalar(total, SPEED_OF_LIGHT)
    return reduce_mod_2pi(*theta)


def wrapped_distance_to_zero(theta: float) -> float:
    """Distance from ``theta`` to the nearest multiple of 2*pi."""
    r = math.fmod(theta, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    return min(r, TWO_PI - r)
