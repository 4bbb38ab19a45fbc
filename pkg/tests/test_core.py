import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from dualfp.core import (
    Channel,
    DetectionOutcome,
    InterferometerConfig,
    MirrorCoefficients,
    TruncationError,
    UnresolvedResonanceError,
    all_outcomes,
    channel_amplitude,
    channel_distribution,
    free_spectral_range,
    offset_cutoff,
    on_resonance,
    resonance_linewidth,
    tail_probability,
    transmission_coincidence_rate,
)
from dualfp.phase import SPEED_OF_LIGHT, TWO_PI

T_HALF = MirrorCoefficients.from_transmission(0.5)
T_FIFTH = MirrorCoefficients.from_transmission(0.2)

transmissions = st.floats(0.05, 0.95)
phases = st.floats(0.0, TWO_PI, exclude_max=True)


def airy_rate_exact(t2: Fraction, cos_theta: Fraction) -> Fraction:
    """T^8 / (1 + R^8 - 2 R^4 cos theta) in exact rationals (cos theta in {1, -1})."""
    r4 = (1 - t2) ** 2
    return t2**4 / (1 + r4 * r4 - 2 * r4 * cos_theta)


# --- mirrors ---------------------------------------------------------------------------


def test_mirrors_derive_reflection():
    m = MirrorCoefficients.from_transmission(0.6)
    assert m.r_field == pytest.approx(0.8, abs=1e-15)
    assert MirrorCoefficients.from_reflection(0.8).t_field == pytest.approx(0.6, abs=1e-15)


@pytest.mark.parametrize("t,r", [(0.5, 0.5), (-0.1, math.sqrt(0.99)), (1.1, 0.0)])
def test_mirrors_reject_unphysical(t, r):
    with pytest.raises(ValueError):
        MirrorCoefficients(t, r)


def test_finesse_grows_with_reflectivity():
    assert T_FIFTH.finesse > T_HALF.finesse > 0


# --- transmission coincidence rate -------------------------------------------------------


@pytest.mark.parametrize(
    "t,theta,exact",
    [
        (0.5, 0.0, airy_rate_exact(Fraction(1, 4), Fraction(1))),
        (0.5, math.pi, airy_rate_exact(Fraction(1, 4), Fraction(-1))),
        (0.2, 0.0, airy_rate_exact(Fraction(1, 25), Fraction(1))),
    ],
)
def test_rate_golden_values(t, theta, exact):
    got = transmission_coincidence_rate(MirrorCoefficients.from_transmission(t), theta)
    assert got == pytest.approx(float(exact), rel=1e-12)


def test_rate_golden_values_are_the_simple_fractions():
    assert airy_rate_exact(Fraction(1, 4), Fraction(1)) == Fraction(1, 49)
    assert airy_rate_exact(Fraction(1, 4), Fraction(-1)) == Fraction(16, 10000)
    assert airy_rate_exact(Fraction(1, 25), Fraction(1)) == Fraction(1, 49) ** 2


def test_rate_transparent_mirror_is_one():
    m = MirrorCoefficients.from_transmission(1.0)
    for th in (0.0, 1.0, math.pi):
        assert transmission_coincidence_rate(m, th) == 1.0


@settings(max_examples=200, deadline=None)
@given(t=transmissions, theta=phases)
def test_rate_periodic_even_and_positive(t, theta):
    m = MirrorCoefficients.from_transmission(t)
    r = transmission_coincidence_rate(m, theta)
    assert r > 0
    assert transmission_coincidence_rate(m, theta + TWO_PI) == pytest.approx(r, rel=1e-9)
    assert transmission_coincidence_rate(m, -theta) == pytest.approx(r, rel=1e-12)


@pytest.mark.parametrize("t", [0.2, 0.5, 0.8])
def test_rate_peak_at_zero_valley_at_pi(t):
    m = MirrorCoefficients.from_transmission(t)
    grid = np.linspace(0, TWO_PI, 4001)
    rates = np.array([transmission_coincidence_rate(m, th) for th in grid])
    assert grid[np.argmax(rates)] in (0.0, TWO_PI)
    assert grid[np.argmin(rates)] == pytest.approx(math.pi)


# --- channel amplitudes --------------------------------------------------------------------


def test_amplitude_examples():
    tt0 = channel_amplitude(T_HALF, 0.0, DetectionOutcome(Channel.TT, 0))
    assert tt0.rate == pytest.approx(1 / 49, rel=1e-13)
    rr0 = channel_amplitude(T_HALF, 0.0, DetectionOutcome(Channel.RR, 0))
    assert rr0.rate == pytest.approx(36 / 49, rel=1e-13)
    assert rr0.value.real == pytest.approx(6 / 7, rel=1e-13)
    for m in (-1, 1):
        a = channel_amplitude(T_HALF, 0.0, DetectionOutcome(Channel.TT, m))
        assert a.rate == pytest.approx(0.5625 / 49, rel=1e-13)
        assert a.rate / tt0.rate == pytest.approx(T_HALF.r2**2, rel=1e-14)


def test_perfect_mirror_returns_limit():
    m = MirrorCoefficients.from_transmission(0.0)
    a = channel_amplitude(m, math.pi, DetectionOutcome(Channel.RR, 0))
    assert a.rate == 1.0 and a.limit
    for o in [DetectionOutcome(Channel.TT, 0), DetectionOutcome(Channel.RR, 1), DetectionOutcome(Channel.RT, -2)]:
        b = channel_amplitude(m, 0.0, o)
        assert b.value == 0 and b.limit


@settings(max_examples=200, deadline=None)
@given(t=transmissions, theta=phases)
def test_tt_zero_matches_airy_rate(t, theta):
    m = MirrorCoefficients.from_transmission(t)
    a = channel_amplitude(m, theta, DetectionOutcome(Channel.TT, 0))
    assert a.rate == pytest.approx(transmission_coincidence_rate(m, theta), rel=1e-12)


@settings(max_examples=150, deadline=None)
@given(t=transmissions, theta=phases, m=st.integers(1, 30))
def test_geometric_ratio_law(t, theta, m):
    mir = MirrorCoefficients.from_transmission(t)
    r4 = mir.r2**2

    def rate(ch, k):
        return channel_amplitude(mir, theta, DetectionOutcome(ch, k)).rate

    for k in (m, -m):
        assert rate(Channel.TT, k) / rate(Channel.TT, 0) == pytest.approx(r4**m, rel=1e-10)
        assert rate(Channel.RR, k) / rate(Channel.RR, 1) == pytest.approx(r4 ** (m - 1), rel=1e-10)


@settings(max_examples=150, deadline=None)
@given(t=transmissions, theta=phases, m=st.integers(-20, 20))
def test_rates_even_in_theta_and_arm_symmetric(t, theta, m):
    mir = MirrorCoefficients.from_transmission(t)
    for ch in Channel:
        o = DetectionOutcome(ch, m)
        a = channel_amplitude(mir, theta, o).rate
        assert channel_amplitude(mir, -theta, o).rate == pytest.approx(a, rel=1e-10, abs=1e-300)
        assert 0.0 <= a <= 1.0
    rt = channel_amplitude(mir, theta, DetectionOutcome(Channel.RT, m)).value
    tr = channel_amplitude(mir, theta, DetectionOutcome(Channel.TR, -m)).value
    assert rt == tr


@pytest.mark.parametrize("t", np.linspace(0.01, 0.99, 25))
def test_reflection_sign_is_positive_on_resonance(t):
    a = channel_amplitude(MirrorCoefficients.from_transmission(t), 0.0, DetectionOutcome(Channel.RR, 0))
    assert a.value.real > 0
    assert abs(a.value.imag) < 1e-15


@pytest.mark.parametrize("t", [0.2, 0.5, 0.8])
def test_reflection_coincidence_peaks_with_transmission(t):
    # the pair reflection coincidence is largest on resonance and smallest at anti-resonance
    mir = MirrorCoefficients.from_transmission(t)
    grid = np.linspace(0, TWO_PI, 2001)
    rates = [channel_amplitude(mir, th, DetectionOutcome(Channel.RR, 0)).rate for th in grid]
    assert grid[int(np.argmax(rates))] in (0.0, TWO_PI)
    assert grid[int(np.argmin(rates))] == pytest.approx(math.pi)
    r2, t2 = mir.r2, mir.t2
    at_zero = r2 * r2 * (2 * t2) ** 2 / mir.one_minus_r4**2
    assert max(rates) == pytest.approx(at_zero, rel=1e-12)


# --- distribution and unitarity -------------------------------------------------------------


@pytest.mark.parametrize("t", np.linspace(0.1, 0.9, 20))
def test_unitarity_grid(t):
    m = MirrorCoefficients.from_transmission(t)
    for theta in np.linspace(0, TWO_PI, 20, endpoint=False):
        d = channel_distribution(m, theta, tail_tolerance=1e-12)
        assert d.tail_bound < 1e-12
        assert d.total() + d.tail_bound == pytest.approx(1.0, abs=1e-12)


def test_channel_totals_at_resonance():
    d = channel_distribution(T_HALF, 0.0, 1e-12)
    t, r = 0.25, 0.75
    assert d.channel_total(Channel.TT) == pytest.approx(t * (1 + r * r) / (1 + r) ** 3, abs=1e-12)
    assert d.channel_total(Channel.TT) == pytest.approx(0.0728862973, abs=1e-10)
    assert d.probabilities[DetectionOutcome(Channel.RR, 0)] == pytest.approx(4 * r * r / (1 + r) ** 2, rel=1e-12)


def test_tail_probability_matches_direct_sum():
    theta = 0.7
    m_max = 6
    direct = sum(
        channel_amplitude(T_HALF, theta, DetectionOutcome(ch, k)).rate
        for ch in Channel
        for k in range(m_max + 1, 400)
        for k in (k, -k)
    )
    assert tail_probability(T_HALF, theta, m_max) == pytest.approx(direct, rel=1e-10)


def test_distribution_trivial_mirrors():
    d = channel_distribution(MirrorCoefficients.from_transmission(1.0), 1.3)
    assert d.probabilities == {DetectionOutcome(Channel.TT, 0): 1.0}
    d = channel_distribution(MirrorCoefficients.from_transmission(0.0), 1.3)
    assert d.probabilities == {DetectionOutcome(Channel.RR, 0): 1.0}


def test_truncation_cap_enforced():
    with pytest.raises(TruncationError):
        offset_cutoff(MirrorCoefficients.from_transmission(1e-4), 0.0, 1e-12, cap=1000)


def test_offset_cutoff_is_minimal():
    m = offset_cutoff(T_HALF, 0.3, 1e-9)
    assert tail_probability(T_HALF, 0.3, m) < 1e-9 <= tail_probability(T_HALF, 0.3, m - 1)


def test_all_outcomes_count():
    assert len(list(all_outcomes(3))) == 4 * 7


# --- resonance geometry ----------------------------------------------------------------------


def _config(theta_target: float, **kw) -> InterferometerConfig:
    omega = 2.4e15
    unit = math.pi * SPEED_OF_LIGHT / (2 * omega)
    d = (51000 + theta_target / TWO_PI) * unit
    return InterferometerConfig(d, d, omega, omega, kw.pop("pulse_length", 1e-3), T_HALF)


def test_on_resonance_examples():
    assert on_resonance(_config(0.0), 1e-6)
    assert not on_resonance(_config(math.pi), 1e-6)


def test_on_resonance_wraps_around():
    cfg = _config(0.0)
    object.__setattr__(cfg, "theta", TWO_PI - 1e-9)
    assert on_resonance(cfg, 1e-6)


def test_config_theta_rederivable():
    cfg = _config(1.0)
    assert abs(cfg.theta - 1.0) < 1e-6


def test_geometry_validity_flags():
    omega = 2.4e15
    ok = InterferometerConfig(0.01, 0.01, omega, omega, 1e-3, T_HALF)
    assert ok.geometry_valid
    mismatched = InterferometerConfig(0.01, 0.0101, omega, omega, 1e-3, T_HALF)
    assert not mismatched.length_mismatch_ok
    long_pulse = InterferometerConfig(0.01, 0.01, omega, omega, 0.05, T_HALF)
    assert not long_pulse.self_interference_free


def test_linewidth_matches_bisection():
    fwhm = resonance_linewidth(T_HALF)
    assert fwhm == pytest.approx(4 * math.asin(0.4375 / 1.5), rel=1e-14)
    peak = transmission_coincidence_rate(T_HALF, 0.0)
    half = brentq(lambda th: transmission_coincidence_rate(T_HALF, th) - 0.5 * peak, 0.0, math.pi, xtol=1e-15)
    assert fwhm == pytest.approx(2 * half, rel=1e-12)


def test_linewidth_narrows_towards_perfect_mirror():
    m = MirrorCoefficients.from_transmission(1e-3)
    r4 = m.r2**2
    assert resonance_linewidth(m) == pytest.approx(2 * (1 - r4) / m.r2, rel=1e-5)


def test_linewidth_unresolved_for_leaky_mirrors():
    with pytest.raises(UnresolvedResonanceError):
        resonance_linewidth(MirrorCoefficients.from_transmission(0.9))


def test_free_spectral_range():
    assert free_spectral_range(0.01) == pytest.approx(math.pi * SPEED_OF_LIGHT / 0.01)
