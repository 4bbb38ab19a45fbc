"""Entanglement envelope model and cavity-scan spectroscopy.

A realistic pair carries a complex envelope ``phi(tau)`` over the common
emission time.  After both cavities the transmitted coincidence amplitude
becomes

    A(tau) = T^4 * sum_l R^(4l) exp(i theta l) phi(tau + l * t_rt),

with ``t_rt = 2d/c`` the round-trip time.  The normalised coincidence rate is
``int |A|^2 / int |phi|^2`` (trapezoidal).  A wide flat envelope brings
back the ideal Airy resonance, an envelope shorter than one round trip
removes all dependence on theta, and a modulation ``exp(i W tau)`` slides
the resonance comb by ``-W t_rt``.  Scanning the cavity length therefore
reads out the spectral content of ``phi`` modulo one free spectral range.

Pulse shapes of the individual photons are not modelled: in the short-pulse
regime only ``phi`` enters the rates.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.signal import find_peaks

from .core import MirrorCoefficients, resonance_linewidth, UnresolvedResonanceError
from .phase import SPEED_OF_LIGHT, TWO_PI, phase_from_geometry

#: Largest accepted mismatch (in samples) between a round trip and a whole
#: number of grid steps before the request is rejected.
DEFAULT_SNAP_TOLERANCE = 1e-3

_ENVELOPE_HEADER = ("tau_seconds", "re", "im")


class NonCommensurateError(ValueError):
    """Round-trip time is not a whole number of envelope grid steps."""

    def __init__(self, round_trip_time: float, tau_step: float):
        k = max(1, round(round_trip_time / tau_step))
        self.nearest_round_trip_time = k * tau_step
        self.nearest_length = 0.5 * SPEED_OF_LIGHT * self.nearest_round_trip_time
        super().__init__(
            f"round-trip time {round_trip_time:.9g} s is not a multiple of the envelope step "
            f"{tau_step:.9g} s; nearest commensurate value is {self.nearest_round_trip_time:.9g} s "
            f"(cavity length d = {self.nearest_length:.9g} m)"
        )


class AliasingWarning(UserWarning):
    """Scan spans more than one free spectral range; images were folded together."""


@dataclass(frozen=True)
class EnvelopeFunction:
    """Complex ``phi(tau)`` sampled on ``tau_start + i * tau_step``."""

    tau_start: float
    tau_step: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=complex)
        if samples.ndim != 1 or samples.size < 2:
            raise ValueError("envelope needs at least 2 samples")
        if not (math.isfinite(self.tau_step) and self.tau_step > 0):
            raise ValueError(f"tau_step must be positive, got {self.tau_step!r}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("envelope samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def taus(self) -> np.ndarray:
        return self.tau_start + self.tau_step * np.arange(self.samples.size)

    def norm2(self) -> float:
        """Trapezoidal ``int |phi|^2 dtau``."""
        return float(np.trapezoid(np.abs(self.samples) ** 2, dx=self.tau_step))

    def normalized(self) -> "EnvelopeFunction":
        n2 = self.norm2()
        if not n2 > 0:
            raise ValueError("cannot normalise an envelope with zero norm")
        return self.scaled(1.0 / math.sqrt(n2))

    def scaled(self, factor: complex) -> "EnvelopeFunction":
        return EnvelopeFunction(self.tau_start, self.tau_step, self.samples * factor)

    def shifted(self, delay: float) -> "EnvelopeFunction":
        """``phi(tau - delay)``: same samples on a translated grid."""
        return EnvelopeFunction(self.tau_start + delay, self.tau_step, self.samples)

    def modulated(self, omega: float) -> "EnvelopeFunction":
        """Multiply by ``exp(i omega tau)``."""
        return EnvelopeFunction(
            self.tau_start, self.tau_step, self.samples * np.exp(1j * omega * self.taus)
        )

    @classmethod
    def from_function(
        cls, fn: Callable[[np.ndarray], np.ndarray], tau_start: float, tau_step: float, n: int
    ) -> "EnvelopeFunction":
        taus = tau_start + tau_step * np.arange(n)
        return cls(tau_start, tau_step, np.asarray(fn(taus), dtype=complex))

    @classmethod
    def flat_window(
        cls, tau_step: float, width_samples: int, pad_before: int = 0, pad_after: int = 0
    ) -> "EnvelopeFunction":
        """Unit-height window of ``width_samples`` samples with zero padding.

        The cavity adds copies of the envelope advanced by whole round trips,
        so ``pad_before`` must cover ``l_max`` trips for nothing to fall off
        the front of the grid.
        """
        samples = np.zeros(pad_before + width_samples + pad_after, dtype=complex)
        samples[pad_before : pad_before + width_samples] = 1.0
        return cls(0.0, tau_step, samples)

    def to_csv(self, path: str | Path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            w.writerow(_ENVELOPE_HEADER)
            for tau, v in zip(self.taus.tolist(), self.samples.tolist()):
                w.writerow([repr(tau), repr(v.real), repr(v.imag)])

    @classmethod
    def from_csv(cls, path: str | Path, rtol: float = 1e-6) -> "EnvelopeFunction":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
        if not rows or tuple(c.strip() for c in rows[0]) != _ENVELOPE_HEADER:
            raise ValueError(f"{path}: header row must be {','.join(_ENVELOPE_HEADER)}")
        data = np.array([[float(c) for c in r] for r in rows[1:]])
        if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != 3:
            raise ValueError(f"{path}: need at least 2 rows of tau_seconds,re,im")
        taus = data[:, 0]
        steps = np.diff(taus)
        step = float(np.mean(steps))
        if np.max(np.abs(steps - step)) > rtol * abs(step):
            raise ValueError(f"{path}: tau grid is not uniform")
        return cls(float(taus[0]), step, data[:, 1] + 1j * data[:, 2])


def trip_samples(
    round_trip_time: float, tau_step: float, snap_tolerance: float = DEFAULT_SNAP_TOLERANCE
) -> int:
    """Round trip expressed as a whole number of grid steps."""
    if not (math.isfinite(round_trip_time) and round_trip_time > 0):
        raise ValueError(f"round_trip_time must be positive, got {round_trip_time!r}")
    ratio = round_trip_time / tau_step
    k = round(ratio)
    if k < 1 or abs(ratio - k) > snap_tolerance:
        raise NonCommensurateError(round_trip_time, tau_step)
    return int(k)


def nearest_commensurate_length(d: float, tau_step: float) -> float:
    """Cavity length closest to ``d`` whose round trip is a whole number of steps."""
    k = max(1, round(2.0 * d / SPEED_OF_LIGHT / tau_step))
    return 0.5 * SPEED_OF_LIGHT * k * tau_step


def _path_weights(mirrors: MirrorCoefficients, l_max: int) -> np.ndarray:
    t4 = mirrors.t2 * mirrors.t2
    r4 = mirrors.r2 * mirrors.r2
    return t4 * r4 ** np.arange(l_max + 1, dtype=float)


def windowed_coincidence_amplitude(
    envelope: EnvelopeFunction,
    mirrors: MirrorCoefficients,
    theta: float,
    round_trip_time: float,
    l_max: int,
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
) -> EnvelopeFunction:
    """Transmitted coincidence amplitude ``A(tau)`` on the envelope's own grid.

    Copies shifted past the end of the grid contribute nothing.
    """
    if l_max < 0:
        raise ValueError(f"l_max must be non-negative, got {l_max}")
    k = trip_samples(round_trip_time, envelope.tau_step, snap_tolerance)
    phi = envelope.samples
    n = phi.size
    weights = _path_weights(mirrors, l_max)
    out = np.zeros(n, dtype=complex)
    for l, w in enumerate(weights.tolist()):
        s = l * k
        if s >= n:
            break
        out[: n - s] += (w * complex(math.cos(theta * l), math.sin(theta * l))) * phi[s:]
    return EnvelopeFunction(envelope.tau_start, envelope.tau_step, out)


def coincidence_rate_from_envelope(
    envelope: EnvelopeFunction,
    mirrors: MirrorCoefficients,
    theta: float,
    round_trip_time: float,
    l_max: int,
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
) -> float:
    """``int |A|^2 / int |phi|^2`` for one phase."""
    amp = windowed_coincidence_amplitude(
        envelope, mirrors, theta, round_trip_time, l_max, snap_tolerance
    )
    return amp.norm2() / envelope.norm2()


def _shift_stack(envelope: EnvelopeFunction, mirrors: MirrorCoefficients, k: int, l_max: int) -> np.ndarray:
    phi = envelope.samples
    n = phi.size
    l_used = min(l_max, (n - 1) // k)
    weights = _path_weights(mirrors, l_used)
    stack = np.zeros((l_used + 1, n), dtype=complex)
    for l in range(l_used + 1):
        s = l * k
        stack[l, : n - s] = weights[l] * phi[s:]
    return stack


def _rates_for_phases(
    envelope: EnvelopeFunction,
    mirrors: MirrorCoefficients,
    thetas: np.ndarray,
    k: int,
    l_max: int,
    workers: int = 1,
    chunk: int = 256,
) -> np.ndarray:
    stack = _shift_stack(envelope, mirrors, k, l_max)
    ls = np.arange(stack.shape[0])
    norm = envelope.norm2()

    def block(th: np.ndarray) -> np.ndarray:
        amps = np.exp(1j * np.outer(th, ls)) @ stack
        return np.trapezoid(np.abs(amps) ** 2, dx=envelope.tau_step, axis=1) / norm

    pieces = [thetas[i : i + chunk] for i in range(0, thetas.size, chunk)]
    if workers > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(block, pieces))
    else:
        results = [block(p) for p in pieces]
    return np.concatenate(results) if results else np.zeros(0)


@dataclass
class ScanResult:
    """Normalised coincidence rates along a scan.

    ``abscissa`` holds cavity lengths (``kind == "d"``) or phases
    (``kind == "theta"``); ``thetas`` always holds the reduced phase.
    """

    abscissa: np.ndarray
    thetas: np.ndarray
    rates: np.ndarray
    kind: str = "theta"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.rates = np.asarray(self.rates, dtype=float)
        if not (self.abscissa.shape == self.thetas.shape == self.rates.shape):
            raise ValueError("abscissa, thetas and rates must have equal length")
        if np.any(self.rates < 0):
            raise ValueError("rates must be non-negative")

    def to_csv(self, path: str | Path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh)
            if self.kind == "d":
                w.writerow(["d_meters", "theta_rad", "rate"])
                rows = zip(self.abscissa.tolist(), self.thetas.tolist(), self.rates.tolist())
            else:
                w.writerow(["theta_rad", "rate"])
                rows = zip(self.thetas.tolist(), self.rates.tolist())
            for row in rows:
                w.writerow([repr(v) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScanResult":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
        header = [c.strip() for c in rows[0]]
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
        if header == ["d_meters", "theta_rad", "rate"]:
            return cls(data[:, 0], data[:, 1], data[:, 2], kind="d")
        if header == ["theta_rad", "rate"]:
            return cls(data[:, 0], data[:, 0], data[:, 1], kind="theta")
        raise ValueError(f"{path}: unrecognised scan header {header}")


def phase_scan(
    envelope: EnvelopeFunction,
    mirrors: MirrorCoefficients,
    thetas: Sequence[float],
    round_trip_time: float,
    l_max: int,
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
    workers: int = 1,
) -> ScanResult:
    """Rates over a list of phases at fixed round-trip time."""
    thetas = np.asarray(thetas, dtype=float)
    k = trip_samples(round_trip_time, envelope.tau_step, snap_tolerance)
    rates = _rates_for_phases(envelope, mirrors, thetas, k, l_max, workers)
    meta = {"t_field": mirrors.t_field, "l_max": l_max, "round_trip_time": round_trip_time}
    return ScanResult(thetas, np.mod(thetas, TWO_PI), rates, kind="theta", metadata=meta)


def cavity_scan(
    envelope: EnvelopeFunction,
    mirrors: MirrorCoefficients,
    d_range: Sequence[float],
    sum_frequency: float,
    l_max: int,
    snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
    workers: int = 1,
) -> ScanResult:
    """Rates versus a common cavity length ``d`` (single-cavity geometry, d_L = d_R)."""
    ds = np.asarray(d_range, dtype=float)
    if np.any(~np.isfinite(ds)) or np.any(ds <= 0):
        raise ValueError("cavity lengths must be positive")
    half = 0.5 * sum_frequency
    thetas = np.array([phase_from_geometry(half, half, d, d) for d in ds.tolist()])
    ks = np.array(
        [trip_samples(2.0 * d / SPEED_OF_LIGHT, envelope.tau_step, snap_tolerance) for d in ds.tolist()]
    )
    rates = np.empty(ds.size)
    for k in np.unique(ks).tolist():
        sel = ks == k
        rates[sel] = _rates_for_phases(envelope, mirrors, thetas[sel], k, l_max, workers)
    meta = {"t_field": mirrors.t_field, "l_max": l_max, "sum_frequency": sum_frequency}
    return ScanResult(ds, thetas, rates, kind="d", metadata=meta)


@dataclass(frozen=True)
class SpectralPeak:
    offset: float  # rad/s, in [0, FSR)
    weight: float
    theta: float


def _fold(scan: ScanResult) -> tuple[np.ndarray, np.ndarray, bool]:
    """Sort phases into [0, 2 pi), averaging samples that land on the same phase."""
    th = np.mod(scan.thetas, TWO_PI)
    th = np.where(th > TWO_PI - 1e-9, th - TWO_PI, th)  # 2 pi - eps is the seam, not a new point
    key = np.round(th, 9)
    order = np.argsort(key, kind="stable")
    key, th, rates = key[order], th[order], scan.rates[order]
    _, idx, counts = np.unique(key, return_index=True, return_counts=True)
    # a closed [0, 2pi] grid repeats only its end point
    folded = int(np.count_nonzero(counts > 1)) > 1
    rates = np.add.reduceat(rates, idx) / counts
    return th[idx], rates, folded


def spectral_readout(
    scan: ScanResult,
    mirrors: MirrorCoefficients,
    free_spectral_range: float,
    min_relative_prominence: float = 0.1,
) -> list[SpectralPeak]:
    """Turn resonance peaks of a scan into frequency offsets modulo one FSR.

    A modulation ``exp(i W tau)`` of the envelope puts a peak at
    ``theta = -2 pi W / FSR``, so each peak at ``theta_p`` reads out
    ``W = -theta_p FSR / (2 pi)`` folded into ``[0, FSR)``.  Components that
    differ by whole FSRs are indistinguishable.
    """
    linewidth = resonance_linewidth(mirrors)
    th, rates, folded = _fold(scan)
    if th.size < 3:
        raise ValueError("scan needs at least 3 distinct phases")
    gaps = np.diff(np.concatenate([th, [th[0] + TWO_PI]]))
    if np.max(gaps) > 0.5 * linewidth:
        raise ValueError(
            f"scan does not sample a full free spectral range finely enough: largest phase gap "
            f"{np.max(gaps):.3g} rad exceeds half the linewidth {0.5 * linewidth:.3g} rad"
        )
    if folded:
        warnings.warn(
            "scan covers more than one free spectral range; readout offsets are only "
            "defined modulo the FSR (aliased)",
            AliasingWarning,
            stacklevel=2,
        )
    span = float(np.max(rates) - np.min(rates))
    if span <= 0:
        return []
    n = th.size
    # start the circle at its lowest sample so every peak is interior with proper bases
    k = int(np.argmin(rates))
    ext = np.concatenate([np.roll(rates, -k), rates[k : k + 1]])
    idx, _ = find_peaks(ext, prominence=min_relative_prominence * span)
    idx = sorted({(i + k) % n for i in idx.tolist()})
    peaks = []
    for i in idx:
        lo, hi = (i - 1) % n, (i + 1) % n
        x0 = th[i]
        xm = th[lo] - (TWO_PI if lo > i else 0.0)
        xp = th[hi] + (TWO_PI if hi < i else 0.0)
        y0, ym, yp = rates[i], rates[lo], rates[hi]
        theta_p, height = _parabolic_vertex(xm, x0, xp, ym, y0, yp)
        theta_p = theta_p % TWO_PI
        offset = (-theta_p / TWO_PI * free_spectral_range) % free_spectral_range
        if offset >= free_spectral_range:
            offset = 0.0
        peaks.append(SpectralPeak(offset, height, theta_p))
    if len(peaks) > 1:
        pos = np.sort([p.theta for p in peaks])
        sep = np.diff(np.concatenate([pos, [pos[0] + TWO_PI]]))
        if np.min(sep) < linewidth:
            raise UnresolvedResonanceError(
                f"peak spacing {np.min(sep):.3g} rad is below the linewidth {linewidth:.3g} rad"
            )
    return sorted(peaks, key=lambda p: p.offset)


def _parabolic_vertex(xm, x0, xp, ym, y0, yp) -> tuple[float, float]:
    denom = (x0 - xm) * (x0 - xp) * (xm - xp)
    if denom == 0:
        return x0, y0
    a = (xp * (y0 - ym) + x0 * (ym - yp) + xm * (yp - y0)) / denom
    b = (xp * xp * (ym - y0) + x0 * x0 * (yp - ym) + xm * xm * (y0 - yp)) / denom
    if a >= 0:
        return x0, y0
    xv = -b / (2 * a)
    if not (xm <= xv <= xp):
        return x0, y0
    c = y0 - a * x0 * x0 - b * x0
    return xv, a * xv * xv + b * xv + c
