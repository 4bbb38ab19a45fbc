"""Monte Carlo click streams for the four counters and their coincidence analysis.

Pairs are drawn from the analytic outcome distribution, turned into
timestamped clicks on L1/L2/R1/R2 (with optional inefficiency, Gaussian
jitter and dark counts), and the stream is analysed back into a histogram
of (detector pair, offset) counts.  All randomness comes from
:mod:`dualfp.streams`, so a given seed reproduces a run bit for bit
regardless of how generation is chunked.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.special import ndtri

from . import streams
from .core import Channel, ChannelDistribution, DetectionOutcome, MirrorCoefficients, channel_distribution
from .phase import TWO_PI

DETECTORS = ("L1", "L2", "R1", "R2")
_DET_INDEX = {d: i for i, d in enumerate(DETECTORS)}
_CHANNELS = (Channel.TT, Channel.RR, Channel.RT, Channel.TR)
_CHANNEL_CODE = {ch: i for i, ch in enumerate(_CHANNELS)}
# detector codes fired by each channel code
_LEFT_DET = np.array([_DET_INDEX[ch.detectors[0]] for ch in _CHANNELS], dtype=np.int8)
_RIGHT_DET = np.array([_DET_INDEX[ch.detectors[1]] for ch in _CHANNELS], dtype=np.int8)


@dataclass(frozen=True)
class DetectorModel:
    """Counter imperfections.  Defaults are ideal: unit efficiency, no jitter, no darks.

    ``efficiency`` may be a single number or a mapping per detector id.
    """

    efficiency: float | Mapping[str, float] = 1.0
    timing_jitter_sigma: float = 0.0
    dark_count_rate: float = 0.0

    def __post_init__(self):
        eff = self.efficiency
        if isinstance(eff, Mapping):
            unknown = set(eff) - set(DETECTORS)
            if unknown:
                raise ValueError(f"unknown detector ids {sorted(unknown)}")
            eff = {d: float(eff.get(d, 1.0)) for d in DETECTORS}
        else:
            eff = {d: float(eff) for d in DETECTORS}
        for d, v in eff.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"efficiency of {d} must lie in [0, 1], got {v}")
        if not self.timing_jitter_sigma >= 0:
            raise ValueError("timing_jitter_sigma must be non-negative")
        if not self.dark_count_rate >= 0:
            raise ValueError("dark_count_rate must be non-negative")
        object.__setattr__(self, "efficiency", eff)

    def eta(self, detector: str) -> float:
        return self.efficiency[detector]

    def pair_efficiency(self, channel: Channel) -> float:
        a, b = channel.detectors
        return self.eta(a) * self.eta(b)


@dataclass(frozen=True)
class ClickEvent:
    detector: str
    timestamp: float


class PairOutcomes(Sequence):
    """Sampled outcomes stored as parallel arrays (channel code, offset)."""

    def __init__(self, channel_codes: np.ndarray, offsets: np.ndarray):
        self.channel_codes = np.asarray(channel_codes, dtype=np.int8)
        self.offsets = np.asarray(offsets, dtype=np.int64)

    @classmethod
    def from_outcomes(cls, outcomes: Sequence[DetectionOutcome]) -> "PairOutcomes":
        if isinstance(outcomes, PairOutcomes):
            return outcomes
        codes = [_CHANNEL_CODE[o.channel] for o in outcomes]
        return cls(np.array(codes, dtype=np.int8), np.array([o.offset_m for o in outcomes], dtype=np.int64))

    def __len__(self) -> int:
        return self.channel_codes.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PairOutcomes(self.channel_codes[i], self.offsets[i])
        return DetectionOutcome(_CHANNELS[int(self.channel_codes[i])], int(self.offsets[i]))

    def counts(self) -> dict[DetectionOutcome, int]:
        keys = self.channel_codes.astype(np.int64) * (1 << 40) + self.offsets + (1 << 39)
        uniq, cnt = np.unique(keys, return_counts=True)
        out = {}
        for k, c in zip(uniq.tolist(), cnt.tolist()):
            code, off = divmod(k, 1 << 40)
            out[DetectionOutcome(_CHANNELS[code], off - (1 << 39))] = c
        return out


def _sampling_table(dist: ChannelDistribution) -> tuple[list[DetectionOutcome], np.ndarray]:
    outcomes = dist.outcomes()
    probs = np.array([dist.probabilities[o] for o in outcomes])
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    return outcomes, cdf


def sample_pair_outcomes(
    mirrors: MirrorCoefficients,
    theta: float,
    n_pairs: int,
    seed: int,
    tail_tolerance: float = 1e-9,
    workers: int = 1,
) -> PairOutcomes:
    """i.i.d. outcomes from the (truncated, renormalised) channel distribution."""
    if n_pairs < 1:
        raise ValueError(f"n_pairs must be at least 1, got {n_pairs}")
    dist = channel_distribution(mirrors, theta, tail_tolerance)
    outcomes, cdf = _sampling_table(dist)
    u = streams.uniforms_chunked(seed, streams.OUTCOMES, n_pairs, workers)
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(outcomes) - 1)
    codes = np.array([_CHANNEL_CODE[o.channel] for o in outcomes], dtype=np.int8)
    offs = np.array([o.offset_m for o in outcomes], dtype=np.int64)
    return PairOutcomes(codes[idx], offs[idx])


@dataclass
class ClickStream(Sequence):
    """Time-sorted clicks.  ``detector_codes`` index into :data:`DETECTORS`."""

    detector_codes: np.ndarray
    timestamps: np.ndarray
    n_pairs: int = 0
    pair_interval: float | None = None
    round_trip_time: float | None = None

    def __len__(self) -> int:
        return self.timestamps.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            raise TypeError("slicing a ClickStream is not supported")
        return ClickEvent(DETECTORS[int(self.detector_codes[i])], float(self.timestamps[i]))

    def _lines(self) -> list[str]:
        names = np.array(DETECTORS)[self.detector_codes]
        return [f"{d},{t!r}" for d, t in zip(names.tolist(), self.timestamps.tolist())]

    def to_csv(self, path: str | Path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("detector,timestamp_seconds\n")
            lines = self._lines()
            if lines:
                fh.write("\n".join(lines) + "\n")

    def to_jsonl(self, path: str | Path) -> None:
        names = np.array(DETECTORS)[self.detector_codes].tolist()
        with open(path, "w") as fh:
            for d, t in zip(names, self.timestamps.tolist()):
                fh.write(json.dumps({"detector": d, "timestamp_seconds": t}) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ClickStream":
        codes, times = [], []
        with open(path) as fh:
            header_seen = False
            for line in fh:
                if line.startswith("#") or not line.strip():
                    continue
                if not header_seen:
                    if line.strip() != "detector,timestamp_seconds":
                        raise ValueError(f"{path}: expected header detector,timestamp_seconds")
                    header_seen = True
                    continue
                d, t = line.strip().split(",")
                codes.append(_DET_INDEX[d])
                times.append(float(t))
        return _sorted_stream(np.array(codes, dtype=np.int8), np.array(times, dtype=float))


def _sorted_stream(codes: np.ndarray, times: np.ndarray, **meta) -> ClickStream:
    order = np.lexsort((codes, times))
    return ClickStream(codes[order], times[order], **meta)


def emit_click_streams(
    outcomes: Sequence[DetectionOutcome],
    round_trip_time: float,
    pair_interval: float,
    detectors: DetectorModel,
    seed: int,
    workers: int = 1,
) -> ClickStream:
    """Timestamped clicks for a sequence of pair outcomes.

    Pair ``j`` is emitted at ``j * pair_interval``; its two clicks are
    ``m * round_trip_time`` apart with the left click first for ``m > 0``.
    Constant source-to-detector delays are taken as zero.
    """
    pairs = PairOutcomes.from_outcomes(outcomes)
    n = len(pairs)
    if not round_trip_time > 0:
        raise ValueError("round_trip_time must be positive")
    max_m = int(np.max(np.abs(pairs.offsets))) if n else 0
    if not pair_interval > (max_m + 2) * round_trip_time:
        raise ValueError(
            f"pair_interval {pair_interval:g} s must exceed (max|m| + 2) * round_trip_time = "
            f"{(max_m + 2) * round_trip_time:g} s, otherwise neighbouring pairs alias"
        )
    m = pairs.offsets
    base = np.arange(n, dtype=float) * pair_interval
    t_left = base + np.maximum(0, -m) * round_trip_time
    t_right = base + np.maximum(0, m) * round_trip_time
    det_left = _LEFT_DET[pairs.channel_codes]
    det_right = _RIGHT_DET[pairs.channel_codes]

    # words 2j and 2j+1 of each stream belong to pair j
    times = np.empty(2 * n)
    times[0::2], times[1::2] = t_left, t_right
    codes = np.empty(2 * n, dtype=np.int8)
    codes[0::2], codes[1::2] = det_left, det_right

    eta = np.array([detectors.eta(d) for d in DETECTORS])
    keep = streams.uniforms_chunked(seed, streams.KEEP, 2 * n, workers) < eta[codes]
    if detectors.timing_jitter_sigma > 0:
        u = streams.open_uniforms(streams.uniforms_chunked(seed, streams.JITTER, 2 * n, workers))
        times = times + detectors.timing_jitter_sigma * ndtri(u)
    times, codes = times[keep], codes[keep]

    if detectors.dark_count_rate > 0:
        span = n * pair_interval
        extra_t, extra_c = [times], [codes]
        for i in range(len(DETECTORS)):
            g = streams.generator(seed, streams.DARK_BASE + i)
            k = int(g.poisson(detectors.dark_count_rate * span))
            extra_t.append(g.random(k) * span)
            extra_c.append(np.full(k, i, dtype=np.int8))
        times, codes = np.concatenate(extra_t), np.concatenate(extra_c)

    times = np.maximum(times, 0.0)
    return _sorted_stream(
        codes, times, n_pairs=n, pair_interval=pair_interval, round_trip_time=round_trip_time
    )


@dataclass
class CoincidenceHistogram:
    """Counts per (detector pair label, offset m); ``bin_width`` is the round trip."""

    bin_width: float
    bins: dict[tuple[str, int], int]
    total_pairs_emitted: int
    unmatched_left: int = 0
    unmatched_right: int = 0

    def count(self, outcome: DetectionOutcome) -> int:
        return self.bins.get((outcome.channel.pair_label, outcome.offset_m), 0)

    def total(self) -> int:
        return sum(self.bins.values())

    def to_csv(self, path: str | Path, comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write("pair,m,count\n")
            for (pair, m), c in sorted(self.bins.items()):
                fh.write(f"{pair},{m},{c}\n")


def build_histogram(
    stream: ClickStream,
    round_trip_time: float,
    matching_window: float,
    max_offset: int | None = None,
) -> CoincidenceHistogram:
    """Greedy left/right click pairing into (pair, m) bins.

    A left click (L1/L2) is paired with the nearest unused right click
    (R1/R2) whose separation lies within ``matching_window`` of an integer
    multiple ``m`` of the round trip, ``|m| <= max_offset``.  If
    ``max_offset`` is omitted it is derived from the stream's pair interval
    so that clicks of neighbouring pairs can never be candidates.
    """
    if not 0 < matching_window < 0.5 * round_trip_time:
        raise ValueError("matching_window must lie in (0, round_trip_time / 2)")
    if max_offset is None:
        if stream.pair_interval is not None:
            max_offset = max(0, int(stream.pair_interval / (2.0 * round_trip_time)) - 1)
        else:
            max_offset = int(np.iinfo(np.int32).max)

    codes, times = stream.detector_codes, stream.timestamps
    is_left = codes < 2  # L1, L2
    lt, lc = times[is_left], codes[is_left]
    rt_, rc = times[~is_left], codes[~is_left]
    reach = max_offset * round_trip_time + matching_window
    lo = np.searchsorted(rt_, lt - reach, side="left")
    hi = np.searchsorted(rt_, lt + reach, side="right")
    ncand = hi - lo

    cover = np.zeros(rt_.size + 1, dtype=np.int64)
    np.add.at(cover, lo, 1)
    np.add.at(cover, hi, -1)
    cover = np.cumsum(cover)[: rt_.size]

    match_right = np.full(lt.size, -1, dtype=np.int64)
    fast = ncand == 1
    if rt_.size:
        fast &= cover[np.minimum(lo, rt_.size - 1)] == 1
    fi = np.nonzero(fast)[0]
    delta = rt_[lo[fi]] - lt[fi]
    mm = np.rint(delta / round_trip_time)
    ok = (np.abs(delta - mm * round_trip_time) <= matching_window) & (np.abs(mm) <= max_offset)
    match_right[fi[ok]] = lo[fi[ok]]

    used = np.zeros(rt_.size, dtype=bool)
    used[match_right[match_right >= 0]] = True
    for i in np.nonzero(~fast & (ncand > 0))[0].tolist():
        best, best_d = -1, math.inf
        for j in range(int(lo[i]), int(hi[i])):
            if used[j]:
                continue
            d = rt_[j] - lt[i]
            k = round(d / round_trip_time)
            if abs(k) <= max_offset and abs(d - k * round_trip_time) <= matching_window and abs(d) < best_d:
                best, best_d = j, abs(d)
        if best >= 0:
            used[best] = True
            match_right[i] = best

    got = match_right >= 0
    li = np.nonzero(got)[0]
    ri = match_right[got]
    offs = np.rint((rt_[ri] - lt[li]) / round_trip_time).astype(np.int64)
    pair_code = lc[li].astype(np.int64) * 4 + rc[ri].astype(np.int64)
    keys = pair_code * (1 << 40) + offs + (1 << 39)
    uniq, cnt = np.unique(keys, return_counts=True)
    bins = {}
    for k, c in zip(uniq.tolist(), cnt.tolist()):
        pc, off = divmod(k, 1 << 40)
        label = DETECTORS[pc // 4] + DETECTORS[pc % 4]
        bins[(label, off - (1 << 39))] = c
    return CoincidenceHistogram(
        bin_width=round_trip_time,
        bins=bins,
        total_pairs_emitted=stream.n_pairs,
        unmatched_left=int(lt.size - li.size),
        unmatched_right=int(rt_.size - li.size),
    )


@dataclass(frozen=True)
class RateEstimate:
    count: int
    rate: float
    std_error: float
    upper_95: float


def estimate_rates(
    hist: CoincidenceHistogram,
    n_pairs: int,
    detectors: DetectorModel | None = None,
    efficiency_correct: bool = False,
    outcomes: Sequence[DetectionOutcome] = (),
) -> dict[DetectionOutcome, RateEstimate]:
    """count / n_pairs with binomial standard errors.

    Empty bins get rate 0 and the rule-of-three one-sided 95% bound 3/n.
    With ``efficiency_correct`` every number is divided by the product of
    the two detector efficiencies of the bin.
    """
    if n_pairs <= 0:
        raise ValueError("n_pairs must be positive")
    if efficiency_correct and detectors is None:
        raise ValueError("efficiency correction needs the detector model")
    wanted = set(outcomes)
    for (label, m) in hist.bins:
        wanted.add(DetectionOutcome(Channel.from_pair_label(label), m))
    out = {}
    for o in sorted(wanted):
        c = hist.count(o)
        p = c / n_pairs
        se = math.sqrt(p * (1.0 - p) / n_pairs)
        upper = 3.0 / n_pairs if c == 0 else p + 1.6448536269514722 * se
        if efficiency_correct:
            eff = detectors.pair_efficiency(o.channel)
            if eff == 0:
                raise ValueError(f"cannot correct {o}: zero detector efficiency")
            p, se, upper = p / eff, se / eff, upper / eff
        out[o] = RateEstimate(c, p, se, upper)
    return out


def equivalent_z(count: int, n: int, p: float) -> float:
    """Signed normal deviate with the same exact binomial tail probability.

    For large expected counts this is the usual ``(k - np) / sqrt(np(1-p))``;
    for channels expected to see well under one event it stays meaningful
    where the Gaussian score does not (a single count at ``np = 0.01`` is a
    1% event, not a 10 sigma one).
    """
    if p <= 0.0:
        return 0.0 if count == 0 else math.inf
    if p >= 1.0:
        return 0.0 if count == n else -math.inf
    mean = n * p
    if count >= mean:
        tail = stats.binom.sf(count - 1, n, p)
        return max(0.0, float(stats.norm.isf(tail)))
    tail = stats.binom.cdf(count, n, p)
    return -max(0.0, float(stats.norm.isf(tail)))


@dataclass(frozen=True)
class ChannelCheck:
    outcome: DetectionOutcome
    analytic: float
    estimate: float
    std_error: float
    z: float


def compare_to_analytic(
    dist: ChannelDistribution,
    hist: CoincidenceHistogram,
    n_pairs: int,
    detectors: DetectorModel | None = None,
    efficiency_correct: bool = False,
) -> list[ChannelCheck]:
    """Per-outcome z-scores of the observed counts against the analytic distribution.

    With efficiency correction the expected probability of a bin is the
    analytic one times the pair efficiency; the reported estimate is the
    corrected one.
    """
    est = estimate_rates(hist, n_pairs, detectors, efficiency_correct, outcomes=dist.outcomes())
    checks = []
    for o, e in est.items():
        p = dist.probabilities.get(o, 0.0)
        p_obs = p * (detectors.pair_efficiency(o.channel) if detectors is not None else 1.0)
        checks.append(ChannelCheck(o, p, e.rate, e.std_error, equivalent_z(e.count, n_pairs, p_obs)))
    return checks


def fringe_visibility(rates_vs_theta: Sequence[tuple[float, float]]) -> float:
    """``(max - min) / (max + min)`` of a rate scan covering a full period."""
    data = np.asarray(rates_vs_theta, dtype=float)
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != 2:
        raise ValueError("need at least 3 (theta, rate) points")
    th = np.sort(np.mod(data[:, 0], TWO_PI))
    gaps = np.diff(np.concatenate([th, [th[0] + TWO_PI]]))
    if np.max(gaps) > TWO_PI / 3 + 1e-9:
        raise ValueError("scan does not span a full period of theta")
    hi, lo = float(np.max(data[:, 1])), float(np.min(data[:, 1]))
    if hi + lo <= 0:
        raise ValueError("visibility undefined: all rates are zero")
    return (hi - lo) / (hi + lo)
