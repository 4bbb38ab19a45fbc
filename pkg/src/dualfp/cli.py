"""Command-line front end.

    dualfp scan2d          --config run.toml --out fig2a.csv
    dualfp scan-single     --out fig4.csv
    dualfp spectral-scan   --config run.toml --out scan.csv
    dualfp spectral-readout --config run.toml --out peaks.json
    dualfp oracle-check    --out oracle.json
    dualfp simulate        --seed 7 --out sim.json

The config file is TOML (or JSON), one table per subcommand; keys missing
from a table take the defaults below and unknown keys are rejected.  Every
run with ``--out`` also writes ``<out>.config.json`` holding the effective
configuration, which can be fed back through ``--config`` to reproduce the
output byte for byte.

Exit codes: 0 success, 1 verification or statistical failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .clicksim import (
    DetectorModel,
    build_histogram,
    compare_to_analytic,
    emit_click_streams,
    sample_pair_outcomes,
)
from .core import (
    Channel,
    DetectionOutcome,
    MirrorCoefficients,
    TruncationError,
    UnresolvedResonanceError,
    channel_amplitude,
    channel_distribution,
    transmission_coincidence_rate,
)
from .oracle import compare_with_closed_form, oracle_l_max
from .phase import SPEED_OF_LIGHT, TWO_PI, PrecisionLossError, phase_from_geometry
from .spectral import (
    EnvelopeFunction,
    NonCommensurateError,
    ScanResult,
    cavity_scan,
    spectral_readout,
)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2
AUTO_L_MAX_FLOOR = 100

_SPECTRAL_DEFAULTS = {
    "t_field": 0.2,
    "omega_sum": 4.8e15,
    "order": 76000,
    "offset_min": 0.0,
    "offset_max": 1.0,
    "steps": 2000,
    "envelope_file": "",
    "window_trips": 600,
    "samples_per_trip": 2,
    "modulation_fsr": [0.0],
    "l_max": 0,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "scan2d": {
        "t_field": 0.5,
        "channel": "TT",
        "omega_left": 2.4e15,
        "omega_right": 2.4e15,
        "order_left": 51000,
        "order_right": 51000,
        "offset_min": -2.0,
        "offset_max": 2.0,
        "steps": 101,
    },
    "scan-single": {
        "t_values": [0.5, 0.2],
        "omega_sum": 4.8e15,
        "order": 51000,
        "offset_min": 0.0,
        "offset_max": 2.0,
        "steps": 401,
    },
    "spectral-scan": dict(_SPECTRAL_DEFAULTS),
    "spectral-readout": dict(
        _SPECTRAL_DEFAULTS, scan_file="", min_relative_prominence=0.1
    ),
    "oracle-check": {
        "t_values": [0.2, 0.5, 0.8],
        "n_theta": 8,
        "m_max": 5,
        "l_max": "auto",
        "tolerance": 1e-10,
    },
    "simulate": {
        "t_field": 0.5,
        "theta": 0.0,
        "n_pairs": 1_000_000,
        "seed": 0,
        "round_trip_time": 1e-9,
        "pair_interval": 0.0,
        "matching_window": 0.0,
        "efficiency": 1.0,
        "timing_jitter_sigma": 0.0,
        "dark_count_rate": 0.0,
        "efficiency_correct": False,
        "tail_tolerance": 1e-9,
        "z_threshold": 5.0,
        "clicks_out": "",
        "histogram_out": "",
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# ---------------------------------------------------------------- config


def load_config(path: str | None, command: str) -> dict[str, Any]:
    """Defaults for ``command`` overlaid with the matching table of the file."""
    cfg = copy.deepcopy(DEFAULTS[command])
    if not path:
        return cfg
    p = Path(path)
    try:
        if p.suffix == ".json":
            data = json.loads(p.read_text())
        else:
            data = tomllib.loads(p.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section in data:
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
    section = data.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{command}] must be a table")
    for key, value in section.items():
        if key not in cfg:
            raise ConfigError(f"[{command}] unknown key '{key}'")
        cfg[key] = _coerce(command, key, value, cfg[key])
    return cfg


def _coerce(command: str, key: str, value: Any, default: Any) -> Any:
    where = f"[{command}] {key}"
    if default == "auto":
        if value == "auto" or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"{where}: expected an integer or \"auto\", got {value!r}")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if key == "efficiency" and isinstance(value, dict):
            return {str(k): _coerce(command, f"{key}.{k}", v, 1.0) for k, v in value.items()}
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"{where}: expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _mirrors(cfg: dict, key: str = "t_field", value: float | None = None) -> MirrorCoefficients:
    t = cfg[key] if value is None else value
    try:
        return MirrorCoefficients.from_transmission(t)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def _positive(cfg: dict, *keys: str) -> None:
    for k in keys:
        v = cfg[k]
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ConfigError(f"{k}: must be positive, got {v!r}")


def _grid(cfg: dict) -> np.ndarray:
    _positive(cfg, "steps")
    if cfg["steps"] < 2 or not cfg["offset_max"] > cfg["offset_min"]:
        raise ConfigError("steps/offset_max: need steps >= 2 and offset_max > offset_min")
    return np.linspace(cfg["offset_min"], cfg["offset_max"], cfg["steps"])


# ---------------------------------------------------------------- output


class Output:
    """Writes tables and reports with the provenance header line."""

    def __init__(self, args: argparse.Namespace, command: str, cfg: dict, seed: int):
        self.path = args.out
        self.fmt = args.format
        self.command = command
        self.cfg = cfg
        self.seed = seed

    @property
    def comment(self) -> str:
        return f"dualfp {__version__} command={self.command} seed={self.seed}"

    def _open(self):
        if self.path:
            return open(self.path, "w", newline="")
        return _NoClose(sys.stdout)

    def table(self, columns: list[str], rows: list[tuple]) -> None:
        with self._open() as fh:
            if self.fmt == "json":
                json.dump(
                    {
                        "tool": f"dualfp {__version__}",
                        "command": self.command,
                        "seed": self.seed,
                        "config": self.cfg,
                        "columns": columns,
                        "rows": [list(r) for r in rows],
                    },
                    fh,
                    indent=1,
                )
                fh.write("\n")
            else:
                fh.write(f"# {self.comment}\n")
                fh.write(",".join(columns) + "\n")
                for r in rows:
                    fh.write(",".join(_fmt(v) for v in r) + "\n")
        self._sidecar()

    def report(self, payload: dict) -> None:
        doc = {"tool": f"dualfp {__version__}", "command": self.command, "seed": self.seed,
               "config": self.cfg}
        doc.update(payload)
        with self._open() as fh:
            json.dump(doc, fh, indent=1, default=_json_default)
            fh.write("\n")
        self._sidecar()

    def _sidecar(self) -> None:
        if self.path:
            Path(str(self.path) + ".config.json").write_text(
                json.dumps({self.command: self.cfg}, indent=1, sort_keys=True) + "\n"
            )


class _NoClose:
    def __init__(self, fh):
        self.fh = fh

    def __enter__(self):
        return self.fh

    def __exit__(self, *exc):
        self.fh.flush()


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(o: Any):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o)}")


# ---------------------------------------------------------------- commands


def cmd_scan2d(cfg: dict, out: Output, workers: int) -> int:
    mirrors = _mirrors(cfg)
    try:
        channel = Channel(cfg["channel"])
    except ValueError:
        raise ConfigError(f"channel: must be TT or RR, got {cfg['channel']!r}") from None
    if channel not in (Channel.TT, Channel.RR):
        raise ConfigError(f"channel: must be TT or RR, got {cfg['channel']!r}")
    _positive(cfg, "omega_left", "omega_right", "order_left", "order_right")
    offsets = _grid(cfg)
    # offsets are counted in half-wavelengths of the sum frequency
    unit = math.pi * SPEED_OF_LIGHT / (cfg["omega_left"] + cfg["omega_right"])
    outcome = DetectionOutcome(channel, 0)
    rows = []
    for oL in offsets.tolist():
        dL = (cfg["order_left"] + oL) * unit
        for oR in offsets.tolist():
            dR = (cfg["order_right"] + oR) * unit
            theta = phase_from_geometry(cfg["omega_left"], cfg["omega_right"], dL, dR)
            if channel is Channel.TT:
                rate = transmission_coincidence_rate(mirrors, theta)
            else:
                rate = channel_amplitude(mirrors, theta, outcome).rate
            rows.append((oL, oR, theta, rate))
    out.table(["dL_offset", "dR_offset", "theta_rad", "rate"], rows)
    return EXIT_OK


def cmd_scan_single(cfg: dict, out: Output, workers: int) -> int:
    if not cfg["t_values"]:
        raise ConfigError("t_values: need at least one transmission value")
    mirrors = [_mirrors(cfg, "t_values", t) for t in cfg["t_values"]]
    _positive(cfg, "omega_sum", "order")
    offsets = _grid(cfg)
    unit = math.pi * SPEED_OF_LIGHT / cfg["omega_sum"]
    half = 0.5 * cfg["omega_sum"]
    rows = []
    for m in mirrors:
        for off in offsets.tolist():
            d = (cfg["order"] + off) * unit
            theta = phase_from_geometry(half, half, d, d)
            rate = transmission_coincidence_rate(m, theta)
            rows.append((m.t_field, d, theta, rate, math.log10(rate) if rate > 0 else -math.inf))
    out.table(["t_field", "d_meters", "theta_rad", "rate", "log10_rate"], rows)
    return EXIT_OK


def _spectral_scan(cfg: dict, workers: int) -> tuple[ScanResult, MirrorCoefficients, float]:
    mirrors = _mirrors(cfg)
    _positive(cfg, "omega_sum", "order", "window_trips", "samples_per_trip")
    unit = math.pi * SPEED_OF_LIGHT / cfg["omega_sum"]
    d_ref = cfg["order"] * unit
    rt_ref = 2.0 * d_ref / SPEED_OF_LIGHT
    fsr = math.pi * SPEED_OF_LIGHT / d_ref
    l_max = cfg["l_max"] or _auto_l_max(mirrors)
    if cfg["envelope_file"]:
        try:
            env = EnvelopeFunction.from_csv(cfg["envelope_file"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"envelope_file: {exc}") from exc
    else:
        k = cfg["samples_per_trip"]
        step = rt_ref / k
        if not cfg["modulation_fsr"]:
            raise ConfigError("modulation_fsr: need at least one component")
        # copies of the window land up to l_max trips earlier, so the zero padding goes in front
        base = EnvelopeFunction.flat_window(step, cfg["window_trips"] * k, pad_before=(l_max + 1) * k)
        samples = sum(base.modulated(f * fsr).samples for f in cfg["modulation_fsr"])
        env = EnvelopeFunction(0.0, step, samples)
    ds = (cfg["order"] + _grid(cfg)) * unit
    try:
        scan = cavity_scan(env, mirrors, ds, cfg["omega_sum"], l_max, workers=workers)
    except NonCommensurateError as exc:
        raise ConfigError(f"envelope_file/order: {exc}") from exc
    return scan, mirrors, fsr


def _auto_l_max(mirrors: MirrorCoefficients, tol: float = 1e-12) -> int:
    r4 = mirrors.r2 * mirrors.r2
    if r4 == 0.0:
        return 0
    return int(math.ceil(math.log(tol * mirrors.one_minus_r4) / math.log(r4)))


def cmd_spectral_scan(cfg: dict, out: Output, workers: int) -> int:
    scan, _, _ = _spectral_scan(cfg, workers)
    rows = list(zip(scan.abscissa.tolist(), scan.thetas.tolist(), scan.rates.tolist()))
    out.table(["d_meters", "theta_rad", "rate"], rows)
    return EXIT_OK


def cmd_spectral_readout(cfg: dict, out: Output, workers: int) -> int:
    if cfg["scan_file"]:
        try:
            scan = ScanResult.from_csv(cfg["scan_file"])
        except (OSError, ValueError, IndexError) as exc:
            raise ConfigError(f"scan_file: {exc}") from exc
        mirrors = _mirrors(cfg)
        _positive(cfg, "omega_sum", "order")
        fsr = cfg["omega_sum"] / cfg["order"]  # pi c / d with d = order * pi c / omega_sum
    else:
        scan, mirrors, fsr = _spectral_scan(cfg, workers)
    try:
        peaks = spectral_readout(scan, mirrors, fsr, cfg["min_relative_prominence"])
    except UnresolvedResonanceError as exc:
        out.report({"status": "unresolved", "message": str(exc), "peaks": []})
        return EXIT_FAIL
    except ValueError as exc:
        raise ConfigError(f"scan: {exc}") from exc
    payload = {
        "status": "ok",
        "free_spectral_range": fsr,
        "aliased": "offsets are defined modulo the free spectral range",
        "peaks": [
            {
                "offset_rad_per_s": p.offset,
                "offset_fsr_fraction": p.offset / fsr,
                "weight": p.weight,
                "theta_rad": p.theta,
            }
            for p in peaks
        ],
    }
    if out.fmt == "csv":
        rows = [(p.offset, p.offset / fsr, p.weight, p.theta) for p in peaks]
        out.table(["offset_rad_per_s", "offset_fsr_fraction", "weight", "theta_rad"], rows)
    else:
        out.report(payload)
    return EXIT_OK


def cmd_oracle_check(cfg: dict, out: Output, workers: int) -> int:
    mirrors = [_mirrors(cfg, "t_values", t) for t in cfg["t_values"]]
    _positive(cfg, "tolerance")
    l_max_cfg = cfg["l_max"]
    for key in ("n_theta", "l_max", "m_max"):
        if key == "l_max" and l_max_cfg == "auto":
            continue
        if cfg[key] < (1 if key == "n_theta" else 0):
            raise ConfigError(f"{key}: out of range ({cfg[key]})")
    thetas = [TWO_PI * i / cfg["n_theta"] for i in range(cfg["n_theta"])]
    outcomes = [DetectionOutcome(ch, m) for ch in Channel for m in range(-cfg["m_max"], cfg["m_max"] + 1)]
    reports = []
    for mir in mirrors:
        if l_max_cfg == "auto":
            # leave a decade of headroom below the tolerance for rounding
            l_max = max(AUTO_L_MAX_FLOOR, oracle_l_max(mir, cfg["m_max"], 0.1 * cfg["tolerance"]))
        else:
            l_max = l_max_cfg
        for th in thetas:
            rep = compare_with_closed_form(mir, th, outcomes, l_max, cfg["tolerance"],
                                           raise_on_failure=False)
            reports.append(rep)
    failing = [r for r in reports if not r.passed]
    summary = []
    for r in reports:
        summary.append({
            "t_field": r.t_field,
            "theta": r.theta,
            "l_max": r.l_max,
            "passed": r.passed,
            "max_deviation": r.max_deviation,
            "max_tail_bound": max(r.tail_bounds.values(), default=0.0),
            "failures": [
                {"channel": o.channel.value, "m": o.offset_m, "deviation": r.deviations[o],
                 "tail_bound": r.tail_bounds[o]}
                for o in r.failures
            ],
        })
    per_outcome = {}
    for r in reports:
        for o, dev in r.deviations.items():
            key = str(o)
            prev = per_outcome.get(key, {"max_deviation": 0.0, "max_tail_bound": 0.0})
            per_outcome[key] = {
                "max_deviation": max(prev["max_deviation"], dev),
                "max_tail_bound": max(prev["max_tail_bound"], r.tail_bounds[o]),
            }
    payload = {"passed": not failing, "grid": summary, "per_outcome": per_outcome}
    if failing:
        payload["explanation"] = (
            "truncated path sums differ from the closed forms by more than the tolerance; "
            "compare max_tail_bound with the tolerance and raise l_max"
        )
    out.report(payload)
    if failing:
        worst = max(failing, key=lambda r: r.max_deviation)
        print(
            f"oracle-check: {len(failing)} of {len(reports)} grid points fail; worst at "
            f"T={worst.t_field:g}, theta={worst.theta:.4g}, l_max={worst.l_max}: "
            f"deviation {worst.max_deviation:.3e} > tol {worst.tolerance:.1e} "
            f"(tail bound {max(worst.tail_bounds.values()):.3e}); raise l_max",
            file=sys.stderr,
        )
    return EXIT_FAIL if failing else EXIT_OK


def cmd_simulate(cfg: dict, out: Output, workers: int) -> int:
    mirrors = _mirrors(cfg)
    if not math.isfinite(cfg["theta"]):
        raise ConfigError("theta: must be finite")
    _positive(cfg, "n_pairs", "round_trip_time", "tail_tolerance", "z_threshold")
    try:
        detectors = DetectorModel(cfg["efficiency"], cfg["timing_jitter_sigma"], cfg["dark_count_rate"])
    except ValueError as exc:
        raise ConfigError(f"efficiency/timing_jitter_sigma/dark_count_rate: {exc}") from exc
    rt = cfg["round_trip_time"]
    seed = cfg["seed"]
    try:
        dist = channel_distribution(mirrors, cfg["theta"], cfg["tail_tolerance"])
    except TruncationError as exc:
        raise ConfigError(f"tail_tolerance: {exc}") from exc
    pair_interval = cfg["pair_interval"] or (2 * dist.m_max + 4) * rt
    window = cfg["matching_window"] or 0.25 * rt
    outcomes = sample_pair_outcomes(mirrors, cfg["theta"], cfg["n_pairs"], seed,
                                    cfg["tail_tolerance"], workers)
    try:
        stream = emit_click_streams(outcomes, rt, pair_interval, detectors, seed, workers)
        hist = build_histogram(stream, rt, window)
    except ValueError as exc:
        raise ConfigError(f"pair_interval/matching_window: {exc}") from exc
    if cfg["clicks_out"]:
        if Path(cfg["clicks_out"]).suffix in (".jsonl", ".ndjson"):
            stream.to_jsonl(cfg["clicks_out"])
        else:
            stream.to_csv(cfg["clicks_out"], comment=out.comment)
    if cfg["histogram_out"]:
        hist.to_csv(cfg["histogram_out"], comment=out.comment)
    checks = compare_to_analytic(dist, hist, cfg["n_pairs"], detectors, cfg["efficiency_correct"])
    bad = [c for c in checks if not abs(c.z) <= cfg["z_threshold"]]
    out.report({
        "passed": not bad,
        "n_pairs": cfg["n_pairs"],
        "clicks": len(stream),
        "unmatched_left": hist.unmatched_left,
        "unmatched_right": hist.unmatched_right,
        "tail_bound": dist.tail_bound,
        "channels": [
            {"channel": c.outcome.channel.value, "m": c.outcome.offset_m, "analytic": c.analytic,
             "estimate": c.estimate, "std_error": c.std_error, "z": c.z}
            for c in checks
        ],
        "failing": [str(c.outcome) for c in bad],
    })
    if bad:
        print("channels beyond |z| threshold: " + ", ".join(str(c.outcome) for c in bad), file=sys.stderr)
    return EXIT_FAIL if bad else EXIT_OK


COMMANDS: dict[str, Callable[[dict, Output, int], int]] = {
    "scan2d": cmd_scan2d,
    "scan-single": cmd_scan_single,
    "spectral-scan": cmd_spectral_scan,
    "spectral-readout": cmd_spectral_readout,
    "oracle-check": cmd_oracle_check,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML/JSON file with one table per subcommand")
    common.add_argument("--out", help="output path (stdout if omitted)")
    common.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="output format (default: csv for tables, json for reports)")
    parser = argparse.ArgumentParser(
        prog="dualfp", description="Dual-channel Fabry-Perot biphoton simulator"
    )
    parser.add_argument("--version", action="version", version=f"dualfp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


_REPORT_COMMANDS = {"oracle-check", "simulate", "spectral-readout"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    if args.format is None:
        args.format = "json" if args.command in _REPORT_COMMANDS else "csv"
    try:
        cfg = load_config(args.config, args.command)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {seed}")
        if "seed" in cfg:
            cfg["seed"] = seed
        if args.threads < 1:
            raise ConfigError(f"--threads: must be >= 1, got {args.threads}")
        out = Output(args, args.command, cfg, seed)
        return COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"dualfp {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PrecisionLossError, TruncationError) as exc:
        print(f"dualfp {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"dualfp {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
