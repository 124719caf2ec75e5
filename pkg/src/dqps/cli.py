"""Command-line front end.

Subcommands: keyrate, sweep, simulate, rtag, calibrate.  Single results are
printed as JSON lines with sorted keys; sweeps are CSV with a fixed header.
Floats in CSV use 17 significant digits so files round-trip bit-exactly.

A flat key=value config file (--config) can supply any long option of the
chosen subcommand; explicit flags win.  Relative --output and --event-log
paths resolve against $DQPS_OUTPUT_DIR when it is set.

Exit codes: 0 success, 2 validation, 3 I/O, 4 resource limit.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

from .calibration import (
    CalibSetup2,
    CalibSetup3,
    simulate_three_detector,
    simulate_two_detector,
)
from .errors import ParameterError, WorkLimitError
from .keyrate import RateInputs, channel_q, key_rate
from .optimize import SweepSpec, optimize_mu, sweep
from .protocol import ChannelModel, ProtocolParams, estimate_key_rate, run_simulation
from .tagging import (
    SourceDistribution,
    TagParams,
    rtag_bruteforce,
    rtag_coherent,
    rtag_general,
)

SWEEP_HEADER = "L,eta_db,eta,mu_opt,Q,rtag,rate"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _resolve_out(path: str) -> Path:
    p = Path(path)
    base = os.environ.get("DQPS_OUTPUT_DIR")
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    with open(_resolve_out(path), "w", newline="") as handle:
        handle.write(text)


def _json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True) + "\n"


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _fmt(value)
    return str(value)


def _record_csv(record: dict) -> str:
    header = ",".join(record)
    row = ",".join(_csv_cell(v) for v in record.values())
    return header + "\n" + row + "\n"


def _emit_record(record: dict, args) -> None:
    fmt = getattr(args, "format", "json")
    if fmt == "csv":
        _emit(_record_csv(record), args.output)
    elif fmt == "json":
        _emit(_json_line(record), args.output)
    else:
        raise ParameterError("format", f"unknown format {fmt!r}")


def _require(args, name: str):
    value = getattr(args, name)
    if value is None:
        raise ParameterError(name, "required")
    return value


# ---------------------------------------------------------------------------
# parser construction

def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dqps",
        description="Key rates, tagging bounds, and simulations for "
        "differential-quadrature-phase-shift QKD.",
    )
    subparsers = parser.add_subparsers(dest="command")
    registry: dict[str, tuple[argparse.ArgumentParser, dict]] = {}

    def command(name, help_text):
        sub = subparsers.add_parser(name, help=help_text)
        converters: dict = {}
        registry[name] = (sub, converters)

        def add(flag, **kwargs):
            conv = kwargs.get("type", str)
            if kwargs.get("action") == "store_true":
                conv = _parse_bool
            action = sub.add_argument(flag, **kwargs)
            converters[action.dest] = conv

        add("--config", help="flat key=value file supplying defaults")
        add("--output", help="write result here instead of stdout")
        return add

    add = command("keyrate", "secure key rate at one operating point")
    add("--L", type=int)
    add("--eta", type=float)
    add("--eta-db", type=float, help="channel loss in dB; eta = 10^(-dB/10)")
    add("--error-rate", type=float, help="E0/Q and E1/Q, both bases")
    add("--mu", type=float)
    add("--optimize", action="store_true", help="search mu instead of fixing it")
    add("--p0", type=float, default=1.0)
    add("--ec-inefficiency", type=float, default=1.0)
    add("--mu-lo", type=float, default=1e-6)
    add("--mu-hi", type=float, default=1.0)
    add("--tol", type=float, default=1e-9)
    add("--format", choices=("json", "csv"), default="json")

    add = command("sweep", "optimized key rate over a loss grid, CSV")
    add("--L-list", help="comma-separated block lengths, e.g. 2,4,20")
    add("--eta-db-range", help="lo:hi:step loss grid in dB, endpoints included")
    add("--error-rate", type=float)
    add("--mu-lo", type=float, default=1e-6)
    add("--mu-hi", type=float, default=1.0)
    add("--tol", type=float, default=1e-9)

    add = command("simulate", "photon-level Monte Carlo of the protocol")
    add("--L", type=int)
    add("--mu", type=float)
    add("--eta", type=float)
    add("--blocks", type=int)
    add("--seed", type=int, default=0)
    add("--p1", type=float, default=0.5, help="check-basis probability")
    add("--p-dark", type=float, default=0.0)
    add("--delta", type=float, default=0.0, help="misalignment phase, radians")
    add("--bitflip", type=float, default=0.0, help="direct bit-flip probability")
    add("--jobs", type=int, default=1)
    add("--format", choices=("json", "csv"), default="json")

    add = command("rtag", "tagging probability of a block source")
    add("--L", type=int)
    add("--mu", type=float)
    add("--oracle", action="store_true", help="also run the brute-force check")
    add("--cap", type=int, default=8, help="per-pulse photon cap for the oracle")
    add("--work-limit", type=float, default=1e8)
    add("--source", help="distribution file instead of the Poissonian model")
    add("--format", choices=("json", "csv"), default="json")

    add = command("calibrate", "coincidence-counting bound on the tagging probability")
    add("--mode", choices=("2det", "3det"))
    add("--L", type=int, default=10)
    add("--mu", type=float)
    add("--n-trains", type=int, default=100000)
    add("--seed", type=int, default=0)
    add("--jobs", type=int, default=1)
    add("--eta1", type=float, default=0.25)
    add("--eta2", type=float, default=0.25)
    add("--eta3", type=float)
    add("--eta-abs", type=float)
    add("--true-T", type=float)
    add("--true-R", type=float)
    add("--true-T1", type=float)
    add("--true-R1", type=float)
    add("--true-T2", type=float)
    add("--true-R2", type=float)
    add("--true-eff1", type=float)
    add("--true-eff2", type=float)
    add("--true-eff3", type=float)
    add("--true-eta-abs", type=float)
    add("--dead-time", type=int)
    add("--source", help="distribution file (two-detector mode only)")
    add("--event-log", help="write per-train coincidence flags to this CSV")
    add("--format", choices=("json", "csv"), default="json")

    return parser, registry


def _config_defaults(path: str, converters: dict) -> dict:
    text = Path(path).read_text()
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError("config", f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        dest = key.strip().replace("-", "_")
        if dest == "config" or dest not in converters:
            raise ParameterError("config", f"unknown key {key.strip()!r}")
        try:
            overrides[dest] = converters[dest](value.strip())
        except ValueError:
            raise ParameterError(dest, f"invalid value {value.strip()!r}") from None
    return overrides


# ---------------------------------------------------------------------------
# subcommands

def _resolve_eta(args) -> tuple[float, float | None]:
    """Returns (eta, eta_db as given or derived)."""
    if args.eta is not None and args.eta_db is not None:
        raise ParameterError("eta", "give either --eta or --eta-db, not both")
    if args.eta_db is not None:
        return 10.0 ** (-args.eta_db / 10.0), args.eta_db
    if args.eta is None:
        raise ParameterError("eta", "required: --eta or --eta-db")
    eta_db = -10.0 * math.log10(args.eta) if args.eta > 0 else None
    return args.eta, eta_db


def cmd_keyrate(args) -> int:
    L = _require(args, "L")
    error_rate = _require(args, "error_rate")
    eta, eta_db = _resolve_eta(args)
    if args.optimize and args.mu is not None:
        raise ParameterError("mu", "give either --mu or --optimize, not both")
    if not args.optimize and args.mu is None:
        raise ParameterError("mu", "required unless --optimize is given")

    record = {
        "record": "keyrate",
        "L": L,
        "eta": eta,
        "eta_db": eta_db,
        "error_rate": error_rate,
        "p0": args.p0,
        "optimized": bool(args.optimize),
    }
    if args.optimize:
        if args.ec_inefficiency != 1.0:
            raise ParameterError(
                "ec_inefficiency", "fixed to 1 when optimizing; use --mu"
            )
        mu, _ = optimize_mu(L, eta, error_rate, (args.mu_lo, args.mu_hi), args.tol)
        if mu is None:
            record.update(
                mu=None, Q=None, rtag=None, f_pa=None, f_ec=None,
                rate_per_pulse=0.0, feasible=False,
            )
            _emit_record(record, args)
            return 0
    else:
        mu = args.mu

    Q = channel_q(L, mu, eta)
    inputs = RateInputs.from_error_rates(L, mu, args.p0, Q, error_rate, error_rate)
    report = key_rate(inputs, ec_inefficiency=args.ec_inefficiency)
    record.update(
        mu=mu,
        Q=Q,
        rtag=report.rtag,
        f_pa=report.f_pa,
        f_ec=report.f_ec,
        rate_per_pulse=report.rate_per_pulse,
        feasible=report.feasible,
    )
    _emit_record(record, args)
    return 0


def _parse_db_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ParameterError("eta_db_range", "expected lo:hi:step")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ParameterError("eta_db_range", f"non-numeric bound in {text!r}") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and math.isfinite(step)):
        raise ParameterError("eta_db_range", "bounds must be finite")
    if step <= 0 or hi < lo:
        raise ParameterError("eta_db_range", "need step > 0 and hi >= lo")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + k * step for k in range(count)]


def cmd_sweep(args) -> int:
    L_text = _require(args, "L_list")
    db_text = _require(args, "eta_db_range")
    error_rate = _require(args, "error_rate")
    try:
        L_values = tuple(int(part) for part in L_text.split(","))
    except ValueError:
        raise ParameterError("L_list", f"non-integer entry in {L_text!r}") from None
    db_grid = _parse_db_grid(db_text)
    etas = [10.0 ** (-db / 10.0) for db in db_grid]
    db_of = dict(zip(etas, db_grid))

    spec = SweepSpec(
        L_values=L_values,
        eta_values=tuple(etas),
        error_rate=error_rate,
        mu_bounds=(args.mu_lo, args.mu_hi),
        tolerance=args.tol,
    )
    lines = [SWEEP_HEADER]
    for row in sweep(spec):
        mu_opt = row.mu_opt if row.mu_opt is not None else math.nan
        lines.append(
            f"{row.L},{_fmt(db_of[row.eta])},{_fmt(row.eta)},{_fmt(mu_opt)},"
            f"{_fmt(row.Q)},{_fmt(row.rtag)},{_fmt(row.rate)}"
        )
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def cmd_simulate(args) -> int:
    if args.format == "csv":
        raise ParameterError("format", "simulate emits json-lines only")
    params = ProtocolParams(
        L=_require(args, "L"),
        mu=_require(args, "mu"),
        p1=args.p1,
        n_blocks=_require(args, "blocks"),
        seed=args.seed,
    )
    channel = ChannelModel(
        eta=_require(args, "eta"),
        p_dark=args.p_dark,
        e_mis=args.delta,
        p_flip=args.bitflip,
    )
    stats = run_simulation(params, channel, n_jobs=args.jobs)
    report = estimate_key_rate(stats, params)
    stats_record = {
        "record": "observed_stats",
        "n_rep": stats.n_rep,
        "sifted_data": stats.sifted_data,
        "errors_data": stats.errors_data,
        "sifted_check": stats.sifted_check,
        "errors_check": stats.errors_check,
        "tagged_data": stats.tagged_data,
        "Q_hat": stats.Q_hat,
        "E0_hat": stats.E0_hat,
        "E1_hat": stats.E1_hat,
        "Delta_hat": stats.Delta_hat,
        "j_hist_d0": list(stats.j_hist_d0),
        "j_hist_d1": list(stats.j_hist_d1),
    }
    rate_record = {
        "record": "keyrate",
        "L": params.L,
        "mu": params.mu,
        "p0": params.p0,
        "Q": stats.Q_hat,
        "rtag": report.rtag,
        "f_pa": report.f_pa,
        "f_ec": report.f_ec,
        "rate_per_pulse": report.rate_per_pulse,
        "feasible": report.feasible,
    }
    _emit(_json_line(stats_record) + _json_line(rate_record), args.output)
    return 0


def cmd_rtag(args) -> int:
    record = {
        "record": "rtag",
        "source": args.source,
        "oracle_value": None,
        "truncation_bound": None,
    }
    if args.source is not None:
        if args.mu is not None:
            raise ParameterError("mu", "not meaningful with --source")
        if args.oracle:
            raise ParameterError("oracle", "applies to the Poissonian model only")
        dist = SourceDistribution.from_file(args.source)
        if args.L is not None and args.L != dist.L:
            raise ParameterError(
                "L", f"file describes trains of length {dist.L}, not {args.L}"
            )
        record.update(L=dist.L, mu=None, value=rtag_general(dist))
    else:
        params = TagParams(_require(args, "L"), _require(args, "mu"))
        record.update(L=params.L, mu=params.mu, value=rtag_coherent(params))
        if args.oracle:
            result = rtag_bruteforce(
                params, photon_cap=args.cap, work_limit=args.work_limit
            )
            record["oracle_value"] = result.value
            record["truncation_bound"] = result.truncation_bound
    _emit_record(record, args)
    return 0


def _reject_mode_flags(args, names: tuple[str, ...], mode: str) -> None:
    for name in names:
        if getattr(args, name) is not None:
            raise ParameterError(name, f"not valid for mode {mode}")


def cmd_calibrate(args) -> int:
    mode = _require(args, "mode")
    if mode not in ("2det", "3det"):
        raise ParameterError("mode", "must be 2det or 3det")
    mu = _require(args, "mu")
    collect = args.event_log is not None

    if mode == "2det":
        _reject_mode_flags(
            args,
            ("eta3", "eta_abs", "true_T1", "true_R1", "true_T2", "true_R2",
             "true_eff3", "true_eta_abs", "dead_time"),
            mode,
        )
        true_T = args.true_T if args.true_T is not None else 0.5
        true_R = args.true_R if args.true_R is not None else 0.5
        # declared bounds are taken as exact unless the truth is overridden
        eff1 = args.true_eff1 if args.true_eff1 is not None else args.eta1 / true_T
        eff2 = args.true_eff2 if args.true_eff2 is not None else args.eta2 / true_R
        source = (
            SourceDistribution.from_file(args.source) if args.source else None
        )
        setup = CalibSetup2(
            L=args.L,
            mu=mu,
            eta1=args.eta1,
            eta2=args.eta2,
            true_T=true_T,
            true_R=true_R,
            true_eff1=eff1,
            true_eff2=eff2,
            n_test=args.n_trains,
            source=source,
        )
        report = simulate_two_detector(
            setup, seed=args.seed, n_jobs=args.jobs, collect_events=collect
        )
        extra = {"eta1": args.eta1, "eta2": args.eta2, "eta3": None, "eta_abs": None}
    else:
        _reject_mode_flags(args, ("true_T", "true_R", "source"), mode)
        eta3 = args.eta3 if args.eta3 is not None else 0.25
        eta_abs = args.eta_abs if args.eta_abs is not None else 0.1
        T1 = args.true_T1 if args.true_T1 is not None else 0.5
        R1 = args.true_R1 if args.true_R1 is not None else 0.5
        T2 = args.true_T2 if args.true_T2 is not None else 0.5
        R2 = args.true_R2 if args.true_R2 is not None else 0.5
        eff1 = args.true_eff1 if args.true_eff1 is not None else args.eta1 / (T1 * T2)
        eff2 = args.true_eff2 if args.true_eff2 is not None else args.eta2 / (T1 * R2)
        eff3 = args.true_eff3 if args.true_eff3 is not None else eta3 / R1
        true_abs = args.true_eta_abs if args.true_eta_abs is not None else eta_abs
        setup = CalibSetup3(
            L=args.L,
            mu=mu,
            eta1=args.eta1,
            eta2=args.eta2,
            eta3=eta3,
            eta_abs=eta_abs,
            true_T1=T1,
            true_R1=R1,
            true_T2=T2,
            true_R2=R2,
            true_eff1=eff1,
            true_eff2=eff2,
            true_eff3=eff3,
            true_eta_abs=true_abs,
            dead_time=args.dead_time if args.dead_time is not None else 1,
            n_test=args.n_trains,
        )
        report = simulate_three_detector(
            setup, seed=args.seed, n_jobs=args.jobs, collect_events=collect
        )
        extra = {
            "eta1": args.eta1, "eta2": args.eta2, "eta3": eta3, "eta_abs": eta_abs,
        }

    record = {
        "record": "calibration",
        "mode": report.mode,
        "L": args.L,
        "mu": mu,
        "seed": args.seed,
        "n_test": report.n_test,
        "n_double": report.n_double,
        "n_triple": report.n_triple,
        "bound": report.bound,
        "true_rtag": report.true_rtag,
        "slack": report.slack,
        "sigma": report.sigma,
    }
    record.update(extra)
    _emit_record(record, args)

    if collect:
        columns = ["double"] if mode == "2det" else ["double", "triple"]
        lines = ["train," + ",".join(columns)]
        for index, row in enumerate(report.events):
            lines.append(f"{index}," + ",".join(str(int(v)) for v in row))
        _emit("\n".join(lines) + "\n", args.event_log)
    return 0


_HANDLERS = {
    "keyrate": cmd_keyrate,
    "sweep": cmd_sweep,
    "simulate": cmd_simulate,
    "rtag": cmd_rtag,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    parser, registry = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.config is not None:
            sub, converters = registry[args.command]
            sub.set_defaults(**_config_defaults(args.config, converters))
            args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except ParameterError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except WorkLimitError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 4
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3


def main_entry() -> None:
    sys.exit(main())
