"""Command-line entry point: ``dyncomm {run,track-group,compare,synth,replay}``.

Exit codes: 0 success, 2 input/parse error, 3 validation error, 4 integrator
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .centrality import broadcast_receive, group_value, rank
from .discrete import refine_and_compare
from .kernels import SpectralConditionError
from .ode import IntegrationError, IntegratorConfig, integrate_matrix, integrate_receive, propagate_exact
from .synth import DEFAULT_SEED, ScenarioConfig, ScenarioError, export_csv, generate, ground_truth_json
from .temporal_graph import (
    IngestError,
    Mode,
    Params,
    Status,
    bandwidth,
    ingest_events,
    validate_attenuation,
)

EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_INTEGRATOR = 4

SECONDS_PER_DAY = 86400.0


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    return format(float(x), ".17g")


def decay_rate(b=None, half_life=None, decay_per_day=None) -> float:
    """Temporal decay ``b`` in 1/seconds from one of three spellings.

    ``half_life`` in seconds gives ``b = ln 2 / half_life``; ``decay_per_day``
    is the factor by which a walk's weight shrinks per day, so
    ``b = ln(factor) / 86400`` (``"e"`` gives ``b = 1/86400``).
    """
    given = [x is not None for x in (b, half_life, decay_per_day)]
    if sum(given) > 1:
        raise CliError("give only one of --b, --half-life, --decay-per-day", EXIT_VALIDATION)
    if b is not None:
        return float(b)
    if half_life is not None:
        if not float(half_life) > 0:
            raise CliError("--half-life must be positive", EXIT_VALIDATION)
        return math.log(2.0) / float(half_life)
    if decay_per_day is not None:
        factor = math.e if str(decay_per_day).strip().lower() == "e" else float(decay_per_day)
        if not factor >= 1:
            raise CliError("--decay-per-day factor must be >= 1", EXIT_VALIDATION)
        return math.log(factor) / SECONDS_PER_DAY
    return 0.0


def sample_times(spec, T: float) -> list:
    """``"N"`` gives N equally spaced times on [0, T]; a comma list is taken literally."""
    if spec is None:
        return [0.0, T]
    text = str(spec).strip()
    if "," not in text:
        try:
            count = int(text)
        except ValueError:
            count = None
        if count is not None:
            if count < 1:
                raise CliError("--samples needs at least one sample", EXIT_VALIDATION)
            if count == 1:
                return [T]
            return [float(x) for x in np.linspace(0.0, T, count)]
    try:
        times = sorted({float(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise CliError(f"bad --samples value {spec!r}", EXIT_VALIDATION) from None
    if not times or times[0] < 0 or times[-1] > T:
        raise CliError(f"sample times must lie in [0, {T}]", EXIT_VALIDATION)
    return times


# ---------------------------------------------------------------------------
# Shared setup


def _load(opts):
    try:
        with open(opts["input"], encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(f"cannot read input: {exc}", EXIT_PARSE) from None
    try:
        g = ingest_events(text, mode=opts["mode"], n_hint=opts["n"], decay_rate=opts["c"] or 0.0)
    except IngestError as exc:
        raise CliError(f"parse error: {exc}", EXIT_PARSE) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return g, digest


def _setup(opts):
    g, digest = _load(opts)
    try:
        params = Params(a=opts["a"], b=opts["b"], p=opts["p"], c=opts["c"] or 0.0)
        config = IntegratorConfig(abs_tol=opts["abs_tol"], rel_tol=opts["rel_tol"])
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    check = validate_attenuation(g, params)
    if check.status is Status.INVALID:
        raise CliError(f"invalid attenuation: {check.detail}", EXIT_VALIDATION)
    if check.status is Status.WARNING:
        print(f"warning: {check.detail}", file=sys.stderr)
    T = opts["t_end"] if opts["t_end"] is not None else g.last_time()
    if not T > 0:
        raise CliError("final time is zero; pass --t-end", EXIT_VALIDATION)
    opts["t_end"] = float(T)
    times = sample_times(opts["samples"], T)
    opts["sample_times"] = times
    return g, params, config, digest, times


def _integrate(g, params, config, T, times, engine, observer):
    try:
        if engine == "receive":
            return integrate_receive(g, params, T, config, times, observer, store_samples=False)
        if engine == "exact":
            if g.mode is not Mode.CALL:
                raise CliError("the exact engine needs call data", EXIT_VALIDATION)
            return propagate_exact(g, params, T, times, observer, store_samples=False)
        return integrate_matrix(g, params, T, config, times, observer, store_samples=False)
    except IntegrationError as exc:
        raise CliError(f"integrator failure: {exc}", EXIT_INTEGRATOR) from None
    except SpectralConditionError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None


def _write(path, lines):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _manifest(command, opts, digest, result, wall):
    keys = ("input", "mode", "n", "a", "b", "p", "c", "abs_tol", "rel_tol", "t_end", "engine", "group", "dt", "seed")
    record = {k: opts.get(k) for k in keys}
    record.update(
        command=command,
        tool="dyncomm",
        version=__version__,
        input_sha256=digest,
        samples=opts["sample_times"],
        wall_clock_seconds=wall,
    )
    if result is not None:
        record.update(
            steps=result.stats.n_steps,
            rejected_steps=result.stats.n_rejected,
            pieces=result.stats.n_pieces,
        )
    path = os.path.join(opts["out"], "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_run(opts) -> int:
    start = time.perf_counter()
    g, params, config, digest, times = _setup(opts)
    engine = opts["engine"]
    labels = g.labels
    receive_only = engine == "receive"
    rows = ["t,node,receive" if receive_only else "t,node,broadcast,receive"]
    last = {}

    def observe(t, y):
        if receive_only:
            r = y
            for i in range(g.n):
                rows.append(f"{fmt(t)},{labels[i]},{fmt(r[i])}")
            last["r"] = r.copy()
        else:
            b, r = broadcast_receive(y)
            for i in range(g.n):
                rows.append(f"{fmt(t)},{labels[i]},{fmt(b[i])},{fmt(r[i])}")
            last["b"], last["r"] = b, r

    result = _integrate(g, params, config, opts["t_end"], times, engine, observe)
    os.makedirs(opts["out"], exist_ok=True)
    _write(os.path.join(opts["out"], "series.csv"), rows)

    if receive_only:
        r = result.state.U
        b = None
    else:
        b, r = broadcast_receive(result.state.U)
    bw = bandwidth(g) if g.mode is Mode.CALL else None
    key = r if receive_only else b
    out = ["rank,node,receive,bandwidth" if receive_only else "rank,node,broadcast,receive,bandwidth"]
    for pos, (i, _) in enumerate(rank(key), start=1):
        bw_s = fmt(bw[i]) if bw is not None else ""
        if receive_only:
            out.append(f"{pos},{labels[i]},{fmt(r[i])},{bw_s}")
        else:
            out.append(f"{pos},{labels[i]},{fmt(b[i])},{fmt(r[i])},{bw_s}")
    _write(os.path.join(opts["out"], "rank.csv"), out)
    _manifest("run", opts, digest, result, time.perf_counter() - start)
    return 0


def cmd_track_group(opts) -> int:
    start = time.perf_counter()
    g, params, config, digest, times = _setup(opts)
    if opts["engine"] == "receive":
        raise CliError("group tracking needs the full matrix (engine rk or exact)", EXIT_VALIDATION)
    try:
        G = [g.index_of(x.strip()) for x in str(opts["group"]).split(",") if x.strip()]
    except (KeyError, ValueError) as exc:
        raise CliError(f"unknown node in --group: {exc}", EXIT_VALIDATION) from None
    if len(set(G)) < 2:
        raise CliError("--group needs at least two distinct nodes", EXIT_VALIDATION)
    rows = ["t,value,flag"]

    def observe(t, U):
        value, flag = group_value(U, G)
        rows.append(f"{fmt(t)},{fmt(value)},{int(flag)}")

    result = _integrate(g, params, config, opts["t_end"], times, opts["engine"], observe)
    os.makedirs(opts["out"], exist_ok=True)
    _write(os.path.join(opts["out"], "group.csv"), rows)
    _manifest("track-group", opts, digest, result, time.perf_counter() - start)
    return 0


def cmd_compare(opts) -> int:
    start = time.perf_counter()
    g, params, config, digest, times = _setup(opts)
    if g.mode is not Mode.CALL:
        raise CliError("compare needs call data", EXIT_VALIDATION)
    try:
        dts = [float(x) for x in str(opts["dt"]).split(",") if x.strip()]
    except ValueError:
        raise CliError(f"bad --dt list {opts['dt']!r}", EXIT_VALIDATION) from None
    engine = "exact" if opts["engine"] == "exact" else "rk"
    try:
        table = refine_and_compare(g, params.a, params.b, opts["t_end"], dts, params.p, config, engine)
    except IntegrationError as exc:
        raise CliError(f"integrator failure: {exc}", EXIT_INTEGRATOR) from None
    except (ValueError, SpectralConditionError) as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from None
    os.makedirs(opts["out"], exist_ok=True)
    _write(os.path.join(opts["out"], "compare.csv"), ["dt,frobenius_rel_err"] + [f"{fmt(d)},{fmt(e)}" for d, e in table])
    _manifest("compare", opts, digest, None, time.perf_counter() - start)
    return 0


def cmd_synth(opts) -> int:
    fields = {}
    if opts.get("config"):
        try:
            with open(opts["config"], encoding="utf-8") as fh:
                fields.update(json.load(fh))
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read scenario config: {exc}", EXIT_PARSE) from None
    for key in ("n", "background_rate", "call_duration_mean"):
        if opts.get(key) is not None:
            fields[key] = opts[key]
    if opts.get("days") is not None:
        fields["horizon"] = opts["days"] * SECONDS_PER_DAY
    try:
        cfg = ScenarioConfig.from_json(fields)
        scenario = generate(cfg, opts["seed"])
    except (ScenarioError, TypeError) as exc:
        raise CliError(f"bad scenario: {exc}", EXIT_VALIDATION) from None
    os.makedirs(opts["out"], exist_ok=True)
    with open(os.path.join(opts["out"], "scenario.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(export_csv(scenario))
    with open(os.path.join(opts["out"], "truth.json"), "w", encoding="utf-8") as fh:
        fh.write(ground_truth_json(scenario))
    return 0


COMMANDS = {"run": cmd_run, "track-group": cmd_track_group, "compare": cmd_compare}


def cmd_replay(opts) -> int:
    try:
        with open(opts["manifest"], encoding="utf-8") as fh:
            record = json.load(fh)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read manifest: {exc}", EXIT_PARSE) from None
    command = record.get("command")
    if command not in COMMANDS:
        raise CliError(f"manifest has unknown command {command!r}", EXIT_VALIDATION)
    replay = {k: record.get(k) for k in ("input", "mode", "n", "a", "b", "p", "c", "abs_tol", "rel_tol", "t_end", "engine", "group", "dt", "seed")}
    replay["samples"] = ",".join(fmt(t) for t in record["samples"])
    replay["out"] = opts["out"]
    if opts.get("input"):
        replay["input"] = opts["input"]
    return COMMANDS[command](replay)


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyncomm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", required=True, help="event CSV")
    common.add_argument("--mode", choices=("call", "message"), default="call")
    common.add_argument("--n", type=int, default=None, help="minimum node count")
    common.add_argument("--a", type=float, required=True, help="edge attenuation")
    decay = common.add_mutually_exclusive_group()
    decay.add_argument("--b", type=float, default=None, help="temporal decay rate, 1/seconds")
    decay.add_argument("--half-life", type=float, default=None, help="walk half-life in seconds")
    decay.add_argument("--decay-per-day", default=None, help="weight loss factor per day, e.g. 'e'")
    common.add_argument("--p", type=int, default=5, help="log series order")
    common.add_argument("--c", type=float, default=None, help="message decay rate, 1/seconds")
    common.add_argument("--abs-tol", type=float, default=1e-4)
    common.add_argument("--rel-tol", type=float, default=1e-4)
    common.add_argument("--t-end", type=float, default=None, help="final time; default last event")
    common.add_argument("--samples", default=None, help="count N or comma-separated times")
    common.add_argument("--engine", choices=("rk", "exact", "receive"), default="rk")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=None, help="recorded in the manifest")

    sub.add_parser("run", parents=[common], help="centrality time series and ranking")
    p = sub.add_parser("track-group", parents=[common], help="group communicability trace")
    p.add_argument("--group", required=True, help="comma-separated node IDs")
    p = sub.add_parser("compare", parents=[common], help="discrete iteration vs ODE")
    p.add_argument("--dt", required=True, help="comma-separated step sizes")

    p = sub.add_parser("synth", help="generate a synthetic call scenario")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--config", default=None, help="JSON file of ScenarioConfig fields")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--days", type=float, default=None)
    p.add_argument("--background-rate", type=float, default=None)
    p.add_argument("--call-duration-mean", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--input", default=None, help="override the recorded input path")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = vars(args)
    try:
        if args.command == "synth":
            return cmd_synth(opts)
        if args.command == "replay":
            return cmd_replay(opts)
        opts["b"] = decay_rate(opts.pop("b"), opts.pop("half_life"), opts.pop("decay_per_day"))
        return COMMANDS[args.command](opts)
    except CliError as exc:
        print(f"dyncomm: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
