"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 oracle
check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import RunConfig, defaults, parse_config, write_echo
from .errors import ConfigError, PCMError, SolverError
from .experiments import (Simulation, TraceSet, amorphous_neck, energy_report, load_sweep,
                          post_write_checkpoint, read_delay_sweep, run_schedule, table_to_csv)
from .oracles import run_oracles
from .snapshots import write_snapshot

EXIT_CONFIG, EXIT_SOLVER, EXIT_ORACLE = 2, 3, 4
EVENT_COLUMNS = ["index", "kind", "start_s", "end_s", "neckA_after", "neckB_after",
                 "v_q_V", "v_qprime_V", "read", "energy_J", "mean_power_W"]


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values expects comma-separated numbers, got {text!r}") from None


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key = value file; omitted keys take defaults")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, help="worker threads for sweeps and BLAS")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--dt", type=float, help="overrides [run] dt (s)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")

    p = argparse.ArgumentParser(prog="pcmtoggle", description="Two-neck phase-change toggle flip-flop simulator")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the configured pulse schedule and write traces")
    sd = sub.add_parser("sweep-delay", parents=[common], help="read output ratio versus delay after a write")
    sd.add_argument("--values", help="comma-separated delays (s); default [schedule] delays")
    sl = sub.add_parser("sweep-load", parents=[common], help="read outputs versus load resistance")
    sl.add_argument("--values", help="comma-separated loads (ohm); default [circuit] r_load_values")
    orc = sub.add_parser("oracle", help="analytic solver checks; exit 4 if any fails")
    orc.add_argument("--quick", action="store_true", help="shorter device conservation run")
    rep = sub.add_parser("report", help="summarize the output directory of a run")
    rep.add_argument("--dir", default="out", help="directory written by 'run' (default: out)")
    rep.add_argument("--machine", action="store_true", help="key=value lines instead of a table")
    return p


def resolve_config(args) -> RunConfig:
    """Defaults, then the file, then command-line flags."""
    cfg = parse_config(args.config) if args.config else defaults()
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for flag, key in (("seed", "run.seed"), ("dt", "run.dt"), ("threads", "run.threads")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = repr(value)
    return cfg.with_overrides(overrides) if overrides else cfg


def _events_csv(traces: TraceSet) -> str:
    energies = {r["index"]: r for r in energy_report(traces)}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVENT_COLUMNS)
    for ev in traces.events:
        e = energies[ev["index"]]
        after = ev["necks_after"]
        w.writerow([ev["index"], ev["kind"], repr(ev["start"]), repr(ev["end"]), after["A"][0], after["B"][0],
                    repr(ev.get("v_q", 0.0)), repr(ev.get("v_qprime", 0.0)), ev.get("read", ""),
                    repr(e["energy_J"]), repr(e["mean_power_W"])])
    return buf.getvalue()


def cmd_run(cfg: RunConfig, out: Path):
    sim_cfg = cfg.sim_config()
    sim = Simulation(sim_cfg)
    every = cfg.snapshot_every
    quantities = cfg.get("output", "snapshot_quantities")
    if every:
        snap_dir = out / "snapshots"

        def observer(s):
            if s.state.step % every == 0:
                for q in quantities:
                    write_snapshot(s.state, q, snap_dir, stem=f"step{s.state.step:07d}")
        sim.observer = observer
    traces = run_schedule(sim_cfg, cfg.schedule(), sim=sim)
    (out / cfg.get("output", "trace_file")).write_text(traces.to_csv())
    (out / "events.csv").write_text(_events_csv(traces))
    for ev in traces.events:
        after = ev["necks_after"]
        line = f"{ev['index']:3d} {ev['kind']:<5s} A={after['A'][0]:<11s} B={after['B'][0]:<11s}"
        if ev["kind"] == "read":
            line += f" v_q={ev['v_q']:.4g} V v_qprime={ev['v_qprime']:.4g} V {ev['read']}"
        print(line)
    return 0


def cmd_sweep_delay(cfg: RunConfig, out: Path, values, workers: int):
    sim_cfg = cfg.sim_config()
    s = cfg.section("schedule")
    delays = _floats(values) if values else list(s["delays"])
    ck = post_write_checkpoint(sim_cfg, s["write_width"], cooldown=s["cooldown"])
    rows = read_delay_sweep(sim_cfg, delays, s["read_width"], checkpoint=ck, workers=workers)
    text = table_to_csv(rows)
    (out / "sweep_delay.csv").write_text(text)
    print(text, end="")
    return 0


def cmd_sweep_load(cfg: RunConfig, out: Path, values, workers: int):
    sim_cfg = cfg.sim_config()
    s = cfg.section("schedule")
    loads = _floats(values) if values else list(cfg.get("circuit", "r_load_values"))
    if not loads or any(r <= 0 for r in loads):
        raise ConfigError("[circuit] r_load values must be positive")
    ck = post_write_checkpoint(sim_cfg, s["write_width"], cooldown=s["cooldown"])
    ck.run("idle", 2 * s["cooldown"])
    rows = load_sweep(sim_cfg, loads, s["read_width"], checkpoint=ck, workers=workers)
    text = table_to_csv(rows)
    (out / "sweep_load.csv").write_text(text)
    print(text, end="")
    return 0


def cmd_oracle(quick: bool):
    results = run_oracles(quick=quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_ORACLE if failed else 0


def summarize(trace_text: str, events_text: str) -> dict:
    """Toggle count, energies and read margins of a finished run."""
    traces = TraceSet.from_csv(trace_text)
    events = list(csv.DictReader(io.StringIO(events_text)))
    writes = [e for e in events if e["kind"] == "write"]
    reads = [e for e in events if e["kind"] == "read"]
    amorphous = []
    for e in reads:
        necks = {"A": (e["neckA_after"], 0.0), "B": (e["neckB_after"], 0.0)}
        amorphous.append(amorphous_neck(necks))
    toggles = sum(1 for a, b in zip(amorphous, amorphous[1:]) if a and b and a != b)
    margins = []
    for e in reads:
        lo, hi = sorted((abs(float(e["v_q_V"])), abs(float(e["v_qprime_V"]))))
        margins.append(hi / lo if lo > 0 else float("inf"))

    def mean(xs):
        return sum(xs) / len(xs) if xs else 0.0
    return {
        "samples": len(traces),
        "duration_s": traces.t[-1] - traces.t[0] if len(traces) else 0.0,
        "write_events": len(writes),
        "read_events": len(reads),
        "toggles": toggles,
        "amorphous_sequence": "".join(a or "-" for a in amorphous),
        "read_classes": ",".join(e["read"] for e in reads),
        "write_energy_J": sum(float(e["energy_J"]) for e in writes),
        "write_mean_power_W": mean([float(e["mean_power_W"]) for e in writes]),
        "read_mean_power_W": mean([float(e["mean_power_W"]) for e in reads]),
        "min_read_ratio": min(margins) if margins else 0.0,
    }


def cmd_report(directory: Path, machine: bool):
    trace_path = directory / "trace.csv"
    echo = directory / "effective.cfg"
    if echo.exists():
        trace_path = directory / parse_config(echo).get("output", "trace_file")
    try:
        trace_text, events_text = trace_path.read_text(), (directory / "events.csv").read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read run output in {directory}: {exc.strerror}: {exc.filename}") from None
    summary = summarize(trace_text, events_text)
    width = max(len(k) for k in summary)
    for k, v in summary.items():
        text = f"{v:.6g}" if isinstance(v, float) else str(v)
        print(f"{k}={text}" if machine else f"{k:<{width}s}  {text}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "oracle":
            return cmd_oracle(args.quick)
        if args.command == "report":
            return cmd_report(Path(args.dir), args.machine)
        cfg = resolve_config(args)
        out = Path(args.out)
        write_echo(cfg, out)
        threads = cfg.get("run", "threads")
        with threadpool_limits(limits=1 if cfg.deterministic else threads):
            if args.command == "run":
                return cmd_run(cfg, out)
            if args.command == "sweep-delay":
                return cmd_sweep_delay(cfg, out, args.values, threads)
            return cmd_sweep_load(cfg, out, args.values, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        extra = f" (residual {exc.residual:.3g})" if getattr(exc, "residual", None) is not None else ""
        print(f"solver failure: {exc}{extra}", file=sys.stderr)
        return EXIT_SOLVER
    except PCMError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
