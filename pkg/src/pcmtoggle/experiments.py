"""Pulse protocols on the coupled device/circuit model and the sweeps built on them."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import materials as mat
from .circuit import READ_CONTACTS, WRITE_CONTACTS, CircuitConfig, CircuitState, solve_coupled
from .errors import ConfigError, SolverError
from .field_solvers import FieldState, PotentialSystem, cell_conductivity, coupled_step, initial_state
from .geometry import DeviceGrid, GeometrySpec, build_grid
from .kinetics import KineticsParams, cd_bounds_ok, make_hook, neck_state

EVENT_KINDS = ("write", "read", "idle")
VALID_READ_RATIO = 3.0
TRACE_COLUMNS = ["t_s", "i_write_A", "v_q_V", "v_qprime_V", "power_W", "neckA_state", "neckB_state"]


@dataclass(frozen=True)
class Event:
    kind: str
    start: float
    duration: float

    @property
    def end(self):
        return self.start + self.duration


@dataclass(frozen=True)
class PulseSchedule:
    events: tuple = ()

    def __post_init__(self):
        prev_end = -np.inf
        for ev in self.events:
            if ev.kind not in EVENT_KINDS:
                raise ConfigError(f"unknown event kind '{ev.kind}'")
            if not ev.duration > 0 or ev.start < 0:
                raise ConfigError("event durations must be positive and starts non-negative")
            if ev.start < prev_end - 1e-15:
                raise ConfigError("events must be sorted and non-overlapping")
            prev_end = ev.end

    @classmethod
    def toggle(cls, n_writes: int, write_width: float, cooldown: float, read_width: float = 5e-9,
               read_gap: float = 2e-9):
        """Initialization pulse plus ``n_writes`` writes, each followed by cool-down and a read."""
        events, t = [], 0.0
        for _ in range(n_writes + 1):
            events.append(Event("write", t, write_width))
            t += write_width + cooldown
            events.append(Event("read", t, read_width))
            t += read_width + read_gap
        return cls(tuple(events))


@dataclass
class SimConfig:
    """Everything a run needs besides the schedule."""

    table: mat.MaterialTable = field(default_factory=mat.MaterialTable)
    geometry: GeometrySpec = field(default_factory=GeometrySpec)
    dx: float = 1e-9
    thickness: float = 20e-9
    T_ambient: float = 300.0
    kinetics: KineticsParams = field(default_factory=KineticsParams)
    circuit: CircuitConfig = field(default_factory=CircuitConfig)
    dt: float = 10e-12
    linear_solver: str = "direct"

    def build(self) -> DeviceGrid:
        return build_grid(self.geometry, self.dx, self.thickness, self.T_ambient)


@dataclass
class TraceSet:
    t: list = field(default_factory=list)
    i_write: list = field(default_factory=list)
    v_q: list = field(default_factory=list)
    v_qprime: list = field(default_factory=list)
    power: list = field(default_factory=list)
    neck_a: list = field(default_factory=list)
    neck_b: list = field(default_factory=list)
    events: list = field(default_factory=list)  # per-event summaries
    snapshots: list = field(default_factory=list)  # (step, time, path)

    def append(self, t, i_write, v_q, v_qprime, power, necks):
        self.t.append(t)
        self.i_write.append(i_write)
        self.v_q.append(v_q)
        self.v_qprime.append(v_qprime)
        self.power.append(power)
        self.neck_a.append(necks["A"][0])
        self.neck_b.append(necks["B"][0])

    def __len__(self):
        return len(self.t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(self.t, self.i_write, self.v_q, self.v_qprime, self.power, self.neck_a, self.neck_b):
            w.writerow([repr(float(x)) for x in row[:5]] + list(row[5:]))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TraceSet":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != TRACE_COLUMNS:
            raise ConfigError("not a trace CSV: header mismatch")
        ts = cls()
        for r in rows[1:]:
            ts.t.append(float(r[0]))
            ts.i_write.append(float(r[1]))
            ts.v_q.append(float(r[2]))
            ts.v_qprime.append(float(r[3]))
            ts.power.append(float(r[4]))
            ts.neck_a.append(r[5])
            ts.neck_b.append(r[6])
        return ts


def amorphous_neck(necks: dict) -> Optional[str]:
    """The single amorphous neck, or None when zero or both are amorphous."""
    amo = [k for k, (label, _) in necks.items() if label == "amorphous"]
    return amo[0] if len(amo) == 1 else None


def classify_read(v_q: float, v_qprime: float) -> str:
    """``'Q-low'``, ``'Q-high'`` or ``'indeterminate'`` from a read's output pair."""
    lo, hi = sorted((abs(v_q), abs(v_qprime)))
    if hi <= 0 or (lo > 0 and hi / lo <= VALID_READ_RATIO):
        return "indeterminate"
    return "Q-low" if abs(v_q) < abs(v_qprime) else "Q-high"


@dataclass
class Audit:
    """Worst-case conservation figures seen over every coupled step of a run."""

    steps: int = 0
    energy_drift: float = 0.0  # |stored - joule + outflow| / joule
    charge_imbalance: float = 0.0  # |sum of terminal currents| / max |terminal current|
    bounds_ok: bool = True

    def update(self, state: FieldState, info):
        self.steps += 1
        b = info.balance
        if b.joule > 0:
            self.energy_drift = max(self.energy_drift, abs(b.residual) / b.joule)
        cur = np.array(list(info.currents.values()), dtype=float)
        if cur.size and np.max(np.abs(cur)) > 0:
            self.charge_imbalance = max(self.charge_imbalance, abs(cur.sum()) / np.max(np.abs(cur)))
        self.bounds_ok = self.bounds_ok and cd_bounds_ok(state)


class Simulation:
    """Owns one device state and advances it through write, read and idle steps."""

    def __init__(self, cfg: SimConfig, grid: Optional[DeviceGrid] = None, state: Optional[FieldState] = None,
                 check_bounds: bool = False):
        self.cfg = cfg
        self.grid = grid if grid is not None else cfg.build()
        self.state = state if state is not None else initial_state(self.grid)
        self.hook = make_hook(cfg.kinetics, cfg.table)
        self.check_bounds = check_bounds
        self.r_loads = None
        self.last_info = None
        self.audit = Audit()
        self.observer = None  # called as observer(sim) after every step

    def _drive(self, mode):
        grid, cfg = self.grid, self.cfg
        fixed = list(WRITE_CONTACTS if mode == "write" else READ_CONTACTS)
        r_loads = self.r_loads

        def drive(sigma):
            system = PotentialSystem(grid, sigma, fixed=fixed, method=cfg.linear_solver)
            cs = solve_coupled(cfg.circuit, system.terminal_currents, mode, r_loads=r_loads)
            vn, currents = system.solve(cs.contact_voltages)
            cs.contact_currents = {c: currents[c] for c in fixed}
            return system.cell_potential(vn), currents, cs
        return drive

    def _advance(self, mode, dt, depth=0):
        bc = None if mode == "idle" else self._drive(mode)
        try:
            return [coupled_step(self.grid, self.state, bc, dt, self.cfg.table, self.hook, self.cfg.linear_solver)]
        except SolverError:
            if depth >= 2:
                raise
        first = self._advance(mode, dt / 2, depth + 1)
        saved, self.state = self.state, first[-1][0]
        try:
            second = self._advance(mode, dt / 2, depth + 1)
        finally:
            self.state = saved
        return first + second

    def step(self, mode: str):
        """One coupled step in ``mode``; returns the sample tuple that was recorded."""
        results = self._advance(mode, self.cfg.dt)
        self.state, info = results[-1]
        self.last_info = info
        for s, inf in results:
            self.audit.update(s, inf)
        if self.check_bounds and not self.audit.bounds_ok:
            raise AssertionError(f"crystal-density bounds violated at t={self.state.time:.4e}")
        cs: CircuitState = info.circuit
        i_write = cs.i_write if (cs is not None and mode == "write") else 0.0
        v_q = cs.v_q if (cs is not None and mode == "read") else 0.0
        v_qp = cs.v_qprime if (cs is not None and mode == "read") else 0.0
        return self.state.time, i_write, v_q, v_qp, info.power

    def run(self, mode: str, duration: float, traces: Optional[TraceSet] = None):
        n = max(1, int(round(duration / self.cfg.dt)))
        for _ in range(n):
            t, iw, vq, vqp, p = self.step(mode)
            if traces is not None:
                traces.append(t, iw, vq, vqp, p, neck_state(self.grid, self.state))
            if self.observer is not None:
                self.observer(self)


def run_schedule(cfg: SimConfig, schedule: PulseSchedule, sim: Optional[Simulation] = None,
                 check_bounds: bool = False) -> TraceSet:
    """Execute a pulse schedule; one trace sample per coupled step.

    The returned TraceSet carries per-event summaries (neck states before and
    after, mean read voltages) and the final simulation as ``traces.sim``.
    """
    sim = sim or Simulation(cfg, check_bounds=check_bounds)
    traces = TraceSet()
    traces.append(sim.state.time, 0.0, 0.0, 0.0, 0.0, neck_state(sim.grid, sim.state))
    for k, ev in enumerate(schedule.events):
        try:
            gap = ev.start - (sim.state.time - traces.t[0])
            if gap > 0.5 * cfg.dt:
                sim.run("idle", gap, traces)
            before = neck_state(sim.grid, sim.state)
            i0 = len(traces)
            sim.run(ev.kind, ev.duration, traces)
        except SolverError as exc:
            raise SolverError(f"event {k} ({ev.kind}) failed: {exc}", exc.residual) from exc
        after = neck_state(sim.grid, sim.state)
        summary = {"index": k, "kind": ev.kind, "start": traces.t[i0 - 1], "end": traces.t[-1],
                   "slice": (i0, len(traces)), "necks_before": before, "necks_after": after}
        if ev.kind == "read":
            summary["v_q"] = float(np.mean(traces.v_q[i0:]))
            summary["v_qprime"] = float(np.mean(traces.v_qprime[i0:]))
            summary["read"] = classify_read(summary["v_q"], summary["v_qprime"])
        traces.events.append(summary)
    traces.sim = sim
    return traces


def energy_report(traces: TraceSet) -> list:
    """Energy (J) and mean power (W) of every event by trapezoidal integration.

    The window of an event is ``(start, end]``; its first sample is held back
    to ``start`` so that an event's energy never borrows power from the
    previous one.
    """
    t = np.asarray(traces.t)
    p = np.asarray(traces.power)
    rows = []
    for ev in traces.events:
        i0, i1 = ev["slice"]
        tt = np.concatenate([[ev["start"]], t[i0:i1]])
        pp = np.concatenate([[p[i0]], p[i0:i1]]) if i1 > i0 else np.zeros(1)
        energy = float(np.trapezoid(pp, tt)) if tt.size > 1 else 0.0
        dur = ev["end"] - ev["start"]
        rows.append({"index": ev["index"], "kind": ev["kind"], "energy_J": energy,
                     "mean_power_W": energy / dur if dur > 0 else 0.0})
    return rows


# -- sweeps ------------------------------------------------------------------

def post_write_checkpoint(cfg: SimConfig, write_width: float, n_writes: int = 2,
                          cooldown: float = 5e-9) -> Simulation:
    """Fresh device after ``n_writes`` pulses, stopped at the last pulse's termination.

    The default of two pulses (initialization plus one toggle) gives a state
    whose cell history is representative of steady toggling.
    """
    if n_writes < 1:
        raise ConfigError("n_writes must be at least 1")
    sim = Simulation(cfg)
    for k in range(n_writes):
        if k:
            sim.run("idle", cooldown)
        sim.run("write", write_width)
    return sim


def _read_pair(cfg: SimConfig, grid, state, read_duration, r_loads=None):
    sim = Simulation(cfg, grid=grid, state=state.copy())
    sim.r_loads = r_loads
    vq, vqp = [], []
    n = max(1, int(round(read_duration / cfg.dt)))
    for _ in range(n):
        _, _, a, b, _ = sim.step("read")
        vq.append(a)
        vqp.append(b)
    return float(np.mean(vq)), float(np.mean(vqp)), sim


def _high_low(necks, v_q, v_qprime):
    # Q sits on the neck-A read branch; the amorphous neck's branch reads low
    if amorphous_neck(necks) == "B":
        return v_q, v_qprime
    return v_qprime, v_q


def _map(fn, items, workers: int):
    # sweep points are independent and start from an immutable checkpoint
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def read_delay_sweep(cfg: SimConfig, delays, read_duration: float = 5e-9, write_width: float = 5e-9,
                     checkpoint: Optional[Simulation] = None, workers: int = 1):
    """Output ratio of reads started ``delay`` after the end of a write pulse.

    Every row restarts from the same post-write checkpoint. The high/low
    assignment follows the neck that is amorphous once the read has finished
    and the device has cooled.
    """
    delays = [float(d) for d in delays]
    if any(d <= 0 for d in delays) or delays != sorted(delays):
        raise ConfigError("delays must be positive and ascending")
    ck = checkpoint or post_write_checkpoint(cfg, write_width)

    def row(d):
        sim = Simulation(cfg, grid=ck.grid, state=ck.state.copy())
        sim.run("idle", d)
        vq, vqp, after = _read_pair(cfg, ck.grid, sim.state, read_duration)
        hi, lo = _high_low(neck_state(ck.grid, after.state), vq, vqp)
        return {"delay_s": d, "v_high_V": hi, "v_low_V": lo, "ratio": hi / lo if lo else float("inf")}
    return _map(row, delays, workers)


def cold_read(cfg: SimConfig, grid, state, r_loads=None):
    """Static read of ``state`` at ambient temperature, without time stepping.

    Serves as the long-delay limit of a transient read: the phase field is
    taken as is, every cell sits at ``T_ambient`` and no read self-heating is
    included.
    """
    cold = state.copy()
    cold.T[...] = grid.T_ambient
    cold.molten[...] = False
    sigma = cell_conductivity(grid, cold, cfg.table)
    system = PotentialSystem(grid, sigma, fixed=list(READ_CONTACTS), method="direct")
    cs = solve_coupled(cfg.circuit, system.terminal_currents, "read", r_loads=r_loads)
    hi, lo = _high_low(neck_state(grid, cold), cs.v_q, cs.v_qprime)
    return {"v_high_V": hi, "v_low_V": lo, "ratio": hi / lo if lo else float("inf")}


def load_sweep(cfg: SimConfig, r_loads, read_duration: float = 5e-9, write_width: float = 5e-9,
               cooldown: float = 10e-9, checkpoint: Optional[Simulation] = None, workers: int = 1):
    """Read outputs versus load resistance from one cooled post-write state."""
    r_loads = [float(r) for r in r_loads]
    if any(r <= 0 for r in r_loads):
        raise ConfigError("[circuit] r_load values must be positive")
    if checkpoint is None:
        checkpoint = post_write_checkpoint(cfg, write_width)
        checkpoint.run("idle", cooldown)
    necks = neck_state(checkpoint.grid, checkpoint.state)

    def row(r):
        vq, vqp, _ = _read_pair(cfg, checkpoint.grid, checkpoint.state, read_duration, (r, r))
        hi, lo = _high_low(necks, vq, vqp)
        return {"r_load_ohm": r, "v_high_V": hi, "v_low_V": lo, "ratio": hi / lo if lo else float("inf")}
    return _map(row, r_loads, workers)


def table_to_csv(rows: list) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()
