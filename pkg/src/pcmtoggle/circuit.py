"""Lumped read/write circuit around the six device terminals.

Write mode::

    v_write_supply --[write FET, gate v_gate_write]-- W1 ==device== W2, W3 -> ground

Read mode::

    v_read_supply -- R1 ==device== R2 --[read FET Q ]-- Q  --[r_load]-- ground
                                   R3 --[read FET Q']-- Q' --[r_load]-- ground

Contacts not named in a mode float. The device enters only through an oracle
mapping contact voltages to the currents flowing into the device.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .errors import ConfigError, CouplingError

WRITE_CONTACTS = ("W1", "W2", "W3")
READ_CONTACTS = ("R1", "R2", "R3")


@dataclass(frozen=True)
class FetParams:
    v_threshold: float = 0.4
    transconductance_factor: float = 3e-4  # A/V^2

    def __post_init__(self):
        if not self.transconductance_factor > 0:
            raise ConfigError("transconductance_factor must be positive")


@dataclass(frozen=True)
class CircuitConfig:
    v_write_supply: float = 3.0
    v_gate_write: float = 3.0
    v_read_supply: float = 0.1
    v_gate_read: float = 0.5
    r_load: float = 1e4
    write_fet: FetParams = field(default_factory=FetParams)
    read_fet: FetParams = field(default_factory=lambda: FetParams(0.2, 1e-3))

    def __post_init__(self):
        if not self.r_load > 0:
            raise ConfigError("[circuit] r_load must be positive")
        for name in ("v_write_supply", "v_gate_write", "v_read_supply", "v_gate_read"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"[circuit] {name} must be finite")


@dataclass
class CircuitState:
    mode: str
    v_q: float = 0.0
    v_qprime: float = 0.0
    i_write: float = 0.0
    contact_voltages: Dict[str, float] = field(default_factory=dict)
    contact_currents: Dict[str, float] = field(default_factory=dict)
    iterations: int = 0
    mismatch: float = 0.0


def fet_current(v_gs, v_ds, p: FetParams):
    """Square-law n-FET drain current (A), drain to source.

    Cut off at or below threshold; triode ``k (v_ov v_ds - v_ds^2/2)`` below
    ``v_ds = v_ov``; saturation ``k v_ov^2 / 2`` above. Negative ``v_ds``
    swaps drain and source.
    """
    if v_ds < 0:
        return -fet_current(v_gs - v_ds, -v_ds, p)
    v_ov = v_gs - p.v_threshold
    if v_ov <= 0:
        return 0.0
    k = p.transconductance_factor
    if v_ds < v_ov:
        return k * (v_ov * v_ds - 0.5 * v_ds * v_ds)
    return 0.5 * k * v_ov * v_ov


DeviceOracle = Callable[[Dict[str, float]], Dict[str, float]]


def _residual_write(x, cfg, device):
    v1 = x[0]
    dev = device({"W1": v1, "W2": 0.0, "W3": 0.0})
    i_fet = fet_current(cfg.v_gate_write - v1, cfg.v_write_supply - v1, cfg.write_fet)
    return np.array([i_fet - dev["W1"]]), dev, np.array([abs(i_fet)])


def _residual_read(x, cfg, device, r_loads):
    v2, v3, vq, vqp = x
    dev = device({"R1": cfg.v_read_supply, "R2": v2, "R3": v3})
    iq = fet_current(cfg.v_gate_read - vq, v2 - vq, cfg.read_fet)
    iqp = fet_current(cfg.v_gate_read - vqp, v3 - vqp, cfg.read_fet)
    # device currents are positive into the device; R2/R3 deliver current out
    res = np.array([-dev["R2"] - iq, -dev["R3"] - iqp, iq - vq / r_loads[0], iqp - vqp / r_loads[1]])
    return res, dev, np.abs([iq, iqp, iq, iqp])


def solve_coupled(cfg: CircuitConfig, device: DeviceOracle, mode: str, r_loads=None,
                  max_iter: int = 100, abs_tol: float = 1e-12, rel_tol: float = 1e-8,
                  max_step: float = 0.25) -> CircuitState:
    """Damped Newton solve of the circuit with the device as a current oracle.

    Converged when every node's current mismatch is below ``abs_tol`` or below
    ``rel_tol`` times the branch current at that node.
    """
    if mode == "write":
        x = np.zeros(1)
        fun = lambda z: _residual_write(z, cfg, device)
    elif mode == "read":
        r_loads = (cfg.r_load, cfg.r_load) if r_loads is None else tuple(r_loads)
        x = np.zeros(4)
        fun = lambda z: _residual_read(z, cfg, device, r_loads)
    else:
        raise ConfigError(f"unknown circuit mode '{mode}'")

    h = 1e-7
    for it in range(max_iter + 1):
        r, dev, branch = fun(x)
        mismatch = float(np.max(np.abs(r)))
        if np.all((np.abs(r) < abs_tol) | (np.abs(r) < rel_tol * branch)):
            break
        if it == max_iter:
            raise CouplingError(f"{mode} circuit did not converge in {max_iter} iterations", mismatch)
        J = np.empty((x.size, x.size))
        for j in range(x.size):
            xp = x.copy()
            xp[j] += h
            J[:, j] = (fun(xp)[0] - r) / h
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J, -r, rcond=None)[0]
        big = np.max(np.abs(dx))
        if big > max_step:
            dx *= max_step / big
        x = x + dx

    if mode == "write":
        volts = {"W1": float(x[0]), "W2": 0.0, "W3": 0.0}
        return CircuitState("write", i_write=dev["W1"], contact_voltages=volts,
                            contact_currents=dict(dev), iterations=it, mismatch=mismatch)
    volts = {"R1": cfg.v_read_supply, "R2": float(x[0]), "R3": float(x[1])}
    return CircuitState("read", v_q=float(x[2]), v_qprime=float(x[3]), contact_voltages=volts,
                        contact_currents=dict(dev), iterations=it, mismatch=mismatch)


def linear_device(conductances: Dict[tuple, float]) -> DeviceOracle:
    """Oracle for a network of resistors between contacts, ``{(a, b): G}``."""
    def device(volts):
        out = {c: 0.0 for c in volts}
        for (a, b), g in conductances.items():
            i = g * (volts.get(a, 0.0) - volts.get(b, 0.0))
            out[a] = out.get(a, 0.0) + i
            out[b] = out.get(b, 0.0) - i
        return {c: out[c] for c in volts}
    return device
