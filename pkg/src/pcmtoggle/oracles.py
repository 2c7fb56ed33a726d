"""Analytic checks of the field solvers.

Each check returns an ``OracleResult`` carrying the measured figure, the limit it
is held to and a pass flag. ``run_oracles`` runs the full suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import materials as mat
from .field_solvers import PotentialSystem, initial_state, joule_source, step_heat
from .geometry import ELECTRODE, GST, DeviceGrid

SLAB_LENGTH = 40e-9
SLAB_WIDTH = 10e-9
SLAB_THICKNESS = 20e-9
SLAB_SIGMA = 1.0e4
CONTACT_SIGMA = 1.0e5
# the slab error is first order with an exactly linear leading term, so the
# refinement ratio is 2 up to floating-point noise
RATIO_ROUNDOFF = 1e-9


@dataclass
class OracleResult:
    name: str
    value: float
    limit: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name:<28s} value={self.value:.4g}  limit={self.limit:.4g}  {self.detail}"


def slab_grid(dx: float, length=SLAB_LENGTH, width=SLAB_WIDTH, thickness=SLAB_THICKNESS) -> DeviceGrid:
    """Uniform slab with one full-edge contact column on each end, outside the slab length."""
    n_len = int(round(length / dx))
    ny = int(round(width / dx))
    nx = n_len + 2
    material = np.full((ny, nx), GST, dtype=np.int8)
    material[:, 0] = ELECTRODE
    material[:, -1] = ELECTRODE
    rows = np.arange(ny)
    left, right = rows * nx, rows * nx + nx - 1
    return DeviceGrid(nx=nx, ny=ny, dx=dx, thickness=thickness, cell_material=material,
                      contact_cells={"L": left, "R": right},
                      thermal_anchor_cells=np.concatenate([left, right]))


def slab_resistance(dx: float, sigma=SLAB_SIGMA, contact_sigma=CONTACT_SIGMA):
    """Numerical and analytic resistance of the slab at 1 V, plus the solve."""
    grid = slab_grid(dx)
    s = np.where(grid.cell_material == ELECTRODE, contact_sigma, sigma)
    system = PotentialSystem(grid, s, fixed=["L", "R"], method="direct")
    vn, currents = system.solve({"L": 0.0, "R": 1.0})
    r_num = 1.0 / currents["R"]
    r_ana = SLAB_LENGTH / (sigma * SLAB_WIDTH * SLAB_THICKNESS)
    return r_num, r_ana, grid, s, system.cell_potential(vn), currents


def check_slab(dx: float = 1e-9):
    r1, ra, *_ = slab_resistance(dx)
    r2, _, *_ = slab_resistance(dx / 2)
    e1, e2 = abs(r1 - ra) / ra, abs(r2 - ra) / ra
    ratio = e1 / e2 if e2 > 0 else float("inf")
    return [
        OracleResult("slab resistance", e1, 0.01, e1 <= 0.01, f"R={r1:.6g} ohm analytic={ra:.6g} ohm dx={dx:.3g}"),
        OracleResult("slab resistance dx/2", e2, 0.01, e2 <= 0.01, f"R={r2:.6g} ohm dx={dx / 2:.3g}"),
        OracleResult("slab refinement ratio", ratio, 2.0, ratio >= 2.0 * (1.0 - RATIO_ROUNDOFF),
                     "error(dx)/error(dx/2)"),
    ]


def check_slab_power(dx: float = 1e-9):
    r_num, _, grid, s, V, currents = slab_resistance(dx)
    _, total = joule_source(grid, V, s)
    terminal = sum(currents[c] * v for c, v in (("L", 0.0), ("R", 1.0)))
    err = abs(total - terminal) / terminal
    return OracleResult("joule vs terminal power", err, 0.01, err <= 0.01,
                        f"joule={total:.6g} W  V*I={terminal:.6g} W  V^2/R={1.0 / r_num:.6g} W")


def check_heated_strip(n: int = 40, dx: float = 1e-9, rise: float = 100.0, table=None):
    """Uniformly heated crystalline strip with both ends anchored, stepped to steady state."""
    table = table or mat.MaterialTable()
    nx, ny = 2, n + 2
    material = np.full((ny, nx), GST, dtype=np.int8)
    anchors = np.concatenate([np.arange(nx), (ny - 1) * nx + np.arange(nx)])
    grid = DeviceGrid(nx=nx, ny=ny, dx=dx, thickness=20e-9, cell_material=material,
                      contact_cells={}, thermal_anchor_cells=anchors)
    kappa = table.crystalline.kappa
    span = (ny - 1) * dx  # anchor centre to anchor centre
    q = 8.0 * kappa * rise / span ** 2
    joule = np.full(grid.shape, q)
    joule.flat[anchors] = 0.0
    state = initial_state(grid)
    for _ in range(1000):
        T_new, _ = step_heat(grid, state, joule, 1e-9, table, method="direct")
        done = np.max(np.abs(T_new - state.T)) < 1e-9
        state.T = T_new
        if done:
            break
    y = (np.arange(ny) * dx)[:, None]
    exact = grid.T_ambient + q * (span * y - y ** 2) / (2.0 * kappa)
    err = float(np.max(np.abs(state.T - exact)) / rise)
    return OracleResult("1D heated strip", err, 0.02, err <= 0.02,
                        f"peak rise {state.T.max() - grid.T_ambient:.4g} K vs {rise:.4g} K")


def check_device_conservation(write_steps: int = 100, read_steps: int = 50, cfg=None):
    """Energy balance, charge conservation and the maximum principle on the reference device."""
    from .experiments import SimConfig, Simulation

    sim = Simulation(cfg or SimConfig())
    t_min = np.inf
    for mode, n in (("write", write_steps), ("idle", read_steps), ("read", read_steps)):
        for _ in range(n):
            sim.step(mode)
            t_min = min(t_min, float(sim.state.T.min()))
    a = sim.audit
    floor = sim.grid.T_ambient - 1e-9
    return [
        OracleResult("energy balance drift", a.energy_drift, 0.01, a.energy_drift < 0.01,
                     f"worst |residual|/joule over {a.steps} steps"),
        OracleResult("charge conservation", a.charge_imbalance, 1e-9, a.charge_imbalance <= 1e-9,
                     "worst |sum I|/max|I|"),
        OracleResult("maximum principle", t_min, floor, t_min >= floor, "min T over the run (K)"),
    ]


def run_oracles(quick: bool = False):
    results = check_slab()
    results.append(check_slab_power())
    results.append(check_heated_strip())
    results += check_device_conservation(*((20, 10) if quick else (100, 50)))
    return results
