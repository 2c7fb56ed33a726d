"""Crystal-density rate model: melting, quench, growth from neighbours, nucleation.

Every GST cell carries two non-negative orientation components ``cd1`` and
``cd2`` whose sum is the crystalline fraction. The update is a synchronous
sweep: all rates are computed from the incoming field and applied at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import materials as mat
from .errors import InputDomainError
from .field_solvers import FieldState
from .geometry import GST, NECKS, DeviceGrid

MELT_SNAP = 1e-6  # |CD| below this in a molten cell is set to exactly 0
SEED_CD = 1.0 - 1e-9  # a neighbour seeds growth only once it is fully crystalline


@dataclass(frozen=True)
class KineticsParams:
    melt_time_constant: float = 0.1e-9
    rng_seed: int = 0
    nucleus_cd: float = 1.0

    def __post_init__(self):
        if not self.melt_time_constant > 0:
            raise InputDomainError("melt_time_constant must be positive")
        if not 0 < self.nucleus_cd <= 1:
            raise InputDomainError("nucleus_cd must lie in (0, 1]")


def nucleation_draws(seed: int, step: int, n: int):
    """Two uniform draws per cell from a counter-based generator keyed by (seed, step)."""
    bitgen = np.random.Philox(key=int(seed) & (2**64 - 1), counter=[int(step), 0, 0, 0])
    u = np.random.Generator(bitgen).random((2, n))
    return u[0], u[1]


def _dominant_neighbour(score, cd1, cd2):
    """Largest 4-neighbour ``score`` per cell, with that neighbour's cd components."""
    ny, nx = score.shape
    best = np.zeros_like(score)
    b1 = np.zeros_like(score)
    b2 = np.zeros_like(score)
    s_p, c1_p, c2_p = np.pad(score, 1), np.pad(cd1, 1), np.pad(cd2, 1)
    for dj, di in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        sl = (slice(1 + dj, 1 + dj + ny), slice(1 + di, 1 + di + nx))
        cand = s_p[sl]
        better = cand > best
        best = np.where(better, cand, best)
        b1 = np.where(better, c1_p[sl], b1)
        b2 = np.where(better, c2_p[sl], b2)
    return best, b1, b2


def _add_oriented(cd1, cd2, cells, gain, b1, b2):
    share = np.divide(b1, b1 + b2, out=np.zeros_like(b1), where=(b1 + b2) > 0)
    cd1[cells] += gain[cells] * share[cells]
    cd2[cells] += gain[cells] * (1.0 - share[cells])


def update_phase(grid: DeviceGrid, state: FieldState, params: KineticsParams, dt: float,
                 table: mat.MaterialTable) -> FieldState:
    """Advance the crystal-density field by ``dt`` at the state's (new) temperature.

    * ``T >= T_melt``: the cell is molten and ``|CD|`` decays as ``exp(-dt/tau)``.
    * ``T_crys <= T < T_melt``: ``|CD|`` grows at ``v_g(T)/dx`` times the
      crystalline fraction of the dominant fully crystalline solid neighbour,
      whose orientation it inherits, so a front crosses one cell in
      ``dx/v_g``; nucleation may seed ``nucleus_cd``.
    * ``T < T_crys``: frozen. A melt that gets here with ``|CD| ~ 0`` is amorphous.
    """
    if not dt > 0:
        raise InputDomainError("dt must be positive")
    gst = grid.mask(GST)
    T = state.T
    cd1, cd2 = state.cd1.copy(), state.cd2.copy()

    melting = gst & (T >= table.T_melt)
    molten = melting.copy()
    decay = np.exp(-dt / params.melt_time_constant)
    cd1[melting] *= decay
    cd2[melting] *= decay
    snap = melting & (cd1 + cd2 < MELT_SNAP)
    cd1[snap] = 0.0
    cd2[snap] = 0.0

    window = gst & ~molten & (T >= table.T_crys)
    if window.any():
        solid = gst & ~state.molten & ~molten
        norm = state.cd1 + state.cd2
        seeds = solid & (norm >= SEED_CD)
        best, b1, b2 = _dominant_neighbour(np.where(seeds, norm, 0.0), state.cd1, state.cd2)
        fill_rate = np.zeros(grid.shape)  # 1/s
        fill_rate[window] = mat.growth_velocity(T[window], table) / grid.dx
        room = np.maximum(1.0 - norm, 0.0)
        gain = np.minimum(fill_rate * best * dt, room)
        grow = window & (gain > 0) & (best > 0)
        _add_oriented(cd1, cd2, grow, gain, b1, b2)

        # a cell that fills part-way through the step seeds its neighbours for
        # the rest of it, so the front speed does not depend on dt
        done = grow & (norm < SEED_CD) & (norm + gain >= SEED_CD)
        spare = np.zeros(grid.shape)
        t_fill = np.divide(room, fill_rate * best, out=np.full(grid.shape, dt), where=done)
        spare[done] = np.clip(1.0 - t_fill[done] / dt, 0.0, 1.0)
        late, l1, l2 = _dominant_neighbour(spare, cd1, cd2)
        late_gain = np.minimum(fill_rate * late * dt, np.maximum(1.0 - (cd1 + cd2), 0.0))
        relay = window & ~grow & (late > 0) & (late_gain > 0)
        _add_oriented(cd1, cd2, relay, late_gain, l1, l2)

        rate = np.zeros(grid.shape)
        rate[window] = mat.nucleation_rate(T[window], table)
        prob = (rate * grid.cell_volume * dt).ravel()
        u_event, u_orient = nucleation_draws(params.rng_seed, state.step, grid.n_cells)
        hit = (u_event < prob).reshape(grid.shape) & window
        short = hit & (cd1 + cd2 < params.nucleus_cd)
        if short.any():
            add = params.nucleus_cd - (cd1 + cd2)
            first = (u_orient.reshape(grid.shape) < 0.5)
            cd1[short & first] += add[short & first]
            cd2[short & ~first] += add[short & ~first]

    cd1, cd2 = clamp_cd(cd1, cd2)
    return FieldState(state.T, state.V, cd1, cd2, molten, state.time, state.step)


def clamp_cd(cd1, cd2):
    cd1 = np.maximum(cd1, 0.0)
    cd2 = np.maximum(cd2, 0.0)
    s = cd1 + cd2
    over = s > 1.0
    if over.any():
        cd1 = np.divide(cd1, s, out=cd1.copy(), where=over)
        cd2 = np.divide(cd2, s, out=cd2.copy(), where=over)
    return cd1, cd2


def cd_bounds_ok(state: FieldState, atol: float = 1e-12) -> bool:
    return bool((state.cd1 >= 0).all() and (state.cd2 >= 0).all()
                and (state.cd1 + state.cd2 <= 1.0 + atol).all())


def neck_state(grid: DeviceGrid, state: FieldState) -> dict:
    """Classify each neck as crystalline, amorphous, molten or mixed.

    Returns ``{neck: (label, mean_cd)}``.
    """
    out = {}
    for name in NECKS:
        m = grid.neck_mask(name)
        mean_cd = float(state.cd_norm[m].mean())
        if state.molten[m].any():
            label = "molten"
        elif mean_cd < 0.3:
            label = "amorphous"
        elif mean_cd > 0.7:
            label = "crystalline"
        else:
            label = "mixed"
        out[name] = (label, mean_cd)
    return out


def make_hook(params: KineticsParams, table: mat.MaterialTable):
    """Bind kinetics parameters into a ``coupled_step`` phase hook."""
    def hook(grid, state, dt):
        return update_phase(grid, state, params, dt, table)
    return hook
