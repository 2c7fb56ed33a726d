"""Current continuity and heat transfer on the device grid.

Both equations use the same cell-centred finite-volume stencil with
harmonic-mean face coefficients. Thickness enters only as a scale factor:
a face between two cells has electrical conductance ``sigma_h * thickness``
and thermal conductance ``kappa_h * thickness`` (the ``dx`` of the face
area cancels the ``dx`` of the centre distance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from . import materials as mat
from .errors import ConfigError, SolverError
from .geometry import ELECTRODE, GST, DeviceGrid

RESIDUAL_TOL = 1e-8


@dataclass
class FieldState:
    T: np.ndarray
    V: np.ndarray
    cd1: np.ndarray
    cd2: np.ndarray
    molten: np.ndarray
    time: float = 0.0
    step: int = 0

    @property
    def cd_norm(self):
        return self.cd1 + self.cd2

    def copy(self):
        return FieldState(self.T.copy(), self.V.copy(), self.cd1.copy(), self.cd2.copy(),
                          self.molten.copy(), self.time, self.step)


def initial_state(grid: DeviceGrid) -> FieldState:
    """Fully crystalline device (single orientation) at ambient temperature."""
    gst = grid.mask(GST)
    return FieldState(
        T=np.full(grid.shape, float(grid.T_ambient)),
        V=np.zeros(grid.shape),
        cd1=gst.astype(float),
        cd2=np.zeros(grid.shape),
        molten=np.zeros(grid.shape, dtype=bool),
    )


@dataclass
class ContactBC:
    """Per-contact electrical condition; contacts not listed are floating."""

    fixed_potential: dict = field(default_factory=dict)
    fixed_current: dict = field(default_factory=dict)

    def validate(self, grid: DeviceGrid):
        for name in list(self.fixed_potential) + list(self.fixed_current):
            if name not in grid.contact_cells:
                raise ConfigError(f"unknown contact '{name}'")
        both = set(self.fixed_potential) & set(self.fixed_current)
        if both:
            raise ConfigError(f"contacts {sorted(both)} have both potential and current fixed")
        if not self.fixed_potential:
            raise ConfigError("every contact is floating or current-driven; the potential is undefined")


# -- stencil -----------------------------------------------------------------

_FACE_CACHE = {}


def faces(grid: DeviceGrid):
    """Index pairs ``(p, q)`` of all interior faces, flat cell indices."""
    key = (grid.nx, grid.ny)
    if key not in _FACE_CACHE:
        idx = np.arange(grid.n_cells).reshape(grid.shape)
        p = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        q = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        _FACE_CACHE[key] = (p, q)
    return _FACE_CACHE[key]


def harmonic(a, b):
    s = a + b
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, 2.0 * a * b / np.where(s > 0, s, 1.0), 0.0)


def _laplacian(n, p, q, g):
    rows = np.concatenate([p, q, p, q])
    cols = np.concatenate([p, q, q, p])
    vals = np.concatenate([g, g, -g, -g])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


class _Pattern:
    """Fixed CSR sparsity pattern; values are scattered in with ``bincount``."""

    def __init__(self, n, rows, cols):
        self.n = n
        key = rows.astype(np.int64) * n + cols
        uniq, self.inverse = np.unique(key, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n, np.arange(n + 1)).astype(np.int32)
        self.nnz = uniq.size

    def matrix(self, vals):
        data = np.bincount(self.inverse, weights=vals, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


def _factor(A):
    return spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                     options=dict(SymmetricMode=True))


def _linear_solve(A, b, method="direct", x0=None):
    """Solve an SPD system; returns the solution after checking the relative residual."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    if method == "direct":
        x = _factor(A).solve(b)
    elif method == "cg":
        M = sp.diags(1.0 / A.diagonal())
        maxiter = int(50 * math.sqrt(A.shape[0])) + 1
        x, info = spla.cg(A, b, x0=x0, rtol=RESIDUAL_TOL, atol=0.0, M=M, maxiter=maxiter)
    else:
        raise ConfigError(f"unknown linear solver '{method}'")
    res = np.linalg.norm(b - A @ x) / bnorm
    if not res <= RESIDUAL_TOL:
        raise SolverError("linear solve did not reach the residual tolerance", res)
    return x


# -- conductivity ------------------------------------------------------------

def cell_conductivity(grid: DeviceGrid, state: FieldState, table: mat.MaterialTable, T=None):
    """Electrical conductivity of every cell (0 for insulator)."""
    T = state.T if T is None else T
    gst = grid.mask(GST)
    sigma = np.zeros(grid.shape)
    cd = np.clip(state.cd_norm[gst], 0.0, 1.0)
    sigma[gst] = mat.conductivity(cd, T[gst], state.molten[gst], table) * grid.sigma_scale[gst]
    sigma[grid.mask(ELECTRODE)] = table.electrode_sigma
    return sigma


def cell_thermal(grid: DeviceGrid, state: FieldState, table: mat.MaterialTable):
    """Thermal conductivity and effective heat capacity of every cell."""
    gst = grid.mask(GST)
    ele = grid.mask(ELECTRODE)
    kappa = np.full(grid.shape, table.insulator_kappa)
    cap = np.full(grid.shape, table.insulator_c_vol)
    kappa[ele] = table.electrode_kappa
    cap[ele] = table.electrode_c_vol
    cd = np.clip(state.cd_norm[gst], 0.0, 1.0)
    kappa[gst] = mat.gst_kappa(cd, state.molten[gst], table)
    cap[gst] = mat.gst_heat_capacity(state.T[gst], cd, state.molten[gst], table)
    return kappa, cap


# -- electrical --------------------------------------------------------------

class _ElectricalTopology:
    """Node numbering and matrix patterns for one grid and one choice of fixed contacts."""

    def __init__(self, grid: DeviceGrid, conducting: np.ndarray, fixed: tuple, lumped: tuple):
        n = grid.n_cells
        p, q = faces(grid)
        live = conducting[p] & conducting[q]
        p, q = p[live], q[live]
        node = np.full(n, -1, dtype=np.intp)
        contact_cell = np.zeros(n, dtype=bool)
        for cells in grid.contact_cells.values():
            contact_cell[cells] = True
        free = np.flatnonzero(conducting & ~contact_cell)
        node[free] = np.arange(free.size)
        nxt = free.size
        for name in lumped:
            node[grid.contact_cells[name]] = nxt
            nxt += 1
        n_unknown = nxt
        for name in fixed:
            node[grid.contact_cells[name]] = nxt
            nxt += 1
        a, b = node[p], node[q]
        inner = a != b
        self.face_sel = np.flatnonzero(live)[inner]
        a, b = a[inner], b[inner]

        # unknowns with no conducting path to a fixed contact carry no current; they are pinned at 0 V
        L = _laplacian(nxt, a, b, np.ones(a.size))
        _, labels = connected_components(L, directed=False)
        grounded = np.isin(labels[:n_unknown], labels[n_unknown:])
        active = np.flatnonzero(grounded)
        pos = np.full(nxt, -1, dtype=np.intp)
        pos[active] = np.arange(active.size)

        self.node, self.n_unknown, self.n_nodes, self.active = node, n_unknown, nxt, active
        self.lumped_base = n_unknown - len(lumped)
        fa, fb = a >= n_unknown, b >= n_unknown
        pa, pb = pos[a], pos[b]
        # unknown-unknown block
        uu = ~fa & ~fb & (pa >= 0) & (pb >= 0)
        ud_a = ~fa & fb & (pa >= 0)  # a unknown, b fixed
        ud_b = fa & ~fb & (pb >= 0)
        self._uu = np.flatnonzero(uu)
        self._ud_a, self._ud_b = np.flatnonzero(ud_a), np.flatnonzero(ud_b)
        rows = np.concatenate([pa[uu], pb[uu], pa[uu], pb[uu], pa[ud_a], pb[ud_b]])
        cols = np.concatenate([pa[uu], pb[uu], pb[uu], pa[uu], pa[ud_a], pb[ud_b]])
        self.ff = _Pattern(max(active.size, 1), rows, cols)
        self.k_fixed = len(fixed)
        # coupling to fixed nodes: (unknown row, fixed column)
        self.fd_rows = np.concatenate([pa[ud_a], pb[ud_b]])
        self.fd_cols = np.concatenate([b[ud_a], a[ud_b]]) - n_unknown
        # fixed-fixed faces (adjacent fixed contacts)
        dd = fa & fb
        self._dd = np.flatnonzero(dd)
        self.dd_a, self.dd_b = a[dd] - n_unknown, b[dd] - n_unknown

    def assemble(self, g):
        """Blocks of the nodal conductance matrix for face conductances ``g`` (already filtered)."""
        guu = g[self._uu]
        gud = np.concatenate([g[self._ud_a], g[self._ud_b]])
        L_ff = self.ff.matrix(np.concatenate([guu, guu, -guu, -guu, gud]))
        k = self.k_fixed
        L_fd = sp.csr_matrix((-gud, (self.fd_rows, self.fd_cols)), shape=(self.active.size, k))
        gdd = g[self._dd]
        L_dd = np.zeros((k, k))
        diag = np.bincount(self.fd_cols, gud, minlength=k)
        diag += np.bincount(self.dd_a, gdd, minlength=k) + np.bincount(self.dd_b, gdd, minlength=k)
        L_dd[np.diag_indices(k)] = diag
        np.add.at(L_dd, (self.dd_a, self.dd_b), -gdd)
        np.add.at(L_dd, (self.dd_b, self.dd_a), -gdd)
        return L_ff.tocsc(), L_fd, L_dd


def _topology(grid: DeviceGrid, conducting, fixed, lumped):
    cache = grid.__dict__.setdefault("_topology_cache", {})
    key = (tuple(fixed), tuple(lumped), conducting.tobytes())
    if key not in cache:
        cache[key] = _ElectricalTopology(grid, conducting, tuple(fixed), tuple(lumped))
    return cache[key]


class PotentialSystem:
    """Factorized current-continuity system for a fixed conductivity field.

    Contacts with a fixed potential become Dirichlet nodes; every other
    contact is an ideal equipotential conductor collapsed into one unknown
    with a prescribed net injected current (zero when floating). Because the
    system is linear in the contact data, the same factorization serves any
    number of excitations.
    """

    def __init__(self, grid: DeviceGrid, sigma: np.ndarray, fixed: list, lumped: Optional[list] = None,
                 method: str = "direct"):
        self.grid = grid
        self.sigma = sigma
        self.fixed = list(fixed)
        self.lumped = [c for c in grid.contact_cells if c not in self.fixed] if lumped is None else list(lumped)
        self.method = method
        if not self.fixed:
            raise ConfigError("at least one contact must have a fixed potential")
        s = sigma.ravel()
        topo = _topology(grid, s > 0, self.fixed, self.lumped)
        p, q = faces(grid)
        g = harmonic(s[p], s[q]) * grid.thickness
        self.topo = topo
        self.L_ff, self.L_fd, self.L_dd = topo.assemble(g[topo.face_sel])
        self.L_df = self.L_fd.T.tocsr()
        self.node = topo.node
        self.n_unknown, self.n_nodes, self._active = topo.n_unknown, topo.n_nodes, topo.active
        self._lu = None
        self._G = None
        if self._active.size and method == "direct":
            self._lu = _factor(self.L_ff)

    def _solve_unknowns(self, rhs):
        if self._active.size == 0:
            return np.zeros(0)
        if self._lu is not None:
            bnorm = np.linalg.norm(rhs)
            if bnorm == 0.0:
                return np.zeros_like(rhs)
            x = self._lu.solve(rhs)
            res = np.linalg.norm(rhs - self.L_ff @ x) / bnorm
            if not res <= RESIDUAL_TOL:
                raise SolverError("potential solve did not reach the residual tolerance", res)
            return x
        return _linear_solve(self.L_ff, rhs, self.method)

    def solve(self, voltages: dict, injected: Optional[dict] = None):
        """Return ``(V_nodes, currents)``; currents flow *into* the device at each contact."""
        vd = np.array([float(voltages.get(c, 0.0)) for c in self.fixed])
        inj = np.zeros(self.n_unknown)
        for name, cur in (injected or {}).items():
            inj[self.topo.lumped_base + self.lumped.index(name)] = cur
        rhs = inj[self._active] - self.L_fd @ vd
        xa = self._solve_unknowns(rhs)
        vn = np.zeros(self.n_nodes)
        vn[self._active] = xa
        vn[self.n_unknown:] = vd
        i_fixed = self.L_df @ xa + self.L_dd @ vd
        currents = {c: float(i) for c, i in zip(self.fixed, i_fixed)}
        for name in self.lumped:
            currents[name] = float((injected or {}).get(name, 0.0))
        return vn, currents

    def conductance_matrix(self):
        """Short-circuit conductance matrix between the fixed contacts (S)."""
        if self._G is None:
            k = len(self.fixed)
            G = np.zeros((k, k))
            for j, name in enumerate(self.fixed):
                _, cur = self.solve({name: 1.0})
                G[:, j] = [cur[c] for c in self.fixed]
            self._G = G
        return self._G

    def terminal_currents(self, voltages: dict) -> dict:
        """Device oracle: contact voltages to contact currents, via the conductance matrix."""
        G = self.conductance_matrix()
        v = np.array([float(voltages.get(c, 0.0)) for c in self.fixed])
        return dict(zip(self.fixed, (G @ v).tolist()))

    def cell_potential(self, vn):
        V = np.zeros(self.grid.n_cells)
        on = self.node >= 0
        V[on] = vn[self.node[on]]
        return V.reshape(self.grid.shape)


def solve_potential(grid: DeviceGrid, state: FieldState, bc: ContactBC, table: mat.MaterialTable,
                    method: str = "direct", sigma=None):
    """Solve current continuity; returns ``(V, currents)`` with currents in A into the device."""
    bc.validate(grid)
    sigma = cell_conductivity(grid, state, table) if sigma is None else sigma
    system = PotentialSystem(grid, sigma, fixed=list(bc.fixed_potential), method=method)
    vn, currents = system.solve(bc.fixed_potential, bc.fixed_current)
    return system.cell_potential(vn), currents


def joule_source(grid: DeviceGrid, V: np.ndarray, sigma: np.ndarray):
    """Per-cell Joule power density (W/m^3) and total dissipated power (W).

    The dissipation ``g * dV**2`` of every face is shared between its two
    half-cells in proportion to their resistances, so the total equals the
    power delivered at the terminals.
    """
    s = sigma.ravel()
    v = V.ravel()
    p, q = faces(grid)
    g = harmonic(s[p], s[q]) * grid.thickness
    keep = g > 0
    p, q, g = p[keep], q[keep], g[keep]
    power = g * (v[p] - v[q]) ** 2
    frac_p = s[q] / (s[p] + s[q])
    heat = np.bincount(p, power * frac_p, minlength=grid.n_cells)
    heat += np.bincount(q, power * (1.0 - frac_p), minlength=grid.n_cells)
    total = float(power.sum())
    return heat.reshape(grid.shape) / grid.cell_volume, total


# -- thermal -----------------------------------------------------------------

@dataclass
class HeatBalance:
    stored: float  # J, heat content change of free cells
    joule: float  # J, Joule input over the step
    outflow: float  # J, heat leaving through the anchors

    @property
    def residual(self):
        return self.stored - self.joule + self.outflow


class _ThermalTopology:
    def __init__(self, grid: DeviceGrid):
        n = grid.n_cells
        p, q = faces(grid)
        anchor = np.zeros(n, dtype=bool)
        anchor[grid.thermal_anchor_cells] = True
        free = np.flatnonzero(~anchor)
        idx = np.full(n, -1, dtype=np.intp)
        idx[free] = np.arange(free.size)
        self.anchor, self.free = anchor, free
        self.both = np.flatnonzero(~anchor[p] & ~anchor[q])
        pa = np.flatnonzero(~anchor[p] & anchor[q])
        qa = np.flatnonzero(anchor[p] & ~anchor[q])
        self.to_anchor = np.concatenate([pa, qa])  # face index
        self.to_anchor_cell = np.concatenate([p[pa], q[qa]])  # the free cell on that face
        ip, iq = idx[p[self.both]], idx[q[self.both]]
        self.anchor_row = idx[self.to_anchor_cell]
        diag = np.arange(free.size)
        self.pattern = _Pattern(free.size, np.concatenate([ip, iq, ip, iq, diag]),
                                np.concatenate([ip, iq, iq, ip, diag]))


def _thermal_topology(grid: DeviceGrid):
    cache = grid.__dict__.setdefault("_topology_cache", {})
    if "thermal" not in cache:
        cache["thermal"] = _ThermalTopology(grid)
    return cache["thermal"]


def step_heat(grid: DeviceGrid, state: FieldState, joule: np.ndarray, dt: float, table: mat.MaterialTable,
              method: str = "cg"):
    """One backward-Euler step of ``c_eff dT/dt = div(kappa grad T) + joule``.

    Anchor cells are held at ``T_ambient``; the outer walls are adiabatic.
    ``c_eff`` and ``kappa`` are taken from the state at the start of the step.
    Returns ``(T_new, HeatBalance)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if np.any(joule < 0):
        raise ValueError("joule source must be non-negative")
    topo = _thermal_topology(grid)
    kappa, cap = cell_thermal(grid, state, table)
    k = kappa.ravel()
    p, q = faces(grid)
    g = harmonic(k[p], k[q]) * grid.thickness
    free, anchor = topo.free, topo.anchor

    vol = grid.cell_volume
    t_old = state.T.ravel()
    qv = joule.ravel() * vol  # W per cell
    mass = cap.ravel()[free] * vol / dt  # W/K
    gb, ga = g[topo.both], g[topo.to_anchor]
    to_anchor = np.bincount(topo.anchor_row, ga, minlength=free.size)
    A = topo.pattern.matrix(np.concatenate([gb, gb, -gb, -gb, mass + to_anchor]))
    # solve for the increment so the residual tolerance scales with the heat input,
    # not with the (much larger) stored heat content; the right-hand side is the
    # net heating rate at T_old, built from face fluxes so equilibrium gives exactly 0
    pb, qb = p[topo.both], q[topo.both]
    flux = gb * (t_old[qb] - t_old[pb])
    net = (qv + np.bincount(pb, flux, minlength=grid.n_cells)
           - np.bincount(qb, flux, minlength=grid.n_cells))[free]
    net -= np.bincount(topo.anchor_row, ga * (t_old[topo.to_anchor_cell] - grid.T_ambient), minlength=free.size)
    t_free = t_old[free] + _linear_solve(A, net, method)

    t_new = np.full(grid.n_cells, float(grid.T_ambient))
    t_new[free] = t_free
    stored = float(np.sum(mass * dt * (t_free - t_old[free])))
    joule_in = float(qv.sum() * dt)
    outflow = float(np.sum(ga * (t_new[topo.to_anchor_cell] - grid.T_ambient)) * dt + qv[anchor].sum() * dt)
    return t_new.reshape(grid.shape), HeatBalance(stored, joule_in, outflow)


# -- coupling ----------------------------------------------------------------

@dataclass
class StepInfo:
    currents: dict
    power: float
    balance: HeatBalance
    passes: int
    circuit: object = None


ElectricalDrive = Callable[[np.ndarray], tuple]
"""``drive(sigma) -> (V, currents, circuit_state)`` for circuit-coupled steps."""

PhaseHook = Callable[[DeviceGrid, FieldState, float], FieldState]


def contact_bc_drive(grid: DeviceGrid, bc: ContactBC, method: str = "direct") -> ElectricalDrive:
    bc.validate(grid)

    def drive(sigma):
        system = PotentialSystem(grid, sigma, fixed=list(bc.fixed_potential), method=method)
        vn, currents = system.solve(bc.fixed_potential, bc.fixed_current)
        return system.cell_potential(vn), currents, None
    return drive


def coupled_step(grid: DeviceGrid, state: FieldState, bc, dt: float, table: mat.MaterialTable,
                 phase_hook: Optional[PhaseHook] = None, method: str = "direct", heat_method: str = "cg",
                 max_passes: int = 10, current_tol: float = 1e-3):
    """Advance the state by one operator-split step.

    ``bc`` is ``None`` (no electrical excitation), a ``ContactBC``, or an
    electrical drive callable. Conductivity, potential and temperature are
    iterated until the terminal currents change by less than ``current_tol``
    (relative) between passes. Returns ``(new_state, StepInfo)``.
    """
    if bc is None:
        drive = None
    elif isinstance(bc, ContactBC):
        drive = contact_bc_drive(grid, bc, method)
    else:
        drive = bc

    if drive is None:
        joule = np.zeros(grid.shape)
        T_new, balance = step_heat(grid, state, joule, dt, table, heat_method)
        V, currents, power, circ, passes = np.zeros(grid.shape), {}, 0.0, None, 1
    else:
        # Gauss-Seidel between sigma(T) and V: each pass re-solves the potential at the latest
        # temperature estimate; the step is accepted once the terminal currents stop moving.
        T_iter = state.T
        prev = None
        for passes in range(1, max_passes + 1):
            sigma = cell_conductivity(grid, state, table, T=T_iter)
            V_k, currents_k, circ_k = drive(sigma)
            cur = np.array([currents_k[k] for k in sorted(currents_k)])
            if prev is not None:
                scale = np.max(np.abs(cur))
                if scale == 0.0 or np.max(np.abs(cur - prev)) <= current_tol * scale:
                    break
            V, currents, circ = V_k, currents_k, circ_k
            joule, power = joule_source(grid, V, sigma)
            T_new, balance = step_heat(grid, state, joule, dt, table, heat_method)
            prev = cur
            T_iter = T_new

    new = FieldState(T_new, V, state.cd1.copy(), state.cd2.copy(), state.molten.copy(),
                     state.time + dt, state.step + 1)
    if phase_hook is not None:
        new = phase_hook(grid, new, dt)
    return new, StepInfo(currents, power, balance, passes, circ)
