"""Structured finite-volume grid for the six-contact toggle device.

Layout (y up, mirror axis vertical through the middle)::

      R2 |  W2  |       |  W3  | R3      <- top row: thermal anchor
      R2 |headA |       |headB | R3
         |neckA |       |neckB |
         |neckA |  R1   |neckB |
       [==========  pad  ==========]
                  | W1 |                 <- bottom row: thermal anchor

Write current enters at W1 and splits between neck A (to W2) and neck B
(to W3). Read current from R1 reaches R2 only through neck A and R3 only
through neck B, so an amorphous neck blocks its own read path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

GST, ELECTRODE, INSULATOR = 0, 1, 2
TAG_NAMES = {GST: "GST", ELECTRODE: "electrode", INSULATOR: "insulator"}
CONTACT_IDS = ("W1", "W2", "W3", "R1", "R2", "R3")
NECKS = ("A", "B")


@dataclass(frozen=True)
class GeometrySpec:
    neck_width: float = 10e-9
    neck_length: float = 20e-9
    neck_separation: float = 30e-9  # center to center
    pad_height: float = 10e-9
    pad_overhang: float = 4e-9
    head_width: float = 14e-9
    head_height: float = 6e-9
    electrode_height: float = 6e-9
    w1_width: float = 12e-9
    r1_width: float = 8e-9
    r1_height: float = 4e-9
    read_contact_width: float = 4e-9
    margin: float = 8e-9
    asymmetry_factor: float = 0.01

    def __post_init__(self):
        for name in self.dimension_names():
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        if not self.neck_separation > self.neck_width:
            raise GeometryError("neck_separation must exceed neck_width (necks would merge)")
        if not 0.0 <= self.asymmetry_factor <= 0.05:
            raise GeometryError("asymmetry_factor must lie in [0, 0.05]")

    @classmethod
    def dimension_names(cls):
        return [f for f in cls.__dataclass_fields__ if f != "asymmetry_factor"]


@dataclass
class DeviceGrid:
    """Cell-centred square grid. Arrays are indexed ``[j, i]`` with row 0 at the bottom."""

    nx: int
    ny: int
    dx: float
    thickness: float
    cell_material: np.ndarray
    contact_cells: dict
    thermal_anchor_cells: np.ndarray
    T_ambient: float = 300.0
    sigma_scale: np.ndarray = None
    necks: dict = field(default_factory=dict)  # name -> (i0, i1, j0, j1), half-open
    spec: GeometrySpec = None

    def __post_init__(self):
        self.cell_material = np.asarray(self.cell_material, dtype=np.int8)
        if self.cell_material.shape != (self.ny, self.nx):
            raise GeometryError("cell_material shape does not match (ny, nx)")
        if self.sigma_scale is None:
            self.sigma_scale = np.ones((self.ny, self.nx))
        self.contact_cells = {k: np.asarray(v, dtype=np.intp) for k, v in self.contact_cells.items()}
        self.thermal_anchor_cells = np.asarray(self.thermal_anchor_cells, dtype=np.intp)
        if self.thermal_anchor_cells.size == 0:
            raise GeometryError("thermal anchor set is empty; heat has no sink")
        seen = np.zeros(self.nx * self.ny, dtype=bool)
        for name, cells in self.contact_cells.items():
            if cells.size == 0:
                raise GeometryError(f"contact {name} has an empty footprint")
            if seen[cells].any():
                raise GeometryError(f"contact {name} overlaps another contact")
            seen[cells] = True

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def cell_volume(self):
        return self.dx * self.dx * self.thickness

    def mask(self, tag):
        return self.cell_material == tag

    def contact_mask(self, name):
        m = np.zeros(self.n_cells, dtype=bool)
        m[self.contact_cells[name]] = True
        return m.reshape(self.shape)

    def anchor_mask(self):
        m = np.zeros(self.n_cells, dtype=bool)
        m[self.thermal_anchor_cells] = True
        return m.reshape(self.shape)

    def neck_mask(self, name):
        i0, i1, j0, j1 = self.necks[name]
        m = np.zeros(self.shape, dtype=bool)
        m[j0:j1, i0:i1] = True
        return m


def _cells(length, dx, name):
    n = length / dx
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6 * max(1.0, n):
        raise GeometryError(f"feature '{name}' ({length:.3g} m) is not a whole number of cells at dx={dx:.3g} m")
    return k


def build_grid(spec: GeometrySpec = None, dx: float = 1e-9, thickness: float = 20e-9,
               T_ambient: float = 300.0) -> DeviceGrid:
    """Rasterize the H-topology device onto a uniform grid.

    All cells start crystalline at ``T_ambient`` (the field state is created
    separately, see ``field_solvers.initial_state``).
    """
    spec = spec or GeometrySpec()
    if not (dx > 0 and thickness > 0 and T_ambient > 0):
        raise GeometryError("dx, thickness and T_ambient must be positive")
    n = {name: _cells(getattr(spec, name), dx, name) for name in GeometrySpec.dimension_names()}
    if n["neck_separation"] <= n["neck_width"]:
        raise GeometryError("neck_separation: necks merge at this dx")

    a0 = n["margin"] + n["pad_overhang"]  # left edge of neck A
    nx = 2 * a0 + n["neck_separation"] + n["neck_width"]
    ny = n["electrode_height"] + n["pad_height"] + n["neck_length"] + n["head_height"] + n["electrode_height"]

    def centred(width, span_lo, span_hi, name):
        room = span_hi - span_lo - width
        if room < 0 or room % 2:
            raise GeometryError(f"feature '{name}' cannot be centred symmetrically at dx={dx:.3g} m")
        return span_lo + room // 2, span_lo + room // 2 + width

    pad_y0 = n["electrode_height"]
    neck_y0 = pad_y0 + n["pad_height"]
    head_y0 = neck_y0 + n["neck_length"]
    top_y0 = head_y0 + n["head_height"]

    mat = np.full((ny, nx), INSULATOR, dtype=np.int8)
    contact = np.full((ny, nx), -1, dtype=np.int8)

    a1 = a0 + n["neck_width"]
    b0 = a0 + n["neck_separation"]
    b1 = b0 + n["neck_width"]
    pad_x0, pad_x1 = n["margin"], nx - n["margin"]
    mat[pad_y0:neck_y0, pad_x0:pad_x1] = GST
    mat[neck_y0:head_y0, a0:a1] = GST
    mat[neck_y0:head_y0, b0:b1] = GST

    ha0, ha1 = centred(n["head_width"], a0 - n["head_width"], a1 + n["head_width"], "head_width")
    hb0, hb1 = nx - ha1, nx - ha0
    if ha1 >= b0 or ha0 - n["read_contact_width"] < 0:
        raise GeometryError("feature 'head_width' collides with the other neck or the boundary")
    mat[head_y0:top_y0, ha0:ha1] = GST
    mat[head_y0:top_y0, hb0:hb1] = GST

    def electrode(cid, x0, x1, y0, y1):
        if x0 < 0 or x1 > nx or y0 < 0 or y1 > ny or x1 <= x0 or y1 <= y0:
            raise GeometryError(f"contact {cid} does not fit in the domain")
        if (contact[y0:y1, x0:x1] >= 0).any():
            raise GeometryError(f"contact {cid} overlaps another contact")
        mat[y0:y1, x0:x1] = ELECTRODE
        contact[y0:y1, x0:x1] = CONTACT_IDS.index(cid)

    w10, w11 = centred(n["w1_width"], 0, nx, "w1_width")
    electrode("W1", w10, w11, 0, pad_y0)
    electrode("W2", a0, a1, top_y0, ny)
    electrode("W3", b0, b1, top_y0, ny)
    r10, r11 = centred(n["r1_width"], a1, b0, "r1_width")
    if r10 <= a1 or r11 >= b0:
        raise GeometryError("feature 'r1_width' touches a neck")
    electrode("R1", r10, r11, neck_y0, neck_y0 + n["r1_height"])
    rw = n["read_contact_width"]
    electrode("R2", ha0 - rw, ha0, head_y0, ny)
    electrode("R3", hb1, hb1 + rw, head_y0, ny)

    flat = contact.ravel()
    contacts = {cid: np.flatnonzero(flat == k) for k, cid in enumerate(CONTACT_IDS)}
    anchors = np.concatenate([np.arange(nx), np.arange((ny - 1) * nx, ny * nx)])

    necks = {"A": (a0, a1, neck_y0, head_y0), "B": (b0, b1, neck_y0, head_y0)}
    scale = np.ones((ny, nx))
    scale[neck_y0:head_y0, a0:a1] = 1.0 + spec.asymmetry_factor

    grid = DeviceGrid(nx=nx, ny=ny, dx=dx, thickness=thickness, cell_material=mat,
                      contact_cells=contacts, thermal_anchor_cells=anchors, T_ambient=T_ambient,
                      sigma_scale=scale, necks=necks, spec=spec)
    _check_device(grid)
    return grid


def _neighbours(mask):
    out = np.zeros_like(mask)
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _check_device(grid: DeviceGrid):
    if sorted(grid.contact_cells) != sorted(CONTACT_IDS):
        raise GeometryError("device must have exactly the six contacts " + ", ".join(CONTACT_IDS))
    gst = grid.mask(GST)
    for cid in CONTACT_IDS:
        cm = grid.contact_mask(cid)
        if not (grid.cell_material[cm] == ELECTRODE).all():
            raise GeometryError(f"contact {cid} footprint is not electrode")
        if not (_neighbours(cm) & gst).any():
            raise GeometryError(f"contact {cid} does not touch GST")


def region_report(grid: DeviceGrid) -> dict:
    """Cell counts per region tag and per contact, plus neck bounding boxes (in cells)."""
    tags = {TAG_NAMES[t]: int((grid.cell_material == t).sum()) for t in TAG_NAMES}
    return {
        "nx": grid.nx,
        "ny": grid.ny,
        "dx": grid.dx,
        "thickness": grid.thickness,
        "tags": tags,
        "contacts": {cid: int(c.size) for cid, c in grid.contact_cells.items()},
        "anchors": int(grid.thermal_anchor_cells.size),
        "necks": {k: tuple(int(x) for x in v) for k, v in grid.necks.items()},
    }


def format_report(report: dict, machine: bool = False) -> str:
    """Render ``region_report`` output as aligned text or ``key = value`` lines."""
    rows = [("nx", report["nx"]), ("ny", report["ny"]), ("dx_m", report["dx"]),
            ("thickness_m", report["thickness"])]
    rows += [(f"cells.{k}", v) for k, v in report["tags"].items()]
    rows += [(f"contact.{k}", v) for k, v in report["contacts"].items()]
    rows.append(("anchor_cells", report["anchors"]))
    rows += [(f"neck.{k}.bbox", " ".join(map(str, v))) for k, v in report["necks"].items()]
    if machine:
        return "\n".join(f"{k} = {v}" for k, v in rows) + "\n"
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"
