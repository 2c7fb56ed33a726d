import numpy as np
import pytest

from pcmtoggle.errors import GeometryError
from pcmtoggle.geometry import (CONTACT_IDS, ELECTRODE, GST, INSULATOR, GeometrySpec, build_grid,
                                format_report, region_report)

# Default layout written out by hand in nm, (x0, x1, y0, y1), independent of build_grid.
LAYOUT_GST = [(8, 56, 6, 16), (12, 22, 16, 36), (42, 52, 16, 36), (10, 24, 36, 42), (40, 54, 36, 42)]
LAYOUT_CONTACTS = {
    "W1": (26, 38, 0, 6), "W2": (12, 22, 42, 48), "W3": (42, 52, 42, 48),
    "R1": (28, 36, 16, 20), "R2": (6, 10, 36, 48), "R3": (54, 58, 36, 48),
}
DOMAIN_NM = (64, 48)


def rasterize(dx_nm):
    """Cell-centre sampling of the hand-written layout."""
    nx, ny = DOMAIN_NM[0] // dx_nm, DOMAIN_NM[1] // dx_nm
    xc = (np.arange(nx) + 0.5) * dx_nm
    yc = (np.arange(ny) + 0.5) * dx_nm
    X, Y = np.meshgrid(xc, yc)

    def inside(r):
        return (X > r[0]) & (X < r[1]) & (Y > r[2]) & (Y < r[3])
    material = np.full((ny, nx), INSULATOR)
    for r in LAYOUT_GST:
        material[inside(r)] = GST
    contacts = {}
    for cid, r in LAYOUT_CONTACTS.items():
        material[inside(r)] = ELECTRODE
        contacts[cid] = inside(r)
    return material, contacts


@pytest.mark.parametrize("dx_nm", [1, 2])
def test_matches_independent_rasterizer(dx_nm):
    g = build_grid(GeometrySpec(), dx=dx_nm * 1e-9)
    material, contacts = rasterize(dx_nm)
    assert g.shape == material.shape
    assert np.array_equal(g.cell_material, material)
    for cid in CONTACT_IDS:
        assert np.array_equal(g.contact_mask(cid), contacts[cid]), cid


def test_coarse_grid_halves_counts_and_keeps_adjacency():
    fine, coarse = build_grid(dx=1e-9), build_grid(dx=2e-9)
    assert (coarse.nx, coarse.ny) == (fine.nx // 2, fine.ny // 2)
    for tag in (GST, ELECTRODE, INSULATOR):
        assert coarse.mask(tag).sum() * 4 == fine.mask(tag).sum()
    for g in (fine, coarse):
        gst = g.mask(GST)
        for cid in CONTACT_IDS:
            m = g.contact_mask(cid)
            touch = np.zeros_like(m)
            touch[1:] |= m[:-1]
            touch[:-1] |= m[1:]
            touch[:, 1:] |= m[:, :-1]
            touch[:, :-1] |= m[:, 1:]
            assert (touch & gst).any(), cid


def test_default_grid_basics(grid):
    assert grid.thickness == 20e-9
    assert sorted(grid.contact_cells) == sorted(CONTACT_IDS)
    assert grid.shape[0] <= 120 and grid.shape[1] <= 200
    ia0, ia1, _, _ = grid.necks["A"]
    ib0, ib1, _, _ = grid.necks["B"]
    assert ia1 <= ib0  # disjoint
    assert (ia1 - ia0) * grid.dx == pytest.approx(10e-9)


def test_mirror_symmetry_without_asymmetry():
    g = build_grid(GeometrySpec(asymmetry_factor=0.0))
    assert np.array_equal(g.cell_material, g.cell_material[:, ::-1])
    assert np.array_equal(g.sigma_scale, g.sigma_scale[:, ::-1])
    for a, b in (("W1", "W1"), ("R1", "R1"), ("W2", "W3"), ("R2", "R3")):
        assert np.array_equal(g.contact_mask(a), g.contact_mask(b)[:, ::-1])
    assert np.array_equal(g.neck_mask("A"), g.neck_mask("B")[:, ::-1])


def test_asymmetry_only_touches_neck_a(grid):
    f = grid.spec.asymmetry_factor
    assert np.all(grid.sigma_scale[grid.neck_mask("A")] == 1.0 + f)
    assert np.all(grid.sigma_scale[~grid.neck_mask("A")] == 1.0)


@pytest.mark.parametrize("kwargs", [dict(neck_separation=10e-9), dict(neck_separation=8e-9),
                                    dict(neck_width=-1e-9), dict(asymmetry_factor=0.2)])
def test_invalid_specs(kwargs):
    with pytest.raises(GeometryError):
        build_grid(GeometrySpec(**kwargs))


def test_unresolvable_dx():
    with pytest.raises(GeometryError, match="whole number of cells"):
        build_grid(dx=3e-9)


def test_region_report_text_and_machine(grid):
    rep = region_report(grid)
    assert sum(rep["tags"].values()) == grid.n_cells
    assert rep["necks"]["A"] != rep["necks"]["B"]
    text = format_report(rep)
    machine = format_report(rep, machine=True)
    assert "contact.W1" in text
    pairs = dict(line.split(" = ") for line in machine.strip().splitlines())
    assert int(pairs["nx"]) == grid.nx
    assert int(pairs["cells.GST"]) == rep["tags"]["GST"]
    # aligned: every value column starts at the same offset
    starts = {len(line) - len(line[len(line.split()[0]):].lstrip()) for line in text.strip().splitlines()}
    assert len(starts) == 1
