"""Field snapshots as plain-text grids and 8-bit PGM images.

Text format: a header line ``nx ny time quantity`` followed by ``ny`` lines of
``nx`` values each, bottom row first (the grid's own row order).
PGM images are written top row first so they display upright.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

QUANTITIES = ("T", "V", "cd1", "cd2", "cdnorm", "molten")


def field_of(state, quantity: str) -> np.ndarray:
    if quantity == "cdnorm":
        return state.cd_norm
    if quantity in ("T", "V", "cd1", "cd2", "molten"):
        return np.asarray(getattr(state, quantity), dtype=float)
    raise ValueError(f"unknown snapshot quantity '{quantity}' (choose from {', '.join(QUANTITIES)})")


def format_text(values: np.ndarray, time: float, quantity: str) -> str:
    ny, nx = values.shape
    lines = [f"{nx} {ny} {time!r} {quantity}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in values]
    return "\n".join(lines) + "\n"


def parse_text(text: str):
    """Inverse of ``format_text``; returns ``(values, time, quantity)``."""
    lines = text.strip().splitlines()
    nx, ny, time, quantity = lines[0].split()
    nx, ny = int(nx), int(ny)
    rows = [np.array(line.split(), dtype=float) for line in lines[1:]]
    values = np.array(rows)
    if values.shape != (ny, nx):
        raise ValueError(f"snapshot body is {values.shape}, header says ({ny}, {nx})")
    return values, float(time), quantity


def to_pgm(values: np.ndarray, vmin=None, vmax=None) -> bytes:
    """Binary (P5) 8-bit greyscale image, linearly scaled between vmin and vmax."""
    lo = float(np.min(values)) if vmin is None else float(vmin)
    hi = float(np.max(values)) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0
    img = np.clip(np.rint((values - lo) / span * 255.0), 0, 255).astype(np.uint8)[::-1]
    ny, nx = img.shape
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + img.tobytes()


def write_snapshot(state, quantity: str, directory, stem: str = "snap") -> tuple:
    """Write ``<stem>_<quantity>.txt`` and ``.pgm``; returns both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    values = field_of(state, quantity)
    txt = directory / f"{stem}_{quantity}.txt"
    pgm = directory / f"{stem}_{quantity}.pgm"
    txt.write_text(format_text(values, state.time, quantity))
    limits = (0.0, 1.0) if quantity in ("cd1", "cd2", "cdnorm", "molten") else (None, None)
    pgm.write_bytes(to_pgm(values, *limits))
    return txt, pgm
