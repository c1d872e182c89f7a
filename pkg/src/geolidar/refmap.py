"""Sparse georeferenced reference maps from building footprints and elevation grids.

Building outlines are extruded into wall lattices; elevation rasters become
one point per cell.  The combined cloud is shifted by the bounding-box
centroid so downstream math runs on well-conditioned local coordinates, with
the shift kept as ``origin_offset`` (global = local + origin_offset).

All inputs must share one projected CRS in meters; no reprojection happens
here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from shapely.geometry import Polygon

FLOOR_HEIGHT = 4.0
DEFAULT_BUILDING_HEIGHT = 8.0
DEFAULT_TESSELLATION_EDGE = 0.5

GroundLookup = Callable[[float, float], Optional[float]]


@dataclass
class BuildingFootprint:
    """Closed 2D outline (first vertex not repeated) with height attributes."""

    vertices: np.ndarray
    height: Optional[float] = None
    floors: Optional[int] = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("footprint vertices must be an (N, 2) array")
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]  # tolerate explicitly closed rings
        if len(v) < 3:
            raise ValueError("footprint needs at least 3 vertices")
        poly = Polygon(v)
        if not poly.is_valid or poly.area <= 0:
            raise ValueError("footprint outline is self-intersecting or degenerate")
        self.vertices = v

    @property
    def centroid(self) -> np.ndarray:
        c = Polygon(self.vertices).centroid
        return np.array([c.x, c.y])


@dataclass
class FootprintSet:
    """Footprints loaded from one source, tagged with their CRS."""

    footprints: list[BuildingFootprint]
    crs: str = ""


@dataclass
class ElevationGrid:
    """Regular elevation raster; row 0 is the southernmost row.

    (x0, y0) is the lower-left corner of the grid, cell values sit at cell
    centers.
    """

    x0: float
    y0: float
    cell_size: float
    nrows: int
    ncols: int
    values: np.ndarray
    nodata: float = -9999.0
    crs: str = ""

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.nrows, self.ncols):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"nrows x ncols = {self.nrows} x {self.ncols}"
            )

    def value_at(self, x: float, y: float) -> Optional[float]:
        """Elevation of the cell containing (x, y); None outside or nodata."""
        j = math.floor((x - self.x0) / self.cell_size)
        i = math.floor((y - self.y0) / self.cell_size)
        if not (0 <= i < self.nrows and 0 <= j < self.ncols):
            return None
        v = self.values[i, j]
        if v == self.nodata or np.isnan(v):
            return None
        return float(v)


@dataclass
class ReferenceMap:
    """Shifted sparse map points plus the metadata to go back to global."""

    points: np.ndarray
    crs_id: str = ""
    origin_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.origin_offset = np.asarray(self.origin_offset, dtype=float).reshape(3)
        if self.points.size and np.abs(self.points).max() >= 1e6:
            raise ValueError("reference map coordinates exceed 1e6 m after shifting")


def estimate_height(fp: BuildingFootprint) -> float:
    """Explicit height wins, else 4 m per floor, else the 8 m default."""
    if fp.height is not None:
        if fp.height <= 0:
            raise ValueError("explicit building height must be positive")
        return float(fp.height)
    if fp.floors is not None:
        if fp.floors <= 0:
            raise ValueError("floor count must be positive")
        return fp.floors * FLOOR_HEIGHT
    return DEFAULT_BUILDING_HEIGHT


def tessellate_building(
    fp: BuildingFootprint,
    height: float,
    base_z: float = 0.0,
    edge: float = DEFAULT_TESSELLATION_EDGE,
) -> np.ndarray:
    """Sample the walls of an extruded footprint on a <= edge lattice.

    Each outline segment is subdivided half-open (the end vertex belongs to
    the next segment) so corners appear exactly once; the vertical lattice
    includes both the base and the top row.
    """
    if height <= 0 or edge <= 0:
        raise ValueError("height and edge must be positive")
    verts = fp.vertices
    n_levels = max(1, math.ceil(height / edge))
    zs = base_z + height * np.arange(n_levels + 1) / n_levels
    walls = []
    for a, b in zip(verts, np.roll(verts, -1, axis=0)):
        length = float(np.linalg.norm(b - a))
        n_cols = max(1, math.ceil(length / edge))
        ts = np.arange(n_cols) / n_cols
        cols = a + ts[:, None] * (b - a)
        xy = np.repeat(cols, len(zs), axis=0)
        z = np.tile(zs, len(cols))
        walls.append(np.column_stack([xy, z]))
    return np.vstack(walls)


def grid_to_points(grid: ElevationGrid) -> np.ndarray:
    """One point per non-nodata cell, at the cell center."""
    mask = (grid.values != grid.nodata) & ~np.isnan(grid.values)
    i, j = np.nonzero(mask)
    x = grid.x0 + (j + 0.5) * grid.cell_size
    y = grid.y0 + (i + 0.5) * grid.cell_size
    return np.column_stack([x, y, grid.values[i, j]])


def grid_ground_lookup(grids: Sequence[ElevationGrid]) -> GroundLookup:
    """Ground lookup that returns the first grid value covering a location."""

    def lookup(x: float, y: float) -> Optional[float]:
        for grid in grids:
            v = grid.value_at(x, y)
            if v is not None:
                return v
        return None

    return lookup


def build_reference_map(
    footprint_sets: Sequence[FootprintSet],
    grids: Sequence[ElevationGrid],
    ground_lookup: Optional[GroundLookup] = None,
    edge: float = DEFAULT_TESSELLATION_EDGE,
) -> ReferenceMap:
    """Combine extruded footprints and grid points into one shifted cloud.

    Building bases come from ground_lookup at the footprint centroid (0 when
    absent); the bounding-box centroid of the union becomes origin_offset.
    """
    crs_ids = {s.crs for s in footprint_sets if s.crs} | {g.crs for g in grids if g.crs}
    if len(crs_ids) > 1:
        raise ValueError(f"inputs mix coordinate systems: {sorted(crs_ids)}")
    crs_id = crs_ids.pop() if crs_ids else ""

    parts = []
    for fset in footprint_sets:
        for fp in fset.footprints:
            base = 0.0
            if ground_lookup is not None:
                ground = ground_lookup(*fp.centroid)
                if ground is not None:
                    base = ground
            parts.append(tessellate_building(fp, estimate_height(fp), base, edge))
    for grid in grids:
        pts = grid_to_points(grid)
        if len(pts):
            parts.append(pts)
    if not parts:
        raise ValueError("no reference map content: empty footprints and grids")

    points = np.vstack(parts)
    offset = 0.5 * (points.min(axis=0) + points.max(axis=0))
    return ReferenceMap(points - offset, crs_id, offset)


# ---------------------------------------------------------------------------
# File formats


def read_footprints(path) -> FootprintSet:
    """Footprint JSON: {"crs": str, "footprints": [{"vertices": [[x, y], ...],
    "height": optional, "floors": optional}, ...]}."""
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict) or "footprints" not in doc:
        raise ValueError(f"{path}: expected an object with a 'footprints' array")
    fps = []
    for i, entry in enumerate(doc["footprints"]):
        try:
            fps.append(
                BuildingFootprint(
                    np.asarray(entry["vertices"], dtype=float),
                    height=entry.get("height"),
                    floors=entry.get("floors"),
                )
            )
        except (KeyError, ValueError) as e:
            raise ValueError(f"{path}: footprint {i} rejected: {e}") from e
    return FootprintSet(fps, crs=doc.get("crs", ""))


def write_footprints(path, fset: FootprintSet) -> None:
    doc = {
        "version": 1,
        "crs": fset.crs,
        "footprints": [
            {
                "vertices": fp.vertices.tolist(),
                **({"height": fp.height} if fp.height is not None else {}),
                **({"floors": fp.floors} if fp.floors is not None else {}),
            }
            for fp in fset.footprints
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


_GRID_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_grid(path, crs: str = "") -> ElevationGrid:
    """ASCII grid (ncols/nrows/xllcorner/yllcorner/cellsize/nodata_value header,
    row-major values, northernmost row first)."""
    header: dict[str, float] = {}
    rows: list[np.ndarray] = []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if not rows and key in _GRID_HEADER_KEYS:
                header[key] = float(parts[1])
            else:
                rows.append(np.asarray(parts, dtype=float))
    for required in _GRID_HEADER_KEYS[:5]:
        if required not in header:
            raise ValueError(f"{path}: missing grid header field '{required}'")
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    values = np.concatenate(rows) if rows else np.zeros(0)
    if values.size != nrows * ncols:
        raise ValueError(f"{path}: expected {nrows * ncols} values, found {values.size}")
    return ElevationGrid(
        x0=header["xllcorner"],
        y0=header["yllcorner"],
        cell_size=header["cellsize"],
        nrows=nrows,
        ncols=ncols,
        values=values.reshape(nrows, ncols)[::-1],  # file is north-first
        nodata=header.get("nodata_value", -9999.0),
        crs=crs,
    )


def write_grid(path, grid: ElevationGrid) -> None:
    with open(path, "w") as f:
        f.write(f"ncols {grid.ncols}\n")
        f.write(f"nrows {grid.nrows}\n")
        f.write(f"xllcorner {grid.x0!r}\n")
        f.write(f"yllcorner {grid.y0!r}\n")
        f.write(f"cellsize {grid.cell_size!r}\n")
        f.write(f"nodata_value {grid.nodata!r}\n")
        np.savetxt(f, grid.values[::-1], fmt="%.4f")
