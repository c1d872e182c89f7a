"""Point cloud file formats.

``bin_xyz`` is the KITTI scan layout: little-endian float32 quadruples
(x, y, z, intensity); intensity is ignored on read and written as zero, and
the format carries no header so real datasets drop in unchanged.
``ascii_xyz`` is one ``x y z`` per line with ``#`` comments and a one-line
version comment on write.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

_RECORD_BYTES = 16  # 4 x float32

ASCII_HEADER = "# geolidar ascii_xyz v1"


def detect_format(path) -> str:
    return "bin_xyz" if Path(path).suffix.lower() == ".bin" else "ascii_xyz"


def read_cloud(path, fmt: str | None = None) -> np.ndarray:
    fmt = fmt or detect_format(path)
    if fmt == "bin_xyz":
        nbytes = os.path.getsize(path)
        if nbytes % _RECORD_BYTES:
            offset = (nbytes // _RECORD_BYTES) * _RECORD_BYTES
            raise ValueError(f"{path}: truncated point record at byte offset {offset}")
        data = np.fromfile(path, dtype="<f4")
        return data.reshape(-1, 4)[:, :3].astype(float)
    if fmt == "ascii_xyz":
        text = Path(path).read_text()
        data = np.loadtxt(io.StringIO(text), comments="#", ndmin=2)
        if data.size == 0:
            return np.zeros((0, 3))
        if data.shape[1] != 3:
            raise ValueError(f"{path}: expected 3 columns, found {data.shape[1]}")
        return data
    raise ValueError(f"unknown cloud format {fmt!r}")


def write_cloud(path, points: np.ndarray, fmt: str | None = None) -> None:
    fmt = fmt or detect_format(path)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.size == 0:
        pts = np.zeros((0, 3))
    if fmt == "bin_xyz":
        out = np.zeros((len(pts), 4), dtype="<f4")
        out[:, :3] = pts
        out.tofile(path)
    elif fmt == "ascii_xyz":
        with open(path, "w") as f:
            f.write(ASCII_HEADER + "\n")
            np.savetxt(f, pts, fmt="%.6f")
    else:
        raise ValueError(f"unknown cloud format {fmt!r}")
