"""Voxel-grid point index with bounded buckets and windowed nearest lookup.

One structure backs both the sparse reference map and the rolling local
submap.  Buckets keep insertion order, hold at most ``max_points_per_voxel``
points, and enforce a minimum spacing between stored points.  Nearest-point
queries only inspect the 3x3x3 voxel window around the query, so matches
farther than roughly two voxels away are missed by design.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

_INDEX_BITS = 21
_INDEX_OFFSET = 1 << (_INDEX_BITS - 1)

_NEIGHBOR_OFFSETS = np.array(
    [[dx, dy, dz] for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
    dtype=np.int64,
)


def voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Integer voxel coordinates via mathematical floor (half-open cells)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.floor(pts / voxel_size).astype(np.int64)


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """Pack (N, 3) voxel coordinates into collision-free int64 hashes."""
    shifted = keys + _INDEX_OFFSET
    if shifted.min(initial=0) < 0 or shifted.max(initial=0) >= (1 << _INDEX_BITS):
        raise ValueError(
            f"voxel index out of the +-{_INDEX_OFFSET} supported range; "
            "shift coordinates toward the origin first"
        )
    return (
        (shifted[..., 0] << (2 * _INDEX_BITS))
        | (shifted[..., 1] << _INDEX_BITS)
        | shifted[..., 2]
    )


def unpack_keys(hashes: np.ndarray) -> np.ndarray:
    """Inverse of pack_keys; accepts scalars or arrays, returns (..., 3)."""
    h = np.asarray(hashes, dtype=np.int64)
    mask = (1 << _INDEX_BITS) - 1
    return np.stack(
        [
            ((h >> (2 * _INDEX_BITS)) & mask) - _INDEX_OFFSET,
            ((h >> _INDEX_BITS) & mask) - _INDEX_OFFSET,
            (h & mask) - _INDEX_OFFSET,
        ],
        axis=-1,
    )


def voxel_downsample(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Keep the first point of each occupied voxel, in input order."""
    if voxel_size <= 0:
        raise ValueError("voxel size must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.zeros((0, 3))
    pts = np.atleast_2d(pts)
    hashes = pack_keys(voxel_keys(pts, voxel_size))
    _, first = np.unique(hashes, return_index=True)
    return pts[np.sort(first)]


@dataclass
class InsertReport:
    added: int
    rejected: int


class VoxelMap:
    """Hash map from voxel coordinates to small point buckets."""

    def __init__(
        self,
        voxel_size: float = 1.0,
        max_points_per_voxel: int = 10,
        min_point_distance: float = 0.1,
    ):
        if voxel_size <= 0 or max_points_per_voxel < 1 or min_point_distance < 0:
            raise ValueError("invalid voxel map parameters")
        self.voxel_size = float(voxel_size)
        self.max_points_per_voxel = int(max_points_per_voxel)
        self.min_point_distance = float(min_point_distance)
        self._buckets: dict[int, list[int]] = {}
        self._data = np.empty((1024, 3), dtype=float)
        self._hashes = np.empty(1024, dtype=np.int64)
        self._alive = np.zeros(1024, dtype=bool)
        self._size = 0
        self._dirty = True
        self._packed: Optional[np.ndarray] = None
        self._hash_sorted: Optional[np.ndarray] = None
        self._starts: Optional[np.ndarray] = None
        self._counts: Optional[np.ndarray] = None

    @property
    def n_voxels(self) -> int:
        return len(self._buckets)

    @property
    def n_points(self) -> int:
        return sum(len(b) for b in self._buckets.values())

    def __len__(self) -> int:
        return self.n_points

    def _append_row(self, point: np.ndarray, h: int) -> int:
        if self._size == len(self._data):
            grown = np.empty((2 * len(self._data), 3), dtype=float)
            grown[: self._size] = self._data
            self._data = grown
            grown_h = np.empty(2 * len(self._hashes), dtype=np.int64)
            grown_h[: self._size] = self._hashes
            self._hashes = grown_h
            grown_a = np.zeros(2 * len(self._alive), dtype=bool)
            grown_a[: self._size] = self._alive
            self._alive = grown_a
        self._data[self._size] = point
        self._hashes[self._size] = h
        self._alive[self._size] = True
        self._size += 1
        return self._size - 1

    def insert(self, points: np.ndarray) -> InsertReport:
        """Insert points in order; full or too-crowded voxels reject silently."""
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            return InsertReport(0, 0)
        pts = np.atleast_2d(pts)
        hashes = pack_keys(voxel_keys(pts, self.voxel_size))
        min_d2 = self.min_point_distance**2
        cap = self.max_points_per_voxel
        added = rejected = 0
        for i in range(len(pts)):
            h = int(hashes[i])
            bucket = self._buckets.get(h)
            if bucket is None:
                bucket = self._buckets[h] = []
            elif len(bucket) >= cap:
                rejected += 1
                continue
            if bucket:
                diff = self._data[bucket] - pts[i]
                if np.min(np.einsum("ij,ij->i", diff, diff)) < min_d2:
                    rejected += 1
                    continue
            bucket.append(self._append_row(pts[i], h))
            added += 1
        if added:
            self._dirty = True
        return InsertReport(added, rejected)

    def _ensure_packed(self) -> None:
        if not self._dirty:
            return
        alive_idx = np.flatnonzero(self._alive[: self._size])
        if len(alive_idx) == 0:
            self._packed = np.zeros((0, 3))
            self._hash_sorted = np.zeros(0, dtype=np.int64)
            self._starts = np.zeros(0, dtype=np.int64)
            self._counts = np.zeros(0, dtype=np.int64)
            self._dirty = False
            return
        h = self._hashes[alive_idx]
        order = np.argsort(h, kind="stable")  # keeps insertion order per voxel
        sorted_idx = alive_idx[order]
        h_sorted = h[order]
        uniq, starts, counts = np.unique(h_sorted, return_index=True, return_counts=True)
        self._hash_sorted = uniq
        self._starts = starts.astype(np.int64)
        self._counts = counts.astype(np.int64)
        self._packed = self._data[sorted_idx]
        self._dirty = False

    def nearest_batch(
        self, queries: np.ndarray, max_dist: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Closest stored point per query within the 3x3x3 voxel window.

        Returns (points (M,3), distances (M,), found (M,) bool); entries with
        found == False hold zeros / inf.
        """
        if max_dist <= 0:
            raise ValueError("max_dist must be positive")
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        m = len(q)
        out_pts = np.zeros((m, 3))
        out_dist = np.full(m, np.inf)
        found = np.zeros(m, dtype=bool)
        self._ensure_packed()
        if len(self._hash_sorted) == 0 or m == 0:
            return out_pts, out_dist, found

        neigh = voxel_keys(q, self.voxel_size)[:, None, :] + _NEIGHBOR_OFFSETS[None]
        h = pack_keys(neigh.reshape(-1, 3))
        pos = np.searchsorted(self._hash_sorted, h)
        pos = np.minimum(pos, len(self._hash_sorted) - 1)
        hit = self._hash_sorted[pos] == h
        if not hit.any():
            return out_pts, out_dist, found

        qid = np.repeat(np.arange(m), len(_NEIGHBOR_OFFSETS))[hit]
        starts = self._starts[pos[hit]]
        counts = self._counts[pos[hit]]
        total = int(counts.sum())
        csum = np.cumsum(counts)
        cand = np.repeat(starts, counts) + (np.arange(total) - np.repeat(csum - counts, counts))
        owner = np.repeat(qid, counts)

        diff = self._packed[cand] - q[owner]
        d2 = np.einsum("ij,ij->i", diff, diff)
        # owner is nondecreasing by construction: segmented argmin, no sort
        seg_starts = np.concatenate([[0], np.flatnonzero(owner[1:] != owner[:-1]) + 1])
        seg_lens = np.diff(np.append(seg_starts, len(d2)))
        best_d2 = np.minimum.reduceat(d2, seg_starts)
        seg_of_cand = np.repeat(np.arange(len(seg_starts)), seg_lens)
        min_pos = np.flatnonzero(d2 == best_d2[seg_of_cand])
        seg_of_min = seg_of_cand[min_pos]
        first = np.ones(len(min_pos), dtype=bool)
        first[1:] = seg_of_min[1:] != seg_of_min[:-1]
        sel = min_pos[first]  # first argmin per segment

        best_owner = owner[seg_starts]
        ok = best_d2 <= max_dist**2
        found[best_owner[ok]] = True
        out_dist[best_owner[ok]] = np.sqrt(best_d2[ok])
        out_pts[best_owner[ok]] = self._packed[cand[sel[ok]]]
        return out_pts, out_dist, found

    def nearest(self, query: np.ndarray, max_dist: float) -> Optional[tuple[np.ndarray, float]]:
        pts, dist, found = self.nearest_batch(np.asarray(query, dtype=float)[None, :], max_dist)
        if not found[0]:
            return None
        return pts[0], float(dist[0])

    def trim(self, center: np.ndarray, radius: float) -> int:
        """Drop voxels whose center is more than radius from center."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        if not self._buckets:
            return 0
        center = np.asarray(center, dtype=float).reshape(3)
        hashes = np.fromiter(self._buckets.keys(), dtype=np.int64, count=len(self._buckets))
        centers = (unpack_keys(hashes) + 0.5) * self.voxel_size
        diff = centers - center
        drop = np.einsum("ij,ij->i", diff, diff) > radius**2
        for h in hashes[drop]:
            self._alive[self._buckets.pop(int(h))] = False
        if drop.any():
            self._dirty = True
        return int(drop.sum())

    def points(self) -> np.ndarray:
        """All stored points, ordered by voxel hash then insertion order."""
        self._ensure_packed()
        return self._packed.copy()

    def voxels(self) -> Iterator[tuple[tuple[int, int, int], np.ndarray]]:
        """Iterate (voxel key, stored points) pairs; for audits and tests."""
        for h, bucket in self._buckets.items():
            key = unpack_keys(h)
            yield (int(key[0]), int(key[1]), int(key[2])), self._data[bucket].copy()
