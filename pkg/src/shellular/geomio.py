"""Isosurfaces, multi-block tiling and mesh/voxel export."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from skimage.measure import marching_cubes

from .errors import DegenerateDesignError, ShellularError, ValidationError
from .field import DesignParams, FieldGrid, eval_field_grid, eval_field_points
from .voxel import ShellParams, step_function

STL_HEADER = b"shellular binary STL".ljust(80, b" ")


class EmptyMeshError(ShellularError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray  # (n, 3) float
    triangles: np.ndarray  # (m, 3) int
    values: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValidationError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_normals(self, normalize: bool = True) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        if normalize:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
        return n

    def triangle_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.triangle_normals(normalize=False), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def enclosed_volume(self) -> float:
        """Signed volume by the divergence theorem (positive for outward normals)."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def edge_use_counts(self) -> dict[tuple[int, int], int]:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e.sort(axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(keys, counts)}

    def is_closed(self) -> bool:
        return all(c == 2 for c in self.edge_use_counts().values())

    def cleaned(self, min_area: float = 1e-12) -> "TriMesh":
        """Drop near-zero-area triangles and vertices no longer referenced."""
        keep = self.triangle_areas() > min_area
        tri = self.triangles[keep]
        used, inverse = np.unique(tri.ravel(), return_inverse=True)
        values = None if self.values is None else self.values[used]
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3), values)

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles, self.values)


def grid_from_function(fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray], r: int) -> FieldGrid:
    """FieldGrid of an arbitrary scalar function of (x, y, z) on the unit cube."""
    centres = (np.arange(r) + 0.5) / r
    corners = np.arange(r + 1) / r
    samples = fn(*np.meshgrid(centres, centres, centres, indexing="ij"))
    corner_samples = fn(*np.meshgrid(corners, corners, corners, indexing="ij"))
    norm = float(np.abs(samples).max())
    return FieldGrid(r, samples, corner_samples, norm, not norm > 0)


def _marching_cubes(volume: np.ndarray, spacing: float) -> TriMesh:
    if not (volume.min() <= 0.0 <= volume.max()) or volume.min() == volume.max():
        raise EmptyMeshError("field has no zero crossing", stage="isosurface")
    verts, faces, _, values = marching_cubes(volume, 0.0, spacing=(spacing,) * 3,
                                             method="lorensen", allow_degenerate=False)
    mesh = TriMesh(verts.astype(float), faces, values).cleaned()
    if mesh.n_triangles == 0:
        raise EmptyMeshError("isosurface is empty", stage="isosurface")
    return mesh


def extract_isosurface(grid: FieldGrid) -> TriMesh:
    """Zero level set of the corner samples, in unit-cell coordinates.

    The corner lattice includes both x = 0 and x = 1, so vertices on opposite
    cell faces coincide after a unit shift and tiled copies close up.
    """
    if grid.degenerate:
        raise DegenerateDesignError("field is identically zero", stage="isosurface")
    return _marching_cubes(np.asarray(grid.corner_samples, dtype=float), 1.0 / grid.resolution)


# ---------------------------------------------------------------------------
# exports

def stl_bytes(mesh: TriMesh) -> bytes:
    if mesh.n_triangles == 0:
        raise EmptyMeshError("refusing to export an empty mesh", stage="export")
    normals = mesh.triangle_normals().astype("<f4")
    tri = mesh.vertices[mesh.triangles].astype("<f4").reshape(-1, 9)
    rec = np.zeros(mesh.n_triangles, dtype=[("n", "<f4", 3), ("v", "<f4", 9), ("attr", "<u2")])
    rec["n"] = normals
    rec["v"] = tri
    return STL_HEADER + struct.pack("<I", mesh.n_triangles) + rec.tobytes()


def obj_text(mesh: TriMesh) -> str:
    if mesh.n_triangles == 0:
        raise EmptyMeshError("refusing to export an empty mesh", stage="export")
    buf = io.StringIO()
    for x, y, z in mesh.vertices:
        buf.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
    for a, b, c in mesh.triangles + 1:
        buf.write(f"f {a} {b} {c}\n")
    return buf.getvalue()


def export_mesh(mesh: TriMesh, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "stl":
        data = stl_bytes(mesh)
        path.write_bytes(data)
    elif fmt == "obj":
        path.write_text(obj_text(mesh))
    else:
        raise ValidationError(f"unsupported mesh format {fmt!r}")
    return path


# Corner offsets of the four vertices of each outward face, counter-clockwise
# seen from outside, keyed by (axis, side).
_FACE_QUADS = {
    (0, 0): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (0, 1): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (1, 0): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (1, 1): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (2, 0): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
    (2, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
}


def voxel_boundary_mesh(mask: np.ndarray, edge: float = 1.0) -> TriMesh:
    """Outward-oriented boundary of a union of voxels; interior faces removed.

    Where two voxels touch only along an edge, four faces meet on that edge.
    Each voxel's pair of faces there gets its own midpoint vertex and is
    fanned from its centre, so every mesh edge is shared by exactly two
    triangles while the geometry stays the plain union of boxes.
    """
    mask = np.asarray(mask, dtype=bool)
    r = mask.shape[0]
    if not mask.any():
        raise EmptyMeshError("no voxels selected", stage="export")
    pad = np.zeros((r + 2,) * 3, dtype=bool)
    pad[1:-1, 1:-1, 1:-1] = mask
    corners_all, voxels = [], []
    for (axis, side), corners in _FACE_QUADS.items():
        shift = [0, 0, 0]
        shift[axis] = 1 if side else -1
        sl = tuple(slice(1 + d, r + 1 + d) for d in shift)
        vox = np.argwhere(mask & ~pad[sl])
        if len(vox):
            corners_all.append(vox[:, None, :] + np.array(corners)[None])
            voxels.append(vox)
    quads = np.concatenate(corners_all)  # (F, 4, 3) lattice points
    vox = np.concatenate(voxels)
    F = len(quads)
    n1 = r + 1
    pid = (quads[..., 0] * n1 + quads[..., 1]) * n1 + quads[..., 2]  # (F, 4)
    vid = (vox[:, 0] * r + vox[:, 1]) * r + vox[:, 2]

    # pinch edges: lattice edges with four incident boundary faces
    a = pid.ravel()
    b = pid[:, [1, 2, 3, 0]].ravel()
    ekey = np.minimum(a, b) * n1 ** 3 + np.maximum(a, b)
    uniq_e, e_inv, e_count = np.unique(ekey, return_inverse=True, return_counts=True)
    pinch = (e_count == 4)[e_inv].reshape(F, 4)  # pinch[f, c]: edge c -> c+1 of face f

    # vertex table: lattice points first, then per-voxel midpoints, then face centres
    points = {}
    def vertex(key, xyz):
        if key not in points:
            points[key] = (len(points), xyz)
        return points[key][0]

    tris = []
    plain = ~pinch.any(axis=1)
    for f in np.flatnonzero(plain):
        v = [vertex(("p", int(pid[f, c])), quads[f, c]) for c in range(4)]
        tris += [(v[0], v[1], v[2]), (v[0], v[2], v[3])]
    for f in np.flatnonzero(~plain):
        ring = []
        for c in range(4):
            ring.append(vertex(("p", int(pid[f, c])), quads[f, c]))
            if pinch[f, c]:
                key = ("m", int(ekey[4 * f + c]), int(vid[f]))
                ring.append(vertex(key, 0.5 * (quads[f, c] + quads[f, (c + 1) % 4])))
        centre = vertex(("c", f), quads[f].mean(axis=0))
        tris += [(centre, ring[i], ring[(i + 1) % len(ring)]) for i in range(len(ring))]

    xyz = np.zeros((len(points), 3))
    for idx, pos in points.values():
        xyz[idx] = pos
    tris = np.array(tris, dtype=np.int64)
    # canonical vertex and triangle order for byte-stable output
    vorder = np.lexsort(xyz.T[::-1])
    rank = np.empty_like(vorder)
    rank[vorder] = np.arange(len(vorder))
    tris = rank[tris]
    tris = tris[np.lexsort(tris.T[::-1])]
    return TriMesh(xyz[vorder] * edge, tris)


def export_solid_voxels(grid: FieldGrid, sp: ShellParams, threshold: float) -> TriMesh:
    """Watertight box mesh of voxels whose stiffness ratio reaches ``threshold``."""
    if not sp.floor < threshold <= 1.0:
        raise ValidationError(f"threshold must lie in (floor, 1], got {threshold}")
    beta = step_function(grid.normalized, sp)
    mask = beta >= threshold
    if not mask.any():
        raise EmptyMeshError("no voxel reaches the threshold", stage="export")
    return voxel_boundary_mesh(mask, 1.0 / grid.resolution)


# ---------------------------------------------------------------------------
# tiling

def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def block_weights_1d(t: np.ndarray, n: int, width: float) -> np.ndarray:
    """(len(t), n) smooth partition of unity over unit blocks of [0, n).

    Block i has weight 1 on [i + width, i + 1 - width] and hands over to its
    neighbours with a smoothstep across each shared face.
    """
    t = np.asarray(t, dtype=float)
    rise = np.empty((len(t), n + 1))
    for i in range(n + 1):
        rise[:, i] = smoothstep((t - (i - width)) / (2 * width))
    rise[:, 0] = 1.0  # outer faces: no neighbour to hand over to
    rise[:, n] = 0.0
    return rise[:, :-1] - rise[:, 1:]


@dataclass(frozen=True, eq=False)
class TileSpec:
    grid: np.ndarray  # (n, n, n) of design identifiers
    designs: dict[str, DesignParams]
    blend_width: float = 0.1

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=object)
        if grid.ndim != 3 or len(set(grid.shape)) != 1:
            raise ValidationError("tile grid must be n x n x n")
        missing = {str(g) for g in grid.ravel()} - set(self.designs)
        if missing:
            raise ValidationError(f"unresolved design identifiers: {sorted(missing)}")
        if not 0 < self.blend_width <= 0.25:
            raise ValidationError("blend_width must lie in (0, 0.25]")
        object.__setattr__(self, "grid", grid.astype(str))

    @property
    def n(self) -> int:
        return self.grid.shape[0]

    def repeated(self, n: int) -> "TileSpec":
        idx = np.arange(n) % self.n
        return TileSpec(self.grid[np.ix_(idx, idx, idx)], self.designs, self.blend_width)

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "blend_width": self.blend_width,
                "designs": {k: v.to_dict() for k, v in sorted(self.designs.items())}}

    @classmethod
    def from_dict(cls, doc: dict) -> "TileSpec":
        unknown = set(doc) - {"grid", "blend_width", "designs"}
        if unknown:
            raise ValidationError(f"unknown tile spec keys: {sorted(unknown)}")
        designs = {k: DesignParams.from_dict(v) for k, v in doc["designs"].items()}
        return cls(np.array(doc["grid"], dtype=object), designs, doc.get("blend_width", 0.1))

    @classmethod
    def from_json(cls, text: str) -> "TileSpec":
        return cls.from_dict(json.loads(text))


def _design_weights(spec: TileSpec, points: np.ndarray) -> dict[str, np.ndarray]:
    n = spec.n
    wx, wy, wz = (block_weights_1d(points[:, a], n, spec.blend_width) for a in range(3))
    out: dict[str, np.ndarray] = {}
    for key in np.unique(spec.grid):
        sel = (spec.grid == key).astype(float)
        out[key] = np.einsum("pi,pj,pk,ijk->p", wx, wy, wz, sel, optimize=True)
    return out


def blend_tiles(spec: TileSpec, points) -> np.ndarray:
    """Blended field at points of [0, n)^3; each block uses its design at p mod 1."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    local = np.mod(pts, 1.0)
    keys = np.unique(spec.grid)
    if len(keys) == 1:
        # weights sum to one, so a uniform tiling is the periodic extension itself
        return eval_field_points(spec.designs[keys[0]], local)
    weights = _design_weights(spec, pts)
    total = np.zeros(len(pts))
    for key, w in weights.items():
        active = w > 0
        if active.any():
            total[active] += w[active] * eval_field_points(spec.designs[key], local[active])
    return total


def blend_grid(spec: TileSpec, r: int) -> np.ndarray:
    """Blended field on the (n r + 1)^3 lattice with spacing 1/r."""
    n = spec.n
    coords = np.arange(n * r + 1) / r
    keys = np.unique(spec.grid)
    fields = {k: eval_field_grid(spec.designs[k], coords) for k in keys}
    if len(keys) == 1:
        return fields[keys[0]]
    w1 = block_weights_1d(coords, n, spec.blend_width)
    total = np.zeros((len(coords),) * 3)
    for key in keys:
        sel = (spec.grid == key).astype(float)
        total += np.einsum("xi,yj,zk,ijk->xyz", w1, w1, w1, sel, optimize=True) * fields[key]
    return total


def tile_mesh(spec: TileSpec, r: int = 32) -> TriMesh:
    """Single isosurface mesh spanning the whole n x n x n block."""
    return _marching_cubes(blend_grid(spec, r), 1.0 / r)
