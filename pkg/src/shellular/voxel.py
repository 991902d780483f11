"""Reduced voxel mesh around the zero isosurface and per-voxel stiffness ratios."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateDesignError, MeshError, ValidationError
from .field import FieldGrid

# Hex node ordering shared with fem.element_stiffness.
LOCAL_NODES = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
     [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]
)

INTERIOR, FACE, EDGE, CORNER = 0, 1, 2, 3
NODE_CLASS_NAMES = ("interior", "face", "edge", "corner")


@dataclass(frozen=True)
class ShellParams:
    """Step-function sharpness, stiffness floor and band expansion depth.

    ``expand_layers=None`` picks ``max(1, round(2 r / 64))`` at mesh time.
    """

    sharpness: float = 500.0
    floor: float = 1e-3
    expand_layers: int | None = None

    def __post_init__(self):
        if not self.sharpness > 0:
            raise ValidationError("sharpness must be positive")
        if not 0 < self.floor < 1:
            raise ValidationError("floor must lie in (0, 1)")
        if self.expand_layers is not None and self.expand_layers < 1:
            raise ValidationError("expand_layers must be >= 1")

    @property
    def v0(self) -> float:
        return 2.0 * (1.0 - self.floor)

    def layers_for(self, r: int) -> int:
        if self.expand_layers is not None:
            return self.expand_layers
        return max(1, int(round(2 * r / 64)))


def step_function(v, sp: ShellParams):
    """h(v) = 1 + v0/2 - v0 / (1 + exp(-k v^2)); equals 1 at v=0, tends to ``floor``."""
    v = np.asarray(v, dtype=float)
    v0 = sp.v0
    with np.errstate(over="ignore"):
        out = 1.0 + 0.5 * v0 - v0 / (1.0 + np.exp(-sp.sharpness * v * v))
    return out if out.ndim else float(out)


def classify_surface_elements(grid: FieldGrid) -> np.ndarray:
    """Boolean (r, r, r) mask of voxels whose corners are not all of one strict sign."""
    if grid.degenerate:
        raise DegenerateDesignError("field is identically zero", stage="mesh")
    # corners within roundoff of zero count as exact zeros
    c = np.where(np.abs(grid.corner_samples) <= 1e-12 * grid.norm, 0.0, grid.corner_samples)
    pos = np.ones(grid.samples.shape, dtype=bool)
    neg = np.ones(grid.samples.shape, dtype=bool)
    r = grid.resolution
    for dx, dy, dz in LOCAL_NODES:
        corner = c[dx:dx + r, dy:dy + r, dz:dz + r]
        pos &= corner > 0
        neg &= corner < 0
    return ~(pos | neg)


def dilate_periodic(mask: np.ndarray, layers: int) -> np.ndarray:
    """BFS expansion by ``layers`` face-adjacent steps with periodic wraparound."""
    out = mask.copy()
    frontier = mask.copy()
    for _ in range(layers):
        grown = np.zeros_like(out)
        for axis in range(3):
            grown |= np.roll(frontier, 1, axis) | np.roll(frontier, -1, axis)
        frontier = grown & ~out
        if not frontier.any():
            break
        out |= frontier
    return out


def complete_periodic(mask: np.ndarray) -> np.ndarray:
    """Add boundary voxels whose periodic partner across a cell face is present."""
    out = mask.copy()
    while True:
        before = out.copy()
        for axis in range(3):
            first = np.take(out, 0, axis=axis)
            last = np.take(out, -1, axis=axis)
            both = first | last
            idx = [slice(None)] * 3
            idx[axis] = 0
            out[tuple(idx)] = both
            idx[axis] = -1
            out[tuple(idx)] = both
        if np.array_equal(before, out):
            return out


@dataclass(frozen=True)
class PeriodicGroup:
    master: int
    slaves: np.ndarray  # node indices
    offsets: np.ndarray  # (n_slaves, 3) lattice offsets in {0, 1}


@dataclass(frozen=True, eq=False)
class VoxelMesh:
    """Voxel subset of an r^3 periodic grid with per-voxel stiffness ratio.

    ``elements`` holds voxel indices (i, j, k) in lexicographic order.  Node
    coordinates are integer lattice points in [0, r]^3; the physical position
    of a node is its lattice coordinate divided by r.
    """

    resolution: int
    elements: np.ndarray
    beta: np.ndarray
    floor: float
    full_grid: bool = False
    layers: int = 0
    surface_count: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def fraction(self) -> float:
        return self.n_elements / self.resolution ** 3

    @property
    def volume_ratio(self) -> float:
        """Sum of beta over the cell volume (absent voxels count as empty)."""
        return float(self.beta.sum()) / self.resolution ** 3

    @cached_property
    def _node_data(self):
        r = self.resolution
        lattice = self.elements[:, None, :] + LOCAL_NODES[None]
        key = (lattice[..., 0] * (r + 1) + lattice[..., 1]) * (r + 1) + lattice[..., 2]
        uniq, inverse = np.unique(key.ravel(), return_inverse=True)
        nodes = np.stack(np.unravel_index(uniq, (r + 1,) * 3), axis=1)
        return nodes, inverse.reshape(-1, 8)

    @property
    def nodes(self) -> np.ndarray:
        return self._node_data[0]

    @property
    def element_nodes(self) -> np.ndarray:
        return self._node_data[1]

    @cached_property
    def node_class(self) -> np.ndarray:
        on_boundary = (self.nodes == 0) | (self.nodes == self.resolution)
        return on_boundary.sum(axis=1).astype(np.int8)

    @cached_property
    def master_lattice(self) -> np.ndarray:
        """Lattice index (flattened r^3) of the periodic representative of each node."""
        r = self.resolution
        m = self.nodes % r
        return (m[:, 0] * r + m[:, 1]) * r + m[:, 2]

    @property
    def node_offsets(self) -> np.ndarray:
        return self.nodes // self.resolution

    @cached_property
    def periodic_groups(self) -> list[PeriodicGroup]:
        boundary = np.flatnonzero(self.node_class > 0)
        keys = self.master_lattice[boundary]
        order = np.argsort(keys, kind="stable")
        boundary, keys = boundary[order], keys[order]
        splits = np.flatnonzero(np.diff(keys)) + 1
        groups = []
        offsets = self.node_offsets
        for members in np.split(boundary, splits):
            off = offsets[members]
            is_master = ~off.any(axis=1)
            if not is_master.any():
                raise MeshError("periodic group without a representative node", stage="PBC")
            master = members[np.argmax(is_master)]
            slaves = members[~is_master]
            groups.append(PeriodicGroup(int(master), slaves, off[~is_master]))
        return groups

    def mask(self) -> np.ndarray:
        r = self.resolution
        out = np.zeros((r, r, r), dtype=bool)
        out[tuple(self.elements.T)] = True
        return out

    def beta_grid(self, fill: float = 0.0) -> np.ndarray:
        r = self.resolution
        out = np.full((r, r, r), fill)
        out[tuple(self.elements.T)] = self.beta
        return out

    # -- exports ------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "resolution": self.resolution,
            "floor": self.floor,
            "layers": self.layers,
            "fraction": self.fraction,
            "volume_ratio": self.volume_ratio,
            "elements": self.elements.tolist(),
            "beta": self.beta.tolist(),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    def occupancy_bytes(self) -> bytes:
        """r^3 bytes, x fastest: 0 = absent, 1..255 = beta quantized over [floor, 1]."""
        r = self.resolution
        grid = np.zeros((r, r, r), dtype=np.uint8)
        scaled = (self.beta - self.floor) / (1.0 - self.floor)
        grid[tuple(self.elements.T)] = 1 + np.rint(254 * np.clip(scaled, 0, 1)).astype(np.uint8)
        return np.ascontiguousarray(grid.transpose(2, 1, 0)).tobytes()

    def write_raw(self, path) -> None:
        Path(path).write_bytes(self.occupancy_bytes())


def build_reduced_mesh(grid: FieldGrid, sp: ShellParams, *, full: bool = False,
                       complete: bool = True) -> VoxelMesh:
    """Surface voxels, dilated by BFS layers, completed across periodic faces.

    With ``full=True`` every voxel of the grid is kept (dense reference mesh).
    """
    r = grid.resolution
    surface = classify_surface_elements(grid)
    n_surface = int(surface.sum())
    if n_surface == 0:
        raise DegenerateDesignError("field has no zero crossing", stage="mesh")
    layers = sp.layers_for(r)
    if full:
        mask = np.ones_like(surface)
    else:
        mask = dilate_periodic(surface, layers)
        if complete:
            mask = complete_periodic(mask)
    elements = np.argwhere(mask)
    values = grid.samples[mask] / grid.norm
    beta = np.clip(step_function(values, sp), sp.floor, 1.0)
    diagnostics = {"full_grid_fallback": bool(mask.all() and not full)}
    return VoxelMesh(r, elements, beta, sp.floor, full_grid=full, layers=layers,
                     surface_count=n_surface, diagnostics=diagnostics)
