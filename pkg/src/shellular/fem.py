"""Periodic voxel homogenization.

Each voxel is an 8-node trilinear hexahedron with stiffness ``beta_e * K0``.
Periodicity is imposed by master-slave elimination: every mesh node maps to
the lattice node it coincides with on the torus, and a node lying on the far
face of the cell carries the jump ``eps . dy``.  One node per connected
component is pinned to remove rigid translations.  The reduced matrix is
strain independent, so it is factorized once for all six test strains.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

from . import linsolve
from .errors import DegenerateDesignError, MeshError, ShellularError, SolverError, ValidationError
from .field import DesignParams, FieldGrid, sample_grid
from .voxel import LOCAL_NODES, ShellParams, VoxelMesh, build_reduced_mesh

log = logging.getLogger(__name__)

VOIGT_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
TIMING_KEYS = ("t_field", "t_mesh", "t_PBC", "t_AS", "t_RHS", "t_solve", "t_C", "t_fwd")

# Beyond this many unknowns the default solver switches to AMG-preconditioned CG.
DIRECT_SOLVER_MAX_DOFS = 250_000


def unit_test_strains() -> np.ndarray:
    """Six symmetric 3x3 strains in Voigt order with unit engineering shear."""
    out = np.zeros((6, 3, 3))
    for s, (i, j) in enumerate(VOIGT_PAIRS):
        if i == j:
            out[s, i, i] = 1.0
        else:
            out[s, i, j] = out[s, j, i] = 0.5
    return out


@dataclass(frozen=True)
class BaseMaterial:
    youngs: float = 1.0
    poisson: float = 0.3

    def __post_init__(self):
        if not self.youngs > 0:
            raise ValidationError("Young's modulus must be positive")
        if not -1.0 < self.poisson < 0.5:
            raise ValidationError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def bulk(self) -> float:
        return self.youngs / (3.0 * (1.0 - 2.0 * self.poisson))

    @property
    def shear(self) -> float:
        return self.youngs / (2.0 * (1.0 + self.poisson))

    def stiffness(self) -> np.ndarray:
        """Isotropic 6x6 Voigt stiffness (engineering shear)."""
        E, nu = self.youngs, self.poisson
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = self.shear
        c = np.zeros((6, 6))
        c[:3, :3] = lam
        c[np.arange(3), np.arange(3)] = lam + 2 * mu
        c[np.arange(3, 6), np.arange(3, 6)] = mu
        return c


def element_stiffness(mat: BaseMaterial, edge: float) -> np.ndarray:
    """24x24 stiffness of a cube of side ``edge``, 2x2x2 Gauss quadrature.

    Rows/columns are ordered node-major (node a, component i) -> 3a + i with
    nodes in :data:`voxel.LOCAL_NODES` order.
    """
    if not edge > 0:
        raise ValidationError("element edge must be positive")
    D = mat.stiffness()
    signs = 2.0 * LOCAL_NODES - 1.0  # natural coordinates of the nodes
    g = 1.0 / np.sqrt(3.0)
    K = np.zeros((24, 24))
    for xi in (-g, g):
        for eta in (-g, g):
            for zeta in (-g, g):
                nat = np.array([xi, eta, zeta])
                # dN/dxi for N_a = prod(1 + s_a * xi) / 8
                terms = 1.0 + signs * nat
                dN = np.empty((8, 3))
                for d in range(3):
                    others = [o for o in range(3) if o != d]
                    dN[:, d] = signs[:, d] * terms[:, others[0]] * terms[:, others[1]] / 8.0
                dNdx = dN * (2.0 / edge)
                B = np.zeros((6, 24))
                for a in range(8):
                    bx, by, bz = dNdx[a]
                    cols = slice(3 * a, 3 * a + 3)
                    B[:, cols] = [[bx, 0, 0], [0, by, 0], [0, 0, bz],
                                  [0, bz, by], [bz, 0, bx], [by, bx, 0]]
                K += B.T @ D @ B * (edge / 2.0) ** 3
    return 0.5 * (K + K.T)


@lru_cache(maxsize=16)
def _cached_k0(youngs: float, poisson: float, r: int) -> np.ndarray:
    k = element_stiffness(BaseMaterial(youngs, poisson), 1.0 / r)
    k.setflags(write=False)
    return k


# ---------------------------------------------------------------------------
# elastic tensor

@dataclass(frozen=True, eq=False)
class ElasticTensor:
    """Symmetric 6x6 effective stiffness, Voigt order (xx, yy, zz, yz, xz, xy)."""

    c: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.shape != (6, 6):
            raise ValidationError(f"elastic tensor must be 6x6, got {c.shape}")
        c = 0.5 * (c + c.T)
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    def __getitem__(self, idx):
        return self.c[idx]

    def scaled(self, s: float) -> "ElasticTensor":
        return ElasticTensor(self.c * s, dict(self.metadata))

    def to_dict(self) -> dict:
        return {"C": self.c.tolist(), **self.metadata}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "ElasticTensor":
        meta = {k: v for k, v in doc.items() if k != "C"}
        return cls(np.array(doc["C"], dtype=float), meta)


# ---------------------------------------------------------------------------
# connectivity

FACE_STEPS = np.eye(3, dtype=np.int64)
# half of the 26-neighbourhood; the other half is covered by symmetry
NODE_STEPS = np.array([s for s in np.ndindex(3, 3, 3)
                       if (np.array(s) - 1).tolist() > [0, 0, 0]], dtype=np.int64) - 1


def _voxel_edges(mask: np.ndarray, index: np.ndarray, steps: np.ndarray):
    """Adjacent voxel pairs (periodic) plus the lattice period each pair crosses."""
    r = mask.shape[0]
    coords = np.argwhere(mask)
    rows, cols, wraps = [], [], []
    for step in steps:
        nb = coords + step
        wrap = np.floor_divide(nb, r)
        nb -= wrap * r
        other = index[nb[:, 0], nb[:, 1], nb[:, 2]]
        hit = other >= 0
        rows.append(index[tuple(coords[hit].T)])
        cols.append(other[hit])
        wraps.append(wrap[hit])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(wraps)


@dataclass(frozen=True)
class Components:
    """Connected components of a voxel set on the periodic torus.

    ``rank[c]`` is the dimension of the lattice of periods component ``c``
    wraps around; ``wraps[c]`` holds a basis of it.  ``piece`` labels the
    pieces connected without crossing the cell boundary.
    """

    labels: np.ndarray
    rank: np.ndarray
    wraps: list
    piece: np.ndarray

    @property
    def count(self) -> int:
        return len(self.rank)


def element_components(mesh: VoxelMesh, connectivity: str = "face") -> Components:
    r = mesh.resolution
    ne = mesh.n_elements
    mask = mesh.mask()
    index = np.full((r, r, r), -1, dtype=np.int64)
    index[tuple(mesh.elements.T)] = np.arange(ne)
    steps = FACE_STEPS if connectivity == "face" else NODE_STEPS
    a, b, wrap = _voxel_edges(mask, index, steps)
    inner = ~wrap.any(axis=1)
    graph = sps.coo_matrix((np.ones(len(a)), (a, b)), shape=(ne, ne))
    n_comp, labels = connected_components(graph, directed=False)
    g_inner = sps.coo_matrix((np.ones(inner.sum()), (a[inner], b[inner])), shape=(ne, ne))
    n_piece, piece = connected_components(g_inner, directed=False)

    # spanning forest over pieces with integer cell potentials; a cycle whose
    # potentials disagree closes around a lattice period
    pa, pb, pw = piece[a[~inner]], piece[b[~inner]], wrap[~inner]
    adjacency: dict[int, list] = {}
    if len(pa):
        key = np.unique(np.concatenate([np.stack([pa, pb], 1), pw], axis=1), axis=0)
        for u, v, *w in key.tolist():
            w = np.array(w)
            adjacency.setdefault(u, []).append((v, w))
            adjacency.setdefault(v, []).append((u, -w))
    potential = np.zeros((n_piece, 3), dtype=np.int64)
    seen = np.zeros(n_piece, dtype=bool)
    piece_comp = np.zeros(n_piece, dtype=np.int64)
    piece_comp[piece] = labels
    found: dict[int, list] = {}
    for start in range(n_piece):
        if seen[start]:
            continue
        seen[start] = True
        stack = [start]
        while stack:
            u = stack.pop()
            for v, w in adjacency.get(u, ()):
                target = potential[u] + w
                if not seen[v]:
                    seen[v] = True
                    potential[v] = target
                    stack.append(v)
                elif not np.array_equal(potential[v], target):
                    found.setdefault(int(piece_comp[u]), []).append(target - potential[v])
    rank = np.zeros(n_comp, dtype=np.int64)
    wraps = [np.zeros((0, 3)) for _ in range(n_comp)]
    for comp, vecs in found.items():
        vecs = np.array(vecs, dtype=float)
        _, sv, vt = np.linalg.svd(vecs)
        k = int((sv > 1e-9 * sv[0]).sum())
        rank[comp] = k
        wraps[comp] = vt[:k]
    return Components(labels, rank, wraps, piece)


def prune_floating(mesh: VoxelMesh) -> VoxelMesh:
    """Drop face-connected components that do not wrap around the cell at all.

    Such islands can translate and rotate freely under periodic constraints
    and carry no load.
    """
    comps = element_components(mesh, "face")
    keep_comp = comps.rank >= 1
    keep = keep_comp[comps.labels]
    removed = int((~keep).sum())
    diagnostics = dict(mesh.diagnostics)
    diagnostics.update(
        components=comps.count,
        component_wrap_rank=comps.rank.tolist(),
        pruned_components=int((~keep_comp).sum()),
        pruned_elements=removed,
    )
    if not keep.any():
        raise MeshError("no component of the shell wraps around the cell",
                        stage="mesh", details=diagnostics)
    if removed:
        log.info("pruned %d floating element(s) in %d component(s)", removed, (~keep_comp).sum())
    return VoxelMesh(mesh.resolution, mesh.elements[keep], mesh.beta[keep], mesh.floor,
                     mesh.full_grid, mesh.layers, mesh.surface_count, diagnostics)


def gauge_pins(mesh: VoxelMesh, anchor: int | None = None) -> list[tuple[int, tuple[int, ...]]]:
    """(master lattice index, pinned components) removing the rigid modes.

    Every node-connected component gets one fully pinned node: the cell corner
    (lattice index 0) when present, ``anchor`` when given and present, else
    its lowest lattice index.  A component wrapping in a single direction can
    also spin about that axis, so one extra tangential component is pinned.
    """
    comps = element_components(mesh, "node")
    if (comps.rank == 0).any():
        raise MeshError("component with no periodic wrap cannot be gauged", stage="PBC",
                        details={"component_wrap_rank": comps.rank.tolist()})
    masters = mesh.master_lattice
    elem_master = masters[mesh.element_nodes]
    r = mesh.resolution
    pins = []
    for c in range(comps.count):
        in_comp = comps.labels == c
        comp_masters = np.unique(elem_master[in_comp])
        if anchor is not None and anchor in comp_masters:
            first = int(anchor)
        else:
            first = int(comp_masters[0])
        pins.append((first, (0, 1, 2)))
        if comps.rank[c] != 1:
            continue
        axis = comps.wraps[c][0]
        # positions inside one boundary-free piece are true (unwrapped) positions
        e_first = np.flatnonzero(in_comp & (elem_master == first).any(axis=1))[0]
        piece_elems = np.flatnonzero(comps.piece == comps.piece[e_first])
        a_local = int(np.flatnonzero(elem_master[e_first] == first)[0])
        origin = mesh.elements[e_first] + LOCAL_NODES[a_local]
        pos = (mesh.elements[piece_elems][:, None, :] + LOCAL_NODES[None]).reshape(-1, 3)
        cand = elem_master[piece_elems].reshape(-1)
        lever = np.cross(axis, (pos - origin) / r)
        best = np.argmax(np.abs(lever).max(axis=1) * (cand != first))
        if np.abs(lever[best]).max() < 1e-12:
            raise MeshError("cannot fix rotation of a single-period component", stage="PBC")
        pins.append((int(cand[best]), (int(np.argmax(np.abs(lever[best]))),)))
    return pins


# ---------------------------------------------------------------------------
# periodic system

@dataclass(eq=False)
class PeriodicSystem:
    """Reduced SPD system over the free master degrees of freedom.

    The full displacement of mesh node n under strain eps is
    ``u_master[master_index[n]] + eps @ node_offsets[n]`` where ``u_master``
    holds the solved free values and zeros at pinned components.
    """

    A: sps.csr_matrix
    rhs: np.ndarray  # (n_free, n_strains)
    strains: np.ndarray  # (n_strains, 3, 3)
    free_dofs: np.ndarray  # indices into the 3 * n_master master dof vector
    master_index: np.ndarray  # mesh node -> master slot
    master_lattice: np.ndarray  # master slot -> lattice index
    node_offsets: np.ndarray
    pins: list
    timings: dict = field(default_factory=dict)

    @property
    def n_master_nodes(self) -> int:
        return len(self.master_lattice)

    @property
    def n_master_dofs(self) -> int:
        return 3 * self.n_master_nodes

    @property
    def n_free_dofs(self) -> int:
        return self.A.shape[0]

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Full nodal displacements (n_nodes, 3, n_strains) from free solutions."""
        u_free = np.asarray(u_free).reshape(len(self.free_dofs), -1)
        u_master = np.zeros((self.n_master_dofs, u_free.shape[1]))
        u_master[self.free_dofs] = u_free
        u = u_master.reshape(self.n_master_nodes, 3, -1)[self.master_index]
        return u + np.einsum("sij,nj->nis", self.strains, self.node_offsets)


def build_periodic_system(mesh: VoxelMesh, K0: np.ndarray, strains: np.ndarray | None = None,
                          anchor: int | None = None) -> PeriodicSystem:
    """Assemble the master-slave reduced matrix and the strain right-hand sides.

    ``anchor`` optionally names the master lattice index held at zero in the
    component containing it (the default is the cell corner).
    """
    t0 = time.perf_counter()
    strains = unit_test_strains() if strains is None else np.asarray(strains, dtype=float)
    if mesh.n_elements == 0:
        raise MeshError("mesh has no elements", stage="PBC")
    lattice = mesh.master_lattice
    uniq, master_idx = np.unique(lattice, return_inverse=True)
    n_master = len(uniq)
    elem_master = master_idx[mesh.element_nodes]  # (ne, 8)
    pins = gauge_pins(mesh, anchor)
    pinned = np.zeros((n_master, 3), dtype=bool)
    for lat, comps in pins:
        pinned[np.searchsorted(uniq, lat), list(comps)] = True
    free_dofs = np.flatnonzero(~pinned.ravel())
    t_pbc = time.perf_counter()

    # assembly: 3x3 node blocks reduced by (row node, col node) key
    ra, cb = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    keys = (elem_master[:, ra.ravel()].astype(np.int64) * n_master
            + elem_master[:, cb.ravel()]).ravel()
    uniq_keys, inverse = np.unique(keys, return_inverse=True)
    blocks = K0.reshape(8, 3, 8, 3).transpose(0, 2, 1, 3).reshape(64, 9)
    weights = np.repeat(mesh.beta, 64)
    pair = np.tile(np.arange(64), mesh.n_elements)
    data = np.empty((len(uniq_keys), 9))
    for comp_i in range(9):
        data[:, comp_i] = np.bincount(inverse, weights=weights * blocks[pair, comp_i],
                                      minlength=len(uniq_keys))
    del weights, pair, inverse, keys
    brow, bcol = np.divmod(uniq_keys, n_master)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(brow, minlength=n_master))])
    full = sps.bsr_matrix((data.reshape(-1, 3, 3), bcol, indptr),
                          shape=(3 * n_master, 3 * n_master)).tocsr()
    A = full[free_dofs][:, free_dofs]
    A = (0.5 * (A + A.T)).tocsr()
    A.sort_indices()
    t_as = time.perf_counter()

    # right-hand sides: only elements with nodes on the far faces carry jumps
    offsets = mesh.node_offsets
    elem_off = offsets[mesh.element_nodes]
    jump = np.flatnonzero(elem_off.reshape(len(elem_off), -1).any(axis=1))
    rhs_full = np.zeros((3 * n_master, len(strains)))
    if len(jump):
        g_e = np.einsum("sij,eaj->eais", strains, elem_off[jump]).reshape(len(jump), 24, -1)
        f_e = np.einsum("ij,ejs->eis", K0, g_e) * mesh.beta[jump, None, None]
        dof = (3 * elem_master[jump][:, :, None] + np.arange(3)).reshape(-1)
        for s in range(len(strains)):
            rhs_full[:, s] = -np.bincount(dof, weights=f_e[..., s].reshape(-1),
                                          minlength=3 * n_master)
    rhs = rhs_full[free_dofs]
    t_rhs = time.perf_counter()

    return PeriodicSystem(
        A=A, rhs=rhs, strains=strains, free_dofs=free_dofs, master_index=master_idx,
        master_lattice=uniq, node_offsets=offsets, pins=pins,
        timings={"t_PBC": 1e3 * (t_pbc - t0), "t_AS": 1e3 * (t_as - t_pbc),
                 "t_RHS": 1e3 * (t_rhs - t_as)},
    )


# ---------------------------------------------------------------------------
# solving

RESIDUAL_TOL = {"direct": 1e-9, "cg": 1e-5}
CG_RTOL = 1e-6


def _memory_budget() -> float | None:
    try:
        import psutil
    except ImportError:
        return None
    return 0.6 * psutil.virtual_memory().available


def solve_test_strains(system: PeriodicSystem, method: str = "auto", *, full_grid: bool = False) -> np.ndarray:
    """Solve all strain right-hand sides; returns (n_nodes, 3, n_strains) displacements.

    ``auto`` factorizes small systems directly; larger ones are factorized
    when the predicted memory fits, except full grids, whose 3D fill is always
    too large, which go straight to AMG-CG.
    """
    t0 = time.perf_counter()
    A, B = system.A, system.rhs
    if method not in ("auto", "direct", "cg"):
        raise ValidationError(f"unknown solver method {method!r}")
    if A.shape[0] == 0:
        u_free = np.zeros_like(B)
    else:
        u_free = None
        if method == "auto":
            if A.shape[0] <= DIRECT_SOLVER_MAX_DOFS:
                method = "direct"
            elif full_grid:
                method = "cg"
            else:
                try:
                    u_free = linsolve.solve_direct(A, B, max_memory=_memory_budget())
                    method = "direct"
                except linsolve.FactorizationTooLarge as exc:
                    log.info("falling back to AMG-CG: %s", exc)
                    method = "cg"
        if u_free is None:
            if method == "direct":
                u_free = linsolve.solve_direct(A, B)
            else:
                u_free = linsolve.solve_cg(A, B, rtol=CG_RTOL)
        residual = np.linalg.norm(A @ u_free - B, axis=0)
        scale = np.linalg.norm(B, axis=0)
        bad = residual > RESIDUAL_TOL[method] * np.maximum(scale, np.finfo(float).tiny)
        bad &= scale > 0
        if bad.any() or not np.all(np.isfinite(u_free)):
            raise SolverError(
                f"residual check failed: {residual / np.maximum(scale, 1e-300)}",
                stage="solve", details=linsolve.matrix_stats(A),
            )
    system.timings["t_solve"] = 1e3 * (time.perf_counter() - t0)
    system.timings["solver"] = method
    return system.expand(u_free)


def effective_tensor(mesh: VoxelMesh, K0: np.ndarray, u: np.ndarray, chunk: int = 20000) -> ElasticTensor:
    """C_ab = sum_e u_e^a . beta_e K0 u_e^b over the unit-volume cell."""
    n_s = u.shape[2]
    c = np.zeros((n_s, n_s))
    for start in range(0, mesh.n_elements, chunk):
        stop = start + chunk
        ue = u[mesh.element_nodes[start:stop]].reshape(-1, 24, n_s)
        ku = np.einsum("ij,ejs->eis", K0, ue)
        c += np.einsum("e,eis,eit->st", mesh.beta[start:stop], ue, ku)
    return ElasticTensor(c)


# ---------------------------------------------------------------------------
# pipeline

@dataclass(eq=False)
class Homogenization:
    tensor: ElasticTensor
    mesh: VoxelMesh
    grid: FieldGrid
    system: PeriodicSystem
    timings: dict

    @property
    def volume_ratio(self) -> float:
        return self.mesh.volume_ratio


@contextmanager
def _stage(name: str):
    try:
        yield
    except ShellularError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (ValueError, RuntimeError, MemoryError) as exc:
        raise SolverError(str(exc), stage=name) from exc


def homogenize_mesh(mesh: VoxelMesh, mat: BaseMaterial, *, solver: str = "auto",
                    prune: bool = True, anchor: int | None = None) -> tuple[ElasticTensor, PeriodicSystem, VoxelMesh]:
    """Homogenize an already-built voxel mesh."""
    t0 = time.perf_counter()
    with _stage("mesh"):
        if prune and not mesh.full_grid:
            mesh = prune_floating(mesh)
    t_prune = 1e3 * (time.perf_counter() - t0)
    K0 = _cached_k0(mat.youngs, mat.poisson, mesh.resolution)
    with _stage("PBC"):
        system = build_periodic_system(mesh, K0, anchor=anchor)
    with _stage("solve"):
        u = solve_test_strains(system, solver, full_grid=mesh.full_grid)
    t1 = time.perf_counter()
    with _stage("C"):
        tensor = effective_tensor(mesh, K0, u)
    system.timings["t_C"] = 1e3 * (time.perf_counter() - t1)
    system.timings["t_prune"] = t_prune
    return tensor, system, mesh


def homogenize(params: DesignParams, sp: ShellParams | None = None, mat: BaseMaterial | None = None,
               r: int = 32, *, full: bool = False, solver: str = "auto",
               anchor: int | None = None) -> Homogenization:
    """Field sampling, reduced mesh, periodic solve and effective tensor in one call."""
    sp = sp or ShellParams()
    mat = mat or BaseMaterial()
    t0 = time.perf_counter()
    with _stage("field"):
        grid = sample_grid(params, r)
        if grid.degenerate:
            raise DegenerateDesignError("field is identically zero")
    t1 = time.perf_counter()
    with _stage("mesh"):
        mesh = build_reduced_mesh(grid, sp, full=full)
    t2 = time.perf_counter()
    tensor, system, mesh = homogenize_mesh(mesh, mat, solver=solver, anchor=anchor)
    t_end = time.perf_counter()
    timings = {
        "t_field": 1e3 * (t1 - t0),
        "t_mesh": 1e3 * (t2 - t1) + system.timings.get("t_prune", 0.0),
        **{k: system.timings[k] for k in ("t_PBC", "t_AS", "t_RHS", "t_solve", "t_C")},
        "t_fwd": 1e3 * (t_end - t0),
    }
    meta = {
        "resolution": r,
        "volume_ratio": mesh.volume_ratio,
        "element_fraction": mesh.fraction,
        "n_elements": mesh.n_elements,
        "n_free_dofs": system.n_free_dofs,
        "solver": system.timings.get("solver"),
        "timings_ms": timings,
    }
    return Homogenization(ElasticTensor(tensor.c, meta), mesh, grid, system, timings)
