"""Independent reference implementations used only by the tests.

Nothing here calls the code under test except for reading plain data
(node ordering, design parameters).
"""

from __future__ import annotations

import itertools
import math
import struct

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from shellular.voxel import LOCAL_NODES


# ---------------------------------------------------------------------------
# field

def _weight(h: int, k: int, l: int) -> float:
    zeros = [h, k, l].count(0)
    return {0: 1.0, 1: 0.5, 2: 0.25}[zeros]


def image_positions(position, symmetry: str) -> list[tuple[float, float, float]]:
    """All mirrored copies of one free charge, duplicates included."""
    p = [float(c) for c in position]
    if symmetry == "none":
        return [tuple(p)]
    perms = [(0, 1, 2)] if symmetry == "cubic_octant" else list(itertools.permutations(range(3)))
    out = []
    for perm in perms:
        for flips in itertools.product((False, True), repeat=3):
            out.append(tuple(1.0 - p[perm[a]] if flips[a] else p[perm[a]] for a in range(3)))
    return out


def field_direct(positions, signs, alpha, symmetry: str, point) -> float:
    """Plain triple loop over images and (h, k, l)."""
    K = np.asarray(alpha).shape[0] - 1
    x, y, z = (float(c) for c in point)
    total = 0.0
    for pos, q in zip(positions, signs):
        for (a, b, c) in image_positions(pos, symmetry):
            for h in range(K + 1):
                for k in range(K + 1):
                    for l in range(K + 1):
                        if h == k == l == 0:
                            continue
                        total += (q * alpha[h][k][l] * _weight(h, k, l) / (h * h + k * k + l * l)
                                  * math.cos(2 * math.pi * h * (x - a))
                                  * math.cos(2 * math.pi * k * (y - b))
                                  * math.cos(2 * math.pi * l * (z - c)))
    return total


# ---------------------------------------------------------------------------
# elasticity

def isotropic_stiffness(E: float, nu: float) -> np.ndarray:
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    C = np.zeros((6, 6))
    for i in range(3):
        for j in range(3):
            C[i, j] = lam + (2 * mu if i == j else 0.0)
        C[3 + i, 3 + i] = mu
    return C


def hex_stiffness(E: float, nu: float, h: float) -> np.ndarray:
    """Trilinear hex stiffness by 3-point Gauss quadrature per axis (exact here)."""
    D = isotropic_stiffness(E, nu)
    pts, wts = np.polynomial.legendre.leggauss(3)
    K = np.zeros((24, 24))
    s = 2 * LOCAL_NODES - 1
    for (i, xi), (j, eta), (k, zeta) in itertools.product(enumerate(pts), repeat=3):
        w = wts[i] * wts[j] * wts[k]
        B = np.zeros((6, 24))
        for a in range(8):
            sx, sy, sz = s[a]
            # derivative in physical coords: dN/dx = (2/h) dN/dxi
            dx = sx * (1 + sy * eta) * (1 + sz * zeta) / 8 * 2 / h
            dy = sy * (1 + sx * xi) * (1 + sz * zeta) / 8 * 2 / h
            dz = sz * (1 + sx * xi) * (1 + sy * eta) / 8 * 2 / h
            B[0, 3 * a] = dx
            B[1, 3 * a + 1] = dy
            B[2, 3 * a + 2] = dz
            B[3, 3 * a + 1], B[3, 3 * a + 2] = dz, dy
            B[4, 3 * a], B[4, 3 * a + 2] = dz, dx
            B[5, 3 * a], B[5, 3 * a + 1] = dy, dx
        K += w * B.T @ D @ B * (h / 2) ** 3
    return K


def voigt_strains() -> list[np.ndarray]:
    pairs = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]
    out = []
    for i, j in pairs:
        e = np.zeros((3, 3))
        if i == j:
            e[i, i] = 1.0
        else:
            e[i, j] = e[j, i] = 0.5
        out.append(e)
    return out


def kkt_homogenize(elements: np.ndarray, beta: np.ndarray, r: int, E: float = 1.0, nu: float = 0.3,
                   dense: bool = True):
    """Periodic homogenization with Lagrange multipliers on every periodic pair.

    Every node on a far face (coordinate == r) is tied to its wrapped image
    by u_s - u_m = eps (x_s - x_m).  The gauge is the zero mean of the
    wrapped nodes.  Returns (C, nodes, u) with u of shape (n_nodes, 3, 6).
    """
    elements = np.asarray(elements)
    corners = (elements[:, None, :] + LOCAL_NODES[None]).reshape(-1, 3)
    nodes, inv = np.unique(corners, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 8)
    n = len(nodes)
    index = {tuple(p): i for i, p in enumerate(nodes.tolist())}
    Ke = hex_stiffness(E, nu, 1.0 / r)

    rows, cols, vals = [], [], []
    for e in range(len(elements)):
        dofs = (3 * inv[e][:, None] + np.arange(3)).ravel()
        rows.append(np.repeat(dofs, 24))
        cols.append(np.tile(dofs, 24))
        vals.append((beta[e] * Ke).ravel())
    K = sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(3 * n, 3 * n))

    # constraint rows: one per (slave node, component), plus 3 gauge rows
    c_rows, c_cols, c_vals, jumps = [], [], [], []
    row = 0
    for i, p in enumerate(nodes.tolist()):
        if max(p) < r:
            continue
        m = tuple(c % r for c in p)
        if m not in index:
            raise ValueError(f"node {p} has no wrapped image in the mesh")
        j = index[m]
        dx = (np.array(p) - np.array(m)) / r
        for comp in range(3):
            c_rows += [row, row]
            c_cols += [3 * i + comp, 3 * j + comp]
            c_vals += [1.0, -1.0]
            jumps.append((comp, dx))
            row += 1
    interior = [i for i, p in enumerate(nodes.tolist()) if max(p) < r]
    for comp in range(3):
        for i in interior:
            c_rows.append(row)
            c_cols.append(3 * i + comp)
            c_vals.append(1.0)
        jumps.append(None)
        row += 1
    Cm = sps.csr_matrix((c_vals, (c_rows, c_cols)), shape=(row, 3 * n))

    G = np.zeros((row, 6))
    for s, eps in enumerate(voigt_strains()):
        for k, jump in enumerate(jumps):
            if jump is not None:
                comp, dx = jump
                G[k, s] = eps[comp] @ dx
    saddle = sps.bmat([[K, Cm.T], [Cm, None]], format="csc")
    rhs = np.vstack([np.zeros((3 * n, 6)), G])
    if dense:
        sol = np.linalg.solve(saddle.toarray(), rhs)
    else:
        sol = spla.splu(saddle).solve(rhs)
    u = sol[:3 * n]
    C = u.T @ (K @ u)
    return 0.5 * (C + C.T), nodes, u.reshape(n, 3, 6)


def laminate_two_phase(v: float, floor: float, E: float = 1.0, nu: float = 0.3) -> tuple[float, float]:
    """(C33, C11) of a layered two-phase medium stacked along z, phases E and floor*E."""
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    M = lam + E / (1 + nu)  # constrained modulus lambda + 2 mu
    fractions = np.array([v, 1 - v])
    scale = np.array([1.0, floor])
    C33 = 1.0 / np.sum(fractions / (scale * M))
    # C11 = <C11 - C13^2 / C33> + <C13 / C33>^2 C33*; identical nu gives C13/C33 = lam / M
    ratio = lam / M
    C11 = np.sum(fractions * scale * (M - lam * ratio)) + ratio ** 2 * C33
    return float(C33), float(C11)


def hs_upper_porous(v: float, E: float = 1.0, nu: float = 0.3) -> tuple[float, float]:
    """Closed-form upper bounds for a porous isotropic solid at solid fraction v."""
    K = E / (3 * (1 - 2 * nu))
    G = E / (2 * (1 + nu))
    K_hs = 4 * v * K * G / (3 * K * (1 - v) + 4 * G)
    G_hs = v * G * (9 * K + 8 * G) / (9 * K + 8 * G + 6 * (1 - v) * (K + 2 * G))
    return K_hs, G_hs


# ---------------------------------------------------------------------------
# geometry

def read_binary_stl(data: bytes) -> tuple[bytes, np.ndarray, np.ndarray]:
    """(header, normals (n, 3), triangles (n, 3, 3)) parsed with struct."""
    header = data[:80]
    (count,) = struct.unpack("<I", data[80:84])
    if len(data) != 84 + 50 * count:
        raise ValueError(f"size {len(data)} does not match {count} triangles")
    normals = np.empty((count, 3))
    tris = np.empty((count, 3, 3))
    for t in range(count):
        rec = struct.unpack("<12fH", data[84 + 50 * t: 84 + 50 * (t + 1)])
        normals[t] = rec[0:3]
        tris[t] = np.array(rec[3:12]).reshape(3, 3)
        if rec[12] != 0:
            raise ValueError("non-zero attribute byte count")
    return header, normals, tris


def periodic_distances_bruteforce(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Symmetric mean nearest distance and Hausdorff by full pairwise scan on the torus."""
    diff = np.abs(a[:, None, :] - b[None, :, :]) % 1.0
    diff = np.minimum(diff, 1.0 - diff)
    d = np.sqrt((diff ** 2).sum(-1))
    ab, ba = d.min(axis=1), d.min(axis=0)
    return float(0.5 * (ab.mean() + ba.mean())), float(max(ab.max(), ba.max()))


def triangle_area(tris: np.ndarray) -> float:
    return float(0.5 * np.linalg.norm(np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=1).sum())


def signed_volume(tris: np.ndarray) -> float:
    return float(np.einsum("ij,ij->i", tris[:, 0], np.cross(tris[:, 1], tris[:, 2])).sum() / 6.0)
