"""Truncated periodic charge-potential field and its parameter gradients.

The field of a set of unit point charges in a periodic cube is expanded in a
truncated cosine series.  Every public function here is pure; arrays passed in
are never mutated.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateDesignError, ValidationError

TWO_PI = 2.0 * np.pi

SYMMETRY_MODES = ("none", "cubic_octant", "tetrahedral")

# Weight used when no index is zero.  The series derivation only fixes the
# one-zero (1/2) and two-zero (1/4) cases.
DEFAULT_FULL_WEIGHT = 1.0


def basis_weight(h: int, k: int, l: int, full_weight: float = DEFAULT_FULL_WEIGHT) -> float:
    """Multiplicity weight of the (h, k, l) cosine term."""
    if min(h, k, l) < 0:
        raise ValidationError(f"basis indices must be non-negative, got {(h, k, l)}")
    zeros = (h == 0) + (k == 0) + (l == 0)
    if zeros == 3:
        raise ValidationError("the (0,0,0) term is excluded from the series")
    if zeros == 2:
        return 0.25
    if zeros == 1:
        return 0.5
    return float(full_weight)


def basis_coefficients(K: int, full_weight: float = DEFAULT_FULL_WEIGHT) -> np.ndarray:
    """Array c[h,k,l] = w_hkl / (h^2 + k^2 + l^2), zero at the origin."""
    c = np.zeros((K + 1,) * 3)
    for h, k, l in itertools.product(range(K + 1), repeat=3):
        if h or k or l:
            c[h, k, l] = basis_weight(h, k, l, full_weight) / (h * h + k * k + l * l)
    return c


def weight_keys(K: int) -> list[tuple[int, int, int]]:
    """All weight index triples, lexicographic, (0,0,0) excluded."""
    return [t for t in itertools.product(range(K + 1), repeat=3) if any(t)]


def weight_orbits(K: int, symmetry: str = "none") -> list[list[tuple[int, int, int]]]:
    """Groups of weight indices that share one free value.

    Axis permutations in the tetrahedral group map the (h, k, l) term onto
    (k, h, l) and so on, so that mode ties every permutation of an index
    triple together.  Other modes leave each weight free.  Orbits are listed
    by their representative (the first member in lexicographic order).
    """
    keys = weight_keys(K)
    if symmetry != "tetrahedral":
        return [[k] for k in keys]
    orbits: dict[tuple[int, int, int], list] = {}
    for key in keys:
        orbits.setdefault(tuple(sorted(key, reverse=True)), []).append(key)
    return sorted(orbits.values(), key=lambda o: o[0])


# --------------------------------------------------------------------------
# symmetry groups

def _octahedral_group() -> np.ndarray:
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            mats.append(m)
    return np.array(mats)


OCTAHEDRAL_GROUP = _octahedral_group()
# reflections about the three mid-planes, in the order (c or 1-c per axis)
OCTANT_GROUP = np.array(
    [np.diag(s) for s in itertools.product((1.0, -1.0), repeat=3)]
)


def symmetry_group(mode: str) -> np.ndarray:
    """Orthogonal matrices acting about the cell centre for a symmetry mode."""
    if mode == "none":
        return np.eye(3)[None]
    if mode == "cubic_octant":
        return OCTANT_GROUP
    if mode == "tetrahedral":
        return OCTAHEDRAL_GROUP
    raise ValidationError(f"unknown symmetry mode {mode!r}")


def in_fundamental_volume(positions: np.ndarray, mode: str, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of positions lying inside the fundamental volume of ``mode``."""
    p = np.atleast_2d(positions)
    if mode == "none":
        return np.ones(len(p), dtype=bool)
    in_box = np.all((p >= -tol) & (p <= 0.5 + tol), axis=1)
    if mode == "cubic_octant":
        return in_box
    if mode == "tetrahedral":
        x, y, z = p.T
        return in_box & (z <= y + tol) & (y <= x + tol)
    raise ValidationError(f"unknown symmetry mode {mode!r}")


# --------------------------------------------------------------------------
# parameter containers

@dataclass(frozen=True)
class Charge:
    position: tuple[float, float, float]
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValidationError(f"charge sign must be +1 or -1, got {self.sign}")
        object.__setattr__(self, "position", tuple(float(c) % 1.0 for c in self.position))


@dataclass(frozen=True, eq=False)
class DesignParams:
    """Charge layout plus basis weights.

    ``positions`` are the free (pre-expansion) charge positions when
    ``symmetry`` is not ``"none"``; :func:`expand_symmetry` produces the full
    charge set.  ``alpha`` is a (K+1)^3 array whose [0,0,0] entry is ignored
    and stored as zero.
    """

    positions: np.ndarray
    signs: np.ndarray
    alpha: np.ndarray
    symmetry: str = "none"
    full_weight: float = DEFAULT_FULL_WEIGHT
    wrap: bool = field(default=True, repr=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        signs = np.array(self.signs, dtype=int).reshape(-1)
        alpha = np.array(self.alpha, dtype=float)
        if self.symmetry not in SYMMETRY_MODES:
            raise ValidationError(f"unknown symmetry mode {self.symmetry!r}")
        if len(pos) != len(signs):
            raise ValidationError("positions and signs differ in length")
        if not np.all(np.isin(signs, (1, -1))):
            raise ValidationError("charge signs must be +1 or -1")
        if np.count_nonzero(signs == 1) != np.count_nonzero(signs == -1):
            raise ValidationError("numbers of positive and negative charges differ")
        if alpha.ndim != 3 or len(set(alpha.shape)) != 1:
            raise ValidationError(f"alpha must be a cube array, got shape {alpha.shape}")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(alpha)):
            raise ValidationError("non-finite design parameters")
        alpha = alpha.copy()
        alpha[0, 0, 0] = 0.0
        if self.symmetry != "none":
            bad = ~in_fundamental_volume(pos, self.symmetry)
            if bad.any():
                raise ValidationError(
                    f"{bad.sum()} charge(s) outside the {self.symmetry} fundamental volume"
                )
            if self.symmetry == "tetrahedral":
                spread = max(np.ptp(alpha[tuple(np.array(o).T)]) for o in weight_orbits(alpha.shape[0] - 1, "tetrahedral"))
                if spread > 1e-12 * max(1.0, np.abs(alpha).max()):
                    raise ValidationError("tetrahedral designs need alpha invariant under index permutation")
        elif self.wrap:
            pos = np.mod(pos, 1.0)
        for name, arr in (("positions", pos), ("signs", signs), ("alpha", alpha)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.alpha.shape[0] - 1

    @property
    def n_charges(self) -> int:
        return len(self.signs)

    @property
    def charges(self) -> list[Charge]:
        return [Charge(tuple(p), int(q)) for p, q in zip(self.positions, self.signs)]

    @property
    def weights(self) -> dict[tuple[int, int, int], float]:
        return {key: float(self.alpha[key]) for key in weight_keys(self.K)}

    def with_signs_flipped(self) -> "DesignParams":
        return self.replace(signs=-self.signs)

    def replace(self, **changes) -> "DesignParams":
        kw = dict(positions=self.positions, signs=self.signs, alpha=self.alpha,
                  symmetry=self.symmetry, full_weight=self.full_weight)
        kw.update(changes)
        return DesignParams(**kw)

    # flattened view used by optimizers: positions then one value per weight orbit
    @property
    def n_free(self) -> int:
        return self.positions.size + len(weight_orbits(self.K, self.symmetry))

    def to_vector(self) -> np.ndarray:
        orbits = weight_orbits(self.K, self.symmetry)
        return np.concatenate([self.positions.ravel(), [self.alpha[o[0]] for o in orbits]])

    def from_vector(self, vec: Sequence[float]) -> "DesignParams":
        vec = np.asarray(vec, dtype=float).ravel()
        npos = self.positions.size
        if vec.size != self.n_free:
            raise ValidationError(f"expected vector of length {self.n_free}, got {vec.size}")
        alpha = np.zeros_like(self.alpha)
        for orbit, value in zip(weight_orbits(self.K, self.symmetry), vec[npos:]):
            for key in orbit:
                alpha[key] = value
        return self.replace(positions=vec[:npos].reshape(-1, 3), alpha=alpha)

    def __eq__(self, other):
        if not isinstance(other, DesignParams):
            return NotImplemented
        return (
            self.symmetry == other.symmetry
            and self.full_weight == other.full_weight
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.alpha, other.alpha)
        )

    # -- JSON ---------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "symmetry": self.symmetry,
            "K": self.K,
            "charges": [{"p": [float(c) for c in p], "q": int(q)}
                        for p, q in zip(self.positions, self.signs)],
            "alpha": {f"{h},{k},{l}": float(self.alpha[h, k, l])
                      for h, k, l in weight_keys(self.K)},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignParams":
        allowed = {"symmetry", "K", "charges", "alpha"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValidationError(f"unknown design keys: {sorted(unknown)}")
        missing = {"K", "charges", "alpha"} - set(doc)
        if missing:
            raise ValidationError(f"missing design keys: {sorted(missing)}")
        K = doc["K"]
        if not isinstance(K, int) or K < 0:
            raise ValidationError("K must be a non-negative integer")
        alpha = np.zeros((K + 1,) * 3)
        seen = set()
        for key, value in doc["alpha"].items():
            try:
                idx = tuple(int(s) for s in key.split(","))
            except ValueError:
                raise ValidationError(f"bad alpha key {key!r}") from None
            if len(idx) != 3 or min(idx) < 0 or max(idx) > K or not any(idx):
                raise ValidationError(f"alpha key {key!r} out of range for K={K}")
            alpha[idx] = float(value)
            seen.add(idx)
        if len(seen) != (K + 1) ** 3 - 1:
            raise ValidationError(f"alpha must have exactly {(K + 1) ** 3 - 1} entries")
        charges = doc["charges"]
        for c in charges:
            if set(c) != {"p", "q"}:
                raise ValidationError(f"charge entries need exactly 'p' and 'q', got {sorted(c)}")
        positions = np.array([c["p"] for c in charges], dtype=float).reshape(-1, 3)
        signs = np.array([c["q"] for c in charges], dtype=int)
        return cls(positions, signs, alpha, symmetry=doc.get("symmetry", "none"))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text: str) -> "DesignParams":
        return cls.from_dict(json.loads(text))


def expand_symmetry(params: DesignParams) -> DesignParams:
    """Mirror fundamental-volume charges into the full unit cell.

    Coincident images are kept, so the expanded count is always 8x (cubic
    octant) or 48x (tetrahedral) the input count.
    """
    if params.symmetry == "none":
        return params
    group = symmetry_group(params.symmetry)
    centred = params.positions - 0.5
    images = np.einsum("gab,nb->nga", group, centred) + 0.5
    positions = np.mod(images.reshape(-1, 3), 1.0)
    signs = np.repeat(params.signs, len(group))
    return DesignParams(positions, signs, params.alpha, symmetry="none",
                        full_weight=params.full_weight)


# --------------------------------------------------------------------------
# evaluation
#
# Every symmetry group here is a set of axis permutations combined with all
# mid-plane sign flips.  Summing the sign flips first factorizes per axis, so
# a free charge costs one product per permutation instead of one per image.

_ALL_PERMS = tuple(itertools.permutations(range(3)))


def _image_structure(symmetry: str) -> tuple[tuple[tuple[int, int, int], ...], bool]:
    """(axis permutations, whether mirrored images 1 - x are included)."""
    if symmetry == "none":
        return ((0, 1, 2),), False
    if symmetry == "cubic_octant":
        return ((0, 1, 2),), True
    if symmetry == "tetrahedral":
        return _ALL_PERMS, True
    raise ValidationError(f"unknown symmetry mode {symmetry!r}")


def _harmonics(phase: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """cos(h * phase) and sin(h * phase) for h = 0..K, stacked on a new first axis."""
    c1, s1 = np.cos(phase), np.sin(phase)
    cos = np.empty((K + 1,) + phase.shape)
    sin = np.empty_like(cos)
    cos[0], sin[0] = 1.0, 0.0
    if K >= 1:
        cos[1], sin[1] = c1, s1
    # higher harmonics by angle addition
    for h in range(2, K + 1):
        cos[h] = cos[h - 1] * c1 - sin[h - 1] * s1
        sin[h] = sin[h - 1] * c1 + cos[h - 1] * s1
    return cos, sin


def _axis_tables(coords: np.ndarray, charge_coords: np.ndarray, K: int, mirrored: bool):
    """Image-summed cosine tables and their charge-coordinate derivatives.

    Returns ``(T, D)`` of shape (K+1, n_charges, n_points) with
    T = cos(2 pi h (x - t)) [+ cos(2 pi h (x - (1 - t)))] and D = dT/dt.
    """
    kk = TWO_PI * np.arange(K + 1)[:, None, None]
    cos, sin = _harmonics(TWO_PI * (coords[None, :] - charge_coords[:, None]), K)
    if not mirrored:
        return cos, kk * sin
    cos_m, sin_m = _harmonics(TWO_PI * (coords[None, :] - (1.0 - charge_coords)[:, None]), K)
    return cos + cos_m, kk * (sin - sin_m)


def _tables(params: DesignParams, axis_coords: Sequence[np.ndarray]):
    perms, mirrored = _image_structure(params.symmetry)
    pairs = sorted({(a, perm[a]) for perm in perms for a in range(3)})
    tables = {(a, b): _axis_tables(np.asarray(axis_coords[a], dtype=float), params.positions[:, b],
                                   params.K, mirrored)
              for a, b in pairs}
    return perms, tables


def _coefficients(params: DesignParams) -> tuple[np.ndarray, np.ndarray]:
    base = basis_coefficients(params.K, params.full_weight)
    return base, base * params.alpha


def eval_field_points(params: DesignParams, points: np.ndarray) -> np.ndarray:
    """Field values at an (n, 3) array of points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _, c = _coefficients(params)
    q = params.signs.astype(float)
    perms, tables = _tables(params, pts.T)
    F = np.zeros(len(pts))
    for perm in perms:
        cx, cy, cz = (tables[a, perm[a]][0] for a in range(3))
        F += np.einsum("hkl,hnp,knp,lnp,n->p", c, cx, cy, cz, q, optimize=True)
    return F


def eval_field(params: DesignParams, point: Sequence[float]) -> float:
    return float(eval_field_points(params, np.asarray(point, dtype=float)[None])[0])


@dataclass(frozen=True)
class FieldGradient:
    """Derivatives of F at one point with respect to the free parameters."""

    positions: np.ndarray  # (n_free_charges, 3)
    alpha: np.ndarray  # (K+1,)*3, [0,0,0] == 0
    symmetry: str = "none"

    def to_vector(self) -> np.ndarray:
        """Gradient with respect to :meth:`DesignParams.to_vector`."""
        orbits = weight_orbits(self.alpha.shape[0] - 1, self.symmetry)
        return np.concatenate([self.positions.ravel(),
                               [sum(self.alpha[k] for k in o) for o in orbits]])


def eval_field_gradient_points(params: DesignParams, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched parameter gradients.

    Returns ``(d_positions, d_alpha)`` with shapes ``(P, n_free, 3)`` and
    ``(P, K+1, K+1, K+1)``.  For symmetric designs the derivatives cover every
    mirrored image of each free charge.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    base, c = _coefficients(params)
    q = params.signs.astype(float)
    perms, tables = _tables(params, pts.T)
    d_pos = np.zeros((len(pts), params.n_charges, 3))
    d_alpha = np.zeros((len(pts),) + c.shape)
    for perm in perms:
        (cx, dx), (cy, dy), (cz, dz) = (tables[a, perm[a]] for a in range(3))
        d_alpha += np.einsum("n,hnp,knp,lnp->phkl", q, cx, cy, cz, optimize=True)
        d_pos[:, :, perm[0]] += np.einsum("hkl,n,hnp,knp,lnp->pn", c, q, dx, cy, cz, optimize=True)
        d_pos[:, :, perm[1]] += np.einsum("hkl,n,hnp,knp,lnp->pn", c, q, cx, dy, cz, optimize=True)
        d_pos[:, :, perm[2]] += np.einsum("hkl,n,hnp,knp,lnp->pn", c, q, cx, cy, dz, optimize=True)
    return d_pos, base[None] * d_alpha


def eval_field_vjp(params: DesignParams, points: np.ndarray,
                   weights: Callable[[np.ndarray], np.ndarray]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Field values and the weighted gradient sum_p w_p dF(p)/dtheta in one pass.

    ``weights`` maps the field values to the per-point weights, so losses
    whose weights depend on F need a single evaluation.  Returns
    ``(F, g_positions (n_free, 3), g_alpha (K+1,)*3)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    base, c = _coefficients(params)
    q = params.signs.astype(float)
    perms, tables = _tables(params, pts.T)
    n, P, K1 = len(q), len(pts), params.K + 1
    cmat = c.reshape(K1 * K1, K1)

    # partial contractions as matrix products over the flattened (charge, point) axis
    partial = []
    F = np.zeros(P)
    for perm in perms:
        (cx, _), (cy, _), (cz, _) = (tables[a, perm[a]] for a in range(3))
        czq = cz * q[None, :, None]
        t_z = (cmat @ czq.reshape(K1, -1)).reshape(K1, K1, n, P)  # sum_l c_hkl cz_l
        yz = np.einsum("hknp,knp->hnp", t_z, cy)
        F += np.einsum("hnp,hnp->p", cx, yz)
        partial.append((czq, t_z, yz))
    w = np.asarray(weights(F), dtype=float)[None, None, :]

    g_pos = np.zeros((n, 3))
    g_alpha = np.zeros(c.shape)
    for perm, (czq, t_z, yz) in zip(perms, partial):
        (cx, dx), (cy, dy), (_, dz) = (tables[a, perm[a]] for a in range(3))
        wcx = cx * w
        g_pos[:, perm[0]] += np.einsum("hnp,hnp->n", dx * w, yz)
        xz = np.einsum("hknp,hnp->knp", t_z, wcx)
        g_pos[:, perm[1]] += np.einsum("knp,knp->n", dy, xz)
        pair = (wcx[:, None] * cy[None]).reshape(K1 * K1, -1)  # wcx_h cy_k
        xy = (cmat.T @ pair).reshape(K1, n, P)
        g_pos[:, perm[2]] += np.einsum("lnp,lnp,n->n", dz, xy, q)
        g_alpha += (pair @ czq.reshape(K1, -1).T).reshape(K1, K1, K1)
    return F, g_pos, base * g_alpha


def eval_field_gradient(params: DesignParams, point: Sequence[float]) -> FieldGradient:
    d_pos, d_alpha = eval_field_gradient_points(params, np.asarray(point, dtype=float)[None])
    return FieldGradient(d_pos[0], d_alpha[0], params.symmetry)


# --------------------------------------------------------------------------
# grids

@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Field samples at voxel centres and voxel corners of an r^3 grid."""

    resolution: int
    samples: np.ndarray  # (r, r, r) at ((i+1/2)/r, ...)
    corner_samples: np.ndarray  # (r+1, r+1, r+1) at (i/r, ...)
    norm: float
    degenerate: bool

    @property
    def normalized(self) -> np.ndarray:
        if self.degenerate:
            raise DegenerateDesignError("field is identically zero; cannot normalize")
        return self.samples / self.norm


def eval_field_grid(params: DesignParams, coords: np.ndarray) -> np.ndarray:
    """Field on the tensor grid ``coords x coords x coords`` (separable evaluation)."""
    coords = np.asarray(coords, dtype=float)
    _, c = _coefficients(params)
    q = params.signs.astype(float)
    perms, tables = _tables(params, (coords, coords, coords))
    out = np.zeros((len(coords),) * 3)
    for perm in perms:
        cx, cy, cz = (tables[a, perm[a]][0] for a in range(3))
        # contract z first, then y, then x
        t = np.einsum("hkl,lnm,n->hknm", c, cz, q)
        u = np.einsum("knj,hknm->hnjm", cy, t)
        out += np.einsum("hni,hnjm->ijm", cx, u)
    return out


def _field_scale(params: DesignParams) -> float:
    """Upper bound on |F| used for the degeneracy threshold."""
    full = expand_symmetry(params)
    c = basis_coefficients(full.K, full.full_weight) * full.alpha
    return float(np.abs(c).sum() * max(full.n_charges, 1))


def sample_grid(params: DesignParams, r: int) -> FieldGrid:
    """Sample F at voxel centres and corners of an r^3 grid."""
    if r < 4:
        raise ValidationError(f"resolution must be >= 4, got {r}")
    centres = (np.arange(r) + 0.5) / r
    corners = np.arange(r + 1) / r
    samples = eval_field_grid(params, centres)
    corner_samples = eval_field_grid(params, corners)
    norm = float(np.abs(samples).max())
    degenerate = not norm > 1e-12 * _field_scale(params)
    return FieldGrid(r, samples, corner_samples, norm, degenerate)


# --------------------------------------------------------------------------
# sampling

def random_design(
    symmetry: str = "none",
    n_charges: int = 2,
    K: int = 2,
    weight_range: tuple[float, float] = (0.0, 1.0),
    seed: int | np.random.Generator | None = None,
) -> DesignParams:
    """Random design with ``n_charges`` free charges inside the fundamental volume.

    Half of the free charges are positive, half negative.
    """
    if n_charges <= 0 or n_charges % 2:
        raise ValidationError(f"charge count must be positive and even, got {n_charges}")
    lo, hi = weight_range
    if hi < lo:
        raise ValidationError("weight_range must be (low, high) with low <= high")
    rng = np.random.default_rng(seed)
    if symmetry == "none":
        positions = rng.random((n_charges, 3))
    elif symmetry == "cubic_octant":
        positions = 0.5 * rng.random((n_charges, 3))
    elif symmetry == "tetrahedral":
        # sorting iid uniforms samples the ordered orthoscheme uniformly
        positions = -np.sort(-0.5 * rng.random((n_charges, 3)), axis=1)
    else:
        raise ValidationError(f"unknown symmetry mode {symmetry!r}")
    signs = np.repeat([1, -1], n_charges // 2)
    alpha = np.zeros((K + 1,) * 3)
    for orbit in weight_orbits(K, symmetry):
        value = rng.uniform(lo, hi)
        for key in orbit:
            alpha[key] = value
    return DesignParams(positions, signs, alpha, symmetry=symmetry)


def plane_design(axis: int = 2, K: int = 2, *, offset: float = 0.0, power: int = 1) -> DesignParams:
    """Two-charge design whose field is proportional to sin(2 pi (x_axis - offset))^power.

    The charges sit at x_axis = 1/4 + offset and 3/4 + offset, so only the odd
    (0, 0, h) terms along ``axis`` survive; ``power`` must be odd and at most
    ``K``.  The zero set is the pair of planes x_axis in {offset, offset + 1/2}.
    """
    if axis not in (0, 1, 2):
        raise ValidationError(f"axis must be 0, 1 or 2, got {axis}")
    if power < 1 or power % 2 == 0 or power > K:
        raise ValidationError(f"power must be odd and at most K={K}, got {power}")
    p_plus = np.full(3, 0.5)
    p_minus = np.full(3, 0.5)
    p_plus[axis] = 0.25 + offset
    p_minus[axis] = 0.75 + offset
    # sin^(2n+1) x = 4^-n sum_k (-1)^k C(2n+1, n-k) sin((2k+1) x)
    n = power // 2
    alpha = np.zeros((K + 1,) * 3)
    for k in range(n + 1):
        h = 2 * k + 1
        amplitude = (-1) ** k * math.comb(power, n - k) / 4 ** n
        # the charge pair contributes 2 * s_h * c_h * alpha_h * sin(h x), s_h = +-1 for h = 1, 3 mod 4
        s_h = 1.0 if h % 4 == 1 else -1.0
        idx = [0, 0, 0]
        idx[axis] = h
        alpha[tuple(idx)] = amplitude / (2.0 * s_h * basis_coefficients(K)[tuple(idx)])
    return DesignParams([p_plus, p_minus], [1, -1], alpha)


def uniform_alpha(K: int, value: float = 1.0) -> np.ndarray:
    alpha = np.full((K + 1,) * 3, float(value))
    alpha[0, 0, 0] = 0.0
    return alpha


def charges_to_arrays(charges: Iterable[Charge]) -> tuple[np.ndarray, np.ndarray]:
    charges = list(charges)
    return (np.array([c.position for c in charges], dtype=float).reshape(-1, 3),
            np.array([c.sign for c in charges], dtype=int))
