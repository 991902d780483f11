"""Scalar metrics and variational bounds derived from an effective stiffness.

Tensors are 6x6 in Voigt order (xx, yy, zz, yz, xz, xy) with engineering shear
strains, so the compliance ``S = inv(C)`` carries the usual factors of 2 and 4
in its shear blocks.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ShellularError, ValidationError
from .fem import BaseMaterial, ElasticTensor

# Voigt -> Mandel scaling: shear rows and columns pick up sqrt(2).
MANDEL = np.array([1.0, 1.0, 1.0, math.sqrt(2), math.sqrt(2), math.sqrt(2)])

_J = np.zeros((6, 6))
_J[:3, :3] = 1.0 / 3.0
_I = np.eye(6)


class SingularTensorError(ShellularError, ValueError):
    """Stiffness has a zero (or numerically zero) eigenvalue."""


def _as_array(c) -> np.ndarray:
    arr = np.asarray(c.c if isinstance(c, ElasticTensor) else c, dtype=float)
    if arr.shape != (6, 6):
        raise ValidationError(f"expected a 6x6 tensor, got shape {arr.shape}")
    return arr


def compliance(c, rcond: float = 1e-12) -> np.ndarray:
    c = _as_array(c)
    c = 0.5 * (c + c.T)
    eig = np.linalg.eigvalsh(c)
    if eig[-1] <= 0 or eig[0] <= rcond * eig[-1]:
        raise SingularTensorError(
            f"stiffness is singular or indefinite (eigenvalues {eig[0]:.3e} .. {eig[-1]:.3e})",
            stage="props",
        )
    return np.linalg.inv(c)


def _semidefinite_inverse(c, rcond: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-inverse plus an orthonormal basis of the numerical nullspace."""
    c = 0.5 * (_as_array(c) + _as_array(c).T)
    w, v = np.linalg.eigh(c)
    if w[-1] <= 0 or w[0] < -rcond * w[-1]:
        raise SingularTensorError(f"stiffness is indefinite (eigenvalues {w[0]:.3e} .. {w[-1]:.3e})",
                                  stage="props")
    keep = w > rcond * w[-1]
    s = (v[:, keep] / w[keep]) @ v[:, keep].T
    return s, v[:, ~keep]


def _compliance_form(s: np.ndarray, null: np.ndarray, w: np.ndarray, tol: float = 1e-8) -> float:
    """trace(S W) for a PSD weight W, +inf when W sees the nullspace of C."""
    if null.shape[1] and np.abs(null.T @ w @ null).max() > tol * max(1.0, np.abs(w).max()):
        return math.inf
    return float(np.sum(s * w))


def directional_young(c, axis: int) -> float:
    """E_k = 1 / S_kk for axis k in 1..3; zero when the cell cannot carry load along k."""
    if axis not in (1, 2, 3):
        raise ValidationError(f"axis must be 1, 2 or 3, got {axis}")
    s, null = _semidefinite_inverse(c)
    e = np.zeros((6, 6))
    e[axis - 1, axis - 1] = 1.0
    return 1.0 / _compliance_form(s, null, e)


@dataclass(frozen=True)
class HillAverages:
    K_V: float
    K_R: float
    G_V: float
    G_R: float
    K_eff: float
    G_eff: float
    E_eff: float


_W_BULK = np.zeros((6, 6))
_W_BULK[:3, :3] = 1.0
_W_SHEAR = np.zeros((6, 6))
_W_SHEAR[:3, :3] = 6 * np.eye(3) - 2.0
_W_SHEAR[3:, 3:] = 3 * np.eye(3)


def voigt_reuss_hill(c) -> HillAverages:
    """Voigt, Reuss and Hill moduli; Reuss moduli are zero for a mechanism-bearing tensor."""
    c = _as_array(c)
    s, null = _semidefinite_inverse(c)
    d, o, sh = slice(0, 3), (0, 0, 1), (1, 2, 2)
    K_V = (np.trace(c[d, d]) + 2 * c[o, sh].sum()) / 9.0
    G_V = (np.trace(c[d, d]) - c[o, sh].sum() + 3 * np.trace(c[3:, 3:])) / 15.0
    K_R = 1.0 / _compliance_form(s, null, _W_BULK)
    G_R = 15.0 / _compliance_form(s, null, _W_SHEAR)
    K = 0.5 * (K_V + K_R)
    G = 0.5 * (G_V + G_R)
    E = 9 * K * G / (3 * K + G) if 3 * K + G > 0 else 0.0
    return HillAverages(float(K_V), float(K_R), float(G_V), float(G_R), float(K), float(G), float(E))


def universal_anisotropy(c) -> float:
    h = voigt_reuss_hill(c)
    if h.G_R == 0 or h.K_R == 0:
        return math.inf
    # clip roundoff below zero for isotropic input
    return max(0.0, 5 * h.G_V / h.G_R + h.K_V / h.K_R - 6)


def hs_upper_two_phase(f1: float, K1: float, G1: float, K2: float, G2: float) -> tuple[float, float]:
    """Hashin-Shtrikman bounds with phase 1 as the reference (upper when phase 1 is stiffer)."""
    f2 = 1.0 - f1
    if f2 == 0.0 or (K1 == K2 and G1 == G2):
        return float(K1), float(G1)
    if f1 == 0.0:
        return float(K2), float(G2)
    K = K1 + f2 / (1.0 / (K2 - K1) + 3 * f1 / (3 * K1 + 4 * G1)) if K2 != K1 else K1
    G = (G1 + f2 / (1.0 / (G2 - G1) + 6 * f1 * (K1 + 2 * G1) / (5 * G1 * (3 * K1 + 4 * G1)))
         if G2 != G1 else G1)
    return float(K), float(G)


def hs_upper_bounds(v: float, mat: BaseMaterial | None = None) -> tuple[float, float]:
    """(K, G) upper bounds for solid fraction ``v`` of ``mat`` mixed with void."""
    mat = mat or BaseMaterial()
    if not 0.0 <= v <= 1.0:
        raise ValidationError(f"volume ratio must lie in [0, 1], got {v}")
    return hs_upper_two_phase(v, mat.bulk, mat.shear, 0.0, 0.0)


def offdiag_sum(c) -> float:
    """Sum of |C_ij| over the normal-shear coupling block (rows 1-3, columns 4-6)."""
    return float(np.abs(_as_array(c)[:3, 3:]).sum())


def isotropic_projection(c) -> tuple[float, float]:
    """(K, G) of the closest isotropic tensor in the Mandel (tensor Frobenius) norm."""
    m = _as_array(c) * np.outer(MANDEL, MANDEL)
    three_k = np.sum(m * _J)
    two_g = np.sum(m * (_I - _J)) / 5.0
    return float(three_k / 3.0), float(two_g / 2.0)


def isotropic_tensor(K: float, G: float) -> np.ndarray:
    c = np.zeros((6, 6))
    c[:3, :3] = K - 2.0 * G / 3.0
    c[:3, :3] += np.diag([2.0 * G] * 3)
    c[3:, 3:] = np.diag([G] * 3)
    return c


def isotropic_distance(c) -> float:
    c = _as_array(c)
    K, G = isotropic_projection(c)
    diff = (c - isotropic_tensor(K, G)) * np.outer(MANDEL, MANDEL)
    return float(np.linalg.norm(diff))


@dataclass(frozen=True)
class PropertyReport:
    """Every scalar metric of one homogenized design.

    CSV columns follow the field order below; ``*_ratio`` columns are the
    achieved fraction of the corresponding upper bound.
    """

    E_x: float
    E_y: float
    E_z: float
    K_eff: float
    G_eff: float
    E_eff: float
    K_V: float
    K_R: float
    G_V: float
    G_R: float
    uai: float
    offdiag: float
    iso_distance: float
    volume_ratio: float
    K_HS_upper: float
    G_HS_upper: float
    E_voigt: float
    K_ratio: float
    G_ratio: float
    E_ratio: float

    @property
    def E_dir(self) -> tuple[float, float, float]:
        return self.E_x, self.E_y, self.E_z

    @classmethod
    def header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[float]:
        return [getattr(self, name) for name in self.header()]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(self.header())
        w.writerow([repr(float(x)) for x in self.row()])
        return buf.getvalue()


def _ratio(a: float, b: float) -> float:
    return a / b if b > 0 else math.inf


def property_report(c, volume_ratio: float, mat: BaseMaterial | None = None) -> PropertyReport:
    mat = mat or BaseMaterial()
    c = _as_array(c)
    h = voigt_reuss_hill(c)
    K_hs, G_hs = hs_upper_bounds(volume_ratio, mat)
    E_voigt = volume_ratio * mat.youngs
    E = [directional_young(c, k) for k in (1, 2, 3)]
    return PropertyReport(
        E_x=E[0], E_y=E[1], E_z=E[2],
        K_eff=h.K_eff, G_eff=h.G_eff, E_eff=h.E_eff,
        K_V=h.K_V, K_R=h.K_R, G_V=h.G_V, G_R=h.G_R,
        uai=universal_anisotropy(c),
        offdiag=offdiag_sum(c),
        iso_distance=isotropic_distance(c),
        volume_ratio=float(volume_ratio),
        K_HS_upper=K_hs, G_HS_upper=G_hs, E_voigt=E_voigt,
        K_ratio=_ratio(h.K_eff, K_hs), G_ratio=_ratio(h.G_eff, G_hs),
        E_ratio=_ratio(max(E), E_voigt),
    )
