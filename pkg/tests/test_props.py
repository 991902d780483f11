import csv
import io
import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import hs_upper_porous, isotropic_stiffness
from shellular.errors import ValidationError
from shellular.fem import BaseMaterial
from shellular.props import (
    PropertyReport,
    SingularTensorError,
    compliance,
    directional_young,
    hs_upper_bounds,
    hs_upper_two_phase,
    isotropic_distance,
    isotropic_projection,
    isotropic_tensor,
    offdiag_sum,
    property_report,
    universal_anisotropy,
    voigt_reuss_hill,
)

ISO = isotropic_stiffness(1.0, 0.3)
CUBIC = np.zeros((6, 6))
CUBIC[:3, :3] = 1.0
CUBIC[range(3), range(3)] = 2.0
CUBIC[range(3, 6), range(3, 6)] = 1.0
VOIGT = {(0, 0): 0, (1, 1): 1, (2, 2): 2, (1, 2): 3, (2, 1): 3, (0, 2): 4, (2, 0): 4, (0, 1): 5, (1, 0): 5}


def random_spd(seed, n=6):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return a @ a.T + 0.5 * np.eye(n)


def to_tensor(c):
    out = np.zeros((3, 3, 3, 3))
    for i, j, k, l in itertools.product(range(3), repeat=4):
        out[i, j, k, l] = c[VOIGT[i, j], VOIGT[k, l]]
    return out


def to_voigt(t):
    out = np.zeros((6, 6))
    for (i, j), a in VOIGT.items():
        for (k, l), b in VOIGT.items():
            out[a, b] = t[i, j, k, l]
    return out


def rotate(c, R):
    return to_voigt(np.einsum("ia,jb,kc,ld,abcd->ijkl", R, R, R, R, to_tensor(c)))


def cubic_group():
    for perm in itertools.permutations(range(3)):
        for s in itertools.product((1, -1), repeat=3):
            R = np.zeros((3, 3))
            R[range(3), perm] = s
            yield R


spd_seeds = st.integers(0, 2 ** 32 - 1)


def test_directional_young_isotropic():
    for axis in (1, 2, 3):
        assert directional_young(ISO, axis) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_directional_young_matches_inverse(seed):
    c = random_spd(seed)
    S = np.linalg.solve(c, np.eye(6))
    for axis in (1, 2, 3):
        assert directional_young(c, axis) == pytest.approx(1.0 / S[axis - 1, axis - 1], rel=1e-10)


def test_isotropic_hill():
    h = voigt_reuss_hill(ISO)
    assert h.K_V == pytest.approx(1 / (3 * 0.4), rel=1e-12)
    assert h.K_R == pytest.approx(1 / (3 * 0.4), rel=1e-12)
    assert h.G_V == pytest.approx(1 / 2.6, rel=1e-12)
    assert h.G_R == pytest.approx(1 / 2.6, rel=1e-12)
    assert h.E_eff == pytest.approx(1.0, rel=1e-12)


def test_cubic_fixture():
    h = voigt_reuss_hill(CUBIC)
    assert h.K_V == pytest.approx(4 / 3, rel=1e-14)
    assert h.K_R == pytest.approx(4 / 3, rel=1e-12)
    # cubic closed forms: G_V = (C11 - C12 + 3 C44) / 5, G_R = 5 / (4 / (C11 - C12) + 3 / C44)
    G_V, G_R = (1 + 3) / 5, 5 / (4 + 3)
    assert h.G_V == pytest.approx(G_V, rel=1e-14)
    assert h.G_R == pytest.approx(G_R, rel=1e-12)
    assert universal_anisotropy(CUBIC) == pytest.approx(5 * G_V / G_R + 1 - 6, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=spd_seeds)
def test_hill_ordering(seed):
    h = voigt_reuss_hill(random_spd(seed))
    assert h.K_R <= h.K_eff <= h.K_V + 1e-12
    assert h.G_R <= h.G_eff <= h.G_V + 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=spd_seeds, s=st.floats(0.01, 100))
def test_uai_scale_invariant(seed, s):
    c = random_spd(seed)
    a = universal_anisotropy(c)
    assert a >= -1e-12
    assert universal_anisotropy(s * c) == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_uai_isotropic_zero():
    assert abs(universal_anisotropy(ISO)) < 1e-12


def test_hs_endpoints():
    mat = BaseMaterial()
    assert hs_upper_bounds(1.0, mat) == (mat.bulk, mat.shear)
    assert hs_upper_bounds(0.0, mat) == (0.0, 0.0)
    with pytest.raises(ValidationError):
        hs_upper_bounds(1.5)
    with pytest.raises(ValidationError):
        hs_upper_bounds(-0.1)


@pytest.mark.parametrize("v", [0.05, 0.1, 0.3, 0.7])
def test_hs_matches_closed_form(v):
    K, G = hs_upper_bounds(v)
    K_ref, G_ref = hs_upper_porous(v)
    assert K == pytest.approx(K_ref, rel=1e-12)
    assert G == pytest.approx(G_ref, rel=1e-12)


def test_hs_reference_values():
    K, G = hs_upper_bounds(0.1)
    assert K == pytest.approx(0.0338409475, rel=1e-8)
    assert G == pytest.approx(0.0211538462, rel=1e-8)


def test_hs_monotone():
    vals = np.array([hs_upper_bounds(v) for v in np.linspace(0, 1, 101)])
    assert np.all(np.diff(vals, axis=0) > 0)


def test_hs_two_phase_void_limit():
    mat = BaseMaterial()
    for v in (0.2, 0.5):
        stiff = hs_upper_two_phase(v, mat.bulk, mat.shear, 1e-12, 1e-12)
        assert stiff == pytest.approx(hs_upper_bounds(v), rel=1e-9)


def test_offdiag():
    assert offdiag_sum(ISO) == 0
    c = np.zeros((6, 6))
    c[0, 3] = 0.2
    assert offdiag_sum(c) == pytest.approx(0.2)
    c[3, 0] = 5.0
    assert offdiag_sum(c) == pytest.approx(0.2)


def _ls_distance(c):
    m = np.outer([1, 1, 1, np.sqrt(2), np.sqrt(2), np.sqrt(2)], [1, 1, 1, np.sqrt(2), np.sqrt(2), np.sqrt(2)])
    basis_k = isotropic_tensor(1.0, 0.0) * m
    basis_g = isotropic_tensor(0.0, 1.0) * m
    A = np.column_stack([basis_k.ravel(), basis_g.ravel()])
    coef, *_ = np.linalg.lstsq(A, (c * m).ravel(), rcond=None)
    return float(np.linalg.norm((c * m).ravel() - A @ coef)), coef


def test_isotropic_distance_zero_on_isotropic():
    assert isotropic_distance(ISO) < 1e-12
    K, G = isotropic_projection(ISO)
    assert K == pytest.approx(1 / 1.2) and G == pytest.approx(1 / 2.6)


@pytest.mark.parametrize("seed", range(5))
def test_isotropic_distance_matches_least_squares(seed):
    c = random_spd(seed)
    d_ref, (K, G) = _ls_distance(c)
    assert isotropic_distance(c) == pytest.approx(d_ref, rel=1e-10)
    assert isotropic_projection(c) == pytest.approx((K, G), rel=1e-10)


def test_isotropic_distance_orthogonal_perturbation():
    rng = np.random.default_rng(0)
    for _ in range(5):
        delta = rng.standard_normal((6, 6)) * 1e-4
        delta = delta + delta.T
        # remove the isotropic part so delta is orthogonal to the family
        K, G = isotropic_projection(delta)
        delta -= isotropic_tensor(K, G)
        m = np.outer([1, 1, 1] + [np.sqrt(2)] * 3, [1, 1, 1] + [np.sqrt(2)] * 3)
        assert isotropic_distance(ISO + delta) == pytest.approx(np.linalg.norm(delta * m), rel=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_isotropic_distance_cubic_invariant(seed):
    c = random_spd(seed)
    d = isotropic_distance(c)
    for R in cubic_group():
        assert isotropic_distance(rotate(c, R)) == pytest.approx(d, rel=1e-10)


def test_rotation_helper_round_trip():
    for R in cubic_group():
        np.testing.assert_allclose(rotate(ISO, R), ISO, atol=1e-14)


def test_singular_tensor():
    c = np.zeros((6, 6))
    c[:2, :2] = [[1.0, 0.3], [0.3, 1.0]]
    c[5, 5] = 0.35
    with pytest.raises(SingularTensorError):
        compliance(c)
    assert directional_young(c, 3) == 0.0
    assert directional_young(c, 1) == pytest.approx(1 - 0.09)
    h = voigt_reuss_hill(c)
    assert h.K_R == 0.0 and h.G_R == 0.0
    assert universal_anisotropy(c) == np.inf


def test_indefinite_tensor_rejected():
    c = np.eye(6)
    c[0, 0] = -1.0
    with pytest.raises(SingularTensorError):
        directional_young(c, 1)


def test_report_fields_and_serialization():
    rep = property_report(CUBIC, 0.2)
    assert rep.E_x == pytest.approx(rep.E_y) == pytest.approx(rep.E_z)
    assert rep.K_ratio == pytest.approx(rep.K_eff / hs_upper_bounds(0.2)[0])
    assert rep.E_voigt == pytest.approx(0.2)
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == PropertyReport.header()
    assert [float(x) for x in rows[1]] == rep.row()
    assert json.loads(rep.to_json())["uai"] == rep.uai
    assert property_report(CUBIC, 0.2) == rep
