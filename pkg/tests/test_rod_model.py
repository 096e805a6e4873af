"""Rod state, constitutive relation, and spatial derivative."""

import math

import numpy as np
import pytest

from tendonrod import rod_model
from tendonrod.rod_model import (
    SL_H, SL_M, SL_N, SL_P, SL_Q, SL_W,
    cosserat_rhs, constitutive_vu, hat, make_params, quat_from_axis_angle,
    quat_mul, quat_normalize, quat_to_rot, tendon_loads, with_changes,
)

from conftest import random_unit_quaternion


def upright_node(params, n=None, m=None, q=None, w=None):
    y = np.zeros(19)
    y[SL_H.start] = 1.0
    if n is not None:
        y[SL_N] = n
    if m is not None:
        y[SL_M] = m
    if q is not None:
        y[SL_Q] = q
    if w is not None:
        y[SL_W] = w
    return y


class TestHat:
    def test_zero_vector(self):
        np.testing.assert_array_equal(hat(np.zeros(3)), np.zeros((3, 3)))

    def test_basis_vector(self):
        expected = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
        np.testing.assert_array_equal(hat(np.array([1.0, 0.0, 0.0])), expected)

    def test_matches_cross_product(self):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([4.0, 5.0, 6.0])
        np.testing.assert_allclose(hat(a) @ b, np.cross(a, b))
        np.testing.assert_allclose(hat(a) @ b, [-3.0, 6.0, -3.0])

    def test_antisymmetric(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.normal(size=3)
            H = hat(a)
            np.testing.assert_allclose(H, -H.T)


class TestQuatToRot:
    def test_identity(self):
        np.testing.assert_allclose(quat_to_rot(np.array([1.0, 0, 0, 0])), np.eye(3))

    def test_quarter_turn_about_z(self):
        h = np.array([math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)])
        expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(quat_to_rot(h), expected, atol=1e-15)

    def test_conjugate_inverts(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            h = random_unit_quaternion(rng)
            R = quat_to_rot(h)
            Rc = quat_to_rot(rod_model.quat_conj(h))
            np.testing.assert_allclose(R @ Rc, np.eye(3), atol=1e-12)

    def test_orthonormal_unit_det(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            R = quat_to_rot(random_unit_quaternion(rng))
            np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            quat_to_rot(np.array([1.0, 0.2, 0.0, 0.0]))

    def test_matches_axis_angle_rotation(self):
        # composition with an axis-angle oracle on random axes
        rng = np.random.default_rng(4)
        for _ in range(100):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(-math.pi, math.pi)
            h = quat_from_axis_angle(axis, angle)
            v = rng.normal(size=3)
            # Rodrigues formula
            expected = (v * math.cos(angle) + np.cross(axis, v) * math.sin(angle)
                        + axis * np.dot(axis, v) * (1.0 - math.cos(angle)))
            np.testing.assert_allclose(quat_to_rot(h) @ v, expected, atol=1e-9)


class TestParams:
    def test_derived_sections(self):
        p = make_params()
        assert p.A == pytest.approx(math.pi * p.r**2)
        assert p.I == pytest.approx(math.pi * p.r**4 / 4.0)
        np.testing.assert_allclose(np.diag(p.J), [p.I, p.I, 2 * p.I])
        G = p.E / (2.0 * (1.0 + p.nu))
        np.testing.assert_allclose(np.diag(p.Kse), [G * p.A, G * p.A, p.E * p.A])
        np.testing.assert_allclose(np.diag(p.Kbt), [p.E * p.I, p.E * p.I, G * 2 * p.I])

    def test_invariants_rejected(self):
        with pytest.raises(ValueError):
            make_params(L=-1.0)
        with pytest.raises(ValueError):
            make_params(N_seg=1)
        with pytest.raises(ValueError):
            make_params(dt=0.0)
        with pytest.raises(ValueError):
            make_params(tendon_angles=[0.0, 1.0])

    def test_with_changes_rederives(self):
        p = make_params()
        stiff = with_changes(p, E=10e9)
        assert stiff.Kbt[0, 0] == pytest.approx(p.Kbt[0, 0] * 10e9 / p.E)
        assert stiff.Kse[2, 2] == pytest.approx(10e9 * p.A)
        assert stiff.L == p.L


class TestConstitutive:
    def test_unloaded_straight_rod(self, table_params):
        h = np.array([1.0, 0, 0, 0])
        v, u = constitutive_vu(h, np.zeros(3), np.zeros(3), np.zeros(3),
                               np.zeros(3), table_params, c0=30.0)
        np.testing.assert_allclose(v, [0.0, 0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(u, [0.0, 0.0, 0.0], atol=1e-15)

    def test_axial_strain(self, table_params):
        # 1% axial strain: n = EA * 0.01 along z
        EA = table_params.Kse[2, 2]
        h = np.array([1.0, 0, 0, 0])
        v, _ = constitutive_vu(h, np.array([0.0, 0.0, 0.01 * EA]), np.zeros(3),
                               np.zeros(3), np.zeros(3), table_params, c0=0.0)
        np.testing.assert_allclose(v, [0.0, 0.0, 1.01], atol=1e-12)

    def test_dense_solve_oracle(self, table_params):
        # table params: Bbt = 0.03 I, dt = 0.05 so c0 = 30
        c0 = 30.0
        h = np.array([1.0, 0, 0, 0])
        m = np.array([0.1, 0.0, 0.0])
        _, u = constitutive_vu(h, np.zeros(3), m, np.zeros(3), np.zeros(3),
                               table_params, c0)
        lhs = table_params.Kbt + c0 * table_params.Bbt
        expected = np.linalg.solve(lhs, m)
        np.testing.assert_allclose(u, expected, atol=1e-15)

    def test_reduces_to_static_formula_when_undamped(self, table_params):
        # Bse = 0 in the table, so v = Kse^-1 R^T n + v* for any history
        rng = np.random.default_rng(5)
        for _ in range(10):
            h = random_unit_quaternion(rng)
            n = rng.normal(size=3)
            hv = rng.normal(size=3)
            v, _ = constitutive_vu(h, n, np.zeros(3), hv, np.zeros(3),
                                   table_params, c0=30.0)
            R = quat_to_rot(h)
            expected = np.linalg.solve(table_params.Kse, R.T @ n) + table_params.vstar
            np.testing.assert_allclose(v, expected, atol=1e-12)

    def test_singular_matrix_rejected(self):
        bad = make_params()
        object.__setattr__(bad, "Kse", np.zeros((3, 3)))
        rod_model._constitutive_inverses.cache_clear()
        with pytest.raises(ValueError, match="singular"):
            constitutive_vu(np.array([1.0, 0, 0, 0]), np.zeros(3), np.zeros(3),
                            np.zeros(3), np.zeros(3), bad, c0=0.0)
        rod_model._constitutive_inverses.cache_clear()


def transcribed_rhs(y, v, u, hist, tau, params, c0):
    """Independent term-by-term transcription of the spatial dynamics,
    using explicit hat matrices instead of cross products."""
    h = y[SL_H]
    n = y[SL_N]
    m = y[SL_M]
    q = y[SL_Q]
    w = y[SL_W]
    hv, hu, hq, hw = hist[0:3], hist[3:6], hist[6:9], hist[9:12]
    R = quat_to_rot(h)
    vt = c0 * v + hv
    ut = c0 * u + hu
    qt = c0 * q + hq
    wt = c0 * w + hw

    p_s = R @ v
    h_s = 0.5 * quat_mul(h, np.array([0.0, u[0], u[1], u[2]]))
    rhoA = params.rho * params.A
    n_s = R @ (rhoA * (hat(w) @ q + qt) + params.Cdrag @ (q * np.abs(q)))
    if params.include_self_weight:
        n_s = n_s - rhoA * params.g
    # tendon loads, written out from the geometry
    slope = params.routing_slope
    denom = math.sqrt(1.0 + slope**2)
    f_t = np.zeros(3)
    l_t = np.zeros(3)
    for i, phi in enumerate(params.tendon_angles):
        d_i = np.array([slope * math.cos(phi), slope * math.sin(phi), -1.0]) / denom
        t_i = np.array([d_i[0], d_i[1], 0.0])
        r_i = params.tendon_offset * np.array([math.cos(phi), math.sin(phi), 0.0])
        f_t += -tau[i] / params.L * (R @ t_i)
        l_t += tau[i] / params.L * (R @ np.cross(r_i, d_i))
    n_s = n_s - f_t
    m_s = params.rho * (R @ (hat(w) @ (params.J @ w) + params.J @ wt)) \
        - hat(p_s) @ n - l_t
    q_s = vt - hat(u) @ q + hat(w) @ v
    w_s = ut - hat(u) @ w
    return np.concatenate([p_s, h_s, n_s, m_s, q_s, w_s])


class TestCosseratRhs:
    def test_upright_static_rod_with_gravity(self, table_params):
        # symmetric tensions, self-weight on: only gravity survives
        y = upright_node(table_params)
        vu = (np.array([0.0, 0.0, 1.0]), np.zeros(3))
        tau = np.full(4, 6.0)
        ys = cosserat_rhs(y, vu, np.zeros(12), tau, table_params, c0=0.0)
        rhoA = table_params.rho * table_params.A
        np.testing.assert_allclose(ys[SL_P], [0.0, 0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(ys[SL_N], [0.0, 0.0, 9.81 * rhoA], atol=1e-12)
        np.testing.assert_allclose(ys[SL_Q], 0.0, atol=1e-15)
        np.testing.assert_allclose(ys[SL_W], 0.0, atol=1e-15)

    def test_all_zero_without_self_weight(self, table_params):
        params = with_changes(table_params, include_self_weight=False)
        y = upright_node(params)
        vu = (np.array([0.0, 0.0, 1.0]), np.zeros(3))
        ys = cosserat_rhs(y, vu, np.zeros(12), np.zeros(4), params, c0=0.0)
        np.testing.assert_allclose(ys[SL_N], 0.0, atol=1e-15)
        np.testing.assert_allclose(ys[SL_M], 0.0, atol=1e-15)

    def test_matches_independent_transcription(self, table_params):
        rng = np.random.default_rng(6)
        for _ in range(50):
            y = np.zeros(19)
            y[SL_P] = rng.normal(size=3)
            y[SL_H] = random_unit_quaternion(rng)
            y[SL_N] = 0.5 * rng.normal(size=3)
            y[SL_M] = 0.1 * rng.normal(size=3)
            y[SL_Q] = 0.2 * rng.normal(size=3)
            y[SL_W] = 0.5 * rng.normal(size=3)
            v = np.array([0, 0, 1.0]) + 0.01 * rng.normal(size=3)
            u = rng.normal(size=3)
            hist = rng.normal(size=12)
            tau = rng.uniform(0.0, 8.0, size=4)
            c0 = 30.0
            ours = cosserat_rhs(y, (v, u), hist, tau, table_params, c0)
            oracle = transcribed_rhs(y, v, u, hist, tau, table_params, c0)
            np.testing.assert_allclose(ours, oracle, atol=1e-12)

    def test_equivariance_under_global_rotation(self, table_params):
        rng = np.random.default_rng(7)
        for _ in range(20):
            Q_quat = random_unit_quaternion(rng)
            Q = quat_to_rot(Q_quat)
            y = np.zeros(19)
            y[SL_P] = rng.normal(size=3)
            y[SL_H] = random_unit_quaternion(rng)
            y[SL_N] = rng.normal(size=3)
            y[SL_M] = 0.2 * rng.normal(size=3)
            y[SL_Q] = 0.1 * rng.normal(size=3)
            y[SL_W] = 0.3 * rng.normal(size=3)
            v = np.array([0, 0, 1.0]) + 0.02 * rng.normal(size=3)
            u = 0.5 * rng.normal(size=3)
            hist = 0.1 * rng.normal(size=12)
            tau = rng.uniform(0.0, 8.0, size=4)

            y_rot = y.copy()
            y_rot[SL_P] = Q @ y[SL_P]
            y_rot[SL_H] = quat_mul(Q_quat, y[SL_H])
            y_rot[SL_N] = Q @ y[SL_N]
            y_rot[SL_M] = Q @ y[SL_M]
            rotated_params = with_changes(table_params, g=Q @ table_params.g)

            ys = cosserat_rhs(y, (v, u), hist, tau, table_params, 30.0)
            ys_rot = cosserat_rhs(y_rot, (v, u), hist, tau, rotated_params, 30.0)
            np.testing.assert_allclose(ys_rot[SL_P], Q @ ys[SL_P], atol=1e-9)
            np.testing.assert_allclose(ys_rot[SL_N], Q @ ys[SL_N], atol=1e-9)
            np.testing.assert_allclose(ys_rot[SL_M], Q @ ys[SL_M], atol=1e-9)
            np.testing.assert_allclose(ys_rot[SL_Q], ys[SL_Q], atol=1e-9)
            np.testing.assert_allclose(ys_rot[SL_W], ys[SL_W], atol=1e-9)
            np.testing.assert_allclose(ys_rot[SL_H],
                                       quat_mul(Q_quat, ys[SL_H]), atol=1e-9)

    def test_straight_upright_no_lateral_components(self):
        # Cdrag = 0, no damping, symmetric tensions, axial gravity
        params = make_params(bbt=0.0, bse=0.0, cdrag=0.0)
        y = upright_node(params)
        vu = (np.array([0.0, 0.0, 1.0]), np.zeros(3))
        ys = cosserat_rhs(y, vu, np.zeros(12), np.full(4, 5.0), params, c0=0.0)
        assert abs(ys[SL_N][0]) <= 1e-12 and abs(ys[SL_N][1]) <= 1e-12
        assert abs(ys[SL_M][0]) <= 1e-12 and abs(ys[SL_M][1]) <= 1e-12

    def test_single_tendon_bends_toward_it(self, table_params):
        # extra tension on the tendon at angle 0 (the +x side) creates a
        # distributed moment about +y, bending the rod toward +x
        y = upright_node(table_params)
        vu = (np.array([0.0, 0.0, 1.0]), np.zeros(3))
        tau = np.array([6.0, 5.0, 5.0, 5.0])
        ys = cosserat_rhs(y, vu, np.zeros(12), tau, table_params, c0=0.0)
        assert ys[SL_M][1] < 0.0  # m_s about -y integrates to m about +y from the tip


class TestTendonLoads:
    def test_zero_slope_gives_zero_force(self, table_params):
        R = np.eye(3)
        f, _ = tendon_loads(np.array([3.0, 9.0, 1.0, 4.0]), table_params, R)
        np.testing.assert_allclose(f, 0.0, atol=1e-15)

    def test_symmetric_tension_moment_cancels(self, table_params):
        R = np.eye(3)
        _, l = tendon_loads(np.full(4, 6.0), table_params, R)
        np.testing.assert_allclose(l, 0.0, atol=1e-15)

    def test_inplane_component_with_slope(self):
        params = make_params(routing_slope=0.5)
        R = np.eye(3)
        f, _ = tendon_loads(np.array([1.0, 0.0, 0.0, 0.0]), params, R)
        denom = math.sqrt(1.25)
        expected = -np.array([0.5 / denom, 0.0, 0.0]) / params.L
        np.testing.assert_allclose(f, expected, atol=1e-15)


class TestSectionState:
    def test_array_round_trip(self):
        rng = np.random.default_rng(8)
        y = rng.normal(size=19)
        y[SL_H] = quat_normalize(y[SL_H])
        z = rng.normal(size=6)
        st = rod_model.SectionState.from_arrays(y, z)
        np.testing.assert_array_equal(st.as_y(), y)
        np.testing.assert_array_equal(st.as_z(), z)
        st.validate()

    def test_validate_rejects_bad_quaternion(self):
        y = np.zeros(19)
        y[SL_H] = [1.0, 0.1, 0.0, 0.0]
        st = rod_model.SectionState.from_arrays(y, np.zeros(6))
        with pytest.raises(ValueError):
            st.validate()
