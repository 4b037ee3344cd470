"""Rod core: algebra helpers, spatial march, static shooting, implicit stepping.

Oracles used here are closed-form: the constant-curvature arc, the linear
cantilever formula F L^3 / (3 E I), and hand-evaluated node derivatives.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cathsim.errors import ParameterError, PreconditionError
from cathsim.rod import (
    BdfCoeffs,
    HistoryTerms,
    NodeHistory,
    RodNode,
    RodParams,
    Tendon,
    bdf_coeffs,
    hat,
    integrate_shape,
    rest_state,
    rod_derivatives,
    rotation_exp,
    solve_static,
    step_dynamics,
    tendon_loads,
    tip_displacement,
    vee,
)

# Catheter-scale test rod: 80 mm active length, 2.667 mm OD round section.
E_MOD = 1.9e8
SECOND_MOMENT = 1.9165e-12
DIAMETER = 0.002667
AREA = math.pi * (DIAMETER / 2.0) ** 2
DENSITY = 1630.573
LENGTH = 0.08


def make_params(tensions=(), offsets=None, beta=0.0, grav=(0.0, 0.0, 0.0),
                n_nodes=41):
    if offsets is None:
        offsets = [np.array([0.0, 0.9e-3, 0.0]),
                   np.array([0.0, -0.9e-3, 0.0])][: len(tensions)]
    tendons = [Tendon(offset=o, tension=t) for o, t in zip(offsets, tensions)]
    return RodParams.from_material(
        E_MOD, SECOND_MOMENT, AREA, DENSITY, length=LENGTH, n_nodes=n_nodes,
        damping_beta=beta, grav=grav, tendons=tendons,
    )


finite3 = st.tuples(
    *([st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)] * 3)
)


class TestHatVee:
    def test_hat_zero(self):
        assert np.array_equal(hat((0.0, 0.0, 0.0)), np.zeros((3, 3)))

    def test_hat_cross_identity_unit(self):
        assert np.allclose(hat((0.0, 0.0, 1.0)) @ [1.0, 0.0, 0.0],
                           [0.0, 1.0, 0.0])

    def test_vee_roundtrip(self):
        assert np.allclose(vee(hat((1.0, 2.0, 3.0))), [1.0, 2.0, 3.0])

    def test_vee_rejects_non_skew(self):
        with pytest.raises(PreconditionError):
            vee(np.eye(3))

    @given(finite3)
    def test_hat_is_skew(self, a):
        m = hat(a)
        assert np.array_equal(m, -m.T)

    @given(finite3, finite3)
    def test_hat_matches_cross(self, a, b):
        assert np.allclose(hat(a) @ np.asarray(b), np.cross(a, b))

    @given(finite3)
    def test_vee_hat_identity(self, a):
        assert np.array_equal(vee(hat(a)), np.asarray(a))

    @given(st.tuples(*([st.floats(-10.0, 10.0)] * 3)))
    def test_rotation_exp_in_so3(self, phi):
        R = rotation_exp(np.asarray(phi))
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0, atol=1e-12)


class TestBdfCoeffs:
    def test_reduces_to_bdf2(self):
        c = bdf_coeffs(1.0, 0.0)
        assert (c.c0, c.c1, c.c2, c.d1) == (1.5, -2.0, 0.5, 0.0)

    def test_scales_with_dt(self):
        c = bdf_coeffs(0.01, 0.0)
        assert np.allclose((c.c0, c.c1, c.c2, c.d1), (150.0, -200.0, 50.0, 0.0))

    def test_damped_variant(self):
        c = bdf_coeffs(1.0, -0.2)
        assert np.allclose((c.c0, c.c1, c.c2, c.d1),
                           (1.625, -2.0, 0.375, -0.25))

    def test_rejects_bad_dt(self):
        with pytest.raises(ParameterError):
            bdf_coeffs(0.0, 0.0)
        with pytest.raises(ParameterError):
            bdf_coeffs(-0.1, 0.0)

    def test_rejects_alpha_out_of_range(self):
        with pytest.raises(ParameterError):
            bdf_coeffs(0.01, 0.1)
        with pytest.raises(ParameterError):
            bdf_coeffs(0.01, -0.5)

    @given(st.floats(1e-4, 10.0), st.floats(-0.499, 0.0))
    def test_weights_annihilate_constants(self, dt, alpha):
        # A constant trajectory must have zero discrete time derivative.
        c = bdf_coeffs(dt, alpha)
        assert abs(c.c0 + c.c1 + c.c2) * dt < 1e-9


class TestDerivatives:
    def test_straight_rod_is_equilibrium(self):
        params = make_params()
        rates = rod_derivatives(RodNode.rest_base(), params)
        assert np.allclose(rates.v_s, 0.0, atol=1e-14)
        assert np.allclose(rates.u_s, 0.0, atol=1e-14)
        assert np.allclose(rates.p_s, [0.0, 0.0, 1.0])

    def test_gravity_enters_strain_gradient_only(self):
        params = make_params(grav=(0.0, 0.0, -9.81))
        rates = rod_derivatives(RodNode.rest_base(), params)
        expected_vs = np.linalg.solve(
            params.Kse, -params.rho * params.area * params.grav
        )
        assert np.allclose(rates.v_s, expected_vs, rtol=1e-12)
        assert np.allclose(rates.u_s, 0.0, atol=1e-14)
        assert np.allclose(rates.q_s, 0.0, atol=1e-14)
        assert np.allclose(rates.w_s, 0.0, atol=1e-14)

    def test_tendon_matrix_at_straight_configuration(self):
        r = np.array([0.0, 0.9e-3, 0.0])
        tendon = Tendon(offset=r, tension=0.1)
        v = np.array([0.0, 0.0, 1.0])
        a, b, A, G, H = tendon_loads(v, np.zeros(3), [tendon])
        # Unit tangent along z: the coupling matrix is tau on the two
        # transverse axes and zero along the tendon.
        assert np.allclose(A, np.diag([0.1, 0.1, 0.0]), atol=1e-15)
        assert np.all(np.linalg.eigvalsh(0.5 * (A + A.T)) >= -1e-15)
        assert np.allclose(G, -A @ hat(r), atol=1e-18)
        assert np.allclose(H, hat(r) @ G, atol=1e-20)
        assert np.allclose(a, 0.0) and np.allclose(b, 0.0)

    def test_tendon_load_identities_curved(self):
        r = np.array([0.0, 0.9e-3, 0.0])
        tendon = Tendon(offset=r, tension=0.25)
        v = np.array([0.01, -0.02, 0.98])
        u = np.array([3.0, -1.0, 0.5])
        a, b, A, G, H = tendon_loads(v, u, [tendon])
        assert np.allclose(b, hat(r) @ a, atol=1e-18)
        assert np.allclose(G, -A @ hat(r), atol=1e-15)
        assert np.allclose(H, hat(r) @ G, atol=1e-18)
        assert np.allclose(A, A.T, atol=1e-15)
        assert np.all(np.linalg.eigvalsh(A) >= -1e-12)

    def test_tendon_rejects_negative_tension(self):
        with pytest.raises(ParameterError):
            Tendon(offset=np.array([0.0, 0.9e-3, 0.0]), tension=-0.1)


class TestIntegrateShape:
    def test_straight_unloaded_tip(self):
        params = make_params()
        state = integrate_shape(RodNode.rest_base(), params)
        assert np.allclose(state.tip_position, [0.0, 0.0, LENGTH], atol=1e-12)

    def arc_defect(self, n_nodes, kappa=10.0):
        # Reference curvature bends the unloaded rod into an exact circular
        # arc; the march error against the closed form is the defect.
        params = make_params(n_nodes=n_nodes)
        params.u_star = np.array([kappa, 0.0, 0.0])
        base = RodNode.rest_base()
        base.u = params.u_star.copy()
        state = integrate_shape(base, params)
        exact = np.array([
            0.0,
            (math.cos(kappa * LENGTH) - 1.0) / kappa,
            math.sin(kappa * LENGTH) / kappa,
        ])
        return float(np.linalg.norm(state.tip_position - exact))

    def test_constant_curvature_arc(self):
        assert self.arc_defect(41) < 1e-3

    def test_arc_defect_halves_with_step(self):
        coarse = self.arc_defect(41)
        fine = self.arc_defect(81)
        assert 1.6 < coarse / fine < 2.4

    def test_orthonormality_after_march(self):
        params = make_params(tensions=(0.5,))
        state = solve_static(params)
        assert state.orthonormality_defect() < 1e-6


class TestSolveStatic:
    def test_unloaded_identity(self):
        params = make_params()
        state = solve_static(params)
        assert np.allclose(state.tip_position, [0.0, 0.0, LENGTH], atol=1e-10)
        assert np.allclose(state.v, params.v_star, atol=1e-10)
        assert np.allclose(state.u, 0.0, atol=1e-10)

    def test_cantilever_small_deflection(self):
        force = 0.005
        params = make_params()
        state = solve_static(params, tip_load=([force, 0.0, 0.0], [0.0] * 3))
        expected = force * LENGTH ** 3 / (3.0 * E_MOD * SECOND_MOMENT)
        assert expected < 0.05 * LENGTH
        assert abs(state.tip_position[0] - expected) < 0.02 * expected

    def test_cantilever_runtime(self):
        params = make_params()
        t0 = time.perf_counter()
        solve_static(params, tip_load=([0.005, 0.0, 0.0], [0.0] * 3))
        assert time.perf_counter() - t0 < 1.0

    def test_planar_solution_stays_planar(self):
        params = make_params(tensions=(0.5, 0.0))
        state = solve_static(params)
        assert np.max(np.abs(state.p[:, 0])) < 1e-9
        # Tendon on +y pulls the tip toward +y.
        assert state.tip_position[1] > 1e-3

    def test_mirrored_tension_mirrors_shape(self):
        left = solve_static(make_params(tensions=(0.5, 0.0)))
        right = solve_static(make_params(tensions=(0.0, 0.5)))
        flipped = right.p.copy()
        flipped[:, 1] = -flipped[:, 1]
        assert np.max(np.linalg.norm(left.p - flipped, axis=1)) < 1e-9

    def test_tip_displacement_euclidean(self):
        params = make_params(tensions=(0.5, 0.0))
        state = solve_static(params)
        expected = np.linalg.norm(state.tip_position - [0.0, 0.0, LENGTH])
        assert np.isclose(tip_displacement(state), expected)


class TestStepDynamics:
    def test_equilibrium_is_fixed_point(self):
        params = make_params(tensions=(0.5,), beta=0.01)
        state = solve_static(params)
        start = state.tip_position.copy()
        coeffs = bdf_coeffs(0.01, -0.2)
        cache = {}
        for _ in range(100):
            state = step_dynamics(state, params, coeffs, solver_cache=cache)
        assert np.linalg.norm(state.tip_position - start) < 1e-6
        assert state.orthonormality_defect() < 1e-6

    def test_history_depth_saturates_at_two(self):
        params = make_params(tensions=(0.5,), beta=0.01)
        state = solve_static(params)
        coeffs = bdf_coeffs(0.01, -0.2)
        state = step_dynamics(state, params, coeffs)
        assert state.history.depth == 1
        state = step_dynamics(state, params, coeffs)
        assert state.history.depth == 2
        state = step_dynamics(state, params, coeffs)
        assert state.history.depth == 2

    def test_rejects_static_weights(self):
        params = make_params(beta=0.01)
        state = rest_state(params)
        with pytest.raises(PreconditionError):
            step_dynamics(state, params, BdfCoeffs.statics())

    def test_release_settles_to_static(self):
        bent = solve_static(make_params(tensions=(0.5,), beta=0.01))
        free_params = make_params(tensions=(0.0,), beta=0.01)
        target = solve_static(free_params).tip_position
        coeffs = bdf_coeffs(0.01, -0.2)
        state, cache = bent, {}
        gap = np.inf
        for _ in range(500):
            state = step_dynamics(state, free_params, coeffs,
                                  solver_cache=cache)
            gap = np.linalg.norm(state.tip_position - target)
            if gap < 1e-4:
                break
        assert gap < 1e-4

    def test_dt_halving_at_least_first_order(self):
        bent = solve_static(make_params(tensions=(0.5,), beta=0.01))
        free_params = make_params(tensions=(0.0,), beta=0.01)

        def trajectory(dt, t_end=0.1):
            coeffs = bdf_coeffs(dt, -0.2)
            state, cache, tips = bent, {}, {}
            for k in range(int(round(t_end / dt))):
                state = step_dynamics(state, free_params, coeffs,
                                      solver_cache=cache)
                tips[round((k + 1) * dt, 10)] = state.tip_position.copy()
            return tips

        ref = trajectory(0.00125)
        defects = {}
        for dt in (0.01, 0.005):
            tips = trajectory(dt)
            shared = sorted(set(tips) & set(ref))
            defects[dt] = max(
                np.linalg.norm(tips[t] - ref[t]) for t in shared
            )
        assert defects[0.01] / defects[0.005] > 2.0

    def test_low_damping_release_overshoots(self):
        bent = solve_static(make_params(tensions=(0.5,), beta=0.01))
        lightly_damped = make_params(tensions=(0.0,), beta=0.002)
        coeffs = bdf_coeffs(0.01, -0.2)
        state, cache = bent, {}
        ys = []
        for _ in range(60):
            state = step_dynamics(state, lightly_damped, coeffs,
                                  solver_cache=cache)
            ys.append(state.tip_position[1])
        ys = np.array(ys)
        assert ys.min() < -1e-4
        assert np.sum(np.diff(np.sign(ys)) != 0) >= 2


class TestParamValidation:
    def test_rejects_short_rod(self):
        with pytest.raises(ParameterError):
            make_params(n_nodes=1)

    def test_rejects_nonpositive_modulus(self):
        with pytest.raises(ParameterError):
            RodParams.from_material(-1.0, SECOND_MOMENT, AREA, DENSITY)

    def test_rejects_indefinite_stiffness(self):
        with pytest.raises(ParameterError):
            RodParams(
                Kse=np.diag([1.0, 1.0, -1.0]),
                Kbt=np.eye(3),
                Bse=np.zeros((3, 3)),
                Bbt=np.zeros((3, 3)),
                J=np.eye(3) * 1e-12,
                area=AREA,
            )
