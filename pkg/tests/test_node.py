import cmath
import math

import numpy as np
import pytest

from dvocstab.node import (
    DvocParams,
    cubic_inequality_check,
    dissipation_residual,
    dvoc_rhs_rotated,
    dvoc_rhs_unrotated,
    node_passivity_index,
    rotated_setpoint_constants,
    steady_state_current,
    storage_value,
    virtual_impedance,
)

ETA = 0.04 * 100 * math.pi


def params(**kw):
    defaults = dict(eta=ETA, alpha=2.0, phi=math.pi / 2, p_star=1.0, q_star=0.0)
    defaults.update(kw)
    return DvocParams(**defaults)


def random_params(rng):
    return DvocParams(
        eta=float(rng.uniform(1.0, 50.0)),
        alpha=float(rng.uniform(0.1, 5.0)),
        phi=float(rng.uniform(0.0, math.pi / 2)),
        p_star=float(rng.uniform(-math.sqrt(2), math.sqrt(2))),
        q_star=float(rng.uniform(-math.sqrt(2), math.sqrt(2))),
        v_star=float(rng.uniform(0.8, 1.2)),
    )


class TestParams:
    @pytest.mark.parametrize(
        "field,value",
        [("eta", 0.0), ("eta", -1.0), ("alpha", 0.0), ("v_star", 0.0), ("phi", -0.1), ("phi", 2.0)],
    )
    def test_invalid_values_rejected(self, field, value):
        with pytest.raises(ValueError):
            params(**{field: value})


class TestRotatedSetpointConstants:
    def test_quarter_turn_active_power(self):
        sigma, rho = rotated_setpoint_constants(params())
        assert sigma == pytest.approx(0.0, abs=1e-15)
        assert rho == pytest.approx(1.0, abs=1e-15)

    def test_zero_setpoints(self):
        sigma, rho = rotated_setpoint_constants(params(p_star=0.0, q_star=0.0))
        assert (sigma, rho) == (0.0, 0.0)

    def test_identity_rotation(self):
        sigma, rho = rotated_setpoint_constants(params(phi=0.0, p_star=0.5, q_star=-0.5))
        assert sigma == pytest.approx(0.5, abs=0)
        assert rho == pytest.approx(0.5, abs=0)


class TestDynamics:
    def test_zero_at_consistent_steady_state(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = random_params(rng)
            omega_delta = float(rng.uniform(-2.0, 2.0))
            v_s = complex(rng.normal(), rng.normal())
            i_s = steady_state_current(v_s, omega_delta, p)
            assert abs(dvoc_rhs_rotated(v_s, i_s, omega_delta, p)) < 1e-12

    def test_all_terms_vanish_at_nominal(self):
        p = params(p_star=0.0, q_star=0.0)
        assert dvoc_rhs_rotated(1.0 + 0j, 0j, 0.0, p) == 0j

    def test_isolated_frequency_term_is_pure_rotation(self):
        p = params(p_star=0.0, q_star=0.0)
        omega_delta = 2 * math.pi * 0.1
        v = 1.0 + 0j  # |v| = v*, zero setpoints, zero current
        assert dvoc_rhs_rotated(v, 0j, omega_delta, p) == 1j * omega_delta * v

    def test_rotated_unrotated_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            p = random_params(rng)
            v = complex(rng.normal(), rng.normal())
            i = complex(rng.normal(), rng.normal())
            omega_delta = float(rng.uniform(-2.0, 2.0))
            a = dvoc_rhs_unrotated(v, i, omega_delta, p)
            b = dvoc_rhs_rotated(v, cmath.exp(1j * p.phi) * i, omega_delta, p)
            assert abs(a - b) < 1e-12

    def test_unrotated_zero_at_proportional_current(self):
        # i = (p* - j q*)/v*^2 * v with |v| = v* holds the node still
        p = params(phi=0.3, p_star=0.8, q_star=-0.4)
        v = cmath.exp(0.25j)
        i = complex(p.p_star, -p.q_star) * v
        assert abs(dvoc_rhs_unrotated(v, i, 0.0, p)) < 1e-15

    def test_vectorized_over_states(self):
        p = params()
        v = np.array([1.0 + 0j, 0.5 + 0.5j, 2.0 - 1j])
        i = np.array([0j, 1j, 0.3 + 0j])
        out = dvoc_rhs_rotated(v, i, 0.1, p)
        for k in range(3):
            assert out[k] == dvoc_rhs_rotated(v[k], i[k], 0.1, p)


class TestPassivityIndex:
    def test_full_index_reference_case(self):
        assert node_passivity_index(params(), v_s_mag=1.0) == pytest.approx(-1.0, abs=0)

    def test_conservative_reference_case(self):
        assert node_passivity_index(params()) == -2.0

    def test_zero_setpoints_nominal_voltage(self):
        p = params(p_star=0.0, q_star=0.0)
        assert node_passivity_index(p, v_s_mag=1.0) == pytest.approx(-1.0, abs=0)

    def test_identity_rotation_conservative(self):
        p = params(phi=0.0, p_star=0.5, q_star=-0.5)
        assert node_passivity_index(p) == pytest.approx(-2.5, abs=0)

    def test_power_setpoints_hurt_passivity(self):
        deltas = [
            node_passivity_index(params(phi=1.1, p_star=p)) for p in (0.0, 0.5, 1.0, 1.4)
        ]
        assert all(a > b for a, b in zip(deltas, deltas[1:]))

    def test_voltage_level_helps_passivity(self):
        p = params()
        deltas = [node_passivity_index(p, v_s_mag=m) for m in (0.5, 0.8, 1.0, 1.2)]
        assert all(a < b for a, b in zip(deltas, deltas[1:]))

    def test_conservative_never_exceeds_full(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = random_params(rng)
            mag = float(rng.uniform(0.0, 1.5))
            assert node_passivity_index(p) <= node_passivity_index(p, v_s_mag=mag)

    def test_negative_magnitude_rejected(self):
        with pytest.raises(ValueError):
            node_passivity_index(params(), v_s_mag=-0.1)


class TestSteadyStateCurrent:
    def test_reference_case(self):
        assert steady_state_current(1.0 + 0j, 0.0, params()) == pytest.approx(1j, abs=1e-15)

    def test_zero_everything(self):
        p = params(p_star=0.0, q_star=0.0)
        assert steady_state_current(1.0 + 0j, 0.0, p) == 0j


class TestStorage:
    def test_zero_at_equilibrium(self):
        assert storage_value(0.3 + 0.4j, 0.3 + 0.4j, ETA) == 0.0

    def test_unit_deviation(self):
        assert storage_value(1.5 + 0j, 0.5 + 0j, 0.5) == pytest.approx(1.0, abs=0)

    def test_inverse_scaling_in_eta(self):
        v, v_s = 1.2 + 0.1j, 1.0 + 0j
        assert storage_value(v, v_s, 2 * ETA) == pytest.approx(
            storage_value(v, v_s, ETA) / 2.0, abs=1e-18
        )

    def test_nonpositive_eta_rejected(self):
        with pytest.raises(ValueError):
            storage_value(1.0, 0.0, 0.0)


class TestDissipationInequality:
    def test_zero_at_equilibrium(self):
        p = params()
        v_s = 1.05 + 0.1j
        i_s = steady_state_current(v_s, 0.0, p)
        delta = node_passivity_index(p, abs(v_s))
        assert dissipation_residual(v_s, v_s, i_s, i_s, 0.0, p, delta) == pytest.approx(
            0.0, abs=1e-14
        )

    def test_nonnegative_over_random_states(self):
        rng = np.random.default_rng(8)
        worst = math.inf
        for _ in range(20):
            p = random_params(rng)
            omega_delta = float(rng.uniform(-math.pi, math.pi))
            v_s = rng.uniform(0.5, 1.5) * cmath.exp(1j * rng.uniform(-math.pi, math.pi))
            i_s = steady_state_current(v_s, omega_delta, p)
            delta = node_passivity_index(p, abs(v_s))
            mag = rng.uniform(0.1, 2.0, size=1000)
            ang = rng.uniform(-math.pi, math.pi, size=1000)
            v = mag * np.exp(1j * ang)
            i = rng.normal(scale=1.5, size=1000) + 1j * rng.normal(scale=1.5, size=1000)
            r = dissipation_residual(v, v_s, i, i_s, omega_delta, p, delta)
            worst = min(worst, float(np.min(r)))
        assert worst >= -1e-9

    def test_conservative_index_gives_larger_residual(self):
        rng = np.random.default_rng(9)
        p = random_params(rng)
        v_s = 1.1 * cmath.exp(0.2j)
        i_s = steady_state_current(v_s, 0.0, p)
        v = 0.7 * cmath.exp(-0.5j)
        i = 0.4 - 0.2j
        r_full = dissipation_residual(
            v, v_s, i, i_s, 0.0, p, node_passivity_index(p, abs(v_s))
        )
        r_cons = dissipation_residual(v, v_s, i, i_s, 0.0, p, node_passivity_index(p))
        assert r_cons >= r_full

    def test_inflated_index_breaks_the_inequality(self):
        # negative control: the bound is tight enough that +10 on delta fails
        rng = np.random.default_rng(10)
        p = random_params(rng)
        v_s = 1.0 + 0j
        i_s = steady_state_current(v_s, 0.0, p)
        delta_bad = node_passivity_index(p, abs(v_s)) + 10.0
        mag = rng.uniform(0.1, 2.0, size=1000)
        ang = rng.uniform(-math.pi, math.pi, size=1000)
        v = mag * np.exp(1j * ang)
        i = rng.normal(size=1000) + 1j * rng.normal(size=1000)
        r = dissipation_residual(v, v_s, i, i_s, 0.0, p, delta_bad)
        assert np.min(r) < 0

    def test_inconsistent_pair_rejected(self):
        p = params()
        v_s = 1.0 + 0j
        i_bad = steady_state_current(v_s, 0.0, p) + 0.01
        with pytest.raises(ValueError, match="steady-state"):
            dissipation_residual(1.1 + 0j, v_s, 0j, i_bad, 0.0, p, -1.0)


class TestCubicInequality:
    def test_equal_vectors(self):
        assert cubic_inequality_check([1.0, 2.0], [1.0, 2.0])

    def test_hand_arithmetic_case(self):
        # x=(2,0), y=(1,0): lhs = 1*(8-1) = 7 >= 0.5*1*1
        assert cubic_inequality_check([2.0, 0.0], [1.0, 0.0])

    def test_random_pairs(self):
        rng = np.random.default_rng(14)
        x = rng.normal(scale=3.0, size=(10_000, 2))
        y = rng.normal(scale=3.0, size=(10_000, 2))
        assert np.all(cubic_inequality_check(x, y))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cubic_inequality_check([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])


class TestVirtualImpedance:
    def test_below_threshold(self):
        p = params(i_max=1.2)
        assert virtual_impedance(0.6, p) == 0j

    def test_at_threshold(self):
        p = params(i_max=1.2)
        assert virtual_impedance(1.2, p) == 0j

    def test_above_threshold_magnitude(self):
        p = params(i_max=1.2, k_v=0.2, theta_v=math.atan(3.0))
        z = virtual_impedance(2.2, p)
        assert abs(z) == pytest.approx(0.2, abs=1e-15)
        assert math.atan2(z.imag, z.real) == pytest.approx(math.atan(3.0), abs=1e-15)

    def test_negative_current_rejected(self):
        with pytest.raises(ValueError):
            virtual_impedance(-0.1, params())
