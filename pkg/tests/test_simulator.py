import math
from dataclasses import replace

import numpy as np
import pytest

from dvocstab.equilibrium import solve_equilibrium
from dvocstab.network import Branch, Bus, PlantTopology, build_reduced_network
from dvocstab.node import DvocParams
from dvocstab.simulator import (
    EquilibriumNotFoundError,
    Event,
    Scenario,
    SolverSettings,
    lyapunov_monitor,
    overcurrent_scan,
    quasi_static_virtual_impedance,
    scenario_network,
    segment_nu_violations,
    simulate,
    simulate_unrotated,
)

from conftest import BASE, PHI_Z, Z_GRID, reference_params


def single_scenario(**kw):
    topo = PlantTopology(
        (Bus("c1", "converter"), Bus("grid", "grid")),
        (Branch("c1", "grid", Z_GRID),),
        BASE,
    )
    defaults = dict(
        topology=topo,
        converters=(reference_params(i_max=1.5, k_v=2000.0, theta_v=PHI_Z),),
        converter_buses=("c1",),
        phi_network=PHI_Z,
        t_end=1.0,
    )
    defaults.update(kw)
    return Scenario(**defaults)


@pytest.fixture(scope="module")
def short_dip():
    return single_scenario(
        events=(Event(time=0.2, kind="voltage_dip", depth=0.3, duration=0.15),),
        t_end=0.6,
    )


@pytest.fixture(scope="module")
def short_dip_traj(short_dip):
    return simulate(short_dip)


class TestScenarioValidation:
    def test_events_must_be_ordered(self):
        with pytest.raises(ValueError, match="ordered"):
            single_scenario(
                events=(
                    Event(time=0.3, kind="voltage_dip", depth=0.5, duration=0.1),
                    Event(time=0.2, kind="voltage_dip", depth=0.5, duration=0.1),
                ),
                t_end=1.0,
            )

    def test_event_beyond_end_rejected(self):
        with pytest.raises(ValueError, match="t_end"):
            single_scenario(
                events=(Event(time=2.0, kind="voltage_dip", depth=0.5, duration=0.1),),
                t_end=1.0,
            )

    def test_overlapping_dips_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            single_scenario(
                events=(
                    Event(time=0.2, kind="voltage_dip", depth=0.5, duration=0.2),
                    Event(time=0.3, kind="voltage_dip", depth=0.5, duration=0.1),
                ),
                t_end=1.0,
            )

    def test_dip_depth_range_checked(self):
        with pytest.raises(ValueError, match="depth"):
            Event(time=0.1, kind="voltage_dip", depth=0.0, duration=0.1)
        with pytest.raises(ValueError, match="depth"):
            Event(time=0.1, kind="voltage_dip", depth=1.5, duration=0.1)

    def test_bus_assignment_must_match_topology(self):
        with pytest.raises(ValueError, match="converter bus"):
            single_scenario(converter_buses=("nope",))


class TestEquilibriumInvariance:
    def test_starts_and_stays_at_equilibrium(self):
        traj = simulate(single_scenario())
        eq = traj.segments[0].equilibrium
        assert eq is not None and eq.converged
        drift = np.max(np.abs(traj.v - eq.v_s))
        assert drift < 1e-6
        assert np.all(traj.nu >= 0)
        assert np.max(traj.nu) < 1e-12

    def test_symmetric_pair_stays_identical(self, star2_topology):
        p = reference_params(phi=math.pi / 2, p_star=0.5, q_star=0.1, i_max=3.0)
        scn = Scenario(
            topology=star2_topology,
            converters=(p, p),
            converter_buses=("c1", "c2"),
            phi_network=math.pi / 2,
            events=(Event(time=0.1, kind="voltage_dip", depth=0.5, duration=0.1),),
            t_end=0.3,
        )
        traj = simulate(scn)
        assert np.max(np.abs(traj.v[:, 0] - traj.v[:, 1])) < 1e-14
        assert np.max(np.abs(traj.i[:, 0] - traj.i[:, 1])) < 1e-14


class TestModelEquivalence:
    def test_dip_scenario_trajectories_agree(self, short_dip, short_dip_traj):
        other = simulate_unrotated(short_dip)
        assert np.max(np.abs(short_dip_traj.v - other.v)) < 1e-6
        assert np.max(np.abs(short_dip_traj.i - other.i)) < 1e-6

    def test_equilibrium_scenario_both_constant(self):
        scn = single_scenario(t_end=0.2)
        a = simulate(scn)
        b = simulate_unrotated(scn)
        assert np.max(np.abs(a.v - a.v[0])) < 1e-9
        assert np.max(np.abs(b.v - b.v[0])) < 1e-9

    def test_rhs_matches_per_node_formulas(self, short_dip):
        # the stacked simulator right-hand side is the node model verbatim
        from dvocstab.node import dvoc_rhs_rotated
        from dvocstab.simulator import _make_rhs, _stack
        from dvocstab.network import network_current_unrotated

        net, params = scenario_network(short_dip)
        rhs = _make_rhs(net, 0.9, 0.0, _stack(params), "rotated")
        v = np.array([1.03 + 0.21j])
        x = np.array([v[0].real, v[0].imag])
        out = rhs(0.0, x)
        i = network_current_unrotated(net, v, 0.9)
        expected = dvoc_rhs_rotated(v[0], np.exp(1j * params[0].phi) * i[0], 0.0, params[0])
        assert out[0] == pytest.approx(expected.real, abs=1e-15)
        assert out[1] == pytest.approx(expected.imag, abs=1e-15)


class TestEvents:
    def test_segment_boundaries_hit_exactly(self, short_dip_traj):
        for t_event in (0.2, 0.35):
            assert np.any(short_dip_traj.times == t_event)
        spans = [(s.t_start, s.t_end) for s in short_dip_traj.segments]
        assert spans == [(0.0, 0.2), (0.2, 0.35), (0.35, 0.6)]
        assert [s.v_g for s in short_dip_traj.segments] == [1.0, 0.3, 1.0]

    def test_grid_impedance_switch_changes_the_certificate(self):
        scn = single_scenario(
            events=(Event(time=0.1, kind="grid_impedance_switch", z_new=2 * Z_GRID),),
            t_end=0.3,
        )
        traj = simulate(scn)
        eps = [s.epsilon_net for s in traj.segments]
        assert eps[0] == pytest.approx(6.32456, abs=1e-4)
        assert eps[1] == pytest.approx(eps[0] / 2.0, abs=1e-6)
        assert not traj.aborted

    def test_limiter_mode_event_toggles_sub_segmentation(self):
        scn = single_scenario(
            events=(Event(time=0.1, kind="limiter_mode", on=True),),
            t_end=0.2,
        )
        traj = simulate(scn)
        # steady currents are below the limit: engaged never, coarse scan only
        assert all(not s.limiter_engaged for s in traj.segments)
        assert len(traj.segments) > 2  # coarse sub-segments after the toggle

    def test_dip_lasting_past_end_is_truncated(self):
        scn = single_scenario(
            events=(Event(time=0.2, kind="voltage_dip", depth=0.5, duration=5.0),),
            t_end=0.3,
        )
        traj = simulate(scn)
        assert traj.segments[-1].v_g == 0.5
        assert traj.times[-1] == pytest.approx(0.3, abs=0)


class TestRecoveryAndMonitor:
    def test_dip_recovers_to_pre_fault_equilibrium(self, short_dip_traj):
        eq0 = short_dip_traj.segments[0].equilibrium
        # strongly contracting: back within 1e-3 well before 0.25 s after clearing
        final_dev = np.max(np.abs(short_dip_traj.v[-1] - eq0.v_s))
        assert final_dev < 1e-3

    def test_no_storage_increase_within_segments(self, short_dip, short_dip_traj):
        assert segment_nu_violations(short_dip_traj, short_dip.converters) == []

    def test_monitor_against_pre_fault_equilibrium(self, short_dip, short_dip_traj):
        eq0 = short_dip_traj.segments[0].equilibrium
        nu, violations = lyapunov_monitor(short_dip_traj, eq0, short_dip.converters)
        assert violations == []
        assert nu.shape == short_dip_traj.times.shape
        # during the dip the state moves away from the pre-fault point
        assert np.max(nu) > 1e-3

    def test_perturbed_start_decays_from_first_sample(self):
        scn = single_scenario(t_end=0.2)
        net, params = scenario_network(scn)
        eq = solve_equilibrium(net, params)
        perturbed = tuple(eq.v_s + 0.2 - 0.1j)
        traj = simulate(replace(scn, initial_voltage=perturbed))
        assert traj.nu[0] > 1e-3
        assert traj.nu[1] < traj.nu[0]
        assert traj.nu[-1] < 1e-8
        assert segment_nu_violations(traj, params) == []

    def test_monitor_dimension_mismatch(self, short_dip_traj, star2_topology):
        p = reference_params(phi=math.pi / 2)
        net = build_reduced_network(star2_topology, math.pi / 2)
        eq = solve_equilibrium(net, [p, p])
        with pytest.raises(ValueError):
            lyapunov_monitor(short_dip_traj, eq, [p, p])


class TestOvercurrent:
    def test_equilibrium_run_clean(self):
        traj = simulate(single_scenario(t_end=0.2))
        assert overcurrent_scan(traj, [1.5]) == []

    def test_deep_dip_without_limiter_exceeds(self, short_dip_traj):
        records = overcurrent_scan(short_dip_traj, [1.5])
        assert len(records) == 1
        assert records[0].first_time == pytest.approx(0.2, abs=1e-3)
        assert records[0].peak > 3.0

    def test_limiter_caps_current_within_band(self):
        scn = single_scenario(
            events=(Event(time=0.02, kind="voltage_dip", depth=0.3, duration=0.05),),
            t_end=0.15,
            limiter_enabled=True,
            solver=SolverSettings(limiter_dt=2.5e-5),
        )
        traj = simulate(scn)
        i_max = scn.converters[0].i_max
        peak = float(np.max(np.abs(traj.i)))
        assert peak <= i_max + 1e-3
        assert any(s.limiter_engaged for s in traj.segments)
        # engaged stretches are excluded from the certificate snapshots
        assert all(
            s.certified is None for s in traj.segments if s.limiter_engaged
        )

    def test_quasi_static_impedance_zero_below_limit(self):
        scn = single_scenario()
        net, params = scenario_network(scn)
        eq = solve_equilibrium(net, params)
        z_v = quasi_static_virtual_impedance(net, eq.v_s, 1.0, params)
        np.testing.assert_array_equal(z_v, [0j])

    def test_quasi_static_impedance_consistent_above_limit(self):
        scn = single_scenario()
        net, params = scenario_network(scn)
        eq = solve_equilibrium(net, params)
        z_v = quasi_static_virtual_impedance(net, eq.v_s, 0.3, params)
        assert abs(z_v[0]) > 0
        from dvocstab.network import augment_virtual_impedance, network_current_unrotated

        aug = augment_virtual_impedance(net, z_v)
        i = network_current_unrotated(aug, eq.v_s, 0.3)
        assert abs(i[0]) == pytest.approx(params[0].i_max, abs=1e-3)


class TestAbort:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_unstable_step_size_aborts_with_time(self):
        scn = single_scenario(t_end=100.0, solver=SolverSettings(h=1.0))
        traj = simulate(scn)
        assert traj.aborted
        assert traj.abort_time is not None and 0 < traj.abort_time <= 100.0
        assert traj.times.size >= 1  # partial samples retained

    def test_missing_equilibrium_without_initial_state_raises(self):
        # the only solution at this loading sits below the operational floor
        scn = single_scenario(
            converters=(reference_params(p_star=3.0, i_max=50.0),), v_g_nominal=0.05
        )
        with pytest.raises(EquilibriumNotFoundError):
            simulate(scn)

    def test_explicit_initial_state_bypasses_equilibrium_solve(self):
        scn = single_scenario(
            converters=(reference_params(p_star=3.0, i_max=50.0),),
            v_g_nominal=0.05,
            initial_voltage=(1.0 + 0j,),
            t_end=0.01,
        )
        traj = simulate(scn)
        assert traj.times.size > 1


class TestStepRefinement:
    def test_halving_h_converges_at_fourth_order(self, short_dip):
        ref = simulate(replace(short_dip, solver=SolverSettings(h=2.5e-5)))

        def err(h):
            traj = simulate(replace(short_dip, solver=SolverSettings(h=h)))
            idx = np.searchsorted(ref.times, traj.times)
            return float(np.max(np.abs(traj.v - ref.v[idx])))

        e_coarse, e_fine = err(4e-4), err(2e-4)
        assert e_fine < 1e-6
        assert e_coarse / e_fine >= 10.0

    def test_rk45_matches_rk4(self, short_dip):
        a = simulate(short_dip)
        b = simulate(
            replace(short_dip, solver=SolverSettings(method="rk45", rtol=1e-10, atol=1e-12))
        )
        idx = np.searchsorted(a.times, 0.6)
        assert np.max(np.abs(a.v[-1] - b.v[-1])) < 1e-6


class TestPermutation:
    def test_converter_permutation_permutes_trajectories(self):
        topo = PlantTopology(
            (
                Bus("c1", "converter"),
                Bus("c2", "converter"),
                Bus("hub", "interior"),
                Bus("grid", "grid"),
            ),
            (
                Branch("c1", "hub", complex(0.01, 0.08)),
                Branch("c2", "hub", complex(0.02, 0.12)),
                Branch("hub", "grid", Z_GRID),
            ),
            BASE,
        )
        pa = reference_params(p_star=0.6, q_star=0.1, i_max=5.0)
        pb = reference_params(p_star=0.2, q_star=-0.2, i_max=5.0)
        scn = Scenario(
            topology=topo,
            converters=(pa, pb),
            converter_buses=("c1", "c2"),
            phi_network=PHI_Z,
            events=(Event(time=0.05, kind="voltage_dip", depth=0.6, duration=0.05),),
            t_end=0.2,
        )
        permuted_topo = PlantTopology(
            (topo.buses[1], topo.buses[0], topo.buses[2], topo.buses[3]),
            topo.branches,
            BASE,
        )
        scn_perm = Scenario(
            topology=permuted_topo,
            converters=(pb, pa),
            converter_buses=("c2", "c1"),
            phi_network=PHI_Z,
            events=scn.events,
            t_end=0.2,
        )
        a = simulate(scn)
        b = simulate(scn_perm)
        np.testing.assert_allclose(a.v[:, 0], b.v[:, 1], atol=1e-12)
        np.testing.assert_allclose(a.v[:, 1], b.v[:, 0], atol=1e-12)
