import math

import numpy as np
import pytest

from segway_lab.controller import paper_controller
from segway_lab.plant import PlantState, StateSpace
from segway_lab.sim import (DisturbanceProfile, SimConfig, SimTrace,
                            SimulationDiverged, empirical_l2_gain, format_scenario,
                            load_scenario, parse_scenario, quantize_angle,
                            resolve_controller, resolve_plant, run_closed_loop)
from segway_lab.textio import TextFormatError
from tests.conftest import PAPER_K_BAR

MANEUVER = DisturbanceProfile(breakpoints=((0.0, 0.0), (2.0, 0.15), (8.0, 0.0)))


def maneuver_config(**overrides):
    base = dict(dt=1e-3, duration=15.0, quantize=True, counts_per_rev=16000)
    base.update(overrides)
    return SimConfig(**base)


class TestQuantize:
    def test_paper_resolution(self):
        resolution = 2 * math.pi / 16000
        assert resolution == pytest.approx(0.000392699, abs=1e-9)
        assert quantize_angle(0.0005, 16000) == pytest.approx(resolution)

    def test_zero(self):
        assert quantize_angle(0.0, 16000) == 0.0

    def test_odd_symmetry(self):
        assert quantize_angle(-0.0005, 16000) == -quantize_angle(0.0005, 16000)
        for theta in np.linspace(-0.01, 0.01, 41):
            assert quantize_angle(-theta, 16000) == -quantize_angle(theta, 16000)

    def test_rounds_toward_zero(self):
        resolution = 2 * math.pi / 16000
        assert quantize_angle(1.999 * resolution, 16000) == pytest.approx(resolution)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            quantize_angle(0.1, 0)


class TestDisturbanceProfile:
    def test_hold_is_left_closed(self):
        assert MANEUVER.phi(1.999) == 0.0
        assert MANEUVER.phi(2.0) == 0.15
        assert MANEUVER.phi(7.999) == 0.15
        assert MANEUVER.phi(8.0) == 0.0

    def test_linear_interpolation(self):
        prof = DisturbanceProfile(breakpoints=((0.0, 0.0), (2.0, 0.2)), interp="linear")
        assert prof.phi(1.0) == pytest.approx(0.1)

    def test_unsorted_rejected(self):
        with pytest.raises(ValueError, match="increasing"):
            DisturbanceProfile(breakpoints=((1.0, 0.1), (0.5, 0.2)))

    def test_overlean_rejected(self):
        with pytest.raises(ValueError, match="pi/2"):
            DisturbanceProfile(breakpoints=((0.0, 2.0),))

    def test_w_applies_coupling(self):
        assert MANEUVER.w(3.0) == pytest.approx(0.2 * 0.15)


class TestRunClosedLoop:
    def test_zero_everything_stays_zero(self, ecp220):
        trace = run_closed_loop(ecp220, paper_controller(),
                                DisturbanceProfile(), maneuver_config(duration=1.0))
        assert np.all(trace.theta1 == 0.0)
        assert np.all(trace.u == 0.0)
        assert np.all(trace.z == 0.0)

    def test_initial_tilt_decays(self, ecp220):
        trace = run_closed_loop(ecp220, paper_controller(), DisturbanceProfile(),
                                maneuver_config(duration=5.0, quantize=False),
                                PlantState(0.0, 0.0, 0.02, 0.0))
        assert abs(trace.theta2[-1]) < 1e-3
        # theta1 parks at a constant (free mode holds its final value)
        assert abs(trace.theta1_dot[-1]) < 1e-4

    def test_maneuver_drift_and_hold(self, ecp220):
        trace = run_closed_loop(ecp220, paper_controller(), MANEUVER, maneuver_config())
        i10 = trace.index_at(10.0)
        i15 = trace.index_at(15.0)
        assert trace.theta1[-1] != 0.0
        assert abs(trace.theta1[i15] - trace.theta1[i10]) < 0.01
        assert abs(trace.theta2[i15]) < 0.01

    def test_maneuver_disk_parks_at_constant(self, ecp220):
        # rate check on the ideal model: the encoder deadband sustains a
        # bounded ~1e-2 rad/s jitter, but the position thresholds above
        # still hold with quantization on (see the quantized test)
        trace = run_closed_loop(ecp220, paper_controller(), MANEUVER,
                                maneuver_config(quantize=False))
        assert abs(trace.theta1_dot[-1]) < 1e-4
        assert abs(trace.theta2[-1]) < 1e-3

    def test_maneuver_direction_flips_with_tilt(self, ecp220):
        fwd = run_closed_loop(ecp220, paper_controller(), MANEUVER, maneuver_config())
        rev = run_closed_loop(ecp220, paper_controller(), MANEUVER.negated(),
                              maneuver_config())
        assert rev.theta1[-1] == pytest.approx(-fwd.theta1[-1], rel=1e-9)

    def test_trace_time_grid(self, ecp220):
        cfg = maneuver_config(duration=0.5)
        trace = run_closed_loop(ecp220, paper_controller(), DisturbanceProfile(), cfg)
        assert len(trace) == 501
        assert np.allclose(np.diff(trace.t), cfg.dt)

    def test_divergence_guard_keeps_partial_trace(self, ecp220):
        # unstable plant with the control disconnected (zero gains)
        from segway_lab.controller import ControllerConfig
        dead = ControllerConfig(gains=(0.0, 0.0, 0.0), scale=1.0, filter_pole=-10.0,
                                filter_gain=5.0, sample_dt=1e-3)
        with pytest.raises(SimulationDiverged) as excinfo:
            run_closed_loop(ecp220, dead, DisturbanceProfile(),
                            maneuver_config(duration=10.0),
                            PlantState(0.0, 0.0, 0.02, 0.0))
        partial = excinfo.value.trace
        assert len(partial) > 100
        assert abs(partial.theta2[-1]) > 1.0

    def test_rk4_order_on_maneuver(self, ecp220):
        # controller pinned to a 4 ms grid shared by every step size, so the
        # refinement measures pure integrator error
        x0 = PlantState(0.0, 0.0, 0.02, 0.0)
        ctrl = paper_controller(sample_dt=4e-3)

        def final_state(dt):
            cfg = SimConfig(dt=dt, duration=2.0, quantize=False)
            trace = run_closed_loop(ecp220, ctrl, MANEUVER, cfg, x0)
            return trace.state_at(-1)

        errors = []
        for dt in (4e-3, 2e-3, 1e-3):
            ref = final_state(dt / 10)
            errors.append(np.linalg.norm(final_state(dt) - ref))
        orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
        assert min(orders) >= 3.5


class TestEmpiricalGain:
    def test_pulse_ratio_below_level(self, ecp220, synthesized):
        pulse = DisturbanceProfile(breakpoints=((0.0, 0.5), (1.0, 0.0)), coupling_gain=1.0)
        ratio = empirical_l2_gain(ecp220, synthesized.gains.k_bar, pulse,
                                  SimConfig(dt=1e-3, duration=2.0))
        assert ratio <= synthesized.gains.gamma_achieved * 1.02

    def test_zero_performance_output_gives_zero(self, ecp220):
        silent = StateSpace(A=ecp220.A, B1=ecp220.B1, B2=ecp220.B2,
                            C1=np.zeros((3, 4)), D12=np.zeros((3, 1)))
        pulse = DisturbanceProfile(breakpoints=((0.0, 0.5), (1.0, 0.0)), coupling_gain=1.0)
        ratio = empirical_l2_gain(silent, PAPER_K_BAR, pulse, SimConfig(dt=1e-3, duration=2.0))
        assert ratio == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariance(self, ecp220):
        base = DisturbanceProfile(breakpoints=((0.0, 0.3), (1.0, 0.0)), coupling_gain=1.0)
        scaled = DisturbanceProfile(breakpoints=((0.0, 0.3), (1.0, 0.0)), coupling_gain=-2.5)
        cfg = SimConfig(dt=1e-3, duration=2.0)
        r1 = empirical_l2_gain(ecp220, PAPER_K_BAR, base, cfg)
        r2 = empirical_l2_gain(ecp220, PAPER_K_BAR, scaled, cfg)
        assert r2 == pytest.approx(r1, rel=1e-9)

    def test_zero_disturbance_rejected(self, ecp220):
        with pytest.raises(ValueError, match="zero energy"):
            empirical_l2_gain(ecp220, PAPER_K_BAR, DisturbanceProfile(),
                              SimConfig(dt=1e-3, duration=1.0))

    def test_ratio_below_true_norm(self, ecp220):
        from segway_lab.analysis import closed_loop_full_info, hinf_norm
        norm = hinf_norm(closed_loop_full_info(ecp220, PAPER_K_BAR))
        for pulse in (
            DisturbanceProfile(breakpoints=((0.0, 1.0), (1.0, 0.0)), coupling_gain=1.0),
            DisturbanceProfile(breakpoints=((0.0, 0.0), (0.5, 1.0), (1.0, 0.0)),
                               coupling_gain=1.0, interp="linear"),
        ):
            ratio = empirical_l2_gain(ecp220, PAPER_K_BAR, pulse, SimConfig(dt=1e-3, duration=2.0))
            assert ratio <= norm * 1.02


class TestTraceCsv:
    def test_round_trip(self, ecp220):
        trace = run_closed_loop(ecp220, paper_controller(), MANEUVER,
                                maneuver_config(duration=0.2))
        text = trace.to_csv()
        assert text.splitlines()[0] == "t,theta1,theta1_dot,theta2,theta2_dot,u,w,z1,z2,z3"
        back = SimTrace.from_csv(text)
        assert np.allclose(back.theta2, trace.theta2, atol=1e-15)
        assert back.to_csv() == text

    def test_nine_significant_digits(self, ecp220):
        trace = run_closed_loop(ecp220, paper_controller(), MANEUVER,
                                maneuver_config(duration=0.01))
        row = trace.to_csv().splitlines()[3]
        for cell in row.split(","):
            mantissa = cell.split("e")[0].replace("-", "").replace(".", "")
            assert len(mantissa) == 9

    def test_bad_header_rejected(self):
        with pytest.raises(ValueError, match="header"):
            SimTrace.from_csv("a,b,c\n1,2,3\n")


SCENARIO_TEXT = """
format = scenario-v1
plant = ecp220
controller = paper
tilt = 0 0
tilt = 2 0.15
tilt = 8 0
tilt_interp = hold
coupling_gain = 0.2
dt = 0.001
duration = 15
quantize = on
counts_per_rev = 16000
seed = 0
x0 = 0 0 0 0
"""


class TestScenario:
    def test_parse(self):
        sc = parse_scenario(SCENARIO_TEXT)
        assert sc.plant == "ecp220"
        assert sc.controller == "paper"
        assert sc.profile.breakpoints == ((0.0, 0.0), (2.0, 0.15), (8.0, 0.0))
        assert sc.sim.quantize is True
        assert sc.sim.counts_per_rev == 16000

    def test_format_round_trip(self):
        sc = parse_scenario(SCENARIO_TEXT)
        assert parse_scenario(format_scenario(sc)) == sc

    def test_rejects_wrong_format_tag(self):
        with pytest.raises(TextFormatError, match="scenario"):
            parse_scenario("format = controller-config-v1\n")

    def test_bad_tilt_line_number(self):
        bad = SCENARIO_TEXT.replace("tilt = 2 0.15", "tilt = 2 oops")
        with pytest.raises(TextFormatError, match="line 6"):
            parse_scenario(bad)

    def test_resolve_preset_plant(self):
        ss, plant_id = resolve_plant("ecp220")
        assert plant_id == "ecp220"
        assert ss.A[3][2] == 50.229

    def test_resolve_plant_from_file(self, tmp_path):
        params = tmp_path / "bench.params"
        params.write_text("J1 = 0.005\nJy = 0.001\nJz = 0.002\nm_r = 0.05\n"
                          "m_w = 0.02\nl_cg = 0.15\nR_h = 0.1\ng = 9.81\n")
        sc = parse_scenario(SCENARIO_TEXT.replace("plant = ecp220", "plant = bench.params"))
        ss, plant_id = resolve_plant(sc.plant, tmp_path)
        assert plant_id.endswith("bench.params")
        ss.validate()

    def test_resolve_paper_controller(self):
        sc = parse_scenario(SCENARIO_TEXT)
        cfg, k_bar = resolve_controller(sc)
        assert cfg.gains == (0.43, 6.38, 1.09)
        assert cfg.scale == 0.3
        assert np.array_equal(k_bar, PAPER_K_BAR)

    def test_resolve_controller_from_report(self, tmp_path, ecp220, synthesized):
        from segway_lab.synthesis import format_report
        eigs = np.linalg.eigvals(ecp220.A + ecp220.B2 @ synthesized.gains.k_bar)
        report_path = tmp_path / "report.txt"
        report_path.write_text(format_report(synthesized, ecp220, "ecp220", eigs))
        sc = parse_scenario(SCENARIO_TEXT.replace("controller = paper",
                                                  "controller = report.txt"))
        cfg, k_bar = resolve_controller(sc, tmp_path)
        assert cfg.scale == 1.0
        assert np.allclose(k_bar, synthesized.gains.k_bar)
        assert cfg.gains == tuple(synthesized.gains.k_out.ravel())

    def test_load_scenario(self, tmp_path):
        path = tmp_path / "run.scn"
        path.write_text(SCENARIO_TEXT)
        assert load_scenario(path) == parse_scenario(SCENARIO_TEXT)

    def test_quantization_robust_maneuver(self, ecp220):
        # same thresholds with the encoder model on and off
        sc = parse_scenario(SCENARIO_TEXT)
        for quantize in (True, False):
            cfg = SimConfig(dt=sc.sim.dt, duration=sc.sim.duration, quantize=quantize)
            trace = run_closed_loop(ecp220, paper_controller(), sc.profile, cfg)
            assert abs(trace.theta2[trace.index_at(15.0)]) < 0.01
            assert abs(trace.theta1[trace.index_at(15.0)]
                       - trace.theta1[trace.index_at(10.0)]) < 0.01
