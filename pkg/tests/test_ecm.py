import math

import numpy as np
import pytest

from battwin import ecm
from battwin.ecm import (
    OCV_COEFFS,
    BatteryState,
    Direction,
    EcmParams,
    ParamTable,
    Soc,
    coulomb_step,
    discretize,
    docv_ds,
    load_charging_table,
    load_discharging_table,
    lookup_params,
    ocv,
    step_state,
    terminal_voltage,
)
from battwin.errors import SocOutOfRange


def ocv_termwise(s, coeffs=OCV_COEFFS):
    """Independent oracle: plain term-by-term power summation."""
    return sum(c * s ** (5 - k) for k, c in enumerate(coeffs))


class TestOcv:
    def test_at_zero_only_constant_term_survives(self):
        assert ocv(0.0) == pytest.approx(12.33, abs=1e-12)

    def test_at_full_charge_matches_termwise_sum(self):
        assert ocv(1.0) == pytest.approx(ocv_termwise(1.0), abs=1e-12)
        assert ocv(1.0) == pytest.approx(12.905, abs=1e-3)

    def test_midpoint(self):
        assert ocv(0.5) == pytest.approx(ocv_termwise(0.5), abs=1e-12)
        assert ocv(0.5) == pytest.approx(12.5498, abs=1e-4)

    def test_accepts_soc_instances(self):
        assert ocv(Soc(0.25)) == ocv(0.25)

    def test_rejects_out_of_range(self):
        with pytest.raises(SocOutOfRange):
            ocv(1.2)


class TestOcvSlope:
    def test_at_zero_equals_linear_coefficient(self):
        assert docv_ds(0.0) == pytest.approx(0.928, abs=1e-12)

    def test_at_one_against_central_difference(self):
        h = 1e-6
        fd = (ocv(1.0) - ocv(1.0 - 2 * h)) / (2 * h)  # shifted to stay in range
        assert docv_ds(1.0 - h) == pytest.approx(fd, rel=1e-6)
        assert docv_ds(1.0) == pytest.approx(3.542, abs=1e-3)

    def test_matches_finite_differences_on_grid(self):
        h = 1e-6
        grid = np.linspace(h, 1.0 - h, 1001)
        for s in grid:
            fd = (ocv(s + h) - ocv(s - h)) / (2 * h)
            assert abs(docv_ds(s) - fd) / abs(docv_ds(s)) < 1e-6

    def test_strictly_positive_over_unit_interval(self):
        # underpins EKF observability: the OCV curve is strictly monotone
        grid = np.arange(0.0, 1.0 + 1e-9, 1e-3)
        slopes = np.array([docv_ds(s) for s in grid])
        assert np.all(slopes > 0.0)


class TestParamTables:
    def test_charging_breakpoint_row_80(self):
        t = load_charging_table()
        p = lookup_params(t, 0.80)
        assert p.r0 == pytest.approx(93.830e-3, abs=0)
        assert p.r1 == pytest.approx(19.43e-3, abs=0)
        assert p.c1 == pytest.approx(1.722e3, abs=0)
        assert p.r2 == pytest.approx(17.45e-3, abs=0)
        assert p.c2 == pytest.approx(2.005e3, abs=0)

    def test_discharging_breakpoint_row_50(self):
        t = load_discharging_table()
        assert lookup_params(t, 0.50).r0 == 112.429e-3

    def test_midpoint_interpolation_is_linear(self):
        # hand interpolation of rows 80 and 90 of the charging table
        t = load_charging_table()
        assert lookup_params(t, 0.85).r0 == pytest.approx(
            (93.830e-3 + 105.511e-3) / 2, rel=1e-14
        )

    def test_exact_at_all_breakpoints(self):
        for t in (load_charging_table(), load_discharging_table()):
            for k, s in enumerate(t.socs):
                p = lookup_params(t, s)
                got = np.array([p.r0, p.r1, p.c1, p.r2, p.c2])
                assert np.array_equal(got, t.values[k])

    def test_continuous_across_breakpoints(self):
        t = load_charging_table()
        eps = 1e-12
        for s in t.socs[1:-1]:
            lo = lookup_params(t, s - eps)
            hi = lookup_params(t, s + eps)
            for name in ("r0", "r1", "c1", "r2", "c2"):
                assert getattr(lo, name) == pytest.approx(
                    getattr(hi, name), rel=1e-9
                )

    def test_rejects_soc_outside_range(self):
        t = load_charging_table()
        with pytest.raises(SocOutOfRange):
            lookup_params(t, 1.5)

    def test_tables_have_eleven_rows(self):
        assert load_charging_table().socs.size == 11
        assert load_discharging_table().socs.size == 11

    def test_constant_table(self):
        p = EcmParams(0.1, 0.02, 250.0, 0.02, 25000.0)
        t = ParamTable.constant(p, Direction.DISCHARGING)
        assert lookup_params(t, 0.37) == p

    def test_validation_rejects_bad_grids(self):
        vals = np.ones((2, 5))
        with pytest.raises(ValueError):
            ParamTable(np.array([0.0, 0.9]), vals, Direction.CHARGING)
        with pytest.raises(ValueError):
            ParamTable(np.array([0.5, 0.0]), vals, Direction.CHARGING)


class TestDiscretize:
    def test_rc_pole_at_soc50_charging(self):
        t = load_charging_table()
        m = discretize(lookup_params(t, 0.5), dt=1.0, eta=1.0, q=360000.0)
        # independent exponential evaluation of exp(-dt/tau1)
        expected = math.exp(-1.0 / (41.95e-3 * 0.792e3))
        assert m.a[1, 1] == pytest.approx(expected, abs=1e-15)
        assert m.a[1, 1] == pytest.approx(0.97035, abs=1e-5)

    def test_coulomb_gain_for_100ah(self):
        p = EcmParams(0.1, 0.02, 1000.0, 0.02, 1000.0)
        m = discretize(p, dt=1.0, eta=1.0, q=360000.0)
        assert m.b[0] == pytest.approx(1.0 / 360000.0, abs=1e-10)
        assert m.b[0] == pytest.approx(2.7778e-6, abs=1e-10)

    def test_small_dt_limit(self):
        p = EcmParams(0.1, 0.02, 1000.0, 0.02, 1000.0)
        m = discretize(p, dt=1e-9, eta=1.0, q=360000.0)
        assert m.a[1, 1] == pytest.approx(1.0, abs=1e-9)
        assert m.b[1] == pytest.approx(0.0, abs=1e-9)

    def test_structure_invariants_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            r1, r2 = rng.uniform(1e-3, 1.0, 2)
            c1, c2 = rng.uniform(1.0, 1e5, 2)
            dt = rng.uniform(1e-3, 100.0)
            p = EcmParams(0.1, r1, c1, r2, c2)
            m = discretize(p, dt=dt, eta=1.0, q=360000.0)
            assert 0.0 < m.a[1, 1] < 1.0
            assert 0.0 < m.a[2, 2] < 1.0
            assert m.b[1] > 0.0 and m.b[2] > 0.0
            assert m.a[0, 0] == 1.0
            assert np.count_nonzero(m.a - np.diag(np.diag(m.a))) == 0

    def test_negate_rc_gain_flag(self):
        p = EcmParams(0.1, 0.02, 1000.0, 0.02, 1000.0)
        m = discretize(p, dt=1.0, eta=1.0, q=360000.0, negate_rc_gain=True)
        assert m.b[1] < 0.0 and m.b[2] < 0.0

    def test_rejects_bad_arguments(self):
        p = EcmParams(0.1, 0.02, 1000.0, 0.02, 1000.0)
        with pytest.raises(ValueError):
            discretize(p, dt=0.0, eta=1.0, q=360000.0)
        with pytest.raises(ValueError):
            discretize(p, dt=1.0, eta=0.0, q=360000.0)
        with pytest.raises(ValueError):
            discretize(p, dt=1.0, eta=1.0, q=-5.0)


class TestStepState:
    def paper_model(self, dt=1.0):
        p = lookup_params(load_charging_table(), 0.5)
        return p, discretize(p, dt=dt, eta=1.0, q=360000.0)

    def test_zero_input_zero_branches_is_fixed_point(self):
        _, m = self.paper_model()
        x = BatteryState(Soc(0.5), 0.0, 0.0)
        nxt = step_state(x, 0.0, m)
        assert nxt.soc.value == 0.5
        assert nxt.v1 == 0.0 and nxt.v2 == 0.0

    def test_one_hour_of_ten_amps_moves_ten_percent(self):
        p = lookup_params(load_charging_table(), 0.5)
        m = discretize(p, dt=3600.0, eta=1.0, q=360000.0)
        nxt = step_state(BatteryState(Soc(0.5)), 10.0, m)
        assert nxt.soc.value == pytest.approx(0.6, abs=1e-12)

    def test_rc_charging_matches_closed_form(self):
        p, m = self.paper_model(dt=1.0)
        i = 5.0
        x = BatteryState(Soc(0.5))
        checkpoints = {1, 10, 100}
        for k in range(1, 101):
            x = step_state(x, i, m)
            if k in checkpoints:
                expected = i * p.r1 * (1.0 - math.exp(-k * m.dt / p.tau1))
                assert x.v1 == pytest.approx(expected, rel=1e-9)

    def test_saturation_sets_flag(self):
        p = lookup_params(load_charging_table(), 0.5)
        m = discretize(p, dt=3600.0, eta=1.0, q=360000.0)
        nxt = step_state(BatteryState(Soc(0.99)), 20.0, m)
        assert nxt.soc.value == 1.0 and nxt.soc.saturated

    def test_zero_input_decays_branches_geometrically(self):
        _, m = self.paper_model()
        x = BatteryState(Soc(0.5), v1=0.1, v2=-0.05)
        nxt = step_state(x, 0.0, m)
        assert nxt.v1 == pytest.approx(0.1 * m.a[1, 1], rel=1e-14)
        assert nxt.v2 == pytest.approx(-0.05 * m.a[2, 2], rel=1e-14)


class TestTerminalVoltage:
    def test_rested_full_battery_reads_ocv(self):
        p = lookup_params(load_charging_table(), 1.0)
        v = terminal_voltage(BatteryState(Soc(1.0)), 0.0, p)
        assert v == pytest.approx(ocv(1.0), abs=0)

    def test_charging_adds_ohmic_drop(self):
        p = lookup_params(load_charging_table(), 0.5)
        v = terminal_voltage(BatteryState(Soc(0.5)), 5.0, p)
        assert v == pytest.approx(12.5498 + 5.0 * 105.506e-3, abs=1e-3)

    def test_affine_in_current(self):
        p = lookup_params(load_charging_table(), 0.5)
        x = BatteryState(Soc(0.5), v1=0.01, v2=0.02)
        v0 = terminal_voltage(x, 0.0, p)
        v1 = terminal_voltage(x, 3.0, p)
        v2 = terminal_voltage(x, -7.0, p)
        assert v1 + v2 - v0 == pytest.approx(
            terminal_voltage(x, -4.0, p), rel=1e-14
        )


class TestCoulombStep:
    def test_zero_current_is_identity(self):
        assert coulomb_step(0.5, 0.0, 1.0, 360000.0, 10.0).value == 0.5

    def test_half_hour_discharge(self):
        s = coulomb_step(0.5, -10.0, 1.0, 360000.0, 1800.0)
        assert s.value == pytest.approx(0.45, abs=1e-15)

    def test_two_half_steps_equal_one_full_step(self):
        a = coulomb_step(coulomb_step(0.5, 3.0, 1.0, 360000.0, 7.0), 3.0, 1.0, 360000.0, 7.0)
        b = coulomb_step(0.5, 3.0, 1.0, 360000.0, 14.0)
        assert a.value == pytest.approx(b.value, abs=1e-15)

    def test_round_trip_returns_start(self):
        s = Soc(0.4)
        for _ in range(25):
            s = coulomb_step(s, 5.0, 1.0, 360000.0, 60.0)
        for _ in range(25):
            s = coulomb_step(s, -5.0, 1.0, 360000.0, 60.0)
        assert s.value == pytest.approx(0.4, abs=1e-12)

    def test_saturates_with_flag(self):
        s = coulomb_step(0.99, 100.0, 1.0, 360000.0, 3600.0)
        assert s.value == 1.0 and s.saturated


class TestSocPolicy:
    def test_clamp_policy_flags(self):
        s = Soc.make(1.3, policy="clamp")
        assert s.value == 1.0 and s.saturated

    def test_reject_policy_raises(self):
        with pytest.raises(SocOutOfRange):
            Soc.make(-0.1, policy="reject")

    def test_in_range_not_flagged(self):
        assert not Soc.make(0.5).saturated


class TestEcmParamsValidation:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            EcmParams(0.0, 0.02, 1000.0, 0.02, 1000.0)

    def test_time_constants(self):
        p = EcmParams(0.1, 0.02, 250.0, 0.04, 12500.0)
        assert p.tau1 == pytest.approx(5.0)
        assert p.tau2 == pytest.approx(500.0)
