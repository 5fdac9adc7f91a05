"""Constant-current regulation through averaged dc-dc converter models.

Charging runs a boost stage fed from a fixed source current, discharging a
boost into a fixed load current; the averaged relations are

    i_battery = i_source / delta      (charging)
    i_battery = i_load / (1 - delta)  (discharging)

with the duty cycle clamped to a band away from the division blow-ups. A PID
law on the current error adjusts the duty each sample:

    duty' = duty + kp*e + ki*sum(e) + kd*(e - e_prev)

Two practical notes on closing the loop around these static maps:

  * the charging relation *decreases* with duty, so the charging loop feeds
    the PID a negated error (ref/meas swapped) to keep net negative feedback;
  * the error is normalized by a full-scale current (default 30 A, the span
    of the modeled Hall sensor) before entering the PID, which is what keeps
    one set of dimensionless gains stable across the whole 2-20 A setpoint
    range. ``pid_step`` itself is raw: duty per unit of whatever error it is
    fed.

When the terminal voltage reaches the float voltage during charging the
controller drops into a constant-voltage mode on the same converter: duty is
carried over (no relay action, bumpless) and a voltage-error PID holds the
terminal at the float setting until the battery fills.
"""

import enum
from dataclasses import dataclass

from .errors import DutyOutOfRange


class ControlMode(enum.Enum):
    IDLE = "idle"
    CHARGING = "charging"
    DISCHARGING = "discharging"
    FLOAT_CV = "float_cv"


@dataclass(frozen=True, slots=True)
class PidGains:
    """Per-sample discrete PID gains; all nonnegative."""

    kp: float
    ki: float
    kd: float

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0.0:
            raise ValueError("gains must be nonnegative")


# tuned gain sets for the two converter stages, [kp, kd, ki] order source:
# charging (0.18, 0.006, 0.0008), discharging (1.0, 0.005, 0.01)
CHARGING_GAINS = PidGains(kp=0.18, ki=0.0008, kd=0.006)
DISCHARGING_GAINS = PidGains(kp=1.0, ki=0.01, kd=0.005)
FLOAT_CV_GAINS = PidGains(kp=0.05, ki=0.002, kd=0.0)


@dataclass(frozen=True, slots=True)
class PidState:
    """Duty plus the error accumulators, advanced once per sample."""

    duty: float
    error_sum: float = 0.0
    prev_error: float = 0.0


def pid_step(
    state: PidState,
    i_ref: float,
    i_meas: float,
    gains: PidGains,
    duty_min: float = 0.1,
    duty_max: float = 0.9,
) -> PidState:
    """One PID update of the duty cycle.

    e = i_ref - i_meas. The integral accumulates before the update; while the
    duty is pinned at a clamp bound and the error keeps pushing outward the
    accumulator is frozen (conditional integration anti-windup).
    """
    e = i_ref - i_meas
    sum_cand = state.error_sum + e
    duty_cand = (
        state.duty + gains.kp * e + gains.ki * sum_cand + gains.kd * (e - state.prev_error)
    )
    duty_new = min(max(duty_cand, duty_min), duty_max)
    if duty_cand != duty_new and (duty_cand - duty_new) * e > 0.0:
        sum_new = state.error_sum
    else:
        sum_new = sum_cand
    return PidState(duty=duty_new, error_sum=sum_new, prev_error=e)


def charging_battery_current(
    i_source: float, delta1: float, duty_min: float = 0.1
) -> float:
    """Averaged boost relation for charging; guards the 1/delta blow-up."""
    if delta1 < duty_min:
        raise DutyOutOfRange(f"charging duty {delta1} below minimum {duty_min}")
    return i_source / delta1


def discharging_battery_current(
    i_load: float, delta2: float, duty_max: float = 0.9
) -> float:
    """Averaged relation for discharging; guards the 1/(1-delta) blow-up."""
    if delta2 > duty_max:
        raise DutyOutOfRange(f"discharging duty {delta2} above maximum {duty_max}")
    return i_load / (1.0 - delta2)


@dataclass(frozen=True, slots=True)
class ControllerConfig:
    """Loop configuration: clamp band, gain sets, scaling, CV settings.

    ``i_source``/``i_load`` are the far-side converter currents (ideal
    sources, constant per scenario). Left as None they are sized from the
    active setpoint for mid-band duty: i_source = |i_ref| / 2 and
    i_load = 0.6 * |i_ref|.
    """

    duty_min: float = 0.1
    duty_max: float = 0.9
    duty_init: float = 0.5
    i_full_scale: float = 30.0
    charging_gains: PidGains = CHARGING_GAINS
    discharging_gains: PidGains = DISCHARGING_GAINS
    cv_gains: PidGains = FLOAT_CV_GAINS
    float_voltage: float = 13.8
    i_source: float | None = None
    i_load: float | None = None

    def initial_pid(self) -> PidState:
        return PidState(duty=self.duty_init)

    def source_for(self, i_ref: float) -> float:
        return self.i_source if self.i_source is not None else 0.5 * abs(i_ref)

    def load_for(self, i_ref: float) -> float:
        return self.i_load if self.i_load is not None else 0.6 * abs(i_ref)


def _mode_for_ref(mode: ControlMode, i_ref: float, v_meas: float, cfg) -> ControlMode:
    if i_ref == 0.0:
        return ControlMode.IDLE
    if i_ref < 0.0:
        return ControlMode.DISCHARGING
    if mode is ControlMode.FLOAT_CV:
        return ControlMode.FLOAT_CV
    if v_meas >= cfg.float_voltage:
        return ControlMode.FLOAT_CV
    return ControlMode.CHARGING


def controller_step(
    mode: ControlMode,
    pid: PidState,
    i_ref: float,
    i_meas: float,
    v_meas: float,
    config: ControllerConfig = ControllerConfig(),
):
    """Advance the mode machine and PID; returns (mode, pid, commanded current).

    The sign of i_ref selects the mode (positive charge, negative discharge,
    zero idle); crossing the float voltage while charging latches the
    constant-voltage mode. Switching between charge and discharge (a relay
    action) resets the PID to the initial duty; the CC -> CV handover keeps
    the duty and clears only the accumulators.
    """
    new_mode = _mode_for_ref(mode, i_ref, v_meas, config)

    if new_mode is not mode:
        if mode is ControlMode.CHARGING and new_mode is ControlMode.FLOAT_CV:
            pid = PidState(duty=pid.duty)  # same converter: bumpless handover
        else:
            pid = config.initial_pid()

    if new_mode is ControlMode.IDLE:
        return new_mode, pid, 0.0

    scale = 1.0 / config.i_full_scale
    if new_mode is ControlMode.CHARGING:
        # map decreases with duty: swap ref/meas to negate the error
        pid = pid_step(
            pid, i_meas * scale, i_ref * scale, config.charging_gains,
            config.duty_min, config.duty_max,
        )
        i_cmd = charging_battery_current(
            config.source_for(i_ref), pid.duty, config.duty_min
        )
        return new_mode, pid, i_cmd

    if new_mode is ControlMode.DISCHARGING:
        pid = pid_step(
            pid, -i_ref * scale, -i_meas * scale, config.discharging_gains,
            config.duty_min, config.duty_max,
        )
        i_cmd = -discharging_battery_current(
            config.load_for(i_ref), pid.duty, config.duty_max
        )
        return new_mode, pid, i_cmd

    # FLOAT_CV: hold the terminal at the float voltage on the charge converter
    pid = pid_step(
        pid, v_meas, config.float_voltage, config.cv_gains,
        config.duty_min, config.duty_max,
    )
    i_cmd = charging_battery_current(
        config.source_for(i_ref), pid.duty, config.duty_min
    )
    return new_mode, pid, i_cmd
