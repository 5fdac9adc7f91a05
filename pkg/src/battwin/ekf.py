"""Extended Kalman filter over the discrete 2-RC model.

State x = [soc, v1, v2]; input is the measured current, measurement the
terminal voltage. Each step rebuilds the model matrices from the parameter
table interpolated at the current SoC estimate, using the table matching the
current direction (hysteresis: zero current keeps the last direction).

The recursion per sample:

  1. time update        x- = A x + B u        (u = previous sample's current)
  2. covariance update  P- = A P A^T + J
  3. gain               K = P- C^T / (C P- C^T + R),  C = [dOCV/ds, 1, 1]
  4. predicted output   y- = ocv(soc-) + v1- + v2- + i * r0
  5. state update       x+ = x- + K (v_meas - y-)
  6. covariance update  P+ = (I - K C) P-, re-symmetrized
                        (Joseph-stabilized form behind ``joseph=True``)

The predicted output uses the full nonlinear OCV (the linearized output row
C serves the gain and covariance only); with the row's slope in place of the
polynomial the zero-noise self-consistency of the filter would be lost.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .ecm import (
    DEFAULT_CAPACITY_C,
    OCV_COEFFS,
    Direction,
    ParamTable,
    docv_ds,
    load_charging_table,
    load_discharging_table,
    lookup_params,
    ocv,
)
from .errors import DegenerateInnovationVariance, NonuniformSampling
from .trace_io import samples_to_arrays

# noise defaults: SoC drifts slowly; the voltage channel carries ~0.1 V of
# combined sensor noise and model error
DEFAULT_J = np.diag([1e-7, 1e-5, 1e-5])
DEFAULT_R = 1e-2
DEFAULT_P0 = np.diag([1e-2, 1e-4, 1e-4])


@dataclass(frozen=True, eq=False)
class EstimatorState:
    """Filter state: estimate, covariance, noise covariances, direction flag."""

    x_hat: np.ndarray
    p: np.ndarray
    j: np.ndarray
    r: float
    direction: Direction = Direction.DISCHARGING
    soc_saturated: bool = False

    def __post_init__(self):
        x = np.asarray(self.x_hat, dtype=float)
        p = np.asarray(self.p, dtype=float)
        j = np.asarray(self.j, dtype=float)
        object.__setattr__(self, "x_hat", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "j", j)
        if x.shape != (3,) or p.shape != (3, 3) or j.shape != (3, 3):
            raise ValueError("x_hat must be (3,); p and j must be (3, 3)")
        if self.r <= 0.0:
            raise ValueError("measurement noise variance must be positive")
        if np.any(np.diag(j) < 0.0):
            raise ValueError("process noise diagonal must be nonnegative")

    @classmethod
    def initial(
        cls,
        soc_guess: float,
        p0=None,
        j=None,
        r: float = DEFAULT_R,
        direction: Direction = Direction.DISCHARGING,
    ) -> "EstimatorState":
        return cls(
            x_hat=np.array([soc_guess, 0.0, 0.0]),
            p=DEFAULT_P0.copy() if p0 is None else np.asarray(p0, dtype=float),
            j=DEFAULT_J.copy() if j is None else np.asarray(j, dtype=float),
            r=r,
            direction=direction,
        )

    @property
    def soc(self) -> float:
        return float(self.x_hat[0])


@dataclass(frozen=True, eq=False)
class EkfStepRecord:
    """Everything produced by one predict/correct pair."""

    x_prior: np.ndarray
    y_pred: float
    innovation: float
    gain: np.ndarray
    x_post: np.ndarray
    p_post: np.ndarray


@dataclass(frozen=True, eq=False)
class EkfConfig:
    """Model inputs the filter rebuilds its matrices from each step.

    The two tables may deliberately differ from the plant's (model-mismatch
    studies) or may be the same object for both directions.
    """

    charging_table: ParamTable = field(default_factory=load_charging_table)
    discharging_table: ParamTable = field(default_factory=load_discharging_table)
    coeffs: np.ndarray = field(default_factory=lambda: OCV_COEFFS.copy())
    q: float = DEFAULT_CAPACITY_C
    eta_charge: float = 1.0
    eta_discharge: float = 1.0
    dt: float = 1.0
    joseph: bool = False
    negate_rc_gain: bool = False
    dt_tolerance: float = 0.01

    def table_for(self, direction: Direction) -> ParamTable:
        return (
            self.charging_table
            if direction is Direction.CHARGING
            else self.discharging_table
        )


def _update_direction(direction: Direction, i: float) -> Direction:
    if i > 0.0:
        return Direction.CHARGING
    if i < 0.0:
        return Direction.DISCHARGING
    return direction


def _clip01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def predict(est: EstimatorState, i: float, config: EkfConfig) -> EstimatorState:
    """Time update: propagate estimate and covariance one sample with input i."""
    direction = _update_direction(est.direction, i)
    s_look = _clip01(est.soc)
    p_ecm = lookup_params(config.table_for(direction), s_look)
    a1 = math.exp(-config.dt / p_ecm.tau1)
    a2 = math.exp(-config.dt / p_ecm.tau2)
    sign = -1.0 if config.negate_rc_gain else 1.0
    eta = config.eta_charge if i > 0.0 else config.eta_discharge

    x = est.x_hat
    x_new = np.array(
        [
            x[0] + i * eta * config.dt / config.q,
            a1 * x[1] + sign * p_ecm.r1 * (1.0 - a1) * i,
            a2 * x[2] + sign * p_ecm.r2 * (1.0 - a2) * i,
        ]
    )
    a = np.diag([1.0, a1, a2])
    p_new = a @ est.p @ a.T + est.j
    return replace(est, x_hat=x_new, p=p_new, direction=direction)


def correct(est: EstimatorState, i: float, v_meas: float, config: EkfConfig):
    """Measurement update against the measured terminal voltage.

    Returns (posterior EstimatorState, EkfStepRecord). The SoC component of
    the posterior clamps to [0, 1] with ``soc_saturated`` set.
    """
    direction = _update_direction(est.direction, i)
    s_look = _clip01(est.soc)
    p_ecm = lookup_params(config.table_for(direction), s_look)

    c0 = docv_ds(s_look, config.coeffs)
    c = np.array([c0, 1.0, 1.0])
    y = ocv(s_look, config.coeffs) + est.x_hat[1] + est.x_hat[2] + i * p_ecm.r0

    pc = est.p @ c
    s_innov = float(c @ pc) + est.r
    if s_innov <= 0.0:
        raise DegenerateInnovationVariance(
            f"innovation variance {s_innov} is not positive"
        )
    gain = pc / s_innov
    innovation = v_meas - y

    x_new = est.x_hat + gain * innovation
    saturated = not 0.0 <= x_new[0] <= 1.0
    x_new[0] = _clip01(x_new[0])

    if config.joseph:
        m = np.eye(3) - np.outer(gain, c)
        p_new = m @ est.p @ m.T + est.r * np.outer(gain, gain)
    else:
        p_new = est.p - np.outer(gain, pc)
    p_new = 0.5 * (p_new + p_new.T)

    record = EkfStepRecord(
        x_prior=est.x_hat.copy(),
        y_pred=float(y),
        innovation=float(innovation),
        gain=gain.copy(),
        x_post=x_new.copy(),
        p_post=p_new.copy(),
    )
    posterior = replace(
        est, x_hat=x_new, p=p_new, direction=direction, soc_saturated=saturated
    )
    return posterior, record


def check_uniform_dt(t: np.ndarray, dt: float, tolerance: float) -> None:
    if t.size < 2:
        return
    steps = np.diff(t)
    bad = np.flatnonzero(np.abs(steps - dt) > tolerance * dt)
    if bad.size:
        k = int(bad[0])
        raise NonuniformSampling(
            f"sample interval {steps[k]!r} at index {k + 1} deviates from dt={dt!r}"
        )


def ekf_run(samples, init: EstimatorState, config: EkfConfig) -> list:
    """Run the recursion over a full trace; one record per sample.

    Sample k is corrected with (i[k], v[k]); the time update into step k uses
    i[k-1]. The first sample gets a measurement update only. Executes through
    the compiled kernel loop (pure-Python under ``BATTWIN_NUMBA=0``).
    """
    if len(samples) == 0:
        return []
    t, i, v = samples_to_arrays(samples)
    check_uniform_dt(t, config.dt, config.dt_tolerance)

    ct, dt_table = config.charging_table, config.discharging_table
    dir0 = (
        kernels.DIR_CHARGING
        if init.direction is Direction.CHARGING
        else kernels.DIR_DISCHARGING
    )
    x_prior, y_pred, innov, gain, x_post, p_post, sat, fail = kernels.ekf_loop(
        i,
        v,
        config.dt,
        config.eta_charge,
        config.eta_discharge,
        config.q,
        np.asarray(config.coeffs, dtype=float),
        ct.socs,
        ct.values,
        dt_table.socs,
        dt_table.values,
        init.x_hat.astype(float),
        init.p.astype(float),
        np.diag(init.j).astype(float),
        float(init.r),
        dir0,
        config.joseph,
        -1.0 if config.negate_rc_gain else 1.0,
    )
    if fail >= 0:
        raise DegenerateInnovationVariance(
            f"innovation variance degenerated at step {fail}"
        )
    return [
        EkfStepRecord(
            x_prior=x_prior[k],
            y_pred=float(y_pred[k]),
            innovation=float(innov[k]),
            gain=gain[k],
            x_post=x_post[k],
            p_post=p_post[k],
        )
        for k in range(len(samples))
    ]
