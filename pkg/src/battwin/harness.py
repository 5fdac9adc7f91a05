"""Scenario engine: scripted current profiles driving the plant, with sensor
noise/quantization, optional closed-loop converter control, and optional EKF
estimation over the measured trace.

A scenario is an ordered list of phases on a fixed sample interval:

  * ConstantCurrent(i_ref, duration) - CC charge (+) or discharge (-);
  * Rest(duration)                   - zero current;
  * HppcBlock(pulse_amps, pulse_s, rest_s) - discharge pulse, rest, charge
    pulse, rest (the pulse-test shape used for identification);
  * CcCv(i_ref, float_v)             - CC charge until the terminal reaches
    float_v, then constant-voltage float until the battery fills.

Scenario files are plain text: ``key = value`` lines plus ``phase ...``
lines; see ``parse_scenario``. Runs are deterministic for a fixed sensor
seed: each channel draws from its own seeded stream, so two runs of the same
configuration produce bitwise-identical traces.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .control import ControlMode, ControllerConfig, controller_step
from .ecm import (
    DEFAULT_CAPACITY_C,
    OCV_COEFFS,
    BatteryState,
    Direction,
    ParamTable,
    Soc,
    discretize,
    load_charging_table,
    load_discharging_table,
    lookup_params,
    step_state,
    terminal_voltage,
)
from .ekf import EkfConfig, EstimatorState, ekf_run
from .errors import ScenarioError, SocExhausted
from .trace_io import Sample, arrays_to_samples
from .units import parse_quantity


@dataclass(frozen=True, slots=True)
class ConstantCurrent:
    i_ref: float
    duration: float


@dataclass(frozen=True, slots=True)
class Rest:
    duration: float


@dataclass(frozen=True, slots=True)
class HppcBlock:
    pulse_amps: float
    pulse_s: float
    rest_s: float


@dataclass(frozen=True, slots=True)
class CcCv:
    i_ref: float
    float_v: float
    max_duration: float | None = None


@dataclass(frozen=True, slots=True)
class SensorModel:
    """Gaussian noise plus LSB quantization on both measured channels.

    Defaults model a 30 A Hall-effect sensor and a 12-bit ADC behind a 5:1
    divider. A fixed seed reproduces the exact noise stream.
    """

    i_noise_sigma: float = 0.05
    v_noise_sigma: float = 0.01
    i_quant: float = 0.0293
    v_quant: float = 0.004
    seed: int = 0

    def __post_init__(self):
        if min(self.i_noise_sigma, self.v_noise_sigma, self.i_quant, self.v_quant) < 0:
            raise ValueError("noise sigmas and quanta must be nonnegative")

    @classmethod
    def ideal(cls) -> "SensorModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0)

    def start(self) -> "SensorStream":
        return SensorStream(self)


class SensorStream:
    """Per-run sensor state: one independent seeded stream per channel."""

    def __init__(self, model: SensorModel):
        self.model = model
        seq = np.random.SeedSequence(model.seed)
        child_i, child_v = seq.spawn(2)
        self._rng_i = np.random.default_rng(child_i)
        self._rng_v = np.random.default_rng(child_v)

    def draw(self, n: int):
        m = self.model
        di = self._rng_i.normal(0.0, m.i_noise_sigma, n) if m.i_noise_sigma > 0 else np.zeros(n)
        dv = self._rng_v.normal(0.0, m.v_noise_sigma, n) if m.v_noise_sigma > 0 else np.zeros(n)
        return di, dv

    def apply(self, i_true, v_true, di, dv):
        i_meas = i_true + di
        v_meas = v_true + dv
        if self.model.i_quant > 0:
            i_meas = np.round(i_meas / self.model.i_quant) * self.model.i_quant
        if self.model.v_quant > 0:
            v_meas = np.round(v_meas / self.model.v_quant) * self.model.v_quant
        return i_meas, v_meas

    def measure(self, i_true: float, v_true: float):
        di, dv = self.draw(1)
        i_meas, v_meas = self.apply(
            np.array([i_true]), np.array([v_true]), di, dv
        )
        return float(i_meas[0]), float(v_meas[0])


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Truth-side model inputs: per-direction tables and the OCV polynomial."""

    charging_table: ParamTable = field(default_factory=load_charging_table)
    discharging_table: ParamTable = field(default_factory=load_discharging_table)
    coeffs: np.ndarray = field(default_factory=lambda: OCV_COEFFS.copy())

    def table_for(self, direction: Direction) -> ParamTable:
        return (
            self.charging_table
            if direction is Direction.CHARGING
            else self.discharging_table
        )


@dataclass(frozen=True, slots=True)
class Scenario:
    """Declarative run description; q in coulombs, durations in seconds."""

    phases: tuple
    dt: float = 1.0
    initial_soc: float = 1.0
    eta_charge: float = 1.0
    eta_discharge: float = 1.0
    q: float = DEFAULT_CAPACITY_C
    initial_direction: Direction = Direction.DISCHARGING

    def __post_init__(self):
        if self.dt <= 0:
            raise ScenarioError(f"dt must be positive, got {self.dt}")
        if not 0.0 <= self.initial_soc <= 1.0:
            raise ScenarioError(f"initial_soc {self.initial_soc} outside [0, 1]")
        if self.q <= 0:
            raise ScenarioError("q must be positive")
        for ph in self.phases:
            dur = getattr(ph, "duration", None)
            if dur is not None and dur <= 0:
                raise ScenarioError(f"phase duration must be positive: {ph}")


def _update_direction(direction: Direction, i: float) -> Direction:
    if i > 0.0:
        return Direction.CHARGING
    if i < 0.0:
        return Direction.DISCHARGING
    return direction


def plant_step(
    x: BatteryState,
    i_true: float,
    direction: Direction,
    plant: PlantModel,
    stream: SensorStream,
    t: float,
    dt: float,
    eta_charge: float = 1.0,
    eta_discharge: float = 1.0,
    q: float = DEFAULT_CAPACITY_C,
):
    """One truth step plus a measured Sample at time t.

    The sample holds the state before the step under current ``i_true``
    (instantaneous ohmic drop included), with sensor noise and quantization
    applied. Returns (next_state, sample, direction, saturated).
    """
    direction = _update_direction(direction, i_true)
    params = lookup_params(plant.table_for(direction), x.soc.value)
    v_true = terminal_voltage(x, i_true, params, plant.coeffs)
    i_meas, v_meas = stream.measure(i_true, v_true)
    eta = eta_charge if i_true > 0 else eta_discharge
    m = discretize(params, dt=dt, eta=eta, q=q)
    x_next = step_state(x, i_true, m)
    return x_next, Sample(t, i_meas, v_meas), direction, x_next.soc.saturated


def generate_hppc_scenario(
    soc_grid,
    pulse_amps: float = 10.0,
    pulse_s: float = 10.0,
    rest_s: float = 3600.0,
    dt: float = 1.0,
    q: float = DEFAULT_CAPACITY_C,
    settle_s: float | None = None,
) -> Scenario:
    """Pulse-test schedule: per grid point a discharge pulse, rest, charge
    pulse, rest; between points a CC transfer moving the SoC to the next
    breakpoint followed by a settle rest (so segmentation sees an edge).
    """
    grid = [float(s) for s in soc_grid]
    if any(not 0.0 <= s <= 1.0 for s in grid):
        raise ScenarioError("soc grid points must lie in [0, 1]")
    dip = pulse_amps * pulse_s / q
    for s in grid:
        if s - dip < -1e-12:
            raise ScenarioError(
                f"discharge pulse at soc {s} would drive SoC below 0"
            )
    phases = []
    for idx, s in enumerate(grid):
        phases.append(ConstantCurrent(-pulse_amps, pulse_s))
        phases.append(Rest(rest_s))
        phases.append(ConstantCurrent(+pulse_amps, pulse_s))
        phases.append(Rest(rest_s))
        if idx + 1 < len(grid):
            delta = s - grid[idx + 1]
            if delta != 0.0:
                sign = -1.0 if delta > 0 else 1.0
                phases.append(
                    ConstantCurrent(sign * pulse_amps, abs(delta) * q / pulse_amps)
                )
                phases.append(Rest(settle_s if settle_s is not None else rest_s))
    initial = grid[0] if grid else 1.0
    return Scenario(phases=tuple(phases), dt=dt, initial_soc=initial, q=q)


@dataclass(eq=False)
class RunArtifacts:
    """All traces of one run on shared timestamps."""

    t: np.ndarray
    i_true: np.ndarray
    v_true: np.ndarray
    soc: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    sat: np.ndarray
    i_meas: np.ndarray
    v_meas: np.ndarray
    final_state: BatteryState
    final_direction: Direction
    ekf_records: list | None = None
    controller_rows: list | None = None

    @property
    def samples(self) -> list:
        return arrays_to_samples(self.t, self.i_meas, self.v_meas)

    @property
    def soc_estimates(self) -> np.ndarray:
        if self.ekf_records is None:
            raise ValueError("run had no estimator attached")
        return np.array([r.x_post[0] for r in self.ekf_records])


def _expand_phases(scenario: Scenario):
    """Flatten composite phases into primitive ones."""
    out = []
    for ph in scenario.phases:
        if isinstance(ph, HppcBlock):
            out.append(ConstantCurrent(-ph.pulse_amps, ph.pulse_s))
            out.append(Rest(ph.rest_s))
            out.append(ConstantCurrent(+ph.pulse_amps, ph.pulse_s))
            out.append(Rest(ph.rest_s))
        else:
            out.append(ph)
    return out


def _phase_steps(duration: float, dt: float) -> int:
    n = int(round(duration / dt))
    if n < 1:
        raise ScenarioError(f"phase duration {duration} shorter than dt {dt}")
    return n


def run_scenario(
    scenario: Scenario,
    with_controller: bool = False,
    with_ekf: bool = False,
    sensors: SensorModel | None = None,
    plant: PlantModel | None = None,
    controller_config: ControllerConfig | None = None,
    ekf_config: EkfConfig | None = None,
    ekf_init: EstimatorState | None = None,
    halt_on_empty: bool = False,
) -> RunArtifacts:
    """Execute the scenario phases in order against the plant.

    With the controller enabled, constant-current phases track their setpoint
    through the converter loop; CcCv phases always run the controller (the
    constant-voltage float is a feedback mode by nature) and end when the
    truth SoC reaches 100%. With the EKF enabled the filter consumes the
    measured trace and its records land in the artifacts.

    Raises SocExhausted when a discharge empties the battery and
    ``halt_on_empty`` is set.
    """
    plant = plant or PlantModel()
    sensors = sensors or SensorModel()
    stream = sensors.start()
    phases = _expand_phases(scenario)

    t_parts, it_parts, vt_parts = [], [], []
    soc_parts, v1_parts, v2_parts, sat_parts = [], [], [], []
    im_parts, vm_parts = [], []
    controller_rows = [] if (with_controller or _has_cccv(phases)) else None

    x = BatteryState(Soc(scenario.initial_soc))
    direction = scenario.initial_direction
    t_next = 0.0
    mode = ControlMode.IDLE
    ctrl_cfg = controller_config or ControllerConfig()
    pid = ctrl_cfg.initial_pid()
    # pre-loop sensor context for the first controller decision
    i_meas_prev = 0.0
    v_meas_prev = terminal_voltage(
        x, 0.0, lookup_params(plant.table_for(direction), x.soc.value), plant.coeffs
    )

    for ph in phases:
        if isinstance(ph, CcCv):
            stepwise = True
            i_ref = ph.i_ref
            max_dur = ph.max_duration
            if max_dur is None:
                max_dur = 2.0 * scenario.q / max(abs(ph.i_ref), 1e-9)
            n = _phase_steps(max_dur, scenario.dt)
        elif isinstance(ph, ConstantCurrent):
            i_ref = ph.i_ref
            n = _phase_steps(ph.duration, scenario.dt)
            stepwise = with_controller
        else:  # Rest
            i_ref = 0.0
            n = _phase_steps(ph.duration, scenario.dt)
            stepwise = with_controller

        if not stepwise:
            i_arr = np.full(n, float(i_ref))
            soc_a, v1_a, v2_a, vt_a, sat_a, s_end, u1_end, u2_end, d_end = (
                kernels.plant_loop(
                    i_arr,
                    scenario.dt,
                    scenario.eta_charge,
                    scenario.eta_discharge,
                    scenario.q,
                    x.soc.value,
                    x.v1,
                    x.v2,
                    _dir_code(direction),
                    plant.charging_table.socs,
                    plant.charging_table.values,
                    plant.discharging_table.socs,
                    plant.discharging_table.values,
                    plant.coeffs,
                )
            )
            di, dv = stream.draw(n)
            im_a, vm_a = stream.apply(i_arr, vt_a, di, dv)
            t_arr = t_next + scenario.dt * np.arange(n)

            t_parts.append(t_arr)
            it_parts.append(i_arr)
            vt_parts.append(vt_a)
            soc_parts.append(soc_a)
            v1_parts.append(v1_a)
            v2_parts.append(v2_a)
            sat_parts.append(sat_a)
            im_parts.append(im_a)
            vm_parts.append(vm_a)

            if halt_on_empty and i_ref < 0 and np.any(sat_a > 0):
                raise SocExhausted(
                    f"discharge phase emptied the battery at t={t_arr[np.argmax(sat_a > 0)]:.0f}s"
                )
            x = BatteryState(Soc.clamp(s_end), u1_end, u2_end)
            direction = _dir_from_code(d_end)
            t_next = float(t_arr[-1]) + scenario.dt
            i_meas_prev = float(im_a[-1])
            v_meas_prev = float(vm_a[-1])
            continue

        # stepwise path: controller in the loop
        rows = {k: [] for k in ("t", "it", "vt", "soc", "v1", "v2", "sat", "im", "vm")}
        for _ in range(n):
            mode, pid, i_cmd = controller_step(
                mode, pid, i_ref, i_meas_prev, v_meas_prev, ctrl_cfg
            )
            soc_before = x.soc.value
            v1_before, v2_before = x.v1, x.v2
            direction = _update_direction(direction, i_cmd)
            params = lookup_params(plant.table_for(direction), soc_before)
            v_true = terminal_voltage(x, i_cmd, params, plant.coeffs)
            i_meas, v_meas = stream.measure(i_cmd, v_true)
            eta = scenario.eta_charge if i_cmd > 0 else scenario.eta_discharge
            m = discretize(params, dt=scenario.dt, eta=eta, q=scenario.q)
            x = step_state(x, i_cmd, m)

            rows["t"].append(t_next)
            rows["it"].append(i_cmd)
            rows["vt"].append(v_true)
            rows["soc"].append(soc_before)
            rows["v1"].append(v1_before)
            rows["v2"].append(v2_before)
            rows["sat"].append(1 if x.soc.saturated else 0)
            rows["im"].append(i_meas)
            rows["vm"].append(v_meas)
            if controller_rows is not None:
                controller_rows.append(
                    (t_next, mode.value, float(i_ref), i_meas, pid.duty, v_meas)
                )

            if halt_on_empty and i_cmd < 0 and x.soc.saturated and x.soc.value == 0.0:
                raise SocExhausted(f"discharge emptied the battery at t={t_next:.0f}s")

            i_meas_prev, v_meas_prev = i_meas, v_meas
            t_next += scenario.dt
            if isinstance(ph, CcCv) and x.soc.value >= 1.0:
                break

        t_parts.append(np.array(rows["t"]))
        it_parts.append(np.array(rows["it"]))
        vt_parts.append(np.array(rows["vt"]))
        soc_parts.append(np.array(rows["soc"]))
        v1_parts.append(np.array(rows["v1"]))
        v2_parts.append(np.array(rows["v2"]))
        sat_parts.append(np.array(rows["sat"], dtype=np.uint8))
        im_parts.append(np.array(rows["im"]))
        vm_parts.append(np.array(rows["vm"]))

    t = np.concatenate(t_parts) if t_parts else np.empty(0)
    artifacts = RunArtifacts(
        t=t,
        i_true=np.concatenate(it_parts) if it_parts else np.empty(0),
        v_true=np.concatenate(vt_parts) if vt_parts else np.empty(0),
        soc=np.concatenate(soc_parts) if soc_parts else np.empty(0),
        v1=np.concatenate(v1_parts) if v1_parts else np.empty(0),
        v2=np.concatenate(v2_parts) if v2_parts else np.empty(0),
        sat=np.concatenate(sat_parts) if sat_parts else np.empty(0, dtype=np.uint8),
        i_meas=np.concatenate(im_parts) if im_parts else np.empty(0),
        v_meas=np.concatenate(vm_parts) if vm_parts else np.empty(0),
        final_state=x,
        final_direction=direction,
        controller_rows=controller_rows,
    )

    if with_ekf and t.size:
        cfg = ekf_config or EkfConfig(dt=scenario.dt, q=scenario.q)
        init = ekf_init or EstimatorState.initial(
            scenario.initial_soc, direction=scenario.initial_direction
        )
        artifacts.ekf_records = ekf_run(artifacts.samples, init, cfg)
    return artifacts


def _has_cccv(phases) -> bool:
    return any(isinstance(p, CcCv) for p in phases)


def _dir_code(direction: Direction) -> int:
    return (
        kernels.DIR_CHARGING
        if direction is Direction.CHARGING
        else kernels.DIR_DISCHARGING
    )


def _dir_from_code(code: int) -> Direction:
    return Direction.CHARGING if code == kernels.DIR_CHARGING else Direction.DISCHARGING


_SCALAR_KEYS = {
    "dt": ("time", "dt"),
    "initial_soc": ("dimensionless", "initial_soc"),
    "eta_charge": ("dimensionless", "eta_charge"),
    "eta_discharge": ("dimensionless", "eta_discharge"),
    "q": ("capacity", "q"),
}


def parse_scenario(text: str) -> Scenario:
    """Parse the scenario file format.

    Lines are either ``key = value`` (dt, initial_soc, eta_charge,
    eta_discharge, q, initial_direction) or ``phase <kind> <args...>`` with
    kinds cc (current, duration), rest (duration), hppc (pulse current, pulse
    duration, rest duration), cccv (current, float voltage). '#' starts a
    comment. Values accept unit suffixes (10A, 1h, 100Ah, 13.8V).
    """
    fields = {}
    phases = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("phase"):
            parts = line.split()
            if len(parts) < 2:
                raise ScenarioError(f"line {lineno}: phase kind missing")
            kind = parts[1].lower()
            args = parts[2:]
            try:
                if kind == "cc" and len(args) == 2:
                    phases.append(
                        ConstantCurrent(
                            parse_quantity(args[0], "current"),
                            parse_quantity(args[1], "time"),
                        )
                    )
                elif kind == "rest" and len(args) == 1:
                    phases.append(Rest(parse_quantity(args[0], "time")))
                elif kind == "hppc" and len(args) == 3:
                    phases.append(
                        HppcBlock(
                            parse_quantity(args[0], "current"),
                            parse_quantity(args[1], "time"),
                            parse_quantity(args[2], "time"),
                        )
                    )
                elif kind == "cccv" and len(args) in (2, 3):
                    max_dur = (
                        parse_quantity(args[2], "time") if len(args) == 3 else None
                    )
                    phases.append(
                        CcCv(
                            parse_quantity(args[0], "current"),
                            parse_quantity(args[1], "voltage"),
                            max_dur,
                        )
                    )
                else:
                    raise ScenarioError(
                        f"line {lineno}: unknown phase {line!r}"
                    )
            except ScenarioError:
                raise
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if key == "initial_direction":
            try:
                fields["initial_direction"] = Direction(value.lower())
            except ValueError:
                raise ScenarioError(
                    f"line {lineno}: direction must be charging or discharging"
                ) from None
        elif key in _SCALAR_KEYS:
            kind, name = _SCALAR_KEYS[key]
            fields[name] = parse_quantity(value, kind)
        else:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
    return Scenario(phases=tuple(phases), **fields)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())
