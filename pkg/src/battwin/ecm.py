"""2nd-order RC equivalent circuit model of a lead-acid battery.

Holds the OCV polynomial, the per-direction parameter tables with linear
interpolation, exact discretization of the RC dynamics, and coulomb counting.

Sign convention: charging current is positive and both polarization voltages
and the ohmic drop *add* to the open-circuit voltage,

    v = ocv(soc) + v1 + v2 + i * r0

so a discharge (i < 0) pulls the terminal below OCV. A mirrored sign for the
RC input gains is available via ``discretize(..., negate_rc_gain=True)`` for
comparison runs; nothing in this package uses it by default.
"""

import csv
import enum
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import SchemaMismatch, SocOutOfRange

# OCV polynomial coefficients for the modeled 12 V lead-acid battery,
# highest degree first. ocv(0) = 12.33 V, ocv(1) = 12.905 V.
OCV_COEFFS = np.array([11.41, -24.38, 17.85, -5.233, 0.928, 12.33])

# Total capacity of the reference 100 Ah battery, in coulombs.
DEFAULT_CAPACITY_C = 100.0 * 3600.0

TABLE_HEADER = ["soc_pct", "r0_mohm", "r1_mohm", "c1_kf", "r2_mohm", "c2_kf"]


class Direction(enum.Enum):
    """Current direction selecting which parameter table applies."""

    CHARGING = "charging"
    DISCHARGING = "discharging"


@dataclass(frozen=True, slots=True)
class Soc:
    """State of charge as a fraction of total capacity.

    ``saturated`` records that the value was clamped into [0, 1] on
    construction (the plant cannot over- or under-fill).
    """

    value: float
    saturated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))
        if not 0.0 <= self.value <= 1.0:
            raise SocOutOfRange(f"soc {self.value} outside [0, 1]")

    @classmethod
    def clamp(cls, value: float) -> "Soc":
        if value < 0.0:
            return cls(0.0, saturated=True)
        if value > 1.0:
            return cls(1.0, saturated=True)
        return cls(value)

    @classmethod
    def make(cls, value: float, policy: str = "clamp") -> "Soc":
        """Construct under the configured out-of-range policy.

        ``policy="clamp"`` clamps and sets the saturated flag (default);
        ``policy="reject"`` raises SocOutOfRange.
        """
        if policy == "clamp":
            return cls.clamp(value)
        if policy == "reject":
            return cls(value)
        raise ValueError(f"unknown soc policy {policy!r}")

    def __float__(self) -> float:
        return self.value


def _soc_value(s) -> float:
    v = float(s)
    if not 0.0 <= v <= 1.0:
        raise SocOutOfRange(f"soc {v} outside [0, 1]")
    return v


@dataclass(frozen=True, slots=True)
class EcmParams:
    """The five circuit parameters at one SoC and current direction (SI units)."""

    r0: float
    r1: float
    c1: float
    r2: float
    c2: float

    def __post_init__(self):
        for name in ("r0", "r1", "c1", "r2", "c2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be finite and positive, got {v}")

    @property
    def tau1(self) -> float:
        return self.r1 * self.c1

    @property
    def tau2(self) -> float:
        return self.r2 * self.c2


@dataclass(frozen=True, eq=False)
class ParamTable:
    """Circuit parameters on an ascending SoC grid for one current direction.

    ``socs`` are fractions; ``values`` is (n, 5) in SI units ordered
    (r0, r1, c1, r2, c2). The grid must cover 0.0 and 1.0.
    """

    socs: np.ndarray
    values: np.ndarray
    direction: Direction

    def __post_init__(self):
        socs = np.asarray(self.socs, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "socs", socs)
        object.__setattr__(self, "values", values)
        if socs.ndim != 1 or values.shape != (socs.size, 5):
            raise ValueError("socs must be (n,), values (n, 5)")
        if socs.size < 2 or np.any(np.diff(socs) <= 0):
            raise ValueError("soc breakpoints must be strictly ascending")
        if socs[0] != 0.0 or socs[-1] != 1.0:
            raise ValueError("breakpoints must cover 0.0 and 1.0")
        if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
            raise ValueError("all parameter values must be finite and positive")

    @classmethod
    def from_rows(cls, rows, direction: Direction) -> "ParamTable":
        """Build from (soc_fraction, EcmParams) pairs."""
        rows = sorted(rows, key=lambda r: r[0])
        socs = np.array([r[0] for r in rows], dtype=float)
        values = np.array(
            [[p.r0, p.r1, p.c1, p.r2, p.c2] for _, p in rows], dtype=float
        )
        return cls(socs, values, direction)

    @classmethod
    def constant(cls, params: EcmParams, direction: Direction) -> "ParamTable":
        """A table that returns the same parameters at every SoC."""
        row = [params.r0, params.r1, params.c1, params.r2, params.c2]
        return cls(np.array([0.0, 1.0]), np.array([row, row]), direction)

    @classmethod
    def from_csv(cls, path, direction: Direction) -> "ParamTable":
        """Load from the table CSV schema (soc in %, resistances in mOhm,
        capacitances in kF, matching the shipped data files)."""
        with open(path, newline="") as fh:
            return cls._from_csv_file(fh, direction, str(path))

    @classmethod
    def _from_csv_file(cls, fh, direction: Direction, name: str) -> "ParamTable":
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{name}: empty file") from None
        if [h.strip() for h in header] != TABLE_HEADER:
            raise SchemaMismatch(
                f"{name}: expected header {','.join(TABLE_HEADER)}"
            )
        socs = []
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise SchemaMismatch(f"{name}:{lineno}: expected 6 columns")
            try:
                nums = [float(cell) for cell in row]
            except ValueError as exc:
                raise SchemaMismatch(f"{name}:{lineno}: {exc}") from None
            socs.append(nums[0] / 100.0)
            values.append(
                [
                    nums[1] * 1e-3,
                    nums[2] * 1e-3,
                    nums[3] * 1e3,
                    nums[4] * 1e-3,
                    nums[5] * 1e3,
                ]
            )
        return cls(np.array(socs), np.array(values), direction)

    def write_csv(self, path) -> None:
        """Write in the same schema/units the loaders expect."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TABLE_HEADER)
            for s, (r0, r1, c1, r2, c2) in zip(self.socs, self.values):
                writer.writerow(
                    [
                        f"{s * 100.0:.6g}",
                        f"{r0 * 1e3:.6g}",
                        f"{r1 * 1e3:.6g}",
                        f"{c1 * 1e-3:.6g}",
                        f"{r2 * 1e3:.6g}",
                        f"{c2 * 1e-3:.6g}",
                    ]
                )


def _load_packaged(name: str, direction: Direction) -> ParamTable:
    ref = resources.files("battwin.data").joinpath(name)
    with ref.open("r", newline="") as fh:
        table = ParamTable._from_csv_file(fh, direction, name)
    if table.socs.size != 11:
        raise SchemaMismatch(f"{name}: expected 11 breakpoint rows")
    return table


def load_charging_table() -> ParamTable:
    """The shipped charging-direction parameter table (11 rows, 0..100 %)."""
    return _load_packaged("charging.csv", Direction.CHARGING)


def load_discharging_table() -> ParamTable:
    """The shipped discharging-direction parameter table."""
    return _load_packaged("discharging.csv", Direction.DISCHARGING)


@dataclass(frozen=True, slots=True)
class BatteryState:
    """True plant state: SoC plus the two polarization voltages (volts)."""

    soc: Soc
    v1: float = 0.0
    v2: float = 0.0


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    """Zero-order-hold discretization of the circuit over one sample.

    x = [soc, v1, v2];  x' = a @ x + b * i;  v = ocv(soc) + v1 + v2 + d * i.
    ``c`` holds the linearized output row [docv_ds, 1, 1] for the slope the
    model was built with (estimators rebuild it at their own linearization
    point each step).
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    dt: float
    eta: float
    q: float


def ocv(s, coeffs=OCV_COEFFS) -> float:
    """Open-circuit voltage at SoC ``s`` (nested/Horner evaluation)."""
    return float(np.polyval(coeffs, _soc_value(s)))


def docv_ds(s, coeffs=OCV_COEFFS) -> float:
    """Analytic slope dOCV/dSoC used for the estimator's output row."""
    deriv = np.polyder(np.asarray(coeffs, dtype=float))
    return float(np.polyval(deriv, _soc_value(s)))


def lookup_params(table: ParamTable, s) -> EcmParams:
    """Piecewise-linear interpolation of all five parameters at SoC ``s``.

    Exact table values at breakpoints; rejects s outside [0, 1].
    """
    v = _soc_value(s)
    vals = [float(np.interp(v, table.socs, table.values[:, k])) for k in range(5)]
    return EcmParams(*vals)


def discretize(
    params: EcmParams,
    dt: float,
    eta: float,
    q: float,
    docv: float = 0.0,
    negate_rc_gain: bool = False,
) -> DiscreteModel:
    """Exact ZOH discretization of the RC branches plus the coulomb integrator.

    ``negate_rc_gain`` flips the sign of the RC input gains, mirroring the
    discharge-positive convention some texts print; leave False for the
    package-wide charging-positive convention.
    """
    if not (dt > 0.0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    if not (q > 0.0 and math.isfinite(q)):
        raise ValueError(f"q must be positive, got {q}")
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    a1 = math.exp(-dt / params.tau1)
    a2 = math.exp(-dt / params.tau2)
    sign = -1.0 if negate_rc_gain else 1.0
    a = np.diag([1.0, a1, a2])
    b = np.array(
        [eta * dt / q, sign * params.r1 * (1.0 - a1), sign * params.r2 * (1.0 - a2)]
    )
    c = np.array([docv, 1.0, 1.0])
    return DiscreteModel(a=a, b=b, c=c, d=params.r0, dt=dt, eta=eta, q=q)


def step_state(x: BatteryState, i: float, m: DiscreteModel) -> BatteryState:
    """One plant step x' = a x + b i; SoC clamps to [0, 1] with the flag set."""
    soc_next = Soc.clamp(x.soc.value + m.b[0] * i)
    v1 = m.a[1, 1] * x.v1 + m.b[1] * i
    v2 = m.a[2, 2] * x.v2 + m.b[2] * i
    return BatteryState(soc=soc_next, v1=v1, v2=v2)


def terminal_voltage(
    x: BatteryState, i: float, params: EcmParams, coeffs=OCV_COEFFS
) -> float:
    """Terminal voltage ocv(soc) + v1 + v2 + i*r0 (charging-positive i)."""
    return ocv(x.soc, coeffs) + x.v1 + x.v2 + i * params.r0


def coulomb_step(s, i: float, eta: float, q: float, dt: float) -> Soc:
    """Exact coulomb-counting SoC update; the ground truth the filter is judged
    against. Saturates at [0, 1] with the flag set."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    return Soc.clamp(_soc_value(s) + i * eta * dt / q)


def load_ocv_coeffs(source) -> np.ndarray:
    """Read six OCV polynomial coefficients (highest degree first).

    ``source`` is an iterable of numbers or a path to a text file holding six
    whitespace/comma-separated values.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "read_text"):
        text = (
            source.read_text()
            if hasattr(source, "read_text")
            else open(source).read()
        )
        parts = text.replace(",", " ").split()
        vals = [float(p) for p in parts]
    else:
        vals = [float(v) for v in source]
    if len(vals) != 6:
        raise SchemaMismatch(f"expected 6 OCV coefficients, got {len(vals)}")
    arr = np.array(vals, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise SchemaMismatch("OCV coefficients must be finite")
    return arr
