"""HPPC parameter identification: segmentation, R0 extraction, relaxation fits.

The procedure mirrors a pulse test workup:

  * the trace is split at current edges into pulse and rest segments;
  * the ohmic resistance comes from the instantaneous voltage step across a
    pulse edge, |dv| / |i|;
  * the rest segment after each pulse relaxes as a bi-exponential whose
    amplitudes and time constants carry the two RC branches. With the settled
    rest voltage taken as OCV, (v - voc) / i_pulse decays as
    alpha*exp(-t/beta) + gamma*exp(-t/lambda); alpha and gamma equal
    R1/R2 scaled by the finite-pulse excitation factor (1 - exp(-t_pulse/tau)),
    which the table-building step divides back out;
  * open-circuit voltage points are the settled tails of long rests, fitted
    with a degree-5 polynomial.

Fits run on an in-repo Levenberg-Marquardt solver (analytic Jacobian) in
(alpha, ln beta, gamma, ln lambda) coordinates so time constants stay
positive, with deterministic multistarts reduced by lowest residual (ties
broken by start index).
"""

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .ecm import Direction, EcmParams
from .errors import FitDiverged, RankDeficient, UnsegmentableTrace, ZeroCurrent
from .lm import LmConfig, lm_solve
from .trace_io import Sample, samples_to_arrays


class SegmentKind(enum.Enum):
    IMPULSE_RISE = "impulse_rise"  # discharge pulse: voltage snaps up at release
    IMPULSE_DROP = "impulse_drop"  # charge pulse: voltage snaps down at release
    REST = "rest"


@dataclass(frozen=True, eq=False)
class HppcSegment:
    """A maximal run of samples between current edges.

    ``pulse_current`` is the median segment current (~0 for rests);
    ``soc_at_segment`` is filled by the identification pipeline once the
    coulomb trajectory is known.
    """

    kind: SegmentKind
    t: np.ndarray
    i: np.ndarray
    v: np.ndarray
    pulse_current: float
    soc_at_segment: float | None = None

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def __len__(self) -> int:
        return self.t.size


@dataclass(frozen=True, slots=True)
class RelaxFit:
    """Bi-exponential relaxation fit, canonically ordered beta <= lambda_.

    alpha/gamma are the fitted amplitudes in ohms (R1/R2 once corrected for
    finite pulse length); beta/lambda_ are the time constants in seconds.
    ``ill_conditioned`` marks nearly equal time constants (within 10%), where
    the amplitude split is weakly identifiable.
    """

    alpha: float
    beta: float
    gamma: float
    lambda_: float
    residual_rms: float
    ill_conditioned: bool = False

    def __post_init__(self):
        if self.beta <= 0.0 or self.lambda_ <= 0.0:
            raise ValueError("time constants must be positive")
        if self.alpha < 0.0 or self.gamma < 0.0:
            raise ValueError("amplitudes must be nonnegative")
        if self.beta > self.lambda_:
            raise ValueError("canonical ordering requires beta <= lambda_")


def segment_hppc(samples, current_threshold: float) -> list:
    """Split a trace at current edges into pulse and rest segments.

    An edge is |i[k] - i[k-1]| > current_threshold; a segment is a rest when
    all its currents stay within the threshold of zero. Pulses are labeled by
    the sign of the instantaneous voltage step at their release edge (rise =
    discharge, drop = charge).
    """
    if len(samples) < 4:
        raise UnsegmentableTrace(f"need at least 4 samples, got {len(samples)}")
    t, i, v = samples_to_arrays(samples)
    if np.any(np.diff(t) < 0):
        raise UnsegmentableTrace("sample times must be non-decreasing")

    edges = np.flatnonzero(np.abs(np.diff(i)) > current_threshold) + 1
    if edges.size == 0:
        raise UnsegmentableTrace("no current edge exceeds the threshold")

    bounds = [0, *edges.tolist(), i.size]
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        seg_t, seg_i, seg_v = t[a:b], i[a:b], v[a:b]
        pulse_current = float(np.median(seg_i))
        if np.all(np.abs(seg_i) <= current_threshold):
            kind = SegmentKind.REST
            pulse_current = 0.0
        else:
            if b < i.size:
                dv = v[b] - v[b - 1]  # release edge
            else:
                dv = -(v[a] - v[a - 1]) if a > 0 else -pulse_current
            kind = SegmentKind.IMPULSE_RISE if dv > 0 else SegmentKind.IMPULSE_DROP
        segments.append(
            HppcSegment(kind=kind, t=seg_t, i=seg_i, v=seg_v, pulse_current=pulse_current)
        )
    return segments


def extract_r0(v_before: float, v_after: float, i_pulse: float) -> float:
    """Ohmic resistance from the instantaneous voltage step across an edge."""
    if i_pulse == 0.0:
        raise ZeroCurrent("r0 extraction needs a nonzero pulse current")
    return abs(v_before - v_after) / abs(i_pulse)


# candidates beyond this log-range are rejected by an infinite residual
_LN_BOUND = 200.0


def _biexp_design(theta, t):
    # all four parameters live in log space, so amplitudes and time
    # constants stay positive by construction
    if np.max(np.abs(theta)) > _LN_BOUND:
        return None
    alpha, beta, gamma, lam = np.exp(theta)
    eb = np.exp(-t / beta)
    el = np.exp(-t / lam)
    return alpha, beta, gamma, lam, eb, el


def _relax_starts(span: float, amp0: float, count: int):
    """Deterministic multistart grid over (beta, lambda)."""
    starts = [(span / 10.0, span / 2.0)]
    for k in range(count - 1):
        frac = k / max(count - 2, 1)
        beta = span * 10.0 ** (-2.5 + 2.0 * frac)
        lam = beta * (10.0 if k % 2 == 0 else 40.0)
        starts.append((beta, min(lam, span * 2.0)))
    ln_amp = math.log(amp0)
    return [
        np.array([ln_amp, math.log(b), ln_amp, math.log(lmb)]) for b, lmb in starts
    ]


def fit_relaxation(
    segment: HppcSegment, i_pulse: float, lm: LmConfig = LmConfig()
) -> RelaxFit:
    """Fit the post-pulse relaxation of a rest segment.

    The settled OCV is the mean of the segment's last 5% of samples; the data
    (v - voc) / i_pulse then decays from the summed RC amplitudes toward zero
    with time measured from the first sample after the edge.
    """
    if i_pulse == 0.0:
        raise ZeroCurrent("relaxation fit needs the driving pulse current")
    n = len(segment)
    if n < 20:
        raise FitDiverged(f"segment too short to fit: {n} samples")

    t = segment.t - segment.t[0]
    tail = max(1, int(round(0.05 * n)))
    voc = float(np.mean(segment.v[-tail:]))
    y = (segment.v - voc) / i_pulse

    span = float(t[-1]) if t[-1] > 0 else 1.0
    amp = float(np.max(y) - np.min(y))
    if amp == 0.0:
        return RelaxFit(0.0, span / 10.0, 0.0, span / 2.0, 0.0)

    def residuals(theta):
        design = _biexp_design(theta, t)
        if design is None:
            return np.full(t.size, np.inf)
        alpha, _, gamma, _, eb, el = design
        return alpha * eb + gamma * el - y

    def jacobian(theta):
        # only evaluated at accepted (finite-cost) iterates
        alpha, beta, gamma, lam, eb, el = _biexp_design(theta, t)
        return np.column_stack(
            [
                alpha * eb,
                alpha * (t / beta) * eb,
                gamma * el,
                gamma * (t / lam) * el,
            ]
        )

    best = None
    for idx, theta0 in enumerate(_relax_starts(span, amp / 2.0, lm.multistart_count)):
        try:
            res = lm_solve(residuals, jacobian, theta0, lm)
        except FitDiverged:
            continue
        key = (res.cost, idx)
        if best is None or key < best[0]:
            best = (key, res)
    if best is None:
        raise FitDiverged("no relaxation multistart converged")

    alpha, beta, gamma, lam = np.exp(best[1].x)
    # a time constant far beyond the observed window is not identifiable;
    # report it at the cap rather than wherever the optimizer wandered
    cap = 10.0 * span
    beta = min(beta, cap)
    lam = min(lam, cap)
    if beta > lam:
        alpha, gamma = gamma, alpha
        beta, lam = lam, beta
    rms = math.sqrt(2.0 * best[1].cost / n) * abs(i_pulse)
    # weakly identifiable split: coincident time constants, or one branch
    # carrying (almost) the whole relaxation
    ill = beta > 0.9 * lam or min(alpha, gamma) < 0.02 * (alpha + gamma)
    return RelaxFit(float(alpha), float(beta), float(gamma), float(lam), rms, ill)


def fit_ocv_poly(points):
    """Least squares of a degree-5 polynomial through (soc, voltage) points.

    Solved through numpy's SVD-backed lstsq (no normal equations). Returns
    (coeffs highest-degree-first, rms residual). Raises RankDeficient with
    fewer than 6 distinct abscissae.
    """
    soc = np.array([float(p[0]) for p in points], dtype=float)
    volts = np.array([float(p[1]) for p in points], dtype=float)
    if np.unique(soc).size < 6:
        raise RankDeficient(
            f"need >= 6 distinct SoC points, got {np.unique(soc).size}"
        )
    vander = np.vander(soc, 6)
    coeffs, *_ = np.linalg.lstsq(vander, volts, rcond=None)
    resid = vander @ coeffs - volts
    rms = float(np.sqrt(np.mean(resid**2)))
    return coeffs, rms


def correct_pulse_amplitudes(
    fit: RelaxFit, t_pulse: float, r0: float, min_excitation: float = 0.01
) -> EcmParams:
    """Scale fitted amplitudes back to full R1/R2 for a finite-length pulse.

    A pulse of duration t_pulse only charges each branch to
    (1 - exp(-t_pulse/tau)) of its asymptote; divide that factor out, then
    C = tau / R. A branch the pulse barely excited (factor below
    ``min_excitation``) is not extrapolated: its amplitude is left nearly
    as fitted instead of being blown up by the division.
    """
    if t_pulse <= 0.0:
        raise ValueError("pulse duration must be positive")
    k1 = max(-math.expm1(-t_pulse / fit.beta), min_excitation)
    k2 = max(-math.expm1(-t_pulse / fit.lambda_), min_excitation)
    r1 = fit.alpha / k1
    r2 = fit.gamma / k2
    return EcmParams(r0=r0, r1=r1, c1=fit.beta / r1, r2=r2, c2=fit.lambda_ / r2)


@dataclass(frozen=True, slots=True)
class IdentifiedRow:
    """One fitted table row: parameters at a SoC for one current direction."""

    soc: float
    direction: Direction
    params: EcmParams
    fit: RelaxFit
    r0_edge_count: int


@dataclass(eq=False)
class IdentifyResult:
    rows_charging: list = field(default_factory=list)
    rows_discharging: list = field(default_factory=list)
    ocv_points: list = field(default_factory=list)
    ocv_coeffs: np.ndarray | None = None
    ocv_rms: float | None = None
    notes: list = field(default_factory=list)

    def rows(self, direction: Direction):
        return (
            self.rows_charging
            if direction is Direction.CHARGING
            else self.rows_discharging
        )


def _edge_r0s(segments, idx):
    """R0 estimates from the edges of pulse ``idx``.

    The onset edge is the clean one (rested state on both samples); the
    release edge leaks one sample of polarization growth into the step, so
    it only serves pulses with nothing before them.
    """
    seg = segments[idx]
    i_pulse = seg.pulse_current
    if idx > 0:
        prev = segments[idx - 1]
        step = abs(prev.i[-1] - seg.i[0])
        return [extract_r0(prev.v[-1], seg.v[0], step if step else i_pulse)]
    if idx + 1 < len(segments):
        nxt = segments[idx + 1]
        step = abs(seg.i[-1] - nxt.i[0])
        return [extract_r0(seg.v[-1], nxt.v[0], step if step else i_pulse)]
    return []


def identify_trace(
    samples,
    q: float,
    initial_soc: float = 1.0,
    current_threshold: float = 0.5,
    lm: LmConfig = LmConfig(),
    min_rest_samples: int = 20,
) -> IdentifyResult:
    """Full workup of an HPPC trace into per-direction parameter rows.

    SoC along the trace is coulomb-counted from ``initial_soc`` using the
    recorded current (eta = 1). Every pulse followed by a sufficiently long
    rest yields one row in the pulse's direction; every long rest contributes
    one settled (soc, ocv) point.
    """
    segments = segment_hppc(samples, current_threshold)
    t, i, v = samples_to_arrays(samples)
    soc = np.empty(t.size)
    soc[0] = initial_soc
    if t.size > 1:
        soc[1:] = initial_soc + np.cumsum(i[:-1] * np.diff(t)) / q

    # map segment starts back to trace indices
    starts = []
    pos = 0
    for seg in segments:
        starts.append(pos)
        pos += len(seg)

    result = IdentifyResult()
    for idx, seg in enumerate(segments):
        if seg.kind is SegmentKind.REST:
            if len(seg) >= min_rest_samples:
                tail = max(1, int(round(0.05 * len(seg))))
                s_rest = float(soc[starts[idx]])
                result.ocv_points.append((s_rest, float(np.mean(seg.v[-tail:]))))
            continue
        if idx + 1 >= len(segments):
            result.notes.append(
                f"pulse at t={seg.t[0]:.0f}s has no rest after it; skipped"
            )
            continue
        rest = segments[idx + 1]
        if rest.kind is not SegmentKind.REST or len(rest) < min_rest_samples:
            result.notes.append(
                f"pulse at t={seg.t[0]:.0f}s lacks a usable rest; skipped"
            )
            continue

        r0_values = _edge_r0s(segments, idx)
        r0 = float(np.mean(r0_values))
        try:
            fit = fit_relaxation(rest, seg.pulse_current, lm)
        except FitDiverged as exc:
            result.notes.append(f"pulse at t={seg.t[0]:.0f}s: fit diverged ({exc})")
            continue
        if fit.alpha == 0.0 or fit.gamma == 0.0:
            result.notes.append(
                f"pulse at t={seg.t[0]:.0f}s: degenerate relaxation; skipped"
            )
            continue
        params = correct_pulse_amplitudes(fit, seg.duration + _step_dt(seg), r0)
        direction = (
            Direction.DISCHARGING if seg.pulse_current < 0 else Direction.CHARGING
        )
        row = IdentifiedRow(
            soc=float(soc[starts[idx + 1]]),
            direction=direction,
            params=params,
            fit=fit,
            r0_edge_count=len(r0_values),
        )
        result.rows(direction).append(row)

    for rows in (result.rows_charging, result.rows_discharging):
        rows.sort(key=lambda r: r.soc)

    if len({round(s, 6) for s, _ in result.ocv_points}) >= 6:
        result.ocv_coeffs, result.ocv_rms = fit_ocv_poly(result.ocv_points)
    else:
        result.notes.append(
            "fewer than 6 distinct rest SoC points; OCV polynomial not fitted"
        )
    return result


def _step_dt(seg: HppcSegment) -> float:
    """Sampling interval of a segment (pulse span runs one dt past the last sample)."""
    if len(seg) > 1:
        return float(seg.t[1] - seg.t[0])
    return 0.0


def rows_to_table(rows, direction: Direction, merge_tol: float = 0.005):
    """Assemble identified rows into a full-coverage ParamTable.

    Rows closer than ``merge_tol`` in SoC collapse to the best (lowest
    residual) fit; the grid is then extended to 0.0 and 1.0 by copying the
    nearest row, since lookups need the whole SoC range.
    """
    from .ecm import ParamTable

    if not rows:
        raise ValueError("no identified rows to assemble")
    clamped = [
        (min(max(r.soc, 0.0), 1.0), r.params, r.fit.residual_rms) for r in rows
    ]
    clamped.sort(key=lambda item: (item[0], item[2]))
    merged = [clamped[0]]
    for item in clamped[1:]:
        if item[0] - merged[-1][0] < merge_tol:
            if item[2] < merged[-1][2]:
                merged[-1] = (merged[-1][0], item[1], item[2])
        else:
            merged.append(item)
    socs = [item[0] for item in merged]
    params = [item[1] for item in merged]
    if socs[0] > 0.0:
        socs.insert(0, 0.0)
        params.insert(0, params[0])
    if socs[-1] < 1.0:
        socs.append(1.0)
        params.append(params[-1])
    return ParamTable.from_rows(list(zip(socs, params)), direction)
