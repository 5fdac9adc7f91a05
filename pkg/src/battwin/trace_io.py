"""Timestamped (current, voltage) samples and their CSV serialization.

Trace schema: header ``t_s,i_a,v_v`` — seconds, amperes (charging positive),
volts. Floats are written with 17 significant digits so write -> load is
bit-exact.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonMonotoneTime, SchemaMismatch

TRACE_HEADER = ["t_s", "i_a", "v_v"]
EKF_TRACE_HEADER = ["t_s", "soc_true", "soc_est", "v_meas", "v_pred", "k_soc"]
CONTROLLER_TRACE_HEADER = ["t_s", "mode", "i_ref_a", "i_meas_a", "duty", "v_v"]


@dataclass(frozen=True, slots=True)
class Sample:
    """One measurement: time (s), current (A, charging positive), voltage (V)."""

    t: float
    i: float
    v: float


def samples_to_arrays(samples):
    """(t, i, v) float arrays from a sample sequence."""
    n = len(samples)
    t = np.empty(n)
    i = np.empty(n)
    v = np.empty(n)
    for k, s in enumerate(samples):
        t[k] = s.t
        i[k] = s.i
        v[k] = s.v
    return t, i, v


def arrays_to_samples(t, i, v):
    return [Sample(float(a), float(b), float(c)) for a, b, c in zip(t, i, v)]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_trace(samples, path) -> None:
    """Write samples in the trace CSV schema (17 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for s in samples:
            writer.writerow([_fmt(s.t), _fmt(s.i), _fmt(s.v)])


def load_trace(path) -> list:
    """Read a trace CSV, validating the schema and time monotonicity."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        if [h.strip() for h in header] != TRACE_HEADER:
            raise SchemaMismatch(f"{path}:1: expected header {','.join(TRACE_HEADER)}")
        prev_t = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaMismatch(f"{path}:{lineno}: expected 3 columns")
            try:
                t, i, v = (float(c) for c in row)
            except ValueError as exc:
                raise SchemaMismatch(f"{path}:{lineno}: {exc}") from None
            if prev_t is not None and t < prev_t:
                raise NonMonotoneTime(
                    f"{path}:{lineno}: timestamp {t!r} after {prev_t!r}"
                )
            prev_t = t
            samples.append(Sample(t, i, v))
    return samples


def write_ekf_trace(path, t, soc_true, soc_est, v_meas, v_pred, k_soc) -> None:
    """Estimator trace for plotting: truth vs estimate plus gain on SoC."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EKF_TRACE_HEADER)
        for row in zip(t, soc_true, soc_est, v_meas, v_pred, k_soc):
            writer.writerow([_fmt(float(x)) for x in row])


def write_controller_trace(path, rows) -> None:
    """Controller trace rows: (t, mode_name, i_ref, i_meas, duty, v)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONTROLLER_TRACE_HEADER)
        for t, mode, i_ref, i_meas, duty, v in rows:
            writer.writerow(
                [_fmt(t), mode, _fmt(i_ref), _fmt(i_meas), _fmt(duty), _fmt(v)]
            )
