"""Hot numeric kernels: per-sample plant and estimator recursions.

Everything here operates on raw floats and ndarrays so the functions compile
under numba ``@njit`` (see :mod:`battwin._accel`). With ``BATTWIN_NUMBA=0``
the same source runs as plain Python/numpy and produces results equal to the
compiled path to within a few ULPs (libm differences only).

Conventions (used consistently across the package):
  * charging current is positive, discharging negative;
  * terminal voltage  v = OCV(soc) + v1 + v2 + i * r0;
  * direction flag: 1 = charging table, 0 = discharging table; current of
    exactly zero keeps the previous direction (hysteresis at rest).

``benchmarks/bench_kernels.py`` compares the two execution paths.
"""

import numpy as np

from ._accel import maybe_njit

# direction codes shared with the wrapper modules
DIR_DISCHARGING = 0
DIR_CHARGING = 1


@maybe_njit
def ocv_poly(coeffs, s):
    """Evaluate the open-circuit-voltage polynomial (Horner form).

    ``coeffs`` holds the six coefficients, highest degree first.
    """
    acc = 0.0
    for k in range(coeffs.shape[0]):
        acc = acc * s + coeffs[k]
    return acc


@maybe_njit
def ocv_poly_slope(coeffs, s):
    """Analytic derivative of the OCV polynomial with respect to SoC."""
    n = coeffs.shape[0]
    acc = 0.0
    for k in range(n - 1):
        acc = acc * s + coeffs[k] * (n - 1 - k)
    return acc


@maybe_njit
def interp_params(socs, values, s):
    """Piecewise-linear interpolation of the five circuit parameters.

    ``socs`` is ascending and covers [0, 1]; ``values`` is (n, 5) in SI units
    (r0, r1, c1, r2, c2). Exact (bitwise) at breakpoints. ``s`` must already
    be inside [0, 1].
    """
    n = socs.shape[0]
    j = 0
    for k in range(n - 1):
        if s >= socs[k]:
            j = k
    lo = socs[j]
    hi = socs[j + 1]
    if s == lo:
        return values[j, 0], values[j, 1], values[j, 2], values[j, 3], values[j, 4]
    if s >= hi:
        return (
            values[j + 1, 0],
            values[j + 1, 1],
            values[j + 1, 2],
            values[j + 1, 3],
            values[j + 1, 4],
        )
    w = (s - lo) / (hi - lo)
    return (
        values[j, 0] + w * (values[j + 1, 0] - values[j, 0]),
        values[j, 1] + w * (values[j + 1, 1] - values[j, 1]),
        values[j, 2] + w * (values[j + 1, 2] - values[j, 2]),
        values[j, 3] + w * (values[j + 1, 3] - values[j, 3]),
        values[j, 4] + w * (values[j + 1, 4] - values[j, 4]),
    )


@maybe_njit
def plant_loop(
    i_true,
    dt,
    eta_charge,
    eta_discharge,
    q,
    soc0,
    v10,
    v20,
    dir0,
    socs_chg,
    vals_chg,
    socs_dis,
    vals_dis,
    coeffs,
):
    """Advance the 2-RC plant over a current profile.

    Each output index k records the state *before* current ``i_true[k]`` is
    applied, and the terminal voltage under that current (matching the Sample
    semantics used throughout). ``sat[k] = 1`` marks a step whose coulomb
    update hit the [0, 1] SoC bound.

    Returns (soc, v1, v2, v_true, sat, soc_end, v1_end, v2_end, dir_end).
    """
    n = i_true.shape[0]
    soc = np.empty(n)
    v1 = np.empty(n)
    v2 = np.empty(n)
    v_true = np.empty(n)
    sat = np.zeros(n, dtype=np.uint8)

    s = soc0
    u1 = v10
    u2 = v20
    d = dir0
    for k in range(n):
        i = i_true[k]
        if i > 0.0:
            d = DIR_CHARGING
        elif i < 0.0:
            d = DIR_DISCHARGING
        if d == DIR_CHARGING:
            r0, r1, c1, r2, c2 = interp_params(socs_chg, vals_chg, s)
        else:
            r0, r1, c1, r2, c2 = interp_params(socs_dis, vals_dis, s)

        soc[k] = s
        v1[k] = u1
        v2[k] = u2
        v_true[k] = ocv_poly(coeffs, s) + u1 + u2 + i * r0

        eta = eta_charge if i > 0.0 else eta_discharge
        s_next = s + i * eta * dt / q
        if s_next > 1.0:
            s_next = 1.0
            sat[k] = 1
        elif s_next < 0.0:
            s_next = 0.0
            sat[k] = 1
        a1 = np.exp(-dt / (r1 * c1))
        a2 = np.exp(-dt / (r2 * c2))
        u1 = a1 * u1 + r1 * (1.0 - a1) * i
        u2 = a2 * u2 + r2 * (1.0 - a2) * i
        s = s_next

    return soc, v1, v2, v_true, sat, s, u1, u2, d


@maybe_njit
def _clip01(x):
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


@maybe_njit
def ekf_loop(
    i_meas,
    v_meas,
    dt,
    eta_charge,
    eta_discharge,
    q,
    coeffs,
    socs_chg,
    vals_chg,
    socs_dis,
    vals_dis,
    x0,
    p0,
    j_diag,
    r_meas,
    dir0,
    joseph,
    rc_gain_sign,
):
    """Extended Kalman filter recursion over a measured (i, v) trace.

    Sample k is corrected with (i[k], v[k]); the time update into step k uses
    i[k-1] (the current held over the preceding interval). The linearized
    output row is [dOCV/ds, 1, 1]; the predicted output itself uses the full
    nonlinear OCV. The covariance is re-symmetrized after every measurement
    update; ``joseph`` selects the Joseph-stabilized form.

    Returns (x_prior, y_pred, innov, gain, x_post, p_post, sat, fail_step)
    where fail_step is -1 unless the innovation variance degenerated.
    """
    n = i_meas.shape[0]
    x_prior = np.empty((n, 3))
    y_pred = np.empty(n)
    innov = np.empty(n)
    gain = np.empty((n, 3))
    x_post = np.empty((n, 3))
    p_post = np.empty((n, 3, 3))
    sat = np.zeros(n, dtype=np.uint8)

    x = x0.copy()
    p = p0.copy()
    d = dir0
    fail_step = -1

    for k in range(n):
        if k > 0:
            u = i_meas[k - 1]
            if u > 0.0:
                d = DIR_CHARGING
            elif u < 0.0:
                d = DIR_DISCHARGING
            s_look = _clip01(x[0])
            if d == DIR_CHARGING:
                r0, r1, c1, r2, c2 = interp_params(socs_chg, vals_chg, s_look)
            else:
                r0, r1, c1, r2, c2 = interp_params(socs_dis, vals_dis, s_look)
            a1 = np.exp(-dt / (r1 * c1))
            a2 = np.exp(-dt / (r2 * c2))
            b1 = rc_gain_sign * r1 * (1.0 - a1)
            b2 = rc_gain_sign * r2 * (1.0 - a2)
            eta = eta_charge if u > 0.0 else eta_discharge

            x = np.array(
                [x[0] + u * eta * dt / q, a1 * x[1] + b1 * u, a2 * x[2] + b2 * u]
            )
            # P <- A P A^T + J with A = diag(1, a1, a2)
            p00 = p[0, 0] + j_diag[0]
            p01 = a1 * p[0, 1]
            p02 = a2 * p[0, 2]
            p11 = a1 * a1 * p[1, 1] + j_diag[1]
            p12 = a1 * a2 * p[1, 2]
            p22 = a2 * a2 * p[2, 2] + j_diag[2]
            p = np.array([[p00, p01, p02], [p01, p11, p12], [p02, p12, p22]])

        # measurement update with (i[k], v[k])
        u_now = i_meas[k]
        if u_now > 0.0:
            d = DIR_CHARGING
        elif u_now < 0.0:
            d = DIR_DISCHARGING
        s_look = _clip01(x[0])
        if d == DIR_CHARGING:
            r0, r1, c1, r2, c2 = interp_params(socs_chg, vals_chg, s_look)
        else:
            r0, r1, c1, r2, c2 = interp_params(socs_dis, vals_dis, s_look)

        c0 = ocv_poly_slope(coeffs, s_look)
        y = ocv_poly(coeffs, s_look) + x[1] + x[2] + u_now * r0

        # P C^T with C = [c0, 1, 1]
        pc0 = c0 * p[0, 0] + p[0, 1] + p[0, 2]
        pc1 = c0 * p[1, 0] + p[1, 1] + p[1, 2]
        pc2 = c0 * p[2, 0] + p[2, 1] + p[2, 2]
        s_innov = c0 * pc0 + pc1 + pc2 + r_meas
        if s_innov <= 0.0:
            fail_step = k
            for m in range(k, n):
                x_prior[m] = x
                y_pred[m] = y
                innov[m] = 0.0
                gain[m] = 0.0
                x_post[m] = x
                p_post[m] = p
            break

        k0 = pc0 / s_innov
        k1 = pc1 / s_innov
        k2 = pc2 / s_innov
        e = v_meas[k] - y

        x_prior[k, 0] = x[0]
        x_prior[k, 1] = x[1]
        x_prior[k, 2] = x[2]
        y_pred[k] = y
        innov[k] = e
        gain[k, 0] = k0
        gain[k, 1] = k1
        gain[k, 2] = k2

        xs = x[0] + k0 * e
        if xs > 1.0:
            xs = 1.0
            sat[k] = 1
        elif xs < 0.0:
            xs = 0.0
            sat[k] = 1
        x = np.array([xs, x[1] + k1 * e, x[2] + k2 * e])

        if joseph:
            # P <- (I - K C) P (I - K C)^T + K R K^T
            m00 = 1.0 - k0 * c0
            m01 = -k0
            m02 = -k0
            m10 = -k1 * c0
            m11 = 1.0 - k1
            m12 = -k1
            m20 = -k2 * c0
            m21 = -k2
            m22 = 1.0 - k2
            t00 = m00 * p[0, 0] + m01 * p[1, 0] + m02 * p[2, 0]
            t01 = m00 * p[0, 1] + m01 * p[1, 1] + m02 * p[2, 1]
            t02 = m00 * p[0, 2] + m01 * p[1, 2] + m02 * p[2, 2]
            t10 = m10 * p[0, 0] + m11 * p[1, 0] + m12 * p[2, 0]
            t11 = m10 * p[0, 1] + m11 * p[1, 1] + m12 * p[2, 1]
            t12 = m10 * p[0, 2] + m11 * p[1, 2] + m12 * p[2, 2]
            t20 = m20 * p[0, 0] + m21 * p[1, 0] + m22 * p[2, 0]
            t21 = m20 * p[0, 1] + m21 * p[1, 1] + m22 * p[2, 1]
            t22 = m20 * p[0, 2] + m21 * p[1, 2] + m22 * p[2, 2]
            j00 = t00 * m00 + t01 * m01 + t02 * m02 + r_meas * k0 * k0
            j01 = t00 * m10 + t01 * m11 + t02 * m12 + r_meas * k0 * k1
            j02 = t00 * m20 + t01 * m21 + t02 * m22 + r_meas * k0 * k2
            j10 = t10 * m00 + t11 * m01 + t12 * m02 + r_meas * k1 * k0
            j11 = t10 * m10 + t11 * m11 + t12 * m12 + r_meas * k1 * k1
            j12 = t10 * m20 + t11 * m21 + t12 * m22 + r_meas * k1 * k2
            j20 = t20 * m00 + t21 * m01 + t22 * m02 + r_meas * k2 * k0
            j21 = t20 * m10 + t21 * m11 + t22 * m12 + r_meas * k2 * k1
            j22 = t20 * m20 + t21 * m21 + t22 * m22 + r_meas * k2 * k2
            p = np.array(
                [
                    [j00, 0.5 * (j01 + j10), 0.5 * (j02 + j20)],
                    [0.5 * (j01 + j10), j11, 0.5 * (j12 + j21)],
                    [0.5 * (j02 + j20), 0.5 * (j12 + j21), j22],
                ]
            )
        else:
            # P <- P - K (C P), then symmetrize
            n00 = p[0, 0] - k0 * pc0
            n01 = p[0, 1] - k0 * pc1
            n02 = p[0, 2] - k0 * pc2
            n10 = p[1, 0] - k1 * pc0
            n11 = p[1, 1] - k1 * pc1
            n12 = p[1, 2] - k1 * pc2
            n20 = p[2, 0] - k2 * pc0
            n21 = p[2, 1] - k2 * pc1
            n22 = p[2, 2] - k2 * pc2
            p = np.array(
                [
                    [n00, 0.5 * (n01 + n10), 0.5 * (n02 + n20)],
                    [0.5 * (n01 + n10), n11, 0.5 * (n12 + n21)],
                    [0.5 * (n02 + n20), 0.5 * (n12 + n21), n22],
                ]
            )

        x_post[k, 0] = x[0]
        x_post[k, 1] = x[1]
        x_post[k, 2] = x[2]
        p_post[k] = p

    return x_prior, y_pred, innov, gain, x_post, p_post, sat, fail_step
