"""Damped Gauss-Newton (Levenberg-Marquardt) solver for small dense problems.

Generic workhorse behind the relaxation-curve fits. Accepts a residual
function and its analytic Jacobian; steps solve

    (J^T J + mu * diag(J^T J)) delta = -J^T r

with the Marquardt diagonal scaling, accepting a step only when it lowers the
sum of squares and growing the damping otherwise. The objective therefore
never increases between accepted iterates.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import FitDiverged


@dataclass(frozen=True, slots=True)
class LmConfig:
    """Iteration limits and tolerances for the solver and its multistarts."""

    max_iters: int = 200
    initial_damping: float = 1e-6
    tol_grad: float = 1e-10
    tol_step: float = 1e-12
    multistart_count: int = 8

    def __post_init__(self):
        if self.max_iters <= 0 or self.multistart_count <= 0:
            raise ValueError("iteration and multistart counts must be positive")
        if min(self.initial_damping, self.tol_grad, self.tol_step) <= 0:
            raise ValueError("damping and tolerances must be positive")


@dataclass(slots=True)
class LmResult:
    """Solution plus convergence diagnostics."""

    x: np.ndarray
    cost: float  # 0.5 * sum(r^2)
    grad_norm: float
    iterations: int
    reason: str  # "gradient" | "step" | "zero_cost"
    accepted_costs: list = field(default_factory=list)


def lm_solve(residuals, jacobian, x0, config: LmConfig = LmConfig()) -> LmResult:
    """Minimize 0.5*||residuals(x)||^2 starting from x0.

    ``residuals(x)`` returns shape (m,), ``jacobian(x)`` shape (m, n) with
    m >= n. Raises FitDiverged when max_iters pass without meeting either
    tolerance.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residuals(x), dtype=float)
    jac = np.asarray(jacobian(x), dtype=float)
    if jac.ndim != 2 or jac.shape[0] < jac.shape[1] or jac.shape[0] != r.size:
        raise ValueError(
            f"jacobian shape {jac.shape} incompatible with {r.size} residuals"
        )

    cost = 0.5 * float(r @ r)
    g = jac.T @ r
    accepted = [cost]

    if cost == 0.0:
        return LmResult(x, cost, 0.0, 0, "zero_cost", accepted)
    gnorm = float(np.max(np.abs(g)))
    if gnorm < config.tol_grad:
        return LmResult(x, cost, gnorm, 0, "gradient", accepted)

    mu = config.initial_damping
    for it in range(1, config.max_iters + 1):
        h = jac.T @ jac
        diag = np.diag(h).copy()
        floor = 1e-12 * max(diag.max(), 1e-300)
        diag[diag < floor] = floor

        step_ok = False
        while mu < 1e18:
            try:
                delta = np.linalg.solve(h + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            x_new = x + delta
            r_new = np.asarray(residuals(x_new), dtype=float)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new < cost:
                step_ok = True
                break
            mu *= 4.0
        if not step_ok:
            raise FitDiverged(
                f"no descent step found after {it} iterations (damping exhausted)"
            )

        x = x_new
        r = r_new
        cost = cost_new
        accepted.append(cost)
        mu = max(mu / 10.0, 1e-15)

        jac = np.asarray(jacobian(x), dtype=float)
        g = jac.T @ r
        gnorm = float(np.max(np.abs(g)))
        if cost == 0.0:
            return LmResult(x, cost, gnorm, it, "zero_cost", accepted)
        if gnorm < config.tol_grad:
            return LmResult(x, cost, gnorm, it, "gradient", accepted)
        if float(np.linalg.norm(delta)) < config.tol_step * (
            float(np.linalg.norm(x)) + config.tol_step
        ):
            return LmResult(x, cost, gnorm, it, "step", accepted)

    raise FitDiverged(
        f"tolerances not met within {config.max_iters} iterations "
        f"(|g|={gnorm:.3g}, cost={cost:.3g})"
    )
