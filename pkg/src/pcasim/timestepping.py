"""Generalized-alpha time integration with Newton/GMRES stage solves.

One step solves R(Udot_stage, U_stage) = 0 for the end-of-step derivative,
with the stage values interpolated by the alpha coefficients; the scheme is
second-order accurate and A-stable for the parameter relations implemented
in ``alpha_from_rho_inf``.  Newton convergence is judged per field block so
that differently scaled equations cannot mask each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import SystemState
from .linsolve import GmresControls, gmres_solve, jacobi_preconditioner

__all__ = [
    "AlphaParams",
    "StepControls",
    "StepStats",
    "NewtonDivergenceError",
    "LinearSolveFailure",
    "alpha_from_rho_inf",
    "newton_solve",
    "advance_step",
    "build_time_grid",
    "run_simulation",
]


class NewtonDivergenceError(RuntimeError):
    """Newton ran out of iterations; carries the per-field norm history."""

    def __init__(self, history, time=None):
        super().__init__(f"Newton did not converge in {len(history) - 1} iterations"
                         + (f" at t={time:g} d" if time is not None else ""))
        self.history = history
        self.time = time


class LinearSolveFailure(RuntimeError):
    """GMRES produced a numerically unusable iterate."""

    def __init__(self, report, time=None):
        super().__init__("linear solve failed"
                         + (f" at t={time:g} d" if time is not None else "")
                         + f" (breakdown={report.breakdown}, "
                           f"relative residual={report.relative_residual:.3e})")
        self.report = report
        self.time = time


@dataclass(frozen=True)
class AlphaParams:
    """Generalized-alpha coefficients derived from the spectral radius."""

    rho_inf: float
    alpha_m: float
    alpha_f: float
    gamma: float


def alpha_from_rho_inf(rho_inf):
    """Second-order, A-stable parameter family indexed by rho_inf in [0, 1]."""
    if not 0.0 <= rho_inf <= 1.0:
        raise ValueError(f"rho_inf must lie in [0, 1], got {rho_inf}")
    alpha_m = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    alpha_f = 1.0 / (1.0 + rho_inf)
    gamma = 0.5 + alpha_m - alpha_f
    return AlphaParams(rho_inf=rho_inf, alpha_m=alpha_m, alpha_f=alpha_f, gamma=gamma)


@dataclass(frozen=True)
class StepControls:
    dt: float = 0.1
    newton_tol: float = 1e-3
    newton_max_iter: int = 20
    newton_floor: float = 1e-12
    gmres_tol: float = 1e-3
    gmres_max_iter: int = 500
    gmres_restart: int | None = 200

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("time step must be positive")
        if self.newton_tol <= 0.0:
            raise ValueError("Newton tolerance must be positive")

    def gmres_controls(self):
        return GmresControls(tolerance=self.gmres_tol, max_iterations=self.gmres_max_iter,
                             restart=self.gmres_restart)


@dataclass
class StepStats:
    newton_iters: int = 0
    gmres_iters: int = 0
    norm_history: list = field(default_factory=list)

    def accumulate(self, other):
        self.newton_iters += other.newton_iters
        self.gmres_iters += other.gmres_iters


def _field_norms(R, slices):
    return np.array([np.linalg.norm(R[sl]) for sl in slices.values()])


def newton_solve(residual_fn, jacobian_fn, x0, controls, slices, zero_ids=None, time=None,
                 floor_scale=1.0):
    """Newton iteration with per-field relative convergence.

    Each residual block must drop below newton_tol times its own first-iterate
    norm (with an absolute floor), so convergence of the global norm cannot be
    driven by one dominant block.  ``floor_scale`` expresses the floor in the
    residual's natural units (the mass-diagonal norm for Galerkin systems,
    whose roundoff level sits far above machine epsilon).  Returns
    (x, StepStats).  GMRES hitting its iteration cap is accepted (best
    iterate); non-finite solves raise LinearSolveFailure, exhausted Newton
    iterations raise NewtonDivergenceError with the norm history attached.
    """
    x = np.array(x0, dtype=float)
    R = residual_fn(x)
    norms0 = _field_norms(R, slices)
    targets = np.maximum(controls.newton_tol * norms0, controls.newton_floor * floor_scale)
    stats = StepStats(norm_history=[norms0])
    gmres_ctrl = controls.gmres_controls()

    for _ in range(controls.newton_max_iter):
        norms = stats.norm_history[-1]
        if np.all(norms <= targets):
            return x, stats
        A = jacobian_fn(x)
        report = gmres_solve(A, -R, preconditioner=jacobi_preconditioner(A),
                             controls=gmres_ctrl)
        stats.gmres_iters += report.iterations
        if report.breakdown or not np.all(np.isfinite(report.x)):
            raise LinearSolveFailure(report, time=time)
        dx = report.x
        if zero_ids is not None:
            dx[zero_ids] = 0.0
        x = x + dx
        R = residual_fn(x)
        stats.newton_iters += 1
        stats.norm_history.append(_field_norms(R, slices))

    if np.all(stats.norm_history[-1] <= targets):
        return x, stats
    raise NewtonDivergenceError(stats.norm_history, time=time)


def advance_step(system, state, alpha, controls, u_fn=None, s_fn=None, dt=None,
                 forcing=None):
    """One generalized-alpha step; returns (new SystemState, StepStats).

    Drug levels are evaluated at the alpha_f stage time.  The predictor keeps
    the previous end-of-step displacement (same-U predictor), which preserves
    homogeneous Dirichlet values exactly.
    """
    dt = controls.dt if dt is None else float(dt)
    am, af, gamma = alpha.alpha_m, alpha.alpha_f, alpha.gamma
    t_stage = state.t + af * dt
    u = u_fn(t_stage) if u_fn is not None else 0.0
    s = s_fn(t_stage) if s_fn is not None else 0.0

    Un = state.pack()
    Udn = state.pack_dot()

    def stage(x):
        U_new = Un + dt * Udn + gamma * dt * (x - Udn)
        U_stage = Un + af * (U_new - Un)
        Ud_stage = Udn + am * (x - Udn)
        return U_stage, Ud_stage

    def residual_fn(x):
        U_stage, Ud_stage = stage(x)
        return system.residual(U_stage, Ud_stage, t_stage, u=u, s=s, forcing=forcing)

    def jacobian_fn(x):
        U_stage, _ = stage(x)
        return system.jacobian(U_stage, t_stage, am, af * gamma * dt, u=u, s=s)

    x0 = (gamma - 1.0) / gamma * Udn
    x, stats = newton_solve(residual_fn, jacobian_fn, x0, controls, system.slices,
                            zero_ids=system.boundary, time=state.t + dt,
                            floor_scale=system.newton_floor_scale)
    U_new = Un + dt * Udn + gamma * dt * (x - Udn)
    return SystemState.from_packed(state.t + dt, U_new, x), stats


def build_time_grid(t_start, horizon, dt, extra_times=()):
    """Uniform step grid over [t_start, t_start + horizon] with extra points.

    The horizon must be an integer number of steps; times from
    ``extra_times`` falling strictly inside the window (dose deliveries that
    do not sit on the grid) are inserted, locally subdividing a step.
    """
    n = int(round(horizon / dt))
    if n < 0 or abs(n * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(f"horizon {horizon} is not an integer multiple of dt {dt}")
    times = t_start + np.linspace(0.0, horizon, n + 1)
    extra = np.asarray(extra_times, dtype=float)
    extra = extra[(extra > t_start) & (extra < t_start + horizon)]
    if extra.size:
        merged = np.union1d(times, extra)
        keep = np.concatenate([[True], np.diff(merged) > 1e-9 * max(dt, 1e-12)])
        # never drop an original grid point in favor of a nearby dose time
        on_grid = np.isin(merged, times)
        times = merged[keep | on_grid]
        times = np.unique(times)
    return times


def run_simulation(system, state0, alpha, controls, horizon, u_fn=None, s_fn=None,
                   dose_times=(), observe_times=None, observer=None, forcing=None):
    """March the system over the horizon, reporting at the observation times.

    ``observer(state, stats)`` is called at t_start (with empty stats) and at
    every requested observation time with the solver statistics accumulated
    since the previous observation.  Step failures propagate with the failing
    time attached.  Returns the final state.
    """
    grid = build_time_grid(state0.t, horizon, controls.dt, extra_times=dose_times)
    if observe_times is None:
        observe_times = np.array([grid[0], grid[-1]])
    obs_idx = np.unique(np.searchsorted(grid, np.asarray(observe_times) - 1e-12))
    obs_idx = obs_idx[obs_idx <= grid.size - 1]
    obs_set = set(int(i) for i in obs_idx)

    state = state0
    if 0 in obs_set and observer is not None:
        observer(state, StepStats())
    accum = StepStats()
    for k in range(grid.size - 1):
        dt_k = grid[k + 1] - grid[k]
        state, stats = advance_step(system, state, alpha, controls,
                                    u_fn=u_fn, s_fn=s_fn, dt=dt_k, forcing=forcing)
        state.t = grid[k + 1]   # avoid accumulated roundoff in the clock
        accum.accumulate(stats)
        if (k + 1) in obs_set and observer is not None:
            observer(state, accum)
            accum = StepStats()
    return state
