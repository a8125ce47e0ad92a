"""Independent oracles and convergence studies.

Nothing in here shares assembly code with the production path: the oracle
residual evaluates B-splines through scipy, assembles with dense collocation
tables, differentiates by finite differences and solves with dense LU.  The
studies quantify what the method is supposed to deliver: design order in time
and space, a correct hand-derived tangent, solver-path equivalence, and
stable dependence on the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model

__all__ = [
    "OracleDiscretization",
    "oracle_residual",
    "dense_oracle_step",
    "jacobian_fd_check",
    "ManufacturedSolution",
    "default_manufactured_solution",
    "mms_study",
    "continuous_dependence_probe",
]


# -- independent discretization (scipy B-splines, dense tables) ---------------------

class OracleDiscretization:
    """Dense quadrature tables built from scipy's B-spline evaluation."""

    def __init__(self, L, n_el, degree=2, n_quad=3):
        from scipy.interpolate import BSpline

        self.L = float(L)
        self.n_el = int(n_el)
        self.degree = degree
        h = L / n_el
        knots = np.concatenate([np.zeros(degree), np.linspace(0.0, L, n_el + 1),
                                np.full(degree, L)])
        self.n1d = n_el + degree
        self.n = self.n1d * self.n1d

        xi, wi = np.polynomial.legendre.leggauss(n_quad)
        pts = (np.arange(n_el)[:, None] * h + h * (xi[None, :] + 1.0) / 2.0).ravel()
        wts = np.tile(h / 2.0 * wi, n_el)

        B1 = np.zeros((pts.size, self.n1d))
        D1 = np.zeros((pts.size, self.n1d))
        for j in range(self.n1d):
            unit = np.zeros(self.n1d)
            unit[j] = 1.0
            bj = BSpline(knots, unit, degree, extrapolate=False)
            B1[:, j] = np.nan_to_num(bj(pts))
            D1[:, j] = np.nan_to_num(bj.derivative()(pts))

        # full 2D tables (small spaces only): quadrature point index runs
        # x-major, dof index ix * n1d + iy
        self.N = np.einsum("pi,qj->pqij", B1, B1).reshape(pts.size**2, self.n)
        self.Nx = np.einsum("pi,qj->pqij", D1, B1).reshape(pts.size**2, self.n)
        self.Ny = np.einsum("pi,qj->pqij", B1, D1).reshape(pts.size**2, self.n)
        self.W = (wts[:, None] * wts[None, :]).ravel()
        X, Y = np.meshgrid(pts, pts, indexing="ij")
        self.X, self.Y = X.ravel(), Y.ravel()

        mask = np.zeros((self.n1d, self.n1d), dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        self.boundary = np.flatnonzero(mask.ravel())


def oracle_residual(disc, params, U, Ud, t, u=0.0, s=0.0, forcing=None):
    """Dense re-implementation of the three Galerkin residual blocks."""
    n = disc.n
    blocks = []
    for k, (c, cd) in enumerate(((U[:n], Ud[:n]), (U[n:2 * n], Ud[n:2 * n]),
                                 (U[2 * n:], Ud[2 * n:]))):
        blocks.append((disc.N @ c, disc.Nx @ c, disc.Ny @ c, disc.N @ cd))
    (phi, phix, phiy, phid) = blocks[0]
    (sig, sigx, sigy, sigd) = blocks[1]
    (p, px, py, pd) = blocks[2]

    f_phi = phid + model.double_well_deriv(phi, sig, u, params)
    f_sig = sigd - model.nutrient_reaction(phi, sig, s, params)
    f_p = pd - model.psa_reaction(phi, p, params)
    if forcing is not None:
        g_phi, g_sig, g_p = forcing
        if g_phi is not None:
            f_phi = f_phi - g_phi(disc.X, disc.Y, t)
        if g_sig is not None:
            f_sig = f_sig - g_sig(disc.X, disc.Y, t)
        if g_p is not None:
            f_p = f_p - g_p(disc.X, disc.Y, t)

    W = disc.W
    R_phi = disc.N.T @ (W * f_phi) + params.lam * (disc.Nx.T @ (W * phix) + disc.Ny.T @ (W * phiy))
    R_sig = disc.N.T @ (W * f_sig) + params.eta * (disc.Nx.T @ (W * sigx) + disc.Ny.T @ (W * sigy))
    R_p = disc.N.T @ (W * f_p) + params.D_psa * (disc.Nx.T @ (W * px) + disc.Ny.T @ (W * py))
    R = np.concatenate([R_phi, R_sig, R_p])
    R[disc.boundary] = U[disc.boundary]
    return R


def dense_oracle_step(disc, params, state, dt, rho_inf=0.5, u_fn=None, s_fn=None,
                      tol=1e-10, max_iter=40):
    """One generalized-alpha step with FD Jacobian and dense LU.

    Returns (U_next, Udot_next).  Independent of the production path in
    basis evaluation, assembly, linearization and linear solve.
    """
    alpha_m = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    alpha_f = 1.0 / (1.0 + rho_inf)
    gamma = 0.5 + alpha_m - alpha_f
    t_stage = state.t + alpha_f * dt
    u = u_fn(t_stage) if u_fn else 0.0
    s = s_fn(t_stage) if s_fn else 0.0
    Un, Udn = state.pack(), state.pack_dot()
    ndof = Un.size

    def res(x):
        U_new = Un + dt * Udn + gamma * dt * (x - Udn)
        U_stage = Un + alpha_f * (U_new - Un)
        Ud_stage = Udn + alpha_m * (x - Udn)
        return oracle_residual(disc, params, U_stage, Ud_stage, t_stage, u=u, s=s)

    scale = disc.W.sum()   # ~ domain area, the natural residual magnitude
    x = (gamma - 1.0) / gamma * Udn
    R = res(x)
    for _ in range(max_iter):
        if np.linalg.norm(R) <= tol * scale:
            break
        J = np.empty((ndof, ndof))
        for j in range(ndof):
            e = np.zeros(ndof)
            e[j] = 1e-7 * max(1.0, abs(x[j]))
            J[:, j] = (res(x + e) - res(x - e)) / (2.0 * e[j])
        x = x + np.linalg.solve(J, -R)
        x[disc.boundary] = 0.0
        R = res(x)
    U_new = Un + dt * Udn + gamma * dt * (x - Udn)
    return U_new, x


# -- Jacobian finite-difference check ------------------------------------------------

def jacobian_fd_check(system, n_states=20, seed=0, eps=1e-6, dt=0.1, rho_inf=0.5):
    """Max relative discrepancy between the analytic and FD Jacobians.

    Random stage states, central differences through the generalized-alpha
    update map, repeated at half the step to confirm the discrepancy is not
    finite-difference noise.  Dirichlet rows/columns are excluded: the
    constraint is enforced exactly, not linearized.
    """
    rng = np.random.default_rng(seed)
    n = system.n
    alpha_m = 0.5 * (3.0 - rho_inf) / (1.0 + rho_inf)
    alpha_f = 1.0 / (1.0 + rho_inf)
    gamma = 0.5 + alpha_m - alpha_f
    c = alpha_f * gamma * dt
    mask = np.ones(3 * n, dtype=bool)
    mask[system.boundary] = False

    worst = {"eps": 0.0, "eps/2": 0.0}
    for _ in range(n_states):
        Un = np.concatenate([rng.uniform(0.0, 1.0, n), rng.uniform(0.05, 1.2, n),
                             rng.uniform(0.0, 0.6, n)])
        Un[system.boundary] = 0.0
        Udn = rng.normal(0.0, 0.05, 3 * n)
        Udn[system.boundary] = 0.0
        u, s = rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)

        def stage(x):
            U_new = Un + dt * Udn + gamma * dt * (x - Udn)
            return Un + alpha_f * (U_new - Un), Udn + alpha_m * (x - Udn)

        def res(x):
            U_stage, Ud_stage = stage(x)
            return system.residual(U_stage, Ud_stage, 0.0, u=u, s=s)

        x0 = rng.normal(0.0, 0.05, 3 * n)
        x0[system.boundary] = 0.0
        U_stage, _ = stage(x0)
        J = system.jacobian(U_stage, 0.0, alpha_m, c, u=u, s=s).toarray()
        scale = np.abs(J).max()
        for label, h0 in (("eps", eps), ("eps/2", eps / 2.0)):
            Jfd = np.empty_like(J)
            for j in range(3 * n):
                e = np.zeros(3 * n)
                e[j] = h0 * max(1.0, abs(x0[j]))
                Jfd[:, j] = (res(x0 + e) - res(x0 - e)) / (2.0 * e[j])
            err = np.abs(J - Jfd)[np.ix_(mask, mask)].max() / scale
            worst[label] = max(worst[label], err)
    return worst


# -- method of manufactured solutions -------------------------------------------------

@dataclass(frozen=True)
class ManufacturedSolution:
    """Smooth exact fields compatible with the boundary conditions.

    phi must vanish on the boundary, sigma and p must have zero normal
    derivative; the trigonometric defaults satisfy both by construction.
    With ``steady`` the time factors freeze at their t=0 values, which makes
    the fields an exact steady state: spatial error studies are then free of
    time-discretization error.
    """

    L: float
    amp_phi: float = 0.4
    amp_sigma: float = 0.3
    amp_p: float = 0.2
    base_sigma: float = 0.8
    base_p: float = 0.5
    steady: bool = False

    def _mode(self, X, Y, kind):
        k = np.pi / self.L
        if kind == "phi":
            return np.sin(k * X) * np.sin(k * Y)
        return np.cos(k * X) * np.cos(k * Y)

    def phi(self, X, Y, t):
        tau = 1.0 if self.steady else 1.0 + t * t / 2.0
        return self.amp_phi * self._mode(X, Y, "phi") * tau

    def phi_t(self, X, Y, t):
        return self.amp_phi * self._mode(X, Y, "phi") * (0.0 if self.steady else t)

    def sigma(self, X, Y, t):
        tau = 1.0 if self.steady else 1.0 + t * t / 3.0
        return self.base_sigma + self.amp_sigma * self._mode(X, Y, "cos") * tau

    def sigma_t(self, X, Y, t):
        rate = 0.0 if self.steady else 2.0 * t / 3.0
        return self.amp_sigma * self._mode(X, Y, "cos") * rate

    def p(self, X, Y, t):
        tau = 1.0 if self.steady else 1.0 + t * t / 4.0
        return self.base_p + self.amp_p * self._mode(X, Y, "cos") * tau

    def p_t(self, X, Y, t):
        rate = 0.0 if self.steady else t / 2.0
        return self.amp_p * self._mode(X, Y, "cos") * rate

    def forcing(self, params):
        """Source terms that make the fields the exact solution (u = s = 0)."""
        lap = 2.0 * (np.pi / self.L) ** 2   # -Laplacian of both mode shapes

        def g_phi(X, Y, t):
            phi, sig = self.phi(X, Y, t), self.sigma(X, Y, t)
            return (self.phi_t(X, Y, t) + params.lam * lap * phi
                    + model.double_well_deriv(phi, sig, 0.0, params))

        def g_sigma(X, Y, t):
            phi, sig = self.phi(X, Y, t), self.sigma(X, Y, t)
            return (self.sigma_t(X, Y, t) + params.eta * lap * (sig - self.base_sigma)
                    - model.nutrient_reaction(phi, sig, 0.0, params))

        def g_p(X, Y, t):
            phi, p = self.phi(X, Y, t), self.p(X, Y, t)
            return (self.p_t(X, Y, t) + params.D_psa * lap * (p - self.base_p)
                    - model.psa_reaction(phi, p, params))

        return (g_phi, g_sigma, g_p)

    def check_compatibility(self, rtol=1e-12):
        xs = np.linspace(0.0, self.L, 7)
        k = np.pi / self.L
        if not np.allclose(self.phi(np.zeros_like(xs), xs, 1.0), 0.0, atol=rtol):
            raise ValueError("manufactured phi does not vanish on the boundary")
        # d/dx cos(kx) = -k sin(kx) -> 0 at x in {0, L}
        if abs(np.sin(k * 0.0)) > rtol or abs(np.sin(k * self.L)) > 1e-12:
            raise ValueError("manufactured sigma/p normal derivative not zero")


def default_manufactured_solution(L):
    return ManufacturedSolution(L=L)


def _l2_error(space, coefs, exact, t):
    X, Y = space.quad_points_2d()
    diff = space.eval_coef_grid(coefs) - exact(X, Y, t)
    return float(np.sqrt((space.quad_weights_2d() * diff * diff).sum()))


def _run_mms(params, mms, n_el, dt, T, rho_inf=0.5):
    from .assembly import GalerkinSystem, SystemState
    from .splines import SplineSpace2D, l2_project
    from .timestepping import StepControls, advance_step, alpha_from_rho_inf

    space = SplineSpace2D(mms.L, n_el)
    system = GalerkinSystem(space, params)
    forcing = mms.forcing(params)
    Phi = l2_project(space, lambda X, Y: mms.phi(X, Y, 0.0))
    Phi[space.boundary_mask] = 0.0
    Sig = l2_project(space, lambda X, Y: mms.sigma(X, Y, 0.0))
    P = l2_project(space, lambda X, Y: mms.p(X, Y, 0.0))
    U0 = np.concatenate([Phi, Sig, P])
    Ud0 = system.consistent_derivatives(U0, 0.0, forcing=forcing)
    state = SystemState.from_packed(0.0, U0, Ud0)
    controls = StepControls(dt=dt, newton_tol=1e-9, gmres_tol=1e-9, gmres_restart=None,
                            newton_max_iter=30)
    alpha = alpha_from_rho_inf(rho_inf)
    n_steps = int(round(T / dt))
    for _ in range(n_steps):
        state, _ = advance_step(system, state, alpha, controls, forcing=forcing)
    return space, state


def fit_order(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    keep = errors > 0.0
    return float(np.polyfit(np.log(hs[keep]), np.log(errors[keep]), 1)[0])


def mms_study(params, mms=None, spatial_nels=(8, 16, 32, 64), spatial_dt=0.05,
              spatial_T=1.5, temporal_nel=16, temporal_dts=(0.4, 0.2, 0.1, 0.05),
              temporal_T=2.0, temporal_ref_dt=0.0125):
    """Observed convergence orders for the manufactured problem.

    The spatial study marches the steady manufactured problem (no temporal
    error by construction) and measures the L2 error against the exact
    fields; the temporal study measures against a small-step reference on
    the same grid, which cancels the spatial error exactly.  Returns a dict
    with ladders, errors and fitted orders.
    """
    mms = mms or default_manufactured_solution(3000.0)
    mms.check_compatibility()

    from dataclasses import replace as dc_replace
    mms_steady = dc_replace(mms, steady=True)
    spatial_errors = []
    for n_el in spatial_nels:
        space, state = _run_mms(params, mms_steady, n_el, spatial_dt, spatial_T)
        spatial_errors.append(_l2_error(space, state.phi, mms_steady.phi, spatial_T))
    hs = [mms.L / n for n in spatial_nels]
    spatial_order = fit_order(hs, spatial_errors)

    _, ref_state = _run_mms(params, mms, temporal_nel, temporal_ref_dt, temporal_T)
    ref = ref_state.pack()
    temporal_errors = []
    from .splines import SplineSpace2D
    space_t = SplineSpace2D(mms.L, temporal_nel)
    M = space_t.mass_matrix()
    for dt in temporal_dts:
        _, state = _run_mms(params, mms, temporal_nel, dt, temporal_T)
        d = state.phi - ref[:space_t.n_dofs]
        temporal_errors.append(float(np.sqrt(d @ (M @ d))))
    temporal_order = fit_order(temporal_dts, temporal_errors)

    return {
        "spatial_nels": list(spatial_nels), "spatial_errors": spatial_errors,
        "spatial_order": spatial_order,
        "temporal_dts": list(temporal_dts), "temporal_errors": temporal_errors,
        "temporal_order": temporal_order,
    }


# -- continuous dependence -------------------------------------------------------------

def continuous_dependence_probe(scenario, deltas=(1e-2, 1e-3, 1e-4), horizon=10.0,
                                perturb="phi0"):
    """Growth ratios of solution differences under data perturbations.

    Perturbs the initial phase field (mode ``phi0``) or the cytotoxic drug
    level (mode ``u``) and reports sup_t ||dphi(t)|| / ||perturbation||; in
    the linearized regime the ratio is independent of the perturbation size.
    """
    from .scenarios import initial_state
    from .assembly import GalerkinSystem, SystemState
    from .splines import SplineSpace2D, l2_project
    from .timestepping import run_simulation

    space = SplineSpace2D(scenario.L, scenario.n_el)
    system = GalerkinSystem(space, scenario.params)
    M = space.mass_matrix()
    state0 = initial_state(scenario, space, system)
    alpha, controls = scenario.alpha(), scenario.controls()
    u_fn, s_fn = scenario.drug_functions()
    obs = np.arange(0.0, horizon + 1e-9, 1.0)

    def march(state, u_func):
        series = []
        run_simulation(system, state.copy(), alpha, controls, horizon,
                       u_fn=u_func, s_fn=s_fn, observe_times=obs,
                       observer=lambda st, _: series.append(st.phi.copy()))
        return series

    base_series = march(state0, u_fn)

    w = l2_project(space, lambda X, Y: np.sin(np.pi * X / scenario.L)
                   * np.sin(np.pi * Y / scenario.L))
    w[space.boundary_mask] = 0.0
    w = w / np.sqrt(w @ (M @ w))

    ratios = {}
    for delta in deltas:
        if perturb == "phi0":
            pert_state = state0.copy()
            pert_state.phi = state0.phi + delta * w
            U0 = pert_state.pack()
            Ud0 = system.consistent_derivatives(U0, 0.0, u=u_fn(0.0) if u_fn else 0.0,
                                                s=s_fn(0.0) if s_fn else 0.0)
            pert_state = SystemState.from_packed(0.0, U0, Ud0)
            pert_series = march(pert_state, u_fn)
            denom = delta
        elif perturb == "u":
            base_u = u_fn or (lambda t: 0.0)
            pert_series = march(state0, lambda t: base_u(t) + delta)
            # || delta u ||_{L2(0,T;H)} for a constant shift
            denom = delta * np.sqrt(horizon) * scenario.L
        else:
            raise ValueError(f"unknown perturbation mode {perturb!r}")
        sup = 0.0
        for phi_b, phi_p in zip(base_series, pert_series):
            d = phi_p - phi_b
            sup = max(sup, float(np.sqrt(d @ (M @ d))))
        if denom == 0.0:
            ratios[delta] = 0.0 if sup == 0.0 else float("inf")
        else:
            ratios[delta] = sup / denom
    return ratios
