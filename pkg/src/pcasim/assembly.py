"""Galerkin residuals and the analytic Jacobian of the coupled system.

The three fields share one scalar spline space; their coefficient vectors are
stored blocked (phase, nutrient, PSA) in one monolithic system so the
diagonal preconditioner keeps an obvious block meaning.  Mass and stiffness
contributions reuse precomputed scalar matrices; only the nonlinear reaction
terms are re-integrated per call.  Homogeneous Dirichlet conditions on the
phase field are imposed strongly: constrained residual rows carry the
constraint value itself and the matching Jacobian rows/columns are unit
diagonal / zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import model

__all__ = ["SystemState", "GalerkinSystem", "AssemblyError", "FIELDS"]

FIELDS = ("phi", "sigma", "p")


class AssemblyError(RuntimeError):
    """Non-finite values encountered during quadrature."""

    def __init__(self, element, message):
        super().__init__(message)
        self.element = element


@dataclass
class SystemState:
    """Coefficient vectors of the three fields and their time derivatives."""

    t: float
    phi: np.ndarray
    sigma: np.ndarray
    p: np.ndarray
    phi_dot: np.ndarray
    sigma_dot: np.ndarray
    p_dot: np.ndarray

    def pack(self):
        return np.concatenate([self.phi, self.sigma, self.p])

    def pack_dot(self):
        return np.concatenate([self.phi_dot, self.sigma_dot, self.p_dot])

    def copy(self):
        return SystemState(self.t, self.phi.copy(), self.sigma.copy(), self.p.copy(),
                           self.phi_dot.copy(), self.sigma_dot.copy(), self.p_dot.copy())

    @classmethod
    def from_packed(cls, t, U, Ud):
        n = U.size // 3
        return cls(t, U[:n].copy(), U[n:2 * n].copy(), U[2 * n:].copy(),
                   Ud[:n].copy(), Ud[n:2 * n].copy(), Ud[2 * n:].copy())


class GalerkinSystem:
    """Assembles residual vectors and Jacobians on a given spline space."""

    def __init__(self, space, params):
        self.space = space
        self.params = params
        n = space.n_dofs
        self.n = n
        self.slices = {"phi": slice(0, n), "sigma": slice(n, 2 * n), "p": slice(2 * n, 3 * n)}
        self.boundary = np.flatnonzero(space.boundary_mask)

        indptr_s, indices_s, _ = space.scalar_pattern()
        ones = np.ones((space.n_el, space.n_el,
                        space.quadrature.n_points, space.quadrature.n_points))
        self.mass_data = space.assemble_scalar(space.element_matrices(ones))
        exx = space.element_matrices(ones, test_deriv=("x", None), trial_deriv=("x", None))
        eyy = space.element_matrices(ones, test_deriv=(None, "y"), trial_deriv=(None, "y"))
        self.stiff_data = space.assemble_scalar(exx + eyy)
        self.mass = space.scalar_csr(self.mass_data)
        self.stiffness = space.scalar_csr(self.stiff_data)
        self.basis_integrals = self.mass @ np.ones(n)   # int N_j dx
        # natural magnitude of residual entries; Newton's absolute floor is
        # expressed in these units (roundoff sits far above machine epsilon)
        self.newton_floor_scale = float(np.linalg.norm(self.mass.diagonal()))

        self._build_monolithic_pattern(indptr_s, indices_s)

    # -- monolithic pattern -----------------------------------------------------

    def _build_monolithic_pattern(self, indptr_s, indices_s):
        n = self.n
        nnz_s = indices_s.size
        row_len = np.diff(indptr_s)
        row_of = np.repeat(np.arange(n), row_len)
        offset = np.arange(nnz_s) - indptr_s[row_of]

        # every block row holds two scalar blocks: (phi,phi)+(phi,sigma),
        # (sigma,phi)+(sigma,sigma), (p,phi)+(p,p)
        mono_len = np.tile(2 * row_len, 3)
        indptr = np.concatenate([[0], np.cumsum(mono_len)])
        self.block_pos = {}
        first = {
            "phi": indptr[row_of],
            "sigma": indptr[n + row_of],
            "p": indptr[2 * n + row_of],
        }
        self.block_pos[("phi", "phi")] = first["phi"] + offset
        self.block_pos[("phi", "sigma")] = first["phi"] + row_len[row_of] + offset
        self.block_pos[("sigma", "phi")] = first["sigma"] + offset
        self.block_pos[("sigma", "sigma")] = first["sigma"] + row_len[row_of] + offset
        self.block_pos[("p", "phi")] = first["p"] + offset
        self.block_pos[("p", "p")] = first["p"] + row_len[row_of] + offset

        nnz = int(indptr[-1])
        indices = np.empty(nnz, dtype=np.int32)
        col_shift = {"phi": 0, "sigma": n, "p": 2 * n}
        for (rf, cf), pos in self.block_pos.items():
            indices[pos] = indices_s + col_shift[cf]
        self.mono_indptr = indptr.astype(np.int64)
        self.mono_indices = indices

        # Dirichlet bookkeeping: kill whole phase rows plus phase columns in
        # every block, then restore a unit diagonal on the constrained rows.
        bnd_mask = self.space.boundary_mask
        kill = np.zeros(nnz, dtype=bool)
        for r in self.boundary:
            kill[indptr[r]:indptr[r + 1]] = True
        col_is_bnd = bnd_mask[indices_s]
        for rf in FIELDS:
            kill[self.block_pos[(rf, "phi")][col_is_bnd]] = True
        self.kill_idx = np.flatnonzero(kill)

        diag_slot_s = np.empty(n, dtype=np.int64)
        for r in self.boundary:
            lo, hi = indptr_s[r], indptr_s[r + 1]
            diag_slot_s[r] = lo + np.searchsorted(indices_s[lo:hi], r)
        self.diag_idx = self.block_pos[("phi", "phi")][diag_slot_s[self.boundary]]

        row_is_bnd = bnd_mask[row_of]
        self._scalar_kill = np.flatnonzero(row_is_bnd | col_is_bnd)
        self._scalar_bnd_diag = diag_slot_s[self.boundary]
        self._mass_constrained = None

    # -- field evaluation ---------------------------------------------------------

    def unpack(self, U):
        return U[self.slices["phi"]], U[self.slices["sigma"]], U[self.slices["p"]]

    # -- residual -----------------------------------------------------------------

    def residual(self, U, Ud, t, u=0.0, s=0.0, forcing=None, element_mask=None):
        """Galerkin residual at stage values (U, Ud) and stage time t.

        ``u`` and ``s`` are the drug levels, scalars or arrays over the
        quadrature grid.  ``forcing`` is an optional triple of callables
        (X, Y, t) -> array subtracted from each equation (manufactured
        solutions).  With ``element_mask`` the residual is assembled by
        quadrature over the selected elements only.
        """
        if element_mask is not None:
            return self._residual_quadrature(U, Ud, t, u, s, forcing, element_mask)
        pr = self.params
        sc = self.space
        phi_c, sig_c, p_c = self.unpack(U)
        phid_c, sigd_c, pd_c = self.unpack(Ud)

        phi_q = sc.eval_coef_grid(phi_c)
        sig_q = sc.eval_coef_grid(sig_c)
        W = sc.quad_weights_2d()

        reac_phi = model.double_well_deriv(phi_q, sig_q, u, pr)
        R_phi = self.mass @ phid_c + pr.lam * (self.stiffness @ phi_c) \
            + sc.accumulate_load(reac_phi * W)

        # sigma: gamma_h*sigma and the constant/linear supply terms are exact
        # matrix products; the phi*sigma product and a non-uniform s need
        # quadrature.
        S_ch = pr.S_c - pr.S_h
        gamma_ch = pr.gamma_c - pr.gamma_h
        R_sig = self.mass @ sigd_c + pr.eta * (self.stiffness @ sig_c) \
            + pr.gamma_h * (self.mass @ sig_c) \
            - pr.S_h * self.basis_integrals \
            - S_ch * (self.mass @ phi_c) \
            + gamma_ch * sc.accumulate_load(phi_q * sig_q * W)
        if np.ndim(s) == 0:
            R_sig += float(s) * (self.mass @ phi_c)
        else:
            R_sig += sc.accumulate_load(np.asarray(s) * phi_q * W)

        alpha_ch = pr.alpha_c - pr.alpha_h
        R_p = self.mass @ pd_c + pr.D_psa * (self.stiffness @ p_c) \
            + pr.gamma_p * (self.mass @ p_c) \
            - pr.alpha_h * self.basis_integrals \
            - alpha_ch * (self.mass @ phi_c)

        if forcing is not None:
            X, Y = sc.quad_points_2d()
            blocks = [R_phi, R_sig, R_p]
            for i, g in enumerate(forcing):
                if g is not None:
                    blocks[i] = blocks[i] - sc.accumulate_load(np.asarray(g(X, Y, t)) * W)
            R_phi, R_sig, R_p = blocks

        R = np.concatenate([R_phi, R_sig, R_p])
        R[self.boundary] = phi_c[self.boundary]   # constraint residual (phi_j - 0)
        if not np.all(np.isfinite(R)):
            self._raise_nonfinite(phi_q, sig_q)
        return R

    def _residual_quadrature(self, U, Ud, t, u, s, forcing, element_mask):
        """Pure quadrature path over a subset of elements (testing aid)."""
        pr = self.params
        sc = self.space
        phi_c, sig_c, p_c = self.unpack(U)
        phid_c, sigd_c, pd_c = self.unpack(Ud)
        W = sc.quad_weights_2d() * np.asarray(element_mask, dtype=float)[:, :, None, None]

        fields = {}
        for name, c in (("phi", phi_c), ("sigma", sig_c), ("p", p_c)):
            fields[name] = sc.eval_coef_grid(c)
            fields[name + "_x"] = sc.eval_coef_grid(c, deriv="x")
            fields[name + "_y"] = sc.eval_coef_grid(c, deriv="y")
        phid_q = sc.eval_coef_grid(phid_c)
        sigd_q = sc.eval_coef_grid(sigd_c)
        pd_q = sc.eval_coef_grid(pd_c)

        def diffused(coef, name):
            return coef * (sc.accumulate_load(W * fields[name + "_x"], deriv="x")
                           + sc.accumulate_load(W * fields[name + "_y"], deriv="y"))

        reac_phi = model.double_well_deriv(fields["phi"], fields["sigma"], u, pr)
        R_phi = sc.accumulate_load(W * (phid_q + reac_phi)) + diffused(pr.lam, "phi")
        reac_sig = -model.nutrient_reaction(fields["phi"], fields["sigma"], s, pr)
        R_sig = sc.accumulate_load(W * (sigd_q + reac_sig)) + diffused(pr.eta, "sigma")
        reac_p = -model.psa_reaction(fields["phi"], fields["p"], pr)
        R_p = sc.accumulate_load(W * (pd_q + reac_p)) + diffused(pr.D_psa, "p")

        if forcing is not None:
            X, Y = sc.quad_points_2d()
            blocks = [R_phi, R_sig, R_p]
            for i, g in enumerate(forcing):
                if g is not None:
                    blocks[i] = blocks[i] - sc.accumulate_load(np.asarray(g(X, Y, t)) * W)
            R_phi, R_sig, R_p = blocks

        R = np.concatenate([R_phi, R_sig, R_p])
        R[self.boundary] = phi_c[self.boundary]
        return R

    def _raise_nonfinite(self, phi_q, sig_q):
        bad = ~np.isfinite(phi_q).all(axis=(2, 3)) | ~np.isfinite(sig_q).all(axis=(2, 3))
        if bad.any():
            ex, ey = np.argwhere(bad)[0]
            raise AssemblyError((int(ex), int(ey)),
                                f"non-finite quadrature values in element ({ex}, {ey})")
        raise AssemblyError(None, "non-finite residual entries")

    # -- Jacobian ------------------------------------------------------------------

    def jacobian(self, U, t, alpha_m, stage_coef, u=0.0, s=0.0):
        """d(residual)/d(Udot_next) for the generalized-alpha update map.

        ``alpha_m`` multiplies the mass terms, ``stage_coef`` = alpha_f *
        gamma * dt multiplies the stiffness and reaction linearizations.
        Returns the monolithic CSR matrix with Dirichlet rows/columns set to
        identity/zero.
        """
        pr = self.params
        sc = self.space
        phi_c, sig_c, _ = self.unpack(U)
        phi_q = sc.eval_coef_grid(phi_c)
        sig_q = sc.eval_coef_grid(sig_c)

        dphi = model.double_well_deriv_dphi(phi_q, sig_q, u, pr)
        dsig = model.double_well_deriv_dsigma(phi_q, sig_q, pr)
        S_ch = pr.S_c - pr.S_h
        gamma_ch = pr.gamma_c - pr.gamma_h
        alpha_ch = pr.alpha_c - pr.alpha_h

        w_phiphi = sc.assemble_pairs(sc.weighted_mass_elements(dphi))
        w_phisig = sc.assemble_pairs(sc.weighted_mass_elements(dsig))
        coef_sigphi = gamma_ch * sig_q - S_ch + (s if np.ndim(s) == 0 else np.asarray(s))
        w_sigphi = sc.assemble_pairs(sc.weighted_mass_elements(coef_sigphi))
        w_sigsig = sc.assemble_pairs(sc.weighted_mass_elements(gamma_ch * phi_q))

        am, c = alpha_m, stage_coef
        data = np.empty(self.mono_indices.size)
        data[self.block_pos[("phi", "phi")]] = am * self.mass_data \
            + c * (pr.lam * self.stiff_data + w_phiphi)
        data[self.block_pos[("phi", "sigma")]] = c * w_phisig
        data[self.block_pos[("sigma", "phi")]] = c * w_sigphi
        data[self.block_pos[("sigma", "sigma")]] = am * self.mass_data \
            + c * (pr.eta * self.stiff_data + pr.gamma_h * self.mass_data + w_sigsig)
        data[self.block_pos[("p", "phi")]] = -c * alpha_ch * self.mass_data
        data[self.block_pos[("p", "p")]] = am * self.mass_data \
            + c * (pr.D_psa * self.stiff_data + pr.gamma_p * self.mass_data)

        data[self.kill_idx] = 0.0
        data[self.diag_idx] = 1.0
        return sp.csr_matrix((data, self.mono_indices, self.mono_indptr),
                             shape=(3 * self.n, 3 * self.n))

    # -- consistent initialization ---------------------------------------------------

    def constrained_mass(self):
        """Scalar mass matrix with Dirichlet rows/columns replaced by identity."""
        if self._mass_constrained is None:
            data = self.mass_data.copy()
            data[self._scalar_kill] = 0.0
            data[self._scalar_bnd_diag] = 1.0
            self._mass_constrained = self.space.scalar_csr(data)
        return self._mass_constrained

    def consistent_derivatives(self, U0, t, u=0.0, s=0.0, forcing=None, rtol=1e-12):
        """Initial time derivatives solving M Udot = -R_spatial(U0).

        Avoids the first-step order reduction of a zero initial derivative.
        Phase-field boundary entries stay exactly zero.
        """
        from .linsolve import GmresControls, gmres_solve, jacobi_preconditioner

        R = self.residual(U0, np.zeros_like(U0), t, u=u, s=s, forcing=forcing)
        controls = GmresControls(tolerance=rtol, max_iterations=2000, restart=None)
        Ud = np.zeros_like(U0)
        for name in FIELDS:
            sl = self.slices[name]
            rhs = -R[sl].copy()
            M = self.mass
            if name == "phi":
                rhs[self.boundary] = 0.0
                M = self.constrained_mass()
            res = gmres_solve(M, rhs, preconditioner=jacobi_preconditioner(M), controls=controls)
            if not res.converged:
                raise RuntimeError(f"consistent-initialization mass solve failed for {name}")
            Ud[sl] = res.x
        return Ud
