import numpy as np
import pytest

from pcasim.assembly import AssemblyError, GalerkinSystem, SystemState
from pcasim.verification import OracleDiscretization, oracle_residual

from conftest import healthy_state


def random_state_vectors(system, rng, scale=0.5):
    n = system.n
    U = np.concatenate([rng.uniform(0.0, 1.0, n) * scale,
                        rng.uniform(0.1, 1.2, n),
                        rng.uniform(0.0, 0.6, n)])
    U[system.boundary] = 0.0
    Ud = rng.normal(0.0, 0.05, 3 * n)
    Ud[system.boundary] = 0.0
    return U, Ud


class TestResidual:
    def test_healthy_equilibrium_annihilates(self, system8, mild):
        st = healthy_state(system8.space, mild)
        R = system8.residual(st.pack(), st.pack_dot(), 0.0)
        assert np.abs(R).max() < 1e-10

    def test_constant_sigma_rate_is_mass_action(self, system8, mild):
        # phi = 0, sigma constant, sigma_dot = c: each sigma row reduces to
        # (c + gamma_h*sigma - S_h) * int(N_j)
        n = system8.n
        sigma0, c = 1.4, 0.37
        U = np.concatenate([np.zeros(n), np.full(n, sigma0),
                            np.full(n, mild.alpha_h / mild.gamma_p)])
        Ud = np.concatenate([np.zeros(n), np.full(n, c), np.zeros(n)])
        R = system8.residual(U, Ud, 0.0)
        expected = (c + mild.gamma_h * sigma0 - mild.S_h) * system8.basis_integrals
        assert np.allclose(R[system8.slices["sigma"]], expected, rtol=1e-12, atol=1e-12)

    def test_matches_independent_oracle(self, system4, mild, rng):
        # same discretization assembled through scipy splines and dense tables
        disc = OracleDiscretization(3000.0, 4)
        for _ in range(5):
            U, Ud = random_state_vectors(system4, rng)
            u, s = rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.5)
            mine = system4.residual(U, Ud, 1.0, u=u, s=s)
            ref = oracle_residual(disc, mild, U, Ud, 1.0, u=u, s=s)
            scale = np.abs(ref).max()
            assert np.abs(mine - ref).max() < 1e-10 * max(scale, 1.0)

    def test_additive_over_element_partition(self, system4, rng):
        U, Ud = random_state_vectors(system4, rng)
        full = system4.residual(U, Ud, 0.0, u=0.2, s=0.1)
        n_el = system4.space.n_el
        labels = rng.integers(0, 3, size=(n_el, n_el))
        total = np.zeros_like(full)
        for k in range(3):
            total += system4.residual(U, Ud, 0.0, u=0.2, s=0.1,
                                      element_mask=(labels == k))
        # constraint rows are replaced, not accumulated, in every call
        interior = np.ones(3 * system4.n, dtype=bool)
        interior[system4.boundary] = False
        scale = np.abs(full).max()
        assert np.abs((total - full)[interior]).max() < 1e-9 * scale
        assert np.allclose(total[system4.boundary], 3 * full[system4.boundary])

    def test_quadrature_and_fast_paths_agree(self, system8, rng):
        U, Ud = random_state_vectors(system8, rng)
        fast = system8.residual(U, Ud, 0.0, u=0.3, s=0.2)
        slow = system8.residual(U, Ud, 0.0, u=0.3, s=0.2,
                                element_mask=np.ones((8, 8), dtype=bool))
        assert np.abs(fast - slow).max() < 1e-9 * np.abs(fast).max()

    def test_discrete_divergence_theorem(self, system8, mild, rng):
        # summing the sigma rows kills the diffusion term: the total equals
        # the plain quadrature integral of the reaction + rate integrand
        U, Ud = random_state_vectors(system8, rng)
        R = system8.residual(U, Ud, 0.0, u=0.0, s=0.15)
        total = R[system8.slices["sigma"]].sum()
        space = system8.space
        from pcasim.model import nutrient_reaction
        phi_q = space.eval_coef_grid(U[system8.slices["phi"]])
        sig_q = space.eval_coef_grid(U[system8.slices["sigma"]])
        sigd_q = space.eval_coef_grid(Ud[system8.slices["sigma"]])
        integrand = sigd_q - nutrient_reaction(phi_q, sig_q, 0.15, mild)
        ref = (space.quad_weights_2d() * integrand).sum()
        assert total == pytest.approx(ref, rel=1e-10, abs=1e-10 * abs(ref) + 1e-8)

    def test_dirichlet_rows_carry_constraint(self, system4, rng):
        U, Ud = random_state_vectors(system4, rng)
        U[system4.boundary] = 0.123   # deliberately inconsistent state
        R = system4.residual(U, Ud, 0.0)
        assert np.allclose(R[system4.boundary], 0.123)

    def test_nonfinite_state_aborts_with_element(self, system4, rng):
        U, Ud = random_state_vectors(system4, rng)
        U[system4.n // 2] = np.nan
        with pytest.raises(AssemblyError) as err:
            system4.residual(U, Ud, 0.0)
        assert err.value.element is not None

    def test_spatially_varying_drug_fields(self, system4, mild, rng):
        # arrays over the quadrature grid are accepted for u and s
        U, Ud = random_state_vectors(system4, rng)
        shape = (4, 4, 3, 3)
        u_field = rng.uniform(0.0, 1.0, shape)
        s_field = rng.uniform(0.0, 0.4, shape)
        R = system4.residual(U, Ud, 0.0, u=u_field, s=s_field)
        assert np.all(np.isfinite(R))
        # constant arrays reduce to the scalar path
        R_arr = system4.residual(U, Ud, 0.0, u=np.full(shape, 0.3), s=np.full(shape, 0.2))
        R_scal = system4.residual(U, Ud, 0.0, u=0.3, s=0.2)
        assert np.abs(R_arr - R_scal).max() < 1e-9 * np.abs(R_scal).max()


class TestJacobian:
    def test_matvec_matches_directional_difference(self, system8, rng):
        alpha_m, alpha_f, gamma, dt = 5.0 / 6.0, 2.0 / 3.0, 2.0 / 3.0, 0.1
        c = alpha_f * gamma * dt
        Un, Udn = random_state_vectors(system8, rng)
        u, s = 0.3, 0.2

        def stage(x):
            U_new = Un + dt * Udn + gamma * dt * (x - Udn)
            return Un + alpha_f * (U_new - Un), Udn + alpha_m * (x - Udn)

        def res(x):
            Us, Uds = stage(x)
            return system8.residual(Us, Uds, 0.0, u=u, s=s)

        x0 = rng.normal(0.0, 0.05, 3 * system8.n)
        x0[system8.boundary] = 0.0
        Us, _ = stage(x0)
        J = system8.jacobian(Us, 0.0, alpha_m, c, u=u, s=s)
        v = rng.normal(0.0, 1.0, 3 * system8.n)
        v[system8.boundary] = 0.0
        best = np.inf
        for eps in (1e-5, 5e-6):
            fd = (res(x0 + eps * v) - res(x0 - eps * v)) / (2 * eps)
            mask = np.ones(3 * system8.n, dtype=bool)
            mask[system8.boundary] = False
            err = np.abs((J @ v - fd)[mask]).max() / np.abs(J @ v).max()
            best = min(best, err)
        assert best < 1e-5

    def test_frozen_phi_block_matches_hand_assembly(self, system4, mild):
        # with phi = 0 the phase block linearization is
        # alpha_m M + c (lam K + 2 f(0, sigma, u) M-weighted term)
        from pcasim.model import double_well_deriv_dphi
        n = system4.n
        sigma0, u = 0.9, 0.4
        U = np.concatenate([np.zeros(n), np.full(n, sigma0), np.zeros(n)])
        alpha_m, c = 5.0 / 6.0, 2.0 / 3.0 * 2.0 / 3.0 * 0.1
        J = system4.jacobian(U, 0.0, alpha_m, c, u=u).toarray()
        coef = float(double_well_deriv_dphi(0.0, sigma0, u, mild))
        M = system4.mass.toarray()
        K = system4.stiffness.toarray()
        expected = alpha_m * M + c * (mild.lam * K + coef * M)
        # impose the same constraint convention
        bnd = system4.boundary
        expected[bnd, :] = 0.0
        expected[:, bnd] = 0.0
        expected[bnd, bnd] = 1.0
        got = J[:n, :n]
        assert np.abs(got - expected).max() < 1e-9 * np.abs(expected).max()

    def test_dirichlet_rows_unit_diagonal(self, system4, rng):
        U, _ = random_state_vectors(system4, rng)
        J = system4.jacobian(U, 0.0, 5.0 / 6.0, 0.05, u=0.1, s=0.1)
        for i in system4.boundary[:10]:
            row = J.getrow(int(i)).toarray().ravel()
            assert row[i] == 1.0
            row[i] = 0.0
            assert np.abs(row).max() == 0.0

    def test_sparsity_follows_support_overlap(self, system4):
        indptr, indices, _ = system4.space.scalar_pattern()
        n1d = system4.space.n1d
        for row in range(system4.n):
            ix, iy = divmod(row, n1d)
            cols = indices[indptr[row]:indptr[row + 1]]
            jx, jy = np.divmod(cols, n1d)
            assert np.all(np.abs(jx - ix) <= 2)
            assert np.all(np.abs(jy - iy) <= 2)
            # and the full overlap stencil is present
            expected = sum(1 for ax in range(n1d) for ay in range(n1d)
                           if abs(ax - ix) <= 2 and abs(ay - iy) <= 2
                           and _share_element(ix, ax, 4) and _share_element(iy, ay, 4))
            assert cols.size == expected

    def test_psa_blocks_are_zero_where_specified(self, system4, rng):
        # no coupling of phi or sigma rows to p, none of p rows to sigma
        U, _ = random_state_vectors(system4, rng)
        J = system4.jacobian(U, 0.0, 5.0 / 6.0, 0.05, u=0.2, s=0.1)
        n = system4.n
        dense = J.toarray()
        assert np.abs(dense[:n, 2 * n:]).max() == 0.0
        assert np.abs(dense[n:2 * n, 2 * n:]).max() == 0.0
        assert np.abs(dense[2 * n:, n:2 * n]).max() == 0.0


def _share_element(i, j, n_el):
    lo_i, hi_i = max(0, i - 2), min(n_el - 1, i)
    lo_j, hi_j = max(0, j - 2), min(n_el - 1, j)
    return max(lo_i, lo_j) <= min(hi_i, hi_j)


class TestConsistentInitialization:
    def test_mass_balance(self, system8, mild, rng):
        n = system8.n
        U0 = np.concatenate([rng.uniform(0.0, 0.8, n), rng.uniform(0.3, 1.1, n),
                             rng.uniform(0.0, 0.3, n)])
        U0[system8.boundary] = 0.0
        Ud0 = system8.consistent_derivatives(U0, 0.0, u=0.1, s=0.05)
        R_sp = system8.residual(U0, np.zeros(3 * n), 0.0, u=0.1, s=0.05)
        interior = np.ones(3 * n, dtype=bool)
        interior[system8.boundary] = False
        scale = np.abs(R_sp).max()
        for name in ("phi", "sigma", "p"):
            sl = system8.slices[name]
            defect = system8.mass @ Ud0[sl] + R_sp[sl]
            mask = interior[sl]
            assert np.abs(defect[mask]).max() < 1e-10 * max(scale, 1.0)
        assert np.abs(Ud0[system8.boundary]).max() == 0.0

    def test_healthy_equilibrium_gives_zero_rates(self, system8, mild):
        st = healthy_state(system8.space, mild)
        Ud0 = system8.consistent_derivatives(st.pack(), 0.0)
        assert np.abs(Ud0).max() < 1e-10


class TestSystemState:
    def test_pack_unpack_roundtrip(self, system4, rng):
        U, Ud = random_state_vectors(system4, rng)
        st = SystemState.from_packed(2.5, U, Ud)
        assert np.array_equal(st.pack(), U)
        assert np.array_equal(st.pack_dot(), Ud)
        assert st.t == 2.5

    def test_copy_is_independent(self, system4, rng):
        U, Ud = random_state_vectors(system4, rng)
        st = SystemState.from_packed(0.0, U, Ud)
        other = st.copy()
        other.phi[0] = 99.0
        assert st.phi[0] != 99.0
