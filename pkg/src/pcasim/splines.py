"""Tensor-product quadratic B-spline spaces on a square domain.

The domain is [0, L] x [0, L] with an identity geometry map, open (clamped)
uniform knot vectors and one fixed Gauss rule per element, so every basis
quantity reduces to small per-element 1D tables that get combined by tensor
contractions.  The space is immutable after construction and shareable
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linsolve import GmresControls, gmres_solve, jacobi_preconditioner

__all__ = [
    "SplineSpace2D",
    "QuadratureRule",
    "build_space",
    "eval_basis",
    "l2_project",
]


def gauss_legendre(n):
    """Gauss-Legendre points/weights on [-1, 1]; exact to degree 2n-1."""
    return np.polynomial.legendre.leggauss(n)


def open_uniform_knots(L, n_el, degree):
    """Clamped uniform knot vector on [0, L] with n_el spans."""
    interior = np.linspace(0.0, L, n_el + 1)
    return np.concatenate([np.zeros(degree), interior, np.full(degree, L)])


def bspline_basis_1d(knots, degree, x):
    """Values and first derivatives of the active B-splines at x.

    Returns (first, values, derivs) where ``first`` is the global index of
    the first of the degree+1 active functions.  Cox-de Boor recursion with
    zero-guarded denominators for the clamped ends.
    """
    p = degree
    n = len(knots) - p - 1
    span = int(np.searchsorted(knots, x, side="right")) - 1
    span = min(max(span, p), n - 1)

    values = np.zeros(p + 1)
    values[0] = 1.0
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    lower = None
    for j in range(1, p + 1):
        if j == p:
            lower = values[:p].copy()
        left[j] = x - knots[span + 1 - j]
        right[j] = knots[span + j] - x
        saved = 0.0
        for r in range(j):
            denom = right[r + 1] + left[j - r]
            temp = values[r] / denom
            values[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        values[j] = saved

    derivs = np.zeros(p + 1)
    if p > 0:
        # d/dx N_{k,p} = p [ N_{k,p-1}/(t_{k+p}-t_k) - N_{k+1,p-1}/(t_{k+p+1}-t_{k+1}) ]
        for r in range(p + 1):
            k = span - p + r
            acc = 0.0
            if 1 <= r <= p:
                dk = knots[k + p] - knots[k]
                if dk > 0.0:
                    acc += lower[r - 1] / dk
            if r <= p - 1:
                dk1 = knots[k + p + 1] - knots[k + 1]
                if dk1 > 0.0:
                    acc -= lower[r] / dk1
            derivs[r] = p * acc
    return span - p, values, derivs


@dataclass(frozen=True)
class QuadratureRule:
    """Per-element tensor Gauss rule in one direction.

    ``points`` and ``weights`` have shape (n_el, n_points); the weights
    include the element Jacobian h/2 so that weights.sum() == L.
    """

    n_points: int
    points: np.ndarray
    weights: np.ndarray


class SplineSpace2D:
    """Scalar quadratic B-spline space on [0, L]^2 with clamped knots.

    The (n_el + degree)^2 basis functions are indexed by g = ix * n1d + iy.
    Element (ex, ey) spans [ex*h, (ex+1)*h] x [ey*h, (ey+1)*h] and supports
    the nine functions with ix in ex..ex+2, iy in ey..ey+2.
    """

    def __init__(self, L, n_el, degree=2, n_quad=3):
        if n_el < 4:
            raise ValueError("need at least 4 elements per side to host the boundary layer")
        if L <= 0.0:
            raise ValueError("domain side length must be positive")
        if degree != 2:
            raise ValueError("only quadratic splines are supported")
        self.L = float(L)
        self.n_el = int(n_el)
        self.degree = int(degree)
        self.h = self.L / self.n_el
        self.knots = open_uniform_knots(self.L, self.n_el, self.degree)
        self.n1d = self.n_el + self.degree
        self.n_dofs = self.n1d * self.n1d

        self.quadrature = self._build_quadrature(n_quad)
        self.basis_values, self.basis_derivs = self._basis_tables(self.quadrature)
        # precontracted products bv[e,a,q]*bv[e,c,q] used by the fast
        # weighted-mass kernel, laid out (element, point, pair)
        self._pair_table = np.ascontiguousarray(
            np.einsum("eaq,ecq->eqac", self.basis_values, self.basis_values)
            .reshape(self.n_el, n_quad, 9))
        w = self.quadrature.weights
        self._w2 = w[:, None, :, None] * w[None, :, None, :]

        gx = np.arange(self.n_el)[:, None] + np.arange(3)[None, :]     # (n_el, 3)
        self._gx = gx
        grid2 = gx[:, None, :, None] * self.n1d + gx[None, :, None, :]  # (n_el, n_el, 3, 3)
        self._dof_grid = grid2

        mask2d = np.zeros((self.n1d, self.n1d), dtype=bool)
        mask2d[0, :] = mask2d[-1, :] = True
        mask2d[:, 0] = mask2d[:, -1] = True
        self.boundary_mask = mask2d.ravel()

        self._pattern = None
        self._mass = None
        self._stiffness = None

    # -- construction helpers -------------------------------------------------

    def _build_quadrature(self, n_quad):
        xi, wi = gauss_legendre(n_quad)
        lo = self.h * np.arange(self.n_el)
        points = lo[:, None] + self.h * (xi[None, :] + 1.0) / 2.0
        weights = np.broadcast_to(self.h / 2.0 * wi, points.shape).copy()
        return QuadratureRule(n_points=n_quad, points=points, weights=weights)

    def _basis_tables(self, quad):
        """1D values/derivatives of the 3 active functions at the quad points."""
        nq = quad.n_points
        bv = np.zeros((self.n_el, 3, nq))
        bd = np.zeros((self.n_el, 3, nq))
        for e in range(self.n_el):
            for q in range(nq):
                first, vals, ders = bspline_basis_1d(self.knots, self.degree, quad.points[e, q])
                assert first == e
                bv[e, :, q] = vals
                bd[e, :, q] = ders
        return bv, bd

    # -- basic queries ---------------------------------------------------------

    def element_dofs(self, ex, ey):
        """Global ids of the nine functions supported on element (ex, ey)."""
        return self._dof_grid[ex, ey].ravel()

    def quad_weights_2d(self):
        """Quadrature weights per element pair, shape (n_el, n_el, nq, nq)."""
        return self._w2

    def quad_points_2d(self):
        """Physical quadrature coordinates, each of shape (n_el, n_el, nq, nq)."""
        p = self.quadrature.points
        shape = (self.n_el, self.n_el, self.quadrature.n_points, self.quadrature.n_points)
        X = np.broadcast_to(p[:, None, :, None], shape)
        Y = np.broadcast_to(p[None, :, None, :], shape)
        return X, Y

    # -- tensor contractions used by assembly and observables ------------------

    def eval_coef_grid(self, coefs, deriv=None):
        """Evaluate a coefficient vector at all quadrature points.

        ``deriv`` is None for values, 'x' or 'y' for partial derivatives.
        Returns shape (n_el, n_el, nq, nq).
        """
        n, nq = self.n_el, self.quadrature.n_points
        C = np.asarray(coefs).reshape(self.n1d, self.n1d)
        CE = np.lib.stride_tricks.sliding_window_view(C, (3, 3))
        fx = self.basis_derivs if deriv == "x" else self.basis_values
        fy = self.basis_derivs if deriv == "y" else self.basis_values
        # two batched products: contract the local x index, then the local y
        T = np.matmul(CE.transpose(0, 1, 3, 2).reshape(n, n * 3, 3), fx)  # (x, y*b, P)
        T = T.reshape(n, n, 3, nq).transpose(1, 0, 3, 2).reshape(n, n * nq, 3)
        out = np.matmul(T, fy)                                            # (y, x*P, Q)
        return np.ascontiguousarray(out.reshape(n, n, nq, nq).transpose(1, 0, 2, 3))

    def accumulate_load(self, integrand, deriv=None):
        """Galerkin load vector sum_q N_j(q) * integrand(q) (weights included).

        ``integrand`` has shape (n_el, n_el, nq, nq) and must already contain
        the quadrature weights.  The element contributions are added slice by
        slice in a fixed order, so results are bitwise deterministic.
        """
        n, nq = self.n_el, self.quadrature.n_points
        fx = self.basis_derivs if deriv == "x" else self.basis_values
        fy = self.basis_derivs if deriv == "y" else self.basis_values
        T = np.matmul(integrand.transpose(1, 0, 2, 3).reshape(n, n * nq, nq),
                      fy.transpose(0, 2, 1))                              # (y, x*P, b)
        T = T.reshape(n, n, nq, 3).transpose(1, 2, 0, 3).reshape(n, nq, n * 3)
        Re = np.matmul(fx, T).reshape(n, 3, n, 3)                         # (x, a, y, b)
        out = np.zeros((self.n1d, self.n1d))
        for a in range(3):
            for b in range(3):
                out[a:a + self.n_el, b:b + self.n_el] += Re[:, a, :, b]
        return out.ravel()

    def element_matrices(self, coef, test_deriv=(None, None), trial_deriv=(None, None)):
        """Per-element matrices of a weighted scalar product.

        Computes E[x,y,a,b,c,d] = sum_q Dt_x N_(a)(q) Dt_y N_(b)(q) *
        Du_x N_(c)(q) Du_y N_(d)(q) * coef(q) * w(q), where the derivative
        selectors pick value or first derivative per direction.  The
        plain-value case runs through batched matrix products and returns the
        layout (x, a, c, y, b, d); ``weighted_mass_elements`` is its raveled
        companion for assembly.
        """
        pick = lambda d: self.basis_derivs if d else self.basis_values
        tx, ty = pick(test_deriv[0]), pick(test_deriv[1])
        ux, uy = pick(trial_deriv[0]), pick(trial_deriv[1])
        G = coef * self._w2
        H = np.einsum("ybQ,ydQ,xyPQ->xyPbd", ty, uy, G, optimize=True)
        return np.einsum("xaP,xcP,xyPbd->xyabcd", tx, ux, H, optimize=True)

    def weighted_mass_elements(self, coef):
        """Element matrices of int N_(ab) coef N_(cd), layout (x, a, c, y, b, d).

        Fast path for the Jacobian reaction blocks; scatter the result with
        the matching ``pair_slot_map``.
        """
        n, nq = self.n_el, self.quadrature.n_points
        G = coef * self._w2 if coef is not None else self._w2
        Gt = np.ascontiguousarray(G.transpose(1, 0, 2, 3)).reshape(n, n * nq, nq)
        H = np.matmul(Gt, self._pair_table)                               # (y, x*P, bd)
        Ht = H.reshape(n, n, nq, 9).transpose(1, 2, 0, 3).reshape(n, nq, n * 9)
        EM = np.matmul(self._pair_table.transpose(0, 2, 1), Ht)           # (x, ac, y*bd)
        return EM.reshape(n, 3, 3, n, 3, 3)

    # -- global sparse pattern --------------------------------------------------

    def scalar_pattern(self):
        """CSR pattern (indptr, indices) of basis-support overlaps plus the
        map from element-matrix entries to data slots."""
        if self._pattern is None:
            grid2 = self._dof_grid.astype(np.int64)
            rows = grid2[:, :, :, :, None, None]
            cols = grid2[:, :, None, None, :, :]
            keys = (rows * self.n_dofs + cols).ravel()
            uniq, inv = np.unique(keys, return_inverse=True)
            indices = (uniq % self.n_dofs).astype(np.int32)
            row_of = uniq // self.n_dofs
            indptr = np.searchsorted(row_of, np.arange(self.n_dofs + 1)).astype(np.int64)
            slot6 = inv.astype(np.int32)
            self._pattern = (indptr, indices, slot6)

            # same slots for element matrices in the (x, a, c, y, b, d)
            # layout produced by weighted_mass_elements
            gx = self._gx.astype(np.int64)
            rowk = (gx[:, :, None, None, None, None] * self.n1d
                    + gx[None, None, None, :, :, None])
            colk = (gx[:, None, :, None, None, None] * self.n1d
                    + gx[None, None, None, :, None, :])
            keys2 = np.ascontiguousarray(
                np.broadcast_to(rowk * self.n_dofs + colk,
                                (self.n_el, 3, 3, self.n_el, 3, 3))).ravel()
            self._pair_slots = np.searchsorted(uniq, keys2).astype(np.int32)
        return self._pattern

    def assemble_scalar(self, elem_mats):
        """Scatter per-element matrices into CSR data on the scalar pattern."""
        indptr, indices, slot6 = self.scalar_pattern()
        data = np.bincount(slot6, weights=elem_mats.ravel(), minlength=indices.size)
        return data

    def assemble_pairs(self, elem_mats):
        """Scatter (x, a, c, y, b, d)-layout element matrices into CSR data."""
        indptr, indices, _ = self.scalar_pattern()
        return np.bincount(self._pair_slots, weights=elem_mats.ravel(),
                           minlength=indices.size)

    def scalar_csr(self, data):
        import scipy.sparse as sp

        indptr, indices, _ = self.scalar_pattern()
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_dofs, self.n_dofs))

    def mass_matrix(self):
        """Scalar mass matrix int N_i N_j (CSR), cached."""
        if self._mass is None:
            ones = np.ones((self.n_el, self.n_el, self.quadrature.n_points, self.quadrature.n_points))
            data = self.assemble_scalar(self.element_matrices(ones))
            self._mass = self.scalar_csr(data)
        return self._mass

    def stiffness_matrix(self):
        """Scalar stiffness matrix int grad N_i . grad N_j (CSR), cached."""
        if self._stiffness is None:
            ones = np.ones((self.n_el, self.n_el, self.quadrature.n_points, self.quadrature.n_points))
            exx = self.element_matrices(ones, test_deriv=("x", None), trial_deriv=("x", None))
            eyy = self.element_matrices(ones, test_deriv=(None, "y"), trial_deriv=(None, "y"))
            data = self.assemble_scalar(exx + eyy)
            self._stiffness = self.scalar_csr(data)
        return self._stiffness

    # -- pointwise evaluation ----------------------------------------------------

    def collocation_1d(self, points, deriv=False):
        """Dense (n_points, n1d) matrix of 1D basis values (or derivatives)."""
        points = np.atleast_1d(np.asarray(points, dtype=float))
        C = np.zeros((points.size, self.n1d))
        for k, x in enumerate(points):
            first, vals, ders = bspline_basis_1d(self.knots, self.degree, x)
            C[k, first:first + 3] = ders if deriv else vals
        return C

    def evaluate_grid(self, coefs, x1d, y1d):
        """Field values on the structured grid x1d x y1d, shape (nx, ny)."""
        C = np.asarray(coefs).reshape(self.n1d, self.n1d)
        Cx = self.collocation_1d(x1d)
        Cy = self.collocation_1d(y1d)
        return Cx @ C @ Cy.T

    def evaluate(self, coefs, x, y):
        """Field values at scattered physical points (slow path)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        C = np.asarray(coefs).reshape(self.n1d, self.n1d)
        out = np.zeros(np.broadcast(x, y).shape)
        xb, yb = np.broadcast_arrays(x, y)
        for idx in np.ndindex(out.shape):
            fx, vx, _ = bspline_basis_1d(self.knots, self.degree, xb[idx])
            fy, vy, _ = bspline_basis_1d(self.knots, self.degree, yb[idx])
            out[idx] = vx @ C[fx:fx + 3, fy:fy + 3] @ vy
        return out if out.ndim else float(out)


def build_space(L, n_el, degree=2, n_quad=3):
    """Construct a SplineSpace2D; rejects n_el < 4."""
    return SplineSpace2D(L, n_el, degree=degree, n_quad=n_quad)


def eval_basis(space, element, local_coords):
    """Values and gradients of the nine supported functions of one element.

    ``element`` is the flat index ex * n_el + ey, ``local_coords`` an array
    of (xi, eta) pairs in the unit reference element.  Returns (dof ids,
    values, gradients) with shapes (9,), (npts, 9) and (npts, 9, 2); the
    gradients are physical (reference gradients divided by the element size).
    """
    ex, ey = divmod(int(element), space.n_el)
    pts = np.atleast_2d(np.asarray(local_coords, dtype=float))
    ids = space.element_dofs(ex, ey)
    values = np.zeros((pts.shape[0], 9))
    grads = np.zeros((pts.shape[0], 9, 2))
    for k, (xi, eta) in enumerate(pts):
        x = (ex + xi) * space.h
        y = (ey + eta) * space.h
        fx, vx, dx = bspline_basis_1d(space.knots, space.degree, x)
        fy, vy, dy = bspline_basis_1d(space.knots, space.degree, y)
        assert fx == ex and fy == ey
        values[k] = np.outer(vx, vy).ravel()
        grads[k, :, 0] = np.outer(dx, vy).ravel()
        grads[k, :, 1] = np.outer(vx, dy).ravel()
    return ids, values, grads


def l2_project(space, g, rtol=1e-15):
    """L2 projection of a pointwise function onto the spline space.

    ``g`` maps coordinate arrays (X, Y) to values; constants and low-order
    polynomials are reproduced to solver precision.  The mass system is
    solved with diagonally preconditioned GMRES; the tight default tolerance
    may stagnate at the roundoff floor, which is accepted.
    """
    X, Y = space.quad_points_2d()
    rhs_grid = np.asarray(g(X, Y), dtype=float)
    rhs_grid = np.broadcast_to(rhs_grid, X.shape)
    b = space.accumulate_load(rhs_grid * space.quad_weights_2d())
    M = space.mass_matrix()
    controls = GmresControls(tolerance=rtol, max_iterations=400, restart=None)
    result = gmres_solve(M, b, x0=np.zeros_like(b),
                         preconditioner=jacobi_preconditioner(M), controls=controls)
    if not result.converged and result.relative_residual > 1e-12:
        raise RuntimeError(f"mass solve did not converge: {result.iterations} iterations, "
                           f"relative residual {result.relative_residual:.3e}")
    return result.x
