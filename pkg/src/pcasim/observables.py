"""Scalar outputs and solution-property monitors.

Tumor volume and serum PSA are quadrature integrals of the spline fields;
the bounds monitor evaluates the fields at the quadrature points (coefficient
extremes overestimate the field range) and checks the maximum-principle
envelope; the isoperimetric ratio of the half-level contour quantifies the
round-versus-branched morphology.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TumorVolume",
    "BoundsReport",
    "tumor_volume",
    "serum_psa",
    "psa_ode_residual",
    "bounds_monitor",
    "isoperimetric_ratio",
]

UM2_PER_MM2 = 1.0e6


def field_integral(space, coefs):
    """Exact integral of a spline field (sum of coefficient times basis integral)."""
    w = space.mass_matrix() @ np.ones(space.n_dofs)
    return float(w @ np.asarray(coefs))


@dataclass(frozen=True)
class TumorVolume:
    vc_mm2: float          # diffuse-interface volume, integral of phi
    fraction: float        # vc / domain area
    vh_mm2: float          # complementary healthy volume
    vc_thresholded_mm2: float   # area where phi > 0.5 (secondary definition)


def tumor_volume(space, phi_coefs):
    """Tumor volume as the integral of the phase field (primary definition).

    The thresholded area |{phi > 0.5}| is reported alongside; only the
    integral definition is consistent with the serum PSA balance.
    """
    area_um2 = space.L * space.L
    vc_um2 = field_integral(space, phi_coefs)
    phi_q = space.eval_coef_grid(phi_coefs)
    thresh_um2 = float((space.quad_weights_2d() * (phi_q > 0.5)).sum())
    return TumorVolume(
        vc_mm2=vc_um2 / UM2_PER_MM2,
        fraction=vc_um2 / area_um2,
        vh_mm2=(area_um2 - vc_um2) / UM2_PER_MM2,
        vc_thresholded_mm2=thresh_um2 / UM2_PER_MM2,
    )


def serum_psa(space, p_coefs):
    """Serum PSA: integral of tissue PSA over the domain.

    Returns (raw, mean).  The raw value carries ng/mL/cc * um^2 and is only
    meaningful for trends in this 2D setting; the domain mean (ng/mL/cc) is
    the comparable quantity.
    """
    raw = field_integral(space, p_coefs)
    return raw, raw / (space.L * space.L)


def psa_ode_residual(t, P_s, V_h_um2, V_c_um2, params):
    """Largest defect of the lumped serum-PSA balance along a trajectory.

    Checks |dP_s/dt - (alpha_h V_h + alpha_c V_c - gamma_p P_s)| with a
    centered second-order difference on a uniformly sampled trajectory; the
    identity is implied exactly by the tissue PSA equation under free-flux
    boundaries, so the defect shrinks with the sampling step squared.
    """
    t = np.asarray(t, dtype=float)
    if t.size < 3:
        raise ValueError("need at least 3 samples to form a centered difference")
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=1e-8, atol=1e-12):
        raise ValueError("trajectory must be uniformly sampled")
    dt = steps[0]
    P_s = np.asarray(P_s, dtype=float)
    dPdt = (P_s[2:] - P_s[:-2]) / (2.0 * dt)
    rhs = (params.alpha_h * np.asarray(V_h_um2)[1:-1]
           + params.alpha_c * np.asarray(V_c_um2)[1:-1]
           - params.gamma_p * P_s[1:-1])
    defect = np.abs(dPdt - rhs)
    return float(defect.max()), dPdt


@dataclass(frozen=True)
class BoundsReport:
    min_phi: float
    max_phi: float
    min_sigma: float
    min_p: float
    min_phi_at: tuple
    max_phi_at: tuple
    min_sigma_at: tuple
    min_p_at: tuple
    violations: tuple

    @property
    def ok(self):
        return not self.violations


def bounds_monitor(space, state, phi_tol=0.05, negativity_tol=1e-3):
    """Field extrema at the quadrature points, with violation flags.

    The continuous solution satisfies 0 <= phi <= 1 and sigma, p >= 0; the
    discrete solution may overshoot near interfaces, so violations beyond the
    configured tolerances are flagged (by default warning-level diagnostics,
    never fatal).
    """
    X, Y = space.quad_points_2d()

    def extremum(coefs, take_max=False):
        q = space.eval_coef_grid(coefs)
        idx = np.unravel_index(np.argmax(q) if take_max else np.argmin(q), q.shape)
        return float(q[idx]), (float(X[idx]), float(Y[idx]))

    min_phi, min_phi_at = extremum(state.phi)
    max_phi, max_phi_at = extremum(state.phi, take_max=True)
    min_sigma, min_sigma_at = extremum(state.sigma)
    min_p, min_p_at = extremum(state.p)

    violations = []
    if min_phi < -phi_tol:
        violations.append(("phi below 0", min_phi, min_phi_at))
    if max_phi > 1.0 + phi_tol:
        violations.append(("phi above 1", max_phi, max_phi_at))
    if min_sigma < -negativity_tol:
        violations.append(("sigma negative", min_sigma, min_sigma_at))
    if min_p < -negativity_tol:
        violations.append(("p negative", min_p, min_p_at))
    return BoundsReport(min_phi=min_phi, max_phi=max_phi, min_sigma=min_sigma,
                        min_p=min_p, min_phi_at=min_phi_at, max_phi_at=max_phi_at,
                        min_sigma_at=min_sigma_at, min_p_at=min_p_at,
                        violations=tuple(violations))


def isoperimetric_ratio(space, phi_coefs, level=0.5, points_per_side=None):
    """Isoperimetric ratio 4*pi*A/P^2 of the phi = level contour.

    1 for a disk, decreasing as the shape elongates, branches or fragments.
    Contours are extracted by marching squares from a structured sampling of
    the field.  Returns (q, area_um2, perimeter_um, n_contours); q is NaN
    when no contour exists (vanished or domain-filling tumor).
    """
    from skimage import measure

    npts = points_per_side or (2 * space.n_el + 1)
    grid = np.linspace(0.0, space.L, npts)
    F = space.evaluate_grid(phi_coefs, grid, grid)
    spacing = space.L / (npts - 1)
    contours = measure.find_contours(F, level)
    area = 0.0
    perimeter = 0.0
    n_closed = 0
    for c in contours:
        closed = np.allclose(c[0], c[-1])
        if not closed:
            continue
        xy = c * spacing
        x, y = xy[:, 0], xy[:, 1]
        area += 0.5 * abs(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))
        perimeter += float(np.sum(np.hypot(np.diff(x), np.diff(y))))
        n_closed += 1
    if n_closed == 0 or perimeter == 0.0:
        return float("nan"), 0.0, 0.0, 0
    q = 4.0 * np.pi * area / perimeter**2
    return float(q), float(area), float(perimeter), n_closed
