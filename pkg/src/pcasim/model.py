"""Constitutive functions of the tumor growth model.

Everything in here is a pure pointwise function: the double-well chemistry of
the phase field, the nutrient-dependent net proliferation rate, the drug
concentration schedules, and the reaction terms of the nutrient and tissue-PSA
equations.  Units are days, micrometers, g/L (nutrient) and ng/mL/cc (tissue
PSA) throughout; the net proliferation rate and the cytotoxic effect carry
1/day and are combined with the dimensionless phase terms literally, which is
why the double-well condition |net proliferation - cytotoxic effect| < 1/3 is
a plain numeric check in these units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelParameters",
    "TherapySchedule",
    "ValidationCheck",
    "ValidationReport",
    "net_proliferation",
    "net_proliferation_deriv",
    "double_well",
    "double_well_deriv",
    "double_well_deriv_dphi",
    "double_well_deriv_dsigma",
    "nutrient_reaction",
    "psa_reaction",
    "validate_scenario",
]

DOUBLE_WELL_LIMIT = 1.0 / 3.0


@dataclass(frozen=True)
class ModelParameters:
    """Physical constants of the continuous model.

    All rates are per day, diffusivities in um^2/day, nutrient quantities in
    g/L and tissue PSA quantities in ng/mL/cc.  ``sigma_l`` and ``sigma_r``
    are the threshold and width of the proliferation/apoptosis switch; they
    are calibration inputs, not literature values.
    """

    lam: float            # phase-field diffusivity [um^2/day]
    mobility: float       # tumor mobility M [1/day]
    m_ref: float          # net-proliferation scaling [1/day]
    K_rho: float          # proliferation rate [1/day]
    Kbar_rho: float       # proliferation scaling reference [1/day]
    K_A: float            # apoptosis rate [1/day]
    Kbar_A: float         # apoptosis scaling reference [1/day]
    sigma_l: float        # nutrient threshold [g/L]
    sigma_r: float        # nutrient reference width [g/L]
    eta: float            # nutrient diffusivity [um^2/day]
    S_h: float            # nutrient supply, healthy tissue [g/L/day]
    S_c: float            # nutrient supply, tumor tissue [g/L/day]
    gamma_h: float        # nutrient uptake, healthy tissue [1/day]
    gamma_c: float        # nutrient uptake, tumor tissue [1/day]
    D_psa: float          # tissue PSA diffusivity [um^2/day]
    alpha_h: float        # PSA production, healthy tissue [ng/mL/cc/day]
    alpha_c: float        # PSA production, tumor tissue [ng/mL/cc/day]
    gamma_p: float        # PSA decay rate [1/day]

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"model parameter {name!r} must be a finite positive number, got {value}")

    @property
    def rho(self):
        """Proliferation index (dimensionless, positive)."""
        return self.K_rho / self.Kbar_rho

    @property
    def A(self):
        """Apoptosis index (dimensionless, negative)."""
        return -self.K_A / self.Kbar_A

    @property
    def interface_width(self):
        """Diffuse interface width sqrt(lam / mobility) [um]."""
        return np.sqrt(self.lam / self.mobility)

    def double_well_ok(self):
        """True when the untreated tilt stays inside the double-well regime."""
        bound = self.m_ref * max(abs(self.rho), abs(self.A))
        return bound < DOUBLE_WELL_LIMIT


@dataclass(frozen=True, eq=False)
class TherapySchedule:
    """Dose times and pharmacodynamic constants of one drug.

    The drug level at time t is the superposition of one exponentially
    decaying pulse per delivered dose,

        level(t) = sum_i  beta * dose_i * exp(-(t - T_i)/tau) * H(t - T_i),

    with H(0) = 1: a dose takes effect at the delivery instant.  ``beta``
    converts dose units into the model's effect units (1/day for the
    cytotoxic drug, g/L/day for the antiangiogenic one), ``tau`` is the mean
    drug lifetime in days.
    """

    times: np.ndarray     # delivery times [day], strictly increasing
    amounts: np.ndarray   # dose sizes, one per delivery
    beta: float           # effect per unit dose
    tau: float            # mean drug lifetime [day]
    dose_unit: str = field(default="", compare=False)

    def __eq__(self, other):
        if not isinstance(other, TherapySchedule):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.amounts, other.amounts)
                and self.beta == other.beta and self.tau == other.tau)

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        amounts = np.atleast_1d(np.asarray(self.amounts, dtype=float))
        if amounts.size == 1 and times.size > 1:
            amounts = np.full(times.shape, amounts[0])
        if times.shape != amounts.shape:
            raise ValueError("dose times and dose amounts must have matching lengths")
        if times.size == 0:
            raise ValueError("a therapy schedule needs at least one dose")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("dose delivery times must be strictly increasing")
        if np.any(amounts <= 0.0) or self.beta <= 0.0 or self.tau <= 0.0:
            raise ValueError("doses, beta and tau must be strictly positive")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "amounts", amounts)

    @classmethod
    def uniform(cls, first_day, n_doses, interval, dose, beta, tau, dose_unit=""):
        """Equal doses every ``interval`` days starting at ``first_day``."""
        times = first_day + interval * np.arange(n_doses, dtype=float)
        return cls(times=times, amounts=np.full(n_doses, float(dose)),
                   beta=float(beta), tau=float(tau), dose_unit=dose_unit)

    def concentration(self, t):
        """Drug level at time(s) t; zero before the first dose."""
        t = np.asarray(t, dtype=float)
        dt = t[..., None] - self.times
        pulses = np.where(dt >= 0.0, np.exp(np.minimum(-dt / self.tau, 0.0)), 0.0)
        out = self.beta * (pulses * self.amounts).sum(axis=-1)
        return out if out.ndim else float(out)

    def concentration_left_limit(self, t):
        """Drug level just before time t (excludes a dose delivered at t)."""
        t = float(t)
        mask = self.times < t
        if not mask.any():
            return 0.0
        dt = t - self.times[mask]
        return float(self.beta * (self.amounts[mask] * np.exp(-dt / self.tau)).sum())

    def peak_concentration(self, horizon=None):
        """Largest drug level over [0, horizon]; attained at a dose instant."""
        times = self.times if horizon is None else self.times[self.times <= horizon]
        if times.size == 0:
            return 0.0
        return float(np.max(self.concentration(times)))

    def min_concentration(self, horizon):
        """Smallest drug level over [0, horizon].

        The level decays between doses, so the minimum is attained at t=0, at
        the left limit of a dose instant, or at the horizon.
        """
        candidates = [self.concentration(0.0), self.concentration(float(horizon))]
        for ti in self.times[(self.times > 0.0) & (self.times <= horizon)]:
            candidates.append(self.concentration_left_limit(ti))
        return float(min(candidates))


def net_proliferation(sigma, params):
    """Nutrient-dependent net proliferation rate [1/day].

    Interpolates monotonically between the apoptosis index (starvation) and
    the proliferation index (abundance) through an arctan switch centered at
    ``sigma_l`` with width ``sigma_r``.
    """
    rho, A = params.rho, params.A
    shifted = (np.asarray(sigma, dtype=float) - params.sigma_l) / params.sigma_r
    return params.m_ref * ((rho + A) / 2.0 + (rho - A) / np.pi * np.arctan(shifted))


def net_proliferation_deriv(sigma, params):
    """d(net_proliferation)/d(sigma); strictly positive."""
    rho, A = params.rho, params.A
    shifted = (np.asarray(sigma, dtype=float) - params.sigma_l) / params.sigma_r
    return params.m_ref * (rho - A) / (np.pi * params.sigma_r * (1.0 + shifted * shifted))


def _tilt(sigma, u, params):
    # net proliferation minus cytotoxic downregulation, the "tilt" of the well
    return net_proliferation(sigma, params) - params.m_ref * u


def double_well(phi, sigma, u, params):
    """Tilted double-well energy density of the phase field [1/day].

    Sum of the symmetric well M*phi^2*(1-phi)^2 and the tilt term
    -M*phi^2*(3-2*phi) * (net proliferation - cytotoxic effect).  Minima sit
    at phi=0 and phi=1 whenever the tilt magnitude stays below 1/3.
    """
    phi = np.asarray(phi, dtype=float)
    M = params.mobility
    well = M * phi**2 * (1.0 - phi) ** 2
    interp = M * phi**2 * (3.0 - 2.0 * phi)
    return well - interp * _tilt(sigma, u, params)


def double_well_deriv(phi, sigma, u, params):
    """Phase-equation reaction term: d(double_well)/d(phi) [1/day].

    Equals 2*phi*(1-phi) * M*(1 - 2*phi - 3*(net proliferation - cytotoxic
    effect)); vanishes identically at phi=0 and phi=1.
    """
    phi = np.asarray(phi, dtype=float)
    M = params.mobility
    f = M * (1.0 - 2.0 * phi - 3.0 * _tilt(sigma, u, params))
    return 2.0 * phi * (1.0 - phi) * f


def double_well_deriv_dphi(phi, sigma, u, params):
    """Partial of the phase reaction term in phi (Jacobian coefficient)."""
    phi = np.asarray(phi, dtype=float)
    M = params.mobility
    f = M * (1.0 - 2.0 * phi - 3.0 * _tilt(sigma, u, params))
    return 2.0 * (1.0 - 2.0 * phi) * f + 2.0 * phi * (1.0 - phi) * (-2.0 * M)


def double_well_deriv_dsigma(phi, sigma, params):
    """Partial of the phase reaction term in sigma (Jacobian coefficient)."""
    phi = np.asarray(phi, dtype=float)
    return 2.0 * phi * (1.0 - phi) * (-3.0 * params.mobility) * net_proliferation_deriv(sigma, params)


def nutrient_reaction(phi, sigma, s, params):
    """Non-diffusive right-hand side of the nutrient equation [g/L/day].

    Supply S_h in healthy tissue and S_c - s in tumor tissue (s is the
    antiangiogenic supply reduction), minus phase-weighted uptake.
    """
    phi = np.asarray(phi, dtype=float)
    supply = params.S_h * (1.0 - phi) + (params.S_c - s) * phi
    uptake = (params.gamma_h * (1.0 - phi) + params.gamma_c * phi) * sigma
    return supply - uptake


def psa_reaction(phi, p, params):
    """Non-diffusive right-hand side of the tissue PSA equation [ng/mL/cc/day]."""
    phi = np.asarray(phi, dtype=float)
    return params.alpha_h * (1.0 - phi) + params.alpha_c * phi - params.gamma_p * p


@dataclass(frozen=True)
class ValidationCheck:
    name: str
    passed: bool
    detail: str
    violating_time: float | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[ValidationCheck, ...]

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def summary(self):
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            when = "" if c.violating_time is None else f" (first at t={c.violating_time:g} d)"
            lines.append(f"[{status}] {c.name}: {c.detail}{when}")
        return "\n".join(lines)


def validate_scenario(params, cyto=None, anti=None, horizon=365.0):
    """Check the double-well regime and the nutrient-supply bound.

    Verifies that sup |net proliferation - cytotoxic effect| stays below 1/3
    over all nutrient levels and all t in [0, horizon] (extrema occur at dose
    instants), and that the antiangiogenic supply reduction never exceeds the
    tumor supply rate S_c.  Violations are reported, not raised: the solver
    still runs, only the two-phase interpretation is lost.
    """
    checks = []

    m_lo = params.m_ref * params.A       # infimum of the proliferation curve
    m_hi = params.m_ref * params.rho     # supremum
    u_max, u_min, t_peak = 0.0, 0.0, None
    if cyto is not None:
        doses_in = cyto.times[cyto.times <= horizon]
        u_max = cyto.peak_concentration(horizon)
        u_min = cyto.min_concentration(horizon)
        if doses_in.size:
            peaks = cyto.concentration(doses_in)
            t_peak = float(doses_in[int(np.argmax(peaks))])
    tilt_sup = max(
        abs(m_hi - params.m_ref * u_min),
        abs(m_lo - params.m_ref * u_min),
        abs(m_hi - params.m_ref * u_max),
        abs(m_lo - params.m_ref * u_max),
    )
    ok = tilt_sup < DOUBLE_WELL_LIMIT
    checks.append(ValidationCheck(
        name="double-well tilt bound",
        passed=ok,
        detail=f"sup |tilt| = {tilt_sup:.5g} vs limit {DOUBLE_WELL_LIMIT:.5g}",
        violating_time=None if ok else t_peak,
    ))

    if anti is not None:
        doses_in = anti.times[anti.times <= horizon]
        s_max = anti.peak_concentration(horizon)
        ok = s_max <= params.S_c
        t_viol = None
        if not ok and doses_in.size:
            levels = anti.concentration(doses_in)
            over = doses_in[levels > params.S_c]
            t_viol = float(over[0]) if over.size else float(doses_in[int(np.argmax(levels))])
        checks.append(ValidationCheck(
            name="antiangiogenic supply bound",
            passed=ok,
            detail=f"max s = {s_max:.5g} g/L/day vs S_c = {params.S_c:.5g}",
            violating_time=t_viol,
        ))

    return ValidationReport(checks=tuple(checks))
