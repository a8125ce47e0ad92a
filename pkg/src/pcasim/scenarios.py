"""Scenario presets, initial conditions and configuration files.

The catalog covers two tumor classes (mild, aggressive), five nutrient
variants (reference, rich-supply, poor-supply, high-uptake, low-uptake) and
four therapy plans (none, cytotoxic, antiangiogenic, combined), named
"class/variant/plan".  ``sigma_l`` and ``sigma_r`` are calibration values,
not literature data; they carry a provenance marker so downstream reports can
flag them.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import GalerkinSystem, SystemState
from .model import ModelParameters, TherapySchedule, validate_scenario
from .splines import SplineSpace2D, l2_project
from .timestepping import StepControls, alpha_from_rho_inf

__all__ = [
    "Scenario",
    "preset",
    "preset_names",
    "initial_state",
    "setup",
    "write_config",
    "read_config",
    "scenario_to_config_text",
]

TUMOR_CLASSES = {
    "mild": {"K_rho": 0.8e-2, "K_A": 0.7e-2},
    "aggressive": {"K_rho": 1.5e-2, "K_A": 1.37e-2},
}

NUTRIENT_VARIANTS = {
    "reference": {"S_c": 2.75, "gamma_c": 17.0},
    "rich-supply": {"S_c": 3.125, "gamma_c": 17.0},
    "poor-supply": {"S_c": 2.375, "gamma_c": 17.0},
    "high-uptake": {"S_c": 2.75, "gamma_c": 18.0},
    "low-uptake": {"S_c": 2.75, "gamma_c": 16.0},
}

THERAPY_PLANS = ("none", "cytotoxic", "antiangiogenic", "combined")

BASE_PARAMS = {
    "lam": 640.0,
    "mobility": 2.5,
    "m_ref": 7.55e-2,
    "Kbar_rho": 1.5e-2,
    "Kbar_A": 2.1e-2,
    "sigma_l": 0.2,       # calibrated, see Scenario.sigma_provenance
    "sigma_r": 0.05,      # calibrated
    "eta": 6.4e4,
    "S_h": 2.0,
    "gamma_h": 2.0,
    "D_psa": 640.0,
    "alpha_h": 1.712e-2,
    "alpha_c": 15.0 * 1.712e-2,
    "gamma_p": 0.274,
}

CYTOTOXIC = {"first_day": 60.0, "n_doses": 10, "interval": 21.0,
             "dose": 75.0, "beta": 1.59e-2, "tau": 5.0, "dose_unit": "mg/m^2"}
ANTIANGIOGENIC = {"first_day": 60.0, "n_doses": 10, "interval": 21.0,
                  "dose": 15.0, "beta": 0.04, "tau": 30.0, "dose_unit": "mg/kg"}


@dataclass(frozen=True)
class Scenario:
    name: str
    tumor_class: str
    variant: str
    therapy: str
    params: ModelParameters
    cyto: TherapySchedule | None
    anti: TherapySchedule | None
    L: float = 3000.0            # domain side [um]
    n_el: int = 256              # elements per side
    dt: float = 0.1              # time step [day]
    horizon: float = 365.0       # simulated span [day]
    rho_inf: float = 0.5
    a: float = 150.0             # initial ellipse semiaxes [um]
    b: float = 200.0
    c_sigma0: float = 1.0        # initial-field constants
    c_sigma1: float = -0.8
    c_p0: float = 0.0625
    c_p1: float = 0.7975
    newton_tol: float = 1e-3
    newton_max_iter: int = 20
    gmres_tol: float = 1e-3
    gmres_max_iter: int = 500
    gmres_restart: int = 200
    cadence: float = 1.0         # time-series observation spacing [day]
    snapshot_cadence: float = 5.0
    sigma_provenance: str = "calibrated"

    def controls(self):
        return StepControls(dt=self.dt, newton_tol=self.newton_tol,
                            newton_max_iter=self.newton_max_iter,
                            gmres_tol=self.gmres_tol,
                            gmres_max_iter=self.gmres_max_iter,
                            gmres_restart=self.gmres_restart)

    def alpha(self):
        return alpha_from_rho_inf(self.rho_inf)

    def dose_times(self):
        times = []
        for sched in (self.cyto, self.anti):
            if sched is not None:
                times.extend(sched.times.tolist())
        return sorted(set(times))

    def drug_functions(self):
        u_fn = self.cyto.concentration if self.cyto is not None else None
        s_fn = self.anti.concentration if self.anti is not None else None
        return u_fn, s_fn

    def validate(self):
        return validate_scenario(self.params, self.cyto, self.anti, self.horizon)

    def initial_phi(self, X, Y):
        r = np.sqrt((X - self.L / 2) ** 2 / self.a**2 + (Y - self.L / 2) ** 2 / self.b**2)
        return 0.5 - 0.5 * np.tanh(10.0 * (r - 1.0))


def preset_names():
    return [f"{c}/{v}/{t}" for c in TUMOR_CLASSES
            for v in NUTRIENT_VARIANTS for t in THERAPY_PLANS]


def preset(name, **overrides):
    """Scenario from the catalog; overrides replace any Scenario field."""
    parts = name.split("/")
    if len(parts) != 3:
        raise KeyError(f"preset name must be class/variant/plan, got {name!r}")
    tumor_class, variant, therapy = parts
    if tumor_class not in TUMOR_CLASSES:
        raise KeyError(f"unknown tumor class {tumor_class!r}")
    if variant not in NUTRIENT_VARIANTS:
        raise KeyError(f"unknown nutrient variant {variant!r}")
    if therapy not in THERAPY_PLANS:
        raise KeyError(f"unknown therapy plan {therapy!r}")

    params = ModelParameters(**BASE_PARAMS, **TUMOR_CLASSES[tumor_class],
                             **NUTRIENT_VARIANTS[variant])
    cyto = anti = None
    if therapy in ("cytotoxic", "combined"):
        cyto = TherapySchedule.uniform(**CYTOTOXIC)
    if therapy in ("antiangiogenic", "combined"):
        anti = TherapySchedule.uniform(**ANTIANGIOGENIC)
    scenario = Scenario(name=name, tumor_class=tumor_class, variant=variant,
                        therapy=therapy, params=params, cyto=cyto, anti=anti)
    if overrides:
        scenario = replace(scenario, **overrides)
    return scenario


def initial_state(scenario, space, system=None):
    """Project the initial fields and compute consistent time derivatives.

    Phase-field boundary coefficients are zeroed after projection so the
    state satisfies the Dirichlet constraint exactly.
    """
    phi0 = scenario.initial_phi
    Phi = l2_project(space, phi0)
    Phi[space.boundary_mask] = 0.0
    Sigma = l2_project(space, lambda X, Y: scenario.c_sigma0 + scenario.c_sigma1 * phi0(X, Y))
    P = l2_project(space, lambda X, Y: scenario.c_p0 + scenario.c_p1 * phi0(X, Y))
    U0 = np.concatenate([Phi, Sigma, P])
    if system is None:
        system = GalerkinSystem(space, scenario.params)
    u_fn, s_fn = scenario.drug_functions()
    u0 = u_fn(0.0) if u_fn else 0.0
    s0 = s_fn(0.0) if s_fn else 0.0
    Ud0 = system.consistent_derivatives(U0, 0.0, u=u0, s=s0)
    return SystemState.from_packed(0.0, U0, Ud0)


def setup(scenario):
    """Space, system and initial state for a scenario, ready to run."""
    space = SplineSpace2D(scenario.L, scenario.n_el)
    system = GalerkinSystem(space, scenario.params)
    state0 = initial_state(scenario, space, system)
    return space, system, state0


# -- configuration files ----------------------------------------------------------

_MODEL_KEYS = ("lam", "mobility", "m_ref", "K_rho", "Kbar_rho", "K_A", "Kbar_A",
               "sigma_l", "sigma_r", "eta", "S_h", "S_c", "gamma_h", "gamma_c",
               "D_psa", "alpha_h", "alpha_c", "gamma_p")


def _schedule_to_section(cfg, section, sched):
    cfg[section] = {
        "times": ", ".join(repr(float(t)) for t in sched.times),
        "amounts": ", ".join(repr(float(d)) for d in sched.amounts),
        "beta": repr(sched.beta),
        "tau": repr(sched.tau),
        "dose_unit": sched.dose_unit,
    }


def _schedule_from_section(sec):
    return TherapySchedule(
        times=np.array([float(v) for v in sec["times"].split(",")]),
        amounts=np.array([float(v) for v in sec["amounts"].split(",")]),
        beta=float(sec["beta"]),
        tau=float(sec["tau"]),
        dose_unit=sec.get("dose_unit", ""),
    )


def scenario_to_config_text(scenario):
    """Flat INI text carrying every model symbol under exactly one key."""
    cfg = configparser.ConfigParser()
    cfg["scenario"] = {
        "name": scenario.name,
        "tumor_class": scenario.tumor_class,
        "variant": scenario.variant,
        "therapy": scenario.therapy,
        "sigma_provenance": scenario.sigma_provenance,
    }
    cfg["model"] = {k: repr(getattr(scenario.params, k)) for k in _MODEL_KEYS}
    cfg["domain"] = {"L": repr(scenario.L), "n_el": str(scenario.n_el)}
    cfg["time"] = {"dt": repr(scenario.dt), "horizon": repr(scenario.horizon),
                   "rho_inf": repr(scenario.rho_inf)}
    cfg["initial"] = {k: repr(getattr(scenario, k))
                      for k in ("a", "b", "c_sigma0", "c_sigma1", "c_p0", "c_p1")}
    cfg["solver"] = {
        "newton_tol": repr(scenario.newton_tol),
        "newton_max_iter": str(scenario.newton_max_iter),
        "gmres_tol": repr(scenario.gmres_tol),
        "gmres_max_iter": str(scenario.gmres_max_iter),
        "gmres_restart": str(scenario.gmres_restart),
    }
    cfg["output"] = {"cadence": repr(scenario.cadence),
                     "snapshot_cadence": repr(scenario.snapshot_cadence)}
    if scenario.cyto is not None:
        _schedule_to_section(cfg, "therapy.cytotoxic", scenario.cyto)
    if scenario.anti is not None:
        _schedule_to_section(cfg, "therapy.antiangiogenic", scenario.anti)
    buf = io.StringIO()
    cfg.write(buf)
    return buf.getvalue()


def write_config(scenario, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(scenario_to_config_text(scenario))


class ConfigError(ValueError):
    pass


def read_config(path_or_text, is_text=False):
    """Parse a scenario configuration; raises ConfigError with key context."""
    cfg = configparser.ConfigParser()
    try:
        if is_text:
            cfg.read_string(path_or_text)
        else:
            with open(path_or_text) as fh:
                cfg.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from exc

    def need(section, key, conv=float):
        try:
            return conv(cfg[section][key])
        except KeyError as exc:
            raise ConfigError(f"missing [{section}] {key}") from exc
        except ValueError as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {cfg[section][key]!r}") from exc

    try:
        params = ModelParameters(**{k: need("model", k) for k in _MODEL_KEYS})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cyto = anti = None
    if cfg.has_section("therapy.cytotoxic"):
        cyto = _schedule_from_section(cfg["therapy.cytotoxic"])
    if cfg.has_section("therapy.antiangiogenic"):
        anti = _schedule_from_section(cfg["therapy.antiangiogenic"])
    return Scenario(
        name=need("scenario", "name", str),
        tumor_class=need("scenario", "tumor_class", str),
        variant=need("scenario", "variant", str),
        therapy=need("scenario", "therapy", str),
        sigma_provenance=cfg["scenario"].get("sigma_provenance", "calibrated"),
        params=params, cyto=cyto, anti=anti,
        L=need("domain", "L"), n_el=need("domain", "n_el", int),
        dt=need("time", "dt"), horizon=need("time", "horizon"),
        rho_inf=need("time", "rho_inf"),
        a=need("initial", "a"), b=need("initial", "b"),
        c_sigma0=need("initial", "c_sigma0"), c_sigma1=need("initial", "c_sigma1"),
        c_p0=need("initial", "c_p0"), c_p1=need("initial", "c_p1"),
        newton_tol=need("solver", "newton_tol"),
        newton_max_iter=need("solver", "newton_max_iter", int),
        gmres_tol=need("solver", "gmres_tol"),
        gmres_max_iter=need("solver", "gmres_max_iter", int),
        gmres_restart=need("solver", "gmres_restart", int),
        cadence=need("output", "cadence"),
        snapshot_cadence=need("output", "snapshot_cadence"),
    )
