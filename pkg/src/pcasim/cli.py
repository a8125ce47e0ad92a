"""Command-line entry point.

Subcommands: ``run`` executes a preset or a configuration file and writes the
time series, snapshots and run metadata; ``list-presets`` and ``show-config``
expose the catalog; ``validate`` prints the scenario validation report;
``verify`` runs the verification suites and writes a machine-readable report.
Exit codes: 0 success, 1 solver failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import observables, output, scenarios, verification
from .timestepping import (LinearSolveFailure, NewtonDivergenceError, run_simulation)


def _build_parser():
    parser = argparse.ArgumentParser(prog="pcasim",
                                     description="Phase-field prostate tumor growth simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and write outputs")
    src = run_p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help="catalog name, e.g. mild/reference/none")
    src.add_argument("--config", help="scenario configuration file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--nel", type=int, help="override elements per side")
    run_p.add_argument("--dt", type=float, help="override time step [day]")
    run_p.add_argument("--horizon", type=float, help="override simulated span [day]")
    run_p.add_argument("--cadence", type=float, help="override observation spacing [day]")
    run_p.add_argument("--snapshot-cadence", type=float, dest="snapshot_cadence",
                       help="override snapshot spacing [day]; 0 disables snapshots")
    run_p.add_argument("--quiet", action="store_true")

    sub.add_parser("list-presets", help="print the 40 catalog names")

    val_p = sub.add_parser("validate", help="print the scenario validation report")
    vsrc = val_p.add_mutually_exclusive_group(required=True)
    vsrc.add_argument("--preset")
    vsrc.add_argument("--config")

    show_p = sub.add_parser("show-config", help="print a preset as a config file")
    show_p.add_argument("--preset", required=True)
    show_p.add_argument("--out", help="write to a file instead of stdout")

    ver_p = sub.add_parser("verify", help="run the verification suites")
    ver_p.add_argument("--suite", default="all",
                       choices=["all", "mms", "jacobian", "oracle", "continuity"])
    ver_p.add_argument("--out", help="directory for the report CSV")
    return parser


def _load_scenario(args, overrides=None):
    if getattr(args, "preset", None):
        scenario = scenarios.preset(args.preset)
    else:
        scenario = scenarios.read_config(args.config)
    if overrides:
        from dataclasses import replace
        scenario = replace(scenario, **overrides)
    return scenario


def _collect_overrides(args):
    overrides = {}
    if args.nel is not None:
        overrides["n_el"] = args.nel
    if args.dt is not None:
        overrides["dt"] = args.dt
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if args.cadence is not None:
        overrides["cadence"] = args.cadence
    if args.snapshot_cadence is not None:
        overrides["snapshot_cadence"] = args.snapshot_cadence
    return overrides


def run_scenario(scenario, out_dir, quiet=False):
    """Execute one scenario, writing timeseries.csv, snapshots and metadata."""
    os.makedirs(out_dir, exist_ok=True)
    space, system, state0 = scenarios.setup(scenario)
    controls, alpha = scenario.controls(), scenario.alpha()
    u_fn, s_fn = scenario.drug_functions()

    obs_times = np.arange(0.0, scenario.horizon + 1e-9, scenario.cadence)
    snap_times = (np.arange(0.0, scenario.horizon + 1e-9, scenario.snapshot_cadence)
                  if scenario.snapshot_cadence > 0 else np.array([]))
    all_times = np.union1d(obs_times, snap_times)
    snap_set = set(np.round(snap_times, 9))
    obs_set = set(np.round(obs_times, 9))

    rows = []

    def observer(state, stats):
        t = state.t
        if round(t, 9) in obs_set:
            vol = observables.tumor_volume(space, state.phi)
            ps_raw, ps_mean = observables.serum_psa(space, state.p)
            bounds = observables.bounds_monitor(space, state)
            rows.append(output.TimeseriesRow(
                t_day=t, V_c_mm2=vol.vc_mm2, V_c_frac=vol.fraction, V_h_mm2=vol.vh_mm2,
                P_s_raw=ps_raw, P_s_mean=ps_mean,
                u=float(u_fn(t)) if u_fn else 0.0,
                s=float(s_fn(t)) if s_fn else 0.0,
                min_phi=bounds.min_phi, max_phi=bounds.max_phi,
                min_sigma=bounds.min_sigma, min_p=bounds.min_p,
                newton_iters=stats.newton_iters, gmres_iters=stats.gmres_iters))
            if not quiet:
                print(f"t={t:8.2f} d  V_c={vol.vc_mm2:.5f} mm^2  "
                      f"P_s_mean={ps_mean:.5f}  newton={stats.newton_iters}", flush=True)
        if round(t, 9) in snap_set:
            output.write_snapshot(space, state, t, out_dir)

    final = run_simulation(system, state0, alpha, controls, scenario.horizon,
                           u_fn=u_fn, s_fn=s_fn, dose_times=scenario.dose_times(),
                           observe_times=all_times, observer=observer)
    output.write_timeseries(rows, os.path.join(out_dir, "timeseries.csv"))
    scenarios.write_config(scenario, os.path.join(out_dir, "scenario.cfg"))
    with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
        json.dump({
            "pcasim_version": __version__,
            "scenario": scenario.name,
            "n_el": scenario.n_el, "dt": scenario.dt, "horizon": scenario.horizon,
            "newton": "per-field 2-norms relative to first iterate, "
                      f"tolerance {scenario.newton_tol}, floor 1e-12 in mass-diagonal units",
            "gmres": "diagonally preconditioned residual relative to initial "
                     f"preconditioned residual, tolerance {scenario.gmres_tol}, "
                     f"max {scenario.gmres_max_iter} iterations",
            "sigma_l_sigma_r_provenance": scenario.sigma_provenance,
        }, fh, indent=2)
        fh.write("\n")
    return rows, final


def _cmd_run(args):
    try:
        scenario = _load_scenario(args, _collect_overrides(args))
    except (KeyError, scenarios.ConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    report = scenario.validate()
    if not report.passed:
        print("scenario validation raised warnings:", file=sys.stderr)
        print(report.summary(), file=sys.stderr)
    try:
        run_scenario(scenario, args.out, quiet=args.quiet)
    except (NewtonDivergenceError, LinearSolveFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_validate(args):
    try:
        scenario = _load_scenario(args)
    except (KeyError, scenarios.ConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    report = scenario.validate()
    print(f"scenario {scenario.name}")
    print(report.summary())
    return 0 if report.passed else 1


def _cmd_show_config(args):
    try:
        scenario = scenarios.preset(args.preset)
    except KeyError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    text = scenarios.scenario_to_config_text(scenario)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return 0


def _cmd_verify(args):
    params = scenarios.preset("mild/reference/none").params
    checks = []   # (name, value, bound, passed)

    if args.suite in ("all", "jacobian"):
        from .assembly import GalerkinSystem
        from .splines import SplineSpace2D
        for n_el in (4, 8):
            system = GalerkinSystem(SplineSpace2D(3000.0, n_el), params)
            worst = verification.jacobian_fd_check(system, n_states=5)
            checks.append((f"jacobian_fd_{n_el}x{n_el}", worst["eps/2"], 1e-5,
                           worst["eps"] < 1e-5 and worst["eps/2"] < 1e-5))

    if args.suite in ("all", "oracle"):
        from .assembly import GalerkinSystem, SystemState
        from .splines import SplineSpace2D
        from .timestepping import StepControls, advance_step, alpha_from_rho_inf
        n_el = 4
        space = SplineSpace2D(3000.0, n_el)
        system = GalerkinSystem(space, params)
        disc = verification.OracleDiscretization(3000.0, n_el)
        rng = np.random.default_rng(1)
        n = space.n_dofs
        worst = 0.0
        for _ in range(3):
            U = np.concatenate([rng.uniform(0, 1, n) * 0.5, rng.uniform(0.3, 1.1, n),
                                rng.uniform(0.0, 0.3, n)])
            U[system.boundary] = 0.0
            state = SystemState.from_packed(0.0, U, np.zeros(3 * n))
            ctrl = StepControls(dt=0.1, newton_tol=1e-10, gmres_tol=1e-12,
                                gmres_restart=None, newton_max_iter=40)
            new, _ = advance_step(system, state, alpha_from_rho_inf(0.5), ctrl)
            U_ref, _ = verification.dense_oracle_step(disc, params, state, 0.1)
            worst = max(worst, float(np.abs(new.pack() - U_ref).max()))
        checks.append(("oracle_step_agreement", worst, 1e-8, worst < 1e-8))

    if args.suite in ("all", "mms"):
        study = verification.mms_study(params, spatial_nels=(8, 16, 32),
                                       temporal_dts=(0.4, 0.2, 0.1))
        checks.append(("mms_spatial_order", study["spatial_order"], (2.7, 3.3),
                       2.7 <= study["spatial_order"] <= 3.3))
        checks.append(("mms_temporal_order", study["temporal_order"], (1.8, 2.2),
                       1.8 <= study["temporal_order"] <= 2.2))

    if args.suite in ("all", "continuity"):
        scen = scenarios.preset("mild/reference/none", n_el=16)
        ratios = verification.continuous_dependence_probe(scen, deltas=(1e-3, 1e-4),
                                                          horizon=5.0)
        vals = list(ratios.values())
        spread = abs(vals[0] - vals[1]) / max(abs(vals[1]), 1e-300)
        checks.append(("continuity_ratio_spread", spread, 0.1, spread < 0.1))

    for name, value, bound, passed in checks:
        print(f"[{'pass' if passed else 'FAIL'}] {name}: {value} (bound {bound})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "verification.csv"), "w", newline="\n") as fh:
            fh.write("check,value,bound,passed\n")
            for name, value, bound, passed in checks:
                fh.write(f"{name},{value},{bound},{passed}\n".replace(", ", ";"))
    return 0 if all(c[3] for c in checks) else 1


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "list-presets":
        for name in scenarios.preset_names():
            print(name)
        return 0
    if args.command == "validate":
        return _cmd_validate(args)
    if args.command == "show-config":
        return _cmd_show_config(args)
    if args.command == "verify":
        return _cmd_verify(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
