import numpy as np
import pytest

from pcasim.observables import tumor_volume
from pcasim.scenarios import (ConfigError, initial_state, preset, preset_names,
                              read_config, scenario_to_config_text, setup,
                              write_config)


class TestPresetCatalog:
    def test_catalog_size(self):
        names = preset_names()
        assert len(names) == 40
        assert len(set(names)) == 40

    def test_mild_reference_values(self):
        s = preset("mild/reference/none")
        assert s.params.K_rho == pytest.approx(0.8e-2)
        assert s.params.K_A == pytest.approx(0.7e-2)
        assert s.params.S_c == pytest.approx(2.75)
        assert s.params.gamma_c == pytest.approx(17.0)
        assert s.cyto is None and s.anti is None

    def test_aggressive_rich_supply(self):
        s = preset("aggressive/rich-supply/none")
        assert s.params.K_rho == pytest.approx(1.5e-2)
        assert s.params.K_A == pytest.approx(1.37e-2)
        assert s.params.S_c == pytest.approx(3.125)

    def test_uptake_variants(self):
        assert preset("mild/high-uptake/none").params.gamma_c == 18.0
        assert preset("mild/low-uptake/none").params.gamma_c == 16.0
        assert preset("mild/poor-supply/none").params.S_c == 2.375

    def test_combined_therapy_schedules(self):
        s = preset("mild/reference/combined")
        assert s.cyto is not None and s.anti is not None
        assert s.cyto.beta == pytest.approx(1.59e-2)
        assert s.cyto.amounts[0] == 75.0 and s.cyto.tau == 5.0
        assert s.anti.beta == pytest.approx(0.04)
        assert s.anti.amounts[0] == 15.0 and s.anti.tau == 30.0
        for sched in (s.cyto, s.anti):
            assert sched.times[0] == 60.0
            assert sched.times[-1] == 249.0
            assert len(sched.times) == 10
            assert np.all(np.diff(sched.times) == 21.0)

    def test_all_presets_validate(self):
        for name in preset_names():
            assert preset(name).validate().passed, name

    def test_unknown_names_rejected(self):
        with pytest.raises(KeyError):
            preset("mild/reference")
        with pytest.raises(KeyError):
            preset("severe/reference/none")
        with pytest.raises(KeyError):
            preset("mild/no-supply/none")

    def test_sigma_switch_is_marked_calibrated(self):
        s = preset("mild/reference/none")
        assert s.sigma_provenance == "calibrated"

    def test_overrides(self):
        s = preset("mild/reference/none", n_el=32, horizon=10.0)
        assert s.n_el == 32 and s.horizon == 10.0


class TestConfigRoundTrip:
    @pytest.mark.parametrize("name", ["mild/reference/none",
                                      "aggressive/poor-supply/cytotoxic",
                                      "mild/low-uptake/combined"])
    def test_field_for_field(self, name):
        s = preset(name)
        assert read_config(scenario_to_config_text(s), is_text=True) == s

    def test_file_round_trip(self, tmp_path):
        s = preset("mild/reference/antiangiogenic", n_el=16, dt=0.05)
        path = tmp_path / "scenario.cfg"
        write_config(s, path)
        assert read_config(path) == s

    def test_missing_key_reports_context(self):
        text = scenario_to_config_text(preset("mild/reference/none"))
        broken = "\n".join(line for line in text.splitlines()
                           if not line.startswith("gamma_p"))
        with pytest.raises(ConfigError, match=r"\[model\] gamma_p"):
            read_config(broken, is_text=True)

    def test_bad_value_reports_key(self):
        text = scenario_to_config_text(preset("mild/reference/none"))
        broken = text.replace("dt = 0.1", "dt = fast")
        with pytest.raises(ConfigError, match="dt"):
            read_config(broken, is_text=True)


class TestInitialState:
    @pytest.fixture(scope="class")
    def small_setup(self):
        # 64 elements per side: coarser grids leave >2% projection error at
        # the tumor center (the interface is far below element size)
        scen = preset("mild/reference/none", n_el=64)
        space, system, state = setup(scen)
        return scen, space, system, state

    def test_sigma_at_center(self, small_setup):
        scen, space, system, state = small_setup
        # sigma0 = 1 - 0.8 * phi0 and phi0(center) = 1 up to 2e-9
        val = space.evaluate(state.sigma, 1500.0, 1500.0)
        assert val == pytest.approx(0.2, abs=0.02)

    def test_psa_far_from_tumor(self, small_setup):
        scen, space, system, state = small_setup
        val = space.evaluate(state.p, 2900.0, 2900.0)
        assert val == pytest.approx(0.0625, abs=1e-4)

    def test_phi_vanishes_at_corner(self, small_setup):
        scen, space, system, state = small_setup
        # the exact profile underflows to zero at the corner
        assert scen.initial_phi(0.0, 0.0) == 0.0
        assert abs(space.evaluate(state.phi, 1.0, 1.0)) < 1e-8

    def test_boundary_coefficients_zeroed(self, small_setup):
        scen, space, system, state = small_setup
        assert np.abs(state.phi[space.boundary_mask]).max() == 0.0
        assert np.abs(state.phi_dot[space.boundary_mask]).max() == 0.0

    def test_initial_volume_near_ellipse_area(self, small_setup):
        scen, space, system, state = small_setup
        vol = tumor_volume(space, state.phi)
        assert vol.vc_mm2 == pytest.approx(np.pi * 150.0 * 200.0 / 1e6, rel=0.1)

    def test_derivatives_are_consistent(self, small_setup):
        scen, space, system, state = small_setup
        R = system.residual(state.pack(), np.zeros(3 * system.n), 0.0)
        defect = system.mass @ state.sigma_dot + R[system.slices["sigma"]]
        assert np.abs(defect).max() < 1e-8 * max(np.abs(R).max(), 1.0)
