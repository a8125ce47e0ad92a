import numpy as np
import pytest

from pcasim.assembly import GalerkinSystem
from pcasim.model import ModelParameters, TherapySchedule
from pcasim.splines import SplineSpace2D


def make_params(**overrides):
    values = dict(
        lam=640.0, mobility=2.5, m_ref=7.55e-2,
        K_rho=0.8e-2, Kbar_rho=1.5e-2, K_A=0.7e-2, Kbar_A=2.1e-2,
        sigma_l=0.2, sigma_r=0.05, eta=6.4e4,
        S_h=2.0, S_c=2.75, gamma_h=2.0, gamma_c=17.0,
        D_psa=640.0, alpha_h=1.712e-2, alpha_c=15.0 * 1.712e-2, gamma_p=0.274,
    )
    values.update(overrides)
    return ModelParameters(**values)


@pytest.fixture(scope="session")
def mild():
    return make_params()


@pytest.fixture(scope="session")
def aggressive():
    return make_params(K_rho=1.5e-2, K_A=1.37e-2)


@pytest.fixture(scope="session")
def cyto_schedule():
    return TherapySchedule.uniform(60.0, 10, 21.0, 75.0, 1.59e-2, 5.0)


@pytest.fixture(scope="session")
def anti_schedule():
    return TherapySchedule.uniform(60.0, 10, 21.0, 15.0, 0.04, 30.0)


@pytest.fixture(scope="session")
def space4():
    return SplineSpace2D(3000.0, 4)


@pytest.fixture(scope="session")
def space8():
    return SplineSpace2D(3000.0, 8)


@pytest.fixture(scope="session")
def system4(space4, mild):
    return GalerkinSystem(space4, mild)


@pytest.fixture(scope="session")
def system8(space8, mild):
    return GalerkinSystem(space8, mild)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def healthy_state(space, params):
    """Exact discrete healthy equilibrium (phi=0, sigma=S_h/gamma_h, p=alpha_h/gamma_p)."""
    from pcasim.assembly import SystemState

    n = space.n_dofs
    return SystemState(
        t=0.0,
        phi=np.zeros(n),
        sigma=np.full(n, params.S_h / params.gamma_h),
        p=np.full(n, params.alpha_h / params.gamma_p),
        phi_dot=np.zeros(n), sigma_dot=np.zeros(n), p_dot=np.zeros(n),
    )
