import math

import numpy as np
import pytest

from lunar_pnt.domain.models import (
    BiasKind,
    ClockModel,
    Cooperation,
    Gmp1Params,
    LinkBudget,
    SatBiasModel,
    ScenarioConfig,
    Site,
    UserKind,
    UserSpec,
)
from lunar_pnt.domain.scenario import build_scenario, default_constellation

SOUTH_POLE_SITE = Site(latitude=math.radians(-89.45), longitude=math.radians(222.69))


def make_users(reference: bool = False):
    users = [
        UserSpec("R1", UserKind.MOVING_ROVER, (50.0, 50.0), ClockModel.ocxo(), waypoints=((120.0, 50.0),),
                 speed=1.0, loop=True),
        UserSpec("R2", UserKind.MOVING_ROVER, (-50.0, 50.0), ClockModel.ocxo(), waypoints=((-50.0, 120.0),),
                 speed=1.0, loop=True),
        UserSpec("S1", UserKind.STATIC_USER, (0.0, -80.0), ClockModel.ocxo()),
    ]
    if reference:
        users.append(UserSpec("REF", UserKind.REFERENCE_STATION, (0.0, 0.0), ClockModel.rubidium(),
                              antenna_height=6.0))
    return tuple(users)


def make_scenario_config(duration: float = 20.0, reference: bool = False, sat_kind: BiasKind = BiasKind.GMP1,
                         cooperation: Cooperation = Cooperation.FULL, **kw) -> ScenarioConfig:
    return ScenarioConfig(
        site=SOUTH_POLE_SITE,
        satellites=default_constellation(),
        users=make_users(reference),
        link_budget=LinkBudget(),
        sat_bias_model=SatBiasModel.from_range_std(sat_kind, 18_000.0, 5.0),
        coop_bias_params=Gmp1Params(5.5, 0.22 ** 2),
        step=1.0,
        duration=duration,
        start_time=3.0 * 3600.0,
        cooperation=cooperation,
        **kw,
    )


@pytest.fixture
def small_cfg():
    return make_scenario_config()


@pytest.fixture
def ref_cfg():
    return make_scenario_config(reference=True)


@pytest.fixture
def small_scenario(small_cfg):
    return build_scenario(small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
