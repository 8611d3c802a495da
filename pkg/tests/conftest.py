"""Shared fixtures: calibrated river-station parameter sets and random model draws.

The six station fixtures are published calibration results (two observation
periods at three channel points); beta is recovered from the identifiable
product D*beta with the nominal D = 0.5 used during calibration.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from supcbi.lift import build_lift
from supcbi.measures import GammaMixingMeasure, TemperedStableLevy, levy_moment
from supcbi.process import SupCbiModel

D_NOMINAL = 0.5


@dataclass(frozen=True)
class StationFixture:
    name: str
    A: float
    B: float
    c1: float
    c2: float
    alpha: float
    dbeta: float
    baseflow: float
    mean: float  # published model average, m^3/s (includes baseflow)
    variance: float  # published model variance, m^6/s^2

    def model(self) -> SupCbiModel:
        return SupCbiModel(
            A=self.A,
            B=self.B,
            pi=GammaMixingMeasure(alpha=self.alpha, beta=self.dbeta / D_NOMINAL),
            nu=TemperedStableLevy(c1=self.c1, c2=self.c2),
            baseflow=self.baseflow,
        )


STATION_FIXTURES = [
    StationFixture("p1_point20", 2.391e-2, 3.637e-2, 0.772, 4.434e-3, 2.329, 3.149e-2, 1.174, 9.029, 403.9),
    StationFixture("p1_point60", 2.799e-2, 3.562e-2, 0.8113, 3.709e-3, 2.248, 3.328e-2, 1.226, 10.69, 481.3),
    StationFixture("p1_point180", 2.918e-2, 3.603e-2, 0.8127, 3.942e-3, 2.189, 3.210e-2, 1.290, 11.90, 504.0),
    StationFixture("p2_point20", 2.615e-2, 3.604e-2, 0.840, 4.345e-3, 1.865, 2.941e-2, 1.836, 16.10, 525.4),
    StationFixture("p2_point60", 2.907e-2, 3.511e-2, 0.8379, 3.645e-3, 1.865, 3.175e-2, 2.617, 17.69, 670.1),
    StationFixture("p2_point180", 3.170e-2, 3.453e-2, 0.8381, 3.295e-3, 1.874, 3.226e-2, 2.752, 19.03, 799.8),
]


@pytest.fixture(scope="session")
def station_fixtures():
    return STATION_FIXTURES


def draw_random_model(rng: np.random.Generator) -> SupCbiModel:
    """Random stationary model with moderate parameters for property tests."""
    alpha = rng.uniform(1.3, 3.0)
    beta = rng.uniform(0.1, 2.0)
    c1 = rng.uniform(-0.5, 0.9)
    c2 = rng.uniform(0.3, 3.0)
    nu = TemperedStableLevy(c1=c1, c2=c2)
    a = rng.uniform(0.05, 2.0)
    b = rng.uniform(0.0, 0.95) / levy_moment(nu, 1)
    return SupCbiModel(
        A=a, B=b, pi=GammaMixingMeasure(alpha=alpha, beta=beta), nu=nu,
        baseflow=rng.uniform(0.0, 2.0),
    )


@pytest.fixture(scope="session")
def random_model_pool():
    """1000 random (model, lift) pairs reused across the property criteria."""
    rng = np.random.default_rng(20240817)
    pool = []
    for _ in range(1000):
        model = draw_random_model(rng)
        lift = build_lift(model.pi, int(rng.integers(1, 4)))
        pool.append((model, lift))
    return pool
