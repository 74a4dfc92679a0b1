import logging

import numpy as np
import pytest

from qanomaly.ensemble import make_driven_system
from qanomaly.schemas import BandProfile, CurveParams, RunConfig, SpreadingCurve


@pytest.fixture
def small_profile():
    """Weak coupling so eigenstates of small matrices stay far from the edges."""
    return BandProfile(s_lambda=1.0, lam=0.05, band_min=1, band_max=8)


@pytest.fixture
def small_system(small_profile):
    return make_driven_system(small_profile, dim=64, fdot=1.0, seed=11)


@pytest.fixture
def tiny_config(tmp_path):
    def build(**overrides):
        data = dict(
            N=64,
            b=8,
            lam=0.05,
            s0_list=[1.0],
            fdot_list=[2.0],
            realizations=1,
            sample_points=8,
            t_max_factor=2.0,
            output_dir=str(tmp_path / "results"),
        )
        data.update(overrides)
        return RunConfig(**data)

    return build


def synthetic_curve(times, variance, mode="driven", s0=1.0, fdot=2.0, eps=2.0, stderr=None, sigma=2.0):
    return SpreadingCurve(
        times=list(times),
        variance=list(variance),
        stderr=list(stderr) if stderr is not None else [],
        mode=mode,
        params=CurveParams(s0=s0, sigma=sigma, fdot=fdot, eps=eps, dim=64, band_max=8),
    )


@pytest.fixture
def make_curve():
    return synthetic_curve


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def restore_logging():
    """The CLI reconfigures the root logger; put it back afterwards."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers[:]:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)
