import numpy as np
import pytest

from pgflow import envs, net


@pytest.fixture
def gw4():
    return envs.make_task(envs.GRID_WORLD, seed=0, grid_size=(4, 4), r0=0.05)


@pytest.fixture
def gw2():
    return envs.make_task(envs.GRID_WORLD, seed=0, grid_size=(2, 2), r0=0.05)


@pytest.fixture
def fl4():
    # holes fixed so the fixture does not depend on the sampler
    return envs.make_task(
        envs.FROZEN_LAKE, seed=0, grid_size=(4, 4), holes=[(1, 1)]
    )


@pytest.fixture
def cw4x6():
    return envs.make_task(
        envs.CLIFF_WALKING, seed=0, grid_size=(4, 6), cliff_length=2
    )


@pytest.fixture
def small_net(gw4):
    return net.net_for_task(gw4, [6])


@pytest.fixture
def rng():
    return np.random.default_rng(7)
