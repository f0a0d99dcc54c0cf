import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from manovaspec import (
    ModelDesign,
    NoiseModel,
    SignalModel,
    build_one_way_layout,
    build_problem,
    default_density_grid,
    density_on_grid,
    detect_support,
    sample_paper_noise,
)


def make_mp_design(n, p):
    """k=1 design with identity interaction: U = Id, B = Id/n."""
    return ModelDesign.create(U_r=[np.eye(n)], B=np.eye(n) / n, p=p)


def make_mp_problem(n=64, p=32):
    design = make_mp_design(n, p)
    noise = NoiseModel(sigma_ring=(np.eye(p),))
    return build_problem(design, noise)


def make_small_one_way(n_pairs=50, p=200, noise_scale=1.0, seeds=(11, 22)):
    """Scaled-down one-way layout with the exponential-bulk noise."""
    design = build_one_way_layout(n_pairs, p)
    noise = NoiseModel(sigma_ring=(
        noise_scale * sample_paper_noise(p, 4, seed=seeds[0]),
        noise_scale * sample_paper_noise(p, 4, seed=seeds[1]),
    ))
    return design, noise


def paper_signal(p):
    """Rank-3 plus rank-2 spike pattern of the one-way experiment."""
    e = np.eye(p)
    w = (e[0] + e[1] + e[2]) / np.sqrt(3.0)
    return SignalModel.from_spikes(2, p, [
        (1, np.sqrt(32.0) * e[0]),
        (1, np.sqrt(16.0) * e[1]),
        (1, np.sqrt(8.0) * e[2]),
        (2, np.sqrt(32.0) * w),
        (2, np.sqrt(64.0) * e[3]),
    ])


@pytest.fixture(scope="session")
def mp_problem():
    return make_mp_problem()


@pytest.fixture(scope="session")
def mp_support(mp_problem):
    grid = default_density_grid(mp_problem)
    sd = density_on_grid(mp_problem, grid)
    return detect_support(sd, delta=0.1)


@pytest.fixture(scope="session")
def small_one_way():
    design, noise = make_small_one_way()
    return design, noise, build_problem(design, noise)


@pytest.fixture(scope="session")
def small_one_way_support(small_one_way):
    _, _, problem = small_one_way
    grid = default_density_grid(problem)
    sd = density_on_grid(problem, grid)
    return detect_support(sd, delta=0.1)
