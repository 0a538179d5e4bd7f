import numpy as np
import pytest

from labeluq.geometry import BoxBEV


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_box(rng, center_scale=10.0, max_extent=6.0):
    return BoxBEV(
        cx=float(rng.uniform(-center_scale, center_scale)),
        cy=float(rng.uniform(-center_scale, center_scale)),
        l=float(rng.uniform(0.5, max_extent)),
        w=float(rng.uniform(0.5, max_extent)),
        theta=float(rng.uniform(-np.pi, np.pi)),
    )


def car_like_box(rng, center_scale=10.0):
    return BoxBEV(
        cx=float(rng.uniform(-center_scale, center_scale)),
        cy=float(rng.uniform(-center_scale, center_scale)),
        l=float(rng.uniform(3.6, 4.8)),
        w=float(rng.uniform(1.6, 2.0)),
        theta=float(rng.uniform(-np.pi, np.pi)),
    )
