import numpy as np
import pytest

from stealthnav.geometry import Point2, Polygon


def square(cx=0.0, cy=0.0, half=0.5) -> Polygon:
    return Polygon([(cx - half, cy - half), (cx + half, cy - half),
                    (cx + half, cy + half), (cx - half, cy + half)])


def random_polygon(rng, bounds=(-5.0, -5.0, 15.0, 15.0), r_lo=0.5, r_hi=2.0):
    from stealthnav.geometry import random_convex_polygon
    x0, y0, x1, y1 = bounds
    center = Point2(rng.uniform(x0, x1), rng.uniform(y0, y1))
    return random_convex_polygon(center, rng.uniform(r_lo, r_hi),
                                 int(rng.integers(3, 6)), rng)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
