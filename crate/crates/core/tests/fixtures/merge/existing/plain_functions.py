import math

from pkg.geometry import circle_area


def test_circle_area_unit():
    assert circle_area(1) == math.pi


def test_circle_area_zero():
    assert circle_area(0) == 0
