import math

import pytest

from pkg.geometry import circle_area, square_area


def test_c02_square_area():
    assert square_area(2) == 4
    assert math.isclose(circle_area(2), 4 * math.pi)
