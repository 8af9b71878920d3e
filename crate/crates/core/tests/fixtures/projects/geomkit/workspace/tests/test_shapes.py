import pytest

from geomkit.shapes import Rect, circle_area


class TestRect:
    def setup_method(self):
        self.rect = Rect(2, 3)

    def test_area(self):
        assert self.rect.area() == 6

    def test_negative(self):
        with pytest.raises(ValueError):
            Rect(-1, 2)


def test_circle_area():
    assert circle_area(1) == pytest.approx(3.14159, rel=1e-4)
