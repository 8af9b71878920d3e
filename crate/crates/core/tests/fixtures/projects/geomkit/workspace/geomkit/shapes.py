"""Basic planar shapes."""
import math


class Rect:
    def __init__(self, width, height):
        if width < 0 or height < 0:
            raise ValueError("negative size")
        self.width = width
        self.height = height

    def area(self, ndigits=None):
        value = self.width * self.height
        if ndigits is not None:
            value = round(value, ndigits)
        return value

    def scale(self, factor):
        if factor <= 0:
            raise ValueError("factor must be positive")
        return Rect(self.width * factor, self.height * factor)


def circle_area(radius):
    return math.pi * radius ** 2
