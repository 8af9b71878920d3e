import math


def mean(xs):
    if not xs:
        raise ValueError("mean of empty data")
    return sum(xs) / len(xs)


def variance(xs, ddof=0):
    n = len(xs)
    if n <= ddof:
        raise ValueError("not enough data for ddof")
    m = mean(xs)
    return sum((x - m) ** 2 for x in xs) / (n - ddof)


def stdev(xs, ddof=0):
    if ddof < 0:
        raise ValueError("ddof must be non-negative")
    return math.sqrt(variance(xs, ddof))
