from statkit.stats import stdev


def test_stdev_basic():
    assert stdev([2, 4, 4, 4, 5, 5, 7, 9]) == 2.0
