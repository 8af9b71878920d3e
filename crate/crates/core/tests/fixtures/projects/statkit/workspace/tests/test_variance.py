from statkit.stats import variance


def test_variance_population():
    assert variance([1, 2, 3, 4]) == 1.25
