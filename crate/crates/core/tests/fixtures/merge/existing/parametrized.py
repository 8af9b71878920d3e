import pytest

from pkg.text import shout

CASES = [("a", "A!"), ("bc", "BC!")]


@pytest.mark.parametrize("text, expected", CASES)
def test_shout(text, expected):
    assert shout(text) == expected
