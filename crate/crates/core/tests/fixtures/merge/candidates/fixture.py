import pytest


@pytest.fixture
def c06_payload():
    return [1, 2]


def test_c06_payload(c06_payload):
    assert sum(c06_payload) == 3
