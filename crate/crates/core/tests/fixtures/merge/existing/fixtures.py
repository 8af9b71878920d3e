import pytest

from pkg.store import Store


@pytest.fixture
def data():
    return {"a": 1}


@pytest.fixture
def store(data):
    return Store(data)


def test_get(store):
    assert store.get("a") == 1


def test_missing(store):
    with pytest.raises(KeyError):
        store.get("b")
