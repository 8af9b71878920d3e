import pytest

from pkg.cache import LRU


def _filled(n):
    c = LRU(n)
    for i in range(n):
        c.put(i, i)
    return c


class TestLRU:
    @pytest.mark.slow
    def test_eviction(self):
        c = _filled(2)
        c.put(9, 9)
        assert 0 not in c

    @staticmethod
    def helper():
        return 3

    def test_helper(self):
        assert self.helper() == 3
