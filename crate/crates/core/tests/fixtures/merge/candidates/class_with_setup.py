import numpy as np

from pkg.linalg import det


class TestDetExtra:
    def setup_method(self):
        np.random.seed(0)

    def test_c03_det_diagonal(self):
        assert det(np.diag([2.0, 3.0])) == 6.0
