class TestC10:
    def test_c10_nested(self):
        def inner(x):
            return x * 2

        assert inner(2) == 4
