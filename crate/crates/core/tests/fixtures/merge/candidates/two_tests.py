def test_c07_first():
    assert "a".upper() == "A"


def test_c07_second():
    assert "B".lower() == "b"
