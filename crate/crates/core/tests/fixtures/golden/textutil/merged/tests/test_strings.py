from textutil.strings import slugify, truncate


def test_slugify():
    assert slugify("Hello World") == "hello-world"
    assert slugify("") == ""


def test_slugify_sep():
    assert slugify("a b", sep="_") == "a_b"


def test_truncate():
    assert truncate("abcdef", 4) == "abc~"
