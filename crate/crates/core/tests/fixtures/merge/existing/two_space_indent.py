from pkg.color import parse_hex


class TestParseHex:
  def test_black(self):
    assert parse_hex("#000000") == (0, 0, 0)

  def test_white(self):
    assert parse_hex("#ffffff") == (255, 255, 255)
