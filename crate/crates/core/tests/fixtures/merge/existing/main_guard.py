import sys

from pkg.cli import main


def test_main_ok():
    assert main(["--help"]) == 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
