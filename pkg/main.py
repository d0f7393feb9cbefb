import sys
from pathlib import Path

from cli.commands import main as run_cli
from config import OUTPUT_ROOT


def setup_directories():
    directories = [
        f"{OUTPUT_ROOT}/solve",
        f"{OUTPUT_ROOT}/check",
        f"{OUTPUT_ROOT}/modulus",
        "iodata/configs",
        "iodata/logs",
    ]

    for directory in directories:
        Path(directory).mkdir(parents=True, exist_ok=True)


def main():
    setup_directories()
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
