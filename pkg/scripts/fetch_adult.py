"""Fetch the UCI Adult files (adult.data, adult.test) into data/adult/.

The sandbox only reaches the Python package index, so the files are taken
from the ``responsibly`` wheel, which bundles an unmodified copy of the UCI
release. Only the two data files are extracted; the package itself is not
installed (its dependency pins are incompatible with current matplotlib).
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL_SPEC = "responsibly==0.1.2"
MEMBERS = ("adult.data", "adult.test")


def fetch(dest: Path) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    if all((dest / m).exists() for m in MEMBERS):
        print(f"already present in {dest}")
        return
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL_SPEC],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            for member in MEMBERS:
                (dest / member).write_bytes(zf.read(f"responsibly/dataset/adult/{member}"))
    print(f"wrote {', '.join(MEMBERS)} to {dest}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "adult")
    fetch(parser.parse_args().dest)
