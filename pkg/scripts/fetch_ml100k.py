#!/usr/bin/env python3
"""Download MovieLens-100K ratings to data/ml-100k/u.data.

Tries the GroupLens archive first. If that host is unreachable, falls back to
the copy shipped inside the RecBole wheel on PyPI (same 100,000 rows, with a
one-line header that is stripped here). The result is checked against the
known MD5 of u.data.
"""

import argparse
import hashlib
import io
import shutil
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
MD5 = "6e47046882bad158b0efbb84cd5cb987"


def from_grouplens() -> bytes:
    with urllib.request.urlopen(GROUPLENS, timeout=30) as resp:
        archive = zipfile.ZipFile(io.BytesIO(resp.read()))
    return archive.read("ml-100k/u.data")


def from_recbole() -> bytes:
    tmp = Path(tempfile.mkdtemp())
    try:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "recbole==1.2.1",
                        "-d", str(tmp)], check=True, capture_output=True)
        wheel = next(tmp.glob("recbole-*.whl"))
        raw = zipfile.ZipFile(wheel).read("recbole/dataset_example/ml-100k/ml-100k.inter")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    lines = raw.decode().splitlines()[1:]  # drop the typed header
    return ("\n".join(lines) + "\n").encode()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", type=Path, default=Path("data/ml-100k/u.data"))
    args = parser.parse_args()
    if args.dest.exists() and hashlib.md5(args.dest.read_bytes()).hexdigest() == MD5:
        print(f"{args.dest} already present")
        return 0
    for source in (from_grouplens, from_recbole):
        try:
            data = source()
        except Exception as exc:  # network or packaging failure, try the next source
            print(f"{source.__name__} failed: {exc}", file=sys.stderr)
            continue
        digest = hashlib.md5(data).hexdigest()
        if digest != MD5:
            print(f"{source.__name__}: checksum mismatch ({digest})", file=sys.stderr)
            continue
        args.dest.parent.mkdir(parents=True, exist_ok=True)
        args.dest.write_bytes(data)
        print(f"wrote {args.dest} via {source.__name__}")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
