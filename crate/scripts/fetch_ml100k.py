#!/usr/bin/env python3
"""Materialize MovieLens-100K as data/ml-100k/u.data.

Tries the GroupLens archive first; falls back to the copy of the
interaction file shipped inside the `recbole` wheel (pip mirror).
"""
import io
import pathlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "ml-100k" / "u.data"
GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"


def from_grouplens():
    with urllib.request.urlopen(GROUPLENS, timeout=30) as resp:
        z = zipfile.ZipFile(io.BytesIO(resp.read()))
    return z.read("ml-100k/u.data").decode()


def from_recbole():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-d", tmp, "recbole==1.2.1"],
            check=True,
            stdout=subprocess.DEVNULL,
        )
        wheel = next(pathlib.Path(tmp).glob("recbole-*.whl"))
        z = zipfile.ZipFile(wheel)
        lines = z.read("recbole/dataset_example/ml-100k/ml-100k.inter").decode().splitlines()
    # drop the typed header; the body is already user\titem\trating\ttimestamp
    return "\n".join(lines[1:]) + "\n"


def main():
    if OUT.exists():
        print(f"{OUT} already present")
        return
    try:
        text = from_grouplens()
    except Exception as err:  # noqa: BLE001
        print(f"grouplens unavailable ({err}); using recbole wheel", file=sys.stderr)
        text = from_recbole()
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(text)
    print(f"wrote {OUT} ({text.count(chr(10))} lines)")


if __name__ == "__main__":
    main()
