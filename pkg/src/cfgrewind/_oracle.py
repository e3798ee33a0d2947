"""Synthetic check command for simulated repairs.

Usage: python -S -E _oracle.py ANSWER.json

Reads the flat config named by the answer's environment variable and exits
0 iff every expected key holds its expected value (null = key absent).
Prints the observed values of those keys, which serves as the trial's
observable output. Standard library only; runs without site-packages.
"""

import json
import os
import sys


def read_flat(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if sep:
                values[key.strip()] = value.strip()
    return values


def main(argv):
    with open(argv[1], encoding="utf-8") as fh:
        answer = json.load(fh)
    values = read_flat(os.environ[answer["env"]])
    ok = True
    for key in sorted(answer["expect"]):
        expected = answer["expect"][key]
        observed = values.get(key)
        print(f"{key}={observed if observed is not None else '<absent>'}")
        if observed != expected:
            ok = False
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
