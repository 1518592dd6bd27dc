"""Write synthetic benchmark-shaped datasets (``<root>/<name>/{images,masks}``) for smoke runs."""
import argparse

from polypflow.data import DatasetName
from polypflow.synthetic import write_synthetic_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("root")
    p.add_argument("--count", action="append", default=[], metavar="NAME=N",
                   help="e.g. KvasirSEG=12 (repeatable; default KvasirSEG=12 ClinicDB=8 ETIS=4)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    counts = args.count or ["KvasirSEG=12", "ClinicDB=8", "ETIS=4"]
    for i, item in enumerate(counts):
        name, n = item.split("=")
        base = write_synthetic_dataset(args.root, DatasetName(name).value, int(n), args.size, args.seed + i)
        print(f"{base}: {n} pairs")


if __name__ == "__main__":
    main()
