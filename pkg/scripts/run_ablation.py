"""Train on synthetic data, then build both ablation grids from the final checkpoint.

A desk-scale smoke run of the full train -> ablate path; pass ``--data-root``
to use real benchmark folders instead.
"""
import argparse
import os
import tempfile

from polypflow.cli import main as cli


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--data-root", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--epochs", type=int, default=150)
    args = p.parse_args()
    out = args.out_dir or tempfile.mkdtemp(prefix="polypflow-ablate-")
    root = args.data_root
    sizes = []
    if root is None:
        from polypflow.synthetic import write_synthetic_dataset
        root = os.path.join(out, "data")
        write_synthetic_dataset(root, "KvasirSEG", 12, size=64, seed=0)
        write_synthetic_dataset(root, "ETIS", 4, size=64, seed=1)
        sizes = ["--split-sizes", "KvasirSEG=8:4"]
    rc = cli(["train", "--data-root", root, "--datasets", "KvasirSEG", *sizes, "--out-dir", os.path.join(out, "run"),
              "--epochs", str(args.epochs), "--lr", "3e-3", "--model.widths", "4,8,16,32",
              "--model.image_size", "32", "--model.attn_dim", "8"])
    if rc:
        return rc
    ckpts = sorted(f for f in os.listdir(os.path.join(out, "run")) if f.endswith(".ckpt"))
    return cli(["ablate", "--data-root", root, *sizes, "--ckpt", os.path.join(out, "run", ckpts[-1]),
                "--out-dir", os.path.join(out, "ablation")])


if __name__ == "__main__":
    raise SystemExit(main())
