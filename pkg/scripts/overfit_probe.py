"""Run the 8-image overfit probe and print the loss ratio and train mDice."""
import argparse
import tempfile

from polypflow.probe import run_overfit_probe


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out-dir", default=None, help="keep data, log and checkpoints here (default: temp dir)")
    args = p.parse_args()
    out = args.out_dir or tempfile.mkdtemp(prefix="polypflow-probe-")
    result = run_overfit_probe(out)
    ratio = result.final_loss / result.initial_loss
    print(f"initial loss {result.initial_loss:.4f}  final loss {result.final_loss:.4f}  ratio {ratio:.3f}")
    print(f"train mDice {result.mdice:.4f}")
    print(f"checkpoints: {result.checkpoints[-1]}")
    ok = result.mdice >= 0.90 and ratio < 0.25
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
