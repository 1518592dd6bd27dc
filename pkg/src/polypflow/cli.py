"""``polypflow`` command line. Every subcommand is a thin wrapper over library calls.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
import argparse
import os
import sys
from typing import Dict, List, Optional, Sequence

from . import metrics
from .checkpoint import CheckpointSchemaError
from .config import TrainConfig, apply_overrides, config_keys, dump_config, load_config
from .data import (SEEN_SPLITS, DatasetError, DatasetName, Split, filter_split, load_dataset, make_splits,
                   write_split_manifest)
from .gradcheck import SELECTORS, grad_check
from .ode import NonFiniteStateError
from .training import (STEP_GRID, TrainingDiverged, ablate, infer, predict_directory, train)
from .viz import emit_comparison, emit_step_grid

DATA_ROOT_ENV = "POLYPFLOW_DATA_ROOT"
SEEN = [DatasetName.KvasirSEG.value, DatasetName.ClinicDB.value]
ALL = [d.value for d in DatasetName]

RUNTIME_ERRORS = (OSError, ValueError, KeyError, RuntimeError, DatasetError, CheckpointSchemaError,
                  NonFiniteStateError)


class UsageError(Exception):
    pass


def _out_path(out_dir: str, name: str) -> str:
    return name if os.path.isabs(name) else os.path.join(out_dir, name)


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _split_sizes(text: str) -> Dict[str, tuple]:
    """``KvasirSEG=900:100,ClinicDB=550:62``."""
    out = {}
    try:
        for item in filter(None, text.split(",")):
            name, counts = item.split("=")
            n_train, n_test = counts.split(":")
            out[DatasetName(name.strip()).value] = (int(n_train), int(n_test))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NAME=TRAIN:TEST[,...], got {text!r}")
    return out


def _data_options(p: argparse.ArgumentParser, default_datasets: Optional[Sequence[str]]):
    p.add_argument("--data-root", default=os.environ.get(DATA_ROOT_ENV),
                   help=f"dataset root (default: ${DATA_ROOT_ENV})")
    p.add_argument("--datasets", nargs="+", choices=ALL,
                   default=None if default_datasets is None else list(default_datasets),
                   help="default: " + (" ".join(default_datasets) if default_datasets
                                       else "every benchmark directory present under the root"))
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--split-sizes", type=_split_sizes, default=None,
                   help="override seen-dataset split counts, e.g. KvasirSEG=9:1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polypflow", description="Polyp segmentation by flow matching.",
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from scratch", allow_abbrev=False,
                       epilog="Any config key may be overridden as --key value, e.g. --lr 3e-3 "
                              "--model.widths 4,8,16,32 --loss.lambda_fm 0.5.")
    _data_options(p, SEEN)
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("infer", help="segment an image (or a directory of images)")
    p.add_argument("--image", required=True, help="image file, or a directory for soft maps only")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=None, help="Euler steps (default: checkpoint config)")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("eval", help="score predictions against ground truths")
    p.add_argument("--preds", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--out", required=True, help="CSV report")
    p.add_argument("--json", default=None, help="optional JSON report")
    p.add_argument("--dataset", default="dataset", help="name written into the dataset column")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("ablate", help="component and step-count grids")
    _data_options(p, None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps-grid", type=_int_list, default=list(STEP_GRID))
    p.add_argument("--no-components", action="store_true", help="skip the component grid")
    p.add_argument("--retrain", action="store_true",
                   help="retrain each component row from the checkpoint config instead of toggling")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("viz-steps", help="per-step trajectory grid")
    p.add_argument("--image", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", default=None, help="file name (default: <stem>_steps.png)")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("viz-compare", help="method comparison panel")
    p.add_argument("--image", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--method", action="append", default=[], metavar="NAME=MASK",
                   help="repeatable; one row per method")
    p.add_argument("--out", default="comparison.png")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("split", help="write the deterministic split manifest")
    _data_options(p, None)
    p.add_argument("--out", default="split_manifest.csv")
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--selector", choices=SELECTORS, default="end_to_end")
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    return parser


def resolve_key(flag: str, known: Sequence[str]) -> str:
    """Map ``--lr`` / ``--model.n-steps`` / ``--lambda_fm`` to a dotted config key."""
    key = flag.lstrip("-").replace("-", "_")
    key = key[len("train."):] if key.startswith("train.") else key
    if key in known:
        return key
    matches = [k for k in known if k.rsplit(".", 1)[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if matches:
        raise UsageError(f"ambiguous option {flag}: {', '.join(matches)}")
    raise UsageError(f"unrecognized arguments: {flag}")


def parse_overrides(extras: Sequence[str]) -> Dict[str, str]:
    known = list(config_keys())
    out, i = {}, 0
    while i < len(extras):
        tok = extras[i]
        if not tok.startswith("--"):
            raise UsageError(f"unrecognized arguments: {tok}")
        if "=" in tok:
            flag, value = tok.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise UsageError(f"option {tok} expects a value")
            flag, value = tok, extras[i + 1]
            i += 2
        out[resolve_key(flag, known)] = value
    return out


def _records(args) -> list:
    if not args.data_root:
        raise UsageError(f"--data-root is required (or set {DATA_ROOT_ENV})")
    names = args.datasets
    if names is None:
        names = [d for d in ALL if os.path.isdir(os.path.join(args.data_root, d))]
        if not names:
            raise DatasetError(f"no benchmark directories ({', '.join(ALL)}) under {args.data_root}")
    records = []
    for name in names:
        records += load_dataset(args.data_root, name)
    sizes = {**SEEN_SPLITS, **{DatasetName(k): v for k, v in (args.split_sizes or {}).items()}}
    return make_splits(records, args.split_seed, sizes)


def cmd_train(args, overrides) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    cfg = apply_overrides(cfg, overrides)
    records = _records(args)
    os.makedirs(args.out_dir, exist_ok=True)
    write_split_manifest(records, os.path.join(args.out_dir, "split_manifest.csv"))
    with open(os.path.join(args.out_dir, "config.txt"), "w") as f:
        f.write(dump_config(cfg))
    paths = train(cfg, filter_split(records, Split.train), args.out_dir)
    print(paths[-1])
    return 0


def cmd_infer(args, _) -> int:
    if os.path.isdir(args.image):
        for path in predict_directory(args.image, args.ckpt, args.out_dir, args.steps):
            print(path)
        return 0
    mask_path, _, _ = infer(args.image, args.ckpt, args.steps, args.out_dir)
    print(mask_path)
    return 0


def cmd_eval(args, _) -> int:
    report = metrics.evaluate_dataset(args.preds, args.gts, args.dataset)
    out = _out_path(args.out_dir, args.out)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    metrics.write_csv([report], out)
    if args.json:
        metrics.write_json([report], _out_path(args.out_dir, args.json))
    for k, v in report.summary.items():
        print(f"{k}: {v:.4f}")
    return 0


def cmd_ablate(args, _) -> int:
    records = _records(args)
    eval_sets = {}
    for name in dict.fromkeys(r.dataset.value for r in records):
        recs = [r for r in records if r.dataset == name and r.split != Split.train]
        if recs:
            eval_sets[name] = recs
    train_records = filter_split(records, Split.train) if args.retrain else None
    components = () if args.no_components else None
    kwargs = {} if components is None else {"components": components}
    comp, steps = ablate(args.ckpt, eval_sets, step_counts=args.steps_grid, train_records=train_records,
                         out_dir=os.path.join(args.out_dir, "retrain"), **kwargs)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, report in (("components", comp), ("steps", steps)):
        report.to_csv(os.path.join(args.out_dir, f"{name}.csv"))
        with open(os.path.join(args.out_dir, f"{name}.md"), "w") as f:
            f.write(report.to_markdown())
        print(report.to_markdown())
    return 0


def cmd_viz_steps(args, _) -> int:
    _, _, traj = infer(args.image, args.ckpt, args.steps)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    fig = emit_step_grid(traj, _out_path(args.out_dir, args.out or f"{stem}_steps.png"))
    print(f"{fig.path} ({fig.n_panels} panels)")
    return 0


def cmd_viz_compare(args, _) -> int:
    rows = []
    for item in args.method:
        if "=" not in item:
            raise UsageError(f"--method expects NAME=MASK, got {item!r}")
        rows.append(tuple(item.split("=", 1)))
    fig = emit_comparison(rows, args.gt, args.image, _out_path(args.out_dir, args.out))
    print(fig.path)
    return 0


def cmd_split(args, _) -> int:
    records = _records(args)
    out = _out_path(args.out_dir, args.out)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_split_manifest(records, out)
    for split in Split:
        print(f"{split.value}: {sum(r.split == split for r in records)}")
    return 0


def cmd_gradcheck(args, _) -> int:
    report = grad_check(args.selector, tolerance=args.tolerance, seed=args.seed)
    for line in report.lines():
        print(line)
    print(f"{args.selector}: max_rel_error={report.max_rel_error:.3e} {'PASS' if report.passed else 'FAIL'}")
    return 0 if report.passed else 1


COMMANDS = {
    "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "ablate": cmd_ablate,
    "viz-steps": cmd_viz_steps, "viz-compare": cmd_viz_compare, "split": cmd_split,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        overrides = {}
        if extras:
            if args.command != "train":
                parser.error(f"unrecognized arguments: {' '.join(extras)}")
            try:
                overrides = parse_overrides(extras)
            except UsageError as e:
                parser.error(str(e))
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args, overrides)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"polypflow: error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"polypflow: error: {e}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as e:
        msg = str(e) if not isinstance(e, KeyError) else str(e.args[0])
        print(f"polypflow: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
