"""Command-line entry point: ``selforder {gen-data,train,order,eval,bench}``.

Exit status is 0 on success, 2 for usage and configuration errors and 1 for
runtime failures (the message goes to standard error).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import config as runconfig

log = logging.getLogger("selforder")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON file of dotted keys (see --dump-defaults)")
    p.add_argument("--set", metavar="K=V", action="append", default=[], dest="assign",
                   help="override one config key; VALUE is parsed as JSON (repeatable)")
    p.add_argument("--seed", type=int, help="seed for data generation, initialisation and shuffling")
    p.add_argument("--out", metavar="DIR", help="output directory (created if missing)")
    p.add_argument("--threads", type=int, metavar="INT", help="cap on BLAS/OpenMP worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selforder",
        description="Self-supervised point-cloud ordering: data, training, ordering, evaluation and timing.",
    )
    parser.add_argument("--dump-defaults", action="store_true", help="print the default run config as JSON and exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic dataset (XYZ files + manifest.txt)")
    _common(p)

    p = sub.add_parser("train", help="self-supervised training; writes checkpoint.prnk and metrics.csv")
    _common(p)
    p.add_argument("--data", metavar="MANIFEST", help="dataset manifest; generated from data.* keys when omitted")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.prnk if present")

    p = sub.add_parser("order", help="rank the points of one XYZ cloud; writes OUT/ordering.txt")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="trained checkpoint")
    p.add_argument("--cloud", required=True, metavar="PATH", help="XYZ point file")
    p.add_argument("--no-normalize", action="store_true", help="use raw coordinates instead of unit-sphere ones")

    p = sub.add_parser("eval", help="frozen-task curves for random, fps and learned orderings")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="trained checkpoint")
    p.add_argument("--data", metavar="MANIFEST", help="dataset manifest; generated from data.* keys when omitted")

    p = sub.add_parser("bench", help="time Sinkhorn and scoring kernels per backend; writes OUT/bench.csv")
    _common(p)
    return parser


def _limit_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(cfg, manifest):
    from . import data

    if manifest is not None:
        return data.read_manifest(manifest)
    ds = data.make_dataset(
        cfg["data.n_per_class"],
        cfg["data.n_points"],
        seed=cfg["seed"],
        classes=cfg["data.classes"],
        rotate=cfg["data.rotate"],
    )
    return data.split_dataset(ds, cfg["data.train_fraction"], cfg["seed"], cfg["data.zero_shot_classes"])


def cmd_gen_data(args, cfg) -> None:
    from . import data

    out = _out_dir(args)
    train, test = _dataset(cfg, None)
    manifest = data.write_dataset(train, test, out)
    (out / "config.json").write_text(runconfig.dumps(cfg))
    print(manifest)


def cmd_train(args, cfg) -> None:
    from . import train as tr

    out = _out_dir(args)
    trn, _ = _dataset(cfg, args.data)
    ckpt = out / "checkpoint.prnk"
    if args.resume and ckpt.exists():
        state = tr.load_checkpoint(ckpt)
        log.info("resuming at epoch %d", state.epoch)
    else:
        metrics = out / "metrics.csv"
        if metrics.exists():
            metrics.unlink()
        state = tr.init_state(runconfig.train_config(cfg))
    (out / "config.json").write_text(runconfig.dumps(cfg))
    state = tr.fit(trn.clouds, state=state, out_dir=out)
    print(ckpt)


def cmd_order(args, cfg) -> None:
    from . import data, evaluate, sorter, train as tr

    state = tr.load_checkpoint(args.checkpoint)
    cloud = data.load_xyz(args.cloud)
    if not args.no_normalize:
        cloud = data.normalize_unit_sphere(cloud)
    ordering = evaluate.learned_ordering(cloud, state.model, state.config)
    out = _out_dir(args) / "ordering.txt"
    sorter.write_ordering(out, ordering)
    print(out)


def cmd_eval(args, cfg) -> None:
    from . import evaluate as ev
    from . import train as tr

    state = tr.load_checkpoint(args.checkpoint)
    trn, tst = _dataset(cfg, args.data)
    n_points = len(tst.clouds[0])
    sizes = sorted(set(int(n) for n in cfg["eval.sizes"]))
    if sizes[-1] > n_points:
        raise UsageError(f"eval.sizes contains {sizes[-1]} but clouds have {n_points} points")
    methods = [
        ev.SelectionMethod("random", seed=cfg["seed"]),
        ev.SelectionMethod("fps"),
        ev.SelectionMethod("learned", state),
    ]
    orders = {m.tag: m.orders(tst.clouds) for m in methods}
    out = _out_dir(args)
    widths = tuple(cfg["eval.task_widths"])
    tasks = cfg["eval.tasks"]
    n_classes = int(max(trn.labels.max(), tst.labels.max())) + 1
    clf = None
    if "classify" in tasks or "retrieval" in tasks:
        clf = ev.train_classifier(trn, n_classes, widths, epochs=cfg["eval.task_epochs"], seed=cfg["seed"])
    if "classify" in tasks:
        curves = [ev.classify_eval(clf, tst, m, sizes, orders[m.tag]) for m in methods]
        print(*ev.curve_report(curves, out / "classify"), sep="\n")
    if "retrieval" in tasks:
        curves = [ev.retrieval_map(clf, tst, m, sizes, orders[m.tag]) for m in methods]
        print(*ev.curve_report(curves, out / "retrieval"), sep="\n")
    if "reconstruct" in tasks:
        ae = ev.train_autoencoder(
            trn, cfg["eval.decoder_points"], widths, epochs=cfg["eval.task_epochs"], seed=cfg["seed"]
        )
        curves = [ev.reconstruct_eval(ae, tst, m, sizes, orders[m.tag]) for m in methods]
        print(*ev.curve_report(curves, out / "reconstruct"), sep="\n")
    (out / "config.json").write_text(runconfig.dumps(cfg))


def cmd_bench(args, cfg) -> None:
    from . import bench

    rows = bench.run(cfg["bench.sizes"], cfg["bench.repeats"], cfg["seed"])
    print(bench.write_csv(rows, _out_dir(args) / "bench.csv"))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "order": cmd_order,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    if args.dump_defaults:
        sys.stdout.write(runconfig.dumps(runconfig.DEFAULTS))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("selforder: error: a COMMAND is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        _limit_threads(args.threads)
        cfg = runconfig.resolve(args.config, args.assign, args.seed)
    except (UsageError, runconfig.ConfigError) as exc:
        print(f"selforder: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"selforder: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"selforder: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, ArithmeticError) as exc:
        print(f"selforder: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
