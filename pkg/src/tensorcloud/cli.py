"""Command-line surface: training, evaluation, and verification.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
failure, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import os
import sys

from .autodiff import NumericalError
from .checks import (
    VerificationError,
    check_constructive_p2,
    check_gradients,
    check_layers,
    check_network,
    check_primitives,
    verify_q,
)
from .data import DataError, Dataset, load_labeled_dir, synth_shapes
from .network import NetworkConfig
from .training import (
    RunConfig,
    evaluate_classifier,
    fit_invariant,
    load_checkpoint,
    predict_labels,
    train_classifier,
)

USAGE_ERROR, DATA_ERROR, VERIFICATION_ERROR, NUMERICAL_ERROR = 1, 2, 3, 4


class UsageError(ValueError):
    """Bad flag combination caught after argparse."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=2, help="maximum representation order")
    p.add_argument("--c", type=int, default=8, help="channel count")
    p.add_argument("--knn", type=int, default=0, help="neighbors in the KNN term (0 disables)")
    p.add_argument("--relu", action="store_true", help="enable the gated activation")
    p.add_argument("--t2mix", action="store_true", help="enable the order-2 self-map mix")
    p.add_argument("--head-hidden", default="32", help="comma list of hidden head widths")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--aug-train", choices=("none", "z", "so3"), default="none")
    p.add_argument("--aug-test", choices=("none", "z", "so3"), default="none")
    p.add_argument("--threads", type=int, default=1)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="directory with cloud files and labels.csv")
    p.add_argument("--synthetic", action="store_true", help="use the built-in 4-class shapes")
    p.add_argument("--train-per-class", type=int, default=64)
    p.add_argument("--test-per-class", type=int, default=64)
    p.add_argument("--points", type=int, default=64)


def build_parser() -> _Parser:
    parser = _Parser(prog="tensorcloud", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a shape classifier")
    _add_network_flags(p)
    _add_run_flags(p)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory (checkpoint, metrics, figure)")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--aug-test", choices=("none", "z", "so3"), default="none")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("check-equivariance", help="randomized equivariance suites")
    p.add_argument("--k", type=int, default=4, help="maximum order in the network suite")
    p.add_argument("--c", type=int, default=4, help="maximum channels in the network suite")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("oracle", help="spectrum oracle round trips")
    p.add_argument("--verify-q", action="store_true", default=True,
                   help="power sums -> inverse vs direct spectrum (default on)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit-invariant", help="regress an invariant descriptor")
    p.add_argument("target", choices=("p2", "p4", "p6", "lambda-cov"))
    p.add_argument("--constructive", action="store_true",
                   help="p2 only: verify the hand-built parameters, no training")
    p.add_argument("--c", type=int, default=8)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--train", type=int, default=512, help="training clouds")
    p.add_argument("--test", type=int, default=256, help="held-out clouds")
    p.add_argument("--points", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=20, help="random configurations")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ablation", help="representation-order comparison report")
    p.add_argument("--out", required=True)
    p.add_argument("--orders", default="2,4", help="comma list of representation orders")
    p.add_argument("--c", type=int, default=8)
    p.add_argument("--train-per-class", type=int, default=16)
    p.add_argument("--test-per-class", type=int, default=16)
    p.add_argument("--points", type=int, default=32)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    return parser


def _load_dataset(args, split: str, seed_shift: int = 0) -> Dataset:
    if args.data:
        return load_labeled_dir(args.data, split=split)
    if args.synthetic:
        per_class = args.train_per_class if split == "train" else args.test_per_class
        return synth_shapes(args.seed + seed_shift, per_class, args.points, split=split)
    raise UsageError("provide --data DIR or --synthetic")


def _network_config(args, num_classes: int) -> NetworkConfig:
    hidden = tuple(int(w) for w in str(args.head_hidden).split(",") if w.strip())
    return NetworkConfig(
        max_order=args.k,
        channels=args.c,
        k_nn=args.knn,
        use_relu=args.relu,
        use_t2mix=args.t2mix,
        head_widths=hidden + (num_classes,),
        seed=args.seed,
    )


def _cmd_train(args) -> int:
    train_ds = _load_dataset(args, "train")
    test_ds = None
    if args.synthetic:
        test_ds = _load_dataset(args, "test", seed_shift=1)
    if args.k % 2 != 0:
        raise UsageError("classification needs an even --k (rotation-invariant output)")
    cfg = _network_config(args, train_ds.num_classes)
    run = RunConfig(
        network=cfg,
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        optimizer=args.optimizer,
        aug_train=args.aug_train,
        aug_test=args.aug_test,
        seed=args.seed,
        threads=args.threads,
    )
    params, records, test_acc = train_classifier(train_ds, run, test_ds=test_ds, out_dir=args.out)
    from .report import save_loss_curve

    save_loss_curve(records, os.path.join(args.out, "loss_curve.png"))
    last = [r for r in records if r["split"] == "train"][-1]
    print(f"final train loss {last['loss']:.6f}, accuracy {last['metric']:.4f}")
    if test_acc is not None:
        print(f"test accuracy ({run.aug_test}): {test_acc:.4f}")
    print(f"wrote {os.path.join(args.out, 'checkpoint.json')}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg, params = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args, "test", seed_shift=1)
    acc, _ = evaluate_classifier(params, cfg, ds, protocol=args.aug_test, seed=args.seed)
    print(f"accuracy ({args.aug_test}): {acc:.4f}")
    return 0


def _cmd_check_equivariance(args) -> int:
    for name, report in (
        ("primitives", check_primitives(trials=args.trials * 10, seed=args.seed)),
        ("layers", check_layers(trials=args.trials, seed=args.seed)),
        (
            "network",
            check_network(
                trials=args.trials,
                seed=args.seed,
                max_order_cap=args.k,
                channels_cap=args.c,
            ),
        ),
    ):
        print(f"{name}: max relative error {report['max_rel_err']:.3e} (tol {report['tol']:.1e})")
    return 0


def _cmd_oracle(args) -> int:
    report = verify_q(trials=args.trials, seed=args.seed)
    print(f"spectrum round trip: max relative error {report['max_rel_err']:.3e} "
          f"over {report['trials']} trials (tol {report['tol']:.1e})")
    return 0


def _cmd_fit_invariant(args) -> int:
    if args.constructive:
        if args.target != "p2":
            raise UsageError("--constructive applies to p2 only")
        report = check_constructive_p2(clouds=100, seed=args.seed)
        print(f"constructive p2: max relative error {report['max_rel_err']:.3e} "
              f"over {report['clouds']} clouds (tol {report['tol']:.1e})")
        return 0
    report = fit_invariant(
        args.target,
        channels=args.c,
        n_train=args.train,
        n_test=args.test,
        n_points=args.points,
        seed=args.seed,
        epochs=args.epochs,
        lr=args.lr,
        threads=args.threads,
        out_dir=args.out,
    )
    print(f"{args.target}: held-out relative RMSE {report['rel_rmse']:.4f} "
          f"after {report['epochs']} epochs ({report['wall_s']:.1f}s)")
    if report["off_cone"]:
        print(f"warning: {report['off_cone']} predictions were outside the attainable cone")
    return 0


def _cmd_grad_check(args) -> int:
    report = check_gradients(configs=args.trials, seed=args.seed)
    print(f"gradients: max relative error {report['max_rel_err']:.3e} "
          f"over {report['configs']} configurations (tol {report['tol']:.1e})")
    return 0


def _cmd_ablation(args) -> int:
    from .report import run_ablation

    orders = tuple(int(k) for k in args.orders.split(","))
    if any(k % 2 for k in orders):
        raise UsageError("ablation orders must be even (classification)")
    rows = run_ablation(
        args.out,
        orders=orders,
        channels=args.c,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        points=args.points,
        epochs=args.epochs,
        lr=args.lr,
        seed=args.seed,
        threads=args.threads,
    )
    header = f"{'K':>4} {'test_acc':>9} {'train_acc':>10} {'params':>8} {'wall_s':>8}"
    print(header)
    for r in rows:
        print(f"{r['max_order']:>4} {r['test_acc']:>9.4f} {r['train_acc']:>10.4f} "
              f"{r['param_count']:>8} {r['wall_s']:>8.2f}")
    print(f"wrote {os.path.join(args.out, 'ablation.csv')} and ablation.png")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "check-equivariance": _cmd_check_equivariance,
    "oracle": _cmd_oracle,
    "fit-invariant": _cmd_fit_invariant,
    "grad-check": _cmd_grad_check,
    "ablation": _cmd_ablation,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except VerificationError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return VERIFICATION_ERROR
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
