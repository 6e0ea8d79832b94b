"""Command-line interface: ``softsort <command> [options]``.

Exit codes: 0 success, 1 failed check or training run, 2 usage error.

Options may also come from ``--config FILE``, given before the command.  The
file is either a JSON object or ``key = value`` lines (``#`` starts a
comment); keys are option names with dashes or underscores.  Precedence is
command line, then config file, then ``SOFTSORT_SEED`` (seed only), then the
built-in default.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import core, dknn, gradients, harness, properties
from .core import InvalidInputError
from .optim import TrainingError

SEED_ENV = "SOFTSORT_SEED"
METRICS = {"l1": core.L1, "l2": core.L2}

logger = logging.getLogger("softsort")


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not all(math.isfinite(v) for v in values):
        raise argparse.ArgumentTypeError("numbers must be finite")
    return values


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _metric(text: str) -> core.SemiMetric:
    key = text.lower()
    if key in METRICS:
        return METRICS[key]
    try:
        return core.SemiMetric(float(text))
    except (ValueError, InvalidInputError):
        raise argparse.ArgumentTypeError(f"metric must be l1, l2 or a positive power, got {text!r}")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    key = str(text).strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- commands ----------------------------------------------------------------

def cmd_demo(args) -> int:
    s = np.asarray(args.scores, dtype=np.float64)
    if s.size > 1 and core.min_gap(s) == 0:
        logger.warning("scores contain ties; they are ordered by position (earlier first)")
    if args.operator == "softsort":
        p_hat = core.soft_sort(s, args.tau, args.metric)
    else:
        p_hat = core.neural_sort(s, args.tau)
    label = args.operator if args.operator == "neuralsort" else f"softsort (p={args.metric.power:g})"
    print(f"{label}, tau={args.tau:g}")
    with np.printoptions(precision=4, floatmode="fixed", suppress=True):
        print(p_hat)
    perm = core.argsort_desc(s) + 1
    print("hard permutation (1-based):", " ".join(str(int(i)) for i in perm))
    print("row sums:", " ".join(f"{x:.4f}" for x in p_hat.sum(axis=-1)))
    return 0


def cmd_gradcheck(args) -> int:
    rep = gradients.gradcheck(args.operator, n=args.n, trials=args.trials, tol=args.tol,
                              seed=args.seed, tau=args.tau, p=args.p, h=args.h)
    _print_json(rep.to_dict())
    return 0 if rep.passed else 1


def _operators(choice: str) -> tuple[str, ...]:
    return ("softsort", "neuralsort") if choice == "both" else (choice,)


def cmd_bench(args) -> int:
    # fail on an unwritable path before spending minutes on the benchmark
    try:
        with open(args.out, "a"):
            pass
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 1
    rows = harness.run_speed_compare(
        args.n_list, _operators(args.operators), epochs=args.epochs, batch=args.batch,
        seed=args.seed, p=args.p, softsort_tau=args.softsort_tau,
        neuralsort_tau=args.neuralsort_tau, include_reversed=args.include_reversed,
    )
    harness.write_bench_csv(rows, args.out)
    for row in rows:
        print(f"{row['operator']:>20} n={row['n']:<6} {row['mean_epoch_seconds']:.4f}s/epoch "
              f"(sd {row['stddev_seconds']:.4f})  min Spearman {row['final_spearman_min']:.9g}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_knn(args) -> int:
    blobs = dknn.BlobSpec(classes=args.classes, dim=args.dim, separation=args.separation,
                          n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    cfg = dknn.DknnConfig(k=args.k, tau=args.tau, p=args.p, epochs=args.epochs,
                          learning_rate=args.lr, momentum=args.momentum,
                          n_candidates=args.candidates, loss=args.loss,
                          unit_norm=args.unit_norm, seed=args.seed)
    _, rep = dknn.train_dknn(blobs, cfg)
    if args.curves:
        dknn.write_dknn_curves_csv(rep, args.curves)
    _print_json(rep.to_dict())
    return 0


def cmd_properties(args) -> int:
    results = properties.run_properties(args.suite, args.seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.suite:<12} {r.name:<{width}}  {r.seconds:7.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    print(f"all {len(results)} properties passed")
    return 0


def cmd_sort_yourself(args) -> int:
    cfg = harness.BenchConfig(n=args.n, batch=args.batch, epochs=args.epochs,
                              operator=args.operator, tau=args.tau, p=args.p,
                              seed=args.seed, init=args.init, scaling=args.scaling)
    rep = harness.run_sort_yourself(cfg)
    if args.curves:
        harness.write_curves_csv(rep, args.curves)
    _print_json({
        "operator": cfg.operator, "n": cfg.n, "batch": cfg.batch, "epochs": cfg.epochs,
        "tau": cfg.tau, "p": cfg.p if cfg.operator == "softsort" else None, "seed": cfg.seed,
        "mean_epoch_seconds": rep.mean_epoch_seconds, "stddev_seconds": rep.stddev_seconds,
        "final_loss": rep.loss_curve[-1] if rep.loss_curve else None,
        "final_spearman_min": rep.final_spearman_min,
    })
    return 0


def cmd_learn_to_sort(args) -> int:
    rep = harness.run_learn_to_sort(args.n, args.train_size, args.epochs, args.operator,
                                    args.tau, args.seed, p=args.p, test_size=args.test_size,
                                    n_samples=args.samples)
    out = rep.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
    _print_json(out)
    return 0


# -- parser ------------------------------------------------------------------

def _add_seed(p):
    p.add_argument("--seed", type=int, default=None,
                   help=f"random seed (default: ${SEED_ENV} or 0)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="softsort",
                                     description="Relaxed argsort operators and experiments.")
    parser.add_argument("--config", help="JSON or key=value file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    cmds = {}

    p = sub.add_parser("demo", help="print a relaxed permutation matrix")
    p.add_argument("--scores", type=_float_list, default=[2.0, 5.0, 4.0],
                   help="comma-separated scores (default 2,5,4)")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--metric", type=_metric, default=core.L1, help="l1, l2 or a power p")
    p.add_argument("--operator", choices=gradients.OPERATORS, default="softsort")
    p.set_defaults(func=cmd_demo)
    cmds["demo"] = p

    p = sub.add_parser("gradcheck", help="compare analytic and numeric gradients")
    p.add_argument("--operator", choices=gradients.OPERATORS, default="softsort")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--p", type=float, default=1.0, help="semi-metric power (softsort)")
    p.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    _add_seed(p)
    p.set_defaults(func=cmd_gradcheck)
    cmds["gradcheck"] = p

    p = sub.add_parser("bench", help="time both operators on the sort-yourself task")
    p.add_argument("--n-list", type=_int_list, default=[100, 500, 1000, 2000])
    p.add_argument("--operators", choices=("both", "softsort", "neuralsort"), default="both")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--p", type=float, default=2.0, help="semi-metric power for softsort")
    p.add_argument("--softsort-tau", type=float, default=harness.DEFAULT_TAU["softsort"])
    p.add_argument("--neuralsort-tau", type=float, default=harness.DEFAULT_TAU["neuralsort"])
    p.add_argument("--include-reversed", type=_bool, nargs="?", const=True, default=False,
                   help="also time inputs initialised in reversed order")
    p.add_argument("--out", default="bench.csv")
    _add_seed(p)
    p.set_defaults(func=cmd_bench)
    cmds["bench"] = p

    p = sub.add_parser("knn", help="train a differentiable kNN embedding on blobs")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=5.0, help="centre spacing in sigmas")
    p.add_argument("--n-train", type=int, default=300)
    p.add_argument("--n-test", type=int, default=300)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--tau", type=float, default=16.0)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--candidates", type=int, default=50, help="candidates per episode")
    p.add_argument("--loss", choices=dknn.LOSSES, default="neg_prob")
    p.add_argument("--unit-norm", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--curves", help="write the loss curve CSV here")
    _add_seed(p)
    p.set_defaults(func=cmd_knn)
    cmds["knn"] = p

    p = sub.add_parser("properties", help="run the invariant suites")
    p.add_argument("--suite", choices=("all",) + properties.SUITES, default="all")
    _add_seed(p)
    p.set_defaults(func=cmd_properties)
    cmds["properties"] = p

    p = sub.add_parser("sort-yourself", help="train one sort-yourself run")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--operator", choices=gradients.OPERATORS, default="softsort")
    p.add_argument("--tau", type=float, default=None, help="default 0.03 softsort, 100 neuralsort")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--init", choices=("uniform", "reversed"), default="uniform")
    p.add_argument("--scaling", choices=harness.SCALINGS, default="detached")
    p.add_argument("--curves", help="write epoch,loss,spearman_mean CSV here")
    _add_seed(p)
    p.set_defaults(func=cmd_sort_yourself)
    cmds["sort-yourself"] = p

    p = sub.add_parser("learn-to-sort", help="learn a scorer from permutation supervision")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--operator", choices=gradients.OPERATORS, default="softsort")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=0, help="Gumbel samples per list (0: none)")
    p.add_argument("--out", help="also write the JSON report here")
    _add_seed(p)
    p.set_defaults(func=cmd_learn_to_sort)
    cmds["learn-to-sort"] = p
    return parser, cmds


def load_config(path) -> dict:
    """Read option defaults from a JSON object or ``key = value`` lines."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}")
        if not isinstance(data, dict):
            raise UsageError(f"{path}: expected a JSON object")
        return {str(k).replace("-", "_"): v for k, v in data.items()}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _config_defaults(sub: argparse.ArgumentParser, values: dict) -> dict:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "func")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys for {sub.prog}: {', '.join(unknown)}")
    out = {}
    for key, value in values.items():
        action = actions[key]
        convert = action.type
        if isinstance(value, list) and convert in (_float_list, _int_list):
            value = ",".join(str(v) for v in value)
        if convert is not None and not (isinstance(value, bool) and convert is _bool):
            try:
                value = convert(value if isinstance(value, str) else str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key}: {exc}")
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config key {key}: {value!r} is not one of {list(action.choices)}")
        out[key] = value
    return out


def _resolve_seed(args) -> None:
    if getattr(args, "seed", "absent") is not None:
        return
    env = os.environ.get(SEED_ENV)
    try:
        args.seed = int(env) if env else 0
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}")


def main(argv=None) -> int:
    parser, cmds = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.config:
            try:
                values = load_config(args.config)
            except OSError as exc:
                raise UsageError(f"cannot read config {args.config}: {exc}")
            cmds[args.command].set_defaults(**_config_defaults(cmds[args.command], values))
            args = parser.parse_args(argv)
        _resolve_seed(args)
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        print(f"softsort {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"softsort {args.command}: training failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
