"""Command-line entry point: ``proxyprox {run,reference,check-bound,parse}``.

Exit codes: 0 success, 2 bound check failed, 1 any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data_io import DATA_DIR_ENV, parse_sparse_classification
from .harness import (
    PROBLEMS,
    ExperimentSpec,
    build_problem,
    check_bound,
    load_traces,
    run_experiment,
    solve_reference,
    write_csv,
)

EXIT_OK, EXIT_ERROR, EXIT_BOUND = 0, 1, 2

log = logging.getLogger("proxyprox")


def _kv(text: str):
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(val)
    except json.JSONDecodeError:
        return key, val


def _cmd_run(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    overrides = {k: v for k, v in (("replicates", args.replicates), ("workers", args.workers),
                                    ("seed", args.seed)) if v is not None}
    if overrides:
        spec = ExperimentSpec.from_dict({**spec.to_dict(), **overrides})
    out = Path(args.output) if args.output else Path("runs") / spec.experiment_id
    result = run_experiment(spec, out)
    last = result.aggregate[-1]
    print(f"{spec.experiment_id}: {spec.replicates} replicate(s), K={result.metadata['K']}, "
          f"eta={result.metadata['eta']:.6g}")
    print(f"final mean loss {last['mean_loss']:.10g}, mean subopt {last['mean_subopt']:.4e} "
          f"(stderr {last['stderr_subopt']:.2e}) at {last['objective_grad_draws']} gradients")
    print(f"wrote {out}/traces.csv, aggregate.csv, metadata.json, traces/")
    return EXIT_OK


def _cmd_reference(args) -> int:
    params = dict(args.param or [])
    problem = build_problem(args.problem, params, args.proxy, with_reference=False)
    ref = solve_reference(problem.objective, problem.mu, args.tol)
    info = {"problem": problem.name, "dim": problem.dim, "f_star": ref.f_star,
            "grad_norm": ref.grad_norm_at_w_star, "tol": args.tol,
            "dataset_hash": problem.metadata.get("dataset")}
    if args.output:
        np.save(args.output, ref.w_star)
        info["w_star"] = str(args.output)
    print(json.dumps(info, indent=2))
    return EXIT_OK


def _cmd_check_bound(args) -> int:
    traces = load_traces(args.traces)
    constants = dict(args.const or [])
    report = check_bound(traces, args.theorem, constants or None)
    print(report.summary())
    if args.output:
        write_csv(args.output, report.rows(), ("theorem", "K", "empirical", "rhs", "stderr",
                                               "passed"))
    return EXIT_OK if report.all_passed else EXIT_BOUND


def _cmd_parse(args) -> int:
    data = parse_sparse_classification(args.input, zero_based=args.zero_based,
                                       task=args.task)
    X = data.features
    stats = {"path": str(args.input), "n": data.n, "d": data.d, "nnz": int(X.nnz),
             "density": X.nnz / (data.n * data.d), "hash": data.metadata["hash"]}
    if data.task == "classification":
        stats["label_encoding"] = data.metadata.get("label_encoding")
        stats["positives"] = int(data.labels.sum())
        stats["negatives"] = int(data.n - data.labels.sum())
    if args.stats:
        print(json.dumps(stats, indent=2))
    else:
        print(f"parsed {data.n} rows x {data.d} features from {args.input}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; status 2 is reserved for failed bound checks."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="proxyprox",
                                 description="Proxy-based stochastic proximal-point experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment spec (JSON or key = value)")
    p.add_argument("--spec", required=True)
    p.add_argument("--output", help="output directory (default runs/<experiment_id>)")
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("reference", help="compute a certified reference solution")
    p.add_argument("--problem", required=True, choices=PROBLEMS)
    p.add_argument("--param", type=_kv, action="append", metavar="KEY=VALUE")
    p.add_argument("--proxy", default="random_label_logistic")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--output", help="save w* as .npy")
    p.set_defaults(func=_cmd_reference)

    p = sub.add_parser("check-bound", help="compare saved traces with a convergence bound")
    p.add_argument("--theorem", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--traces", required=True, help="directory of .npz traces")
    p.add_argument("--const", type=_kv, action="append", metavar="KEY=VALUE",
                   help="override a stored constant (B2, eta, mu, sigma2, G2, f_star, L0)")
    p.add_argument("--output", help="write the per-K report as CSV")
    p.set_defaults(func=_cmd_check_bound)

    p = sub.add_parser("parse", help="parse a sparse 'label idx:val' file")
    p.add_argument("--input", required=True)
    p.add_argument("--stats", action="store_true", help="print summary statistics as JSON")
    p.add_argument("--zero-based", action="store_true")
    p.add_argument("--task", choices=("classification", "regression"), default="classification")
    p.set_defaults(func=_cmd_parse)
    ap.epilog = f"Datasets are looked up in ${DATA_DIR_ENV}."
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (Exception, KeyboardInterrupt) as exc:  # noqa: BLE001 - report, exit 1
        if args.verbose:
            log.exception("command failed")
        print(f"proxyprox: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
