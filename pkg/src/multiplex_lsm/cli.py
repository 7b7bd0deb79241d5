"""Command-line interface: ``simulate``, ``fit``, ``experiment``, ``verify-manifest``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys

import numpy as np

from .experiment import ExperimentPlan, fit_network_file, run_experiment, simulate, verify_manifest
from .hunt import ScreeningError
from .netdata import FormatError
from .single import NumericalError

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def _int_list(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


def _str_list(text):
    return [x for x in str(text).replace(",", " ").split()]


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CONVERT = {"case": str, "family": str, "n": int, "k": int, "T_list": _int_list,
            "replicates": int, "seed": int, "stages": _str_list, "output_dir": str,
            "phi": float, "rho": float, "T_o": int, "eta": float, "max_iter": int,
            "anchors": str, "timing": _bool, "noiseless": _bool}


def _add_plan_args(p):
    p.add_argument("--config", help="INI file with a [plan] section; command-line flags win")
    p.add_argument("--case", choices=["A", "B", "C"])
    p.add_argument("--family", choices=["gaussian", "bernoulli", "poisson"])
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--T", dest="T_list", type=_int_list, help="comma-separated layer counts")
    p.add_argument("--replicates", "--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--stages", type=_str_list, help="subset of hunt,pgd,onestep")
    p.add_argument("--output-dir", "-o", dest="output_dir")
    p.add_argument("--phi", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--T-o", dest="T_o", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--anchors", choices=["hunt", "pgd"])
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="write 0 in the seconds column so reruns are byte-identical")
    p.add_argument("--noiseless", action="store_const", const=True,
                   help="write edge means instead of sampled edges (gaussian only)")


def plan_from_args(args) -> ExperimentPlan:
    values = {}
    if args.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(args.config):
            raise FileNotFoundError(args.config)
        for key, raw in (cp["plan"].items() if cp.has_section("plan") else []):
            if key not in _CONVERT:
                raise ValueError(f"unknown plan key {key!r} in {args.config}")
            values[key] = _CONVERT[key](raw)
    for key in _CONVERT:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return ExperimentPlan(**values)


def _cmd_simulate(args):
    path = simulate(plan_from_args(args))
    print(path)
    return EXIT_OK


def _cmd_experiment(args):
    plan = plan_from_args(args)
    _, summary = run_experiment(plan, workers=args.workers)
    for r in summary:
        print(f"T={r['T']:<4d} {r['stage']:<8s} median gram_err_Z={r['median_gram_err_Z']:.4g} "
              f"(n_ok={r['n_ok']})")
    return EXIT_OK


def _cmd_fit(args):
    dims = [int(x) for x in args.dims.replace(",", " ").split()]
    params = {}
    if args.tau1 is not None:
        params["tau1"] = args.tau1
    if args.M1 is not None:
        params["M1"] = args.M1
    params.update(eta=args.eta, max_iter=args.max_iter, anchors=args.anchors)
    if len(dims) == 1:
        dims = dims[0]
    try:
        _, summary = fit_network_file(args.network, args.k, dims, args.output_dir,
                                      truth_dir=args.truth, **params)
    except ScreeningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("t\ts\tratio", file=sys.stderr)
        for (t, s), r in sorted(exc.ratios.items()):
            print(f"{t}\t{s}\t{r:.6g}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps({k: summary[k] for k in ("n", "T", "n_screened", "screened_pairs")}))
    if summary["errors"]:
        for stage, e in summary["errors"].items():
            print(f"{stage}: dist2_Z={e['dist2_Z']:.3g} max_dist2_W={e['max_dist2_W']:.3g}")
    return EXIT_OK


def _cmd_verify(args):
    bad = verify_manifest(args.manifest)
    for rel in bad:
        print(f"MISMATCH {rel}", file=sys.stderr)
    if not bad:
        print("ok")
    return EXIT_OK if not bad else EXIT_INVALID


def build_parser():
    parser = argparse.ArgumentParser(prog="multiplex-lsm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write simulated networks and truth factors")
    _add_plan_args(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("experiment", help="simulate, fit and evaluate a sweep over T")
    _add_plan_args(p)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $MLSM_NUM_THREADS or CPU count)")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("fit", help="fit a multiplex edge-list file")
    p.add_argument("network")
    p.add_argument("--k", type=int, required=True, help="shared dimension")
    p.add_argument("--dims", required=True, help="individual dimensions k_1,..,k_T (or one value)")
    p.add_argument("--output-dir", "-o", dest="output_dir", default="fit_output")
    p.add_argument("--truth", help="directory with truth Z.txt / W_<t>.txt to evaluate against")
    p.add_argument("--tau1", type=float)
    p.add_argument("--M1", type=float)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=1000)
    p.add_argument("--anchors", choices=["hunt", "pgd"], default="hunt")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("verify-manifest", help="re-hash files listed in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FormatError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
