"""Command-line front end.

Subcommands: ``validate``, ``simulate``, ``select-inputs``, ``identify`` and
``check-ident``.  All structured output is JSON (CSV for time series), every
randomized command takes ``--seed`` and is reproducible, and files are written
atomically (temp file + rename).

Exit codes: 0 success, 2 validation failure, 3 estimation non-convergence,
4 precondition violation, 64 usage or input-file error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import estimate as est
from .errors import (
    DelayConditionViolated,
    DivergenceDetected,
    DynetidError,
    ExternalPathViolation,
    MissingSignal,
    NoFeasibleSelection,
    NotWellPosed,
    RankDeficientCorrelationBlock,
    RankDeficientRegressor,
    SchemaError,
)
from .graph import select_inputs
from .identifiability import check_identifiability, load_model_set, report_to_dict
from .network import load_network, validate_network
from .sim import add_sensor_noise, load_dataset, save_dataset, simulate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_PRECONDITION = 4
EXIT_USAGE = 64

_PRECONDITION_ERRORS = (
    ExternalPathViolation,
    DelayConditionViolated,
    NoFeasibleSelection,
    RankDeficientRegressor,
    RankDeficientCorrelationBlock,
    MissingSignal,
)


class UsageError(Exception):
    pass


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tf_doc(tf) -> dict:
    return {"num": list(tf.num), "den": list(tf.den)}


def _result_doc(result: est.EstimationResult) -> dict:
    return {
        "format": 1,
        "method": result.method,
        "j": result.j,
        "modules": {str(k): _tf_doc(tf) for k, tf in result.modules.items()},
        "noise_model": _tf_doc(result.noise_model),
        "theta": list(np.asarray(result.theta)),
        "residual_variance": result.residual_variance,
        "regressor_condition_number": result.regressor_condition_number,
        "iterations": result.iterations,
        "converged": result.converged,
        "messages": list(result.messages),
    }


def _cmd_validate(args) -> int:
    net = load_network(args.net)
    report = validate_network(net)
    doc = {
        "format": 1,
        "well_posed": report.well_posed,
        "algebraic_loops": [list(c) for c in report.algebraic_loops],
        "unstable_closed_loop": report.unstable_closed_loop,
        "messages": list(report.messages),
    }
    _write_json(Path(args.out) / "validation.json", doc)
    if args.verbose:
        print(json.dumps(doc, indent=2))
    return EXIT_OK if report.well_posed and not report.unstable_closed_loop else EXIT_VALIDATION


def _parse_variances(text, L):
    if text is None:
        return None
    parts = [float(x) for x in str(text).split(",")]
    if len(parts) == 1:
        return parts * L
    if len(parts) != L:
        raise UsageError(f"--sensor-var needs 1 or {L} values")
    return parts


def _cmd_simulate(args) -> int:
    if args.n is None:
        raise UsageError("simulate requires --n")
    if args.n <= args.burn_in:
        raise UsageError("need --n greater than --burn-in")
    net = load_network(args.net)
    data = simulate(net, N=args.n, seed=args.seed, burn_in=args.burn_in)
    variances = _parse_variances(args.sensor_var, net.L)
    if variances is not None:
        data = add_sensor_noise(data, variances, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out / "dataset.csv")
    if args.verbose:
        print(f"wrote {out / 'dataset.csv'} ({data.N} samples, {data.L} nodes)")
    return EXIT_OK


def _node_arg(value: str):
    """Interpret a CLI node argument as a 1-based index when numeric."""
    text = str(value)
    return int(text) if text.lstrip("-").isdigit() else text


def _cmd_select_inputs(args) -> int:
    net = load_network(args.net)
    cost = None
    if args.cost:
        cost = {_node_arg(k): float(v) for k, v in json.loads(args.cost).items()}
    sel = select_inputs(net, _node_arg(args.j), _node_arg(args.i), cost=cost,
                        require_no_confounders=args.require_no_confounders)
    doc = {
        "format": 1,
        "j": sel.j,
        "i": sel.i,
        "D": list(sel.D),
        "conditions": {"a": sel.satisfied.a, "b": sel.satisfied.b, "c": sel.satisfied.c},
        "confounders": list(sel.confounders),
    }
    _write_json(Path(args.out) / "selection.json", doc)
    if args.verbose:
        print(json.dumps(doc, indent=2))
    return EXIT_OK


def _true_module_errors(net, result: est.EstimationResult) -> dict:
    errors = {}
    for node, tf in result.modules.items():
        truth = net.G[result.j - 1][node - 1]
        if truth is not None:
            errors[node] = est.module_coefficient_error(tf, truth)
    return errors


def _cmd_identify(args) -> int:
    net = load_network(args.net)
    with open(args.spec, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if args.method is not None:
        doc["method"] = args.method
    plan = est.plan_from_dict(doc)
    out = Path(args.out)

    def one_run(seed: int):
        data = simulate(net, N=args.n, seed=seed, burn_in=args.burn_in)
        if plan.sensor_variances is not None:
            variances = list(plan.sensor_variances)
            if len(variances) == 1:
                variances = variances * net.L
            data = add_sensor_noise(data, variances, seed=seed)
        return est.run_plan(data, plan, net)

    if args.mc > 1:
        if args.n is None:
            raise UsageError("identify --mc requires --n")
        seeds = list(range(args.seed, args.seed + args.mc))
        with ThreadPoolExecutor(max_workers=min(8, args.mc)) as pool:
            results = list(pool.map(one_run, seeds))
        per_seed = []
        per_module: dict[int, list[float]] = {}
        for seed, result in zip(seeds, results):
            errors = _true_module_errors(net, result)
            for node, err in errors.items():
                per_module.setdefault(node, []).append(err)
            per_seed.append({
                "seed": seed,
                "converged": result.converged,
                "coefficient_errors": {str(k): v for k, v in errors.items()},
            })
        summary = {
            str(node): {
                "mean": float(np.mean(errs)),
                "stddev": float(np.std(errs, ddof=1)) if len(errs) > 1 else 0.0,
                "median": float(np.median(errs)),
            }
            for node, errs in per_module.items()
        }
        doc = {"format": 1, "runs": per_seed, "summary": summary}
        _write_json(out / "mc-results.json", doc)
        if args.verbose:
            print(json.dumps(summary, indent=2))
        if not all(r.converged for r in results):
            return EXIT_NOT_CONVERGED
        return EXIT_OK

    if args.data is not None:
        data = load_dataset(args.data)
        result = est.run_plan(data, plan, net)
    else:
        if args.n is None:
            raise UsageError("identify requires --data or --n")
        result = one_run(args.seed)
    doc = _result_doc(result)
    _write_json(out / "estimate.json", doc)
    if args.verbose:
        print(json.dumps(doc, indent=2))
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _cmd_check_ident(args) -> int:
    spec = load_model_set(args.spec)
    report = check_identifiability(spec, seed=args.seed)
    doc = report_to_dict(report)
    _write_json(Path(args.out) / "identifiability.json", doc)
    if args.verbose:
        print(json.dumps(doc, indent=2))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynetid",
        description="Simulate linear dynamic networks and identify their modules.",
    )
    parser.add_argument("--verbose", action="store_true", help="echo results to stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, net=True):
        if net:
            p.add_argument("--net", required=True, help="network description JSON")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("validate", help="check well-posedness and stability")
    common(p)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("simulate", help="generate a dataset CSV + sidecar")
    common(p)
    p.add_argument("--n", type=int, default=None, help="samples after burn-in")
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--sensor-var", default=None,
                   help="sensor-noise variance (scalar or comma list per node)")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("select-inputs", help="search a minimal predictor-input set")
    common(p)
    p.add_argument("--j", required=True, help="output node (index or name)")
    p.add_argument("--i", required=True, help="target module input node")
    p.add_argument("--require-no-confounders", action="store_true")
    p.add_argument("--cost", default=None, help="JSON object of per-node costs")
    p.set_defaults(fn=_cmd_select_inputs)

    p = sub.add_parser("identify", help="run an estimation spec")
    common(p)
    p.add_argument("--spec", required=True, help="estimation spec JSON")
    p.add_argument("--data", default=None, help="dataset CSV (else simulate)")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--mc", type=int, default=1, help="Monte Carlo repetitions")
    p.add_argument("--method", default=None,
                   help="override the method in the spec file")
    p.set_defaults(fn=_cmd_identify)

    p = sub.add_parser("check-ident", help="network identifiability report")
    p.add_argument("--spec", required=True, help="model set JSON")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_check_ident)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotWellPosed, DivergenceDetected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _PRECONDITION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except DynetidError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
