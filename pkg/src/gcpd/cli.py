"""Command-line driver: synthesize, decompose, compare, verify.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
A line-oriented key=value config file (--config) supplies defaults for any
flag; explicit flags win. Every output embeds the fully resolved run manifest,
and `decompose --manifest saved.json` replays a run from one.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import statistics
import sys
from pathlib import Path

from . import data as gdata
from . import verify as gverify
from .bregman import GeneratorSpec, RegularizerSpec
from .errors import ConfigError, DataError, DivergenceError, GcpdError
from .losses import KINDS as LOSS_KINDS
from .losses import LossSpec, check_data_domain
from .solver import SolverConfig, inertial_step, plain_step, run

_DENSIFY_LIMIT = 1 << 22

# Stepsizes mirroring the experiment defaults per loss family.
_DEFAULT_ETA = {
    "gaussian": 0.1,
    "gamma": 0.1,
    "poisson-identity": 0.2,
    "poisson-log": 0.2,
    "bernoulli-odds": 0.2,
    "bernoulli-logit": 0.2,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_config_file(path) -> dict:
    """Line-oriented key=value pairs; '#' starts a comment."""
    out = {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{p}:{lineno}: expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _fill(args, config_values: dict, casts: dict):
    """Apply config-file values where flags were not given; flags win."""
    for key, value in config_values.items():
        if key not in casts:
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, key, None) is None:
            cast = casts[key]
            setattr(args, key, cast(value))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _shape(text) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in str(text).replace("x", ",").split(",") if t)
    except ValueError:
        raise UsageError(f"bad shape {text!r}; use e.g. 20,15,20")


def _build_parser() -> _Parser:
    parser = _Parser(prog="gcpd", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    syn = sub.add_parser("synthesize", help="generate a planted-model tensor")
    syn.add_argument("--shape", type=_shape, default=None)
    syn.add_argument("--rank", type=int, default=None)
    syn.add_argument("--dist", type=str, default=None,
                     choices=list(gdata.DISTRIBUTIONS))
    syn.add_argument("--seed", type=int, default=None)
    syn.add_argument("--amax", type=float, default=None)
    syn.add_argument("--sigma", type=float, default=None)
    syn.add_argument("--out", type=str, default=None,
                     help="output prefix: writes <out>.tns and <out>.factor<n>.csv")
    syn.add_argument("--config", type=str, default=None)

    dec = sub.add_parser("decompose", help="fit a generalized CP model")
    _add_solver_flags(dec)
    dec.add_argument("--manifest", type=str, default=None,
                     help="replay a saved run manifest (other solver flags ignored)")

    cmp_ = sub.add_parser("compare", help="method-by-seed grid on one instance")
    _add_solver_flags(cmp_, include_outputs=False)
    cmp_.add_argument("--methods", type=str, default=None,
                      help="comma list like inertial-saga,plain-sgd")
    cmp_.add_argument("--seeds", type=int, default=None, help="number of seeds")
    cmp_.add_argument("--threshold", type=float, default=None,
                      help="stop metric threshold for iterations-to-threshold")
    cmp_.add_argument("--metric", type=str, default=None, choices=["nre", "mse"])
    cmp_.add_argument("--out", type=str, default=None, help="summary CSV path")

    ver = sub.add_parser("verify", help="run the oracle check suites")
    ver.add_argument("--quick", action="store_true")
    return parser


def _add_solver_flags(p, include_outputs=True):
    p.add_argument("--input", type=str, default=None, help=".tns tensor path")
    p.add_argument("--shape", type=_shape, default=None,
                   help="declared shape when the file has no shape header")
    p.add_argument("--loss", type=str, default=None, choices=list(LOSS_KINDS))
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--generator", type=str, default=None,
                   choices=["squared-euclidean", "negative-entropy"])
    p.add_argument("--regularizer", type=str, default=None,
                   choices=["zero", "nonnegative-indicator", "squared-l2", "l1"])
    p.add_argument("--reg-weight", type=float, default=None)
    p.add_argument("--estimator", type=str, default=None,
                   choices=["full", "sgd", "saga", "sarah"])
    p.add_argument("--rank", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--c1", type=float, default=None)
    p.add_argument("--c2", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--p", type=int, default=None, help="sarah restart period")
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--eval-samples", type=int, default=None,
                   help="sampled objective size (required above desk scale)")
    p.add_argument("--init-max", type=float, default=None,
                   help="initial factor entries are uniform on (0, init-max]")
    p.add_argument("--max-step", type=float, default=None,
                   help="per-coordinate cap on |eta*grad|; 'inf' disables")
    p.add_argument("--truth", type=str, default=None,
                   help="planted factor prefix for MSE reporting")
    p.add_argument("--diagnostics", action="store_const", const=True, default=None)
    p.add_argument("--lyapunov", action="store_const", const=True, default=None)
    p.add_argument("--no-timing", action="store_const", const=True, default=None,
                   dest="no_timing")
    p.add_argument("--config", type=str, default=None)
    if include_outputs:
        p.add_argument("--trace", type=str, default=None, help="trace output path")
        p.add_argument("--trace-format", type=str, default=None,
                       choices=["csv", "json"], dest="trace_format")
        p.add_argument("--model-out", type=str, default=None, dest="model_out")


_SOLVER_CASTS = {
    "input": str, "shape": _shape, "loss": str, "epsilon": float, "generator": str,
    "regularizer": str, "reg_weight": float, "estimator": str, "rank": int,
    "eta": float, "c1": float, "c2": float, "iters": int, "tol": float, "seed": int,
    "batch": int, "p": int, "eval_every": int, "eval_samples": int,
    "init_max": float, "max_step": float, "truth": str, "diagnostics": _bool,
    "lyapunov": _bool, "no_timing": _bool, "trace": str, "trace_format": str,
    "model_out": str, "methods": str, "seeds": int, "threshold": float,
    "metric": str, "out": str, "dist": str, "amax": float, "sigma": float,
}


def _solver_config_from_args(args) -> SolverConfig:
    if args.loss is None:
        raise UsageError("--loss is required")
    if args.rank is None:
        raise UsageError("--rank is required")
    loss = LossSpec(args.loss, epsilon=args.epsilon if args.epsilon is not None else 1e-9)
    gen_kind = args.generator
    if gen_kind is None:
        gen_kind = "negative-entropy" if loss.nonnegative else "squared-euclidean"
    reg_kind = args.regularizer
    if reg_kind is None:
        reg_kind = "nonnegative-indicator" if loss.nonnegative else "zero"
    reg = RegularizerSpec(reg_kind,
                          weight=args.reg_weight if args.reg_weight is not None else 0.0,
                          nonnegative=(reg_kind in ("squared-l2", "l1")
                                       and loss.nonnegative))
    eta = args.eta if args.eta is not None else _DEFAULT_ETA[loss.kind]
    return SolverConfig(
        rank=args.rank,
        loss=loss,
        generator=GeneratorSpec(gen_kind),
        regularizer=reg,
        estimator=args.estimator if args.estimator is not None else "saga",
        batch=args.batch,
        sarah_p=args.p,
        eta=eta,
        c1=args.c1 if args.c1 is not None else 0.6,
        c2=args.c2 if args.c2 is not None else 0.8,
        max_iters=args.iters if args.iters is not None else 5000,
        tol=args.tol if args.tol is not None else 1e-10,
        eval_every=args.eval_every,
        eval_samples=args.eval_samples,
        seed=args.seed if args.seed is not None else 0,
        init_max=args.init_max if args.init_max is not None else 0.5,
        max_step=args.max_step,
        diagnostics=bool(args.diagnostics),
        lyapunov=bool(args.lyapunov),
        record_timing=not bool(args.no_timing),
    )


def _load_tensor(path, shape):
    if path is None:
        raise UsageError("--input is required")
    tensor = gdata.read_tns(path, shape=shape)
    # Small tensors are densified once: exact objectives and vectorized fibers.
    if tensor.shape.total <= _DENSIFY_LIMIT:
        return tensor.to_dense()
    return tensor


def cmd_synthesize(args) -> int:
    if args.config:
        _fill(args, _read_config_file(args.config), _SOLVER_CASTS | {"shape": _shape,
              "rank": int, "seed": int, "out": str})
    for flag in ("shape", "rank", "dist", "out"):
        if getattr(args, flag) is None:
            raise UsageError(f"--{flag} is required")
    spec = gdata.SyntheticSpec(
        shape=args.shape, rank=args.rank, distribution=args.dist,
        a_max=args.amax if args.amax is not None else 0.5,
        noise_sigma=args.sigma if args.sigma is not None else 0.1,
        seed=args.seed if args.seed is not None else 0)
    tensor, model = gdata.generate(spec)
    manifest = {
        "command": "synthesize",
        "synthetic": dataclasses.asdict(spec),
        "gamma_shape_parameter": 1.0,
        "outputs": {"tensor": str(args.out) + ".tns",
                    "factors": str(args.out) + ".factor<n>.csv"},
    }
    gdata.write_tns(tensor, str(args.out) + ".tns", manifest=manifest)
    gdata.write_factors(model, args.out, manifest=manifest)
    print(json.dumps(manifest, sort_keys=True, indent=1))
    return 0


def _run_decompose(config: SolverConfig, input_path, shape, truth_path):
    tensor = _load_tensor(input_path, shape)
    config = config.resolved(tensor.shape)
    check_data_domain(config.loss, tensor.values)
    truth = None
    if truth_path:
        truth = gdata.read_factors(truth_path, order=tensor.shape.order)
    trace, model = run(config, tensor, truth=truth)
    return tensor, config, trace, model


def cmd_decompose(args) -> int:
    if args.manifest:
        saved = json.loads(Path(args.manifest).read_text())
        if "config" not in saved:
            raise DataError(f"{args.manifest} does not look like a run manifest")
        config = SolverConfig.from_dict(saved["config"])
        input_path = saved["input"]["path"]
        shape = tuple(saved["input"]["shape"]) if saved["input"].get("shape") else None
        truth_path = saved.get("truth")
        trace_path = args.trace or saved["outputs"].get("trace")
        trace_format = args.trace_format or saved["outputs"].get("trace_format", "csv")
        model_out = args.model_out or saved["outputs"].get("model")
    else:
        if args.config:
            _fill(args, _read_config_file(args.config), _SOLVER_CASTS)
        config = _solver_config_from_args(args)
        input_path = args.input
        shape = args.shape
        truth_path = args.truth
        trace_path = args.trace
        trace_format = args.trace_format or "csv"
        model_out = args.model_out

    tensor, config, trace, model = _run_decompose(config, input_path, shape, truth_path)
    manifest = {
        "command": "decompose",
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "input": {"path": str(input_path), "shape": list(tensor.shape.dims)},
        "truth": str(truth_path) if truth_path else None,
        "outputs": {"trace": str(trace_path) if trace_path else None,
                    "trace_format": trace_format,
                    "model": str(model_out) if model_out else None},
        "extrapolation_check": config.extrapolation_check,
    }
    trace.manifest = manifest
    if trace_path:
        gdata.write_trace(trace, trace_path, tensor.shape.order, fmt=trace_format)
    if model_out:
        gdata.write_factors(model, model_out, manifest=manifest)
        Path(str(model_out) + ".manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    first, last = trace.records[0], trace.records[-1]
    print(json.dumps(manifest, sort_keys=True, indent=1))
    print(f"iterations: {last.iteration}  nre: {first.nre:.6g} -> {last.nre:.6g}"
          + (f"  mse: {last.mse_mean:.3g}" if last.mse_mean is not None else ""))
    return 0


def _parse_methods(text) -> list[tuple[str, str]]:
    methods = []
    for token in str(text).split(","):
        token = token.strip()
        if not token:
            continue
        head, _, estimator = token.partition("-")
        if head not in ("inertial", "plain") or estimator not in (
                "full", "sgd", "saga", "sarah"):
            raise UsageError(
                f"bad method {token!r}; use {{inertial|plain}}-{{full|sgd|saga|sarah}}")
        methods.append((head, estimator))
    if not methods:
        raise UsageError("--methods must name at least one method")
    return methods


def iterations_to_threshold(trace, threshold: float, metric: str = "nre"):
    """First evaluated iteration at or below the threshold, or None."""
    for rec in trace.records:
        value = rec.nre if metric == "nre" else rec.mse_mean
        if value is not None and value <= threshold:
            return rec.iteration
    return None


def cmd_compare(args) -> int:
    if args.config:
        _fill(args, _read_config_file(args.config), _SOLVER_CASTS)
    if args.methods is None:
        raise UsageError("--methods is required")
    if args.threshold is None:
        raise UsageError("--threshold is required")
    methods = _parse_methods(args.methods)
    n_seeds = args.seeds if args.seeds is not None else 5
    metric = args.metric or "nre"
    base = _solver_config_from_args(args)
    tensor = _load_tensor(args.input, args.shape)
    truth = (gdata.read_factors(args.truth, order=tensor.shape.order)
             if args.truth else None)
    if metric == "mse" and truth is None:
        raise UsageError("--metric mse needs --truth")

    rows = []
    for head, estimator in methods:
        iters = []
        finals_nre = []
        finals_mse = []
        for s in range(n_seeds):
            config = dataclasses.replace(
                base, estimator=estimator, seed=base.seed + s,
                c1=base.c1 if head == "inertial" else 0.0,
                c2=base.c2 if head == "inertial" else 0.0)
            step = inertial_step if head == "inertial" else plain_step
            trace, _ = run(config.resolved(tensor.shape), tensor, truth=truth, step=step)
            hit = iterations_to_threshold(trace, args.threshold, metric)
            iters.append(hit if hit is not None else float("inf"))
            finals_nre.append(trace.records[-1].nre)
            if truth is not None:
                finals_mse.append(trace.records[-1].mse_mean)
        med = statistics.median(iters)
        rows.append({
            "method": f"{head}-{estimator}",
            "seeds": n_seeds,
            "median_iters_to_threshold": "budget" if med == float("inf") else int(med),
            "final_nre_median": statistics.median(finals_nre),
            "final_mse_median": (statistics.median(finals_mse)
                                 if finals_mse else None),
        })

    lines = ["method,seeds,median_iters_to_threshold,final_nre_median,final_mse_median"]
    for row in rows:
        mse_cell = "" if row["final_mse_median"] is None else f"{row['final_mse_median']:.17g}"
        lines.append(f"{row['method']},{row['seeds']},{row['median_iters_to_threshold']},"
                     f"{row['final_nre_median']:.17g},{mse_cell}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_verify(args) -> int:
    results = gverify.run_all(quick=args.quick)
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 3


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synthesize":
            return cmd_synthesize(args)
        if args.command == "decompose":
            return cmd_decompose(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "verify":
            return cmd_verify(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, GcpdError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
