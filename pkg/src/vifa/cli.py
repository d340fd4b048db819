"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical error.
Outputs are written as ``<name>.partial`` and renamed once complete.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from vifa import experiments
from vifa.data import DataError, GeneratingParams, load_csv, simulate, template, write_simulation
from vifa.objective import ConfigError, NumericalError
from vifa.postfit import elbow_hint, map_scores, scree_curve
from vifa.rotation import (EQUIVALENCE_THRESHOLD, RotationError, align, align_correlations,
                           equivalent, geomin_rotate)
from vifa.trainer import FitConfig, FittedModel, fit

log = logging.getLogger("vifa")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flag name -> FitConfig field
FIT_FLAGS = {
    "latent_dim": "P", "iw_samples": "R", "mc_samples": "S", "batch_size": "M",
    "learning_rate": "eta", "anneal_iters": "anneal_tau", "seed": "seed",
    "weight_mode": "weight_mode", "max_iters": "max_iters", "hidden_size": "hidden_size",
    "window": "window", "patience": "patience", "fallback_learning_rate": "fallback_eta",
}


def _add_fit_flags(p, need_latent=True):
    p.add_argument("--config", help="JSON file with FitConfig keys; flags override it")
    if need_latent:
        p.add_argument("--latent-dim", type=int, help="number of factors P")
    p.add_argument("--iw-samples", type=int, help="importance samples R")
    p.add_argument("--mc-samples", type=int, help="Monte Carlo samples S")
    p.add_argument("--batch-size", type=int, help="mini-batch size M")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--fallback-learning-rate", type=float,
                   help="rate for one restart after divergence (default 0.005; 0 disables)")
    p.add_argument("--anneal-iters", type=int)
    p.add_argument("--weight-mode", choices=["algorithm1", "pointwise"])
    p.add_argument("--max-iters", type=int)
    p.add_argument("--hidden-size", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--patience", type=int)


def build_config(args, P=None) -> FitConfig:
    cfg = {}
    if getattr(args, "config", None):
        cfg.update(json.loads(Path(args.config).read_text()))
    for flag, key in FIT_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = v
    if P is not None:
        cfg["P"] = P
    if "P" not in cfg:
        raise UsageError("the latent dimension is required (--latent-dim or 'P' in --config)")
    return FitConfig.from_dict(cfg)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Outputs:
    """Collects output files, writing each via a .partial name first."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []

    def path(self, name) -> Path:
        return self.dir / name

    def write_text(self, name, text):
        final = self.dir / name
        tmp = final.with_name(final.name + ".partial")
        tmp.write_text(text)
        tmp.replace(final)
        self.files.append(str(final))
        return final

    def write_json(self, name, obj):
        return self.write_text(name, json.dumps(obj, indent=1) + "\n")

    def write_csv(self, name, rows, header=None):
        final = self.dir / name
        tmp = final.with_name(final.name + ".partial")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if header:
                w.writerow(header)
            w.writerows(rows)
        tmp.replace(final)
        self.files.append(str(final))
        return final

    def write_matrix(self, name, M, prefix="F"):
        M = np.atleast_2d(M)
        header = [f"{prefix}{p + 1}" for p in range(M.shape[1])]
        return self.write_csv(name, [[repr(float(v)) for v in row] for row in M], header)

    def manifest(self, command, args, config=None, seeds=None, inputs=(), started=None):
        man = {
            "command": command,
            "argv": sys.argv[1:],
            "args": {k: v for k, v in vars(args).items() if k != "func"},
            "config": config,
            "seeds": seeds or {},
            "inputs": {str(p): _sha256(p) for p in inputs},
            "outputs": list(self.files),
            "wall_seconds": None if started is None else time.perf_counter() - started,
        }
        final = self.dir / "manifest.json"
        tmp = final.with_name("manifest.json.partial")
        tmp.write_text(json.dumps(man, indent=1, default=str) + "\n")
        tmp.replace(final)


def _load_data(args):
    return load_csv(args.data, delimiter=args.delimiter)


def cmd_fit(args):
    started = time.perf_counter()
    cfg = build_config(args)
    data = _load_data(args)
    out = Outputs(args.out_dir)
    model = fit(data, cfg)
    out.write_json("model.json", model.to_json())
    out.write_csv("trace.csv", [[t, repr(v)] for t, v in enumerate(model.trace)], ["iteration", "iw_elbo"])
    out.manifest("fit", args, dataclasses.asdict(cfg), {"fit": cfg.seed}, [args.data], started)
    print(f"fitted P={cfg.P} in {model.iterations_run} iterations "
          f"({'converged' if model.converged else 'not converged'}) -> {out.path('model.json')}")


def _generator(args) -> GeneratingParams:
    if args.spec:
        try:
            return GeneratingParams.from_json(json.loads(Path(args.spec).read_text()))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"invalid generator spec {args.spec}: {exc}") from exc
    return template(args.template, args.items, args.seed)


def cmd_simulate(args):
    started = time.perf_counter()
    gp = _generator(args)
    data, scores = simulate(gp, args.n, args.seed, return_scores=True)
    out = Outputs(args.out_dir)
    csv_path, json_path = out.path("data.csv"), out.path("truth.json")
    write_simulation(data, gp, args.seed, csv_path, json_path)
    out.files += [str(csv_path), str(json_path)]
    out.write_matrix("scores.csv", scores)
    out.manifest("simulate", args, None, {"simulate": args.seed}, [args.spec] if args.spec else [], started)
    print(f"wrote {data.n_respondents}x{data.n_items} responses -> {csv_path}")


def _p_list(args):
    if args.latent_dims:
        return [int(v) for v in args.latent_dims.split(",")]
    return list(range(args.p_min, args.p_max + 1))


def cmd_scree(args):
    started = time.perf_counter()
    data = _load_data(args)
    P_list = _p_list(args)
    cfg = build_config(args, P=P_list[0])
    points = scree_curve(data, P_list, cfg, args.holdout_fraction, args.r_eval, args.seed,
                         experiments.max_workers(args.jobs))
    out = Outputs(args.out_dir)
    out.write_csv("scree.csv", [[p.P, repr(p.neg_approx_loglik)] for p in points], ["P", "neg_approx_loglik"])
    hint = elbow_hint(points)
    out.write_json("scree.json", {"points": [dataclasses.asdict(p) for p in points], "elbow_hint": hint})
    out.manifest("scree", args, dataclasses.asdict(cfg), {"root": args.seed}, [args.data], started)
    for p in points:
        print(f"P={p.P}\t{p.neg_approx_loglik:.3f}")
    if hint is not None:
        print(f"largest curvature at P={hint} (hint only; inspect the curve)")


def _rotate(model: FittedModel, args):
    try:
        return geomin_rotate(model.item_bank.loadings, epsilon=args.geomin_epsilon,
                             n_starts=args.starts, seed=args.seed)
    except RotationError as exc:
        log.warning("%s; reporting best partial solution", exc)
        return exc.best


def cmd_rotate(args):
    started = time.perf_counter()
    model = FittedModel.load(args.model)
    sol = _rotate(model, args)
    out = Outputs(args.out_dir)
    out.write_matrix("rotated_loadings.csv", sol.rotated_loadings)
    out.write_matrix("factor_corr.csv", sol.factor_corr)
    out.write_matrix("transform.csv", sol.transform)
    out.write_json("rotation.json", {
        "criterion_value": sol.criterion_value, "converged": sol.converged, "start": sol.start,
        "transform": sol.transform.tolist(), "factor_corr": sol.factor_corr.tolist(),
    })
    out.manifest("rotate", args, None, {"rotation": args.seed}, [args.model], started)
    print(f"geomin criterion {sol.criterion_value:.6f} (start {sol.start})")


def cmd_compare(args):
    started = time.perf_counter()
    a, b = FittedModel.load(args.model_a), FittedModel.load(args.model_b)
    if a.item_bank.loadings.shape != b.item_bank.loadings.shape:
        raise DataError(f"incompatible loadings shapes {a.item_bank.loadings.shape} "
                        f"and {b.item_bank.loadings.shape}")
    sa, sb = _rotate(a, args), _rotate(b, args)
    # the reference keeps its own sign convention: positive column sums
    ref_rec, ref = align(sa.rotated_loadings, sa.rotated_loadings)
    rec, aligned = align(ref, sb.rotated_loadings)
    eq = equivalent(rec, ref, aligned, args.threshold, args.rule)
    out = Outputs(args.out_dir)
    out.write_matrix("reference_loadings.csv", ref)
    out.write_matrix("aligned_loadings.csv", aligned)
    out.write_matrix("aligned_factor_corr.csv", align_correlations(sb.factor_corr, rec))
    out.write_json("comparison.json", {
        "alignment": rec.to_json(), "rule": args.rule, "threshold": args.threshold, "equivalent": eq,
    })
    out.manifest("compare", args, None, {"rotation": args.seed}, [args.model_a, args.model_b], started)
    print(f"mean congruence {rec.mean_congruence:.4f}: {'equivalent' if eq else 'not equivalent'}")


def cmd_score(args):
    started = time.perf_counter()
    model = FittedModel.load(args.model)
    data = load_csv(args.data, delimiter=args.delimiter, category_counts=model.item_bank.category_counts)
    if model.encoder.input_dim != int(data.category_counts.sum()):
        raise DataError("data encoding width does not match the fitted model")
    sol = _rotate(model, args) if args.rotate else None
    scores = map_scores(model, data, rotation=sol)
    out = Outputs(args.out_dir)
    out.write_matrix("scores.csv", scores)
    out.manifest("score", args, None, {"rotation": args.seed}, [args.model, args.data], started)
    print(f"wrote {scores.shape[0]}x{scores.shape[1]} scores")


def cmd_replicate(args):
    started = time.perf_counter()
    gp = _generator(args)
    cfg = build_config(args, P=gp.loadings.shape[1])
    out = Outputs(args.out_dir)
    reports, times = {}, {}
    for n in [int(v) for v in args.n.split(",")]:
        results, failures = experiments.replicate(gp, n, args.replications, cfg, args.seed,
                                                  args.jobs, args.starts)
        if failures:
            log.warning("N=%d: %d replication(s) failed and were excluded", n, len(failures))
        if len(results) < 2:
            raise NumericalError(f"N={n}: fewer than two successful replications")
        reports[str(n)] = experiments.summarize(gp, results, failures)
        times[str(n)] = experiments.timings(results)
        print(f"N={n}: loadings RMSE {reports[str(n)]['rmse']['loadings']:.4f}, "
              f"median loading MSE {reports[str(n)]['median_loadings_mse']:.5f}")
    out.write_json("report.json", {"config": dataclasses.asdict(cfg), "root_seed": args.seed, "by_n": reports})
    out.write_json("timings.json", times)
    out.manifest("replicate", args, dataclasses.asdict(cfg), {"root": args.seed},
                 [args.spec] if args.spec else [], started)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vifa", description="Amortized importance-weighted variational item factor analysis")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_flags(p):
        p.add_argument("--data", required=True, help="CSV of integer response codes")
        p.add_argument("--delimiter", default=",")

    def rot_flags(p):
        p.add_argument("--starts", type=int, default=30, help="geomin random starts")
        p.add_argument("--geomin-epsilon", type=float, default=0.01)

    p = sub.add_parser("fit", help="fit the model to a response matrix")
    data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_fit)

    def gen_flags(p):
        p.add_argument("--spec", help="generator JSON (loadings, intercepts, factor_corr, scaling)")
        p.add_argument("--template", default="five-factor", choices=["five-factor", "ten-factor", "binary"])
        p.add_argument("--items", type=int, help="item count for the binary template")

    p = sub.add_parser("simulate", help="simulate graded responses")
    gen_flags(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("scree", help="holdout log-likelihood scree curve")
    data_flags(p)
    _add_fit_flags(p, need_latent=False)
    p.add_argument("--p-min", type=int, default=1)
    p.add_argument("--p-max", type=int, default=10)
    p.add_argument("--latent-dims", help="comma separated list, overrides --p-min/--p-max")
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.add_argument("--r-eval", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_scree)

    p = sub.add_parser("rotate", help="geomin-rotate a fitted model")
    p.add_argument("--model", required=True)
    rot_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_rotate)

    p = sub.add_parser("compare", help="align two fitted solutions and test equivalence")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    rot_flags(p)
    p.add_argument("--threshold", type=float, default=EQUIVALENCE_THRESHOLD)
    p.add_argument("--rule", choices=["mean", "min", "matrix"], default="mean")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("score", help="MAP factor scores")
    p.add_argument("--model", required=True)
    data_flags(p)
    p.add_argument("--rotate", action="store_true", help="express scores in the geomin factor space")
    rot_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("replicate", help="simulation study: bias/MSE over replications")
    gen_flags(p)
    _add_fit_flags(p, need_latent=False)
    p.add_argument("--n", required=True, help="sample size(s), comma separated")
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--starts", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"vifa: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"vifa: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError, RotationError) as exc:
        print(f"vifa: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
