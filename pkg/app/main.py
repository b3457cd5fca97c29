"""slln-lab command line: one subcommand per experiment, artifacts under --out."""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from app.config import TOOL_VERSION, settings
from models.dependence import Normal, PhiMixStructure
from models.errors import ConfigError, LabError, NumericError, PreconditionError, UnsupportedError
from models.experiment import SUBCOMMANDS, ExperimentConfig, build_config, load_config_file
from models.tails import MomentFunctional
from services.artifacts import artifact_service
from services.convergence_lab import convergence_service
from services.counterexample import counterexample_service
from services.dependence_gen import dependence_service
from services.domination import domination_service
from services.rv_funcs import rv_service

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PRECONDITION = 2
EXIT_NUMERIC = 3

Summary = Dict[str, Any]


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def run_conjugate(config: ExperimentConfig, out: Path) -> Summary:
    pair = rv_service.de_bruijn_conjugate(config.L_spec, config.method)
    report = rv_service.verify_conjugate_pair(pair, config.grid_points, config.tol)
    x = np.asarray(report.x)
    artifact_service.write_csv(
        out, "conjugate.csv", ["x", "L", "Lt", "ratio", "inverse_ratio"],
        zip(report.x, pair.L.value(x).tolist(), pair.Lt.value(x).tolist(), report.ratios, report.inverse_ratios),
    )
    artifact_service.write_dat(out, "conjugate.dat", report.x, report.ratios)
    return {"L": report.L, "Lt": report.Lt, "provenance": report.provenance,
            "final_ratio": report.ratios[-1], "pass": report.pass_}


def run_galambos(config: ExperimentConfig, out: Path) -> Summary:
    L = config.L_spec
    report = rv_service.check_galambos(L, config.grid_points, config.tol)
    try:
        threshold = domination_service.galambos_threshold(L, config.p, config.grid_points)
    except PreconditionError as e:
        logger.warning(f"No domination threshold on this grid: {e}")
        threshold = math.nan
    artifact_service.write_csv(out, "galambos.csv", ["x", "r"], zip(report.x, report.values))
    artifact_service.write_dat(out, "galambos.dat", report.x, np.abs(report.values).tolist())
    return {"L": report.spec, "final_r": report.values[-1], "threshold_B": threshold, "pass": report.pass_}


def run_generate(config: ExperimentConfig, out: Path) -> Summary:
    model = dependence_service.build_model(config.dependence_model)
    path = dependence_service.generate_path(model, config.n, config.seed)
    index = list(range(1, config.n + 1))
    artifact_service.write_csv(out, "path.csv", ["i", "value"], zip(index, path.values.tolist()))
    artifact_service.write_dat(out, "path.dat", index, path.values.tolist())
    return {"model": str(model), "fingerprint": path.fingerprint, "n": config.n,
            "sample_mean": float(path.values.mean())}


def run_var_ratio(config: ExperimentConfig, out: Path) -> Summary:
    model = dependence_service.build_model(config.dependence_model)
    report = dependence_service.variance_domination_ratio(
        model, config.transforms, config.k_list, config.l_list, config.reps, config.seed,
        workers=config.workers,
    )
    artifact_service.write_csv(
        out, "var_ratio.csv", ["transform", "k", "l", "ratio", "ci_halfwidth", "declared_C"],
        ([c["transform"], c["k"], c["l"], r, h, report.declared_C]
         for c, r, h in zip(report.cells, report.ratio_estimates, report.ci_halfwidths)),
    )
    return {"C_hat": report.C_hat, "declared_C": report.declared_C, "confidence": report.confidence,
            "pass": report.pass_}


def run_phi(config: ExperimentConfig, out: Path) -> Summary:
    model = dependence_service.build_model(config.dependence_model)
    if not isinstance(model.structure, PhiMixStructure):
        raise UnsupportedError(f"phi coefficients need a Markov chain model, got {model}")
    chain = model.structure.chain
    report = dependence_service.phi_series_check(chain, config.n)
    phi = dependence_service.phi_dyadic(chain, config.n)
    ks = list(range(config.n + 1))
    artifact_service.write_csv(
        out, "phi.csv", ["k", "n", "phi", "sqrt_phi", "partial_sum"],
        zip(ks, [2 ** k for k in ks], phi.tolist(), report.terms, report.partial_sums),
    )
    lags = list(range(0, 33))
    artifact_service.write_csv(out, "phi_lags.csv", ["n", "phi"],
                               ((n, dependence_service.phi_coefficient(chain, n)) for n in lags))
    artifact_service.write_dat(out, "phi.dat", [2 ** k for k in ks], phi.tolist())
    return {"partial_sum": report.partial_sum,
            "converged_at": report.converged_at if report.converged_at is not None else "none",
            "declared_C": dependence_service.declared_C(model), "verdict": report.verdict}


def run_moment(config: ExperimentConfig, out: Path) -> Summary:
    functional = MomentFunctional(p=config.p, L=config.L_spec, weight=config.weight)
    tail = config.tail_function
    result = domination_service.moment_via_tail(functional, tail)
    artifact_service.write_csv(out, "moment_panels.csv", ["lo", "hi", "value"],
                               ((pl["lo"], pl["hi"], pl["value"]) for pl in result.panels))
    summary: Summary = {"tail": tail.to_string(), "weight": config.weight, "value": result.value,
                        "diverged": result.diverged, "head": result.head, "body": result.body}
    if config.model is not None:
        model = dependence_service.build_model(config.dependence_model)
        report = domination_service.check_uniform_moment(model, functional)
        artifact_service.write_csv(out, "uniform_moment.csv", ["n", "value"], zip(report.indices, report.values))
        artifact_service.write_dat(out, "uniform_moment.dat", report.indices, report.values)
        summary.update({"sup_value": report.sup_value, "finite": report.finite, "witness": report.witness})
    return summary


def run_baum_katz(config: ExperimentConfig, out: Path) -> Summary:
    model = dependence_service.build_model(config.dependence_model)
    results = convergence_service.baum_katz_series(
        model, config.p, config.alpha_value, config.L_spec, config.eps, config.K, config.reps,
        config.seed, workers=config.workers,
    )
    rows, dyadic_rows = [], []
    summary: Summary = {}
    for i, est in enumerate(results):
        for j, n in enumerate(est.n):
            rows.append([n, est.eps, est.p_hat[j], est.ci_lo[j], est.ci_hi[j], est.weights[j],
                         est.partial_sums[j], est.verdict])
        for k, (term, partial) in enumerate(zip(est.dyadic_terms, est.dyadic_partial_sums), start=1):
            dyadic_rows.append([k, est.eps, term, partial, est.dyadic_verdict])
        artifact_service.write_dat(out, f"baum_katz_eps{i}.dat", est.n, est.partial_sums)
        tag = f"eps={est.eps!r}"
        summary[f"{tag} verdict"] = est.verdict
        summary[f"{tag} last_ratio"] = est.last_increment_ratio
        summary[f"{tag} forms_agree"] = est.forms_agree
    artifact_service.write_csv(
        out, "baum_katz.csv", ["n", "eps", "p_hat", "ci_lo", "ci_hi", "weight", "partial_sum", "verdict"], rows,
    )
    artifact_service.write_csv(out, "baum_katz_dyadic.csv", ["k", "eps", "term", "partial_sum", "verdict"],
                               dyadic_rows)
    return summary


def _checkpoints(n: int) -> List[int]:
    points = [2 ** k for k in range(n.bit_length()) if 2 ** k <= n]
    if points[-1] != n:
        points.append(n)
    return points


def run_slln(config: ExperimentConfig, out: Path) -> Summary:
    model = dependence_service.build_model(config.dependence_model)
    Lt = rv_service.de_bruijn_conjugate(config.L_spec).Lt
    sigma = model.marginal.sigma if isinstance(model.marginal, Normal) else None
    traj = convergence_service.slln_trajectory(
        model, config.p, Lt, _checkpoints(config.n), config.seeds, workers=config.workers, sigma=sigma,
    )
    artifact_service.write_csv(
        out, "trajectory.csv", ["n", "seed", "normalized_sum"],
        ([n, seed, traj.values[s][c]] for s, seed in enumerate(traj.seeds) for c, n in enumerate(traj.checkpoints)),
    )
    for s, seed in enumerate(traj.seeds):
        artifact_service.write_dat(out, f"trajectory_seed{seed}.dat", traj.checkpoints, traj.values[s])
    summary: Summary = {"final_max_abs": traj.final_max_abs}
    if traj.envelope is not None:
        summary["lil_envelope"] = traj.envelope
    return summary


def run_decomposition_check(config: ExperimentConfig, out: Path) -> Summary:
    model = dependence_service.build_model(config.dependence_model)
    Lt = rv_service.de_bruijn_conjugate(config.L_spec).Lt
    norm = rv_service.make_normalizer(config.p, config.alpha_value, Lt)
    reports = convergence_service.decomposition_check_model(model, norm, config.n, config.seeds)
    seeds = [s for s in config.seeds for _ in (0, 1)]
    artifact_service.write_csv(out, "decomposition.csv", ["seed", "part", "lhs", "rhs", "holds"],
                               ([seed, r.part, r.lhs, r.rhs, r.holds] for seed, r in zip(seeds, reports)))
    held = sum(r.holds for r in reports)
    return {"checked": len(reports), "held": held, "all_hold": held == len(reports)}


def run_counterexample(config: ExperimentConfig, out: Path) -> Summary:
    fam = counterexample_service.build_counterexample(config.p, config.L_spec, B=config.B)
    ns = [10.0 ** k for k in range(1, 25) if 10.0 ** k >= fam.B]
    table = counterexample_service.dichotomy_table(fam, ns, bc_limit=config.n)
    columns = ["n", "q_n", "double_weight", "single_weight", "bc_partial_sum"]
    artifact_service.write_csv(out, "counterexample.csv", columns, ([row[c] for c in columns] for row in table))
    artifact_service.write_dat(out, "double_weight.dat", ns, [row["double_weight"] for row in table])
    bc = counterexample_service.ce_bc_series(fam, config.n)
    counts = counterexample_service.ce_exceedance_counts(fam, config.n, config.seeds, workers=config.workers)
    artifact_service.write_csv(out, "exceedance_counts.csv", ["seed", "count"], zip(counts.seeds, counts.counts))
    return {"B": fam.B, "N": config.n, "bc_partial_sum": bc.partial_sum, "integral_bound": bc.integral_bound,
            "expected_count": counts.expected, "mean_count": counts.mean_count, "consistent": counts.consistent}


RUNNERS: Dict[str, Callable[[ExperimentConfig, Path], Summary]] = {
    "conjugate": run_conjugate,
    "galambos": run_galambos,
    "generate": run_generate,
    "var-ratio": run_var_ratio,
    "phi": run_phi,
    "moment": run_moment,
    "baum-katz": run_baum_katz,
    "slln": run_slln,
    "decomposition-check": run_decomposition_check,
    "counterexample": run_counterexample,
}


def run(config: ExperimentConfig) -> Path:
    """Run one experiment; returns the manifest path."""
    out = Path(config.out)
    logger.info(f"Running {config.subcommand} (seed {config.seed}, {config.workers} workers) into {out}")
    summary = RUNNERS[config.subcommand](config, out)
    return artifact_service.write_manifest(out, config, summary)


# =============================================================================
# ARGUMENTS
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file or manifest.json to replay")
    common.add_argument("--model", help="dependence model preset")
    common.add_argument("--p", type=float)
    common.add_argument("--alpha", help="'auto' or a number")
    common.add_argument("--L", dest="L", help="slowly varying function")
    common.add_argument("--eps", help="comma-separated eps values")
    common.add_argument("--K", dest="K", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out")
    common.add_argument("--grid", help="lo:hi:count")
    common.add_argument("--tol", type=float)
    common.add_argument("--tail")
    common.add_argument("--weight")
    common.add_argument("--method")
    common.add_argument("--seeds", help="comma-separated seeds")
    common.add_argument("--k-list", dest="k_list")
    common.add_argument("--l-list", dest="l_list")
    common.add_argument("--transforms")
    common.add_argument("--B", dest="B", type=int)

    parser = argparse.ArgumentParser(prog="slln-lab", description="Strong-law simulation laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {TOOL_VERSION}")
    parser.add_argument("--log-level", default=settings.log_level)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "log_level")}
    if file_values.get("subcommand") not in (None, args.subcommand):
        raise ConfigError(f"config file is for '{file_values['subcommand']}', not '{args.subcommand}'",
                          key="subcommand")
    if flags.get("workers") is None and "workers" not in file_values:
        flags["workers"] = settings.workers
    if flags.get("out") is None and "out" not in file_values:
        flags["out"] = str(settings.out_dir)
    return build_config(file_values, **flags)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        config = config_from_args(args)
        manifest = run(config)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except PreconditionError as e:
        logger.error(f"Precondition failed: {e}")
        return EXIT_PRECONDITION
    except NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return EXIT_NUMERIC
    except LabError as e:
        logger.error(f"Lab error: {e}")
        return EXIT_NUMERIC
    except Exception as e:
        logger.exception(f"Unhandled exception: {e}")
        return EXIT_NUMERIC
    logger.info(f"Done: {manifest}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
