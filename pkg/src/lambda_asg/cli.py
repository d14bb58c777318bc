"""Experiment runner: ``lambda-asg run <config.json>`` / ``lambda-asg check``.

Configs are JSON objects::

    {
      "experiment": "duality_matrix",
      "measures": {"lambda_minus": {"atoms": [[0.25, 0.5], [0.5, 0.5]]},
                   "lambda_plus":  {"atoms": [[0.5, 0.333], ...]}},
      "params": {"N": 10},
      "seed": 20240801,
      "output_dir": "out"
    }

``measures`` holds either the ordered pair (coupled via the quantile
construction after normalization) or a ready-made ``coupling``.  Every run
writes ``manifest.json`` (config echo, seed rule, wall time) next to the
experiment artifacts.  Exit codes: 0 success, 1 validation error, 2 numerical
acceptance failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, asg, duality, fixation, limits, measures, moran
from .errors import LambdaAsgError, NotConverged, OrderViolation
from .rng import SEED_RULE


class ConfigError(Exception):
    """Invalid configuration; maps to exit code 1."""


# -- config handling -----------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _field(cfg: dict, name: str, kind, required: bool = True, default=None):
    if name not in cfg:
        if required:
            raise ConfigError(f"missing required field '{name}'")
        return default
    value = cfg[name]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(f"field '{name}' must be {kind.__name__}, got {type(value).__name__}")
    return value


def resolve_measures(cfg: dict) -> tuple[measures.CoupledMeasure, dict]:
    """Return the coupling plus a description of how it was obtained."""
    spec = _field(cfg, "measures", dict)
    has_pair = "lambda_minus" in spec or "lambda_plus" in spec
    has_coupling = "coupling" in spec
    if has_pair == has_coupling:
        raise ConfigError(
            "measures must hold exactly one of {lambda_minus + lambda_plus} or {coupling}"
        )
    if has_coupling:
        try:
            coupling = measures.coupling_from_config(spec["coupling"])
        except ValueError as exc:
            raise ConfigError(f"measures.coupling: {exc}") from None
        return coupling, {"source": "coupling", "atoms": len(coupling)}
    if "lambda_minus" not in spec or "lambda_plus" not in spec:
        raise ConfigError("both lambda_minus and lambda_plus are required")
    try:
        lm = measures.measure_from_config(spec["lambda_minus"])
        lp = measures.measure_from_config(spec["lambda_plus"])
    except ValueError as exc:
        raise ConfigError(f"measures: {exc}") from None
    coupling = measures.coupling_from_pair(lm, lp)
    return coupling, {
        "source": "pair",
        "rate_scale": lp.total_mass,
        "atoms": len(coupling),
    }


# -- output helpers ------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    )


def write_path_csv(path: Path, fp, value_label: str = "value") -> None:
    write_csv(path, ["time", value_label], zip(fp.times, fp.values))


# -- experiments ---------------------------------------------------------------


def _params(cfg: dict) -> dict:
    params = _field(cfg, "params", dict, required=False, default={})
    return dict(params)


def _need(params: dict, name: str, cast):
    if name not in params:
        raise ConfigError(f"params.{name} is required for this experiment")
    try:
        return cast(params[name])
    except (TypeError, ValueError):
        raise ConfigError(f"params.{name} has invalid value {params[name]!r}") from None


def _opt(params: dict, name: str, cast, default):
    if name not in params or params[name] is None:
        return default
    try:
        return cast(params[name])
    except (TypeError, ValueError):
        raise ConfigError(f"params.{name} has invalid value {params[name]!r}") from None


def run_moran_sim(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    N = _need(params, "N", int)
    horizon = _need(params, "horizon", float)
    if "initial_count" in params:
        count0 = _need(params, "initial_count", int)
    else:
        count0 = int(round(_need(params, "x0", float) * N))
    replicates = _opt(params, "replicates", int, 1)
    max_paths = _opt(params, "max_paths", int, 10)
    cfg = moran.MoranConfig(N=N, coupling=coupling, initial_count=count0)
    outputs = []
    for r in range(min(replicates, max_paths)):
        fp = moran.simulate(cfg, horizon, seed, replicate=r)
        name = f"path_{r:03d}.csv"
        write_path_csv(outdir / name, fp, value_label="count")
        outputs.append(name)
    finals = moran.simulate_final_counts(cfg, horizon, replicates, seed)
    write_csv(outdir / "finals.csv", ["replicate", "final_count"], enumerate(finals))
    write_json(outdir / "summary.json", {
        "N": N, "initial_count": count0, "horizon": horizon,
        "replicates": replicates,
        "mean_final_frequency": float(finals.mean()) / N,
        "absorbed_at_0": int((finals == 0).sum()),
        "absorbed_at_N": int((finals == N).sum()),
    })
    outputs += ["finals.csv", "summary.json"]
    if _opt(params, "absorption", bool, False):
        h = moran.absorption_probability(cfg)
        write_csv(outdir / "absorption.csv", ["i", "h"], enumerate(h))
        outputs.append("absorption.csv")
    return 0, outputs


def run_asg_pathwise(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    N = _need(params, "N", int)
    horizon = _need(params, "horizon", float)
    replicates = _opt(params, "replicates", int, 1000)
    checked, violations = asg.ancestry_consistency_check(
        N, coupling, horizon, replicates, seed, threads=threads
    )
    write_json(outdir / "report.json", {
        "N": N, "horizon": horizon, "replicates": replicates,
        "individuals_checked": checked, "violations": violations,
    })
    return (0 if violations == 0 else 2), ["report.json"]


def run_duality_matrix(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    sizes = params.get("N", 10)
    if isinstance(sizes, int):
        sizes = [sizes]
    if not isinstance(sizes, list) or not all(isinstance(n, int) for n in sizes):
        raise ConfigError("params.N must be an int or list of ints")
    tolerance = _opt(params, "tolerance", float, 1e-10)
    results = [
        {"N": n, "residual": duality.generator_duality_check(n, coupling)}
        for n in sizes
    ]
    worst = max(r["residual"] for r in results)
    write_json(outdir / "residual.json", {
        "results": results, "max_residual": worst, "tolerance": tolerance,
    })
    return (0 if worst < tolerance else 2), ["residual.json"]


def run_duality_pathwise(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    N = _need(params, "N", int)
    T = _need(params, "t", float)
    if "initial_count" in params:
        count0 = _need(params, "initial_count", int)
    else:
        count0 = int(round(_need(params, "x0", float) * N))
    sample_size = _need(params, "n", int)
    replicates = _opt(params, "replicates", int, 10000)
    z_max = _opt(params, "z_max", float, 4.0)
    report = duality.pathwise_duality_check(
        N, coupling, T, count0, sample_size, replicates, seed, threads=threads
    )
    write_json(outdir / "report.json", report.to_dict())
    return (0 if abs(report.z) < z_max else 2), ["report.json"]


def run_sde_sim(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    x0 = _need(params, "x0", float)
    horizon = _need(params, "horizon", float)
    replicates = _opt(params, "replicates", int, 1)
    max_paths = _opt(params, "max_paths", int, 10)
    cfg = limits.SdeConfig(coupling=coupling, x0=x0, horizon=horizon)
    outputs = []
    for r in range(min(replicates, max_paths)):
        fp = limits.simulate_sde(cfg, seed, replicate=r)
        name = f"path_{r:03d}.csv"
        write_path_csv(outdir / name, fp)
        outputs.append(name)
    finals = limits.sde_final_values(coupling, x0, horizon, replicates, seed)
    write_csv(outdir / "finals.csv", ["replicate", "final_value"], enumerate(finals))
    write_json(outdir / "summary.json", {
        "x0": x0, "horizon": horizon, "replicates": replicates,
        "mean_final": float(finals.mean()),
    })
    return 0, outputs + ["finals.csv", "summary.json"]


def run_convergence(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    x0 = _need(params, "x0", float)
    T = _need(params, "t", float)
    sizes = params.get("N_list", [50, 100, 200, 400, 800])
    if not isinstance(sizes, list) or not all(isinstance(n, int) for n in sizes):
        raise ConfigError("params.N_list must be a list of ints")
    alpha = _opt(params, "alpha", float, 0.4)
    replicates = _opt(params, "replicates", int, 10000)
    bootstrap = _opt(params, "bootstrap", int, 1000)
    max_final_ks = _opt(params, "max_final_ks", float, None)
    schemes = [limits.TruncationScheme(alpha=alpha, N=n) for n in sizes]
    rows = limits.convergence_study(
        coupling, x0, schemes, T, replicates, seed, bootstrap=bootstrap
    )
    write_csv(
        outdir / "convergence.csv",
        ["N", "alpha", "truncated_mass", "ks", "stderr"],
        ([r["N"], r["alpha"], r["truncated_mass"], r["ks"], r["stderr"]] for r in rows),
    )
    trend_ok = all(
        rows[i + 1]["ks"] <= rows[i]["ks"]
        + 2.0 * float(np.hypot(rows[i]["stderr"], rows[i + 1]["stderr"]))
        for i in range(len(rows) - 1)
    )
    write_json(outdir / "summary.json", {
        "rows": rows, "trend_nonincreasing": trend_ok,
        "final_ks": rows[-1]["ks"] if rows else None,
    })
    code = 0
    if max_final_ks is not None and rows and rows[-1]["ks"] >= max_final_ks:
        code = 2
    return code, ["convergence.csv", "summary.json"]


def run_limit_duality(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    n_max = _opt(params, "n_max", int, 12)
    grid = _opt(params, "grid", int, 101)
    tolerance = _opt(params, "tolerance", float, 1e-10)
    residual = duality.limit_generator_duality(coupling, n_max, grid)
    write_json(outdir / "residual.json", {
        "residual": residual, "n_max": n_max, "grid": grid, "tolerance": tolerance,
    })
    return (0 if residual < tolerance else 2), ["residual.json"]


def run_limit_moment(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    x = _need(params, "x0", float)
    n = _need(params, "n", int)
    t = _need(params, "t", float)
    replicates = _opt(params, "replicates", int, 10**5)
    z_max = _opt(params, "z_max", float, 4.0)
    report = duality.limit_moment_duality_check(coupling, x, n, t, replicates, seed)
    write_json(outdir / "report.json", report.to_dict())
    return (0 if abs(report.z) < z_max else 2), ["report.json"]


def run_fixation(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    nmax = _opt(params, "nmax", int, 30)
    grid = _opt(params, "grid", int, 101)
    compare_N = _opt(params, "compare_absorption_N", int, 0)
    xs = np.linspace(0.0, 1.0, grid)
    if coupling.selective_mass() == 0.0:
        warnings.warn("coupling has no selective gap; emitting the neutral p(x) = x")
        rows = [[x, fixation.p_neutral(x), 0.0, 0.0] for x in xs]
        write_csv(outdir / "fixation.csv", ["x", "p", "last_term", "residual"], rows)
        write_json(outdir / "fixation.json", {
            "neutral": True, "nmax": 0,
            "harmonicity_residual": 0.0, "identity_residual": 0.0,
        })
        return 0, ["fixation.csv", "fixation.json"]
    solver = fixation.build_fixation_solver(coupling, nmax=nmax)
    residuals = fixation.harmonicity_values(solver.seq, coupling, xs)
    rows = []
    exit_code = 0
    for x, resid in zip(xs, residuals):
        try:
            p, last = fixation.fixation_probability(solver.seq, float(x), nmax)
        except NotConverged:
            p, last = _partial_series(solver.seq, float(x), nmax)
            exit_code = 2
        rows.append([x, p, last, abs(resid)])
    write_csv(outdir / "fixation.csv", ["x", "p", "last_term", "residual"], rows)
    write_json(outdir / "polynomials.json", {
        "nmax": nmax,
        "coefficients": [a.tolist() for a in solver.seq.coeffs],
    })
    payload = {
        "neutral": False,
        "nmax": nmax,
        "tilde_mass": solver.table.tilde_mass,
        "harmonicity_residual": float(np.abs(residuals).max()),
        "identity_residual": fixation.defining_identity_residual(solver.seq, coupling),
        "converged": exit_code == 0,
    }
    outputs = ["fixation.csv", "fixation.json", "polynomials.json"]
    if compare_N:
        h = moran.absorption_probability(
            moran.MoranConfig(N=compare_N, coupling=coupling, initial_count=0)
        )
        write_csv(outdir / "absorption.csv", ["i", "h"], enumerate(h))
        outputs.append("absorption.csv")
        oracle = np.interp(xs, np.arange(compare_N + 1) / compare_N, h)
        payload["max_abs_diff_vs_absorption"] = float(
            np.abs(np.array([r[1] for r in rows]) - oracle).max()
        )
    write_json(outdir / "fixation.json", payload)
    return exit_code, outputs


def _partial_series(seq, x: float, nmax: int) -> tuple[float, float]:
    import math as _math

    scale = 1.0 / _math.expm1(2.0)
    value = 0.0
    last = 0.0
    for n in range(1, nmax + 1):
        hn = np.polynomial.polynomial.polyval(x, seq.antiderivative_coeffs(n))
        last = scale * 2.0**n / _math.factorial(n) * float(hn)
        value += last
    return value, abs(last)


def run_line_count_sim(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    N = _need(params, "N", int)
    n0 = _need(params, "n0", int)
    horizon = _need(params, "horizon", float)
    replicates = _opt(params, "replicates", int, 1)
    max_paths = _opt(params, "max_paths", int, 10)
    outputs = []
    finals = []
    for r in range(replicates):
        fp = asg.simulate_line_count(N, coupling, n0, horizon, seed, replicate=r)
        finals.append(int(fp.final))
        if r < max_paths:
            name = f"path_{r:03d}.csv"
            write_path_csv(outdir / name, fp, value_label="count")
            outputs.append(name)
    write_csv(outdir / "finals.csv", ["replicate", "final_count"], enumerate(finals))
    return 0, outputs + ["finals.csv"]


def run_coupling_report(coupling, params, seed, outdir: Path, threads: int = 1) -> tuple[int, list[str]]:
    gap_mean = coupling.selective_mass()
    write_json(outdir / "coupling.json", {
        "atoms": [[y, z, m] for y, z, m in zip(coupling.ys, coupling.zs, coupling.masses)],
        "total_mass": coupling.total_mass,
        "selective_gap_mean": gap_mean,
        "selective_gap_second_moment": measures.transport_cost(coupling),
        "selective_gap_variance": measures.transport_cost(coupling) - gap_mean**2,
        "size_biased_mass": coupling.integrate(lambda y, z: y * y + z),
    })
    return 0, ["coupling.json"]


RUNNERS = {
    "moran_sim": run_moran_sim,
    "asg_pathwise": run_asg_pathwise,
    "duality_matrix": run_duality_matrix,
    "duality_pathwise": run_duality_pathwise,
    "sde_sim": run_sde_sim,
    "convergence": run_convergence,
    "limit_duality": run_limit_duality,
    "moment_duality": run_limit_moment,
    "fixation": run_fixation,
    "coupling_report": run_coupling_report,
    "line_count_sim": run_line_count_sim,
}


# -- commands ------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    experiment = _field(cfg, "experiment", str)
    if experiment not in RUNNERS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; valid names: {', '.join(sorted(RUNNERS))}"
        )
    seed = args.seed if args.seed is not None else _field(cfg, "seed", int)
    outdir = Path(args.output_dir or _field(cfg, "output_dir", str, required=False, default="out"))
    threads = args.threads or int(os.environ.get("LAMBDA_ASG_THREADS", "1"))
    coupling, coupling_info = resolve_measures(cfg)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.time()
    code, outputs = RUNNERS[experiment](coupling, _params(cfg), seed, outdir, threads=threads)
    manifest = {
        "experiment": experiment,
        "config": cfg,
        "seed": seed,
        "seed_rule": SEED_RULE,
        "threads": threads,
        "coupling": coupling_info,
        "version": __version__,
        "wall_time_s": time.time() - start,
        "outputs": sorted(set(outputs)),
        "exit_code": code,
    }
    write_json(outdir / "manifest.json", manifest)
    print(f"{experiment}: exit {code}; outputs in {outdir}")
    return code


def check_measures(cfg: dict) -> dict:
    """Validate measure specs: ordering, coupling construction, marginals."""
    spec = _field(cfg, "measures", dict)
    report: dict = {"valid": True, "issues": []}
    if "coupling" in spec:
        try:
            coupling = measures.coupling_from_config(spec["coupling"])
            report["coupling_atoms"] = len(coupling)
            report["total_mass"] = coupling.total_mass
        except ValueError as exc:
            report["valid"] = False
            report["issues"].append(f"coupling invariant violated: {exc}")
        return report
    try:
        lm = measures.measure_from_config(spec.get("lambda_minus", {}))
        lp = measures.measure_from_config(spec.get("lambda_plus", {}))
    except ValueError as exc:
        return {"valid": False, "issues": [str(exc)]}
    witness = measures.order_violation_witness(lm, lp)
    if witness is not None:
        report["valid"] = False
        report["issues"].append(
            f"stochastic order violated: lambda_minus[x,1] > lambda_plus[x,1] at x={witness}"
        )
        report["order_witness"] = witness
        return report
    record = measures.normalize_pair(lm, lp)
    coupling = measures.quantile_coupling(record.mu_minus, record.mu_plus).scaled(record.rate_scale)
    mismatch = measures.marginal_mismatch(
        coupling, lm.scaled(1.0), lp.scaled(1.0), ignore_zero=True
    )
    report.update({
        "rate_scale": record.rate_scale,
        "zero_compensator_mass": record.c,
        "coupling_atoms": len(coupling),
        "coupling": [[y, z, m] for y, z, m in zip(coupling.ys, coupling.zs, coupling.masses)],
        "marginal_mismatch": mismatch,
    })
    if mismatch > 1e-12:
        report["valid"] = False
        report["issues"].append(f"coupling marginals off by {mismatch}")
    return report


def cmd_check(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    try:
        report = check_measures(cfg)
    except (OrderViolation, LambdaAsgError) as exc:
        report = {"valid": False, "issues": [str(exc)]}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0 if report["valid"] else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lambda-asg",
        description="Experiment runner for the asymmetric Moran / ASG toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=None)
    p_run.set_defaults(func=cmd_run)
    p_check = sub.add_parser("check", help="validate the measures in a config")
    p_check.add_argument("config")
    p_check.set_defaults(func=cmd_check)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NotConverged as exc:
        print(f"numerical acceptance failure: {exc}", file=sys.stderr)
        return 2
    except LambdaAsgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
