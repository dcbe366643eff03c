"""Command-line front end: estimation, simulation and study runs.

Every invocation reads a JSON run configuration (``--config``) whose
``command`` field selects the operation; unknown keys are rejected and the
fully resolved configuration (all defaults materialized, CLI overrides
applied) is written next to the outputs for reproducibility.

Exit codes: 0 success (estimation converged), 2 estimation hit the iteration
limit without converging (artifacts still written), 1 any error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .errors import DfmapError
from .em import fit
from .model import ModelOrder, standardize
from .panel_io import (
    NA,
    format_value,
    read_json,
    read_panel_csv,
    theta_to_dict,
    write_convergence_csv,
    write_json,
    write_matrix_csv,
    write_panel_csv,
)
from .priors import PriorSpec
from .simulate import DgpConfig, apply_missing, simulate_dgp
from .study import (
    ReplicationRecord,
    StudyConfig,
    aggregate_records,
    render_table,
    run_study,
    ESTIMATOR_MAP,
    ESTIMATOR_MAP_NO_LAG_DECAY,
    ESTIMATOR_ML,
)

__all__ = ["main"]

_PRIOR_KEYS = ("eta_phi", "d_lambda", "d_phi", "alpha_lambda", "beta_lambda",
               "adaptive", "sigma0", "mode")
_FIT_KEYS = ("max_iter", "tol", "init", "seed")
_DGP_KEYS = ("n", "T", "r", "p", "delta", "alpha_range", "beta_range",
             "seed", "burn_in")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); keep 2 for non-convergence
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="dfmap",
        description="Penalized EM estimation of dynamic factor models "
                    "with missing data, plus simulation and Monte Carlo studies.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--output-dir", help="override the configured output directory")
    parser.add_argument("--seed", type=int, help="override the configured seed(s)")
    parser.add_argument("--threads", type=int, help="override the study worker count")
    return parser


def _check_keys(section: dict, allowed, context: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValueError(f"unknown keys in {context}: {', '.join(unknown)}")


def _section(config: dict, name: str) -> dict:
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise ValueError(f"config section {name!r} must be an object")
    return dict(value)


def _prior_from_config(section: dict) -> PriorSpec:
    _check_keys(section, _PRIOR_KEYS, "prior")
    return PriorSpec(**section)


def _dgp_from_config(section: dict, context: str) -> DgpConfig:
    _check_keys(section, _DGP_KEYS, context)
    for key in ("n", "T", "r", "p"):
        if key not in section:
            raise ValueError(f"{context} requires key {key!r}")
    if "alpha_range" in section:
        section["alpha_range"] = tuple(section["alpha_range"])
    if "beta_range" in section:
        section["beta_range"] = tuple(section["beta_range"])
    return DgpConfig(**section)


def _dgp_to_config(dgp: DgpConfig) -> dict:
    return {
        "n": dgp.n, "T": dgp.T, "r": dgp.r, "p": dgp.p, "delta": dgp.delta,
        "alpha_range": list(dgp.alpha_range), "beta_range": list(dgp.beta_range),
        "seed": dgp.seed, "burn_in": dgp.burn_in,
    }


def _prior_to_config(spec: PriorSpec) -> dict:
    return {
        "eta_phi": spec.eta_phi, "d_lambda": spec.d_lambda, "d_phi": spec.d_phi,
        "alpha_lambda": spec.alpha_lambda, "beta_lambda": spec.beta_lambda,
        "adaptive": spec.adaptive, "sigma0": spec.sigma0, "mode": spec.mode,
    }


def cmd_estimate(config: dict, out_dir: Path) -> int:
    _check_keys(config, ("command", "data_path", "model", "prior", "fit",
                         "demean", "output_dir"), "estimate config")
    if "data_path" not in config:
        raise ValueError("estimate requires 'data_path'")
    model = _section(config, "model")
    _check_keys(model, ("r", "p", "q"), "model")
    for key in ("r", "p", "q"):
        if key not in model:
            raise ValueError(f"model requires key {key!r}")
    prior = _prior_from_config(_section(config, "prior"))
    fit_opts = _section(config, "fit")
    _check_keys(fit_opts, _FIT_KEYS, "fit")
    max_iter = int(fit_opts.get("max_iter", 500))
    tol = float(fit_opts.get("tol", 1e-4))
    init = str(fit_opts.get("init", "pca"))
    seed = int(fit_opts.get("seed", 0))
    demean = bool(config.get("demean", True))

    values, names, time_labels = read_panel_csv(config["data_path"])
    try:
        panel = standardize(values, demean=demean)
    except ValueError as exc:
        raise ValueError(f"{config['data_path']}: {exc}") from None
    order = ModelOrder(n=panel.n, r=int(model["r"]), p=int(model["p"]), q=int(model["q"]))
    result = fit(panel, order, prior, max_iter=max_iter, tol=tol, init=init, seed=seed)

    resolved = {
        "command": "estimate",
        "data_path": str(config["data_path"]),
        "model": {"r": order.r, "p": order.p, "q": order.q},
        "prior": _prior_to_config(prior),
        "fit": {"max_iter": max_iter, "tol": tol, "init": init, "seed": seed},
        "demean": demean,
        "output_dir": str(out_dir),
    }
    write_json(out_dir / "resolved_config.json", resolved)

    payload = theta_to_dict(result.theta, order)
    payload.update({
        "scale": panel.scale.tolist(),
        "center": panel.center.tolist(),
        "variables": names,
        "converged": result.converged,
        "iterations": result.iterations,
        "init": {"requested": result.init_info.requested,
                 "used": result.init_info.used,
                 "fallback": result.init_info.fallback},
        "eta_lambda_path": result.eta_lambda_path.tolist(),
    })
    write_json(out_dir / "theta.json", payload)

    pre_labels = [f"pre_{j}" for j in range(order.s, 0, -1)]
    write_matrix_csv(out_dir / "factors.csv", result.factors,
                     names=[f"factor_{j + 1}" for j in range(order.r)],
                     time_labels=pre_labels + list(time_labels))
    write_matrix_csv(out_dir / "common_component.csv", result.common,
                     names=names, time_labels=list(time_labels))
    write_convergence_csv(out_dir / "convergence.csv", result.logpost_path)
    return 0 if result.converged else 2


def cmd_simulate(config: dict, out_dir: Path) -> int:
    _check_keys(config, ("command", "dgp", "missing", "output_dir"), "simulate config")
    dgp = _dgp_from_config(_section(config, "dgp"), "dgp")
    missing = _section(config, "missing")
    _check_keys(missing, ("fraction", "pattern", "max_delay", "seed"), "missing")
    fraction = float(missing.get("fraction", 0.0))
    pattern = str(missing.get("pattern", "uniform"))
    max_delay = int(missing.get("max_delay", 0))
    mask_seed = int(missing.get("seed", dgp.seed))

    data = simulate_dgp(dgp)
    masked = apply_missing(data, fraction, pattern=pattern, seed=mask_seed,
                           max_delay=max_delay)

    resolved = {
        "command": "simulate",
        "dgp": _dgp_to_config(dgp),
        "missing": {"fraction": fraction, "pattern": pattern,
                    "max_delay": max_delay, "seed": mask_seed},
        "output_dir": str(out_dir),
    }
    write_json(out_dir / "resolved_config.json", resolved)

    names = [f"var_{i + 1}" for i in range(dgp.n)]
    labels = [str(t + 1) for t in range(dgp.T)]
    write_panel_csv(out_dir / "panel.csv", data.panel, mask=masked.mask,
                    names=names, time_labels=labels)
    write_matrix_csv(out_dir / "truth_common.csv", data.common,
                     names=names, time_labels=labels)
    write_json(out_dir / "truth_params.json", {
        "lambdas": data.lambdas.tolist(),
        "alphas": data.alphas.tolist(),
        "Sigma": data.Sigma.tolist(),
        "betas": data.betas.tolist(),
        "gammas": data.gammas.tolist(),
        "factors": data.factors.tolist(),
    })
    return 0


def _study_from_config(config: dict) -> StudyConfig:
    _check_keys(config, ("command", "grid", "missing_fractions", "r_hat", "p_hat",
                         "q_hat", "estimators", "replications", "workers", "fit",
                         "demean", "output_dir"), "study config")
    grid_raw = config.get("grid", [])
    if not isinstance(grid_raw, list):
        raise ValueError("study 'grid' must be a list of DGP settings")
    grid = tuple(_dgp_from_config(dict(entry), f"grid[{i}]")
                 for i, entry in enumerate(grid_raw))
    fit_opts = _section(config, "fit")
    _check_keys(fit_opts, ("max_iter", "tol", "init"), "fit")
    return StudyConfig(
        grid=grid,
        missing_fractions=tuple(config.get("missing_fractions", (0.0, 0.2, 0.4))),
        r_hat=int(config.get("r_hat", 1)),
        p_hat=int(config.get("p_hat", 0)),
        q_hat=int(config.get("q_hat", 1)),
        estimators=tuple(config.get("estimators", (ESTIMATOR_MAP, ESTIMATOR_ML))),
        replications=int(config.get("replications", 200)),
        workers=int(config.get("workers", 1)),
        max_iter=int(fit_opts.get("max_iter", 500)),
        tol=float(fit_opts.get("tol", 1e-4)),
        init=str(fit_opts.get("init", "pca")),
        demean=bool(config.get("demean", True)),
    )


def _study_to_config(cfg: StudyConfig, out_dir: Path) -> dict:
    return {
        "command": "study",
        "grid": [_dgp_to_config(d) for d in cfg.grid],
        "missing_fractions": list(cfg.missing_fractions),
        "r_hat": cfg.r_hat, "p_hat": cfg.p_hat, "q_hat": cfg.q_hat,
        "estimators": list(cfg.estimators),
        "replications": cfg.replications,
        "workers": cfg.workers,
        "fit": {"max_iter": cfg.max_iter, "tol": cfg.tol, "init": cfg.init},
        "demean": cfg.demean,
        "output_dir": str(out_dir),
    }


_PARTIAL_FIELDS = ("grid_index", "fraction", "estimator", "replication",
                   "sse", "cells", "converged", "failed", "iterations")


def _load_partial(path: Path) -> list[ReplicationRecord]:
    if not path.exists():
        return []
    by_key: dict[tuple, ReplicationRecord] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rec = ReplicationRecord(
                grid_index=int(row["grid_index"]),
                fraction=float(row["fraction"]),
                estimator=row["estimator"],
                replication=int(row["replication"]),
                sse=float(row["sse"]) if row["sse"] != NA else float("nan"),
                cells=int(row["cells"]),
                converged=row["converged"] == "1",
                failed=row["failed"] == "1",
                iterations=int(row["iterations"]),
            )
            by_key[rec.key()] = rec  # duplicates from interrupted runs: keep last
    return list(by_key.values())


def _partial_row(rec: ReplicationRecord) -> list:
    return [rec.grid_index, format_value(rec.fraction), rec.estimator,
            rec.replication,
            NA if not np.isfinite(rec.sse) else format_value(rec.sse),
            rec.cells, int(rec.converged), int(rec.failed), rec.iterations]


def _write_partial(path: Path, records: list[ReplicationRecord]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_PARTIAL_FIELDS)
        for rec in sorted(records, key=lambda r: r.key()):
            writer.writerow(_partial_row(rec))


def cmd_study(config: dict, out_dir: Path) -> int:
    cfg = _study_from_config(config)
    write_json(out_dir / "resolved_config.json", _study_to_config(cfg, out_dir))

    partial_path = out_dir / "study_partial.csv"
    previous = _load_partial(partial_path)
    expected_per_task = len(cfg.missing_fractions) * len(cfg.estimators)
    by_task: dict[tuple, int] = {}
    for rec in previous:
        by_task[(rec.grid_index, rec.replication)] = \
            by_task.get((rec.grid_index, rec.replication), 0) + 1
    done = {task for task, count in by_task.items() if count >= expected_per_task}
    kept = [rec for rec in previous if (rec.grid_index, rec.replication) in done]

    if not partial_path.exists():
        _write_partial(partial_path, kept)
    appender = partial_path.open("a", newline="")
    writer = csv.writer(appender)

    def on_records(recs):
        for rec in recs:
            writer.writerow(_partial_row(rec))
        appender.flush()

    try:
        fresh = run_study(cfg, done=done, on_records=on_records)
    finally:
        appender.close()
    records = sorted(kept + fresh, key=lambda r: r.key())
    _write_partial(partial_path, records)

    cells = aggregate_records(cfg, records)
    lookup = {(c.grid_index, c.fraction, c.estimator): c for c in cells}
    with (out_dir / "study_results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["grid_index", "n", "T", "r", "p", "delta", "r_hat", "p_hat",
                         "fraction", "estimator", "rmse", "ratio_to_ml",
                         "ratio_to_map_no_lag_decay", "replications", "excluded",
                         "nonconverged", "unreliable"])
        for cell in cells:
            ratios = []
            for other in (ESTIMATOR_ML, ESTIMATOR_MAP_NO_LAG_DECAY):
                denom = lookup.get((cell.grid_index, cell.fraction, other))
                if (cell.estimator == ESTIMATOR_MAP and denom is not None
                        and np.isfinite(denom.rmse) and denom.rmse > 0
                        and np.isfinite(cell.rmse)):
                    ratios.append(format_value(cell.rmse / denom.rmse))
                else:
                    ratios.append(NA)
            writer.writerow([
                cell.grid_index, cell.dgp.n, cell.dgp.T, cell.dgp.r, cell.dgp.p,
                format_value(cell.dgp.delta), cfg.r_hat, cfg.p_hat,
                format_value(cell.fraction), cell.estimator,
                format_value(cell.rmse) if np.isfinite(cell.rmse) else NA,
                *ratios, cell.replications, cell.excluded, cell.nonconverged,
                int(cell.unreliable),
            ])
    (out_dir / "study_table.txt").write_text(render_table(cfg, cells))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"dfmap: error: {exc}", file=sys.stderr)
        return 1
    try:
        config = read_json(args.config)
        if not isinstance(config, dict):
            raise ValueError("run configuration must be a JSON object")
        command = config.get("command")
        if command not in ("estimate", "simulate", "study"):
            raise ValueError(
                f"config 'command' must be estimate, simulate or study, got {command!r}"
            )
        if args.output_dir is not None:
            config["output_dir"] = args.output_dir
        if args.seed is not None:
            _apply_seed_override(config, command, args.seed)
        if args.threads is not None:
            if command != "study":
                raise ValueError("--threads applies only to study runs")
            config["workers"] = args.threads
        out_dir = Path(config.get("output_dir", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        if command == "estimate":
            return cmd_estimate(config, out_dir)
        if command == "simulate":
            return cmd_simulate(config, out_dir)
        return cmd_study(config, out_dir)
    except _UsageError as exc:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"dfmap: error: {exc}", file=sys.stderr)
        return 1
    except (DfmapError, ValueError, OSError) as exc:
        print(parser.format_usage(), file=sys.stderr, end="")
        print(f"dfmap: error: {exc}", file=sys.stderr)
        return 1


def _apply_seed_override(config: dict, command: str, seed: int) -> None:
    if command == "estimate":
        config.setdefault("fit", {})
        config["fit"]["seed"] = seed
    elif command == "simulate":
        config.setdefault("dgp", {})
        config["dgp"]["seed"] = seed
        config.setdefault("missing", {})
        config["missing"]["seed"] = seed
    else:
        for entry in config.get("grid", []):
            entry["seed"] = seed


if __name__ == "__main__":
    sys.exit(main())
