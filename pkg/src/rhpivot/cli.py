"""``rhpivot`` command line.

Exit codes: 0 success, 1 input or configuration error, 2 non-convergence.
Every command reads and validates all of its inputs before writing.
"""
from __future__ import annotations

import functools
import logging
import math
import platform
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .choice import MODES
from .errors import ConvergenceError, InputError, RHPivotError, ZeroCostCoefficient
from .estimate import build_choice_data, fit, simulate_observations
from .io import (SCHEMA_VERSION, format_csv, format_json, load_run_config, read_json,
                 read_margins, read_model, read_observations, read_respondents, read_spec,
                 read_trips, read_weights, trips_to_rows, write_outputs)
from .newmode import RH, vot
from .scenario import SyntheticTripConfig, generate_synthetic_trips, sweep
from .weighting import filter_respondents, ipf

log = logging.getLogger("rhpivot")

SUMMARY_COLUMNS = ["scenario_label", "tt_factor", "wait_min", "fare", "purpose", "rh_share",
                   "n_trips"]
RESULT_COLUMNS = ["scenario_label", "tt_factor", "wait_min", "fare", "purpose", "mode",
                  "share", "n_trips"]


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConvergenceError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except (RHPivotError, ValueError, KeyError, TypeError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Ride-hailing pivot toolkit: weighting, estimation, VOT and scenario sweeps."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("weight")
@click.option("--respondents", type=click.Path(), required=True,
              help="CSV with respondent_id and one column per control variable.")
@click.option("--margins", type=click.Path(), required=True,
              help="CSV with variable, category, target_share.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--tol", default=1e-6, show_default=True)
@click.option("--max-iter", default=1000, show_default=True)
@click.option("--cap", type=float, default=None, help="Upper bound on any weight.")
@_exit_codes
def cmd_weight(respondents, margins, out_dir, tol, max_iter, cap):
    """Rake survey weights to population margins."""
    target = read_margins(margins)
    records = read_respondents(respondents, target)
    records, dropped = filter_respondents(records, target)
    res = ipf(records, target, tol=tol, max_iter=max_iter, cap=cap)
    report = {**res.report(), "n_dropped": dropped, "schema_version": SCHEMA_VERSION}
    rows = [{"respondent_id": r.id, "weight": res.weights[r.id]} for r in records]
    write_outputs(out_dir, {"weights.csv": format_csv(rows, ["respondent_id", "weight"]),
                            "ipf_report.json": format_json(_clean(report))})
    click.echo(f"{len(rows)} weights, {res.iterations} sweeps, "
               f"max residual {res.max_residual:.3g}")
    if not res.converged:
        click.echo(f"error: raking did not converge within {max_iter} sweeps "
                   "(weights written, flagged in ipf_report.json)", err=True)
        sys.exit(2)


def _coef_table(purpose, label, res):
    lines = [f"{purpose} ({label}) LL={res.log_likelihood:.3f} rho2={res.rho_squared:.3f} "
             f"n={res.n_obs}"]
    for k, b in res.coefficients.items():
        se = res.std_errors[k]
        lines.append(f"  {k:<20} {b:>10.4f} {se:>9.4f}")
    return "\n".join(lines)


@main.command("estimate")
@click.option("--observations", type=click.Path(), required=True)
@click.option("--spec", "spec_path", type=click.Path(), required=True,
              help="JSON model specification.")
@click.option("--purpose", "purposes", multiple=True, default=("HBW", "HBO"),
              show_default=True)
@click.option("--weights", "weights_path", type=click.Path(), default=None,
              help="weights.csv from the weight command; adds weighted fits.")
@click.option("--null", "null_model", type=click.Choice(["zero", "constants"]),
              default="zero", show_default=True)
@click.option("--tol", default=1e-8, show_default=True)
@click.option("--max-iter", default=100, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_exit_codes
def cmd_estimate(observations, spec_path, purposes, weights_path, null_model, tol, max_iter,
                 out_dir):
    """Fit the weighted MNL separately for each purpose."""
    spec = read_spec(spec_path)
    obs = read_observations(observations, spec)
    weights = read_weights(weights_path) if weights_path else None
    if weights is not None:
        missing = sorted(set(obs["respondent_id"]) - set(weights))
        if missing:
            raise InputError(f"{weights_path}: no weight for respondent {missing[0]!r}")

    datasets = []
    for p in purposes:
        sub = obs[obs["purpose"] == p].reset_index(drop=True)
        if sub.empty:
            raise InputError(f"{observations}: no observations for purpose {p!r}")
        datasets.append((p, "unweighted", build_choice_data(sub, spec, np.ones(len(sub)))))
        if weights is not None:
            w = sub["respondent_id"].map(weights).to_numpy(dtype=float)
            datasets.append((p, "weighted", build_choice_data(sub, spec, w)))

    files, coef_rows, failed = {}, [], []
    for p, label, data in datasets:
        res = fit(data, tol=tol, max_iter=max_iter, null=null_model)
        report = {"purpose": p, "weighted": label == "weighted", "n_dropped": data.n_dropped,
                  "spec": spec.to_dict(), "schema_version": SCHEMA_VERSION, **res.to_dict()}
        name = f"estimate_{p}.json" if label == "unweighted" else f"estimate_{p}_weighted.json"
        files[name] = format_json(_clean(report))
        for k, b in res.coefficients.items():
            se = res.std_errors[k]
            coef_rows.append({"purpose": p, "weighted": int(label == "weighted"),
                              "coefficient": k, "estimate": b, "std_error": se,
                              "t_stat": b / se if se and math.isfinite(se) else ""})
        click.echo(_coef_table(p, label, res))
        if not res.converged:
            failed.append(f"{p} ({label}): {res.status}")
    files["coefficients.csv"] = format_csv(
        coef_rows, ["purpose", "weighted", "coefficient", "estimate", "std_error", "t_stat"])
    write_outputs(out_dir, files)
    if failed:
        raise ConvergenceError("estimation did not converge for " + ", ".join(failed))


def _parse_groups(groups):
    out = {}
    for g in groups:
        label, sep, coef = g.rpartition("=")
        if not sep or not label or not coef:
            raise InputError(f"--group expects LABEL=COEFFICIENT, got {g!r}")
        out[label] = coef
    return out


@main.command("vot")
@click.option("--report", "reports", type=click.Path(), multiple=True, required=True,
              help="Estimation report JSON, one per purpose.")
@click.option("--time-coef", default="b_time", show_default=True)
@click.option("--group", "groups", multiple=True,
              help="Income group and its cost coefficient as LABEL=COEFFICIENT.")
@click.option("--out", "out_path", type=click.Path(), required=True, help="vot.csv path.")
@click.option("--json-out", type=click.Path(), default=None,
              help="Also write the table in the run-config 'values' format.")
@_exit_codes
def cmd_vot(reports, time_coef, groups, out_path, json_out):
    """Value of time (euro/h) by income group and purpose."""
    group_coefs = _parse_groups(groups) or {"all": "b_cost"}
    table, purposes, records = {}, [], []
    for path in reports:
        rep = read_json(path)
        p = rep.get("purpose")
        coefs = rep.get("coefficients", {})
        if p is None:
            raise InputError(f"{path}: report has no purpose")
        if p in purposes:
            raise InputError(f"{path}: second report for purpose {p!r}")
        purposes.append(p)
        for name in [time_coef, *group_coefs.values()]:
            if name not in coefs:
                raise InputError(f"{path}: no coefficient {name!r}")
        for g, c in group_coefs.items():
            try:
                v = vot(coefs[time_coef], coefs[c])
            except ZeroCostCoefficient as exc:
                raise ZeroCostCoefficient(f"income group {g!r}, purpose {p!r}: {exc}") from exc
            table.setdefault(g, {})[p] = v
            records.append({"income_group": g, "purpose": p, "vot": v})
    rows = [{"income_group": g, **vals} for g, vals in table.items()]
    out = Path(out_path)
    files = {out.name: format_csv(rows, ["income_group", *purposes])}
    write_outputs(out.parent, files)
    if json_out:
        j = Path(json_out)
        write_outputs(j.parent, {j.name: format_json({"values": records})})
    for r in rows:
        click.echo("  ".join([f"{r['income_group']:<10}"] +
                             [f"{p}={r[p]:.2f}" for p in purposes]))


@main.command("sweep")
@click.option("--config", "config_path", type=click.Path(), required=True,
              help="run.json")
@click.option("--preset", "preset_name", default=None,
              help="Override the config grid with a named preset.")
@click.option("--variant", type=click.Choice(["normalized", "as-printed"]), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output folder (default: paths.output_dir of the config).")
@click.option("--workers", type=int, default=None)
@_exit_codes
def cmd_sweep(config_path, preset_name, variant, out_dir, workers):
    """Evaluate the ride-hailing scenario grid over a trip population."""
    cfg = load_run_config(config_path, preset_name, variant)
    if cfg.trips_path is not None:
        trips = read_trips(cfg.trips_path, cfg.model.modes, cfg.vot_metro)
    else:
        trips = generate_synthetic_trips(cfg.seed, cfg.synthetic_count, cfg.synthetic)
    cfg.vot_rh.require({(t.income_group, t.purpose) for t in trips if t.in_service_area})
    result = sweep(trips, cfg.model, cfg.params, cfg.vot_rh, cfg.grid,
                   workers=workers or cfg.workers, seed=cfg.seed if cfg.sample else None)

    summary_cols = SUMMARY_COLUMNS + (["mass_deviation"] if cfg.variant == "as-printed" else [])
    files = {
        "results.csv": format_csv(result.long_rows(), RESULT_COLUMNS),
        "summary.csv": format_csv(result.summary_rows(), summary_cols),
    }
    digests = write_outputs(out_dir or cfg.output_dir, files)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config_sha256": cfg.config_hash(),
        "input_sha256": cfg.inputs,
        "seed": cfg.seed,
        "variant": cfg.variant,
        "grid": cfg.grid_name,
        "scenarios": [s.label for s in cfg.grid],
        "n_trips": len(trips),
        "sampling": cfg.sample,
        "outputs": digests,
        "versions": {"rhpivot": __version__, "numpy": np.__version__,
                     "pandas": pd.__version__, "python": platform.python_version()},
    }
    write_outputs(out_dir or cfg.output_dir, {"manifest.json": format_json(manifest)})
    top = max(result.summary_rows(), key=lambda r: r["rh_share"])
    click.echo(f"{len(cfg.grid)} scenarios x {len(trips)} trips; highest {RH} share "
               f"{top['rh_share']:.4f} ({top['purpose']}, {top['scenario_label']})")


@main.command("synth-trips")
@click.option("--seed", type=int, required=True)
@click.option("--count", type=int, default=10_000, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON with SyntheticTripConfig fields.")
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="model.json; its modes decide the utility columns.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@_exit_codes
def cmd_synth_trips(seed, count, config_path, model_path, out_path):
    """Write a synthetic trips.csv."""
    cfg = SyntheticTripConfig.from_dict(read_json(config_path)) if config_path else None
    modes = read_model(model_path).modes if model_path else tuple(m for m in MODES if m != RH)
    trips = generate_synthetic_trips(seed, count, cfg)
    cols = ["trip_id", "purpose", "auto_time_min", "distance_km", "income_group",
            "in_service_area", "gc_metro_min"] + [f"u_{m}" for m in modes]
    out = Path(out_path)
    write_outputs(out.parent, {out.name: format_csv(trips_to_rows(trips, modes), cols)})
    click.echo(f"{len(trips)} trips -> {out}")


@main.command("synth-observations")
@click.option("--seed", type=int, required=True)
@click.option("--respondents", type=int, default=300, show_default=True)
@click.option("--spec", "spec_path", type=click.Path(), required=True)
@click.option("--truth", "truth_path", type=click.Path(), required=True,
              help="JSON object of coefficient values.")
@click.option("--scenarios", type=int, default=3, show_default=True,
              help="Choice situations per respondent and purpose.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@_exit_codes
def cmd_synth_observations(seed, respondents, spec_path, truth_path, scenarios, out_path):
    """Write a synthetic observations.csv drawn from a known MNL."""
    spec = read_spec(spec_path)
    truth = read_json(truth_path)
    unknown = set(truth) - set(spec.names)
    if unknown:
        raise InputError(f"{truth_path}: coefficients not in the spec: {sorted(unknown)}")
    df = simulate_observations(seed, respondents, spec, truth,
                               scenarios_per_respondent=scenarios)
    out = Path(out_path)
    rows = df.to_dict("records")
    write_outputs(out.parent, {out.name: format_csv(rows, list(df.columns))})
    click.echo(f"{len(df)} observations -> {out}")


if __name__ == "__main__":
    main()
