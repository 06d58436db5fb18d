"""Command-line driver: ``rccopf solve | simulate | sweep | report | synth``.

Exit codes: 0 success, 2 infeasible, 3 input/output error, 64 usage error.
Every option can also be set through an environment variable named
``RCCOPF_<COMMAND>_<OPTION>``, e.g. ``RCCOPF_SOLVE_GAMMA=0.4``.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import click

from .formulations import DEFAULT_EPS_GEN, DEFAULT_EPS_LINE, DEFAULT_GAMMA, build_model, with_eps
from .grid import CaseError
from .io import (
    RecordWriter,
    TimeSeriesError,
    load_case,
    parse_probability,
    read_records,
    read_timeseries,
    realizations_from_rows,
    save_case,
    scenarios_from_rows,
    write_json,
    write_manifest,
    write_timeseries,
)
from .sim import apply_scenario, aggregate, iter_study
from .solver import CuttingPlaneConfig, MasterError, MasterInfeasibleError, solve_cutting_plane
from .synth import SynthParams, random_case, random_timeseries

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INFEASIBLE, EXIT_IO, EXIT_USAGE = 0, 2, 3, 64


class InfeasibleExit(click.ClickException):
    exit_code = EXIT_INFEASIBLE


class InputError(click.ClickException):
    exit_code = EXIT_IO


class Probability(click.ParamType):
    name = "probability"

    def convert(self, value, param, ctx):
        if isinstance(value, float):
            return value
        try:
            return parse_probability(value)
        except ValueError as exc:
            self.fail(str(exc), param, ctx)


class FloatList(click.ParamType):
    name = "list"

    def convert(self, value, param, ctx):
        if isinstance(value, list):
            return value
        try:
            return [parse_probability(v) for v in str(value).split(",") if v.strip()]
        except ValueError as exc:
            self.fail(str(exc), param, ctx)


PROB = Probability()


def _model_options(f, grid: bool = False):
    """Shared flags; with ``grid`` the budget and risk flags take comma-separated lists."""
    opts = [
        click.option("--case", "case_path", type=click.Path(dir_okay=False), required=True,
                     help="JSON case file."),
        click.option("--method", type=click.Choice(["det", "cc", "rcc"]), default="rcc",
                     show_default=True),
        click.option("--gamma", *(["--gammas"] if grid else []), "gamma",
                     type=FloatList() if grid else PROB, default=None,
                     help=f"Budget for both mean and variance sets [case value, else {DEFAULT_GAMMA}]."),
        click.option("--gamma-mu", type=PROB, default=None, help="Budget for the mean set."),
        click.option("--gamma-sigma", type=PROB, default=None, help="Budget for the variance set."),
        click.option("--eps-gen", *(["--eps-gens"] if grid else []), "eps_gen",
                     type=FloatList() if grid else PROB, default=None,
                     help="Generator risk level for every unit [case values, else 1/6]."),
        click.option("--eps-line", *(["--eps-lines"] if grid else []), "eps_line",
                     type=FloatList() if grid else PROB, default=None,
                     help=f"Line risk level for every line [case values, else {DEFAULT_EPS_LINE}]."),
        click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=1e-6,
                     show_default=True,
                     help="Cut violation tolerance (p.u.)."),
        click.option("--max-iter", type=click.IntRange(min=1), default=200, show_default=True),
        click.option("--backend", type=click.Choice(["clarabel", "linprog"]), default="clarabel",
                     show_default=True),
        click.option("--no-special-structure", is_flag=True,
                     help="Send generator constraints through the cutting-plane loop."),
        click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _grid_options(f):
    return _model_options(f, grid=True)


def _effective(values):
    """One value if uniform, else the sorted distinct values."""
    distinct = sorted(set(values))
    return distinct[0] if len(distinct) == 1 else distinct


def _setup(opts):
    """Load the case and apply CLI overrides; returns (case, uncertainty, config, params)."""
    try:
        case, u = load_case(opts["case_path"])
    except OSError as exc:
        raise InputError(f"cannot read case: {exc}") from None
    except CaseError as exc:
        raise InputError(f"{opts['case_path']}: {exc}") from None
    case = with_eps(case, opts["eps_gen"], opts["eps_line"])
    if u is not None:
        gm = opts["gamma_mu"] if opts["gamma_mu"] is not None else opts["gamma"]
        gs = opts["gamma_sigma"] if opts["gamma_sigma"] is not None else opts["gamma"]
        try:
            u = u.with_gamma(u.gamma_mu if gm is None else gm, u.gamma_sigma if gs is None else gs)
        except ValueError as exc:
            raise click.BadParameter(str(exc)) from None
    elif opts["method"] != "det":
        raise InputError(f"method {opts['method']} needs an uncertainty block in the case file")
    try:
        config = CuttingPlaneConfig(tol=opts["tol"], max_iter=opts["max_iter"],
                                    backend=opts["backend"],
                                    use_special_structure=not opts["no_special_structure"])
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None
    params = {
        "method": opts["method"],
        "gamma_mu": None if u is None else u.gamma_mu,
        "gamma_sigma": None if u is None else u.gamma_sigma,
        "eps_gen": _effective(g.eps for g in case.generators),
        "eps_line": _effective(ln.eps for ln in case.lines),
        "tol": opts["tol"], "max_iter": opts["max_iter"], "backend": opts["backend"],
        "use_special_structure": not opts["no_special_structure"],
    }
    return case, u, config, params


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory: {exc}") from None
    return out


def _load_series(forecasts, realizations):
    try:
        scenarios = scenarios_from_rows(read_timeseries(forecasts))
        reals = realizations_from_rows(read_timeseries(realizations), scenarios)
    except OSError as exc:
        raise InputError(str(exc)) from None
    except TimeSeriesError as exc:
        raise InputError(str(exc)) from None
    if not scenarios:
        raise InputError(f"{forecasts}: no forecast rows")
    return scenarios, reals


@click.group(context_settings={"auto_envvar_prefix": "RCCOPF", "show_default": True})
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def cli(verbose):
    """Chance-constrained and distributionally robust DC-OPF with wind uncertainty."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@_model_options
@click.option("--forecasts", type=click.Path(dir_okay=False), default=None,
              help="Optional forecast CSV; the hour given by --hour is solved.")
@click.option("--hour", type=int, default=0, show_default=True)
def solve(forecasts, hour, **opts):
    """Solve one hour with one method and write solution.json."""
    case, u, config, params = _setup(opts)
    if forecasts is not None:
        try:
            scenarios = scenarios_from_rows(read_timeseries(forecasts))
        except (OSError, TimeSeriesError) as exc:
            raise InputError(str(exc)) from None
        if not 0 <= hour < len(scenarios):
            raise click.BadParameter(f"hour {hour} not in forecasts (0..{len(scenarios) - 1})")
        try:
            case = apply_scenario(case, scenarios[hour])
        except ValueError as exc:
            raise InputError(str(exc)) from None
    out = _out_dir(opts["out"])
    try:
        model = build_model(case, opts["method"], u)
        sol, diag = solve_cutting_plane(model, config)
    except MasterInfeasibleError as exc:
        write_json(out / "solution.json", {"status": "infeasible", "message": str(exc),
                                           "diagnostics": exc.diagnostics.to_dict()})
        write_manifest(out, "solve", params | {"hour": hour},
                       {"case": opts["case_path"], "forecasts": forecasts})
        raise InfeasibleExit(str(exc)) from None
    except MasterError as exc:
        raise click.ClickException(str(exc)) from None
    doc = sol.to_dict(case)
    doc["status"] = "optimal" if diag.converged else diag.termination
    write_json(out / "solution.json", doc)
    write_manifest(out, "solve", params | {"hour": hour},
                   {"case": opts["case_path"], "forecasts": forecasts})
    click.echo(f"{doc['status']}: objective {sol.objective:.6f} $/h, "
               f"{diag.iterations} iterations, {diag.total_cuts} cuts")


@cli.command()
@_model_options
@click.option("--forecasts", type=click.Path(dir_okay=False), required=True)
@click.option("--realizations", type=click.Path(dir_okay=False), required=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--baseline", type=click.Path(dir_okay=False), default=None,
              help="report.json of a baseline run, for the cost difference.")
def simulate(forecasts, realizations, workers, baseline, **opts):
    """Hour-ahead dispatch plus 5-minute replay over a study window."""
    case, u, config, params = _setup(opts)
    scenarios, reals = _load_series(forecasts, realizations)
    baseline_cost = _baseline_cost(baseline)
    out = _out_dir(opts["out"])
    records, step1 = [], []
    try:
        with RecordWriter(out / "records.csv") as writer:
            for res, recs in iter_study(case, scenarios, reals, opts["method"], u, config, workers):
                writer.write(recs)
                records += recs
                step1.append({"hour": res.hour, "feasible": res.feasible,
                              "objective": res.objective, "message": res.message,
                              "p": None if res.p is None else res.p.tolist(),
                              "alpha": None if res.alpha is None else res.alpha.tolist(),
                              "iterations": res.diagnostics.get("iterations")})
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_json(out / "step1.json", step1)
    write_manifest(out, "simulate", params | {"workers": workers},
                   {"case": opts["case_path"], "forecasts": forecasts,
                    "realizations": realizations, "baseline": baseline})
    infeasible = [s["hour"] for s in step1 if not s["feasible"]]
    if not records:
        raise InfeasibleExit(f"all {len(step1)} hours infeasible")
    rep = aggregate(records, infeasible, baseline_cost)
    write_json(out / "report.json", rep.to_dict())
    click.echo(f"{rep.n_hours} hours, {rep.n_intervals} intervals, realized cost "
               f"{rep.total_cost:.2f} $, feasibility {rep.feasibility_rate:.3f}")


def _baseline_cost(path):
    if path is None:
        return None
    try:
        return float(json.loads(Path(path).read_text())["total_cost"])
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"baseline report {path}: {exc}") from None


@cli.command()
@_grid_options
@click.option("--forecasts", type=click.Path(dir_okay=False), default=None,
              help="With --realizations, run a simulation at every grid point.")
@click.option("--realizations", type=click.Path(dir_okay=False), default=None)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
def sweep(forecasts, realizations, workers, **opts):
    """Grid over budgets and risk levels, one row per point in sweep.csv.

    --gamma, --eps-gen and --eps-line take comma-separated lists, e.g.
    --gamma 0,0.2,0.4. Rows are flushed as they complete, so an
    interrupted sweep keeps every finished point.
    """
    gammas = opts["gamma"] or [None]
    eps_gens = opts["eps_gen"] or [None]
    eps_lines = opts["eps_line"] or [None]
    case0, u0, config, params = _setup(opts | {"gamma": None, "eps_gen": None, "eps_line": None})
    series = None
    if (forecasts is None) != (realizations is None):
        raise click.UsageError("--forecasts and --realizations go together")
    if forecasts is not None:
        series = _load_series(forecasts, realizations)
    out = _out_dir(opts["out"])
    header = ["gamma", "eps_gen", "eps_line", "status", "objective", "iterations", "cuts",
              "wall_time"]
    if series:
        header += ["realized_cost", "ramp_violations", "overloads", "infeasible_hours"]
    grid = list(itertools.product(gammas, eps_gens, eps_lines))
    rows = []
    manifest_params = params | {
        "gammas": [u0.gamma_mu if (g is None and u0 is not None) else g for g in gammas],
        "eps_gens": [params["eps_gen"] if e is None else e for e in eps_gens],
        "eps_lines": [params["eps_line"] if e is None else e for e in eps_lines],
        "workers": workers,
    }
    inputs = {"case": opts["case_path"], "forecasts": forecasts, "realizations": realizations}
    interrupted = False
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        fh.flush()
        try:
            for gamma, eg, el in grid:
                row = _sweep_point(case0, u0, config, opts["method"], gamma, eg, el, series, workers)
                rows.append(row)
                writer.writerow(["" if row.get(h) is None else row[h] for h in header])
                fh.flush()
                click.echo(" ".join(f"{h}={row.get(h)}" for h in header[:5]))
        except KeyboardInterrupt:
            interrupted = True
            logger.warning("sweep interrupted after %d of %d points", len(rows), len(grid))
    write_json(out / "sweep.json", rows)
    write_manifest(out, "sweep", manifest_params | {"completed": len(rows),
                                                    "interrupted": interrupted}, inputs)
    if interrupted:
        sys.exit(130)
    if rows and all(r["status"] == "infeasible" for r in rows):
        raise InfeasibleExit("every grid point is infeasible")


def _sweep_point(case0, u0, config, method, gamma, eps_gen, eps_line, series, workers) -> dict:
    case = with_eps(case0, eps_gen, eps_line)
    u = u0.with_gamma(gamma) if (u0 is not None and gamma is not None) else u0
    row = {"gamma": None if u is None else u.gamma_mu,
           "eps_gen": _effective(g.eps for g in case.generators),
           "eps_line": _effective(ln.eps for ln in case.lines)}
    t0 = time.perf_counter()
    try:
        sol, diag = solve_cutting_plane(build_model(case, method, u), config)
        row.update(status="optimal" if diag.converged else diag.termination,
                   objective=sol.objective, iterations=diag.iterations, cuts=diag.total_cuts)
    except MasterInfeasibleError:
        row.update(status="infeasible")
    row["wall_time"] = round(time.perf_counter() - t0, 6)
    if series is not None:
        scenarios, reals = series
        step1, recs = [], []
        for res, r in iter_study(case, scenarios, reals, method, u, config, workers):
            step1.append(res)
            recs += r
        inf = [s.hour for s in step1 if not s.feasible]
        row["infeasible_hours"] = len(inf)
        if recs:
            rep = aggregate(recs, inf)
            row.update(realized_cost=rep.total_cost,
                       ramp_violations=sum(rep.ramp_violations.values()),
                       overloads=sum(rep.overloads.values()))
    return row


@cli.command()
@click.option("--records", type=click.Path(dir_okay=False), required=True)
@click.option("--infeasible-hours", type=str, default="",
              help="Comma-separated hours excluded from the records.")
@click.option("--baseline", type=click.Path(dir_okay=False), default=None)
@click.option("--out", type=click.Path(file_okay=False), default="out")
def report(records, infeasible_hours, baseline, out):
    """Re-aggregate an existing records.csv into report.json."""
    try:
        recs = read_records(records)
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"{records}: {exc}") from None
    if not recs:
        raise InputError(f"{records}: no interval records")
    try:
        inf = [int(h) for h in infeasible_hours.split(",") if h.strip()]
    except ValueError:
        raise click.BadParameter("hours must be integers", param_hint="--infeasible-hours") from None
    rep = aggregate(recs, inf, _baseline_cost(baseline))
    d = _out_dir(out)
    write_json(d / "report.json", rep.to_dict())
    write_manifest(d, "report", {"infeasible_hours": inf},
                   {"records": records, "baseline": baseline})
    click.echo(f"{rep.n_intervals} intervals, realized cost {rep.total_cost:.2f} $")


@cli.command()
@click.option("--buses", type=click.IntRange(min=2), default=30)
@click.option("--gens", type=click.IntRange(min=1), default=8)
@click.option("--wind", type=click.IntRange(min=1), default=4)
@click.option("--hours", type=click.IntRange(min=1), default=2)
@click.option("--seed", type=int, default=0)
@click.option("--mixed-fleet", is_flag=True, help="Add one nuclear and several hydro units.")
@click.option("--eps-gen", type=PROB, default=DEFAULT_EPS_GEN)
@click.option("--eps-line", type=PROB, default=DEFAULT_EPS_LINE)
@click.option("--out", type=click.Path(file_okay=False), default="synth")
def synth(buses, gens, wind, hours, seed, mixed_fleet, eps_gen, eps_line, out):
    """Write a random study fixture: case.json, forecasts.csv, realizations.csv."""
    params = SynthParams(n_buses=buses, n_gens=gens, n_wind=wind, mixed_fleet=mixed_fleet,
                         eps_gen=eps_gen, eps_line=eps_line, seed=seed)
    case, u = random_case(params)
    fc, real = random_timeseries(case, u, hours, seed=seed + 1)
    d = _out_dir(out)
    save_case(d / "case.json", case, u)
    write_timeseries(d / "forecasts.csv", fc)
    write_timeseries(d / "realizations.csv", real)
    write_manifest(d, "synth", asdict(params) | {"hours": hours, "timeseries_seed": seed + 1},
                   {"case": d / "case.json", "forecasts": d / "forecasts.csv",
                    "realizations": d / "realizations.csv"})
    click.echo(f"wrote {case.name} ({len(case.buses)} buses) and {hours} hours to {d}")


def main(argv=None) -> int:
    """Entry point mapping click errors onto the documented exit codes."""
    try:
        rv = cli.main(args=argv, prog_name="rccopf", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 130
    except click.UsageError as exc:
        exc.show()
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except OSError as exc:
        click.echo(f"Error: {exc}", err=True)
        return EXIT_IO
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
