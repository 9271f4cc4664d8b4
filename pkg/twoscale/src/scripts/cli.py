"""Batch front end.

Exit codes: 0 success, 1 study threshold failure, 2 configuration error,
3 hypothesis or centring failure, 4 solver failure.
"""
import logging
import os
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd
import typer

from twoscale.src.config import UNIQUENESS_TOL
from twoscale.src.discretization.grids import CellGrid, MacroGrid
from twoscale.src.discretization.norms import lp_distance, lp_norm, w1p_norm
from twoscale.src.errors import (CentringError, ConfigError, HypothesisError, SolverError,
                                 UnresolvedOscillationError)
from twoscale.src.fields.corrector import solve_corrector_potential
from twoscale.src.fields.expressions import compile_expression
from twoscale.src.fields.periodic import MatrixField, PeriodicField, PotentialField, coefficient_from_text
from twoscale.src.fields.validation import validate_hypotheses
from twoscale.src.harness.studies import StudySpec, run_studies
from twoscale.src.ingestion.run_config import RunConfig, load_run_config
from twoscale.src.models.cell_problems import (CellFluxEvaluator, constant_flux_oracle, solve_linear_correctors,
                                               solve_nonlinear_cell, uniqueness_check)
from twoscale.src.models.effective import NonlinearEffectiveEvaluator, build_linear_effective, solve_macro_linear
from twoscale.src.models.epsilon_problem import EpsilonProblem, solve_epsilon, solve_epsilon_ibp
from twoscale.src.models.macro import solve_macro_nonlinear
from twoscale.src.models.monolithic import monolithic_solve
from twoscale.src.scripts.reports import write_frame, write_json, write_manifest, write_report, write_text
from twoscale.src.solvers.newton import SolverConfig
from twoscale.src.utils.config import Config
from twoscale.src.utils.profiling import profiled

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_STUDY, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_SOLVER = 0, 1, 2, 3, 4

app = typer.Typer(add_completion=False, help="Numerical homogenization of the oscillating p-Laplacian "
                                             "with a large potential.")
_state: Dict[str, object] = {'profile': False}

ConfigArg = typer.Argument(None, help="INI run configuration; defaults are used when omitted.")
SetOpt = typer.Option(None, '--set', help="Override as section.key=value (repeatable).")
OutOpt = typer.Option(None, '--out', help="Output directory (overrides [output] directory).")


@app.callback()
def main(log_level: str = typer.Option(Config.LOG_LEVEL, '--log-level', help="DEBUG, INFO, WARNING, ERROR"),
         profile: bool = typer.Option(False, '--profile', help="Write cProfile stats next to the artifacts.")):
    logging.basicConfig(level=getattr(logging, log_level.upper(), logging.INFO),
                        format='%(asctime)s %(levelname)s %(name)s %(message)s', force=True)
    _state['profile'] = profile


# --- builders ---

def build_fields(cfg: RunConfig):
    d = cfg.problem.d
    a = coefficient_from_text(cfg.fields.a, d=d)
    V = PotentialField.from_text(cfg.fields.V, d=d)
    return a, V


def build_source(cfg: RunConfig) -> Callable[[np.ndarray], np.ndarray]:
    return compile_expression(cfg.problem.f, d=cfg.problem.d, prefix='x')


def build_solver(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    try:
        return SolverConfig(residual_tol=s.residual_tol, max_iterations=s.max_iterations, backtrack=s.backtrack,
                            min_step=s.min_step, picard_after=s.picard_after, delta_schedule=s.delta_schedule,
                            max_delta_inserts=s.max_delta_inserts, linear_tol=s.linear_tol)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def build_study(cfg: RunConfig, a, V, f, solver: SolverConfig) -> StudySpec:
    d = cfg.problem.d
    try:
        return StudySpec(a=a, V=V, f=f, p=cfg.problem.p, eps_list=tuple(cfg.grids.eps), d=d,
                         elements_per_period=cfg.grids.elements_per_period, subcells=cfg.grids.subcells,
                         macro_n=cfg.grids.n, phi1=cfg.study.phi1,
                         phi2=tuple(PeriodicField.from_text(t, d=d) for t in cfg.study.phi2),
                         psi=tuple(PeriodicField.from_text(t, d=d) for t in cfg.study.psi),
                         form=cfg.study.form, ansatz=cfg.study.ansatz, alpha=cfg.study.alpha,
                         final_threshold=cfg.study.final_threshold, growth_factor=cfg.study.growth_factor,
                         mean_tol=cfg.study.mean_tol, solver=solver, n_jobs=cfg.solver.n_jobs)
    except ValueError as exc:
        raise ConfigError(f"study: {exc}") from exc


def _cell_evaluator(cfg: RunConfig, a, V, solver) -> CellFluxEvaluator:
    return CellFluxEvaluator(a, V, cfg.problem.p, CellGrid(d=cfg.problem.d, m=cfg.grids.m), solver,
                             quantum=cfg.solver.cache_quantum, use_cache=cfg.solver.use_cache,
                             n_jobs=cfg.solver.n_jobs)


def _require_scalar(a, what: str):
    if isinstance(a, MatrixField):
        raise ConfigError(f"{what} needs a scalar coefficient a; matrix coefficients are limited to p = 2")


# --- command runner ---

def _run(command: str, config: Optional[str], overrides: Optional[List[str]], out: Optional[str],
         body: Callable[[RunConfig, str], dict]):
    """Load the config, run ``body`` and write the manifest; maps errors onto exit codes."""
    overrides = overrides or []
    try:
        cfg, applied = load_run_config(config, overrides)
        outdir = os.path.join(out or cfg.output_dir(), command)
        os.makedirs(outdir, exist_ok=True)
        if _state['profile']:
            with profiled(command) as prof:
                result = body(cfg, outdir)
            write_text(prof.stats, os.path.join(outdir, 'profile.txt'))
        else:
            result = body(cfg, outdir)
    except ConfigError as exc:
        typer.echo(f"Configuration error: {exc}", err=True)
        raise typer.Exit(EXIT_CONFIG)
    except CentringError as exc:
        typer.echo(f"Centring error: {exc}", err=True)
        raise typer.Exit(EXIT_HYPOTHESIS)
    except HypothesisError as exc:
        typer.echo(f"Hypothesis check failed: {exc}", err=True)
        raise typer.Exit(EXIT_HYPOTHESIS)
    except SolverError as exc:
        typer.echo(f"Solver failure: {exc}", err=True)
        raise typer.Exit(EXIT_SOLVER)
    except (UnresolvedOscillationError, FileNotFoundError, ValueError) as exc:
        typer.echo(f"Configuration error: {exc}", err=True)
        raise typer.Exit(EXIT_CONFIG)

    flags = result.get('flags', {})
    write_manifest(outdir, command, cfg.canonical(), cfg.spec_hash(), applied, flags, result.get('artifacts', []),
                   result.get('stats'))
    code = result.get('exit', EXIT_OK if all(flags.values()) else EXIT_STUDY)
    typer.echo(f"{command}: wrote {len(result.get('artifacts', []))} artifact(s) to {outdir}")
    if code != EXIT_OK:
        raise typer.Exit(code)


# --- commands ---

@app.command()
def validate(config: Optional[str] = ConfigArg, set_: Optional[List[str]] = SetOpt, out: Optional[str] = OutOpt):
    """Check positivity and periodicity of a and the zero mean of V."""
    def body(cfg, outdir):
        a, V = build_fields(cfg)
        report = validate_hypotheses(a, V, cfg.grids.validation_m, cfg.study.mean_tol)
        path = write_json(report.model_dump(mode='json'), os.path.join(outdir, 'validation.json'))
        for failure in report.failures:
            typer.echo(f"FAIL: {failure}", err=True)
        return {'artifacts': [path], 'flags': {'hypotheses': report.passed},
                'exit': EXIT_OK if report.passed else EXIT_HYPOTHESIS}
    _run('validate', config, set_, out, body)


@app.command('solve-eps')
def solve_eps(config: Optional[str] = ConfigArg, set_: Optional[List[str]] = SetOpt, out: Optional[str] = OutOpt):
    """Solve the eps-problem for every eps of [grids] eps."""
    def body(cfg, outdir):
        a, V = build_fields(cfg)
        f, solver, p = build_source(cfg), build_solver(cfg), cfg.problem.p
        corrector = None
        if cfg.study.form == 'ibp':
            corrector = solve_corrector_potential(V, CellGrid(d=cfg.problem.d, m=cfg.grids.m))
        artifacts, rows = [], []
        for eps in cfg.grids.eps:
            try:
                prob = EpsilonProblem.build(a, V, f, p, eps, d=cfg.problem.d,
                                            elements_per_period=cfg.grids.elements_per_period,
                                            lower=cfg.problem.lower, upper=cfg.problem.upper,
                                            subcells=cfg.grids.subcells)
            except ValueError as exc:
                raise ConfigError(f"grids.eps: {exc}") from exc
            u, stats = solve_epsilon_ibp(prob, corrector, solver) if corrector else solve_epsilon(prob, solver)
            name = f"u_eps_{int(round(1.0 / eps))}.csv"
            artifacts.append(write_frame(u.to_frame(), os.path.join(outdir, name)))
            rows.append({'eps': eps, 'Lp_norm': lp_norm(u, p), 'W1p_norm': w1p_norm(u, p),
                         'iterations': stats.iterations, 'residual': stats.residual})
        artifacts.append(write_frame(pd.DataFrame(rows), os.path.join(outdir, 'scan.csv')))
        return {'artifacts': artifacts, 'flags': {'solved': True}}
    _run('solve-eps', config, set_, out, body)


@app.command('solve-cell')
def solve_cell(config: Optional[str] = ConfigArg, set_: Optional[List[str]] = SetOpt, out: Optional[str] = OutOpt,
               uniqueness: bool = typer.Option(False, '--uniqueness', help="Also solve from a second start.")):
    """Nonlinear cell problem at [problem] theta, xi."""
    def body(cfg, outdir):
        a, V = build_fields(cfg)
        _require_scalar(a, 'solve-cell')
        solver, p, d = build_solver(cfg), cfg.problem.p, cfg.problem.d
        grid = CellGrid(d=d, m=cfg.grids.m)
        if len(cfg.problem.xi) != d:
            raise ConfigError(f"problem.xi needs {d} components")
        sol = solve_nonlinear_cell(a, V, p, cfg.problem.theta, cfg.problem.xi, grid, solver)
        summary = {'theta': sol.theta, 'xi': list(sol.xi), 'q': np.asarray(sol.q).tolist(), 'v': sol.v,
                   'residual': sol.residual, 'iterations': sol.stats.iterations}
        flags = {'converged': sol.stats.converged}
        if d == 1:
            oracle = constant_flux_oracle(a, V, p, cfg.problem.theta, cfg.problem.xi[0])
            summary['oracle'] = {'q': oracle.q, 'v': oracle.v, 'c': oracle.c}
        if uniqueness:
            rng = np.random.default_rng(0)
            smooth = np.sin(2 * np.pi * grid.nodes[:, 0]) + 0.1 * rng.standard_normal(grid.n_dofs)
            check = uniqueness_check(a, V, p, cfg.problem.theta, cfg.problem.xi,
                                     [np.zeros(grid.n_dofs), smooth], grid, solver)
            summary['uniqueness'] = {'gradient_discrepancy': check.gradient_discrepancy,
                                     'value_discrepancy': check.value_discrepancy, 'passed': check.passed}
            flags['unique'] = check.passed
        artifacts = [write_json(summary, os.path.join(outdir, 'cell.json')),
                     write_frame(sol.chi.to_frame(), os.path.join(outdir, 'chi.csv'))]
        return {'artifacts': artifacts, 'flags': flags, 'stats': sol.stats.model_dump()}
    _run('solve-cell', config, set_, out, body)


@app.command()
def effective(config: Optional[str] = ConfigArg, set_: Optional[List[str]] = SetOpt, out: Optional[str] = OutOpt):
    """Effective coefficients (p = 2) or a flux table around [problem] theta, xi (p > 2)."""
    def body(cfg, outdir):
        a, V = build_fields(cfg)
        solver, p, d = build_solver(cfg), cfg.problem.p, cfg.problem.d
        grid = CellGrid(d=d, m=cfg.grids.m)
        if p == 2:
            correctors = solve_linear_correctors(a, V, grid)
            model = build_linear_effective(correctors, a, V, ansatz=cfg.study.ansatz)
            path = write_json(model.to_dict(), os.path.join(outdir, 'effective.json'))
            return {'artifacts': [path], 'flags': {'positive_definite': model.min_eigenvalue() > 0}}
        _require_scalar(a, 'effective')
        cells = _cell_evaluator(cfg, a, V, solver)
        theta, xi = cfg.problem.theta, np.asarray(cfg.problem.xi)
        table = cells.tabulate([-theta, 0.0, theta], [-xi, np.zeros(d), xi])
        path = cells.export_table(os.path.join(outdir, 'flux_table.csv'))
        info = cells.cache_info()
        return {'artifacts': [path], 'flags': {'tabulated': len(table) > 0},
                'stats': {'hits': info.hits, 'misses': info.misses, 'size': info.size}}
    _run('effective', config, set_, out, body)


@app.command('solve-homog')
def solve_homog(config: Optional[str] = ConfigArg, set_: Optional[List[str]] = SetOpt, out: Optional[str] = OutOpt,
                monolithic: bool = typer.Option(False, '--monolithic',
                                                help="Cross-check with the coupled solve (d = 1)."),
                uniqueness: bool = typer.Option(False, '--uniqueness', help="Also solve from the negated solution.")):
    """Homogenized macro problem: linear model at p = 2, HMM otherwise."""
    def body(cfg, outdir):
        a, V = build_fields(cfg)
        f, solver, p, d = build_source(cfg), build_solver(cfg), cfg.problem.p, cfg.problem.d
        macro = MacroGrid(d=d, n=cfg.grids.n, lower=cfg.problem.lower, upper=cfg.problem.upper)
        cell_grid = CellGrid(d=d, m=cfg.grids.m)
        artifacts = []
        if p == 2:
            model = build_linear_effective(solve_linear_correctors(a, V, cell_grid), a, V, cfg.study.ansatz)
            u = solve_macro_linear(model, f, macro, config=solver)
            artifacts.append(write_frame(u.to_frame(), os.path.join(outdir, 'u.csv')))
            artifacts.append(write_json(model.to_dict(), os.path.join(outdir, 'effective.json')))
            return {'artifacts': artifacts, 'flags': {'solved': True}}
        _require_scalar(a, 'solve-homog')
        cells = _cell_evaluator(cfg, a, V, solver)
        pair = solve_macro_nonlinear(NonlinearEffectiveEvaluator(cells), f, p, macro, solver,
                                     relaxation=cfg.solver.relaxation, macro_newton=cfg.solver.macro_newton,
                                     max_iterations=cfg.solver.macro_max_iterations)
        artifacts.append(write_frame(pair.u.to_frame(), os.path.join(outdir, 'u.csv')))
        artifacts.append(cells.export_table(os.path.join(outdir, 'flux_table.csv')))
        summary = {'converged': pair.converged, 'r_global': pair.r_global, 'r_local': pair.r_local,
                   'Lp_norm': lp_norm(pair.u, p)}
        if monolithic:
            if d != 1:
                raise ConfigError("--monolithic supports d = 1 only")
            mono = monolithic_solve(a, V, p, f, macro, cell_grid, solver)
            summary['monolithic_distance'] = lp_distance(pair.u, mono.u, p)
        if uniqueness:
            start = pair.u.scaled(-1.0)
            second = solve_macro_nonlinear(NonlinearEffectiveEvaluator(cells), f, p, macro, solver, init=start,
                                           relaxation=cfg.solver.relaxation, macro_newton=cfg.solver.macro_newton,
                                           max_iterations=cfg.solver.macro_max_iterations)
            distance = lp_distance(pair.u, second.u, p)
            summary['second_start'] = {'converged': second.converged, 'distance': distance,
                                       'r_global': second.r_global}
            # distinct branches are both reported
            if distance > UNIQUENESS_TOL * max(1.0, lp_norm(pair.u, p)):
                artifacts.append(write_frame(second.u.to_frame(), os.path.join(outdir, 'u_second.csv')))
        info = cells.cache_info()
        summary['cache'] = {'hits': info.hits, 'misses': info.misses, 'size': info.size}
        artifacts.append(write_json(summary, os.path.join(outdir, 'two_scale.json')))
        return {'artifacts': artifacts, 'flags': {'converged': pair.converged},
                'stats': pair.stats.model_dump() if pair.stats is not None else {},
                'exit': EXIT_OK if pair.converged else EXIT_SOLVER}
    _run('solve-homog', config, set_, out, body)


@app.command()
def study(config: Optional[str] = ConfigArg, set_: Optional[List[str]] = SetOpt, out: Optional[str] = OutOpt):
    """Run the eps-sweep studies named in [study] studies."""
    def body(cfg, outdir):
        a, V = build_fields(cfg)
        _require_scalar(a, 'study')
        spec = build_study(cfg, a, V, build_source(cfg), build_solver(cfg))
        reports = run_studies(cfg.study.studies, spec)
        artifacts, flags = [], {}
        for report in reports:
            path = os.path.join(outdir, f"{report.study}.{cfg.output.format}")
            artifacts.append(write_report(report, cfg.output.format, path))
            flags.update({f"{report.study}:{k}": v for k, v in report.flags.items()})
            typer.echo(f"{report.study}: {'PASS' if report.passed else 'FAIL'}")
        return {'artifacts': artifacts, 'flags': flags}
    _run('study', config, set_, out, body)
