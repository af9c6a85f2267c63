"""CLI commands for Vigie.

Runs SCPA and baseline experiments from a preset or a JSON config file:

- run:     risk report at one cost c (optionally saving one trial's trace)
- sweep:   one report per cost in the c list, written as CSV
- compare: sweep every policy on the same trial seeds
- replay:  re-run a saved trace and check it reproduces byte for byte

Exit codes: 0 success, 1 replay mismatch, 2 unreadable input,
3 invalid configuration, 4 any other failure.
"""

import functools
import logging
import sys
from pathlib import Path

import click

from .config import POLICIES, ExperimentConfig, list_presets, load_config, load_preset
from .errors import ConfigError, ConfigParseError, VigieError
from .policy import Statistic
from .risk import (
    compare as compare_policies,
    estimate_risk,
    fit_delay_slope,
    matched_delay_dominance,
    record_trace,
    reference_slope,
    replay as replay_trace,
    sweep as sweep_costs,
)
from .storage import compare_table, read_trace, sweep_table, write_table, write_trace


EXIT_MISMATCH = 1
EXIT_PARSE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4


def get_version() -> str:
    """Get package version."""
    try:
        from importlib.metadata import version
        return version("vigie")
    except Exception:
        return "unknown"


def handle_errors(func):
    """Report library errors on stderr and exit with their code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigParseError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_PARSE)
        except ConfigError as e:
            click.echo(f"Invalid configuration: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except VigieError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_RUNTIME)
        except click.ClickException:
            raise
        except Exception as e:
            click.echo(f"Error: {type(e).__name__}: {e}", err=True)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def parse_c_list(ctx, param, value: str | None) -> list[float] | None:
    if value is None:
        return None
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{value}'")


def experiment_options(func):
    """Options shared by the experiment commands."""
    options = [
        click.option("--preset", "-p", default=None, help="Named preset (see `vigie presets`)."),
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="JSON experiment config."),
        click.option("--trials", "-n", type=int, default=None, help="Monte Carlo trials per cost."),
        click.option("--seed", type=int, default=None, help="Master seed."),
        click.option("--out", "-o", type=click.Path(dir_okay=False), default=None,
                     help="CSV output path."),
        click.option("--policy", type=click.Choice(POLICIES), default=None),
        click.option("--statistic", type=click.Choice([s.value for s in Statistic]), default=None),
        click.option("--c", "cost", type=float, default=None, help="Cost per observation."),
        click.option("--c-list", callback=parse_c_list, default=None,
                     help="Comma-separated costs, e.g. 1e-1,1e-2,1e-3."),
        click.option("--cap", type=int, default=None, help="Step cap per trial."),
        click.option("--workers", "-w", type=int, default=None, help="Worker processes."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_config(preset: str | None, config_path: str | None, **overrides) -> ExperimentConfig:
    if preset and config_path:
        raise click.UsageError("use either --preset or --config, not both")
    if config_path:
        config = load_config(config_path)
    elif preset:
        config = load_preset(preset)
    else:
        config = ExperimentConfig().validate()
    return config.with_overrides(**overrides)


def _config_from_options(preset, config_path, trials, seed, out, policy, statistic,
                         cost, c_list, cap, workers) -> ExperimentConfig:
    return resolve_config(
        preset, config_path,
        n_trials=trials, seed=seed, out=out, policy=policy, statistic=statistic,
        c=cost, c_list=c_list, cap=cap, workers=workers,
    )


def _echo_rows(reports) -> None:
    click.echo(f"{'c':>10} {'-ln c':>8} {'delay':>10} {'+/-':>8} {'P_e':>10} {'R':>10} {'trunc':>6}")
    for r in reports:
        click.echo(f"{r.c:>10.3g} {r.neg_ln_c:>8.3f} {r.mean_delay:>10.4g} {r.delay_ci:>8.3g} "
                   f"{r.p_e:>10.4g} {r.bayes_risk:>10.4g} {r.n_truncated:>6d}")


@click.group()
@click.version_option(get_version(), prog_name="vigie")
@click.option("--verbose", "-v", count=True, help="-v for progress, -vv for policy transitions.")
def main(verbose):
    """Vigie - sequential change-point anomaly search simulator"""
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
def presets():
    """List the bundled experiment presets."""
    for name in list_presets():
        click.echo(name)


@main.command()
@experiment_options
@click.option("--save-trace", type=click.Path(dir_okay=False), default=None,
              help="Write the trace of one trial to this file.")
@click.option("--trace-trial", type=int, default=0, show_default=True,
              help="Trial index whose trace is saved.")
@handle_errors
def run(preset, config_path, trials, seed, out, policy, statistic, cost, c_list, cap, workers,
        save_trace, trace_trial):
    """Estimate error probability, delay and Bayes risk at one cost c."""
    config = _config_from_options(preset, config_path, trials, seed, out, policy, statistic,
                                  cost, c_list, cap, workers)
    report = estimate_risk(config)
    click.echo(report.summary())
    if config.out:
        path = write_table(sweep_table([report]), config.out)
        click.echo(f"Wrote {path}")
    if save_trace:
        if trace_trial < 0:
            raise ConfigError("trace_trial", "trial index must be >= 0")
        path = write_trace(record_trace(config, config.c, trace_trial), save_trace)
        click.echo(f"Saved trace of trial {trace_trial} to {path}")


@main.command()
@experiment_options
@handle_errors
def sweep(preset, config_path, trials, seed, out, policy, statistic, cost, c_list, cap, workers):
    """Sweep the cost c and tabulate delay, error probability and risk."""
    config = _config_from_options(preset, config_path, trials, seed, out, policy, statistic,
                                  cost, c_list, cap, workers)
    reports = sweep_costs(config)
    click.echo(f"policy {config.policy}, {config.n_trials} trials per cost, seed {config.seed}")
    _echo_rows(reports)

    if len(reports) >= 2:
        fit = fit_delay_slope(reports)
        click.echo(f"delay slope vs -ln c: {fit.slope:.4g} (intercept {fit.intercept:.4g}, "
                   f"R^2 {fit.r_squared:.4f})")
        reference = reference_slope(config)
        if reference is not None:
            click.echo(f"asymptotic slope 1/D: {reference:.4g}")

    if config.out:
        path = write_table(sweep_table(reports), config.out)
        click.echo(f"Wrote {path}")


@main.command()
@experiment_options
@click.option("--policies", default=",".join(POLICIES), show_default=True,
              help="Comma-separated policies to compare.")
@handle_errors
def compare(preset, config_path, trials, seed, out, policy, statistic, cost, c_list, cap, workers,
            policies):
    """Sweep several policies over the same trial seeds."""
    names = [p.strip() for p in policies.split(",") if p.strip()]
    for name in names:
        if name not in POLICIES:
            raise ConfigError("policy", f"unknown policy '{name}' (known: {', '.join(POLICIES)})")
    config = _config_from_options(preset, config_path, trials, seed, out, policy, statistic,
                                  cost, c_list, cap, workers)
    results = compare_policies(config, names)
    for name, reports in results.items():
        click.echo(f"\n[{name}]")
        _echo_rows(reports)

    if "cusum" in results:
        for name, reports in results.items():
            if name == "cusum":
                continue
            compared, better = matched_delay_dominance(reports, results["cusum"])
            click.echo(f"{name} vs cusum: lower error at {better} of {compared} matched delays")

    if config.out:
        path = write_table(compare_table(results), config.out)
        click.echo(f"Wrote {path}")


@main.command()
@click.option("--trace", "trace_option", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Trace file written by `run --save-trace`.")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False), required=False)
@handle_errors
def replay(trace_option, trace_path):
    """Re-run a saved trace and check it reproduces exactly."""
    if trace_option and trace_path:
        raise click.UsageError("give the trace either with --trace or as an argument, not both")
    trace_path = trace_option or trace_path
    if trace_path is None:
        raise click.UsageError("missing trace file (use --trace PATH)")
    result = replay_trace(read_trace(Path(trace_path)))
    if result.ok:
        click.echo(f"Replay OK: {trace_path}")
        return
    click.echo(f"Replay mismatch at line {result.mismatch_line}", err=True)
    sys.exit(EXIT_MISMATCH)


def run_cli(argv: list[str] | None = None) -> int:
    """Run the CLI on argv and return its exit code instead of exiting."""
    try:
        main.main(args=argv, prog_name="vigie", standalone_mode=False)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else EXIT_RUNTIME)
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        return EXIT_RUNTIME
    except Exception as e:
        click.echo(f"Error: {type(e).__name__}: {e}", err=True)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(run_cli())
