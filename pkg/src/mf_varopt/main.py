#!/usr/bin/env python3
"""mf-varopt: variance optimization for multi-agent and mean-field control."""

import argparse
import gettext
import logging
import sys
from contextlib import nullcontext

from pydantic import ValidationError

from mf_varopt import __version__
from mf_varopt.config import RunConfig, load_settings
from mf_varopt.core import ProblemParams, UniformMeasure1D
from mf_varopt.discrete_pmp import solve_discrete
from mf_varopt.errors import InvalidParameterError, VarOptError
from mf_varopt.experiments import (
    convergence_study,
    dichotomy_map,
    extrapolate_limit,
    fit_gap_decay,
    fitted_order,
    gronwall_sweep,
    lipschitz_gap_scan,
)
from mf_varopt.export import (
    convergence_report,
    dichotomy_report,
    export_csv,
    export_json_report,
    flow_report,
    gap_report,
    gronwall_report,
    solution_report,
)
from mf_varopt.figures import emit_figure_data, figure_report
from mf_varopt.meanfield import ConstantField, MollifiedSign, optimal_feedback, solve_continuity

# Set up gettext
TEXTDOMAIN = "mf-varopt"
gettext.bindtextdomain(TEXTDOMAIN, "/usr/share/locale")
_ = gettext.translation(TEXTDOMAIN, "/usr/share/locale", fallback=True).gettext

logger = logging.getLogger("mf_varopt")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so run() can pick the exit code."""

    def error(self, message):
        raise UsageError(self.format_usage() + f"{self.prog}: error: {message}\n")


def _number_list(kind):
    def parse(text):
        try:
            return [kind(part) for part in text.split(",") if part.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(_("invalid list %r") % text) from exc

    return parse


def _add_output_options(parser):
    parser.add_argument("--format", choices=("csv", "json"), help=_("output format (default csv)"))
    parser.add_argument("--out", metavar="PATH", help=_("write to PATH instead of standard output"))
    parser.add_argument("-v", "--verbose", action="count", default=0, help=_("log progress; repeat for debug"))


def _add_problem_options(parser, lam_required):
    parser.add_argument("--lambda", dest="lam", type=float, required=lam_required, help=_("terminal weight"))
    parser.add_argument("--T", dest="horizon", type=float, help=_("time horizon (default 1)"))


def _add_flow_options(parser):
    parser.add_argument("--particles", type=int, help=_("particle count for the mean-field flow"))
    parser.add_argument("--dt", type=float, help=_("integrator time step"))


def _add_field_options(parser, choices):
    parser.add_argument("--field", choices=choices, help=_("feedback field (default optimal)"))
    parser.add_argument("--slope", type=float, help=_("Lipschitz slope L of the mollified sign field"))


def build_parser():
    parser = _Parser(prog="mf-varopt", description=_("Variance optimization for multi-agent and mean-field control."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    commands.required = True

    p = commands.add_parser("solve-discrete", help=_("exact N-agent optimal controls"))
    _add_problem_options(p, lam_required=True)
    p.add_argument("--N", dest="num_agents", type=int, help=_("number of agents (even)"))
    _add_output_options(p)

    p = commands.add_parser("solve-meanfield", help=_("flow Uniform(-1, 1) along a feedback field"))
    _add_problem_options(p, lam_required=True)
    _add_flow_options(p)
    _add_field_options(p, ("optimal", "mollified"))
    p.add_argument("--snapshots", type=int, help=_("number of output times (default 11)"))
    _add_output_options(p)

    p = commands.add_parser("converge", help=_("N-agent costs against the mean-field cost"))
    _add_problem_options(p, lam_required=True)
    _add_flow_options(p)
    _add_field_options(p, ("optimal", "mollified", "zero"))
    p.add_argument("--n-list", dest="n_list", type=_number_list(int), help=_("comma-separated agent counts"))
    _add_output_options(p)

    p = commands.add_parser("gap-scan", help=_("cost gap of mollified sign fields for 0 < lambda <= T"))
    _add_problem_options(p, lam_required=True)
    _add_flow_options(p)
    p.add_argument("--slopes", type=_number_list(float), help=_("comma-separated slopes L"))
    _add_output_options(p)

    p = commands.add_parser("gronwall", help=_("Gronwall stability check on random empirical pairs"))
    _add_problem_options(p, lam_required=False)
    _add_field_options(p, ("optimal", "mollified", "zero"))
    p.add_argument("--pairs", type=int, help=_("number of random measure pairs (default 100)"))
    p.add_argument("--seed", type=int, help=_("random seed (default 7)"))
    p.add_argument("--dt", type=float, help=_("integrator time step"))
    _add_output_options(p)

    p = commands.add_parser("dichotomy", help=_("Lipschitz-minimizer verdict per lambda"))
    p.add_argument("--lambda-list", dest="lambda_list", type=_number_list(float), required=True,
                   help=_("comma-separated lambdas; write --lambda-list=-1,2 when the first is negative"))
    p.add_argument("--T", dest="horizon", type=float, help=_("time horizon (default 1)"))
    _add_output_options(p)

    p = commands.add_parser("figure", help=_("data for the fixed-point and trajectory-fan plots"))
    p.add_argument("--which", type=int, choices=(1, 2), required=True, help=_("figure number"))
    _add_problem_options(p, lam_required=True)
    p.add_argument("--N", dest="num_agents", type=int, help=_("number of agents (even)"))
    p.add_argument("--resolution", type=int, help=_("grid points per axis (default 200)"))
    p.add_argument("--x0", type=float, help=_("initial position for figure 1 (default 0.5)"))
    _add_output_options(p)
    return parser


def _configure_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _problem(config):
    if config.lam is None:
        raise InvalidParameterError(_("--lambda is required for %s") % config.command)
    return ProblemParams(lam=config.lam, horizon=config.horizon, num_agents=config.num_agents)


def _field(config, params=None):
    if config.field == "mollified":
        return MollifiedSign(config.slope)
    if config.field == "zero":
        return ConstantField(0.0)
    return optimal_feedback(params if params is not None else _problem(config))


def _solve_discrete(config):
    return solution_report(solve_discrete(_problem(config)))


def _solve_meanfield(config):
    params = _problem(config)
    flow = solve_continuity(_field(config, params), UniformMeasure1D(), config.particles, config.dt,
                            horizon=params.horizon, num_snapshots=config.snapshots)
    return flow_report(params, flow)


def _converge(config):
    params = _problem(config)
    rows = convergence_study(params, config.n_list, _field(config, params),
                             num_particles=config.particles, step_dt=config.dt)
    order = fitted_order(rows) if sum(r.abs_error > 0 for r in rows) >= 2 else None
    return convergence_report(rows, order)


def _gap_scan(config):
    rows = lipschitz_gap_scan(_problem(config), config.slopes, num_particles=config.particles, step_dt=config.dt)
    decay = fit_gap_decay(rows) if sum(r.gap > 0 for r in rows) >= 2 else None
    return gap_report(rows, decay, extrapolate_limit(rows))


def _gronwall(config):
    field = _field(config)
    return gronwall_report(gronwall_sweep(field, config.pairs, config.seed, horizon=config.horizon, step_dt=config.dt))


def _dichotomy(config):
    if not config.lambda_list:
        raise InvalidParameterError(_("--lambda-list must name at least one lambda"))
    return dichotomy_report(dichotomy_map(config.lambda_list, config.horizon))


def _figure(config):
    data = emit_figure_data(config.which, _problem(config), resolution=config.resolution, x0=config.x0)
    return figure_report(data)


COMMANDS = {
    "solve-discrete": _solve_discrete,
    "solve-meanfield": _solve_meanfield,
    "converge": _converge,
    "gap-scan": _gap_scan,
    "gronwall": _gronwall,
    "dichotomy": _dichotomy,
    "figure": _figure,
}


def _validation_message(exc):
    messages = []
    for err in exc.errors():
        msg = err["msg"].removeprefix("Value error, ")
        loc = ".".join(str(part) for part in err["loc"])
        messages.append(f"{loc}: {msg}" if loc and msg.split()[0] != loc else msg)
    return "; ".join(messages)


def _write(config, report, out):
    target = open(out, "w", newline="", encoding="utf-8") if out else nullcontext(sys.stdout)
    with target as stream:
        if config.format == "json":
            export_json_report(config.to_output(), report, stream)
        else:
            export_csv(report, stream)


def run(argv=None):
    """Parse argv, run one subcommand and write its result. Returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:
        # --help and --version
        return exc.code if isinstance(exc.code, int) else 0

    _configure_logging(args.verbose)
    try:
        config = RunConfig.from_args(args, load_settings())
    except ValidationError as exc:
        sys.stderr.write(_("error: %s\n") % _validation_message(exc))
        return 1

    try:
        report = COMMANDS[config.command](config)
    except InvalidParameterError as exc:
        sys.stderr.write(_("error: %s\n") % exc)
        return 1
    except VarOptError as exc:
        logger.debug("numerical failure", exc_info=True)
        sys.stderr.write(_("numerical failure: %s\n") % exc)
        return 2

    try:
        _write(config, report, args.out)
    except OSError as exc:
        sys.stderr.write(_("error: cannot write %s: %s\n") % (args.out, exc))
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
