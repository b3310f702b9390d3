"""Export functionality for mf-varopt: result tables as CSV or JSON."""

import csv
import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mf_varopt import __version__
from mf_varopt.core import mean, variance, wasserstein1
from mf_varopt.meanfield import cost_from_flow

# NUL cannot appear in argv or in result strings.
FLOAT_MARK = "\x00float:"
_MARKED_FLOAT = re.compile(r'"\\u0000float:([^"]+)"')


@dataclass
class Report:
    """A result table plus scalar summary; ``grid`` replaces rows for figure data."""

    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)
    grid: Optional[dict] = None


def format_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return "%.17g" % value
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def jsonable(value, float_format=None):
    """Plain JSON types; NaN and infinities become null.

    With ``float_format`` finite floats become marker strings that
    ``_unmark_floats`` turns back into bare numbers in that format.
    """
    if isinstance(value, dict):
        return {str(k): jsonable(v, float_format) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v, float_format) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist(), float_format)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return value if float_format is None else FLOAT_MARK + float_format % value
    return value


def _unmark_floats(text):
    return _MARKED_FLOAT.sub(lambda m: m.group(1), text)


def export_csv(report, stream):
    """Write the rows of a report with a header line."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([format_cell(v) for v in row])


def export_json_report(config, report, stream):
    payload = {"config": config, "version": __version__}
    if report.grid is not None:
        payload["grid"] = report.grid
    else:
        payload["summary"] = report.summary
        payload["rows"] = [dict(zip(report.columns, row)) for row in report.rows]
    text = json.dumps(jsonable(payload, "%.17g"), indent=2, allow_nan=False, ensure_ascii=False)
    stream.write(_unmark_floats(text))
    stream.write("\n")


def solution_report(solution):
    x0 = solution.initial_positions
    rows = [
        (i + 1, x0[i], solution.controls[i], solution.costates[i], solution.final_positions[i])
        for i in range(x0.size)
    ]
    summary = {
        "regime": solution.regime.value,
        "running_cost": solution.cost.running,
        "terminal_cost": solution.cost.terminal,
        "total_cost": solution.cost.total,
    }
    return Report(("agent", "x0", "control", "costate", "final_position"), rows, summary)


def flow_report(params, flow):
    start = flow.snapshot(0)
    rows = []
    for s, t in enumerate(flow.times):
        mu = flow.snapshot(s)
        low, high = mu.bounds
        rows.append((t, mean(mu), variance(mu), low, high, wasserstein1(mu, start)))
    cost = cost_from_flow(params, flow)
    summary = {
        "particles": flow.ensemble.count,
        "method": flow.method,
        "steps": flow.num_steps,
        "running_cost": cost.running,
        "terminal_cost": cost.terminal,
        "total_cost": cost.total,
        "order_preserved": flow.order_preserved,
    }
    return Report(("t", "mean", "variance", "min", "max", "w1_from_initial"), rows, summary)


def convergence_report(rows, order):
    table = [
        (r.num_agents, r.w1_initial, r.cost_n, r.cost_limit, r.abs_error, r.w1_terminal, r.gronwall_ok)
        for r in rows
    ]
    columns = ("N", "w1_initial", "cost_N", "cost_limit", "abs_error", "w1_terminal", "gronwall_ok")
    return Report(columns, table, {"fitted_order": order})


def gap_report(rows, decay, limit):
    table = [(r.slope, r.cost_of_mollified, r.limit_cost, r.gap) for r in rows]
    summary = {"decay_exponent": decay, "extrapolated_limit": limit}
    return Report(("L", "cost_of_mollified", "limit_cost", "gap"), table, summary)


def gronwall_report(report):
    table = [(s.pair, s.t, s.lhs, s.rhs, s.ratio) for s in report.samples]
    summary = {"lipschitz": report.lipschitz, "max_ratio": report.max_ratio, "ok": report.ok}
    return Report(("pair", "t", "lhs", "rhs", "ratio"), table, summary)


def dichotomy_report(cells):
    table = [
        (c.lam, c.horizon, c.regime.value, c.verdict.value, c.witness_lipschitz_bound, c.divergence_marker)
        for c in cells
    ]
    return Report(("lambda", "T", "regime", "verdict", "lipschitz_bound", "divergence"), table)
