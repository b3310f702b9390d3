"""Data behind the two standard plots: the fixed-point diagram and the
trajectory fan drawn over the optimal field magnitude. No rendering here."""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from mf_varopt.core import initial_grid, project_control
from mf_varopt.discrete_pmp import Trajectory, closed_form_controls, fixed_point_candidates, trajectories
from mf_varopt.errors import InvalidParameterError
from mf_varopt.export import Report
from mf_varopt.meanfield import optimal_feedback

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FixedPointFigure:
    x0: float
    u: np.ndarray
    identity: np.ndarray
    projection: np.ndarray
    fixed_points: tuple


@dataclass(frozen=True, eq=False)
class FieldFanFigure:
    """``magnitude[k, j]`` is |u*(times[k], positions[j])|, NaN on the undefined band."""

    times: np.ndarray
    positions: np.ndarray
    magnitude: np.ndarray
    controls: np.ndarray
    trajectories: Trajectory


FigureData = Union[FixedPointFigure, FieldFanFigure]


def emit_figure_data(which, params, resolution=200, x0=0.5):
    if resolution < 2:
        raise InvalidParameterError("resolution must be at least 2")
    if which == 1:
        u = np.linspace(-1.0, 1.0, resolution)
        return FixedPointFigure(
            x0=float(x0),
            u=u,
            identity=u.copy(),
            projection=project_control((x0 + params.horizon * u) / params.lam),
            fixed_points=tuple(fixed_point_candidates(params, x0)),
        )
    if which == 2:
        extent = 1.0 + params.horizon
        times = np.linspace(0.0, params.horizon, resolution)
        positions = np.linspace(-extent, extent, resolution)
        field = optimal_feedback(params)
        magnitude = np.abs(np.stack([field.sample(t, positions) for t in times]))
        controls = closed_form_controls(params)
        fan = trajectories(params, initial_grid(params), controls, resolution - 1)
        logger.debug("figure 2 grid %dx%d, %d trajectories", resolution, resolution, params.num_agents)
        return FieldFanFigure(times=times, positions=positions, magnitude=magnitude,
                              controls=controls, trajectories=fan)
    raise InvalidParameterError(f"unknown figure {which!r}; expected 1 or 2")


def figure_report(data):
    """Long-format rows for CSV and a nested grid for JSON."""
    if isinstance(data, FixedPointFigure):
        rows = [("identity", k, u, v) for k, (u, v) in enumerate(zip(data.u, data.identity))]
        rows += [("projection", k, u, v) for k, (u, v) in enumerate(zip(data.u, data.projection))]
        rows += [("fixed_point", k, u, u) for k, u in enumerate(data.fixed_points)]
        grid = {
            "x0": data.x0,
            "u": data.u,
            "identity": data.identity,
            "projection": data.projection,
            "fixed_points": list(data.fixed_points),
        }
        return Report(("series", "index", "u", "value"), rows, grid=grid)

    rows = []
    for k, t in enumerate(data.times):
        for j, y in enumerate(data.positions):
            rows.append(("field", k * data.positions.size + j, t, y, data.magnitude[k, j]))
    traj = data.trajectories
    for i in range(traj.positions.shape[0]):
        for k, t in enumerate(traj.times):
            rows.append(("trajectory", i, t, traj.positions[i, k], data.controls[i]))
    grid = {
        "t": data.times,
        "y": data.positions,
        "magnitude": data.magnitude,
        "controls": data.controls,
        "trajectory_times": traj.times,
        "trajectories": traj.positions,
    }
    return Report(("series", "index", "t", "y", "value"), rows, grid=grid)
