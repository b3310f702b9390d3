"""Exact solution of the N-agent variance problem through the maximum principle.

The optimal controls are constant in time and, on the symmetric initial
grid, have mean zero. Each agent then decouples into the scalar fixed-point
equation u = pi((x0 + T u) / lambda), solved here in closed form and,
independently, by enumerating its three analytic branches.
"""

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from mf_varopt.core import (
    EmpiricalMeasure1D,
    ProblemParams,
    initial_grid,
    project_control,
    variance,
)
from mf_varopt.errors import ConsistencyError, InvalidParameterError

logger = logging.getLogger(__name__)

ControlVector = npt.NDArray[np.float64]

# Candidates closer than this are the same fixed point.
DEDUP_TOL = 1e-12
# Branch costs closer than this are a tie.
TIE_TOL = 1e-12
MEAN_ZERO_TOL = 1e-12
COSTATE_TOL = 1e-10
# Above this agent count lipschitz_constant scans neighbours only.
FULL_SCAN_LIMIT = 1000


class Regime(enum.Enum):
    SUPERCRITICAL_MAX = "supercritical_max"  # lambda > T
    CRITICAL_MAX = "critical_max"  # lambda = T
    SUBCRITICAL_MAX = "subcritical_max"  # 0 < lambda < T
    MINIMIZATION = "minimization"  # lambda < 0

    @property
    def has_lipschitz_minimizer(self):
        return self in (Regime.SUPERCRITICAL_MAX, Regime.MINIMIZATION)


@dataclass(frozen=True)
class CostBreakdown:
    running: float
    terminal: float
    total: float

    @classmethod
    def from_terms(cls, running, terminal):
        running = float(running)
        terminal = float(terminal)
        return cls(running=running, terminal=terminal, total=running + terminal)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Agent positions sampled on a uniform time grid; ``positions[i, k]`` is x_i(t_k)."""

    times: np.ndarray
    positions: np.ndarray

    @property
    def initial_positions(self):
        return self.positions[:, 0]


@dataclass(frozen=True, eq=False)
class PMPSolution:
    params: ProblemParams
    regime: Regime
    initial_positions: np.ndarray
    controls: ControlVector
    costates: np.ndarray
    final_positions: np.ndarray
    cost: CostBreakdown


def classify_regime(params):
    lam, horizon = params.lam, params.horizon
    if lam == 0:
        raise InvalidParameterError("lambda must be nonzero")
    if lam < 0:
        return Regime.MINIMIZATION
    if lam > horizon:
        return Regime.SUPERCRITICAL_MAX
    if lam == horizon:
        return Regime.CRITICAL_MAX
    return Regime.SUBCRITICAL_MAX


def closed_form_controls(params):
    """Optimal constant controls on the initial grid.

    lambda > T and lambda < 0 share u_i = pi(x_i / (lambda - T)); the sign of
    lambda - T decides whether agents spread out or gather. For 0 < lambda <= T
    every agent saturates in the direction it starts in.
    """
    x0 = initial_grid(params)
    if classify_regime(params).has_lipschitz_minimizer:
        return project_control(x0 / (params.lam - params.horizon))
    return np.sign(x0)


def branch_cost(params, x0, u):
    """Cost contribution of one agent once the controls have mean zero."""
    lam, horizon = params.lam, params.horizon
    final = x0 + horizon * u
    return 0.5 * horizon * u * u - final * final / (2.0 * lam)


def fixed_point_candidates(params, x0):
    """All u in [-1, 1] with u = pi((x0 + T u) / lambda), ascending."""
    lam, horizon = params.lam, params.horizon
    x0 = float(x0)
    found = []
    if lam != horizon:
        interior = x0 / (lam - horizon)
        if abs(interior) <= 1.0:
            found.append(interior)
    elif x0 == 0:
        raise InvalidParameterError("x0 must be nonzero when lambda = T")
    if (x0 + horizon) / lam >= 1.0:
        found.append(1.0)
    if (x0 - horizon) / lam <= -1.0:
        found.append(-1.0)
    if not found:
        raise ConsistencyError(f"no fixed point found for x0={x0!r}, lambda={lam!r}, T={horizon!r}")

    found.sort()
    unique = [found[0]]
    for u in found[1:]:
        if u - unique[-1] > DEDUP_TOL:
            unique.append(u)
        elif abs(u) == 1.0:
            unique[-1] = u
    return unique


def select_optimal_branch(params, x0, candidates):
    """Cheapest candidate; ties go to the larger |u|."""
    best_u = None
    best_cost = math.inf
    for u in candidates:
        cost = branch_cost(params, x0, u)
        if cost < best_cost - TIE_TOL:
            best_u, best_cost = u, cost
        elif abs(cost - best_cost) <= TIE_TOL and abs(u) > abs(best_u):
            best_u, best_cost = u, min(cost, best_cost)
    if best_u is None:
        raise ConsistencyError("no candidate to select from")
    return best_u


def branch_controls(params):
    """Controls obtained agent by agent from the fixed-point branches."""
    x0 = initial_grid(params)
    controls = np.array(
        [select_optimal_branch(params, x, fixed_point_candidates(params, x)) for x in x0]
    )
    control_mean = math.fsum(controls) / controls.size
    if abs(control_mean) > MEAN_ZERO_TOL:
        raise ConsistencyError(f"selected controls have mean {control_mean!r}, expected 0")
    return controls


def _check_length(params, *vectors):
    for v in vectors:
        if np.shape(v) != (params.num_agents,):
            raise InvalidParameterError(
                f"expected a vector of length {params.num_agents}, got shape {np.shape(v)}"
            )


def hamiltonian(params, p, u):
    """H_N(p, u) = sum_i (p_i u_i - u_i^2 / (2N))."""
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_length(params, p, u)
    return math.fsum(p * u - u * u / (2.0 * params.num_agents))


def maximize_hamiltonian(params, p):
    """Pointwise argmax over [-1, 1] of p_i v - v^2/(2N), i.e. pi(N p_i)."""
    p = np.asarray(p, dtype=np.float64)
    _check_length(params, p)
    return project_control(params.num_agents * p)


def costates(params, final_positions):
    """p_i = (x_i(T) - mean x(T)) / (N lambda); constant in time."""
    final = np.asarray(final_positions, dtype=np.float64)
    _check_length(params, final)
    centre = math.fsum(final) / final.size
    return (final - centre) / (params.num_agents * params.lam)


def discrete_cost(params, x0, controls):
    """C_N for constant controls: (T/2N) sum u_i^2 - Var(x0 + T u) / (2 lambda)."""
    x0 = np.asarray(x0, dtype=np.float64)
    u = np.asarray(controls, dtype=np.float64)
    _check_length(params, x0, u)
    running = params.horizon * math.fsum(u * u) / (2.0 * params.num_agents)
    terminal = -variance(EmpiricalMeasure1D(x0 + params.horizon * u)) / (2.0 * params.lam)
    return CostBreakdown.from_terms(running, terminal)


def trajectories(params, x0, controls, num_steps):
    if num_steps < 1:
        raise InvalidParameterError("num_steps must be at least 1")
    x0 = np.asarray(x0, dtype=np.float64)
    u = np.asarray(controls, dtype=np.float64)
    times = np.linspace(0.0, params.horizon, num_steps + 1)
    positions = x0[:, None] + times[None, :] * u[:, None]
    return Trajectory(times=times, positions=positions)


def lipschitz_constant(traj, controls, t):
    """max over i != j of |u_i - u_j| / |x_i(t) - x_j(t)|.

    Returns math.inf when two agents share a position but not a control.
    """
    if not 0.0 <= t <= traj.times[-1]:
        raise InvalidParameterError(f"t={t!r} is outside [0, {traj.times[-1]!r}]")
    u = np.asarray(controls, dtype=np.float64)
    x = traj.initial_positions + t * u
    n = x.size
    if n < 2:
        return 0.0

    if n <= FULL_SCAN_LIMIT:
        dx = np.abs(x[:, None] - x[None, :])
        du = np.abs(u[:, None] - u[None, :])
        off_diagonal = ~np.eye(n, dtype=bool)
    else:
        # In 1-D the steepest pair slope is attained by neighbours in position order.
        order = np.argsort(x, kind="stable")
        dx = np.diff(x[order])
        du = np.abs(np.diff(u[order]))
        off_diagonal = np.ones_like(dx, dtype=bool)

    if np.any(off_diagonal & (dx == 0) & (du > 0)):
        logger.warning("agents collide at t=%r with distinct controls; Lipschitz constant is infinite", t)
        return math.inf
    mask = off_diagonal & (dx > 0)
    if not np.any(mask):
        return 0.0
    return float(np.max(du[mask] / dx[mask]))


def solve_discrete(params):
    """Closed-form PMP solution with its costates and cost."""
    regime = classify_regime(params)
    x0 = initial_grid(params)
    controls = closed_form_controls(params)
    final = x0 + params.horizon * controls
    p = costates(params, final)

    mismatch = float(np.max(np.abs(maximize_hamiltonian(params, p) - controls)))
    logger.debug("costate consistency for %s: max mismatch %.3e", params, mismatch)
    if mismatch > COSTATE_TOL:
        raise ConsistencyError(f"controls do not maximize the Hamiltonian (mismatch {mismatch:.3e})")

    return PMPSolution(
        params=params,
        regime=regime,
        initial_positions=x0,
        controls=controls,
        costates=p,
        final_positions=final,
        cost=discrete_cost(params, x0, controls),
    )
