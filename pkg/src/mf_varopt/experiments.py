"""Numerical evidence for the limit statements: cost convergence, Gronwall
stability, the Lipschitz dichotomy and the cost gap of mollified sign fields."""

import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from mf_varopt.core import EmpiricalMeasure1D, ProblemParams, UniformMeasure1D, initial_grid, wasserstein1
from mf_varopt.discrete_pmp import Regime, classify_regime, solve_discrete
from mf_varopt.errors import InvalidParameterError, NonLipschitzFieldError, UnsupportedRegimeError
from mf_varopt.meanfield import (
    MollifiedSign,
    SignWithGap,
    continuous_cost,
    cost_from_flow,
    gronwall_bound_check,
    solve_continuity,
)

logger = logging.getLogger(__name__)

DEFAULT_PARTICLES = 100_000
DEFAULT_STEP = 1e-3
GRONWALL_TOL = 1e-9
# Smallest and largest atom counts of the random measures in gronwall_sweep.
MIN_ATOMS = 2
MAX_ATOMS = 64
TIMES_PER_PAIR = 5


class Verdict(enum.Enum):
    EXISTS = "exists"
    NONE = "none"


@dataclass(frozen=True)
class ConvergenceRow:
    num_agents: int
    w1_initial: float
    cost_n: float
    cost_limit: float
    abs_error: float
    w1_terminal: float
    gronwall_ok: bool


@dataclass(frozen=True)
class GapRow:
    slope: float
    cost_of_mollified: float
    limit_cost: float
    gap: float


@dataclass(frozen=True)
class DichotomyCell:
    lam: float
    horizon: float
    regime: Regime
    verdict: Verdict
    witness_lipschitz_bound: Optional[float]
    divergence_marker: Optional[str]


@dataclass(frozen=True)
class CandidateGapRow:
    num_agents: int
    candidate_cost: float
    optimal_cost: float
    gap: float


@dataclass(frozen=True)
class GronwallSample:
    pair: int
    t: float
    lhs: float
    rhs: float
    ratio: float


@dataclass(frozen=True)
class GronwallReport:
    lipschitz: float
    samples: tuple

    @property
    def max_ratio(self):
        return max((s.ratio for s in self.samples), default=0.0)

    @property
    def ok(self):
        return self.max_ratio <= 1.0 + GRONWALL_TOL


def _require_lipschitz(field):
    if not field.is_lipschitz:
        raise NonLipschitzFieldError(f"{type(field).__name__} is not Lipschitz in space")


def _sorted_agent_counts(n_list):
    counts = sorted(set(int(n) for n in n_list))
    if not counts:
        raise InvalidParameterError("at least one N is needed")
    return counts


def convergence_study(params, n_list, field, num_particles=DEFAULT_PARTICLES, step_dt=DEFAULT_STEP):
    """C_N along the field from the N-agent grid against the mean-field cost."""
    _require_lipschitz(field)
    horizon = params.horizon
    uniform = UniformMeasure1D()

    limit_flow = solve_continuity(field, uniform, num_particles, step_dt, horizon=horizon, num_snapshots=2)
    cost_limit = cost_from_flow(params, limit_flow).total
    limit_start = limit_flow.snapshot(0)
    limit_end = limit_flow.final_measure
    growth = math.exp(field.lipschitz_bound(horizon) * horizon)
    logger.info("mean-field cost with %d particles: %.12g", limit_flow.ensemble.count, cost_limit)

    rows = []
    for n in _sorted_agent_counts(n_list):
        agent_params = replace(params, num_agents=n)
        grid = EmpiricalMeasure1D(initial_grid(agent_params))
        flow = solve_continuity(field, grid, n, step_dt, horizon=horizon, num_snapshots=2)
        cost_n = cost_from_flow(agent_params, flow).total
        w1_terminal = wasserstein1(flow.final_measure, limit_end)
        # Particle flows satisfy the bound exactly against the sampled limit measure.
        gronwall_ok = w1_terminal <= growth * wasserstein1(grid, limit_start) + 1e-8
        row = ConvergenceRow(
            num_agents=n,
            w1_initial=wasserstein1(grid, uniform),
            cost_n=cost_n,
            cost_limit=cost_limit,
            abs_error=abs(cost_n - cost_limit),
            w1_terminal=w1_terminal,
            gronwall_ok=bool(gronwall_ok),
        )
        logger.info("N=%d cost=%.12g error=%.3e", n, cost_n, row.abs_error)
        rows.append(row)
    return rows


def fitted_order(rows):
    """p in abs_error ~ N^(-p), by least squares on log-log data."""
    points = [(r.num_agents, r.abs_error) for r in rows if r.abs_error > 0]
    if len(points) < 2:
        raise InvalidParameterError("need two rows with a nonzero error to fit an order")
    n, err = np.array(points, dtype=np.float64).T
    slope, _intercept = np.polyfit(np.log(n), np.log(err), 1)
    return float(-slope)


def gronwall_sweep(field, num_pairs, rng_seed, horizon=1.0, step_dt=DEFAULT_STEP):
    """Check W1 of pushed measures against e^{Lt} W1 on random empirical pairs."""
    _require_lipschitz(field)
    lipschitz = field.lipschitz_bound(horizon)
    rng = np.random.default_rng(rng_seed)
    samples = []
    for pair in range(num_pairs):
        sizes = rng.integers(MIN_ATOMS, MAX_ATOMS + 1, size=2)
        mu = EmpiricalMeasure1D(rng.uniform(-1.0, 1.0, size=sizes[0]))
        nu = EmpiricalMeasure1D(rng.uniform(-1.0, 1.0, size=sizes[1]))
        for t in np.sort(rng.uniform(0.0, horizon, size=TIMES_PER_PAIR)):
            lhs, rhs = gronwall_bound_check(field, mu, nu, float(t), lipschitz=lipschitz, step_dt=step_dt)
            ratio = 0.0 if lhs == 0 and rhs == 0 else lhs / rhs
            samples.append(GronwallSample(pair=pair, t=float(t), lhs=lhs, rhs=rhs, ratio=ratio))
    report = GronwallReport(lipschitz=lipschitz, samples=tuple(samples))
    logger.info("%d pairs, max ratio %.12g", num_pairs, report.max_ratio)
    if not report.ok:
        logger.warning("Gronwall bound exceeded: max ratio %.12g", report.max_ratio)
    return report


def sign_motion_limit_cost(params):
    """Mean-field cost of moving every particle with sign(x0) from Uniform(-1, 1)."""
    horizon = params.horizon
    return horizon / 2.0 - ((1.0 + horizon) ** 3 - horizon ** 3) / (6.0 * params.lam)


def lipschitz_gap_scan(params, l_list, num_particles=DEFAULT_PARTICLES, step_dt=DEFAULT_STEP):
    """Cost of MollifiedSign(L) above the sign-motion cost, for lambda in (0, T]."""
    if classify_regime(params).has_lipschitz_minimizer:
        raise UnsupportedRegimeError("the gap scan needs 0 < lambda <= T")
    limit = sign_motion_limit_cost(params)
    rows = []
    for slope in sorted(set(float(s) for s in l_list)):
        cost = continuous_cost(params, MollifiedSign(slope), UniformMeasure1D(), num_particles, step_dt).total
        rows.append(GapRow(slope=slope, cost_of_mollified=cost, limit_cost=limit, gap=cost - limit))
        logger.info("L=%g cost=%.12g gap=%.6e", slope, cost, cost - limit)

    gaps = [r.gap for r in rows]
    if any(g <= 0 for g in gaps) or any(b >= a for a, b in zip(gaps, gaps[1:])):
        logger.warning("gaps are not positive and strictly decreasing: %s", gaps)
    return rows


def fit_gap_decay(rows):
    """Exponent q in gap ~ L^(-q)."""
    points = [(r.slope, r.gap) for r in rows if r.gap > 0]
    if len(points) < 2:
        raise InvalidParameterError("need two positive gaps to fit a decay")
    slope, gap = np.array(points, dtype=np.float64).T
    fitted, _intercept = np.polyfit(np.log(slope), np.log(gap), 1)
    return float(-fitted)


def extrapolate_limit(rows):
    """Aitken delta-squared limit of the costs of the last three slopes."""
    costs = [r.cost_of_mollified for r in rows]
    if not costs:
        raise InvalidParameterError("no rows to extrapolate")
    if len(costs) < 3:
        return costs[-1]
    c1, c2, c3 = costs[-3:]
    d1, d2 = c2 - c1, c3 - c2
    if d1 == d2 or abs(d2) >= abs(d1):
        return c3
    return c3 - d2 * d2 / (d2 - d1)


def dichotomy_map(lambda_list, horizon):
    cells = []
    for lam in lambda_list:
        params = ProblemParams(lam=lam, horizon=horizon)
        regime = classify_regime(params)
        if regime is Regime.SUPERCRITICAL_MAX:
            bound = 1.0 / (params.lam - params.horizon)
        elif regime is Regime.MINIMIZATION:
            bound = 1.0 / abs(params.lam)
        else:
            cells.append(DichotomyCell(params.lam, params.horizon, regime, Verdict.NONE, None, "N-1"))
            continue
        cells.append(DichotomyCell(params.lam, params.horizon, regime, Verdict.EXISTS, bound, None))
    return cells


def candidate_gap_study(params, field, n_list, step_dt=DEFAULT_STEP):
    """c_N = C_N(candidate feedback) - C_N(optimal controls) on the N-agent grid."""
    if isinstance(field, SignWithGap) or not field.is_lipschitz:
        raise NonLipschitzFieldError("candidate fields must be Lipschitz in space")
    rows = []
    for n in _sorted_agent_counts(n_list):
        agent_params = replace(params, num_agents=n)
        grid = EmpiricalMeasure1D(initial_grid(agent_params))
        candidate = continuous_cost(agent_params, field, grid, n, step_dt).total
        optimal = solve_discrete(agent_params).cost.total
        rows.append(CandidateGapRow(num_agents=n, candidate_cost=candidate, optimal_cost=optimal,
                                    gap=candidate - optimal))
        logger.info("N=%d candidate gap %.6e", n, candidate - optimal)
    return rows
