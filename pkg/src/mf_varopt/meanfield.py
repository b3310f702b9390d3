"""Feedback fields, characteristic flows and the mean-field cost.

The continuity equation is solved by the method of characteristics: the
initial measure is replaced by equally weighted particles at its midpoint
quantiles and each particle follows dy/dt = u(t, y). Fields with a closed
form flow map are moved exactly; the others with the classical fourth-order
Runge-Kutta scheme on a uniform time grid.
"""

import abc
import logging
import math
from dataclasses import dataclass, field as dataclass_field
from typing import Optional

import numpy as np
from scipy import integrate as sp_integrate
from scipy import interpolate

from mf_varopt.core import (
    EmpiricalMeasure1D,
    UniformMeasure1D,
    midpoint_sample,
    project_control,
    variance,
    wasserstein1,
)
from mf_varopt.discrete_pmp import CostBreakdown, classify_regime
from mf_varopt.errors import (
    IntegrationDomainError,
    InvalidParameterError,
    NonLipschitzFieldError,
    UndefinedBandError,
    UnsupportedRegimeError,
)

logger = logging.getLogger(__name__)

DEFAULT_SNAPSHOTS = 11


def _as_output(values, y):
    if np.ndim(y) == 0:
        return float(values)
    return values


class FeedbackField(abc.ABC):
    """A control u(t, y) with values in [-1, 1], vectorised over y."""

    has_exact_flow = False
    is_lipschitz = True
    # end time used when a flow is asked for without one
    default_horizon = 1.0

    @abc.abstractmethod
    def __call__(self, t, y):
        """Evaluate u(t, y); raises UndefinedBandError where u is not defined."""

    def sample(self, t, y):
        """Like calling the field, but NaN where it is undefined."""
        return self(t, y)

    @abc.abstractmethod
    def lipschitz_bound(self, horizon):
        """Space-Lipschitz constant over [0, horizon], or None if there is none."""

    def flow(self, t, y0):
        """Exact characteristic from time 0 to time t."""
        raise NotImplementedError(f"{type(self).__name__} has no closed-form flow")


@dataclass(frozen=True)
class SaturatedLinear(FeedbackField):
    """u(t, y) = pi(y / (lambda - T + t)), defined for lambda > T or lambda < 0."""

    lam: float
    horizon: float

    has_exact_flow = True

    def __post_init__(self):
        if not (self.lam > self.horizon or self.lam < 0):
            raise InvalidParameterError("saturated-linear field needs lambda > T or lambda < 0")

    @property
    def default_horizon(self):
        return self.horizon

    @property
    def offset(self):
        return self.lam - self.horizon

    def __call__(self, t, y):
        y = np.asarray(y, dtype=np.float64)
        return _as_output(project_control(y / (self.offset + t)), y)

    def lipschitz_bound(self, horizon):
        if self.lam > self.horizon:
            return 1.0 / self.offset
        # |lambda - T + t| shrinks towards |lambda| as t grows.
        return 1.0 / abs(self.offset + min(horizon, self.horizon))

    def flow(self, t, y0):
        y0 = np.asarray(y0, dtype=np.float64)
        d = self.offset
        interior = np.abs(y0) <= abs(d)
        moved = np.where(interior, y0 * ((d + t) / d), y0 + t * np.sign(y0 * d))
        return _as_output(moved, y0)


@dataclass(frozen=True)
class SignWithGap(FeedbackField):
    """u(t, y) = sign(y) for |y| > t; undefined on the band |y| <= t.

    ``tie_value_at_0`` is returned at y = 0 when set. It is a plotting
    convention only: no particle of a measure without an atom at 0 ever
    enters the band.
    """

    tie_value_at_0: Optional[float] = 0.0

    has_exact_flow = True
    is_lipschitz = False

    def _values(self, t, y):
        values = np.sign(y)
        band = np.abs(y) <= t
        if self.tie_value_at_0 is not None:
            at_zero = y == 0
            values = np.where(at_zero, self.tie_value_at_0, values)
            band = band & ~at_zero
        return values, band

    def __call__(self, t, y):
        y = np.asarray(y, dtype=np.float64)
        values, band = self._values(t, y)
        if np.any(band):
            raise UndefinedBandError(t, float(np.ravel(y)[np.argmax(np.ravel(band))]))
        return _as_output(values, y)

    def sample(self, t, y):
        y = np.asarray(y, dtype=np.float64)
        values, band = self._values(t, y)
        return _as_output(np.where(band, np.nan, values), y)

    def lipschitz_bound(self, horizon):
        return None

    def flow(self, t, y0):
        y0 = np.asarray(y0, dtype=np.float64)
        if np.any(y0 == 0):
            raise IntegrationDomainError("a particle starts at 0, inside the undefined band")
        return _as_output(y0 + t * np.sign(y0), y0)


@dataclass(frozen=True)
class MollifiedSign(FeedbackField):
    """u(t, y) = pi(L y): the L-Lipschitz clamp approximating sign(y)."""

    slope: float

    has_exact_flow = True

    def __post_init__(self):
        if not (math.isfinite(self.slope) and self.slope > 0):
            raise InvalidParameterError("mollification slope L must be positive")

    def __call__(self, t, y):
        y = np.asarray(y, dtype=np.float64)
        return _as_output(project_control(self.slope * y), y)

    def lipschitz_bound(self, horizon):
        return float(self.slope)

    def flow(self, t, y0):
        # dy/dt = L y until |y| reaches 1/L, then unit speed outwards.
        y0 = np.asarray(y0, dtype=np.float64)
        L = self.slope
        a = np.abs(y0)
        with np.errstate(divide="ignore"):
            t_sat = np.where(a >= 1.0 / L, 0.0, np.log(1.0 / (L * a)) / L)
        growing = t < t_sat
        with np.errstate(over="ignore"):
            grown = a * np.exp(L * np.minimum(t, t_sat))
        magnitude = np.where(growing, grown, np.maximum(a, 1.0 / L) + (t - t_sat))
        return _as_output(np.sign(y0) * magnitude, y0)


@dataclass(frozen=True)
class ConstantField(FeedbackField):
    """u(t, y) = value everywhere."""

    value: float = 0.0

    has_exact_flow = True

    def __post_init__(self):
        if not -1.0 <= self.value <= 1.0:
            raise InvalidParameterError("constant control must lie in [-1, 1]")

    def __call__(self, t, y):
        y = np.asarray(y, dtype=np.float64)
        return _as_output(np.full_like(y, self.value), y)

    def lipschitz_bound(self, horizon):
        return 0.0

    def flow(self, t, y0):
        y0 = np.asarray(y0, dtype=np.float64)
        return _as_output(y0 + t * self.value, y0)


@dataclass(frozen=True, eq=False)
class Tabulated(FeedbackField):
    """Values on a time x space grid, bilinearly interpolated and clamped to [-1, 1].

    Outside the space grid the interpolant continues linearly before the clamp.
    """

    times: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    _interp: object = dataclass_field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        positions = np.asarray(self.positions, dtype=np.float64)
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (times.size, positions.size):
            raise InvalidParameterError(
                f"values must have shape {(times.size, positions.size)}, got {values.shape}"
            )
        if times.size < 2 or positions.size < 2:
            raise InvalidParameterError("a tabulated field needs at least two times and two positions")
        if np.any(np.diff(times) <= 0) or np.any(np.diff(positions) <= 0):
            raise InvalidParameterError("grid coordinates must be strictly increasing")
        if not np.all(np.abs(values) <= 1.0):
            raise InvalidParameterError("tabulated controls must lie in [-1, 1]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "values", values)
        object.__setattr__(
            self,
            "_interp",
            interpolate.RegularGridInterpolator(
                (times, positions), values, method="linear", bounds_error=False, fill_value=None
            ),
        )

    @property
    def default_horizon(self):
        return float(self.times[-1])

    @classmethod
    def from_field(cls, source, times, positions):
        """Tabulate any field that is defined on the whole grid."""
        times = np.asarray(times, dtype=np.float64)
        positions = np.asarray(positions, dtype=np.float64)
        values = np.stack([np.asarray(source(t, positions), dtype=np.float64) for t in times])
        return cls(times=times, positions=positions, values=values)

    def __call__(self, t, y):
        y = np.asarray(y, dtype=np.float64)
        t_clamped = min(max(float(t), self.times[0]), self.times[-1])
        points = np.column_stack([np.full(y.size, t_clamped), y.ravel()])
        values = project_control(self._interp(points)).reshape(y.shape)
        return _as_output(values, y)

    def lipschitz_bound(self, horizon):
        slopes = np.abs(np.diff(self.values, axis=1)) / np.diff(self.positions)
        return float(np.max(slopes))


def _bump(s):
    inside = np.abs(s) < 1.0
    s_in = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(-1.0 / (1.0 - s_in * s_in)), 0.0)


def _bump_derivative(s):
    inside = np.abs(s) < 1.0
    s_in = np.where(inside, s, 0.0)
    gap = 1.0 - s_in * s_in
    return np.where(inside, np.exp(-1.0 / gap) * (-2.0 * s_in / (gap * gap)), 0.0)


@dataclass(frozen=True)
class BumpTestFunction:
    """Smooth compactly supported xi(t, x) = phi((t - tc)/rt) * phi((x - xc)/rx)."""

    t_center: float
    x_center: float
    t_radius: float
    x_radius: float

    def __post_init__(self):
        if not (self.t_radius > 0 and self.x_radius > 0):
            raise InvalidParameterError("bump radii must be positive")

    def _scaled(self, t, x):
        return (t - self.t_center) / self.t_radius, (np.asarray(x, dtype=np.float64) - self.x_center) / self.x_radius

    def __call__(self, t, x):
        s, r = self._scaled(t, x)
        return _bump(s) * _bump(r)

    def dt(self, t, x):
        s, r = self._scaled(t, x)
        return _bump_derivative(s) * _bump(r) / self.t_radius

    def dx(self, t, x):
        s, r = self._scaled(t, x)
        return _bump(s) * _bump_derivative(r) / self.x_radius

    def time_support(self):
        return self.t_center - self.t_radius, self.t_center + self.t_radius


@dataclass(frozen=True)
class WeightedSum:
    """Linear combination sum_k c_k xi_k of test functions."""

    terms: tuple

    def __call__(self, t, x):
        return sum(c * f(t, x) for c, f in self.terms)

    def dt(self, t, x):
        return sum(c * f.dt(t, x) for c, f in self.terms)

    def dx(self, t, x):
        return sum(c * f.dx(t, x) for c, f in self.terms)

    def time_support(self):
        supports = [f.time_support() for _c, f in self.terms]
        return min(a for a, _b in supports), max(b for _a, b in supports)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Equally weighted particles standing in for a measure."""

    positions: np.ndarray
    source: str

    @classmethod
    def from_measure(cls, mu, num_particles):
        if isinstance(mu, EmpiricalMeasure1D):
            return cls(positions=np.array(mu.support), source=f"empirical({mu.size})")
        positions = midpoint_sample(mu, num_particles)
        return cls(positions=positions, source=f"uniform({mu.left!r}, {mu.right!r}) x {num_particles}")

    @property
    def count(self):
        return int(self.positions.size)

    @property
    def weights(self):
        return np.full(self.count, 1.0 / self.count)


@dataclass(frozen=True, eq=False)
class FlowPath:
    times: np.ndarray
    positions: np.ndarray

    @property
    def end(self):
        return self.positions[..., -1]


@dataclass(frozen=True, eq=False)
class FlowResult:
    """Particle paths at snapshot times; ``paths[k, s]`` is particle k at ``times[s]``."""

    times: np.ndarray
    paths: np.ndarray
    ensemble: ParticleEnsemble
    method: str
    step_dt: float
    num_steps: int
    running_energy: float

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def weights(self):
        return self.ensemble.weights

    def snapshot(self, index):
        return EmpiricalMeasure1D(self.paths[:, index])

    @property
    def final_measure(self):
        return self.snapshot(-1)

    @property
    def order_preserved(self):
        return bool(np.all(np.diff(self.paths, axis=0) >= 0))


def optimal_feedback(params):
    """Feedback field extending the discrete optimal controls to the whole line."""
    if classify_regime(params).has_lipschitz_minimizer:
        return SaturatedLinear(params.lam, params.horizon)
    return SignWithGap()


def eval_field(field, t, y):
    return field(t, y)


def mollify_sign_field(slope):
    return MollifiedSign(slope)


def analytic_flow(params, t, x0):
    """Closed-form characteristic of the saturated-linear feedback."""
    if not classify_regime(params).has_lipschitz_minimizer:
        raise UnsupportedRegimeError(
            "analytic flow needs lambda > T or lambda < 0; integrate a mollified field instead"
        )
    if not 0.0 <= t <= params.horizon:
        raise InvalidParameterError(f"t={t!r} is outside [0, T]")
    return SaturatedLinear(params.lam, params.horizon).flow(t, x0)


def _time_grid(horizon, step_dt):
    if not (math.isfinite(step_dt) and step_dt > 0):
        raise InvalidParameterError("time step must be positive")
    if not horizon > 0:
        raise InvalidParameterError("horizon must be positive")
    steps = max(1, math.ceil(horizon / step_dt - 1e-9))
    return np.linspace(0.0, horizon, steps + 1)


def _velocity(field, t, y):
    try:
        return np.asarray(field(t, y), dtype=np.float64)
    except UndefinedBandError as exc:
        raise IntegrationDomainError(f"a characteristic entered the undefined band: {exc}") from exc


def _rk4_step(field, t, y, h):
    k1 = _velocity(field, t, y)
    k2 = _velocity(field, t + 0.5 * h, y + 0.5 * h * k1)
    k3 = _velocity(field, t + 0.5 * h, y + 0.5 * h * k2)
    k4 = _velocity(field, t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_start(field, y0):
    if isinstance(field, SignWithGap) and np.any(y0 == 0):
        raise IntegrationDomainError("a particle starts at 0, inside the undefined band; use an even particle count")


def integrate_flow(field, x0, step_dt, horizon=None):
    """Characteristics of ``field`` from time 0 to ``horizon`` by classical RK4.

    ``horizon`` defaults to the field's own end time. Sign fields are moved
    along their exact flow instead.
    """
    if horizon is None:
        horizon = field.default_horizon
    y0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    _check_start(field, y0)
    times = _time_grid(horizon, step_dt)
    positions = np.empty((y0.size, times.size))
    positions[:, 0] = y0
    y = y0.copy()
    exact = isinstance(field, SignWithGap)
    for k in range(1, times.size):
        if exact:
            y = np.asarray(field.flow(times[k], y0))
        else:
            y = _rk4_step(field, times[k - 1], y, times[k] - times[k - 1])
        positions[:, k] = y
    if np.ndim(x0) == 0:
        positions = positions[0]
    return FlowPath(times=times, positions=positions)


def _march(field, y0, horizon, step_dt, exact, snapshot_steps):
    """Advance particles step by step; keep snapshots and the running energy."""
    times = _time_grid(horizon, step_dt)
    num_steps = times.size - 1
    if snapshot_steps is None:
        keep = np.arange(num_steps + 1)
    else:
        keep = np.unique(np.round(np.linspace(0, num_steps, max(2, snapshot_steps))).astype(np.int64))
    kept = set(keep.tolist())

    snapshots = [y0.copy()]
    mean_sq = np.empty(times.size)
    u = _velocity(field, 0.0, y0)
    mean_sq[0] = np.mean(u * u)
    y = y0
    for k in range(1, times.size):
        if exact:
            y = np.asarray(field.flow(times[k], y0), dtype=np.float64)
        else:
            y = _rk4_step(field, times[k - 1], y, times[k] - times[k - 1])
        u = _velocity(field, times[k], y)
        mean_sq[k] = np.mean(u * u)
        if k in kept:
            snapshots.append(y.copy())

    energy = float(sp_integrate.trapezoid(mean_sq, times))
    return times[keep], np.column_stack(snapshots), energy, num_steps


def solve_continuity(field, mu0, num_particles, step_dt, horizon=None, method="auto",
                     num_snapshots=DEFAULT_SNAPSHOTS):
    """Particle solution of d_t mu + d_x(u mu) = 0, mu(0) = mu0.

    ``method`` is "auto" (exact flow when the field has one, RK4 otherwise)
    or "rk4". ``num_snapshots=None`` keeps every step.
    """
    if horizon is None:
        horizon = field.default_horizon
    if method not in ("auto", "rk4"):
        raise InvalidParameterError(f"unknown integration method {method!r}")
    ensemble = ParticleEnsemble.from_measure(mu0, num_particles)
    y0 = ensemble.positions
    _check_start(field, y0)
    exact = method == "auto" and field.has_exact_flow
    logger.debug("flowing %d particles with %s (%s)", ensemble.count, type(field).__name__,
                 "exact" if exact else "rk4")

    times, paths, energy, num_steps = _march(field, y0, horizon, step_dt, exact, num_snapshots)
    return FlowResult(
        times=times,
        paths=paths,
        ensemble=ensemble,
        method="exact" if exact else "rk4",
        step_dt=float(horizon / num_steps),
        num_steps=num_steps,
        running_energy=energy,
    )


def cost_from_flow(params, flow):
    running = 0.5 * flow.running_energy
    terminal = -variance(flow.final_measure) / (2.0 * params.lam)
    return CostBreakdown.from_terms(running, terminal)


def continuous_cost(params, field, mu0, num_particles, step_dt, method="auto"):
    """C_inf(mu0, u) along the characteristics of u.

    For an empirical mu0 the particles are its atoms, which makes this the
    discrete cost C_N of the controls u_i(t) = u(t, x_i(t)).
    """
    flow = solve_continuity(field, mu0, num_particles, step_dt, horizon=params.horizon, method=method,
                            num_snapshots=2)
    return cost_from_flow(params, flow)


def weak_form_residual(flow, field, test_fn, quadrature_dt):
    """int_0^T sum_k w_k (d_t xi + d_x xi * u)(t, y_k(t)) dt.

    ``test_fn`` is called as xi(t, x) and provides ``dt``, ``dx`` and
    ``time_support``, like BumpTestFunction. The flow must keep every
    integrator step (``num_snapshots=None``): paths between steps are rebuilt
    with cubic Hermite splines, using the field itself for the slopes.
    """
    horizon = flow.horizon
    start, stop = test_fn.time_support()
    if start <= 0.0 or stop >= horizon:
        raise InvalidParameterError("test function must vanish near t=0 and t=T")
    if flow.times.size != flow.num_steps + 1:
        raise InvalidParameterError(
            f"flow keeps {flow.times.size} of {flow.num_steps + 1} steps; solve it with num_snapshots=None"
        )

    slopes = np.column_stack([_velocity(field, t, flow.paths[:, s]) for s, t in enumerate(flow.times)])
    spline = interpolate.CubicHermiteSpline(flow.times, flow.paths, slopes, axis=1)
    weights = flow.weights

    grid = _time_grid(horizon, quadrature_dt)
    integrand = np.empty(grid.size)
    for j, t in enumerate(grid):
        y = spline(t)
        integrand[j] = np.dot(weights, test_fn.dt(t, y) + test_fn.dx(t, y) * _velocity(field, t, y))
    return float(sp_integrate.trapezoid(integrand, grid))


def flow_to(field, y0, t, step_dt):
    """Positions at time t of the characteristics starting at y0."""
    y0 = np.asarray(y0, dtype=np.float64)
    if t == 0:
        return y0.copy()
    _check_start(field, y0)
    if field.has_exact_flow:
        return np.asarray(field.flow(t, y0), dtype=np.float64)
    return integrate_flow(field, y0, step_dt, horizon=t).end


def gronwall_bound_check(field, mu, nu, t, lipschitz=None, step_dt=1e-3, num_particles=10_000):
    """Return (W1(flow_t # mu, flow_t # nu), e^{Lt} W1(mu, nu)).

    Uniform inputs are replaced by their particle ensembles on both sides,
    so the comparison is between the same discrete measures.
    """
    if not field.is_lipschitz:
        raise NonLipschitzFieldError(f"{type(field).__name__} is not Lipschitz in space")
    bound = field.lipschitz_bound(t)
    if lipschitz is None:
        lipschitz = bound
    elif lipschitz < bound * (1.0 - 1e-12):
        raise InvalidParameterError(f"L={lipschitz!r} is below the field's Lipschitz constant {bound!r}")

    a = ParticleEnsemble.from_measure(mu, num_particles).positions
    b = ParticleEnsemble.from_measure(nu, num_particles).positions
    moved = flow_to(field, np.concatenate([a, b]), t, step_dt)
    lhs = wasserstein1(EmpiricalMeasure1D(moved[: a.size]), EmpiricalMeasure1D(moved[a.size:]))
    rhs = math.exp(lipschitz * t) * wasserstein1(EmpiricalMeasure1D(a), EmpiricalMeasure1D(b))
    return lhs, rhs
