"""Measures on the line, moments, Wasserstein-1 and the control projection.

Both measure families used throughout the package, uniform densities and
empirical measures, have closed-form quantile functions. Distances and
moments are computed from those, exactly, rather than by a transport LP.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy import integrate as sp_integrate
from scipy import stats

from mf_varopt.errors import DomainError, InvalidParameterError

logger = logging.getLogger(__name__)

# Particle count used when a uniform measure is pushed through a non-affine map.
DEFAULT_PUSH_PARTICLES = 10_000


def _check_num_agents(num_agents):
    if isinstance(num_agents, bool) or not isinstance(num_agents, (int, np.integer)):
        raise InvalidParameterError("N must be an integer")
    if num_agents < 2:
        raise InvalidParameterError("N must be at least 2")
    if num_agents % 2:
        raise InvalidParameterError("N must be even")


@dataclass(frozen=True)
class ProblemParams:
    """The triple (lambda, T, N) shared by the discrete and mean-field problems."""

    lam: float
    horizon: float = 1.0
    num_agents: int = 40

    def __post_init__(self):
        if not math.isfinite(self.lam):
            raise InvalidParameterError("lambda must be finite")
        if self.lam == 0:
            raise InvalidParameterError("lambda must be nonzero")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise InvalidParameterError("T must be positive")
        _check_num_agents(self.num_agents)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "num_agents", int(self.num_agents))


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure1D:
    """(1/N) sum of Dirac masses; ``support`` is kept sorted and read-only.

    Repeated atoms are allowed (colliding trajectories).
    """

    support: np.ndarray

    def __post_init__(self):
        atoms = np.sort(np.asarray(self.support, dtype=np.float64).ravel(), kind="stable")
        if atoms.size == 0:
            raise InvalidParameterError("an empirical measure needs at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise InvalidParameterError("atoms must be finite")
        atoms.setflags(write=False)
        object.__setattr__(self, "support", atoms)

    @property
    def size(self):
        return int(self.support.size)

    @property
    def bounds(self):
        return float(self.support[0]), float(self.support[-1])

    def quantile(self, q):
        """Left-continuous quantile: Q(q) = x_(ceil(qN)) for q in (0, 1)."""
        q = np.asarray(q, dtype=np.float64)
        idx = np.clip(np.ceil(q * self.size).astype(np.int64) - 1, 0, self.size - 1)
        return self.support[idx]


@dataclass(frozen=True)
class UniformMeasure1D:
    """Uniform probability density 1/(right - left) on [left, right]."""

    left: float = -1.0
    right: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.left) and math.isfinite(self.right)):
            raise InvalidParameterError("uniform bounds must be finite")
        if not self.left < self.right:
            raise InvalidParameterError("uniform measure needs left < right")
        object.__setattr__(self, "left", float(self.left))
        object.__setattr__(self, "right", float(self.right))

    @property
    def width(self):
        return self.right - self.left

    @property
    def bounds(self):
        return self.left, self.right

    def quantile(self, q):
        return self.left + np.asarray(q, dtype=np.float64) * self.width


Measure1D = Union[EmpiricalMeasure1D, UniformMeasure1D]


@dataclass(frozen=True)
class AffineMap:
    """x -> scale * x + shift. push_forward maps uniform measures through it exactly."""

    scale: float
    shift: float = 0.0

    def __call__(self, x):
        return self.scale * np.asarray(x, dtype=np.float64) + self.shift


def initial_grid(params):
    """Initial positions x_i = (2i - N - 1)/(N - 1), i = 1..N.

    Accepts a ProblemParams or the agent count itself.
    """
    num_agents = params.num_agents if isinstance(params, ProblemParams) else params
    _check_num_agents(num_agents)
    i = np.arange(1, num_agents + 1, dtype=np.float64)
    return (2.0 * i - num_agents - 1.0) / (num_agents - 1.0)


def quantile(mu, q):
    return mu.quantile(q)


def midpoint_sample(mu, num_particles):
    """Positions at the quantiles (k - 1/2)/M, k = 1..M."""
    if num_particles < 1:
        raise InvalidParameterError("particle count must be positive")
    q = (np.arange(num_particles, dtype=np.float64) + 0.5) / num_particles
    return mu.quantile(q)


def mean(mu):
    if isinstance(mu, EmpiricalMeasure1D):
        return math.fsum(mu.support) / mu.size
    return 0.5 * (mu.left + mu.right)


def variance(mu):
    """Var(mu) = int x^2 dmu - (int x dmu)^2, computed in centered form."""
    if isinstance(mu, EmpiricalMeasure1D):
        centered = mu.support - mean(mu)
        return math.fsum(centered * centered) / mu.size
    return mu.width * mu.width / 12.0


def integrate(mu, f):
    """Pairing int f dmu of a test function with a measure."""
    if isinstance(mu, EmpiricalMeasure1D):
        values = np.asarray(f(mu.support), dtype=np.float64)
        return math.fsum(np.broadcast_to(values, mu.support.shape)) / mu.size
    value, _err = sp_integrate.quad(lambda x: float(f(x)), mu.left, mu.right, limit=200)
    return value / mu.width


def _abs_affine_integral(g0, g1, h):
    """Integral of |g| over cells of length h where g is affine from g0 to g1."""
    a0 = np.abs(g0)
    a1 = np.abs(g1)
    same_sign = g0 * g1 >= 0
    denom = np.where(same_sign, 1.0, a0 + a1)
    crossing = h * (g0 * g0 + g1 * g1) / (2.0 * denom)
    return np.where(same_sign, 0.5 * (a0 + a1) * h, crossing)


def wasserstein1(mu, nu):
    """W1 as the L1 distance between quantile functions."""
    if isinstance(mu, EmpiricalMeasure1D) and isinstance(nu, EmpiricalMeasure1D):
        return float(stats.wasserstein_distance(mu.support, nu.support))

    if isinstance(mu, UniformMeasure1D) and isinstance(nu, UniformMeasure1D):
        # Both quantiles are affine on (0, 1).
        return float(_abs_affine_integral(mu.left - nu.left, mu.right - nu.right, 1.0))

    emp, uni = (mu, nu) if isinstance(mu, EmpiricalMeasure1D) else (nu, mu)
    n = emp.size
    edges = np.arange(n + 1, dtype=np.float64) / n
    uni_at = uni.quantile(edges)
    cells = _abs_affine_integral(emp.support - uni_at[:-1], emp.support - uni_at[1:], 1.0 / n)
    return math.fsum(cells)


def _apply_map(fmap, points):
    try:
        with np.errstate(all="ignore"):
            image = np.asarray(fmap(points), dtype=np.float64)
    except (ArithmeticError, ValueError) as exc:
        raise DomainError(f"map is undefined on the support: {exc}") from exc
    if image.shape != points.shape:
        image = np.broadcast_to(image, points.shape)
    bad = ~np.isfinite(image)
    if np.any(bad):
        x = float(points[np.argmax(bad)])
        raise DomainError(f"map is undefined at x={x!r}")
    return image


def push_forward(mu, fmap: Union[Callable, tuple[float, float]], num_particles=None):
    """Image measure fmap#mu.

    fmap must accept numpy arrays; a pair (scale, shift) stands for
    AffineMap(scale, shift). An empirical measure is mapped atom by atom. A
    uniform measure under an AffineMap stays uniform and exact. Under any other
    callable, including a plain lambda x: 2 * x, it is sampled at
    ``num_particles`` midpoint quantiles first, so moments of the image carry an
    O(1/num_particles**2) quadrature error.
    """
    if isinstance(fmap, tuple):
        fmap = AffineMap(*fmap)
    if isinstance(mu, EmpiricalMeasure1D):
        return EmpiricalMeasure1D(_apply_map(fmap, mu.support))

    if isinstance(fmap, AffineMap):
        if fmap.scale == 0:
            return EmpiricalMeasure1D([fmap.shift])
        a, b = sorted((float(fmap(mu.left)), float(fmap(mu.right))))
        return UniformMeasure1D(a, b)

    count = num_particles or DEFAULT_PUSH_PARTICLES
    logger.debug("sampling uniform measure with %d particles for push-forward", count)
    particles = midpoint_sample(mu, count)
    return EmpiricalMeasure1D(_apply_map(fmap, particles))


def project_control(u):
    """Projection pi onto the admissible controls [-1, 1]."""
    clipped = np.clip(u, -1.0, 1.0)
    if np.ndim(clipped) == 0:
        return float(clipped)
    return clipped
