from __future__ import annotations

import numpy as np
import pytest

from mf_varopt.core import (
    EmpiricalMeasure1D,
    ProblemParams,
    UniformMeasure1D,
    initial_grid,
    midpoint_sample,
    wasserstein1,
)
from mf_varopt.discrete_pmp import Regime
from mf_varopt.errors import InvalidParameterError, NonLipschitzFieldError, UnsupportedRegimeError
from mf_varopt.experiments import (
    GapRow,
    Verdict,
    candidate_gap_study,
    convergence_study,
    dichotomy_map,
    extrapolate_limit,
    fit_gap_decay,
    fitted_order,
    gronwall_sweep,
    lipschitz_gap_scan,
    sign_motion_limit_cost,
)
from mf_varopt.meanfield import ConstantField, MollifiedSign, SaturatedLinear, SignWithGap, Tabulated


def test_convergence_supercritical_closed_form():
    params = ProblemParams(lam=2.0)
    rows = convergence_study(params, [64, 4, 16], SaturatedLinear(2.0, 1.0), num_particles=20_000)
    assert [r.num_agents for r in rows] == [4, 16, 64]
    for row, expected in zip(rows, (-5.0 / 18.0, -17.0 / 90.0, -65.0 / 378.0)):
        assert row.cost_n == pytest.approx(expected, abs=1e-12)
        assert row.cost_limit == pytest.approx(-1.0 / 6.0, abs=1e-6)
        assert row.abs_error == pytest.approx(abs(row.cost_n - row.cost_limit))
        assert row.gronwall_ok
    assert rows[0].w1_initial > rows[1].w1_initial > rows[2].w1_initial
    assert rows[2].w1_terminal < rows[0].w1_terminal


def test_convergence_minimization_is_first_order():
    params = ProblemParams(lam=-1.0)
    rows = convergence_study(params, [4, 64], SaturatedLinear(-1.0, 1.0), num_particles=20_000)
    assert rows[1].abs_error < rows[0].abs_error / 8.0
    assert rows[0].cost_limit == pytest.approx(1.0 / 12.0, abs=1e-6)


def test_convergence_zero_field():
    params = ProblemParams(lam=2.0)
    rows = convergence_study(params, [4, 16], ConstantField(), num_particles=20_000)
    grid = EmpiricalMeasure1D(initial_grid(4))
    assert rows[0].cost_n == pytest.approx(-(5.0 / 9.0) / 4.0)
    particles = EmpiricalMeasure1D(midpoint_sample(UniformMeasure1D(), 20_000))
    assert rows[0].w1_terminal == pytest.approx(wasserstein1(grid, particles), abs=1e-12)
    assert rows[1].abs_error < rows[0].abs_error


def test_convergence_rejects_sign_field():
    with pytest.raises(NonLipschitzFieldError):
        convergence_study(ProblemParams(lam=0.5), [4], SignWithGap())


@pytest.mark.slow
def test_convergence_acceptance():
    rows = convergence_study(ProblemParams(lam=2.0), [16, 64, 256, 1024], SaturatedLinear(2.0, 1.0))
    for row in rows:
        n = row.num_agents
        assert row.cost_n == pytest.approx(-(n + 1) / (6.0 * (n - 1)), abs=1e-12)
        assert abs(row.cost_n + 1.0 / 6.0) <= 1.0 / (2 * n)

    rows = convergence_study(ProblemParams(lam=-1.0), [16, 64, 256, 1024, 4096], SaturatedLinear(-1.0, 1.0))
    assert fitted_order(rows) >= 0.9
    assert rows[-1].cost_n == pytest.approx(1.0 / 12.0, abs=1e-4)
    assert all(r.gronwall_ok for r in rows)


def test_fitted_order_needs_two_points():
    params = ProblemParams(lam=2.0)
    rows = convergence_study(params, [4], SaturatedLinear(2.0, 1.0), num_particles=1000)
    with pytest.raises(InvalidParameterError):
        fitted_order(rows)


@pytest.mark.parametrize(
    "field",
    [SaturatedLinear(2.0, 1.0), ConstantField(), MollifiedSign(5.0)],
    ids=["saturated", "zero", "mollified"],
)
def test_gronwall_sweep(field):
    report = gronwall_sweep(field, num_pairs=100, rng_seed=7)
    assert len(report.samples) == 500
    assert report.max_ratio <= 1.0 + 1e-9
    assert report.ok


def test_gronwall_sweep_zero_field_is_exact():
    report = gronwall_sweep(ConstantField(), num_pairs=10, rng_seed=1)
    assert report.lipschitz == 0.0
    for sample in report.samples:
        assert sample.lhs == pytest.approx(sample.rhs, rel=1e-12)


def test_gronwall_sweep_is_reproducible():
    first = gronwall_sweep(MollifiedSign(5.0), num_pairs=5, rng_seed=11)
    second = gronwall_sweep(MollifiedSign(5.0), num_pairs=5, rng_seed=11)
    assert first.samples == second.samples


def test_gronwall_sweep_rejects_sign_field():
    with pytest.raises(NonLipschitzFieldError):
        gronwall_sweep(SignWithGap(), num_pairs=1, rng_seed=0)


def test_sign_motion_limit_cost():
    assert sign_motion_limit_cost(ProblemParams(lam=0.5)) == pytest.approx(-11.0 / 6.0)
    assert sign_motion_limit_cost(ProblemParams(lam=1.0)) == pytest.approx(-2.0 / 3.0)


def test_gap_scan_rejects_lipschitz_regimes():
    with pytest.raises(UnsupportedRegimeError):
        lipschitz_gap_scan(ProblemParams(lam=2.0), [2.0])
    with pytest.raises(UnsupportedRegimeError):
        lipschitz_gap_scan(ProblemParams(lam=-1.0), [2.0])


def test_gap_scan_critical():
    rows = lipschitz_gap_scan(ProblemParams(lam=1.0), [8.0, 2.0], num_particles=20_000)
    assert [r.slope for r in rows] == [2.0, 8.0]
    assert all(r.limit_cost == pytest.approx(-2.0 / 3.0) for r in rows)
    assert all(r.gap > 0 for r in rows)
    assert rows[1].gap < rows[0].gap


@pytest.mark.slow
def test_gap_scan_acceptance():
    rows = lipschitz_gap_scan(ProblemParams(lam=0.5), [2.0, 8.0, 32.0, 128.0])
    gaps = [r.gap for r in rows]
    assert all(g > 0 for g in gaps)
    assert all(b <= a / 2 for a, b in zip(gaps, gaps[1:]))
    assert fit_gap_decay(rows) > 0.5
    assert extrapolate_limit(rows) == pytest.approx(-11.0 / 6.0, abs=1e-3)


def _gap_rows(costs):
    return [GapRow(slope=4.0 ** k, cost_of_mollified=c, limit_cost=-1.0, gap=c + 1.0) for k, c in enumerate(costs)]


def test_extrapolate_limit_geometric_sequence():
    rows = _gap_rows([-1.0 + 0.5 ** k for k in range(4)])
    assert extrapolate_limit(rows) == pytest.approx(-1.0, abs=1e-12)


def test_extrapolate_limit_fallbacks():
    assert extrapolate_limit(_gap_rows([0.3, 0.2])) == 0.2
    assert extrapolate_limit(_gap_rows([0.0, 0.1, 0.3])) == 0.3
    with pytest.raises(InvalidParameterError):
        extrapolate_limit([])


def test_fit_gap_decay_power_law():
    rows = [GapRow(slope=s, cost_of_mollified=0.0, limit_cost=0.0, gap=3.0 / s ** 2) for s in (2.0, 8.0, 32.0)]
    assert fit_gap_decay(rows) == pytest.approx(2.0)


def test_dichotomy_map():
    cells = dichotomy_map([2.0, 1.0, 0.5, -1.0], 1.0)
    assert [c.verdict for c in cells] == [Verdict.EXISTS, Verdict.NONE, Verdict.NONE, Verdict.EXISTS]
    assert cells[0].witness_lipschitz_bound == pytest.approx(1.0)
    assert cells[3].witness_lipschitz_bound == pytest.approx(1.0)
    assert cells[1].regime is Regime.CRITICAL_MAX
    assert cells[2].divergence_marker == "N-1" and cells[2].witness_lipschitz_bound is None
    assert dichotomy_map([3.0], 1.0)[0].witness_lipschitz_bound == pytest.approx(0.5)


def test_dichotomy_rejects_zero_lambda():
    with pytest.raises(InvalidParameterError, match="lambda must be nonzero"):
        dichotomy_map([1.0, 0.0], 1.0)


@pytest.mark.parametrize("lam", [0.5, 2.0, -1.0])
def test_candidate_gap_is_nonnegative(lam):
    params = ProblemParams(lam=lam)
    rows = candidate_gap_study(params, MollifiedSign(4.0), [4, 16, 64])
    assert all(r.gap >= -1e-12 for r in rows)


def test_candidate_gap_vanishes_for_optimal_feedback():
    params = ProblemParams(lam=2.0)
    rows = candidate_gap_study(params, SaturatedLinear(2.0, 1.0), [4, 40])
    assert all(abs(r.gap) < 1e-12 for r in rows)


def test_candidate_gap_tabulated_field():
    params = ProblemParams(lam=0.5)
    table = Tabulated.from_field(MollifiedSign(3.0), np.linspace(0.0, 1.0, 5), np.linspace(-3.0, 3.0, 121))
    rows = candidate_gap_study(params, table, [8, 32], step_dt=1e-2)
    assert all(r.gap > 0 for r in rows)


def test_candidate_gap_rejects_sign_field():
    with pytest.raises(NonLipschitzFieldError):
        candidate_gap_study(ProblemParams(lam=0.5), SignWithGap(), [4])
