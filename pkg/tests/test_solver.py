import numpy as np
import pytest

import mildsing as ms
from mildsing import FieldFunction, PowerLaw, nonlinearity, truncated_rhs

from oracles import PEAK_GAMMA_1, PEAK_GAMMA_HALF, shooting_solution


@pytest.fixture(scope="module")
def interval():
    return ms.build_interval_mesh(1.0, 257)


@pytest.fixture(scope="module")
def interval_A(interval):
    return ms.Coefficient.identity(interval)


def test_truncated_rhs_cap_saturates(unit_square_9):
    F = nonlinearity(unit_square_9, PowerLaw(0.5), f=1.0)
    u = FieldFunction.zeros(unit_square_9)
    for n in (1.0, 4.0, 32.0):
        rhs = truncated_rhs(F, u, n)
        assert np.all(rhs.values == n)


def test_truncated_rhs_inactive_above_threshold(unit_square_9):
    F = nonlinearity(unit_square_9, PowerLaw(0.5), f=1.0)
    n = 10.0
    u = FieldFunction(unit_square_9, np.full(unit_square_9.n_nodes, n ** (-1.0 / 0.5)))
    rhs = truncated_rhs(F, u, n)
    assert np.allclose(rhs.values, u.values ** -0.5, rtol=1e-14)
    assert np.all(rhs.values <= n)


def test_truncated_rhs_arithmetic(unit_square_9):
    F = nonlinearity(unit_square_9, PowerLaw(0.5), f=1.0, l=1.0)
    u = FieldFunction(unit_square_9, np.full(unit_square_9.n_nodes, 4.0))
    assert truncated_rhs(F, u, 10.0).values[0] == pytest.approx(1.5, rel=1e-14)


def test_truncated_rhs_monotone_in_level(unit_square_9):
    F = nonlinearity(unit_square_9, PowerLaw(1.0), f=1.0, l=0.5)
    rng = np.random.default_rng(5)
    u = FieldFunction(unit_square_9, rng.random(unit_square_9.n_nodes) * 0.2)
    for n in (1.0, 2.0, 8.0, 64.0):
        a = truncated_rhs(F, u, n).values
        b = truncated_rhs(F, u, 2.0 * n).values
        assert np.all(a <= b)


def test_truncated_rhs_rejects_small_level(unit_square_9):
    F = nonlinearity(unit_square_9, PowerLaw(1.0), f=1.0)
    with pytest.raises(ValueError):
        truncated_rhs(F, FieldFunction.zeros(unit_square_9), 0.5)


def test_level_zero_rhs_converges_immediately(unit_square_9):
    A = ms.Coefficient.identity(unit_square_9)
    F = nonlinearity(unit_square_9, PowerLaw(1.0), f=0.0, l=0.0)
    u, stats = ms.solve_level(unit_square_9, A, F, 1.0)
    assert stats.converged
    assert stats.iterations == 1
    assert np.all(u.values == 0.0)


def test_level_linear_problem_independent_of_level(interval, interval_A):
    # f = 0, l = 1: linear problem, solution x(1-x)/2 for every cap >= 1
    F = nonlinearity(interval, PowerLaw(1.0), f=0.0, l=1.0)
    exact = interval.nodes[:, 0] * (1.0 - interval.nodes[:, 0]) / 2.0
    results = []
    for n in (1.0, 2.0, 16.0):
        u, stats = ms.solve_level(interval, interval_A, F, n)
        assert stats.converged
        results.append(u.values)
        assert np.abs(u.values - exact).max() <= 1e-8
    assert np.abs(results[0] - results[2]).max() <= 1e-9


@pytest.mark.parametrize("gamma,peak", [(1.0, PEAK_GAMMA_1), (0.5, PEAK_GAMMA_HALF)])
def test_singular_solve_matches_shooting_oracle(interval, interval_A, gamma, peak):
    F = nonlinearity(interval, PowerLaw(gamma), f=1.0)
    rep = ms.solve_singular(interval, interval_A, F)
    oracle = shooting_solution(gamma, interval.nodes[:, 0])
    # the oracle itself is cross-checked against the closed-form peak
    assert abs(oracle.max() - peak) <= 2e-5
    assert np.abs(rep.u.values - oracle).max() <= 1e-3
    assert rep.energy_identity_residual <= 1e-6
    assert rep.u.values.min() >= -1e-12


def test_singular_solve_zero_data(unit_square_9):
    A = ms.Coefficient.identity(unit_square_9)
    F = nonlinearity(unit_square_9, PowerLaw(1.0), f=0.0, l=0.0)
    rep = ms.solve_singular(unit_square_9, A, F)
    assert np.all(rep.u.values == 0.0)
    assert rep.energy_identity_residual == 0.0


def test_singular_solve_oscillating_2d(unit_square_65, identity_65):
    F = nonlinearity(unit_square_65, ms.OscillatingPower(0.5), f=1.0)
    rep = ms.solve_singular(unit_square_65, identity_65, F)
    assert rep.u.values.min() >= -1e-12
    assert rep.energy_identity_residual <= 1e-6
    assert rep.final_gap <= 1e-6 * rep.h1_norms[-1] + 1e-10
    # H1 level history stays bounded (no blow-up along the schedule)
    norms = np.array(rep.h1_norms)
    assert norms.max() <= 2.0 * np.median(norms)


def test_warm_started_levels_match_report_history(interval, interval_A):
    F = nonlinearity(interval, PowerLaw(0.5), f=1.0)
    rep = ms.solve_singular(interval, interval_A, F)
    assert rep.outer_iters == len(rep.h1_norms)
    assert len(rep.history) == rep.outer_iters - 1
    assert rep.level_stats[-1].n == rep.n_final
    assert all(st.converged for st in rep.level_stats)


def test_limit_problem_mu_zero_bit_identical(unit_square_65, identity_65):
    F = nonlinearity(unit_square_65, PowerLaw(0.5), f=1.0)
    a = ms.solve_singular(unit_square_65, identity_65, F)
    b = ms.solve_limit_problem(unit_square_65, identity_65, F, 0.0)
    assert np.array_equal(a.u.values, b.u.values)


def test_limit_problem_strong_absorption(unit_square_65, identity_65):
    # linear data: -div Du + mu u = l has u ~ l / mu away from the boundary;
    # at mu = 50 the boundary layers still depress the peak by 4 exp(-sqrt(mu)/2)
    # ~ 10.2% (computed and frozen), so "absorption dominates" holds to 11%
    mesh = ms.build_rectangle_mesh(1.0, 1.0, 257, 257)
    A = ms.Coefficient.identity(mesh)
    F = nonlinearity(mesh, PowerLaw(1.0), f=0.0, l=1.0)
    mu = 50.0
    rep = ms.solve_limit_problem(mesh, A, F, mu)
    peak = rep.u.values.max()
    assert abs(peak - 1.0 / mu) <= 0.11 / mu
    assert abs(peak - 1.0 / mu) == pytest.approx(0.10181 / mu, rel=1e-2)


def test_limit_problem_against_refined_reference():
    # mu = pi/2, l = 1: the h = 1/64 solution must sit within 1e-3 relative
    # L2 of the Richardson reference built from h = 1/128 (shared nodes)
    mu = np.pi / 2.0
    coarse = ms.build_rectangle_mesh(1.0, 1.0, 65, 65)
    fine = ms.build_rectangle_mesh(1.0, 1.0, 129, 129)
    sols = {}
    for mesh in (coarse, fine):
        F = nonlinearity(mesh, PowerLaw(1.0), f=0.0, l=1.0)
        sols[mesh.nx] = ms.solve_limit_problem(mesh, ms.Coefficient.identity(mesh), F, mu)
    ix, iy = np.meshgrid(np.arange(0, 129, 2), np.arange(0, 129, 2), indexing="xy")
    on_coarse = (iy * 129 + ix).ravel()
    u_f = sols[129].u.values[on_coarse]
    u_c = sols[65].u.values
    reference = u_f + (u_f - u_c) / 3.0  # second-order extrapolation
    diff = ms.FieldFunction(coarse, u_c - reference)
    ref_field = ms.FieldFunction(coarse, reference)
    assert ms.l2_norm(diff) <= 1e-3 * ms.l2_norm(ref_field)


def test_solver_nonconvergence_raises(unit_square_9):
    A = ms.Coefficient.identity(unit_square_9)
    F = nonlinearity(unit_square_9, PowerLaw(0.5), f=1.0)
    cfg = ms.SolverConfig(max_inner=2)
    with pytest.raises(ms.ConvergenceError):
        ms.solve_singular(unit_square_9, A, F, cfg)
