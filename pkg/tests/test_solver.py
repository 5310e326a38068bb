"""Affine solution coefficients, the martingale remainder, and the Z/K grids."""

import math

import numpy as np
import pytest

from bsvie import (conditional_terminal, girsanov_weights, kernel_from_scenario,
                   martingale_part, neumann_resolvent, resolvent_residual,
                   simulate_paths, solve_k, solve_triplet, solve_y, solve_z,
                   volterra_solve)
from util import build_scenario


def _pipeline(s):
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    return phi, table, solve_y(s, table)


class TestConditionalTerminal:
    def test_deterministic_terminal_is_state_free(self):
        s = build_scenario(f0="sin(t)", n_steps=20)
        value = conditional_terminal(s, r=7, t=3, b_t=123.0, j_t=-5.0)
        assert value == pytest.approx(math.sin(s.grid.nodes[7]))

    def test_pure_brownian_martingale(self):
        s = build_scenario(f1="1", n_steps=20)
        # F = B(T), no drift: conditional mean is the current level
        assert conditional_terminal(s, r=5, t=2, b_t=0.7, j_t=0.0) == pytest.approx(0.7)

    def test_constant_drift_shift(self):
        # xi = 0.5 on [0.5, 1] contributes 0.25 to the conditional mean of B(T)
        s = build_scenario(f1="1", xi="0.5", n_steps=20)
        t_index = 10  # t = 0.5
        value = conditional_terminal(s, r=15, t=t_index, b_t=1.0, j_t=0.0)
        assert value == pytest.approx(1.25)

    def test_brownian_shift_verified_by_weighted_monte_carlo(self):
        # E_Q[B(T) - B(t)] must equal the xi tail integral
        s = build_scenario(f1="1", xi="0.5", n_paths=50_000, seed=33, n_steps=40)
        paths = simulate_paths(s)
        m_t = girsanov_weights(s, paths).m_terminal
        _, _, y = _pipeline(s)
        for t_index in (0, 20, 39):
            sample = m_t * (paths.b[:, -1] - paths.b[:, t_index]) - y.xi_bar[t_index]
            se = sample.std(ddof=1) / np.sqrt(sample.size)
            assert abs(sample.mean()) <= 3 * se

    def test_jump_shift_verified_by_weighted_monte_carlo(self):
        # E_Q[J(T) - J(t)] must equal the beta tail integral
        s = build_scenario(f2="1", beta="0.5", g="2", marks=(1.0,), intensities=(2.0,),
                           n_paths=50_000, seed=34, n_steps=40)
        paths = simulate_paths(s)
        m_t = girsanov_weights(s, paths).m_terminal
        _, _, y = _pipeline(s)
        for t_index in (0, 20):
            sample = m_t * (paths.j[:, -1] - paths.j[:, t_index]) - y.beta_bar[t_index]
            se = sample.std(ddof=1) / np.sqrt(sample.size)
            assert abs(sample.mean()) <= 3 * se

    def test_index_bounds(self):
        s = build_scenario(n_steps=10)
        with pytest.raises(ValueError):
            conditional_terminal(s, r=11, t=0, b_t=0.0, j_t=0.0)


class TestSolveY:
    def test_deterministic_terminal_matches_volterra_oracle(self):
        s = build_scenario(phi="1", f0="1", n_steps=200)
        phi, table, y = _pipeline(s)
        residual = resolvent_residual(phi, table.psi)
        direct = volterra_solve(phi, s.terminal.f0)
        assert np.max(np.abs(y.a - direct)) <= 10 * residual
        assert y.a[0] == pytest.approx(math.e, abs=5e-4)
        assert np.all(y.b == 0.0) and np.all(y.c == 0.0)

    def test_trivial_kernel_brownian_terminal(self):
        s = build_scenario(f1="1", n_steps=30)
        _, _, y = _pipeline(s)
        assert np.all(y.a == 0.0)
        assert np.all(y.b == 1.0)
        assert np.all(y.c == 0.0)

    def test_unit_kernel_brownian_terminal_closed_form(self):
        # b(t) = e^{1 - t}; Y(t) = e^{1 - t} B(t)
        s = build_scenario(phi="1", f1="1", n_steps=200)
        _, _, y = _pipeline(s)
        exact = np.exp(1.0 - s.grid.nodes)
        assert np.max(np.abs(y.b - exact)) < 5e-4
        assert np.all(y.a == 0.0) and np.all(y.c == 0.0)

    def test_terminal_slice_reproduces_f(self):
        s = build_scenario(phi="1 + t*s", bound_C=2.0, xi="0.5", beta="0.25",
                           f0="sin(t)", f1="1 - t", f2="t", g="z",
                           marks=(1.0,), intensities=(2.0,), n_steps=40)
        _, _, y = _pipeline(s)
        assert y.a[-1] == s.terminal.f0[-1]
        assert y.b[-1] == s.terminal.f1[-1]
        assert y.c[-1] == s.terminal.f2[-1]
        assert y.xi_bar[-1] == 0.0 and y.beta_bar[-1] == 0.0

    def test_pathwise_evaluation_is_adapted(self):
        # Y(t_i) depends only on the driver state at t_i
        s = build_scenario(phi="1", f1="1", n_paths=10, seed=4, n_steps=20)
        _, _, y = _pipeline(s)
        paths = simulate_paths(s)
        values = y.evaluate(paths)
        i = 7
        expected = y.a[i] + y.b[i] * paths.b[:, i] + y.c[i] * paths.j[:, i]
        assert np.array_equal(values[:, i], expected)

    def test_grid_mismatch_rejected(self):
        s = build_scenario(phi="1", n_steps=20)
        other = build_scenario(phi="1", n_steps=30)
        phi_other = kernel_from_scenario(other)
        table_other = neumann_resolvent(phi_other, 1.0, 1e-10)
        with pytest.raises(ValueError):
            solve_y(s, table_other)


class TestMartingaleRemainder:
    def test_deterministic_terminal_is_quadrature_small(self):
        for kwargs in (dict(phi="1", f0="1"), dict(phi="1 + t*s", bound_C=2.0, f0="sin(t)")):
            s = build_scenario(n_steps=100, **kwargs)
            phi, table, y = _pipeline(s)
            part = martingale_part(s, y, phi)
            residual = resolvent_residual(phi, table.psi)
            assert np.max(np.abs(part.const)) <= 10 * residual
            for coef in (part.coef_terminal_b, part.coef_terminal_j,
                         part.coef_state_b, part.coef_state_j,
                         part.path_weights_b, part.path_weights_j):
                assert np.all(coef == 0.0)

    def test_trivial_kernel_closed_form(self):
        # phi = 0: U(t) = f1(t)(B(T) - B(t) - xi_bar(t)) + f2(t)(J(T) - J(t) - beta_bar(t))
        s = build_scenario(f1="1 - t", f2="t", g="z", xi="0.5", beta="0.25",
                           marks=(1.0,), intensities=(2.0,), n_paths=50, seed=5, n_steps=20)
        phi, table, y = _pipeline(s)
        part = martingale_part(s, y, phi)
        paths = simulate_paths(s)
        u = part.evaluate(paths)
        f1, f2 = s.terminal.f1, s.terminal.f2
        manual = (f1 * (paths.b[:, -1:] - paths.b - y.xi_bar)
                  + f2 * (paths.j[:, -1:] - paths.j - y.beta_bar))
        assert u == pytest.approx(manual, abs=1e-12)

    def test_conditional_coefficients_vanish(self):
        s = build_scenario(phi="1 + t*s", bound_C=2.0, xi="0.5", beta="0.25",
                           f0="sin(t)", f1="1", f2="0.5", g="z",
                           marks=(1.0, -0.5), intensities=(2.0, 1.0), n_steps=100)
        phi, table, y = _pipeline(s)
        part = martingale_part(s, y, phi)
        residual = resolvent_residual(phi, table.psi)
        assert part.max_conditional_coefficient <= 10 * residual


class TestSolveZK:
    def test_trivial_kernel_brownian_representation(self):
        # F = B(T) with no kernel: Z is identically one on the triangle
        s = build_scenario(f1="1", n_steps=30)
        phi, _, y = _pipeline(s)
        z = solve_z(s, y, phi)
        iu, ju = np.triu_indices(31)
        assert np.all(z[iu, ju] == 1.0)
        assert np.all(np.tril(z, -1) == 0.0)

    def test_no_brownian_content_gives_zero_z(self):
        s = build_scenario(phi="1", f0="1", n_steps=30)
        phi, _, y = _pipeline(s)
        assert np.all(solve_z(s, y, phi) == 0.0)

    def test_unit_kernel_z_closed_form(self):
        # Z(t, s) = e^{1 - s}, independent of t
        s = build_scenario(phi="1", f1="1", n_steps=200)
        phi, _, y = _pipeline(s)
        z = solve_z(s, y, phi)
        iu, ju = np.triu_indices(s.grid.n_nodes)
        exact = np.exp(1.0 - s.grid.nodes[ju])
        assert np.max(np.abs(z[iu, ju] - exact)) < 5e-4
        assert np.max(np.abs(z[0, 100:] - z[50, 100:])) == 0.0

    def test_trivial_kernel_jump_representation(self):
        # F = J(T) with unit mark weight: K is identically one
        s = build_scenario(f2="1", g="1", marks=(1.0,), intensities=(2.0,), n_steps=30)
        phi, _, y = _pipeline(s)
        k = solve_k(s, y, phi)
        iu, ju = np.triu_indices(31)
        assert np.all(k[iu, ju, 0] == 1.0)

    def test_no_jump_content_gives_zero_k(self):
        s = build_scenario(phi="1", f1="1", g="1", marks=(1.0,), intensities=(2.0,), n_steps=30)
        phi, _, y = _pipeline(s)
        assert np.all(solve_k(s, y, phi) == 0.0)

    def test_unit_kernel_k_closed_form(self):
        # K(t, s, mark) = 2 e^{1 - s} for f2 = 1, g = 2
        s = build_scenario(phi="1", f2="1", g="2", marks=(1.0,), intensities=(2.0,), n_steps=200)
        phi, _, y = _pipeline(s)
        k = solve_k(s, y, phi)
        iu, ju = np.triu_indices(s.grid.n_nodes)
        exact = 2.0 * np.exp(1.0 - s.grid.nodes[ju])
        assert np.max(np.abs(k[iu, ju, 0] - exact)) < 1e-3

    def test_k_scales_with_mark_weight(self):
        s = build_scenario(phi="1", f2="1", g="z", marks=(1.0, -0.5),
                           intensities=(2.0, 1.0), n_steps=30)
        phi, _, y = _pipeline(s)
        k = solve_k(s, y, phi)
        assert k[:, :, 1] == pytest.approx(-0.5 * k[:, :, 0])

    def test_grids_are_path_independent(self):
        # identical Z/K regardless of the Monte Carlo seed: nothing random enters
        a = build_scenario(phi="1", f1="1", f2="1", g="1", marks=(1.0,),
                           intensities=(2.0,), seed=1, n_steps=25)
        b = build_scenario(phi="1", f1="1", f2="1", g="1", marks=(1.0,),
                           intensities=(2.0,), seed=999, n_steps=25)
        phi_a, table_a, _ = _pipeline(a)
        phi_b, table_b, _ = _pipeline(b)
        ta = solve_triplet(a, table_a, phi_a)
        tb = solve_triplet(b, table_b, phi_b)
        assert np.array_equal(ta.z, tb.z)
        assert np.array_equal(ta.k, tb.k)

    def test_no_marks_gives_empty_k(self):
        s = build_scenario(phi="1", f1="1", n_steps=20)
        phi, table, _ = _pipeline(s)
        triplet = solve_triplet(s, table, phi)
        assert triplet.k.shape == (21, 21, 0)
