"""Acceptance suite: one test per criterion, each printing its pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see every line.

Criterion 2 asserts the factorial bound T^n/n! + 10 n dt^2 for every computed
iterated kernel of the unit kernel.  The exact order-n kernel is
(r - t)^(n-1)/(n-1)!, which reaches 1/(n-1)! > 1/n! at the far corner for
every n >= 2, so that bound is violated by the true values themselves and the
check fails by construction; the sharp bound C^n (r-t)^(n-1)/(n-1)! is
verified in test_resolvent.py.
"""

import math
import time

import numpy as np
import pytest

from bsvie import (bsvie_residual, compare_oracle, girsanov_weights, kernel_compose,
                   kernel_from_scenario, martingale_part, martingale_suite,
                   neumann_resolvent, regression_k_oracle, regression_z_oracle,
                   residual_refinement, resolvent_convergence, resolvent_residual,
                   simulate_paths, smoothness_check, solve_triplet)
from bsvie.cli import main
from util import build_scenario


def _line(num: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {num:02d} {'PASS' if ok else 'FAIL'}: {detail}")


def _scenario_brownian(n_steps=100, n_paths=100_000, seed=2024):
    # unit kernel, F = B(T), one inert jump mark so the K grid is non-vacuously zero
    return build_scenario(phi="1", f1="1", g="1", marks=(1.0,), intensities=(2.0,),
                          n_steps=n_steps, n_paths=n_paths, seed=seed)


def _scenario_jump(n_steps=100, n_paths=100_000, seed=913):
    return build_scenario(phi="1", f2="1", g="2", marks=(1.0,), intensities=(2.0,),
                          n_steps=n_steps, n_paths=n_paths, seed=seed)


def test_criterion_01_constant_kernel_resolvent():
    start = time.perf_counter()
    s = build_scenario(phi="1", n_steps=200, neumann_tol=1e-10)
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    nodes = s.grid.nodes
    exact = np.triu(np.exp(nodes[None, :] - nodes[:, None]))
    error = float(np.max(np.abs(np.triu(table.psi.values - exact))))
    elapsed = time.perf_counter() - start
    ok = error <= 5e-4 and elapsed < 10.0
    _line(1, ok, f"max |psi - e^(r-t)| = {error:.3e} (tol 5e-4), runtime {elapsed:.2f}s (< 10s)")
    assert error <= 5e-4
    assert elapsed < 10.0


def test_criterion_02_factorial_bound_as_stated():
    s = build_scenario(phi="1", n_steps=200, neumann_tol=1e-10)
    phi = kernel_from_scenario(s)
    n_terms = neumann_resolvent(phi, 1.0, 1e-10).n_terms_used
    dt = s.grid.dt
    violations = 0
    worst = ""
    current = phi
    for order in range(1, n_terms + 1):
        if order > 1:
            current = kernel_compose(current, phi)
        values = current.values
        limit = 1.0**order / math.factorial(order) + 10 * order * dt**2
        excess = np.abs(values) - limit
        count = int(np.sum(excess > 0))
        if count and not worst:
            i, j = np.unravel_index(np.argmax(excess), excess.shape)
            worst = (f"first at order {order}: |value| = {abs(values[i, j]):.6f} "
                     f"> T^n/n! + 10n*dt^2 = {limit:.6f}")
        violations += count
    ok = violations == 0
    _line(2, ok, f"{violations} bound violations ({worst or 'none'})")
    assert violations == 0, worst


def test_criterion_03_identity_residual_second_order():
    results = []
    for expr, bound in (("1", 1.0), ("exp(s - t)", math.e), ("1 + t*s", 2.0)):
        s = build_scenario(phi=expr, bound_C=bound, n_steps=50)
        study = resolvent_convergence(s, (50, 100, 200))
        results.append((expr, study.slope))
    ok = all(abs(slope - 2.0) <= 0.3 for _, slope in results)
    detail = ", ".join(f"{expr}: slope {slope:.3f}" for expr, slope in results)
    _line(3, ok, detail + " (target 2.0 +/- 0.3)")
    for expr, slope in results:
        assert slope == pytest.approx(2.0, abs=0.3), expr


def test_criterion_04_deterministic_terminal_degeneration():
    details = []
    ok = True
    for kwargs in (dict(phi="1", f0="1"),
                   dict(phi="1 + t*s", bound_C=2.0, f0="sin(t)")):
        s = build_scenario(n_steps=100, **kwargs)
        phi = kernel_from_scenario(s)
        table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
        triplet = solve_triplet(s, table, phi)
        part = martingale_part(s, triplet.y, phi)
        residual = resolvent_residual(phi, table.psi)
        u_max = float(np.max(np.abs(part.const)))
        z_zero = bool(np.all(triplet.z == 0.0))
        k_zero = bool(np.all(triplet.k == 0.0))
        ok = ok and u_max <= 10 * residual and z_zero and k_zero
        details.append(f"phi={kwargs['phi']!r}: max|U| = {u_max:.2e} "
                       f"<= 10 x {residual:.2e}, Z==0: {z_zero}, K==0: {k_zero}")
        assert u_max <= 10 * residual
        assert z_zero and k_zero
    _line(4, ok, "; ".join(details))


def test_criterion_05_girsanov_normalization():
    s = build_scenario(xi="0.5", beta="1", g="1", marks=(1.0,), intensities=(2.0,),
                       n_steps=100, n_paths=100_000, seed=42)
    paths = simulate_paths(s)
    checks = {c.name: c for c in martingale_suite(s, paths, girsanov_weights(s, paths))}
    m_check = checks["mean_M_T"]
    b_check = checks["q_mean_B_Q_T"]
    count_check = checks["q_mean_jump_count_T"]
    ok = m_check.passed and b_check.passed and count_check.passed
    _line(5, ok,
          f"mean M(T) = {m_check.estimate:.4f} +/- {3 * m_check.se:.4f} (target 1); "
          f"weighted B_Q(T) = {b_check.estimate:.4f} +/- {3 * b_check.se:.4f} (target 0); "
          f"weighted jump count = {count_check.estimate:.4f} +/- {3 * count_check.se:.4f} "
          f"(target {count_check.target:g})")
    assert count_check.target == pytest.approx(4.0)
    assert m_check.passed and b_check.passed and count_check.passed


def test_criterion_06_brownian_closed_form_and_oracle():
    start = time.perf_counter()
    s = _scenario_brownian()
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    triplet = solve_triplet(s, table, phi)
    nodes = s.grid.nodes
    n = s.grid.n_steps

    b_err = float(np.max(np.abs(triplet.y.b - np.exp(1.0 - nodes))))
    iu, ju = np.triu_indices(n + 1)
    z_err = float(np.max(np.abs(triplet.z[iu, ju] - np.exp(1.0 - nodes[ju]))))
    exact_affine = bool(np.all(triplet.y.a == 0.0) and np.all(triplet.y.c == 0.0))
    k_zero = bool(np.all(triplet.k == 0.0))

    paths = simulate_paths(s)
    weights = girsanov_weights(s, paths)
    u = martingale_part(s, triplet.y, phi).evaluate(paths)
    oracle = regression_z_oracle(s, paths, weights, u)
    comparison = compare_oracle("z", triplet.z[:, :n], oracle)
    agree = 1.0 - comparison.fraction_outside
    elapsed = time.perf_counter() - start

    ok = (b_err <= 5e-4 and z_err <= 5e-4 and exact_affine and k_zero
          and agree >= 0.99 and elapsed < 60.0)
    _line(6, ok,
          f"max|b - e^(1-t)| = {b_err:.2e}, max|Z - e^(1-s)| = {z_err:.2e} (tol 5e-4); "
          f"a==0, c==0: {exact_affine}; K==0: {k_zero}; oracle agreement "
          f"{100 * agree:.2f}% of {comparison.n_nodes} nodes (>= 99%); "
          f"runtime {elapsed:.1f}s (< 60s)")
    assert b_err <= 5e-4 and z_err <= 5e-4
    assert exact_affine and k_zero
    assert agree >= 0.99
    assert elapsed < 60.0


def test_criterion_07_jump_closed_form_and_oracle():
    s = _scenario_jump()
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    triplet = solve_triplet(s, table, phi)
    nodes = s.grid.nodes
    n = s.grid.n_steps

    iu, ju = np.triu_indices(n + 1)
    k_err = float(np.max(np.abs(triplet.k[iu, ju, 0] - 2.0 * np.exp(1.0 - nodes[ju]))))

    paths = simulate_paths(s)
    weights = girsanov_weights(s, paths)
    u = martingale_part(s, triplet.y, phi).evaluate(paths)
    oracle = regression_k_oracle(s, paths, weights, u)
    comparison = compare_oracle("k", triplet.k[:, :n, :], oracle)
    agree = 1.0 - comparison.fraction_outside

    ok = k_err <= 1e-3 and agree >= 0.99 and not comparison.missing_marks
    _line(7, ok,
          f"max|K - 2e^(1-s)| = {k_err:.2e} (tol 1e-3); oracle agreement "
          f"{100 * agree:.2f}% of {comparison.n_nodes} nodes (>= 99%)")
    assert k_err <= 1e-3
    assert agree >= 0.99


def test_criterion_08_pathwise_residual_refinement():
    # the two formulations must agree to rounding even with nonzero drifts
    mixed = build_scenario(phi="1", xi="0.5", beta="0.25", f1="1", f2="0.5", g="z",
                           marks=(1.0,), intensities=(2.0,),
                           n_steps=100, n_paths=10_000, seed=55)
    phi = kernel_from_scenario(mixed)
    table = neumann_resolvent(phi, mixed.coeffs.bound_C, mixed.tol.neumann_tol)
    stats = bsvie_residual(mixed, simulate_paths(mixed), solve_triplet(mixed, table, phi))
    pq = stats.pq_relative_max

    base = _scenario_brownian(n_paths=10_000, seed=77)
    study = residual_refinement(base, (50, 100, 200))
    ok = pq <= 1e-12 and study.monotone_within_se
    rms_detail = ", ".join(f"n={n}: {r:.3e}+/-{3 * se:.0e}"
                           for n, r, se in zip(study.steps, study.rms, study.rms_se))
    _line(8, ok, f"P/Q agreement {pq:.2e} (tol 1e-12); rms {rms_detail}; "
          f"monotone within SE: {study.monotone_within_se}")
    assert pq <= 1e-12
    assert study.monotone_within_se


def test_criterion_09_smoothness_of_integrands():
    s = _scenario_brownian(n_paths=10)
    report = smoothness_check(s, (50, 100, 200))
    ratios_ok = all(r <= 1.1 for r in report.sum_ratios)
    ok = report.fd_first_order and report.sums_bounded and ratios_ok
    order_detail = ("degenerate (gradient identically zero)" if report.fd_order is None
                    else f"{report.fd_order:.3f}")
    _line(9, ok,
          f"dZ/dt finite-difference order {order_detail}; squared-gradient sums "
          f"{[float(f'{v:.3e}') for v in report.gradient_sums]} with ratios "
          f"{[float(f'{r:.3f}') for r in report.sum_ratios]} (<= 1.1)")
    assert report.fd_first_order
    assert report.sums_bounded
    assert ratios_ok


def test_criterion_10_reproducibility(tmp_path):
    scenario_path = tmp_path / "scenario.toml"
    scenario_path.write_text("""
[grid]
T = 1.0
n_steps = 50

[coefficients]
phi = "1"

[terminal]
f1 = "1"

[mc]
n_paths = 10000
seed = 7
""")
    outputs = []
    for label, threads in (("a", "1"), ("b", "8")):
        out_dir = tmp_path / label
        assert main(["solve", "--scenario", str(scenario_path),
                     "--out-dir", str(out_dir), "--threads", threads]) == 0
        outputs.append(out_dir)
    identical = True
    for name in ("y_coefficients.csv", "z_grid.csv", "k_grid.csv"):
        with open(outputs[0] / name, "rb") as fa, open(outputs[1] / name, "rb") as fb:
            identical = identical and fa.read() == fb.read()
    _line(10, identical, "solve outputs byte-identical across runs with --threads 1 vs 8")
    assert identical
