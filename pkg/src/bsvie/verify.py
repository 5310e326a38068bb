"""Independent verification of a computed solution triplet.

Three families of checks, none of which reuse the gradient formulas that
produce Z and K:

* martingale diagnostics for the measure change (density normalization,
  centered Brownian moments, tilted jump intensity);
* the pathwise defect of the backward equation itself, in both the original
  and the changed-measure form (algebraically identical, compared to rounding);
* regression oracles that recover Z and K statistically from weighted
  covariances of the martingale remainder with driver increments.

Every reported error carries a standard error or tolerance companion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .resolvent import (kernel_from_scenario, neumann_resolvent,
                        resolvent_residual, tail_weights)
from .scenario import Scenario, rebuild, scenario_hash
from .simulate import (GirsanovWeights, PathEnsemble, girsanov_weights,
                       q_increments, simulate_paths)
from .solver import SolutionTriplet, martingale_part, solve_triplet

SE_MULTIPLIER = 3.0
OUTLIER_BUDGET = 0.01
PQ_AGREEMENT_TOL = 1e-12
DEGENERATE_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Statistic checks


@dataclass(frozen=True)
class StatCheck:
    name: str
    estimate: float
    target: float
    se: float
    passed: bool


def _mean_se(sample: np.ndarray) -> tuple[float, float]:
    sample = np.asarray(sample, dtype=float)
    est = float(sample.mean())
    se = float(sample.std(ddof=1) / np.sqrt(sample.size)) if sample.size > 1 else 0.0
    return est, se


def _check(name: str, sample: np.ndarray, target: float) -> StatCheck:
    est, se = _mean_se(sample)
    passed = abs(est - target) <= SE_MULTIPLIER * se + 1e-12
    return StatCheck(name=name, estimate=est, target=float(target), se=se, passed=passed)


def martingale_suite(s: Scenario, paths: PathEnsemble, weights: GirsanovWeights) -> list[StatCheck]:
    """Moment checks of the measure change, each with a 3-SE band.

    Under the changed measure the centered Brownian motion has mean 0 and
    second moment T, the g-weighted compensated jump total has mean 0, and
    the jump intensity of each mark is tilted by (1 + beta); the density
    itself has unit mean under the original measure.
    """
    m_t = weights.m_terminal
    qi = q_increments(s, paths)
    b_q_terminal = qi.db_q.sum(axis=1)
    checks = [
        _check("mean_M_T", m_t, 1.0),
        _check("q_mean_B_Q_T", m_t * b_q_terminal, 0.0),
        _check("q_second_moment_B_Q_T", m_t * b_q_terminal**2, s.grid.horizon),
    ]
    if s.levy.n_marks:
        n = s.grid.n_steps
        gamma = np.broadcast_to(s.terminal.g, (n, s.levy.n_marks))
        checks.append(_check("q_mean_jump_martingale_T", m_t * qi.gamma_total(gamma), 0.0))
        beta = s.coeffs.beta_values[:n, :]
        target = float(s.grid.dt * ((1.0 + beta) @ s.levy.intensities).sum())
        total_counts = paths.counts.sum(axis=(1, 2))
        checks.append(_check("q_mean_jump_count_T", m_t * total_counts, target))
    return checks


# ---------------------------------------------------------------------------
# Pathwise residual of the backward equation


@dataclass(frozen=True)
class ResidualStats:
    """RMS/max defect over paths and nodes, per-node profile, and the
    agreement gap between the original-measure and changed-measure forms."""

    rms: float
    rms_se: float
    max_abs: float
    by_node: tuple[float, ...]
    pq_relative_max: float


def bsvie_residual(s: Scenario, paths: PathEnsemble, triplet: SolutionTriplet) -> ResidualStats:
    """Plug the triplet back into the discretized equation pathwise.

    Stochastic sums use left-node integrands; the kernel drift uses the
    shared trapezoid rule; the xi Z and beta K drift terms of the
    original-measure form use left-node sums so that the two forms are
    algebraically identical and differ only by floating-point roundoff.
    """
    if paths.grid.n_nodes != s.grid.n_nodes or not np.array_equal(paths.grid.nodes, s.grid.nodes):
        raise ValueError("path ensemble grid does not match the scenario grid")
    if triplet.y.grid.n_nodes != s.grid.n_nodes:
        raise ValueError("solution triplet grid does not match the scenario grid")
    n, m = s.grid.n_steps, s.levy.n_marks
    dt = s.grid.dt
    xi = s.coeffs.xi_values[:n]
    beta = s.coeffs.beta_values[:n, :]

    y_nodes = triplet.y.evaluate(paths)
    f = s.terminal
    f_nodes = f.f0 + paths.b[:, -1:] * f.f1 + paths.j[:, -1:] * f.f2

    drift_kernel = y_nodes @ (tail_weights(s.grid) * s.coeffs.phi_values).T

    z_steps = triplet.z[:, :n]
    qi = q_increments(s, paths)
    stoch_b_q = qi.db_q @ z_steps.T
    stoch_b_p = paths.db @ z_steps.T

    base = y_nodes - f_nodes - drift_kernel
    r_q = base + stoch_b_q
    r_p = base + stoch_b_p - z_steps @ (dt * xi)
    if m:
        k_steps = triplet.k[:, :n, :].reshape(s.grid.n_nodes, n * m)
        dn_p = (paths.counts - dt * s.levy.intensities).reshape(-1, n * m)
        r_q = r_q + qi.dn_q.reshape(-1, n * m) @ k_steps.T
        r_p = r_p + dn_p @ k_steps.T
        r_p = r_p - triplet.k[:, :n, :].reshape(-1, n * m) @ (dt * beta * s.levy.intensities).reshape(n * m)

    scale = np.maximum(1.0, np.maximum(np.abs(r_p), np.abs(r_q)))
    pq_relative_max = float(np.max(np.abs(r_p - r_q) / scale))

    per_path_msq = np.mean(r_q**2, axis=1)
    msq, msq_se = _mean_se(per_path_msq)
    rms = float(np.sqrt(msq))
    rms_se = float(msq_se / (2.0 * rms)) if rms > 0 else 0.0
    by_node = np.sqrt(np.mean(r_q**2, axis=0))
    return ResidualStats(
        rms=rms,
        rms_se=rms_se,
        max_abs=float(np.max(np.abs(r_q))),
        by_node=tuple(float(v) for v in by_node),
        pq_relative_max=pq_relative_max,
    )


# ---------------------------------------------------------------------------
# Regression oracles for Z and K


@dataclass(frozen=True)
class OracleEstimate:
    """Statistical estimate of an integrand grid with pointwise standard errors.

    ``values[i, j]`` estimates the integrand at (t_i, s_j) for step index
    j = i .. n-1 (the terminal column has no increment and is not estimable).
    """

    values: np.ndarray
    se: np.ndarray
    valid: np.ndarray
    missing_marks: tuple[int, ...] = ()


def regression_z_oracle(s: Scenario, paths: PathEnsemble, weights: GirsanovWeights,
                        u: np.ndarray) -> OracleEstimate:
    """Recover Z from weighted covariances with Brownian increments.

    The martingale remainder satisfies U(t) = sum_j Z(t, s_j) dB_Q(j) + jump
    terms under the changed measure, so Z(t_i, s_j) is the weighted mean of
    U(t_i) dB_Q(j) / dt.  Valid whenever the true integrand is deterministic,
    which holds for the implemented scenario class.
    """
    n = s.grid.n_steps
    n_paths = paths.n_paths
    dt = s.grid.dt
    qi = q_increments(s, paths)
    m_u = weights.m_terminal[:, None] * u
    est = (m_u.T @ qi.db_q) / (n_paths * dt)
    second = ((m_u**2).T @ (qi.db_q**2)) / (n_paths * dt**2)
    var = np.maximum(second - est**2, 0.0)
    se = np.sqrt(var / max(n_paths - 1, 1))
    valid = np.arange(n + 1)[:, None] <= np.arange(n)[None, :]
    return OracleEstimate(values=est, se=se, valid=valid)


def regression_k_oracle(s: Scenario, paths: PathEnsemble, weights: GirsanovWeights,
                        u: np.ndarray) -> OracleEstimate:
    """Recover K from weighted covariances with compensated jump increments.

    The changed-measure intensity of mark k at step j is
    (1 + beta(t_j, mark_k)) intensity_k, so the covariance of U with the
    centered count is K times that variance.  Marks with no realized jumps in
    the whole ensemble are reported as missing rather than estimated.
    """
    n, m = s.grid.n_steps, s.levy.n_marks
    if m == 0:
        raise ValueError("scenario has no jump marks; the jump oracle is undefined")
    n_paths = paths.n_paths
    dt = s.grid.dt
    beta = s.coeffs.beta_values[:n, :]
    qi = q_increments(s, paths)
    m_u = weights.m_terminal[:, None] * u

    est = np.full((n + 1, n, m), np.nan)
    se = np.full((n + 1, n, m), np.nan)
    valid = np.zeros((n + 1, n, m), dtype=bool)
    triangle = np.arange(n + 1)[:, None] <= np.arange(n)[None, :]
    missing: list[int] = []
    for k in range(m):
        if int(paths.counts[:, :, k].sum()) == 0:
            missing.append(k)
            continue
        denom = (1.0 + beta[:, k]) * s.levy.intensities[k] * dt
        cov = (m_u.T @ qi.dn_q[:, :, k]) / n_paths
        second = ((m_u**2).T @ (qi.dn_q[:, :, k] ** 2)) / n_paths
        cov_se = np.sqrt(np.maximum(second - cov**2, 0.0) / max(n_paths - 1, 1))
        est[:, :, k] = cov / denom
        se[:, :, k] = cov_se / denom
        valid[:, :, k] = triangle
    return OracleEstimate(values=est, se=se, valid=valid, missing_marks=tuple(missing))


@dataclass(frozen=True)
class OracleComparison:
    """Agreement of an analytic grid with its regression estimate."""

    name: str
    n_nodes: int
    n_outside: int
    fraction_outside: float
    max_abs_error: float
    passed: bool
    missing_marks: tuple[int, ...] = ()


def compare_oracle(name: str, analytic: np.ndarray, oracle: OracleEstimate) -> OracleComparison:
    """3-SE agreement over all estimable nodes; more than 1% outliers fails."""
    valid = oracle.valid
    diff = np.abs(np.asarray(analytic) - oracle.values)[valid]
    se = oracle.se[valid]
    outside = diff > SE_MULTIPLIER * se + 1e-12
    n_nodes = int(valid.sum())
    n_outside = int(outside.sum())
    fraction = n_outside / n_nodes if n_nodes else 0.0
    return OracleComparison(
        name=name,
        n_nodes=n_nodes,
        n_outside=n_outside,
        fraction_outside=fraction,
        max_abs_error=float(diff.max()) if n_nodes else 0.0,
        passed=fraction <= OUTLIER_BUDGET,
        missing_marks=oracle.missing_marks,
    )


# ---------------------------------------------------------------------------
# Grid-refinement studies


@dataclass(frozen=True)
class ConvergenceStudy:
    """Resolvent-identity residuals across refinements with a fitted log-log slope."""

    steps: tuple[int, ...]
    residuals: tuple[float, ...]
    slope: float
    r_squared: float


def resolvent_convergence(s: Scenario, steps: Sequence[int] = (50, 100, 200)) -> ConvergenceStudy:
    residuals = []
    for n in steps:
        sc = rebuild(s, n_steps=n)
        phi = kernel_from_scenario(sc)
        table = neumann_resolvent(phi, sc.coeffs.bound_C, sc.tol.neumann_tol)
        residuals.append(resolvent_residual(phi, table.psi))
    dts = [s.grid.horizon / n for n in steps]
    slope, r2 = _loglog_fit(dts, residuals)
    return ConvergenceStudy(steps=tuple(steps), residuals=tuple(residuals), slope=slope, r_squared=r2)


def _loglog_fit(x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    lx, ly = np.log(np.asarray(x)), np.log(np.asarray(y))
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = slope * lx + intercept
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


@dataclass(frozen=True)
class ResidualRefinement:
    """Pathwise residual RMS across grid refinements with SE-aware monotonicity."""

    steps: tuple[int, ...]
    rms: tuple[float, ...]
    rms_se: tuple[float, ...]
    monotone_within_se: bool


def residual_refinement(s: Scenario, steps: Sequence[int] = (50, 100, 200),
                        n_paths: int | None = None, threads: int = 1) -> ResidualRefinement:
    """Independent ensembles per refinement level; decrease judged within 3 SE."""
    rms, rms_se = [], []
    for n in steps:
        sc = rebuild(s, n_steps=n, n_paths=n_paths)
        phi = kernel_from_scenario(sc)
        table = neumann_resolvent(phi, sc.coeffs.bound_C, sc.tol.neumann_tol)
        triplet = solve_triplet(sc, table, phi)
        paths = simulate_paths(sc, threads=threads)
        stats = bsvie_residual(sc, paths, triplet)
        rms.append(stats.rms)
        rms_se.append(stats.rms_se)
    monotone = all(
        rms[k + 1] <= rms[k] + SE_MULTIPLIER * np.hypot(rms_se[k], rms_se[k + 1])
        for k in range(len(rms) - 1)
    )
    return ResidualRefinement(steps=tuple(steps), rms=tuple(rms), rms_se=tuple(rms_se),
                              monotone_within_se=monotone)


@dataclass(frozen=True)
class SmoothnessReport:
    """Time-direction smoothness of Z and K under grid refinement.

    ``gradient_sums`` are the discrete squared-gradient double sums (with the
    intensity-weighted K contribution); boundedness requires each successive
    ratio <= 1.1.  ``fd_gaps`` are sup-differences of the discrete time
    gradient between successive grids; first-order convergence halves them.
    Exact-zero gradients pass degenerately.
    """

    steps: tuple[int, ...]
    gradient_sums: tuple[float, ...]
    sum_ratios: tuple[float, ...]
    fd_gaps: tuple[float, ...]
    fd_order: float | None
    sums_bounded: bool
    fd_first_order: bool

    @property
    def passed(self) -> bool:
        return self.sums_bounded and self.fd_first_order


def _time_gradients(sc: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward differences of Z (and K) in t; valid where i+1 <= j."""
    phi = kernel_from_scenario(sc)
    table = neumann_resolvent(phi, sc.coeffs.bound_C, sc.tol.neumann_tol)
    triplet = solve_triplet(sc, table, phi)
    dt = sc.grid.dt
    fd_z = (triplet.z[1:, :] - triplet.z[:-1, :]) / dt          # (n, n+1)
    fd_k = (triplet.k[1:, :, :] - triplet.k[:-1, :, :]) / dt    # (n, n+1, m)
    n = sc.grid.n_steps
    valid = np.arange(1, n + 1)[:, None] <= np.arange(n + 1)[None, :]
    return fd_z, fd_k, valid


def smoothness_check(s: Scenario, steps: Sequence[int] = (50, 100, 200)) -> SmoothnessReport:
    steps = tuple(sorted(steps))
    for coarse, fine in zip(steps, steps[1:]):
        if fine % coarse:
            raise ValueError(f"refinement steps must nest, got {coarse} then {fine}")
    grads = []
    sums = []
    for n in steps:
        sc = rebuild(s, n_steps=n)
        fd_z, fd_k, valid = _time_gradients(sc)
        dt = sc.grid.dt
        total = float(np.sum(fd_z[valid] ** 2) * dt * dt)
        if fd_k.size:
            weighted = (fd_k**2) @ sc.levy.intensities
            total += float(np.sum(weighted[valid]) * dt * dt)
        grads.append((fd_z, fd_k, valid))
        sums.append(total)

    ratios = []
    bounded = True
    for prev, curr in zip(sums, sums[1:]):
        if prev <= DEGENERATE_FLOOR:
            ratios.append(1.0 if curr <= DEGENERATE_FLOOR else float("inf"))
        else:
            ratios.append(curr / prev)
        bounded = bounded and ratios[-1] <= 1.1

    gaps = []
    for (level, n_coarse) in enumerate(steps[:-1]):
        fd_zc, fd_kc, valid_c = grads[level]
        fd_zf, fd_kf, _ = grads[level + 1]
        r = steps[level + 1] // n_coarse
        ii, jj = np.nonzero(valid_c)
        gap = float(np.max(np.abs(fd_zc[ii, jj] - fd_zf[r * ii, r * jj]))) if ii.size else 0.0
        if fd_kc.size:
            gap = max(gap, float(np.max(np.abs(fd_kc[ii, jj, :] - fd_kf[r * ii, r * jj, :]))))
        gaps.append(gap)

    if all(g <= DEGENERATE_FLOOR for g in gaps):
        order, first_order = None, True
    elif any(g <= DEGENERATE_FLOOR for g in gaps):
        order, first_order = None, False
    else:
        order = float(np.mean([np.log2(gaps[k] / gaps[k + 1]) for k in range(len(gaps) - 1)]))
        first_order = abs(order - 1.0) <= 0.4
    return SmoothnessReport(
        steps=steps,
        gradient_sums=tuple(sums),
        sum_ratios=tuple(ratios),
        fd_gaps=tuple(gaps),
        fd_order=order,
        sums_bounded=bounded,
        fd_first_order=first_order,
    )


# ---------------------------------------------------------------------------
# Full verification run


@dataclass(frozen=True)
class VerificationReport:
    scenario_sha256: str
    n_steps: int
    n_paths: int
    seed: int
    resolvent_order: int
    resolvent_tail_bound: float
    resolvent_identity_residual: float
    max_conditional_coefficient: float
    martingale: tuple[StatCheck, ...]
    residual: ResidualStats
    residual_tol: float
    oracle_z: OracleComparison
    oracle_k: OracleComparison | None

    @property
    def passed(self) -> bool:
        return (
            all(c.passed for c in self.martingale)
            and self.residual.rms <= self.residual_tol
            and self.residual.pq_relative_max <= PQ_AGREEMENT_TOL
            and self.oracle_z.passed
            and (self.oracle_k is None or self.oracle_k.passed)
        )


def run_verification(s: Scenario, threads: int = 1,
                     inject_fault: str | None = None) -> VerificationReport:
    """Solve, simulate, and run every verification family on one scenario.

    ``inject_fault`` ("z" or "k") corrupts the corresponding analytic grid by
    +1 before verification; a working oracle must then fail the run.
    """
    phi = kernel_from_scenario(s)
    table = neumann_resolvent(phi, s.coeffs.bound_C, s.tol.neumann_tol)
    triplet = solve_triplet(s, table, phi)
    if inject_fault is not None:
        if inject_fault not in ("z", "k"):
            raise ValueError(f"unknown fault kind {inject_fault!r} (expected 'z' or 'k')")
        if inject_fault == "z":
            triplet = SolutionTriplet(y=triplet.y, z=triplet.z + 1.0, k=triplet.k)
        else:
            if s.levy.n_marks == 0:
                raise ValueError("cannot inject a jump-grid fault without jump marks")
            triplet = SolutionTriplet(y=triplet.y, z=triplet.z, k=triplet.k + 1.0)

    u_part = martingale_part(s, triplet.y, phi)
    paths = simulate_paths(s, threads=threads)
    weights = girsanov_weights(s, paths)
    u = u_part.evaluate(paths)

    checks = martingale_suite(s, paths, weights)
    residual = bsvie_residual(s, paths, triplet)
    z_oracle = regression_z_oracle(s, paths, weights, u)
    oracle_z = compare_oracle("z", triplet.z[:, : s.grid.n_steps], z_oracle)
    oracle_k = None
    if s.levy.n_marks:
        k_oracle = regression_k_oracle(s, paths, weights, u)
        oracle_k = compare_oracle("k", triplet.k[:, : s.grid.n_steps, :], k_oracle)

    return VerificationReport(
        scenario_sha256=scenario_hash(s),
        n_steps=s.grid.n_steps,
        n_paths=s.mc.n_paths,
        seed=s.mc.seed,
        resolvent_order=table.n_terms_used,
        resolvent_tail_bound=table.tail_bound,
        resolvent_identity_residual=resolvent_residual(phi, table.psi),
        max_conditional_coefficient=u_part.max_conditional_coefficient,
        martingale=tuple(checks),
        residual=residual,
        residual_tol=s.tol.residual_tol,
        oracle_z=oracle_z,
        oracle_k=oracle_k,
    )


def report_to_dict(report: VerificationReport) -> dict:
    def stat(c: StatCheck) -> dict:
        return {"name": c.name, "estimate": c.estimate, "target": c.target,
                "se": c.se, "passed": c.passed}

    def oracle(c: OracleComparison | None) -> dict | None:
        if c is None:
            return None
        return {"name": c.name, "n_nodes": c.n_nodes, "n_outside": c.n_outside,
                "fraction_outside": c.fraction_outside, "max_abs_error": c.max_abs_error,
                "passed": c.passed, "missing_marks": list(c.missing_marks)}

    return {
        "scenario_sha256": report.scenario_sha256,
        "n_steps": report.n_steps,
        "n_paths": report.n_paths,
        "seed": report.seed,
        "resolvent": {
            "order": report.resolvent_order,
            "tail_bound": report.resolvent_tail_bound,
            "identity_residual": report.resolvent_identity_residual,
        },
        "max_conditional_coefficient": report.max_conditional_coefficient,
        "martingale": [stat(c) for c in report.martingale],
        "residual": {
            "rms": report.residual.rms,
            "rms_se": report.residual.rms_se,
            "max_abs": report.residual.max_abs,
            "by_node": list(report.residual.by_node),
            "pq_relative_max": report.residual.pq_relative_max,
            "tol": report.residual_tol,
            "within_tol": report.residual.rms <= report.residual_tol,
        },
        "oracle_z": oracle(report.oracle_z),
        "oracle_k": oracle(report.oracle_k),
        "passed": report.passed,
    }


def report_to_json(report: VerificationReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True)


def format_report(report: VerificationReport) -> str:
    """Human-readable table of every check with its band."""
    lines = [
        f"scenario  sha256={report.scenario_sha256[:16]}...  "
        f"n_steps={report.n_steps}  n_paths={report.n_paths}  seed={report.seed}",
        f"resolvent order={report.resolvent_order}  tail_bound={report.resolvent_tail_bound:.3e}  "
        f"identity_residual={report.resolvent_identity_residual:.3e}",
        f"conditional-remainder max coefficient = {report.max_conditional_coefficient:.3e}",
        "",
        f"{'check':<28}{'estimate':>14}{'target':>12}{'3*SE':>12}  status",
    ]
    for c in report.martingale:
        lines.append(f"{c.name:<28}{c.estimate:>14.6f}{c.target:>12.6f}"
                     f"{SE_MULTIPLIER * c.se:>12.6f}  {'pass' if c.passed else 'FAIL'}")
    r = report.residual
    lines.append("")
    lines.append(f"residual rms = {r.rms:.6e} (se {r.rms_se:.2e}, tol {report.residual_tol:g})  "
                 f"max = {r.max_abs:.6e}  "
                 f"{'pass' if r.rms <= report.residual_tol else 'FAIL'}")
    lines.append(f"P-form / Q-form agreement = {r.pq_relative_max:.3e} "
                 f"(tol {PQ_AGREEMENT_TOL:g})  "
                 f"{'pass' if r.pq_relative_max <= PQ_AGREEMENT_TOL else 'FAIL'}")
    for c in (report.oracle_z, report.oracle_k):
        if c is None:
            continue
        lines.append(
            f"oracle {c.name}: {c.n_outside}/{c.n_nodes} nodes outside 3 SE "
            f"({100 * c.fraction_outside:.2f}%, budget {100 * OUTLIER_BUDGET:.0f}%), "
            f"max |err| = {c.max_abs_error:.4f}  {'pass' if c.passed else 'FAIL'}"
            + (f"  [missing marks: {list(c.missing_marks)}]" if c.missing_marks else "")
        )
    lines.append("")
    lines.append(f"overall: {'PASS' if report.passed else 'FAIL'}")
    return "\n".join(lines)
