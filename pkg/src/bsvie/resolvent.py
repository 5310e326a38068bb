"""Iterated kernels, the Neumann resolvent, and deterministic Volterra solves.

All kernels live on the upper-triangular node grid (i, j), i <= j, and every
integral uses the composite trapezoid rule on grid nodes, with the zero-width
convention for empty panels.  The resolvent of a kernel phi is the series sum
of its iterated self-compositions; it solves the backward linear Volterra
equation y(t) = g(t) + integral_t^T phi(t, s) y(s) ds in closed form, which
backward substitution provides independently as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario, TimeGrid, _freeze

_MAX_ORDER = 500


@dataclass(frozen=True)
class KernelGrid:
    """A kernel tabulated at (t_i, t_j) for i <= j; the lower triangle is zero."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        n = self.grid.n_nodes
        values = np.asarray(self.values, dtype=float)
        if values.shape != (n, n):
            raise ValueError(f"kernel values must be ({n}, {n}), got {values.shape}")
        iu = np.triu_indices(n)
        if not np.all(np.isfinite(values[iu])):
            raise ValueError("kernel has non-finite entries on the triangle")
        object.__setattr__(self, "values", _freeze(np.triu(values)))

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class ResolventTable:
    """Truncated Neumann series: psi = sum of the first ``n_terms_used`` iterated kernels.

    ``tail_bound`` is the factorial upper bound on everything discarded, and
    is <= the tolerance the table was built with.
    """

    psi: KernelGrid
    n_terms_used: int
    tail_bound: float


def kernel_from_scenario(s: Scenario) -> KernelGrid:
    return KernelGrid(s.grid, s.coeffs.phi_values)


def tail_weights(grid: TimeGrid) -> np.ndarray:
    """Trapezoid weights W with W[i] @ f = integral over [t_i, T] of f on nodes."""
    n = grid.n_steps
    w = np.triu(np.full((n + 1, n + 1), grid.dt))
    idx = np.arange(n + 1)
    w[idx, idx] *= 0.5
    w[:, n] *= 0.5
    w[n, n] = 0.0
    return w


def _compose(a: np.ndarray, b: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid kernel composition: out[i, j] = integral_{t_i}^{t_j} a(t_i, s) b(s, t_j) ds."""
    n = a.shape[0]
    out = np.zeros_like(a)
    diag_idx = np.arange(n)
    for i in range(n - 1):
        prod = a[i][:, None] * b  # prod[k, j] = a[i, k] b[k, j]
        csum = np.cumsum(prod, axis=0)
        total = csum[diag_idx, diag_idx] - (csum[i - 1] if i > 0 else 0.0)
        row = dt * (total - 0.5 * prod[i] - 0.5 * prod[diag_idx, diag_idx])
        row[: i + 1] = 0.0
        out[i] = row
    return out


def kernel_compose(a: KernelGrid, b: KernelGrid) -> KernelGrid:
    if a.grid is not b.grid and not np.array_equal(a.grid.nodes, b.grid.nodes):
        raise ValueError("kernel grids do not match")
    return KernelGrid(a.grid, _compose(a.values, b.values, a.grid.dt))


def iterated_kernel(phi: KernelGrid, n: int) -> KernelGrid:
    """n-fold iterated kernel; order 1 is phi itself, order m composes order m-1 with phi."""
    if n < 1:
        raise ValueError(f"iterated kernel order must be >= 1, got {n}")
    values = phi.values
    for _ in range(n - 1):
        values = _compose(values, phi.values, phi.grid.dt)
    return KernelGrid(phi.grid, values)


def _factorial_tail(x: float, start: int) -> float:
    """sum_{m >= start} x^m / m!, summed forward to machine accuracy."""
    term = 1.0
    for m in range(1, start + 1):
        term *= x / m
    total = term
    m = start
    while True:
        m += 1
        term *= x / m
        total += term
        if term <= total * 1e-17 + 1e-300:
            return total


def truncation_order(bound_c: float, horizon: float, tol: float) -> tuple[int, float]:
    """Smallest series order N whose discarded factorial tail is below ``tol``.

    The n-th iterated kernel of a kernel bounded by C is bounded by
    C^n (r - t)^(n-1) / (n-1)!, so the tail beyond order N is at most
    C * sum_{m >= N} (C T)^m / m!; that value is returned alongside N.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be > 0, got {tol}")
    if bound_c < 0:
        raise ValueError(f"kernel bound must be >= 0, got {bound_c}")
    x = bound_c * horizon
    for order in range(1, _MAX_ORDER + 1):
        tail = bound_c * _factorial_tail(x, order)
        if tail <= tol:
            return order, tail
    raise ValueError(f"no truncation order below {_MAX_ORDER} reaches tolerance {tol}")


def neumann_resolvent(phi: KernelGrid, bound_c: float, tol: float) -> ResolventTable:
    """Sum iterated kernels up to the a-priori truncation order for ``tol``.

    ``bound_c`` must dominate |phi| on the grid; the truncation order depends
    only on (bound_c, T, tol), so the result is deterministic and reproducible.
    """
    if phi.max_abs > bound_c:
        raise ValueError(
            f"bound_c = {bound_c} does not dominate the kernel (grid max |phi| = {phi.max_abs})"
        )
    order, tail = truncation_order(bound_c, phi.grid.horizon, tol)
    term = phi.values.copy()
    psi = term.copy()
    for _ in range(order - 1):
        term = _compose(term, phi.values, phi.grid.dt)
        psi += term
    return ResolventTable(psi=KernelGrid(phi.grid, psi), n_terms_used=order, tail_bound=tail)


def _simpson_relative_weights(n_panels: int) -> np.ndarray:
    """w[k, m] = weight (in units of dt) of node offset k in an m-panel integral.

    Composite Simpson for even panel counts; odd counts >= 3 end with a 3/8
    block; a single panel falls back to the trapezoid (its O(dt^3) local error
    is subdominant).  Column m of the matrix integrates m panels exactly for
    cubics apart from the single-panel column.
    """
    def even_pattern(m: int) -> np.ndarray:
        col = np.full(m + 1, 2.0 / 3.0)
        col[1:m:2] = 4.0 / 3.0
        col[0] = col[m] = 1.0 / 3.0
        return col

    w = np.zeros((n_panels + 1, n_panels + 1))
    if n_panels >= 1:
        w[:2, 1] = 0.5
    for m in range(2, n_panels + 1):
        if m % 2 == 0:
            w[: m + 1, m] = even_pattern(m)
        else:
            if m > 3:
                w[: m - 2, m] = even_pattern(m - 3)
            w[m - 3 : m + 1, m] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    return w


def resolvent_residual(phi: KernelGrid, psi: KernelGrid) -> float:
    """Max-norm defect of the resolvent identity psi = phi + phi * psi.

    The identity integral is evaluated with an independent composite Simpson
    rule on the same nodes, so the defect gauges the genuine discretization
    error of the table instead of the trapezoid construction's
    self-consistency; it decays at second order under grid refinement.
    """
    if phi.grid.n_nodes != psi.grid.n_nodes or not np.array_equal(phi.grid.nodes, psi.grid.nodes):
        raise ValueError("kernel grids do not match")
    n = phi.grid.n_steps
    dt = phi.grid.dt
    w_rel = _simpson_relative_weights(n)
    defect = psi.values - phi.values
    for i in range(n + 1):
        width = n + 1 - i
        prod = phi.values[i, i:, None] * psi.values[i:, i:]
        defect[i, i:] -= dt * np.einsum("km,km->m", w_rel[:width, :width], prod)
    return float(np.max(np.abs(np.triu(defect))))


def volterra_solve(phi: KernelGrid, g: np.ndarray) -> np.ndarray:
    """Solve y(t_i) = g(t_i) + trapezoid integral of phi(t_i, .) y over [t_i, T].

    Marches backward from y(T) = g(T), solving each node's implicit trapezoid
    term directly; independent of the resolvent construction.
    """
    n = phi.grid.n_steps
    g = np.asarray(g, dtype=float)
    if g.shape != (n + 1,):
        raise ValueError(f"g must have {n + 1} node values, got shape {g.shape}")
    dt = phi.grid.dt
    values = phi.values
    y = np.empty(n + 1)
    y[n] = g[n]
    for i in range(n - 1, -1, -1):
        acc = 0.5 * values[i, n] * y[n]
        if i + 1 < n:
            acc += values[i, i + 1 : n] @ y[i + 1 : n]
        denom = 1.0 - 0.5 * dt * values[i, i]
        if abs(denom) < 1e-12:
            raise ValueError(f"backward substitution is singular at node {i} (refine the grid)")
        y[i] = (g[i] + dt * acc) / denom
    return y


def apply_resolvent(psi: KernelGrid, g: np.ndarray) -> np.ndarray:
    """Resolvent representation y = g + integral over [t_i, T] of psi(t_i, .) g."""
    n = psi.grid.n_steps
    g = np.asarray(g, dtype=float)
    if g.shape != (n + 1,):
        raise ValueError(f"g must have {n + 1} node values, got shape {g.shape}")
    return g + (tail_weights(psi.grid) * psi.values) @ g
