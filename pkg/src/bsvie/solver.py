"""Explicit solution triplet (Y, Z, K) for the linear backward Volterra equation.

For the affine terminal class F(t) = f0(t) + f1(t) B(T) + f2(t) J(T) with
deterministic coefficients, the state process is affine in the current driver
state,

    Y(t) = a(t) + b(t) B(t) + c(t) J(t),

where b and c are the resolvent-applied images of f1 and f2, and a folds in
the conditional means of B(T) and J(T) under the changed measure.  The
martingale integrands follow from the stochastic gradients of the affine
representation: Z(t, s) and K(t, s, mark) are deterministic tail integrals of
the kernel against b and c.  Every [t, T] integral uses the same trapezoid
rule as the resolvent module, so the discrete cancellations (terminal match,
vanishing conditional remainder) hold at quadrature accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resolvent import KernelGrid, ResolventTable, tail_weights
from .scenario import Scenario, TimeGrid, _freeze
from .simulate import PathEnsemble


@dataclass(frozen=True)
class AffineSolution:
    """Deterministic coefficients of Y(t) = a(t) + b(t) B(t) + c(t) J(t).

    ``xi_bar`` and ``beta_bar`` are the tail integrals of the Brownian and
    jump drift loadings; they shift the conditional means of B(T) and J(T).
    """

    grid: TimeGrid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    xi_bar: np.ndarray
    beta_bar: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "c", "xi_bar", "beta_bar"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))

    def evaluate(self, paths: PathEnsemble) -> np.ndarray:
        """Pathwise Y on grid nodes; uses only the driver state up to each node."""
        return self.a + paths.b * self.b + paths.j * self.c


@dataclass(frozen=True)
class MartingalePart:
    """The stochastic-integral remainder U(t) = F(t) + int_t^T phi(t,r) Y(r) dr - Y(t).

    Pathwise, U(t_i) decomposes into a constant, terminal-noise parts f1 B(T)
    and f2 J(T), current-state parts -b B(t_i) and -c J(t_i), and a quadrature
    pass over the whole path (``path_weights_*`` rows applied to B and J at
    all nodes).  ``cond_*`` are the coefficients of its conditional mean given
    time-t information, which vanish identically up to quadrature error.
    """

    grid: TimeGrid
    const: np.ndarray
    coef_terminal_b: np.ndarray
    coef_terminal_j: np.ndarray
    coef_state_b: np.ndarray
    coef_state_j: np.ndarray
    path_weights_b: np.ndarray  # (n+1, n+1)
    path_weights_j: np.ndarray
    cond_const: np.ndarray
    cond_state_b: np.ndarray
    cond_state_j: np.ndarray

    def __post_init__(self):
        for name in ("const", "coef_terminal_b", "coef_terminal_j", "coef_state_b",
                     "coef_state_j", "path_weights_b", "path_weights_j",
                     "cond_const", "cond_state_b", "cond_state_j"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name), dtype=float)))

    def evaluate(self, paths: PathEnsemble) -> np.ndarray:
        """Pathwise U on grid nodes, shape (n_paths, n_nodes)."""
        b_t, j_t = paths.b[:, -1:], paths.j[:, -1:]
        u = self.const + b_t * self.coef_terminal_b + j_t * self.coef_terminal_j
        u += paths.b * self.coef_state_b + paths.j * self.coef_state_j
        u += paths.b @ self.path_weights_b.T
        u += paths.j @ self.path_weights_j.T
        return u

    @property
    def max_conditional_coefficient(self) -> float:
        """Largest conditional-mean coefficient; a quadrature-consistency gauge."""
        return float(max(np.max(np.abs(self.cond_const)),
                         np.max(np.abs(self.cond_state_b)),
                         np.max(np.abs(self.cond_state_j))))


@dataclass(frozen=True)
class SolutionTriplet:
    """Y as affine coefficients plus the deterministic Z and K grids (t <= s)."""

    y: AffineSolution
    z: np.ndarray  # (n+1, n+1), zero below the diagonal
    k: np.ndarray  # (n+1, n+1, n_marks)

    def __post_init__(self):
        object.__setattr__(self, "z", _freeze(np.asarray(self.z, dtype=float)))
        object.__setattr__(self, "k", _freeze(np.asarray(self.k, dtype=float)))


def _check_grid(s: Scenario, grid: TimeGrid) -> None:
    if grid.n_nodes != s.grid.n_nodes or not np.array_equal(grid.nodes, s.grid.nodes):
        raise ValueError("component grid does not match the scenario grid")


def drift_tail_integrals(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Tail trapezoid integrals of xi and of sum_k g_k beta(., mark_k) intensity_k."""
    w = tail_weights(s.grid)
    xi_bar = w @ s.coeffs.xi_values
    if s.levy.n_marks:
        loading = s.coeffs.beta_values @ (s.terminal.g * s.levy.intensities)
        beta_bar = w @ loading
    else:
        beta_bar = np.zeros(s.grid.n_nodes)
    return xi_bar, beta_bar


def conditional_terminal(s: Scenario, r: int, t: int, b_t, j_t):
    """Conditional mean of F(t_r) given time-t_t information, at driver state (b_t, j_t).

    Closed form for the affine terminal class: f0(r) plus f1(r) and f2(r)
    times the drift-shifted current state.  Accepts scalar or array states.
    """
    n = s.grid.n_nodes
    if not (0 <= r < n and 0 <= t < n):
        raise ValueError(f"node indices must lie in [0, {n - 1}], got r={r}, t={t}")
    xi_bar, beta_bar = drift_tail_integrals(s)
    f = s.terminal
    return f.f0[r] + f.f1[r] * (np.asarray(b_t) + xi_bar[t]) + f.f2[r] * (np.asarray(j_t) + beta_bar[t])


def solve_y(s: Scenario, table: ResolventTable) -> AffineSolution:
    """Affine coefficients of Y from the resolvent representation.

    b and c are f1 and f2 plus their resolvent tail integrals; a adds the
    resolvent image of f0 and the drift shifts b * xi_bar + c * beta_bar.
    The terminal slice reproduces F(T) exactly: a(T) = f0(T), b(T) = f1(T),
    c(T) = f2(T).
    """
    _check_grid(s, table.psi.grid)
    w = tail_weights(s.grid)
    pw = w * table.psi.values
    f = s.terminal
    b = f.f1 + pw @ f.f1
    c = f.f2 + pw @ f.f2
    a0 = f.f0 + pw @ f.f0
    xi_bar, beta_bar = drift_tail_integrals(s)
    a = a0 + b * xi_bar + c * beta_bar
    return AffineSolution(grid=s.grid, a=a, b=b, c=c, xi_bar=xi_bar, beta_bar=beta_bar)


def martingale_part(s: Scenario, y: AffineSolution, phi: KernelGrid) -> MartingalePart:
    """Decompose U(t) = F(t) + int_t^T phi(t, r) Y(r) dr - Y(t) for pathwise evaluation.

    Also assembles the coefficients of its conditional mean given time-t
    information; all of them reduce to resolvent-identity defects and vanish
    up to quadrature error.
    """
    _check_grid(s, phi.grid)
    w = tail_weights(s.grid)
    a_w = w * phi.values
    f = s.terminal
    const = f.f0 - y.a + a_w @ y.a

    cond_state_b = f.f1 + a_w @ y.b - y.b
    cond_state_j = f.f2 + a_w @ y.c - y.c
    cond_const = (
        f.f0 + f.f1 * y.xi_bar + f.f2 * y.beta_bar
        + a_w @ y.a
        + y.xi_bar * (a_w @ y.b) - a_w @ (y.b * y.xi_bar)
        + y.beta_bar * (a_w @ y.c) - a_w @ (y.c * y.beta_bar)
        - y.a
    )
    return MartingalePart(
        grid=s.grid,
        const=const,
        coef_terminal_b=f.f1,
        coef_terminal_j=f.f2,
        coef_state_b=-y.b,
        coef_state_j=-y.c,
        path_weights_b=a_w * y.b,
        path_weights_j=a_w * y.c,
        cond_const=cond_const,
        cond_state_b=cond_state_b,
        cond_state_j=cond_state_j,
    )


def solve_z(s: Scenario, y: AffineSolution, phi: KernelGrid) -> np.ndarray:
    """Brownian integrand Z(t_i, s_j) = f1(t_i) + int_{s_j}^T phi(t_i, r) b(r) dr, i <= j.

    Deterministic because the coefficients and the terminal class are; the
    stochastic gradient of Y(r) in the Brownian direction at s is b(r) for
    s <= r, so the conditional expectation is the identity.
    """
    _check_grid(s, phi.grid)
    w = tail_weights(s.grid)
    z = s.terminal.f1[:, None] + (phi.values * y.b) @ w.T
    return np.triu(z)


def solve_k(s: Scenario, y: AffineSolution, phi: KernelGrid) -> np.ndarray:
    """Jump integrand K(t_i, s_j, mark) = g(mark) (f2(t_i) + int_{s_j}^T phi(t_i, r) c(r) dr)."""
    _check_grid(s, phi.grid)
    w = tail_weights(s.grid)
    core = np.triu(s.terminal.f2[:, None] + (phi.values * y.c) @ w.T)
    return core[:, :, None] * s.terminal.g


def solve_triplet(s: Scenario, table: ResolventTable, phi: KernelGrid) -> SolutionTriplet:
    y = solve_y(s, table)
    return SolutionTriplet(y=y, z=solve_z(s, y, phi), k=solve_k(s, y, phi))
