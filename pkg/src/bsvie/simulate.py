"""Jump-diffusion path ensembles, measure-change weights, and centered increments.

Paths are generated in fixed blocks of ``CHUNK`` paths.  Each block draws from
its own counter-based Philox stream keyed by (master seed, block index), and
blocks write into disjoint slices of preallocated arrays, so the ensemble is
bit-identical for any worker count and any scheduling order.

Conventions: coefficients are evaluated at the left endpoint of each step
(the predictable convention for jump integrands), and all jumps within a step
settle at the left node.  The per-step increments of the compensated jump
functional J use the terminal functional's mark weight g.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from .scenario import LevyModel, Scenario, TimeGrid, _freeze

CHUNK = 4096


@dataclass(frozen=True)
class PathEnsemble:
    """Simulated driver paths: Brownian increments and per-step jump counts.

    ``b`` and ``j`` are the running Brownian level and compensated jump
    functional on grid nodes, both starting at 0.
    """

    grid: TimeGrid
    levy: LevyModel
    master_seed: int
    chunk_size: int
    db: np.ndarray      # (P, n) Brownian increments per step
    counts: np.ndarray  # (P, n, m) jump counts per step and mark
    b: np.ndarray       # (P, n+1)
    j: np.ndarray       # (P, n+1)

    def __post_init__(self):
        for name in ("db", "counts", "b", "j"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        if np.any(self.counts < 0):
            raise ValueError("jump counts must be nonnegative")

    @property
    def n_paths(self) -> int:
        return self.db.shape[0]

    def substream_key(self, path_index: int) -> tuple[int, int]:
        """The (master_seed, block index) pair that generated this path."""
        return (self.master_seed, path_index // self.chunk_size)


@dataclass(frozen=True)
class GirsanovWeights:
    """Log of the change-of-measure density process M on grid nodes, per path."""

    log_m: np.ndarray  # (P, n+1), log_m[:, 0] = 0

    def __post_init__(self):
        object.__setattr__(self, "log_m", _freeze(self.log_m))

    @property
    def m(self) -> np.ndarray:
        return np.exp(self.log_m)

    @property
    def m_terminal(self) -> np.ndarray:
        return np.exp(self.log_m[:, -1])


@dataclass(frozen=True)
class QIncrements:
    """Increments centered under the changed measure.

    ``db_q`` removes the xi drift from each Brownian increment; ``dn_q``
    removes the (1 + beta)-tilted compensator from each jump count.
    """

    db_q: np.ndarray  # (P, n)
    dn_q: np.ndarray  # (P, n, m)

    def gamma_total(self, gamma: np.ndarray) -> np.ndarray:
        """Terminal value of the jump martingale with predictable weight gamma(t_j, mark)."""
        n, m = self.dn_q.shape[1], self.dn_q.shape[2]
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (n, m):
            raise ValueError(f"gamma must have shape ({n}, {m}), got {gamma.shape}")
        return self.dn_q.reshape(-1, n * m) @ gamma.reshape(n * m)


def _rng_for_block(master_seed: int, block_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(block_index,))
    return np.random.Generator(np.random.Philox(seed=seq))


def simulate_paths(s: Scenario, threads: int = 1) -> PathEnsemble:
    """Draw the path ensemble for a scenario.

    Brownian increments are exact N(0, dt) draws; jump counts per step and
    mark are exact Poisson(intensity * dt) draws.  The result depends only on
    (scenario, master seed), never on ``threads``.
    """
    grid, levy = s.grid, s.levy
    n, m, n_paths = grid.n_steps, levy.n_marks, s.mc.n_paths
    dt, seed = grid.dt, s.mc.seed
    sqrt_dt = np.sqrt(dt)
    lam = levy.intensities * dt

    db = np.empty((n_paths, n))
    counts = np.zeros((n_paths, n, m), dtype=np.int32)

    def fill_block(block_index: int) -> None:
        lo = block_index * CHUNK
        hi = min(lo + CHUNK, n_paths)
        rng = _rng_for_block(seed, block_index)
        db[lo:hi] = sqrt_dt * rng.standard_normal((hi - lo, n))
        if m:
            counts[lo:hi] = rng.poisson(lam, (hi - lo, n, m))

    n_blocks = (n_paths + CHUNK - 1) // CHUNK
    if threads > 1 and n_blocks > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill_block, range(n_blocks)))
    else:
        for block in range(n_blocks):
            fill_block(block)

    b = np.zeros((n_paths, n + 1))
    np.cumsum(db, axis=1, out=b[:, 1:])
    j = np.zeros((n_paths, n + 1))
    if m:
        g = s.terminal.g
        dj = counts @ g - dt * float(g @ levy.intensities)
        np.cumsum(dj, axis=1, out=j[:, 1:])
    return PathEnsemble(grid=grid, levy=levy, master_seed=seed, chunk_size=CHUNK,
                        db=db, counts=counts, b=b, j=j)


def girsanov_weights(s: Scenario, paths: PathEnsemble) -> GirsanovWeights:
    """Accumulate log M along each path.

    Per step: xi(t_j) dB_j - xi(t_j)^2 dt / 2 for the Gaussian part, plus
    log(1 + beta(t_j, mark)) per realized jump minus the collapsed compensator
    sum beta(t_j, mark) * intensity * dt.  Accumulation stays in log space;
    exponentiate at read time.
    """
    n = s.grid.n_steps
    dt = s.grid.dt
    xi = s.coeffs.xi_values[:n]
    beta = s.coeffs.beta_values[:n, :]
    floor = -1.0 + s.coeffs.eps
    if beta.size and not np.all(beta >= floor):
        raise ValueError(f"beta drops below -1 + eps = {floor}; the log weight is undefined")

    inc = paths.db * xi - 0.5 * dt * xi**2
    if s.levy.n_marks:
        log_jump = np.log1p(beta)
        realized = np.einsum("pik,ik->pi", paths.counts, log_jump)
        compensator = dt * (beta @ s.levy.intensities)
        inc = inc + realized - compensator
    log_m = np.zeros((paths.n_paths, n + 1))
    np.cumsum(inc, axis=1, out=log_m[:, 1:])
    return GirsanovWeights(log_m=log_m)


def q_increments(s: Scenario, paths: PathEnsemble) -> QIncrements:
    """Increments of the changed-measure Brownian motion and compensated jumps."""
    n = s.grid.n_steps
    dt = s.grid.dt
    xi = s.coeffs.xi_values[:n]
    beta = s.coeffs.beta_values[:n, :]
    db_q = paths.db - dt * xi
    dn_q = paths.counts - dt * (1.0 + beta) * s.levy.intensities
    return QIncrements(db_q=db_q, dn_q=dn_q)
