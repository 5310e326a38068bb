"""Shared scenario builder for the test suite."""

from __future__ import annotations

from bsvie import Scenario, parse_scenario


def build_scenario(
    phi: str = "0",
    xi: str = "0",
    beta: str = "0",
    f0: str = "0",
    f1: str = "0",
    f2: str = "0",
    g: str = "0",
    marks: tuple = (),
    intensities: tuple = (),
    T: float = 1.0,
    n_steps: int = 50,
    n_paths: int = 1000,
    seed: int = 0,
    bound_C: float | None = None,
    eps: float = 0.01,
    neumann_tol: float = 1e-10,
    residual_tol: float = 0.1,
) -> Scenario:
    bound_line = f"bound_C = {bound_C}" if bound_C is not None else ""
    text = f"""
[grid]
T = {T}
n_steps = {n_steps}

[levy]
marks = {list(marks)}
intensities = {list(intensities)}

[coefficients]
phi = "{phi}"
xi = "{xi}"
beta = "{beta}"
{bound_line}
eps = {eps}

[terminal]
f0 = "{f0}"
f1 = "{f1}"
f2 = "{f2}"
g = "{g}"

[mc]
n_paths = {n_paths}
seed = {seed}

[tol]
neumann_tol = {neumann_tol}
residual_tol = {residual_tol}
"""
    return parse_scenario(text)
