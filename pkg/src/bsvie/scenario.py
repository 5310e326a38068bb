"""Problem definitions: time grid, jump model, coefficients, terminal functional.

A scenario file is a TOML document with the sections and keys below::

    [grid]
    T = 1.0                  # horizon (required, > 0)
    n_steps = 200            # number of uniform steps (required, >= 1)

    [levy]                   # optional; omit for a purely Brownian driver
    marks = [1.0, -0.5]      # distinct jump mark values
    intensities = [2.0, 1.0] # arrival rate per mark, each > 0

    [coefficients]
    phi = "1"                # kernel, expression in (t, s); or phi_table = "phi.csv"
    xi = "0"                 # Brownian drift loading, expression in (s); or xi_table
    beta = "0"               # jump drift loading, expression in (s, z); or beta_table
    bound_C = 1.0            # optional sup-bound for |phi| (default: grid maximum)
    eps = 0.01               # margin in the standing constraint beta >= -1 + eps

    [terminal]               # F(t) = f0(t) + f1(t)*B(T) + f2(t)*J(T)
    f0 = "0"                 # expressions in (t)
    f1 = "0"
    f2 = "0"
    g = "0"                  # jump weight defining J, expression in the mark value (z)

    [mc]
    n_paths = 10000
    seed = 0

    [tol]
    neumann_tol = 1e-10      # truncation tolerance for the resolvent series
    residual_tol = 0.1       # pass threshold for the pathwise residual RMS

Expressions use a small grammar: numeric literals, the section's variables,
the constants ``pi`` and ``e``, the operators ``+ - * / **`` (unary minus
included) and the functions ``exp`` and ``sin``.  Coefficient tables are CSV
files indexed on the scenario grid: ``i,j,value`` rows covering the triangle
i <= j for the kernel, ``i,value`` for xi, ``i,k,value`` (k = mark index) for
beta.

All tabulated arrays are evaluated once at parse time and frozen; a
``Scenario`` is immutable and safe to share across worker threads.
"""

from __future__ import annotations

import ast
import hashlib
import math
import os
from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ScenarioError(ValueError):
    """Raised for malformed scenario documents or bound violations.

    ``violations`` holds the structured bound checks that failed (empty for
    pure schema/expression errors).
    """

    def __init__(self, message: str, violations: list["Violation"] | None = None):
        self.violations = violations or []
        if self.violations:
            detail = "; ".join(str(v) for v in self.violations[:5])
            if len(self.violations) > 5:
                detail += f"; ... ({len(self.violations)} violations total)"
            message = f"{message}: {detail}"
        super().__init__(message)


@dataclass(frozen=True)
class Violation:
    """One failed bound check: which function, at which grid node, and why."""

    field: str
    node: str
    value: float
    constraint: str

    def __str__(self) -> str:
        return f"{self.field} at {self.node}: value {self.value!r} violates {self.constraint}"


# ---------------------------------------------------------------------------
# Expression grammar

_FUNCTIONS: dict[str, Callable] = {"exp": np.exp, "sin": np.sin}
_CONSTANTS: dict[str, float] = {"pi": math.pi, "e": math.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)
_UNARYOPS = (ast.USub, ast.UAdd)


@dataclass(frozen=True)
class Expression:
    """A compiled coefficient expression over a fixed set of variables."""

    source: str
    variables: tuple[str, ...]
    _code: Any

    def __call__(self, **values: Any) -> np.ndarray:
        env = dict(_CONSTANTS)
        env.update(_FUNCTIONS)
        env.update(values)
        return eval(self._code, {"__builtins__": {}}, env)  # noqa: S307 - AST-validated

    def evaluate(self, shape: tuple[int, ...], **values: Any) -> np.ndarray:
        """Evaluate and broadcast to ``shape`` (constants become full arrays).

        Non-finite results are not an error here; bound validation reports
        them with their grid nodes.
        """
        with np.errstate(all="ignore"):
            out = np.asarray(self(**values), dtype=float)
        return np.broadcast_to(out, shape).copy()


def _validate_node(node: ast.AST, variables: tuple[str, ...], source: str) -> None:
    if isinstance(node, ast.Expression):
        _validate_node(node.body, variables, source)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
        _validate_node(node.left, variables, source)
        _validate_node(node.right, variables, source)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, _UNARYOPS):
        _validate_node(node.operand, variables, source)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ScenarioError(f"unknown function in expression {source!r}")
        if len(node.args) != 1 or node.keywords:
            raise ScenarioError(f"functions take one argument in expression {source!r}")
        _validate_node(node.args[0], variables, source)
    elif isinstance(node, ast.Name):
        if node.id not in variables and node.id not in _CONSTANTS:
            raise ScenarioError(
                f"unknown name {node.id!r} in expression {source!r} "
                f"(allowed variables: {', '.join(variables) or 'none'})"
            )
    elif isinstance(node, ast.Constant):
        if not isinstance(node.value, (int, float)):
            raise ScenarioError(f"non-numeric constant in expression {source!r}")
    else:
        raise ScenarioError(f"unsupported syntax in expression {source!r}")


def compile_expression(source: str, variables: tuple[str, ...]) -> Expression:
    """Compile ``source`` against the allowed ``variables``.

    Raises ScenarioError for syntax errors or names/operations outside the
    grammar.
    """
    try:
        tree = ast.parse(source, mode="eval")
    except SyntaxError as exc:
        raise ScenarioError(f"cannot parse expression {source!r}: {exc.msg}") from exc
    _validate_node(tree, variables, source)
    code = compile(tree, "<scenario-expression>", "eval")
    return Expression(source=source, variables=variables, _code=code)


# ---------------------------------------------------------------------------
# Domain types


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=a.dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < t_1 < ... < t_n = T."""

    horizon: float
    n_steps: int
    nodes: np.ndarray

    def __post_init__(self):
        if self.n_steps < 1:
            raise ScenarioError(f"grid.n_steps must be >= 1, got {self.n_steps}")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ScenarioError(f"grid.T must be a positive finite number, got {self.horizon}")
        nodes = self.nodes
        if nodes.shape != (self.n_steps + 1,):
            raise ScenarioError("grid nodes must have n_steps + 1 entries")
        if nodes[0] != 0.0 or nodes[-1] != self.horizon or np.any(np.diff(nodes) <= 0):
            raise ScenarioError("grid nodes must increase strictly from 0 to T")
        if abs(self.dt * self.n_steps - self.horizon) > np.spacing(self.horizon):
            raise ScenarioError("grid spacing is inconsistent with the horizon")
        object.__setattr__(self, "nodes", _freeze(nodes))

    @classmethod
    def uniform(cls, horizon: float, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ScenarioError(f"grid.n_steps must be >= 1, got {n_steps}")
        if not (isinstance(horizon, (int, float)) and horizon > 0 and math.isfinite(horizon)):
            raise ScenarioError(f"grid.T must be a positive finite number, got {horizon!r}")
        return cls(float(horizon), int(n_steps), np.linspace(0.0, float(horizon), int(n_steps) + 1))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1


@dataclass(frozen=True)
class LevyModel:
    """Finite-activity jump model: distinct marks with positive intensities."""

    marks: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float)
        intens = np.asarray(self.intensities, dtype=float)
        if marks.ndim != 1 or intens.ndim != 1 or marks.shape != intens.shape:
            raise ScenarioError("levy.marks and levy.intensities must be lists of equal length")
        if marks.size and len(np.unique(marks)) != marks.size:
            raise ScenarioError("levy.marks must be pairwise distinct")
        if np.any(intens <= 0) or not np.all(np.isfinite(intens)) or not np.all(np.isfinite(marks)):
            raise ScenarioError("levy.intensities must be finite and strictly positive")
        object.__setattr__(self, "marks", _freeze(marks))
        object.__setattr__(self, "intensities", _freeze(intens))

    @property
    def n_marks(self) -> int:
        return self.marks.size

    @property
    def total_rate(self) -> float:
        return float(self.intensities.sum())

    @classmethod
    def empty(cls) -> "LevyModel":
        return cls(np.empty(0), np.empty(0))


@dataclass(frozen=True)
class CoefficientSet:
    """Kernel phi(t,s), drift loadings xi(s) and beta(s, mark), with bounds.

    ``*_source`` is either ("expr", text) or ("table", path); the tabulated
    arrays are the single source of truth for numerics after parsing.
    """

    phi_source: tuple[str, str]
    xi_source: tuple[str, str]
    beta_source: tuple[str, str]
    phi_values: np.ndarray   # (n+1, n+1), lower triangle zeroed
    xi_values: np.ndarray    # (n+1,)
    beta_values: np.ndarray  # (n+1, n_marks)
    bound_C: float
    eps: float

    def __post_init__(self):
        for name in ("phi_values", "xi_values", "beta_values"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        if not (self.eps > 0):
            raise ScenarioError(f"coefficients.eps must be > 0, got {self.eps}")
        if not (math.isfinite(self.bound_C) and self.bound_C >= 0):
            raise ScenarioError(f"coefficients.bound_C must be finite and >= 0, got {self.bound_C}")


@dataclass(frozen=True)
class TerminalFunctional:
    """F(t) = f0(t) + f1(t) B(T) + f2(t) J(T), J the compensated g-jump total."""

    f0_source: tuple[str, str]
    f1_source: tuple[str, str]
    f2_source: tuple[str, str]
    g_source: tuple[str, str]
    f0: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    g: np.ndarray  # (n_marks,)

    def __post_init__(self):
        for name in ("f0", "f1", "f2", "g"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def is_deterministic(self) -> bool:
        return not (np.any(self.f1 != 0.0) or np.any(self.f2 != 0.0))


@dataclass(frozen=True)
class MonteCarloParams:
    n_paths: int
    seed: int

    def __post_init__(self):
        if self.n_paths < 1:
            raise ScenarioError(f"mc.n_paths must be >= 1, got {self.n_paths}")


@dataclass(frozen=True)
class Tolerances:
    neumann_tol: float = 1e-10
    residual_tol: float = 0.1

    def __post_init__(self):
        if not (self.neumann_tol > 0 and self.residual_tol > 0):
            raise ScenarioError("tol.neumann_tol and tol.residual_tol must be > 0")


@dataclass(frozen=True)
class Scenario:
    """A fully tabulated, validated problem instance."""

    grid: TimeGrid
    levy: LevyModel
    coeffs: CoefficientSet
    terminal: TerminalFunctional
    mc: MonteCarloParams
    tol: Tolerances


# ---------------------------------------------------------------------------
# Parsing

_SCHEMA: dict[str, set[str]] = {
    "grid": {"T", "n_steps"},
    "levy": {"marks", "intensities"},
    "coefficients": {"phi", "phi_table", "xi", "xi_table", "beta", "beta_table", "bound_C", "eps"},
    "terminal": {"f0", "f1", "f2", "g"},
    "mc": {"n_paths", "seed"},
    "tol": {"neumann_tol", "residual_tol"},
}


def _check_schema(doc: dict) -> None:
    for section, body in doc.items():
        if section not in _SCHEMA:
            raise ScenarioError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ScenarioError(f"[{section}] must be a table of keys")
        for key in body:
            if key not in _SCHEMA[section]:
                raise ScenarioError(f"unknown key {key!r} in section [{section}]")


def _get_number(doc: dict, section: str, key: str, default=None, required=False) -> float:
    body = doc.get(section, {})
    if key not in body:
        if required:
            raise ScenarioError(f"missing required key {key!r} in section [{section}]")
        return default
    value = body[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"[{section}].{key} must be a number, got {value!r}")
    return value


def _get_source(doc: dict, section: str, key: str, default_expr: str, base_dir: str) -> tuple[str, str]:
    """Resolve an expression-or-table pair to ("expr", text) / ("table", abspath)."""
    body = doc.get(section, {})
    expr = body.get(key)
    table = body.get(f"{key}_table")
    if expr is not None and table is not None:
        raise ScenarioError(f"[{section}] sets both {key!r} and '{key}_table'; pick one")
    if table is not None:
        if not isinstance(table, str):
            raise ScenarioError(f"[{section}].{key}_table must be a file path string")
        return ("table", os.path.abspath(os.path.join(base_dir, table)))
    if expr is None:
        return ("expr", default_expr)
    if not isinstance(expr, str):
        raise ScenarioError(f"[{section}].{key} must be an expression string, got {expr!r}")
    return ("expr", expr)


def _load_table(path: str, index_cols: int, what: str) -> np.ndarray:
    try:
        raw = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except OSError as exc:
        raise ScenarioError(f"cannot read {what} table {path!r}: {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"malformed {what} table {path!r}: {exc}") from exc
    if raw.shape[1] != index_cols + 1:
        raise ScenarioError(
            f"{what} table {path!r} must have {index_cols + 1} columns, got {raw.shape[1]}"
        )
    return raw


def _tabulate_kernel(source: tuple[str, str], grid: TimeGrid) -> np.ndarray:
    n = grid.n_nodes
    if source[0] == "expr":
        expr = compile_expression(source[1], ("t", "s"))
        values = expr.evaluate((n, n), t=grid.nodes[:, None], s=grid.nodes[None, :])
    else:
        raw = _load_table(source[1], 2, "kernel")
        values = np.zeros((n, n))
        seen = np.zeros((n, n), dtype=bool)
        for i_f, j_f, v in raw:
            i, j = int(i_f), int(j_f)
            if not (0 <= i <= j < n):
                raise ScenarioError(f"kernel table row ({i}, {j}) outside the triangle 0 <= i <= j <= {n - 1}")
            values[i, j] = v
            seen[i, j] = True
        if not np.all(seen[np.triu_indices(n)]):
            raise ScenarioError(f"kernel table {source[1]!r} does not cover the full triangle")
    return np.triu(values)


def _tabulate_nodes(source: tuple[str, str], grid: TimeGrid, var: str, what: str) -> np.ndarray:
    n = grid.n_nodes
    if source[0] == "expr":
        expr = compile_expression(source[1], (var,))
        return expr.evaluate((n,), **{var: grid.nodes})
    raw = _load_table(source[1], 1, what)
    values = np.full(n, np.nan)
    for i_f, v in raw:
        i = int(i_f)
        if not 0 <= i < n:
            raise ScenarioError(f"{what} table row index {i} outside the grid")
        values[i] = v
    if np.any(np.isnan(values)):
        raise ScenarioError(f"{what} table {source[1]!r} does not cover every grid node")
    return values


def _tabulate_beta(source: tuple[str, str], grid: TimeGrid, levy: LevyModel) -> np.ndarray:
    n, m = grid.n_nodes, levy.n_marks
    if source[0] == "expr":
        expr = compile_expression(source[1], ("s", "z"))
        if m == 0:
            return np.zeros((n, 0))
        return expr.evaluate((n, m), s=grid.nodes[:, None], z=levy.marks[None, :])
    raw = _load_table(source[1], 2, "beta")
    values = np.full((n, m), np.nan)
    for i_f, k_f, v in raw:
        i, k = int(i_f), int(k_f)
        if not (0 <= i < n and 0 <= k < m):
            raise ScenarioError(f"beta table row ({i}, {k}) outside the grid/mark range")
        values[i, k] = v
    if np.any(np.isnan(values)):
        raise ScenarioError(f"beta table {source[1]!r} does not cover every (node, mark) pair")
    return values


def _tabulate_marks(source: tuple[str, str], levy: LevyModel) -> np.ndarray:
    if source[0] != "expr":
        raise ScenarioError("terminal.g must be an expression (tables are not supported here)")
    expr = compile_expression(source[1], ("z",))
    if levy.n_marks == 0:
        return np.zeros(0)
    return expr.evaluate((levy.n_marks,), z=levy.marks)


def parse_scenario(text: str, base_dir: str = ".") -> Scenario:
    """Parse and fully validate a scenario document.

    Raises ScenarioError naming the offending key, expression, or grid node;
    bound violations are attached as ``exc.violations``.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc
    _check_schema(doc)
    if "grid" not in doc:
        raise ScenarioError("missing required section [grid]")

    grid = TimeGrid.uniform(
        _get_number(doc, "grid", "T", required=True),
        _as_int(_get_number(doc, "grid", "n_steps", required=True), "grid.n_steps"),
    )

    levy_body = doc.get("levy", {})
    marks = levy_body.get("marks", [])
    intensities = levy_body.get("intensities", [])
    if not isinstance(marks, list) or not isinstance(intensities, list):
        raise ScenarioError("levy.marks and levy.intensities must be lists")
    levy = LevyModel(np.asarray(marks, dtype=float), np.asarray(intensities, dtype=float))

    phi_source = _get_source(doc, "coefficients", "phi", "0", base_dir)
    xi_source = _get_source(doc, "coefficients", "xi", "0", base_dir)
    beta_source = _get_source(doc, "coefficients", "beta", "0", base_dir)
    phi_values = _tabulate_kernel(phi_source, grid)
    xi_values = _tabulate_nodes(xi_source, grid, "s", "xi")
    beta_values = _tabulate_beta(beta_source, grid, levy)
    finite_phi = phi_values[np.isfinite(phi_values)]
    bound_default = float(np.max(np.abs(finite_phi))) if finite_phi.size else 0.0
    coeffs = CoefficientSet(
        phi_source=phi_source,
        xi_source=xi_source,
        beta_source=beta_source,
        phi_values=phi_values,
        xi_values=xi_values,
        beta_values=beta_values,
        bound_C=float(_get_number(doc, "coefficients", "bound_C", default=bound_default)),
        eps=float(_get_number(doc, "coefficients", "eps", default=0.01)),
    )

    f0_source = _get_source(doc, "terminal", "f0", "0", base_dir)
    f1_source = _get_source(doc, "terminal", "f1", "0", base_dir)
    f2_source = _get_source(doc, "terminal", "f2", "0", base_dir)
    g_source = _get_source(doc, "terminal", "g", "0", base_dir)
    for name, src in (("f0", f0_source), ("f1", f1_source), ("f2", f2_source)):
        if src[0] == "table":
            raise ScenarioError(f"terminal.{name} must be an expression (tables are not supported here)")
    terminal = TerminalFunctional(
        f0_source=f0_source,
        f1_source=f1_source,
        f2_source=f2_source,
        g_source=g_source,
        f0=_tabulate_nodes(f0_source, grid, "t", "f0"),
        f1=_tabulate_nodes(f1_source, grid, "t", "f1"),
        f2=_tabulate_nodes(f2_source, grid, "t", "f2"),
        g=_tabulate_marks(g_source, levy),
    )

    mc = MonteCarloParams(
        n_paths=_as_int(_get_number(doc, "mc", "n_paths", default=10_000), "mc.n_paths"),
        seed=_as_int(_get_number(doc, "mc", "seed", default=0), "mc.seed"),
    )
    tol = Tolerances(
        neumann_tol=float(_get_number(doc, "tol", "neumann_tol", default=1e-10)),
        residual_tol=float(_get_number(doc, "tol", "residual_tol", default=0.1)),
    )

    scenario = Scenario(grid=grid, levy=levy, coeffs=coeffs, terminal=terminal, mc=mc, tol=tol)
    violations = validate_bounds(scenario)
    if violations:
        raise ScenarioError("scenario violates coefficient bounds", violations)
    return scenario


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or int(value) != value:
        raise ScenarioError(f"{name} must be an integer, got {value!r}")
    return int(value)


def load_scenario(path: str) -> Scenario:
    """Read and parse a scenario file; table paths resolve next to the file."""
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    return parse_scenario(text, base_dir=os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------------------
# Bound checks (violations are data, not exceptions)


def validate_bounds(s: Scenario) -> list[Violation]:
    """Evaluate every standing assumption on the grid.

    Returns an empty list iff |phi| <= bound_C, beta >= -1 + eps, and all
    tabulated functions are finite; each violation names the function, the
    node, and the offending value.
    """
    out: list[Violation] = []
    nodes = s.grid.nodes
    iu, ju = np.triu_indices(s.grid.n_nodes)
    phi_tri = s.coeffs.phi_values[iu, ju]

    bad = ~np.isfinite(phi_tri)
    for idx in np.flatnonzero(bad):
        out.append(Violation("coefficients.phi", _node2(nodes, iu[idx], ju[idx]),
                             float(phi_tri[idx]), "finiteness"))
    bad = np.isfinite(phi_tri) & (np.abs(phi_tri) > s.coeffs.bound_C)
    for idx in np.flatnonzero(bad):
        out.append(Violation("coefficients.phi", _node2(nodes, iu[idx], ju[idx]),
                             float(phi_tri[idx]), f"|phi| <= bound_C = {s.coeffs.bound_C}"))

    out.extend(_check_nodes_finite(s.coeffs.xi_values, "coefficients.xi", nodes))
    floor = -1.0 + s.coeffs.eps
    for i, k in zip(*np.nonzero(~(s.coeffs.beta_values >= floor) | ~np.isfinite(s.coeffs.beta_values))):
        out.append(Violation("coefficients.beta", f"(s_{i}, mark_{k}) = ({nodes[i]:g}, {s.levy.marks[k]:g})",
                             float(s.coeffs.beta_values[i, k]), f"beta >= -1 + eps = {floor}"))

    for name in ("f0", "f1", "f2"):
        out.extend(_check_nodes_finite(getattr(s.terminal, name), f"terminal.{name}", nodes))
    for k in np.flatnonzero(~np.isfinite(s.terminal.g)):
        out.append(Violation("terminal.g", f"mark_{k} = {s.levy.marks[k]:g}",
                             float(s.terminal.g[k]), "finiteness"))
    return out


def _node2(nodes: np.ndarray, i: int, j: int) -> str:
    return f"(t_{i}, s_{j}) = ({nodes[i]:g}, {nodes[j]:g})"


def _check_nodes_finite(values: np.ndarray, field: str, nodes: np.ndarray) -> list[Violation]:
    return [
        Violation(field, f"t_{i} = {nodes[i]:g}", float(values[i]), "finiteness")
        for i in np.flatnonzero(~np.isfinite(values))
    ]


# ---------------------------------------------------------------------------
# Rendering, hashing, re-gridding


def _toml_value(value) -> str:
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot render {value!r}")


def _source_line(key: str, source: tuple[str, str]) -> str:
    kind, payload = source
    suffix = "_table" if kind == "table" else ""
    return f"{key}{suffix} = {_toml_value(payload)}"


def render_scenario(s: Scenario) -> str:
    """Serialize a Scenario back to canonical TOML.

    ``parse_scenario(render_scenario(s))`` reproduces every tabulated value
    bit-exactly: floats are emitted with shortest round-trip precision and
    expressions/table paths verbatim.
    """
    lines = [
        "[grid]",
        f"T = {_toml_value(s.grid.horizon)}",
        f"n_steps = {s.grid.n_steps}",
        "",
        "[levy]",
        f"marks = {_toml_value(s.levy.marks)}",
        f"intensities = {_toml_value(s.levy.intensities)}",
        "",
        "[coefficients]",
        _source_line("phi", s.coeffs.phi_source),
        _source_line("xi", s.coeffs.xi_source),
        _source_line("beta", s.coeffs.beta_source),
        f"bound_C = {_toml_value(s.coeffs.bound_C)}",
        f"eps = {_toml_value(s.coeffs.eps)}",
        "",
        "[terminal]",
        _source_line("f0", s.terminal.f0_source),
        _source_line("f1", s.terminal.f1_source),
        _source_line("f2", s.terminal.f2_source),
        _source_line("g", s.terminal.g_source),
        "",
        "[mc]",
        f"n_paths = {s.mc.n_paths}",
        f"seed = {s.mc.seed}",
        "",
        "[tol]",
        f"neumann_tol = {_toml_value(s.tol.neumann_tol)}",
        f"residual_tol = {_toml_value(s.tol.residual_tol)}",
        "",
    ]
    return "\n".join(lines)


def scenario_hash(s: Scenario) -> str:
    """SHA-256 of the canonical rendering; stable across runs and platforms."""
    return hashlib.sha256(render_scenario(s).encode("utf-8")).hexdigest()


def rebuild(
    s: Scenario,
    *,
    n_steps: int | None = None,
    n_paths: int | None = None,
    seed: int | None = None,
    neumann_tol: float | None = None,
    residual_tol: float | None = None,
) -> Scenario:
    """Return a copy with selected parameters replaced.

    Changing ``n_steps`` re-tabulates every expression on the new grid;
    table-backed coefficients cannot be re-gridded.
    """
    if n_steps is not None and n_steps != s.grid.n_steps:
        sources = (s.coeffs.phi_source, s.coeffs.xi_source, s.coeffs.beta_source)
        if any(kind == "table" for kind, _ in sources):
            raise ScenarioError("cannot change n_steps: tabulated coefficients are grid-specific")
        grid = TimeGrid.uniform(s.grid.horizon, n_steps)
        coeffs = CoefficientSet(
            phi_source=s.coeffs.phi_source,
            xi_source=s.coeffs.xi_source,
            beta_source=s.coeffs.beta_source,
            phi_values=_tabulate_kernel(s.coeffs.phi_source, grid),
            xi_values=_tabulate_nodes(s.coeffs.xi_source, grid, "s", "xi"),
            beta_values=_tabulate_beta(s.coeffs.beta_source, grid, s.levy),
            bound_C=s.coeffs.bound_C,
            eps=s.coeffs.eps,
        )
        terminal = TerminalFunctional(
            f0_source=s.terminal.f0_source,
            f1_source=s.terminal.f1_source,
            f2_source=s.terminal.f2_source,
            g_source=s.terminal.g_source,
            f0=_tabulate_nodes(s.terminal.f0_source, grid, "t", "f0"),
            f1=_tabulate_nodes(s.terminal.f1_source, grid, "t", "f1"),
            f2=_tabulate_nodes(s.terminal.f2_source, grid, "t", "f2"),
            g=s.terminal.g,
        )
        s = replace(s, grid=grid, coeffs=coeffs, terminal=terminal)
    if n_paths is not None or seed is not None:
        s = replace(s, mc=MonteCarloParams(
            n_paths=n_paths if n_paths is not None else s.mc.n_paths,
            seed=seed if seed is not None else s.mc.seed,
        ))
    if neumann_tol is not None or residual_tol is not None:
        s = replace(s, tol=Tolerances(
            neumann_tol=neumann_tol if neumann_tol is not None else s.tol.neumann_tol,
            residual_tol=residual_tol if residual_tol is not None else s.tol.residual_tol,
        ))
    violations = validate_bounds(s)
    if violations:
        raise ScenarioError("rebuilt scenario violates coefficient bounds", violations)
    return s
