"""Time-course simulation: fixed-step RK4 with substep refinement, exact
output derivatives along a trajectory, the closed-form three-compartment
benchmark solution, and seeded noise injection."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import sympy

from .invariant import ModelSpec

NOISE_MODES = ("relative", "additive-uniform", "additive-gaussian")


class SimulationError(Exception):
    pass


@dataclass
class TimeSeries:
    """Sampled output and (exact, closed-form) input values on a time grid.

    `y_derivs` optionally carries exact output derivatives (order -> array)
    for pipelines that bypass GP estimation. `inputs` maps uJ -> {order:
    array} with orders 0..2 always populated for declared inputs.
    """

    t: np.ndarray
    y: np.ndarray
    inputs: dict = field(default_factory=dict)
    y_derivs: dict = field(default_factory=dict)
    noise: dict = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.t.ndim != 1 or self.t.shape != self.y.shape:
            raise ValueError("t and y must be aligned 1-d arrays")
        if len(self.t) and np.any(np.diff(self.t) <= 0):
            raise ValueError("times must be strictly increasing")
        for arr in self._all_arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("time series contains NaN or Inf")

    def _all_arrays(self):
        yield self.y
        for d in self.inputs.values():
            yield from d.values()
        yield from self.y_derivs.values()

    @property
    def n(self):
        return len(self.t)


def _compile_rhs(model: ModelSpec):
    missing = [p for p in model.params if p not in model.param_values]
    if missing:
        raise SimulationError(f"cannot simulate: parameters without values: {missing}")
    subs = {sympy.Symbol(p): v for p, v in model.param_values.items()}
    state_syms = model.state_symbols()
    exprs = []
    for s in model.states:
        e = model.odes[s].subs(subs)
        for u, uexpr in model.inputs.items():
            e = e.subs(sympy.Symbol(u), uexpr.subs(subs))
        exprs.append(e)
    f = sympy.lambdify((state_syms, model.t), exprs, modules="numpy")
    g = sympy.lambdify((state_syms, model.t), model.output.subs(subs), modules="numpy")
    return f, g


def _rk4_span(f, x, t0, t1, nsub):
    h = (t1 - t0) / nsub
    t = t0
    for _ in range(nsub):
        k1 = np.asarray(f(x, t), dtype=float)
        k2 = np.asarray(f(x + 0.5 * h * k1, t + 0.5 * h), dtype=float)
        k3 = np.asarray(f(x + 0.5 * h * k2, t + 0.5 * h), dtype=float)
        k4 = np.asarray(f(x + h * k3, t + h), dtype=float)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        if np.any(np.abs(x) > 1e12) or not np.all(np.isfinite(x)):
            raise SimulationError(f"trajectory blow-up near t = {t:.6g}")
    return x


def integrate_states(
    model: ModelSpec, grid, rel_tol: float = 1e-8, max_substeps: int = 1 << 16
):
    """States at the grid times by classical RK4, refining internal substeps
    until halving them changes every sample by less than rel_tol relative."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise SimulationError("empty time grid")
    f, _ = _compile_rhs(model)
    x0 = np.array([model.x0[s] for s in model.states], dtype=float)

    def run(nsub):
        xs = np.empty((len(grid), len(x0)))
        x = x0.copy()
        tprev = grid[0]
        if grid[0] != 0.0:
            x = _rk4_span(f, x, 0.0, grid[0], max(nsub, 1))
        xs[0] = x
        for i in range(1, len(grid)):
            x = _rk4_span(f, x, tprev, grid[i], nsub)
            tprev = grid[i]
            xs[i] = x
        return xs

    nsub = 4
    prev = run(nsub)
    while True:
        nsub *= 2
        if nsub > max_substeps:
            raise SimulationError("RK4 refinement did not converge")
        cur = run(nsub)
        scale = np.maximum(np.abs(cur), 1.0)
        if np.max(np.abs(cur - prev) / scale) < rel_tol:
            return cur
        prev = cur


def _input_tables(model: ModelSpec, grid, max_order: int = 2):
    subs = {sympy.Symbol(p): v for p, v in model.param_values.items()}
    out = {}
    for u, expr in model.inputs.items():
        expr = expr.subs(subs)
        per = {}
        for k in range(max_order + 1):
            fn = sympy.lambdify(model.t, sympy.diff(expr, model.t, k), modules="numpy")
            per[k] = np.broadcast_to(np.asarray(fn(grid), dtype=float), grid.shape).copy()
        out[u] = per
    return out


def integrate_model(model: ModelSpec, grid, rel_tol: float = 1e-8) -> TimeSeries:
    """Simulate the model and sample output plus exact input derivatives."""
    grid = np.asarray(grid, dtype=float)
    xs = integrate_states(model, grid, rel_tol=rel_tol)
    _, g = _compile_rhs(model)
    y = np.array([g(x, t) for x, t in zip(xs, grid)], dtype=float)
    return TimeSeries(t=grid, y=y, inputs=_input_tables(model, grid))


def output_derivative_exprs(model: ModelSpec, max_order: int = 3):
    """Symbolic Lie derivatives of the output along the vector field, with
    closed-form inputs substituted so time appears explicitly."""
    subs = {sympy.Symbol(p): v for p, v in model.param_values.items()}
    state_syms = model.state_symbols()
    f = []
    for s in model.states:
        e = model.odes[s].subs(subs)
        for u, uexpr in model.inputs.items():
            e = e.subs(sympy.Symbol(u), uexpr.subs(subs))
        f.append(e)
    exprs = [model.output.subs(subs)]
    for _ in range(max_order):
        prev = exprs[-1]
        nxt = sum(sympy.diff(prev, xs) * fi for xs, fi in zip(state_syms, f))
        nxt = nxt + sympy.diff(prev, model.t)
        exprs.append(sympy.simplify(nxt) if len(model.states) <= 3 else nxt)
    return exprs


def exact_output_derivatives(
    model: ModelSpec, grid, max_order: int = 3, rel_tol: float = 1e-8, states=None
):
    """Exact y, y', ... along the trajectory (orders 0..max_order)."""
    grid = np.asarray(grid, dtype=float)
    if states is None:
        states = integrate_states(model, grid, rel_tol=rel_tol)
    exprs = output_derivative_exprs(model, max_order)
    out = {}
    state_syms = model.state_symbols()
    for k, e in enumerate(exprs):
        fn = sympy.lambdify((state_syms, model.t), e, modules="numpy")
        out[k] = np.array([fn(x, t) for x, t in zip(states, grid)], dtype=float)
    return out


def closed_form_example31(t):
    """Closed-form benchmark solution of the driven three-compartment chain:
    output, its first three derivatives, and the input with two derivatives."""
    t = np.asarray(t, dtype=float)
    cs = [(7.0, 1.0), (-1.0, 2.0), (1.0, 4.0), (-1.0, 3.0), (-5.0, 5.0)]

    def deriv(order):
        return sum(a * (-r) ** order * np.exp(-r * t) for a, r in cs)

    u = [
        2.0 * (-3.0) ** k * np.exp(-3.0 * t) + 12.0 * (-5.0) ** k * np.exp(-5.0 * t)
        for k in range(3)
    ]
    return deriv(0), deriv(1), deriv(2), deriv(3), u[0], u[1], u[2]


def example31_timeseries(t) -> TimeSeries:
    y, dy, d2y, d3y, u, du, d2u = closed_form_example31(t)
    return TimeSeries(
        t=np.asarray(t, dtype=float),
        y=y,
        inputs={"u1": {0: u, 1: du, 2: d2u}},
        y_derivs={1: dy, 2: d2y, 3: d3y},
    )


def add_noise(ts: TimeSeries, mode: str, eps: float, seed: int) -> TimeSeries:
    """Perturb the output samples only; times and inputs are known exactly."""
    if eps < 0:
        raise ValueError("noise level must be non-negative")
    if mode not in NOISE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}; choose from {NOISE_MODES}")
    rng = np.random.default_rng(seed)
    y = ts.y.copy()
    if eps > 0:
        if mode == "relative":
            y = y * (1.0 + eps * rng.standard_normal(len(y)))
        elif mode == "additive-uniform":
            y = y + eps * rng.uniform(0.0, 1.0, len(y))
        else:
            y = y + eps * rng.standard_normal(len(y))
    return replace(
        ts,
        y=y,
        y_derivs={},
        noise={"mode": mode, "eps": float(eps), "seed": int(seed)},
    )


# ---------------------------------------------------------------------------
# CSV interchange

_Y_COLS = {0: "y", 1: "d1y", 2: "d2y", 3: "d3y"}


def write_csv(ts: TimeSeries, path):
    cols = [("t", ts.t), ("y", ts.y)]
    for k in sorted(ts.y_derivs):
        cols.append((_Y_COLS[k], ts.y_derivs[k]))
    for u in sorted(ts.inputs):
        per = ts.inputs[u]
        names = {0: u, 1: f"d{u}", 2: f"d2{u}"}
        for k in sorted(per):
            cols.append((names[k], per[k]))
    header = ",".join(name for name, _ in cols)
    data = np.column_stack([arr for _, arr in cols])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path) -> TimeSeries:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty CSV")
        names = [h.strip() for h in header.split(",")]
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    cols = {name: data[:, i] for i, name in enumerate(names)}
    if "t" not in cols or "y" not in cols:
        raise ValueError(f"{path}: CSV must have at least columns t,y")
    y_derivs = {}
    inputs = {}
    import re

    for name, arr in cols.items():
        m = re.fullmatch(r"d(\d)y", name)
        if m:
            y_derivs[int(m.group(1))] = arr
            continue
        m = re.fullmatch(r"(?:d(\d?))?(u\d+)", name)
        if m and name not in ("t", "y"):
            order = int(m.group(1)) if m.group(1) else (1 if name.startswith("d") else 0)
            inputs.setdefault(m.group(2), {})[order] = arr
    return TimeSeries(t=cols["t"], y=cols["y"], inputs=inputs, y_derivs=y_derivs)
