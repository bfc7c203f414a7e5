"""Command-line entry points: simulate, eliminate, GP-estimate, reject, and
the full rejection-matrix experiment."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import gpr, simulate, solvability
from .diffpoly import DiffAlgebraError
from .dsl import ParseError
from .invariant import (
    InvariantSpec,
    eliminate,
    identifiability_count,
    parse_invariant,
    parse_model,
    render_invariant,
)

EXIT_COMPATIBLE = 0
EXIT_REJECT = 2
EXIT_GATED = 3
EXIT_USAGE = 64

BUILTIN_MODELS = ("lv2", "lv3", "lorenz", "lc2", "lc3", "comp2_input", "comp3_input")
DEFAULT_HORIZONS = {
    "lv2": 10.0,
    "lv3": 10.0,
    "lorenz": 10.0,
    "lc2": 5.0,
    "lc3": 5.0,
    "comp2_input": 1.0,
    "comp3_input": 1.0,
}
# GP derivative estimates degrade near the ends of the window; this many
# points are dropped from each end before building the linear system.
EDGE_TRIM = 5
# Matrix-experiment degeneracy threshold: a GP-estimated cell whose
# equilibrated coefficient matrix has condition number above this is scored
# as rejected — the invariant fits the data only with unidentifiable
# coefficients, so the compatibility verdict of the tau test is vacuous
# (a rank-deficient A caps tau regardless of how badly b violates the span).
DEGENERATE_COND = 2.0


class UsageError(Exception):
    pass


def builtin_model_text(name: str) -> str:
    return (resources.files("invreject") / "models" / f"{name}.model").read_text()


def load_model(path_or_name: str):
    p = Path(path_or_name)
    if p.exists():
        return parse_model(p.read_text(), name=p.stem)
    if path_or_name in BUILTIN_MODELS:
        return parse_model(builtin_model_text(path_or_name), name=path_or_name)
    raise UsageError(f"model {path_or_name!r}: no such file or built-in model")


def relative_noise_level(mode: str, level: float, y) -> float:
    """Convert a declared noise level to the relative-noise epsilon used by
    the C-matrix model: additive levels are divided by the output RMS."""
    if mode == "relative" or level == 0.0:
        return level
    rms = float(np.sqrt(np.mean(np.square(y))))
    return level / rms if rms > 0 else level


# ---------------------------------------------------------------------------
# Pipeline pieces shared by `reject` and `matrix`


def estimate_derivatives(data: simulate.TimeSeries, max_order: int = 3):
    """GP-fit the output and return (posterior, gate result)."""
    h = gpr.fit_hyperparameters(data)
    post = gpr.posterior_derivatives(data, h, data.t, max_order)
    gate = gpr.quality_gate(post, data)
    return post, gate


def gated_rows(data: simulate.TimeSeries, gate, trim: int = EDGE_TRIM):
    keep = np.ones(data.n, dtype=bool)
    if trim > 0 and data.n > 2 * trim:
        keep[:trim] = False
        keep[-trim:] = False
    keep[list(gate.excluded_points)] = False
    return data.t[keep]


def test_invariant(
    spec: InvariantSpec,
    est: simulate.TimeSeries,
    rows,
    eps: float,
    alpha: float = 0.05,
) -> solvability.SolvabilityReport:
    system = solvability.build_system(spec, est, rows=rows, eps=eps)
    return solvability.decide(system, alpha=alpha)


# ---------------------------------------------------------------------------
# Rejection matrix


@dataclass
class RunConfig:
    models: list  # generating model names/paths
    invariants: list = None  # defaults to eliminating the same models
    points: int = 100
    horizon: float = None  # None -> per-model default
    noise_mode: str = "additive-gaussian"
    levels: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    seed: int = 0
    alpha: float = 0.05
    jobs: int = 1
    exact: bool = False  # use exact derivatives instead of GP estimates


def _cell_seed(base: int, mi: int, li: int) -> int:
    return int(np.random.SeedSequence([base, mi, li]).generate_state(1)[0])


def _matrix_cell(args):
    (gen_name, gen_text, mi, level, li, inv_items, cfg_dict) = args
    cfg = RunConfig(**cfg_dict)
    model = parse_model(gen_text, name=gen_name)
    horizon = cfg.horizon or DEFAULT_HORIZONS.get(gen_name, 10.0)
    grid = np.linspace(0.0, horizon, cfg.points)
    cells = []
    try:
        clean = simulate.integrate_model(model, grid)
        if cfg.exact or level == 0.0:
            derivs = simulate.exact_output_derivatives(model, grid, max_order=3)
            noisy = simulate.add_noise(clean, cfg.noise_mode, level, _cell_seed(cfg.seed, mi, li))
            est = simulate.TimeSeries(
                t=grid, y=noisy.y if level > 0 else clean.y, inputs=clean.inputs,
                y_derivs={k: v for k, v in derivs.items() if k > 0},
            )
            if level == 0.0:
                est = simulate.TimeSeries(
                    t=grid, y=derivs[0], inputs=clean.inputs,
                    y_derivs={k: v for k, v in derivs.items() if k > 0},
                )
            rows = grid
            gate_reasons = []
        else:
            noisy = simulate.add_noise(clean, cfg.noise_mode, level, _cell_seed(cfg.seed, mi, li))
            post, gate = estimate_derivatives(noisy)
            if not gate.passed:
                for inv_name, _ in inv_items:
                    cells.append({
                        "model": gen_name, "invariant": inv_name, "level": level,
                        "entry": "gated", "gate_reasons": list(gate.reasons),
                    })
                return cells
            est = gpr.posterior_to_timeseries(post, noisy)
            rows = gated_rows(est, gate)
            gate_reasons = []
        eps = relative_noise_level(cfg.noise_mode, level, est.y)
        gp_estimated = not (cfg.exact or level == 0.0)
        for inv_name, inv_text in inv_items:
            spec = parse_invariant(inv_text, name=inv_name)
            try:
                system = solvability.build_system(spec, est, rows=rows, eps=eps)
                rep = solvability.decide(system, alpha=cfg.alpha)
                cond = solvability.coefficient_conditioning(system)
                if gp_estimated:
                    # With GP-estimated derivatives the tau test loses its
                    # meaning in both directions (flexible invariants absorb
                    # estimation error, rigid ones amplify it), so cells are
                    # scored by coefficient degeneracy instead.
                    entry = 0 if cond > DEGENERATE_COND else 1
                else:
                    entry = 0 if rep.verdict == "reject" else 1
                report = rep.to_dict()
                report["conditioning"] = cond
                cells.append({
                    "model": gen_name, "invariant": inv_name, "level": level,
                    "entry": entry, "report": report,
                    "gate_reasons": gate_reasons,
                })
            except Exception as exc:  # record in-cell, keep going
                cells.append({
                    "model": gen_name, "invariant": inv_name, "level": level,
                    "entry": "error", "error": str(exc),
                })
    except Exception as exc:
        for inv_name, _ in inv_items:
            cells.append({
                "model": gen_name, "invariant": inv_name, "level": level,
                "entry": "error", "error": str(exc),
            })
    return cells


def rejection_matrix(cfg: RunConfig):
    """Cross-product experiment: every generating model's data against every
    invariant at every noise level. Returns the cell list, deterministically
    ordered by (model, invariant, level)."""
    gens = []
    for name in cfg.models:
        p = Path(name)
        if p.exists():
            gens.append((p.stem, p.read_text()))
        elif name in BUILTIN_MODELS:
            gens.append((name, builtin_model_text(name)))
        else:
            raise UsageError(f"model {name!r}: no such file or built-in model")
    if len(gens) < 2:
        raise UsageError("rejection matrix needs at least 2 models")

    if cfg.invariants:
        inv_items = []
        for path in cfg.invariants:
            p = Path(path)
            inv_items.append((p.stem, p.read_text()))
    else:
        inv_items = []
        for name, text in gens:
            spec, _ = eliminate(parse_model(text, name=name))
            inv_items.append((name, render_invariant(spec)))

    cfg_dict = dict(cfg.__dict__)
    tasks = [
        (name, text, mi, level, li, inv_items, cfg_dict)
        for mi, (name, text) in enumerate(gens)
        for li, level in enumerate(cfg.levels)
    ]
    jobs = int(os.environ.get("INVREJECT_JOBS", cfg.jobs))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_matrix_cell, tasks))
    else:
        results = [_matrix_cell(t) for t in tasks]
    cells = [c for group in results for c in group]
    cells.sort(key=lambda c: (c["model"], c["invariant"], float(c["level"])))
    return cells


def matrix_svg(cells, models, invariants, levels) -> str:
    """Heatmap: one panel per generating model, noise levels on the y axis,
    invariants on the x axis."""
    cw, ch = 46, 24
    left, top, title_h = 70, 28, 18
    panel_w = left + cw * len(invariants) + 12
    panel_h = top + ch * len(levels) + title_h
    width = panel_w * len(models)
    height = panel_h + 10
    colors = {1: "#4caf50", 0: "#e05252", "gated": "#9e9e9e", "error": "#333333"}
    lookup = {(c["model"], c["invariant"], float(c["level"])): c for c in cells}
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="11">'
    ]
    for pi, gen in enumerate(models):
        x0 = pi * panel_w
        out.append(f'<text x="{x0 + left}" y="14" font-weight="bold">data: {gen}</text>')
        for ci, inv in enumerate(invariants):
            out.append(
                f'<text x="{x0 + left + ci * cw + cw / 2}" y="{top - 4}" '
                f'text-anchor="middle">{inv}</text>'
            )
        for ri, level in enumerate(levels):
            out.append(
                f'<text x="{x0 + left - 6}" y="{top + ri * ch + ch / 2 + 4}" '
                f'text-anchor="end">eps={level:g}</text>'
            )
            for ci, inv in enumerate(invariants):
                cell = lookup.get((gen, inv, float(level)))
                entry = cell["entry"] if cell else "error"
                color = colors.get(entry, "#333333")
                tip = ""
                if cell and isinstance(cell.get("report"), dict):
                    tip = f"p_bound={cell['report']['p_bound']:.3g}"
                elif cell and cell.get("gate_reasons"):
                    tip = "; ".join(cell["gate_reasons"])
                elif cell and cell.get("error"):
                    tip = cell["error"]
                label = {1: "1", 0: "0"}.get(entry, "-")
                x, y = x0 + left + ci * cw, top + ri * ch
                out.append(
                    f'<g><rect x="{x}" y="{y}" width="{cw - 2}" height="{ch - 2}" '
                    f'fill="{color}"><title>{gen} vs {inv} @ {level:g}: {tip}</title></rect>'
                    f'<text x="{x + (cw - 2) / 2}" y="{y + ch / 2 + 3}" '
                    f'text-anchor="middle" fill="white">{label}</text></g>'
                )
    out.append("</svg>")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_eliminate(args) -> int:
    model = load_model(args.model)
    spec, _ = eliminate(model)
    text = render_invariant(spec)
    out = Path(args.output) if args.output else Path(model.name + ".inv")
    out.write_text(text + "\n")
    report = identifiability_count(spec, model)
    print(f"{model.name}: {spec.n_slots} coefficient slots -> {out}")
    print(
        f"identifiability: {report.n_params} parameters vs {report.n_slots} slots "
        f"({report.flag})"
    )
    return EXIT_COMPATIBLE


def cmd_simulate(args) -> int:
    model = load_model(args.model)
    horizon = args.tmax if args.tmax is not None else DEFAULT_HORIZONS.get(model.name, 10.0)
    grid = np.linspace(0.0, horizon, args.points)
    ts = simulate.integrate_model(model, grid)
    if args.exact_derivatives:
        derivs = simulate.exact_output_derivatives(model, grid, max_order=3)
        ts = simulate.TimeSeries(
            t=grid, y=derivs[0], inputs=ts.inputs,
            y_derivs={k: v for k, v in derivs.items() if k > 0},
        )
    if args.noise > 0:
        ts = simulate.add_noise(ts, args.noise_mode, args.noise, args.seed)
    simulate.write_csv(ts, args.output)
    print(f"wrote {args.points} samples on [0, {horizon:g}] to {args.output}")
    return EXIT_COMPATIBLE


def cmd_gp(args) -> int:
    data = simulate.read_csv(args.data)
    if data.n < 8:
        raise UsageError("need at least 8 data points to fit a GP")
    post, gate = estimate_derivatives(data, max_order=args.max_order)
    cols = [("t", post.s)]
    for i in range(args.max_order + 1):
        cols.append((f"y{i}_mean", post.means[i]))
        cols.append((f"y{i}_var", post.variances[i]))
    with open(args.output, "w") as fh:
        fh.write(",".join(name for name, _ in cols) + "\n")
        for row in zip(*(arr for _, arr in cols)):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    sidecar = Path(args.output).with_suffix(".json")
    sidecar.write_text(json.dumps({
        "hyperparams": {
            "theta2": post.hyperparams.theta2,
            "ell": post.hyperparams.ell,
            "sigma2": post.hyperparams.sigma2,
        },
        "nll": post.nll,
        "gate": {"passed": gate.passed, "reasons": list(gate.reasons),
                 "excluded_points": list(gate.excluded_points)},
    }, indent=2) + "\n")
    print(f"wrote posterior to {args.output} (gate: {'pass' if gate.passed else 'FAIL'})")
    return EXIT_COMPATIBLE if gate.passed else EXIT_GATED


def cmd_reject(args) -> int:
    data = simulate.read_csv(args.data)
    spec = parse_invariant(Path(args.invariant).read_text(), name=Path(args.invariant).stem)
    need = spec.max_order("y")
    if args.exact_derivatives:
        missing = [k for k in range(1, need + 1) if k not in data.y_derivs]
        if missing:
            raise UsageError(
                f"--exact-derivatives requires columns d{missing[0]}y.. in the CSV"
            )
        est, rows = data, data.t
        gate = None
    else:
        if data.n < 8:
            raise UsageError("need at least 8 data points to fit a GP")
        post, gate = estimate_derivatives(data, max_order=max(need, 1))
        if not gate.passed:
            report = {"verdict": "gated", "gate_reasons": list(gate.reasons)}
            _write_report(args.output, report)
            print("GP quality gate failed:", "; ".join(gate.reasons))
            return EXIT_GATED
        est = gpr.posterior_to_timeseries(post, data)
        rows = gated_rows(est, gate)
    eps = args.noise_level
    if eps is None:
        if gate is not None:
            eps = float(np.sqrt(post.hyperparams.sigma2)) / max(
                float(np.sqrt(np.mean(np.square(data.y)))), 1e-300
            )
        else:
            eps = 0.0
    else:
        eps = relative_noise_level(args.noise_mode, eps, data.y)
    system = solvability.build_system(spec, est, rows=rows, eps=eps)
    if args.deterministic:
        if args.bound is None:
            raise UsageError("--deterministic requires --bound B")
        verdict = solvability.deterministic_reject(system, args.bound)
        rep = solvability.decide(system, alpha=args.alpha)
        rep.verdict = verdict
    else:
        rep = solvability.decide(system, alpha=args.alpha)
    out = rep.to_dict()
    out["invariant"] = spec.name
    out["data_source"] = args.data
    out["noise_level"] = eps
    if gate is not None:
        out["gate_reasons"] = list(gate.reasons)
    _write_report(args.output, out)
    print(f"verdict: {rep.verdict} (tau={rep.tau:.6g}, p_bound={rep.p_bound:.6g})")
    return EXIT_REJECT if rep.verdict == "reject" else EXIT_COMPATIBLE


def _write_report(path, obj):
    if path:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_levels(text):
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        levels = []
        v = start
        while v <= stop + 1e-12:
            levels.append(round(v, 12))
            v += step
        return tuple(levels)
    return tuple(sorted(float(v) for v in text.split(",")))


def cmd_matrix(args) -> int:
    if args.models_dir and Path(args.models_dir).is_dir():
        models = sorted(str(p) for p in Path(args.models_dir).glob("*.model"))
    elif args.models_dir == "builtin" or not args.models_dir:
        models = ["lv2", "lv3", "lorenz", "lc2", "lc3"]
    else:
        raise UsageError(f"{args.models_dir!r} is not a directory")
    levels = _parse_levels(args.levels)
    if any(l < 0 for l in levels):
        raise UsageError("noise levels must be non-negative")
    cfg = RunConfig(
        models=models,
        points=args.points,
        horizon=args.tmax,
        noise_mode=args.noise_mode,
        levels=levels,
        seed=args.seed,
        alpha=args.alpha,
        jobs=args.jobs,
        exact=args.exact_derivatives,
    )
    cells = rejection_matrix(cfg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    model_names = sorted({c["model"] for c in cells})
    inv_names = sorted({c["invariant"] for c in cells})
    (outdir / "matrix.json").write_text(
        json.dumps({"config": {**cfg.__dict__, "levels": list(levels)},
                    "cells": cells}, indent=2, sort_keys=True) + "\n"
    )
    with open(outdir / "matrix.csv", "w") as fh:
        fh.write("model,invariant,level,entry,tau,p_bound\n")
        for c in cells:
            rep = c.get("report") or {}
            fh.write(
                f"{c['model']},{c['invariant']},{c['level']:g},{c['entry']},"
                f"{rep.get('tau', '')},{rep.get('p_bound', '')}\n"
            )
    (outdir / "matrix.svg").write_text(matrix_svg(cells, model_names, inv_names, levels))
    print(f"wrote matrix.json / matrix.csv / matrix.svg to {outdir}")
    return EXIT_COMPATIBLE


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="invreject", description="Reject ODE models against data "
                "via differential invariants, without parameter estimation.")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("eliminate", help="compute the input-output invariant")
    pe.add_argument("model")
    pe.add_argument("-o", "--output")
    pe.set_defaults(func=cmd_eliminate)

    ps = sub.add_parser("simulate", help="simulate a model to CSV")
    ps.add_argument("model")
    ps.add_argument("--points", type=int, default=100)
    ps.add_argument("--tmax", type=float, default=None)
    ps.add_argument("--noise-mode", choices=simulate.NOISE_MODES,
                    default="additive-gaussian")
    ps.add_argument("--noise", type=float, default=0.0)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--exact-derivatives", action="store_true",
                    help="include exact d1y..d3y columns")
    ps.add_argument("-o", "--output", required=True)
    ps.set_defaults(func=cmd_simulate)

    pg = sub.add_parser("gp", help="GP-estimate output derivatives")
    pg.add_argument("data")
    pg.add_argument("--max-order", type=int, default=3, choices=(0, 1, 2, 3))
    pg.add_argument("-o", "--output", required=True)
    pg.set_defaults(func=cmd_gp)

    pr = sub.add_parser("reject", help="test an invariant against data")
    pr.add_argument("data")
    pr.add_argument("invariant")
    pr.add_argument("--alpha", type=float, default=0.05)
    pr.add_argument("--noise-level", type=float, default=None)
    pr.add_argument("--noise-mode", choices=simulate.NOISE_MODES,
                    default="additive-gaussian")
    pr.add_argument("--exact-derivatives", action="store_true")
    pr.add_argument("--deterministic", action="store_true")
    pr.add_argument("--bound", type=float, default=None)
    pr.add_argument("-o", "--output")
    pr.set_defaults(func=cmd_reject)

    pm = sub.add_parser("matrix", help="full rejection-matrix experiment")
    pm.add_argument("models_dir", nargs="?", default="builtin")
    pm.add_argument("--levels", default="0:0.5:0.1")
    pm.add_argument("--points", type=int, default=100)
    pm.add_argument("--tmax", type=float, default=None)
    pm.add_argument("--noise-mode", choices=simulate.NOISE_MODES,
                    default="additive-gaussian")
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--alpha", type=float, default=0.05)
    pm.add_argument("--jobs", type=int, default=1)
    pm.add_argument("--exact-derivatives", action="store_true")
    pm.add_argument("-o", "--output", required=True)
    pm.set_defaults(func=cmd_matrix)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValueError, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DiffAlgebraError, gpr.GPError, solvability.SolvabilityError,
            simulate.SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
