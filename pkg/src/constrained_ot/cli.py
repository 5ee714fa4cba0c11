"""Command-line front end.

Exit codes: 0 success, 2 infeasible data or a solve that missed its
tolerances (the best iterate is still written), 3 invalid configuration.
All outputs go under ``--out`` and are indexed in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    EXPERIMENT_CONFIG,
    HomogInstance,
    config_dict,
    config_hash,
    gamma_homog_experiment,
    gamma_membrane_experiment,
    membrane_instance,
    parse_eps,
    stark_instance,
    stark_study,
    translation_instance,
)
from .gflow import FreeEnergySpec, jko_step, pme_cfl, pme_step, teorell_step
from .grid import PERIODIC, SPLIT, Grid, export_csv_1d, load_field, save_field
from .homog import CellInfeasibleError, FhomTable, build_feasible_flow, f_hom_eval
from .membrane import solve_membrane_limit
from .plots import heatmap, line_plot, waterfall
from .solver import InfeasibleError, SolverConfig, solve_constrained

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 2, 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


class Output:
    """Collects written files and writes ``manifest.json`` at the end."""

    def __init__(self, root: str, fmt: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.files: list[Path] = []
        self.volatile: set[str] = set()

    def path(self, name: str, volatile: bool = False) -> Path:
        """Register ``name``; volatile files (timings) are listed unhashed."""
        p = self.root / name
        self.files.append(p)
        if volatile:
            self.volatile.add(name)
        return p

    def json(self, name: str, obj, volatile: bool = False) -> Path:
        p = self.path(name, volatile)
        p.write_text(json.dumps(obj, sort_keys=True, indent=2, default=_plain) + "\n")
        return p

    def csv(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
        return p

    def manifest(self, command: str, status: str, extra: dict | None = None) -> Path:
        entries = []
        for p in self.files:
            if p.name in self.volatile:
                entries.append({"file": p.name, "sha256": None})
            elif p.exists():
                entries.append({"file": p.name, "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        m = {"command": command, "status": status, "version": __version__, "files": entries}
        if extra:
            m.update(extra)
        p = self.root / "manifest.json"
        p.write_text(json.dumps(m, sort_keys=True, indent=2, default=_plain) + "\n")
        return p


def _plain(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _grid_arg(text: str | None):
    if text is None:
        return None
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError as err:
        raise ConfigError(f"--grid expects NX[,NY], got {text!r}") from err
    if not dims or any(d < 1 for d in dims):
        raise ConfigError("--grid sizes must be positive")
    return dims


def _solver_cfg(a, base: SolverConfig | None = None) -> SolverConfig:
    kw = {}
    if a.tol_res is not None:
        kw["tol_residual"] = a.tol_res
    if a.tol_gap is not None:
        kw["tol_gap"] = a.tol_gap
    if a.max_iter is not None:
        kw["max_iter"] = a.max_iter
    return replace(base, **kw) if base else SolverConfig(**kw)


def _solution_summary(s) -> dict:
    d = s.summary()
    d["messages"] = list(s.messages)
    return d


def _write_solution(out: Output, s, g: Grid, tag: str = "solution", potential: bool = False):
    out.json(f"{tag}.json", _solution_summary(s))
    if potential and s.phi is not None:
        # diagnostic only: half convention, no normalisation in time is imposed
        p = out.path(f"{tag}_potential.f64")
        save_field(p, s.phi, g, kind="potential", convention="half", time="half-steps")
        out.path(f"{tag}_potential.f64.json")
    rho = s.rho.values
    if out.fmt == "csv" and g.dim == 1:
        export_csv_1d(out.path(f"{tag}_density.csv"), rho, g, ("t", "x", "rho"))
    elif out.fmt == "csv":
        last = rho[-1]
        out.csv(f"{tag}_final.csv", ("i", "j", "rho"), [(i, j, last[i, j]) for i in range(last.shape[0]) for j in range(last.shape[1])])
    elif out.fmt == "svg":
        if g.dim == 1:
            waterfall(g.centers(), rho, out.path(f"{tag}_waterfall.svg"), title=tag)
        else:
            heatmap(rho[g.nt // 2], out.path(f"{tag}_midpoint.svg"), title=f"{tag} at t = 1/2")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_solve(a, out: Output) -> int:
    cfg = _solver_cfg(a)
    dims = _grid_arg(a.grid)
    if a.rho0 or a.rho1:
        if not (a.rho0 and a.rho1):
            raise ConfigError("--rho0 and --rho1 go together")
        r0, g, _ = load_field(a.rho0)
        r1, g1, _ = load_field(a.rho1)
        if g1.shape != g.shape:
            raise ConfigError("endpoint grids differ")
        if a.nt:
            g = replace(g, nt=a.nt)
        cap = load_field(a.cap)[0] if a.cap else np.inf
        name = "custom"
    else:
        n = dims[0] if dims else None
        if a.instance == "stark-v1":
            inst = stark_instance(n or 512, a.nt)
        elif a.instance == "translation-v1":
            inst = translation_instance(n or 256, a.nt)
        else:
            raise ConfigError(f"unknown instance {a.instance!r}")
        r0, r1, cap, g, name = inst.rho0, inst.rho1, inst.cap, inst.g, inst.name
    t = time.perf_counter()
    s = solve_constrained(r0, r1, cap, g, cfg)
    _write_solution(out, s, g, potential=a.dump_potential)
    out.manifest("solve", "converged" if s.converged else "not-converged", {"instance": name})
    out.json("timing.json", {"runtime": time.perf_counter() - t}, volatile=True)
    print(f"{name}: energy {s.energy:.8f}  iterations {s.iterations}  converged {s.converged}")
    return EXIT_OK if s.converged else EXIT_FAILED


def cmd_stark(a, out: Output) -> int:
    cfg = _solver_cfg(a)
    sizes = [int(v) for v in a.sizes.split(",")] if a.sizes else [(_grid_arg(a.grid) or (512,))[0]]
    study = stark_study(sizes, cfg)
    err = study.errors()
    out.json(
        "stark.json",
        {
            "sizes": study.sizes,
            "energies": study.energies,
            "exact": study.exact,
            "richardson": study.tableau,
            "richardson_errors": err,
            "monotone": study.monotone() if len(sizes) > 1 else None,
            "config_hash": config_hash("stark", sizes, config_dict(cfg)),
        },
    )
    if out.fmt == "svg" and len(sizes) > 1:
        line_plot(sizes, {"raw": err[0], "extrapolated": err[1] + [err[1][-1]]}, out.path("stark_errors.svg"),
                  "stark: |E - 4/9|", "N", "error", logx=True, logy=True)
    elif out.fmt == "csv":
        out.csv("stark.csv", ("N", "energy", "error"), list(zip(sizes, study.energies, err[0])))
    ok = all(s.converged for s in study.solutions)
    out.manifest("stark", "converged" if ok else "not-converged")
    for n, e in zip(sizes, study.energies):
        print(f"N={n}: energy {e:.8f}  error {abs(e - study.exact):.3e}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_membrane(a, out: Output) -> int:
    cfg = _solver_cfg(a)
    dims = _grid_arg(a.grid)
    inst = membrane_instance(a.instance, a.alpha, dims[0] if dims else 200, a.nt or 64)
    s = solve_membrane_limit(inst.problem(), cfg)
    d = _solution_summary(s)
    d.update(exact=inst.exact, transferred=float(np.sum(s.flux.values) * s.flux.grid.dt * s.flux.grid.interface_area))
    out.json("membrane.json", d)
    if a.dump_potential and s.phi is not None:
        g = s.rho.grid
        save_field(out.path("membrane_potential.f64"), s.phi, g, kind="potential", convention="half", time="half-steps")
        out.path("membrane_potential.f64.json")
    if out.fmt == "svg":
        waterfall(inst.problem().g.centers(), s.rho.values, out.path("membrane_waterfall.svg"), title=inst.name)
    elif out.fmt == "csv":
        g = s.rho.grid
        out.csv("flux.csv", ("t", "flux"), [((n + 0.5) * g.dt, float(v)) for n, v in enumerate(s.flux.values.reshape(g.nt, -1).sum(axis=1))])
    out.manifest("membrane", "converged" if s.converged else "not-converged")
    print(f"{inst.name} alpha={a.alpha}: energy {s.energy:.6f}  limit {inst.exact:.6f}")
    return EXIT_OK if s.converged else EXIT_FAILED


def _cell_cap(kind: str, dims) -> np.ndarray:
    if kind == "twolevel":
        n = dims[0] if dims else 2
        if n % 2:
            raise ConfigError("the two-level cell needs an even resolution")
        return np.where(np.arange(n) < n // 2, 1.0, 2.0)
    if kind == "uniform":
        return np.ones(dims or (16, 16))
    if kind == "square":
        n = dims or (16, 16)
        if len(n) != 2:
            raise ConfigError("the square exclusion is two-dimensional")
        h = np.ones(n)
        h[n[0] // 4 : 3 * n[0] // 4, n[1] // 4 : 3 * n[1] // 4] = 0.0
        return h
    raise ConfigError(f"unknown cell {kind!r}")


def cmd_cell(a, out: Output) -> int:
    dims = _grid_arg(a.grid)
    h = _cell_cap(a.cell, dims)
    U = np.array([float(v) for v in a.U.split(",")])
    s = f_hom_eval(a.m, U, h)
    flow = build_feasible_flow(U, h)
    u2 = float(U @ U)
    extra = {}
    if h.ndim == 2:
        # direction dependence at the same |U|, reported as measured
        r = float(np.sqrt(u2))
        v1 = f_hom_eval(a.m, np.array([r, 0.0]), h).value
        v2 = f_hom_eval(a.m, np.array([0.0, r]), h).value
        extra = {"anisotropy": {"value_e1": v1, "value_e2": v2, "ratio": v1 / v2}}
    out.json(
        "cell.json",
        {
            **extra,
            "cell": a.cell,
            "shape": list(h.shape),
            "m": a.m,
            "U": U,
            "value": s.value,
            "jensen_bound": u2 / a.m,
            "upper_bound": flow.C_emp * u2 / a.m,
            "C_flow": flow.C,
            "C_emp": flow.C_emp,
            "iterations": s.iterations,
            "converged": s.converged,
        },
    )
    if out.fmt == "svg" and h.ndim == 2:
        heatmap(s.nu, out.path("cell_nu.svg"), title="optimal density nu")
    elif out.fmt == "csv":
        flat = s.nu.reshape(-1)
        out.csv("cell_nu.csv", ("index", "nu"), list(enumerate(flat)))
    out.manifest("cell", "converged" if s.converged else "not-converged")
    print(f"f_hom({a.m}, {U.tolist()}) = {s.value:.10f}")
    return EXIT_OK if s.converged else EXIT_FAILED


def cmd_ftable(a, out: Output) -> int:
    dims = _grid_arg(a.grid)
    h = _cell_cap(a.cell, dims)
    if h.ndim != 1:
        raise ConfigError("F tables are one-dimensional")
    table = FhomTable.build(h, a.samples)
    table.to_csv(out.path("ftable.csv"))
    out.json("ftable.json", {"cell": a.cell, "samples": a.samples, "m": table.m, "F": table.F, "concave_inverse": table.concave_inverse()})
    if out.fmt == "svg":
        line_plot(table.m, {"1/F": 1.0 / table.F}, out.path("ftable.svg"), "mobility 1/F(m)", "m", "1/F")
    out.manifest("ftable", "ok")
    print(f"{a.samples} samples on (0, {table.m_max:g}]")
    return EXIT_OK


def _report_out(rep, out: Output, name: str):
    p = out.path(f"{name}.json")
    p.write_text(rep.to_json())
    out.json(f"{name}_timing.json", {"runtimes": rep.runtimes, "limit_runtime": rep.limit_runtime}, volatile=True)
    if out.fmt == "svg":
        line_plot(rep.eps, {"|E_eps - E_lim|": rep.errors}, out.path(f"{name}.svg"), name, "eps", "error", logx=True, logy=True)
    elif out.fmt == "csv":
        out.csv(f"{name}.csv", ("eps", "energy", "error"), list(zip(rep.eps, rep.energies, rep.errors)))


def cmd_gamma_membrane(a, out: Output) -> int:
    cfg = _solver_cfg(a, EXPERIMENT_CONFIG)
    dims = _grid_arg(a.grid)
    inst = membrane_instance(a.instance, a.alpha, dims[0] if dims else 200, a.nt or 64)
    rep = gamma_membrane_experiment(parse_eps(a.eps), a.alpha, inst, cfg, workers=a.workers)
    _report_out(rep, out, "gamma_membrane")
    ok = all(rep.converged)
    out.manifest("gamma-membrane", "converged" if ok else "not-converged", {"config_hash": rep.config_hash})
    for e, E, err in zip(rep.eps, rep.energies, rep.errors):
        print(f"eps={e:g}: energy {E:.6f}  |E - E0| {err:.3e}")
    print(f"limit E0 = {rep.limit_energy:.6f} (exact {rep.exact_limit:.6f})")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_gamma_homog(a, out: Output) -> int:
    cfg = _solver_cfg(a, EXPERIMENT_CONFIG)
    dims = _grid_arg(a.grid)
    inst = HomogInstance()
    if dims:
        inst = replace(inst, n=dims[0])
    if a.nt:
        inst = replace(inst, nt=a.nt)
    rep = gamma_homog_experiment(parse_eps(a.eps), None, inst, cfg, workers=a.workers)
    _report_out(rep, out, "gamma_homog")
    ok = all(rep.converged)
    out.manifest("gamma-homog", "converged" if ok else "not-converged", {"config_hash": rep.config_hash})
    for e, E, err in zip(rep.eps, rep.energies, rep.errors):
        print(f"eps={e:g}: energy {E:.6f}  |E - E_hom| {err:.3e}")
    print(f"limit E_hom = {rep.limit_energy:.6f}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_gflow(a, out: Output) -> int:
    dims = _grid_arg(a.grid) or (64,)
    n = dims[0]
    rng = np.random.default_rng(a.seed)
    rows, profiles = [], []
    if a.scheme in ("jko", "pme"):
        g = Grid((n,), a.nt or 8, lower=(0.0,), extent=(1.0,), topology=PERIODIC)
        x = g.centers()
        rho = 1.0 + 0.5 * np.cos(2 * np.pi * x) + 0.05 * rng.random(n)
        rho *= n / np.sum(rho)
        spec = FreeEnergySpec(a.RT, 0.0)
        cap = np.full(n, a.cap) if a.cap else np.inf
        if a.cap and np.any(rho > a.cap):
            raise InfeasibleError("initial density exceeds the cap")
        t = 0.0
        for k in range(a.steps + 1):
            rows.append((t, spec.value(rho, g), float(np.sum(rho) * g.cell_volume)))
            profiles.append(rho.copy())
            if k == a.steps:
                break
            if a.scheme == "jko":
                dt = a.dt or 1e-2
                rho = jko_step(rho, spec, dt, cap, g, nt_inner=a.nt or 8)
            else:
                limit = pme_cfl(rho, a.beta, a.RT, g)
                dt = a.dt or 0.4 * limit
                if dt > limit:
                    raise ConfigError("dt exceeds the porous-medium stability bound")
                rho = pme_step(rho, a.beta, a.RT, dt, g)
            t += dt
        xs = x
    else:
        g = Grid((n,), 1, lower=(-1.0,), extent=(2.0,), topology=SPLIT, interface_index=n // 2)
        x = g.centers()
        k = n // 2
        rho = np.where(x < 0, 1.5, 0.5) + 0.05 * rng.random(n)
        sm, sp = FreeEnergySpec(a.RT, 0.0), FreeEnergySpec(a.RT, 0.0)
        dt = a.dt or 0.4 * min(g.dx) ** 2 / (2.0 * a.RT)
        for step in range(a.steps + 1):
            fe = sm.value(rho[:k], g) + sp.value(rho[k:], g)
            rows.append((step * dt, fe, float(np.sum(rho) * g.cell_volume)))
            profiles.append(rho.copy())
            if step == a.steps:
                break
            m_, p_ = teorell_step(rho[:k], rho[k:], sm, sp, a.alpha, a.RT, dt, g, teorell_rt_factor=a.teorell_rt_factor)
            rho = np.concatenate([m_, p_])
        xs = x
    out.csv("gflow_series.csv", ("t", "free_energy", "mass"), rows)
    pick = sorted(set(np.linspace(0, len(profiles) - 1, min(5, len(profiles))).astype(int)))
    out.csv("gflow_profiles.csv", ("x", *[f"t={rows[i][0]:g}" for i in pick]), [(xs[j], *[profiles[i][j] for i in pick]) for j in range(n)])
    if out.fmt == "svg":
        line_plot([r[0] for r in rows], {"free energy": [r[1] for r in rows]}, out.path("gflow_energy.svg"), f"{a.scheme} free energy", "t", "F")
        waterfall(xs, np.array(profiles), out.path("gflow_waterfall.svg"), title=a.scheme)
    out.manifest("gflow", "ok", {"scheme": a.scheme, "seed": a.seed})
    print(f"{a.scheme}: {a.steps} steps, free energy {rows[0][1]:.6f} -> {rows[-1][1]:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", help="grid size NX[,NY]")
    common.add_argument("--nt", type=int, help="time slices")
    common.add_argument("--tol-res", type=float, dest="tol_res", help="relative continuity tolerance")
    common.add_argument("--tol-gap", type=float, dest="tol_gap", help="relative energy tolerance")
    common.add_argument("--max-iter", type=int, dest="max_iter", help="iteration budget")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json", "svg"), default="json", help="extra output format")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised inputs")

    p = _Parser(prog="constrained-ot", description="Density-constrained dynamic optimal transport.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", parents=[common], help="capped transport between two densities")
    s.add_argument("--instance", default="translation-v1", choices=("translation-v1", "stark-v1"))
    s.add_argument("--rho0", help="initial density field file")
    s.add_argument("--rho1", help="final density field file")
    s.add_argument("--cap", help="cap field file (default: none)")
    s.add_argument("--dump-potential", action="store_true", dest="dump_potential", help="also write the dual potential")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("stark", parents=[common], help="stark oracle and Richardson study")
    s.add_argument("--sizes", help="comma-separated N list, e.g. 128,256,512")
    s.set_defaults(func=cmd_stark)

    s = sub.add_parser("membrane", parents=[common], help="membrane limit problem")
    s.add_argument("--instance", choices=("block", "point"), default="block")
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--dump-potential", action="store_true", dest="dump_potential", help="also write the dual potential")
    s.set_defaults(func=cmd_membrane)

    s = sub.add_parser("cell", parents=[common], help="evaluate the cell problem f_hom(m, U)")
    s.add_argument("--cell", choices=("uniform", "twolevel", "square"), default="square")
    s.add_argument("--m", type=float, default=0.5)
    s.add_argument("--U", default="1,0")
    s.set_defaults(func=cmd_cell)

    s = sub.add_parser("ftable", parents=[common], help="tabulate F(m) by water-filling")
    s.add_argument("--cell", choices=("uniform", "twolevel"), default="twolevel")
    s.add_argument("--samples", type=int, default=64)
    s.set_defaults(func=cmd_ftable)

    s = sub.add_parser("gamma-membrane", parents=[common], help="strip caps against the membrane limit")
    s.add_argument("--instance", choices=("block", "point"), default="block")
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--eps", default="0.2,0.1,0.05")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_gamma_membrane)

    s = sub.add_parser("gamma-homog", parents=[common], help="periodic caps against the homogenised limit")
    s.add_argument("--instance", choices=("twolevel-homog-v1",), default="twolevel-homog-v1")
    s.add_argument("--eps", default="1/4,1/8,1/16")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_gamma_homog)

    s = sub.add_parser("gflow", parents=[common], help="gradient-flow time series")
    s.add_argument("--scheme", choices=("jko", "pme", "teorell"), default="jko")
    s.add_argument("--steps", type=int, default=10)
    s.add_argument("--dt", type=float, help="time step (default: 1e-2 for jko, 0.4 x stability bound otherwise)")
    s.add_argument("--RT", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=0.5)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--cap", type=float, default=None)
    s.add_argument("--teorell-rt-factor", action="store_true", dest="teorell_rt_factor",
                   help="scale the interface density gradient by RT")
    s.set_defaults(func=cmd_gflow)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        out = Output(a.out, a.format)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return a.func(a, out)
    except (InfeasibleError, CellInfeasibleError) as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_FAILED
    except (ValueError, OSError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
