"""Acceptance criteria 1-11.

Each criterion is a function returning ``(passed, detail)``; pytest runs
them and the terminal summary prints one PASS/FAIL line per criterion.
Run ``python tests/test_acceptance.py`` for the same lines without pytest.
"""

from __future__ import annotations

import functools
import sys
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from constrained_ot.experiments import (  # noqa: E402
    gamma_homog_experiment,
    gamma_membrane_experiment,
    StarkStudy,
    membrane_instance,
    richardson,
    stark_instance,
    translation_instance,
)
from constrained_ot.gflow import FreeEnergySpec, heat_step, jko_step, pme_cfl, pme_step, teorell_step  # noqa: E402
from constrained_ot.grid import PERIODIC, SPLIT, Grid  # noqa: E402
from constrained_ot.homog import FhomTable, build_feasible_flow, f_hom_eval, water_fill_1d  # noqa: E402
from constrained_ot.kinetic import prox_action  # noqa: E402
from constrained_ot.membrane import solve_membrane_limit  # noqa: E402
from constrained_ot.solver import SolverConfig, solve_constrained  # noqa: E402
from oracles import FROZEN, brute_prox, brute_twolevel_F  # noqa: E402

RESULTS: dict[int, tuple[bool, str]] = {}
CFG = SolverConfig()


def _square_exclusion(n: int = 16) -> np.ndarray:
    h = np.ones((n, n))
    h[n // 4 : 3 * n // 4, n // 4 : 3 * n // 4] = 0.0
    return h


# shared solves ------------------------------------------------------------------


@functools.cache
def _stark():
    """Stark study over N = 128, 256, 512 with the runtime of each solve."""
    sizes, sols, times = (128, 256, 512), [], []
    for n in sizes:
        inst = stark_instance(n)
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sols.append(solve_constrained(inst.rho0, inst.rho1, inst.cap, inst.g, CFG))
        times.append(time.perf_counter() - t)
    energies = [s.energy for s in sols]
    study = StarkStudy(list(sizes), energies, FROZEN["stark_energy"], richardson(energies), sols)
    return study, times


@functools.cache
def _translation():
    inst = translation_instance(256)
    t = time.perf_counter()
    s = solve_constrained(inst.rho0, inst.rho1, inst.cap, inst.g, CFG)
    return s, time.perf_counter() - t


@functools.cache
def _membrane(kind: str, alpha: float):
    inst = membrane_instance(kind, alpha)
    t = time.perf_counter()
    s = solve_membrane_limit(inst.problem(), CFG)
    return s, time.perf_counter() - t


# criteria -------------------------------------------------------------------------


def criterion_1():
    study, times = _stark()
    s, inst_time = study.solutions[-1], times[-1]
    rel = abs(s.energy - FROZEN["stark_energy"]) / FROZEN["stark_energy"]
    err = study.errors()
    ok = rel < 0.10 and inst_time < 60 and study.monotone()
    detail = (
        f"E(512) = {s.energy:.6f} (rel err {rel:.2e}) in {inst_time:.1f} s; "
        f"raw errors {', '.join(f'{e:.2e}' for e in err[0])}; "
        f"extrapolated {', '.join(f'{e:.2e}' for e in err[1])}, {err[2][0]:.2e}"
    )
    return ok, detail


def criterion_2():
    s, dt = _translation()
    rel = abs(s.energy - FROZEN["translation_energy"]) / FROZEN["translation_energy"]
    return rel <= 0.02 and dt < 10, f"E = {s.energy:.6f} (rel err {rel:.2e}) in {dt:.1f} s"


def criterion_3():
    sols = {"translation": _translation()[0]}
    study, _ = _stark()
    for n, s in zip(study.sizes, study.solutions):
        sols[f"stark-{n}"] = s
    sols["block-membrane"] = _membrane("block", 2.0)[0]
    sols["point-membrane"] = _membrane("point", 1.0)[0]
    ok = True
    worst = ""
    for name, s in sols.items():
        if not s.converged:
            continue
        lhs, rhs = 2 * s.dual_bound, s.energy + CFG.tol_gap * (1 + s.energy)
        if lhs > rhs:
            ok = False
            worst += f" {name} violates ({lhs:.6g} > {rhs:.6g})"
    tr = sols["translation"]
    gap = (tr.energy - 2 * tr.dual_bound) / tr.energy
    ok &= gap <= 0.05
    n_conv = sum(s.converged for s in sols.values())
    return ok, f"{n_conv}/{len(sols)} converged solves bounded; translation gap {gap:.2%}" + worst


def criterion_4():
    sb, tb = _membrane("block", 2.0)
    sp, tp = _membrane("point", 1.0)
    eb = abs(sb.energy - FROZEN["block_membrane_energy"]) / FROZEN["block_membrane_energy"]
    ep = abs(sp.energy - FROZEN["point_membrane_energy"]) / FROZEN["point_membrane_energy"]
    ok = eb <= 0.05 and ep <= 0.10 and tb < 30 and tp < 30
    return ok, f"block E0 = {sb.energy:.5f} ({tb:.1f} s), point E0 = {sp.energy:.5f} ({tp:.1f} s)"


def criterion_5():
    t = time.perf_counter()
    rep = gamma_membrane_experiment([0.2, 0.1, 0.05], 2.0, "block")
    dt = time.perf_counter() - t
    err = rep.exact_errors
    ok = all(b < a for a, b in zip(err, err[1:])) and dt < 300 and all(rep.converged)
    return ok, (
        f"|E_eps - 1.5| = {', '.join(f'{e:.4f}' for e in err)} "
        f"(iterations {rep.iterations[:-1]}, all converged {all(rep.converged)}) in {dt:.0f} s"
    )


def criterion_6():
    t = time.perf_counter()
    u = f_hom_eval(0.5, (1.0,), np.ones(1)).value
    u2 = f_hom_eval(0.5, (1.0, 0.0), np.ones((16, 16))).value
    # diagonal mean flux: no straight channel clears the centred square
    sq = f_hom_eval(0.5, (np.sqrt(0.5), np.sqrt(0.5)), _square_exclusion(16)).value
    dt = time.perf_counter() - t
    ok = abs(u - 2.0) <= 1e-6 and abs(u2 - 2.0) <= 1e-6 and sq > 2.0 and dt < 60
    return ok, f"uniform {u:.9f} (1D), {u2:.9f} (2D); square exclusion {sq:.6f} in {dt:.1f} s"


def criterion_7():
    _, F = water_fill_1d(1.2, np.array([1.0, 2.0]))
    brute = brute_twolevel_F(1.2)
    ok = abs(F - 6.0 / 7.0) <= 1e-9 and abs(F - brute) <= 1e-3
    return ok, f"F = {F:.12f}, closed form {6 / 7:.12f}, brute force {brute:.12f}"


def criterion_8():
    rng = np.random.default_rng(2024)
    h = _square_exclusion(8)
    total = float(np.mean(h))
    # 2-homogeneity
    U = np.array([0.8, 0.3])
    r = f_hom_eval(0.4, 2 * U, h).value / f_hom_eval(0.4, U, h).value
    ok_hom = abs(r - 4.0) <= 1e-6
    # midpoint convexity in (m, U)
    worst = -np.inf
    for _ in range(200):
        m1, m2 = rng.uniform(0.05 * total, total, 2)
        U1, U2 = rng.uniform(-1, 1, (2, 2))
        a = f_hom_eval(m1, U1, h).value
        b = f_hom_eval(m2, U2, h).value
        c = f_hom_eval(0.5 * (m1 + m2), 0.5 * (U1 + U2), h).value
        worst = max(worst, c - 0.5 * (a + b))
    ok_cvx = worst <= 1e-4
    # sandwich bound
    ok_sw = True
    for _ in range(10):
        m = rng.uniform(0.05, total)
        V = rng.uniform(-1, 1, 2)
        v = f_hom_eval(m, V, h).value
        u2 = float(V @ V)
        ok_sw &= u2 / m * (1 - 1e-9) <= v <= build_feasible_flow(V, h).C_emp * u2 / m
    # concavity of 1/F on a 50 point table
    table = FhomTable.build(np.array([1.0, 2.0]), 50)
    ok_cc = table.concave_inverse()
    ok = ok_hom and ok_cvx and ok_sw and ok_cc
    return ok, (
        f"ratio {r:.9f}; worst midpoint excess {worst:.2e}; sandwich {'ok' if ok_sw else 'FAILED'}; "
        f"1/F concave {ok_cc}"
    )


def criterion_9():
    t = time.perf_counter()
    rep = gamma_homog_experiment([0.25, 0.125, 0.0625], None, "twolevel-homog-v1")
    dt = time.perf_counter() - t
    err = rep.errors
    ok = all(b < a for a, b in zip(err, err[1:])) and dt < 300 and all(rep.converged)
    return ok, f"E_hom = {rep.limit_energy:.6f}; errors {', '.join(f'{e:.2e}' for e in err)} in {dt:.0f} s"


def criterion_10():
    rng = np.random.default_rng(10)
    # PME: mass per step
    g = Grid((64,), 1, topology=PERIODIC)
    x = g.centers()
    rho = 1.0 + 0.5 * np.sin(2 * np.pi * x) + 0.1 * rng.random(64)
    worst_mass = 0.0
    for _ in range(50):
        new = pme_step(rho, 0.5, 1.0, 0.9 * pme_cfl(rho, 0.5, 1.0, g), g)
        worst_mass = max(worst_mass, abs(new.sum() - rho.sum()) * g.cell_volume)
        rho = new
    ok_mass = worst_mass <= 1e-12
    # PME to heat as beta -> 0
    rho = 1.0 + 0.5 * np.sin(2 * np.pi * x)
    dt = 0.2 * pme_cfl(rho, 0.0, 1.0, g)
    ref = heat_step(rho, 1.0, dt, g)
    betas = [1e-1, 1e-2, 1e-3, 1e-4]
    gap = [float(np.max(np.abs(pme_step(rho, b, 1.0, dt, g) - ref))) for b in betas]
    slope = [d / b for d, b in zip(gap, betas)]
    ok_heat = max(slope) <= 2 * min(slope) and slope[-1] > 0
    # JKO on 50 random instances
    ok_jko, n_strict = True, 0
    for _ in range(50):
        n = 12
        gj = Grid((n,), 1, topology=PERIODIC)
        cap = rng.uniform(1.2, 3.0, n)
        r0 = rng.uniform(0.1, 1.0, n) * cap
        spec = FreeEnergySpec(rng.uniform(0.2, 2.0), rng.standard_normal(n))
        new = jko_step(r0, spec, rng.uniform(1e-3, 5e-2), cap, gj)
        f0, f1 = spec.value(r0, gj), spec.value(new, gj)
        ok_jko &= bool(f1 <= f0) and bool(np.all(new <= cap))
        n_strict += f1 < f0
    # Teorell Gibbs state
    gs = Grid((40,), 1, lower=(-1.0,), extent=(2.0,), topology=SPLIT, interface_index=20)
    xs = gs.centers()
    psi = np.cos(3 * xs) + xs
    RT = 0.7
    gibbs = np.exp(-psi / RT)
    m, p = teorell_step(gibbs[:20], gibbs[20:], FreeEnergySpec(RT, psi[:20]), FreeEnergySpec(RT, psi[20:]),
                        2.0, RT, 0.4 * gs.dx[0] ** 2 / RT, gs)
    stat = float(np.max(np.abs(np.concatenate([m, p]) - gibbs)))
    ok_teo = stat <= 1e-8
    ok = ok_mass and ok_heat and ok_jko and ok_teo
    return ok, (
        f"PME mass drift {worst_mass:.1e}; |PME - heat|/beta in [{min(slope):.3g}, {max(slope):.3g}]; "
        f"JKO monotone and capped on 50 ({n_strict} strict): {ok_jko}; Teorell drift {stat:.1e}"
    )


def criterion_11():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        mt, ft, gamma = rng.uniform(-1, 2), rng.uniform(-2, 2), rng.uniform(0.05, 2)
        m, f = prox_action(mt, ft, gamma)
        bm, bf = brute_prox(mt, ft, gamma, res=1e-4)
        worst = max(worst, abs(m - bm), abs(f - bf))
    return worst <= 1e-3, f"max deviation from brute force {worst:.2e} on 100 triples"


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 12)}


def _record(i: int):
    ok, detail = CRITERIA[i]()
    RESULTS[i] = (bool(ok), detail)
    return ok, detail


@pytest.mark.parametrize("i", list(CRITERIA))
def test_criterion(i):
    ok, detail = _record(i)
    print(f"criterion {i}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i in CRITERIA:
        ok, detail = _record(i)
        failed += not ok
        print(f"criterion {i}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
    sys.exit(1 if failed else 0)
