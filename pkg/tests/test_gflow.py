import warnings

import numpy as np
import pytest

from constrained_ot.gflow import (
    CFLError,
    FreeEnergySpec,
    _entropy_prox,
    heat_step,
    jko_step,
    pme_cfl,
    pme_step,
    teorell_flux,
    teorell_step,
)
from constrained_ot.grid import BOX, PERIODIC, SPLIT, Grid, GridError
from constrained_ot.solver import InfeasibleError


def _bump(n, seed=0):
    x = (np.arange(n) + 0.5) / n
    rho = 1.0 + 0.5 * np.cos(2 * np.pi * x) + 0.1 * np.random.default_rng(seed).random(n)
    return rho * n / rho.sum()


def test_free_energy_spec():
    g = Grid((4,), 1, topology=PERIODIC)
    spec = FreeEnergySpec(2.0, np.array([0.0, 1.0, 0.0, 1.0]))
    rho = np.array([1.0, 1.0, np.e, 0.0])
    assert spec.value(rho, g) == pytest.approx((2.0 * np.e + 1.0) / 4)
    assert spec.chemical_potential(np.array([0.0]))[0] < -100
    with pytest.raises(ValueError):
        FreeEnergySpec(0.0)
    with pytest.raises(ValueError):
        FreeEnergySpec(1.0, np.array([np.nan]))


def test_entropy_prox_is_stationary():
    prox = _entropy_prox(1.5, 0.3, 2.0, np.inf)
    v = np.linspace(-3, 3, 13)
    m = prox(v, 0.7)
    # (m - v)/gamma + c (RT (log m + 1) + psi) = 0
    assert np.allclose((m - v) / 0.7 + 2.0 * (1.5 * (np.log(m) + 1) + 0.3), 0.0, atol=1e-10)
    capped = _entropy_prox(1.5, 0.3, 2.0, 0.5)(v, 0.7)
    assert np.all(capped <= 0.5)


def test_pme_conserves_mass_and_decays_energy():
    g = Grid((64,), 1, topology=PERIODIC)
    rho = _bump(64)
    spec = FreeEnergySpec(1.0)
    m0 = rho.sum()
    for _ in range(20):
        dt = 0.9 * pme_cfl(rho, 0.5, 1.0, g)
        new = pme_step(rho, 0.5, 1.0, dt, g)
        assert abs(new.sum() - m0) <= 1e-12 * m0
        assert spec.value(new, g) <= spec.value(rho, g) + 1e-14
        rho = new


def test_pme_box_and_cfl():
    g = Grid((32,), 1, topology=BOX)
    rho = _bump(32, 1)
    dt = pme_cfl(rho, 0.3, 1.0, g)
    new = pme_step(rho, 0.3, 1.0, dt, g)
    assert new.sum() == pytest.approx(rho.sum(), rel=1e-13)
    with pytest.raises(CFLError):
        pme_step(rho, 0.3, 1.0, 2 * dt, g)
    with pytest.raises(ValueError):
        pme_step(rho, 1.0, 1.0, dt, g)


def test_pme_with_vacuum_keeps_sign():
    g = Grid((40,), 1, topology=BOX)
    rho = np.zeros(40)
    rho[15:25] = 1.0
    for _ in range(10):
        dt = 0.9 * pme_cfl(rho, 0.5, 1.0, g)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rho = pme_step(rho, 0.5, 1.0, dt, g)
    assert np.all(rho >= 0)
    assert rho.sum() == pytest.approx(10.0, rel=1e-13)


def test_pme_tends_to_heat_as_beta_vanishes():
    g = Grid((32,), 1, topology=PERIODIC)
    rho = _bump(32, 2)
    dt = 0.2 * pme_cfl(rho, 0.0, 1.0, g)
    ref = heat_step(rho, 1.0, dt, g)
    gaps = [np.max(np.abs(pme_step(rho, b, 1.0, dt, g) - ref)) for b in (1e-2, 1e-3, 1e-4)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[1] / gaps[0] == pytest.approx(0.1, rel=0.05)
    assert np.max(np.abs(pme_step(rho, 0.0, 1.0, dt, g) - ref)) < 1e-13


def test_jko_step_properties():
    g = Grid((16,), 1, topology=PERIODIC)
    spec = FreeEnergySpec(1.0)
    rho = _bump(16, 3)
    new = jko_step(rho, spec, 1e-2, np.inf, g)
    assert spec.value(new, g) < spec.value(rho, g)
    assert new.sum() == pytest.approx(rho.sum(), rel=1e-8)
    flat = np.ones(16)
    assert np.allclose(jko_step(flat, spec, 1e-2, np.inf, g), flat, atol=1e-6)


def test_jko_step_respects_cap():
    g = Grid((16,), 1, topology=PERIODIC)
    cap = np.full(16, 1.6)
    rho = np.minimum(_bump(16, 4), 1.6)
    rho *= 16 / rho.sum()
    new = jko_step(rho, FreeEnergySpec(1.0, np.linspace(0, 2, 16)), 5e-2, cap, g)
    assert np.all(new <= cap)
    with pytest.raises(InfeasibleError):
        jko_step(np.full(16, 2.0), FreeEnergySpec(1.0), 1e-2, cap, g)
    with pytest.raises(GridError):
        jko_step(np.ones(6), FreeEnergySpec(1.0), 1e-2, np.inf, Grid((6,), 1, topology=SPLIT, interface_index=3))


def test_jko_follows_heat_flow():
    g = Grid((32,), 1, topology=PERIODIC)
    spec = FreeEnergySpec(1.0)
    x = g.centers()
    # smooth data: implicit and exact heat flow differ at O(tau^2) per mode
    rho = 1.0 + 0.5 * np.cos(2 * np.pi * x)
    tau = 1e-3
    jk = jko_step(rho, spec, tau, np.inf, g)
    ref = rho.copy()
    steps = 50
    for _ in range(steps):
        ref = heat_step(ref, 1.0, tau / steps, g)
    assert np.sum(np.abs(jk - ref)) / np.sum(rho) < 5e-3


def _split(n=20):
    return Grid((n,), 1, lower=(-1.0,), extent=(2.0,), topology=SPLIT, interface_index=n // 2)


def test_teorell_gibbs_state_is_stationary():
    g = _split()
    x = g.centers()
    psi = 0.7 * x**2
    gibbs = np.exp(-psi / 0.5)
    sm, sp = FreeEnergySpec(0.5, psi[:10]), FreeEnergySpec(0.5, psi[10:])
    dt = 0.4 * g.dx[0] ** 2
    m, p = teorell_step(gibbs[:10], gibbs[10:], sm, sp, 3.0, None, dt, g)
    assert np.max(np.abs(np.concatenate([m, p]) - gibbs)) < 1e-12


def test_teorell_flux_direction_and_conservation():
    assert teorell_flux(np.array([1.0]), np.array([0.0]), 2.0, 4.0)[0] == 2.0
    assert teorell_flux(np.array([1.0]), np.array([0.0]), 2.0, 4.0, rt_factor=True)[0] == 0.5
    g = _split()
    spec = FreeEnergySpec(1.0)
    rm, rp = np.full(10, 2.0), np.full(10, 1.0)
    m, p = teorell_step(rm, rp, spec, spec, 1.0, 1.0, 1e-3, g)
    assert m.sum() + p.sum() == pytest.approx(30.0, rel=1e-14)
    assert m[-1] < 2.0 and p[0] > 1.0
    # alpha = 0 decouples the halves
    m0, p0 = teorell_step(rm, rp, spec, spec, 0.0, 1.0, 1e-3, g)
    assert np.array_equal(m0, rm) and np.array_equal(p0, rp)


def test_teorell_validation():
    g = _split()
    spec = FreeEnergySpec(1.0)
    one = np.ones(10)
    with pytest.raises(CFLError):
        teorell_step(one, one, spec, spec, 1.0, 1.0, 1.0, g)
    with pytest.raises(ValueError):
        teorell_step(one, one, spec, FreeEnergySpec(2.0), 1.0, None, 1e-3, g)
    with pytest.raises(GridError):
        teorell_step(one, one, spec, spec, 1.0, 1.0, 1e-3, Grid((20,), 1, topology=BOX))
