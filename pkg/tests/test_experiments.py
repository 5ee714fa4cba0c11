import json

import numpy as np
import pytest

from constrained_ot.experiments import (
    INSTANCES,
    ExperimentReport,
    HomogInstance,
    config_dict,
    config_hash,
    gamma_membrane_experiment,
    membrane_instance,
    parse_eps,
    richardson,
    stark_instance,
    translation_instance,
)
from constrained_ot.grid import GridError
from constrained_ot.solver import SolverConfig


def test_richardson_removes_first_order_error():
    exact = 2.0
    vals = [exact + 0.3 / n + 0.1 / n**2 for n in (8, 16, 32, 64)]
    tab = richardson(vals)
    assert len(tab) == 4 and len(tab[-1]) == 1
    assert abs(tab[1][-1] - exact) < abs(vals[-1] - exact) / 10
    assert tab[2][-1] == pytest.approx(exact, abs=1e-14)


def test_parse_eps():
    assert parse_eps("1/4, 1/8,0.05") == [0.25, 0.125, 0.05]


def test_config_hash_is_stable():
    cfg = SolverConfig()
    a = config_hash("x", config_dict(cfg))
    assert a == config_hash("x", config_dict(SolverConfig(verbose=True)))
    assert a != config_hash("x", config_dict(SolverConfig(max_iter=10)))
    assert len(a) == 16


def test_instances_are_consistent():
    assert set(INSTANCES) >= {"stark-v1", "translation-v1", "twolevel-homog-v1"}
    st = stark_instance(64)
    assert st.g.nt == 16
    assert np.sum(st.rho0) == pytest.approx(np.sum(st.rho1))
    tr = translation_instance(64)
    assert np.sum(tr.rho0) * tr.g.dx[0] == pytest.approx(1.0)
    assert tr.exact == pytest.approx(0.25)
    mi = membrane_instance("block", 2.0, n=40, nt=8)
    strip = mi.strip(0.125)
    assert strip.g.shape[0] == 42
    assert np.sum(np.isfinite(strip.cap)) == 2
    with pytest.raises(GridError):
        mi.strip(0.1)
    with pytest.raises(ValueError):
        membrane_instance("ring")
    hi = HomogInstance(n=32, nt=8)
    inst = hi.at(0.25)
    assert np.all(inst.rho0 <= inst.cap)
    assert np.sum(inst.rho0) == pytest.approx(np.sum(inst.rho1))
    assert hi.level() == pytest.approx(1.4)


def test_report_json_is_deterministic_and_excludes_runtimes():
    kw = dict(instance={"name": "x"}, eps=[0.2, 0.1], energies=[1.2, 1.1], limit_energy=1.0,
              errors=[0.2, 0.1], config_hash="abc")
    a = ExperimentReport(**kw, runtimes=[1.0, 2.0])
    b = ExperimentReport(**kw, runtimes=[3.0, 4.0])
    assert a.to_json() == b.to_json()
    assert "runtimes" not in json.loads(a.to_json())
    assert a.decreasing()
    with pytest.raises(ValueError):
        ExperimentReport(**{**kw, "errors": [0.1]})


def test_small_gamma_membrane_run():
    inst = membrane_instance("block", 2.0, n=40, nt=8)
    rep = gamma_membrane_experiment([0.25, 0.125], 2.0, inst, SolverConfig(max_iter=3000))
    assert len(rep.energies) == 2
    assert rep.exact_limit == pytest.approx(1.5)
    assert all(e > 0 for e in rep.energies)
    assert rep.decreasing()


def test_gamma_membrane_reports_slice_distances():
    inst = membrane_instance("block", 2.0, n=40, nt=8)
    rep = gamma_membrane_experiment([0.125], 2.0, inst, SolverConfig(max_iter=3000))
    assert len(rep.errors) == 1
    d = rep.slice_l1[0]
    assert len(d) == inst.nt + 1
    # endpoints coincide under the shift identification
    assert d[0] == pytest.approx(0.0, abs=1e-12) and d[-1] == pytest.approx(0.0, abs=1e-12)
    assert all(v >= 0 for v in d)
    assert "slice_l1" in json.loads(rep.to_json())


def test_gamma_homog_uniform_cap_matches_limit():
    # h = 1 everywhere: every eps problem is the limit problem itself
    from constrained_ot.experiments import gamma_homog_experiment

    hi = HomogInstance(h_cell=(1.0, 1.0), m=0.8, n=32, nt=8, table_samples=32)
    rep = gamma_homog_experiment([0.25, 0.125], instance=hi, cfg=SolverConfig(certificate=False))
    assert rep.energies[0] == pytest.approx(rep.limit_energy, rel=2e-3)
    assert rep.energies[1] == pytest.approx(rep.limit_energy, rel=2e-3)
    assert len(rep.slice_l1[0]) == hi.nt + 1


def test_homogenised_energy_below_inf_cap_is_plain_transport():
    # density at most inf h: f_hom(m, U) = U^2/m and E_hom is the free cost
    from constrained_ot.homog import FhomTable, solve_homogenized_1d
    from constrained_ot.solver import solve_constrained

    hi = HomogInstance(m=0.8, n=32, nt=8, table_samples=32)
    g = hi.grid()
    b0, b1 = hi.blocks()
    table = FhomTable.build(np.asarray(hi.h_cell), hi.table_samples)
    cfg = SolverConfig(certificate=False)
    a = solve_homogenized_1d(0.8 * b0, 0.8 * b1, table, g, cfg)
    b = solve_constrained(0.8 * b0, 0.8 * b1, np.inf, g, cfg)
    assert a.energy == pytest.approx(b.energy, rel=2e-3)
