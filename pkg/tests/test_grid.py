import numpy as np
import pytest

from constrained_ot.grid import (
    BOX,
    PERIODIC,
    SPLIT,
    CapField,
    DensityField,
    Grid,
    GridError,
    InterfaceFlux,
    MomentumField,
    continuity_residual,
    divergence,
    export_csv_1d,
    face_average,
    face_average_adjoint,
    grad_axis,
    interface_source,
    load_field,
    save_field,
    total_mass,
)


@pytest.mark.parametrize("topology", [PERIODIC, BOX])
@pytest.mark.parametrize("shape", [(7,), (5, 4)])
def test_grad_is_minus_divergence_adjoint(topology, shape):
    g = Grid(shape, 3, topology=topology)
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((3,) + shape)
    V = tuple(rng.standard_normal((3,) + g.face_shape(j)) for j in range(g.dim))
    for j in range(g.dim):
        mask = np.broadcast_to(g.active_faces(j), V[j].shape)
        V = tuple(np.where(mask, v, 0.0) if i == j else v for i, v in enumerate(V))
    lhs = np.sum(phi * divergence(V, g))
    rhs = -sum(np.sum(grad_axis(phi, j, g.dx[j], g.periodic) * V[j]) for j in range(g.dim))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("periodic", [True, False])
def test_face_average_adjoint_pair(periodic):
    rng = np.random.default_rng(2)
    c = rng.standard_normal((2, 6))
    fa = face_average(c, 0, periodic)
    a = rng.standard_normal(fa.shape)
    assert np.sum(fa * a) == pytest.approx(np.sum(c * face_average_adjoint(a, 0, periodic)), rel=1e-12)


def test_divergence_conserves_mass_on_box():
    g = Grid((8, 5), 1, topology=BOX)
    rng = np.random.default_rng(3)
    V = tuple(np.where(g.active_faces(j), rng.standard_normal(g.face_shape(j)), 0.0) for j in range(2))
    assert abs(np.sum(divergence(V, g))) < 1e-12


def test_continuity_residual_of_exact_transport():
    g = Grid((10,), 2, topology=PERIODIC)
    rho = np.ones((3, 10))
    assert continuity_residual(rho, MomentumField.zeros(g), g=g) == 0.0
    V = np.zeros((2, 10))
    V[:, 3] = 1.0  # moves mass from cell 2 to cell 3
    rho2 = rho.copy()
    rho2[1, 2] -= g.dt * 10
    rho2[1, 3] += g.dt * 10
    rho2[2] = rho2[1]
    rho2[2, 2] -= g.dt * 10
    rho2[2, 3] += g.dt * 10
    assert continuity_residual(rho2, (V,), g=g) < 1e-12


def test_interface_source_moves_mass_across():
    g = Grid((6,), 1, topology=SPLIT, interface_index=3)
    s = interface_source(np.array([2.0]), g)
    assert s[0, 2] == pytest.approx(2.0 / g.dx[0])
    assert s[0, 3] == pytest.approx(-2.0 / g.dx[0])
    assert np.sum(s) == 0.0


def test_grid_validation():
    with pytest.raises(GridError):
        Grid((1,), 2)
    with pytest.raises(GridError):
        Grid((4,), 0)
    with pytest.raises(GridError):
        Grid((4,), 2, topology="torus")
    with pytest.raises(GridError):
        Grid((4,), 2, topology=SPLIT)
    with pytest.raises(GridError):
        Grid((4,), 2, topology=BOX, interface_index=2)
    with pytest.raises(GridError):
        Grid((4, 4, 4), 2)


def test_split_active_faces_exclude_interface():
    g = Grid((6,), 1, topology=SPLIT, interface_index=3)
    act = g.active_faces(0)
    assert not act[0] and not act[3]
    assert act[1] and act[4]


def test_fields_check_shapes():
    g = Grid((4,), 2, topology=BOX)
    with pytest.raises(GridError):
        DensityField(np.zeros((2, 4)), g)
    with pytest.raises(GridError):
        MomentumField((np.zeros((2, 4)),), g)
    with pytest.raises(GridError):
        InterfaceFlux(np.zeros(2), g)
    with pytest.raises(GridError):
        CapField(np.array([1.0, -1.0]))
    with pytest.raises(GridError):
        CapField(np.array([1.0, 3.0]), alpha=0.5)
    rho = DensityField(np.ones((3, 4)), g)
    assert total_mass(rho, 2) == pytest.approx(1.0)


def test_save_load_round_trip(tmp_path):
    g = Grid((5, 3), 4, lower=(-1.0, 0.0), extent=(2.0, 3.0), topology=BOX)
    vals = np.random.default_rng(4).random((5, 3))
    p = save_field(tmp_path / "rho.bin", vals, g, note="x")
    arr, g2, side = load_field(p)
    assert np.array_equal(arr, vals)
    assert g2 == g
    assert side["note"] == "x"


def test_export_csv(tmp_path):
    g = Grid((3,), 2, topology=BOX)
    p = export_csv_1d(tmp_path / "f.csv", np.arange(9.0).reshape(3, 3), g)
    lines = p.read_text().strip().splitlines()
    assert lines[0] == "t,x,value"
    assert len(lines) == 10


def test_grid_json_round_trip():
    g = Grid((6,), 3, lower=(-1.0,), extent=(2.0,), topology=SPLIT, interface_index=2)
    assert Grid.from_json(g.to_json()) == g
    assert g.interface_coordinate == pytest.approx(-1.0 + 2 * (2.0 / 6))
