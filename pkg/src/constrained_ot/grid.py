"""Staggered space-time grids, field containers and discrete operators.

Densities live at cell centers and integer time levels ``0..nt``; momenta
live on cell faces and half-integer time levels.  With this placement the
discrete continuity equation

    (rho[n+1] - rho[n]) / dt + div V[n+1/2] (+/- interface source) = 0

is an exact linear constraint on the unknowns.

Face indexing: along axis ``j`` face ``k`` is the left face of cell ``k``.
A periodic axis with ``n`` cells has ``n`` faces (face 0 joins cell n-1 and
cell 0); a bounded axis has ``n + 1`` faces, the outer two being no-flux
walls that never carry momentum.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PERIODIC = "periodic"
BOX = "box"
SPLIT = "split"
TOPOLOGIES = (PERIODIC, BOX, SPLIT)


class GridError(ValueError):
    """Raised on inconsistent grid or field shapes."""


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on a periodic cell, a box, or two glued boxes.

    ``split`` topology is a box whose last axis is cut by the membrane
    hyperplane at ``lower[-1] + interface_index * dx[-1]``; cells below
    the cut form the lower half-domain and cells above form the upper one.
    """

    shape: tuple[int, ...]
    nt: int
    lower: tuple[float, ...] = ()
    extent: tuple[float, ...] = ()
    topology: str = PERIODIC
    interface_index: int | None = None

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) not in (1, 2):
            raise GridError("only 1D and 2D grids are supported")
        if any(n < 2 for n in shape):
            raise GridError("need at least 2 cells per axis")
        if self.nt < 1:
            raise GridError("need nt >= 1")
        if self.topology not in TOPOLOGIES:
            raise GridError(f"unknown topology {self.topology!r}")
        lower = tuple(float(a) for a in self.lower) or (0.0,) * len(shape)
        extent = tuple(float(a) for a in self.extent) or (1.0,) * len(shape)
        if len(lower) != len(shape) or len(extent) != len(shape):
            raise GridError("lower/extent must match the dimension")
        if any(e <= 0 for e in extent):
            raise GridError("extent must be positive")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "extent", extent)
        if self.topology == SPLIT:
            k = self.interface_index
            if k is None or not 1 <= k <= shape[-1] - 1:
                raise GridError("split topology needs 1 <= interface_index < n_last")
        elif self.interface_index is not None:
            raise GridError("interface_index only applies to split topology")

    # geometry ---------------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple(e / n for e, n in zip(self.extent, self.shape))

    @property
    def dt(self) -> float:
        return 1.0 / self.nt

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def periodic(self) -> bool:
        return self.topology == PERIODIC

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    def centers(self, axis: int = 0) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        h = self.dx[axis]
        return self.lower[axis] + h * (np.arange(self.shape[axis]) + 0.5)

    def mesh(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*[self.centers(j) for j in range(self.dim)], indexing="ij")

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        if not self.periodic:
            s[axis] += 1
        return tuple(s)

    @property
    def interface_coordinate(self) -> float:
        if self.topology != SPLIT:
            raise GridError("grid has no interface")
        return self.lower[-1] + self.interface_index * self.dx[-1]

    def interface_shape(self) -> tuple[int, ...]:
        return self.shape[:-1]

    @property
    def interface_area(self) -> float:
        """Measure of one interface face (1 in 1D)."""
        return float(np.prod(self.dx[:-1])) if self.dim > 1 else 1.0

    def active_faces(self, axis: int, cap: np.ndarray | None = None) -> np.ndarray:
        """Boolean mask of faces that may carry momentum.

        Excludes wall faces, the interface faces of a split grid (the flux
        variable lives there instead) and faces touching a zero-cap cell.
        """
        mask = np.ones(self.face_shape(axis), dtype=bool)
        if not self.periodic:
            idx = [slice(None)] * self.dim
            idx[axis] = 0
            mask[tuple(idx)] = False
            idx[axis] = -1
            mask[tuple(idx)] = False
        if self.topology == SPLIT and axis == self.dim - 1:
            idx = [slice(None)] * self.dim
            idx[axis] = self.interface_index
            mask[tuple(idx)] = False
        if cap is not None:
            closed = np.asarray(cap) <= 0
            mask &= ~face_any(closed, axis, self.periodic)
        return mask

    def to_json(self) -> dict:
        return {
            "shape": list(self.shape),
            "nt": self.nt,
            "lower": list(self.lower),
            "extent": list(self.extent),
            "dx": list(self.dx),
            "dt": self.dt,
            "topology": self.topology,
            "interface_index": self.interface_index,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Grid":
        return cls(
            shape=tuple(d["shape"]),
            nt=int(d["nt"]),
            lower=tuple(d["lower"]),
            extent=tuple(d["extent"]),
            topology=d["topology"],
            interface_index=d.get("interface_index"),
        )


def face_any(mask: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Faces whose left or right neighbour cell is flagged in ``mask``."""
    if periodic:
        return mask | np.roll(mask, 1, axis=axis)
    pad = [(0, 0)] * mask.ndim
    pad[axis] = (1, 1)
    m = np.pad(mask, pad, constant_values=False)
    lo = [slice(None)] * mask.ndim
    hi = [slice(None)] * mask.ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return m[tuple(lo)] | m[tuple(hi)]


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------


@dataclass
class CapField:
    """Per-cell density cap; ``np.inf`` means unconstrained."""

    values: np.ndarray
    alpha: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(np.isnan(self.values)) or np.any(self.values < 0):
            raise GridError("caps must be nonnegative")
        if self.alpha is not None:
            if not 0 < self.alpha <= 1:
                raise GridError("alpha must lie in (0, 1]")
            v = self.values
            finite = np.isfinite(v) & (v > 0)
            if np.any(np.isinf(v)) or np.any(
                (v[finite] < self.alpha * (1 - 1e-12)) | (v[finite] > (1 + 1e-12) / self.alpha)
            ):
                raise GridError("caps must lie in {0} U [alpha, 1/alpha]")

    @classmethod
    def unconstrained(cls, g: Grid) -> "CapField":
        return cls(np.full(g.shape, np.inf))

    @classmethod
    def constant(cls, g: Grid, value: float) -> "CapField":
        return cls(np.full(g.shape, float(value)))


@dataclass
class DensityField:
    """Density trajectory, ``values[n]`` is the density at time ``n * dt``.

    Values are densities (mass per unit volume); cell masses are
    ``values * g.cell_volume``.
    """

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nt + 1,) + self.grid.shape:
            raise GridError(f"density shape {self.values.shape} does not match grid")


@dataclass
class MomentumField:
    """Face momenta per axis, ``values[j][n]`` at time ``(n + 1/2) * dt``."""

    values: tuple[np.ndarray, ...]
    grid: Grid

    def __post_init__(self):
        if isinstance(self.values, np.ndarray):
            self.values = (self.values,)
        self.values = tuple(np.asarray(v, dtype=float) for v in self.values)
        g = self.grid
        if len(self.values) != g.dim:
            raise GridError("need one momentum component per axis")
        for j, v in enumerate(self.values):
            if v.shape != (g.nt,) + g.face_shape(j):
                raise GridError(f"momentum component {j} has shape {v.shape}")

    @classmethod
    def zeros(cls, g: Grid) -> "MomentumField":
        return cls(tuple(np.zeros((g.nt,) + g.face_shape(j)) for j in range(g.dim)), g)


@dataclass
class InterfaceFlux:
    """Signed flux across the membrane, positive from lower to upper side."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.grid.topology != SPLIT:
            raise GridError("interface flux requires split topology")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nt,) + self.grid.interface_shape():
            raise GridError(f"flux shape {self.values.shape} does not match grid")
        if not np.all(np.isfinite(self.values)):
            raise GridError("flux must be finite")

    def l2_squared(self) -> float:
        return float(np.sum(self.values**2) * self.grid.interface_area * self.grid.dt)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def _div_axis(v: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    # v has a leading batch axis; ``axis`` refers to the spatial axis
    ax = axis + 1
    if periodic:
        return (np.roll(v, -1, axis=ax) - v) / h
    n = v.shape[ax]
    hi = np.take(v, np.arange(1, n), axis=ax)
    lo = np.take(v, np.arange(0, n - 1), axis=ax)
    # wall faces carry no flux
    idx_hi = [slice(None)] * v.ndim
    idx_hi[ax] = -1
    idx_lo = [slice(None)] * v.ndim
    idx_lo[ax] = 0
    hi = hi.copy()
    lo = lo.copy()
    hi[tuple(idx_hi)] = 0.0
    lo[tuple(idx_lo)] = 0.0
    return (hi - lo) / h


def grad_axis(phi: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    """Face gradient of a batched cell field; negative adjoint of the divergence."""
    ax = axis + 1
    if periodic:
        return (phi - np.roll(phi, 1, axis=ax)) / h
    pad = [(0, 0)] * phi.ndim
    pad[ax] = (1, 1)
    p = np.pad(phi, pad, mode="edge")
    lo = [slice(None)] * phi.ndim
    hi = [slice(None)] * phi.ndim
    lo[ax] = slice(0, -1)
    hi[ax] = slice(1, None)
    return (p[tuple(hi)] - p[tuple(lo)]) / h


def face_average(c: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Arithmetic mean of the two cells adjacent to each face (batched).

    Wall faces see a single cell and take half its value, which keeps the
    map the exact transpose partner of :func:`face_average_adjoint`.
    """
    ax = axis + 1
    if periodic:
        return 0.5 * (c + np.roll(c, 1, axis=ax))
    pad = [(0, 0)] * c.ndim
    pad[ax] = (1, 1)
    p = np.pad(c, pad)
    lo = [slice(None)] * c.ndim
    hi = [slice(None)] * c.ndim
    lo[ax] = slice(0, -1)
    hi[ax] = slice(1, None)
    return 0.5 * (p[tuple(lo)] + p[tuple(hi)])


def face_average_adjoint(a: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    ax = axis + 1
    if periodic:
        return 0.5 * (a + np.roll(a, -1, axis=ax))
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[ax] = slice(0, -1)
    hi[ax] = slice(1, None)
    return 0.5 * (a[tuple(lo)] + a[tuple(hi)])


def _momentum_arrays(V, g: Grid) -> tuple[np.ndarray, ...]:
    if isinstance(V, MomentumField):
        if V.grid.shape != g.shape or V.grid.topology != g.topology:
            raise GridError("momentum field belongs to a different grid")
        return V.values
    if isinstance(V, np.ndarray):
        V = (V,)
    return tuple(np.asarray(v, dtype=float) for v in V)


def divergence(V, g: Grid) -> np.ndarray:
    """Finite-volume divergence of face momenta.

    Accepts a :class:`MomentumField` or per-axis face arrays, either with a
    leading time axis or as a single snapshot.  Wall faces contribute 0.
    """
    comps = _momentum_arrays(V, g)
    if len(comps) != g.dim:
        raise GridError("need one momentum component per axis")
    snapshot = comps[0].ndim == g.dim
    out = None
    for j, v in enumerate(comps):
        vb = v[None] if snapshot else v
        if vb.shape[1:] != g.face_shape(j):
            raise GridError(f"component {j} has face shape {vb.shape[1:]}, expected {g.face_shape(j)}")
        d = _div_axis(vb, j, g.dx[j], g.periodic)
        out = d if out is None else out + d
    return out[0] if snapshot else out


def interface_source(flux: np.ndarray, g: Grid) -> np.ndarray:
    """Cell source term of an interface flux, batched over time.

    Positive flux removes mass from the lower neighbour cell and deposits it
    in the upper one; the source is ``+f/dx`` below and ``-f/dx`` above as
    it enters the residual ``d_t rho + div V + source``.
    """
    flux = np.asarray(flux, dtype=float)
    out = np.zeros(flux.shape[:1] + g.shape)
    k = g.interface_index
    h = g.dx[-1]
    out[..., k - 1] += flux / h
    out[..., k] -= flux / h
    return out


def continuity_residual(rho, V, f=None, g: Grid | None = None) -> float:
    """Max-norm residual of the discrete continuity equation."""
    if isinstance(rho, DensityField):
        g = rho.grid if g is None else g
        rho = rho.values
    if g is None:
        raise GridError("grid required")
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (g.nt + 1,) + g.shape:
        raise GridError("density does not match grid")
    res = (rho[1:] - rho[:-1]) / g.dt + divergence(V, g)
    if f is not None:
        if g.topology != SPLIT:
            raise GridError("interface flux given on a grid without interface")
        fv = f.values if isinstance(f, InterfaceFlux) else np.asarray(f, dtype=float)
        if fv.shape != (g.nt,) + g.interface_shape():
            raise GridError("flux shape mismatch")
        res = res + interface_source(fv, g)
    return float(np.max(np.abs(res)))


def total_mass(rho, t: int, g: Grid | None = None) -> float:
    if isinstance(rho, DensityField):
        g = rho.grid
        rho = rho.values
    if g is None:
        raise GridError("grid required")
    return float(np.sum(rho[t]) * g.cell_volume)


def slice_mass(slice_: np.ndarray, g: Grid) -> float:
    return float(np.sum(slice_) * g.cell_volume)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_field(path, values: np.ndarray, g: Grid, kind: str = "density", **meta) -> Path:
    """Write ``values`` as raw little-endian float64 plus a JSON sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(arr.tobytes(order="C"))
    side = {"kind": kind, "shape": list(arr.shape), "dtype": "float64-le", "order": "C"}
    side.update(g.to_json())
    side["shape"] = list(arr.shape)
    side["grid_shape"] = list(g.shape)
    side.update(meta)
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_field(path) -> tuple[np.ndarray, Grid, dict]:
    path = Path(path)
    side = json.loads(Path(str(path) + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(side["shape"]).copy()
    gd = dict(side)
    gd["shape"] = side["grid_shape"]
    return arr, Grid.from_json(gd), side


def export_csv_1d(path, values: np.ndarray, g: Grid, header: Sequence[str] = ("t", "x", "value")) -> Path:
    """Write a 1D space-time field as long-format CSV rows (t, x, value)."""
    if g.dim != 1:
        raise GridError("CSV export is for 1D fields")
    path = Path(path)
    values = np.asarray(values)
    x = g.centers(0)
    nt = values.shape[0]
    times = np.arange(nt) * g.dt if nt == g.nt + 1 else (np.arange(nt) + 0.5) * g.dt
    if values.shape[1] != x.size:
        # face-located data
        x = g.lower[0] + g.dx[0] * np.arange(values.shape[1])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(nt):
            for i in range(values.shape[1]):
                w.writerow([f"{times[n]:.10g}", f"{x[i]:.10g}", f"{values[n, i]:.17g}"])
    return path
