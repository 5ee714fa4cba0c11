"""Effective permeable-membrane transport and the thin-strip caps it approximates.

Two half boxes are glued along the last axis.  Mass crosses the interface
through a signed flux ``f`` (positive from the lower to the upper side)
paying ``(1/alpha) sum f^2``; on each side it moves by ordinary kinetic
action.  The matching thin-membrane model replaces the interface by a strip
of width ``eps`` whose cap is ``alpha * eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .grid import BOX, SPLIT, CapField, Grid, GridError
from .solver import Solution, SolverConfig, SolverError, TransportPD, _cap_array, _check_endpoints, _finish


@dataclass
class MembraneProblem:
    """Endpoint densities on the two half boxes of a split grid.

    Slices have the half-box shapes ``shape[:-1] + (k,)`` (lower side) and
    ``shape[:-1] + (n - k,)`` (upper side), ``k`` being the interface index.
    """

    rho0_minus: np.ndarray
    rho0_plus: np.ndarray
    rho1_minus: np.ndarray
    rho1_plus: np.ndarray
    alpha: float
    g: Grid

    def __post_init__(self):
        g = self.g
        if g.topology != SPLIT:
            raise GridError("membrane problems live on split grids")
        if not self.alpha > 0:
            raise SolverError("alpha must be positive")
        k, n = g.interface_index, g.shape[-1]
        lo, hi = g.shape[:-1] + (k,), g.shape[:-1] + (n - k,)
        for name, want in (("rho0_minus", lo), ("rho1_minus", lo), ("rho0_plus", hi), ("rho1_plus", hi)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != want:
                raise GridError(f"{name} has shape {arr.shape}, expected {want}")
            setattr(self, name, arr)
        m0 = self.rho0_minus.sum() + self.rho0_plus.sum()
        m1 = self.rho1_minus.sum() + self.rho1_plus.sum()
        if abs(m0 - m1) > 1e-10 * max(abs(m0), abs(m1), 1e-300):
            raise SolverError("endpoint masses differ")

    @property
    def rho0(self) -> np.ndarray:
        return np.concatenate([self.rho0_minus, self.rho0_plus], axis=-1)

    @property
    def rho1(self) -> np.ndarray:
        return np.concatenate([self.rho1_minus, self.rho1_plus], axis=-1)

    def transferred_mass(self) -> float:
        """Net mass that must cross from the lower to the upper side."""
        return float((self.rho1_plus.sum() - self.rho0_plus.sum()) * self.g.cell_volume)


def solve_membrane_limit(p: MembraneProblem, cfg: SolverConfig | None = None, h=None) -> Solution:
    """Minimise kinetic action on both sides plus ``(1/alpha) sum f^2``.

    ``h`` optionally caps the densities on the glued array (unconstrained by
    default).  The returned ``Solution`` carries the interface flux.
    """
    cfg = cfg or SolverConfig()
    g = p.g
    cap = np.full(g.shape, np.inf) if h is None else _cap_array(h, g)
    rho0, rho1 = p.rho0, p.rho1
    _check_endpoints(rho0, rho1, cap, g)
    pd = TransportPD(g, rho0, rho1, cap, cfg, alpha=p.alpha)
    pd.run()
    return _finish(pd, rho0, rho1, cap, g, cfg)


def membrane_eps_cap(alpha: float, eps: float, g: Grid) -> CapField:
    """Cap ``alpha * eps`` on the strip ``0 < x_d < eps``, ``inf`` elsewhere.

    The strip must consist of whole cells: both ``0`` and ``eps`` have to
    fall on cell faces of the last axis.
    """
    if g.topology != BOX:
        raise GridError("the strip cap is defined on an ordinary box")
    if not alpha > 0:
        raise GridError("alpha must be positive")
    h = g.dx[-1]
    cells = eps / h
    if eps < h * (1 - 1e-9) or abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
        raise GridError(f"eps = {eps} is not a positive multiple of dx = {h}")
    start = -g.lower[-1] / h
    if abs(start - round(start)) > 1e-9 * max(1.0, abs(start)):
        raise GridError("x_d = 0 does not fall on a cell face")
    i0, k = int(round(start)), int(round(cells))
    if i0 < 0 or i0 + k > g.shape[-1]:
        raise GridError("strip leaves the grid")
    vals = np.full(g.shape, np.inf)
    vals[..., i0 : i0 + k] = alpha * eps
    return CapField(vals)


def crossing_density(alpha: float, c: float, t0: float, x0) -> float:
    """Density of crossing times and positions for a point source and sink
    on opposite sides of the membrane,
    ``(c - (alpha/2)|x0|^2 (1/t0 + 1/(1 - t0)))_+``."""
    if not 0.0 < t0 < 1.0:
        raise ValueError("t0 must lie in (0, 1)")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    r2 = float(np.sum(x0 * x0))
    return max(c - 0.5 * alpha * r2 * (1.0 / t0 + 1.0 / (1.0 - t0)), 0.0)


def _crossing_mass(alpha: float, c: float, dim_tangent: int, nt: int = 400, nr: int = 400) -> float:
    """Integral of the crossing density over ``(0,1) x R^k`` by quadrature.

    For each ``t0`` the support is the ball of radius
    ``sqrt(2c / (alpha s))``, ``s = 1/t0 + 1/(1-t0)``; the radial integral
    uses the midpoint rule on that (truncated) disk.
    """
    if dim_tangent == 0:
        return c
    t = (np.arange(nt) + 0.5) / nt
    s = 1.0 / t + 1.0 / (1.0 - t)
    R = np.sqrt(2.0 * c / (alpha * s))
    u = (np.arange(nr) + 0.5) / nr
    r = R[:, None] * u[None, :]
    dens = np.maximum(c - 0.5 * alpha * r * r * s[:, None], 0.0)
    if dim_tangent == 1:
        shell = 2.0 * np.ones_like(r)
    elif dim_tangent == 2:
        shell = 2.0 * np.pi * r
    else:
        raise ValueError("tangent dimension must be 0, 1 or 2")
    radial = np.sum(dens * shell, axis=1) * R / nr
    return float(np.mean(radial))


def normalize_crossing(alpha: float, dim: int) -> float:
    """The constant ``c`` for which the crossing density has unit mass."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    k = dim - 1
    if k == 0:
        return 1.0
    hi = 1.0
    while _crossing_mass(alpha, hi, k) < 1.0:
        hi *= 2.0
    return float(optimize.brentq(lambda c: _crossing_mass(alpha, c, k) - 1.0, 0.0, hi, xtol=1e-13))
