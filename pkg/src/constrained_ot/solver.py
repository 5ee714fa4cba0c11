"""Primal-dual solver for capped dynamic optimal transport.

The discrete problem is

    min  sum_faces A(M(rho), V) + sum_interface f^2 / (alpha dx)
    s.t. (rho[n+1] - rho[n]) / dt + div V + source(f) = 0,   0 <= rho <= h,

with ``M`` the space-time face interpolation of the density.  Writing
``x = (rho, V, f)`` and ``K x = (M(rho), V, rho, f)``, the problem is
``min F(K x) + i_C(x)`` where ``C`` is the affine continuity constraint and
``F`` collects the pointwise terms (action, cap, flux cost).  Each
Chambolle-Pock iteration applies the prox of ``F*`` pointwise and then
projects onto ``C`` with one space-time Poisson solve (eigen-decomposition
in time, DCT/FFT in space).  The projection multiplier divided by the
primal step is the continuity potential; it feeds the dual certificate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import fft as sfft

from .grid import (
    SPLIT,
    CapField,
    DensityField,
    Grid,
    GridError,
    InterfaceFlux,
    MomentumField,
    divergence,
    face_any,
    face_average_adjoint,
    grad_axis,
    interface_source,
)
from .kinetic import HALF, WHOLE, action_density, face_masses, prox_action


class SolverError(ValueError):
    """Invalid solver input (mass mismatch, bad steps, unknown options)."""


class InfeasibleError(SolverError):
    """Endpoint data that no capped path can join."""


@dataclass
class SolverConfig:
    """Iteration controls.

    ``tol_residual`` bounds the relative continuity defect of the clipped
    iterate, ``max|residual| dt / max rho``; the returned fields are then
    repaired to round-off.  ``tol_gap`` is a relative energy tolerance.
    ``pd_tau``/``pd_sigma`` default to ``tau = pd_weight / L`` and
    ``sigma = 0.95 / (tau L^2)`` with ``L = ||K||`` from power iteration.

    ``face_caps="min"`` additionally caps each face mass by the smaller
    adjacent cell cap.  ``face_mass="split"`` charges a face between cells of
    different caps ``|V|^2/(2 m_L) + |V|^2/(2 m_R)`` with the time-averaged
    masses of the two neighbour cells (harmonic interpolation), which
    resolves a thin strip's series resistance exactly.
    """

    max_iter: int = 4000
    tol_residual: float = 1e-4
    tol_gap: float = 1e-5
    pd_tau: float | None = None
    pd_sigma: float | None = None
    pd_theta: float = 1.0
    pd_weight: float = 0.3
    check_every: int = 50
    face_caps: str = "none"
    face_mass: str = "arithmetic"
    certificate: bool = True
    verbose: bool = False

    def __post_init__(self):
        if self.max_iter < 1 or self.check_every < 1:
            raise SolverError("max_iter and check_every must be positive")
        if self.tol_residual <= 0 or self.tol_gap <= 0:
            raise SolverError("tolerances must be positive")
        if not 0.0 <= self.pd_theta <= 1.0:
            raise SolverError("pd_theta must lie in [0, 1]")
        if self.face_mass not in ("arithmetic", "split"):
            raise SolverError(f"unknown face mass rule {self.face_mass!r}")
        if self.face_caps not in FACE_CAP_RULES:
            raise SolverError(f"unknown face cap rule {self.face_caps!r}")
        for v in (self.pd_tau, self.pd_sigma):
            if v is not None and v <= 0:
                raise SolverError("step sizes must be positive")


@dataclass
class Solution:
    """Discrete minimiser and diagnostics.

    ``energy`` is in the whole convention.  ``phi`` is the half-convention
    continuity potential at half time steps.
    """

    rho: DensityField
    V: MomentumField
    flux: InterfaceFlux | None
    energy: float
    residual: float
    iterations: int
    dual_bound: float | None = None
    converged: bool = True
    phi: np.ndarray | None = None
    infeasibility: float = 0.0
    history: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "energy": self.energy,
            "residual": self.residual,
            "iterations": self.iterations,
            "dual_bound": self.dual_bound,
            "converged": self.converged,
            "infeasibility": self.infeasibility,
        }


# ---------------------------------------------------------------------------
# space-time Poisson solve for the continuity projection
# ---------------------------------------------------------------------------


class SpaceTimePoisson:
    """Pseudo-inverse of ``A A^T`` for the continuity operator ``A``.

    In space ``A A^T`` is the cell-centred Neumann (box, split) or periodic
    Laplacian, diagonalised by the DCT-II or the FFT.  An interface flux has
    the same stencil as an ordinary face, so split grids need no special
    case.  In time the operator depends on which density slices are free; it
    is small and is diagonalised densely.
    """

    def __init__(self, g: Grid, free_end: bool = False):
        nt, dt = g.nt, g.dt
        ncol = nt if free_end else nt - 1
        D = np.zeros((nt, ncol))
        for n in range(nt):
            if n < ncol:
                D[n, n] += 1.0 / dt
            if n >= 1:
                D[n, n - 1] -= 1.0 / dt
        mu, self.Q = np.linalg.eigh(D @ D.T)
        space = np.zeros(g.shape)
        for j in range(g.dim):
            n, h = g.shape[j], g.dx[j]
            k = np.arange(n)
            per = 2.0 if g.periodic else 1.0
            ev = (2.0 - 2.0 * np.cos(per * np.pi * k / n)) / h**2
            sh = [1] * g.dim
            sh[j] = n
            space = space + ev.reshape(sh)
        lam = mu.reshape((nt,) + (1,) * g.dim) + space
        self.inv = self._pinv(lam)
        self.inv_space = self._pinv(space)
        self.g = g

    @staticmethod
    def _pinv(lam):
        tiny = 1e-10 * float(np.max(lam))
        return np.where(lam > tiny, 1.0 / np.where(lam > tiny, lam, 1.0), 0.0)

    def _spectral(self, x, inv):
        axes = list(range(1, self.g.dim + 1))
        if self.g.periodic:
            return sfft.ifftn(sfft.fftn(x, axes=axes) * inv, axes=axes).real
        return sfft.idctn(sfft.dctn(x, type=2, axes=axes, norm="ortho") * inv, type=2, axes=axes, norm="ortho")

    def solve(self, r: np.ndarray) -> np.ndarray:
        x = self._spectral(np.tensordot(self.Q.T, r, axes=(1, 0)), self.inv)
        return np.tensordot(self.Q, x, axes=(1, 0))

    def solve_space(self, r: np.ndarray) -> np.ndarray:
        """Per-slice spatial Neumann/periodic Poisson solve (batched in time)."""
        return self._spectral(r, self.inv_space)


# ---------------------------------------------------------------------------
# generic engine
# ---------------------------------------------------------------------------

FaceProx = Callable[[np.ndarray, np.ndarray, float, int, np.ndarray | None], tuple[np.ndarray, np.ndarray]]
FaceCost = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _default_prox(caps):
    def prox(mt, ft, gamma, axis, m0):
        return prox_action(mt, ft, gamma, WHOLE, cap=None if caps is None else caps[axis], m0=m0)

    return prox


def _default_cost(m, f):
    return action_density(np.maximum(m, 0.0), f, WHOLE)


def _half_prox(mt, ft, gamma, axis, m0):
    return prox_action(mt, ft, gamma, HALF, m0=m0)


def _side(c: np.ndarray, axis: int, periodic: bool, which: str) -> np.ndarray:
    """Value of the left or right neighbour cell at every face (batched)."""
    ax = axis + 1
    if periodic:
        return np.roll(c, 1, axis=ax) if which == "left" else c
    pad = [(0, 0)] * c.ndim
    pad[ax] = (1, 0) if which == "left" else (0, 1)
    return np.pad(c, pad)


def _side_adjoint(a: np.ndarray, axis: int, periodic: bool, which: str) -> np.ndarray:
    ax = axis + 1
    if periodic:
        return np.roll(a, -1, axis=ax) if which == "left" else a
    n = a.shape[ax]
    keep = np.arange(1, n) if which == "left" else np.arange(0, n - 1)
    return np.take(a, keep, axis=ax)


def _cap_jump(cap: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """Faces whose two neighbour cells carry different caps."""
    c = cap[None]
    left = _side(c, axis, periodic, "left")[0]
    right = _side(c, axis, periodic, "right")[0]
    if not periodic:
        # wall faces have one neighbour only
        idx = [slice(None)] * cap.ndim
        idx[axis] = 0
        left[tuple(idx)] = right[tuple(idx)]
        idx[axis] = -1
        right[tuple(idx)] = left[tuple(idx)]
    return left != right


class TransportPD:
    """Chambolle-Pock iteration for one space-time transport problem.

    ``rho1=None`` leaves the terminal slice free; it is then handled by
    ``terminal_prox(v, gamma) -> argmin_r G(r) + |r - v|^2/(2 gamma)`` with
    ``G`` expressed per unit cell volume and time step.
    """

    def __init__(
        self,
        g: Grid,
        rho0: np.ndarray,
        rho1: np.ndarray | None,
        cap: np.ndarray,
        cfg: SolverConfig,
        alpha: float | None = None,
        face_prox: FaceProx | None = None,
        face_cost: FaceCost | None = None,
        terminal_prox: Callable | None = None,
        face_cap_values: list | None = None,
    ):
        self.g, self.cfg = g, cfg
        self.cap = np.broadcast_to(np.asarray(cap, dtype=float), g.shape)
        self.free_end = rho1 is None
        if self.free_end and terminal_prox is None:
            raise SolverError("free terminal slice needs a terminal prox")
        self.terminal_prox = terminal_prox
        self.split = g.topology == SPLIT
        if self.split and alpha is None:
            raise SolverError("split grids need a permeability alpha")
        self.alpha = alpha
        self.face_prox = face_prox or _default_prox(face_cap_values)
        self.face_cost = face_cost or _default_cost
        # faces carrying a momentum unknown, and the subset where motion is allowed
        self.open = [g.active_faces(j) for j in range(g.dim)]
        closed = self.cap <= 0
        self.active = [o & ~face_any(closed, j, g.periodic) for j, o in enumerate(self.open)]
        if cfg.face_mass == "split":
            if face_prox is not None:
                raise SolverError("split face masses need the standard action")
            self.sided = [act & _cap_jump(self.cap, j, g.periodic) for j, act in enumerate(self.active)]
        else:
            self.sided = [np.zeros_like(o) for o in self.open]
        self.plain = [o & ~sd for o, sd in zip(self.open, self.sided)]
        self.any_sided = any(bool(np.any(sd)) for sd in self.sided)
        self.poisson = SpaceTimePoisson(g, free_end=self.free_end)

        nt = g.nt
        rho = np.empty((nt + 1,) + g.shape)
        r1 = rho0 if rho1 is None else rho1
        for n in range(nt + 1):
            s = n / nt
            rho[n] = np.minimum((1 - s) * rho0 + s * r1, self.cap)
        self.rho = rho
        self.V = [np.zeros((nt,) + g.face_shape(j)) for j in range(g.dim)]
        self.f = np.zeros((nt,) + g.interface_shape()) if self.split else None
        self._project()

        zeros = lambda: [np.zeros_like(v) for v in self.V]  # noqa: E731
        self.y = {"a": zeros(), "b": zeros(), "c": np.zeros((nt - 1,) + g.shape)}
        if self.any_sided:
            # sided blocks live on the jump faces only, stored compressed
            packed = lambda: [np.zeros((nt, int(np.sum(sd)))) for sd in self.sided]  # noqa: E731
            self.y.update(aL=packed(), bL=packed(), aR=packed(), bR=packed())
        if self.free_end:
            self.y["T"] = np.zeros(g.shape)
        if self.split:
            self.y["f"] = np.zeros_like(self.f)
        self.m_last = {}
        self.z = None

        L = self.operator_norm()
        tau, sigma = cfg.pd_tau, cfg.pd_sigma
        if tau is None and sigma is None:
            tau = cfg.pd_weight / L
            sigma = 0.95 / (tau * L * L)
        elif tau is None:
            tau = 0.95 / (sigma * L * L)
        elif sigma is None:
            sigma = 0.95 / (tau * L * L)
        if tau * sigma * L * L > 1.0 + 1e-12:
            raise SolverError(f"pd_tau * pd_sigma * ||K||^2 = {tau * sigma * L * L:.3g} exceeds 1")
        self.tau, self.sigma, self.norm_K = float(tau), float(sigma), L

    # linear maps -----------------------------------------------------------
    def _K(self, rho, V, f):
        g = self.g
        out = {"a": [face_masses(rho, g, j) for j in range(g.dim)], "b": V, "c": rho[1 : g.nt]}
        if self.any_sided:
            mid = 0.5 * (rho[1:] + rho[:-1])
            sd = self.sided
            out["aL"] = [_side(mid, j, g.periodic, "left")[:, sd[j]] for j in range(g.dim)]
            out["aR"] = [_side(mid, j, g.periodic, "right")[:, sd[j]] for j in range(g.dim)]
            out["bL"] = out["bR"] = [V[j][:, sd[j]] for j in range(g.dim)]
        if self.free_end:
            out["T"] = rho[g.nt]
        if self.split:
            out["f"] = f
        return out

    def _KT(self, y):
        g, nt = self.g, self.g.nt
        r = np.zeros((nt + 1,) + g.shape)
        V = []
        for j in range(g.dim):
            ah = np.zeros((nt + 1,) + g.face_shape(j))
            ah[:-1] += 0.5 * y["a"][j]
            ah[1:] += 0.5 * y["a"][j]
            r += face_average_adjoint(ah, j, g.periodic)
            v = y["b"][j]
            if self.any_sided:
                sd = self.sided[j]
                aL, aR = np.zeros_like(v), np.zeros_like(v)
                aL[:, sd], aR[:, sd] = y["aL"][j], y["aR"][j]
                side = _side_adjoint(aL, j, g.periodic, "left") + _side_adjoint(aR, j, g.periodic, "right")
                r[:-1] += 0.5 * side
                r[1:] += 0.5 * side
                v = v.copy()
                v[:, sd] += y["bL"][j] + y["bR"][j]
            V.append(np.where(self.open[j], v, 0.0))
        r[1:nt] += y["c"]
        if self.free_end:
            r[nt] += y["T"]
        else:
            r[nt] = 0.0
        r[0] = 0.0
        return r, V, y.get("f")

    def operator_norm(self, iters: int = 50, seed: int = 0) -> float:
        """Power iteration for ``||K||`` restricted to the free unknowns."""
        g, nt = self.g, self.g.nt
        rng = np.random.default_rng(seed)
        rho = rng.standard_normal((nt + 1,) + g.shape)
        V = [np.where(self.open[j], rng.standard_normal(self.V[j].shape), 0.0) for j in range(g.dim)]
        f = rng.standard_normal(self.f.shape) if self.split else None
        est = 1.0
        for _ in range(iters):
            rho[0] = 0.0
            if not self.free_end:
                rho[nt] = 0.0
            nrm = np.sqrt(np.sum(rho**2) + sum(np.sum(v**2) for v in V) + (np.sum(f**2) if f is not None else 0.0))
            rho, V = rho / nrm, [v / nrm for v in V]
            f = f / nrm if f is not None else None
            k = self._K(rho, V, f)
            k["c"] = k["c"].copy()
            rho, V, f = self._KT(k)
            est = np.sqrt(
                np.sqrt(np.sum(rho**2) + sum(np.sum(v**2) for v in V) + (np.sum(f**2) if f is not None else 0.0))
            )
        return float(est) * 1.01

    def residual_field(self, rho, V, f) -> np.ndarray:
        g = self.g
        r = (rho[1:] - rho[:-1]) / g.dt + divergence(tuple(V), g)
        if self.split:
            r = r + interface_source(f, g)
        return r

    def _project(self):
        """Orthogonal projection of the free unknowns onto the continuity set."""
        g, nt = self.g, self.g.nt
        lam = self.poisson.solve(self.residual_field(self.rho, self.V, self.f))
        self.rho[1:nt] -= (lam[:-1] - lam[1:]) / g.dt
        if self.free_end:
            self.rho[nt] -= lam[nt - 1] / g.dt
        for j in range(g.dim):
            self.V[j] = np.where(self.open[j], self.V[j] + grad_axis(lam, j, g.dx[j], g.periodic), 0.0)
        if self.split:
            k = g.interface_index
            self.f = self.f - (lam[..., k - 1] - lam[..., k]) / g.dx[-1]
        return lam

    # one iteration ------------------------------------------------------------
    def _face_block(self, ua, ub, key, j, prox):
        s = self.sigma
        m, fj = prox(ua / s, ub / s, 1.0 / s, j, self.m_last.get((key, j)))
        self.m_last[(key, j)] = m
        return m, fj

    def _dual_step(self, rho_b, V_b, f_b):
        g, s, y = self.g, self.sigma, self.y
        Kx = self._K(rho_b, V_b, f_b)
        z = {"m": [], "f": []}
        for j in range(g.dim):
            ua = y["a"][j] + s * Kx["a"][j]
            ub = y["b"][j] + s * Kx["b"][j]
            m, fj = self._face_block(ua, ub, "a", j, self.face_prox)
            # faces without admissible motion: zero momentum, free mass
            act = self.active[j] & self.plain[j]
            m = np.where(act, m, np.maximum(ua / s, 0.0))
            fj = np.where(act, fj, 0.0)
            y["a"][j] = np.where(self.plain[j], ua - s * m, 0.0)
            y["b"][j] = np.where(self.plain[j], ub - s * fj, 0.0)
            z["m"].append(m)
            z["f"].append(fj)
            if self.any_sided:
                for side in ("L", "R"):
                    ua = y["a" + side][j] + s * Kx["a" + side][j]
                    ub = y["b" + side][j] + s * Kx["b" + side][j]
                    m, fj = self._face_block(ua, ub, side, j, _half_prox)
                    y["a" + side][j] = ua - s * m
                    y["b" + side][j] = ub - s * fj
                    z.setdefault("m" + side, []).append(m)
                    z.setdefault("f" + side, []).append(fj)
        uc = y["c"] + s * Kx["c"]
        y["c"] = uc - s * np.clip(uc / s, 0.0, self.cap)
        if self.free_end:
            uT = y["T"] + s * Kx["T"]
            zT = self.terminal_prox(uT / s, 1.0 / s)
            y["T"] = uT - s * zT
            z["T"] = zT
        if self.split:
            uf = y["f"] + s * Kx["f"]
            zf = (uf / s) / (1.0 + 2.0 / (s * self.alpha * g.dx[-1]))
            y["f"] = uf - s * zf
            z["flux"] = zf
        self.z = z

    def _primal_step(self):
        t = self.tau
        r, Vt, ft = self._KT(self.y)
        self.rho = self.rho - t * r
        self.V = [v - t * w for v, w in zip(self.V, Vt)]
        if self.split:
            self.f = self.f - t * ft
        return self._project()

    def energy_of_z(self) -> float:
        """Whole-convention cost of the auxiliary (prox) variables."""
        g, z = self.g, self.z
        e = 0.0
        for j in range(g.dim):
            mask = self.active[j] & self.plain[j]
            e += float(np.sum(self.face_cost(z["m"][j][:, mask], z["f"][j][:, mask])))
            if self.any_sided:
                for side in ("L", "R"):
                    e += 0.5 * float(np.sum(_default_cost(z["m" + side][j], z["f" + side][j])))
        if "flux" in z:
            e += float(np.sum(z["flux"] ** 2)) / (self.alpha * g.dx[-1])
        return e * g.cell_volume * g.dt

    def clipped(self):
        rho = self.rho.copy()
        last = self.g.nt + (1 if self.free_end else 0)
        rho[1:last] = np.clip(rho[1:last], 0.0, self.cap)
        return rho

    def feasible(self):
        """Nearby iterate that meets caps and continuity to round-off.

        Interior slices are clipped to ``[0, h]`` and their mass restored
        with a weight vanishing at both bounds; the momentum (and flux) then
        absorbs the remaining continuity defect through a minimal-norm
        gradient correction on each time slice.
        """
        g, nt = self.g, self.g.nt
        rho = self.clipped()
        target = float(np.sum(rho[0]))
        last = nt + (1 if self.free_end else 0)
        inf_cap = np.isinf(self.cap)
        safe_cap = np.where(inf_cap, 1.0, self.cap)
        for n in range(1, last):
            r = rho[n]
            deficit = target - float(np.sum(r))
            if deficit == 0.0:
                continue
            if deficit < 0:
                w = r
            else:
                w = np.where(inf_cap, r, r * (safe_cap - r) / np.where(self.cap > 0, safe_cap, 1.0))
            sw = float(np.sum(w))
            if sw > 0:
                rho[n] = np.clip(r + deficit * w / sw, 0.0, self.cap)
        res = self.residual_field(rho, self.V, self.f)
        psi = self.poisson.solve_space(res)
        V = [np.where(self.open[j], self.V[j] + grad_axis(psi, j, g.dx[j], g.periodic), 0.0) for j in range(g.dim)]
        f = self.f
        if self.split:
            k = g.interface_index
            f = f - (psi[..., k - 1] - psi[..., k]) / g.dx[-1]
        return rho, V, f

    def infeasibility(self) -> float:
        """Relative mass defect per step of the clipped iterate."""
        res = float(np.max(np.abs(self.residual_field(self.clipped(), self.V, self.f))))
        scale = max(float(np.max(np.abs(self.rho))), 1e-300)
        return res * self.g.dt / scale

    def certified_gap(self, rho0, rho1) -> tuple[float, float]:
        """(dual bound in the half convention, relative gap) for fixed endpoints."""
        lam = self.last_lam
        phi = repair_potential(lam / (2.0 * self.tau), self.cap, self.g)
        bound = dual_objective(phi, rho0, rho1, self.cap, self.g, alpha=self.alpha)
        e = self.energy_of_z()
        return bound, abs(e - 2.0 * bound) / (1.0 + abs(e))

    def run(self, callback: Callable | None = None):
        """Iterate until the clipped iterate is feasible to ``tol_residual``
        and either the energy stagnates over one check window or the dual
        certificate closes the gap, both to ``tol_gap``."""
        cfg = self.cfg
        rho_b, V_b, f_b = self.rho.copy(), [v.copy() for v in self.V], self.f
        e_prev = np.inf
        history = []
        converged = False
        it = 0
        th = cfg.pd_theta
        certify = cfg.certificate and not self.free_end
        rho0, rho1 = self.rho[0].copy(), self.rho[-1].copy()
        for it in range(1, cfg.max_iter + 1):
            self._dual_step(rho_b, V_b, f_b)
            rho_old, V_old, f_old = self.rho, self.V, self.f
            self.last_lam = self._primal_step()
            rho_b = self.rho + th * (self.rho - rho_old)
            V_b = [v + th * (v - w) for v, w in zip(self.V, V_old)]
            f_b = self.f + th * (self.f - f_old) if self.split else None
            if it % cfg.check_every == 0 or it == cfg.max_iter:
                e = self.energy_of_z()
                infeas = self.infeasibility()
                gap = np.inf
                if certify and infeas <= cfg.tol_residual:
                    gap = self.certified_gap(rho0, rho1)[1]
                history.append((it, e, infeas, gap))
                if cfg.verbose:
                    print(f"iter {it:6d}  energy {e:.8f}  infeasibility {infeas:.2e}  gap {gap:.2e}")
                if callback is not None:
                    callback(self, it, e, infeas)
                stalled = abs(e - e_prev) <= cfg.tol_gap * (1.0 + abs(e))
                if infeas <= cfg.tol_residual and (stalled or gap <= cfg.tol_gap):
                    converged = True
                    break
                e_prev = e
        self.history = history
        self.iterations = it
        self.converged = converged
        # continuity multiplier of the last projection, in half convention
        self.phi = self.last_lam / (2.0 * self.tau)
        return converged


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _cap_array(h, g: Grid) -> np.ndarray:
    vals = h.values if isinstance(h, CapField) else np.asarray(h, dtype=float)
    vals = np.broadcast_to(vals, g.shape).astype(float)
    if np.any(np.isnan(vals)) or np.any(vals < 0):
        raise SolverError("caps must be nonnegative")
    return vals


def _check_endpoints(rho0, rho1, cap, g: Grid):
    for name, r in (("rho0", rho0), ("rho1", rho1)):
        if r.shape != g.shape:
            raise GridError(f"{name} has shape {r.shape}, expected {g.shape}")
        if np.any(r < 0):
            raise SolverError(f"{name} must be nonnegative")
        if np.any(r > cap * (1 + 1e-12) + 1e-300):
            raise InfeasibleError(f"{name} violates the cap")
    m0, m1 = float(np.sum(rho0)), float(np.sum(rho1))
    if abs(m0 - m1) > 1e-10 * max(abs(m0), abs(m1), 1e-300):
        raise SolverError(f"endpoint masses differ: {m0 * g.cell_volume} vs {m1 * g.cell_volume}")


def _boundary_warning(rho: np.ndarray, g: Grid, noise: float = 0.0) -> str | None:
    """Truncation check for boxes standing in for unbounded domains.

    ``noise`` is the feasibility level of the iterate; densities below it
    at the boundary are solver round-off rather than truncation.
    """
    if g.periodic:
        return None
    peak = float(np.max(rho))
    worst = 0.0
    for j in range(g.dim):
        for end in (0, -1):
            worst = max(worst, float(np.max(np.take(rho, end, axis=j + 1))))
    if worst > 1e-8 * peak + noise:
        return f"boundary cells reach density {worst:.3g} (> 1e-8 of max {peak:.3g}); enlarge the box"
    return None


FACE_CAP_RULES = ("none", "min")


def face_caps(cap: np.ndarray, g: Grid, rule: str = "min") -> list | None:
    """Per-axis caps on the interpolated face masses.

    ``min`` takes the smaller adjacent cell cap (wall faces see one cell);
    ``none`` returns ``None``.
    """
    if rule not in FACE_CAP_RULES:
        raise SolverError(f"unknown face cap rule {rule!r}")
    if rule == "none":
        return None
    c = cap[None]
    out = []
    for j in range(g.dim):
        left = _side(c, j, g.periodic, "left")[0]
        right = _side(c, j, g.periodic, "right")[0]
        if not g.periodic:
            idx = [slice(None)] * g.dim
            idx[j] = 0
            left[tuple(idx)] = np.inf
            idx[j] = -1
            right[tuple(idx)] = np.inf
        out.append(np.minimum(left, right))
    return out


def _finish(pd: TransportPD, rho0, rho1, cap, g: Grid, cfg: SolverConfig) -> Solution:
    rho, Vs, fs = pd.feasible()
    res = float(np.max(np.abs(pd.residual_field(rho, Vs, fs))))
    V = MomentumField(tuple(Vs), g)
    flux = InterfaceFlux(fs, g) if pd.split else None
    msgs = []
    if not pd.converged:
        msgs.append(f"not converged after {pd.iterations} iterations (residual {res:.3g})")
        warnings.warn(msgs[-1], RuntimeWarning, stacklevel=3)
    w = _boundary_warning(rho, g, noise=pd.infeasibility() * float(np.max(np.abs(pd.rho))))
    if w:
        msgs.append(w)
        warnings.warn(w, RuntimeWarning, stacklevel=3)
    bound = None
    if cfg.certificate and rho1 is not None:
        phi = repair_potential(pd.phi, cap, g)
        bound = dual_objective(phi, rho0, rho1, cap, g, alpha=pd.alpha)
    return Solution(
        rho=DensityField(rho, g),
        V=V,
        flux=flux,
        energy=pd.energy_of_z(),
        residual=res,
        iterations=pd.iterations,
        dual_bound=bound,
        converged=pd.converged,
        phi=pd.phi,
        infeasibility=pd.infeasibility(),
        history=pd.history,
        messages=msgs,
    )


def solve_constrained(rho0, rho1, h, g: Grid, cfg: SolverConfig | None = None) -> Solution:
    """Minimal capped Benamou-Brenier action between two density slices.

    ``rho0``/``rho1`` are densities on ``g``; ``h`` a :class:`CapField` or
    array.  Returns the best iterate with ``converged=False`` (and a
    ``RuntimeWarning``) if the tolerances are not met within ``max_iter``.
    """
    cfg = cfg or SolverConfig()
    if g.topology == SPLIT:
        raise SolverError("use solve_membrane_limit on split grids")
    rho0 = np.asarray(rho0, dtype=float)
    rho1 = np.asarray(rho1, dtype=float)
    cap = _cap_array(h, g)
    _check_endpoints(rho0, rho1, cap, g)
    fc = face_caps(cap, g, cfg.face_caps)
    pd = TransportPD(g, rho0, rho1, cap, cfg, face_cap_values=fc)
    pd.run()
    return _finish(pd, rho0, rho1, cap, g, cfg)


# ---------------------------------------------------------------------------
# dual certificate
# ---------------------------------------------------------------------------


def _kinetic_source(phi: np.ndarray, g: Grid, active: list) -> np.ndarray:
    """Per-cell, per-integer-time sum of (1/8)|grad phi|^2 over adjacent faces.

    This is the coefficient that pairs with the density when the momentum is
    minimised out of the half-convention Lagrangian.
    """
    nt = g.nt
    S = np.zeros((nt + 1,) + g.shape)
    for j in range(g.dim):
        gr = grad_axis(phi, j, g.dx[j], g.periodic)
        e = np.where(active[j], gr * gr, 0.0) / 8.0
        eh = np.zeros((nt + 1,) + g.face_shape(j))
        eh[:-1] += e
        eh[1:] += e
        # each adjacent face contributes once to each of its two cells
        S += 2.0 * face_average_adjoint(eh, j, g.periodic)
    return S


def _dual_terms(phi, cap, g: Grid):
    act = [g.active_faces(j, cap) for j in range(g.dim)]
    S = _kinetic_source(phi, g, act)
    Q = (phi[1:] - phi[:-1]) / g.dt + S[1:-1]
    return S, Q


def dual_objective(phi, rho0, rho1, h, g: Grid, alpha: float | None = None, tol: float = 1e-8) -> float:
    """Half-convention dual value of a continuity potential.

    ``phi`` holds the potential at the half time steps, shape
    ``(nt,) + g.shape``.  The value is

        <phi, rho1> - <phi, rho0>  -  sum h (d_t phi + |grad phi|^2/2)_+
        - (alpha/2) sum (jump of phi across the membrane)^2

    in its exact discrete form, so it is a lower bound for half the discrete
    optimal energy.  Returns ``-inf`` if the Hamilton-Jacobi inequality
    fails by more than ``tol`` where ``h = inf``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (g.nt,) + g.shape:
        raise GridError(f"phi has shape {phi.shape}, expected {(g.nt,) + g.shape}")
    cap = _cap_array(h, g)
    rho0 = np.asarray(rho0, dtype=float)
    rho1 = np.asarray(rho1, dtype=float)
    if rho0.shape != g.shape or rho1.shape != g.shape:
        raise GridError("endpoint shapes do not match the grid")
    S, Q = _dual_terms(phi, cap, g)
    dt = g.dt
    inf_cap = np.isinf(cap)
    if np.any(Q[:, inf_cap] > tol):
        return -np.inf
    Qp = np.where(inf_cap, 0.0, np.maximum(Q, 0.0))
    val = np.sum(rho1 * (phi[-1] / dt - S[-1])) + np.sum(rho0 * (-phi[0] / dt - S[0]))
    val -= np.sum(np.where(inf_cap, 0.0, cap) * Qp)
    if g.topology == SPLIT:
        if alpha is None:
            raise SolverError("split grids need alpha")
        k = g.interface_index
        jump = phi[..., k] - phi[..., k - 1]
        val -= alpha * np.sum(jump**2) / (2.0 * g.dx[-1])
    return float(val * g.cell_volume * dt)


def repair_potential(phi, h, g: Grid) -> np.ndarray:
    """Shift ``phi`` by a function of time only so the unconstrained region
    satisfies the Hamilton-Jacobi inequality; gradients are unchanged."""
    phi = np.array(phi, dtype=float)
    cap = _cap_array(h, g)
    inf_cap = np.isinf(cap)
    if not np.any(inf_cap):
        return phi
    _, Q = _dual_terms(phi, cap, g)
    worst = np.max(Q[:, inf_cap], axis=1)
    shift = np.concatenate([[0.0], -g.dt * np.cumsum(np.maximum(worst, 0.0))])
    return phi + shift.reshape((g.nt,) + (1,) * g.dim)


# ---------------------------------------------------------------------------
# stark constraint oracle
# ---------------------------------------------------------------------------


def stark_exact(m: float, lam: float, t: float) -> tuple[float, float]:
    """Closed-form optimal curve from ``m delta_0`` under the cap
    ``lam`` on the positive half-line (``inf`` on the negative one).

    The mass moves as a rigid block of density ``lam`` whose left end is
    ``x_t = (m/lam) t^(2/3) - m/lam``; the part of the block left of 0 is
    projected onto the origin.  Returns ``(x_t, energy)`` with the whole
    convention energy ``4/9 m^3/lam^2``.
    """
    if not m > 0 or not lam > 0:
        raise ValueError("need m > 0 and lam > 0")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    L = m / lam
    return L * t ** (2.0 / 3.0) - L, 4.0 / 9.0 * m**3 / lam**2


def stark_profile(m: float, lam: float, t: float, g: Grid) -> np.ndarray:
    """Exact stark density at time ``t`` averaged onto the cells of a 1D grid."""
    if g.dim != 1:
        raise GridError("stark profile is one-dimensional")
    x, _ = stark_exact(m, lam, t)
    h = g.dx[0]
    edges = g.lower[0] + h * np.arange(g.shape[0] + 1)
    lo, hi = edges[:-1], edges[1:]
    a, b = max(x, 0.0), x + m / lam
    overlap = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
    rho = lam * overlap / h
    # the mass parked at the origin sits in the cell just left of 0
    parked = m - lam * (b - a)
    if parked > 0:
        i = int(np.searchsorted(edges, 0.0)) - 1
        i = min(max(i, 0), g.shape[0] - 1)
        rho[i] += parked / h
    return rho
