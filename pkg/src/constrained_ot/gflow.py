"""Gradient-flow steppers for the free energy ``RT int rho log rho + int rho psi``.

``jko_step`` is one minimising-movement step in the capped transport
metric, solved by the space-time primal-dual engine with a free terminal
slice.  ``pme_step`` is an explicit conservative step of the porous medium
equation and ``teorell_step`` an explicit step of two Fokker-Planck
equations coupled through a permeable membrane.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .grid import SPLIT, Grid, GridError
from .solver import InfeasibleError, SolverConfig, SolverError, TransportPD, _cap_array

LOG_FLOOR = 1e-30
# the per-step action is O(tau^2), far below the default stagnation scale
JKO_CONFIG = SolverConfig(tol_residual=1e-7, tol_gap=1e-9, max_iter=20000)


class CFLError(ValueError):
    """Explicit time step above the stability bound."""


@dataclass
class FreeEnergySpec:
    """``RT int rho log rho + int rho psi``; ``psi`` is per cell (or scalar)."""

    RT: float
    psi: np.ndarray | float = 0.0

    def __post_init__(self):
        if not self.RT > 0:
            raise ValueError("RT must be positive")
        self.psi = np.asarray(self.psi, dtype=float)
        if not np.all(np.isfinite(self.psi)):
            raise ValueError("psi must be finite")

    def chemical_potential(self, rho: np.ndarray) -> np.ndarray:
        """``RT log rho + psi`` with the log floored at ``1e-30``."""
        return self.RT * np.log(np.maximum(rho, LOG_FLOOR)) + self.psi

    def value(self, rho: np.ndarray, g: Grid) -> float:
        rho = np.asarray(rho, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(rho > 0, rho * np.log(np.where(rho > 0, rho, 1.0)), 0.0)
        return float(np.sum(self.RT * ent + rho * self.psi) * g.cell_volume)


# ---------------------------------------------------------------------------
# JKO
# ---------------------------------------------------------------------------


def _entropy_prox(RT: float, psi, c: float, cap):
    """Minimiser of ``(m - v)^2 / (2 gamma) + c (RT m log m + m psi)`` on ``[0, cap]``.

    Stationarity reads ``m + a log m = b`` with ``a = gamma c RT`` and
    ``b = v - gamma c (RT + psi)``, i.e. ``m = a w`` where
    ``w + log w = b/a - log a``.  That function of ``w`` is increasing and
    concave, so Newton from a point left of the root converges
    monotonically.
    """

    def prox(v, gamma):
        a = gamma * c * RT
        b = v - gamma * c * (RT + psi)
        L = np.maximum(b / a - np.log(a), -700.0)
        w = np.where(L < 1.0, np.exp(np.minimum(L, 1.0) - 1.0), L - np.log(np.maximum(L, 1.0)))
        w = np.maximum(w, 1e-300)
        for _ in range(100):
            step = (w + np.log(w) - L) * w / (w + 1.0)
            w = np.maximum(w - step, 1e-300)
            if np.all(np.abs(step) <= 1e-15 * w):
                break
        return np.minimum(a * w, cap)

    return prox


def jko_step(
    rho: np.ndarray,
    spec: FreeEnergySpec,
    tau: float,
    h,
    g: Grid,
    cfg: SolverConfig | None = None,
    nt_inner: int = 8,
) -> np.ndarray:
    """One minimising-movement step

        rho' = argmin_{rho' <= h}  W_h(rho, rho')^2 / (2 tau) + F(rho'),

    with ``W_h^2`` the capped kinetic action (whole convention) over unit
    pseudo-time on ``nt_inner`` slices.  The terminal slice is free; its
    prox is the pointwise entropy minimisation.  If the approximate
    minimiser does not lower ``F`` the input is returned, so
    ``F(rho') <= F(rho)`` always holds.  The default configuration is
    ``JKO_CONFIG``.
    """
    cfg = cfg or JKO_CONFIG
    if not tau > 0:
        raise SolverError("tau must be positive")
    if g.topology == SPLIT:
        raise GridError("jko_step runs on box or periodic grids")
    rho = np.asarray(rho, dtype=float)
    if rho.shape != g.shape:
        raise GridError(f"rho has shape {rho.shape}, expected {g.shape}")
    cap = _cap_array(h, g)
    if np.any(rho > cap * (1 + 1e-12) + 1e-300) or np.any(rho < 0):
        raise InfeasibleError("rho must satisfy 0 <= rho <= h")
    mass = float(np.sum(rho))
    if mass > float(np.sum(cap)) * (1 + 1e-12):
        raise InfeasibleError("mass exceeds the cap integral")
    gi = replace(g, nt=nt_inner)
    # objective divided by cell_volume * dt: per-cell terminal weight 2 tau / dt
    psi = np.broadcast_to(spec.psi, g.shape)
    prox = _entropy_prox(spec.RT, psi, 2.0 * tau / gi.dt, cap)
    pd = TransportPD(gi, rho, None, cap, replace(cfg, certificate=False), terminal_prox=prox)
    pd.run()
    new = pd.feasible()[0][-1]
    if spec.value(new, g) > spec.value(rho, g):
        return rho.copy()
    return new


# ---------------------------------------------------------------------------
# porous medium equation
# ---------------------------------------------------------------------------


def _face_diff(u: np.ndarray, axis: int, periodic: bool) -> np.ndarray:
    """``u_k - u_{k-1}`` on interior (or all periodic) faces."""
    if periodic:
        return u - np.roll(u, 1, axis=axis)
    return np.diff(u, axis=axis)


def _flux_divergence(J: np.ndarray, axis: int, dx: float, periodic: bool) -> np.ndarray:
    """Cell divergence of face fluxes ``J`` (zero-flux walls when not periodic)."""
    if periodic:
        return (np.roll(J, -1, axis=axis) - J) / dx
    pad = [(0, 0)] * J.ndim
    pad[axis] = (1, 1)
    return np.diff(np.pad(J, pad), axis=axis) / dx


def pme_cfl(rho: np.ndarray, beta: float, RT: float, g: Grid) -> float:
    """Largest stable step ``dx_min^2 / (2 d c_max)``.

    ``c_max`` is the largest chord slope of ``RT rho^(1-beta) / (1-beta)``
    between neighbouring cells (``RT rho^-beta`` on equal values), the
    effective face diffusivity of the scheme; below this step the update is
    monotone.
    """
    u = RT * np.power(np.maximum(rho, 0.0), 1.0 - beta) / (1.0 - beta)
    cmax = 0.0
    for j in range(g.dim):
        du = _face_diff(u, j, g.periodic)
        dr = _face_diff(rho, j, g.periodic)
        if g.periodic:
            hi = np.maximum(rho, np.roll(rho, 1, axis=j))
        else:
            a = np.take(rho, np.arange(1, rho.shape[j]), axis=j)
            b = np.take(rho, np.arange(0, rho.shape[j] - 1), axis=j)
            hi = np.maximum(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            chord = np.where(np.abs(dr) > 1e-14 * np.maximum(hi, 1e-300), du / dr, RT * np.power(np.maximum(hi, 1e-300), -beta))
        chord = np.where(hi > 0, chord, 0.0)
        cmax = max(cmax, float(np.max(chord)) if chord.size else 0.0)
    if cmax == 0.0:
        return np.inf
    return min(g.dx) ** 2 / (2.0 * g.dim * cmax)


def pme_step(rho: np.ndarray, beta: float, RT: float, dt: float, g: Grid) -> np.ndarray:
    """Explicit conservative step of ``d_t rho = RT/(1-beta) Lap rho^(1-beta)``.

    Face fluxes are differences of ``RT rho^(1-beta)/(1-beta)``; walls are
    zero-flux.  Any negative undershoot is clipped and the mass restored by
    rescaling, with a ``RuntimeWarning`` reporting the clipped mass.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if g.topology == SPLIT:
        raise GridError("pme_step runs on box or periodic grids")
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be nonnegative")
    limit = pme_cfl(rho, beta, RT, g)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3g} exceeds the stability bound {limit:.3g}")
    u = RT * np.power(rho, 1.0 - beta) / (1.0 - beta)
    out = rho.copy()
    for j in range(g.dim):
        J = _face_diff(u, j, g.periodic) / g.dx[j]
        out += dt * _flux_divergence(J, j, g.dx[j], g.periodic)
    if np.any(out < 0):
        neg = float(-np.sum(out[out < 0]) * g.cell_volume)
        total = float(np.sum(rho))
        out = np.maximum(out, 0.0)
        out *= total / float(np.sum(out))
        warnings.warn(f"clipped undershoot of mass {neg:.3g}", RuntimeWarning, stacklevel=2)
    return out


def heat_step(rho: np.ndarray, RT: float, dt: float, g: Grid, psi=0.0) -> np.ndarray:
    """Explicit Fokker-Planck step ``d_t rho = RT Lap rho + div(rho grad psi)``
    with the equilibrium-preserving fluxes of :func:`teorell_step`."""
    rho = np.asarray(rho, dtype=float)
    psi = np.broadcast_to(np.asarray(psi, dtype=float), rho.shape)
    return rho + dt * _fp_rate(rho, psi, RT, g.dx, g.periodic)


# ---------------------------------------------------------------------------
# membrane diffusion
# ---------------------------------------------------------------------------


def _log_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(a - b) / (log a - log b)``; ``a`` on the diagonal, ``0`` if either vanishes."""
    pos = (a > 0) & (b > 0)
    sa, sb = np.where(pos, a, 1.0), np.where(pos, b, 1.0)
    la, lb = np.log(sa), np.log(sb)
    close = np.abs(la - lb) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        lm = np.where(close, 0.5 * (sa + sb), (sa - sb) / np.where(close, 1.0, la - lb))
    return np.where(pos, lm, 0.0)


def _fp_rate(rho, psi, RT, dx, periodic) -> np.ndarray:
    """``RT Lap rho + div(rho grad psi)`` with walls, face density the log mean.

    The face flux ``RT (rho_k - rho_{k-1}) + lm (psi_k - psi_{k-1})``
    equals ``lm`` times the jump of the chemical potential exactly, so Gibbs
    states ``rho ~ exp(-psi/RT)`` are stationary to round-off.
    """
    rate = np.zeros_like(rho)
    for j in range(rho.ndim):
        if periodic:
            prev = np.roll(rho, 1, axis=j)
            pprev = np.roll(psi, 1, axis=j)
            lm = _log_mean(rho, prev)
            J = (RT * (rho - prev) + lm * (psi - pprev)) / dx[j]
        else:
            n = rho.shape[j]
            a, b = np.take(rho, np.arange(1, n), axis=j), np.take(rho, np.arange(0, n - 1), axis=j)
            pa, pb = np.take(psi, np.arange(1, n), axis=j), np.take(psi, np.arange(0, n - 1), axis=j)
            J = (RT * (a - b) + _log_mean(a, b) * (pa - pb)) / dx[j]
        rate += _flux_divergence(J, j, dx[j], periodic)
    return rate


def teorell_flux(mu_minus: np.ndarray, mu_plus: np.ndarray, alpha: float, RT: float, rt_factor: bool = False):
    """Membrane flux from the lower to the upper side, ``alpha (mu^- - mu^+)``.

    Mass runs down the chemical potential.  With ``rt_factor`` the boundary
    condition carries ``RT`` on the density-gradient side and the flux is
    divided by ``RT``.
    """
    f = alpha * (mu_minus - mu_plus)
    return f / RT if rt_factor else f


def teorell_step(
    rho_minus: np.ndarray,
    rho_plus: np.ndarray,
    spec_minus: FreeEnergySpec,
    spec_plus: FreeEnergySpec,
    alpha: float,
    RT: float | None,
    dt: float,
    g: Grid,
    teorell_rt_factor: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Explicit step of two Fokker-Planck equations glued by a membrane.

    Each half box diffuses with zero-flux walls; across the interface the
    flux ``teorell_flux`` leaves the lower cell next to the membrane and
    enters the upper one, so the total mass is conserved.  ``RT=None`` takes
    it from the specs (which must then agree).
    """
    if g.topology != SPLIT:
        raise GridError("teorell_step needs a split grid")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if RT is None:
        if spec_minus.RT != spec_plus.RT:
            raise ValueError("the two specs disagree on RT")
        RT = spec_minus.RT
    if not RT > 0:
        raise ValueError("RT must be positive")
    k, n = g.interface_index, g.shape[-1]
    lo, hi = g.shape[:-1] + (k,), g.shape[:-1] + (n - k,)
    rm = np.asarray(rho_minus, dtype=float)
    rp = np.asarray(rho_plus, dtype=float)
    if rm.shape != lo or rp.shape != hi:
        raise GridError(f"half-box shapes must be {lo} and {hi}")
    if np.any(rm < 0) or np.any(rp < 0):
        raise ValueError("densities must be nonnegative")
    limit = min(g.dx) ** 2 / (2.0 * g.dim * RT)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3g} exceeds the diffusive bound {limit:.3g}")
    psm = np.broadcast_to(spec_minus.psi, lo)
    psp = np.broadcast_to(spec_plus.psi, hi)
    new_m = rm + dt * _fp_rate(rm, psm, RT, g.dx, False)
    new_p = rp + dt * _fp_rate(rp, psp, RT, g.dx, False)
    if alpha > 0:
        am, ap = rm[..., -1], rp[..., 0]
        if np.any(am <= LOG_FLOOR) or np.any(ap <= LOG_FLOOR):
            raise ValueError("interface density at the log floor")
        mu_m = RT * np.log(am) + psm[..., -1]
        mu_p = RT * np.log(ap) + psp[..., 0]
        f = teorell_flux(mu_m, mu_p, alpha, RT, teorell_rt_factor)
        new_m[..., -1] -= dt * f / g.dx[-1]
        new_p[..., 0] += dt * f / g.dx[-1]
    return new_m, new_p
