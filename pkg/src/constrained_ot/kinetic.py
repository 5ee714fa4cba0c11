"""Kinetic action |f|^2/m, its proximal map, and the cap projection.

Two normalisations of the action are in use.  ``WHOLE`` is |f|^2/m, the
one whose minimum is the squared Wasserstein distance; ``HALF`` is
|f|^2/(2m), natural for Lagrangians and dual problems.  Every function takes
the convention explicitly so a number never silently changes meaning.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .grid import DensityField, Grid, GridError, MomentumField, face_average


class ActionConvention(str, Enum):
    WHOLE = "whole"
    HALF = "half"

    @property
    def k(self) -> float:
        """Denominator factor: the action is |f|^2 / (k m)."""
        return 1.0 if self is ActionConvention.WHOLE else 2.0


WHOLE = ActionConvention.WHOLE
HALF = ActionConvention.HALF


def _conv(conv) -> ActionConvention:
    return conv if isinstance(conv, ActionConvention) else ActionConvention(conv)


def _sqnorm(f, m_ndim: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == m_ndim + 1:
        return np.sum(f * f, axis=-1)
    return f * f


def action_density(m, f, conv=WHOLE):
    """|f|^2/(k m) with the vacuum convention 0/0 = 0 and c/0 = +inf.

    Works elementwise on arrays; ``f`` may carry a trailing vector axis.
    """
    c = _conv(conv)
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < 0):
        raise ValueError("mass must be nonnegative")
    f2 = _sqnorm(f, m_arr.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(m_arr > 0, f2 / (c.k * np.where(m_arr > 0, m_arr, 1.0)), np.where(f2 > 0, np.inf, 0.0))
    return float(out) if out.ndim == 0 else out


def prox_action(m_tilde, f_tilde, gamma, conv=WHOLE, cap=None, m0=None, maxiter: int = 60):
    """Proximal map of the perspective action.

    Returns the minimiser of ``A(m, f) + ((m - m~)^2 + |f - f~|^2) / (2 gamma)``
    over ``0 <= m <= cap``.  For fixed ``m`` the optimal momentum is
    ``f = f~ k m / (k m + 2 gamma)``; eliminating it leaves a convex scalar
    problem in ``m`` whose stationarity condition is the cubic

        (m - m~) (k m + 2 gamma)^2 = k gamma |f~|^2.

    The cubic is convex and increasing for ``m >= m~`` and negative below,
    so Newton started anywhere right of ``max(m~, 0)`` converges to the
    single admissible root.  ``m0`` optionally warm-starts the iteration.
    Vacuum (``m = 0, f = 0``) is selected when ``m~ <= -k |f~|^2 / (4 gamma)``.
    """
    c = _conv(conv)
    k = c.k
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    mt = np.asarray(m_tilde, dtype=float)
    ft = np.asarray(f_tilde, dtype=float)
    vector = ft.ndim == mt.ndim + 1
    f2 = _sqnorm(ft, mt.ndim)
    mt, f2, gamma = np.broadcast_arrays(mt, f2, gamma)

    lo = np.maximum(mt, 0.0)
    hi = lo + k * f2 / (4.0 * gamma)
    x = hi.copy() if m0 is None else np.clip(np.asarray(m0, dtype=float), lo, hi)
    x = np.array(x, dtype=float).reshape(-1)
    lo_f, hi_f = lo.reshape(-1).copy(), hi.reshape(-1).copy()
    mt_f, g_f = mt.reshape(-1), gamma.reshape(-1)
    kg_f = (k * gamma * f2).reshape(-1)
    # Newton on the still-moving entries only
    idx = np.flatnonzero(hi_f > lo_f)
    for _ in range(maxiter):
        if idx.size == 0:
            break
        xi, mi, lo_i, hi_i = x[idx], mt_f[idx], lo_f[idx], hi_f[idx]
        q = k * xi + 2.0 * g_f[idx]
        d = xi - mi
        p = d * q * q - kg_f[idx]
        dp = q * q + 2.0 * k * d * q
        step = p / dp
        x_new = xi - step
        pos = p > 0
        hi_i = np.where(pos, np.minimum(hi_i, xi), hi_i)
        lo_i = np.where(pos, lo_i, np.maximum(lo_i, xi))
        # safeguard: bisect whenever Newton leaves the bracket
        bad = (x_new < lo_i) | (x_new > hi_i)
        x_new = np.where(bad, 0.5 * (lo_i + hi_i), x_new)
        x[idx], lo_f[idx], hi_f[idx] = x_new, lo_i, hi_i
        done = (np.abs(x_new - xi) <= 1e-15 * (np.abs(x_new) + g_f[idx])) | (hi_i - lo_i <= 1e-15 * hi_i)
        idx = idx[~done]
    x = x.reshape(mt.shape)

    vac = mt <= -k * f2 / (4.0 * gamma)
    m = np.where(vac, 0.0, x)
    if cap is not None:
        m = np.minimum(m, np.asarray(cap, dtype=float))
    shrink = np.where(m > 0, k * m / (k * m + 2.0 * gamma), 0.0)
    f = ft * (shrink[..., None] if vector else shrink)
    if m.ndim == 0:
        return float(m), (f if vector else float(f))
    return m, f


def project_cap(m, cap):
    """Clamp to ``[0, cap]``; ``cap`` may be ``inf``."""
    cap_arr = np.asarray(cap, dtype=float)
    if np.any(cap_arr < 0):
        raise ValueError("cap must be nonnegative")
    out = np.clip(m, 0.0, cap_arr)
    return float(out) if np.ndim(out) == 0 else out


def face_masses(rho: np.ndarray, g: Grid, axis: int) -> np.ndarray:
    """Face-and-midpoint-in-time interpolated density for the action."""
    fa = face_average(rho, axis, g.periodic)
    return 0.5 * (fa[1:] + fa[:-1])


def total_action(rho, V, conv=WHOLE, g: Grid | None = None, active=None) -> float:
    """Discrete kinetic action  sum_n sum_faces A(m_face, V) vol dt.

    ``active`` optionally restricts the sum to a per-axis face mask; wall
    faces never contribute.  Returns ``inf`` if momentum sits on a vacuum face.
    """
    if isinstance(rho, DensityField):
        g = rho.grid if g is None else g
        rho = rho.values
    if g is None:
        raise GridError("grid required")
    comps = V.values if isinstance(V, MomentumField) else (V if isinstance(V, (tuple, list)) else (V,))
    total = 0.0
    for j in range(g.dim):
        m = face_masses(np.asarray(rho, dtype=float), g, j)
        v = np.asarray(comps[j], dtype=float)
        mask = g.active_faces(j) if active is None else active[j]
        mask = np.broadcast_to(mask, v.shape)
        a = action_density(np.maximum(m[mask], 0.0), v[mask], conv)
        total += float(np.sum(a))
    return total * g.cell_volume * g.dt
