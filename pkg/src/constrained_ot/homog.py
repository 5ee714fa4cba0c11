"""Homogenised integrand of periodically capped transport.

The cell problem on the unit torus is

    f_hom(m, U) = inf { sum |W|^2 / nu : 0 <= nu <= h, mean(nu) = m,
                        div W = 0, mean(W) = U },

discretised with ``nu`` at cell centres and ``W`` on cell faces; each face
charges half of ``W_f^2`` to either neighbour, so a cell pays
``e_i / nu_i`` with ``e_i = (1/2) sum_{faces of i} W_f^2``.  In 1D the only
divergence-free field is ``W = U`` and ``f_hom = F(m) U^2`` with
``F(m) = inf sum 1/nu``, attained by water-filling ``nu = min(h, c)``.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import LinearOperator, cg

from .grid import PERIODIC, CapField, Grid, GridError
from .solver import InfeasibleError, Solution, SolverConfig, TransportPD, _cap_array, _check_endpoints, _finish


class CellProblemError(ValueError):
    """Invalid cell data, or a cap support that does not percolate."""


class CellInfeasibleError(CellProblemError):
    """Mass above the cap integral."""


def _cap_values(h) -> np.ndarray:
    v = h.values if isinstance(h, CapField) else np.asarray(h, dtype=float)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if np.any(np.isnan(v)) or np.any(v < 0):
        raise CellProblemError("caps must be nonnegative")
    if np.any(np.isinf(v)):
        raise CellProblemError("cell caps must be finite")
    return v


# ---------------------------------------------------------------------------
# water-filling
# ---------------------------------------------------------------------------


def _water_level(w: np.ndarray, h: np.ndarray, vol: float, m: float) -> float:
    """Exact ``s`` with ``sum min(h, s w) vol = m`` (``w >= 0``).

    ``M(s)`` is piecewise linear with breakpoints ``h_i / w_i``; the level
    is found by sorting them and solving on the bracketing piece.
    """
    pos = (w > 0) & (h > 0)
    wp, hp = w[pos], h[pos]
    bp = hp / wp
    order = np.argsort(bp, kind="stable")
    bp, wp, hp = bp[order], wp[order], hp[order]
    # below breakpoint k: cells < k are saturated, the rest grow like s w
    sat = np.concatenate([[0.0], np.cumsum(hp)]) * vol
    slope = np.concatenate([np.cumsum(wp[::-1])[::-1], [0.0]]) * vol
    mass_at = sat[:-1] + slope[:-1] * bp
    k = int(np.searchsorted(mass_at, m, side="left"))
    if k >= bp.size:
        raise CellInfeasibleError("mass exceeds the cap integral")
    return float((m - sat[k]) / slope[k])


def water_fill_1d(m: float, h) -> tuple[np.ndarray, float]:
    """``nu = min(h, c)`` with ``mean(nu) = m`` and ``F = mean(1/nu)``.

    ``h`` is sampled on the unit cell with uniform spacing and must be
    positive everywhere (a zero cap disconnects the line).
    """
    hv = _cap_values(h).reshape(-1)
    if np.any(hv <= 0):
        raise CellProblemError("1D caps must be positive on the whole cell")
    dx = 1.0 / hv.size
    total = float(np.sum(hv)) * dx
    if not m > 0:
        raise CellProblemError("mass must be positive")
    if m > total * (1 + 1e-12):
        raise CellInfeasibleError(f"mass {m} exceeds the cap integral {total}")
    if m >= total:
        nu = hv.copy()
    else:
        c = _water_level(np.ones_like(hv), hv, dx, m)
        nu = np.minimum(hv, c)
    return nu, float(np.sum(1.0 / nu) * dx)


# ---------------------------------------------------------------------------
# connectivity of the cap support
# ---------------------------------------------------------------------------


def _neighbours(shape):
    """Periodic grid edges ``(cell, cell + e_j)`` with axis and wrap flag."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    out = []
    for j in range(len(shape)):
        nb = np.roll(idx, -1, axis=j)
        wrap = np.zeros(shape, dtype=bool)
        sl = [slice(None)] * len(shape)
        sl[j] = -1
        wrap[tuple(sl)] = True
        out.append((idx.reshape(-1), nb.reshape(-1), j, wrap.reshape(-1)))
    return out


def _lattice_is_full(gens: list, d: int) -> bool:
    """Whether integer vectors generate all of ``Z^d`` (gcd of the d x d minors is 1)."""
    gens = [tuple(int(x) for x in v) for v in gens if any(v)]
    gens = list(dict.fromkeys(gens))
    if d == 1:
        return np.gcd.reduce([abs(v[0]) for v in gens] + [0]) == 1
    if d == 2:
        g = 0
        for a in range(len(gens)):
            for b in range(a + 1, len(gens)):
                g = np.gcd(g, abs(gens[a][0] * gens[b][1] - gens[a][1] * gens[b][0]))
                if g == 1:
                    return True
        return g == 1
    raise CellProblemError("cells of dimension 1 or 2 only")


def support_percolates(h) -> bool:
    """``{h > 0}`` lifted to ``R^d`` is connected.

    Flood fill on the periodic grid graph recording the lattice offset of
    every visited cell; each edge closing a loop contributes a period, and
    the lift is connected iff the support is connected on the torus and the
    periods generate ``Z^d``.
    """
    hv = _cap_values(h)
    shape, d = hv.shape, hv.ndim
    supp = (hv > 0).reshape(-1)
    if not np.any(supp):
        return False
    n = supp.size
    adj = [[] for _ in range(n)]
    for a, b, j, wrap in _neighbours(shape):
        for u, v, w in zip(a, b, wrap):
            if supp[u] and supp[v]:
                step = np.zeros(d, dtype=int)
                step[j] = 1 if w else 0
                adj[u].append((v, step))
                adj[v].append((u, -step))
    start = int(np.flatnonzero(supp)[0])
    off = {start: np.zeros(d, dtype=int)}
    queue = deque([start])
    periods = []
    while queue:
        u = queue.popleft()
        for v, step in adj[u]:
            o = off[u] + step
            if v not in off:
                off[v] = o
                queue.append(v)
            elif np.any(off[v] != o):
                periods.append(o - off[v])
    if len(off) != int(np.sum(supp)):
        return False
    return _lattice_is_full(periods, d)


# ---------------------------------------------------------------------------
# feasible flow
# ---------------------------------------------------------------------------


@dataclass
class FeasibleFlow:
    """Divergence-free face field with mean ``U`` supported in ``{h > 0}``.

    ``C = ||W||^2 / |U|^2``; ``C_emp`` additionally carries the factor
    ``max(1, int h / min_{h>0} h)`` so that ``f_hom <= C_emp |U|^2 / m``.
    """

    W: tuple
    C: float
    C_emp: float


def _cycle_flows(hv: np.ndarray, axis: int) -> np.ndarray:
    """Average over start cells of unit flows along shortest lifted cycles
    ``x -> x + e_axis`` through the support; returns per-axis face arrays."""
    shape, d = hv.shape, hv.ndim
    n = hv.size
    supp = (hv > 0).reshape(-1)
    # lifted graph on offsets {-1, 0, 1}^d
    offs = np.array(np.meshgrid(*[[-1, 0, 1]] * d, indexing="ij")).reshape(d, -1).T
    no = len(offs)
    off_id = {tuple(o): k for k, o in enumerate(offs)}
    rows, cols, code = [], [], {}
    for a, b, j, wrap in _neighbours(shape):
        ok = supp[a] & supp[b]
        for k, o in enumerate(offs):
            o2 = o.copy()
            o2[j] += 1
            for u, v, w in zip(a[ok], b[ok], wrap[ok]):
                t = off_id.get(tuple(o2)) if w else k
                if t is None:
                    continue
                p, q = k * n + u, t * n + v
                rows += [p, q]
                cols += [q, p]
                # face index of the crossed face is the cell on its right
                code[(p, q)] = (j, v, 1.0)
                code[(q, p)] = (j, v, -1.0)
    G = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(no * n, no * n))
    zero = off_id[(0,) * d]
    e = [0] * d
    e[axis] = 1
    target = off_id[tuple(e)]
    starts = np.flatnonzero(supp)
    dist, pred = csgraph.shortest_path(G, unweighted=True, indices=zero * n + starts, return_predecessors=True)
    W = [np.zeros(n) for _ in range(d)]
    used = 0
    for r, s in enumerate(starts):
        node = target * n + s
        if not np.isfinite(dist[r, node]):
            continue
        used += 1
        while node != zero * n + s:
            p = pred[r, node]
            j, face, sign = code[(p, node)]
            W[j][face] += sign
            node = p
    if used == 0:
        raise CellProblemError("support does not percolate")
    return [w.reshape(shape) / used for w in W]


def build_feasible_flow(U, h) -> FeasibleFlow:
    """Feasible cell flow with mean ``U`` built from lattice cycles.

    For each axis a unit circulation is routed along a shortest periodic
    lattice cycle through the support; averaging these over all start
    cells is a divergence- and mean-preserving smoothing.  The axis flows
    are superposed with weights ``U_j``.
    """
    hv = _cap_values(h)
    d = hv.ndim
    U = np.atleast_1d(np.asarray(U, dtype=float))
    if U.shape != (d,):
        raise CellProblemError(f"U must have {d} components")
    if not support_percolates(hv):
        raise CellProblemError("the cap support is disconnected")
    n = np.array(hv.shape)
    vol = 1.0 / float(np.prod(n))
    if d == 1:
        W = (np.full(hv.shape, U[0]),)
    else:
        W = [np.zeros(hv.shape) for _ in range(d)]
        for j in range(d):
            if U[j] == 0:
                continue
            # one lattice crossing has mean 1 / prod_{i != j} n_i
            scale = U[j] * float(np.prod(n)) / n[j]
            for i, w in enumerate(_cycle_flows(hv, j)):
                W[i] += scale * w
        W = tuple(W)
    u2 = float(U @ U)
    norm2 = sum(float(np.sum(w * w)) for w in W) * vol
    C = norm2 / u2 if u2 > 0 else 1.0
    lo = float(np.min(hv[hv > 0]))
    return FeasibleFlow(W, C, C * max(1.0, float(np.sum(hv)) * vol / lo))


# ---------------------------------------------------------------------------
# cell problem
# ---------------------------------------------------------------------------


@dataclass
class CellConfig:
    """Alternating-minimisation controls for the cell problem."""

    tol_gap: float = 1e-10
    max_iter: int = 500
    cg_tol: float = 1e-12
    cg_maxiter: int = 5000


@dataclass
class CellProblemSolution:
    value: float
    nu: np.ndarray
    W: tuple
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _cell_energy(W, shape) -> np.ndarray:
    """``e_i = (1/2) sum_{faces of i} W_f^2`` (face k is the left face of cell k)."""
    e = np.zeros(shape)
    for j, w in enumerate(W):
        w2 = w * w
        e += 0.5 * (w2 + np.roll(w2, -1, axis=j))
    return e


def _divergence_periodic(W, n) -> np.ndarray:
    return sum((np.roll(w, -1, axis=j) - w) * n[j] for j, w in enumerate(W))


def _flow_step(nu: np.ndarray, U: np.ndarray, cfg: CellConfig):
    """Optimal divergence-free ``W`` with mean ``U`` for fixed ``nu``.

    A face pays ``W^2 (1/nu_L + 1/nu_R) / 2``, i.e. conductivity ``kappa``
    is the harmonic mean.  Correctors ``chi_j`` solve
    ``div(kappa (e_j + grad chi_j)) = 0``; the effective tensor ``A`` has
    columns ``mean(kappa (e_j + grad chi_j))`` and ``W = sum_j c_j W^j`` with
    ``A c = U``.
    """
    shape, d = nu.shape, nu.ndim
    n = np.array(shape)
    ncell = nu.size
    with np.errstate(divide="ignore"):
        inv = np.where(nu > 0, 1.0 / np.where(nu > 0, nu, 1.0), np.inf)
    kap = []
    for j in range(d):
        s = 0.5 * (inv + np.roll(inv, 1, axis=j))
        kap.append(np.where(np.isfinite(s), 1.0 / s, 0.0))
    # weighted graph Laplacian  L chi = -div(kappa grad chi)
    idx = np.arange(ncell).reshape(shape)
    rows, cols, vals = [], [], []
    for j in range(d):
        w = (kap[j] * n[j] * n[j]).reshape(-1)
        a, b = idx.reshape(-1), np.roll(idx, 1, axis=j).reshape(-1)
        rows += [a, b, a, b]
        cols += [a, b, b, a]
        vals += [w, w, -w, -w]
    L = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(ncell, ncell)
    )
    diag = L.diagonal()
    live = diag > 0
    Ll = L[live][:, live]
    dl = diag[live]
    pre = LinearOperator(Ll.shape, matvec=lambda x: x / dl)
    cols_W = []
    A = np.zeros((d, d))
    for j in range(d):
        # right-hand side  div(kappa e_j)
        rhs = _divergence_periodic([kap[j] if i == j else np.zeros(shape) for i in range(d)], n).reshape(-1)
        chi = np.zeros(ncell)
        if np.any(rhs[live] != 0):
            sol, info = cg(Ll, rhs[live], rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_maxiter, M=pre)
            if info != 0:
                raise CellProblemError("corrector solve did not converge")
            chi[live] = sol
        chi = chi.reshape(shape)
        Wj = []
        for i in range(d):
            grad = (chi - np.roll(chi, 1, axis=i)) * n[i]
            Wj.append(kap[i] * ((1.0 if i == j else 0.0) + grad))
        cols_W.append(Wj)
        A[:, j] = [float(np.mean(w)) for w in Wj]
    c = np.linalg.solve(A, U)
    W = tuple(sum(c[j] * cols_W[j][i] for j in range(d)) for i in range(d))
    return W


def _mass_step(e: np.ndarray, hv: np.ndarray, m: float) -> np.ndarray:
    """``nu = min(h, s sqrt(e))`` with ``mean(nu) = m`` (exact minimiser of
    ``sum e / nu`` under the cap and mass constraints)."""
    vol = 1.0 / hv.size
    r = np.sqrt(e)
    if np.sum(np.where(r > 0, hv, 0.0)) * vol <= m:
        # flow-carrying cells saturate; spread the rest by water-filling
        nu = np.where(r > 0, hv, 0.0)
        rest = m - float(np.sum(nu)) * vol
        if rest > 0:
            free = (r == 0) & (hv > 0)
            s = _water_level(free.astype(float), np.where(free, hv, 0.0), vol, rest)
            nu = np.where(free, np.minimum(hv, s), nu)
        return nu
    s = _water_level(r.reshape(-1), hv.reshape(-1), vol, m)
    return np.minimum(hv, s * r)


def _value(W, nu, shape) -> float:
    e = _cell_energy(W, shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(e > 0, e / np.where(nu > 0, nu, 1.0), 0.0)
        q = np.where((e > 0) & (nu <= 0), np.inf, q)
    return float(np.mean(q))


def f_hom_eval(m: float, U, h, cfg: CellConfig | None = None) -> CellProblemSolution:
    """Cell-problem value ``f_hom(m, U)`` (whole convention) with its minimisers.

    Alternates exact minimisation over ``W`` (periodic elliptic correctors)
    and over ``nu`` (water-filling on ``sqrt(e)``); every step lowers the
    jointly convex objective.  Iteration stops once the relative change of
    the value is below ``cfg.tol_gap``.
    """
    cfg = cfg or CellConfig()
    hv = _cap_values(h)
    d = hv.ndim
    U = np.atleast_1d(np.asarray(U, dtype=float))
    if U.shape != (d,):
        raise CellProblemError(f"U must have {d} components")
    total = float(np.mean(hv))
    if not m > 0:
        raise CellProblemError("mass must be positive")
    if m > total * (1 + 1e-12):
        raise CellInfeasibleError(f"mass {m} exceeds the cap integral {total}")
    if not support_percolates(hv):
        raise CellProblemError("the cap support is disconnected")
    shape = hv.shape
    if d == 1:
        nu, F = water_fill_1d(m, hv)
        W = (np.full(shape, U[0]),)
        return CellProblemSolution(F * float(U @ U), nu, W, 1, True, [F * float(U @ U)])
    nu = np.minimum(hv, _water_level(np.ones(hv.size), hv.reshape(-1), 1.0 / hv.size, min(m, total)))
    if not np.any(U):
        return CellProblemSolution(0.0, nu, tuple(np.zeros(shape) for _ in range(d)), 0, True, [0.0])
    history = []
    W = _flow_step(nu, U, cfg)
    value = _value(W, nu, shape)
    history.append(value)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        nu_new = _mass_step(_cell_energy(W, shape), hv, m)
        W_new = _flow_step(nu_new, U, cfg)
        v = _value(W_new, nu_new, shape)
        if v > value:
            # round-off floor of the corrector solves
            converged = True
            break
        nu, W = nu_new, W_new
        change = (value - v) / max(v, 1e-300)
        value = v
        history.append(value)
        if change < cfg.tol_gap:
            converged = True
            break
    return CellProblemSolution(value, nu, W, it, converged, history)


# ---------------------------------------------------------------------------
# 1D table and homogenised solver
# ---------------------------------------------------------------------------


@dataclass
class FhomTable:
    """Samples of ``F(m)`` on ``(0, int h]``.

    Between samples ``G = 1/F`` is interpolated linearly with ``G(0) = 0``;
    ``G`` is concave, so the interpolant stays concave and ``G(m) f^2``
    stays jointly convex in ``(m, f)``.
    """

    m: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.F = np.asarray(self.F, dtype=float)
        if self.m.ndim != 1 or self.m.shape != self.F.shape or self.m.size < 1:
            raise CellProblemError("table needs matching 1D m and F samples")
        if np.any(np.diff(self.m) <= 0) or self.m[0] <= 0:
            raise CellProblemError("m samples must be positive and increasing")
        if np.any(self.F <= 0):
            raise CellProblemError("F must be positive")
        self._mg = np.concatenate([[0.0], self.m])
        self._G = np.concatenate([[0.0], 1.0 / self.F])
        self._slope = np.diff(self._G) / np.diff(self._mg)

    @classmethod
    def build(cls, h, n: int = 64) -> "FhomTable":
        """Water-filling samples at ``n`` equispaced masses up to ``int h``."""
        hv = _cap_values(h).reshape(-1)
        total = float(np.mean(hv))
        m = total * np.arange(1, n + 1) / n
        return cls(m, np.array([water_fill_1d(mi, hv)[1] for mi in m]))

    @property
    def m_max(self) -> float:
        return float(self.m[-1])

    def G(self, m):
        """Interpolated mobility ``1/F`` (with ``G(0) = 0``)."""
        return np.interp(m, self._mg, self._G)

    def dG(self, m):
        k = np.clip(np.searchsorted(self._mg, m, side="right") - 1, 0, self._slope.size - 1)
        return self._slope[k]

    def __call__(self, m):
        """Interpolated ``F``; ``inf`` at ``m = 0``."""
        g = self.G(m)
        with np.errstate(divide="ignore"):
            return np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)

    def concave_inverse(self, tol: float = 1e-12) -> bool:
        """Midpoint test for concavity of ``1/F`` on consecutive samples."""
        m, g = self._mg, self._G
        if m.size < 3:
            return True
        # second divided differences of G on the (possibly uneven) grid
        s = np.diff(g) / np.diff(m)
        return bool(np.all(np.diff(s) <= tol * (1.0 + np.abs(s[1:]))))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "F"])
            for a, b in zip(self.m, self.F):
                w.writerow([repr(float(a)), repr(float(b))])
        return path

    @classmethod
    def from_csv(cls, path) -> "FhomTable":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([float(r["m"]) for r in rows]), np.array([float(r["F"]) for r in rows]))


def _table_prox(table: FhomTable, maxiter: int = 60):
    """Prox of ``f^2 / G(m)`` on ``0 <= m <= m_max``.

    For fixed ``m`` the momentum is ``f = f~ G / (G + 2 gamma)``; the
    remaining convex scalar ``f~^2 / (G + 2 gamma) + (m - m~)^2 / (2 gamma)``
    has an increasing derivative.  Its sign at the table nodes locates the
    minimiser's piece (or kink); inside a piece the derivative is smooth,
    increasing and concave, so Newton started at the right end converges
    monotonically.
    """
    mg, Gn, sl = table._mg, table._G, table._slope
    mmax = table.m_max

    def prox(mt, ft, gamma, axis, m0):
        shape = np.shape(mt)
        mt = np.asarray(mt, dtype=float).reshape(-1, 1)
        f2 = (np.asarray(ft, dtype=float) ** 2).reshape(-1, 1)
        # one-sided derivatives at the left and right node of every piece
        d_left = -f2 * sl / (Gn[:-1] + 2.0 * gamma) ** 2 + (mg[:-1] - mt) / gamma
        d_right = -f2 * sl / (Gn[1:] + 2.0 * gamma) ** 2 + (mg[1:] - mt) / gamma
        k = np.argmax(d_right > 0, axis=1)
        none = ~np.any(d_right > 0, axis=1)
        rows = np.arange(mt.shape[0])
        at_node = d_left[rows, k] >= 0
        m = np.where(none, mmax, mg[k])
        idx = np.flatnonzero(~none & ~at_node)
        if idx.size:
            kk = k[idx]
            a, b = mg[kk], mg[kk + 1]
            s, G0 = sl[kk], Gn[kk]
            mi, fi = mt[idx, 0], f2[idx, 0]
            x = b.copy()
            for _ in range(maxiter):
                q = G0 + s * (x - a) + 2.0 * gamma
                p = -fi * s / (q * q) + (x - mi) / gamma
                dp = 2.0 * fi * s * s / q**3 + 1.0 / gamma
                xn = np.clip(x - p / dp, a, b)
                done = np.abs(xn - x) <= 1e-15 * (np.abs(xn) + gamma)
                x = xn
                if np.all(done):
                    break
            m[idx] = x
        m = m.reshape(shape)
        G = table.G(m)
        return m, np.asarray(ft) * G / (G + 2.0 * gamma)

    return prox


def _table_cost(table: FhomTable):
    def cost(m, f):
        G = table.G(np.clip(m, 0.0, table.m_max))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(G > 0, f * f / np.where(G > 0, G, 1.0), np.where(f != 0, np.inf, 0.0))

    return cost


def solve_homogenized_1d(rho0, rho1, table: FhomTable, g: Grid, cfg: SolverConfig | None = None) -> Solution:
    """Minimise ``sum F(m) V^2`` over discrete continuity solutions on a 1D torus."""
    cfg = cfg or SolverConfig()
    if g.dim != 1 or g.topology != PERIODIC:
        raise GridError("the homogenised solver runs on a 1D periodic grid")
    cap = _cap_array(np.full(g.shape, table.m_max), g)
    rho0 = np.asarray(rho0, dtype=float)
    rho1 = np.asarray(rho1, dtype=float)
    if max(np.max(rho0), np.max(rho1)) > table.m_max * (1 + 1e-12):
        raise InfeasibleError("densities exceed the table range")
    _check_endpoints(rho0, rho1, cap, g)
    cfg = replace(cfg, certificate=False, face_mass="arithmetic")
    pd = TransportPD(g, rho0, rho1, cap, cfg, face_prox=_table_prox(table), face_cost=_table_cost(table))
    pd.run()
    return _finish(pd, rho0, rho1, cap, g, cfg)


def periodic_cap(h_cell, eps: float, g: Grid) -> CapField:
    """Tile the unit-cell cap ``1/eps`` times along every axis of ``g``."""
    hv = _cap_values(h_cell)
    if hv.ndim != g.dim:
        raise GridError("cell and grid dimensions differ")
    k = 1.0 / eps
    if abs(k - round(k)) > 1e-9 * k or round(k) < 1:
        raise GridError("1/eps must be a positive integer")
    k = int(round(k))
    vals = hv
    for j in range(g.dim):
        if abs(g.extent[j] - 1.0) > 1e-12:
            raise GridError("periodic caps need a unit torus")
        per = g.shape[j] / k
        if per != int(per) or int(per) % hv.shape[j]:
            raise GridError(f"{hv.shape[j]} cell samples do not divide {g.shape[j]} / {k} grid cells")
        vals = np.repeat(vals, int(per) // hv.shape[j], axis=j)
    vals = np.tile(vals, (k,) * g.dim)
    return CapField(vals)
