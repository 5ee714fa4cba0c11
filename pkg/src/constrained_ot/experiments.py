"""Named instances and the Gamma-convergence experiment harness."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from .grid import BOX, PERIODIC, SPLIT, Grid, GridError
from .homog import FhomTable, periodic_cap, solve_homogenized_1d, water_fill_1d
from .membrane import MembraneProblem, membrane_eps_cap, solve_membrane_limit
from .solver import SolverConfig, solve_constrained, stark_exact, stark_profile

# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------


@dataclass
class Instance:
    """Fixed-endpoint problem on a grid with an optional known limit."""

    name: str
    g: Grid
    rho0: np.ndarray
    rho1: np.ndarray
    cap: np.ndarray
    exact: float | None = None
    params: dict = field(default_factory=dict)

    def describe(self) -> dict:
        return {"name": self.name, "grid": self.g.to_json(), "exact": self.exact, "params": self.params}


def stark_instance(n: int = 512, nt: int | None = None, m: float = 1.0, lam: float = 1.0) -> Instance:
    """``stark-v1``: ``m delta_0`` spreads under the cap ``lam`` on ``x > 0``.

    The box ``[-L/6, 7L/6]`` (``L = m/lam``) puts the origin on a face;
    the initial delta sits in the cell just left of it.
    """
    nt = nt or n // 4
    L = m / lam
    g = Grid((n,), nt, lower=(-L / 6,), extent=(4 * L / 3,), topology=BOX)
    x = g.centers()
    cap = np.where(x < 0, np.inf, lam)
    return Instance(
        "stark-v1",
        g,
        stark_profile(m, lam, 0.0, g),
        stark_profile(m, lam, 1.0, g),
        cap,
        stark_exact(m, lam, 1.0)[1],
        {"m": m, "lam": lam},
    )


def translation_instance(n: int = 256, nt: int | None = None, shift: float = 0.5) -> Instance:
    """Unit-mass block of width 1/4 translated by ``shift`` in ``[0, 1]``, no cap."""
    nt = nt or n // 4
    g = Grid((n,), nt, lower=(0.0,), extent=(1.0,), topology=BOX)
    x = g.centers()
    a = 0.1
    rho0 = np.where((x > a) & (x < a + 0.25), 4.0, 0.0)
    rho1 = np.where((x > a + shift) & (x < a + shift + 0.25), 4.0, 0.0)
    return Instance(
        "translation-v1", g, rho0, rho1, np.full(n, np.inf), shift**2, {"shift": shift, "mass": 1.0}
    )


@dataclass
class MembraneInstance:
    """Membrane endpoints on ``[-L, L]`` glued at 0, and its strip versions."""

    name: str
    kind: str
    alpha: float
    n: int
    nt: int
    L: float = 1.25

    @property
    def dx(self) -> float:
        return 2 * self.L / self.n

    @property
    def exact(self) -> float:
        return 1.0 + 1.0 / self.alpha if self.kind == "block" else 1.0 / self.alpha

    def problem(self) -> MembraneProblem:
        g = Grid((self.n,), self.nt, lower=(-self.L,), extent=(2 * self.L,), topology=SPLIT, interface_index=self.n // 2)
        k = self.n // 2
        z = np.zeros(k)
        x = g.centers()[:k]
        if self.kind == "block":
            a0 = np.where((x > -1.0) & (x < 0.0), 1.0, 0.0)
            b1 = a0[::-1].copy()
        else:
            a0 = z.copy()
            a0[-1] = 1.0 / self.dx
            b1 = a0[::-1].copy()
        return MembraneProblem(a0, z, z.copy(), b1, self.alpha, g)

    def strip(self, eps: float) -> Instance:
        """Glued box ``[-L, L + eps]`` with the strip cap ``alpha eps`` on ``(0, eps)``
        and the upper endpoint shifted by ``eps``."""
        cells = eps / self.dx
        if abs(cells - round(cells)) > 1e-9 * max(cells, 1.0) or round(cells) < 1:
            raise GridError(f"eps = {eps} is not a positive multiple of dx = {self.dx}")
        k = int(round(cells))
        n = self.n + k
        g = Grid((n,), self.nt, lower=(-self.L,), extent=(n * self.dx,), topology=BOX)
        p = self.problem()
        half = self.n // 2
        rho0 = np.zeros(n)
        rho1 = np.zeros(n)
        rho0[:half] = p.rho0_minus
        rho0[half + k :] = p.rho0_plus
        rho1[:half] = p.rho1_minus
        rho1[half + k :] = p.rho1_plus
        cap = membrane_eps_cap(self.alpha, eps, g).values
        return Instance(f"{self.name}/eps={eps:g}", g, rho0, rho1, cap, None, {"eps": eps})

    def describe(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "alpha": self.alpha,
            "n": self.n,
            "nt": self.nt,
            "L": self.L,
            "exact": self.exact,
        }


def membrane_instance(kind: str = "block", alpha: float = 2.0, n: int = 200, nt: int = 64) -> MembraneInstance:
    """``block-membrane-v1``: unit block on ``(-1, 0)`` to ``(0, 1)``, limit
    ``1 + 1/alpha``.  ``point-membrane-v1``: unit point masses next to the
    membrane, limit ``1/alpha``."""
    if kind not in ("block", "point"):
        raise ValueError("membrane instances are 'block' or 'point'")
    return MembraneInstance(f"{kind}-membrane-v1", kind, alpha, n, nt)


@dataclass
class HomogInstance:
    """``twolevel-homog-v1``: caps 1 and 2 on the halves of the unit cell; a
    block at mean density ``m`` on ``[0, 1/2)`` of the unit torus, resolved
    at its microscopic optimum ``min(h_eps, c)``, translated by ``shift``."""

    name: str = "twolevel-homog-v1"
    h_cell: tuple = (1.0, 2.0)
    m: float = 1.2
    shift: float = 0.25
    n: int = 256
    nt: int = 64
    table_samples: int = 64

    def grid(self) -> Grid:
        return Grid((self.n,), self.nt, lower=(0.0,), extent=(1.0,), topology=PERIODIC)

    def blocks(self):
        x = self.grid().centers()
        b0 = (x > 0.0) & (x < 0.5)
        b1 = (x > self.shift) & (x < self.shift + 0.5)
        return b0, b1

    def level(self) -> float:
        return float(np.max(water_fill_1d(self.m, np.asarray(self.h_cell))[0]))

    def at(self, eps: float) -> Instance:
        g = self.grid()
        h = periodic_cap(np.asarray(self.h_cell), eps, g).values
        c = self.level()
        b0, b1 = self.blocks()
        rho0 = np.where(b0, np.minimum(h, c), 0.0)
        rho1 = np.where(b1, np.minimum(h, c), 0.0)
        return Instance(f"{self.name}/eps={eps:g}", g, rho0, rho1, h, None, {"eps": eps})

    def describe(self) -> dict:
        d = asdict(self)
        d["h_cell"] = list(self.h_cell)
        return d


INSTANCES = ("stark-v1", "translation-v1", "block-membrane-v1", "point-membrane-v1", "twolevel-homog-v1")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def config_dict(cfg: SolverConfig) -> dict:
    """Solver settings that affect results (``verbose`` does not)."""
    d = asdict(cfg)
    d.pop("verbose", None)
    return d


def config_hash(*parts) -> str:
    """SHA-256 over the canonical JSON of the given objects (first 16 hex digits)."""
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Fraction):
        return str(o)
    raise TypeError(f"not serialisable: {type(o)}")


@dataclass
class ExperimentReport:
    """Energies at each ``eps`` against the limit energy.

    ``errors[i] = |energies[i] - limit_energy|``.  ``slice_l1[i][n]`` is the
    L1 distance at grid time ``n`` between the eps-density and the limit
    density (see the experiment functions for the identification used).
    Runtimes are kept out of
    :meth:`to_json` so reports are byte-identical across runs.
    """

    instance: dict
    eps: list
    energies: list
    limit_energy: float
    errors: list
    config_hash: str
    converged: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    exact_limit: float | None = None
    slice_l1: list = field(default_factory=list)
    runtimes: list = field(default_factory=list)
    limit_runtime: float = 0.0

    def __post_init__(self):
        if len(self.errors) != len(self.eps) or len(self.energies) != len(self.eps):
            raise ValueError("one energy and one error per eps")
        if not all(np.isfinite(self.errors)):
            raise ValueError("errors must be finite")

    @property
    def exact_errors(self) -> list | None:
        if self.exact_limit is None:
            return None
        return [abs(e - self.exact_limit) for e in self.energies]

    def decreasing(self, exact: bool = False) -> bool:
        err = self.exact_errors if exact else self.errors
        return all(b < a for a, b in zip(err, err[1:]))

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "eps": [float(e) for e in self.eps],
            "energies": self.energies,
            "limit_energy": self.limit_energy,
            "errors": self.errors,
            "exact_limit": self.exact_limit,
            "exact_errors": self.exact_errors,
            "converged": self.converged,
            "iterations": self.iterations,
            "slice_l1": self.slice_l1,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_jsonable) + "\n"


def _solve(inst: Instance, cfg: SolverConfig):
    t = time.perf_counter()
    s = solve_constrained(inst.rho0, inst.rho1, inst.cap, inst.g, cfg)
    return s.energy, s.converged, s.iterations, time.perf_counter() - t, s.rho.values


def _run_all(insts, cfg, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_solve, insts, [cfg] * len(insts)))
    return [_solve(i, cfg) for i in insts]


def _strip_l1(rho_eps: np.ndarray, rho_lim: np.ndarray, dx: float, half: int) -> list:
    k = rho_eps.shape[1] - rho_lim.shape[1]
    outside = np.concatenate([rho_eps[:, :half], rho_eps[:, half + k :]], axis=1)
    d = np.sum(np.abs(outside - rho_lim), axis=1) + np.sum(rho_eps[:, half : half + k], axis=1)
    return [float(v) for v in d * dx]


def _cell_avg_l1(rho_eps: np.ndarray, rho_lim: np.ndarray, dx: float, eps: float) -> list:
    p = int(round(eps / dx))
    a = rho_eps.reshape(rho_eps.shape[0], -1, p).mean(axis=2)
    b = rho_lim.reshape(rho_lim.shape[0], -1, p).mean(axis=2)
    return [float(v) for v in np.sum(np.abs(a - b), axis=1) * p * dx]


# strips and layered caps are resolved with the two-sided face action
LAYERED = "split"
# thin strips converge slowly; the experiments default to a larger budget
EXPERIMENT_CONFIG = SolverConfig(max_iter=20000)


def gamma_membrane_experiment(
    eps_list,
    alpha: float = 2.0,
    instance: str | MembraneInstance = "block",
    cfg: SolverConfig | None = None,
    workers: int = 1,
) -> ExperimentReport:
    """Strip problems ``h^eps`` against the membrane limit ``E_0``.

    Slice distances drop the strip cells (the upper half-box is shifted back
    by eps) and add the mass held inside the strip, which collapses onto the
    membrane in the limit."""
    cfg = cfg or EXPERIMENT_CONFIG
    if isinstance(instance, str):
        kind = instance.split("-")[0]
        instance = membrane_instance(kind, alpha)
    elif instance.alpha != alpha:
        instance = replace(instance, alpha=alpha)
    eps_list = [float(e) for e in eps_list]
    strip_cfg = replace(cfg, face_mass=LAYERED)
    insts = [instance.strip(e) for e in eps_list]
    t = time.perf_counter()
    lim = solve_membrane_limit(instance.problem(), cfg)
    t_lim = time.perf_counter() - t
    runs = _run_all(insts, strip_cfg, workers)
    energies = [r[0] for r in runs]
    return ExperimentReport(
        instance=instance.describe(),
        eps=eps_list,
        energies=energies,
        limit_energy=lim.energy,
        errors=[abs(e - lim.energy) for e in energies],
        config_hash=config_hash("gamma-membrane", instance.describe(), eps_list, config_dict(strip_cfg)),
        converged=[bool(r[1]) for r in runs] + [bool(lim.converged)],
        iterations=[int(r[2]) for r in runs] + [int(lim.iterations)],
        exact_limit=instance.exact,
        slice_l1=[_strip_l1(r[4], lim.rho.values, insts[i].g.dx[0], instance.n // 2) for i, r in enumerate(runs)],
        runtimes=[r[3] for r in runs],
        limit_runtime=t_lim,
    )


def gamma_homog_experiment(
    eps_list,
    h_cell=None,
    instance: str | HomogInstance = "twolevel-homog-v1",
    cfg: SolverConfig | None = None,
    workers: int = 1,
) -> ExperimentReport:
    """Tiled caps ``h(x/eps)`` against the homogenised limit ``E_hom``.

    The eps-densities only converge weakly, so slice distances compare the
    averages of both densities over each period cell."""
    cfg = cfg or EXPERIMENT_CONFIG
    if isinstance(instance, str):
        if instance != "twolevel-homog-v1":
            raise ValueError(f"unknown homogenisation instance {instance!r}")
        instance = HomogInstance()
    if h_cell is not None:
        instance = replace(instance, h_cell=tuple(float(v) for v in np.asarray(h_cell).reshape(-1)))
    eps_list = [float(e) for e in eps_list]
    layered = replace(cfg, face_mass=LAYERED)
    insts = [instance.at(e) for e in eps_list]
    table = FhomTable.build(np.asarray(instance.h_cell), instance.table_samples)
    g = instance.grid()
    b0, b1 = instance.blocks()
    t = time.perf_counter()
    lim = solve_homogenized_1d(b0 * instance.m, b1 * instance.m, table, g, cfg)
    t_lim = time.perf_counter() - t
    runs = _run_all(insts, layered, workers)
    energies = [r[0] for r in runs]
    return ExperimentReport(
        instance=instance.describe(),
        eps=eps_list,
        energies=energies,
        limit_energy=lim.energy,
        errors=[abs(e - lim.energy) for e in energies],
        config_hash=config_hash("gamma-homog", instance.describe(), eps_list, config_dict(layered)),
        converged=[bool(r[1]) for r in runs] + [bool(lim.converged)],
        iterations=[int(r[2]) for r in runs] + [int(lim.iterations)],
        slice_l1=[_cell_avg_l1(r[4], lim.rho.values, g.dx[0], e) for r, e in zip(runs, eps_list)],
        runtimes=[r[3] for r in runs],
        limit_runtime=t_lim,
    )


# ---------------------------------------------------------------------------
# stark convergence study
# ---------------------------------------------------------------------------


def richardson(values: list, ratio: float = 2.0, order: int = 1) -> list:
    """Richardson tableau for values on grids refined by ``ratio``.

    Row ``k`` eliminates error terms of orders ``order .. order + k - 1``;
    each row is one entry shorter than the previous.
    """
    rows = [list(values)]
    p = order
    while len(rows[-1]) > 1:
        prev = rows[-1]
        f = ratio**p
        rows.append([(f * b - a) / (f - 1.0) for a, b in zip(prev, prev[1:])])
        p += 1
    return rows


@dataclass
class StarkStudy:
    sizes: list
    energies: list
    exact: float
    tableau: list
    solutions: list = field(default_factory=list)

    def errors(self) -> list:
        return [[abs(v - self.exact) for v in row] for row in self.tableau]

    def monotone(self) -> bool:
        """Finest entry of every tableau row beats the row above, and the
        first extrapolated row improves along refinement."""
        err = self.errors()
        finest = [row[-1] for row in err]
        ok = all(b < a for a, b in zip(finest, finest[1:]))
        if len(err) > 1:
            ok &= all(b < a for a, b in zip(err[1], err[1][1:]))
        return ok


def stark_study(sizes=(128, 256, 512), cfg: SolverConfig | None = None) -> StarkStudy:
    energies, sols = [], []
    for n in sizes:
        inst = stark_instance(n)
        s = solve_constrained(inst.rho0, inst.rho1, inst.cap, inst.g, cfg)
        energies.append(s.energy)
        sols.append(s)
    exact = stark_exact(1.0, 1.0, 1.0)[1]
    return StarkStudy(list(sizes), energies, exact, richardson(energies), sols)


def parse_eps(text: str) -> list:
    """``"0.2,0.1"`` or ``"1/4,1/8"`` to floats."""
    return [float(Fraction(t.strip())) for t in text.split(",") if t.strip()]


__all__ = [
    "EXPERIMENT_CONFIG",
    "ExperimentReport",
    "HomogInstance",
    "INSTANCES",
    "Instance",
    "MembraneInstance",
    "StarkStudy",
    "config_hash",
    "gamma_homog_experiment",
    "gamma_membrane_experiment",
    "membrane_instance",
    "parse_eps",
    "richardson",
    "stark_instance",
    "stark_study",
    "translation_instance",
]
