"""Macroscopic advection-diffusion on the unit square.

Two equivalent formulations are supported:

* ``"mass"``: ``d_t u - div(D_hom grad u - (W_hom + V_hom) u) = F + G`` for the
  mass density ``u = Theta u0``;
* ``"concentration"``: ``d_t(Theta u0) - div(Dbar grad u0 - Vbar u0) = F + G``
  with period averages ``Dbar = int D*``, ``Vbar = int V*`` (valid when the
  porosity does not pulsate).

Both use P1 elements, the total flux in weak form (so no-flux boundaries
are natural and the scheme conserves mass exactly) and implicit Euler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from . import femcore as fe
from .errors import SolverDivergence
from .exprs import Expression
from .meshkit import unit_square_mesh


@dataclass
class CoefficientField:
    """Time-independent macro coefficients as functions of ``x``.

    Each callable maps points ``(n, 2)`` to values: ``D`` to ``(n, 2, 2)``,
    ``drift`` to ``(n, 2)``, ``source`` and ``theta`` to ``(n,)``.
    ``Dbar`` and ``Vbar`` are the period averages of ``D*`` and ``V*`` used by
    the concentration formulation.
    """

    D: object
    drift: object
    source: object
    theta: object
    Dbar: object
    Vbar: object
    constant: bool = False

    @classmethod
    def from_effective(cls, eff):
        th = eff.porosity_mean
        Dbar = np.mean([c.D_star for c in eff.slices], axis=0) if eff.slices else eff.D_hom * th
        Vbar = np.mean([c.V_star for c in eff.slices], axis=0) if eff.slices else eff.V_hom * th
        return cls.uniform(eff.D_hom, eff.W_hom + eff.V_hom, eff.F + eff.G, th, Dbar, Vbar)

    @classmethod
    def uniform(cls, D, drift=(0.0, 0.0), source=0.0, theta=1.0, Dbar=None, Vbar=None):
        D = np.asarray(D, float) * (np.eye(2) if np.ndim(D) == 0 else 1.0)
        drift = np.asarray(drift, float)
        Dbar = D * theta if Dbar is None else np.asarray(Dbar, float)
        Vbar = drift * theta if Vbar is None else np.asarray(Vbar, float)

        def const(val):
            return lambda p: np.broadcast_to(val, (len(p),) + np.shape(val)).copy()

        return cls(const(D), const(drift), const(float(source)), const(float(theta)), const(Dbar),
                   const(Vbar), constant=True)

    @classmethod
    def from_samples(cls, x1, x2, effs):
        """Bilinear interpolation of effective coefficients sampled on a grid.

        ``effs[i][j]`` belongs to the point ``(x1[i], x2[j])``.  A single
        value along an axis means the coefficients do not vary in it.
        """
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)

        def grid(fn, shape):
            return np.array([[fn(effs[i][j]) for j in range(len(x2))] for i in range(len(x1))]
                            ).reshape((len(x1), len(x2)) + shape)

        fields = {
            "D": grid(lambda e: e.D_hom, (2, 2)),
            "drift": grid(lambda e: e.W_hom + e.V_hom, (2,)),
            "source": grid(lambda e: e.F + e.G, ()),
            "theta": grid(lambda e: e.porosity_mean, ()),
            "Dbar": grid(lambda e: np.mean([c.D_star for c in e.slices], axis=0), (2, 2)),
            "Vbar": grid(lambda e: np.mean([c.V_star for c in e.slices], axis=0), (2,)),
        }
        return cls(**{k: _interpolator(x1, x2, v) for k, v in fields.items()})


def _interpolator(x1, x2, values):
    axes, keep = [], []
    for k, ax in enumerate((x1, x2)):
        if len(ax) > 1:
            axes.append(ax)
            keep.append(k)
    if not axes:
        v = values.reshape(values.shape[2:])
        return lambda p: np.broadcast_to(v, (len(p),) + v.shape).copy()
    vals = values
    if len(axes) == 1:
        vals = values[:, 0] if keep == [0] else values[0, :]
    interp = RegularGridInterpolator(tuple(axes), vals, bounds_error=False, fill_value=None)
    return lambda p: interp(np.clip(np.asarray(p)[:, keep], 0.0, 1.0))


@dataclass
class MacroProblem:
    coefficients: CoefficientField
    u_in: object
    T: float
    dt: float
    n: int = 32
    formulation: str = "mass"
    streamline: float = 0.0
    mesh: object = None

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        if self.formulation not in ("mass", "concentration"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.mesh is None:
            self.mesh = unit_square_mesh(self.n)
        if isinstance(self.u_in, str) or np.isscalar(self.u_in):
            self.u_in = Expression(self.u_in, ("x1", "x2"))

    @property
    def n_steps(self):
        k = round(self.T / self.dt)
        if abs(k * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError("T must be a multiple of dt")
        return k

    def initial(self):
        p = self.mesh.points
        u = np.asarray(self.u_in(x1=p[:, 0], x2=p[:, 1]), float)
        u = np.broadcast_to(u, (len(p),)).copy()
        if not np.all(np.isfinite(u)):
            raise SolverDivergence("initial datum is not finite")
        if self.formulation == "concentration":
            # u_in is the mass density; the unknown is u0 = u / Theta
            u = u / self.coefficients.theta(p)
        return u


@dataclass
class MacroResult:
    times: np.ndarray
    snapshots: list
    snapshot_times: list
    mass: np.ndarray
    l2: np.ndarray
    final: np.ndarray
    mesh: object
    formulation: str
    theta_nodes: np.ndarray = field(default=None, repr=False)

    def mass_density(self, u=None):
        """Mass density ``u`` (multiplies by ``Theta`` for the concentration form)."""
        u = self.final if u is None else u
        return u * self.theta_nodes if self.formulation == "concentration" else u


class MacroStepper:
    """Assembled operators of a :class:`MacroProblem` and the implicit Euler step."""

    def __init__(self, problem):
        self.problem = problem
        mesh = problem.mesh
        self.dofmap = fe.DofMap.identity(mesh.n_points)
        geo = fe.element_geometry(mesh.points, mesh.triangles)
        self.geo = geo
        q = geo.qpoints.reshape(-1, 2)
        shp = geo.qweights.shape
        cf = problem.coefficients
        if problem.formulation == "mass":
            D = cf.D(q).reshape(shp + (2, 2))
            b = cf.drift(q).reshape(shp + (2,))
            weight = None
        else:
            D = cf.Dbar(q).reshape(shp + (2, 2))
            b = cf.Vbar(q).reshape(shp + (2,))
            weight = cf.theta(q).reshape(shp)
        if problem.streamline > 0:
            D = D + _streamline_diffusion(b, geo, problem.streamline)
        self._check_spd(D)
        self.M = fe.assemble_mass(mesh, self.dofmap, weight, geo)
        self.K = fe.assemble_stiffness(mesh, self.dofmap, D, geo)
        self.C = fe.assemble_advection(mesh, self.dofmap, b, geo)
        src = cf.source(q).reshape(shp)
        self.load = fe.assemble_load(mesh, self.dofmap, f=src, geo=geo)
        self.ones_mass = self.M.T @ np.ones(mesh.n_points)
        dt = problem.dt
        self.lhs = (self.M + dt * (self.K - self.C)).tocsc()
        self._lu = spla.splu(self.lhs)
        self.M_plain = fe.assemble_mass(mesh, self.dofmap, geo=geo)

    @staticmethod
    def _check_spd(D):
        sym = 0.5 * (D + np.swapaxes(D, -1, -2))
        if np.min(np.linalg.eigvalsh(sym.reshape(-1, 2, 2))) <= 0:
            raise ValueError("macro diffusion is not positive definite")

    def step(self, u):
        rhs = self.M @ u + self.problem.dt * self.load
        un = self._lu.solve(rhs)
        if not np.all(np.isfinite(un)):
            raise SolverDivergence("macro time step produced non-finite values")
        return un

    def mass(self, u):
        return float(self.ones_mass @ u)

    def l2(self, u):
        return float(np.sqrt(max(u @ (self.M_plain @ u), 0.0)))


def _streamline_diffusion(b, geo, delta):
    h = np.sqrt(2 * geo.area)[:, None]
    nb = np.linalg.norm(b, axis=-1)
    coef = np.where(nb > 0, delta * h / np.maximum(nb, 1e-300), 0.0)
    return coef[..., None, None] * np.einsum("mqi,mqj->mqij", b, b)


def run(problem, cadence=1, checkpoint=None, checkpoint_every=None, restart=None, stepper=None):
    """Time-step ``problem``; ``cadence`` controls how often snapshots are kept.

    ``checkpoint``/``checkpoint_every`` write ``.npz`` restart files;
    ``restart`` resumes from such a file and reproduces the uninterrupted run.
    """
    st = stepper or MacroStepper(problem)
    n = problem.n_steps
    if restart is not None:
        data = np.load(restart)
        u = data["u"].copy()
        k0 = int(data["k"])
    else:
        u = problem.initial()
        k0 = 0
    times = [k0 * problem.dt]
    mass = [st.mass(u)]
    l2 = [st.l2(u)]
    snaps, snap_t = [u.copy()], [k0 * problem.dt]
    for k in range(k0, n):
        u = st.step(u)
        t = (k + 1) * problem.dt
        times.append(t)
        mass.append(st.mass(u))
        l2.append(st.l2(u))
        if (k + 1) % cadence == 0 or k + 1 == n:
            snaps.append(u.copy())
            snap_t.append(t)
        if checkpoint is not None and checkpoint_every and (k + 1) % checkpoint_every == 0:
            np.savez(checkpoint, u=u, k=k + 1)
    theta = problem.coefficients.theta(problem.mesh.points)
    return MacroResult(np.array(times), snaps, snap_t, np.array(mass), np.array(l2), u, problem.mesh,
                       problem.formulation, theta)


def center_of_mass(mesh, u):
    dm = fe.DofMap.identity(mesh.n_points)
    M = fe.assemble_mass(mesh, dm)
    m = M @ u
    return (mesh.points.T @ m) / m.sum()
