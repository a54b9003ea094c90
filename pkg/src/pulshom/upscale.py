"""Slice coefficients and their average over one period of the motion.

For a macro point ``(t, x)`` the period ``S = [0, 1]`` is sampled at the
midpoints ``s_k = (k + 1/2) / N_s``.  Each slice gives the porosity
``Theta``, the effective diffusion ``D*`` and the pulsation drift ``V*``;
the macroscopic coefficients are

* ``D_hom = int_S D* / Theta ds``
* ``W_hom = -int_S D* grad_x(1 / Theta) ds`` (counterflow from porosity gradients)
* ``V_hom = int_S V* / Theta ds``
* ``F = int_S int_{Y*} f0``, ``G = int_S int_Gamma g0``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import femcore as fe
from .cellsolve import MOVING, TRANSFORMED, CellSolver
from .errors import InsufficientSlices
from .exprs import Expression
from .microgeom import obstacle_at

MIN_SLICES = 8
SOURCE_VARS = ("t", "x1", "x2", "s", "y1", "y2")


def slice_points(n_s):
    """Composite midpoint nodes on ``[0, 1]``."""
    if n_s < MIN_SLICES:
        raise InsufficientSlices(
            f"{n_s} slices are too few to integrate over the period; use at least {MIN_SLICES}"
        )
    return (np.arange(n_s) + 0.5) / n_s


def default_threads():
    try:
        return max(1, int(os.environ.get("PULSHOM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class SliceCoefficients:
    t: float
    x: tuple
    s: float
    porosity: float
    porosity_rate: float
    D_star: np.ndarray
    V_star: np.ndarray
    formulation: str
    compatibility: float
    F_density: float = 0.0
    G_density: float = 0.0

    def voigt_margin(self, D, rng=None, n=16):
        """Smallest ``Theta x.Dx - x.D*x`` over random unit directions (>= 0 expected)."""
        rng = rng or np.random.default_rng(0)
        X = rng.normal(size=(n, 2))
        X /= np.linalg.norm(X, axis=1)[:, None]
        D = np.asarray(D) * np.eye(2) if np.ndim(D) == 0 else np.asarray(D)
        upper = self.porosity * np.einsum("ni,ij,nj->n", X, D, X)
        return float(np.min(upper - np.einsum("ni,ij,nj->n", X, self.D_star, X)))


@dataclass
class EffectiveCoefficients:
    t: float
    x: tuple
    D_hom: np.ndarray
    W_hom: np.ndarray
    V_hom: np.ndarray
    F: float
    G: float
    n_slices: int
    porosity_mean: float
    slices: list = field(default_factory=list, repr=False)

    @property
    def theta_samples(self):
        return np.array([c.porosity for c in self.slices])

    @property
    def total_drift(self):
        return self.W_hom + self.V_hom


def slice_coefficients(sol, f0=None, g0=None, program=None):
    """Effective quantities of one solved slice."""
    F = G = 0.0
    if f0 is not None or g0 is not None:
        mesh = sol.mesh
        if sol.formulation == TRANSFORMED:
            from .meshkit import mesh_cell

            mesh = mesh_cell(obstacle_at(program, sol.t, sol.x, sol.s), sol.mesh.h)
        F, G = _source_densities(program, sol.t, sol.x, sol.s, mesh, f0, g0)
    return SliceCoefficients(sol.t, sol.x, sol.s, sol.porosity, sol.porosity_rate, sol.D_star,
                             sol.V_star, sol.formulation, sol.compatibility, F, G)


def _as_expr(e):
    if e is None or isinstance(e, Expression):
        return e
    return Expression(e, SOURCE_VARS)


def _source_densities(program, t, x, s, mesh, f0, g0):
    f0, g0 = _as_expr(f0), _as_expr(g0)
    F = G = 0.0
    if f0 is not None:
        if f0.is_constant:
            F = float(f0()) * float(mesh.areas().sum())
        else:
            geo = fe.element_geometry(mesh.points, mesh.triangles, 5)
            q = geo.qpoints
            vals = f0(t=t, x1=x[0], x2=x[1], s=s, y1=q[..., 0], y2=q[..., 1])
            F = float(np.sum(geo.qweights * vals))
    if g0 is not None and len(mesh.interface_edges):
        qp, w, _ = fe.edge_quadrature(mesh.points, mesh.interface_edges)
        vals = g0(t=t, x1=x[0], x2=x[1], s=s, y1=qp[..., 0], y2=qp[..., 1])
        G = float(np.sum(w * vals))
    return F, G


def compute_slices(program, t, x, h=1 / 32, n_s=16, D=1.0, formulation=MOVING, f0=None, g0=None,
                   solver=None, threads=None, **solver_kwargs):
    """Solve every slice of the period at ``(t, x)``; results ordered by slice index."""
    ss = slice_points(n_s)
    solver = solver or CellSolver(program, h, D, **solver_kwargs)
    threads = threads or default_threads()
    f0, g0 = _as_expr(f0), _as_expr(g0)

    def work(s):
        sol = solver.solve(t, x, float(s), formulation)
        return slice_coefficients(sol, f0, g0, program)

    if threads > 1:
        first = solver.prepare(t, x, ss, formulation)
        rest = [s for s in ss if s not in set(first)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = dict(zip(first, pool.map(work, first)))
            done.update(zip(rest, pool.map(work, rest)))
        return [done[s] for s in ss]
    return [work(s) for s in ss]


def porosity_gradient_inverse(program, t, x, s, step=1e-3):
    """Central difference of ``1 / Theta`` in ``x``."""
    out = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        tp = obstacle_at(program, t, np.asarray(x) + e, s).porosity
        tm = obstacle_at(program, t, np.asarray(x) - e, s).porosity
        out[k] = (1.0 / tp - 1.0 / tm) / (2 * step)
    return out


def average_coefficients(slices, program=None, fd_step=1e-3):
    """Period averages of slice data (midpoint rule)."""
    n = len(slices)
    if n < MIN_SLICES:
        raise InsufficientSlices(f"{n} slices are too few; use at least {MIN_SLICES}")
    w = 1.0 / n
    t, x = slices[0].t, slices[0].x
    D_hom = np.zeros((2, 2))
    W = np.zeros(2)
    V = np.zeros(2)
    F = G = th = 0.0
    modulated = program is not None and program.modulation is not None and program.shape is not None
    for c in slices:
        D_hom += w * c.D_star / c.porosity
        V += w * c.V_star / c.porosity
        if modulated:
            W -= w * c.D_star @ porosity_gradient_inverse(program, c.t, c.x, c.s, fd_step)
        F += w * c.F_density
        G += w * c.G_density
        th += w * c.porosity
    D_hom = 0.5 * (D_hom + D_hom.T)
    return EffectiveCoefficients(t, x, D_hom, W, V, F, G, n, th, list(slices))


def homogenize(program, t=0.0, x=(0.5, 0.5), h=1 / 32, n_s=16, D=1.0, formulation=MOVING,
               f0=None, g0=None, solver=None, threads=None, fd_step=1e-3, **solver_kwargs):
    """Effective coefficients of ``program`` at the macro point ``(t, x)``."""
    slices = compute_slices(program, t, x, h, n_s, D, formulation, f0, g0, solver, threads,
                            **solver_kwargs)
    return average_coefficients(slices, program, fd_step)


def source_averages(program, t, x, f0, g0, h=1 / 32, n_s=16):
    """``(F, G)`` without solving cell problems."""
    from .meshkit import mesh_cell

    F = G = 0.0
    for s in slice_points(n_s):
        mesh = mesh_cell(obstacle_at(program, t, x, s), h)
        f, g = _source_densities(program, t, x, s, mesh, f0, g0)
        F += f / n_s
        G += g / n_s
    return F, G


def lambda_comparison(program, t=0.0, x=(0.5, 0.5), h=1 / 32, n_s=16, D=1.0, slices=None,
                      formulation=MOVING, threads=None):
    """Drift of the two translation legs of the shuttle motion.

    ``lambda_1`` averages ``V* . e1`` over ``s`` in (0, 1/4) (outbound leg),
    ``lambda_2`` averages ``-V* . e1`` over (1/2, 3/4) (return leg).
    """
    slices = slices or compute_slices(program, t, x, h, n_s, D, formulation, threads=threads)
    s = np.array([c.s for c in slices])
    v1 = np.array([c.V_star[0] for c in slices])
    out_leg = (s > 0) & (s < 0.25)
    back_leg = (s > 0.5) & (s < 0.75)
    if not out_leg.any() or not back_leg.any():
        raise InsufficientSlices("no slices fall inside the translation legs")
    return float(np.mean(v1[out_leg])), float(np.mean(-v1[back_leg]))


__all__ = [
    "MOVING",
    "TRANSFORMED",
    "SliceCoefficients",
    "EffectiveCoefficients",
    "average_coefficients",
    "compute_slices",
    "homogenize",
    "lambda_comparison",
    "porosity_gradient_inverse",
    "slice_coefficients",
    "slice_points",
    "source_averages",
]
