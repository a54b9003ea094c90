"""Direct simulation of the perforated problem at a finite scale ``eps``.

The moving pore domain is pulled back to the fixed perforated domain with
``psi_eps(t, x) = eps * k + eps * psi_0(t/eps mod 1, x/eps - k)`` on the cell
``k``, where ``psi_0`` is the :class:`~pulshom.microgeom.LimitMap` of the
motion program.  On the fixed mesh the unknown ``u_hat = u o psi_eps``
satisfies

    d/dt int J u_hat phi + int A (D Psi^{-T} grad u_hat + d_t psi u_hat) . grad phi
        = int J f phi + eps int_Gamma J |Psi^{-T} nu| g phi,

which is stepped with implicit Euler in conservative form, so
``int J u_hat`` is conserved exactly when there are no sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import femcore as fe
from .cellsolve import as_diffusion_matrix
from .errors import GridMismatch, SolverDivergence
from .exprs import Expression
from .meshkit import mesh_epsilon_domain
from .microgeom import LimitMap

ALLOWED_EPS = (1 / 2, 1 / 4, 1 / 8)
SOURCE_VARS = ("t", "x1", "x2", "s", "y1", "y2")


@dataclass
class EpsilonProblem:
    """Micro problem on ``(0, 1)^2`` perforated at scale ``eps``.

    ``h`` is the cell mesh size in cell units; ``dt`` defaults to ``eps / 32``.
    ``u0_in`` is the initial concentration (expression in ``x1, x2``).
    """

    program: object
    eps: float
    T: float
    u0_in: object = "1"
    h: float = 1 / 16
    D: object = 1.0
    dt: float | None = None
    f0: object = None
    g0: object = None
    map_kind: str = "twist"
    allow_fine: bool = False

    def __post_init__(self):
        ok = list(ALLOWED_EPS) + ([1 / 16] if self.allow_fine else [])
        if not any(abs(self.eps - e) < 1e-14 for e in ok):
            raise ValueError(f"eps must be one of {ok} (1/16 needs allow_fine)")
        if self.dt is None:
            self.dt = self.eps / 32
        self.D = as_diffusion_matrix(self.D)
        if isinstance(self.u0_in, str) or np.isscalar(self.u0_in):
            self.u0_in = Expression(self.u0_in, ("x1", "x2"))
        for name in ("f0", "g0"):
            val = getattr(self, name)
            if val is not None and not isinstance(val, Expression):
                setattr(self, name, Expression(val, SOURCE_VARS))

    @property
    def n_steps(self):
        k = round(self.T / self.dt)
        if abs(k * self.dt - self.T) > 1e-9 * self.T:
            raise ValueError("T must be a multiple of dt")
        return k


class MicroCoefficients:
    """Evaluates ``psi_eps`` data at the quadrature points of the epsilon mesh."""

    def __init__(self, problem, mesh):
        self.problem = problem
        self.mesh = mesh
        self.geo = fe.element_geometry(mesh.points, mesh.triangles)
        eps = problem.eps
        cells = mesh.cell_index
        q = self.geo.qpoints
        self.local = q / eps - cells[:, None, :]
        prog = problem.program
        self.groups = []
        if prog.modulation is None:
            lm = LimitMap(prog, 0.0, (0.5, 0.5), kind=problem.map_kind)
            self.groups.append((np.arange(len(cells)), lm))
        else:
            keys = cells[:, 0] * 100000 + cells[:, 1]
            for key in np.unique(keys):
                idx = np.nonzero(keys == key)[0]
                i, j = cells[idx[0]]
                xc = ((i + 0.5) * eps, (j + 0.5) * eps)
                self.groups.append((idx, LimitMap(prog, 0.0, xc, kind=problem.map_kind)))

    def fast_time(self, t):
        return (t / self.problem.eps) % 1.0

    def evaluate(self, t):
        """``(J, C, b, psi)`` at quadrature points for time ``t``."""
        s = self.fast_time(t)
        m, nq = self.geo.qweights.shape
        J = np.empty((m, nq))
        A = np.empty((m, nq, 2, 2))
        dpsi = np.empty((m, nq, 2))
        psi = np.empty((m, nq, 2))
        for idx, lm in self.groups:
            vals = lm.evaluate(s, self.local[idx].reshape(-1, 2))
            J[idx] = vals.J.reshape(-1, nq)
            A[idx] = vals.A.reshape(-1, nq, 2, 2)
            dpsi[idx] = vals.dpsi_ds.reshape(-1, nq, 2)
            psi[idx] = vals.psi.reshape(-1, nq, 2)
        eps = self.problem.eps
        psi = eps * (self.mesh.cell_index[:, None, :] + psi)
        C = np.einsum("mqik,kl,mqjl->mqij", A, self.problem.D, A) / J[..., None, None]
        # d/dt of eps psi_0(t/eps) is d_s psi_0
        b = np.einsum("mqij,mqj->mqi", A, dpsi)
        return J, C, b, psi, s

    def check_bounds(self, samples=16):
        """Largest ``|psi_eps - x| / eps`` and ``|d_x psi_eps|`` over sampled times."""
        disp, grad = 0.0, 0.0
        for s in np.linspace(0, 1, samples, endpoint=False):
            t = s * self.problem.eps
            J, C, b, psi, _ = self.evaluate(t)
            disp = max(disp, float(np.max(np.abs(psi - self.geo.qpoints))) / self.problem.eps)
            for idx, lm in self.groups:
                vals = lm.evaluate(s, self.local[idx].reshape(-1, 2))
                grad = max(grad, float(np.max(np.abs(vals.Psi))))
        return disp, grad


@dataclass
class MicroResult:
    eps: float
    times: np.ndarray
    mass: np.ndarray
    energy: np.ndarray
    snapshot_times: list
    snapshots: list  # J-weighted block data is computed lazily from these
    mesh: object
    coefficients: object = field(repr=False, default=None)
    J_snapshots: list = field(default_factory=list, repr=False)


def _interface_load(problem, mesh, coeffs, t, s):
    """``eps int_Gamma J |Psi^{-T} nu| g phi`` on the reference interface."""
    if len(coeffs.groups) != 1:
        raise NotImplementedError("interface sources with modulated geometry are not supported")
    lm = coeffs.groups[0][1]
    qp, _, nrm = fe.edge_quadrature(mesh.points, mesh.interface_edges)
    n_cells = round(1 / problem.eps)
    cells = np.clip(np.floor(qp.mean(axis=1) / problem.eps).astype(int), 0, n_cells - 1)
    local = qp / problem.eps - cells[:, None, :]
    vals = lm.evaluate(s, local.reshape(-1, 2))
    Psi = vals.Psi.reshape(qp.shape[:2] + (2, 2))
    J = vals.J.reshape(qp.shape[:2])
    psi = problem.eps * (cells[:, None, :] + vals.psi.reshape(qp.shape))
    PinvT = np.linalg.inv(Psi).swapaxes(-1, -2)
    stretch = np.linalg.norm(np.einsum("kqij,kj->kqi", PinvT, nrm), axis=-1)
    gv = problem.g0(t=t, x1=psi[..., 0], x2=psi[..., 1], s=s, y1=local[..., 0], y2=local[..., 1])
    dm = fe.DofMap.identity(mesh.n_points)
    return fe.assemble_edge_load(mesh, dm, mesh.interface_edges, problem.eps * J * stretch * gv)


def run_micro(problem, compare_times=None, mesh=None, progress=None):
    """Time-step the micro problem; snapshots at ``compare_times`` (and the end)."""
    mesh = mesh or mesh_epsilon_domain(problem.program, problem.eps, problem.h)
    dm = fe.DofMap.identity(mesh.n_points)
    coeffs = MicroCoefficients(problem, mesh)
    geo = coeffs.geo
    p = mesh.points
    u = np.broadcast_to(np.asarray(problem.u0_in(x1=p[:, 0], x2=p[:, 1]), float), (len(p),)).copy()
    n = problem.n_steps
    dt = problem.dt
    compare_steps = set()
    if compare_times is not None:
        for tc in compare_times:
            k = round(tc / dt)
            if abs(k * dt - tc) > 1e-9:
                raise GridMismatch(f"compare time {tc} is not a multiple of the micro step {dt}")
            compare_steps.add(k)
    compare_steps.add(n)
    J, C, b, psi, s = coeffs.evaluate(0.0)
    M_old = fe.assemble_mass(mesh, dm, J, geo)
    ones = np.ones(mesh.n_points)
    mass = [float(ones @ (M_old @ u))]
    energy = [_weighted_l2(mesh, dm, geo, u, J)]
    snaps, snap_t, Js = [], [], []
    if 0 in compare_steps:
        snaps.append(u.copy())
        snap_t.append(0.0)
        Js.append(J)
    for k in range(n):
        t1 = (k + 1) * dt
        J, C, b, psi, s = coeffs.evaluate(t1)
        if np.min(J) <= 0:
            raise SolverDivergence("map Jacobian became non-positive")
        M_new = fe.assemble_mass(mesh, dm, J, geo)
        K = fe.assemble_stiffness(mesh, dm, C, geo)
        B = fe.assemble_advection(mesh, dm, b, geo)
        rhs = M_old @ u
        if problem.f0 is not None:
            fv = problem.f0(t=t1, x1=psi[..., 0], x2=psi[..., 1], s=s,
                            y1=coeffs.local[..., 0], y2=coeffs.local[..., 1])
            rhs = rhs + dt * fe.assemble_load(mesh, dm, f=J * fv, geo=geo)
        if problem.g0 is not None:
            rhs = rhs + dt * _interface_load(problem, mesh, coeffs, t1, s)
        # the flux is A (D Psi^{-T} grad u + d_t psi u), so B enters with a plus sign
        lhs = (M_new + dt * (K + B)).tocsc()
        u = spla.spsolve(lhs, rhs)
        if not np.all(np.isfinite(u)):
            raise SolverDivergence(f"micro step {k + 1} produced non-finite values")
        M_old = M_new
        mass.append(float(ones @ (M_new @ u)))
        energy.append(_weighted_l2(mesh, dm, geo, u, J))
        if (k + 1) in compare_steps:
            snaps.append(u.copy())
            snap_t.append(t1)
            Js.append(J)
        if progress is not None:
            progress(k + 1, n)
    times = np.arange(n + 1) * dt
    return MicroResult(problem.eps, times, np.array(mass), np.array(energy), snap_t, snaps, mesh,
                       coeffs, Js)


def _weighted_l2(mesh, dm, geo, u, J):
    """``|| J u ||_{L^2}`` on the reference domain."""
    uq = fe.values_at_quadrature(mesh, dm, u, geo)
    return float(np.sqrt(np.sum(geo.qweights * (J * uq) ** 2)))


# -- comparison with the homogenised solution --------------------------------------
def _block_ids(centroids, blocks):
    ij = np.floor(centroids * blocks + 1e-9).astype(int)
    ij = np.clip(ij, 0, blocks - 1)
    return ij[:, 0] * blocks + ij[:, 1]


def micro_block_means(result, u, J, blocks):
    """Block averages of ``J u_hat`` (zero in the obstacles) on a ``blocks x blocks`` grid."""
    m = result.mesh
    eps = result.eps
    cells_per_block = (1.0 / blocks) / eps
    if abs(cells_per_block - round(cells_per_block)) > 1e-9 or round(cells_per_block) < 1:
        raise GridMismatch(f"a {blocks}x{blocks} grid does not align with eps = {eps}")
    geo = result.coefficients.geo
    dm = fe.DofMap.identity(m.n_points)
    uq = fe.values_at_quadrature(m, dm, u, geo)
    tri_mass = np.sum(geo.qweights * J * uq, axis=1)
    ids = _block_ids(m.points[m.triangles].mean(axis=1), blocks)
    out = np.zeros(blocks * blocks)
    np.add.at(out, ids, tri_mass)
    return out * blocks * blocks


def macro_block_means(mesh, u, blocks):
    if mesh.n % blocks:
        raise GridMismatch(f"macro mesh with n={mesh.n} does not align with {blocks} blocks")
    geo = fe.element_geometry(mesh.points, mesh.triangles)
    dm = fe.DofMap.identity(mesh.n_points)
    uq = fe.values_at_quadrature(mesh, dm, u, geo)
    tri_mass = np.sum(geo.qweights * uq, axis=1)
    ids = _block_ids(mesh.points[mesh.triangles].mean(axis=1), blocks)
    out = np.zeros(blocks * blocks)
    np.add.at(out, ids, tri_mass)
    return out * blocks * blocks


def evaluate_on_square_mesh(mesh, u, pts):
    """Evaluate a P1 field on the structured unit-square mesh at arbitrary points."""
    n = mesh.n
    p = np.clip(np.asarray(pts, float), 0.0, 1.0)
    i = np.clip(np.floor(p[:, 0] * n).astype(int), 0, n - 1)
    j = np.clip(np.floor(p[:, 1] * n).astype(int), 0, n - 1)
    fx = p[:, 0] * n - i
    fy = p[:, 1] * n - j
    idx = lambda a, b: b * (n + 1) + a
    u00, u10, u11, u01 = u[idx(i, j)], u[idx(i + 1, j)], u[idx(i + 1, j + 1)], u[idx(i, j + 1)]
    lower = fx >= fy  # triangles (a, b, c) split along the diagonal
    val_lo = u00 + fx * (u10 - u00) + fy * (u11 - u10)
    val_up = u00 + fy * (u01 - u00) + fx * (u11 - u01)
    return np.where(lower, val_lo, val_up)


@dataclass
class ComparisonReport:
    eps: float
    times: list
    block_errors: list
    block_error: float
    zero_extension_errors: list
    zero_extension_error: float
    pore_errors: list
    pore_error: float
    blocks: int


def compare_to_homogenised(micro, macro, blocks=None, theta=None):
    """Errors between micro ``J u_hat`` and the macro mass density ``u``.

    * ``block_error``: ``L^2((0, T) x Omega)`` distance of the two fields after
      averaging both over a common grid of ``blocks x blocks`` squares
      (each a union of eps-cells);
    * ``zero_extension_error``: the same distance without averaging, with
      ``J u_hat`` extended by zero into the obstacles;
    * ``pore_error``: ``|| u_hat - u / Theta ||`` on the pore.

    Time integrals use the trapezoidal rule over the common snapshot times.
    """
    blocks = blocks or round(1.0 / micro.eps)
    mt = np.asarray(macro.snapshot_times)
    times, be, ze, pe = [], [], [], []
    m = micro.mesh
    geo = micro.coefficients.geo
    dm = fe.DofMap.identity(m.n_points)
    q = geo.qpoints.reshape(-1, 2)
    mgeo = fe.element_geometry(macro.mesh.points, macro.mesh.triangles, 5)
    mdm = fe.DofMap.identity(macro.mesh.n_points)
    th = theta if theta is not None else 1.0
    for t, u, J in zip(micro.snapshot_times, micro.snapshots, micro.J_snapshots):
        k = np.nonzero(np.abs(mt - t) < 1e-9)[0]
        if not len(k):
            raise GridMismatch(f"macro run has no snapshot at t={t}")
        U = macro.mass_density(macro.snapshots[k[0]])
        mb = micro_block_means(micro, u, J, blocks)
        Mb = macro_block_means(macro.mesh, U, blocks)
        be.append(float(np.sqrt(np.sum((mb - Mb) ** 2) / blocks ** 2)))
        uq = fe.values_at_quadrature(m, dm, u, geo)
        Uq = evaluate_on_square_mesh(macro.mesh, U, q).reshape(uq.shape)
        pore_sq = float(np.sum(geo.qweights * (J * uq - Uq) ** 2))
        # int over the obstacles of U^2 = int_Omega U^2 - int_pore U^2
        Ufull = fe.values_at_quadrature(macro.mesh, mdm, U, mgeo)
        full_sq = float(np.sum(mgeo.qweights * Ufull ** 2))
        holes_sq = max(full_sq - float(np.sum(geo.qweights * Uq ** 2)), 0.0)
        ze.append(float(np.sqrt(pore_sq + holes_sq)))
        pe.append(float(np.sqrt(np.sum(geo.qweights * (uq - Uq / th) ** 2))))
        times.append(t)

    def time_l2(vals):
        if len(times) < 2:
            return float(vals[0]) if vals else 0.0
        return float(np.sqrt(np.trapezoid(np.square(vals), times)))

    return ComparisonReport(micro.eps, times, be, time_l2(be), ze, time_l2(ze), pe, time_l2(pe), blocks)
