"""Cell problems for one slice of the pulsating pore.

Two routes compute the same correctors:

* ``moving``: remesh the actual pore ``Y*(t, x, s)`` and solve

  - ``-div(D (e_j + grad zeta_j)) = 0``, periodic, no flux through the obstacle;
  - ``-div(D grad zeta_0) = dTheta/ds / Theta`` with
    ``(D grad zeta_0 + v) . nu = 0`` on the moving obstacle boundary.

* ``transformed``: stay on the pore at ``s = 0`` and pull the problems back
  with a :class:`~pulshom.microgeom.LimitMap` ``psi``; the coefficient becomes
  ``A D Psi^{-T}`` with ``A = J Psi^{-1}``, and the interface velocity turns
  into the bulk flux ``A dpsi/ds``.

Both give the effective diffusion ``D*_ij = int D (e_j + grad zeta_j) . e_i``
and the pulsation drift ``V* = -int D grad zeta_0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import femcore as fe
from .errors import IncompatibleData
from .meshkit import mesh_cell
from .microgeom import LimitMap, interface_flux, obstacle_at, porosity_rate

MOVING = "moving_domain"
TRANSFORMED = "transformed"


def as_diffusion_matrix(D):
    """Constant molecular diffusion as an SPD 2x2 matrix."""
    D = np.asarray(D, dtype=float)
    if D.ndim == 0:
        D = D * np.eye(2)
    if D.shape != (2, 2) or not np.allclose(D, D.T, rtol=0, atol=1e-14):
        raise ValueError("diffusion must be a scalar or a symmetric 2x2 matrix")
    if np.min(np.linalg.eigvalsh(D)) <= 0:
        raise ValueError("diffusion matrix must be positive definite")
    return D


@dataclass
class CellSolution:
    """Correctors of one slice and the effective quantities derived from them.

    ``zeta`` has rows ``zeta_1, zeta_2, zeta_0`` (dof vectors on ``mesh``).
    """

    t: float
    x: tuple
    s: float
    formulation: str
    mesh: object
    dofmap: fe.DofMap
    zeta: np.ndarray
    D: np.ndarray
    porosity: float
    porosity_rate: float
    D_star: np.ndarray
    V_star: np.ndarray
    compatibility: float
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def mean(self, k):
        w = self._weights()
        return float(w @ self.zeta[k] / w.sum())

    def _weights(self):
        return fe.assemble_mass(self.mesh, self.dofmap) @ np.ones(self.dofmap.n_dofs)

    def pore_mean_flux0(self):
        """Pore average of ``D grad zeta_0`` (equals ``-V*/Theta``)."""
        return -self.V_star / self.porosity


@dataclass
class _Operator:
    mesh: object
    dofmap: fe.DofMap
    geo: fe.ElementGeometry
    K: object
    solver: fe.NeumannSolver
    coeff: np.ndarray  # (m, 2, 2) element coefficient for the direction problems
    zeta_dir: np.ndarray
    D_star: np.ndarray
    residual_dir: np.ndarray


def _build_operator(mesh, coeff_q, D_weight=None):
    dm = fe.DofMap.periodic(mesh)
    geo = fe.element_geometry(mesh.points, mesh.triangles)
    K = fe.assemble_stiffness(mesh, dm, coeff_q, geo)
    w = fe.assemble_mass(mesh, dm, geo=geo) @ np.ones(dm.n_dofs)
    solver = fe.NeumannSolver(K, w)
    C = fe._coefficient_average(coeff_q, geo)
    zeta = np.zeros((2, dm.n_dofs))
    res = np.zeros(2)
    for j in range(2):
        rhs = fe.assemble_load(mesh, dm, grad_term=-np.broadcast_to(C[:, None, :, j], (len(C), 3, 2)), geo=geo)
        zeta[j] = solver.solve(rhs, what=f"direction problem {j + 1}")
        res[j] = _residual(K, zeta[j], rhs)
    g = np.stack([fe.gradients(mesh, dm, zeta[j], geo) for j in range(2)], axis=1)  # (m, j, d)
    flux = np.einsum("mik,mjk->mij", C, g)  # C grad zeta_j, indexed (m, i, j)
    D_star = np.einsum("m,mij->ij", geo.area, C + flux)
    return _Operator(mesh, dm, geo, K, solver, C, zeta, D_star, res)


def _residual(K, u, rhs):
    r = K @ u - (rhs - np.sum(rhs) / len(rhs))
    scale = max(1.0, float(np.linalg.norm(rhs)))
    return float(np.linalg.norm(r) / scale)


class CellSolver:
    """Solves slices of one motion program and caches per-geometry work.

    In the moving-domain route, slices that differ only by a translation of
    the obstacle share the mesh (shifted), the factorization and the
    direction correctors.
    """

    def __init__(self, program, h, D=1.0, frame="obstacle", map_kind="twist", rho_blend=None,
                 flip_normal=False):
        self.program = program
        self.h = float(h)
        self.D = as_diffusion_matrix(D)
        self.frame = frame
        self.map_kind = map_kind
        self.rho_blend = rho_blend
        self.flip_normal = flip_normal
        self._ops = {}
        self._maps = {}
        self._ref = {}

    # -- moving domain --------------------------------------------------
    def _moving_operator(self, geom, t, x, s):
        key = self.program.slice_mesh_key(t, x, s)
        if self.frame == "cell":
            key = key + (round(float(geom.center[0]), 14), round(float(geom.center[1]), 14))
        op = self._ops.get(key)
        if op is None:
            mesh = mesh_cell(geom, self.h, frame=self.frame)
            op = _build_operator(mesh, self.D)
            self._ops[key] = op
        return op

    def solve_moving(self, t, x, s):
        geom = obstacle_at(self.program, t, x, s)
        op = self._moving_operator(geom, t, x, s)
        mesh = op.mesh
        shift = (geom.center - op.mesh.geometry.center) if self.frame == "obstacle" else np.zeros(2)
        theta = geom.porosity
        dtheta = porosity_rate(self.program, t, x, s)
        compat = _check_pulse_compatibility(geom, dtheta)
        rhs0 = pulse_load(op.mesh, op.dofmap, op.geo, geom, theta, dtheta, shift, self.flip_normal)
        zeta0 = op.solver.solve(rhs0, what="pulsation problem")
        g0 = fe.gradients(mesh, op.dofmap, zeta0, op.geo)
        V = -np.einsum("m,ij,mj->i", op.geo.area, self.D, g0)
        zeta = np.vstack([op.zeta_dir, zeta0])
        res = np.append(op.residual_dir, _residual(op.K, zeta0, rhs0))
        if np.any(shift):
            mesh = _shifted(mesh, shift, geom)
        return CellSolution(t, tuple(x), s, MOVING, mesh, op.dofmap, zeta, self.D, theta, dtheta,
                            op.D_star.copy(), V, compat, res)

    # -- transformed ----------------------------------------------------
    def limit_map(self, t, x):
        key = (float(t), tuple(float(v) for v in x))
        lm = self._maps.get(key)
        if lm is None:
            lm = LimitMap(self.program, t, x, kind=self.map_kind, rho_blend=self.rho_blend)
            self._maps[key] = lm
        return lm

    def reference_mesh(self, t, x):
        key = (float(t), tuple(float(v) for v in x))
        m = self._ref.get(key)
        if m is None:
            m = mesh_cell(obstacle_at(self.program, t, x, 0.0), self.h, frame=self.frame)
            self._ref[key] = m
        return m

    def solve_transformed(self, t, x, s, limit_map=None):
        lm = limit_map or self.limit_map(t, x)
        mesh = self.reference_mesh(t, x)
        geo = fe.element_geometry(mesh.points, mesh.triangles)
        vals = lm.evaluate(s, geo.qpoints.reshape(-1, 2))
        shp = geo.qweights.shape
        A = vals.A.reshape(shp + (2, 2))
        J = vals.J.reshape(shp)
        C = np.einsum("mqik,kl,mqjl->mqij", A, self.D, A) / J[..., None, None]
        op = _build_operator(mesh, C)
        dm = op.dofmap
        dpsi = vals.dpsi_ds.reshape(shp + (2,))
        dJ = vals.dJ_ds.reshape(shp)
        flux = np.einsum("mqij,mqj->mqi", A, dpsi)
        theta_h = float(np.sum(geo.qweights * J))
        dtheta_h = float(np.sum(geo.qweights * dJ))
        # discrete porosity and its rate keep the load exactly compatible
        bulk = J * (dtheta_h / theta_h) - dJ
        rhs0 = fe.assemble_load(mesh, dm, f=bulk, grad_term=-flux, geo=geo)
        zeta0 = op.solver.solve(rhs0, what="transformed pulsation problem")
        g0 = fe.gradients(mesh, dm, zeta0, geo)
        # V* = -int J D Psi^{-T} grad zeta0 = -int D A^T grad zeta0
        V = -np.einsum("mq,ij,mqkj,mk->i", geo.qweights, self.D, A, g0)
        geom = obstacle_at(self.program, t, x, s)
        compat = abs(porosity_rate(self.program, t, x, s) - interface_flux(geom))
        zeta = np.vstack([op.zeta_dir, zeta0])
        res = np.append(op.residual_dir, _residual(op.K, zeta0, rhs0))
        return CellSolution(t, tuple(x), s, TRANSFORMED, mesh, dm, zeta, self.D, theta_h, dtheta_h,
                            op.D_star, V, compat, res)

    def prepare(self, t, x, slices, formulation=MOVING):
        """Return the slices that populate the caches, one per distinct key.

        Solving these first, before the rest, makes every cached operator come
        from the same slice no matter how the work is scheduled over threads.
        """
        if formulation in (TRANSFORMED, "transformed"):
            self.limit_map(t, x)
            self.reference_mesh(t, x)
            return []
        if self.frame == "cell":
            return []
        seen, first = set(), []
        for s in slices:
            key = self.program.slice_mesh_key(t, x, float(s))
            if key not in seen:
                seen.add(key)
                first.append(s)
        return first

    def solve(self, t, x, s, formulation=MOVING):
        if formulation in (MOVING, "moving"):
            return self.solve_moving(t, x, s)
        if formulation in (TRANSFORMED, "transformed"):
            return self.solve_transformed(t, x, s)
        raise ValueError(f"unknown formulation {formulation!r}")


def _check_pulse_compatibility(geom, dtheta):
    compat = abs(dtheta - interface_flux(geom))
    if compat > fe.COMPAT_TOL * (1.0 + abs(dtheta)):
        raise IncompatibleData(f"porosity rate and interface flux differ by {compat:.3e}")
    return compat


def pulse_load(mesh, dofmap, geo, geom, theta, dtheta, shift=(0.0, 0.0), flip_normal=False):
    """Load ``int (dTheta/Theta) phi - int_Gamma (v . nu) phi`` of the pulsation problem.

    ``shift`` translates mesh points onto the actual slice geometry when the
    mesh was built for a translated copy of it.
    """
    rhs = np.zeros(dofmap.n_dofs)
    if geom.hole is None:
        return rhs
    if dtheta != 0.0:
        rhs += fe.assemble_load(mesh, dofmap, f=dtheta / theta, geo=geo)
    qp, _, nrm = fe.edge_quadrature(mesh.points, mesh.interface_edges)
    if flip_normal:
        nrm = -nrm
    v = geom.velocity_field(qp.reshape(-1, 2) + np.asarray(shift)).reshape(qp.shape)
    vn = np.einsum("kqd,kd->kq", v, nrm)
    rhs -= fe.assemble_edge_load(mesh, dofmap, mesh.interface_edges, vn)
    return rhs


def _shifted(mesh, shift, geom):
    from dataclasses import replace

    return replace(mesh, points=mesh.points + shift, origin=mesh.origin + shift, geometry=geom)


def solve_cell(program, t, x, s, h, D=1.0, formulation=MOVING, **kwargs):
    """Solve all three cell problems of one slice."""
    return CellSolver(program, h, D, **kwargs).solve(t, x, s, formulation)


# -- single-problem entry points ------------------------------------------------
def solve_corrector_dir(mesh, j, D=1.0):
    """Direction corrector ``zeta_j`` (``j`` in {1, 2}) on a periodic cell mesh."""
    op = _build_operator(mesh, as_diffusion_matrix(D))
    return op.zeta_dir[j - 1]


def solve_corrector_pulse(mesh, geom, dtheta, D=1.0, flip_normal=False):
    """Pulsation corrector ``zeta_0`` on the mesh of the moved pore ``geom``.

    Raises :class:`IncompatibleData` when ``dtheta`` and the interface flux disagree.
    """
    op = _build_operator(mesh, as_diffusion_matrix(D))
    if not flip_normal:
        _check_pulse_compatibility(geom, dtheta)
    rhs = pulse_load(mesh, op.dofmap, op.geo, geom, geom.porosity, dtheta, flip_normal=flip_normal)
    return op.solver.solve(rhs, what="pulsation problem")


def solve_corrector_dir_transformed(mesh, limit_map, s, j, D=1.0):
    geo = fe.element_geometry(mesh.points, mesh.triangles)
    vals = limit_map.evaluate(s, geo.qpoints.reshape(-1, 2))
    shp = geo.qweights.shape
    A = vals.A.reshape(shp + (2, 2))
    J = vals.J.reshape(shp)
    Dm = as_diffusion_matrix(D)
    C = np.einsum("mqik,kl,mqjl->mqij", A, Dm, A) / J[..., None, None]
    return _build_operator(mesh, C).zeta_dir[j - 1]
