"""Piecewise linear finite elements on triangle meshes.

Assembly is vectorized over elements.  Coefficients are supplied at the
quadrature points of :func:`quadrature`, so callers evaluate their data once
on an ``(n_triangles, n_quad, ...)`` array.  Periodic problems identify
vertices through a :class:`DofMap`; pure Neumann problems are solved with a
mean-zero normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import IncompatibleData, NonFiniteCoefficient, SolverDivergence

COMPAT_TOL = 1e-8
# relative residual accepted from the sparse direct solves
SOLVER_TOL = 1e-10

# symmetric rules on the reference triangle: barycentric points, weights summing to 1
_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
}


def _dunavant5():
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    w0, w1, w2 = 0.225, 0.132394152788506, 0.125939180544827
    pts = [[1 / 3, 1 / 3, 1 / 3],
           [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
           [a2, b2, b2], [b2, a2, b2], [b2, b2, a2]]
    return np.array(pts), np.array([w0, w1, w1, w1, w2, w2, w2])


_RULES[5] = _dunavant5()
GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))


def quadrature(order=2):
    """Barycentric points ``(q, 3)`` and weights ``(q,)`` (summing to 1)."""
    return _RULES[order]


@dataclass
class DofMap:
    """Vertex to degree-of-freedom numbering."""

    vertex_to_dof: np.ndarray
    n_dofs: int

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n), n)

    @classmethod
    def periodic(cls, mesh):
        """Identify vertices through ``mesh.periodic`` (representative indices)."""
        master = np.asarray(mesh.periodic)
        reps, inv = np.unique(master, return_inverse=True)
        return cls(inv.ravel(), len(reps))

    @classmethod
    def for_mesh(cls, mesh):
        if hasattr(mesh, "periodic"):
            return cls.periodic(mesh)
        return cls.identity(len(mesh.points))

    def to_vertices(self, u):
        return np.asarray(u)[self.vertex_to_dof]


@dataclass
class ElementGeometry:
    area: np.ndarray    # (m,)
    grads: np.ndarray   # (m, 3, 2) gradients of the barycentric basis
    qpoints: np.ndarray  # (m, q, 2)
    qweights: np.ndarray  # (m, q) including the area
    bary: np.ndarray    # (q, 3)


def element_geometry(points, triangles, order=2):
    p = points[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    area = 0.5 * det
    # gradients of barycentrics: rows of inverse Jacobian
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    bary, w = quadrature(order)
    qp = np.einsum("qk,mkd->mqd", bary, p)
    return ElementGeometry(area, grads, qp, area[:, None] * w[None, :], bary)


def _coefficient_average(coeff, geo):
    """Element averages of a matrix coefficient given per quadrature point."""
    m = len(geo.area)
    if coeff is None:
        return np.broadcast_to(np.eye(2), (m, 2, 2))
    c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        return np.broadcast_to(c * np.eye(2), (m, 2, 2))
    if c.shape == (2, 2):
        return np.broadcast_to(c, (m, 2, 2))
    if c.shape == (m, 2, 2):
        return c
    if c.ndim == 4 and c.shape[:1] == (m,):
        w = geo.qweights / geo.area[:, None]
        return np.einsum("mq,mqij->mij", w, c)
    raise ValueError(f"unsupported coefficient shape {c.shape}")


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteCoefficient(f"{what} contains non-finite values")


def _scatter_matrix(local, triangles, dofmap):
    dofs = dofmap.vertex_to_dof[triangles]
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    n = dofmap.n_dofs
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _scatter_vector(local, triangles, dofmap):
    out = np.zeros(dofmap.n_dofs)
    np.add.at(out, dofmap.vertex_to_dof[triangles].ravel(), local.ravel())
    return out


def assemble_stiffness(mesh, dofmap, coeff=None, geo=None):
    """``K_ij = int (C grad phi_j) . grad phi_i``."""
    geo = geo or element_geometry(mesh.points, mesh.triangles)
    C = _coefficient_average(coeff, geo)
    _check_finite(C, "diffusion coefficient")
    local = np.einsum("m,mid,mde,mje->mij", geo.area, geo.grads, C, geo.grads)
    return _scatter_matrix(local, mesh.triangles, dofmap)


def assemble_mass(mesh, dofmap, weight=None, geo=None):
    """``M_ij = int w phi_i phi_j`` with ``w`` given at quadrature points."""
    geo = geo or element_geometry(mesh.points, mesh.triangles)
    w = geo.qweights if weight is None else geo.qweights * np.asarray(weight, float)
    _check_finite(w, "mass weight")
    local = np.einsum("mq,qi,qj->mij", w, geo.bary, geo.bary)
    return _scatter_matrix(local, mesh.triangles, dofmap)


def assemble_advection(mesh, dofmap, b, geo=None):
    """``C_ij = int (b phi_j) . grad phi_i`` with ``b`` of shape ``(m, q, 2)``."""
    geo = geo or element_geometry(mesh.points, mesh.triangles)
    b = np.asarray(b, float)
    _check_finite(b, "advection field")
    local = np.einsum("mq,qj,mqd,mid->mij", geo.qweights, geo.bary, b, geo.grads)
    return _scatter_matrix(local, mesh.triangles, dofmap)


def assemble_load(mesh, dofmap, f=None, grad_term=None, geo=None):
    """``L_i = int f phi_i + int g . grad phi_i``.

    ``f`` has shape ``(m, q)`` (or is a scalar), ``grad_term`` shape ``(m, q, 2)``.
    """
    geo = geo or element_geometry(mesh.points, mesh.triangles)
    local = np.zeros((len(mesh.triangles), 3))
    if f is not None:
        fv = np.broadcast_to(np.asarray(f, float), geo.qweights.shape)
        _check_finite(fv, "source term")
        local += np.einsum("mq,mq,qi->mi", geo.qweights, fv, geo.bary)
    if grad_term is not None:
        g = np.asarray(grad_term, float)
        _check_finite(g, "flux term")
        gbar = np.einsum("mq,mqd->md", geo.qweights, g)
        local += np.einsum("md,mid->mi", gbar, geo.grads)
    return _scatter_vector(local, mesh.triangles, dofmap)


def edge_quadrature(points, edges):
    """Two-point Gauss points ``(k, 2, 2)``, weights ``(k, 2)`` and unit outward normals ``(k, 2)``.

    Edges are oriented with the domain on their left, so the outward
    normal is the right-hand normal.
    """
    a = points[edges[:, 0]]
    b = points[edges[:, 1]]
    d = b - a
    ln = np.linalg.norm(d, axis=1)
    t, w = GAUSS2
    qp = a[:, None, :] + t[None, :, None] * d[:, None, :]
    nrm = np.column_stack([d[:, 1], -d[:, 0]]) / ln[:, None]
    return qp, ln[:, None] * w[None, :], nrm


def assemble_edge_load(mesh, dofmap, edges, g):
    """``L_i = int_edges g phi_i`` with ``g`` at the two Gauss points of each edge."""
    if len(edges) == 0:
        return np.zeros(dofmap.n_dofs)
    _, w, _ = edge_quadrature(mesh.points, edges)
    t, _ = GAUSS2
    g = np.asarray(g, float)
    _check_finite(g, "boundary flux")
    la = np.sum(w * g * (1.0 - t)[None, :], axis=1)
    lb = np.sum(w * g * t[None, :], axis=1)
    out = np.zeros(dofmap.n_dofs)
    np.add.at(out, dofmap.vertex_to_dof[edges[:, 0]], la)
    np.add.at(out, dofmap.vertex_to_dof[edges[:, 1]], lb)
    return out


def check_compatibility(rhs, tol=COMPAT_TOL, what="right-hand side"):
    """Relative size of ``sum(rhs)``; raises :class:`IncompatibleData` above ``tol``."""
    rhs = np.asarray(rhs)
    scale = max(1.0, float(np.sum(np.abs(rhs))))
    rel = abs(float(np.sum(rhs))) / scale
    if tol is not None and rel > tol:
        raise IncompatibleData(f"{what} integrates to {np.sum(rhs):.3e} (relative {rel:.3e} > {tol:g})")
    return rel


class NeumannSolver:
    """Factorized solver for ``K u = b`` with constant kernel and ``w . u = 0``.

    ``K`` must have the constants as its only kernel (pure Neumann or
    periodic problems).  One dof is pinned to factorize; the result is
    shifted to zero weighted mean.
    """

    def __init__(self, K, weights):
        self.n = K.shape[0]
        self.weights = np.asarray(weights, float)
        self.K = K
        Kc = K.tocsc()
        self._lu = spla.splu(Kc[1:, 1:].tocsc())

    def solve(self, rhs, compat_tol=COMPAT_TOL, what="right-hand side"):
        rhs = np.asarray(rhs, float)
        check_compatibility(rhs, compat_tol, what)
        b = rhs - np.sum(rhs) * self.weights / np.sum(self.weights)
        u = np.zeros(self.n)
        u[1:] = self._lu.solve(b[1:])
        u -= np.dot(self.weights, u) / np.sum(self.weights)
        res = np.linalg.norm(self.K @ u - b) / max(1.0, float(np.linalg.norm(b)))
        if not res <= SOLVER_TOL:
            raise SolverDivergence(f"{what}: relative residual {res:.3e} exceeds {SOLVER_TOL:g}")
        return u


def solve_neumann_meanzero(K, rhs, weights, compat_tol=COMPAT_TOL):
    return NeumannSolver(K, weights).solve(rhs, compat_tol)


def interpolate(mesh, dofmap, fn):
    """Nodal interpolant of ``fn(points) -> (n,)`` as a dof vector."""
    vals = np.asarray(fn(mesh.points), float)
    out = np.zeros(dofmap.n_dofs)
    out[dofmap.vertex_to_dof] = vals
    return out


def values_at_quadrature(mesh, dofmap, u, geo):
    uv = np.asarray(u)[dofmap.vertex_to_dof][mesh.triangles]
    return np.einsum("qk,mk->mq", geo.bary, uv)


def gradients(mesh, dofmap, u, geo=None):
    """Elementwise constant gradient ``(m, 2)``."""
    geo = geo or element_geometry(mesh.points, mesh.triangles)
    uv = np.asarray(u)[dofmap.vertex_to_dof][mesh.triangles]
    return np.einsum("mk,mkd->md", uv, geo.grads)


def integrate(mesh, dofmap, u, weight=None, geo=None):
    geo = geo or element_geometry(mesh.points, mesh.triangles)
    vals = values_at_quadrature(mesh, dofmap, u, geo)
    if weight is not None:
        vals = vals * weight
    return float(np.sum(geo.qweights * vals))


def l2_norm(mesh, dofmap, u):
    M = assemble_mass(mesh, dofmap)
    return float(np.sqrt(max(u @ (M @ u), 0.0)))


def h1_seminorm(mesh, dofmap, u):
    K = assemble_stiffness(mesh, dofmap)
    return float(np.sqrt(max(u @ (K @ u), 0.0)))


def l2_error(mesh, dofmap, u, exact, order=5):
    """``|| u_h - exact ||_{L^2}`` with a degree-5 rule."""
    geo = element_geometry(mesh.points, mesh.triangles, order)
    uh = values_at_quadrature(mesh, dofmap, u, geo)
    ex = exact(geo.qpoints.reshape(-1, 2)).reshape(uh.shape)
    return float(np.sqrt(np.sum(geo.qweights * (uh - ex) ** 2)))


def h1_error(mesh, dofmap, u, exact_grad, order=5):
    """``|| grad u_h - grad exact ||_{L^2}``."""
    geo = element_geometry(mesh.points, mesh.triangles, order)
    g = gradients(mesh, dofmap, u, geo)
    ex = exact_grad(geo.qpoints.reshape(-1, 2)).reshape(geo.qpoints.shape)
    return float(np.sqrt(np.sum(geo.qweights * np.sum((g[:, None, :] - ex) ** 2, axis=2))))


def convergence_orders(hs, errors):
    """Observed orders between consecutive refinements."""
    hs = np.asarray(hs, float)
    e = np.asarray(errors, float)
    return np.log(e[:-1] / e[1:]) / np.log(hs[:-1] / hs[1:])


# -- manufactured solution --------------------------------------------------
def _mms_u(p):
    return np.cos(2 * np.pi * p[:, 0]) * np.cos(2 * np.pi * p[:, 1])


def _mms_grad(p):
    k = 2 * np.pi
    return np.column_stack([
        -k * np.sin(k * p[:, 0]) * np.cos(k * p[:, 1]),
        -k * np.cos(k * p[:, 0]) * np.sin(k * p[:, 1]),
    ])


def manufactured_periodic(mesh):
    """Solve ``-Delta u = 8 pi^2 u*`` on a periodic (possibly perforated) cell mesh.

    The exact solution is ``u* = cos(2 pi y1) cos(2 pi y2)``; on perforated
    meshes its normal derivative is imposed on the obstacle boundary.
    Returns ``(l2_error, h1_error)`` after matching the means.
    """
    dm = DofMap.periodic(mesh)
    geo = element_geometry(mesh.points, mesh.triangles, 5)
    K = assemble_stiffness(mesh, dm)
    f = 8 * np.pi ** 2 * _mms_u(geo.qpoints.reshape(-1, 2)).reshape(geo.qweights.shape)
    local = np.einsum("mq,mq,qi->mi", geo.qweights, f, geo.bary)
    rhs = _scatter_vector(local, mesh.triangles, dm)
    edges = mesh.interface_edges
    if len(edges):
        qp, _, nrm = edge_quadrature(mesh.points, edges)
        g = np.einsum("kqd,kd->kq", _mms_grad(qp.reshape(-1, 2)).reshape(qp.shape), nrm)
        rhs += assemble_edge_load(mesh, dm, edges, g)
    M = assemble_mass(mesh, dm)
    w = M @ np.ones(dm.n_dofs)
    u = NeumannSolver(K, w).solve(rhs, compat_tol=None)
    exact_mean = float(np.sum(geo.qweights * _mms_u(geo.qpoints.reshape(-1, 2)).reshape(geo.qweights.shape)))
    u += exact_mean / np.sum(w)
    return l2_error(mesh, dm, u, _mms_u), h1_error(mesh, dm, u, _mms_grad)
