"""Triangular meshes of the periodic pore cell, the perforated domain and the unit square.

Cell meshes are generated by force-based point smoothing (in the style of
DistMesh) followed by a Delaunay triangulation, on a fundamental region of
the obstacle's symmetry group.  The region mesh is then reflected or rotated
to fill the cell, so the final mesh carries the symmetries of the geometry
exactly.  Points on the outer faces sit on a uniform grid ``k / n``, which
makes opposite faces match vertex for vertex.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshFailure
from .microgeom import convex_signed_distance, obstacle_at, rotation

MIN_ANGLE_DEG = 20.0

_I = np.eye(2)
_RX = np.array([[-1.0, 0.0], [0.0, 1.0]])
_RY = np.array([[1.0, 0.0], [0.0, -1.0]])
_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
_GROUPS = {
    "d4": [_I, _RX, _RY, -_I, _SWAP, _SWAP @ _RX, _SWAP @ _RY, -_SWAP],
    "d2": [_I, _RX, _RY, -_I],
    "c2": [_I, -_I],
    "none": [_I],
}
_REGIONS = {
    "d4": np.array([[0.0, 0.0], [0.5, 0.0], [0.5, 0.5]]),
    "d2": np.array([[0.0, 0.0], [0.5, 0.0], [0.5, 0.5], [0.0, 0.5]]),
    "c2": np.array([[-0.5, 0.0], [0.5, 0.0], [0.5, 0.5], [-0.5, 0.5]]),
    "none": np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]),
}


@dataclass
class PerforatedMesh:
    """Mesh of one periodic cell ``[origin, origin + 1]^2`` minus the obstacle.

    Attributes
    ----------
    points : (n, 2) array
    triangles : (m, 3) int array, counterclockwise
    periodic : (n,) int array
        Index of the representative vertex under periodic identification
        (the vertex itself for interior points).
    interface_edges : (k, 2) int array
        Obstacle boundary edges oriented with the pore on their left.
    origin : (2,) array
        Lower left corner of the fundamental square.
    n_face : int
        Number of face subdivisions; face vertices sit at ``origin + k / n_face``.
    """

    points: np.ndarray
    triangles: np.ndarray
    periodic: np.ndarray
    interface_edges: np.ndarray
    origin: np.ndarray
    n_face: int
    h: float
    symmetry: str = "none"
    geometry: object = None

    @property
    def n_points(self):
        return len(self.points)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def min_angle(self):
        return float(np.degrees(triangle_angles(self.points, self.triangles).min()))

    def edges(self):
        return unique_edges(self.triangles)

    def euler_characteristic(self):
        """``V - E + T`` of the (non-identified) triangulation."""
        return self.n_points - len(self.edges()) + self.n_triangles

    def face_pairs(self):
        """Pairs ``(i, j)`` of distinct vertices identified by periodicity."""
        idx = np.nonzero(self.periodic != np.arange(self.n_points))[0]
        return np.column_stack([idx, self.periodic[idx]])

    def interface_normals(self):
        """Unit normals of interface edges pointing out of the pore and their lengths."""
        a = self.points[self.interface_edges[:, 0]]
        b = self.points[self.interface_edges[:, 1]]
        d = b - a
        ln = np.linalg.norm(d, axis=1)
        return np.column_stack([d[:, 1], -d[:, 0]]) / ln[:, None], ln


@dataclass
class EpsilonMesh:
    """Mesh of the perforated macroscopic domain ``(0, 1)^2``.

    ``cell_index`` gives for every triangle the integer cell ``(i, j)`` it
    belongs to; local cell coordinates are ``x / eps - cell_index``.
    """

    points: np.ndarray
    triangles: np.ndarray
    cell_index: np.ndarray
    interface_edges: np.ndarray
    boundary_edges: np.ndarray
    eps: float
    h: float
    cell_meshes: dict = field(default_factory=dict)

    @property
    def n_points(self):
        return len(self.points)

    def areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def min_angle(self):
        return float(np.degrees(triangle_angles(self.points, self.triangles).min()))


@dataclass
class MacroMesh:
    """Structured triangulation of the unit square."""

    points: np.ndarray
    triangles: np.ndarray
    n: int
    boundary_edges: np.ndarray

    @property
    def n_points(self):
        return len(self.points)

    @property
    def h(self):
        return 1.0 / self.n

    def areas(self):
        p = self.points[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_angles(points, triangles):
    p = points[triangles]
    out = np.empty((len(triangles), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, k] = np.arccos(np.clip(cosang, -1.0, 1.0))
    return out


def unique_edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def boundary_edges_oriented(triangles):
    """Edges used by exactly one triangle, in the triangle's orientation."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


# -- fundamental region meshing ----------------------------------------------
def _group_of(obstacle):
    if obstacle is None:
        return "d4"
    tree = cKDTree(obstacle)
    for name in ("d4", "d2", "c2"):
        ok = True
        for op in _GROUPS[name]:
            d, _ = tree.query(obstacle @ op.T)
            if np.max(d) > 1e-12:
                ok = False
                break
        if ok:
            return name
    return "none"


def _on_face(p, q):
    for k in range(2):
        for v in (-0.5, 0.5):
            if p[k] == v and q[k] == v:
                return k
    return None


def _ring_points(coords, n, h):
    """Boundary points of one closed ring, plus the segments between them."""
    pts = []
    grid = -0.5 + np.arange(n + 1) / n
    for p, q in zip(coords[:-1], coords[1:]):
        k = _on_face(p, q)
        if k is not None:
            other = 1 - k
            lo, hi = sorted((p[other], q[other]))
            inner = grid[(grid > lo + 1e-13) & (grid < hi - 1e-13)]
            if q[other] < p[other]:
                inner = inner[::-1]
            seg = np.empty((len(inner) + 1, 2))
            seg[0] = p
            seg[1:, k] = p[k]
            seg[1:, other] = inner
        else:
            ln = math.hypot(q[0] - p[0], q[1] - p[1])
            m = max(1, math.ceil(ln / h - 1e-9))
            w = np.arange(m)[:, None] / m
            seg = (1 - w) * p + w * q
        pts.append(seg)
    return np.concatenate(pts)


def _lattice(region_poly, h):
    x0, y0, x1, y1 = region_poly.bounds
    dy = h * math.sqrt(3.0) / 2.0
    ks = np.arange(math.floor(y0 / dy) - 1, math.ceil(y1 / dy) + 2)
    js = np.arange(math.floor(x0 / h) - 2, math.ceil(x1 / h) + 2)
    K, Jj = np.meshgrid(ks, js, indexing="ij")
    x = Jj * h + (K % 2) * (h / 2.0)
    y = K * dy
    return np.column_stack([x.ravel(), y.ravel()])


def _make_sdf(region, obstacle):
    def sdf(p):
        d = convex_signed_distance(region, p)
        if obstacle is not None:
            d = np.maximum(d, -convex_signed_distance(obstacle, p))
        return d
    return sdf


def _triangulate(p, sdf):
    tri = Delaunay(p).simplices
    cent = p[tri].mean(axis=1)
    keep = sdf(cent) < -1e-12
    tri = tri[keep]
    pp = p[tri]
    d1 = pp[:, 1] - pp[:, 0]
    d2 = pp[:, 2] - pp[:, 0]
    area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    tri = np.where((area < 0)[:, None], tri[:, [0, 2, 1]], tri)
    return tri[np.abs(area) > 1e-14 * h_guard(p)]


def h_guard(p):
    span = np.ptp(p, axis=0).max() if len(p) else 1.0
    return span * span


def _smooth(fixed, free, sdf, h, max_iter=300, dptol=1e-3, ttol=0.1, push=0.45):
    nf = len(fixed)
    p = np.vstack([fixed, free])
    old = np.full_like(p, np.inf)
    tri = None
    eps_fd = 1e-8 * h
    for _ in range(max_iter):
        if np.max(np.linalg.norm(p - old, axis=1)) > ttol * h:
            old = p.copy()
            tri = _triangulate(p, sdf)
            bars = unique_edges(tri)
        vec = p[bars[:, 0]] - p[bars[:, 1]]
        L = np.linalg.norm(vec, axis=1)
        L0 = 1.2 * math.sqrt(np.sum(L ** 2) / len(L))
        L0 = min(L0, 1.2 * h)
        F = np.maximum(L0 - L, 0.0)
        Fv = (F / L)[:, None] * vec
        Ft = np.zeros_like(p)
        np.add.at(Ft, bars[:, 0], Fv)
        np.add.at(Ft, bars[:, 1], -Fv)
        Ft[:nf] = 0.0
        move = 0.2 * Ft
        p += move
        q = p[nf:]
        d = sdf(q)
        bad = d > -push * h
        if np.any(bad):
            qb = q[bad]
            gx = (sdf(qb + [eps_fd, 0.0]) - d[bad]) / eps_fd
            gy = (sdf(qb + [0.0, eps_fd]) - d[bad]) / eps_fd
            g = np.column_stack([gx, gy])
            gn = np.maximum(np.linalg.norm(g, axis=1), 1e-12)
            q[bad] = qb - ((d[bad] + push * h) / gn ** 2)[:, None] * g
            p[nf:] = q
        if np.max(np.linalg.norm(move[nf:], axis=1), initial=0.0) < dptol * h:
            break
    return p


def _clean_ring(coords):
    # drop vertices produced by roundoff in the boolean difference
    keep = [coords[0]]
    for c in coords[1:-1]:
        if np.hypot(*(c - keep[-1])) > 1e-9:
            keep.append(c)
    while len(keep) > 1 and np.hypot(*(keep[-1] - keep[0])) <= 1e-9:
        keep.pop()
    keep.append(keep[0])
    return np.array(keep)


def _region_mesh(region, obstacle, h, n):
    """Mesh of the convex ``region`` minus the convex ``obstacle`` (local frame)."""
    poly = shapely.Polygon(region)
    if obstacle is not None:
        poly = poly.difference(shapely.Polygon(obstacle))
    if poly.geom_type != "Polygon":
        raise MeshFailure("fundamental region is not a single polygon")
    poly = shapely.geometry.polygon.orient(poly, 1.0)
    rings = [_clean_ring(np.asarray(poly.exterior.coords))]
    rings += [_clean_ring(np.asarray(r.coords)) for r in poly.interiors]
    ring_pts = [_ring_points(r, n, h) for r in rings]
    fixed = np.concatenate(ring_pts)
    segs = []
    off = 0
    for rp in ring_pts:
        m = len(rp)
        idx = np.arange(m) + off
        segs.append(np.column_stack([idx, np.roll(idx, -1)]))
        off += m
    segs = np.concatenate(segs)
    sdf = _make_sdf(region, obstacle)
    lat = _lattice(poly, h)
    lat = lat[sdf(lat) < -0.5 * h]
    p = _smooth(fixed, lat, sdf, h)
    nf = len(fixed)
    for _ in range(8):
        tri = _triangulate(p, sdf)
        have = {tuple(e) for e in unique_edges(tri)}
        missing = [k for k, (a, b) in enumerate(segs) if (min(a, b), max(a, b)) not in have]
        if not missing:
            break
        new_pts = []
        new_segs = []
        keep = np.ones(len(segs), bool)
        for k in missing:
            a, b = segs[k]
            if _on_face(p[a], p[b]) is not None:
                raise MeshFailure("periodic face segment lost in triangulation")
            keep[k] = False
            idx = len(p) + len(new_pts)
            new_pts.append(0.5 * (p[a] + p[b]))
            new_segs += [(a, idx), (idx, b)]
        # inserted points are fixed; keep them ahead of the free points
        p_new = np.vstack([p[:nf], new_pts, p[nf:]])
        shift = len(new_pts)

        def remap(i):
            return i if i < nf else i + shift if i < len(p) else i - len(p) + nf

        segs = np.array([(remap(a), remap(b)) for a, b in segs[keep]]
                        + [(remap(a), remap(b)) for a, b in new_segs])
        p = p_new
        nf += shift
        p = _smooth(p[:nf], p[nf:], sdf, h, max_iter=60)
    else:
        raise MeshFailure("could not recover boundary segments")
    return p, tri


def _snap_face(points, n):
    grid = -0.5 + np.arange(n + 1) / n
    out = points.copy()
    out[np.abs(out) < 1e-13] = 0.0
    for k in range(2):
        for v in (-0.5, 0.5):
            on = np.abs(out[:, k] - v) < 1e-12
            out[on, k] = v
            other = out[on, 1 - k]
            j = np.clip(np.rint((other + 0.5) * n).astype(int), 0, n)
            close = np.abs(grid[j] - other) < 1e-10
            other[close] = grid[j[close]]
            out[on, 1 - k] = other
    return out


@functools.lru_cache(maxsize=256)
def _local_mesh_cached(obstacle_key, h, n):
    obstacle = None if obstacle_key is None else np.array(obstacle_key).reshape(-1, 2)
    return _local_mesh(obstacle, h, n)


def _c2_region(obstacle, n):
    """Half of the square cut by a line through the center and a face grid point.

    The line is chosen as far as possible from the obstacle vertices so the
    cut does not create tiny boundary pieces.
    """
    g = -0.5 + np.arange(n + 1) / n
    cands = [np.array([0.5, v]) for v in g] + [np.array([v, 0.5]) for v in g[1:-1][::-1]]
    best, best_score = None, -1.0
    for P in cands:
        d = P / np.linalg.norm(P)
        score = float(np.min(np.abs(obstacle[:, 0] * d[1] - obstacle[:, 1] * d[0])))
        if score > best_score + 1e-12:
            best, best_score = P, score
    P = best
    corners = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]])
    ang = lambda q: math.atan2(q[1], q[0])
    a0 = ang(P)
    rel = [((ang(c) - a0) % (2 * math.pi), c) for c in corners]
    inner = [c for r, c in sorted(rel, key=lambda rc: rc[0]) if 1e-12 < r < math.pi - 1e-12]
    return np.array([P] + inner + [-P])


def _local_mesh(obstacle, h, n):
    group = _group_of(obstacle)
    region = _c2_region(obstacle, n) if group == "c2" else _REGIONS[group]
    p, tri = _region_mesh(region, obstacle, h, n)
    pts, tris = [], []
    off = 0
    for op in _GROUPS[group]:
        pts.append(p @ op.T)
        t = tri + off
        if np.linalg.det(op) < 0:
            t = t[:, [0, 2, 1]]
        tris.append(t)
        off += len(p)
    pts = np.concatenate(pts)
    tris = np.concatenate(tris)
    # merge coincident points from neighbouring images
    tree = cKDTree(pts)
    pairs = tree.query_pairs(1e-10, output_type="ndarray")
    parent = np.arange(len(pts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(pts))])
    uniq, inv = np.unique(roots, return_inverse=True)
    pts = _snap_face(pts[uniq], n)
    tris = inv[tris]
    if np.any((tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])):
        raise MeshFailure("degenerate triangle after assembling symmetric images")
    # canonical order: sort points lexicographically for reproducibility
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    pts = pts[order]
    tris = rank[tris]
    tris = tris[np.lexsort((tris[:, 2], tris[:, 1], tris[:, 0]))]
    return pts, tris, group


def _periodic_map(local_pts):
    key = local_pts.copy()
    key[key[:, 0] == 0.5, 0] = -0.5
    key[key[:, 1] == 0.5, 1] = -0.5
    table = {}
    master = np.empty(len(local_pts), dtype=np.int64)
    # representatives are the vertices already on the lower/left faces
    order = np.lexsort((local_pts[:, 1] == 0.5, local_pts[:, 0] == 0.5))
    for i in order:
        k = (key[i, 0], key[i, 1])
        master[i] = table.setdefault(k, i)
    return master


def _face_count(h):
    n = math.ceil(1.0 / h - 1e-9)
    return n + (n % 2)


def mesh_cell(geom, h, frame="obstacle"):
    """Mesh the pore of ``geom`` with target edge length ``h``.

    ``frame="obstacle"`` meshes the square of side 1 centered on the obstacle
    (the periodic cell seen from the obstacle); ``frame="cell"`` meshes
    ``[0, 1]^2``.  Both describe the same periodic pore.  In the obstacle
    frame, slices that differ by a translation get identical meshes up to
    that translation.
    """
    if not 0 < h <= 0.5:
        raise ValueError("mesh size h must lie in (0, 1/2]")
    n = _face_count(h)
    center = np.asarray(geom.center, float) if frame == "obstacle" else np.array([0.5, 0.5])
    if frame not in ("obstacle", "cell"):
        raise ValueError(f"unknown frame {frame!r}")
    if geom.hole is None:
        local_pts, tris = _structured_square(n)
        group = "d4"
        obstacle = None
    else:
        if frame == "obstacle":
            obstacle = _local_obstacle(geom)
        else:
            obstacle = geom.obstacle - center
        obstacle = np.where(np.abs(obstacle) < 1e-12, 0.0, obstacle)
        key = tuple(np.round(obstacle, 15).ravel().tolist())
        local_pts, tris, group = _local_mesh_cached(key, float(h), n)
    pts = local_pts + center
    master = _periodic_map(local_pts)
    bnd = boundary_edges_oriented(tris)
    lp = local_pts
    on_face = np.zeros(len(bnd), bool)
    for k in range(2):
        for v in (-0.5, 0.5):
            on_face |= (lp[bnd[:, 0], k] == v) & (lp[bnd[:, 1], k] == v)
    iface = bnd[~on_face]
    mesh = PerforatedMesh(points=pts, triangles=tris, periodic=master, interface_edges=iface,
                          origin=center - 0.5, n_face=n, h=float(h), symmetry=group, geometry=geom)
    ang = mesh.min_angle()
    if ang < MIN_ANGLE_DEG:
        raise MeshFailure(f"minimum angle {ang:.1f} deg below {MIN_ANGLE_DEG} deg")
    return mesh


def _local_obstacle(geom):
    # the polygon relative to its center is independent of the translation
    if geom.local_obstacle is not None:
        return geom.local_obstacle
    return geom.obstacle - geom.center


def _structured_square(n, start=-0.5):
    g = start + np.arange(n + 1) / n
    X, Y = np.meshgrid(g, g, indexing="xy")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return pts, tris


def unit_square_mesh(n):
    """Structured mesh of ``[0, 1]^2`` with ``n`` squares per side, each split in two."""
    pts, tris = _structured_square(n, start=0.0)
    return MacroMesh(points=pts, triangles=tris, n=n, boundary_edges=boundary_edges_oriented(tris))


def mesh_epsilon_domain(program, eps, h, t=0.0, s=0.0):
    """Tile ``(0, 1)^2`` with ``1/eps`` by ``1/eps`` scaled copies of the cell mesh.

    ``h`` is the mesh size in cell units, so the physical size is ``eps * h``.
    Cells whose geometry depends on the macro position get their own mesh.
    """
    m = round(1.0 / eps)
    if abs(m * eps - 1.0) > 1e-12:
        raise ValueError("1/eps must be an integer")
    meshes = {}
    all_pts, all_tris, cells = [], [], []
    off = 0
    for j in range(m):
        for i in range(m):
            xc = ((i + 0.5) * eps, (j + 0.5) * eps)
            geom = obstacle_at(program, t, xc, s)
            key = program.slice_mesh_key(t, xc, s) + (round(float(geom.center[0]), 14),
                                                      round(float(geom.center[1]), 14))
            if key not in meshes:
                meshes[key] = mesh_cell(geom, h, frame="cell")
            cm = meshes[key]
            all_pts.append((cm.points + np.array([i, j])) * eps)
            all_tris.append(cm.triangles + off)
            cells.append(np.tile([i, j], (len(cm.triangles), 1)))
            off += cm.n_points
    pts = np.concatenate(all_pts)
    tris = np.concatenate(all_tris)
    cells = np.concatenate(cells)
    # merge shared face vertices; face grids coincide exactly between neighbours
    _, first, inv = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    pts = pts[first]
    tris = inv[tris]
    bnd = boundary_edges_oriented(tris)
    pa, pb = pts[bnd[:, 0]], pts[bnd[:, 1]]
    outer = np.zeros(len(bnd), bool)
    for k in range(2):
        for v in (0.0, 1.0):
            outer |= (np.abs(pa[:, k] - v) < 1e-12) & (np.abs(pb[:, k] - v) < 1e-12)
    return EpsilonMesh(points=pts, triangles=tris, cell_index=cells, interface_edges=bnd[~outer],
                       boundary_edges=bnd[outer], eps=eps, h=h, cell_meshes=meshes)


# -- output -------------------------------------------------------------------
def write_mesh_text(path, mesh):
    """Plain text format: counts line, then points, then triangles."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_points} {len(mesh.triangles)}\n")
        for p in mesh.points:
            fh.write(f"{float(p[0])!r} {float(p[1])!r}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")


def read_mesh_text(path):
    with open(path) as fh:
        npts, ntri = (int(v) for v in fh.readline().split())
        pts = np.array([[float(v) for v in fh.readline().split()] for _ in range(npts)])
        tris = np.array([[int(v) for v in fh.readline().split()] for _ in range(ntri)], dtype=np.int64)
    return pts, tris


def write_vtk(path, points, triangles, point_data=None, title="pulshom"):
    """Legacy ASCII VTK unstructured grid with optional scalar point data."""
    point_data = point_data or {}
    n = len(points)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        for p in points:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} 0.0\n")
        fh.write(f"CELLS {len(triangles)} {4 * len(triangles)}\n")
        for t in triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")
        fh.write(f"CELL_TYPES {len(triangles)}\n")
        fh.write("5\n" * len(triangles))
        if point_data:
            fh.write(f"POINT_DATA {n}\n")
            for name, vals in point_data.items():
                vals = np.asarray(vals, float)
                if vals.shape != (n,):
                    raise ValueError(f"point data {name!r} has shape {vals.shape}, expected ({n},)")
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(repr(float(v)) for v in vals))
                fh.write("\n")
