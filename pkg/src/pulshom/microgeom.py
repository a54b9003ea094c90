"""Periodic cell geometry with a moving obstacle.

A :class:`MotionProgram` describes one period ``s in [0, 1]`` of obstacle
motion inside the unit cell ``Y = [0, 1]^2``: a shape, keyframed placements
(center and rotation angle, linearly interpolated), an optional breathing
scale for disks and an optional macroscopic modulation of the obstacle size.
:func:`obstacle_at` turns a program into the polygonal pore geometry of a
single slice, and :class:`LimitMap` provides a smooth periodic map from the
slice ``s = 0`` onto any other slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ClearanceViolation,
    DegenerateMap,
    InvalidSlice,
    NonFiniteCoefficient,
    PointNotOnInterface,
)
from .exprs import Expression

ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])
DEFAULT_CLEARANCE = 0.02
INTERFACE_TOL = 1e-9
DEFAULT_BLEND = 0.15


def rotation(theta):
    """Rotation matrix with entries snapped to exact values near multiples of pi/2."""
    c, s = math.cos(theta), math.sin(theta)
    vals = []
    for v in (c, s):
        for target in (-1.0, 0.0, 1.0):
            if abs(v - target) < 1e-14:
                v = target
        vals.append(v)
    c, s = vals
    return np.array([[c, -s], [s, c]])


def rotation_batch(theta):
    """Stack of rotation matrices, shape ``(n, 2, 2)``."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(np.shape(theta) + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def polygon_area(vertices):
    """Signed shoelace area (positive for counterclockwise order)."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def segment_distance(points, a, b):
    """Distance from each point to each segment ``a[k] -> b[k]``.

    Returns ``(dist, closest)`` with shapes ``(n, m)`` and ``(n, m, 2)``.
    """
    points = np.asarray(points, dtype=float)
    d = b - a
    ll = np.einsum("ij,ij->i", d, d)
    w = points[:, None, :] - a[None, :, :]
    tt = np.clip(np.einsum("nmk,mk->nm", w, d) / ll[None, :], 0.0, 1.0)
    closest = a[None, :, :] + tt[..., None] * d[None, :, :]
    dist = np.linalg.norm(points[:, None, :] - closest, axis=2)
    return dist, closest


def convex_contains(vertices, points, tol=0.0):
    """True for points inside (or within ``tol`` of) a CCW convex polygon."""
    points = np.asarray(points, dtype=float)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    e = b - a
    rel = points[:, None, :] - a[None, :, :]
    cross = e[None, :, 0] * rel[..., 1] - e[None, :, 1] * rel[..., 0]
    lens = np.linalg.norm(e, axis=1)
    return np.all(cross >= -tol * lens[None, :], axis=1)


def convex_signed_distance(vertices, points):
    """Signed distance to a CCW convex polygon (negative inside)."""
    points = np.asarray(points, dtype=float)
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    dist, _ = segment_distance(points, a, b)
    d = dist.min(axis=1)
    inside = convex_contains(vertices, points)
    return np.where(inside, -d, d)


@dataclass(frozen=True)
class ObstacleShape:
    """Rigid obstacle shape in its own frame, centered at the origin.

    ``kind`` is ``"rectangle"`` (half extents ``half_width`` along the local
    first axis and ``half_height`` along the second) or ``"disk"``.  Disks
    are polygonized as regular N-gons with N a multiple of 8, chosen so the
    chord error is at most a quarter of ``resolution``.
    """

    kind: str
    half_width: float = 0.0
    half_height: float = 0.0
    radius: float = 0.0
    resolution: float = 1.0 / 64.0

    def __post_init__(self):
        if self.kind == "rectangle":
            if not (0 < self.half_width < 0.5 and 0 < self.half_height < 0.5):
                raise ValueError("rectangle half extents must lie in (0, 1/2)")
        elif self.kind == "disk":
            if not 0 < self.radius < 0.5:
                raise ValueError("disk radius must lie in (0, 1/2)")
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")

    @property
    def n_sides(self):
        if self.kind == "rectangle":
            return 4
        ratio = 1.0 - self.resolution / (4.0 * self.radius)
        n = math.pi / math.acos(max(ratio, -1.0)) if ratio < 1 else 16
        return max(16, 8 * math.ceil(n / 8))

    def local_vertices(self, size_factor=1.0):
        """CCW polygon vertices; ``size_factor`` scales half_width or radius."""
        if self.kind == "rectangle":
            a = self.half_width * size_factor
            b = self.half_height
            # start on the lower-left corner so a == b gives the same ordering
            return np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
        n = self.n_sides
        ang = 2.0 * np.pi * np.arange(n) / n
        r = self.radius * size_factor
        pts = np.column_stack([np.cos(ang), np.sin(ang)]) * r
        pts[np.abs(pts) < 1e-15] = 0.0
        return pts

    def to_dict(self):
        if self.kind == "rectangle":
            d = {"kind": "rectangle", "half_width": self.half_width, "half_height": self.half_height}
        else:
            d = {"kind": "disk", "radius": self.radius}
        if self.resolution != 1.0 / 64.0:
            d["resolution"] = self.resolution
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class Keyframe:
    s: float
    center: tuple
    angle: float = 0.0

    def to_dict(self):
        return {"s": self.s, "center": [float(self.center[0]), float(self.center[1])], "angle": self.angle}

    @classmethod
    def from_dict(cls, d):
        return cls(s=float(d["s"]), center=tuple(float(c) for c in d["center"]),
                   angle=float(d.get("angle", 0.0)))


@dataclass
class MotionProgram:
    """One period of obstacle motion.

    Parameters
    ----------
    shape : ObstacleShape or None
        ``None`` gives an empty cell (no obstacle).
    keyframes : sequence of Keyframe
        Placements at increasing ``s`` from 0 to 1; the first and last
        placements must coincide.  Center and angle are interpolated linearly.
    breathing : float
        Disk radius oscillation amplitude: ``r(s) = r0 + breathing sin(2 pi s)``.
    modulation : str or None
        Expression in ``t, x1, x2`` multiplying the obstacle half width (or
        radius), giving macroscopically varying geometry.
    clearance : float
        Minimal distance between obstacle and cell boundary.
    """

    shape: ObstacleShape | None
    keyframes: tuple = ()
    breathing: float = 0.0
    modulation: str | None = None
    clearance: float = DEFAULT_CLEARANCE
    _mod: Expression | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.keyframes = tuple(
            k if isinstance(k, Keyframe) else Keyframe.from_dict(k) for k in self.keyframes
        )
        if self.shape is not None:
            if len(self.keyframes) < 1:
                raise ValueError("an obstacle needs at least one keyframe")
            if len(self.keyframes) == 1:
                k = self.keyframes[0]
                self.keyframes = (Keyframe(0.0, k.center, k.angle), Keyframe(1.0, k.center, k.angle))
            ss = [k.s for k in self.keyframes]
            if ss[0] != 0.0 or ss[-1] != 1.0 or any(b <= a for a, b in zip(ss, ss[1:])):
                raise ValueError("keyframes must start at s=0, end at s=1 and increase strictly")
            first, last = self.keyframes[0], self.keyframes[-1]
            if not (np.allclose(first.center, last.center, atol=1e-14)
                    and abs(first.angle - last.angle) < 1e-14):
                raise ValueError("motion must be periodic: first and last keyframes differ")
            if self.breathing and self.shape.kind != "disk":
                raise ValueError("breathing is only defined for disks")
            if self.breathing and abs(self.breathing) >= self.shape.radius:
                raise ValueError("breathing amplitude must be smaller than the radius")
        if self.modulation is not None:
            self._mod = Expression(self.modulation, ("t", "x1", "x2"))

    # -- motion state -------------------------------------------------------
    def _segment(self, s):
        ss = [k.s for k in self.keyframes]
        if s >= 1.0:
            return 0
        return int(np.searchsorted(ss, s, side="right") - 1)

    def placement(self, s):
        """Center and angle at slice ``s``."""
        if self.shape is None:
            return np.array([0.5, 0.5]), 0.0
        k = self._segment(s)
        if s >= 1.0:
            kf = self.keyframes[-1]
            return np.array(kf.center, dtype=float), kf.angle
        a, b = self.keyframes[k], self.keyframes[k + 1]
        w = (s - a.s) / (b.s - a.s)
        if w == 0.0:
            return np.array(a.center, dtype=float), a.angle
        c = (1 - w) * np.asarray(a.center) + w * np.asarray(b.center)
        return c, (1 - w) * a.angle + w * b.angle

    def placement_rate(self, s):
        """Center velocity and angular velocity (right derivative, periodic)."""
        if self.shape is None:
            return np.zeros(2), 0.0
        k = self._segment(s)
        a, b = self.keyframes[k], self.keyframes[k + 1]
        ds = b.s - a.s
        return (np.asarray(b.center, float) - np.asarray(a.center, float)) / ds, (b.angle - a.angle) / ds

    def scale(self, s):
        """Breathing scale factor and its derivative in ``s``."""
        if not self.breathing:
            return 1.0, 0.0
        beta = self.breathing / self.shape.radius
        return 1.0 + beta * math.sin(2 * math.pi * s), beta * 2 * math.pi * math.cos(2 * math.pi * s)

    def size_factor(self, t, x):
        if self._mod is None:
            return 1.0
        val = float(self._mod(t=float(t), x1=float(x[0]), x2=float(x[1])))
        if not np.isfinite(val) or val <= 0:
            raise NonFiniteCoefficient(f"modulation {self.modulation!r} gives {val} at t={t}, x={tuple(x)}")
        return val

    def slice_mesh_key(self, t, x, s):
        """Key identifying the slice geometry up to translation of the obstacle."""
        if self.shape is None:
            return ("empty",)
        _, ang = self.placement(s)
        sig, _ = self.scale(s)
        return (self.shape, round(ang, 14), round(sig, 14), round(self.size_factor(t, x), 14))

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        d = {"obstacle": None if self.shape is None else self.shape.to_dict()}
        d["keyframes"] = [k.to_dict() for k in self.keyframes]
        if self.breathing:
            d["breathing"] = self.breathing
        if self.modulation is not None:
            d["modulation"] = self.modulation
        if self.clearance != DEFAULT_CLEARANCE:
            d["clearance"] = self.clearance
        return d

    @classmethod
    def from_dict(cls, d):
        obst = d.get("obstacle")
        return cls(
            shape=None if obst is None else ObstacleShape.from_dict(obst),
            keyframes=tuple(Keyframe.from_dict(k) for k in d.get("keyframes", ())),
            breathing=float(d.get("breathing", 0.0)),
            modulation=d.get("modulation"),
            clearance=float(d.get("clearance", DEFAULT_CLEARANCE)),
        )

    def __eq__(self, other):
        return isinstance(other, MotionProgram) and self.to_dict() == other.to_dict()


# -- standard programs ------------------------------------------------------
def empty_program():
    return MotionProgram(shape=None)


def static_program(shape, center=(0.5, 0.5), angle=0.0):
    return MotionProgram(shape=shape, keyframes=(Keyframe(0.0, tuple(center), angle),
                                                 Keyframe(1.0, tuple(center), angle)))


def shuttle_program(a=0.05, b=0.1, left=0.25, right=0.75, height=0.5, modulation=None):
    """Rectangle pushed right, turned a quarter, pushed back, turned back.

    With the obstacle taller than wide, the outbound stroke moves the broad
    face through the fluid and the return stroke the narrow one.
    """
    half = math.pi / 2
    kfs = (
        Keyframe(0.0, (left, height), 0.0),
        Keyframe(0.25, (right, height), 0.0),
        Keyframe(0.5, (right, height), half),
        Keyframe(0.75, (left, height), half),
        Keyframe(1.0, (left, height), 0.0),
    )
    return MotionProgram(shape=ObstacleShape("rectangle", half_width=a, half_height=b),
                         keyframes=kfs, modulation=modulation)


def back_and_forth_program(a=0.05, b=0.1, start=(0.25, 0.5), end=(0.75, 0.5), turn=0.5):
    """Translate from ``start`` to ``end`` over ``[0, turn]`` and back over ``[turn, 1]``.

    With ``turn = 0.5`` every placement at ``s`` recurs at ``1 - s``.
    """
    kfs = (Keyframe(0.0, tuple(start)), Keyframe(turn, tuple(end)), Keyframe(1.0, tuple(start)))
    return MotionProgram(shape=ObstacleShape("rectangle", half_width=a, half_height=b), keyframes=kfs)


def strip_program(half_height, half_width=0.05, stroke=0.1, leg=0.05):
    """Slab pushed along ``e1`` at speed ``stroke / leg``, then returned slowly.

    As ``half_height`` approaches 1/2 the slab nearly spans the cell and the
    displaced fluid has to pass through thin gaps.
    """
    x0 = 0.5 - stroke / 2
    kfs = (Keyframe(0.0, (x0, 0.5)), Keyframe(leg, (x0 + stroke, 0.5)), Keyframe(1.0, (x0, 0.5)))
    return MotionProgram(shape=ObstacleShape("rectangle", half_width=half_width, half_height=half_height),
                         keyframes=kfs)


def breathing_disk_program(radius=0.2, amplitude=0.05, center=(0.5, 0.5), resolution=1.0 / 64.0):
    shape = ObstacleShape("disk", radius=radius, resolution=resolution)
    return MotionProgram(shape=shape, keyframes=(Keyframe(0.0, tuple(center)), Keyframe(1.0, tuple(center))),
                         breathing=amplitude)


# -- slice geometry ---------------------------------------------------------
@dataclass
class CellGeometry:
    """Pore geometry of one slice.

    ``outer`` is the unit square (CCW); ``hole`` holds the obstacle polygon
    in clockwise order (so the pore lies on the left of every boundary edge),
    or ``None`` for an empty cell.
    """

    t: float
    x: tuple
    s: float
    center: np.ndarray
    angle: float
    scale: float
    hole: np.ndarray | None
    porosity: float
    velocity: np.ndarray
    omega: float
    scale_rate: float
    local_obstacle: np.ndarray | None = None
    outer: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))

    @property
    def obstacle(self):
        """Obstacle polygon in counterclockwise order."""
        return None if self.hole is None else self.hole[::-1].copy()

    @property
    def obstacle_area(self):
        return 0.0 if self.hole is None else polygon_area(self.obstacle)

    def velocity_field(self, points):
        """Rigid-plus-dilation velocity ``c' + omega J (y - c) + (sigma'/sigma)(y - c)``."""
        r = np.asarray(points, float) - self.center
        return self.velocity + self.omega * (r @ ROT90.T) + (self.scale_rate / self.scale) * r

    def interface_edges(self):
        """Edges of the obstacle as ``(a, b, normal, length)``; the normal points into the obstacle."""
        ob = self.obstacle
        a = ob
        b = np.roll(ob, -1, axis=0)
        d = b - a
        ln = np.linalg.norm(d, axis=1)
        nrm = np.column_stack([-d[:, 1], d[:, 0]]) / ln[:, None]
        return a, b, nrm, ln

    def interface_distance(self, points):
        if self.hole is None:
            return np.full(len(points), np.inf)
        a, b, _, _ = self.interface_edges()
        dist, _ = segment_distance(np.atleast_2d(points), a, b)
        return dist.min(axis=1)


def obstacle_at(program, t, x, s):
    """Pore geometry of ``program`` at macro time ``t``, point ``x`` and slice ``s``."""
    s = float(s)
    if not (0.0 <= s <= 1.0) or not np.isfinite(s):
        raise InvalidSlice(f"slice parameter s={s} is outside [0, 1]")
    x = tuple(float(v) for v in x)
    if program.shape is None:
        return CellGeometry(t=t, x=x, s=s, center=np.array([0.5, 0.5]), angle=0.0, scale=1.0,
                            hole=None, porosity=1.0, velocity=np.zeros(2), omega=0.0, scale_rate=0.0)
    c, ang = program.placement(s)
    cdot, omega = program.placement_rate(s)
    sig, sigdot = program.scale(s)
    lam = program.size_factor(t, x)
    local = program.shape.local_vertices(lam) * sig @ rotation(ang).T
    verts = local + c
    gap = np.min(np.concatenate([verts.ravel(), 1.0 - verts.ravel()]))
    if gap < program.clearance:
        raise ClearanceViolation(
            f"obstacle at s={s} is {gap:.4g} from the cell boundary (needs {program.clearance})"
        )
    area = polygon_area(verts)
    return CellGeometry(t=t, x=x, s=s, center=c, angle=ang, scale=sig, hole=verts[::-1].copy(),
                        porosity=1.0 - area, velocity=cdot, omega=omega, scale_rate=sigdot,
                        local_obstacle=local)


def boundary_velocity(program, t, x, s, y):
    """Velocity of the obstacle boundary at points ``y`` (shape ``(n, 2)`` or ``(2,)``)."""
    geom = obstacle_at(program, t, x, s)
    pts = np.atleast_2d(np.asarray(y, dtype=float))
    if geom.hole is None:
        raise PointNotOnInterface("the cell has no obstacle")
    dist = geom.interface_distance(pts)
    if np.any(dist > INTERFACE_TOL):
        k = int(np.argmax(dist))
        raise PointNotOnInterface(f"point {pts[k]} is {dist[k]:.3g} away from the obstacle boundary")
    v = geom.velocity_field(pts)
    return v[0] if np.ndim(y) == 1 else v


def porosity(program, t, x, s):
    return obstacle_at(program, t, x, s).porosity


def porosity_rate(program, t, x, s):
    """Exact derivative of the pore area with respect to ``s``.

    Only breathing changes the obstacle area, so
    ``d Theta / ds = -2 (sigma'/sigma) |obstacle|``.
    """
    geom = obstacle_at(program, t, x, s)
    if geom.hole is None:
        return 0.0
    return -2.0 * geom.scale_rate / geom.scale * geom.obstacle_area


def interface_flux(geom):
    """Integral of ``v . nu`` over the obstacle boundary, ``nu`` the pore outward normal."""
    if geom.hole is None:
        return 0.0
    a, b, nrm, ln = geom.interface_edges()
    va = geom.velocity_field(a)
    vb = geom.velocity_field(b)
    return float(np.sum(0.5 * ln * np.einsum("ij,ij->i", va + vb, nrm)))


# -- limit maps -------------------------------------------------------------
def smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def smoothstep_deriv(t):
    inside = (t > 0.0) & (t < 1.0)
    tc = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * tc * tc * (1.0 - tc) ** 2, 0.0)


@dataclass
class MapValues:
    """Reference map data at a set of points for one slice."""

    psi: np.ndarray      # (n, 2) image points
    Psi: np.ndarray      # (n, 2, 2) Jacobian, Psi[:, i, j] = d psi_i / d y_j
    J: np.ndarray        # (n,)
    A: np.ndarray        # (n, 2, 2) cofactor matrix J Psi^{-1}
    dpsi_ds: np.ndarray  # (n, 2)
    dJ_ds: np.ndarray    # (n,)


def _adjugate(M):
    A = np.empty_like(M)
    A[:, 0, 0] = M[:, 1, 1]
    A[:, 0, 1] = -M[:, 0, 1]
    A[:, 1, 0] = -M[:, 1, 0]
    A[:, 1, 1] = M[:, 0, 0]
    return A


class LimitMap:
    """Periodic map from the pore at ``s = 0`` to the pore at slice ``s``.

    ``kind="twist"`` (default) moves a disk of radius ``R_in`` around the
    obstacle rigidly and blends to the identity across a shell of width
    ``rho_blend`` (default: as wide as the periodic cell allows) by
    interpolating rotation angle and radial scale in polar coordinates.  For rigid motions it has unit Jacobian everywhere.
    ``kind="blend"`` interpolates the rigid displacement with a cutoff in the
    distance to the obstacle; it only works for small displacements.

    A :class:`DegenerateMap` is raised when ``J`` drops below ``c_J`` on the
    sampled slices.
    """

    def __init__(self, program, t=0.0, x=(0.5, 0.5), kind="twist", rho_blend=None, c_J=0.1,
                 check_samples=64):
        if kind not in ("twist", "blend"):
            raise ValueError(f"unknown map kind {kind!r}")
        self.program = program
        self.t = float(t)
        self.x = tuple(float(v) for v in x)
        self.kind = kind
        self.c_J = c_J
        self.ref = obstacle_at(program, t, x, 0.0)
        self.empty = self.ref.hole is None
        if not self.empty:
            r_in = float(np.max(np.linalg.norm(self.ref.obstacle - self.ref.center, axis=1)))
            self.r_in = r_in
            if rho_blend is None:
                # widest shell that stays clear of the periodic images
                rho_blend = (0.48 - r_in) if kind == "twist" else DEFAULT_BLEND
        self.rho_blend = rho_blend
        if not self.empty:
            if kind == "twist" and r_in + rho_blend >= 0.5:
                raise DegenerateMap(
                    f"blend shell {r_in:.3f} + {rho_blend:.3f} does not fit in the periodic cell"
                )
        if check_samples:
            self.check(check_samples)

    # motion relative to the reference slice
    def _state(self, s):
        prog = self.program
        c, ang = prog.placement(s)
        cdot, omega = prog.placement_rate(s)
        sig, sigdot = prog.scale(s)
        sig0, _ = prog.scale(0.0)
        return c, ang - self.ref.angle, cdot, omega, sig / sig0, sigdot / sig0

    def evaluate(self, s, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = len(y)
        if self.empty:
            eye = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
            return MapValues(y.copy(), eye, np.ones(n), eye.copy(), np.zeros((n, 2)), np.zeros(n))
        if self.kind == "twist":
            return self._twist(s, y)
        return self._blend(s, y)

    def _twist(self, s, y):
        c, dth, cdot, omega, sr, srdot = self._state(s)
        c0 = self.ref.center
        r = y - c0
        r -= np.round(r)
        rho = np.linalg.norm(r, axis=1)
        safe = np.where(rho > 0, rho, 1.0)
        rh = np.where(rho[:, None] > 0, r / safe[:, None], np.array([1.0, 0.0]))
        rp = rh @ ROT90.T
        u = (rho - self.r_in) / self.rho_blend
        chi = 1.0 - smoothstep(u)
        dchi = -smoothstep_deriv(u) / self.rho_blend
        g = 1.0 + chi * (sr - 1.0)
        Gp = 1.0 + (chi + rho * dchi) * (sr - 1.0)
        alpha = chi * dth
        dalpha = dchi * dth
        R = rotation_batch(alpha)
        M = (Gp[:, None, None] * np.einsum("ni,nj->nij", rh, rh)
             + (g * rho * dalpha)[:, None, None] * np.einsum("ni,nj->nij", rp, rh)
             + g[:, None, None] * np.einsum("ni,nj->nij", rp, rp))
        Psi = R @ M
        J = Gp * g
        gr = g[:, None] * r
        psi = c + np.einsum("nij,nj->ni", R, gr) + (y - c0 - r)
        inner = (chi * omega)[:, None] * (gr @ ROT90.T) + (chi * srdot)[:, None] * r
        dpsi = cdot + np.einsum("nij,nj->ni", R, inner)
        dJ = (chi + rho * dchi) * srdot * g + Gp * chi * srdot
        return MapValues(psi, Psi, J, _adjugate(Psi), dpsi, dJ)

    def _blend(self, s, y):
        c, dth, cdot, omega, sr, srdot = self._state(s)
        c0 = self.ref.center
        r = y - c0
        r -= np.round(r)
        yw = c0 + r
        ob = self.ref.obstacle
        a = ob
        b = np.roll(ob, -1, axis=0)
        dist, closest = segment_distance(yw, a, b)
        k = np.argmin(dist, axis=1)
        dmin = dist[np.arange(len(yw)), k]
        cl = closest[np.arange(len(yw)), k]
        inside = convex_contains(ob, yw)
        dmin = np.where(inside, 0.0, dmin)
        grad = np.where((dmin > 0)[:, None], (yw - cl) / np.where(dmin > 0, dmin, 1.0)[:, None], 0.0)
        u = dmin / self.rho_blend
        chi = 1.0 - smoothstep(u)
        dchi = -smoothstep_deriv(u) / self.rho_blend
        Rr = rotation(dth)
        L = sr * Rr
        Ldot = srdot * Rr + sr * omega * (Rr @ ROT90)
        rigid = c + r @ L.T
        disp = rigid - yw
        Psi = (np.eye(2) + chi[:, None, None] * (L - np.eye(2))
               + np.einsum("ni,nj->nij", disp, dchi[:, None] * grad))
        drigid = cdot + r @ Ldot.T
        dPsi = (chi[:, None, None] * Ldot + np.einsum("ni,nj->nij", drigid, dchi[:, None] * grad))
        A = _adjugate(Psi)
        J = Psi[:, 0, 0] * Psi[:, 1, 1] - Psi[:, 0, 1] * Psi[:, 1, 0]
        dJ = np.einsum("nij,nji->n", A, dPsi)
        psi = y + chi[:, None] * disp
        return MapValues(psi, Psi, J, A, chi[:, None] * drigid, dJ)

    def check(self, samples=64, grid=64):
        """Verify ``J >= c_J`` and finiteness on a grid of points and slices."""
        g = (np.arange(grid) + 0.5) / grid
        Y = np.column_stack([np.repeat(g, grid), np.tile(g, grid)])
        kf = [k.s for k in self.program.keyframes] if not self.empty else []
        ss = sorted(set(np.linspace(0, 1, samples + 1).tolist() + kf))
        for s in ss:
            vals = self.evaluate(s, Y)
            if not (np.all(np.isfinite(vals.Psi)) and np.all(np.isfinite(vals.J))):
                raise NonFiniteCoefficient(f"reference map is not finite at s={s}")
            jmin = float(vals.J.min())
            if jmin < self.c_J:
                raise DegenerateMap(f"map Jacobian reaches {jmin:.3g} < {self.c_J} at s={s:.4g}")

    def piola_defect(self, s, y, step=1e-5):
        """Finite-difference column divergence ``sum_j d_j A_ji`` (should vanish)."""
        y = np.atleast_2d(np.asarray(y, float))
        div = np.zeros((len(y), 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = step
            Ap = self.evaluate(s, y + e).A
            Am = self.evaluate(s, y - e).A
            div += (Ap[:, j, :] - Am[:, j, :]) / (2 * step)
        return div


def build_limit_map(program, t=0.0, x=(0.5, 0.5), **kwargs):
    return LimitMap(program, t, x, **kwargs)
