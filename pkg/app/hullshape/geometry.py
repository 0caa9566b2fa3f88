"""
Convex-geometry kernel.

Convex bodies are carried either as an exact polygon (d = 2) or as a
support profile M(theta_j) on a finite direction grid (any d). For convex
bodies A, B the Hausdorff distance is the sup-norm distance of support
functions, rho(A, B) = sup_theta |M_A(theta) - M_B(theta)|; on a grid this
is evaluated at the grid directions and reported with its mesh error bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, HalfspaceIntersection, QhullError, SphericalVoronoi

from app.hullshape.errors import GeometryError

UNIT_ATOL = 1e-12
COLLINEAR_RTOL = 1e-12
QHULL_MIN_POINTS = 4096
_SUPPORT_CHUNK = 8192


# Direction grids -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """
    Unit vectors on S^{d-1}.

    ``mesh`` is the covering radius delta: every unit vector lies within
    angle delta of some grid direction. Grids built by the constructors here
    are antipodally closed, the antipode of direction j being j + q/2 (mod q).
    """

    dim: int
    directions: np.ndarray
    mesh: float
    kind: str = "custom"

    def __post_init__(self) -> None:
        dirs = np.array(self.directions, dtype=float)
        if dirs.ndim != 2 or dirs.shape[1] != self.dim or dirs.shape[0] < 1:
            raise GeometryError(f"directions must have shape (q, {self.dim})")
        if np.max(np.abs(np.linalg.norm(dirs, axis=1) - 1.0)) > UNIT_ATOL:
            raise GeometryError("directions must be unit vectors")
        dirs.setflags(write=False)
        object.__setattr__(self, "directions", dirs)

    def __len__(self) -> int:
        return int(self.directions.shape[0])

    @property
    def is_uniform_circle(self) -> bool:
        return self.kind == "circle"

    @property
    def angles(self) -> np.ndarray:
        if self.dim != 2:
            raise GeometryError("angles are only defined for d=2")
        return np.mod(np.arctan2(self.directions[:, 1], self.directions[:, 0]), 2.0 * np.pi)

    def antipodes(self) -> np.ndarray:
        q = len(self)
        if q % 2:
            raise GeometryError("grid has an odd number of directions, no antipodal pairing")
        idx = (np.arange(q) + q // 2) % q
        if not np.allclose(self.directions[idx], -self.directions, atol=1e-9):
            raise GeometryError("grid is not antipodally closed")
        return idx

    def same_as(self, other: "DirectionGrid") -> bool:
        return self is other or (
            self.dim == other.dim and np.array_equal(self.directions, other.directions)
        )

    @classmethod
    def line(cls) -> "DirectionGrid":
        return cls(1, np.array([[1.0], [-1.0]]), mesh=0.0, kind="line")

    @classmethod
    def circle(cls, q: int) -> "DirectionGrid":
        if q < 8:
            raise GeometryError("circle grids need q >= 8")
        phi = 2.0 * np.pi * np.arange(q) / q
        dirs = np.column_stack([np.cos(phi), np.sin(phi)])
        return cls(2, dirs, mesh=math.pi / q, kind="circle")

    @classmethod
    def sphere(cls, q: int, dim: int = 3) -> "DirectionGrid":
        """
        Antipodally closed grid of q directions on S^{dim-1}: q/2 base points
        (Fibonacci lattice for dim=3, fixed-seed Gaussian draws otherwise) and
        their negatives. The covering radius is exact for dim=3 (spherical Voronoi
        cells) and estimated on a dense random sample of directions above that.
        """
        if dim < 3:
            raise GeometryError("sphere grids are for dim >= 3")
        half = q // 2
        if half < 4:
            raise GeometryError("sphere grids need q >= 8")
        if dim == 3:
            i = np.arange(half) + 0.5
            z = 1.0 - 2.0 * i / half
            r = np.sqrt(1.0 - z * z)
            phi = i * math.pi * (3.0 - math.sqrt(5.0))
            base = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
            kind = "fibonacci"
        else:
            base = np.random.default_rng(dim * 1_000_003 + half).standard_normal((half, dim))
            kind = "random"
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        dirs = np.vstack([base, -base])
        mesh = _spherical_covering_radius(dirs) if dim == 3 else _estimate_covering_radius(dirs)
        return cls(dim, dirs, mesh=mesh, kind=kind)

    @classmethod
    def for_dim(cls, dim: int, q: int) -> "DirectionGrid":
        if dim == 1:
            return cls.line()
        if dim == 2:
            return cls.circle(q)
        return cls.sphere(q, dim)


def _spherical_covering_radius(dirs: np.ndarray) -> float:
    """
    Exact covering radius of distinct unit vectors in R^3: the farthest point
    of each Voronoi cell is one of its vertices.
    """
    sv = SphericalVoronoi(dirs, radius=1.0, center=np.zeros(3))
    worst = 1.0
    for generator, region in zip(dirs, sv.regions):
        worst = min(worst, float(np.min(sv.vertices[region] @ generator)))
    return float(np.arccos(np.clip(worst, -1.0, 1.0)))


def _estimate_covering_radius(dirs: np.ndarray, samples: int = 20000) -> float:
    rng = np.random.default_rng(12345)
    pts = rng.standard_normal((samples, dirs.shape[1]))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    best = np.full(samples, -1.0)
    for start in range(0, len(dirs), 1024):
        best = np.maximum(best, np.max(pts @ dirs[start:start + 1024].T, axis=1))
    return float(np.arccos(np.clip(best.min(), -1.0, 1.0)))


# Bodies ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SupportProfile:
    grid: DirectionGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != len(self.grid):
            raise GeometryError(f"{vals.size} values for a grid of {len(self.grid)} directions")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def radius_bound(self) -> float:
        """Upper bound on sup |x| over the body: max_j M(theta_j) / cos(delta)."""
        top = max(float(self.values.max()), 0.0)
        if self.grid.mesh == 0.0:
            return max(top, float(np.abs(self.values).max()))
        if self.grid.mesh >= math.pi / 2:
            return math.inf
        return top / math.cos(self.grid.mesh)


@dataclass(frozen=True, eq=False)
class Polygon2D:
    """Counterclockwise vertices, no three consecutive collinear; 1 or 2 vertices when degenerate."""

    vertices: np.ndarray

    def __post_init__(self) -> None:
        verts = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if verts.shape[0] < 1:
            raise GeometryError("a polygon needs at least one vertex")
        verts.setflags(write=False)
        object.__setattr__(self, "vertices", verts)

    def __len__(self) -> int:
        return int(self.vertices.shape[0])


Body = Union[SupportProfile, Polygon2D]


def _as_points(points: Union[np.ndarray, Sequence[Sequence[float]]], dim: int = 0) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and dim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1 or (dim and pts.shape[1] != dim):
        want = f"(N, {dim})" if dim else "(N, d)"
        raise GeometryError(f"points must be a non-empty array of shape {want}, got {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("points must have finite coordinates")
    return pts


# Hulls -----------------------------------------------------------------------------

def _cross(o: Tuple[float, float], a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _chain(seq: List[Tuple[float, float]], tol: float) -> List[Tuple[float, float]]:
    out: List[Tuple[float, float]] = []
    for p in seq:
        while len(out) >= 2 and _cross(out[-2], out[-1], p) <= tol:
            out.pop()
        out.append(p)
    return out


def _qhull_candidates(pts: np.ndarray) -> np.ndarray:
    """Extreme-point candidates of a large cloud; falls back to all points on degenerate input."""
    try:
        return pts[ConvexHull(pts).vertices]
    except QhullError:
        return pts


def hull_2d(points: Union[np.ndarray, Sequence[Sequence[float]]]) -> Polygon2D:
    """
    Monotone chain hull. Points are sorted lexicographically, exact duplicates
    dropped, and turns with cross product <= 1e-12 * span^2 are pruned, so the
    output is deterministic and strictly convex. Large clouds are first thinned
    to qhull's extreme points.
    """
    pts = _as_points(points, 2)
    if len(pts) > QHULL_MIN_POINTS:
        pts = _qhull_candidates(pts)
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(np.diff(pts, axis=0) != 0.0, axis=1)
    pts = pts[keep]
    if len(pts) == 1:
        return Polygon2D(pts)

    span = float(np.max(np.ptp(pts, axis=0)))
    tol = COLLINEAR_RTOL * span * span
    seq = [tuple(p) for p in pts.tolist()]
    lower = _chain(seq, tol)
    upper = _chain(seq[::-1], tol)
    return Polygon2D(np.array(lower[:-1] + upper[:-1]))


def reduce_points(points: np.ndarray) -> np.ndarray:
    """Vertices of the hull of a d=2 cloud; the support function is unchanged."""
    return hull_2d(points).vertices


# Support profiles ------------------------------------------------------------------

def support_of_points(points: Union[np.ndarray, Sequence[Sequence[float]]], grid: DirectionGrid) -> SupportProfile:
    pts = _as_points(points, grid.dim)
    dirs_t = grid.directions.T
    values = np.full(len(grid), -np.inf)
    for start in range(0, len(pts), _SUPPORT_CHUNK):
        values = np.maximum(values, np.max(pts[start:start + _SUPPORT_CHUNK] @ dirs_t, axis=0))
    return SupportProfile(grid, values)


def support_of_polygon(poly: Polygon2D, grid: DirectionGrid) -> SupportProfile:
    return support_of_points(poly.vertices, grid)


@dataclass(frozen=True)
class HausdorffDistance:
    """Grid value of rho with the mesh delta and the a-priori bound on sup - grid max."""

    value: float
    mesh: float
    mesh_error: float

    def __float__(self) -> float:
        return self.value


def hausdorff(a: SupportProfile, b: SupportProfile) -> HausdorffDistance:
    """
    max_j |M_a(theta_j) - M_b(theta_j)|.

    M_A is Lipschitz on the sphere with constant R_A = sup_{x in A} |x|, so
    the true sup over all directions exceeds the grid max by at most
    (R_a + R_b) * 2 sin(delta / 2), the chord of the covering radius.
    """
    if not a.grid.same_as(b.grid):
        raise GeometryError("profiles live on different direction grids")
    value = float(np.max(np.abs(a.values - b.values)))
    delta = a.grid.mesh
    error = (a.radius_bound() + b.radius_bound()) * 2.0 * math.sin(delta / 2.0) if delta else 0.0
    return HausdorffDistance(value=value, mesh=delta, mesh_error=error)


def scale(body: Body, c: float) -> Body:
    if not np.isfinite(c) or c < 0.0:
        raise GeometryError(f"scale factor must be >= 0, got {c}")
    if isinstance(body, SupportProfile):
        return SupportProfile(body.grid, body.values * c)
    if c == 0.0:
        return Polygon2D(np.zeros((1, 2)))
    return Polygon2D(body.vertices * c)


# Functionals -----------------------------------------------------------------------

def perimeter(poly: Polygon2D) -> float:
    """Edge-length sum of the closed boundary; a segment counts twice (2 * length)."""
    v = poly.vertices
    if len(v) == 1:
        return 0.0
    edges = np.roll(v, -1, axis=0) - v
    return float(np.sum(np.hypot(edges[:, 0], edges[:, 1])))


def area(poly: Polygon2D) -> float:
    v = poly.vertices
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return float(0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def _antipodal_pairs(v: np.ndarray):
    m = len(v)
    if m == 1:
        yield 0, 0
        return
    if m == 2:
        yield 0, 1
        return
    pts = [tuple(p) for p in v.tolist()]
    j = 1
    for i in range(m):
        i2 = (i + 1) % m
        while abs(_cross(pts[i], pts[i2], pts[(j + 1) % m])) > abs(_cross(pts[i], pts[i2], pts[j])):
            j = (j + 1) % m
        yield i, j
        yield i2, j


def diameter(body: Union[Polygon2D, np.ndarray, Sequence[Sequence[float]]]) -> float:
    """Largest pairwise distance, by rotating calipers over the hull's antipodal pairs."""
    poly = body if isinstance(body, Polygon2D) else hull_2d(body)
    v = poly.vertices
    best = 0.0
    for i, j in _antipodal_pairs(v):
        best = max(best, float(np.hypot(*(v[i] - v[j]))))
    return best


def profile_width(profile: SupportProfile) -> float:
    """max_theta M(theta) + M(-theta): the diameter of the body, sampled on the grid."""
    idx = profile.grid.antipodes()
    return float(np.max(profile.values + profile.values[idx]))


def perimeter_from_profile(profile: SupportProfile) -> float:
    """Cauchy's formula L = int_0^{2pi} M(phi) dphi, periodic trapezoid rule."""
    if not profile.grid.is_uniform_circle:
        raise GeometryError("Cauchy perimeter needs a uniform circle grid")
    q = len(profile.grid)
    return float(2.0 * math.pi / q * np.sum(profile.values))


def reconstruct_polygon(profile: SupportProfile) -> Polygon2D:
    """
    Polygon {x : <x, theta_j> <= M(theta_j) for all j} by half-plane intersection.
    The interior point is the Chebyshev centre; bodies without interior are rejected.
    """
    if profile.grid.dim != 2:
        raise GeometryError("reconstruction is only available for d=2")
    normals = profile.grid.directions
    offsets = profile.values
    # max r s.t. <n_j, x> + r <= M_j  (|n_j| = 1)
    res = linprog(
        c=[0.0, 0.0, -1.0],
        A_ub=np.column_stack([normals, np.ones(len(normals))]),
        b_ub=offsets,
        bounds=[(None, None), (None, None), (0.0, None)],
        method="highs",
    )
    if not res.success or res.x[2] <= 1e-12 * max(profile.radius_bound(), 1.0):
        raise GeometryError("profile has no interior; cannot reconstruct a polygon")
    halfspaces = np.column_stack([normals, -offsets])
    hs = HalfspaceIntersection(halfspaces, res.x[:2])
    return hull_2d(hs.intersections)
