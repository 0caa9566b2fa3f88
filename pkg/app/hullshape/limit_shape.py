"""
Limit shape W = conv{K_t, t in T} of the normalized hulls.

The support function of a union's hull is the pointwise sup of the supports,
and K_t has support sqrt(theta' R_t theta), hence

    M_W(theta) = sigma(theta),   sigma(theta)^2 = sup_t <R_t theta, theta>.

The sup over T is a max over the time grid, so refining the grid can only
raise the profile.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from app.hullshape.errors import GeometryError
from app.hullshape.geometry import (
    DirectionGrid,
    SupportProfile,
    area,
    perimeter_from_profile,
    profile_width,
    reconstruct_polygon,
)
from app.hullshape.models import CovarianceModel, Ellipsoid, TimeGrid

logger = logging.getLogger("hullshape.limit_shape")

NUMERIC = "numeric"
CLOSED_FORM = "closed-form"
SYMMETRY_ATOL = 1e-10


@dataclass(frozen=True, eq=False)
class LimitShape:
    profile: SupportProfile
    provenance: str
    model_spec: str
    grid_points: int

    @property
    def is_ball(self) -> bool:
        v = self.profile.values
        return bool(np.ptp(v) <= 1e-12 * max(1.0, float(np.abs(v).max())))

    @property
    def radius(self) -> float:
        return float(self.profile.values.max())


def _unit(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if abs(float(np.linalg.norm(theta)) - 1.0) > 1e-12:
        raise GeometryError("theta must be a unit vector")
    return theta


def ellipsoid_support(matrix: np.ndarray, theta: np.ndarray) -> float:
    """sqrt(theta' R theta); singular R (flat ellipsoids) needs no inverse."""
    R = np.asarray(matrix, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise GeometryError("covariance must be a square matrix")
    if not np.allclose(R, R.T, rtol=0.0, atol=SYMMETRY_ATOL):
        raise GeometryError("covariance matrix is not symmetric")
    theta = _unit(theta)
    if theta.size != R.shape[0]:
        raise GeometryError(f"theta has {theta.size} components for a {R.shape[0]}x{R.shape[0]} matrix")
    return float(Ellipsoid(R).support(theta))


def limit_shape_from_covariances(covariances: np.ndarray, dir_grid: DirectionGrid) -> SupportProfile:
    """Profile of conv{K_t} for an arbitrary sequence of symmetric PSD matrices R_t, shape (k, d, d)."""
    R = np.asarray(covariances, dtype=float)
    if R.ndim != 3 or R.shape[1:] != (dir_grid.dim, dir_grid.dim):
        raise GeometryError(f"covariances must have shape (k, {dir_grid.dim}, {dir_grid.dim})")
    if not np.allclose(R, np.swapaxes(R, 1, 2), rtol=0.0, atol=SYMMETRY_ATOL):
        raise GeometryError("covariance matrices must be symmetric")
    dirs = dir_grid.directions
    quad = np.einsum("qi,kij,qj->kq", dirs, R, dirs)
    return SupportProfile(dir_grid, np.sqrt(np.maximum(quad.max(axis=0), 0.0)))


def sigma(model: CovarianceModel, grid: TimeGrid, theta: np.ndarray) -> float:
    theta = _unit(theta)
    if theta.size != model.dim:
        raise GeometryError(f"theta has {theta.size} components for dim={model.dim}")
    grid = model.restrict(grid)
    scales2 = np.square(np.asarray(model.axis_scales))
    quad = model.variances(grid) * float(np.sum(scales2 * theta * theta))
    return float(math.sqrt(max(float(quad.max()), 0.0)))


def limit_shape(
    model: CovarianceModel,
    time_grid: TimeGrid,
    dir_grid: DirectionGrid,
    prefer_closed_form: bool = True,
) -> LimitShape:
    if dir_grid.dim != model.dim:
        raise GeometryError(f"direction grid is {dir_grid.dim}-d, model is {model.dim}-d")
    grid = model.restrict(time_grid)
    if prefer_closed_form and model.closed_form_sigma is not None:
        values = model.closed_form_sigma(dir_grid.directions)
        provenance = CLOSED_FORM
    else:
        values = limit_shape_from_covariances(model.covariance_matrices(grid), dir_grid).values
        provenance = NUMERIC
    logger.debug("limit_shape model=%s provenance=%s k=%d q=%d", model.spec, provenance, len(grid), len(dir_grid))
    return LimitShape(
        profile=SupportProfile(dir_grid, values),
        provenance=provenance,
        model_spec=model.spec,
        grid_points=len(grid),
    )


def limit_functional(limit: LimitShape, name: str) -> float:
    """f(W) for perimeter, area and diameter; closed forms when W is a ball."""
    profile = limit.profile
    d = profile.grid.dim
    if limit.is_ball:
        r = limit.radius
        if name == "diameter":
            return 2.0 * r
        if d == 2 and name == "perimeter":
            return 2.0 * math.pi * r
        if d == 2 and name == "area":
            return math.pi * r * r
    elif name == "diameter":
        return profile_width(profile)
    elif d == 2 and name == "perimeter":
        return perimeter_from_profile(profile)
    elif d == 2 and name == "area":
        return area(reconstruct_polygon(profile))
    raise GeometryError(f"functional {name!r} is not available for d={d}")

