"""
Gaussian process models on T = [0, 1] and exact path synthesis on finite grids.

Every model has independent coordinates sharing one scalar kernel r(t, s),
optionally stretched per axis: X_i(t) = c_i Y_i(t), so R_t = r(t, t) diag(c^2).
Paths are drawn as L z with L L^T the Gram matrix of r on the grid.

Fractional Brownian bridge kernel
---------------------------------
With Y an FBM (r(1, 1) = 1), X(t) = Y(t) - r(t, 1) Y(1) has covariance

    r(t,s) - r(t,1) r(s,1) - r(s,1) r(t,1) + r(t,1) r(s,1) r(1,1)
      = r(t,s) - r(t,1) r(s,1),

the Schur complement of Y(1), i.e. the law of Y conditioned on Y(1) = 0.
"""
from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np
from cachetools import LRUCache
from scipy.linalg import LinAlgError, cholesky

from app.hullshape.errors import ModelError, NotPositiveSemiDefinite
from app.hullshape.randsrc import SeedSpec, VariateStream, derive_stream

logger = logging.getLogger("hullshape.models")

Kernel = Callable[[np.ndarray, np.ndarray], np.ndarray]
SigmaFn = Callable[[np.ndarray], np.ndarray]

MODEL_NAMES = ("bm", "fbm", "fbb", "singleton")

JITTER_RTOL = 1e-12
ZERO_VARIANCE_RTOL = 1e-14
SYMMETRY_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class TimeGrid:
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float).reshape(-1)
        if pts.size < 1:
            raise ModelError("TimeGrid needs at least one point")
        if not np.all(np.isfinite(pts)) or pts.min() < 0.0 or pts.max() > 1.0:
            raise ModelError("TimeGrid points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0.0):
            raise ModelError("TimeGrid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, k: int) -> "TimeGrid":
        """{1/k, 2/k, ..., 1}: contains t=1/2 for even k, and uniform(2k) contains uniform(k)."""
        if k < 1:
            raise ModelError("grid size k must be >= 1")
        return cls(np.arange(1, k + 1, dtype=float) / k)

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def key(self) -> bytes:
        return self.points.tobytes()


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """Concentration ellipsoid K_t of a centered Gaussian vector with covariance ``matrix``."""

    matrix: np.ndarray

    def support(self, theta: np.ndarray) -> np.ndarray:
        # K = R^{1/2} B, so M_K(theta) = |R^{1/2} theta| = sqrt(theta' R theta); no inverse needed
        theta = np.asarray(theta, dtype=float)
        quad = np.einsum("...i,ij,...j->...", theta, self.matrix, theta)
        return np.sqrt(np.maximum(quad, 0.0))


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    name: str
    kernel: Kernel
    dim: int = 1
    params: Mapping[str, float] = field(default_factory=dict)
    closed_form_sigma: Optional[SigmaFn] = None
    axis_scales: Tuple[float, ...] = ()
    singleton: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ModelError("dim must be >= 1")
        scales = tuple(float(c) for c in self.axis_scales) or (1.0,) * self.dim
        if len(scales) != self.dim:
            raise ModelError(f"axis_scales has {len(scales)} entries for dim={self.dim}")
        if any(not np.isfinite(c) or c <= 0.0 for c in scales):
            raise ModelError("axis_scales must be finite and > 0")
        object.__setattr__(self, "axis_scales", scales)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def spec(self) -> str:
        """Round-trippable identifier, e.g. ``fbm:H=0.75``."""
        if not self.params:
            return self.name
        args = ",".join(f"{k}={v:g}" for k, v in sorted(self.params.items()))
        return f"{self.name}:{args}"

    @property
    def key(self) -> str:
        scales = ",".join(f"{c!r}" for c in self.axis_scales)
        return f"{self.spec}|d={self.dim}|c={scales}"

    def restrict(self, grid: TimeGrid) -> TimeGrid:
        """Grid the model actually lives on; a singleton collapses any grid to its last point."""
        if self.singleton:
            return TimeGrid(grid.points[-1:])
        return grid

    def gram(self, grid: TimeGrid) -> np.ndarray:
        t = grid.points
        return np.asarray(self.kernel(t[:, None], t[None, :]), dtype=float)

    def variances(self, grid: TimeGrid) -> np.ndarray:
        t = grid.points
        return np.asarray(self.kernel(t, t), dtype=float)

    def covariance_matrices(self, grid: TimeGrid) -> np.ndarray:
        """R_t for every grid point, shape (k, d, d)."""
        scales2 = np.square(np.asarray(self.axis_scales))
        return self.variances(grid)[:, None, None] * np.diag(scales2)[None, :, :]


# Kernels ---------------------------------------------------------------------------

def _bm_kernel(t: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.minimum(t, s)


def _fbm_kernel(hurst: float) -> Kernel:
    h2 = 2.0 * hurst

    def kernel(t: np.ndarray, s: np.ndarray) -> np.ndarray:
        return 0.5 * (np.power(t, h2) + np.power(s, h2) - np.power(np.abs(t - s), h2))

    return kernel


def _fbb_kernel(hurst: float) -> Kernel:
    fbm = _fbm_kernel(hurst)

    def kernel(t: np.ndarray, s: np.ndarray) -> np.ndarray:
        one = np.ones_like(np.asarray(t, dtype=float))
        return fbm(t, s) - fbm(t, one) * fbm(s, np.ones_like(np.asarray(s, dtype=float)))

    return kernel


def _constant_kernel(var: float) -> Kernel:
    def kernel(t: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.full(np.broadcast(np.asarray(t), np.asarray(s)).shape, var, dtype=float)

    return kernel


def fbb_sigma_sq(t: float, hurst: float) -> float:
    """Variance of the fractional Brownian bridge at t: t^{2H} - (t^{2H} + 1 - |1-t|^{2H})^2 / 4."""
    if not 0.0 <= t <= 1.0:
        raise ModelError(f"t must be in [0, 1], got {t}")
    if not 0.0 < hurst < 1.0:
        raise ModelError(f"H must be in (0, 1), got {hurst}")
    if t == 0.0 or t == 1.0:
        return 0.0
    h2 = 2.0 * hurst
    tt = t ** h2
    return tt - 0.25 * (tt + 1.0 - (1.0 - t) ** h2) ** 2


def _ball_sigma(radius: float, axis_scales: Sequence[float]) -> SigmaFn:
    scales2 = np.square(np.asarray(axis_scales, dtype=float))

    def sigma(theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return radius * np.sqrt(np.sum(scales2 * np.square(theta), axis=-1))

    return sigma


def builtin_model(
    name: str,
    params: Optional[Mapping[str, float]] = None,
    dim: int = 1,
    axis_scales: Optional[Sequence[float]] = None,
) -> CovarianceModel:
    params = dict(params or {})
    scales = tuple(axis_scales) if axis_scales else (1.0,) * dim

    if name == "bm":
        _no_params(name, params)
        kernel, radius, extra = _bm_kernel, 1.0, {}
        singleton = False
    elif name in ("fbm", "fbb"):
        hurst = _hurst(params)
        extra = {"H": hurst}
        if name == "fbm":
            # self-similar: K_t = t^H K_1, so W = K_1
            kernel, radius = _fbm_kernel(hurst), 1.0
        else:
            kernel, radius = _fbb_kernel(hurst), float(np.sqrt(2.0 ** (-2.0 * hurst) - 0.25))
        singleton = False
    elif name == "singleton":
        var = float(params.pop("var", 1.0))
        if params:
            raise ModelError(f"unknown parameters for singleton: {sorted(params)}")
        if not np.isfinite(var) or var <= 0.0:
            raise ModelError(f"singleton variance must be > 0, got {var}")
        kernel, radius, extra = _constant_kernel(var), float(np.sqrt(var)), {"var": var}
        singleton = True
    else:
        raise ModelError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")

    return CovarianceModel(
        name=name,
        kernel=kernel,
        dim=dim,
        params=extra,
        closed_form_sigma=_ball_sigma(radius, scales),
        axis_scales=scales,
        singleton=singleton,
    )


def _no_params(name: str, params: Dict[str, float]) -> None:
    if params:
        raise ModelError(f"model {name!r} takes no parameters, got {sorted(params)}")


def _hurst(params: Dict[str, float]) -> float:
    if set(params) - {"H"}:
        raise ModelError(f"unknown parameters: {sorted(set(params) - {'H'})}")
    if "H" not in params:
        raise ModelError("Hurst index H is required")
    hurst = float(params["H"])
    if not 0.0 < hurst < 1.0:
        raise ModelError(f"H must be in (0, 1), got {hurst}")
    return hurst


_SPEC_RE = re.compile(r"^\s*([a-z]+)\s*(?::(.*))?$")


def parse_model_spec(
    spec: str,
    dim: int = 1,
    axis_scales: Optional[Sequence[float]] = None,
) -> CovarianceModel:
    """``bm``, ``fbm:H=0.75``, ``fbb:H=0.5``, ``singleton:var=1``."""
    m = _SPEC_RE.match(spec or "")
    if not m:
        raise ModelError(f"cannot parse model spec {spec!r}")
    params: Dict[str, float] = {}
    for item in filter(None, (p.strip() for p in (m.group(2) or "").split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ModelError(f"expected key=value in model spec, got {item!r}")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise ModelError(f"parameter {key.strip()} is not a number: {value!r}") from None
    return builtin_model(m.group(1), params, dim=dim, axis_scales=axis_scales)


# Factorization ---------------------------------------------------------------------

_factor_cache: LRUCache = LRUCache(maxsize=32)
_factor_lock = threading.Lock()


def factorize(model: CovarianceModel, grid: TimeGrid) -> np.ndarray:
    """
    Lower-triangular L with L L^T = Gram matrix of ``model`` on ``grid``.

    Rows with (numerically) zero variance, such as a bridge pinned at t=1,
    are kept as exact zero rows and columns. On the remaining block a plain
    Cholesky is tried first, then once more with a diagonal jitter of
    1e-12 * max variance. The result is cached and read-only.
    """
    grid = model.restrict(grid)
    key = (model.key, grid.key)
    with _factor_lock:
        cached = _factor_cache.get(key)
    if cached is not None:
        return cached

    gram = model.gram(grid)
    if not np.allclose(gram, gram.T, rtol=0.0, atol=SYMMETRY_ATOL):
        raise NotPositiveSemiDefinite(f"kernel of {model.spec} is not symmetric on this grid")
    diag = np.diag(gram)
    scale = float(max(diag.max(), 0.0))
    if diag.min() < -JITTER_RTOL * max(scale, 1.0):
        raise NotPositiveSemiDefinite(f"negative variance in {model.spec} on this grid")

    k = len(grid)
    factor = np.zeros((k, k))
    active = diag > ZERO_VARIANCE_RTOL * scale
    if active.any():
        block = gram[np.ix_(active, active)]
        try:
            sub = cholesky(block, lower=True)
        except LinAlgError:
            logger.warning("cholesky_jitter model=%s k=%d jitter=%.3g", model.spec, k, JITTER_RTOL * scale)
            try:
                sub = cholesky(block + JITTER_RTOL * scale * np.eye(block.shape[0]), lower=True)
            except LinAlgError as exc:
                raise NotPositiveSemiDefinite(
                    f"Gram matrix of {model.spec} is not PSD on a {k}-point grid"
                ) from exc
        factor[np.ix_(active, active)] = sub

    resid = float(np.max(np.abs(factor @ factor.T - gram)))
    if resid > 1e-8 * (1.0 + scale):
        raise NotPositiveSemiDefinite(f"factor residual {resid:.3g} too large for {model.spec}")

    factor.setflags(write=False)
    with _factor_lock:
        _factor_cache[key] = factor
    logger.debug("factorize model=%s k=%d active=%d resid=%.3g", model.spec, k, int(active.sum()), resid)
    return factor


# Sampling --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathBatch:
    grid: TimeGrid
    values: np.ndarray  # (n, k, d)

    @property
    def count(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    def points(self) -> np.ndarray:
        """All pooled path points, shape (n*k, d)."""
        return self.values.reshape(-1, self.dim)


def draw_paths(model: CovarianceModel, grid: TimeGrid, count: int, stream: VariateStream) -> PathBatch:
    """
    Draw ``count`` paths from ``stream``. Consecutive calls continue the
    stream, so splitting a batch into chunks consumes the same variates.
    """
    grid = model.restrict(grid)
    factor = factorize(model, grid)
    k = len(grid)
    z = stream.standard_normal((count * model.dim, k))
    coords = (z @ factor.T).reshape(count, model.dim, k)
    values = np.ascontiguousarray(coords.transpose(0, 2, 1)) * np.asarray(model.axis_scales)
    return PathBatch(grid=grid, values=values)


def iter_path_chunks(
    model: CovarianceModel,
    grid: TimeGrid,
    n: int,
    stream: VariateStream,
    chunk_paths: int,
) -> Iterator[PathBatch]:
    done = 0
    while done < n:
        count = min(chunk_paths, n - done)
        yield draw_paths(model, grid, count, stream)
        done += count


def sample_paths(model: CovarianceModel, grid: TimeGrid, n: int, seed: SeedSpec) -> PathBatch:
    if n < 1:
        raise ModelError("n must be >= 1")
    return draw_paths(model, grid, n, derive_stream(seed))
