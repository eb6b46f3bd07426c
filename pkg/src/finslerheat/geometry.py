"""Flat weighted tori: grids, fields, measures, curvature bounds, distance.

The torus is [0, L)^dim with periodic wrap-around and uniform spacing
h = L / nodes_per_axis. Fields are stored flat in C order; 2-d fields
reshape to (n, n) with axis 0 the x direction.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexRange, UnsupportedFamily
from .metrics import EPS_DEGENERATE, MetricField, MinkowskiNorm, RandersNorm
from .numerics import golden_section_max


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on a flat torus of side ``period``."""

    dim: int
    nodes_per_axis: int
    period: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise UnsupportedFamily(f"dimension {self.dim} not supported")
        if self.nodes_per_axis < 8:
            raise ValueError("need at least 8 nodes per axis")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @property
    def h(self) -> float:
        return self.period / self.nodes_per_axis

    @property
    def n_nodes(self) -> int:
        return self.nodes_per_axis**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    def coordinates(self) -> np.ndarray:
        """Node coordinates, shape ``(n_nodes, dim)``."""
        axes = [np.arange(self.nodes_per_axis) * self.h] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def ravel_index(self, multi) -> int:
        multi = np.atleast_1d(multi) % self.nodes_per_axis
        if multi.shape != (self.dim,):
            raise IndexRange(f"index {multi} has wrong arity for dim {self.dim}")
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def axis_diff(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Centered difference along ``axis`` with periodic wrap."""
        arr = values.reshape(self.shape)
        out = (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2 * self.h)
        return out.ravel()

    def axis_second_diff(self, values: np.ndarray, axis: int) -> np.ndarray:
        arr = values.reshape(self.shape)
        out = (np.roll(arr, -1, axis=axis) - 2 * arr + np.roll(arr, 1, axis=axis)) / (
            self.h**2
        )
        return out.ravel()

    def cross_second_diff(self, values: np.ndarray) -> np.ndarray:
        """Mixed second difference d^2/dxdy (2-d only), 4-point centered."""
        arr = values.reshape(self.shape)
        out = (
            np.roll(np.roll(arr, -1, 0), -1, 1)
            - np.roll(np.roll(arr, -1, 0), 1, 1)
            - np.roll(np.roll(arr, 1, 0), -1, 1)
            + np.roll(np.roll(arr, 1, 0), 1, 1)
        ) / (4 * self.h**2)
        return out.ravel()


def _check_values(grid: TorusGrid, values: np.ndarray, comps: int | None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    want = (grid.n_nodes,) if comps is None else (grid.n_nodes, comps)
    if values.shape != want:
        raise ValueError(f"field shape {values.shape}, expected {want}")
    return values


@dataclass(frozen=True)
class ScalarField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _check_values(self.grid, self.values, None))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        xy = grid.coordinates()
        return cls(grid, np.asarray([fn(*pt) for pt in xy], dtype=float))


@dataclass(frozen=True)
class VectorField:
    grid: TorusGrid
    values: np.ndarray  # (n_nodes, dim)

    def __post_init__(self):
        object.__setattr__(
            self, "values", _check_values(self.grid, self.values, self.grid.dim)
        )


@dataclass(frozen=True)
class CovectorField:
    grid: TorusGrid
    values: np.ndarray  # (n_nodes, dim)

    def __post_init__(self):
        object.__setattr__(
            self, "values", _check_values(self.grid, self.values, self.grid.dim)
        )


@dataclass(frozen=True)
class MeasureField:
    """Weighted measure exp(-f) dx, stored as per-node log-density ``f``.

    ``sigma`` are the node weights exp(-f) h^dim; integration against the
    measure is a plain dot product with them.
    """

    grid: TorusGrid
    f: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", _check_values(self.grid, self.f, None))

    @property
    def density(self) -> np.ndarray:
        return np.exp(-self.f)

    @property
    def sigma(self) -> np.ndarray:
        return self.density * self.grid.h**self.grid.dim

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.sigma))

    @classmethod
    def lebesgue(cls, grid: TorusGrid) -> "MeasureField":
        return cls(grid, np.zeros(grid.n_nodes))

    @classmethod
    def from_log_density(cls, grid: TorusGrid, fn) -> "MeasureField":
        return cls(grid, ScalarField.from_function(grid, fn).values)

    @classmethod
    def busemann_hausdorff(cls, metric: MetricField) -> "MeasureField":
        """Constant measure whose density matches the norm's unit-ball volume.

        For quadratic families this is sqrt(det a); for Randers the unit ball
        is an ellipsoid and the density is sqrt(det a) (1 - |b|_a^2)^{(n+1)/2}.
        """
        desc = metric.descriptor
        n = desc.dim
        if desc.family in ("euclidean", "riemannian"):
            density = math.sqrt(np.linalg.det(desc.riemannian_part()))
        elif desc.family == "randers":
            density = math.sqrt(np.linalg.det(desc.a)) * (1.0 - desc.b_norm_sq) ** (
                (n + 1) / 2.0
            )
        elif desc.family == "asym1d":
            # unit ball is (-1/p_minus, 1/p_plus); match its length to 2
            density = 2.0 * desc.p_plus * desc.p_minus / (desc.p_plus + desc.p_minus)
        else:  # pragma: no cover
            raise UnsupportedFamily(desc.family)
        f0 = -math.log(density)
        return cls(metric.grid, np.full(metric.grid.n_nodes, f0))


@dataclass(frozen=True)
class CurvatureBound:
    """Lower bound K with Ric_N(v) >= K F(v)^2 for all directions."""

    N: float
    K: float
    provenance: str  # "analytic" or "sampled"

    def __post_init__(self):
        if not (self.N >= 1 or math.isinf(self.N)):
            raise ValueError("effective dimension must be >= 1 or inf")


def integrate(field: ScalarField | np.ndarray, measure: MeasureField) -> float:
    """Integral of a scalar field against the weighted measure."""
    values = field.values if isinstance(field, ScalarField) else np.asarray(field)
    return float(np.dot(values, measure.sigma))


def _hessian_fields(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Coordinate Hessian per node by centered differences, (n, d, d)."""
    d = grid.dim
    hess = np.empty((grid.n_nodes, d, d))
    for ax in range(d):
        hess[:, ax, ax] = grid.axis_second_diff(values, ax)
    if d == 2:
        cross = grid.cross_second_diff(values)
        hess[:, 0, 1] = cross
        hess[:, 1, 0] = cross
    return hess


def _differential(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return np.stack(
        [grid.axis_diff(values, ax) for ax in range(grid.dim)], axis=-1
    )


def ricci_lower_bound(
    metric: MetricField,
    measure: MeasureField,
    N: float,
    angle_samples: int = 64,
) -> CurvatureBound:
    """Certified lower curvature bound for the supported flat families.

    Constant-coefficient asymmetric norms with constant log-density have
    vanishing drift along straight lines, giving K = 0 exactly for any
    N in [dim, inf]. Flat quadratic metrics with node-sampled log-density
    minimize Hess f(v, v) - (df(v))^2 / (N - dim) over nodes and F-unit
    directions (64 angles per node plus golden-section polish at the
    minimizing node). With N = dim and genuinely varying f the bound
    degenerates to -inf.
    """
    desc = metric.descriptor
    grid = metric.grid
    n = grid.dim
    if not (N >= n or math.isinf(N)):
        raise ValueError(f"need N >= dim = {n}")
    f = measure.f
    f_constant = float(np.ptp(f)) <= 1e-13 * max(1.0, float(np.max(np.abs(f))))

    if desc.family in ("randers", "asym1d"):
        if not f_constant:
            raise UnsupportedFamily(
                "asymmetric families support constant-density measures only"
            )
        return CurvatureBound(N, 0.0, "analytic")

    if f_constant:
        return CurvatureBound(N, 0.0, "analytic")
    if N == n:
        # nonvanishing drift with no room in the dimension term
        return CurvatureBound(N, -math.inf, "analytic")

    a = desc.riemannian_part()
    hess = _hessian_fields(grid, f)
    df = _differential(grid, f)
    inv_gap = 0.0 if math.isinf(N) else 1.0 / (N - n)

    if n == 1:
        # the two F-unit directions give the same value
        q = (hess[:, 0, 0] - inv_gap * df[:, 0] ** 2) / a[0, 0]
        return CurvatureBound(N, float(np.min(q)), "sampled")

    theta = np.linspace(0.0, 2.0 * np.pi, angle_samples, endpoint=False)
    w = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    alpha = np.sqrt(np.einsum("ti,ij,tj->t", w, a, w))
    units = w / alpha[:, None]  # F-unit directions
    quad = np.einsum("nij,ti,tj->nt", hess, units, units)
    drift = (df @ units.T) ** 2
    vals = quad - inv_gap * drift
    k_node, k_theta = np.unravel_index(int(np.argmin(vals)), vals.shape)

    def node_val(th, node):
        v = np.array([np.cos(th), np.sin(th)])
        v = v / math.sqrt(v @ a @ v)
        return -(v @ hess[node] @ v - inv_gap * (df[node] @ v) ** 2)

    span = 2.0 * np.pi / angle_samples
    _, neg_best = golden_section_max(
        lambda th: node_val(th, k_node), theta[k_theta] - span, theta[k_theta] + span
    )
    return CurvatureBound(N, min(float(vals.min()), -neg_best), "sampled")


_NEIGHBOR_OFFSETS_1D = [(-1,), (1,)]
_NEIGHBOR_OFFSETS_2D = [
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
]


def finsler_distance(
    metric: MetricField,
    source,
    target=None,
):
    """Asymmetric graph distance d_F(source, .) by Dijkstra.

    Edges connect each node to its 2 (1-d) or 8 (2-d) neighbors; the cost of
    the directed edge p -> q is F evaluated on the displacement q - p (the
    metric is spatially constant, so the midpoint evaluation of the cost is
    exact). ``source``/``target`` are flat indices or per-axis tuples.
    Returns the full distance array when ``target`` is None.
    """
    grid = metric.grid
    desc = metric.descriptor
    src = source if np.isscalar(source) else grid.ravel_index(source)
    offsets = _NEIGHBOR_OFFSETS_1D if grid.dim == 1 else _NEIGHBOR_OFFSETS_2D
    steps = np.array(offsets, dtype=float) * grid.h
    costs = desc.norm(steps)
    n_ax = grid.nodes_per_axis

    if grid.dim == 1:
        def neighbors(i):
            for (off,), c in zip(offsets, costs):
                yield (i + off) % n_ax, c
    else:
        def neighbors(i):
            ix, iy = divmod(i, n_ax)
            for (ox, oy), c in zip(offsets, costs):
                yield ((ix + ox) % n_ax) * n_ax + (iy + oy) % n_ax, c

    dist = np.full(grid.n_nodes, np.inf)
    dist[src] = 0.0
    heap = [(0.0, src)]
    goal = None if target is None else (
        target if np.isscalar(target) else grid.ravel_index(target)
    )
    while heap:
        d, i = heapq.heappop(heap)
        if d > dist[i]:
            continue
        if goal is not None and i == goal:
            return float(d)
        for j, c in neighbors(i):
            nd = d + c
            if nd < dist[j]:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))
    if goal is not None:
        return float(dist[goal])
    return dist


def differential_field(u: ScalarField) -> CovectorField:
    """Centered-difference differential du, a covector field."""
    return CovectorField(u.grid, _differential(u.grid, u.values))


def gradient_field(metric: MetricField, u: ScalarField) -> VectorField:
    """Metric gradient: Legendre transform of the centered differential.

    Nodes where the differential is degenerate (relative to the field scale)
    get a zero vector.
    """
    du = _differential(u.grid, u.values)
    scale = max(1.0, float(np.max(np.linalg.norm(du, axis=-1), initial=0.0)))
    desc = metric.descriptor
    mask = np.linalg.norm(du, axis=-1) <= EPS_DEGENERATE * desc.length_scale * scale
    grad = desc.legendre(du)
    grad[mask] = 0.0
    return VectorField(u.grid, grad)


def gradient_energy(metric: MetricField, u: ScalarField) -> np.ndarray:
    """F^2 of the metric gradient per node, computed through the dual norm.

    F*(du) equals F(grad u) by the Legendre identities, so no transform is
    needed; degenerate nodes contribute zero automatically.
    """
    du = _differential(u.grid, u.values)
    return metric.descriptor.dual_norm(du) ** 2


def log_gradient_energy(metric: MetricField, u: ScalarField) -> np.ndarray:
    """F^2(grad log u) per node for strictly positive u."""
    if np.any(u.values <= 0):
        raise ValueError("log gradient needs strictly positive values")
    logu = ScalarField(u.grid, np.log(u.values))
    return gradient_energy(metric, logu)
