"""Nonlinear heat flow by frozen-coefficient steps.

Each step freezes the gradient field V of the current iterate, assembles the
weighted diffusion operator with tensor g^{ij}(V), and advances with the
selected scheme. The assembly is a finite-volume stiffness built from face
averages, so two structural identities hold exactly by construction:

* the operator annihilates constants, and
* it is self-adjoint in the measure inner product.

In 2-d the cross terms of the tensor are carried by diagonal edges (the
standard 9-point box stencil): the tensor is split per face as
(g11 - |g12|, g22 - |g12|) on the axis edges plus |g12| on the diagonal or
antidiagonal edge matching the sign of g12. Strongly anisotropic tensors can
make axis weights negative, which is allowed: minimum-principle violations
are logged, never clamped.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CflViolation, DegenerateField, IndexRange, UnsupportedFamily
from .geometry import (
    MeasureField,
    ScalarField,
    VectorField,
    _differential,
    _hessian_fields,
    gradient_field,
)
from .metrics import EPS_DEGENERATE, MetricField
from .numerics import cg_measure

SCHEMES = ("implicit_euler", "crank_nicolson", "explicit")

#: default relative residual for the measure-CG step solves; the contract
#: ceiling is 1e-10, the tighter default keeps adjoint duality near 1e-12
CG_RTOL = 1e-13


@dataclass
class DiffusionAssembly:
    """Frozen-coefficient diffusion operator at one time level.

    ``weights`` holds the symmetric off-diagonal edge weights; ``degree`` is
    the matching row sum, computed once by the same sparse product used in
    ``apply`` so that the operator kills constants exactly in floating
    point. ``apply`` evaluates A u = (W u - degree * u) / sigma.
    """

    weights: sp.csr_matrix
    degree: np.ndarray
    sigma: np.ndarray
    time: float
    dt: float
    scheme: str
    kappa_max: float
    degenerate_nodes: int
    cg_rtol: float = CG_RTOL

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Apply the frozen diffusion operator."""
        return (self.weights @ values - self.degree * values) / self.sigma

    def carre_du_champ(self, values: np.ndarray) -> np.ndarray:
        """Edge-based squared gradient (1/2)(A(u^2) - 2 u A u) of this
        operator; equals F^2 of the frozen gradient up to O(h^2)."""
        sq = values * values
        return (
            self.weights @ sq + self.degree * sq - 2.0 * values * (self.weights @ values)
        ) / (2.0 * self.sigma)

    def _op_implicit(self, dt_eff: float):
        def op(x):
            return x + dt_eff * (self.degree * x - self.weights @ x) / self.sigma

        return op

    def advance(self, values: np.ndarray) -> np.ndarray:
        """One step of the recorded scheme applied to an arbitrary field.

        The same routine drives both the nonlinear solve and the linearized
        transport, so re-running it on recorded data reproduces the solver
        trajectory bit for bit.
        """
        if self.scheme == "explicit":
            return values + self.dt * self.apply(values)
        if self.scheme == "implicit_euler":
            rhs = values
            op = self._op_implicit(self.dt)
        elif self.scheme == "crank_nicolson":
            rhs = values - 0.5 * self.dt * (
                self.degree * values - self.weights @ values
            ) / self.sigma
            op = self._op_implicit(0.5 * self.dt)
        else:  # pragma: no cover
            raise UnsupportedFamily(f"unknown scheme {self.scheme}")
        return cg_measure(op, rhs, self.sigma, x0=values, rel_tol=self.cg_rtol)


def _face_average(grid, node_values: np.ndarray, axis_offsets) -> np.ndarray:
    """Average node quantity with its neighbor at the given offset."""
    arr = node_values.reshape(grid.shape + node_values.shape[1:])
    rolled = arr
    for ax, off in enumerate(axis_offsets):
        if off:
            rolled = np.roll(rolled, -off, axis=ax)
    return 0.5 * (arr + rolled).reshape(node_values.shape)


def _edge_indices(grid, axis_offsets) -> tuple[np.ndarray, np.ndarray]:
    n = grid.nodes_per_axis
    idx = np.arange(grid.n_nodes).reshape(grid.shape)
    rolled = idx
    for ax, off in enumerate(axis_offsets):
        if off:
            rolled = np.roll(rolled, -off, axis=ax)
    return idx.ravel(), rolled.ravel()


def weighted_laplacian(
    metric: MetricField,
    measure: MeasureField,
    direction: VectorField,
    time: float = 0.0,
    dt: float = 0.0,
    scheme: str = "implicit_euler",
    fallback: np.ndarray | None = None,
) -> DiffusionAssembly:
    """Assemble the diffusion operator with tensor g^{ij}(direction).

    Degenerate direction nodes fall back to the inverse of the family's
    Riemannian part (or a caller-supplied symmetric positive definite
    tensor); their count is recorded on the assembly.
    """
    grid = metric.grid
    if measure.grid != grid or direction.grid != grid:
        raise ValueError("metric, measure and direction live on different grids")
    if scheme not in SCHEMES:
        raise UnsupportedFamily(f"unknown scheme {scheme}")
    desc = metric.descriptor
    ginv, mask = desc.inverse_tensor_field(direction.values, fallback)
    rho = measure.density
    h_pow = grid.h ** (grid.dim - 2)

    rows, cols, data = [], [], []

    def add_edges(offsets, coeff):
        i, j = _edge_indices(grid, offsets)
        w = coeff * h_pow
        rows.append(i)
        cols.append(j)
        data.append(w)
        rows.append(j)
        cols.append(i)
        data.append(w)

    if grid.dim == 1:
        g11 = _face_average(grid, ginv[:, 0, 0], (1,)) * _face_average(grid, rho, (1,))
        add_edges((1,), g11)
        kappa_max = float(np.max(ginv[:, 0, 0]))
    else:
        rho_x = _face_average(grid, rho, (1, 0))
        rho_y = _face_average(grid, rho, (0, 1))
        rho_d = _face_average(grid, rho, (1, 1))
        rho_a = _face_average(grid, rho, (1, -1))
        g11_x = _face_average(grid, ginv[:, 0, 0], (1, 0))
        g12_x = _face_average(grid, ginv[:, 0, 1], (1, 0))
        g22_y = _face_average(grid, ginv[:, 1, 1], (0, 1))
        g12_y = _face_average(grid, ginv[:, 0, 1], (0, 1))
        g12_d = _face_average(grid, ginv[:, 0, 1], (1, 1))
        g12_a = _face_average(grid, ginv[:, 0, 1], (1, -1))
        add_edges((1, 0), rho_x * (g11_x - np.abs(g12_x)))
        add_edges((0, 1), rho_y * (g22_y - np.abs(g12_y)))
        add_edges((1, 1), rho_d * np.maximum(g12_d, 0.0))
        add_edges((1, -1), rho_a * np.maximum(-g12_a, 0.0))
        tr = ginv[:, 0, 0] + ginv[:, 1, 1]
        det = ginv[:, 0, 0] * ginv[:, 1, 1] - ginv[:, 0, 1] ** 2
        kappa_max = float(np.max(0.5 * (tr + np.sqrt(np.maximum(tr * tr - 4 * det, 0)))))

    w_mat = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    ).tocsr()
    degree = w_mat @ np.ones(grid.n_nodes)
    return DiffusionAssembly(
        weights=w_mat,
        degree=degree,
        sigma=measure.sigma,
        time=time,
        dt=dt,
        scheme=scheme,
        kappa_max=kappa_max,
        degenerate_nodes=int(np.count_nonzero(mask)),
    )


def nonlinear_laplacian(
    metric: MetricField, measure: MeasureField, u: ScalarField
) -> ScalarField:
    """Nonlinear operator: freeze V = grad u, apply the frozen assembly to u."""
    assembly = weighted_laplacian(metric, measure, gradient_field(metric, u))
    return ScalarField(u.grid, assembly.apply(u.values))


def _check_cfl(grid, dt: float, kappa_max: float):
    limit = grid.h**2 / (2.0 * grid.dim * kappa_max)
    if dt > limit:
        raise CflViolation(f"explicit step {dt:.3e} exceeds stability limit {limit:.3e}")


def heat_step(
    metric: MetricField,
    measure: MeasureField,
    u: ScalarField,
    dt: float,
    scheme: str = "implicit_euler",
    time: float = 0.0,
    fallback: np.ndarray | None = None,
) -> tuple[ScalarField, DiffusionAssembly]:
    """Advance the nonlinear flow by one frozen-coefficient step."""
    if dt <= 0:
        raise ValueError("step size must be positive")
    assembly = weighted_laplacian(
        metric,
        measure,
        gradient_field(metric, u),
        time=time,
        dt=dt,
        scheme=scheme,
        fallback=fallback,
    )
    if scheme == "explicit":
        _check_cfl(metric.grid, dt, assembly.kappa_max)
    return ScalarField(u.grid, assembly.advance(u.values)), assembly


@dataclass
class Trajectory:
    """Recorded nonlinear flow: times, solution fields, step assemblies.

    ``assemblies[k]`` advanced the solution from ``times[k]`` to
    ``times[k+1]``; an extra assembly at the final time is built lazily when
    a time derivative there is requested. The time derivative at any
    recorded index is defined through the frozen spatial operator,
    du/dt := A_t u_t, never by differencing fields in time.
    """

    metric: MetricField
    measure: MeasureField
    times: list[float]
    fields: list[np.ndarray]
    assemblies: list[DiffusionAssembly]
    scheme: str
    dt: float
    violations: list[dict] = field(default_factory=list)
    fallback: np.ndarray | None = None

    @property
    def grid(self):
        return self.metric.grid

    @property
    def n_times(self) -> int:
        return len(self.times)

    def field_at(self, index: int) -> ScalarField:
        return ScalarField(self.grid, self.fields[self._check(index)])

    def index_of(self, t: float) -> int:
        k = int(round((t - self.times[0]) / self.dt))
        if 0 <= k < self.n_times and abs(self.times[k] - t) <= 0.49 * self.dt:
            return k
        raise IndexRange(f"time {t} not on the recorded grid")

    def assembly_at(self, index: int) -> DiffusionAssembly:
        index = self._check(index)
        if index < len(self.assemblies):
            return self.assemblies[index]
        # final time: assemble once at the last recorded field
        u = self.field_at(index)
        extra = weighted_laplacian(
            self.metric,
            self.measure,
            gradient_field(self.metric, u),
            time=self.times[index],
            dt=self.dt,
            scheme=self.scheme,
            fallback=self.fallback,
        )
        self.assemblies.append(extra)
        return extra

    def delta_u(self, index: int) -> np.ndarray:
        """Spatial-operator value A_t u_t at a recorded index."""
        return self.assembly_at(index).apply(self.fields[self._check(index)])

    def dt_log_u(self, index: int) -> np.ndarray:
        """Logarithmic time derivative (A_t u_t) / u_t."""
        index = self._check(index)
        return self.delta_u(index) / self.fields[index]

    def _check(self, index: int) -> int:
        if not 0 <= index < self.n_times:
            raise IndexRange(f"index {index} outside [0, {self.n_times})")
        return index

    def export(self, out_dir: str) -> None:
        """Write snapshot CSVs and a small JSON description."""
        os.makedirs(out_dir, exist_ok=True)
        coords = self.grid.coordinates()
        for k in (0, self.n_times - 1):
            path = os.path.join(out_dir, f"field_{self.times[k]:.6f}.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["node"] + [f"x{i}" for i in range(self.grid.dim)] + ["u"]
                )
                for i in range(self.grid.n_nodes):
                    writer.writerow([i, *coords[i], self.fields[k][i]])
        meta = {
            "scheme": self.scheme,
            "dt": self.dt,
            "h": self.grid.h,
            "nodes_per_axis": self.grid.nodes_per_axis,
            "dim": self.grid.dim,
            "times": [self.times[0], self.times[-1]],
            "metric_family": self.metric.descriptor.family,
            "violations": self.violations,
        }
        with open(os.path.join(out_dir, "trajectory.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def solve_heat_flow(
    metric: MetricField,
    measure: MeasureField,
    u0: ScalarField,
    t_final: float,
    dt: float,
    scheme: str = "implicit_euler",
    fallback: np.ndarray | None = None,
) -> Trajectory:
    """Run the nonlinear flow from 0 to ``t_final`` recording every step.

    The step count is rounded so the final time is hit exactly. Positivity
    and range monitors log violations on the trajectory; nothing is clamped.
    Mass is conserved to solver tolerance for the implicit schemes.
    """
    if t_final <= 0 or dt <= 0:
        raise ValueError("final time and step size must be positive")
    n_steps = max(1, int(round(t_final / dt)))
    dt_eff = t_final / n_steps
    times = [0.0]
    fields = [u0.values.copy()]
    assemblies: list[DiffusionAssembly] = []
    traj = Trajectory(
        metric, measure, times, fields, assemblies, scheme, dt_eff, fallback=fallback
    )
    lo0, hi0 = float(np.min(u0.values)), float(np.max(u0.values))
    drift_tol = 1e-9 * max(1.0, abs(lo0), abs(hi0))
    u = u0
    for k in range(n_steps):
        t = k * dt_eff
        u, assembly = heat_step(
            metric, measure, u, dt_eff, scheme, time=t, fallback=fallback
        )
        assemblies.append(assembly)
        times.append((k + 1) * dt_eff)
        fields.append(u.values)
        lo, hi = float(np.min(u.values)), float(np.max(u.values))
        if lo0 > 0 and lo <= 0:
            traj.violations.append(
                {"time": times[-1], "kind": "positivity", "magnitude": lo}
            )
        if lo < lo0 - drift_tol or hi > hi0 + drift_tol:
            traj.violations.append(
                {
                    "time": times[-1],
                    "kind": "range",
                    "magnitude": max(lo0 - lo, hi - hi0),
                }
            )
    return traj


@dataclass(frozen=True)
class BochnerResult:
    """Pointwise commutation residual and the dimensional inequality slack."""

    residual: ScalarField
    n_form_slack: ScalarField


def bochner_residual(
    metric: MetricField,
    measure: MeasureField,
    u: ScalarField,
    N: float = math.inf,
) -> BochnerResult:
    """Pointwise curvature-commutation residual for flat quadratic metrics.

    residual = A(F^2(grad u)/2) - d(Au)(grad u) - Hess f(grad u, grad u)
               - |Hess u|^2_HS

    which is O(h^2) for smooth data. The slack field replaces the Hessian
    norm by (Au)^2 / N and the drift term by its N-dimensional version; it
    is bounded below by -O(h^2). Requires a non-degenerate gradient at every
    node.
    """
    desc = metric.descriptor
    if desc.family not in ("euclidean", "riemannian"):
        raise UnsupportedFamily("commutation residual needs a quadratic metric")
    grid = u.grid
    n = grid.dim
    if not (N >= n or math.isinf(N)):
        raise ValueError(f"need N >= dim = {n}")
    a = desc.riemannian_part()
    a_inv = np.linalg.inv(a)

    du = _differential(grid, u.values)
    grad = du @ a_inv
    fnorm = np.sqrt(np.einsum("ni,ij,nj->n", grad, a, grad))
    scale = max(1.0, float(np.max(fnorm)))
    if np.any(fnorm <= 10.0 * EPS_DEGENERATE * desc.length_scale * scale):
        raise DegenerateField("gradient degenerates at a node")

    assembly = weighted_laplacian(metric, measure, VectorField(grid, grad))
    energy = 0.5 * np.einsum("ni,ij,nj->n", du, a_inv, du)
    lap_u = assembly.apply(u.values)
    term_transport = np.einsum("ni,ni->n", _differential(grid, lap_u), grad)
    hess_f = _hessian_fields(grid, measure.f)
    ric_inf = np.einsum("nij,ni,nj->n", hess_f, grad, grad)
    hess_u = _hessian_fields(grid, u.values)
    hs = np.einsum("ik,nkl,lj,nji->n", a_inv, hess_u, a_inv, hess_u)
    residual = assembly.apply(energy) - term_transport - ric_inf - hs

    df_grad = np.einsum("ni,ni->n", _differential(grid, measure.f), grad)
    if math.isinf(N):
        inv_gap = 0.0
    elif N == n:
        if np.max(np.abs(df_grad)) > 1e-8 * scale:
            raise ValueError("N equal to the dimension needs a constant weight")
        inv_gap = 0.0
    else:
        inv_gap = 1.0 / (N - n)
    ric_n = ric_inf - inv_gap * df_grad**2
    lap_sq = 0.0 if math.isinf(N) else lap_u**2 / N
    slack = assembly.apply(energy) - term_transport - ric_n - lap_sq
    return BochnerResult(ScalarField(grid, residual), ScalarField(grid, slack))
