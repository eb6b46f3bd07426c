"""Linear transport along a recorded flow and its inequality suite.

The linearized semigroup is realized as the product of the recorded
frozen-coefficient step operators of a Trajectory. Every step is
self-adjoint in the measure inner product, so the adjoint semigroup is the
same steps applied in reverse order; duality and the semigroup law are
structural identities here, not numerical accidents.

All estimate checks follow one rule: quantities like F^2(grad u) are taken
from the recorded assemblies (their carre du champ), never by
re-differentiating transported fields in time or space. Discretization
tolerances are reported alongside every result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IndexRange
from .geometry import ScalarField, differential_field
from .heat import Trajectory
from .metrics import dual_norm
from .reporting import InequalityReport, compare, discretization_tolerance


@dataclass(frozen=True)
class TransportPlan:
    """A slice of a recorded trajectory with a travel direction."""

    trajectory: Trajectory
    start: int
    end: int
    direction: str = "forward"

    def __post_init__(self):
        n = self.trajectory.n_times
        if not (0 <= self.start < n and 0 <= self.end < n):
            raise IndexRange(f"plan indices ({self.start}, {self.end}) outside [0, {n})")
        if self.start >= self.end:
            raise IndexRange("plan needs start < end")
        if self.direction not in ("forward", "adjoint"):
            raise ValueError(f"unknown direction {self.direction}")

    @property
    def dt(self) -> float:
        return self.trajectory.dt

    @property
    def elapsed(self) -> float:
        return self.trajectory.times[self.end] - self.trajectory.times[self.start]

    def grid_meta(self) -> dict:
        traj = self.trajectory
        return {
            "h": traj.grid.h,
            "dt": traj.dt,
            "dim": traj.grid.dim,
            "nodes_per_axis": traj.grid.nodes_per_axis,
            "family": traj.metric.descriptor.family,
            "start_time": traj.times[self.start],
            "end_time": traj.times[self.end],
        }


def plan_for_times(
    trajectory: Trajectory, s: float, t: float, direction: str = "forward"
) -> TransportPlan:
    return TransportPlan(
        trajectory, trajectory.index_of(s), trajectory.index_of(t), direction
    )


def _run_steps(plan: TransportPlan, values: np.ndarray) -> np.ndarray:
    steps = range(plan.start, plan.end)
    if plan.direction == "adjoint":
        steps = reversed(steps)
    x = np.array(values, dtype=float, copy=True)
    for k in steps:
        x = plan.trajectory.assemblies[k].advance(x)
    return x


def transport(plan: TransportPlan, g: ScalarField) -> ScalarField:
    """Apply the recorded step operators of the plan to g."""
    if g.grid != plan.trajectory.grid:
        raise ValueError("field lives on a different grid")
    return ScalarField(g.grid, _run_steps(plan, g.values))


def _forward(plan: TransportPlan, values: np.ndarray) -> np.ndarray:
    return _run_steps(
        TransportPlan(plan.trajectory, plan.start, plan.end, "forward"), values
    )


def _lp_norm(values: np.ndarray, weights: np.ndarray, p) -> float:
    if p == math.inf:
        return float(np.max(np.abs(values)))
    return float(np.sum(np.abs(values) ** p * weights) ** (1.0 / p))


def _log_carre(assembly, u: np.ndarray) -> np.ndarray:
    if np.min(u) <= 0.0:
        raise DomainError("field must be strictly positive for log-based checks")
    return assembly.carre_du_champ(np.log(u))


def check_conservative(plan: TransportPlan, tol: float = 1e-12) -> InequalityReport:
    """Transported constants stay constant; exact by the stored row sums."""
    ones = np.ones(plan.trajectory.grid.n_nodes)
    out = _run_steps(plan, ones)
    return compare(
        "conservative",
        np.abs(out - 1.0),
        np.zeros_like(out),
        tol,
        "absolute 1e-12 (structural identity)",
        grid_meta=plan.grid_meta(),
    )


def check_duality(
    plan: TransportPlan, g: ScalarField, psi: ScalarField, tol: float = 1e-12
) -> InequalityReport:
    """<psi, P g>_m equals <adjoint-P psi, g>_m up to solver tolerance."""
    traj = plan.trajectory
    sig = traj.measure.sigma
    fwd = _run_steps(TransportPlan(traj, plan.start, plan.end, "forward"), g.values)
    adj = _run_steps(TransportPlan(traj, plan.start, plan.end, "adjoint"), psi.values)
    a = float(np.sum(psi.values * fwd * sig))
    b = float(np.sum(adj * g.values * sig))
    scale = max(1.0, abs(a), abs(b))
    return compare(
        "duality",
        np.array([abs(a - b)]),
        np.array([0.0]),
        tol * scale,
        "1e-12 * pairing scale",
        grid_meta=plan.grid_meta(),
    )


def check_semigroup_law(
    plan: TransportPlan, mid: int, g: ScalarField, tol: float = 1e-12
) -> InequalityReport:
    """Composition through an intermediate index equals direct transport.

    Same operator product in the same order, so the gap is exactly zero in
    floating point; the check guards the indexing, not the arithmetic.
    """
    if not plan.start < mid < plan.end:
        raise IndexRange("intermediate index must lie strictly inside the plan")
    traj = plan.trajectory
    first = _run_steps(TransportPlan(traj, plan.start, mid, plan.direction), g.values)
    two = _run_steps(TransportPlan(traj, mid, plan.end, plan.direction), first)
    direct = _run_steps(plan, g.values)
    return compare(
        "semigroup-law",
        np.abs(two - direct),
        np.zeros_like(direct),
        tol,
        "absolute 1e-12 (bitwise identity expected)",
        grid_meta=plan.grid_meta(),
    )


def check_positivity(plan: TransportPlan, g: ScalarField) -> InequalityReport:
    """Strictly positive input stays strictly positive after transport.

    Anisotropic stencils can break the discrete minimum principle; failures
    are reported with magnitude rather than clamped.
    """
    if np.min(g.values) <= 0.0:
        raise DomainError("positivity check needs g > 0")
    out = _run_steps(plan, g.values)
    return compare(
        "positivity",
        -out,
        np.zeros_like(out),
        0.0,
        "strict: transported field must stay positive",
        grid_meta=plan.grid_meta(),
    )


def check_contraction(plan: TransportPlan, g: ScalarField, p=2) -> InequalityReport:
    if p not in (1, 2, math.inf):
        raise ValueError("p must be 1, 2 or inf")
    sig = plan.trajectory.measure.sigma
    lhs = _lp_norm(_run_steps(plan, g.values), sig, p)
    rhs = _lp_norm(g.values, sig, p)
    tol = 1e-10 * max(1.0, rhs)
    return compare(
        f"contraction-l{p}",
        np.array([lhs]),
        np.array([rhs]),
        tol,
        "1e-10 * norm scale",
        grid_meta=plan.grid_meta(),
    )


def check_order_and_bounds(
    plan: TransportPlan, g: ScalarField, k1: float, k2: float
) -> InequalityReport:
    """Transport maps [k1, k2]-valued fields into [k1, k2] up to tolerance."""
    if k1 > k2:
        raise ValueError("need k1 <= k2")
    v = g.values
    if np.min(v) < k1 or np.max(v) > k2:
        raise DomainError("input field leaves the declared bounds")
    out = _run_steps(plan, v)
    # one-sided residuals against both bounds, stacked
    lhs = np.concatenate([k1 - out, out - k2])
    tol = 1e-10 * max(1.0, abs(k1), abs(k2))
    return compare(
        "order-bounds",
        lhs,
        np.zeros_like(lhs),
        tol,
        "1e-10 * bound scale",
        grid_meta=plan.grid_meta(),
    )


def check_cauchy_schwarz(
    plan: TransportPlan, f: ScalarField, g: ScalarField
) -> InequalityReport:
    pf = _run_steps(plan, f.values * g.values)
    p2f = _run_steps(plan, f.values**2)
    p2g = _run_steps(plan, g.values**2)
    lhs = pf**2
    rhs = p2f * p2g
    scale = max(1.0, float(np.max(np.abs(rhs))), float(np.max(np.abs(lhs))))
    return compare(
        "cauchy-schwarz",
        lhs,
        rhs,
        1e-10 * scale,
        "1e-10 * field scale",
        grid_meta=plan.grid_meta(),
    )


def variance_identity(
    plan: TransportPlan, f: ScalarField, c_dt: float = 50.0
) -> InequalityReport:
    """Pointwise identity between the transported-square gap and the
    time-integrated, transported carre du champ.

    (P f)^2 - P(f^2) = -2 * integral of P(carre du champ of the running
    transport), the integral taken by the trapezoid rule over recorded
    steps. The two sides agree to O(dt) because both are built from the
    same discrete operators; no spatial error enters.
    """
    traj = plan.trajectory
    dt = traj.dt
    x = np.array(f.values, dtype=float, copy=True)
    y = x * x
    acc = 0.5 * traj.assembly_at(plan.start).carre_du_champ(x)
    for k in range(plan.start, plan.end):
        step = traj.assemblies[k]
        x = step.advance(x)
        y = step.advance(y)
        acc = step.advance(acc)
        w = 0.5 if k + 1 == plan.end else 1.0
        acc = acc + w * traj.assembly_at(k + 1).carre_du_champ(x)
    lhs = x * x - y
    rhs = -2.0 * dt * acc
    scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
    return compare(
        "variance-identity",
        np.abs(lhs - rhs),
        np.zeros_like(lhs),
        c_dt * dt * scale,
        f"C*dt with C={c_dt:g}, scaled by field size",
        grid_meta=plan.grid_meta(),
    )


def laplacian_commutation(plan: TransportPlan) -> InequalityReport:
    """The spatial operator commutes with transport along the flow."""
    traj = plan.trajectory
    lap_s = traj.delta_u(plan.start)
    lap_t = traj.delta_u(plan.end)
    moved = _forward(plan, lap_s)
    gap = np.abs(lap_t - moved)
    scale = max(1.0, float(np.max(np.abs(lap_s))))
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    return compare(
        "laplacian-commutation",
        gap,
        np.zeros_like(gap),
        tol,
        "max(10h^2, 10dt) * operator scale",
        grid_meta=plan.grid_meta(),
    )


def gradient_estimate_check(plan: TransportPlan, K: float) -> InequalityReport:
    """Both pointwise gradient bounds with the exp(-2K (t-s)) factor.

    Checks u_t F^2(grad log u_t) against the transported source version,
    and the same for the plain squared gradient. Squared gradients come
    from the recorded assemblies' carre du champ.
    """
    traj = plan.trajectory
    u_s = traj.fields[plan.start]
    u_t = traj.fields[plan.end]
    asm_s = traj.assembly_at(plan.start)
    asm_t = traj.assembly_at(plan.end)
    factor = math.exp(-2.0 * K * plan.elapsed)

    log_s = u_s * _log_carre(asm_s, u_s)
    log_t = u_t * _log_carre(asm_t, u_t)
    raw_s = asm_s.carre_du_champ(u_s)
    raw_t = asm_t.carre_du_champ(u_t)
    rhs_log = factor * _forward(plan, log_s)
    rhs_raw = factor * _forward(plan, raw_s)

    lhs = np.concatenate([log_t, raw_t])
    rhs = np.concatenate([rhs_log, rhs_raw])
    scale = max(1.0, float(np.max(np.abs(rhs))))
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    meta = plan.grid_meta()
    meta.update({"K": K, "factor": factor})
    return compare(
        "gradient-estimate",
        lhs,
        rhs,
        tol,
        "max(10h^2, 10dt) * gradient scale",
        grid_meta=meta,
    )


def _logsob_coefficients(K: float, delta: float) -> tuple[float, float]:
    """Coefficients of the two local log-Sobolev directions; both tend to
    -delta as K tends to zero, which is the limit branch used below 1e-10."""
    if abs(K) < 1e-10:
        return -delta, -delta
    c_forward = (1.0 - math.exp(2.0 * K * delta)) / (2.0 * K)
    c_reverse = (math.exp(-2.0 * K * delta) - 1.0) / (2.0 * K)
    return c_forward, c_reverse


def local_logsob_check(plan: TransportPlan, K: float) -> InequalityReport:
    """Local log-Sobolev inequality and its reverse along the transport.

    Direction one bounds the entropy gap by the endpoint gradient term;
    direction two bounds it from below by the transported source term.
    """
    traj = plan.trajectory
    u_s = traj.fields[plan.start]
    u_t = traj.fields[plan.end]
    if np.min(u_s) <= 0.0 or np.min(u_t) <= 0.0:
        raise DomainError("log-Sobolev checks need strictly positive fields")
    asm_s = traj.assembly_at(plan.start)
    asm_t = traj.assembly_at(plan.end)
    c_fwd, c_rev = _logsob_coefficients(K, plan.elapsed)

    gap = u_t * np.log(u_t) - _forward(plan, u_s * np.log(u_s))
    grad_t = u_t * _log_carre(asm_t, u_t)
    grad_s_moved = _forward(plan, u_s * _log_carre(asm_s, u_s))

    lhs = np.concatenate([gap - c_fwd * grad_t, c_rev * grad_s_moved - gap])
    scale = max(
        1.0,
        float(np.max(np.abs(gap))),
        abs(c_fwd) * float(np.max(grad_t)),
        abs(c_rev) * float(np.max(np.abs(grad_s_moved))),
    )
    tol = discretization_tolerance(traj.grid.h, traj.dt, scale)
    meta = plan.grid_meta()
    meta.update({"K": K, "c_forward": c_fwd, "c_reverse": c_rev})
    return compare(
        "local-log-sobolev",
        lhs,
        np.zeros_like(lhs),
        tol,
        "max(10h^2, 10dt) * entropy scale",
        grid_meta=meta,
    )


def lipschitz_decay(trajectory: Trajectory, K: float) -> InequalityReport:
    """Sup-norm gradient decay (growth for K < 0) along the whole run.

    Two estimators of the same sup norm are tracked: the dual norm of the
    centered differential, and the square root of the assembly carre du
    champ. Each recorded time is compared against the decayed initial
    value of its own estimator.
    """
    metric = trajectory.metric
    desc = metric.descriptor
    lip, energy = [], []
    for k in range(trajectory.n_times):
        u = trajectory.field_at(k)
        du = differential_field(u)
        lip.append(float(np.max(dual_norm(desc, du.values))))
        gamma = trajectory.assembly_at(k).carre_du_champ(u.values)
        energy.append(float(np.sqrt(max(np.max(gamma), 0.0))))
    times = np.asarray(trajectory.times)
    decay = np.exp(-K * (times - times[0]))
    lhs = np.concatenate([np.asarray(lip), np.asarray(energy)])
    rhs = np.concatenate([decay * lip[0], decay * energy[0]])
    scale = max(1.0, float(np.max(rhs)))
    tol = discretization_tolerance(trajectory.grid.h, trajectory.dt, scale)
    meta = {
        "h": trajectory.grid.h,
        "dt": trajectory.dt,
        "K": K,
        "family": desc.family,
        "n_times": trajectory.n_times,
    }
    return compare(
        "lipschitz-decay",
        lhs,
        rhs,
        tol,
        "max(10h^2, 10dt) * gradient scale",
        grid_meta=meta,
    )
